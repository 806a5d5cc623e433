//! Per-conversation memory: turns go in as leaves, session memories come
//! out as root snapshots, and contexts for response generation are built
//! by one of several strategies.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::aggregation::Aggregator;
use crate::episode::{DialogueTurn, Episode};
use crate::hat::{HatError, HatTree, Meta, NodeId};
use crate::llm::{ChatClient, LlmError};
use crate::prompt::PromptTemplate;
use crate::traversal::{
    bfs_search, dfs_search, fallback_context, traverse, Outcome, SufficiencyOracle,
    TraversalAgent, TraversalConfig, TraversalError, TraversalResult,
};

pub const META_SPEAKER: &str = "speaker";
pub const META_SESSION: &str = "session";
pub const META_TURN: &str = "turn";

/// Separator between turns when contexts are built from raw leaves.
pub const TURN_SEPARATOR: &str = "\n";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Tree(#[from] HatError),
    #[error(transparent)]
    Traversal(#[from] TraversalError),
    #[error("response generation unavailable: {0}")]
    Generation(#[source] LlmError),
    #[error("session {0} not found")]
    SessionNotFound(u32),
    #[error("invalid turn: {0}")]
    InvalidTurn(String),
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ContextStrategy {
    AllContext,
    PartContext,
    GoldMemory,
    HatBfs,
    HatDfs,
    HatAgent,
}

impl ContextStrategy {
    pub const ALL: [ContextStrategy; 6] = [
        Self::AllContext,
        Self::PartContext,
        Self::GoldMemory,
        Self::HatBfs,
        Self::HatDfs,
        Self::HatAgent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::AllContext => "all_context",
            Self::PartContext => "part_context",
            Self::GoldMemory => "gold_memory",
            Self::HatBfs => "hat_bfs",
            Self::HatDfs => "hat_dfs",
            Self::HatAgent => "hat_agent",
        }
    }

    pub fn uses_tree_walk(self) -> bool {
        matches!(self, Self::HatBfs | Self::HatDfs | Self::HatAgent)
    }
}

impl fmt::Display for ContextStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ContextStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|s| s.name()).collect();
                format!("unknown strategy {s:?} (expected one of {})", names.join(", "))
            })
    }
}

/// What the tree-walking strategies consult.
pub struct Retrieval<'a> {
    pub oracle: &'a dyn SufficiencyOracle,
    pub agent: &'a dyn TraversalAgent,
    pub config: TraversalConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub strategy: ContextStrategy,
    pub text: String,
    /// Present for the tree-walking strategies.
    pub traversal: Option<TraversalResult>,
}

pub struct MemoryState {
    tree: HatTree,
    session_snapshots: BTreeMap<u32, String>,
    gold_memory: BTreeMap<u32, Vec<String>>,
    current_session: Option<u32>,
}

impl fmt::Debug for MemoryState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MemoryState")
            .field("tree", &self.tree)
            .field("current_session", &self.current_session)
            .field("snapshots", &self.session_snapshots.len())
            .finish()
    }
}

impl MemoryState {
    pub fn new(memory_length: usize, aggregator: Arc<dyn Aggregator>) -> Result<Self, PipelineError> {
        Ok(Self::from_tree(HatTree::new(memory_length, aggregator)?))
    }

    /// Wraps an existing tree; the current session is taken from the newest
    /// leaf's session tag.
    pub fn from_tree(tree: HatTree) -> Self {
        let current_session = tree
            .leaves()
            .last()
            .and_then(|leaf| leaf.meta.get(META_SESSION))
            .and_then(|s| s.parse().ok());
        Self {
            tree,
            session_snapshots: BTreeMap::new(),
            gold_memory: BTreeMap::new(),
            current_session,
        }
    }

    pub fn tree(&self) -> &HatTree {
        &self.tree
    }

    pub fn into_tree(self) -> HatTree {
        self.tree
    }

    pub fn current_session(&self) -> Option<u32> {
        self.current_session
    }

    pub fn session_snapshots(&self) -> &BTreeMap<u32, String> {
        &self.session_snapshots
    }

    pub fn set_gold_memory(&mut self, session: u32, memory: Vec<String>) {
        self.gold_memory.insert(session, memory);
    }

    /// Inserts the turn as a leaf `"<speaker>: <text>"`.
    pub fn ingest_turn(&mut self, turn: &DialogueTurn) -> Result<NodeId, PipelineError> {
        if turn.text.trim().is_empty() {
            return Err(PipelineError::InvalidTurn(format!(
                "session {} turn {} has empty text",
                turn.session, turn.turn_index
            )));
        }
        if turn.session == 0 {
            return Err(PipelineError::InvalidTurn("sessions are numbered from 1".into()));
        }
        if let Some(current) = self.current_session {
            if turn.session < current {
                return Err(PipelineError::InvalidTurn(format!(
                    "turn for session {} after session {current}",
                    turn.session
                )));
            }
        }
        let meta = Meta::from([
            (META_SPEAKER.to_string(), turn.speaker.as_str().to_string()),
            (META_SESSION.to_string(), turn.session.to_string()),
            (META_TURN.to_string(), turn.turn_index.to_string()),
        ]);
        let id = self
            .tree
            .insert_leaf(format!("{}: {}", turn.speaker.as_str(), turn.text), meta)?;
        self.current_session = Some(turn.session);
        Ok(id)
    }

    /// Records and returns the session memory: the root text at this point.
    pub fn end_session(&mut self, session: u32) -> Result<String, PipelineError> {
        let known = self
            .tree
            .leaves()
            .any(|leaf| leaf.meta.get(META_SESSION).map(String::as_str) == Some(&*session.to_string()));
        if !known {
            return Err(PipelineError::SessionNotFound(session));
        }
        let snapshot = self.tree.root_text()?.to_string();
        self.session_snapshots.insert(session, snapshot.clone());
        Ok(snapshot)
    }

    fn session_leaves(&self, session: u32) -> Vec<&str> {
        let tag = session.to_string();
        self.tree
            .leaves()
            .filter(|leaf| leaf.meta.get(META_SESSION) == Some(&tag))
            .map(|leaf| leaf.text.as_str())
            .collect()
    }

    /// Gold memory as of the end of the latest session before the current
    /// one.
    fn gold_context(&self) -> Result<String, PipelineError> {
        let current = self.current_session.unwrap_or(u32::MAX);
        self.gold_memory
            .range(..current)
            .rev()
            .find(|(_, memory)| !memory.is_empty())
            .map(|(_, memory)| memory.join(TURN_SEPARATOR))
            .ok_or_else(|| {
                PipelineError::Config(format!("no gold memory recorded before session {current}"))
            })
    }

    pub fn retrieve(
        &self,
        query: &str,
        strategy: ContextStrategy,
        retrieval: &Retrieval<'_>,
    ) -> Result<Context, PipelineError> {
        if self.tree.is_empty() {
            return Err(PipelineError::Tree(HatError::NotFound("memory is empty".into())));
        }
        let walk = match strategy {
            ContextStrategy::AllContext => {
                let leaves: Vec<&str> = self.tree.leaves().map(|l| l.text.as_str()).collect();
                return Ok(Context { strategy, text: leaves.join(TURN_SEPARATOR), traversal: None });
            }
            ContextStrategy::PartContext => {
                let session = self.current_session.unwrap_or(0);
                let text = self.session_leaves(session).join(TURN_SEPARATOR);
                return Ok(Context { strategy, text, traversal: None });
            }
            ContextStrategy::GoldMemory => {
                return Ok(Context { strategy, text: self.gold_context()?, traversal: None });
            }
            ContextStrategy::HatBfs => bfs_search(&self.tree, retrieval.oracle, query, &retrieval.config)?,
            ContextStrategy::HatDfs => dfs_search(&self.tree, retrieval.oracle, query, &retrieval.config)?,
            ContextStrategy::HatAgent => traverse(&self.tree, retrieval.agent, query, &retrieval.config)?,
        };
        let text = match &walk.outcome {
            Outcome::Sufficient(text) => text.clone(),
            Outcome::Insufficient | Outcome::BudgetExhausted => fallback_context(&self.tree),
        };
        Ok(Context { strategy, text, traversal: Some(walk) })
    }

    pub fn build_context(
        &self,
        query: &str,
        strategy: ContextStrategy,
        retrieval: &Retrieval<'_>,
    ) -> Result<String, PipelineError> {
        self.retrieve(query, strategy, retrieval).map(|c| c.text)
    }

    /// Ingests whole sessions of `episode`, closing each one and recording
    /// its gold memory. With `hold_out` set, the last `hold_out` turns of
    /// the final session are skipped and that session is left open.
    pub fn ingest_episode(&mut self, episode: &Episode, hold_out: usize) -> Result<(), PipelineError> {
        let last = episode.sessions.len();
        for (s, session) in episode.sessions.iter().enumerate() {
            let number = s as u32 + 1;
            let is_last = s + 1 == last;
            let take = if is_last {
                session.turns.len().saturating_sub(hold_out)
            } else {
                session.turns.len()
            };
            for (t, turn) in session.turns.iter().take(take).enumerate() {
                self.ingest_turn(&DialogueTurn::new(turn.speaker, turn.text.clone(), number, t as u32))?;
            }
            if !session.gold_memory.is_empty() {
                self.set_gold_memory(number, session.gold_memory.clone());
            }
            if !(is_last && hold_out > 0) && take > 0 {
                self.end_session(number)?;
            }
        }
        Ok(())
    }
}

/// Response-generation messages; an empty context drops the memory block.
pub fn response_prompt(template: &PromptTemplate, context: &str, query: &str) -> Vec<crate::llm::ChatMessage> {
    let block = if context.trim().is_empty() {
        String::new()
    } else {
        format!("Memory:\n{context}\n\n")
    };
    template.render(&[("context_block", &block), ("query", query)])
}

pub fn generate_response(context: &str, query: &str, client: &ChatClient) -> Result<String, PipelineError> {
    let messages = response_prompt(&PromptTemplate::response(), context, query);
    client
        .chat(messages, 0.0)
        .map(|reply| reply.trim().to_string())
        .map_err(PipelineError::Generation)
}
