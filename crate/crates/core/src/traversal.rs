//! Query-conditioned walks over a [`HatTree`].
//!
//! The walk is a small decision process: the state is a cursor on a node,
//! the agent picks one of seven actions (four moves, a reset to the root,
//! and two terminal verdicts) and the walk ends on a verdict or when the
//! step budget runs out. Breadth-first and depth-first searches driven by a
//! [`SufficiencyOracle`] serve as baselines.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::hat::HatTree;
use crate::llm::{ChatClient, ChatMessage, LlmError};
use crate::metrics::tokenize;
use crate::prompt::PromptTemplate;

pub const DEFAULT_STEP_BUDGET: usize = 32;
pub const DEFAULT_DISCOUNT: f64 = 0.9;

#[derive(Debug, Error)]
pub enum TraversalError {
    #[error("cannot traverse an empty tree")]
    EmptyTree,
    #[error("invalid traversal config: {0}")]
    InvalidConfig(String),
    #[error("traversal unavailable: {0}")]
    Unavailable(#[from] LlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cursor {
    pub layer: usize,
    pub index: usize,
}

impl Cursor {
    pub const ROOT: Cursor = Cursor { layer: 0, index: 0 };

    pub fn new(layer: usize, index: usize) -> Self {
        Self { layer, index }
    }
}

impl fmt::Display for Cursor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.layer, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraversalAction {
    Up,
    Down,
    Left,
    Right,
    /// Back to the root.
    Start,
    /// The current node is sufficient context.
    Accept,
    /// The tree cannot answer the query.
    Reject,
}

impl TraversalAction {
    pub const ALL: [TraversalAction; 7] = [
        Self::Up,
        Self::Down,
        Self::Left,
        Self::Right,
        Self::Start,
        Self::Accept,
        Self::Reject,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Self::Up => "UP",
            Self::Down => "DOWN",
            Self::Left => "LEFT",
            Self::Right => "RIGHT",
            Self::Start => "START",
            Self::Accept => "ACCEPT",
            Self::Reject => "REJECT",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Accept | Self::Reject)
    }
}

impl fmt::Display for TraversalAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraversalConfig {
    /// Maximum number of agent (or oracle) queries per walk.
    pub step_budget: usize,
    /// Recorded with results; no reward is computed from it.
    pub discount: f64,
}

impl Default for TraversalConfig {
    fn default() -> Self {
        Self { step_budget: DEFAULT_STEP_BUDGET, discount: DEFAULT_DISCOUNT }
    }
}

impl TraversalConfig {
    pub fn new(step_budget: usize, discount: f64) -> Result<Self, TraversalError> {
        if step_budget == 0 {
            return Err(TraversalError::InvalidConfig("step_budget must be at least 1".into()));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(TraversalError::InvalidConfig(format!(
                "discount must lie in (0, 1), got {discount}"
            )));
        }
        Ok(Self { step_budget, discount })
    }

    pub fn with_budget(step_budget: usize) -> Result<Self, TraversalError> {
        Self::new(step_budget, DEFAULT_DISCOUNT)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Sufficient(String),
    Insufficient,
    BudgetExhausted,
}

pub type PathStep = (Cursor, TraversalAction);

#[derive(Debug, Clone, PartialEq)]
pub struct TraversalResult {
    pub outcome: Outcome,
    /// Every `(cursor, action)` decision, in order.
    pub path: Vec<PathStep>,
    pub steps: usize,
    /// Where the walk stopped.
    pub cursor: Cursor,
}

impl TraversalResult {
    pub fn context(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Sufficient(text) => Some(text),
            _ => None,
        }
    }
}

/// Moves the cursor. Moves that would leave the tree, and the terminal
/// actions, return the cursor unchanged.
pub fn apply_action(tree: &HatTree, cursor: Cursor, action: TraversalAction) -> Cursor {
    let m = tree.memory_length();
    let exists = |c: Cursor| tree.layer_size(c.layer).is_ok_and(|size| c.index < size);
    let target = match action {
        TraversalAction::Up if cursor.layer > 0 => Cursor::new(cursor.layer - 1, cursor.index / m),
        TraversalAction::Down => Cursor::new(cursor.layer + 1, cursor.index * m),
        TraversalAction::Left if cursor.index > 0 => Cursor::new(cursor.layer, cursor.index - 1),
        TraversalAction::Right => Cursor::new(cursor.layer, cursor.index + 1),
        TraversalAction::Start => Cursor::ROOT,
        _ => cursor,
    };
    if exists(target) {
        target
    } else {
        cursor
    }
}

fn node_text(tree: &HatTree, cursor: Cursor) -> &str {
    &tree
        .node_at(cursor.layer, cursor.index)
        .expect("cursor addresses an existing node")
        .text
}

/// What an agent sees when asked for its next action.
pub struct AgentView<'a> {
    pub tree: &'a HatTree,
    pub cursor: Cursor,
    pub node_text: &'a str,
    pub query: &'a str,
    pub path: &'a [PathStep],
}

pub trait TraversalAgent: Send + Sync {
    fn propose_action(&self, view: &AgentView<'_>) -> Result<TraversalAction, TraversalError>;
}

pub trait SufficiencyOracle: Send + Sync {
    fn sufficient(&self, node_text: &str, query: &str) -> Result<bool, TraversalError>;
}

/// Runs an agent from the root until it accepts, rejects, or spends
/// `config.step_budget` decisions.
pub fn traverse(
    tree: &HatTree,
    agent: &dyn TraversalAgent,
    query: &str,
    config: &TraversalConfig,
) -> Result<TraversalResult, TraversalError> {
    if tree.is_empty() {
        return Err(TraversalError::EmptyTree);
    }
    let mut cursor = Cursor::ROOT;
    let mut path = Vec::new();
    while path.len() < config.step_budget {
        let text = node_text(tree, cursor);
        let view = AgentView { tree, cursor, node_text: text, query, path: &path };
        let action = agent.propose_action(&view)?;
        path.push((cursor, action));
        let outcome = match action {
            TraversalAction::Accept => Outcome::Sufficient(text.to_string()),
            TraversalAction::Reject => Outcome::Insufficient,
            _ => {
                cursor = apply_action(tree, cursor, action);
                continue;
            }
        };
        let steps = path.len();
        return Ok(TraversalResult { outcome, path, steps, cursor });
    }
    let steps = path.len();
    Ok(TraversalResult { outcome: Outcome::BudgetExhausted, path, steps, cursor })
}

fn search<I>(
    tree: &HatTree,
    order: I,
    oracle: &dyn SufficiencyOracle,
    query: &str,
    config: &TraversalConfig,
) -> Result<TraversalResult, TraversalError>
where
    I: Iterator<Item = Cursor>,
{
    if tree.is_empty() {
        return Err(TraversalError::EmptyTree);
    }
    let mut path = Vec::new();
    let mut last = Cursor::ROOT;
    for cursor in order {
        if path.len() == config.step_budget {
            let steps = path.len();
            return Ok(TraversalResult { outcome: Outcome::BudgetExhausted, path, steps, cursor: last });
        }
        last = cursor;
        let text = node_text(tree, cursor);
        if oracle.sufficient(text, query)? {
            path.push((cursor, TraversalAction::Accept));
            let steps = path.len();
            return Ok(TraversalResult {
                outcome: Outcome::Sufficient(text.to_string()),
                path,
                steps,
                cursor,
            });
        }
        path.push((cursor, TraversalAction::Reject));
    }
    let steps = path.len();
    Ok(TraversalResult { outcome: Outcome::Insufficient, path, steps, cursor: last })
}

/// Layer by layer, left to right.
pub fn bfs_order(tree: &HatTree) -> impl Iterator<Item = Cursor> + '_ {
    (0..tree.layer_count()).flat_map(move |layer| {
        let size = tree.layer_size(layer).unwrap_or(0);
        (0..size).map(move |index| Cursor::new(layer, index))
    })
}

/// Pre-order, children left to right.
pub fn dfs_order(tree: &HatTree) -> impl Iterator<Item = Cursor> + '_ {
    let m = tree.memory_length();
    let mut stack = if tree.is_empty() { Vec::new() } else { vec![Cursor::ROOT] };
    std::iter::from_fn(move || {
        let cursor = stack.pop()?;
        if let Ok(size) = tree.layer_size(cursor.layer + 1) {
            let first = cursor.index * m;
            let last = (first + m).min(size);
            stack.extend((first..last).rev().map(|i| Cursor::new(cursor.layer + 1, i)));
        }
        Some(cursor)
    })
}

pub fn bfs_search(
    tree: &HatTree,
    oracle: &dyn SufficiencyOracle,
    query: &str,
    config: &TraversalConfig,
) -> Result<TraversalResult, TraversalError> {
    search(tree, bfs_order(tree), oracle, query, config)
}

pub fn dfs_search(
    tree: &HatTree,
    oracle: &dyn SufficiencyOracle,
    query: &str,
    config: &TraversalConfig,
) -> Result<TraversalResult, TraversalError> {
    search(tree, dfs_order(tree), oracle, query, config)
}

/// Context used when a walk ends without a sufficient node: the root text
/// followed by the newest leaf.
pub fn fallback_context(tree: &HatTree) -> String {
    match (tree.root(), tree.leaves().last()) {
        (Some(root), Some(leaf)) => format!("{}\n{}", root.text, leaf.text),
        _ => String::new(),
    }
}

// === agents ===

/// Replays a fixed action list; once the list runs out it rejects.
#[derive(Debug, Clone, Default)]
pub struct ScriptedAgent {
    pub actions: Vec<TraversalAction>,
}

impl ScriptedAgent {
    pub fn new(actions: Vec<TraversalAction>) -> Self {
        Self { actions }
    }
}

impl TraversalAgent for ScriptedAgent {
    fn propose_action(&self, view: &AgentView<'_>) -> Result<TraversalAction, TraversalError> {
        Ok(self
            .actions
            .get(view.path.len())
            .copied()
            .unwrap_or(TraversalAction::Reject))
    }
}

/// Accepts as soon as the oracle says so; otherwise walks the tree in
/// pre-order using only moves (`DOWN` first, then `RIGHT` among siblings,
/// `UP` when a subtree is done) and rejects once back at the exhausted root.
pub struct OracleAgent<O> {
    pub oracle: O,
}

impl<O: SufficiencyOracle> OracleAgent<O> {
    pub fn new(oracle: O) -> Self {
        Self { oracle }
    }
}

impl<O: SufficiencyOracle> TraversalAgent for OracleAgent<O> {
    fn propose_action(&self, view: &AgentView<'_>) -> Result<TraversalAction, TraversalError> {
        let returning = matches!(view.path.last(), Some((_, TraversalAction::Up)));
        if !returning && self.oracle.sufficient(view.node_text, view.query)? {
            return Ok(TraversalAction::Accept);
        }
        let tree = view.tree;
        let cursor = view.cursor;
        let m = tree.memory_length();
        let has_children = cursor.layer < tree.depth();
        if !returning && has_children {
            return Ok(TraversalAction::Down);
        }
        if cursor.layer == 0 {
            return Ok(TraversalAction::Reject);
        }
        let right = Cursor::new(cursor.layer, cursor.index + 1);
        let sibling = !right.index.is_multiple_of(m)
            && tree.layer_size(cursor.layer).is_ok_and(|size| right.index < size);
        Ok(if sibling { TraversalAction::Right } else { TraversalAction::Up })
    }
}

/// First action token in `reply`, matched case-insensitively on whole
/// words.
pub fn parse_action(reply: &str) -> Option<TraversalAction> {
    reply
        .split(|c: char| !c.is_alphanumeric())
        .filter(|word| !word.is_empty())
        .find_map(|word| {
            TraversalAction::ALL
                .into_iter()
                .find(|a| a.token().eq_ignore_ascii_case(word))
        })
}

fn path_summary(path: &[PathStep]) -> String {
    if path.is_empty() {
        return "nothing yet".to_string();
    }
    path.iter()
        .map(|(cursor, action)| format!("{cursor} {action}"))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn llm_agent_prompt(
    template: &PromptTemplate,
    cursor: Cursor,
    node_text: &str,
    query: &str,
    path: &[PathStep],
) -> Vec<ChatMessage> {
    let layer = cursor.layer.to_string();
    let index = cursor.index.to_string();
    let path = path_summary(path);
    template.render(&[
        ("query", query),
        ("layer", &layer),
        ("index", &index),
        ("node_text", node_text),
        ("path", &path),
    ])
}

const CLARIFY: &str =
    "Answer with exactly one word: UP, DOWN, LEFT, RIGHT, START, ACCEPT or REJECT.";

/// Chat model acting as the traversal policy.
pub struct LlmAgent {
    client: ChatClient,
    template: PromptTemplate,
    max_parse_retries: usize,
}

impl LlmAgent {
    pub fn new(client: ChatClient) -> Self {
        Self { client, template: PromptTemplate::agent(), max_parse_retries: 2 }
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.template = template;
        self
    }
}

impl TraversalAgent for LlmAgent {
    /// A reply without an action token is retried with a clarifying
    /// follow-up; if every retry fails the agent accepts the current node.
    fn propose_action(&self, view: &AgentView<'_>) -> Result<TraversalAction, TraversalError> {
        let mut messages =
            llm_agent_prompt(&self.template, view.cursor, view.node_text, view.query, view.path);
        for attempt in 0..=self.max_parse_retries {
            let reply = self.client.chat(messages.clone(), 0.0)?;
            if let Some(action) = parse_action(&reply) {
                return Ok(action);
            }
            log::debug!("agent reply without an action (attempt {}): {reply:?}", attempt + 1);
            messages.push(ChatMessage::assistant(reply));
            messages.push(ChatMessage::user(CLARIFY));
        }
        Ok(TraversalAction::Accept)
    }
}

// === oracles ===

/// Sufficient iff the node text contains the phrase.
#[derive(Debug, Clone)]
pub struct SubstringOracle {
    pub phrase: String,
}

impl SubstringOracle {
    pub fn new(phrase: impl Into<String>) -> Self {
        Self { phrase: phrase.into() }
    }
}

impl SufficiencyOracle for SubstringOracle {
    fn sufficient(&self, node_text: &str, _query: &str) -> Result<bool, TraversalError> {
        Ok(node_text.contains(&self.phrase))
    }
}

const STOPWORDS: &[&str] = &[
    "a", "about", "am", "an", "and", "are", "as", "at", "be", "but", "by", "can", "did", "do",
    "does", "for", "from", "had", "has", "have", "how", "i", "in", "is", "it", "its", "me", "my",
    "of", "on", "or", "so", "that", "the", "their", "this", "to", "was", "we", "were", "what",
    "when", "where", "which", "who", "why", "will", "with", "you", "your",
];

/// Lexical stand-in for a model judgement: sufficient iff at least
/// `min_recall` of the query's content words occur in the node text.
#[derive(Debug, Clone)]
pub struct KeywordOracle {
    pub min_recall: f64,
}

impl Default for KeywordOracle {
    fn default() -> Self {
        Self { min_recall: 1.0 }
    }
}

impl KeywordOracle {
    pub fn content_words(text: &str) -> Vec<String> {
        let mut seen = HashSet::new();
        tokenize(text)
            .into_iter()
            .filter(|t| !STOPWORDS.contains(&t.as_str()))
            .filter(|t| seen.insert(t.clone()))
            .collect()
    }
}

impl SufficiencyOracle for KeywordOracle {
    fn sufficient(&self, node_text: &str, query: &str) -> Result<bool, TraversalError> {
        let wanted = Self::content_words(query);
        if wanted.is_empty() {
            return Ok(false);
        }
        let present: HashSet<String> = tokenize(node_text).into_iter().collect();
        let hits = wanted.iter().filter(|w| present.contains(*w)).count();
        Ok(hits as f64 / wanted.len() as f64 >= self.min_recall)
    }
}

/// Asks a chat model whether the node answers the query (YES / NO). A
/// reply with neither word counts as insufficient.
pub struct LlmOracle {
    client: ChatClient,
    template: PromptTemplate,
}

impl LlmOracle {
    pub fn new(client: ChatClient) -> Self {
        Self { client, template: PromptTemplate::sufficiency() }
    }
}

impl SufficiencyOracle for LlmOracle {
    fn sufficient(&self, node_text: &str, query: &str) -> Result<bool, TraversalError> {
        let messages = self.template.render(&[("query", query), ("node_text", node_text)]);
        let reply = self.client.chat(messages, 0.0)?;
        let verdict = reply
            .split(|c: char| !c.is_alphanumeric())
            .find_map(|w| match w.to_ascii_lowercase().as_str() {
                "yes" | "ok" | "okay" | "sufficient" => Some(true),
                "no" | "insufficient" => Some(false),
                _ => None,
            });
        Ok(verdict.unwrap_or(false))
    }
}

impl<T: SufficiencyOracle + ?Sized> SufficiencyOracle for &T {
    fn sufficient(&self, node_text: &str, query: &str) -> Result<bool, TraversalError> {
        (**self).sufficient(node_text, query)
    }
}

impl<T: SufficiencyOracle + ?Sized> SufficiencyOracle for Box<T> {
    fn sufficient(&self, node_text: &str, query: &str) -> Result<bool, TraversalError> {
        (**self).sufficient(node_text, query)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::ConcatAggregator;
    use crate::hat::Meta;
    use crate::llm::{request_digest, MockTransport};
    use std::sync::Arc;
    use TraversalAction::*;

    fn tree(m: usize, leaves: &[&str]) -> HatTree {
        let mut tree = HatTree::new(m, Arc::new(ConcatAggregator::new(" | "))).unwrap();
        for leaf in leaves {
            tree.insert_leaf(*leaf, Meta::new()).unwrap();
        }
        tree
    }

    fn four() -> HatTree {
        tree(2, &["a", "b", "c", "d"])
    }

    struct Always(bool);

    impl SufficiencyOracle for Always {
        fn sufficient(&self, _: &str, _: &str) -> Result<bool, TraversalError> {
            Ok(self.0)
        }
    }

    #[test]
    fn moves_on_four_leaf_tree() {
        let t = four();
        assert_eq!(apply_action(&t, Cursor::new(1, 0), Right), Cursor::new(1, 1));
        assert_eq!(apply_action(&t, Cursor::ROOT, Up), Cursor::ROOT);
        assert_eq!(apply_action(&t, Cursor::ROOT, Down), Cursor::new(1, 0));
        assert_eq!(apply_action(&t, Cursor::new(1, 1), Down), Cursor::new(2, 2));
        assert_eq!(apply_action(&t, Cursor::new(2, 2), Up), Cursor::new(1, 1));
        assert_eq!(apply_action(&t, Cursor::new(2, 1), Right), Cursor::new(2, 2));
        assert_eq!(apply_action(&t, Cursor::new(2, 3), Right), Cursor::new(2, 3));
        assert_eq!(apply_action(&t, Cursor::new(2, 0), Left), Cursor::new(2, 0));
        assert_eq!(apply_action(&t, Cursor::new(2, 3), Down), Cursor::new(2, 3));
        assert_eq!(apply_action(&t, Cursor::new(2, 3), Start), Cursor::ROOT);
        assert_eq!(apply_action(&t, Cursor::new(1, 1), Accept), Cursor::new(1, 1));
    }

    #[test]
    fn down_to_missing_child_is_noop() {
        // 5 leaves, M = 2: layer 2 has 3 nodes, (2,2) has one child at (3,4)
        let t = tree(2, &["a", "b", "c", "d", "e"]);
        assert_eq!(apply_action(&t, Cursor::new(2, 2), Down), Cursor::new(3, 4));
        assert_eq!(apply_action(&t, Cursor::new(1, 1), Down), Cursor::new(2, 2));
    }

    #[test]
    fn scripted_walks() {
        let t = four();
        let config = TraversalConfig::default();
        let r = traverse(&t, &ScriptedAgent::new(vec![Down, Right, Accept]), "q", &config).unwrap();
        assert_eq!(r.outcome, Outcome::Sufficient("c | d".into()));
        assert_eq!(r.steps, 3);
        assert_eq!(r.path, vec![(Cursor::ROOT, Down), (Cursor::new(1, 0), Right), (Cursor::new(1, 1), Accept)]);

        let r = traverse(&t, &ScriptedAgent::new(vec![Reject]), "q", &config).unwrap();
        assert_eq!((r.outcome, r.steps), (Outcome::Insufficient, 1));

        let budget = TraversalConfig::with_budget(5).unwrap();
        let r = traverse(&t, &ScriptedAgent::new(vec![Up; 20]), "q", &budget).unwrap();
        assert_eq!((r.outcome, r.steps), (Outcome::BudgetExhausted, 5));
    }

    #[test]
    fn searches_with_trivial_oracles() {
        let t = tree(2, &["a", "b", "c", "d"]);
        let config = TraversalConfig::default();
        for search in [bfs_search, dfs_search] {
            let r = search(&t, &Always(true), "q", &config).unwrap();
            assert_eq!(r.outcome, Outcome::Sufficient(t.root_text().unwrap().into()));
            assert_eq!(r.steps, 1);

            let big = TraversalConfig::with_budget(100).unwrap();
            let r = search(&t, &Always(false), "q", &big).unwrap();
            assert_eq!((r.outcome, r.steps), (Outcome::Insufficient, 7));

            let small = TraversalConfig::with_budget(3).unwrap();
            let r = search(&t, &Always(false), "q", &small).unwrap();
            assert_eq!((r.outcome, r.steps), (Outcome::BudgetExhausted, 3));

            let exact = TraversalConfig::with_budget(7).unwrap();
            let r = search(&t, &Always(false), "q", &exact).unwrap();
            assert_eq!(r.outcome, Outcome::Insufficient);
        }
    }

    #[test]
    fn orders() {
        let t = four();
        let bfs: Vec<_> = bfs_order(&t).map(|c| (c.layer, c.index)).collect();
        assert_eq!(bfs, [(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2), (2, 3)]);
        let dfs: Vec<_> = dfs_order(&t).map(|c| (c.layer, c.index)).collect();
        assert_eq!(dfs, [(0, 0), (1, 0), (2, 0), (2, 1), (1, 1), (2, 2), (2, 3)]);
    }

    #[test]
    fn planted_phrase_found_at_shallowest_ancestor() {
        let t = tree(2, &["x", "y", "z", "the fact"]);
        let config = TraversalConfig::default();
        // concat keeps the phrase all the way up
        let r = bfs_search(&t, &SubstringOracle::new("fact"), "q", &config).unwrap();
        assert_eq!(r.cursor, Cursor::ROOT);

        let mut t = HatTree::new(2, Arc::new(crate::aggregation::TruncateAggregator { budget: 1 })).unwrap();
        for leaf in ["x", "y", "z", "the fact"] {
            t.insert_leaf(leaf, Meta::new()).unwrap();
        }
        let r = bfs_search(&t, &SubstringOracle::new("fact"), "q", &config).unwrap();
        assert_eq!(r.cursor, Cursor::new(2, 3));
        assert_eq!(r.steps, 7);
    }

    #[test]
    fn empty_tree_is_an_error() {
        let t = tree(2, &[]);
        let config = TraversalConfig::default();
        assert!(matches!(bfs_search(&t, &Always(true), "q", &config), Err(TraversalError::EmptyTree)));
        assert!(matches!(
            traverse(&t, &ScriptedAgent::default(), "q", &config),
            Err(TraversalError::EmptyTree)
        ));
    }

    #[test]
    fn config_validation() {
        assert!(TraversalConfig::new(0, 0.9).is_err());
        assert!(TraversalConfig::new(1, 1.0).is_err());
        assert!(TraversalConfig::new(1, 0.0).is_err());
        assert_eq!(TraversalConfig::default().step_budget, 32);
    }

    #[test]
    fn parse_action_tokens() {
        assert_eq!(parse_action("DOWN: need more detail"), Some(Down));
        assert_eq!(parse_action("I think we should accept"), Some(Accept));
        assert_eq!(parse_action("Right."), Some(Right));
        assert_eq!(parse_action("upward is not a token, left is"), Some(Left));
        assert_eq!(parse_action("no idea"), None);
    }

    #[test]
    fn llm_agent_falls_back_to_accept() {
        let mock = Arc::new(MockTransport::new());
        let agent = LlmAgent::new(ChatClient::mock(mock.clone()));
        let t = four();
        let r = traverse(&t, &agent, "q", &TraversalConfig::default()).unwrap();
        assert_eq!(r.outcome, Outcome::Sufficient(t.root_text().unwrap().into()));
        assert_eq!(r.steps, 1);
        // one initial request plus two clarifying retries
        assert_eq!(mock.request_log().len(), 3);
    }

    #[test]
    fn llm_agent_follows_model_actions() {
        let t = four();
        let template = PromptTemplate::agent();
        let mut mock = MockTransport::new();
        let first = llm_agent_prompt(&template, Cursor::ROOT, t.root_text().unwrap(), "q", &[]);
        mock.insert(request_digest(&first), "DOWN");
        let second = llm_agent_prompt(&template, Cursor::new(1, 0), "a | b", "q", &[(Cursor::ROOT, Down)]);
        mock.insert(request_digest(&second), "I'll accept this.");
        let agent = LlmAgent::new(ChatClient::mock(Arc::new(mock)));
        let r = traverse(&t, &agent, "q", &TraversalConfig::default()).unwrap();
        assert_eq!(r.outcome, Outcome::Sufficient("a | b".into()));
    }

    #[test]
    fn agent_prompt_lists_actions_and_state() {
        let msgs = llm_agent_prompt(&PromptTemplate::agent(), Cursor::new(1, 0), "node body", "where?", &[(Cursor::ROOT, Down)]);
        for action in TraversalAction::ALL {
            assert!(msgs[0].content.contains(action.token()));
        }
        assert!(msgs[1].content.contains("node body"));
        assert!(msgs[1].content.contains("where?"));
        assert!(msgs[1].content.contains("(0,0) DOWN"));
    }

    #[test]
    fn oracle_agent_walks_in_preorder() {
        let t = tree(2, &["a", "b", "c", "target"]);
        // only the leaf matches exactly
        struct Exact;
        impl SufficiencyOracle for Exact {
            fn sufficient(&self, text: &str, _: &str) -> Result<bool, TraversalError> {
                Ok(text == "target")
            }
        }
        let r = traverse(&t, &OracleAgent::new(Exact), "q", &TraversalConfig::default()).unwrap();
        assert_eq!(r.outcome, Outcome::Sufficient("target".into()));
        assert_eq!(r.cursor, Cursor::new(2, 3));
        let actions: Vec<_> = r.path.iter().map(|(_, a)| *a).collect();
        assert_eq!(actions, [Down, Down, Right, Up, Right, Down, Right, Accept]);

        let r = traverse(&t, &OracleAgent::new(Always(false)), "q", &TraversalConfig::default()).unwrap();
        assert_eq!(r.outcome, Outcome::Insufficient);
    }

    #[test]
    fn keyword_oracle() {
        let oracle = KeywordOracle::default();
        let q = "What is my pet iguana called?";
        assert_eq!(KeywordOracle::content_words(q), ["pet", "iguana", "called"]);
        assert!(oracle.sufficient("user: My pet iguana is called Zorblax.", q).unwrap());
        assert!(!oracle.sufficient("user: I have a pet dog.", q).unwrap());
        assert!(!oracle.sufficient("anything", "what is it?").unwrap());
        let loose = KeywordOracle { min_recall: 0.5 };
        assert!(loose.sufficient("my pet iguana", q).unwrap());
    }

    #[test]
    fn llm_oracle_reads_yes_no() {
        let template = PromptTemplate::sufficiency();
        let mut mock = MockTransport::new();
        mock.insert(request_digest(&template.render(&[("query", "q"), ("node_text", "yes-node")])), "Yes.");
        mock.insert(request_digest(&template.render(&[("query", "q"), ("node_text", "no-node")])), "NO");
        let oracle = LlmOracle::new(ChatClient::mock(Arc::new(mock)));
        assert!(oracle.sufficient("yes-node", "q").unwrap());
        assert!(!oracle.sufficient("no-node", "q").unwrap());
        assert!(!oracle.sufficient("unknown", "q").unwrap());
    }

    #[test]
    fn fallback_joins_root_and_newest_leaf() {
        let t = four();
        assert_eq!(fallback_context(&t), "a | b | c | d\nd");
    }
}
