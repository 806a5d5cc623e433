//! Hierarchical aggregate tree (HAT) memory for long, multi-session
//! dialogue.
//!
//! Dialogue turns are inserted as leaves of a layered tree whose internal
//! nodes hold an aggregate (concatenation, truncation or an LLM-written
//! persona summary) of their children. A query-conditioned traversal of the
//! tree selects the context handed to the response generator.

pub mod aggregation;
pub mod episode;
pub mod fixtures;
pub mod hat;
pub mod llm;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod traversal;

pub use aggregation::{
    AggregateError, Aggregator, AggregatorSpec, ConcatAggregator, PersonaAggregator,
    TruncateAggregator,
};
pub use hat::{ChildStateDigest, HatError, HatTree, Meta, Node, NodeId, TreeDocument};
pub use llm::{ChatClient, ChatMessage, ClientConfig, LlmError, MockTransport};
pub use episode::{DialogueTurn, Episode, Session, Speaker};
pub use metrics::MetricReport;
pub use pipeline::{ContextStrategy, MemoryState, PipelineError, Retrieval};
pub use traversal::{
    Cursor, Outcome, SufficiencyOracle, TraversalAction, TraversalAgent, TraversalConfig,
    TraversalResult,
};
