//! Aggregate functions that turn the ordered texts of a node's children
//! into the node's own text.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::llm::{ChatClient, ChatMessage, LlmError};
use crate::metrics::tokenize;
use crate::prompt::PromptTemplate;

pub const DEFAULT_SEPARATOR: &str = " | ";
pub const DEFAULT_TOKEN_BUDGET: usize = 256;

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("aggregate called with no children")]
    NoChildren,
    #[error("aggregation unavailable: {0}")]
    Unavailable(#[from] LlmError),
}

/// Maps the ordered (oldest first) child texts of a node to its text.
pub trait Aggregator: Send + Sync {
    fn aggregate(&self, children: &[&str]) -> Result<String, AggregateError>;

    /// Stable identifier recorded in persisted trees. Two aggregators with
    /// the same id must produce the same text for the same input.
    fn id(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConcatAggregator {
    pub separator: String,
}

impl ConcatAggregator {
    pub fn new(separator: impl Into<String>) -> Self {
        Self { separator: separator.into() }
    }
}

impl Default for ConcatAggregator {
    fn default() -> Self {
        Self::new(DEFAULT_SEPARATOR)
    }
}

impl Aggregator for ConcatAggregator {
    fn aggregate(&self, children: &[&str]) -> Result<String, AggregateError> {
        if children.is_empty() {
            return Err(AggregateError::NoChildren);
        }
        Ok(children.join(&self.separator))
    }

    fn id(&self) -> String {
        format!("concat({:?})", self.separator)
    }
}

/// Joins the children, tokenizes and keeps the first `budget` tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TruncateAggregator {
    pub budget: usize,
}

impl Default for TruncateAggregator {
    fn default() -> Self {
        Self { budget: DEFAULT_TOKEN_BUDGET }
    }
}

impl Aggregator for TruncateAggregator {
    fn aggregate(&self, children: &[&str]) -> Result<String, AggregateError> {
        if children.is_empty() {
            return Err(AggregateError::NoChildren);
        }
        let tokens = tokenize(&children.join(" "));
        Ok(tokens
            .into_iter()
            .take(self.budget)
            .collect::<Vec<_>>()
            .join(" "))
    }

    fn id(&self) -> String {
        format!("truncate({})", self.budget)
    }
}

/// Builds the persona-summarization conversation for `children`.
pub fn persona_prompt(template: &PromptTemplate, children: &[&str]) -> Vec<ChatMessage> {
    let blocks = children
        .iter()
        .enumerate()
        .map(|(i, text)| format!("[{}]\n{}", i + 1, text))
        .collect::<Vec<_>>()
        .join("\n\n");
    template.render(&[("children", &blocks)])
}

/// Asks a chat model to merge the children into a persona summary.
pub struct PersonaAggregator {
    client: ChatClient,
    template: PromptTemplate,
    temperature: f64,
}

impl PersonaAggregator {
    pub fn new(client: ChatClient) -> Self {
        Self::with_template(client, PromptTemplate::persona())
    }

    pub fn with_template(client: ChatClient, template: PromptTemplate) -> Self {
        Self { client, template, temperature: 0.0 }
    }

    pub fn prompt(&self, children: &[&str]) -> Vec<ChatMessage> {
        persona_prompt(&self.template, children)
    }
}

impl fmt::Debug for PersonaAggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PersonaAggregator")
            .field("client", &self.client)
            .field("template", &self.template.name)
            .finish()
    }
}

impl Aggregator for PersonaAggregator {
    fn aggregate(&self, children: &[&str]) -> Result<String, AggregateError> {
        if children.is_empty() {
            return Err(AggregateError::NoChildren);
        }
        let reply = self.client.chat(self.prompt(children), self.temperature)?;
        Ok(reply.trim().to_string())
    }

    fn id(&self) -> String {
        format!("llm_persona({} v{})", self.template.name, self.template.version)
    }
}

/// Aggregator selection as written in configs and on the command line:
/// `concat`, `concat:<sep>`, `truncate`, `truncate:<budget>`, `llm_persona`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AggregatorSpec {
    Concat { separator: String },
    Truncate { budget: usize },
    LlmPersona,
}

impl Default for AggregatorSpec {
    fn default() -> Self {
        Self::Concat { separator: DEFAULT_SEPARATOR.to_string() }
    }
}

impl FromStr for AggregatorSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, param) = match s.split_once(':') {
            Some((kind, param)) => (kind, Some(param)),
            None => (s, None),
        };
        match (kind, param) {
            ("concat", None) => Ok(Self::default()),
            ("concat", Some(sep)) => Ok(Self::Concat { separator: sep.to_string() }),
            ("truncate", None) => Ok(Self::Truncate { budget: DEFAULT_TOKEN_BUDGET }),
            ("truncate", Some(b)) => b
                .parse()
                .ok()
                .filter(|b| *b > 0)
                .map(|budget| Self::Truncate { budget })
                .ok_or_else(|| format!("invalid truncate budget {b:?}")),
            ("llm_persona" | "persona", None) => Ok(Self::LlmPersona),
            _ => Err(format!(
                "unknown aggregator {s:?} (expected concat[:sep], truncate[:budget] or llm_persona)"
            )),
        }
    }
}

impl AggregatorSpec {
    /// Instantiates the aggregator; `llm_persona` needs a client.
    pub fn build(&self, client: Option<&ChatClient>) -> Result<Arc<dyn Aggregator>, LlmError> {
        Ok(match self {
            Self::Concat { separator } => Arc::new(ConcatAggregator::new(separator.clone())),
            Self::Truncate { budget } => Arc::new(TruncateAggregator { budget: *budget }),
            Self::LlmPersona => {
                let client = client.ok_or_else(|| {
                    LlmError::Config("llm_persona aggregation needs a chat client".into())
                })?;
                Arc::new(PersonaAggregator::new(client.clone()))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{request_digest, MockTransport};

    #[test]
    fn concat_joins_with_separator() {
        let agg = ConcatAggregator::new(" | ");
        assert_eq!(agg.aggregate(&["a", "b"]).unwrap(), "a | b");
        assert_eq!(agg.aggregate(&["solo"]).unwrap(), "solo");
        assert!(matches!(agg.aggregate(&[]), Err(AggregateError::NoChildren)));
    }

    #[test]
    fn truncate_keeps_budget_tokens() {
        let agg = TruncateAggregator { budget: 3 };
        assert_eq!(agg.aggregate(&["x y", "z w"]).unwrap(), "x y z");
        assert_eq!(agg.aggregate(&["Hello, World!"]).unwrap(), "hello world");
        assert!(matches!(agg.aggregate(&[]), Err(AggregateError::NoChildren)));
    }

    #[test]
    fn persona_prompt_numbers_children_in_order() {
        let template = PromptTemplate::persona();
        let one = persona_prompt(&template, &["only"]);
        assert_eq!(one.len(), 2);
        assert_eq!(one[1].content.matches("[1]\n").count(), 1);
        assert!(!one[1].content.contains("[2]"));

        let three = persona_prompt(&template, &["first", "second", "third"]);
        let user = &three[1].content;
        let positions: Vec<usize> = ["[1]\nfirst", "[2]\nsecond", "[3]\nthird"]
            .iter()
            .map(|b| user.find(b).expect("numbered block"))
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(three[0].content, template.system);
    }

    #[test]
    fn persona_uses_chat_reply_trimmed() {
        let template = PromptTemplate::persona();
        let children = ["user: I adopted a greyhound", "assistant: what's its name?"];
        let mut mock = MockTransport::new();
        mock.insert(
            request_digest(&persona_prompt(&template, &children)),
            "  The user adopted a greyhound.\n",
        );
        let agg = PersonaAggregator::new(ChatClient::mock(Arc::new(mock)));
        assert_eq!(agg.aggregate(&children).unwrap(), "The user adopted a greyhound.");
        assert_eq!(agg.id(), "llm_persona(persona v1)");
    }

    #[test]
    fn spec_parsing() {
        assert_eq!("concat".parse::<AggregatorSpec>().unwrap(), AggregatorSpec::default());
        assert_eq!(
            "concat:\n".parse::<AggregatorSpec>().unwrap(),
            AggregatorSpec::Concat { separator: "\n".into() }
        );
        assert_eq!(
            "truncate:12".parse::<AggregatorSpec>().unwrap(),
            AggregatorSpec::Truncate { budget: 12 }
        );
        assert!("truncate:0".parse::<AggregatorSpec>().is_err());
        assert!("median".parse::<AggregatorSpec>().is_err());
        assert!(AggregatorSpec::LlmPersona.build(None).is_err());
    }
}
