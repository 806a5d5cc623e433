//! Run settings, merged from a TOML config file, `HAT_*` environment
//! variables and command-line flags (highest precedence last).

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use hat_memory::aggregation::{Aggregator, AggregatorSpec};
use hat_memory::llm::{self, ChatClient, ClientConfig, MockTransport};
use hat_memory::pipeline::{ContextStrategy, Retrieval};
use hat_memory::traversal::{
    KeywordOracle, LlmAgent, LlmOracle, OracleAgent, SufficiencyOracle, TraversalAgent,
    TraversalConfig,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_MEMORY_LENGTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    /// `oracle` under `--mock`, `llm` otherwise.
    Auto,
    /// Pre-order walk that accepts on the keyword oracle.
    Oracle,
    Llm,
}

impl FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Self::Auto),
            "oracle" => Ok(Self::Oracle),
            "llm" => Ok(Self::Llm),
            _ => Err(format!("unknown agent {s:?} (expected auto, oracle or llm)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    /// `keyword` under `--mock`, `llm` otherwise.
    Auto,
    Keyword,
    Llm,
}

impl FromStr for OracleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Self::Auto),
            "keyword" => Ok(Self::Keyword),
            "llm" => Ok(Self::Llm),
            _ => Err(format!("unknown oracle {s:?} (expected auto, keyword or llm)")),
        }
    }
}

/// Optional values from any one source.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub memory_length: Option<usize>,
    pub aggregator: Option<String>,
    pub strategies: Option<Vec<String>>,
    pub agent: Option<String>,
    pub oracle: Option<String>,
    pub budget: Option<usize>,
    pub mock: Option<bool>,
    pub mock_fixtures: Option<PathBuf>,
    pub require_session: Option<usize>,
    pub llm: Option<LlmLayer>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmLayer {
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: Option<u64>,
}

impl Layer {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    /// Reads `HAT_MEMORY_LENGTH`, `HAT_AGGREGATOR`, `HAT_STRATEGY`,
    /// `HAT_AGENT`, `HAT_ORACLE`, `HAT_BUDGET`, `HAT_MOCK` and the
    /// `HAT_LLM_*` client variables through `get`.
    pub fn from_env(get: impl Fn(&str) -> Option<String>) -> Result<Self, CliError> {
        fn parse<T: FromStr>(name: &str, value: Option<String>) -> Result<Option<T>, CliError> {
            value
                .map(|v| v.parse().map_err(|_| CliError::Usage(format!("{name}={v:?} is not valid"))))
                .transpose()
        }
        let llm = LlmLayer {
            endpoint: get(llm::ENV_ENDPOINT),
            api_key: get(llm::ENV_API_KEY).filter(|k| !k.is_empty()),
            model: get(llm::ENV_MODEL),
            timeout_secs: parse("HAT_LLM_TIMEOUT_SECS", get("HAT_LLM_TIMEOUT_SECS"))?,
        };
        Ok(Self {
            memory_length: parse("HAT_MEMORY_LENGTH", get("HAT_MEMORY_LENGTH"))?,
            aggregator: get("HAT_AGGREGATOR"),
            strategies: get("HAT_STRATEGY").map(|s| split_list(&s)),
            agent: get("HAT_AGENT"),
            oracle: get("HAT_ORACLE"),
            budget: parse("HAT_BUDGET", get("HAT_BUDGET"))?,
            mock: get("HAT_MOCK").map(|v| matches!(v.as_str(), "1" | "true" | "yes")),
            mock_fixtures: get("HAT_MOCK_FIXTURES").map(PathBuf::from),
            require_session: parse("HAT_REQUIRE_SESSION", get("HAT_REQUIRE_SESSION"))?,
            llm: Some(llm),
        })
    }

    /// Values set in `over` replace those in `self`.
    pub fn overlay(self, over: Layer) -> Layer {
        let llm = match (self.llm, over.llm) {
            (Some(base), Some(top)) => Some(LlmLayer {
                endpoint: top.endpoint.or(base.endpoint),
                api_key: top.api_key.or(base.api_key),
                model: top.model.or(base.model),
                timeout_secs: top.timeout_secs.or(base.timeout_secs),
            }),
            (base, top) => top.or(base),
        };
        Layer {
            memory_length: over.memory_length.or(self.memory_length),
            aggregator: over.aggregator.or(self.aggregator),
            strategies: over.strategies.or(self.strategies),
            agent: over.agent.or(self.agent),
            oracle: over.oracle.or(self.oracle),
            budget: over.budget.or(self.budget),
            mock: over.mock.or(self.mock),
            mock_fixtures: over.mock_fixtures.or(self.mock_fixtures),
            require_session: over.require_session.or(self.require_session),
            llm,
        }
    }
}

pub fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub memory_length: usize,
    pub aggregator: AggregatorSpec,
    pub strategies: Vec<ContextStrategy>,
    pub agent: AgentKind,
    pub oracle: OracleKind,
    pub budget: usize,
    pub mock: bool,
    pub mock_fixtures: Option<PathBuf>,
    pub require_session: Option<usize>,
    pub client: ClientConfig,
}

impl Settings {
    /// Merges `file < env < cli`.
    pub fn resolve(file: Layer, env: Layer, cli: Layer) -> Result<Self, CliError> {
        let merged = file.overlay(env).overlay(cli);
        let usage = CliError::Usage;

        let memory_length = merged.memory_length.unwrap_or(DEFAULT_MEMORY_LENGTH);
        if memory_length < 2 {
            return Err(usage(format!("memory length must be at least 2, got {memory_length}")));
        }
        let aggregator = match &merged.aggregator {
            Some(s) => s.parse().map_err(usage)?,
            None => AggregatorSpec::default(),
        };
        let strategies = match &merged.strategies {
            Some(list) if !list.is_empty() => list
                .iter()
                .map(|s| s.parse())
                .collect::<Result<Vec<ContextStrategy>, _>>()
                .map_err(usage)?,
            _ => ContextStrategy::ALL.to_vec(),
        };
        let mock = merged.mock.unwrap_or(false);
        let mut agent = match &merged.agent {
            Some(s) => s.parse().map_err(usage)?,
            None => AgentKind::Auto,
        };
        if agent == AgentKind::Auto {
            agent = if mock { AgentKind::Oracle } else { AgentKind::Llm };
        }
        let mut oracle = match &merged.oracle {
            Some(s) => s.parse().map_err(usage)?,
            None => OracleKind::Auto,
        };
        if oracle == OracleKind::Auto {
            oracle = if mock { OracleKind::Keyword } else { OracleKind::Llm };
        }
        let budget = merged.budget.unwrap_or(hat_memory::traversal::DEFAULT_STEP_BUDGET);
        if budget == 0 {
            return Err(usage("budget must be at least 1".into()));
        }

        let mut client = ClientConfig::default();
        if let Some(l) = merged.llm {
            if let Some(endpoint) = l.endpoint {
                client.endpoint = endpoint;
            }
            client.api_key = l.api_key.or(client.api_key);
            if let Some(model) = l.model {
                client.model = model;
            }
            if let Some(secs) = l.timeout_secs {
                client.timeout = Duration::from_secs(secs);
            }
        }

        Ok(Self {
            memory_length,
            aggregator,
            strategies,
            agent,
            oracle,
            budget,
            mock,
            mock_fixtures: merged.mock_fixtures,
            require_session: merged.require_session,
            client,
        })
    }
}

/// Everything a command needs to build memories and contexts.
pub struct Runtime {
    pub settings: Settings,
    pub client: ChatClient,
    pub aggregator: Arc<dyn Aggregator>,
    pub oracle: Box<dyn SufficiencyOracle>,
    pub agent: Box<dyn TraversalAgent>,
    pub traversal: TraversalConfig,
}

impl Runtime {
    pub fn new(settings: Settings) -> Result<Self, CliError> {
        let client = if settings.mock {
            let transport = match &settings.mock_fixtures {
                Some(path) => MockTransport::from_fixture_file(path)
                    .map_err(|e| CliError::Usage(e.to_string()))?,
                None => MockTransport::new(),
            };
            ChatClient::mock(Arc::new(transport))
        } else {
            ChatClient::live(settings.client.clone()).map_err(|e| CliError::Usage(e.to_string()))?
        };
        let aggregator = settings
            .aggregator
            .build(Some(&client))
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let oracle: Box<dyn SufficiencyOracle> = match settings.oracle {
            OracleKind::Llm => Box::new(LlmOracle::new(client.clone())),
            _ => Box::new(KeywordOracle::default()),
        };
        let agent: Box<dyn TraversalAgent> = match settings.agent {
            AgentKind::Llm => Box::new(LlmAgent::new(client.clone())),
            _ => Box::new(OracleAgent::new(KeywordOracle::default())),
        };
        let traversal =
            TraversalConfig::with_budget(settings.budget).map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(Self { settings, client, aggregator, oracle, agent, traversal })
    }

    pub fn retrieval(&self) -> Retrieval<'_> {
        Retrieval { oracle: &*self.oracle, agent: &*self.agent, config: self.traversal }
    }
}
