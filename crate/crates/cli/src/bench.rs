//! Offline benchmark: ingest every episode, hold out its final exchange,
//! build a context per strategy, generate a reply and score it.

use std::fmt::Write as _;

use hat_memory::episode::Episode;
use hat_memory::metrics::MetricReport;
use hat_memory::pipeline::{generate_response, ContextStrategy, MemoryState};
use hat_memory::traversal::Outcome;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AgentKind, OracleKind, Runtime};
use crate::CliError;

pub const REPORT_FORMAT: &str = "hat-bench";
pub const REPORT_VERSION: u32 = 1;

/// How a context was produced and what it led to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutput {
    pub strategy: String,
    pub context: String,
    pub response: String,
    /// Walk length; absent for strategies that do not walk the tree.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode_id: String,
    pub query: String,
    pub reference: String,
    pub leaves: usize,
    pub depth: usize,
    pub aggregator_calls: u64,
    pub outputs: Vec<StrategyOutput>,
}

impl EpisodeRecord {
    pub fn output(&self, strategy: ContextStrategy) -> Option<&StrategyOutput> {
        self.outputs.iter().find(|o| o.strategy == strategy.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub metrics: MetricReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_steps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub memory_length: usize,
    pub aggregator: String,
    pub agent: AgentKind,
    pub oracle: OracleKind,
    pub budget: usize,
    pub mock: bool,
}

/// Machine-readable benchmark report. Contains no timings, so two runs on
/// the same input and settings serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub format: String,
    pub version: u32,
    pub settings: RunSettings,
    pub episodes: usize,
    pub strategies: Vec<StrategySummary>,
    /// Session snapshots scored against gold memory, when any gold exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<MetricReport>,
    pub records: Vec<EpisodeRecord>,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn summary(&self, strategy: ContextStrategy) -> Option<&StrategySummary> {
        self.strategies.iter().find(|s| s.strategy == strategy.name())
    }

    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "strategy", "BLEU-1", "BLEU-2", "DIST-1", "DIST-2", "F1", "steps"
        );
        let row = |out: &mut String, name: &str, m: &MetricReport, steps: Option<f64>| {
            let steps = steps.map_or("-".to_string(), |s| format!("{s:.2}"));
            let _ = writeln!(
                out,
                "{:<14} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7}",
                name, m.bleu1, m.bleu2, m.distinct1, m.distinct2, m.f1, steps
            );
        };
        for s in &self.strategies {
            row(&mut out, &s.strategy, &s.metrics, s.mean_steps);
        }
        if let Some(memory) = &self.memory {
            let _ = writeln!(out, "\nmemory fidelity (session snapshots vs gold memory)");
            row(&mut out, "snapshots", memory, None);
        }
        out
    }
}

struct EpisodeRun {
    record: EpisodeRecord,
    memory_pairs: Vec<(String, String)>,
}

fn run_episode(
    runtime: &Runtime,
    strategies: &[ContextStrategy],
    episode: &Episode,
) -> Result<EpisodeRun, CliError> {
    let held = episode
        .held_out()
        .map_err(|e| CliError::Data(format!("episode {}: {e}", episode.episode_id)))?;
    let mut state = MemoryState::new(runtime.settings.memory_length, runtime.aggregator.clone())?;
    state.ingest_episode(episode, 2)?;
    if state.tree().is_empty() {
        return Err(CliError::Data(format!(
            "episode {} has no turns left after holding out the final exchange",
            episode.episode_id
        )));
    }

    let retrieval = runtime.retrieval();
    let mut outputs = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        let context = state.retrieve(&held.query, strategy, &retrieval).map_err(|e| match e {
            hat_memory::pipeline::PipelineError::Config(msg) => {
                CliError::Usage(format!("episode {}: {msg}", episode.episode_id))
            }
            other => other.into(),
        })?;
        let response = generate_response(&context.text, &held.query, &runtime.client)?;
        let (steps, outcome) = match &context.traversal {
            Some(walk) => {
                let outcome = match walk.outcome {
                    Outcome::Sufficient(_) => "sufficient",
                    Outcome::Insufficient => "insufficient",
                    Outcome::BudgetExhausted => "budget_exhausted",
                };
                (Some(walk.steps), Some(outcome.to_string()))
            }
            None => (None, None),
        };
        outputs.push(StrategyOutput {
            strategy: strategy.name().to_string(),
            context: context.text,
            response,
            steps,
            outcome,
        });
    }

    let memory_pairs = state
        .session_snapshots()
        .iter()
        .filter_map(|(session, snapshot)| {
            let gold = &episode.sessions.get(*session as usize - 1)?.gold_memory;
            (!gold.is_empty()).then(|| (snapshot.clone(), gold.join(" ")))
        })
        .collect();

    let tree = state.tree();
    Ok(EpisodeRun {
        record: EpisodeRecord {
            episode_id: episode.episode_id.clone(),
            query: held.query,
            reference: held.reference,
            leaves: tree.leaf_count(),
            depth: tree.depth(),
            aggregator_calls: tree.agg_call_count(),
            outputs,
        },
        memory_pairs,
    })
}

/// Runs every episode (in parallel) and every configured strategy.
pub fn run(runtime: &Runtime, episodes: &[Episode]) -> Result<BenchReport, CliError> {
    let strategies = runtime.settings.strategies.clone();
    let mut runs = episodes
        .par_iter()
        .map(|episode| run_episode(runtime, &strategies, episode))
        .collect::<Result<Vec<_>, _>>()?;
    runs.sort_by(|a, b| a.record.episode_id.cmp(&b.record.episode_id));

    let mut summaries = Vec::with_capacity(strategies.len());
    for strategy in &strategies {
        let outputs: Vec<(&StrategyOutput, &EpisodeRecord)> = runs
            .iter()
            .filter_map(|r| r.record.output(*strategy).map(|o| (o, &r.record)))
            .collect();
        let pairs: Vec<(&str, &str)> =
            outputs.iter().map(|(o, r)| (o.response.as_str(), r.reference.as_str())).collect();
        let steps: Vec<usize> = outputs.iter().filter_map(|(o, _)| o.steps).collect();
        let mean_steps = (!steps.is_empty())
            .then(|| steps.iter().sum::<usize>() as f64 / steps.len() as f64);
        summaries.push(StrategySummary {
            strategy: strategy.name().to_string(),
            metrics: MetricReport::evaluate(&pairs),
            mean_steps,
        });
    }

    let memory_pairs: Vec<(&str, &str)> = runs
        .iter()
        .flat_map(|r| r.memory_pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())))
        .collect();
    let memory = (!memory_pairs.is_empty()).then(|| MetricReport::evaluate(&memory_pairs));

    let s = &runtime.settings;
    Ok(BenchReport {
        format: REPORT_FORMAT.to_string(),
        version: REPORT_VERSION,
        settings: RunSettings {
            memory_length: s.memory_length,
            aggregator: runtime.aggregator.id(),
            agent: s.agent,
            oracle: s.oracle,
            budget: s.budget,
            mock: s.mock,
        },
        episodes: runs.len(),
        strategies: summaries,
        memory,
        records: runs.into_iter().map(|r| r.record).collect(),
    })
}

/// Share of episodes whose output for `strategy` satisfies `hit`.
pub fn hit_rate(
    report: &BenchReport,
    strategy: ContextStrategy,
    hit: impl Fn(&EpisodeRecord, &StrategyOutput) -> bool,
) -> f64 {
    let outputs: Vec<_> = report
        .records
        .iter()
        .filter_map(|r| r.output(strategy).map(|o| (r, o)))
        .collect();
    if outputs.is_empty() {
        return 0.0;
    }
    outputs.iter().filter(|(r, o)| hit(r, o)).count() as f64 / outputs.len() as f64
}
