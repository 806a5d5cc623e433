use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hat_memory::episode::{self, DialogueTurn, Episode, Speaker};
use hat_memory::fixtures::planted_fact_corpus;
use hat_memory::hat::{HatTree, TreeDocument};
use hat_memory::metrics::MetricReport;
use hat_memory::pipeline::{generate_response, ContextStrategy, MemoryState};
use serde::{Deserialize, Serialize};

use crate::bench;
use crate::config::{Layer, Runtime, Settings};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "hat", version, about = "Hierarchical aggregate tree memory for long dialogues")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build one memory tree per episode and write it to disk.
    Ingest(IngestArgs),
    /// Score context strategies on held-out final exchanges.
    Bench(BenchArgs),
    /// Interactive session backed by a memory tree (reads stdin).
    Chat(ChatArgs),
    /// Print the layers of a saved tree.
    Inspect(InspectArgs),
    /// Score candidate/reference pairs.
    Metrics(MetricsArgs),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    /// One episode object per line.
    #[default]
    Jsonl,
    /// Multi-session chat release records, one per line.
    Msc,
}

/// Flags shared by the commands that build memories.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML config file; flags and HAT_* variables override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Children per node (M).
    #[arg(long)]
    pub memory_length: Option<usize>,
    /// concat[:sep], truncate[:budget] or llm_persona.
    #[arg(long)]
    pub aggregator: Option<String>,
    /// Context strategies, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub strategy: Vec<String>,
    /// Traversal agent: auto, oracle or llm.
    #[arg(long)]
    pub agent: Option<String>,
    /// Sufficiency check for hat_bfs/hat_dfs: auto, keyword or llm.
    #[arg(long)]
    pub oracle: Option<String>,
    /// Traversal step budget.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Answer every model call from the offline mock.
    #[arg(long)]
    pub mock: bool,
    /// Canned mock replies keyed by request digest (JSON object).
    #[arg(long)]
    pub mock_fixtures: Option<PathBuf>,
    /// Skip episodes with fewer sessions than this.
    #[arg(long)]
    pub require_session: Option<usize>,
}

impl CommonArgs {
    fn layer(&self) -> Layer {
        Layer {
            memory_length: self.memory_length,
            aggregator: self.aggregator.clone(),
            strategies: (!self.strategy.is_empty()).then(|| self.strategy.clone()),
            agent: self.agent.clone(),
            oracle: self.oracle.clone(),
            budget: self.budget,
            mock: self.mock.then_some(true),
            mock_fixtures: self.mock_fixtures.clone(),
            require_session: self.require_session,
            llm: None,
        }
    }

    pub fn settings(&self, env: &dyn Fn(&str) -> Option<String>) -> Result<Settings, CliError> {
        let file = match &self.config {
            Some(path) => Layer::from_file(path)?,
            None => Layer::default(),
        };
        Settings::resolve(file, Layer::from_env(env)?, self.layer())
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Episodes file.
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    pub input_format: InputFormat,
    /// Output directory.
    #[arg(long, default_value = "hat-out")]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Episodes file; omit to use generated planted-fact episodes.
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub input_format: InputFormat,
    /// Number of planted-fact episodes when no input is given.
    #[arg(long, default_value_t = 20)]
    pub planted: usize,
    /// First seed of the planted-fact episodes.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    /// Continue from a saved tree.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Save the tree here on exit.
    #[arg(long)]
    pub save: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Saved tree document.
    pub path: PathBuf,
    /// Characters of node text to show.
    #[arg(long, default_value_t = 60)]
    pub preview: usize,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// JSON lines of {"candidate": ..., "reference": ...}.
    pub input: PathBuf,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub struct Io<'a> {
    pub stdin: &'a mut dyn BufRead,
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
    pub env: &'a dyn Fn(&str) -> Option<String>,
}

pub fn run(cli: Cli, io: Io<'_>) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(args) => ingest(args, io),
        Command::Bench(args) => bench_cmd(args, io),
        Command::Chat(args) => chat(args, io),
        Command::Inspect(args) => inspect(args, io),
        Command::Metrics(args) => metrics(args, io),
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Data(format!("i/o error: {e}"))
}

fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Data(format!("{}: not found", path.display())),
        _ => CliError::Data(format!("{}: {e}", path.display())),
    })
}

pub fn load_episodes(path: &Path, format: InputFormat) -> Result<Vec<Episode>, CliError> {
    let text = read_input(path)?;
    let data = |e: String| CliError::Data(format!("{}: {e}", path.display()));
    match format {
        InputFormat::Jsonl => episode::read_episodes(text.as_bytes()).map_err(|e| data(e.to_string())),
        InputFormat::Msc => {
            let mut episodes = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let record: serde_json::Value =
                    serde_json::from_str(line).map_err(|e| data(format!("line {}: {e}", i + 1)))?;
                let id = format!("msc-{:05}", episodes.len());
                let episode = episode::msc::convert_record(&record, &id)
                    .map_err(|e| data(format!("line {}: {e}", i + 1)))?;
                episodes.push(episode);
            }
            Ok(episodes)
        }
    }
}

fn filter_sessions(episodes: &mut Vec<Episode>, require: Option<usize>, stderr: &mut dyn Write) {
    if let Some(n) = require {
        let before = episodes.len();
        episodes.retain(|e| e.sessions.len() >= n);
        let dropped = before - episodes.len();
        if dropped > 0 {
            let _ = writeln!(stderr, "skipped {dropped} episode(s) with fewer than {n} sessions");
        }
    }
}

/// Episode id made safe for use as a file name.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

/// Writes through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotFile {
    pub episode_id: String,
    /// Root text at the end of each session, keyed by session number.
    pub snapshots: std::collections::BTreeMap<u32, String>,
}

fn ingest(args: IngestArgs, io: Io<'_>) -> Result<(), CliError> {
    let settings = args.common.settings(io.env)?;
    let mut episodes = load_episodes(&args.input, args.input_format)?;
    filter_sessions(&mut episodes, settings.require_session, io.stderr);
    let runtime = Runtime::new(settings)?;

    // Everything is built before anything is written.
    let mut outputs = Vec::with_capacity(episodes.len());
    for episode in &episodes {
        let mut state = MemoryState::new(runtime.settings.memory_length, runtime.aggregator.clone())?;
        state.ingest_episode(episode, 0)?;
        let snapshots = SnapshotFile {
            episode_id: episode.episode_id.clone(),
            snapshots: state.session_snapshots().clone(),
        };
        outputs.push((episode.episode_id.clone(), state.into_tree(), snapshots));
    }

    fs::create_dir_all(&args.out).map_err(io_err)?;
    for (id, tree, snapshots) in &outputs {
        let stem = file_stem(id);
        write_atomic(&args.out.join(format!("{stem}.tree.json")), &tree.to_json())?;
        let mut json = serde_json::to_string_pretty(snapshots).expect("snapshots serialize");
        json.push('\n');
        write_atomic(&args.out.join(format!("{stem}.snapshots.json")), &json)?;
        writeln!(
            io.stdout,
            "{id}: {} leaves, depth {}, {} aggregator calls",
            tree.leaf_count(),
            tree.depth(),
            tree.agg_call_count()
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn bench_cmd(args: BenchArgs, io: Io<'_>) -> Result<(), CliError> {
    let settings = args.common.settings(io.env)?;
    let mut episodes = match &args.input {
        Some(path) => load_episodes(path, args.input_format)?,
        None => planted_fact_corpus(args.seed, args.planted).into_iter().map(|(e, _)| e).collect(),
    };
    filter_sessions(&mut episodes, settings.require_session, io.stderr);
    if episodes.is_empty() {
        return Err(CliError::Data("no episodes to benchmark".into()));
    }
    let runtime = Runtime::new(settings)?;

    let started = Instant::now();
    let report = bench::run(&runtime, &episodes)?;
    let elapsed = started.elapsed();

    write!(io.stdout, "{}", report.table()).map_err(io_err)?;
    writeln!(io.stdout, "{} episode(s) in {:.2}s", report.episodes, elapsed.as_secs_f64())
        .map_err(io_err)?;
    if let Some(out) = &args.out {
        write_atomic(out, &report.to_json())?;
    }
    Ok(())
}

fn chat(args: ChatArgs, io: Io<'_>) -> Result<(), CliError> {
    let settings = args.common.settings(io.env)?;
    let strategy = match settings.strategies.as_slice() {
        all if all == ContextStrategy::ALL => ContextStrategy::HatAgent,
        [first, ..] => *first,
        [] => ContextStrategy::HatAgent,
    };
    if strategy == ContextStrategy::GoldMemory {
        return Err(CliError::Usage("gold_memory needs reference memories and is bench-only".into()));
    }
    let runtime = Runtime::new(settings)?;
    let mut state = match &args.tree {
        Some(path) => MemoryState::from_tree(HatTree::from_json(&read_input(path)?, runtime.aggregator.clone())?),
        None => MemoryState::new(runtime.settings.memory_length, runtime.aggregator.clone())?,
    };
    let mut session = state.current_session().map_or(1, |s| s + 1);
    let mut turn = 0u32;
    let retrieval = runtime.retrieval();

    for line in io.stdin.lines() {
        let line = line.map_err(io_err)?;
        let line = line.trim();
        match line {
            "" => continue,
            "/quit" => break,
            "/end" => {
                if turn > 0 {
                    state.end_session(session)?;
                    writeln!(io.stdout, "[session {session} saved]").map_err(io_err)?;
                    session += 1;
                    turn = 0;
                }
                continue;
            }
            _ => {}
        }
        let context = if state.tree().is_empty() {
            String::new()
        } else {
            state.build_context(line, strategy, &retrieval)?
        };
        let reply = generate_response(&context, line, &runtime.client)?;
        state.ingest_turn(&DialogueTurn::new(Speaker::User, line, session, turn))?;
        state.ingest_turn(&DialogueTurn::new(Speaker::Assistant, reply.as_str(), session, turn + 1))?;
        turn += 2;
        writeln!(io.stdout, "assistant: {reply}").map_err(io_err)?;
    }

    if let Some(path) = &args.save {
        write_atomic(path, &state.tree().to_json())?;
    }
    Ok(())
}

fn preview(text: &str, max: usize) -> String {
    let flat: String = text.chars().map(|c| if c.is_control() { ' ' } else { c }).collect();
    if flat.chars().count() <= max {
        flat
    } else {
        let mut cut: String = flat.chars().take(max).collect();
        cut.push_str("...");
        cut
    }
}

fn inspect(args: InspectArgs, io: Io<'_>) -> Result<(), CliError> {
    let doc = TreeDocument::from_json(&read_input(&args.path)?)?;
    doc.validate()?;
    let out = io.stdout;
    let w = |e| io_err(e);
    writeln!(out, "aggregator: {}", doc.aggregator).map_err(w)?;
    writeln!(
        out,
        "memory length {}, {} leaves, depth {}, {} layers",
        doc.memory_length,
        doc.leaf_count,
        doc.depth(),
        doc.layers.len()
    )
    .map_err(w)?;
    for (k, layer) in doc.layers.iter().enumerate() {
        writeln!(out, "layer {k}: {} node(s)", layer.len()).map_err(w)?;
        for node in layer {
            writeln!(
                out,
                "  [{}] id={} children={} cache={} {:?}",
                node.index,
                node.id.0,
                node.children.len(),
                node.cache.len(),
                preview(&node.text, args.preview)
            )
            .map_err(w)?;
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRecord {
    candidate: String,
    reference: String,
}

fn metrics(args: MetricsArgs, io: Io<'_>) -> Result<(), CliError> {
    let text = read_input(&args.input)?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: PairRecord = serde_json::from_str(line).map_err(|e| {
            CliError::Data(format!("{}: line {}: {e}", args.input.display(), i + 1))
        })?;
        pairs.push((record.candidate, record.reference));
    }
    let report = MetricReport::evaluate(&pairs);
    writeln!(io.stdout, "{report}").map_err(io_err)?;
    if let Some(out) = &args.out {
        let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
        json.push('\n');
        write_atomic(out, &json)?;
    }
    Ok(())
}
