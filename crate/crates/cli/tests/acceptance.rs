//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

#[path = "../../core/tests/oracle/mod.rs"]
mod oracle;

use std::collections::HashSet;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use hat_cli::bench::{hit_rate, BenchReport};
use hat_memory::aggregation::ConcatAggregator;
use hat_memory::fixtures::planted_fact_corpus;
use hat_memory::hat::{HatTree, Meta};
use hat_memory::metrics::{bleu_n, distinct_n, f1};
use hat_memory::pipeline::ContextStrategy;
use hat_memory::traversal::{
    bfs_search, dfs_search, traverse, OracleAgent, Outcome, ScriptedAgent, SufficiencyOracle,
    TraversalAction, TraversalConfig, TraversalError,
};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEP: &str = " | ";
const MEMORY_LENGTHS: [usize; 3] = [2, 3, 5];

type Verdict = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);

fn concat_tree(m: usize) -> HatTree {
    HatTree::new(m, Arc::new(ConcatAggregator::new(SEP))).unwrap()
}

fn random_tree(rng: &mut ChaCha8Rng, max_leaves: usize) -> (HatTree, Vec<String>) {
    let n = rng.random_range(1..=max_leaves);
    let m = *MEMORY_LENGTHS.choose(rng).unwrap();
    let leaves: Vec<String> = (0..n).map(|i| format!("t{i}-{}", rng.random_range(0..1000))).collect();
    let mut tree = concat_tree(m);
    for leaf in &leaves {
        tree.insert_leaf(leaf.clone(), Meta::new()).unwrap();
    }
    (tree, leaves)
}

fn tree_invariants() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut violations = Vec::new();
    for trial in 0..1000 {
        let (tree, leaves) = random_tree(&mut rng, 200);
        if let Err(e) = oracle::check_tree(&tree, &leaves, SEP) {
            violations.push(format!("trial {trial}: {e}"));
        }
    }
    let elapsed = started.elapsed();
    if !violations.is_empty() {
        return Err(format!("{} violation(s), first: {}", violations.len(), violations[0]));
    }
    if elapsed >= Duration::from_secs(60) {
        return Err(format!("took {elapsed:.2?}, limit 60s"));
    }
    Ok(format!("1000 trials, 0 violations, {elapsed:.2?}"))
}

fn incremental_and_cache() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut max_excess = 0i64;
    for trial in 0..100 {
        let n = rng.random_range(1..=200);
        let m = *MEMORY_LENGTHS.choose(&mut rng).unwrap();
        let mut tree = concat_tree(m);
        for i in 0..n {
            let before = tree.agg_call_count();
            tree.insert_leaf(format!("leaf {i}"), Meta::new()).unwrap();
            let cost = (tree.agg_call_count() - before) as i64;
            let limit = tree.depth() as i64 + 1;
            if cost > limit {
                return Err(format!("trial {trial} insert {i}: {cost} calls > depth+1 = {limit}"));
            }
            max_excess = max_excess.max(cost - tree.depth() as i64);
        }
        let mut loaded =
            HatTree::from_json(&tree.to_json(), Arc::new(ConcatAggregator::new(SEP))).map_err(|e| e.to_string())?;
        let internal: Vec<_> = loaded.nodes().filter(|n| !n.is_leaf()).map(|n| n.id).collect();
        for id in internal {
            loaded.update_text(id).map_err(|e| e.to_string())?;
        }
        if loaded.agg_call_count() != 0 {
            return Err(format!("trial {trial}: reload + refresh made {} calls", loaded.agg_call_count()));
        }
        if loaded != tree {
            return Err(format!("trial {trial}: reloaded tree differs"));
        }
    }
    Ok(format!("100 trees, cost <= depth+1 (max cost - depth = {max_excess}), reload refresh 0 calls"))
}

struct SetOracle(HashSet<String>);

impl SufficiencyOracle for SetOracle {
    fn sufficient(&self, node_text: &str, _query: &str) -> Result<bool, TraversalError> {
        Ok(self.0.contains(node_text))
    }
}

fn random_marks(rng: &mut ChaCha8Rng, tree: &HatTree) -> HashSet<String> {
    let density = *[0.0, 0.02, 0.1, 0.3].choose(rng).unwrap();
    tree.nodes().filter(|_| rng.random_bool(density)).map(|n| n.text.clone()).collect()
}

fn traversal_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let unlimited = TraversalConfig::with_budget(usize::MAX).unwrap();
    let mut mismatches = Vec::new();
    let mut found = 0;
    for trial in 0..1000 {
        let (tree, _) = random_tree(&mut rng, 120);
        let set = random_marks(&mut rng, &tree);
        let pred = |t: &str| set.contains(t);
        let oracle_impl = SetOracle(set.clone());

        let bfs = bfs_search(&tree, &oracle_impl, "q", &unlimited).unwrap();
        let want_bfs = oracle::brute_bfs(&tree, &pred);
        let dfs = dfs_search(&tree, &oracle_impl, "q", &unlimited).unwrap();
        let want_dfs = oracle::brute_preorder(&tree)
            .into_iter()
            .find(|c| pred(&tree.node_at(c.layer, c.index).unwrap().text));

        let got_bfs = bfs.context().map(|_| bfs.cursor);
        let got_dfs = dfs.context().map(|_| dfs.cursor);
        if got_bfs != want_bfs || got_dfs != want_dfs {
            mismatches.push(format!(
                "trial {trial}: bfs {got_bfs:?} vs {want_bfs:?}, dfs {got_dfs:?} vs {want_dfs:?}"
            ));
        }
        found += usize::from(want_bfs.is_some());
    }
    if let Some(first) = mismatches.first() {
        return Err(format!("{} mismatch(es), first: {first}", mismatches.len()));
    }
    Ok(format!("1000 trials ({found} with a sufficient node), 0 mismatches"))
}

fn budget_safety() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut walks = 0;
    for trial in 0..1000 {
        let (tree, _) = random_tree(&mut rng, 120);
        let set = random_marks(&mut rng, &tree);
        let budget = rng.random_range(1..=40);
        let config = TraversalConfig::with_budget(budget).unwrap();
        let script: Vec<TraversalAction> = (0..rng.random_range(0..80))
            .map(|_| *TraversalAction::ALL.choose(&mut rng).unwrap())
            .collect();
        let oracle_impl = SetOracle(set.clone());
        let results = [
            bfs_search(&tree, &oracle_impl, "q", &config).unwrap(),
            dfs_search(&tree, &oracle_impl, "q", &config).unwrap(),
            traverse(&tree, &OracleAgent::new(SetOracle(set.clone())), "q", &config).unwrap(),
            traverse(&tree, &ScriptedAgent::new(script), "q", &config).unwrap(),
        ];
        for (kind, result) in ["bfs", "dfs", "oracle agent", "scripted agent"].iter().zip(&results) {
            walks += 1;
            if result.steps > budget || result.path.len() > budget {
                return Err(format!("trial {trial} {kind}: {} steps > budget {budget}", result.steps));
            }
            if result.outcome == Outcome::BudgetExhausted && result.steps != budget {
                return Err(format!("trial {trial} {kind}: exhausted after {} of {budget}", result.steps));
            }
        }
    }
    Ok(format!("{walks} walks, none over budget"))
}

fn metrics_golden() -> Verdict {
    let bleu = bleu_n(&[("the cat sat", "the cat sat down")], 1);
    if (bleu - 0.7165).abs() > 1e-4 {
        return Err(format!("BLEU-1 {bleu} not within 1e-4 of 0.7165"));
    }
    let d = distinct_n(&["a a b"], 1);
    if d != 2.0 / 3.0 {
        return Err(format!("distinct-1(a a b) = {d}"));
    }
    let f = f1("a b c", "b c d");
    if f != 2.0 / 3.0 {
        return Err(format!("F1 = {f}"));
    }
    let vocab = ["a", "b", "c", "d", "the", "cat"];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sentence = |rng: &mut ChaCha8Rng| {
        let len = rng.random_range(0..8);
        (0..len).map(|_| *vocab.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
    };
    let mut worst = 0f64;
    for _ in 0..100 {
        let k = rng.random_range(1..5);
        let pairs: Vec<(String, String)> = (0..k).map(|_| (sentence(&mut rng), sentence(&mut rng))).collect();
        let cands: Vec<String> = pairs.iter().map(|p| p.0.clone()).collect();
        for n in 1..=2 {
            worst = worst.max((bleu_n(&pairs, n) - oracle::brute_bleu(&pairs, n)).abs());
            worst = worst.max((distinct_n(&cands, n) - oracle::brute_distinct(&cands, n)).abs());
        }
        for (c, r) in &pairs {
            worst = worst.max((f1(c, r) - oracle::brute_f1(c, r)).abs());
        }
    }
    if worst > 1e-9 {
        return Err(format!("brute-force disagreement {worst:e} > 1e-9"));
    }
    Ok(format!("BLEU-1 = {bleu:.7}, distinct-1 = 2/3, F1 = 2/3, 100 cases max error {worst:e}"))
}

fn run_bench(out: &std::path::Path, aggregator: &str) -> Result<(String, Duration), String> {
    let started = Instant::now();
    let output = Command::new(env!("CARGO_BIN_EXE_hat"))
        .args(["bench", "--mock", "--planted", "20", "--aggregator", aggregator, "--out"])
        .arg(out)
        .env_remove("HAT_LLM_API_KEY")
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    if !output.status.success() {
        return Err(format!("bench exited {:?}: {}", output.status, String::from_utf8_lossy(&output.stderr)));
    }
    let text = std::fs::read_to_string(out).map_err(|e| e.to_string())?;
    Ok((text, elapsed))
}

fn planted_fact(dir: &std::path::Path) -> Verdict {
    let facts: Vec<_> = planted_fact_corpus(0, 20).into_iter().map(|(e, f)| (e.episode_id, f)).collect();
    let mut details = Vec::new();
    for aggregator in ["llm_persona", "concat"] {
        let (text, elapsed) = run_bench(&dir.join(format!("planted-{aggregator}.json")), aggregator)?;
        if elapsed >= Duration::from_secs(120) {
            return Err(format!("{aggregator}: bench took {elapsed:.2?}, limit 2 minutes"));
        }
        let report = BenchReport::from_json(&text).map_err(|e| e.to_string())?;
        if report.episodes != 20 {
            return Err(format!("{aggregator}: {} episodes in report", report.episodes));
        }
        let contains_fact = |strategy| {
            hit_rate(&report, strategy, |record, output| {
                let (_, fact) = facts.iter().find(|(id, _)| *id == record.episode_id).unwrap();
                output.context.contains(&fact.phrase())
            })
        };
        let bfs = contains_fact(ContextStrategy::HatBfs);
        let agent = contains_fact(ContextStrategy::HatAgent);
        let part = contains_fact(ContextStrategy::PartContext);
        if bfs != 1.0 || agent != 1.0 || part != 0.0 {
            return Err(format!("{aggregator}: hat_bfs {bfs:.2}, hat_agent {agent:.2}, part_context {part:.2}"));
        }
        details.push(format!("{aggregator}: hat_bfs 100%, hat_agent 100%, part_context 0% in {elapsed:.2?}"));
    }
    Ok(details.join("; "))
}

fn determinism(dir: &std::path::Path) -> Verdict {
    let (a, _) = run_bench(&dir.join("run-a.json"), "llm_persona")?;
    let (b, _) = run_bench(&dir.join("run-b.json"), "llm_persona")?;
    if a != b {
        return Err("two mock runs produced different reports".into());
    }
    let parsed = BenchReport::from_json(&a).map_err(|e| e.to_string())?;
    if parsed.to_json() != a {
        return Err("report does not round-trip through the parser".into());
    }
    Ok(format!("byte-identical reports ({} bytes), parser round-trip exact", a.len()))
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<Criterion> = vec![
        ("tree invariants", Box::new(tree_invariants)),
        ("incremental cost and cache", Box::new(incremental_and_cache)),
        ("traversal oracle equivalence", Box::new(traversal_equivalence)),
        ("budget safety", Box::new(budget_safety)),
        ("metrics golden values", Box::new(metrics_golden)),
        ("planted fact (mock)", Box::new(|| planted_fact(dir.path()))),
        ("determinism", Box::new(|| determinism(dir.path()))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
