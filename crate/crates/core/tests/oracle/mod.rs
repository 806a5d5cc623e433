//! Slow, obviously-correct reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::HashSet;

use hat_memory::hat::{HatTree, NodeId};
use hat_memory::traversal::Cursor;

/// Smallest d with M^d >= n, except that a single leaf still gets a root.
pub fn reference_depth(n: usize, m: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let mut depth = 0;
    let mut capacity = 1usize;
    while capacity < n {
        capacity *= m;
        depth += 1;
    }
    depth.max(1)
}

/// Layers (root first) of a tree built in one pass from `leaves`, with each
/// parent the `sep`-join of up to `m` consecutive children.
pub fn reference_layers(leaves: &[String], m: usize, sep: &str) -> Vec<Vec<String>> {
    if leaves.is_empty() {
        return Vec::new();
    }
    let mut layers = vec![leaves.to_vec()];
    for _ in 0..reference_depth(leaves.len(), m) {
        let below = layers.last().unwrap();
        let above: Vec<String> = below.chunks(m).map(|group| group.join(sep)).collect();
        layers.push(above);
    }
    layers.reverse();
    layers
}

/// Compares `tree` with the one-pass reference and checks the parent
/// invariant through the id links. Returns the first discrepancy.
pub fn check_tree(tree: &HatTree, leaves: &[String], sep: &str) -> Result<(), String> {
    let m = tree.memory_length();
    let expected = reference_layers(leaves, m, sep);
    if tree.leaf_count() != leaves.len() {
        return Err(format!("leaf count {} != {}", tree.leaf_count(), leaves.len()));
    }
    let want_depth = reference_depth(leaves.len(), m);
    if tree.depth() != want_depth {
        return Err(format!("depth {} != {want_depth}", tree.depth()));
    }
    if tree.layer_count() != expected.len() {
        return Err(format!("{} layers != {}", tree.layer_count(), expected.len()));
    }
    for (k, want) in expected.iter().enumerate() {
        let got: Vec<&str> = tree.layer(k).map(|n| n.text.as_str()).collect();
        if got != *want {
            return Err(format!("layer {k} texts differ: {got:?} vs {want:?}"));
        }
        for (i, node) in tree.layer(k).enumerate() {
            if node.layer != k || node.index != i {
                return Err(format!("node {} claims ({}, {}) at ({k}, {i})", node.id, node.layer, node.index));
            }
            match (k, node.parent) {
                (0, None) => {}
                (0, Some(p)) => return Err(format!("root has parent {p}")),
                (_, None) => return Err(format!("({k}, {i}) has no parent")),
                (_, Some(p)) => {
                    let parent = tree.node(p).ok_or(format!("dangling parent {p}"))?;
                    if (parent.layer, parent.index) != (k - 1, i / m) {
                        return Err(format!(
                            "parent of ({k}, {i}) is ({}, {}), want ({}, {})",
                            parent.layer,
                            parent.index,
                            k - 1,
                            i / m
                        ));
                    }
                    if !parent.children.contains(&node.id) {
                        return Err(format!("parent of ({k}, {i}) does not list it"));
                    }
                }
            }
        }
    }
    Ok(())
}

/// First sufficient node in (layer, index) order, by full enumeration.
pub fn brute_bfs(tree: &HatTree, sufficient: &dyn Fn(&str) -> bool) -> Option<Cursor> {
    let mut all = Vec::new();
    for node in tree.nodes() {
        if sufficient(&node.text) {
            all.push((node.layer, node.index));
        }
    }
    all.into_iter().min().map(|(l, i)| Cursor::new(l, i))
}

fn preorder(tree: &HatTree, id: NodeId, out: &mut Vec<Cursor>) {
    let node = tree.node(id).expect("node exists");
    out.push(Cursor::new(node.layer, node.index));
    for child in &node.children {
        preorder(tree, *child, out);
    }
}

/// All nodes in recursive pre-order via the child links.
pub fn brute_preorder(tree: &HatTree) -> Vec<Cursor> {
    let mut out = Vec::new();
    if let Some(root) = tree.root() {
        preorder(tree, root.id, &mut out);
    }
    out
}

pub fn brute_bfs_order(tree: &HatTree) -> Vec<Cursor> {
    let mut all: Vec<(usize, usize)> = tree.nodes().map(|n| (n.layer, n.index)).collect();
    all.sort();
    all.into_iter().map(|(l, i)| Cursor::new(l, i)).collect()
}

/// What a search over `order` with `budget` checks must return: the cursor
/// found and how many nodes were examined, or `None` with the count.
pub fn expected_search(
    tree: &HatTree,
    order: &[Cursor],
    sufficient: &dyn Fn(&str) -> bool,
    budget: usize,
) -> (Option<Cursor>, usize) {
    for (i, cursor) in order.iter().enumerate() {
        if i == budget {
            return (None, budget);
        }
        let text = &tree.node_at(cursor.layer, cursor.index).unwrap().text;
        if sufficient(text) {
            return (Some(*cursor), i + 1);
        }
    }
    (None, order.len())
}

// === metrics ===

fn grams(tokens: &[&str], n: usize) -> Vec<Vec<String>> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n)
        .map(|i| tokens[i..i + n].iter().map(|t| t.to_string()).collect())
        .collect()
}

fn count(items: &[Vec<String>], item: &[String]) -> usize {
    items.iter().filter(|x| x.as_slice() == item).count()
}

/// Corpus BLEU-n over pre-tokenized (whitespace separated, lowercase) text.
pub fn brute_bleu(pairs: &[(String, String)], n: usize) -> f64 {
    let mut matched = 0usize;
    let mut total = 0usize;
    let mut c_len = 0usize;
    let mut r_len = 0usize;
    for (c, r) in pairs {
        let c: Vec<&str> = c.split_whitespace().collect();
        let r: Vec<&str> = r.split_whitespace().collect();
        c_len += c.len();
        r_len += r.len();
        let cg = grams(&c, n);
        let rg = grams(&r, n);
        let mut seen: Vec<Vec<String>> = Vec::new();
        for g in &cg {
            if seen.contains(g) {
                continue;
            }
            seen.push(g.clone());
            matched += count(&cg, g).min(count(&rg, g));
        }
        total += cg.len();
    }
    if total == 0 || c_len == 0 {
        return 0.0;
    }
    let precision = matched as f64 / total as f64;
    let bp = if c_len >= r_len { 1.0 } else { (1.0 - r_len as f64 / c_len as f64).exp() };
    precision * bp
}

pub fn brute_distinct(candidates: &[String], n: usize) -> f64 {
    let mut all: Vec<Vec<String>> = Vec::new();
    for c in candidates {
        let t: Vec<&str> = c.split_whitespace().collect();
        all.extend(grams(&t, n));
    }
    if all.is_empty() {
        return 0.0;
    }
    let unique: HashSet<&Vec<String>> = all.iter().collect();
    unique.len() as f64 / all.len() as f64
}

pub fn brute_f1(c: &str, r: &str) -> f64 {
    let mut c: Vec<&str> = c.split_whitespace().collect();
    let mut r: Vec<&str> = r.split_whitespace().collect();
    match (c.is_empty(), r.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let (c_len, r_len) = (c.len() as f64, r.len() as f64);
    c.sort_unstable();
    r.sort_unstable();
    let (mut i, mut j, mut overlap) = (0, 0, 0usize);
    while i < c.len() && j < r.len() {
        match c[i].cmp(r[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                overlap += 1;
                i += 1;
                j += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / c_len;
    let q = overlap as f64 / r_len;
    2.0 * p * q / (p + q)
}
