//! The hierarchical aggregate tree.
//!
//! Nodes live in layers, layer 0 holding the single root and the last layer
//! holding the leaves (raw dialogue turns, oldest on the left). The node at
//! `(layer k, index i)` has its parent at `(k - 1, i / M)` where `M` is the
//! memory length, so every internal node has at most `M` children and the
//! tree is always left-complete.
//!
//! Inserting a leaf re-aggregates every ancestor of the new leaf. Each
//! internal node remembers the text it produced for every child state it
//! has been aggregated under (`previous_complete_state`), keyed by a digest
//! of its ordered `(child id, child text)` pairs, so recomputing an
//! unchanged node never calls the aggregator again.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aggregation::{AggregateError, Aggregator};

pub const DOCUMENT_FORMAT: &str = "hat-tree";
pub const DOCUMENT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HatError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error(transparent)]
    Aggregation(#[from] AggregateError),
    #[error("malformed tree document: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Free-form tags carried by leaves (speaker, session, turn index, ...).
pub type Meta = BTreeMap<String, String>;

/// SHA-256 over the ordered `(child id, SHA-256 of child text)` sequence.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChildStateDigest([u8; 32]);

impl ChildStateDigest {
    pub fn compute<'a, I>(children: I) -> Self
    where
        I: IntoIterator<Item = (NodeId, &'a str)>,
    {
        let mut hasher = Sha256::new();
        for (id, text) in children {
            let text_hash: [u8; 32] = Sha256::digest(text.as_bytes()).into();
            hasher.update(id.0.to_le_bytes());
            hasher.update(text_hash);
        }
        Self(hasher.finalize().into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let mut bytes = [0u8; 32];
        hex::decode_to_slice(s, &mut bytes).ok()?;
        Some(Self(bytes))
    }
}

impl fmt::Debug for ChildStateDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChildStateDigest({})", &self.to_hex()[..12])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub layer: usize,
    pub index: usize,
    pub text: String,
    /// Oldest to newest.
    pub children: Vec<NodeId>,
    pub parent: Option<NodeId>,
    pub previous_complete_state: BTreeMap<ChildStateDigest, String>,
    pub meta: Meta,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Smallest `d` with `m^d >= n`, with the one-leaf tree at depth 1.
pub fn expected_depth(leaf_count: usize, memory_length: usize) -> usize {
    match leaf_count {
        0 => 0,
        1 => 1,
        n => {
            let mut depth = 0;
            let mut capacity = 1usize;
            while capacity < n {
                capacity = capacity.saturating_mul(memory_length);
                depth += 1;
            }
            depth
        }
    }
}

/// Number of nodes in `layer` of a tree with `leaf_count` leaves and the
/// given depth: `ceil(n / M^(depth - layer))`.
fn expected_layer_size(leaf_count: usize, memory_length: usize, depth: usize, layer: usize) -> usize {
    let span = (0..depth - layer).fold(1usize, |acc, _| acc.saturating_mul(memory_length));
    leaf_count.div_ceil(span)
}

pub struct HatTree {
    memory_length: usize,
    layers: Vec<Vec<NodeId>>,
    nodes: HashMap<NodeId, Node>,
    leaf_count: usize,
    next_id: u64,
    aggregator: Arc<dyn Aggregator>,
    agg_calls: u64,
}

impl fmt::Debug for HatTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HatTree")
            .field("memory_length", &self.memory_length)
            .field("aggregator", &self.aggregator.id())
            .field("leaf_count", &self.leaf_count)
            .field("depth", &self.depth())
            .field("agg_calls", &self.agg_calls)
            .finish()
    }
}

/// Structural equality: parameters, layout, texts, meta and caches. The
/// aggregator call counter is instrumentation and is ignored.
impl PartialEq for HatTree {
    fn eq(&self, other: &Self) -> bool {
        self.memory_length == other.memory_length
            && self.aggregator.id() == other.aggregator.id()
            && self.leaf_count == other.leaf_count
            && self.next_id == other.next_id
            && self.layers == other.layers
            && self.nodes == other.nodes
    }
}

/// One ancestor recomputed by a pending insertion.
struct PlannedAncestor {
    id: NodeId,
    is_new: bool,
    children: Vec<NodeId>,
    text: String,
    /// Set on a cache miss.
    new_cache_entry: Option<ChildStateDigest>,
}

impl HatTree {
    pub fn new(memory_length: usize, aggregator: Arc<dyn Aggregator>) -> Result<Self, HatError> {
        if memory_length < 2 {
            return Err(HatError::InvalidParameter(format!(
                "memory length must be at least 2, got {memory_length}"
            )));
        }
        Ok(Self {
            memory_length,
            layers: Vec::new(),
            nodes: HashMap::new(),
            leaf_count: 0,
            next_id: 0,
            aggregator,
            agg_calls: 0,
        })
    }

    pub fn memory_length(&self) -> usize {
        self.memory_length
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn is_empty(&self) -> bool {
        self.leaf_count == 0
    }

    /// Index of the leaf layer; 0 for an empty tree.
    pub fn depth(&self) -> usize {
        self.layers.len().saturating_sub(1)
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn aggregator(&self) -> &Arc<dyn Aggregator> {
        &self.aggregator
    }

    /// Aggregator invocations since construction or load.
    pub fn agg_call_count(&self) -> u64 {
        self.agg_calls
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn node_at(&self, layer: usize, index: usize) -> Result<&Node, HatError> {
        self.layers
            .get(layer)
            .and_then(|ids| ids.get(index))
            .map(|id| &self.nodes[id])
            .ok_or_else(|| HatError::NotFound(format!("no node at layer {layer}, index {index}")))
    }

    pub fn layer_size(&self, layer: usize) -> Result<usize, HatError> {
        self.layers
            .get(layer)
            .map(Vec::len)
            .ok_or_else(|| HatError::NotFound(format!("no layer {layer}")))
    }

    fn get(&self, id: NodeId) -> Result<&Node, HatError> {
        self.nodes.get(&id).ok_or_else(|| HatError::NotFound(format!("no node {id}")))
    }

    pub fn parent_of(&self, id: NodeId) -> Result<Option<&Node>, HatError> {
        Ok(self.get(id)?.parent.map(|p| &self.nodes[&p]))
    }

    pub fn children_of(&self, id: NodeId) -> Result<Vec<&Node>, HatError> {
        Ok(self.get(id)?.children.iter().map(|c| &self.nodes[c]).collect())
    }

    pub fn root(&self) -> Option<&Node> {
        self.layers.first().map(|l| &self.nodes[&l[0]])
    }

    pub fn root_text(&self) -> Result<&str, HatError> {
        self.root()
            .map(|n| n.text.as_str())
            .ok_or_else(|| HatError::NotFound("tree is empty".into()))
    }

    /// Nodes of one layer, left to right.
    pub fn layer(&self, layer: usize) -> impl Iterator<Item = &Node> + '_ {
        self.layers
            .get(layer)
            .into_iter()
            .flatten()
            .map(|id| &self.nodes[id])
    }

    /// Leaves in insertion order.
    pub fn leaves(&self) -> impl Iterator<Item = &Node> + '_ {
        let leaf_layer = if self.layers.is_empty() { usize::MAX } else { self.depth() };
        self.layer(leaf_layer)
    }

    /// All nodes, layer by layer, left to right.
    pub fn nodes(&self) -> impl Iterator<Item = &Node> + '_ {
        self.layers.iter().flatten().map(|id| &self.nodes[id])
    }

    fn capacity(&self) -> Option<usize> {
        self.memory_length.checked_pow(self.depth() as u32)
    }

    fn children_texts<'a>(&'a self, children: &'a [NodeId], pending: (NodeId, &'a str)) -> Vec<(NodeId, &'a str)> {
        children
            .iter()
            .map(|c| {
                if *c == pending.0 {
                    (*c, pending.1)
                } else {
                    (*c, self.nodes[c].text.as_str())
                }
            })
            .collect()
    }

    /// Appends a leaf on the right of the leaf layer and re-aggregates its
    /// ancestors up to the root. When the leaf layer is full a new root
    /// layer is added first. Fails without modifying the tree if `text` is
    /// empty or the aggregator fails.
    pub fn insert_leaf(&mut self, text: impl Into<String>, meta: Meta) -> Result<NodeId, HatError> {
        let text = text.into();
        if text.is_empty() {
            return Err(HatError::InvalidParameter("leaf text must not be empty".into()));
        }
        let m = self.memory_length;
        let n = self.leaf_count;
        let grows = n == 0 || self.capacity() == Some(n);
        let new_depth = if grows { self.depth() + 1 } else { self.depth() };
        let old_root = self.layers.first().map(|l| l[0]);

        let mut next_id = self.next_id;
        let mut alloc = || {
            let id = NodeId(next_id);
            next_id += 1;
            id
        };
        // node at (layer, index) in the post-insert layout, if it already exists
        let existing = |layer: usize, index: usize| -> Option<NodeId> {
            let old_layer = if grows { layer.checked_sub(1)? } else { layer };
            self.layers.get(old_layer)?.get(index).copied()
        };

        let leaf_id = alloc();
        let mut plan: Vec<PlannedAncestor> = Vec::with_capacity(new_depth);
        let mut calls = 0u64;
        let (mut child_id, mut child_is_new, mut index) = (leaf_id, true, n);
        let mut child_text = text.clone();

        for layer in (0..new_depth).rev() {
            let parent_index = index / m;
            let (id, mut children, is_new) = match existing(layer, parent_index) {
                Some(id) => (id, self.nodes[&id].children.clone(), false),
                None => {
                    let children = match (layer, old_root) {
                        (0, Some(old_root)) => vec![old_root],
                        _ => Vec::new(),
                    };
                    (alloc(), children, true)
                }
            };
            if child_is_new {
                children.push(child_id);
            }

            let pairs = self.children_texts(&children, (child_id, &child_text));
            let digest = ChildStateDigest::compute(pairs.iter().copied());
            let cached = if is_new {
                None
            } else {
                self.nodes[&id].previous_complete_state.get(&digest).cloned()
            };
            let (new_text, new_cache_entry) = match cached {
                Some(text) => (text, None),
                None => {
                    let texts: Vec<&str> = pairs.iter().map(|(_, t)| *t).collect();
                    let text = self.aggregator.aggregate(&texts)?;
                    calls += 1;
                    (text, Some(digest))
                }
            };

            plan.push(PlannedAncestor {
                id,
                is_new,
                children,
                text: new_text.clone(),
                new_cache_entry,
            });
            child_id = id;
            child_is_new = is_new;
            child_text = new_text;
            index = parent_index;
        }

        // commit
        if grows {
            self.layers.insert(0, Vec::new());
            if n == 0 {
                self.layers.push(Vec::new());
            }
            for node in self.nodes.values_mut() {
                node.layer += 1;
            }
        }
        let parent_of_leaf = plan.first().map(|p| p.id);
        self.nodes.insert(
            leaf_id,
            Node {
                id: leaf_id,
                layer: new_depth,
                index: n,
                text,
                children: Vec::new(),
                parent: parent_of_leaf,
                previous_complete_state: BTreeMap::new(),
                meta,
            },
        );
        self.layers[new_depth].push(leaf_id);

        let parents: Vec<Option<NodeId>> = plan
            .iter()
            .skip(1)
            .map(|p| Some(p.id))
            .chain(std::iter::once(None))
            .collect();
        for (step, (planned, parent)) in plan.into_iter().zip(parents).enumerate() {
            let layer = new_depth - 1 - step;
            if planned.is_new {
                let index = self.layers[layer].len();
                self.nodes.insert(
                    planned.id,
                    Node {
                        id: planned.id,
                        layer,
                        index,
                        text: String::new(),
                        children: Vec::new(),
                        parent,
                        previous_complete_state: BTreeMap::new(),
                        meta: Meta::new(),
                    },
                );
                self.layers[layer].push(planned.id);
            }
            for child in &planned.children {
                if let Some(c) = self.nodes.get_mut(child) {
                    c.parent = Some(planned.id);
                }
            }
            let node = self.nodes.get_mut(&planned.id).expect("planned node exists");
            debug_assert_eq!(node.parent, parent);
            node.children = planned.children;
            if let Some(digest) = planned.new_cache_entry {
                node.previous_complete_state.insert(digest, planned.text.clone());
            }
            node.text = planned.text;
        }

        self.leaf_count += 1;
        self.next_id = next_id;
        self.agg_calls += calls;
        Ok(leaf_id)
    }

    /// Recomputes the text of an internal node from its current children,
    /// reusing a cached text when the child state has been seen before,
    /// then does the same for each ancestor up to the root.
    ///
    /// If the aggregator fails part way, nodes below the failing one keep
    /// their recomputed texts.
    pub fn update_text(&mut self, id: NodeId) -> Result<(), HatError> {
        if self.get(id)?.is_leaf() {
            return Err(HatError::ContractViolation(format!(
                "update_text called on leaf {id}"
            )));
        }
        let mut current = Some(id);
        while let Some(id) = current {
            let node = &self.nodes[&id];
            let pairs: Vec<(NodeId, &str)> = node
                .children
                .iter()
                .map(|c| (*c, self.nodes[c].text.as_str()))
                .collect();
            let digest = ChildStateDigest::compute(pairs.iter().copied());
            let text = match node.previous_complete_state.get(&digest) {
                Some(text) => text.clone(),
                None => {
                    let texts: Vec<&str> = pairs.iter().map(|(_, t)| *t).collect();
                    let text = self.aggregator.aggregate(&texts)?;
                    self.agg_calls += 1;
                    let node = self.nodes.get_mut(&id).expect("node exists");
                    node.previous_complete_state.insert(digest, text.clone());
                    text
                }
            };
            let node = self.nodes.get_mut(&id).expect("node exists");
            node.text = text;
            current = node.parent;
        }
        Ok(())
    }

    // === persistence ===

    pub fn to_document(&self) -> TreeDocument {
        TreeDocument {
            format: DOCUMENT_FORMAT.to_string(),
            version: DOCUMENT_VERSION,
            memory_length: self.memory_length,
            aggregator: self.aggregator.id(),
            leaf_count: self.leaf_count,
            next_id: self.next_id,
            layers: self
                .layers
                .iter()
                .map(|layer| {
                    layer
                        .iter()
                        .map(|id| {
                            let node = &self.nodes[id];
                            NodeRecord {
                                id: node.id,
                                index: node.index,
                                text: node.text.clone(),
                                parent: node.parent,
                                children: node.children.clone(),
                                meta: node.meta.clone(),
                                cache: node
                                    .previous_complete_state
                                    .iter()
                                    .map(|(d, t)| (d.to_hex(), t.clone()))
                                    .collect(),
                            }
                        })
                        .collect()
                })
                .collect(),
        }
    }

    /// Pretty JSON with a trailing newline; byte-identical for identical trees.
    pub fn to_json(&self) -> String {
        let mut json = serde_json::to_string_pretty(&self.to_document())
            .expect("tree documents always serialize");
        json.push('\n');
        json
    }

    /// Rebuilds a tree from a validated document. The aggregator must carry
    /// the id the document was written with. The call counter starts at 0.
    pub fn from_document(doc: TreeDocument, aggregator: Arc<dyn Aggregator>) -> Result<Self, HatError> {
        doc.validate()?;
        if doc.aggregator != aggregator.id() {
            return Err(HatError::Parse(format!(
                "document was built with aggregator {:?}, not {:?}",
                doc.aggregator,
                aggregator.id()
            )));
        }
        let mut nodes = HashMap::new();
        let mut layers = Vec::with_capacity(doc.layers.len());
        for (layer, records) in doc.layers.into_iter().enumerate() {
            let mut ids = Vec::with_capacity(records.len());
            for record in records {
                let mut cache = BTreeMap::new();
                for (digest, text) in record.cache {
                    let digest = ChildStateDigest::from_hex(&digest).expect("validated digest");
                    cache.insert(digest, text);
                }
                ids.push(record.id);
                nodes.insert(
                    record.id,
                    Node {
                        id: record.id,
                        layer,
                        index: record.index,
                        text: record.text,
                        children: record.children,
                        parent: record.parent,
                        previous_complete_state: cache,
                        meta: record.meta,
                    },
                );
            }
            layers.push(ids);
        }
        Ok(Self {
            memory_length: doc.memory_length,
            layers,
            nodes,
            leaf_count: doc.leaf_count,
            next_id: doc.next_id,
            aggregator,
            agg_calls: 0,
        })
    }

    pub fn from_json(json: &str, aggregator: Arc<dyn Aggregator>) -> Result<Self, HatError> {
        Self::from_document(TreeDocument::from_json(json)?, aggregator)
    }
}

/// Persisted form of a [`HatTree`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeDocument {
    pub format: String,
    pub version: u32,
    pub memory_length: usize,
    pub aggregator: String,
    pub leaf_count: usize,
    pub next_id: u64,
    pub layers: Vec<Vec<NodeRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: NodeId,
    pub index: usize,
    pub text: String,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: Meta,
    /// Child-state digest (hex) to the text aggregated under that state.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub cache: BTreeMap<String, String>,
}

impl TreeDocument {
    pub fn from_json(json: &str) -> Result<Self, HatError> {
        serde_json::from_str(json).map_err(|e| HatError::Parse(e.to_string()))
    }

    pub fn depth(&self) -> usize {
        self.layers.len().saturating_sub(1)
    }

    /// Checks every structural invariant of the tree the document describes.
    pub fn validate(&self) -> Result<(), HatError> {
        let fail = |msg: String| Err(HatError::Parse(msg));
        if self.format != DOCUMENT_FORMAT {
            return fail(format!("unexpected format {:?}", self.format));
        }
        if self.version != DOCUMENT_VERSION {
            return fail(format!("unsupported version {}", self.version));
        }
        let m = self.memory_length;
        if m < 2 {
            return fail(format!("memory_length must be at least 2, got {m}"));
        }
        let n = self.leaf_count;
        let depth = expected_depth(n, m);
        let expected_layers = if n == 0 { 0 } else { depth + 1 };
        if self.layers.len() != expected_layers {
            return fail(format!(
                "{n} leaves with memory length {m} need {expected_layers} layers, found {}",
                self.layers.len()
            ));
        }

        let mut seen = HashSet::new();
        for (k, layer) in self.layers.iter().enumerate() {
            let size = expected_layer_size(n, m, depth, k);
            if layer.len() != size {
                return fail(format!("layer {k} has {} nodes, expected {size}", layer.len()));
            }
            for (i, record) in layer.iter().enumerate() {
                if record.index != i {
                    return fail(format!("node {} at layer {k} position {i} claims index {}", record.id, record.index));
                }
                if record.id.0 >= self.next_id {
                    return fail(format!("node id {} is not below next_id {}", record.id, self.next_id));
                }
                if !seen.insert(record.id) {
                    return fail(format!("duplicate node id {}", record.id));
                }
                let expected_parent = if k == 0 { None } else { Some(self.layers[k - 1][i / m].id) };
                if record.parent != expected_parent {
                    return fail(format!(
                        "node ({k},{i}) has parent {:?}, the parent invariant requires {:?}",
                        record.parent, expected_parent
                    ));
                }
                let expected_children: Vec<NodeId> = match self.layers.get(k + 1) {
                    Some(below) => below
                        .iter()
                        .skip(i * m)
                        .take(m)
                        .map(|c| c.id)
                        .collect(),
                    None => Vec::new(),
                };
                if record.children != expected_children {
                    return fail(format!("node ({k},{i}) children do not match layer {}", k + 1));
                }
                if k == depth && record.text.is_empty() {
                    return fail(format!("leaf ({k},{i}) has empty text"));
                }
                if k == depth && !record.cache.is_empty() {
                    return fail(format!("leaf ({k},{i}) carries an aggregation cache"));
                }
                if let Some(bad) = record.cache.keys().find(|d| ChildStateDigest::from_hex(d).is_none()) {
                    return fail(format!("node ({k},{i}) has malformed cache key {bad:?}"));
                }
            }
        }
        Ok(())
    }
}
