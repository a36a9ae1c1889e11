//! Oblique decision trees over four-dimensional observations with
//! three-action leaves.
//!
//! Decision nodes route a sample left iff `weights · x <= threshold`. Leaves
//! hold a Laplace-smoothed action distribution; prediction is its argmax
//! with ties going to the lowest action index.
//!
//! Splits are fitted by randomised restarts: each restart starts from the
//! normalised difference of two class centroids (in node-standardised
//! coordinates) plus Gaussian jitter, then refines the direction by
//! coordinate local search on the weighted Gini impurity of the best
//! threshold along that direction.

use rand::seq::IndexedRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::oracle::argmax_lowest;
use crate::seeding;
use crate::sim::{Action, Observation};

pub const N_FEATURES: usize = 4;
pub const N_CLASSES: usize = 3;
pub const TREE_FORMAT_VERSION: u64 = 1;
pub const MAX_DEPTH: usize = 20;

/// Parameter cost of one decision node (four weights and a threshold).
pub const SPLIT_PARAMS: usize = N_FEATURES + 1;
/// Parameter cost of one pruned-form leaf (its action label).
pub const LEAF_PARAMS: usize = 1;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("depth must be in 1..={MAX_DEPTH}, got {0}")]
    BadDepth(usize),
    #[error("sample {index} has non-finite features")]
    NonFiniteSample { index: usize },
    #[error("sample {index} has label {label}, expected 0..3")]
    BadLabel { index: usize, label: usize },
    #[error("schema error at {path}: {detail}")]
    Schema { path: String, detail: String },
    #[error("unsupported tree format version {0}")]
    UnsupportedVersion(u64),
    #[error("tree json: {0}")]
    Json(#[from] serde_json::Error),
}

fn schema(path: impl Into<String>, detail: impl Into<String>) -> TreeError {
    TreeError::Schema { path: path.into(), detail: detail.into() }
}

/// A labelled observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: [f64; N_FEATURES],
    pub label: usize,
}

impl Sample {
    pub fn new(obs: &Observation, action: Action) -> Self {
        Self { features: obs.to_array(), label: action.index() }
    }
}

/// Hyperparameters of split fitting and tree growth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitParams {
    pub restarts: usize,
    pub init_jitter: f64,
    pub min_samples_split: usize,
    pub laplace_alpha: f64,
    /// Initial coordinate step of the local search (unit-norm directions).
    pub initial_step: f64,
    /// Local search stops once the step falls below this.
    pub min_step: f64,
    /// Cap on impurity evaluations per restart.
    pub max_evaluations: usize,
}

impl Default for SplitParams {
    fn default() -> Self {
        Self {
            restarts: 10,
            init_jitter: 0.1,
            min_samples_split: 8,
            laplace_alpha: 1.0,
            initial_step: 0.5,
            min_step: 0.02,
            max_evaluations: 60,
        }
    }
}

/// A fitted hyperplane in raw feature coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Split {
    pub weights: [f64; N_FEATURES],
    pub threshold: f64,
    /// Child-weighted Gini impurity of the induced partition.
    pub impurity: f64,
    pub parent_impurity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Split { weights: [f64; N_FEATURES], threshold: f64, left: usize, right: usize },
    Leaf { distribution: [f64; N_CLASSES], samples: usize },
}

impl Node {
    pub fn leaf(distribution: [f64; N_CLASSES], samples: usize) -> Self {
        Node::Leaf { distribution, samples }
    }
}

pub fn leaf_action(distribution: &[f64; N_CLASSES]) -> Action {
    Action::from_index(argmax_lowest(distribution)).expect("three classes")
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TreeMetadata {
    pub dataset_size: usize,
    pub iteration: Option<usize>,
}

/// Binary oblique tree stored as a node arena with the root at index 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ObliqueTree {
    nodes: Vec<Node>,
    depth_limit: usize,
    seed: u64,
    pub metadata: TreeMetadata,
}

fn gini(counts: &[usize; N_CLASSES], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn label_counts(samples: &[Sample], idx: &[usize]) -> [usize; N_CLASSES] {
    let mut c = [0; N_CLASSES];
    for &i in idx {
        c[samples[i].label] += 1;
    }
    c
}

fn smoothed(counts: &[usize; N_CLASSES], alpha: f64) -> [f64; N_CLASSES] {
    let n: usize = counts.iter().sum();
    let denom = n as f64 + alpha * N_CLASSES as f64;
    if denom <= 0.0 {
        return [1.0 / N_CLASSES as f64; N_CLASSES];
    }
    counts.map(|c| (c as f64 + alpha) / denom)
}

fn dot(a: &[f64; N_FEATURES], b: &[f64; N_FEATURES]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalized(mut w: [f64; N_FEATURES]) -> Option<[f64; N_FEATURES]> {
    let norm = dot(&w, &w).sqrt();
    if !(norm.is_finite() && norm > 1e-12) {
        return None;
    }
    w.iter_mut().for_each(|v| *v /= norm);
    Some(w)
}

/// Node-local view of the samples in standardised coordinates.
struct NodeData {
    z: Vec<[f64; N_FEATURES]>,
    labels: Vec<u8>,
    mean: [f64; N_FEATURES],
    scale: [f64; N_FEATURES],
    counts: [usize; N_CLASSES],
}

impl NodeData {
    fn new(samples: &[Sample], idx: &[usize]) -> Self {
        let n = idx.len() as f64;
        let mut mean = [0.0; N_FEATURES];
        for &i in idx {
            for (m, x) in mean.iter_mut().zip(&samples[i].features) {
                *m += x / n;
            }
        }
        let mut var = [0.0; N_FEATURES];
        for &i in idx {
            for k in 0..N_FEATURES {
                var[k] += (samples[i].features[k] - mean[k]).powi(2) / n;
            }
        }
        let scale = var.map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 });
        let z = idx
            .iter()
            .map(|&i| {
                let f = samples[i].features;
                std::array::from_fn(|k| (f[k] - mean[k]) / scale[k])
            })
            .collect();
        let labels = idx.iter().map(|&i| samples[i].label as u8).collect();
        Self { z, labels, mean, scale, counts: label_counts(samples, idx) }
    }

    fn centroid(&self, class: usize) -> [f64; N_FEATURES] {
        let mut c = [0.0; N_FEATURES];
        let mut n = 0usize;
        for (z, &l) in self.z.iter().zip(&self.labels) {
            if l as usize == class {
                n += 1;
                for k in 0..N_FEATURES {
                    c[k] += z[k];
                }
            }
        }
        c.map(|v| v / n.max(1) as f64)
    }

    /// Best threshold along direction `w`: (weighted Gini, threshold).
    /// `None` when all projections coincide.
    fn best_threshold(&self, w: &[f64; N_FEATURES], buf: &mut Vec<(f64, u8)>) -> Option<(f64, f64)> {
        buf.clear();
        buf.extend(self.z.iter().zip(&self.labels).map(|(z, &l)| (dot(w, z), l)));
        buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let n = buf.len();
        let mut left = [0usize; N_CLASSES];
        let mut right = self.counts;
        let mut best: Option<(f64, f64)> = None;
        for i in 0..n - 1 {
            let l = buf[i].1 as usize;
            left[l] += 1;
            right[l] -= 1;
            let (a, b) = (buf[i].0, buf[i + 1].0);
            if a == b {
                continue;
            }
            let nl = i + 1;
            let nr = n - nl;
            let imp = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
            if best.is_none_or(|(bi, _)| imp < bi) {
                best = Some((imp, 0.5 * (a + b)));
            }
        }
        best
    }

    /// Maps a standardised-space hyperplane back to raw coordinates.
    fn to_raw(&self, w: &[f64; N_FEATURES], t: f64) -> ([f64; N_FEATURES], f64) {
        let raw: [f64; N_FEATURES] = std::array::from_fn(|k| w[k] / self.scale[k]);
        (raw, t + dot(&raw, &self.mean))
    }
}

/// Local search from one initial direction. Returns (impurity, direction,
/// threshold) in standardised space.
fn refine(
    data: &NodeData,
    init: [f64; N_FEATURES],
    hyper: &SplitParams,
    buf: &mut Vec<(f64, u8)>,
) -> Option<(f64, [f64; N_FEATURES], f64)> {
    let mut w = normalized(init)?;
    let (mut imp, mut thr) = data.best_threshold(&w, buf)?;
    let mut evaluations = 1;
    let mut step = hyper.initial_step;
    'search: while step >= hyper.min_step && imp > 0.0 {
        let mut improved = false;
        for k in 0..N_FEATURES {
            for sign in [1.0, -1.0] {
                if evaluations >= hyper.max_evaluations {
                    break 'search;
                }
                let mut cand = w;
                cand[k] += sign * step;
                let Some(cand) = normalized(cand) else { continue };
                evaluations += 1;
                if let Some((ci, ct)) = data.best_threshold(&cand, buf) {
                    if ci < imp {
                        (imp, thr, w) = (ci, ct, cand);
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Some((imp, w, thr))
}

/// Fits one oblique split on `samples`. Returns `None` when the samples hold
/// fewer than two labels, cannot be separated by any hyperplane, or no
/// hyperplane strictly reduces the Gini impurity.
pub fn fit_split(samples: &[Sample], seed: u64, hyper: &SplitParams) -> Option<Split> {
    let idx: Vec<usize> = (0..samples.len()).collect();
    fit_split_indices(samples, &idx, seed, hyper)
}

fn fit_split_indices(samples: &[Sample], idx: &[usize], seed: u64, hyper: &SplitParams) -> Option<Split> {
    if idx.len() < 2 {
        return None;
    }
    let data = NodeData::new(samples, idx);
    let classes: Vec<usize> = (0..N_CLASSES).filter(|&c| data.counts[c] > 0).collect();
    if classes.len() < 2 {
        return None;
    }
    let parent = gini(&data.counts, idx.len());
    let centroids: Vec<[f64; N_FEATURES]> = (0..N_CLASSES).map(|c| data.centroid(c)).collect();
    let jitter = Normal::new(0.0, hyper.init_jitter.max(0.0)).ok();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut buf = Vec::with_capacity(idx.len());
    let mut best: Option<(f64, [f64; N_FEATURES], f64)> = None;

    for restart in 0..hyper.restarts.max(1) {
        let mut rng = seeding::rng(seeding::derive(seed, &[restart as u64]));
        let pair: Vec<usize> = classes.choose_multiple(&mut rng, 2).copied().collect();
        let (a, b) = (centroids[pair[0]], centroids[pair[1]]);
        let diff: [f64; N_FEATURES] = std::array::from_fn(|k| a[k] - b[k]);
        let mut init = normalized(diff).unwrap_or_else(|| std::array::from_fn(|_| unit.sample(&mut rng)));
        if let Some(j) = jitter {
            init.iter_mut().for_each(|v| *v += j.sample(&mut rng));
        }
        let Some(found) = refine(&data, init, hyper, &mut buf) else { continue };
        if best.is_none_or(|b| found.0 < b.0) {
            best = Some(found);
        }
    }

    let (imp, w, t) = best?;
    if imp.partial_cmp(&parent) != Some(std::cmp::Ordering::Less) {
        return None;
    }
    let (weights, threshold) = data.to_raw(&w, t);
    Some(Split { weights, threshold, impurity: imp, parent_impurity: parent })
}

struct Builder<'a> {
    samples: &'a [Sample],
    depth_limit: usize,
    seed: u64,
    hyper: &'a SplitParams,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let counts = label_counts(self.samples, idx);
        self.nodes.push(Node::leaf(smoothed(&counts, self.hyper.laplace_alpha), idx.len()));
        self.nodes.len() - 1
    }

    /// `heap_id` numbers nodes 1, 2, 3, ... in breadth-first order of a full
    /// tree; it keys the split seed so results are independent of build order.
    fn grow(&mut self, idx: &[usize], depth: usize, heap_id: u64) -> usize {
        let counts = label_counts(self.samples, idx);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if depth >= self.depth_limit || pure || idx.len() < self.hyper.min_samples_split.max(2) {
            return self.leaf(idx);
        }
        let seed = seeding::derive(self.seed, &[heap_id]);
        let Some(split) = fit_split_indices(self.samples, idx, seed, self.hyper) else {
            return self.leaf(idx);
        };
        // partition with the exact rule used at prediction time
        let (left, right): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| dot(&split.weights, &self.samples[i].features) <= split.threshold);
        if left.is_empty() || right.is_empty() {
            return self.leaf(idx);
        }
        let n = idx.len() as f64;
        let actual = (left.len() as f64 * gini(&label_counts(self.samples, &left), left.len())
            + right.len() as f64 * gini(&label_counts(self.samples, &right), right.len()))
            / n;
        if actual.partial_cmp(&gini(&counts, idx.len())) != Some(std::cmp::Ordering::Less) {
            return self.leaf(idx);
        }
        let at = self.nodes.len();
        self.nodes.push(Node::leaf([0.0; N_CLASSES], 0));
        let l = self.grow(&left, depth + 1, 2 * heap_id);
        let r = self.grow(&right, depth + 1, 2 * heap_id + 1);
        self.nodes[at] = Node::Split { weights: split.weights, threshold: split.threshold, left: l, right: r };
        at
    }
}

impl ObliqueTree {
    /// Greedy top-down training. Deterministic in (samples, depth, seed,
    /// hyper).
    pub fn train(samples: &[Sample], depth: usize, seed: u64, hyper: &SplitParams) -> Result<Self, TreeError> {
        if samples.is_empty() {
            return Err(TreeError::EmptyDataset);
        }
        if !(1..=MAX_DEPTH).contains(&depth) {
            return Err(TreeError::BadDepth(depth));
        }
        for (index, s) in samples.iter().enumerate() {
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(TreeError::NonFiniteSample { index });
            }
            if s.label >= N_CLASSES {
                return Err(TreeError::BadLabel { index, label: s.label });
            }
        }
        let mut b = Builder { samples, depth_limit: depth, seed, hyper, nodes: Vec::new() };
        let all: Vec<usize> = (0..samples.len()).collect();
        b.grow(&all, 0, 1);
        Ok(Self {
            nodes: b.nodes,
            depth_limit: depth,
            seed,
            metadata: TreeMetadata { dataset_size: samples.len(), iteration: None },
        })
    }

    /// Builds a tree from an explicit node arena (root at index 0).
    pub fn from_nodes(nodes: Vec<Node>, depth_limit: usize, seed: u64) -> Result<Self, TreeError> {
        let t = Self { nodes, depth_limit, seed, metadata: TreeMetadata::default() };
        t.validate()?;
        Ok(t)
    }

    /// Single leaf with the given distribution.
    pub fn single_leaf(distribution: [f64; N_CLASSES]) -> Self {
        Self { nodes: vec![Node::leaf(distribution, 0)], depth_limit: 1, seed: 0, metadata: TreeMetadata::default() }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth_limit(&self) -> usize {
        self.depth_limit
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn validate(&self) -> Result<(), TreeError> {
        if self.nodes.is_empty() {
            return Err(schema("nodes", "tree has no nodes"));
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Split { weights, threshold, left, right } => {
                    if weights.iter().chain(std::iter::once(threshold)).any(|v| !v.is_finite()) {
                        return Err(schema(format!("nodes[{i}]"), "non-finite split parameter"));
                    }
                    if weights.iter().all(|w| *w == 0.0) {
                        return Err(schema(format!("nodes[{i}].weights"), "all weights are zero"));
                    }
                    for (name, c) in [("left", *left), ("right", *right)] {
                        if c >= self.nodes.len() || c == 0 {
                            return Err(schema(format!("nodes[{i}].{name}"), format!("invalid child index {c}")));
                        }
                        parents[c] += 1;
                    }
                }
                Node::Leaf { distribution, .. } => {
                    if distribution.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                        return Err(schema(format!("nodes[{i}].distribution"), "entries must be finite and >= 0"));
                    }
                    let total: f64 = distribution.iter().sum();
                    if (total - 1.0).abs() > 1e-9 {
                        return Err(schema(format!("nodes[{i}].distribution"), format!("sums to {total}")));
                    }
                }
            }
        }
        if let Some(i) = parents.iter().skip(1).position(|&p| p != 1) {
            return Err(schema(
                format!("nodes[{}]", i + 1),
                format!("referenced {} times, expected exactly once", parents[i + 1]),
            ));
        }
        // every node referenced once and root unreferenced: check reachability
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if std::mem::replace(&mut seen[i], true) {
                return Err(schema(format!("nodes[{i}]"), "cycle"));
            }
            if let Node::Split { left, right, .. } = self.nodes[i] {
                stack.push(left);
                stack.push(right);
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(schema(format!("nodes[{i}]"), "unreachable from the root"));
        }
        Ok(())
    }

    fn leaf_index(&self, x: &[f64; N_FEATURES]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split { weights, threshold, left, right } => {
                    i = if dot(weights, x) <= *threshold { *left } else { *right };
                }
                Node::Leaf { .. } => return i,
            }
        }
    }

    pub fn distribution(&self, x: &[f64; N_FEATURES]) -> [f64; N_CLASSES] {
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf { distribution, .. } => *distribution,
            Node::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    pub fn predict_features(&self, x: &[f64; N_FEATURES]) -> Action {
        leaf_action(&self.distribution(x))
    }

    pub fn predict(&self, obs: &Observation) -> Action {
        self.predict_features(&obs.to_array())
    }

    /// (decision nodes, leaves) reachable from the root.
    pub fn count_nodes(&self) -> (usize, usize) {
        let leaves = self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count();
        (self.nodes.len() - leaves, leaves)
    }

    pub fn count_params(&self) -> usize {
        let (d, l) = self.count_nodes();
        d * SPLIT_PARAMS + l * LEAF_PARAMS
    }

    /// Longest root-to-leaf path, in edges.
    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }

    /// Lossless pruning: every subtree whose leaves all predict the same
    /// action becomes one leaf holding the sample-weighted mean of the
    /// collapsed distributions.
    pub fn prune_argmax(&self) -> Self {
        enum Pruned {
            Leaf { distribution: [f64; N_CLASSES], samples: usize },
            Split { weights: [f64; N_FEATURES], threshold: f64, left: Box<Pruned>, right: Box<Pruned> },
        }

        fn collapse(nodes: &[Node], i: usize) -> Pruned {
            match &nodes[i] {
                Node::Leaf { distribution, samples } => Pruned::Leaf { distribution: *distribution, samples: *samples },
                Node::Split { weights, threshold, left, right } => {
                    let l = collapse(nodes, *left);
                    let r = collapse(nodes, *right);
                    if let (
                        Pruned::Leaf { distribution: dl, samples: nl },
                        Pruned::Leaf { distribution: dr, samples: nr },
                    ) = (&l, &r)
                    {
                        let action = leaf_action(dl);
                        if action == leaf_action(dr) {
                            let (wl, wr) = if nl + nr == 0 { (1.0, 1.0) } else { (*nl as f64, *nr as f64) };
                            let merged: [f64; N_CLASSES] = std::array::from_fn(|k| (wl * dl[k] + wr * dr[k]) / (wl + wr));
                            let distribution = if leaf_action(&merged) == action {
                                merged
                            } else if nl >= nr {
                                *dl
                            } else {
                                *dr
                            };
                            return Pruned::Leaf { distribution, samples: nl + nr };
                        }
                    }
                    Pruned::Split { weights: *weights, threshold: *threshold, left: Box::new(l), right: Box::new(r) }
                }
            }
        }

        fn emit(p: Pruned, out: &mut Vec<Node>) -> usize {
            let at = out.len();
            match p {
                Pruned::Leaf { distribution, samples } => out.push(Node::Leaf { distribution, samples }),
                Pruned::Split { weights, threshold, left, right } => {
                    out.push(Node::leaf([0.0; N_CLASSES], 0));
                    let l = emit(*left, out);
                    let r = emit(*right, out);
                    out[at] = Node::Split { weights, threshold, left: l, right: r };
                }
            }
            at
        }

        let mut nodes = Vec::new();
        emit(collapse(&self.nodes, 0), &mut nodes);
        Self { nodes, depth_limit: self.depth_limit, seed: self.seed, metadata: self.metadata.clone() }
    }

    pub fn to_json_value(&self) -> Value {
        let nodes: Vec<Value> = self
            .nodes
            .iter()
            .map(|n| match n {
                Node::Split { weights, threshold, left, right } => json!({
                    "kind": "split",
                    "weights": weights,
                    "threshold": threshold,
                    "left": left,
                    "right": right,
                }),
                Node::Leaf { distribution, samples } => json!({
                    "kind": "leaf",
                    "distribution": distribution,
                    "samples": samples,
                }),
            })
            .collect();
        json!({
            "version": TREE_FORMAT_VERSION,
            "depth_limit": self.depth_limit,
            "seed": self.seed,
            "metadata": {
                "dataset_size": self.metadata.dataset_size,
                "iteration": self.metadata.iteration,
            },
            "nodes": nodes,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("tree serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, TreeError> {
        let v: Value = serde_json::from_str(text)?;
        Self::from_json_value(&v)
    }

    pub fn from_json_value(v: &Value) -> Result<Self, TreeError> {
        let obj = v.as_object().ok_or_else(|| schema("$", "expected an object"))?;
        let version = obj
            .get("version")
            .ok_or_else(|| schema("$.version", "missing"))?
            .as_u64()
            .ok_or_else(|| schema("$.version", "expected an unsigned integer"))?;
        if version != TREE_FORMAT_VERSION {
            return Err(TreeError::UnsupportedVersion(version));
        }
        let depth_limit = get_usize(v, "depth_limit", "$")?;
        let seed = obj
            .get("seed")
            .ok_or_else(|| schema("$.seed", "missing"))?
            .as_u64()
            .ok_or_else(|| schema("$.seed", "expected an unsigned integer"))?;
        let metadata = match obj.get("metadata") {
            None | Some(Value::Null) => TreeMetadata::default(),
            Some(m) => serde_json::from_value(m.clone()).map_err(|e| schema("$.metadata", e.to_string()))?,
        };
        let raw_nodes =
            obj.get("nodes").and_then(Value::as_array).ok_or_else(|| schema("$.nodes", "missing or not an array"))?;
        let mut nodes = Vec::with_capacity(raw_nodes.len());
        for (i, n) in raw_nodes.iter().enumerate() {
            let path = format!("$.nodes[{i}]");
            let kind = n.get("kind").and_then(Value::as_str).ok_or_else(|| schema(format!("{path}.kind"), "missing"))?;
            nodes.push(match kind {
                "split" => Node::Split {
                    weights: get_array::<N_FEATURES>(n, "weights", &path)?,
                    threshold: get_f64(n, "threshold", &path)?,
                    left: get_usize(n, "left", &path)?,
                    right: get_usize(n, "right", &path)?,
                },
                "leaf" => Node::Leaf {
                    distribution: get_array::<N_CLASSES>(n, "distribution", &path)?,
                    samples: match n.get("samples") {
                        None => 0,
                        Some(_) => get_usize(n, "samples", &path)?,
                    },
                },
                other => return Err(schema(format!("{path}.kind"), format!("unknown node kind {other:?}"))),
            });
        }
        let tree = Self { nodes, depth_limit, seed, metadata };
        tree.validate().map_err(|e| match e {
            TreeError::Schema { path, detail } => schema(format!("$.{path}"), detail),
            other => other,
        })?;
        Ok(tree)
    }
}

fn get_f64(v: &Value, key: &str, path: &str) -> Result<f64, TreeError> {
    v.get(key)
        .ok_or_else(|| schema(format!("{path}.{key}"), "missing"))?
        .as_f64()
        .ok_or_else(|| schema(format!("{path}.{key}"), "expected a number"))
}

fn get_usize(v: &Value, key: &str, path: &str) -> Result<usize, TreeError> {
    v.get(key)
        .ok_or_else(|| schema(format!("{path}.{key}"), "missing"))?
        .as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| schema(format!("{path}.{key}"), "expected an unsigned integer"))
}

fn get_array<const N: usize>(v: &Value, key: &str, path: &str) -> Result<[f64; N], TreeError> {
    let p = format!("{path}.{key}");
    let arr = v.get(key).and_then(Value::as_array).ok_or_else(|| schema(&p, "missing or not an array"))?;
    if arr.len() != N {
        return Err(schema(&p, format!("expected {N} numbers, got {}", arr.len())));
    }
    let mut out = [0.0; N];
    for (k, x) in arr.iter().enumerate() {
        out[k] = x.as_f64().ok_or_else(|| schema(format!("{p}[{k}]"), "expected a number"))?;
    }
    Ok(out)
}

impl crate::oracle::Policy for ObliqueTree {
    fn act(&self, obs: &Observation) -> Result<Action, crate::oracle::PolicyError> {
        Ok(self.predict(obs))
    }

    fn name(&self) -> String {
        let (d, l) = self.count_nodes();
        format!("tree({d} splits, {l} leaves)")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(f: [f64; 4], label: usize) -> Sample {
        Sample { features: f, label }
    }

    /// Full tree of the given depth; leaf k gets `leaf(k)`.
    pub(crate) fn full_tree(depth: usize, leaf: impl Fn(usize) -> [f64; 3]) -> ObliqueTree {
        fn build(out: &mut Vec<Node>, depth: usize, next_leaf: &mut usize, leaf: &dyn Fn(usize) -> [f64; 3]) -> usize {
            let at = out.len();
            if depth == 0 {
                out.push(Node::leaf(leaf(*next_leaf), 1));
                *next_leaf += 1;
                return at;
            }
            out.push(Node::leaf([0.0; 3], 0));
            let l = build(out, depth - 1, next_leaf, leaf);
            let r = build(out, depth - 1, next_leaf, leaf);
            out[at] = Node::Split { weights: [1.0, 0.5, 0.0, -0.25], threshold: depth as f64 * 0.1, left: l, right: r };
            at
        }
        let mut nodes = Vec::new();
        build(&mut nodes, depth, &mut 0, &leaf);
        ObliqueTree::from_nodes(nodes, depth, 0).unwrap()
    }

    #[test]
    fn single_label_dataset_gives_single_leaf() {
        let data: Vec<_> = (0..50).map(|i| s([i as f64, 0.0, 1.0, 2.0], 2)).collect();
        let t = ObliqueTree::train(&data, 5, 1, &SplitParams::default()).unwrap();
        assert_eq!(t.count_nodes(), (0, 1));
        assert_eq!(t.predict_features(&[0.0; 4]), Action::Right);
    }

    #[test]
    fn identical_features_mixed_labels_degenerate_to_leaf() {
        let data: Vec<_> = (0..20).map(|i| s([1.0, 1.0, 1.0, 1.0], i % 3)).collect();
        let t = ObliqueTree::train(&data, 4, 0, &SplitParams::default()).unwrap();
        assert_eq!(t.count_nodes(), (0, 1));
    }

    #[test]
    fn training_validates_inputs() {
        assert!(matches!(ObliqueTree::train(&[], 3, 0, &SplitParams::default()), Err(TreeError::EmptyDataset)));
        let d = [s([0.0; 4], 0)];
        assert!(matches!(ObliqueTree::train(&d, 0, 0, &SplitParams::default()), Err(TreeError::BadDepth(0))));
        assert!(matches!(ObliqueTree::train(&d, 21, 0, &SplitParams::default()), Err(TreeError::BadDepth(21))));
        let bad = [s([f64::NAN, 0.0, 0.0, 0.0], 0)];
        assert!(matches!(
            ObliqueTree::train(&bad, 3, 0, &SplitParams::default()),
            Err(TreeError::NonFiniteSample { index: 0 })
        ));
    }

    #[test]
    fn separable_pair_splits_perfectly() {
        let data = [s([0.0; 4], 0), s([1.0, 0.0, 0.0, 0.0], 2)];
        let split = fit_split(&data, 0, &SplitParams::default()).unwrap();
        assert_eq!(split.impurity, 0.0);
        let side = |x: &[f64; 4]| dot(&split.weights, x) <= split.threshold;
        assert_ne!(side(&data[0].features), side(&data[1].features));
    }

    #[test]
    fn xor_cannot_be_split_to_zero() {
        let mut data = Vec::new();
        for (x, y, l) in [(0.0, 0.0, 0), (1.0, 1.0, 0), (0.0, 1.0, 1), (1.0, 0.0, 1)] {
            for k in 0..5 {
                let e = k as f64 * 0.01;
                data.push(s([x + e, y - e, 0.0, 0.0], l));
            }
        }
        let split = fit_split(&data, 3, &SplitParams::default());
        if let Some(split) = split {
            assert!(split.impurity > 0.0);
        }
    }

    #[test]
    fn single_class_gives_no_split() {
        let data = [s([0.0; 4], 1), s([1.0; 4], 1)];
        assert!(fit_split(&data, 0, &SplitParams::default()).is_none());
    }

    #[test]
    fn leaf_tie_break_goes_to_lowest_action() {
        assert_eq!(ObliqueTree::single_leaf([0.2, 0.5, 0.3]).predict_features(&[0.0; 4]), Action::NoOp);
        assert_eq!(ObliqueTree::single_leaf([0.5, 0.5, 0.0]).predict_features(&[0.0; 4]), Action::Left);
    }

    #[test]
    fn boundary_routes_left() {
        let nodes = vec![
            Node::Split { weights: [1.0, 0.0, 0.0, 0.0], threshold: 0.5, left: 1, right: 2 },
            Node::leaf([1.0, 0.0, 0.0], 1),
            Node::leaf([0.0, 0.0, 1.0], 1),
        ];
        let t = ObliqueTree::from_nodes(nodes, 1, 0).unwrap();
        assert_eq!(t.predict_features(&[0.5, 9.0, 9.0, 9.0]), Action::Left);
        assert_eq!(t.predict_features(&[0.5000001, 0.0, 0.0, 0.0]), Action::Right);
    }

    #[test]
    fn prune_collapses_same_argmax_siblings() {
        let nodes = vec![
            Node::Split { weights: [1.0, 0.0, 0.0, 0.0], threshold: 0.0, left: 1, right: 2 },
            Node::leaf([0.8, 0.1, 0.1], 3),
            Node::leaf([0.7, 0.2, 0.1], 1),
        ];
        let t = ObliqueTree::from_nodes(nodes, 1, 0).unwrap();
        let p = t.prune_argmax();
        assert_eq!(p.count_nodes(), (0, 1));
        let Node::Leaf { distribution, samples } = &p.nodes()[0] else { panic!() };
        assert_eq!(*samples, 4);
        let expected = [0.775, 0.125, 0.1];
        for k in 0..3 {
            assert!((distribution[k] - expected[k]).abs() < 1e-12);
        }
        assert_eq!(p.predict_features(&[5.0; 4]), Action::Left);
    }

    #[test]
    fn prune_keeps_differing_leaves() {
        let nodes = vec![
            Node::Split { weights: [1.0, 0.0, 0.0, 0.0], threshold: 0.0, left: 1, right: 2 },
            Node::leaf([0.8, 0.1, 0.1], 3),
            Node::leaf([0.1, 0.2, 0.7], 1),
        ];
        let t = ObliqueTree::from_nodes(nodes, 1, 0).unwrap();
        assert_eq!(t.prune_argmax(), t);
    }

    #[test]
    fn full_uniform_tree_collapses_to_one_leaf() {
        let t = full_tree(10, |_| [0.2, 0.6, 0.2]);
        assert_eq!(t.count_nodes(), (1023, 1024));
        let p = t.prune_argmax();
        assert_eq!(p.count_nodes(), (0, 1));
        assert_eq!(p.count_params(), 1);
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(ObliqueTree::single_leaf([1.0, 0.0, 0.0]).count_params(), 1);
        let t = full_tree(10, |k| if k % 2 == 0 { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] });
        assert_eq!(t.count_params(), 1023 * 5 + 1024);
        assert_eq!(t.depth(), 10);
    }

    #[test]
    fn json_round_trip_and_schema_errors() {
        let t = full_tree(3, |k| if k < 4 { [0.5, 0.25, 0.25] } else { [0.0, 0.0, 1.0] });
        let back = ObliqueTree::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);

        let mut v = t.to_json_value();
        v["nodes"][0].as_object_mut().unwrap().remove("left");
        match ObliqueTree::from_json_value(&v) {
            Err(TreeError::Schema { path, .. }) => assert_eq!(path, "$.nodes[0].left"),
            other => panic!("{other:?}"),
        }

        let mut v = t.to_json_value();
        v["version"] = json!(2);
        assert!(matches!(ObliqueTree::from_json_value(&v), Err(TreeError::UnsupportedVersion(2))));

        let mut v = t.to_json_value();
        v["nodes"][0]["right"] = json!(99);
        assert!(matches!(ObliqueTree::from_json_value(&v), Err(TreeError::Schema { .. })));

        let mut v = t.to_json_value();
        let last = v["nodes"].as_array().unwrap().len() - 1;
        v["nodes"][last]["distribution"] = json!([0.5, 0.5, 0.5]);
        assert!(matches!(ObliqueTree::from_json_value(&v), Err(TreeError::Schema { .. })));
    }

    #[test]
    fn leaf_without_sample_count_is_accepted() {
        let doc = r#"{"version":1,"depth_limit":1,"seed":4,"nodes":[
            {"kind":"split","weights":[1,0,0,0],"threshold":0.0,"left":1,"right":2},
            {"kind":"leaf","distribution":[1,0,0]},
            {"kind":"leaf","distribution":[0,0,1]}]}"#;
        let t = ObliqueTree::from_json(doc).unwrap();
        assert_eq!(t.count_nodes(), (1, 2));
        assert_eq!(t.seed(), 4);
    }
}
