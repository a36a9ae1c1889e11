//! Iterative distillation of a teacher policy into oblique trees.
//!
//! The loop follows dataset aggregation: collect teacher episodes, keep the
//! first `cutoff` steps of the good ones, then repeatedly train a batch of
//! trees, evaluate them on shared seeded episodes, and let the teacher label
//! the states that the best tree visited.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::evalstats::{self, iqr_bounds, EpisodeLog, EvalError};
use crate::opct::{ObliqueTree, Sample, SplitParams, TreeError};
use crate::oracle::{Policy, PolicyError};
use crate::seeding;
use crate::sim::{Observation, SimConfig, SimError};

const TAG_BASE: u64 = 0xBA5E;
const TAG_TREE: u64 = 0x7BEE;
const TAG_EVAL: u64 = 0xE7A1;

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("invalid distillation config: {0}")]
    InvalidConfig(String),
    #[error("every episode was rejected by filtering ({no_zenith} without zenith, {outliers} outliers)")]
    EmptyDataset { no_zenith: usize, outliers: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub n_trees: usize,
    pub depth: usize,
    pub eval_episodes: usize,
    pub iterations: usize,
    pub cutoff: usize,
    pub base_episodes: usize,
    pub master_seed: u64,
    pub split: SplitParams,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            n_trees: 10,
            depth: 10,
            eval_episodes: 5,
            iterations: 10,
            cutoff: 350,
            base_episodes: 100,
            master_seed: 0,
            split: SplitParams::default(),
        }
    }
}

impl DistillConfig {
    /// Small run sized for a laptop: 20 base episodes, 5 trees of depth 8,
    /// 8 iterations.
    pub fn desk(master_seed: u64) -> Self {
        Self { n_trees: 5, depth: 8, iterations: 8, base_episodes: 20, master_seed, ..Self::default() }
    }

    pub fn validate(&self, sim: &SimConfig) -> Result<(), DistillError> {
        let counts = [
            ("n_trees", self.n_trees),
            ("depth", self.depth),
            ("eval_episodes", self.eval_episodes),
            ("iterations", self.iterations),
            ("cutoff", self.cutoff),
            ("base_episodes", self.base_episodes),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(DistillError::InvalidConfig(format!("{name} must be at least 1")));
        }
        if self.depth > crate::opct::MAX_DEPTH {
            return Err(DistillError::InvalidConfig(format!("depth {} exceeds {}", self.depth, crate::opct::MAX_DEPTH)));
        }
        if self.cutoff > sim.max_steps {
            return Err(DistillError::InvalidConfig(format!(
                "cutoff {} exceeds the episode length {}",
                self.cutoff, sim.max_steps
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Base,
    Iteration(usize),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Base => f.write_str("base"),
            Provenance::Iteration(k) => write!(f, "iter{k}"),
        }
    }
}

/// Append-only training set with a provenance tag per sample.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleSet {
    samples: Vec<Sample>,
    provenance: Vec<Provenance>,
}

impl SampleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&mut self, samples: impl IntoIterator<Item = Sample>, tag: Provenance) {
        for s in samples {
            self.samples.push(s);
            self.provenance.push(tag);
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn count_tagged(&self, tag: Provenance) -> usize {
        self.provenance.iter().filter(|p| **p == tag).count()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DistillError> {
        let csv_err = |source| DistillError::Csv { path: path.to_path_buf(), source };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["u_norm", "u_dot_obs", "y_norm", "y_dot_obs", "action", "provenance"]).map_err(csv_err)?;
        for (s, p) in self.samples.iter().zip(&self.provenance) {
            let f = s.features;
            w.write_record([
                f[0].to_string(),
                f[1].to_string(),
                f[2].to_string(),
                f[3].to_string(),
                s.label.to_string(),
                p.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|source| DistillError::Io { path: path.to_path_buf(), source })
    }
}

/// Runs the teacher for `episodes` seeded episodes.
pub fn collect_base<P: Policy + ?Sized>(
    oracle: &P,
    sim: &SimConfig,
    episodes: usize,
    seed: u64,
) -> Result<Vec<EpisodeLog>, DistillError> {
    Ok(evalstats::evaluate_policy(oracle, sim, episodes, seed)?)
}

/// Index sets produced by the two-stage episode filter.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub kept: Vec<usize>,
    pub rejected_no_zenith: Vec<usize>,
    pub rejected_outlier: Vec<usize>,
}

/// Filters episodes given their returns and zenith flags. Episodes that
/// never reached the zenith go first; the IQR bounds are then computed over
/// the survivors only.
pub fn filter_returns(returns: &[f64], reached_zenith: &[bool]) -> Result<FilterOutcome, DistillError> {
    assert_eq!(returns.len(), reached_zenith.len(), "one zenith flag per return");
    let mut out = FilterOutcome::default();
    let mut survivors = Vec::new();
    for (i, &z) in reached_zenith.iter().enumerate() {
        if z {
            survivors.push(i);
        } else {
            out.rejected_no_zenith.push(i);
        }
    }
    if !survivors.is_empty() {
        let r: Vec<f64> = survivors.iter().map(|&i| returns[i]).collect();
        let (lo, hi) = iqr_bounds(&r);
        for i in survivors {
            if (lo..=hi).contains(&returns[i]) {
                out.kept.push(i);
            } else {
                out.rejected_outlier.push(i);
            }
        }
    }
    if out.kept.is_empty() {
        return Err(DistillError::EmptyDataset {
            no_zenith: out.rejected_no_zenith.len(),
            outliers: out.rejected_outlier.len(),
        });
    }
    Ok(out)
}

pub fn filter_episodes(logs: &[EpisodeLog]) -> Result<FilterOutcome, DistillError> {
    let returns: Vec<f64> = logs.iter().map(|l| l.total_return).collect();
    let zenith: Vec<bool> = logs.iter().map(EpisodeLog::reached_zenith).collect();
    filter_returns(&returns, &zenith)
}

/// The first `cutoff` (observation, action) pairs of an episode.
pub fn truncate_and_extract(log: &EpisodeLog, cutoff: usize) -> Vec<Sample> {
    log.steps.iter().take(cutoff).map(|s| Sample::new(&s.observation, s.action)).collect()
}

/// Labels each state with the teacher's action, preserving order.
pub fn relabel<P: Policy + ?Sized>(states: &[Observation], oracle: &P) -> Result<Vec<Sample>, DistillError> {
    states.iter().map(|o| Ok(Sample::new(o, oracle.act(o)?))).collect()
}

/// States from the first `cutoff` steps of each episode, labelled by the
/// teacher. This is what one iteration adds to the dataset.
pub fn relabel_episodes<P: Policy + ?Sized>(
    logs: &[EpisodeLog],
    cutoff: usize,
    oracle: &P,
) -> Result<Vec<Sample>, DistillError> {
    let states: Vec<Observation> =
        logs.iter().flat_map(|log| log.steps.iter().take(cutoff).map(|s| s.observation)).collect();
    relabel(&states, oracle)
}

/// Evaluation result of one tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeEval {
    pub tree_id: usize,
    pub seed: u64,
    pub mean_return: f64,
    pub returns: Vec<f64>,
    /// Parameter count after lossless pruning.
    pub params: usize,
    pub decision_nodes: usize,
    pub leaves: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub eval_seed: u64,
    pub dataset_size_before: usize,
    pub trees: Vec<TreeEval>,
    pub best_tree_id: usize,
    pub samples_added: usize,
    pub dataset_size_after: usize,
}

impl IterationRecord {
    pub fn best(&self) -> &TreeEval {
        &self.trees[self.best_tree_id]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseStats {
    pub episodes: usize,
    pub rejected_no_zenith: usize,
    pub rejected_outlier: usize,
    pub kept: usize,
    pub samples: usize,
}

#[derive(Clone, Debug)]
pub struct DistillOutcome {
    pub config: DistillConfig,
    pub base: BaseStats,
    pub records: Vec<IterationRecord>,
    /// `trees[k][i]` is tree `i` of iteration `k`, as trained.
    pub trees: Vec<Vec<ObliqueTree>>,
    pub best_iteration: usize,
    pub best_tree_id: usize,
    pub dataset: SampleSet,
}

impl DistillOutcome {
    pub fn best_tree(&self) -> &ObliqueTree {
        &self.trees[self.best_iteration][self.best_tree_id]
    }

    pub fn best_eval(&self) -> &TreeEval {
        &self.records[self.best_iteration].trees[self.best_tree_id]
    }

    pub fn iteration0_best_tree(&self) -> &ObliqueTree {
        &self.trees[0][self.records[0].best_tree_id]
    }

    pub fn tree_file(iteration: usize, tree_id: usize) -> String {
        format!("trees/iter{iteration:02}_tree{tree_id:02}.json")
    }

    /// Run manifest. Contains no timestamps or absolute paths, so equal runs
    /// give equal bytes.
    pub fn manifest(&self, sim: &SimConfig, oracle_name: &str) -> Value {
        let best = self.best_eval();
        json!({
            "format": "cpsu-distill-manifest/1",
            "oracle": oracle_name,
            "sim": sim,
            "distill": self.config,
            "base": self.base,
            "iterations": self.records.iter().map(|r| {
                let mut v = serde_json::to_value(r).expect("record serializes");
                v["tree_files"] = json!((0..r.trees.len()).map(|i| Self::tree_file(r.iteration, i)).collect::<Vec<_>>());
                v
            }).collect::<Vec<_>>(),
            "best": {
                "iteration": self.best_iteration,
                "tree_id": self.best_tree_id,
                "mean_return": best.mean_return,
                "params": best.params,
                "tree_file": Self::tree_file(self.best_iteration, self.best_tree_id),
                "tree": self.best_tree().to_json_value(),
            },
        })
    }

    /// Writes `manifest.json`, `samples.csv` and every tree under `trees/`.
    pub fn write(&self, out_dir: &Path, sim: &SimConfig, oracle_name: &str) -> Result<PathBuf, DistillError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| DistillError::Io { path, source }
        };
        let tree_dir = out_dir.join("trees");
        fs::create_dir_all(&tree_dir).map_err(io(&tree_dir))?;
        for (k, batch) in self.trees.iter().enumerate() {
            for (i, t) in batch.iter().enumerate() {
                let path = out_dir.join(Self::tree_file(k, i));
                fs::write(&path, t.to_json() + "\n").map_err(io(&path))?;
            }
        }
        self.dataset.write_csv(&out_dir.join("samples.csv"))?;
        let path = out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest(sim, oracle_name)).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(io(&path))?;
        Ok(path)
    }
}

/// Seed shared by every evaluation episode batch of iteration `k`.
pub fn eval_seed(master_seed: u64, iteration: usize) -> u64 {
    seeding::derive(master_seed, &[TAG_EVAL, iteration as u64])
}

pub fn tree_seed(master_seed: u64, iteration: usize, tree_id: usize) -> u64 {
    seeding::derive(master_seed, &[TAG_TREE, iteration as u64, tree_id as u64])
}

pub fn base_seed(master_seed: u64) -> u64 {
    seeding::derive(master_seed, &[TAG_BASE])
}

/// Higher mean wins; ties go to fewer parameters, then the lower key.
fn better(a: (f64, usize, u64), b: (f64, usize, u64)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && (a.1 < b.1 || (a.1 == b.1 && a.2 < b.2)))
}

pub fn run_distillation<P: Policy + ?Sized>(
    config: &DistillConfig,
    oracle: &P,
    sim: &SimConfig,
) -> Result<DistillOutcome, DistillError> {
    run_distillation_with(config, oracle, sim, |_| {})
}

/// Like [`run_distillation`], calling `on_iteration` after each iteration.
pub fn run_distillation_with<P: Policy + ?Sized>(
    config: &DistillConfig,
    oracle: &P,
    sim: &SimConfig,
    mut on_iteration: impl FnMut(&IterationRecord),
) -> Result<DistillOutcome, DistillError> {
    config.validate(sim)?;
    sim.validate()?;

    let base_logs = collect_base(oracle, sim, config.base_episodes, base_seed(config.master_seed))?;
    let filtered = filter_episodes(&base_logs)?;
    let mut dataset = SampleSet::new();
    for &i in &filtered.kept {
        dataset.extend(truncate_and_extract(&base_logs[i], config.cutoff), Provenance::Base);
    }
    let base = BaseStats {
        episodes: base_logs.len(),
        rejected_no_zenith: filtered.rejected_no_zenith.len(),
        rejected_outlier: filtered.rejected_outlier.len(),
        kept: filtered.kept.len(),
        samples: dataset.len(),
    };
    drop(base_logs);

    let mut records = Vec::with_capacity(config.iterations);
    let mut all_trees = Vec::with_capacity(config.iterations);
    for k in 0..config.iterations {
        let eval_seed = eval_seed(config.master_seed, k);
        let data = dataset.samples();
        let results: Vec<(ObliqueTree, TreeEval, Vec<EpisodeLog>)> = (0..config.n_trees)
            .into_par_iter()
            .map(|i| -> Result<_, DistillError> {
                let seed = tree_seed(config.master_seed, k, i);
                let mut tree = ObliqueTree::train(data, config.depth, seed, &config.split)?;
                tree.metadata.iteration = Some(k);
                let logs = evalstats::evaluate_policy(&tree, sim, config.eval_episodes, eval_seed)?;
                let returns: Vec<f64> = logs.iter().map(|l| l.total_return).collect();
                let pruned = tree.prune_argmax();
                let (decision_nodes, leaves) = tree.count_nodes();
                let eval = TreeEval {
                    tree_id: i,
                    seed,
                    mean_return: returns.iter().sum::<f64>() / returns.len() as f64,
                    returns,
                    params: pruned.count_params(),
                    decision_nodes,
                    leaves,
                };
                Ok((tree, eval, logs))
            })
            .collect::<Result<_, _>>()?;

        let best_tree_id = (1..results.len()).fold(0, |b, i| {
            let key = |e: &TreeEval| (e.mean_return, e.params, e.seed);
            if better(key(&results[i].1), key(&results[b].1)) {
                i
            } else {
                b
            }
        });
        let labelled = relabel_episodes(&results[best_tree_id].2, config.cutoff, oracle)?;
        let before = dataset.len();
        let samples_added = labelled.len();
        dataset.extend(labelled, Provenance::Iteration(k));

        let (trees, evals): (Vec<_>, Vec<_>) = results.into_iter().map(|(t, e, _)| (t, e)).unzip();
        let record = IterationRecord {
            iteration: k,
            eval_seed,
            dataset_size_before: before,
            trees: evals,
            best_tree_id,
            samples_added,
            dataset_size_after: dataset.len(),
        };
        on_iteration(&record);
        records.push(record);
        all_trees.push(trees);
    }

    let best_iteration = (1..records.len()).fold(0, |b, k| {
        let key = |r: &IterationRecord| (r.best().mean_return, r.best().params, r.iteration as u64);
        if better(key(&records[k]), key(&records[b])) {
            k
        } else {
            b
        }
    });
    Ok(DistillOutcome {
        config: config.clone(),
        base,
        best_tree_id: records[best_iteration].best_tree_id,
        best_iteration,
        records,
        trees: all_trees,
        dataset,
    })
}
