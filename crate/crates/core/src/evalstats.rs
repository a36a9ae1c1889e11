//! Seeded policy evaluation and return statistics.
//!
//! Quantiles use linear interpolation between order statistics (the
//! "type 7" estimator: position `p·(n−1)` in the sorted sample). The same
//! [`quantile`] and [`iqr_bounds`] functions drive both episode filtering
//! during distillation and the boxplot export, so the two can never
//! disagree on what counts as an outlier.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distill::IterationRecord;
use crate::oracle::{Policy, PolicyError};
use crate::seeding;
use crate::sim::{Action, CartPoleSwingUp, Observation, SimConfig, SimError, ZENITH_BONUS};

/// Whisker multiplier of the outlier rule.
pub const IQR_FACTOR: f64 = 1.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("episode count must be at least 1")]
    NoEpisodes,
    #[error("nothing to report: {0}")]
    EmptyReport(String),
    #[error("invalid histogram binning: {0}")]
    BadBinning(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io { path: path.to_path_buf(), source }
}

/// One transition: the observation the policy saw, the action it chose, and
/// the resulting reward and zenith flag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub observation: Observation,
    pub action: Action,
    pub reward: f64,
    pub in_zenith: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub seed: u64,
    pub steps: Vec<EpisodeStep>,
    pub total_return: f64,
    pub return_without_bonus: f64,
    /// 1-based index of the first step that ended in the zenith.
    pub first_zenith_step: Option<usize>,
    pub zenith_step_count: usize,
    pub terminated: bool,
    pub truncated: bool,
}

impl EpisodeLog {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn reached_zenith(&self) -> bool {
        self.zenith_step_count > 0
    }

    /// Builds a log from recorded steps, deriving every aggregate.
    pub fn from_steps(seed: u64, steps: Vec<EpisodeStep>, terminated: bool, truncated: bool) -> Self {
        let total_return = steps.iter().map(|s| s.reward).sum();
        let bonus = steps.iter().filter(|s| s.in_zenith).count() as f64 * ZENITH_BONUS;
        let first_zenith_step = steps.iter().position(|s| s.in_zenith).map(|i| i + 1);
        let zenith_step_count = steps.iter().filter(|s| s.in_zenith).count();
        Self {
            seed,
            return_without_bonus: total_return - bonus,
            total_return,
            first_zenith_step,
            zenith_step_count,
            terminated,
            truncated,
            steps,
        }
    }
}

/// Runs one episode to termination or truncation.
pub fn run_episode<P: Policy + ?Sized>(policy: &P, env: &mut CartPoleSwingUp, seed: u64) -> Result<EpisodeLog, EvalError> {
    let mut obs = env.reset(seed);
    let mut steps = Vec::with_capacity(env.config().max_steps);
    loop {
        let action = policy.act(&obs)?;
        let r = env.step(action)?;
        steps.push(EpisodeStep { observation: obs, action, reward: r.reward, in_zenith: r.in_zenith });
        obs = r.observation;
        if r.done() {
            return Ok(EpisodeLog::from_steps(seed, steps, r.terminated, r.truncated));
        }
    }
}

/// Seed of episode `index` in a batch keyed by `seed`.
pub fn episode_seed(seed: u64, index: usize) -> u64 {
    seeding::derive(seed, &[index as u64])
}

/// Runs `n` episodes with seeds [`episode_seed`]`(seed, i)`. Episodes run in
/// parallel; the result order is the episode order.
pub fn evaluate_policy<P: Policy + ?Sized>(
    policy: &P,
    sim: &SimConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<EpisodeLog>, EvalError> {
    if n == 0 {
        return Err(EvalError::NoEpisodes);
    }
    sim.validate()?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut env = CartPoleSwingUp::new(sim.clone())?;
            run_episode(policy, &mut env, episode_seed(seed, i))
        })
        .collect()
}

/// Linear-interpolation quantile of an ascending slice.
///
/// # Panics
/// On an empty slice or `p` outside `[0, 1]`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    assert!((0.0..=1.0).contains(&p), "quantile level {p} outside [0, 1]");
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Inclusive outlier bounds `[Q1 − 1.5·IQR, Q3 + 1.5·IQR]`.
pub fn iqr_bounds(values: &[f64]) -> (f64, f64) {
    let s = sorted_copy(values);
    let (q1, q3) = (quantile(&s, 0.25), quantile(&s, 0.75));
    let iqr = q3 - q1;
    (q1 - IQR_FACTOR * iqr, q3 + IQR_FACTOR * iqr)
}

/// Five-number summary plus mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let s = sorted_copy(values);
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let std = if s.len() < 2 {
            0.0
        } else {
            (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self {
            mean,
            std,
            median: quantile(&s, 0.5),
            q1: quantile(&s, 0.25),
            q3: quantile(&s, 0.75),
            min: s[0],
            max: s[s.len() - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
    /// Number of episodes that reached the zenith at least once.
    pub zenith_episodes: usize,
    /// Over episodes that reached the zenith; `None` if none did.
    pub mean_first_zenith_step: Option<f64>,
    pub median_first_zenith_step: Option<f64>,
    pub mean_zenith_step_count: f64,
    pub median_zenith_step_count: f64,
    pub mean_return_without_bonus: f64,
}

impl EvalSummary {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Summary of a batch of episodes, or `None` for an empty batch.
pub fn summarize(logs: &[EpisodeLog]) -> Option<EvalSummary> {
    let returns: Vec<f64> = logs.iter().map(|l| l.total_return).collect();
    let r = Spread::of(&returns)?;
    let firsts: Vec<f64> = logs.iter().filter_map(|l| l.first_zenith_step).map(|s| s as f64).collect();
    let counts: Vec<f64> = logs.iter().map(|l| l.zenith_step_count as f64).collect();
    let counts = Spread::of(&counts).expect("non-empty");
    let first = Spread::of(&firsts);
    Some(EvalSummary {
        n: logs.len(),
        mean: r.mean,
        std: r.std,
        median: r.median,
        q1: r.q1,
        q3: r.q3,
        min: r.min,
        max: r.max,
        zenith_episodes: firsts.len(),
        mean_first_zenith_step: first.map(|f| f.mean),
        median_first_zenith_step: first.map(|f| f.median),
        mean_zenith_step_count: counts.mean,
        median_zenith_step_count: counts.median,
        mean_return_without_bonus: logs.iter().map(|l| l.return_without_bonus).sum::<f64>() / logs.len() as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Binning {
    FreedmanDiaconis,
    Count(usize),
    Width(f64),
}

/// Hard cap on bin count, guarding against tiny widths.
pub const MAX_BINS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let lo = self.lo + bin as f64 * self.bin_width;
        let hi = if bin + 1 == self.counts.len() { self.hi } else { self.lo + (bin + 1) as f64 * self.bin_width };
        (lo, hi)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Bins partition `[min, max]`: half-open except the last, which is closed.
/// A sample with zero range gets a single bin.
pub fn histogram(values: &[f64], binning: Binning) -> Result<Histogram, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptyReport("histogram of no values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::BadBinning("non-finite value".into()));
    }
    let s = sorted_copy(values);
    let (lo, hi) = (s[0], s[s.len() - 1]);
    let range = hi - lo;
    let bins = match binning {
        _ if range == 0.0 => 1,
        Binning::Count(0) => return Err(EvalError::BadBinning("zero bins".into())),
        Binning::Count(k) => k,
        Binning::Width(w) if !(w.is_finite() && w > 0.0) => {
            return Err(EvalError::BadBinning(format!("width {w}")));
        }
        Binning::Width(w) => (range / w).ceil() as usize,
        Binning::FreedmanDiaconis => {
            let w = 2.0 * (quantile(&s, 0.75) - quantile(&s, 0.25)) / (s.len() as f64).cbrt();
            if w > 0.0 {
                (range / w).ceil() as usize
            } else {
                1
            }
        }
    }
    .clamp(1, MAX_BINS);
    let bin_width = if range == 0.0 { 0.0 } else { range / bins as f64 };
    let mut counts = vec![0usize; bins];
    for v in &s {
        let k = if bin_width == 0.0 { 0 } else { (((v - lo) / bin_width).floor() as usize).min(bins - 1) };
        counts[k] += 1;
    }
    Ok(Histogram { lo, hi, bin_width, counts })
}

/// Box-and-whisker data under the shared outlier rule. Whiskers end at the
/// most extreme values inside the bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Boxplot {
    pub group: String,
    pub whisker_lo: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_hi: f64,
    pub outliers: Vec<f64>,
}

pub fn boxplot(group: &str, values: &[f64]) -> Option<Boxplot> {
    let spread = Spread::of(values)?;
    let (lo, hi) = iqr_bounds(values);
    let s = sorted_copy(values);
    let inside: Vec<f64> = s.iter().copied().filter(|v| (lo..=hi).contains(v)).collect();
    let outliers = s.iter().copied().filter(|v| !(lo..=hi).contains(v)).collect();
    Some(Boxplot {
        group: group.to_string(),
        whisker_lo: inside.first().copied().unwrap_or(spread.min),
        q1: spread.q1,
        median: spread.median,
        q3: spread.q3,
        whisker_hi: inside.last().copied().unwrap_or(spread.max),
        outliers,
    })
}

/// A named batch of returns to summarise, histogram and boxplot.
#[derive(Clone, Debug)]
pub struct ReportGroup {
    pub name: String,
    pub logs: Vec<EpisodeLog>,
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect()
}

/// Writes `iterations.csv`, `summary.json`, `histogram_<group>.csv` and
/// `boxplot.csv` into `out_dir`. Everything is computed and validated
/// before the first file is created.
pub fn export_report(
    records: &[IterationRecord],
    groups: &[ReportGroup],
    binning: Binning,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyReport("no iteration records".into()));
    }
    if groups.is_empty() {
        return Err(EvalError::EmptyReport("no evaluation groups".into()));
    }
    let mut summaries = serde_json::Map::new();
    let mut hists = Vec::new();
    let mut boxes = Vec::new();
    for g in groups {
        let summary = summarize(&g.logs).ok_or_else(|| EvalError::EmptyReport(format!("group {:?} is empty", g.name)))?;
        let returns: Vec<f64> = g.logs.iter().map(|l| l.total_return).collect();
        summaries.insert(g.name.clone(), serde_json::to_value(summary).expect("summary serializes"));
        hists.push((file_stem(&g.name), histogram(&returns, binning)?));
        boxes.push(boxplot(&g.name, &returns).expect("non-empty"));
    }
    let width = records.iter().flat_map(|r| &r.trees).map(|t| t.returns.len()).max().unwrap_or(0);

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();

    let path = out_dir.join("iterations.csv");
    let csv_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| EvalError::Csv { path, source }
    };
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    let mut header = vec!["iteration".to_string(), "tree_id".into(), "mean_return".into()];
    header.extend((0..width).map(|i| format!("return_{i}")));
    w.write_record(&header).map_err(csv_err(&path))?;
    for r in records {
        for t in &r.trees {
            let mut row = vec![r.iteration.to_string(), t.tree_id.to_string(), t.mean_return.to_string()];
            row.extend((0..width).map(|i| t.returns.get(i).map(f64::to_string).unwrap_or_default()));
            w.write_record(&row).map_err(csv_err(&path))?;
        }
    }
    w.flush().map_err(io_err(&path))?;
    written.push(path);

    let path = out_dir.join("summary.json");
    let text = serde_json::to_string_pretty(&serde_json::Value::Object(summaries)).expect("summary serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    written.push(path);

    for (stem, h) in &hists {
        let path = out_dir.join(format!("histogram_{stem}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        w.write_record(["bin_lo", "bin_hi", "count"]).map_err(csv_err(&path))?;
        for (k, c) in h.counts.iter().enumerate() {
            let (a, b) = h.edges(k);
            w.write_record([a.to_string(), b.to_string(), c.to_string()]).map_err(csv_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path);
    }

    let path = out_dir.join("boxplot.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["group", "min", "q1", "median", "q3", "max", "outliers"]).map_err(csv_err(&path))?;
    for b in &boxes {
        let outliers = b.outliers.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
        w.write_record([
            b.group.clone(),
            b.whisker_lo.to_string(),
            b.q1.to_string(),
            b.median.to_string(),
            b.q3.to_string(),
            b.whisker_hi.to_string(),
            outliers,
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    written.push(path);

    Ok(written)
}
