//! Acceptance gate: one line per criterion, non-zero exit if any fails.
//!
//! Runs without the libtest harness so every criterion reports even when an
//! earlier one fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::{brute_force_filter, chain_tree, random_points, random_tree, synthetic_log};
use cpsu_distill::distill::{self, filter_episodes, filter_returns, relabel_episodes, truncate_and_extract, Provenance};
use cpsu_distill::evalstats::{evaluate_policy, summarize};
use cpsu_distill::opct::{ObliqueTree, Sample};
use cpsu_distill::sim::{reward_fn, SimState};
use cpsu_distill::{
    seeding, Action, CartPoleSwingUp, DistillConfig, DistillOutcome, EnergyOracle, MlpPolicy, Policy,
    SampleSet, SimConfig, SplitParams,
};
use rand::Rng;

const MASTER_SEED: u64 = 2024;
const FRESH_TAG: u64 = 0xf2e5;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn near(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn rewards() -> Check {
    let cfg = SimConfig::default();
    let up = reward_fn(&SimState { u: 180.0, ..Default::default() }, &cfg);
    let down = reward_fn(&SimState::default(), &cfg);
    let side = reward_fn(&SimState { u: 90.0, ..Default::default() }, &cfg);
    ensure(near(up, 11.0, 1e-9), format!("upright reward {up}"))?;
    ensure(near(down, 0.0, 1e-9), format!("hanging reward {down}"))?;
    ensure(near(side, 0.5, 1e-9), format!("horizontal reward {side}"))?;
    Ok(format!("r(180)={up} r(0)={down} r(90)={side}"))
}

fn mlp_params() -> Check {
    let net = MlpPolicy::zeros(&[4, 64, 64, 3]).map_err(|e| e.to_string())?;
    let random = MlpPolicy::random(&[4, 64, 64, 3], 1).map_err(|e| e.to_string())?;
    ensure(net.count_params() == 4675, format!("{} params", net.count_params()))?;
    ensure(random.count_params() == 4675, "count depends on weight values")?;
    Ok("4675 parameters".into())
}

fn tree_counts() -> Check {
    let full = random_tree(7, 10, 0.0);
    ensure(full.count_nodes() == (1023, 1024), format!("full depth-10 tree {:?}", full.count_nodes()))?;
    let chain = chain_tree(497, false);
    ensure(chain.count_nodes() == (497, 498), format!("chain {:?}", chain.count_nodes()))?;
    ensure(chain.count_params() == 2983, format!("chain params {}", chain.count_params()))?;
    let pruned = chain_tree(497, true).prune_argmax();
    ensure(pruned.count_params() == 2983, format!("pruned redundant chain {}", pruned.count_params()))?;
    let reduction = cpsu_distill::cli::reduction_percent(2983, 4675);
    ensure(near(reduction, 36.2, 0.1), format!("reduction {reduction:.3}%"))?;
    Ok(format!("(1023, 1024); 497/498 -> 2983 params, {reduction:.2}% below 4675"))
}

fn pruning_lossless() -> Check {
    let mut rng = seeding::rng(4);
    let mut merged = 0usize;
    for t in 0..50u64 {
        let n = rng.random_range(200..1200);
        let labeller = random_tree(1000 + t, rng.random_range(2..6), 0.0);
        let noise = rng.random_range(0.0..0.2);
        let data: Vec<Sample> = random_points(2000 + t, n, 1.0)
            .into_iter()
            .map(|x| {
                let mut label = labeller.predict_features(&x).index();
                if rng.random_bool(noise) {
                    label = rng.random_range(0..3);
                }
                Sample { features: x, label }
            })
            .collect();
        let depth = rng.random_range(3..10);
        let tree = ObliqueTree::train(&data, depth, t, &SplitParams::default()).map_err(|e| e.to_string())?;
        let pruned = tree.prune_argmax();
        merged += tree.count_params() - pruned.count_params();
        ensure(pruned.prune_argmax() == pruned, format!("tree {t}: pruning not idempotent"))?;
        let mismatches = random_points(3000 + t, 10_000, 1.5)
            .iter()
            .filter(|x| tree.predict_features(x) != pruned.predict_features(x))
            .count();
        ensure(mismatches == 0, format!("tree {t}: {mismatches} mismatches"))?;
    }
    Ok(format!("50 trees x 10^4 points, 0 mismatches, {merged} params removed in total"))
}

fn sample_arithmetic() -> Check {
    let oracle = EnergyOracle::with_defaults(&SimConfig::default()).map_err(|e| e.to_string())?;
    let logs: Vec<_> = (0..92).map(|i| synthetic_log(i, 350 + 7 * i as usize, 1.0, &[10])).collect();
    let f = filter_episodes(&logs).map_err(|e| e.to_string())?;
    ensure(f.kept.len() == 92, format!("{} of 92 kept", f.kept.len()))?;
    let mut set = SampleSet::new();
    for &i in &f.kept {
        set.extend(truncate_and_extract(&logs[i], 350), Provenance::Base);
    }
    ensure(set.len() == 32200, format!("base set {}", set.len()))?;
    let mut sizes = vec![];
    for k in 0..3 {
        let evals: Vec<_> = (0..5).map(|i| synthetic_log(i, 1000, 2.0, &[])).collect();
        let added = relabel_episodes(&evals, 350, &oracle).map_err(|e| e.to_string())?;
        ensure(added.len() == 1750, format!("iteration {k} added {}", added.len()))?;
        set.extend(added, Provenance::Iteration(k));
        sizes.push(set.len());
    }
    ensure(sizes == [33950, 35700, 37450], format!("sizes {sizes:?}"))?;
    Ok(format!("base 32200, +1750 per iteration {sizes:?}"))
}

fn filter_equivalence() -> Check {
    let mut rng = seeding::rng(6);
    let mut rejected = 0;
    for case in 0..200 {
        let n = rng.random_range(1..150);
        let heavy = rng.random_bool(0.3);
        let returns: Vec<f64> = (0..n)
            .map(|_| {
                let base = rng.random_range(3000.0..7000.0);
                if heavy && rng.random_bool(0.1) {
                    base * rng.random_range(-1.0..3.0)
                } else {
                    base
                }
            })
            .collect();
        let zenith: Vec<bool> = (0..n).map(|_| rng.random_bool(0.9)).collect();
        let (kept, no_zenith, outliers) = brute_force_filter(&returns, &zenith);
        match filter_returns(&returns, &zenith) {
            Ok(f) => {
                ensure(
                    f.kept == kept && f.rejected_no_zenith == no_zenith && f.rejected_outlier == outliers,
                    format!("case {case} differs"),
                )?;
                rejected += outliers.len();
            }
            Err(_) => ensure(kept.is_empty(), format!("case {case}: spurious empty-dataset error"))?,
        }
    }
    Ok(format!("200 lists identical to brute force ({rejected} outliers rejected)"))
}

fn oracle_competence() -> Check {
    let sim = SimConfig::default();
    let oracle = EnergyOracle::with_defaults(&sim).map_err(|e| e.to_string())?;
    let logs = evaluate_policy(&oracle, &sim, 20, seeding::derive(MASTER_SEED, &[7])).map_err(|e| e.to_string())?;
    let s = summarize(&logs).ok_or("no episodes")?;
    ensure(s.zenith_episodes == 20, format!("{} of 20 episodes reached the zenith", s.zenith_episodes))?;
    let median = s.median_first_zenith_step.ok_or("no zenith")?;
    ensure(median < 400.0, format!("median first zenith step {median}"))?;
    ensure(s.mean > 2000.0, format!("mean return {:.1}", s.mean))?;
    Ok(format!("20/20 zenith, median first zenith step {median}, mean return {:.1}", s.mean))
}

struct DeskRun {
    outcome: DistillOutcome,
    manifest: Vec<u8>,
    trees: Vec<Vec<u8>>,
    seconds: f64,
}

fn desk_sim() -> SimConfig {
    SimConfig::default()
}

fn desk_run() -> Result<DeskRun, String> {
    let sim = desk_sim();
    let oracle = EnergyOracle::with_defaults(&sim).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let outcome = distill::run_distillation(&DistillConfig::desk(MASTER_SEED), &oracle, &sim).map_err(|e| e.to_string())?;
    let seconds = start.elapsed().as_secs_f64();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = outcome.write(dir.path(), &sim, &oracle.name()).map_err(|e| e.to_string())?;
    let manifest = std::fs::read(path).map_err(|e| e.to_string())?;
    let mut trees = vec![];
    for k in 0..outcome.records.len() {
        for i in 0..outcome.config.n_trees {
            trees.push(std::fs::read(dir.path().join(DistillOutcome::tree_file(k, i))).map_err(|e| e.to_string())?);
        }
    }
    Ok(DeskRun { outcome, manifest, trees, seconds })
}

fn distillation_improvement(run: &DeskRun) -> Check {
    let sim = desk_sim();
    let oracle = EnergyOracle::with_defaults(&sim).map_err(|e| e.to_string())?;
    let fresh = seeding::derive(MASTER_SEED, &[FRESH_TAG]);
    let mean = |p: &dyn Policy| -> Result<f64, String> {
        let logs = evaluate_policy(p, &sim, 20, fresh).map_err(|e| e.to_string())?;
        Ok(summarize(&logs).ok_or("no episodes")?.mean)
    };
    let o = mean(&oracle)?;
    let best = mean(run.outcome.best_tree())?;
    let first = mean(run.outcome.iteration0_best_tree())?;
    let ratio = best / o;
    let detail = format!(
        "oracle {o:.1}, final best {best:.1} (iteration {}, ratio {ratio:.3}), iteration-0 best {first:.1}, {:.0}s",
        run.outcome.best_iteration, run.seconds
    );
    ensure(ratio >= 0.9, format!("below 90% of the oracle: {detail}"))?;
    ensure(best > first, format!("no improvement over iteration 0: {detail}"))?;
    Ok(detail)
}

fn determinism(a: &DeskRun) -> Check {
    let b = desk_run()?;
    ensure(a.manifest == b.manifest, "manifests differ")?;
    ensure(a.trees == b.trees, "tree files differ")?;
    Ok(format!("{} manifest bytes and {} tree files identical", a.manifest.len(), a.trees.len()))
}

fn physics() -> Check {
    let cfg = SimConfig { cart_friction: 0.0, pivot_friction: 0.0, motor_force: 0.0, ..SimConfig::default() };
    let mut env = CartPoleSwingUp::new(cfg.clone()).map_err(|e| e.to_string())?;
    env.reset(0);
    env.set_state(SimState { u: 150.0, u_dot: 0.0, y: 0.0, y_dot: 0.0 });
    let e0 = cfg.mechanical_energy(env.state());
    let mut drift: f64 = 0.0;
    for _ in 0..1000 {
        let r = env.step(Action::NoOp).map_err(|e| e.to_string())?;
        drift = drift.max((cfg.mechanical_energy(env.state()) - e0).abs() / e0.abs());
        if r.done() {
            break;
        }
    }
    ensure(env.steps() == 1000, format!("episode ended after {} steps", env.steps()))?;
    ensure(drift < 1e-5, format!("relative energy drift {drift:e}"))?;

    env.reset(0);
    env.set_state(SimState { u: 2.0, ..Default::default() });
    let mut prev = (0.0, 2.0);
    let mut crossings = vec![];
    for k in 1..=1000 {
        env.step(Action::NoOp).map_err(|e| e.to_string())?;
        let t = k as f64 * cfg.step_duration;
        let u = env.state().u;
        if prev.1 > 0.0 && u <= 0.0 {
            crossings.push(prev.0 + (t - prev.0) * prev.1 / (prev.1 - u));
        }
        prev = (t, u);
    }
    ensure(crossings.len() >= 10, format!("{} downward zero crossings", crossings.len()))?;
    let measured = (crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64;
    let expected = cfg.small_angle_period();
    let err = (measured / expected - 1.0).abs();
    ensure(err < 0.01, format!("period {measured:.5}s vs {expected:.5}s"))?;
    Ok(format!("energy drift {drift:.2e}, period {measured:.4}s vs {expected:.4}s ({:.3}%)", 100.0 * err))
}

fn report(id: usize, name: &str, check: impl FnOnce() -> Check) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    match &outcome {
        Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
        Err(detail) => println!("criterion {id:>2} FAIL  {name}: {detail}"),
    }
    outcome.is_ok()
}

fn main() {
    let mut passed = vec![
        report(1, "reward formula", rewards),
        report(2, "MLP parameter count", mlp_params),
        report(3, "tree structure counts", tree_counts),
        report(4, "pruning losslessness", pruning_lossless),
        report(5, "sample arithmetic", sample_arithmetic),
        report(6, "filter equivalence", filter_equivalence),
        report(7, "oracle competence", oracle_competence),
    ];
    let run = desk_run();
    match &run {
        Ok(run) => {
            passed.push(report(8, "distillation improvement", || distillation_improvement(run)));
            passed.push(report(9, "determinism", || determinism(run)));
        }
        Err(e) => {
            passed.push(report(8, "distillation improvement", || Err(format!("desk run failed: {e}"))));
            passed.push(report(9, "determinism", || Err(format!("desk run failed: {e}"))));
        }
    }
    passed.push(report(10, "simulator physics", physics));
    let n = passed.iter().filter(|p| **p).count();
    println!("acceptance: {n}/{} criteria passed", passed.len());
    if n != passed.len() {
        std::process::exit(1);
    }
}
