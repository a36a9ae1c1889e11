//! Desk-scale distillation of the energy oracle into oblique trees.
//!
//! ```text
//! cargo run --release --example distill_desk -- [out_dir] [master_seed]
//! ```
//!
//! Writes `manifest.json`, `samples.csv` and every trained tree to the
//! output directory.

use std::path::PathBuf;

use cpsu_distill::distill::{run_distillation_with, DistillConfig};
use cpsu_distill::evalstats::{evaluate_policy, summarize};
use cpsu_distill::oracle::{EnergyOracle, Policy};
use cpsu_distill::sim::SimConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("cpsu-desk"));
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2024);

    let sim = SimConfig::default();
    let oracle = EnergyOracle::with_defaults(&sim)?;
    let cfg = DistillConfig::desk(seed);

    println!("{:>4} {:>8} {:>10} {:>5} {:>7}", "iter", "samples", "best mean", "tree", "params");
    let outcome = run_distillation_with(&cfg, &oracle, &sim, |r| {
        let b = r.best();
        println!("{:>4} {:>8} {:>10.1} {:>5} {:>7}", r.iteration, r.dataset_size_before, b.mean_return, r.best_tree_id, b.params);
    })?;
    let manifest = outcome.write(&out, &sim, &oracle.name())?;
    println!("best tree: iteration {} tree {}; manifest at {}", outcome.best_iteration, outcome.best_tree_id, manifest.display());

    let fresh = 0xF2E5;
    let o = summarize(&evaluate_policy(&oracle, &sim, 20, fresh)?).expect("episodes");
    let t = summarize(&evaluate_policy(outcome.best_tree(), &sim, 20, fresh)?).expect("episodes");
    println!("fresh episodes: oracle {:.1}, best tree {:.1} ({:.1}%)", o.mean, t.mean, 100.0 * t.mean / o.mean);
    Ok(())
}
