//! Label oracle trajectories, fit one oblique tree and compare it with the
//! teacher on fresh episodes.
//!
//! ```text
//! cargo run --release --example train_tree -- [depth] [seed]
//! ```

use cpsu_distill::distill::{collect_base, truncate_and_extract};
use cpsu_distill::evalstats::{evaluate_policy, summarize};
use cpsu_distill::opct::{Node, ObliqueTree, SplitParams};
use cpsu_distill::oracle::EnergyOracle;
use cpsu_distill::sim::SimConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let depth: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(8);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);

    let sim = SimConfig::default();
    let oracle = EnergyOracle::with_defaults(&sim)?;
    let logs = collect_base(&oracle, &sim, 5, seed)?;
    let samples: Vec<_> = logs.iter().flat_map(|l| truncate_and_extract(l, 350)).collect();

    let tree = ObliqueTree::train(&samples, depth, seed, &SplitParams::default())?;
    let correct = samples.iter().filter(|s| tree.predict_features(&s.features).index() == s.label).count();
    let (splits, leaves) = tree.count_nodes();
    println!("{} samples, depth {}, {splits} splits, {leaves} leaves", samples.len(), tree.depth());
    println!("training accuracy {:.2}%", 100.0 * correct as f64 / samples.len() as f64);

    if let Node::Split { weights, threshold, .. } = &tree.nodes()[0] {
        println!("root test: {:.3}·u + {:.3}·u' + {:.3}·y + {:.3}·y' <= {:.3}", weights[0], weights[1], weights[2], weights[3], threshold);
    }

    let t = summarize(&evaluate_policy(&tree, &sim, 10, 99)?).expect("episodes");
    let o = summarize(&evaluate_policy(&oracle, &sim, 10, 99)?).expect("episodes");
    println!("mean return: tree {:.1}, oracle {:.1}", t.mean, o.mean);
    Ok(())
}
