//! Lossless argmax pruning: train a deep tree, collapse same-action
//! subtrees, and check that no prediction changes.

use cpsu_distill::opct::{ObliqueTree, Sample, SplitParams};
use cpsu_distill::seeding;
use rand::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = seeding::rng(11);
    // two noisy action boundaries in the angle/angular-velocity plane
    let samples: Vec<Sample> = (0..4000)
        .map(|_| {
            let x: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let s = x[0] + 0.4 * x[1] + rng.random_range(-0.15..0.15);
            let label = if s < -0.3 { 0 } else if s > 0.3 { 2 } else { 1 };
            Sample { features: x, label }
        })
        .collect();

    let tree = ObliqueTree::train(&samples, 10, 5, &SplitParams::default())?;
    let pruned = tree.prune_argmax();
    let (d0, l0) = tree.count_nodes();
    let (d1, l1) = pruned.count_nodes();
    println!("before: {d0} decision nodes, {l0} leaves, {} params", tree.count_params());
    println!("after:  {d1} decision nodes, {l1} leaves, {} params", pruned.count_params());

    let mismatches = (0..10_000)
        .filter(|_| {
            let x: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.5..1.5));
            tree.predict_features(&x) != pruned.predict_features(&x)
        })
        .count();
    println!("prediction mismatches on 10000 random points: {mismatches}");
    assert_eq!(pruned.prune_argmax(), pruned, "pruning is idempotent");

    let text = pruned.to_json();
    assert_eq!(ObliqueTree::from_json(&text)?, pruned);
    println!("pruned tree JSON: {} bytes", text.len());
    Ok(())
}
