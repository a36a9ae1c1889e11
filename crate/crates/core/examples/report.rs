//! Return statistics and report tables for a small comparison between the
//! oracle and an untrained policy.

use cpsu_distill::distill::{IterationRecord, TreeEval};
use cpsu_distill::evalstats::{boxplot, evaluate_policy, export_report, histogram, summarize, Binning, ReportGroup};
use cpsu_distill::oracle::{EnergyOracle, NoOpPolicy};
use cpsu_distill::sim::SimConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sim = SimConfig { start_perturbation_std: [1.0; 4], ..SimConfig::default() };
    let oracle = EnergyOracle::with_defaults(&sim)?;
    let logs = evaluate_policy(&oracle, &sim, 30, 8)?;
    let s = summarize(&logs).expect("episodes");
    println!("oracle: mean {:.1} ± {:.1}, median {:.1}, IQR [{:.1}, {:.1}]", s.mean, s.std, s.median, s.q1, s.q3);

    let returns: Vec<f64> = logs.iter().map(|l| l.total_return).collect();
    let h = histogram(&returns, Binning::FreedmanDiaconis)?;
    for (k, c) in h.counts.iter().enumerate() {
        let (a, b) = h.edges(k);
        println!("  [{a:>8.1}, {b:>8.1}) {}", "#".repeat(*c));
    }
    let b = boxplot("oracle", &returns).expect("non-empty");
    println!("boxplot whiskers {:.1}..{:.1}, {} outliers", b.whisker_lo, b.whisker_hi, b.outliers.len());

    let record = IterationRecord {
        iteration: 0,
        eval_seed: 8,
        dataset_size_before: 0,
        trees: vec![TreeEval {
            tree_id: 0,
            seed: 0,
            mean_return: s.mean,
            returns: returns.clone(),
            params: 0,
            decision_nodes: 0,
            leaves: 1,
        }],
        best_tree_id: 0,
        samples_added: 0,
        dataset_size_after: 0,
    };
    let groups = vec![
        ReportGroup { name: "oracle".into(), logs },
        ReportGroup { name: "noop".into(), logs: evaluate_policy(&NoOpPolicy, &sim, 30, 8)? },
    ];
    let dir = std::env::temp_dir().join("cpsu-report-example");
    for path in export_report(&[record], &groups, Binning::FreedmanDiaconis, &dir)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
