#![allow(dead_code)]

use cpsu_distill::opct::{Node, ObliqueTree, Sample};
use cpsu_distill::seeding;
use cpsu_distill::Action;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Leaf distribution drawn from small integer counts so that ties between
/// classes show up regularly.
pub fn random_distribution(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let counts: [u32; 3] = std::array::from_fn(|_| rng.random_range(0..4));
    let total: u32 = counts.iter().sum();
    if total == 0 {
        return [1.0 / 3.0; 3];
    }
    counts.map(|c| c as f64 / total as f64)
}

/// Random oblique tree with depth at most `max_depth`. Each internal node
/// stops early with probability `stop`.
pub fn random_tree(seed: u64, max_depth: usize, stop: f64) -> ObliqueTree {
    fn build(out: &mut Vec<Node>, depth: usize, stop: f64, rng: &mut ChaCha8Rng) -> usize {
        let at = out.len();
        if depth == 0 || rng.random_bool(stop) {
            let d = random_distribution(rng);
            out.push(Node::leaf(d, rng.random_range(0..30)));
            return at;
        }
        out.push(Node::leaf([1.0, 0.0, 0.0], 0));
        let mut weights: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        weights[rng.random_range(0..4)] += 0.5;
        let threshold = rng.random_range(-0.5..0.5);
        let left = build(out, depth - 1, stop, rng);
        let right = build(out, depth - 1, stop, rng);
        out[at] = Node::Split { weights, threshold, left, right };
        at
    }
    let mut rng = seeding::rng(seed);
    let mut nodes = Vec::new();
    build(&mut nodes, max_depth, stop, &mut rng);
    ObliqueTree::from_nodes(nodes, max_depth, seed).unwrap()
}

pub fn random_points(seed: u64, n: usize, spread: f64) -> Vec<[f64; 4]> {
    let mut rng = seeding::rng(seed);
    (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-spread..spread))).collect()
}

/// Noisy labelled samples from a fixed piecewise-linear rule.
pub fn rule_samples(seed: u64, n: usize) -> Vec<Sample> {
    random_points(seed, n, 1.0)
        .into_iter()
        .map(|x| {
            let label = if x[0] + 0.5 * x[1] > 0.2 {
                Action::Right
            } else if x[2] - x[3] < -0.3 {
                Action::Left
            } else {
                Action::NoOp
            };
            Sample { features: x, label: label.index() }
        })
        .collect()
}

/// Type-7 quantile written from its 1-based textbook definition, on an
/// insertion-sorted copy.
pub fn textbook_quantile(values: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = Vec::with_capacity(values.len());
    for &x in values {
        let pos = v.iter().position(|&y| y > x).unwrap_or(v.len());
        v.insert(pos, x);
    }
    let n = v.len();
    let h = (n as f64 - 1.0) * p + 1.0;
    let j = h.floor() as usize;
    let g = h - j as f64;
    if j >= n {
        return v[n - 1];
    }
    (1.0 - g) * v[j - 1] + g * v[j]
}

/// Reference two-stage filter: returns (kept, rejected_no_zenith,
/// rejected_outlier) as index lists.
pub fn brute_force_filter(returns: &[f64], zenith: &[bool]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let survivors: Vec<usize> = (0..returns.len()).filter(|&i| zenith[i]).collect();
    let no_zenith: Vec<usize> = (0..returns.len()).filter(|&i| !zenith[i]).collect();
    if survivors.is_empty() {
        return (vec![], no_zenith, vec![]);
    }
    let r: Vec<f64> = survivors.iter().map(|&i| returns[i]).collect();
    let q1 = textbook_quantile(&r, 0.25);
    let q3 = textbook_quantile(&r, 0.75);
    let (lo, hi) = (q1 - 1.5 * (q3 - q1), q3 + 1.5 * (q3 - q1));
    let mut kept = vec![];
    let mut out = vec![];
    for i in survivors {
        if returns[i] >= lo && returns[i] <= hi {
            kept.push(i);
        } else {
            out.push(i);
        }
    }
    (kept, no_zenith, out)
}

/// Synthetic episode: `len` steps with reward `reward`, zenith on the steps
/// listed in `zenith_at` (0-based).
pub fn synthetic_log(seed: u64, len: usize, reward: f64, zenith_at: &[usize]) -> cpsu_distill::EpisodeLog {
    use cpsu_distill::evalstats::EpisodeStep;
    use cpsu_distill::Observation;
    let steps = (0..len)
        .map(|i| EpisodeStep {
            observation: Observation::from_array([i as f64 / len as f64, 0.0, 0.0, 0.0]),
            action: Action::from_index(i % 3).unwrap(),
            reward,
            in_zenith: zenith_at.contains(&i),
        })
        .collect();
    cpsu_distill::EpisodeLog::from_steps(seed, steps, false, len == 1000)
}

fn one_hot(action: usize) -> [f64; 3] {
    let mut d = [0.1, 0.1, 0.1];
    d[action] = 0.8;
    d
}

/// Caterpillar tree whose irreducible form has `splits` decision nodes and
/// `splits + 1` leaves. With `redundant`, every other spine leaf is
/// replaced by a split over two leaves of the same action.
pub fn chain_tree(splits: usize, redundant: bool) -> ObliqueTree {
    let mut nodes = Vec::new();
    let mut spine = Vec::new();
    for i in 0..splits {
        spine.push(nodes.len());
        nodes.push(Node::leaf([1.0, 0.0, 0.0], 0));
        let action = i % 3;
        let left = nodes.len();
        if redundant && i % 2 == 0 {
            nodes.push(Node::leaf([1.0, 0.0, 0.0], 0));
            let a = nodes.len();
            nodes.push(Node::leaf(one_hot(action), 3));
            let b = nodes.len();
            nodes.push(Node::leaf(one_hot(action), 5));
            nodes[left] = Node::Split { weights: [0.0, 1.0, 0.0, 0.0], threshold: 0.0, left: a, right: b };
        } else {
            nodes.push(Node::leaf(one_hot(action), 4));
        }
        nodes[spine[i]] = Node::Split { weights: [1.0, 0.0, 0.0, 0.0], threshold: -1.0 + i as f64 * 1e-3, left, right: 0 };
    }
    let last = nodes.len();
    nodes.push(Node::leaf(one_hot((splits + 1) % 3), 4));
    for i in 0..splits {
        let next = if i + 1 < splits { spine[i + 1] } else { last };
        if let Node::Split { right, .. } = &mut nodes[spine[i]] {
            *right = next;
        }
    }
    let depth = splits + usize::from(redundant);
    ObliqueTree::from_nodes(nodes, depth.max(1), 0).unwrap()
}
