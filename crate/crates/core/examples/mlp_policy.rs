//! Q-network inference: build a seeded 4-64-64-3 tanh network, save it in
//! the JSON weight format, load it back and run it as a policy.

use cpsu_distill::evalstats::{evaluate_policy, summarize};
use cpsu_distill::oracle::{MlpPolicy, Policy};
use cpsu_distill::sim::{Observation, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = MlpPolicy::random(&[4, 64, 64, 3], 42)?;
    println!("{} trainable parameters", net.count_params());

    let dir = std::env::temp_dir().join("cpsu-mlp-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("qnet.json");
    net.save(&path)?;
    let loaded = MlpPolicy::load(&path)?;
    assert_eq!(loaded, net);
    println!("round-tripped weights through {}", path.display());

    let obs = Observation { u_norm: 0.5, u_dot_obs: -1.0, y_norm: 0.1, y_dot_obs: 0.0 };
    let q = loaded.q_values(&obs)?;
    println!("Q({obs:?}) = [{:.4}, {:.4}, {:.4}] -> {}", q[0], q[1], q[2], loaded.act(&obs)?);

    let s = summarize(&evaluate_policy(&loaded, &SimConfig::default(), 5, 0)?).expect("episodes");
    println!("untrained network: mean return {:.2} over {} episodes", s.mean, s.n);
    Ok(())
}
