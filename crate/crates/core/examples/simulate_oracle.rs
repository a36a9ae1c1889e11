//! Swing the pendulum up with the energy-shaping oracle and print a coarse
//! trace of the episode.
//!
//! ```text
//! cargo run --release --example simulate_oracle -- [seed]
//! ```

use cpsu_distill::oracle::{EnergyOracle, Policy};
use cpsu_distill::sim::{CartPoleSwingUp, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1);
    let cfg = SimConfig::default();
    let oracle = EnergyOracle::with_defaults(&cfg)?;
    let mut env = CartPoleSwingUp::new(cfg.clone())?;

    println!("upright energy {:.4} J, small-angle period {:.4} s", cfg.upright_energy(), cfg.small_angle_period());
    println!("{:>5} {:>9} {:>10} {:>8} {:>9} {:>6} {:>8}", "step", "u [deg]", "u' [deg/s]", "y [mm]", "y' [mm/s]", "action", "return");

    let mut obs = env.reset(seed);
    let mut ret = 0.0;
    let mut first_zenith = None;
    loop {
        let action = oracle.act(&obs)?;
        let r = env.step(action)?;
        ret += r.reward;
        if r.in_zenith && first_zenith.is_none() {
            first_zenith = Some(env.steps());
        }
        if env.steps() % 25 == 0 || r.done() {
            let s = env.state();
            println!("{:>5} {:>9.2} {:>10.2} {:>8.2} {:>9.2} {:>6} {:>8.1}", env.steps(), s.u, s.u_dot, s.y, s.y_dot, action, ret);
        }
        obs = r.observation;
        if r.done() {
            break;
        }
    }
    println!("return {ret:.2}, first zenith at step {first_zenith:?}");
    Ok(())
}
