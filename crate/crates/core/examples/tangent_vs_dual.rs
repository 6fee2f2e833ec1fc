//! Drive a reservoir along a Lorenz trajectory and compare three ways of
//! getting the reservoir time derivative: the closed-form tangent, dual
//! numbers, and forward differences of the states.
//!
//! cargo run --release --example tangent_vs_dual

use esn_recon::dual::{reservoir_step_dual, Dual};
use esn_recon::experiment::{generate, ExperimentConfig};
use esn_recon::ode::{exact_input_derivative, StateSplit};
use esn_recon::reservoir::{EsnWeights, HyperParams};

fn main() -> esn_recon::Result<()> {
    let cfg = ExperimentConfig::default();
    let traj = generate(&cfg)?.slice(0, 2001);
    let split = StateSplit::new(&[0])?;
    let hp = HyperParams {
        n_reservoir: 300,
        ..Default::default()
    };
    let w = EsnWeights::new(&hp, 1)?;
    let x = split.observed_rows(&traj.states);
    let xd = exact_input_derivative(&traj, &split);
    let run = w.run_teacher_forced(&x, &xd, 100)?;
    let n_r = w.n_reservoir();

    // Replay one step in dual arithmetic from the recorded state.
    let j = run.len() - 2;
    let r_prev: Vec<Dual> = (0..n_r)
        .map(|i| Dual::new(run.aug_states[(i, j)], run.aug_tangents[(i, j)]))
        .collect();
    let input = [Dual::new(x[(0, 100 + j + 1)], xd[(0, 100 + j + 1)])];
    let dual = reservoir_step_dual(&w, &r_prev, &input)?;
    let dual_dev = (0..n_r)
        .map(|i| (dual[i].tangent - run.aug_tangents[(i, j + 1)]).abs())
        .fold(0.0, f64::max);

    let fe = run.forward_euler(traj.dt)?;
    let fe_dev = (0..n_r)
        .map(|i| (fe.aug_tangents[(i, j)] - run.aug_tangents[(i, j)]).abs())
        .fold(0.0, f64::max);
    let scale = run.aug_tangents.rows(0, n_r).amax();

    println!("max |r_dot|                 = {scale:.3e}");
    println!("closed form vs dual numbers = {dual_dev:.3e}");
    println!("closed form vs forward diff = {fe_dev:.3e}");
    Ok(())
}
