//! Ridge regression of a readout on reservoir states, showing how the
//! Tikhonov parameter trades training fit for weight norm.
//!
//! cargo run --release --example ridge_readout

use esn_recon::experiment::{drive_reservoir, generate, DataConfig, ExperimentConfig};
use esn_recon::metrics::nrmse;
use esn_recon::ode::StateSplit;
use esn_recon::training::ridge_solve;

fn main() -> esn_recon::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.data = DataConfig {
        n_train: 3000,
        n_test: 1000,
        ..Default::default()
    };
    let traj = generate(&cfg)?;
    let split = StateSplit::full();
    let driven = drive_reservoir(&traj, &cfg.data, &cfg.hyper_params(300, 0), &split)?;
    println!("{:>8} {:>12} {:>12} {:>12}", "gamma", "train NRMSE", "test NRMSE", "|W_out|");
    for gamma in [1e-10, 1e-6, 1e-2, 1e2] {
        let w_out = ridge_solve(&driven.train.aug_states, &driven.train_targets, gamma)?;
        let fit = |run: &esn_recon::reservoir::ReservoirRun, t: &nalgebra::DMatrix<f64>| {
            let y = run.outputs(&w_out);
            nrmse(
                y.row(1).transpose().as_slice(),
                t.row(1).transpose().as_slice(),
            )
        };
        println!(
            "{gamma:>8.0e} {:>12.3e} {:>12.3e} {:>12.3e}",
            fit(&driven.train, &driven.train_targets)?,
            fit(&driven.test, &driven.test_targets)?,
            w_out.norm()
        );
    }
    Ok(())
}
