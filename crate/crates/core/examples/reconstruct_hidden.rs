//! Observe phi1 and phi3 of the Lorenz system, reconstruct phi2 by training
//! the hidden readout rows on the physics residual, and compare the exact
//! tangent against forward-Euler derivatives.
//!
//! cargo run --release --example reconstruct_hidden [N_r]

use esn_recon::experiment::{drive_reservoir, generate, reconstruct_driven, ExperimentConfig, Scheme, Testcase};

fn main() -> esn_recon::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(400);
    let mut cfg = ExperimentConfig::default();
    cfg.run.testcase = Testcase::I;
    let traj = generate(&cfg)?;
    let split = cfg.run.testcase.split()?;
    let driven = drive_reservoir(&traj, &cfg.data, &cfg.hyper_params(n, 0), &split)?;
    for scheme in [Scheme::Exact, Scheme::ForwardEuler] {
        let rec = reconstruct_driven(&cfg, &driven, n, 0, scheme)?;
        println!(
            "{:>5}: phi2 NRMSE train {:.3e} test {:.3e}, loss {:.3e} -> {:.3e} in {} steps",
            scheme.name(),
            rec.nrmse_train(0)?,
            rec.nrmse_test(0)?,
            rec.initial_loss,
            rec.outcome.best_loss,
            rec.outcome.history.len()
        );
    }
    Ok(())
}
