//! Estimate the leading Lyapunov exponent with two nearby trajectories and
//! derive the sampling step of 0.01 Lyapunov times.
//!
//! cargo run --release --example lyapunov_time

use esn_recon::ode::{estimate_lyapunov, LyapunovOptions, SystemParams};

fn main() -> esn_recon::Result<()> {
    let sys = SystemParams::default();
    let est = estimate_lyapunov(&sys, &LyapunovOptions::default())?;
    println!("lambda          = {:.6}", est.exponent);
    println!("half-run spread = {:.2e}", est.spread);
    println!("lyapunov time   = {:.6}", est.lyapunov_time());
    println!("dt (0.01 LT)    = {:.9}", 0.01 * est.lyapunov_time());

    // Larger rho pushes the system further into chaos.
    for rho in [24.0, 28.0, 35.0, 45.0] {
        let sys = SystemParams { rho, ..sys };
        let est = estimate_lyapunov(&sys, &LyapunovOptions::default())?;
        println!("rho = {rho:>4}: lambda = {:.4}", est.exponent);
    }
    Ok(())
}
