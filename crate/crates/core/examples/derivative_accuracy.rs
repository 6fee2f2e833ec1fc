//! Fit a full-state readout by ridge regression and compare its exact time
//! derivative with the forward-Euler estimate across reservoir sizes.
//!
//! cargo run --release --example derivative_accuracy

use esn_recon::experiment::{derivative_accuracy, ExperimentConfig, Testcase};

fn main() -> esn_recon::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.run.testcase = Testcase::Full;
    cfg.run.sizes = vec![100, 300, 1000];
    let res = derivative_accuracy(&cfg)?;
    println!("{:>6} {:>12} {:>12} {:>12}", "N_r", "L_FE", "L_AD", "L_Y");
    for c in &res.cells {
        println!(
            "{:>6} {:>12.4e} {:>12.4e} {:>12.4e}",
            c.reservoir_size,
            c.mean_fe(),
            c.mean_ad(),
            c.mean_y()
        );
    }
    Ok(())
}
