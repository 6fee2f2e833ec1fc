//! Integrate the Lorenz system onto its attractor and print a few samples
//! with their exact time derivatives.
//!
//! cargo run --release --example lorenz_trajectory

use esn_recon::experiment::{generate, ExperimentConfig};

fn main() -> esn_recon::Result<()> {
    let cfg = ExperimentConfig::default();
    let traj = generate(&cfg)?;
    println!("{} samples, dt = {:.9}", traj.len(), traj.dt);
    println!("{:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}", "t", "phi1", "phi2", "phi3", "dphi1", "dphi2", "dphi3");
    for j in (0..traj.len()).step_by(2000) {
        let y = traj.state(j);
        let d = traj.derivs.column(j);
        println!(
            "{:>10.3} {:>10.4} {:>10.4} {:>10.4} {:>10.3} {:>10.3} {:>10.3}",
            traj.time(j),
            y[0],
            y[1],
            y[2],
            d[0],
            d[1],
            d[2]
        );
    }
    let mut stdout = std::io::stdout().lock();
    traj.slice(0, 3).write_csv(&mut stdout, Some("first three samples"))?;
    Ok(())
}
