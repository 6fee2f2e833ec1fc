use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use esn_recon::experiment::{self, DtMode, ExperimentConfig, Scheme, Testcase};
use esn_recon::Result;

#[derive(Parser)]
#[command(name = "esn-recon", about = "Physics-informed echo state network experiments on the Lorenz system")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the reference trajectory with exact derivatives.
    Generate(Common),
    /// Compare exact and forward-Euler output derivatives (all states observed).
    DerivativeAccuracy(Common),
    /// Reconstruct hidden states by physics-loss training.
    Reconstruct(Common),
    /// Estimate the leading Lyapunov exponent.
    Lyapunov(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single seed, replacing the configured seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated reservoir sizes.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// full, i, ii, iii or custom:1,3
    #[arg(long)]
    testcase: Option<Testcase>,
    /// exact, fe or both
    #[arg(long)]
    scheme: Option<String>,
    /// lt or raw
    #[arg(long)]
    dt_mode: Option<DtMode>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(o) = &self.out {
            cfg.run.out_dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.run.seeds = vec![s];
        }
        if let Some(s) = &self.sizes {
            cfg.run.sizes = s.clone();
        }
        if let Some(t) = &self.testcase {
            cfg.run.testcase = t.clone();
        }
        if let Some(s) = &self.scheme {
            cfg.run.schemes = Scheme::parse_set(s)?;
        }
        if let Some(m) = self.dt_mode {
            cfg.data.dt_mode = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate(c) => {
            let cfg = c.config()?;
            let traj = experiment::generate(&cfg)?;
            let path = experiment::write_trajectory(&cfg, &traj)?;
            println!("wrote {} samples (dt = {:.12}) to {}", traj.len(), cfg.data.dt(), path.display());
            Ok(true)
        }
        Command::DerivativeAccuracy(mut c) => {
            c.testcase.get_or_insert(Testcase::Full);
            let cfg = c.config()?;
            let res = experiment::derivative_accuracy(&cfg)?;
            experiment::write_derivative_accuracy(&cfg, &res)?;
            println!("{:>6} {:>6} {:>12} {:>12} {:>12} {:>10}", "N_r", "seed", "L_FE", "L_AD", "L_Y", "AD/FE");
            for c in &res.cells {
                println!(
                    "{:>6} {:>6} {:>12.4e} {:>12.4e} {:>12.4e} {:>10.2e}",
                    c.reservoir_size,
                    c.seed,
                    c.mean_fe(),
                    c.mean_ad(),
                    c.mean_y(),
                    c.mean_ad() / c.mean_fe()
                );
            }
            Ok(experiment::all_finite(&res.report))
        }
        Command::Reconstruct(c) => {
            let cfg = c.config()?;
            let res = experiment::reconstruct(&cfg)?;
            experiment::write_reconstruction(&cfg, &res)?;
            for cell in &res.cells {
                for (k, &i) in cell.split.hidden().iter().enumerate() {
                    println!(
                        "N_r={:<5} seed={:<3} scheme={:<5} {}: NRMSE train {:.4e} test {:.4e}{}",
                        cell.reservoir_size,
                        cell.seed,
                        cell.scheme.name(),
                        experiment::component_name(i),
                        cell.nrmse_train(k)?,
                        cell.nrmse_test(k)?,
                        if cell.outcome.converged() { "" } else { " (max steps reached)" }
                    );
                }
            }
            Ok(experiment::all_finite(&res.report))
        }
        Command::Lyapunov(c) => {
            let cfg = c.config()?;
            let rep = experiment::lyapunov(&cfg)?;
            println!("lambda = {:.6}", rep.estimate.exponent);
            println!("lyapunov_time = {:.6}", rep.estimate.lyapunov_time());
            println!("dt_lt = {:.9}", rep.dt_lt);
            Ok(rep.estimate.exponent.is_finite() || rep.estimate.exponent == f64::NEG_INFINITY)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: non-finite values in results");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
