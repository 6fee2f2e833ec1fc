//! Experiment drivers behind the command-line verbs: data generation,
//! derivative accuracy, hidden-state reconstruction and Lyapunov
//! calibration. Every driver returns its results in memory; the `write_*`
//! helpers persist them as CSV.

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{self, HistogramRow, MetricsReport};
use crate::ode::{self, Dynamics, LyapunovEstimate, LyapunovOptions, StateSplit, SystemParams, Trajectory};
use crate::reservoir::{fe_output_derivative, write_dense_csv, EsnWeights, HyperParams, ReservoirRun};
use crate::training::{self, LossRecord, StopReason, TrainConfig, TrainOutcome};

/// Leading Lyapunov exponent of the default Lorenz system, used to convert
/// the sampling step from Lyapunov times to model time.
pub const LORENZ_EXPONENT: f64 = 0.906;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DtMode {
    /// `dt = 0.01 / exponent` (0.01 Lyapunov times).
    Lt,
    /// `dt = 0.01` model-time units.
    Raw,
}

impl FromStr for DtMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lt" => Ok(DtMode::Lt),
            "raw" => Ok(DtMode::Raw),
            _ => Err(Error::Config(format!("unknown dt mode '{s}' (expected lt or raw)"))),
        }
    }
}

/// Which components are observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Testcase {
    /// Everything observed.
    Full,
    /// Observe phi1, phi3; reconstruct phi2.
    I,
    /// Observe phi1, phi2; reconstruct phi3.
    II,
    /// Observe phi1; reconstruct phi2, phi3.
    III,
    /// Observed 0-based state indices.
    Custom(Vec<usize>),
}

impl Testcase {
    pub fn split(&self) -> Result<StateSplit> {
        match self {
            Testcase::Full => Ok(StateSplit::full()),
            Testcase::I => StateSplit::new(&[0, 2]),
            Testcase::II => StateSplit::new(&[0, 1]),
            Testcase::III => StateSplit::new(&[0]),
            Testcase::Custom(obs) => StateSplit::new(obs),
        }
    }
}

impl fmt::Display for Testcase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Testcase::Full => write!(f, "full"),
            Testcase::I => write!(f, "i"),
            Testcase::II => write!(f, "ii"),
            Testcase::III => write!(f, "iii"),
            Testcase::Custom(obs) => {
                let names: Vec<String> = obs.iter().map(|i| (i + 1).to_string()).collect();
                write!(f, "custom:{}", names.join(","))
            }
        }
    }
}

impl FromStr for Testcase {
    type Err = Error;
    /// `full`, `i`, `ii`, `iii`, or `custom:1,3` (1-based phi indices).
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Testcase::Full),
            "i" => Ok(Testcase::I),
            "ii" => Ok(Testcase::II),
            "iii" => Ok(Testcase::III),
            _ => {
                let list = s
                    .strip_prefix("custom:")
                    .ok_or_else(|| Error::Config(format!("unknown testcase '{s}'")))?;
                let obs = list
                    .split(',')
                    .map(|t| match t.trim().parse::<usize>() {
                        Ok(i) if i >= 1 => Ok(i - 1),
                        _ => Err(Error::Config(format!("bad component '{t}' in testcase '{s}'"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                StateSplit::new(&obs)?;
                Ok(Testcase::Custom(obs))
            }
        }
    }
}

impl Serialize for Testcase {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Testcase {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How the output time derivative is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    /// Tangent propagated through the reservoir recurrence.
    #[serde(rename = "exact")]
    Exact,
    /// First-order forward difference of consecutive outputs.
    #[serde(rename = "fe")]
    ForwardEuler,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Exact => "exact",
            Scheme::ForwardEuler => "fe",
        }
    }

    /// Parses `exact`, `fe` or `both`.
    pub fn parse_set(s: &str) -> Result<Vec<Scheme>> {
        match s {
            "exact" => Ok(vec![Scheme::Exact]),
            "fe" => Ok(vec![Scheme::ForwardEuler]),
            "both" => Ok(vec![Scheme::Exact, Scheme::ForwardEuler]),
            _ => Err(Error::Config(format!("unknown scheme '{s}' (expected exact, fe or both)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dt_mode: DtMode,
    /// Exponent used by `dt_mode = "lt"`.
    pub lyapunov_exponent: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub washout: usize,
    /// Output steps integrated and discarded before recording.
    pub transient: usize,
    pub substeps: usize,
    pub y0: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dt_mode: DtMode::Lt,
            lyapunov_exponent: LORENZ_EXPONENT,
            n_train: 10_000,
            n_test: 10_000,
            washout: 100,
            transient: 1000,
            substeps: 4,
            y0: [1.0, 1.0, 1.0],
        }
    }
}

impl DataConfig {
    pub fn dt(&self) -> f64 {
        match self.dt_mode {
            DtMode::Lt => 0.01 / self.lyapunov_exponent,
            DtMode::Raw => 0.01,
        }
    }

    /// Samples produced by [`generate`]: washout, training, test and the
    /// final target sample.
    pub fn n_samples(&self) -> usize {
        self.washout + self.n_train + self.n_test + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub testcase: Testcase,
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub schemes: Vec<Scheme>,
    pub n_bins: usize,
    pub out_dir: PathBuf,
    /// Also dump `w_in.csv`, `w.csv`, `w_out.csv` per grid cell.
    pub export_weights: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            testcase: Testcase::I,
            sizes: vec![100, 200, 400, 600, 800, 1000],
            seeds: vec![0],
            schemes: vec![Scheme::Exact, Scheme::ForwardEuler],
            n_bins: 50,
            out_dir: PathBuf::from("out"),
            export_weights: false,
        }
    }
}

/// Complete experiment description. An empty TOML document yields the
/// default Lorenz setup.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemParams,
    pub data: DataConfig,
    /// `n_reservoir` and `seed` are overridden per grid cell.
    pub reservoir: HyperParams,
    pub train: TrainConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.train.validate()?;
        self.run.testcase.split()?;
        if self.run.sizes.is_empty() || self.run.sizes.contains(&0) {
            return Err(Error::Config("sizes must be a non-empty list of positive counts".into()));
        }
        if self.run.seeds.is_empty() {
            return Err(Error::Config("at least one seed required".into()));
        }
        if self.run.schemes.is_empty() {
            return Err(Error::Config("at least one scheme required".into()));
        }
        if self.data.n_train < 2 || self.data.substeps == 0 {
            return Err(Error::Config("n_train must be at least 2 and substeps at least 1".into()));
        }
        if !(self.data.lyapunov_exponent > 0.0) {
            return Err(Error::Config("lyapunov_exponent must be positive".into()));
        }
        for &n in &self.run.sizes {
            self.hyper_params(n, 0).validate()?;
        }
        Ok(())
    }

    pub fn hyper_params(&self, n_reservoir: usize, seed: u64) -> HyperParams {
        HyperParams {
            n_reservoir,
            seed,
            ..self.reservoir
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form. The
    /// output directory is left out so relocated runs hash the same.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.run.out_dir = PathBuf::new();
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    fn comment(&self, seed: Option<u64>) -> String {
        match seed {
            Some(s) => format!("config_hash={} seed={s}", self.hash()),
            None => {
                let seeds: Vec<String> = self.run.seeds.iter().map(|s| s.to_string()).collect();
                format!("config_hash={} seeds={}", self.hash(), seeds.join(";"))
            }
        }
    }
}

/// Reference trajectory of `washout + n_train + n_test + 1` samples on the
/// attractor.
pub fn generate(cfg: &ExperimentConfig) -> Result<Trajectory> {
    let d = &cfg.data;
    let y0 = Vector3::from(d.y0);
    ode::integrate_on_attractor(&cfg.system, &y0, d.dt(), d.transient, d.n_samples() - 1, d.substeps)
}

/// Reservoir driven by the observed data, with aligned targets.
///
/// Recorded column `c` is produced by input sample `washout + c`; its
/// readout target is the state one sample later.
pub struct DrivenReservoir {
    pub weights: EsnWeights,
    pub split: StateSplit,
    pub train: ReservoirRun,
    pub test: ReservoirRun,
    /// Full-state targets in output order `[x; h]`, training columns.
    pub train_targets: DMatrix<f64>,
    pub test_targets: DMatrix<f64>,
}

pub fn drive_reservoir(
    traj: &Trajectory,
    data: &DataConfig,
    hp: &HyperParams,
    split: &StateSplit,
) -> Result<DrivenReservoir> {
    let n_in = data.washout + data.n_train + data.n_test;
    if traj.len() < n_in + 1 {
        return Err(Error::TooShort {
            needed: n_in + 1,
            got: traj.len(),
        });
    }
    let weights = EsnWeights::new(hp, split.n_x())?;
    let inputs = split.observed_rows(&traj.states.columns(0, n_in).into_owned());
    let input_derivs = ode::exact_input_derivative(&traj.slice(0, n_in), split);
    let run = weights.run_teacher_forced(&inputs, &input_derivs, data.washout)?;
    let order = split.output_order();
    let targets = traj
        .states
        .columns(data.washout + 1, data.n_train + data.n_test)
        .select_rows(order.iter());
    Ok(DrivenReservoir {
        train: run.columns(0, data.n_train),
        test: run.columns(data.n_train, data.n_train + data.n_test),
        train_targets: targets.columns(0, data.n_train).into_owned(),
        test_targets: targets.columns(data.n_train, data.n_test).into_owned(),
        weights,
        split: split.clone(),
    })
}

fn output_rhs<D: Dynamics>(sys: &D, order: &[usize], yhat: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(3, yhat.ncols());
    for j in 0..yhat.ncols() {
        let mut s = Vector3::zeros();
        for (k, &i) in order.iter().enumerate() {
            s[i] = yhat[(k, j)];
        }
        let f = sys.rhs(&s);
        for (k, &i) in order.iter().enumerate() {
            out[(k, j)] = f[i];
        }
    }
    out
}

/// Per-step squared errors of one full-state readout.
#[derive(Debug, Clone)]
pub struct DerivativeAccuracy {
    pub reservoir_size: usize,
    pub seed: u64,
    /// Forward-Euler derivative vs `f(y_hat)`, one shorter than the others.
    pub l_fe: Vec<f64>,
    /// Exact derivative vs `f(y_hat)`.
    pub l_ad: Vec<f64>,
    /// Output vs data.
    pub l_y: Vec<f64>,
}

impl DerivativeAccuracy {
    pub fn mean_fe(&self) -> f64 {
        metrics::mean(&self.l_fe)
    }

    pub fn mean_ad(&self) -> f64 {
        metrics::mean(&self.l_ad)
    }

    pub fn mean_y(&self) -> f64 {
        metrics::mean(&self.l_y)
    }
}

/// Full-state ridge readout for one reservoir, compared against the
/// governing equations with both derivative schemes.
pub fn derivative_accuracy_cell(
    cfg: &ExperimentConfig,
    traj: &Trajectory,
    n_reservoir: usize,
    seed: u64,
) -> Result<DerivativeAccuracy> {
    let split = StateSplit::full();
    let hp = cfg.hyper_params(n_reservoir, seed);
    let driven = drive_reservoir(traj, &cfg.data, &hp, &split)?;
    let w_out = training::ridge_solve(&driven.train.aug_states, &driven.train_targets, hp.tikhonov)?;
    let yhat = driven.train.outputs(&w_out);
    let order = split.output_order();
    let f_hat = output_rhs(&cfg.system, &order, &yhat);
    let ad = driven.train.output_derivatives(&w_out);
    let fe = fe_output_derivative(&yhat, cfg.data.dt())?;
    let n = yhat.ncols();
    Ok(DerivativeAccuracy {
        reservoir_size: n_reservoir,
        seed,
        l_fe: metrics::squared_error_series(&fe, &f_hat.columns(0, n - 1).into_owned())?,
        l_ad: metrics::squared_error_series(&ad, &f_hat)?,
        l_y: metrics::squared_error_series(&yhat, &driven.train_targets)?,
    })
}

pub struct DerivativeAccuracyResult {
    pub cells: Vec<DerivativeAccuracy>,
    pub report: MetricsReport,
}

/// Runs every `(size, seed)` cell with all components observed.
pub fn derivative_accuracy(cfg: &ExperimentConfig) -> Result<DerivativeAccuracyResult> {
    cfg.validate()?;
    let traj = generate(cfg)?;
    let mut cells = Vec::new();
    let mut report = MetricsReport::default();
    for &n in &cfg.run.sizes {
        for &seed in &cfg.run.seeds {
            let cell = derivative_accuracy_cell(cfg, &traj, n, seed)?;
            let set = format!("train:seed{seed}");
            report.push("mean_sq_derivative_error", "y", &set, n, "exact", cell.mean_ad());
            report.push("mean_sq_derivative_error", "y", &set, n, "fe", cell.mean_fe());
            report.push("mean_sq_output_error", "y", &set, n, "shared", cell.mean_y());
            cells.push(cell);
        }
    }
    Ok(DerivativeAccuracyResult { cells, report })
}

/// Trained network and its hidden-state estimates for one grid cell.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub reservoir_size: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub split: StateSplit,
    pub outcome: TrainOutcome,
    pub initial_loss: f64,
    /// Hidden rows of the readout output vs truth, `N_h × N` each.
    pub train_estimate: DMatrix<f64>,
    pub train_truth: DMatrix<f64>,
    pub test_estimate: DMatrix<f64>,
    pub test_truth: DMatrix<f64>,
    pub w_out: DMatrix<f64>,
}

impl Reconstruction {
    /// NRMSE of hidden component `k` (index into `split.hidden()`).
    pub fn nrmse_train(&self, k: usize) -> Result<f64> {
        metrics::nrmse(
            self.train_estimate.row(k).transpose().as_slice(),
            self.train_truth.row(k).transpose().as_slice(),
        )
    }

    pub fn nrmse_test(&self, k: usize) -> Result<f64> {
        metrics::nrmse(
            self.test_estimate.row(k).transpose().as_slice(),
            self.test_truth.row(k).transpose().as_slice(),
        )
    }

    /// Position of state component `state_index` among the hidden rows.
    pub fn hidden_position(&self, state_index: usize) -> Option<usize> {
        self.split.hidden().iter().position(|&i| i == state_index)
    }
}

/// Ridge initialisation followed by physics-loss training of the hidden
/// rows for one `(size, seed, scheme)` cell.
pub fn reconstruct_cell(
    cfg: &ExperimentConfig,
    traj: &Trajectory,
    n_reservoir: usize,
    seed: u64,
    scheme: Scheme,
) -> Result<Reconstruction> {
    let split = cfg.run.testcase.split()?;
    if split.n_h() == 0 {
        return Err(Error::Config("reconstruction needs at least one hidden component".into()));
    }
    let hp = cfg.hyper_params(n_reservoir, seed);
    let driven = drive_reservoir(traj, &cfg.data, &hp, &split)?;
    reconstruct_driven(cfg, &driven, n_reservoir, seed, scheme)
}

/// As [`reconstruct_cell`], reusing an already driven reservoir.
pub fn reconstruct_driven(
    cfg: &ExperimentConfig,
    driven: &DrivenReservoir,
    n_reservoir: usize,
    seed: u64,
    scheme: Scheme,
) -> Result<Reconstruction> {
    let split = &driven.split;
    let n_x = split.n_x();
    let n_h = split.n_h();
    let x_targets = driven.train_targets.rows(0, n_x).into_owned();
    let init = training::init_output_matrix(&driven.train, &x_targets, n_h, cfg.reservoir.tikhonov, cfg.train.hbar)?;
    let fe_run;
    let train_run = match scheme {
        Scheme::Exact => &driven.train,
        Scheme::ForwardEuler => {
            fe_run = driven.train.forward_euler(cfg.data.dt())?;
            &fe_run
        }
    };
    let objective = training::physics_objective(&init, train_run, &cfg.system, split)?;
    let initial_loss = objective.loss(&init.hidden_rows());
    let outcome = training::train_hidden_rows(&init, objective.as_ref(), &cfg.train)?;
    let w_out = outcome.partition.w_out().clone();
    let hidden = outcome.partition.hidden_rows();
    Ok(Reconstruction {
        reservoir_size: n_reservoir,
        seed,
        scheme,
        split: split.clone(),
        initial_loss,
        train_estimate: &hidden * &driven.train.aug_states,
        train_truth: driven.train_targets.rows(n_x, n_h).into_owned(),
        test_estimate: &hidden * &driven.test.aug_states,
        test_truth: driven.test_targets.rows(n_x, n_h).into_owned(),
        w_out,
        outcome,
    })
}

pub fn component_name(state_index: usize) -> String {
    format!("phi{}", state_index + 1)
}

pub struct ReconstructionResult {
    pub cells: Vec<Reconstruction>,
    pub report: MetricsReport,
}

/// Runs the `(size, seed, scheme)` grid of the configured testcase.
pub fn reconstruct(cfg: &ExperimentConfig) -> Result<ReconstructionResult> {
    cfg.validate()?;
    let split = cfg.run.testcase.split()?;
    if split.n_h() == 0 {
        return Err(Error::Config("reconstruction needs at least one hidden component".into()));
    }
    let traj = generate(cfg)?;
    let mut cells = Vec::new();
    let mut report = MetricsReport::default();
    for &n in &cfg.run.sizes {
        for &seed in &cfg.run.seeds {
            let driven = drive_reservoir(&traj, &cfg.data, &cfg.hyper_params(n, seed), &split)?;
            for &scheme in &cfg.run.schemes {
                let cell = reconstruct_driven(cfg, &driven, n, seed, scheme)?;
                report.extend(cell_report(&cell, cfg.run.n_bins)?);
                cells.push(cell);
            }
        }
    }
    Ok(ReconstructionResult { cells, report })
}

fn cell_report(cell: &Reconstruction, n_bins: usize) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    let n = cell.reservoir_size;
    let scheme = cell.scheme.name();
    let tag = format!("seed{}", cell.seed);
    for (k, &i) in cell.split.hidden().iter().enumerate() {
        let var = component_name(i);
        for (set, est, truth) in [
            ("train", &cell.train_estimate, &cell.train_truth),
            ("test", &cell.test_estimate, &cell.test_truth),
        ] {
            let est: Vec<f64> = est.row(k).iter().copied().collect();
            let truth: Vec<f64> = truth.row(k).iter().copied().collect();
            let set_tag = format!("{set}:{tag}");
            report.push("nrmse", &var, &set_tag, n, scheme, metrics::nrmse(&est, &truth)?);
            let h = metrics::pdf_histograms_shared(&[&truth, &est], n_bins)?;
            report.push("pdf_l1", &var, &set_tag, n, scheme, h[0].l1_distance(&h[1])?);
            let [truth_h, est_h]: [_; 2] = h.try_into().expect("two histograms");
            report.histograms.push(HistogramRow {
                variable: var.clone(),
                set: format!("{set}:truth:nr{n}:{tag}:{scheme}"),
                histogram: truth_h,
            });
            report.histograms.push(HistogramRow {
                variable: var.clone(),
                set: format!("{set}:estimate:nr{n}:{tag}:{scheme}"),
                histogram: est_h,
            });
        }
    }
    let set_tag = format!("train:{tag}");
    report.push("physics_loss_initial", "h", &set_tag, n, scheme, cell.initial_loss);
    report.push("physics_loss_final", "h", &set_tag, n, scheme, cell.outcome.best_loss);
    report.push("train_steps", "h", &set_tag, n, scheme, cell.outcome.history.len() as f64);
    report.push(
        "converged",
        "h",
        &set_tag,
        n,
        scheme,
        if cell.outcome.converged() { 1.0 } else { 0.0 },
    );
    Ok(report)
}

#[derive(Debug, Clone, Copy)]
pub struct LyapunovReport {
    pub estimate: LyapunovEstimate,
    /// `0.01 / exponent`, the model-time step of 0.01 Lyapunov times.
    pub dt_lt: f64,
}

pub fn lyapunov(cfg: &ExperimentConfig) -> Result<LyapunovReport> {
    cfg.system.validate()?;
    let estimate = ode::estimate_lyapunov(&cfg.system, &LyapunovOptions::default())?;
    Ok(LyapunovReport {
        estimate,
        dt_lt: 0.01 * estimate.lyapunov_time(),
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes `trajectory.csv` and returns its path.
pub fn write_trajectory(cfg: &ExperimentConfig, traj: &Trajectory) -> Result<PathBuf> {
    let dir = &cfg.run.out_dir;
    let comment = format!(
        "{} washout={} train={} test={}",
        cfg.comment(None),
        cfg.data.washout,
        cfg.data.n_train,
        cfg.data.n_test
    );
    traj.write_csv(create(dir, "trajectory.csv")?, Some(&comment))?;
    Ok(dir.join("trajectory.csv"))
}

/// Writes `derivative_metrics.csv` and one `derivative_series_nr{N}_seed{S}.csv`
/// per cell (`step,l_fe,l_ad,l_y`).
pub fn write_derivative_accuracy(cfg: &ExperimentConfig, res: &DerivativeAccuracyResult) -> Result<()> {
    use std::io::Write;
    let dir = &cfg.run.out_dir;
    res.report
        .write_csv(create(dir, "derivative_metrics.csv")?, Some(&cfg.comment(None)))?;
    for c in &res.cells {
        let mut f = create(dir, &format!("derivative_series_nr{}_seed{}.csv", c.reservoir_size, c.seed))?;
        writeln!(f, "# {}", cfg.comment(Some(c.seed)))?;
        writeln!(f, "step,l_fe,l_ad,l_y")?;
        for j in 0..c.l_ad.len() {
            let fe = c.l_fe.get(j).map(|v| format!("{v:.16e}")).unwrap_or_default();
            writeln!(f, "{j},{fe},{:.16e},{:.16e}", c.l_ad[j], c.l_y[j])?;
        }
        f.flush()?;
    }
    Ok(())
}

/// Writes `metrics.csv`, `histograms.csv`, and per cell the loss history
/// (`step,lr,loss`) and reconstructed series.
pub fn write_reconstruction(cfg: &ExperimentConfig, res: &ReconstructionResult) -> Result<()> {
    use std::io::Write;
    let dir = &cfg.run.out_dir;
    let comment = cfg.comment(None);
    res.report.write_csv(create(dir, "metrics.csv")?, Some(&comment))?;
    res.report
        .write_histograms_csv(create(dir, "histograms.csv")?, Some(&comment))?;
    for c in &res.cells {
        let stem = format!("{}_nr{}_seed{}", c.scheme.name(), c.reservoir_size, c.seed);
        let comment = cfg.comment(Some(c.seed));
        write_loss_history(create(dir, &format!("loss_{stem}.csv"))?, &c.outcome.history, &comment)?;

        let mut f = create(dir, &format!("series_{stem}.csv"))?;
        writeln!(f, "# {comment}")?;
        let names: Vec<String> = c.split.hidden().iter().map(|&i| component_name(i)).collect();
        let header: Vec<String> = names
            .iter()
            .flat_map(|n| [format!("{n}_true"), format!("{n}_est")])
            .collect();
        writeln!(f, "set,index,{}", header.join(","))?;
        for (set, est, truth) in [
            ("train", &c.train_estimate, &c.train_truth),
            ("test", &c.test_estimate, &c.test_truth),
        ] {
            for j in 0..est.ncols() {
                write!(f, "{set},{j}")?;
                for k in 0..est.nrows() {
                    write!(f, ",{:.16e},{:.16e}", truth[(k, j)], est[(k, j)])?;
                }
                writeln!(f)?;
            }
        }
        f.flush()?;

        if cfg.run.export_weights {
            let wdir = dir.join(format!("weights_{stem}"));
            let hp = cfg.hyper_params(c.reservoir_size, c.seed);
            EsnWeights::new(&hp, c.split.n_x())?.write_csv(&wdir, Some(&c.w_out))?;
        }
    }
    Ok(())
}

pub fn write_loss_history<W: std::io::Write>(mut out: W, history: &[LossRecord], comment: &str) -> Result<()> {
    writeln!(out, "# {comment}")?;
    writeln!(out, "step,lr,loss")?;
    for r in history {
        writeln!(out, "{},{:.16e},{:.16e}", r.step, r.lr, r.loss)?;
    }
    out.flush()?;
    Ok(())
}

/// Dense readout dump helper for callers that hold only a matrix.
pub fn write_w_out(path: &Path, w_out: &DMatrix<f64>) -> Result<()> {
    write_dense_csv(BufWriter::new(File::create(path)?), w_out)?;
    Ok(())
}

/// True when every metric value is finite.
pub fn all_finite(report: &MetricsReport) -> bool {
    report.rows.iter().all(|r| r.value.is_finite())
}

/// Whether any cell stopped at `max_steps` instead of decaying to the
/// learning-rate floor.
pub fn any_unconverged(res: &ReconstructionResult) -> bool {
    res.cells.iter().any(|c| c.outcome.stop == StopReason::MaxSteps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.data.n_samples(), 20_101);
        assert!((cfg.data.dt() - 0.01 / 0.906).abs() < 1e-15);
    }

    #[test]
    fn config_round_trip_and_overrides() {
        let text = r#"
            [data]
            dt_mode = "raw"
            n_train = 500

            [reservoir]
            avg_degree = 5.0

            [run]
            testcase = "custom:1,3"
            sizes = [50]
            schemes = ["fe"]
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.data.dt(), 0.01);
        assert_eq!(cfg.run.testcase, Testcase::Custom(vec![0, 2]));
        assert_eq!(cfg.run.schemes, vec![Scheme::ForwardEuler]);
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
        assert_ne!(cfg.hash(), ExperimentConfig::default().hash());
        let mut moved = cfg.clone();
        moved.run.out_dir = "elsewhere".into();
        assert_eq!(moved.hash(), cfg.hash());
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(ExperimentConfig::from_toml("[run]\nsizes = []").is_err());
        assert!(ExperimentConfig::from_toml("[run]\ntestcase = \"iv\"").is_err());
        assert!(ExperimentConfig::from_toml("[run]\ntestcase = \"custom:1,1\"").is_err());
        assert!(ExperimentConfig::from_toml("[run]\nschemes = []").is_err());
        assert!(ExperimentConfig::from_toml("[data]\nbogus = 1").is_err());
        // avg_degree 20 exceeds a 10-neuron reservoir.
        assert!(ExperimentConfig::from_toml("[run]\nsizes = [10]").is_err());
    }

    #[test]
    fn testcase_splits() {
        assert_eq!(Testcase::I.split().unwrap().hidden(), &[1]);
        assert_eq!(Testcase::II.split().unwrap().hidden(), &[2]);
        assert_eq!(Testcase::III.split().unwrap().hidden(), &[1, 2]);
        assert_eq!(Testcase::Full.split().unwrap().n_h(), 0);
        assert_eq!("iii".parse::<Testcase>().unwrap(), Testcase::III);
        assert_eq!(Scheme::parse_set("both").unwrap().len(), 2);
        assert!(Scheme::parse_set("rk").is_err());
    }
}
