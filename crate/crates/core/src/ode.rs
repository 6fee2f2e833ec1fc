//! Lorenz dynamics, reference trajectories and Lyapunov-time calibration.
//!
//! Trajectories are produced by fixed-step classical Runge–Kutta with a
//! configurable number of internal substeps per output sample. The stored
//! derivative of each sample is recomputed from the right-hand side on the
//! stored state, never differenced from neighbouring samples.

use std::io::Write;

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};

pub type State = Vector3<f64>;

/// Autonomous three-dimensional vector field with its Jacobian.
pub trait Dynamics {
    fn rhs(&self, y: &State) -> State;

    fn jacobian(&self, y: &State) -> Matrix3<f64>;

    /// True when the vector field is affine in the components listed in
    /// `indices` once all other components are held fixed, i.e. the
    /// Jacobian columns for `indices` do not depend on those components.
    fn affine_in(&self, _indices: &[usize]) -> bool {
        false
    }
}

/// Lorenz system parameters `(sigma, beta, rho)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SystemParams {
    pub sigma: f64,
    pub beta: f64,
    pub rho: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            beta: 8.0 / 3.0,
            rho: 28.0,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        if [self.sigma, self.beta, self.rho].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "Lorenz parameters must be finite, got {self:?}"
            )))
        }
    }
}

impl Dynamics for SystemParams {
    fn rhs(&self, y: &State) -> State {
        Vector3::new(
            self.sigma * (y[1] - y[0]),
            y[0] * (self.rho - y[2]) - y[1],
            y[0] * y[1] - self.beta * y[2],
        )
    }

    fn jacobian(&self, y: &State) -> Matrix3<f64> {
        Matrix3::new(
            -self.sigma, self.sigma, 0.0,
            self.rho - y[2], -1.0, -y[0],
            y[1], y[0], -self.beta,
        )
    }

    fn affine_in(&self, indices: &[usize]) -> bool {
        // The only nonlinear terms are phi1*phi3 and phi1*phi2.
        let has = |i| indices.contains(&i);
        !(has(0) && (has(1) || has(2)))
    }
}

/// `dy/dt = -rate * y`, a contracting linear system.
#[derive(Debug, Clone, Copy)]
pub struct LinearDecay {
    pub rate: f64,
}

impl Dynamics for LinearDecay {
    fn rhs(&self, y: &State) -> State {
        -self.rate * y
    }

    fn jacobian(&self, _y: &State) -> Matrix3<f64> {
        -self.rate * Matrix3::identity()
    }

    fn affine_in(&self, _indices: &[usize]) -> bool {
        true
    }
}

/// Runs `inner` with its time axis compressed by `factor`.
#[derive(Debug, Clone, Copy)]
pub struct TimeScaled<D> {
    pub inner: D,
    pub factor: f64,
}

impl<D: Dynamics> Dynamics for TimeScaled<D> {
    fn rhs(&self, y: &State) -> State {
        self.factor * self.inner.rhs(y)
    }

    fn jacobian(&self, y: &State) -> Matrix3<f64> {
        self.factor * self.inner.jacobian(y)
    }

    fn affine_in(&self, indices: &[usize]) -> bool {
        self.inner.affine_in(indices)
    }
}

/// Uniformly sampled states and their exact time derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    /// 3 × (N+1), one column per sample.
    pub states: DMatrix<f64>,
    /// 3 × (N+1), `derivs.column(j) == rhs(states.column(j))`.
    pub derivs: DMatrix<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.ncols() == 0
    }

    pub fn state(&self, j: usize) -> State {
        self.states.fixed_view::<3, 1>(0, j).into_owned()
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    /// Columns `start..end` as a new trajectory.
    pub fn slice(&self, start: usize, end: usize) -> Trajectory {
        Trajectory {
            dt: self.dt,
            states: self.states.columns(start, end - start).into_owned(),
            derivs: self.derivs.columns(start, end - start).into_owned(),
        }
    }

    /// Writes `t,phi1,phi2,phi3,dphi1,dphi2,dphi3` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W, comment: Option<&str>) -> std::io::Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "t,phi1,phi2,phi3,dphi1,dphi2,dphi3")?;
        for j in 0..self.len() {
            write!(out, "{:.16e}", self.time(j))?;
            for i in 0..3 {
                write!(out, ",{:.16e}", self.states[(i, j)])?;
            }
            for i in 0..3 {
                write!(out, ",{:.16e}", self.derivs[(i, j)])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Observed/hidden partition of the state vector (0-based indices).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSplit {
    observed: Vec<usize>,
    hidden: Vec<usize>,
}

impl StateSplit {
    pub const DIM: usize = 3;

    pub fn new(observed: &[usize]) -> Result<Self> {
        if observed.is_empty() {
            return Err(Error::InvalidParameter("at least one observed component required".into()));
        }
        let mut seen = [false; Self::DIM];
        for &i in observed {
            if i >= Self::DIM {
                return Err(Error::InvalidParameter(format!("state index {i} out of range")));
            }
            if seen[i] {
                return Err(Error::InvalidParameter(format!("duplicate state index {i}")));
            }
            seen[i] = true;
        }
        let hidden = (0..Self::DIM).filter(|i| !seen[*i]).collect();
        Ok(Self {
            observed: observed.to_vec(),
            hidden,
        })
    }

    pub fn full() -> Self {
        Self::new(&[0, 1, 2]).unwrap()
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn n_x(&self) -> usize {
        self.observed.len()
    }

    pub fn n_h(&self) -> usize {
        self.hidden.len()
    }

    /// Output ordering `[x; h]` mapped back to state indices.
    pub fn output_order(&self) -> Vec<usize> {
        self.observed.iter().chain(&self.hidden).copied().collect()
    }

    /// Selects observed rows of a 3 × N matrix.
    pub fn observed_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m.select_rows(self.observed.iter())
    }

    pub fn hidden_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m.select_rows(self.hidden.iter())
    }
}

/// `dx/dt` for the observed components, taken from the exact derivatives.
pub fn exact_input_derivative(traj: &Trajectory, split: &StateSplit) -> DMatrix<f64> {
    split.observed_rows(&traj.derivs)
}

fn rk4_step<D: Dynamics>(sys: &D, y: &State, h: f64) -> State {
    let k1 = sys.rhs(y);
    let k2 = sys.rhs(&(y + 0.5 * h * k1));
    let k3 = sys.rhs(&(y + 0.5 * h * k2));
    let k4 = sys.rhs(&(y + h * k3));
    y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

const DIVERGENCE_LIMIT: f64 = 1e12;

fn advance<D: Dynamics>(sys: &D, y: &State, dt: f64, substeps: usize) -> State {
    let h = dt / substeps as f64;
    let mut y = *y;
    for _ in 0..substeps {
        y = rk4_step(sys, &y, h);
    }
    y
}

fn check_args(y0: &State, dt: f64, substeps: usize) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if substeps == 0 {
        return Err(Error::InvalidParameter("substeps must be at least 1".into()));
    }
    if !y0.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteState([y0[0], y0[1], y0[2]]));
    }
    Ok(())
}

/// Integrates `n_steps` output steps of size `dt` from `y0`, each split into
/// `substeps` RK4 steps. The result has `n_steps + 1` columns.
pub fn integrate<D: Dynamics>(
    sys: &D,
    y0: &State,
    dt: f64,
    n_steps: usize,
    substeps: usize,
) -> Result<Trajectory> {
    check_args(y0, dt, substeps)?;
    let mut states = DMatrix::zeros(3, n_steps + 1);
    let mut derivs = DMatrix::zeros(3, n_steps + 1);
    let mut y = *y0;
    for j in 0..=n_steps {
        if j > 0 {
            y = advance(sys, &y, dt, substeps);
            if !y.iter().all(|v| v.is_finite() && v.abs() < DIVERGENCE_LIMIT) {
                return Err(Error::Diverged { step: j });
            }
        }
        states.set_column(j, &y);
        derivs.set_column(j, &sys.rhs(&y));
    }
    Ok(Trajectory { dt, states, derivs })
}

/// Like [`integrate`], after first discarding `transient` output steps so
/// that the recorded samples lie on the attractor.
pub fn integrate_on_attractor<D: Dynamics>(
    sys: &D,
    y0: &State,
    dt: f64,
    transient: usize,
    n_steps: usize,
    substeps: usize,
) -> Result<Trajectory> {
    check_args(y0, dt, substeps)?;
    let mut y = *y0;
    for step in 0..transient {
        y = advance(sys, &y, dt, substeps);
        if !y.iter().all(|v| v.is_finite() && v.abs() < DIVERGENCE_LIMIT) {
            return Err(Error::Diverged { step });
        }
    }
    integrate(sys, &y, dt, n_steps, substeps)
}

/// Settings for the two-trajectory (Benettin) Lyapunov estimate.
#[derive(Debug, Clone, Copy)]
pub struct LyapunovOptions {
    pub y0: State,
    pub run_time: f64,
    pub renorm_interval: f64,
    pub separation: f64,
    pub dt: f64,
    pub discard_fraction: f64,
    /// Maximum allowed difference between the estimates of the two halves
    /// of the retained window.
    pub tolerance: f64,
}

impl Default for LyapunovOptions {
    fn default() -> Self {
        Self {
            y0: Vector3::new(1.0, 1.0, 1.0),
            run_time: 5000.0,
            renorm_interval: 1.0,
            separation: 1e-8,
            dt: 0.01,
            discard_fraction: 0.1,
            tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovEstimate {
    /// Leading exponent, per model-time unit.
    pub exponent: f64,
    /// Absolute difference between first- and second-half estimates.
    pub spread: f64,
}

impl LyapunovEstimate {
    /// Lyapunov time `1/exponent` (infinite for non-positive exponents).
    pub fn lyapunov_time(&self) -> f64 {
        if self.exponent > 0.0 {
            1.0 / self.exponent
        } else {
            f64::INFINITY
        }
    }
}

/// Leading Lyapunov exponent by renormalising the separation of a
/// reference and a perturbed trajectory every `renorm_interval`.
pub fn estimate_lyapunov<D: Dynamics>(sys: &D, opts: &LyapunovOptions) -> Result<LyapunovEstimate> {
    if !(opts.renorm_interval > 0.0 && opts.run_time >= 2.0 * opts.renorm_interval) {
        return Err(Error::InvalidParameter(
            "run_time must cover at least two renormalisation intervals".into(),
        ));
    }
    if !(opts.separation > 0.0) || !(0.0..1.0).contains(&opts.discard_fraction) {
        return Err(Error::InvalidParameter("invalid separation or discard fraction".into()));
    }
    let substeps = (opts.renorm_interval / opts.dt).round().max(1.0) as usize;
    check_args(&opts.y0, opts.renorm_interval, substeps)?;
    let n_intervals = (opts.run_time / opts.renorm_interval).round() as usize;
    let n_discard = (n_intervals as f64 * opts.discard_fraction).round() as usize;

    let mut y = opts.y0;
    let mut z = y + Vector3::new(opts.separation, 0.0, 0.0);
    let mut logs = Vec::with_capacity(n_intervals - n_discard);
    for k in 0..n_intervals {
        y = advance(sys, &y, opts.renorm_interval, substeps);
        z = advance(sys, &z, opts.renorm_interval, substeps);
        if !(y.iter().chain(z.iter()).all(|v| v.is_finite())) {
            return Err(Error::Diverged { step: k });
        }
        let mut sep = z - y;
        let dist = sep.norm();
        if dist == 0.0 {
            // Perturbation collapsed below resolution; restart it.
            sep = Vector3::new(opts.separation, 0.0, 0.0);
            logs.push(f64::NEG_INFINITY);
        } else {
            if k >= n_discard {
                logs.push((dist / opts.separation).ln());
            }
            sep *= opts.separation / dist;
        }
        z = y + sep;
    }
    if logs.iter().any(|l| !l.is_finite()) {
        // Contraction beyond floating-point resolution: strongly negative.
        return Ok(LyapunovEstimate {
            exponent: f64::NEG_INFINITY,
            spread: 0.0,
        });
    }
    let rate = |s: &[f64]| s.iter().sum::<f64>() / (s.len() as f64 * opts.renorm_interval);
    let exponent = rate(&logs);
    let half = logs.len() / 2;
    let spread = (rate(&logs[..half]) - rate(&logs[half..])).abs();
    if spread > opts.tolerance {
        return Err(Error::LyapunovNotConverged {
            spread,
            tolerance: opts.tolerance,
        });
    }
    Ok(LyapunovEstimate { exponent, spread })
}
