//! Fixed random echo state network: construction, teacher-forced evolution
//! with exact tangent propagation, and the linear readout.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Reservoir hyperparameters. Defaults reproduce the Lorenz setup used
/// throughout this crate (`N_r = 100`).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub n_reservoir: usize,
    pub sigma_in: f64,
    pub b_in: f64,
    pub avg_degree: f64,
    pub spectral_radius: f64,
    pub tikhonov: f64,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            n_reservoir: 100,
            sigma_in: 0.1,
            b_in: 10.0,
            avg_degree: 20.0,
            spectral_radius: 0.9,
            tikhonov: 1e-6,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.n_reservoir == 0 {
            return bad("n_reservoir must be at least 1");
        }
        if !(self.sigma_in > 0.0) {
            return bad("sigma_in must be positive");
        }
        if !(self.avg_degree > 0.0 && self.avg_degree <= self.n_reservoir as f64) {
            return bad("avg_degree must lie in (0, n_reservoir]");
        }
        if !(self.spectral_radius > 0.0) {
            return bad("spectral_radius must be positive");
        }
        if !(self.tikhonov >= 0.0) {
            return bad("tikhonov must be non-negative");
        }
        if !self.b_in.is_finite() {
            return bad("b_in must be finite");
        }
        Ok(())
    }
}

/// Row-compressed sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Entries are grouped by row;
    /// within a row they keep their input order.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(i, j, v) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::InvalidParameter(format!(
                    "entry ({i}, {j}) outside {nrows}x{ncols}"
                )));
            }
            if rows[i].iter().any(|(c, _)| *c == j) {
                return Err(Error::InvalidParameter(format!("duplicate entry ({i}, {j})")));
            }
            rows[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        for row in rows {
            for (j, v) in row {
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    t.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &t).expect("dense entries are unique and in range")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Stored `(col, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    /// `out = self * v`.
    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.ncols);
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).map(|(j, a)| a * v[j]).sum();
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "row,col,value")?;
        for (i, j, v) in self.triplets() {
            writeln!(out, "{i},{j},{v:.16e}")?;
        }
        Ok(())
    }
}

/// Result of the growth-rate spectral radius estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub radius: f64,
    /// Relative change between the last two averaging windows.
    pub spread: f64,
    pub converged: bool,
    pub iterations: usize,
}

const SPECTRAL_WINDOW: usize = 50;

/// Estimates `max |lambda|` as the geometric mean growth factor of
/// `||A^k v||` over the last 50 of `max_iters` iterations. Unlike the
/// Rayleigh quotient this also works when the leading eigenvalues are a
/// complex pair.
pub fn spectral_radius_estimate(m: &SparseMatrix, tol: f64, max_iters: usize) -> Result<SpectralEstimate> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            context: "spectral radius (square matrix)",
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    let n = m.nrows();
    let iters = max_iters.max(2 * SPECTRAL_WINDOW);
    // Fixed start vector so the estimate is a deterministic function of `m`.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.iter_mut().for_each(|a| *a /= norm);
    let mut w = vec![0.0; n];
    let mut logs = Vec::with_capacity(iters);
    for _ in 0..iters {
        m.mul_vec_into(&v, &mut w);
        let g = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        if g == 0.0 {
            return Ok(SpectralEstimate {
                radius: 0.0,
                spread: 0.0,
                converged: true,
                iterations: logs.len() + 1,
            });
        }
        logs.push(g.ln());
        for (a, b) in v.iter_mut().zip(&w) {
            *a = b / g;
        }
    }
    let mean = |s: &[f64]| (s.iter().sum::<f64>() / s.len() as f64).exp();
    let last = mean(&logs[iters - SPECTRAL_WINDOW..]);
    let prev = mean(&logs[iters - 2 * SPECTRAL_WINDOW..iters - SPECTRAL_WINDOW]);
    let spread = (last - prev).abs() / last;
    Ok(SpectralEstimate {
        radius: last,
        spread,
        converged: spread <= tol,
        iterations: iters,
    })
}

/// Tolerance and iteration schedule used when scaling the state matrix.
const SPECTRAL_TOL: f64 = 1e-8;
const SPECTRAL_ITERS: usize = 200;
const SPECTRAL_MAX_ITERS: usize = 6400;

/// Estimate used during construction: doubles the iteration count until
/// the windows agree to `1e-8` or the iteration cap is reached.
pub fn construction_radius(m: &SparseMatrix) -> Result<SpectralEstimate> {
    let mut iters = SPECTRAL_ITERS;
    loop {
        let est = spectral_radius_estimate(m, SPECTRAL_TOL, iters)?;
        if est.converged || iters >= SPECTRAL_MAX_ITERS {
            return Ok(est);
        }
        iters *= 2;
    }
}

/// Input matrix `N_r × (N_x + 1)`: exactly one nonzero per row, in a
/// uniformly chosen column (bias column included), uniform in
/// `[-sigma_in, sigma_in]`.
pub fn build_input_matrix<R: Rng>(hp: &HyperParams, n_x: usize, rng: &mut R) -> Result<SparseMatrix> {
    if n_x == 0 {
        return Err(Error::InvalidParameter("n_x must be at least 1".into()));
    }
    let triplets: Vec<_> = (0..hp.n_reservoir)
        .map(|i| {
            let j = rng.gen_range(0..=n_x);
            (i, j, rng.gen_range(-hp.sigma_in..=hp.sigma_in))
        })
        .collect();
    SparseMatrix::from_triplets(hp.n_reservoir, n_x + 1, &triplets)
}

/// Erdős–Rényi state matrix: each entry nonzero with probability
/// `avg_degree / N_r`, values uniform in `[-1, 1]`, rescaled to the target
/// spectral radius.
pub fn build_state_matrix<R: Rng>(hp: &HyperParams, rng: &mut R) -> Result<SparseMatrix> {
    hp.validate()?;
    let n = hp.n_reservoir;
    let p = hp.avg_degree / n as f64;
    for _attempt in 0..64 {
        let mut triplets = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if rng.gen_bool(p) {
                    triplets.push((i, j, rng.gen_range(-1.0..=1.0)));
                }
            }
        }
        let mut m = SparseMatrix::from_triplets(n, n, &triplets)?;
        let est = construction_radius(&m)?;
        if est.radius > 0.0 {
            m.scale(hp.spectral_radius / est.radius);
            return Ok(m);
        }
    }
    Err(Error::InvalidParameter(
        "state matrix draws were all nilpotent; increase avg_degree".into(),
    ))
}

/// Fixed input and state matrices plus the input bias.
#[derive(Debug, Clone, PartialEq)]
pub struct EsnWeights {
    w_in: SparseMatrix,
    w: SparseMatrix,
    b_in: f64,
}

impl EsnWeights {
    /// Draws `W_in` from substream 0 and `W` from substream 1 of a ChaCha8
    /// generator seeded with `hp.seed`.
    pub fn new(hp: &HyperParams, n_x: usize) -> Result<Self> {
        hp.validate()?;
        let mut rng_in = ChaCha8Rng::seed_from_u64(hp.seed);
        rng_in.set_stream(0);
        let mut rng_w = ChaCha8Rng::seed_from_u64(hp.seed);
        rng_w.set_stream(1);
        let w_in = build_input_matrix(hp, n_x, &mut rng_in)?;
        let w = build_state_matrix(hp, &mut rng_w)?;
        Ok(Self { w_in, w, b_in: hp.b_in })
    }

    pub fn from_parts(w_in: SparseMatrix, w: SparseMatrix, b_in: f64) -> Result<Self> {
        if w.nrows() != w.ncols() || w_in.nrows() != w.nrows() || w_in.ncols() < 2 {
            return Err(Error::DimensionMismatch {
                context: "EsnWeights::from_parts",
                expected: w.nrows(),
                got: w_in.nrows(),
            });
        }
        Ok(Self { w_in, w, b_in })
    }

    pub fn n_reservoir(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.w_in.ncols() - 1
    }

    /// Length of the augmented state `[r; x; 1]`.
    pub fn aug_len(&self) -> usize {
        self.n_reservoir() + self.n_inputs() + 1
    }

    pub fn w_in(&self) -> &SparseMatrix {
        &self.w_in
    }

    pub fn w(&self) -> &SparseMatrix {
        &self.w
    }

    pub fn b_in(&self) -> f64 {
        self.b_in
    }

    fn check(&self, context: &'static str, r_len: usize, x_len: usize) -> Result<()> {
        if r_len != self.n_reservoir() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.n_reservoir(),
                got: r_len,
            });
        }
        if x_len != self.n_inputs() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.n_inputs(),
                got: x_len,
            });
        }
        Ok(())
    }

    fn step_into(&self, r_prev: &[f64], x: &[f64], out: &mut [f64]) {
        let n_x = self.n_inputs();
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, a) in self.w_in.row(i) {
                acc += a * if j < n_x { x[j] } else { self.b_in };
            }
            for (j, a) in self.w.row(i) {
                acc += a * r_prev[j];
            }
            *o = acc.tanh();
        }
    }

    fn step_tangent_into(&self, r_new: &[f64], rdot_prev: &[f64], xdot: &[f64], out: &mut [f64]) {
        let n_x = self.n_inputs();
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, a) in self.w_in.row(i) {
                // The bias column is constant in time.
                if j < n_x {
                    acc += a * xdot[j];
                }
            }
            for (j, a) in self.w.row(i) {
                acc += a * rdot_prev[j];
            }
            *o = (1.0 - r_new[i] * r_new[i]) * acc;
        }
    }

    /// `r = tanh(W_in [x; b_in] + W r_prev)`.
    pub fn step(&self, r_prev: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check("reservoir step", r_prev.len(), x.len())?;
        let mut out = vec![0.0; self.n_reservoir()];
        self.step_into(r_prev, x, &mut out);
        Ok(out)
    }

    /// Time derivative of the state returned by [`step`](Self::step):
    /// `(1 - r⊙r) ⊙ (W_in^(x) xdot + W rdot_prev)`.
    pub fn step_tangent(&self, r_new: &[f64], rdot_prev: &[f64], xdot: &[f64]) -> Result<Vec<f64>> {
        self.check("reservoir tangent", r_new.len(), xdot.len())?;
        self.check("reservoir tangent", rdot_prev.len(), xdot.len())?;
        let mut out = vec![0.0; self.n_reservoir()];
        self.step_tangent_into(r_new, rdot_prev, xdot, &mut out);
        Ok(out)
    }

    /// Teacher-forced run from `r = 0`, `rdot = 0`.
    pub fn run_teacher_forced(&self, inputs: &DMatrix<f64>, input_derivs: &DMatrix<f64>, n_washout: usize) -> Result<ReservoirRun> {
        let zero = vec![0.0; self.n_reservoir()];
        self.run_teacher_forced_from(&zero, inputs, input_derivs, n_washout)
    }

    /// Teacher-forced run from an arbitrary initial reservoir state (zero
    /// initial tangent). Columns of `inputs` are consecutive time samples;
    /// the first `n_washout` outputs are discarded.
    pub fn run_teacher_forced_from(
        &self,
        r0: &[f64],
        inputs: &DMatrix<f64>,
        input_derivs: &DMatrix<f64>,
        n_washout: usize,
    ) -> Result<ReservoirRun> {
        let n_r = self.n_reservoir();
        let n_x = self.n_inputs();
        self.check("teacher-forced run", r0.len(), inputs.nrows())?;
        if input_derivs.shape() != inputs.shape() {
            return Err(Error::DimensionMismatch {
                context: "teacher-forced run (derivative columns)",
                expected: inputs.ncols(),
                got: input_derivs.ncols(),
            });
        }
        let total = inputs.ncols();
        let recorded = total.saturating_sub(n_washout);
        let d = self.aug_len();
        let mut aug_states = DMatrix::zeros(d, recorded);
        let mut aug_tangents = DMatrix::zeros(d, recorded);

        let mut r = r0.to_vec();
        let mut rdot = vec![0.0; n_r];
        let mut r_next = vec![0.0; n_r];
        let mut rdot_next = vec![0.0; n_r];
        for k in 0..total {
            let x = inputs.column(k);
            let xdot = input_derivs.column(k);
            self.step_into(&r, x.as_slice(), &mut r_next);
            self.step_tangent_into(&r_next, &rdot, xdot.as_slice(), &mut rdot_next);
            std::mem::swap(&mut r, &mut r_next);
            std::mem::swap(&mut rdot, &mut rdot_next);
            if !(r.iter().chain(&rdot).all(|v| v.is_finite()) && x.iter().chain(xdot.iter()).all(|v| v.is_finite())) {
                return Err(Error::NonFiniteRun { column: k });
            }
            if k >= n_washout {
                let c = k - n_washout;
                let mut zs = aug_states.column_mut(c);
                zs.rows_mut(0, n_r).copy_from_slice(&r);
                zs.rows_mut(n_r, n_x).copy_from(&x);
                zs[d - 1] = 1.0;
                let mut ts = aug_tangents.column_mut(c);
                ts.rows_mut(0, n_r).copy_from_slice(&rdot);
                ts.rows_mut(n_r, n_x).copy_from(&xdot);
            }
        }
        Ok(ReservoirRun {
            aug_states,
            aug_tangents,
        })
    }

    /// Writes `w_in.csv`, `w.csv` and, when given, the dense `w_out.csv`.
    pub fn write_csv(&self, dir: &Path, w_out: Option<&DMatrix<f64>>) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let open = |name: &str| -> Result<std::io::BufWriter<std::fs::File>> {
            Ok(std::io::BufWriter::new(std::fs::File::create(dir.join(name))?))
        };
        self.w_in.write_csv(open("w_in.csv")?)?;
        self.w.write_csv(open("w.csv")?)?;
        if let Some(m) = w_out {
            write_dense_csv(open("w_out.csv")?, m)?;
        }
        Ok(())
    }
}

pub fn write_dense_csv<W: Write>(mut out: W, m: &DMatrix<f64>) -> std::io::Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()
}

/// Augmented reservoir states `[r; x; 1]` and tangents `[rdot; xdot; 0]`,
/// one column per recorded time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirRun {
    pub aug_states: DMatrix<f64>,
    pub aug_tangents: DMatrix<f64>,
}

impl ReservoirRun {
    pub fn len(&self) -> usize {
        self.aug_states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn aug_len(&self) -> usize {
        self.aug_states.nrows()
    }

    /// Columns `start..end`.
    pub fn columns(&self, start: usize, end: usize) -> ReservoirRun {
        ReservoirRun {
            aug_states: self.aug_states.columns(start, end - start).into_owned(),
            aug_tangents: self.aug_tangents.columns(start, end - start).into_owned(),
        }
    }

    /// Same states with tangents replaced by forward differences
    /// `(z_{j+1} - z_j) / dt`; the last column is dropped. Feeding this run
    /// to the readout yields the forward-Euler output derivative.
    pub fn forward_euler(&self, dt: f64) -> Result<ReservoirRun> {
        let n = self.len();
        if n < 2 {
            return Err(Error::TooShort { needed: 2, got: n });
        }
        let head = self.aug_states.columns(0, n - 1);
        let tail = self.aug_states.columns(1, n - 1);
        Ok(ReservoirRun {
            aug_states: head.into_owned(),
            aug_tangents: (tail - head) / dt,
        })
    }

    /// `W_out [r; x; 1]` for every column.
    pub fn outputs(&self, w_out: &DMatrix<f64>) -> DMatrix<f64> {
        w_out * &self.aug_states
    }

    /// `W_out [rdot; xdot; 0]` for every column.
    pub fn output_derivatives(&self, w_out: &DMatrix<f64>) -> DMatrix<f64> {
        w_out * &self.aug_tangents
    }
}

fn check_readout(w_out: &DMatrix<f64>, len: usize) -> Result<()> {
    if w_out.ncols() != len {
        return Err(Error::DimensionMismatch {
            context: "readout",
            expected: w_out.ncols(),
            got: len,
        });
    }
    Ok(())
}

/// `y_hat = W_out [r; x; 1]`.
pub fn readout(w_out: &DMatrix<f64>, aug_state: &DVector<f64>) -> Result<DVector<f64>> {
    check_readout(w_out, aug_state.len())?;
    Ok(w_out * aug_state)
}

/// Exact output derivative `W_out [rdot; xdot; 0]`.
pub fn readout_derivative(w_out: &DMatrix<f64>, aug_tangent: &DVector<f64>) -> Result<DVector<f64>> {
    check_readout(w_out, aug_tangent.len())?;
    Ok(w_out * aug_tangent)
}

/// Forward-Euler output derivative: column `i` is `(y_{i+1} - y_i) / dt`.
pub fn fe_output_derivative(yhat: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>> {
    let n = yhat.ncols();
    if n < 2 {
        return Err(Error::TooShort { needed: 2, got: n });
    }
    Ok((yhat.columns(1, n - 1) - yhat.columns(0, n - 1)) / dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_hp(n: usize) -> HyperParams {
        HyperParams {
            n_reservoir: n,
            avg_degree: 3.0_f64.min(n as f64),
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn input_matrix_one_nonzero_per_row() {
        let hp = HyperParams {
            n_reservoir: 1000,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = build_input_matrix(&hp, 2, &mut rng).unwrap();
        assert_eq!(m.ncols(), 3);
        for i in 0..m.nrows() {
            assert_eq!(m.row_nnz(i), 1);
        }
        assert!(m.values().iter().all(|v| v.abs() <= 0.1));
        // Every column (bias included) gets used.
        for c in 0..3 {
            assert!(m.triplets().any(|(_, j, _)| j == c));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(m, build_input_matrix(&hp, 2, &mut rng).unwrap());
    }

    #[test]
    fn state_matrix_degree_and_radius() {
        let hp = HyperParams {
            n_reservoir: 1000,
            ..Default::default()
        };
        let w = EsnWeights::new(&hp, 3).unwrap();
        let mean_degree = w.w().nnz() as f64 / 1000.0;
        assert!((18.0..=22.0).contains(&mean_degree), "{mean_degree}");
        let est = construction_radius(w.w()).unwrap();
        assert!((est.radius - 0.9).abs() < 1e-6, "{est:?}");
    }

    #[test]
    fn growth_rate_estimate_tracks_true_radius() {
        let hp = HyperParams {
            n_reservoir: 200,
            ..Default::default()
        };
        let w = EsnWeights::new(&hp, 3).unwrap();
        let eig = w.w().to_dense().complex_eigenvalues();
        let true_radius = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!((true_radius - 0.9).abs() < 0.03, "{true_radius}");
    }

    #[test]
    fn rescaling_known_radius() {
        let m = SparseMatrix::from_triplets(2, 2, &[(0, 1, 0.5), (1, 0, 0.5)]).unwrap();
        let mut s = m.clone();
        let est = construction_radius(&m).unwrap();
        assert!((est.radius - 0.5).abs() < 1e-12);
        s.scale(0.9 / est.radius);
        let d = s.to_dense();
        assert!((d[(0, 1)] - 0.9).abs() < 1e-12 && (d[(1, 0)] - 0.9).abs() < 1e-12);
        assert_eq!(d[(0, 0)], 0.0);
    }

    #[test]
    fn spectral_radius_simple_cases() {
        let id = SparseMatrix::from_dense(&DMatrix::identity(5, 5));
        assert!((spectral_radius_estimate(&id, 1e-8, 200).unwrap().radius - 1.0).abs() < 1e-12);
        let diag = SparseMatrix::from_dense(&DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -1.0, 0.5])));
        assert!((spectral_radius_estimate(&diag, 1e-8, 200).unwrap().radius - 3.0).abs() < 1e-10);
        let rot = SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, -1.0)]).unwrap();
        let est = spectral_radius_estimate(&rot, 1e-8, 200).unwrap();
        assert!((est.radius - 1.0).abs() < 1e-8);
        assert!(est.converged);
        let rect = SparseMatrix::from_triplets(2, 3, &[]).unwrap();
        assert!(spectral_radius_estimate(&rect, 1e-8, 10).is_err());
    }

    #[test]
    fn sparse_rejects_duplicates_and_out_of_bounds() {
        assert!(SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0)]).is_err());
        assert!(SparseMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn step_zero_input_zero_bias() {
        let hp = HyperParams { b_in: 0.0, ..small_hp(20) };
        let w = EsnWeights::new(&hp, 2).unwrap();
        let r = w.step(&[0.0; 20], &[0.0, 0.0]).unwrap();
        assert!(r.iter().all(|v| *v == 0.0));
        let r = w.step(&[0.9; 20], &[30.0, -40.0]).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1.0));
        assert!(w.step(&[0.0; 19], &[0.0, 0.0]).is_err());
        assert!(w.step(&[0.0; 20], &[0.0]).is_err());
    }

    #[test]
    fn tangent_without_driving_is_zero() {
        let w = EsnWeights::new(&small_hp(20), 2).unwrap();
        let r = w.step(&[0.1; 20], &[1.0, 2.0]).unwrap();
        let rd = w.step_tangent(&r, &[0.0; 20], &[0.0, 0.0]).unwrap();
        assert!(rd.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn washout_consumes_everything() {
        let w = EsnWeights::new(&small_hp(10), 1).unwrap();
        let x = DMatrix::from_element(1, 5, 1.0);
        let run = w.run_teacher_forced(&x, &x, 5).unwrap();
        assert!(run.is_empty());
        let run = w.run_teacher_forced(&x, &x, 9).unwrap();
        assert!(run.is_empty());
    }

    #[test]
    fn constant_input_has_zero_tangent() {
        let w = EsnWeights::new(&small_hp(30), 2).unwrap();
        let x = DMatrix::from_element(2, 50, 3.0);
        let xd = DMatrix::zeros(2, 50);
        let run = w.run_teacher_forced(&x, &xd, 10).unwrap();
        assert_eq!(run.len(), 40);
        assert!(run.aug_tangents.iter().all(|v| *v == 0.0));
        assert!(run.aug_states.row(run.aug_len() - 1).iter().all(|v| *v == 1.0));
    }

    #[test]
    fn run_flags_nan_column() {
        let w = EsnWeights::new(&small_hp(10), 1).unwrap();
        let mut x = DMatrix::from_element(1, 6, 1.0);
        x[(0, 3)] = f64::NAN;
        let xd = DMatrix::zeros(1, 6);
        assert!(matches!(w.run_teacher_forced(&x, &xd, 0), Err(Error::NonFiniteRun { column: 3 })));
    }

    #[test]
    fn readout_cases() {
        let z = DVector::from_vec(vec![0.3, -0.2, 5.0, 1.0]);
        let zero = DMatrix::zeros(2, 4);
        assert_eq!(readout(&zero, &z).unwrap(), DVector::zeros(2));
        let mut c = DMatrix::zeros(2, 4);
        c[(0, 3)] = 2.0;
        c[(1, 3)] = -1.0;
        assert_eq!(readout(&c, &z).unwrap(), DVector::from_vec(vec![2.0, -1.0]));
        let tangent = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.0]);
        assert_eq!(readout_derivative(&c, &tangent).unwrap(), DVector::zeros(2));
        assert!(readout(&c, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn fe_derivative_simple_series() {
        let constant = DMatrix::from_element(2, 5, 4.0);
        assert!(fe_output_derivative(&constant, 0.1).unwrap().iter().all(|v| *v == 0.0));
        let dt = 0.25;
        let lin = DMatrix::from_fn(1, 6, |_, j| 1.0 + 3.0 * (j as f64 * dt));
        let d = fe_output_derivative(&lin, dt).unwrap();
        assert_eq!(d.ncols(), 5);
        assert!(d.iter().all(|v| (*v - 3.0).abs() < 1e-12));
        assert!(fe_output_derivative(&DMatrix::zeros(1, 1), dt).is_err());
    }
}
