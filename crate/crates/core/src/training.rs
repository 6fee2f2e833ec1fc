//! Readout training: ridge regression for the observed rows, mean-value
//! initialisation of the hidden rows, and Adam on the physics residual.
//!
//! The output vector is ordered `[x; h]` (observed components first, in the
//! order given by the [`StateSplit`]). Residuals and gradients use the same
//! ordering; the vector field is evaluated after mapping back to state order.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::ode::{Dynamics, State, StateSplit};
use crate::reservoir::ReservoirRun;

/// Solves `(R Rᵀ + γ I) Wᵀ = R Tᵀ` by Cholesky factorisation and returns `W`
/// (`targets.nrows() × aug.nrows()`).
pub fn ridge_solve(aug: &DMatrix<f64>, targets: &DMatrix<f64>, gamma: f64) -> Result<DMatrix<f64>> {
    if aug.ncols() != targets.ncols() {
        return Err(Error::DimensionMismatch {
            context: "ridge_solve (sample count)",
            expected: aug.ncols(),
            got: targets.ncols(),
        });
    }
    if aug.ncols() == 0 {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    if !(gamma >= 0.0) {
        return Err(Error::InvalidParameter(format!("gamma must be non-negative, got {gamma}")));
    }
    let mut gram = aug * aug.transpose();
    for i in 0..gram.nrows() {
        gram[(i, i)] += gamma;
    }
    let rhs = aug * targets.transpose();
    let diag_ratio = {
        let d = gram.diagonal();
        d.min() / d.max()
    };
    let chol = gram.cholesky().ok_or(Error::Singular { gamma, diag_ratio })?;
    Ok(chol.solve(&rhs).transpose())
}

/// Adam and learning-rate schedule settings, plus the hidden-mean estimate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub initial_lr: f64,
    /// The learning rate is divided by this factor on a plateau.
    pub lr_decay_factor: f64,
    pub plateau_patience: usize,
    /// Minimum relative improvement of the best loss that resets the plateau counter.
    pub plateau_rel_improvement: f64,
    pub min_lr: f64,
    pub max_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub hbar: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 0.1,
            lr_decay_factor: 10.0,
            plateau_patience: 200,
            plateau_rel_improvement: 1e-3,
            min_lr: 1e-4,
            max_steps: 50_000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            hbar: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.initial_lr > 0.0
            && self.lr_decay_factor > 1.0
            && self.min_lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.hbar.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid training config {self:?}")))
        }
    }
}

/// Readout matrix split into frozen observed rows and trainable hidden rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutPartition {
    w_out: DMatrix<f64>,
    n_x: usize,
}

impl ReadoutPartition {
    pub fn new(w_out: DMatrix<f64>, n_x: usize) -> Result<Self> {
        if n_x > w_out.nrows() {
            return Err(Error::DimensionMismatch {
                context: "readout partition",
                expected: w_out.nrows(),
                got: n_x,
            });
        }
        Ok(Self { w_out, n_x })
    }

    pub fn w_out(&self) -> &DMatrix<f64> {
        &self.w_out
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_h(&self) -> usize {
        self.w_out.nrows() - self.n_x
    }

    pub fn observed_rows(&self) -> DMatrix<f64> {
        self.w_out.rows(0, self.n_x).into_owned()
    }

    pub fn hidden_rows(&self) -> DMatrix<f64> {
        self.w_out.rows(self.n_x, self.n_h()).into_owned()
    }

    pub fn with_hidden_rows(&self, hidden: &DMatrix<f64>) -> Self {
        let mut w_out = self.w_out.clone();
        w_out.rows_mut(self.n_x, self.n_h()).copy_from(hidden);
        Self { w_out, n_x: self.n_x }
    }
}

/// Observed rows by ridge regression against `x_targets`; hidden rows by
/// ridge regression against the constant `hbar`.
pub fn init_output_matrix(
    run: &ReservoirRun,
    x_targets: &DMatrix<f64>,
    n_h: usize,
    tikhonov: f64,
    hbar: f64,
) -> Result<ReadoutPartition> {
    let n_x = x_targets.nrows();
    let n = run.len();
    let mut targets = DMatrix::from_element(n_x + n_h, n, hbar);
    targets.rows_mut(0, n_x).copy_from(x_targets);
    let w_out = ridge_solve(&run.aug_states, &targets, tikhonov)?;
    ReadoutPartition::new(w_out, n_x)
}

/// Evaluates the vector field on output-ordered vectors.
struct OrderedField<'a, D> {
    sys: &'a D,
    order: Vec<usize>,
}

impl<'a, D: Dynamics> OrderedField<'a, D> {
    fn new(sys: &'a D, split: &StateSplit) -> Self {
        Self {
            sys,
            order: split.output_order(),
        }
    }

    fn to_state(&self, y: &[f64]) -> State {
        let mut s = Vector3::zeros();
        for (k, &i) in self.order.iter().enumerate() {
            s[i] = y[k];
        }
        s
    }

    fn rhs(&self, y: &[f64]) -> Vector3<f64> {
        let f = self.sys.rhs(&self.to_state(y));
        Vector3::from_fn(|k, _| f[self.order[k]])
    }

    /// Jacobian with rows and columns in output order.
    fn jacobian(&self, y: &[f64]) -> Matrix3<f64> {
        let j = self.sys.jacobian(&self.to_state(y));
        Matrix3::from_fn(|a, b| j[(self.order[a], self.order[b])])
    }
}

fn check_system(w_out: &DMatrix<f64>, run: &ReservoirRun) -> Result<()> {
    if w_out.nrows() != StateSplit::DIM {
        return Err(Error::DimensionMismatch {
            context: "physics residual (output size)",
            expected: StateSplit::DIM,
            got: w_out.nrows(),
        });
    }
    if w_out.ncols() != run.aug_len() {
        return Err(Error::DimensionMismatch {
            context: "physics residual (augmented length)",
            expected: run.aug_len(),
            got: w_out.ncols(),
        });
    }
    Ok(())
}

/// Column `j` is `W_out d_j - f(W_out z_j)`, output-ordered.
pub fn physics_residuals<D: Dynamics>(
    w_out: &DMatrix<f64>,
    run: &ReservoirRun,
    sys: &D,
    split: &StateSplit,
) -> Result<DMatrix<f64>> {
    check_system(w_out, run)?;
    let field = OrderedField::new(sys, split);
    let yhat = run.outputs(w_out);
    let mut res = run.output_derivatives(w_out);
    for j in 0..res.ncols() {
        let f = field.rhs(yhat.column(j).as_slice());
        for k in 0..3 {
            res[(k, j)] -= f[k];
        }
    }
    Ok(res)
}

/// Mean over columns and components of the squared residuals.
pub fn physics_loss(residuals: &DMatrix<f64>) -> f64 {
    residuals.norm_squared() / residuals.len() as f64
}

/// Exact gradient of [`physics_loss`] with respect to the hidden rows of
/// `w_out` (observed rows held fixed).
pub fn physics_loss_grad<D: Dynamics>(
    w_out: &DMatrix<f64>,
    n_x: usize,
    run: &ReservoirRun,
    sys: &D,
    split: &StateSplit,
) -> Result<DMatrix<f64>> {
    let res = physics_residuals(w_out, run, sys, split)?;
    let field = OrderedField::new(sys, split);
    let yhat = run.outputs(w_out);
    Ok(hidden_gradient(&field, &yhat, &res, run, n_x))
}

fn hidden_gradient<D: Dynamics>(
    field: &OrderedField<'_, D>,
    yhat: &DMatrix<f64>,
    res: &DMatrix<f64>,
    run: &ReservoirRun,
    n_x: usize,
) -> DMatrix<f64> {
    let n_h = 3 - n_x;
    let n = res.ncols();
    // dL/dW_h = 2/(N N_y) [E_h Tᵀ - (Jᵀ E)_h Zᵀ]
    let mut pulled = DMatrix::zeros(n_h, n);
    for j in 0..n {
        let jac = field.jacobian(yhat.column(j).as_slice());
        let e = res.fixed_view::<3, 1>(0, j);
        let jte = jac.transpose() * e;
        for k in 0..n_h {
            pulled[(k, j)] = jte[n_x + k];
        }
    }
    let e_h = res.rows(n_x, n_h);
    let scale = 2.0 / (n as f64 * 3.0);
    (e_h * run.aug_tangents.transpose() - pulled * run.aug_states.transpose()) * scale
}

/// Physics loss as a function of the hidden rows only.
pub trait HiddenObjective {
    fn loss(&self, hidden: &DMatrix<f64>) -> f64;
    fn loss_and_grad(&self, hidden: &DMatrix<f64>) -> (f64, DMatrix<f64>);
}

/// Evaluates residuals column by column on every call. Valid for any
/// vector field.
pub struct DirectObjective<'a, D> {
    run: &'a ReservoirRun,
    field: OrderedField<'a, D>,
    n_x: usize,
    yhat_x: DMatrix<f64>,
    ydot_x: DMatrix<f64>,
}

impl<'a, D: Dynamics> DirectObjective<'a, D> {
    pub fn new(partition: &ReadoutPartition, run: &'a ReservoirRun, sys: &'a D, split: &StateSplit) -> Result<Self> {
        check_system(partition.w_out(), run)?;
        let obs = partition.observed_rows();
        Ok(Self {
            run,
            field: OrderedField::new(sys, split),
            n_x: partition.n_x(),
            yhat_x: &obs * &run.aug_states,
            ydot_x: &obs * &run.aug_tangents,
        })
    }

    fn residuals(&self, hidden: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.run.len();
        let n_x = self.n_x;
        let mut yhat = DMatrix::zeros(3, n);
        yhat.rows_mut(0, n_x).copy_from(&self.yhat_x);
        yhat.rows_mut(n_x, 3 - n_x).copy_from(&(hidden * &self.run.aug_states));
        let mut res = DMatrix::zeros(3, n);
        res.rows_mut(0, n_x).copy_from(&self.ydot_x);
        res.rows_mut(n_x, 3 - n_x).copy_from(&(hidden * &self.run.aug_tangents));
        for j in 0..n {
            let f = self.field.rhs(yhat.column(j).as_slice());
            for k in 0..3 {
                res[(k, j)] -= f[k];
            }
        }
        (yhat, res)
    }
}

impl<D: Dynamics> HiddenObjective for DirectObjective<'_, D> {
    fn loss(&self, hidden: &DMatrix<f64>) -> f64 {
        physics_loss(&self.residuals(hidden).1)
    }

    fn loss_and_grad(&self, hidden: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let (yhat, res) = self.residuals(hidden);
        let grad = hidden_gradient(&self.field, &yhat, &res, self.run, self.n_x);
        (physics_loss(&res), grad)
    }
}

/// When the vector field is affine in the hidden components, every
/// residual is affine in the hidden rows, `e_ij = c_ij + u_ijᵀ w`, and the
/// loss is the quadratic `(wᵀ Q w + 2 bᵀ w + s) / (N N_y)`. `Q`, `b` and
/// `s` are assembled once; each evaluation then costs `O((N_h N_aug)²)`
/// instead of a pass over all columns.
pub struct QuadraticObjective {
    q: DMatrix<f64>,
    b: DVector<f64>,
    s: f64,
    n_h: usize,
    aug_len: usize,
    norm: f64,
}

const ASSEMBLY_CHUNK: usize = 1024;

impl QuadraticObjective {
    /// Returns `None` when the field is not affine in the hidden components.
    pub fn new<D: Dynamics>(
        partition: &ReadoutPartition,
        run: &ReservoirRun,
        sys: &D,
        split: &StateSplit,
    ) -> Result<Option<Self>> {
        check_system(partition.w_out(), run)?;
        if !sys.affine_in(split.hidden()) {
            return Ok(None);
        }
        let n_x = partition.n_x();
        let n_h = partition.n_h();
        let d = run.aug_len();
        let p = n_h * d;
        let n = run.len();
        let field = OrderedField::new(sys, split);
        let obs = partition.observed_rows();
        let yhat_x = &obs * &run.aug_states;
        let ydot_x = &obs * &run.aug_tangents;

        let mut q = DMatrix::zeros(p, p);
        let mut b = DVector::zeros(p);
        let mut s = 0.0;
        let mut start = 0;
        while start < n {
            let len = ASSEMBLY_CHUNK.min(n - start);
            // One row per (column, equation): u_ijᵀ.
            let mut u = DMatrix::zeros(3 * len, p);
            let mut c = DVector::zeros(3 * len);
            for jj in 0..len {
                let j = start + jj;
                let mut y = [0.0; 3];
                y[..n_x].copy_from_slice(yhat_x.column(j).as_slice());
                let f0 = field.rhs(&y);
                let jac = field.jacobian(&y);
                let z = run.aug_states.column(j);
                let dz = run.aug_tangents.column(j);
                for i in 0..3 {
                    let row = 3 * jj + i;
                    let lhs = if i < n_x { ydot_x[(i, j)] } else { 0.0 };
                    c[row] = lhs - f0[i];
                    for k in 0..n_h {
                        let a = -jac[(i, n_x + k)];
                        let mut block = u.view_mut((row, k * d), (1, d));
                        if i == n_x + k {
                            block.copy_from(&(dz + a * z).transpose());
                        } else if a != 0.0 {
                            block.copy_from(&(a * z).transpose());
                        }
                    }
                }
            }
            let ut = u.transpose();
            q.gemm(1.0, &ut, &u, 1.0);
            b.gemv_tr(1.0, &u, &c, 1.0);
            s += c.norm_squared();
            start += len;
        }
        Ok(Some(Self {
            q,
            b,
            s,
            n_h,
            aug_len: d,
            norm: 1.0 / (n as f64 * 3.0),
        }))
    }

    /// Minimiser of the quadratic with `reg · mean(diag Q)` added to the
    /// diagonal. Used to check how far an iterative optimiser is from the
    /// optimum.
    pub fn minimizer(&self, reg: f64) -> Result<DMatrix<f64>> {
        let mut q = self.q.clone();
        let shift = reg * q.trace() / q.nrows() as f64;
        for i in 0..q.nrows() {
            q[(i, i)] += shift;
        }
        let chol = q.cholesky().ok_or(Error::Singular {
            gamma: shift,
            diag_ratio: self.q.diagonal().min() / self.q.diagonal().max(),
        })?;
        let w = chol.solve(&(-&self.b));
        Ok(DMatrix::from_row_slice(self.n_h, self.aug_len, w.as_slice()))
    }

    fn flatten(&self, hidden: &DMatrix<f64>) -> DVector<f64> {
        // Row-major flattening: block k holds hidden row k.
        DVector::from_iterator(self.n_h * self.aug_len, hidden.transpose().iter().copied())
    }
}

impl HiddenObjective for QuadraticObjective {
    fn loss(&self, hidden: &DMatrix<f64>) -> f64 {
        let w = self.flatten(hidden);
        let qw = &self.q * &w;
        (w.dot(&qw) + 2.0 * self.b.dot(&w) + self.s) * self.norm
    }

    fn loss_and_grad(&self, hidden: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let w = self.flatten(hidden);
        let qw = &self.q * &w;
        let loss = (w.dot(&qw) + 2.0 * self.b.dot(&w) + self.s) * self.norm;
        let g = (qw + &self.b) * (2.0 * self.norm);
        let grad = DMatrix::from_row_slice(self.n_h, self.aug_len, g.as_slice());
        (loss, grad)
    }
}

/// Picks the assembled quadratic form when the field allows it, otherwise
/// the direct column pass.
pub fn physics_objective<'a, D: Dynamics>(
    partition: &ReadoutPartition,
    run: &'a ReservoirRun,
    sys: &'a D,
    split: &StateSplit,
) -> Result<Box<dyn HiddenObjective + 'a>> {
    if let Some(q) = QuadraticObjective::new(partition, run, sys, split)? {
        Ok(Box::new(q))
    } else {
        Ok(Box::new(DirectObjective::new(partition, run, sys, split)?))
    }
}

/// Adam moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: DMatrix<f64>,
    v: DMatrix<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl AdamState {
    pub fn new(nrows: usize, ncols: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: DMatrix::zeros(nrows, ncols),
            v: DMatrix::zeros(nrows, ncols),
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut DMatrix<f64>, grad: &DMatrix<f64>, lr: f64) -> Result<()> {
    if params.shape() != grad.shape() || state.m.shape() != grad.shape() {
        return Err(Error::DimensionMismatch {
            context: "adam step",
            expected: params.len(),
            got: grad.len(),
        });
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grad.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// The learning rate decayed below its floor.
    MinLr,
    MaxSteps,
    NothingToTrain,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-loss snapshot (not the last iterate).
    pub partition: ReadoutPartition,
    pub best_loss: f64,
    pub history: Vec<LossRecord>,
    pub stop: StopReason,
}

impl TrainOutcome {
    pub fn converged(&self) -> bool {
        self.stop != StopReason::MaxSteps
    }
}

/// Full-batch Adam on the hidden rows with plateau learning-rate decay.
/// The recorded loss of step `k` is evaluated before the `k`-th update.
pub fn train_hidden_rows(
    partition: &ReadoutPartition,
    objective: &dyn HiddenObjective,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut hidden = partition.hidden_rows();
    if hidden.nrows() == 0 {
        return Ok(TrainOutcome {
            partition: partition.clone(),
            best_loss: f64::NAN,
            history: Vec::new(),
            stop: StopReason::NothingToTrain,
        });
    }
    let mut adam = AdamState::new(hidden.nrows(), hidden.ncols(), cfg);
    let mut lr = cfg.initial_lr;
    let mut history = Vec::new();
    let mut best = hidden.clone();
    let mut best_loss = f64::INFINITY;
    let mut plateau_ref = f64::INFINITY;
    let mut since_improvement = 0;
    let mut stop = StopReason::MaxSteps;

    for step in 0..=cfg.max_steps {
        let (loss, grad) = objective.loss_and_grad(&hidden);
        history.push(LossRecord { step, lr, loss });
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step, loss });
        }
        if loss < best_loss {
            best_loss = loss;
            best.copy_from(&hidden);
        }
        if loss < plateau_ref * (1.0 - cfg.plateau_rel_improvement) {
            plateau_ref = loss;
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= cfg.plateau_patience {
                lr /= cfg.lr_decay_factor;
                since_improvement = 0;
                plateau_ref = best_loss;
                if lr < cfg.min_lr * (1.0 - 1e-12) {
                    stop = StopReason::MinLr;
                    break;
                }
            }
        }
        if step == cfg.max_steps {
            break;
        }
        adam_step(&mut adam, &mut hidden, &grad, lr)?;
    }
    Ok(TrainOutcome {
        partition: partition.with_hidden_rows(&best),
        best_loss,
        history,
        stop,
    })
}
