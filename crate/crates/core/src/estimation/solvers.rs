use nalgebra::{DMatrix, DVector};

use super::{
    measurement_function, measurement_jacobian, EstimationError, MeasurementSet, StateEstimate,
    StateLayout,
};
use crate::powerflow::{inf_norm, ybus_payload, AdmittanceMatrix, Branch};
use crate::trace::{Outcome, Payload, SolveTrace, PHASE_CONVERGENCE, PHASE_ITERATION, PHASE_SETUP};

/// Consecutive objective increases that count as divergence.
const DIVERGENCE_RUN: usize = 3;
/// Largest accepted condition number of a Jacobi-scaled gain matrix.
const MAX_GAIN_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    /// Converged once the largest state update falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl EstimatorConfig {
    pub fn wls() -> Self {
        Self { tolerance: 1e-6, max_iterations: 10 }
    }

    /// Constant-gain iterations converge linearly and need more steps.
    pub fn fdse() -> Self {
        Self { tolerance: 1e-6, max_iterations: 50 }
    }

    fn check(&self) -> Result<(), EstimationError> {
        if self.max_iterations == 0 || !(self.tolerance > 0.0) {
            return Err(EstimationError::InvalidMeasurement(
                "estimator needs max_iterations >= 1 and tolerance > 0".into(),
            ));
        }
        Ok(())
    }
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self::wls()
    }
}

struct Factored {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    condition: f64,
}

/// Factor a gain matrix, rejecting singular or numerically rank-deficient
/// ones.
fn factor_gain(gain: DMatrix<f64>, what: &str) -> Result<Factored, EstimationError> {
    let unobservable = || EstimationError::UnobservableSystem(format!("{what} gain matrix is singular"));
    let d: Vec<f64> = gain.diagonal().iter().copied().collect();
    if d.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(unobservable());
    }
    let scaled = DMatrix::from_fn(gain.nrows(), gain.ncols(), |i, j| gain[(i, j)] / (d[i] * d[j]).sqrt());
    let eig = scaled.symmetric_eigenvalues();
    let max = eig.iter().copied().fold(0.0, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if condition > MAX_GAIN_CONDITION {
        return Err(unobservable());
    }
    let chol = gain.cholesky().ok_or_else(unobservable)?;
    Ok(Factored { chol, condition })
}

fn initial(n: usize, layout: &StateLayout, init: Option<(&[f64], &[f64])>) -> Result<(Vec<f64>, Vec<f64>), EstimationError> {
    let (v, mut theta) = match init {
        Some((v, t)) => (v.to_vec(), t.to_vec()),
        None => (vec![1.0; n], vec![0.0; n]),
    };
    if v.len() != n || theta.len() != n {
        return Err(EstimationError::DimensionMismatch("initial state does not match the bus count".into()));
    }
    for &r in &layout.references {
        theta[r] = 0.0;
    }
    Ok((v, theta))
}

fn objective(set: &MeasurementSet, residuals: &[f64]) -> f64 {
    set.iter().zip(residuals).map(|(m, r)| r * r * m.weight()).sum()
}

fn residuals(set: &MeasurementSet, h: &[f64]) -> Vec<f64> {
    set.iter().zip(h).map(|(m, h)| m.value - h).collect()
}

fn state_payload(v: &[f64], theta: &[f64]) -> Payload {
    let degrees: Vec<f64> = theta.iter().map(|t| t.to_degrees()).collect();
    Payload::new().vector("|V|", v, "pu").vector("angle", &degrees, "deg")
}

fn setup(
    trace: &mut SolveTrace,
    set: &MeasurementSet,
    ybus: &AdmittanceMatrix,
    layout: &StateLayout,
) {
    trace.push(PHASE_SETUP, ybus_payload(ybus), format!("admittance matrix, {} buses", ybus.n));
    trace.push(
        PHASE_SETUP,
        Payload::new()
            .scalar("measurements", set.len() as f64, "")
            .scalar("state variables", layout.dim() as f64, "")
            .vector("z", &set.values(), "pu"),
        "measurement set",
    );
}

fn finish(
    mut trace: SolveTrace,
    set: &MeasurementSet,
    ybus: &AdmittanceMatrix,
    branches: &[Branch],
    v: Vec<f64>,
    theta: Vec<f64>,
    converged: bool,
    iterations: usize,
) -> Result<(StateEstimate, SolveTrace), EstimationError> {
    let r = residuals(set, &measurement_function(&v, &theta, ybus, branches, set)?);
    let obj = objective(set, &r);
    trace.push(
        PHASE_CONVERGENCE,
        Payload::new().scalar("objective", obj, "").vector("residuals", &r, "pu"),
        if converged { "tolerance reached" } else { "iteration limit reached" },
    );
    trace
        .finalize(Outcome {
            converged,
            iterations,
            summary: format!("objective {obj:.6e}"),
        })
        .expect("open trace");
    let estimate = StateEstimate { v, theta, residuals: r, objective: obj, converged, iterations_run: iterations };
    Ok((estimate, trace))
}

/// Tracks consecutive objective increases.
struct Growth {
    last: f64,
    run: usize,
}

impl Growth {
    fn observe(&mut self, obj: f64) -> Result<(), EstimationError> {
        self.run = if obj > self.last * (1.0 + 1e-9) + 1e-12 { self.run + 1 } else { 0 };
        self.last = obj;
        if self.run >= DIVERGENCE_RUN || !obj.is_finite() {
            return Err(EstimationError::Diverged(self.run));
        }
        Ok(())
    }
}

/// Gauss-Newton weighted least squares. `references` are the buses whose
/// angle is pinned to zero; `init` defaults to a flat start.
pub fn wls_estimate(
    set: &MeasurementSet,
    ybus: &AdmittanceMatrix,
    branches: &[Branch],
    references: &[usize],
    init: Option<(&[f64], &[f64])>,
    cfg: &EstimatorConfig,
) -> Result<(StateEstimate, SolveTrace), EstimationError> {
    cfg.check()?;
    if set.is_empty() {
        return Err(EstimationError::NoMeasurements);
    }
    let n = ybus.n;
    let layout = StateLayout::new(n, references);
    if set.len() < layout.dim() {
        return Err(EstimationError::UnobservableSystem(format!(
            "{} measurements for {} state variables",
            set.len(),
            layout.dim()
        )));
    }
    let (mut v, mut theta) = initial(n, &layout, init)?;
    let mut trace = SolveTrace::new(
        "wls",
        vec![
            ("max_iterations".into(), cfg.max_iterations.to_string()),
            ("tolerance".into(), cfg.tolerance.to_string()),
        ],
    );
    setup(&mut trace, set, ybus, &layout);
    let w = DVector::from_iterator(set.len(), set.iter().map(|m| m.weight()));

    let mut iterations = 0;
    let mut growth = Growth { last: f64::INFINITY, run: 0 };
    let converged = loop {
        let r = residuals(set, &measurement_function(&v, &theta, ybus, branches, set)?);
        let obj = objective(set, &r);
        growth.observe(obj)?;
        let h = measurement_jacobian(&v, &theta, ybus, branches, set, &layout)?;
        let ht_w = {
            let mut t = h.transpose();
            for (j, wj) in w.iter().enumerate() {
                t.column_mut(j).scale_mut(*wj);
            }
            t
        };
        let gain = &ht_w * &h;
        let factored = factor_gain(gain, "WLS")?;
        let dx = factored.chol.solve(&(&ht_w * DVector::from_vec(r)));
        let step = inf_norm(dx.as_slice());
        if step < cfg.tolerance {
            break true;
        }
        if iterations == cfg.max_iterations {
            break false;
        }
        for i in 0..n {
            if let Some(c) = layout.angle_col[i] {
                theta[i] += dx[c];
            }
            v[i] += dx[layout.v_col(i)];
        }
        iterations += 1;
        trace.push(
            PHASE_ITERATION,
            state_payload(&v, &theta)
                .scalar("objective", obj, "")
                .scalar("max |dx|", step, "")
                .scalar("gain condition", factored.condition, ""),
            format!("iteration {iterations}"),
        );
    };
    finish(trace, set, ybus, branches, v, theta, converged, iterations)
}

/// Rows of `h` selected by `rows` and columns by `cols`.
fn block(h: &DMatrix<f64>, rows: &[usize], cols: std::ops::Range<usize>) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| h[(rows[i], cols.start + j)])
}

struct Partition {
    rows: Vec<usize>,
    /// `(HᵀWH)⁻¹` applied via Cholesky, with `HᵀW` kept for the right side.
    ht_w: DMatrix<f64>,
    gain: Factored,
}

impl Partition {
    fn build(set: &MeasurementSet, h0: &DMatrix<f64>, rows: Vec<usize>, cols: std::ops::Range<usize>, what: &str) -> Result<Self, EstimationError> {
        if rows.len() < cols.len() || rows.is_empty() {
            return Err(EstimationError::UnobservableSystem(format!(
                "{what} partition has {} measurements for {} state variables",
                rows.len(),
                cols.len()
            )));
        }
        let hp = block(h0, &rows, cols);
        let mut ht_w = hp.transpose();
        for (j, &r) in rows.iter().enumerate() {
            ht_w.column_mut(j).scale_mut(set.as_slice()[r].weight());
        }
        let gain = factor_gain(&ht_w * &hp, what)?;
        Ok(Self { rows, ht_w, gain })
    }

    fn step(&self, set: &MeasurementSet, h: &[f64]) -> DVector<f64> {
        let r = DVector::from_iterator(self.rows.len(), self.rows.iter().map(|&i| set.as_slice()[i].value - h[i]));
        self.gain.chol.solve(&(&self.ht_w * r))
    }
}

/// Fast-decoupled estimation: constant P-θ and Q-V gains from the
/// flat-start Jacobian, factored once, alternating half-steps.
pub fn fdse_estimate(
    set: &MeasurementSet,
    ybus: &AdmittanceMatrix,
    branches: &[Branch],
    references: &[usize],
    init: Option<(&[f64], &[f64])>,
    cfg: &EstimatorConfig,
) -> Result<(StateEstimate, SolveTrace), EstimationError> {
    cfg.check()?;
    if set.is_empty() {
        return Err(EstimationError::NoMeasurements);
    }
    let n = ybus.n;
    let layout = StateLayout::new(n, references);
    let na = layout.angle_count();
    let flat_v = vec![1.0; n];
    let flat_t = vec![0.0; n];
    let h0 = measurement_jacobian(&flat_v, &flat_t, ybus, branches, set, &layout)?;
    let (active, reactive): (Vec<usize>, Vec<usize>) = (0..set.len()).partition(|&i| set.as_slice()[i].kind.is_active());
    let p_part = Partition::build(set, &h0, active, 0..na, "active")?;
    let q_part = Partition::build(set, &h0, reactive, na..layout.dim(), "reactive")?;

    let (mut v, mut theta) = initial(n, &layout, init)?;
    let mut trace = SolveTrace::new(
        "fdse",
        vec![
            ("max_iterations".into(), cfg.max_iterations.to_string()),
            ("tolerance".into(), cfg.tolerance.to_string()),
        ],
    );
    setup(&mut trace, set, ybus, &layout);
    let mut gains = Payload::new()
        .scalar("active gain condition", p_part.gain.condition, "")
        .scalar("reactive gain condition", q_part.gain.condition, "");
    let gp = p_part.ht_w.nrows();
    if gp <= crate::trace::MAX_RENDERED_DIM {
        let g = p_part.gain.chol.l() * p_part.gain.chol.l().transpose();
        gains = gains.matrix("G_P", gp, gp, g.transpose().as_slice().to_vec(), "");
    }
    trace.push(PHASE_SETUP, gains, "flat-start gain matrices");

    let mut iterations = 0;
    let mut growth = Growth { last: f64::INFINITY, run: 0 };
    let converged = loop {
        let h = measurement_function(&v, &theta, ybus, branches, set)?;
        let obj = objective(set, &residuals(set, &h));
        growth.observe(obj)?;
        if iterations == cfg.max_iterations {
            // one more look to see whether the last step already settled it
            let dt = p_part.step(set, &h);
            let dv = q_part.step(set, &h);
            break inf_norm(dt.as_slice()).max(inf_norm(dv.as_slice())) < cfg.tolerance;
        }
        let dt = p_part.step(set, &h);
        for i in 0..n {
            if let Some(c) = layout.angle_col[i] {
                theta[i] += dt[c];
            }
        }
        let h = measurement_function(&v, &theta, ybus, branches, set)?;
        let dv = q_part.step(set, &h);
        for i in 0..n {
            v[i] += dv[i];
        }
        let (st, sv) = (inf_norm(dt.as_slice()), inf_norm(dv.as_slice()));
        if st < cfg.tolerance && sv < cfg.tolerance {
            break true;
        }
        iterations += 1;
        trace.push(
            PHASE_ITERATION,
            state_payload(&v, &theta)
                .scalar("objective", obj, "")
                .scalar("max |d theta|", st, "rad")
                .scalar("max |d V|", sv, "pu"),
            format!("iteration {iterations}"),
        );
    };
    finish(trace, set, ybus, branches, v, theta, converged, iterations)
}
