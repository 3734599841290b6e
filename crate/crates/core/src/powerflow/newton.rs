use nalgebra::{DMatrix, DVector};

use super::{
    check_dims, equations, inf_norm, initial_state, ybus_payload, AdmittanceMatrix, Branch, BusKind,
    BusRecord, PowerFlowError, PowerFlowSolution,
};
use crate::trace::{Outcome, Payload, SolveTrace, PHASE_CONVERGENCE, PHASE_ITERATION, PHASE_SETUP};

/// Consecutive growing mismatches that count as divergence.
const DIVERGENCE_RUN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonRaphsonConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Switch PV buses to PQ at their reactive limit when exceeded.
    pub enforce_q_limits: bool,
}

impl Default for NewtonRaphsonConfig {
    fn default() -> Self {
        Self {
            max_iterations: 5,
            tolerance: 1e-6,
            enforce_q_limits: false,
        }
    }
}

/// 2-norm condition number from the singular values.
pub(crate) fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

struct Layout {
    /// Buses whose angle is a state variable.
    angle: Vec<usize>,
    /// Buses whose magnitude is a state variable.
    magnitude: Vec<usize>,
}

impl Layout {
    fn of(kinds: &[BusKind]) -> Self {
        let angle = (0..kinds.len()).filter(|&i| kinds[i] != BusKind::Slack).collect();
        let magnitude = (0..kinds.len()).filter(|&i| kinds[i] == BusKind::Pq).collect();
        Self { angle, magnitude }
    }

    fn dim(&self) -> usize {
        self.angle.len() + self.magnitude.len()
    }
}

fn mismatch(layout: &Layout, p_sched: &[f64], q_sched: &[f64], p: &[f64], q: &[f64]) -> Vec<f64> {
    layout
        .angle
        .iter()
        .map(|&i| p_sched[i] - p[i])
        .chain(layout.magnitude.iter().map(|&i| q_sched[i] - q[i]))
        .collect()
}

fn jacobian(layout: &Layout, y: &AdmittanceMatrix, v: &[f64], theta: &[f64], p: &[f64], q: &[f64]) -> DMatrix<f64> {
    let na = layout.angle.len();
    let dim = layout.dim();
    let mut jac = DMatrix::zeros(dim, dim);
    let rows = layout.angle.iter().map(|&i| (i, true)).chain(layout.magnitude.iter().map(|&i| (i, false)));
    for (r, (i, is_p)) in rows.enumerate() {
        for (c, &j) in layout.angle.iter().enumerate() {
            let (dp_dt, _, dq_dt, _) = equations::injection_partials(y, v, theta, p, q, i, j);
            jac[(r, c)] = if is_p { dp_dt } else { dq_dt };
        }
        for (c, &j) in layout.magnitude.iter().enumerate() {
            let (_, dp_dv, _, dq_dv) = equations::injection_partials(y, v, theta, p, q, i, j);
            jac[(r, na + c)] = if is_p { dp_dv } else { dq_dv };
        }
    }
    jac
}

/// Full polar Newton-Raphson from the setpoint/flat start.
pub fn newton_raphson(
    ybus: &AdmittanceMatrix,
    buses: &[BusRecord],
    branches: &[Branch],
    cfg: &NewtonRaphsonConfig,
) -> Result<(PowerFlowSolution, SolveTrace), PowerFlowError> {
    if cfg.max_iterations == 0 {
        return Err(PowerFlowError::InvalidConfig("max_iterations must be >= 1".into()));
    }
    if !(cfg.tolerance > 0.0) {
        return Err(PowerFlowError::InvalidConfig("tolerance must be > 0".into()));
    }
    let (mut v, mut theta) = initial_state(buses);
    check_dims(&v, &theta, ybus, buses)?;
    if !buses.iter().any(|b| b.kind == BusKind::Slack) {
        return Err(PowerFlowError::NoSlack);
    }
    let mut trace = SolveTrace::new(
        "newton-raphson",
        vec![
            ("max_iterations".into(), cfg.max_iterations.to_string()),
            ("tolerance".into(), cfg.tolerance.to_string()),
            ("enforce_q_limits".into(), cfg.enforce_q_limits.to_string()),
        ],
    );
    trace.push(PHASE_SETUP, ybus_payload(ybus), format!("admittance matrix, {} buses", ybus.n));

    let mut kinds: Vec<BusKind> = buses.iter().map(|b| b.kind).collect();
    let p_sched: Vec<f64> = buses.iter().map(|b| b.p_sched).collect();
    let mut q_sched: Vec<f64> = buses.iter().map(|b| b.q_sched).collect();
    let mut layout = Layout::of(&kinds);

    let (mut p, mut q) = equations::injections(ybus, &v, &theta);
    let mut f = mismatch(&layout, &p_sched, &q_sched, &p, &q);
    let mut norm = inf_norm(&f);
    trace.push(
        PHASE_SETUP,
        Payload::new().scalar("max mismatch", norm, "pu"),
        "initial state",
    );

    let mut iterations = 0;
    let mut growth_run = 0;
    while norm >= cfg.tolerance && iterations < cfg.max_iterations {
        iterations += 1;
        let jac = jacobian(&layout, ybus, &v, &theta, &p, &q);
        let cond = condition_number(&jac);
        let dx = jac
            .clone()
            .lu()
            .solve(&DVector::from_vec(f.clone()))
            .filter(|dx| dx.iter().all(|x| x.is_finite()))
            .ok_or(PowerFlowError::SingularJacobian { iteration: iterations })?;
        let na = layout.angle.len();
        for (k, &i) in layout.angle.iter().enumerate() {
            theta[i] += dx[k];
        }
        for (k, &i) in layout.magnitude.iter().enumerate() {
            v[i] += dx[na + k];
        }
        (p, q) = equations::injections(ybus, &v, &theta);

        let mut switched = Vec::new();
        if cfg.enforce_q_limits {
            for b in buses {
                let i = b.index;
                if kinds[i] != BusKind::Pv {
                    continue;
                }
                let q_gen = q[i] + b.q_load;
                let limit = match (b.q_min, b.q_max) {
                    (_, Some(hi)) if q_gen > hi => Some(hi),
                    (Some(lo), _) if q_gen < lo => Some(lo),
                    _ => None,
                };
                if let Some(l) = limit {
                    kinds[i] = BusKind::Pq;
                    q_sched[i] = l - b.q_load;
                    switched.push((i + 1) as f64);
                }
            }
            if !switched.is_empty() {
                layout = Layout::of(&kinds);
            }
        }

        f = mismatch(&layout, &p_sched, &q_sched, &p, &q);
        let new_norm = inf_norm(&f);
        growth_run = if new_norm > norm { growth_run + 1 } else { 0 };
        norm = new_norm;

        let degrees: Vec<f64> = theta.iter().map(|t| t.to_degrees()).collect();
        let mut payload = Payload::new()
            .vector("|V|", &v, "pu")
            .vector("angle", &degrees, "deg")
            .scalar("max mismatch", norm, "pu")
            .scalar("jacobian condition", cond, "");
        if jac.nrows() <= crate::trace::MAX_RENDERED_DIM {
            payload = payload.matrix("J", jac.nrows(), jac.ncols(), jac.transpose().as_slice().to_vec(), "");
        }
        if !switched.is_empty() {
            payload = payload.vector("PV buses switched to PQ", &switched, "");
        }
        trace.push(PHASE_ITERATION, payload, format!("iteration {iterations}"));

        if growth_run >= DIVERGENCE_RUN || !norm.is_finite() {
            return Err(PowerFlowError::Diverged(growth_run));
        }
    }

    let converged = norm < cfg.tolerance;
    trace.push(
        PHASE_CONVERGENCE,
        Payload::new().scalar("max mismatch", norm, "pu"),
        if converged { "tolerance reached" } else { "iteration limit reached" },
    );
    trace
        .finalize(Outcome {
            converged,
            iterations,
            summary: format!("max mismatch {norm:.3e} pu"),
        })
        .expect("open trace");
    let solution = PowerFlowSolution::assemble(v, theta, ybus, branches, converged, iterations, norm);
    Ok((solution, trace))
}
