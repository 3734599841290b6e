use num_complex::Complex64;

use super::{
    check_dims, equations, inf_norm, initial_state, power_mismatch, ybus_payload, AdmittanceMatrix,
    BusKind, BusRecord, PowerFlowError, PowerFlowSolution,
};
use crate::trace::{Outcome, Payload, SolveTrace, PHASE_CONVERGENCE, PHASE_ITERATION, PHASE_SETUP};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussSeidelConfig {
    /// Over-relaxation factor applied to each voltage update.
    pub acceleration: f64,
    pub max_iterations: usize,
    /// Largest per-unit power mismatch accepted as converged.
    pub tolerance: f64,
    /// Hold PV buses at their reactive limits instead of their setpoint
    /// when a limit is exceeded.
    pub enforce_q_limits: bool,
}

impl Default for GaussSeidelConfig {
    fn default() -> Self {
        Self {
            acceleration: 1.6,
            max_iterations: 10,
            tolerance: 1e-6,
            enforce_q_limits: false,
        }
    }
}

impl GaussSeidelConfig {
    fn check(&self) -> Result<(), PowerFlowError> {
        if !(self.acceleration > 0.0 && self.acceleration <= 2.0) {
            return Err(PowerFlowError::InvalidConfig("acceleration must be in (0, 2]".into()));
        }
        if self.max_iterations == 0 {
            return Err(PowerFlowError::InvalidConfig("max_iterations must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(PowerFlowError::InvalidConfig("tolerance must be > 0".into()));
        }
        Ok(())
    }
}

/// Accelerated Gauss-Seidel sweeps from the setpoint/flat start.
pub fn gauss_seidel(
    ybus: &AdmittanceMatrix,
    buses: &[BusRecord],
    branches: &[super::Branch],
    cfg: &GaussSeidelConfig,
) -> Result<(PowerFlowSolution, SolveTrace), PowerFlowError> {
    cfg.check()?;
    let n = ybus.n;
    let (v0, t0) = initial_state(buses);
    check_dims(&v0, &t0, ybus, buses)?;
    if !buses.iter().any(|b| b.kind == BusKind::Slack) {
        return Err(PowerFlowError::NoSlack);
    }
    for b in buses.iter().filter(|b| b.kind != BusKind::Slack) {
        let d = ybus.get(b.index, b.index);
        if d.norm() == 0.0 {
            return Err(PowerFlowError::SingularDiagonal { bus: b.index });
        }
    }

    let mut trace = SolveTrace::new(
        "gauss-seidel",
        vec![
            ("acceleration".into(), cfg.acceleration.to_string()),
            ("max_iterations".into(), cfg.max_iterations.to_string()),
            ("tolerance".into(), cfg.tolerance.to_string()),
            ("enforce_q_limits".into(), cfg.enforce_q_limits.to_string()),
        ],
    );
    trace.push(PHASE_SETUP, ybus_payload(ybus), format!("admittance matrix, {n} buses"));

    let mut volts: Vec<Complex64> = v0
        .iter()
        .zip(&t0)
        .map(|(&m, &a)| Complex64::from_polar(m, a))
        .collect();
    let polar = |volts: &[Complex64]| -> (Vec<f64>, Vec<f64>) {
        (volts.iter().map(|z| z.norm()).collect(), volts.iter().map(|z| z.arg()).collect())
    };

    let mut mismatch = inf_norm(&power_mismatch(&v0, &t0, ybus, buses)?);
    trace.push(
        PHASE_SETUP,
        Payload::new().scalar("max mismatch", mismatch, "pu"),
        "initial state",
    );

    let mut q_sched: Vec<f64> = buses.iter().map(|b| b.q_sched).collect();
    let mut iterations = 0;
    while mismatch >= cfg.tolerance && iterations < cfg.max_iterations {
        iterations += 1;
        let mut limited = Vec::new();
        for b in buses.iter().filter(|b| b.kind != BusKind::Slack) {
            let i = b.index;
            let yii = ybus.get(i, i);
            let others: Complex64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| ybus.get(i, j) * volts[j])
                .sum();
            let mut hold_magnitude = b.kind == BusKind::Pv;
            if b.kind == BusKind::Pv {
                let q = -(volts[i].conj() * (yii * volts[i] + others)).im;
                q_sched[i] = q;
                if cfg.enforce_q_limits {
                    let q_gen = q + b.q_load;
                    if let Some(hi) = b.q_max.filter(|hi| q_gen > *hi) {
                        q_sched[i] = hi - b.q_load;
                        hold_magnitude = false;
                        limited.push(i);
                    } else if let Some(lo) = b.q_min.filter(|lo| q_gen < *lo) {
                        q_sched[i] = lo - b.q_load;
                        hold_magnitude = false;
                        limited.push(i);
                    }
                }
            }
            let s = Complex64::new(b.p_sched, -q_sched[i]);
            let v_new = (s / volts[i].conj() - others) / yii;
            let v_acc = volts[i] + cfg.acceleration * (v_new - volts[i]);
            volts[i] = if hold_magnitude {
                Complex64::from_polar(b.v_set, v_acc.arg())
            } else {
                v_acc
            };
        }
        let (v, theta) = polar(&volts);
        let mis = gs_mismatch(&v, &theta, ybus, buses, &q_sched, &limited);
        mismatch = inf_norm(&mis);
        let degrees: Vec<f64> = theta.iter().map(|t| t.to_degrees()).collect();
        let mut payload = Payload::new()
            .vector("|V|", &v, "pu")
            .vector("angle", &degrees, "deg")
            .scalar("max mismatch", mismatch, "pu");
        if !limited.is_empty() {
            let at_limit: Vec<f64> = limited.iter().map(|&i| (i + 1) as f64).collect();
            payload = payload.vector("buses at Q limit", &at_limit, "");
        }
        trace.push(PHASE_ITERATION, payload, format!("sweep {iterations}"));
    }

    let converged = mismatch < cfg.tolerance;
    let (v, theta) = polar(&volts);
    trace.push(
        PHASE_CONVERGENCE,
        Payload::new().scalar("max mismatch", mismatch, "pu"),
        if converged { "tolerance reached" } else { "iteration limit reached" },
    );
    trace
        .finalize(Outcome {
            converged,
            iterations,
            summary: format!("max mismatch {mismatch:.3e} pu"),
        })
        .expect("open trace");
    let solution = PowerFlowSolution::assemble(v, theta, ybus, branches, converged, iterations, mismatch);
    Ok((solution, trace))
}

/// Mismatch where PV buses held at a reactive limit count as PQ.
fn gs_mismatch(
    v: &[f64],
    theta: &[f64],
    ybus: &AdmittanceMatrix,
    buses: &[BusRecord],
    q_sched: &[f64],
    limited: &[usize],
) -> Vec<f64> {
    let (p, q) = equations::injections(ybus, v, theta);
    let mut out: Vec<f64> = buses
        .iter()
        .filter(|b| b.kind != BusKind::Slack)
        .map(|b| b.p_sched - p[b.index])
        .collect();
    out.extend(
        buses
            .iter()
            .filter(|b| b.kind == BusKind::Pq || limited.contains(&b.index))
            .map(|b| q_sched[b.index] - q[b.index]),
    );
    out
}
