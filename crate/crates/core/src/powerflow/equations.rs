//! Polar-form AC network equations and their partial derivatives, shared by
//! the Newton-Raphson solver and the state estimators.

use super::{AdmittanceMatrix, Branch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum End {
    From,
    To,
}

/// Net injected P and Q at every bus.
pub fn injections(y: &AdmittanceMatrix, v: &[f64], theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = y.n;
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let yij = y.get(i, j);
            if yij.re == 0.0 && yij.im == 0.0 {
                continue;
            }
            let t = theta[i] - theta[j];
            let (s, c) = t.sin_cos();
            p[i] += v[i] * v[j] * (yij.re * c + yij.im * s);
            q[i] += v[i] * v[j] * (yij.re * s - yij.im * c);
        }
    }
    (p, q)
}

/// Partial derivatives of the injection at bus `i` with respect to the
/// angle and magnitude of bus `j`: `(dP/dθ, dP/dV, dQ/dθ, dQ/dV)`.
/// `p` and `q` are the current injections.
pub fn injection_partials(
    y: &AdmittanceMatrix,
    v: &[f64],
    theta: &[f64],
    p: &[f64],
    q: &[f64],
    i: usize,
    j: usize,
) -> (f64, f64, f64, f64) {
    let yij = y.get(i, j);
    let (g, b) = (yij.re, yij.im);
    if i == j {
        (
            -q[i] - b * v[i] * v[i],
            p[i] / v[i] + g * v[i],
            p[i] - g * v[i] * v[i],
            q[i] / v[i] - b * v[i],
        )
    } else {
        let (s, c) = (theta[i] - theta[j]).sin_cos();
        (
            v[i] * v[j] * (g * s - b * c),
            v[i] * (g * c + b * s),
            -v[i] * v[j] * (g * c + b * s),
            v[i] * (g * s - b * c),
        )
    }
}

fn ends(br: &Branch, end: End) -> (usize, usize) {
    match end {
        End::From => (br.from, br.to),
        End::To => (br.to, br.from),
    }
}

/// P and Q entering the branch at `end`.
pub fn branch_flow(br: &Branch, v: &[f64], theta: &[f64], end: End) -> (f64, f64) {
    let (k, m) = ends(br, end);
    let (g, b) = (br.series_admittance.re, br.series_admittance.im);
    let bh = br.shunt_susceptance_half;
    let (s, c) = (theta[k] - theta[m]).sin_cos();
    let p = v[k] * v[k] * g - v[k] * v[m] * (g * c + b * s);
    let q = -v[k] * v[k] * (b + bh) - v[k] * v[m] * (g * s - b * c);
    (p, q)
}

/// Partials of the flow at `end` with respect to the near bus `k` and far
/// bus `m`: `[dP/dθk, dP/dθm, dP/dVk, dP/dVm]` and the same for Q.
pub fn branch_flow_partials(br: &Branch, v: &[f64], theta: &[f64], end: End) -> ([f64; 4], [f64; 4]) {
    let (k, m) = ends(br, end);
    let (g, b) = (br.series_admittance.re, br.series_admittance.im);
    let bh = br.shunt_susceptance_half;
    let (s, c) = (theta[k] - theta[m]).sin_cos();
    let a = g * c + b * s;
    let d = g * s - b * c;
    let dp = [
        v[k] * v[m] * d,
        -v[k] * v[m] * d,
        2.0 * v[k] * g - v[m] * a,
        -v[k] * a,
    ];
    let dq = [
        -v[k] * v[m] * a,
        v[k] * v[m] * a,
        -2.0 * v[k] * (b + bh) - v[m] * d,
        -v[k] * d,
    ];
    (dp, dq)
}

/// Bus indices `(near, far)` of a branch seen from `end`.
pub fn branch_ends(br: &Branch, end: End) -> (usize, usize) {
    ends(br, end)
}
