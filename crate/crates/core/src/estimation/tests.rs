use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::*;
use crate::fixtures;
use crate::powerflow::extract::{extract_bus_system, SlackPolicy};
use crate::powerflow::{newton_raphson, NewtonRaphsonConfig};
use crate::powerflow::{BusRecord, PowerFlowSolution};

fn solved_ieee14() -> (BusSystem, AdmittanceMatrix, PowerFlowSolution) {
    let sys = extract_bus_system(&fixtures::ieee14(), SlackPolicy::Required).unwrap();
    let y = sys.ybus().unwrap();
    let (sol, _) = newton_raphson(&y, &sys.buses, &sys.branches, &NewtonRaphsonConfig::default()).unwrap();
    assert!(sol.converged);
    (sys, y, sol)
}

/// Every injection, every branch-end flow and every magnitude.
fn full_set(sys: &BusSystem, sol: &PowerFlowSolution) -> MeasurementSet {
    let mut m = Vec::new();
    for i in 0..sys.bus_count() {
        let bus = Location::Bus { bus: i };
        m.push(Measurement::new(MeasurementKind::Pinj, bus, sol.p_calc[i], 0.01));
        m.push(Measurement::new(MeasurementKind::Qinj, bus, sol.q_calc[i], 0.01));
        m.push(Measurement::new(MeasurementKind::Vmag, bus, sol.v[i], 0.004));
    }
    for (k, br) in sys.branches.iter().enumerate() {
        for end in [End::From, End::To] {
            let (p, q) = equations::branch_flow(br, &sol.v, &sol.theta, end);
            let at = Location::Branch { branch: k, end };
            m.push(Measurement::new(MeasurementKind::Pflow, at, p, 0.01));
            m.push(Measurement::new(MeasurementKind::Qflow, at, q, 0.01));
        }
    }
    MeasurementSet::new(m, sys.bus_count(), sys.branches.len()).unwrap()
}

#[test]
fn prediction_matches_power_flow_quantities() {
    let (sys, y, sol) = solved_ieee14();
    let set = full_set(&sys, &sol);
    let h = measurement_function(&sol.v, &sol.theta, &y, &sys.branches, &set).unwrap();
    for (m, h) in set.iter().zip(h) {
        assert!((m.value - h).abs() < 1e-10);
    }
}

#[test]
fn flat_lossless_state_predicts_zero_flow() {
    let buses = vec![BusRecord::slack(0, 1.0, 0.0), BusRecord::pq(1, 0.0, 0.0)];
    let branches = vec![crate::powerflow::Branch::from_impedance(0, 1, 0.0, 0.1, 0.0)];
    let sys = BusSystem::new(buses, branches);
    let y = sys.ybus().unwrap();
    let set = MeasurementSet::new(
        vec![
            Measurement::new(MeasurementKind::Pflow, Location::Branch { branch: 0, end: End::From }, 0.0, 0.01),
            Measurement::new(MeasurementKind::Pinj, Location::Bus { bus: 1 }, 0.0, 0.01),
            Measurement::new(MeasurementKind::Vmag, Location::Bus { bus: 1 }, 1.0, 0.01),
        ],
        2,
        1,
    )
    .unwrap();
    let (v, t) = (vec![1.0; 2], vec![0.0; 2]);
    assert_eq!(measurement_function(&v, &t, &y, &sys.branches, &set).unwrap(), vec![0.0, 0.0, 1.0]);
    let layout = StateLayout::new(2, &[0]);
    let h = measurement_jacobian(&v, &t, &y, &sys.branches, &set, &layout).unwrap();
    // Pflow from bus 0: dP/dθ1 = -b = -10 with b = -10 for x = 0.1
    assert!((h[(0, 0)] + 10.0).abs() < 1e-12);
    assert_eq!(h.row(2).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0]);
}

#[test]
fn jacobian_matches_central_differences() {
    let (sys, y, sol) = solved_ieee14();
    let set = full_set(&sys, &sol);
    let layout = StateLayout::new(sys.bus_count(), &sys.slack_buses());
    let mut rng = StdRng::seed_from_u64(7);
    for _ in 0..5 {
        let v: Vec<f64> = (0..y.n).map(|_| rng.random_range(0.9..1.1)).collect();
        let mut t: Vec<f64> = (0..y.n).map(|_| rng.random_range(-0.3..0.3)).collect();
        t[0] = 0.0;
        let h = measurement_jacobian(&v, &t, &y, &sys.branches, &set, &layout).unwrap();
        let step = 1e-6;
        for bus in 0..y.n {
            for is_v in [false, true] {
                let col = if is_v { layout.v_col(bus) } else if let Some(c) = layout.angle_col[bus] { c } else { continue };
                let (mut vp, mut vm, mut tp, mut tm) = (v.clone(), v.clone(), t.clone(), t.clone());
                if is_v {
                    vp[bus] += step;
                    vm[bus] -= step;
                } else {
                    tp[bus] += step;
                    tm[bus] -= step;
                }
                let hp = measurement_function(&vp, &tp, &y, &sys.branches, &set).unwrap();
                let hm = measurement_function(&vm, &tm, &y, &sys.branches, &set).unwrap();
                for r in 0..set.len() {
                    let fd = (hp[r] - hm[r]) / (2.0 * step);
                    let err = (fd - h[(r, col)]).abs() / h[(r, col)].abs().max(1.0);
                    assert!(err < 1e-6, "row {r} col {col}: {fd} vs {}", h[(r, col)]);
                }
            }
        }
    }
}

#[test]
fn wls_recovers_power_flow_state() {
    let (sys, y, sol) = solved_ieee14();
    let set = full_set(&sys, &sol);
    let (est, trace) = wls_estimate(&set, &y, &sys.branches, &sys.slack_buses(), None, &EstimatorConfig::wls()).unwrap();
    assert!(est.converged);
    for i in 0..y.n {
        assert!((est.v[i] - sol.v[i]).abs() < 1e-6);
        assert!((est.theta[i] - sol.theta[i]).abs() < 1e-6);
    }
    assert_eq!(est.theta[0], 0.0);
    assert!(est.objective < 1e-8);
    assert_eq!(trace.iteration_records().count(), est.iterations_run);

    let (fd, _) = fdse_estimate(&set, &y, &sys.branches, &sys.slack_buses(), None, &EstimatorConfig::fdse()).unwrap();
    assert!(fd.converged);
    for i in 0..y.n {
        assert!((fd.v[i] - est.v[i]).abs() < 1e-4);
        assert!((fd.theta[i] - est.theta[i]).abs() < 1e-4);
    }
}

#[test]
fn metered_fixture_yields_the_same_estimate() {
    let (sys, y, sol) = solved_ieee14();
    let net = fixtures::metered(&fixtures::ieee14(), &sys, &sol).unwrap();
    let se_sys = extract_bus_system(&net, SlackPolicy::ReferenceFallback).unwrap();
    let set = meters_to_measurements(&net, &se_sys).unwrap();
    assert_eq!(set.len(), 14 * 3 + 2 * 2 * 17);
    let (est, _) = wls_estimate(&set, &y, &se_sys.branches, &se_sys.slack_buses(), None, &EstimatorConfig::wls()).unwrap();
    for i in 0..y.n {
        assert!((est.v[i] - sol.v[i]).abs() < 1e-6);
        assert!((est.theta[i] - sol.theta[i]).abs() < 1e-6);
    }
}

fn one_bus() -> (BusSystem, AdmittanceMatrix) {
    let sys = BusSystem::new(vec![BusRecord::slack(0, 1.0, 0.0)], Vec::new());
    let y = sys.ybus().unwrap();
    (sys, y)
}

#[test]
fn single_magnitude_is_recovered_exactly() {
    let (sys, y) = one_bus();
    let set = MeasurementSet::new(vec![Measurement::new(MeasurementKind::Vmag, Location::Bus { bus: 0 }, 1.03, 0.004)], 1, 0).unwrap();
    let (est, _) = wls_estimate(&set, &y, &sys.branches, &[0], None, &EstimatorConfig::wls()).unwrap();
    assert_eq!(est.iterations_run, 1);
    assert!((est.v[0] - 1.03).abs() < 1e-15);
}

#[test]
fn too_few_measurements_are_unobservable() {
    let (sys, y, sol) = solved_ieee14();
    let few: Vec<Measurement> = full_set(&sys, &sol).iter().take(10).cloned().collect();
    let set = MeasurementSet::new(few, 14, sys.branches.len()).unwrap();
    let err = wls_estimate(&set, &y, &sys.branches, &[0], None, &EstimatorConfig::wls()).unwrap_err();
    assert_eq!(err.name(), "UnobservableSystem");
}

#[test]
fn fdse_partitions_need_both_kinds() {
    let (sys, y, sol) = solved_ieee14();
    let only_p: Vec<Measurement> = full_set(&sys, &sol).iter().filter(|m| m.kind.is_active()).cloned().collect();
    let set = MeasurementSet::new(only_p, 14, sys.branches.len()).unwrap();
    let err = fdse_estimate(&set, &y, &sys.branches, &[0], None, &EstimatorConfig::fdse()).unwrap_err();
    assert!(matches!(err, EstimationError::UnobservableSystem(ref s) if s.contains("reactive")), "{err}");
}

#[test]
fn fdse_flat_consistent_converges_at_zero() {
    let buses = vec![BusRecord::slack(0, 1.0, 0.0), BusRecord::pq(1, 0.0, 0.0)];
    let sys = BusSystem::new(buses, vec![crate::powerflow::Branch::from_impedance(0, 1, 0.01, 0.1, 0.0)]);
    let y = sys.ybus().unwrap();
    let set = MeasurementSet::new(
        vec![
            Measurement::new(MeasurementKind::Pflow, Location::Branch { branch: 0, end: End::From }, 0.0, 0.01),
            Measurement::new(MeasurementKind::Vmag, Location::Bus { bus: 0 }, 1.0, 0.004),
            Measurement::new(MeasurementKind::Vmag, Location::Bus { bus: 1 }, 1.0, 0.004),
        ],
        2,
        1,
    )
    .unwrap();
    let (est, _) = fdse_estimate(&set, &y, &sys.branches, &[0], None, &EstimatorConfig::fdse()).unwrap();
    assert!(est.converged);
    assert_eq!(est.iterations_run, 0);
}

#[test]
fn bad_datum_has_largest_normalized_residual() {
    let (sys, y, sol) = solved_ieee14();
    let mut ms: Vec<Measurement> = full_set(&sys, &sol).iter().cloned().collect();
    let bad = 17;
    ms[bad].value += 10.0 * ms[bad].sigma;
    let set = MeasurementSet::new(ms, 14, sys.branches.len()).unwrap();
    let (est, _) = wls_estimate(&set, &y, &sys.branches, &[0], None, &EstimatorConfig::wls()).unwrap();
    let report = residual_report(Some(&est), &set).unwrap();
    assert_eq!(report.largest, Some(bad));
    assert_eq!(residual_report(None, &set).unwrap_err().name(), "OrderingViolation");
}

#[test]
fn sigma_scaling_and_order_leave_estimate_unchanged() {
    let (sys, y, sol) = solved_ieee14();
    let mut ms: Vec<Measurement> = full_set(&sys, &sol).iter().cloned().collect();
    let mut rng = StdRng::seed_from_u64(3);
    for m in &mut ms {
        m.value += rng.random_range(-1.0..1.0) * m.sigma;
    }
    let base = MeasurementSet::new(ms.clone(), 14, sys.branches.len()).unwrap();
    let (a, _) = wls_estimate(&base, &y, &sys.branches, &[0], None, &EstimatorConfig::wls()).unwrap();
    let scaled: Vec<Measurement> = ms.iter().cloned().map(|mut m| {
        m.sigma *= 3.0;
        m
    }).collect();
    let (b, _) = wls_estimate(&MeasurementSet::new(scaled, 14, sys.branches.len()).unwrap(), &y, &sys.branches, &[0], None, &EstimatorConfig::wls()).unwrap();
    ms.reverse();
    let (c, _) = wls_estimate(&MeasurementSet::new(ms, 14, sys.branches.len()).unwrap(), &y, &sys.branches, &[0], None, &EstimatorConfig::wls()).unwrap();
    for i in 0..y.n {
        assert!((a.v[i] - b.v[i]).abs() < 1e-6 && (a.v[i] - c.v[i]).abs() < 1e-6);
        assert!((a.theta[i] - b.theta[i]).abs() < 1e-6 && (a.theta[i] - c.theta[i]).abs() < 1e-6);
    }
    assert!((a.objective / b.objective - 9.0).abs() < 1e-3);
}
