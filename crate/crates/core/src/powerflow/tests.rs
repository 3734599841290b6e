use num_complex::Complex64;
use proptest::prelude::*;

use super::*;
use crate::fixtures;

/// IEEE 14-bus solution with nominal transformer ratios, from an
/// independent root-finding solve: (|V|, angle in radians) per bus.
const IEEE14_SOLUTION: [(f64, f64); 14] = [
    (1.06, 0.0),
    (1.045, -0.08642495159024403),
    (1.01, -0.22018638011991357),
    (1.0294892711599923, -0.18186606194653573),
    (1.0348827075352411, -0.15630828255356688),
    (1.07, -0.2560726942030628),
    (1.0558758052903017, -0.23655127882938046),
    (1.09, -0.23655127882938048),
    (1.04967240158091, -0.26475560191291286),
    (1.0458220270822898, -0.26818318723465184),
    (1.0542951640670035, -0.26433977322827545),
    (1.0546925776268183, -0.27080617484855807),
    (1.0494853564995734, -0.2718424099544779),
    (1.0315436287748874, -0.2854152725398689),
];
const IEEE14_SLACK_POWER: (f64, f64) = (2.323753241069565, -0.235305672847404);

fn system(net: &crate::network::Network) -> BusSystem {
    extract_bus_system(net, SlackPolicy::Required).unwrap()
}

fn nr(sys: &BusSystem) -> PowerFlowSolution {
    newton_raphson(&sys.ybus().unwrap(), &sys.buses, &sys.branches, &NewtonRaphsonConfig::default()).unwrap().0
}

fn gs_to_tolerance(sys: &BusSystem) -> PowerFlowSolution {
    let cfg = GaussSeidelConfig { max_iterations: 2000, ..GaussSeidelConfig::default() };
    gauss_seidel(&sys.ybus().unwrap(), &sys.buses, &sys.branches, &cfg).unwrap().0
}

#[test]
fn ybus_stamps_the_pi_model() {
    let br = Branch::from_impedance(0, 1, 0.02, 0.06, 0.03);
    let y = build_ybus(&[br], 2).unwrap();
    let ys = Complex64::new(5.0, -15.0);
    assert!((y.get(0, 1) + ys).norm() < 1e-12);
    assert!((y.get(1, 0) + ys).norm() < 1e-12);
    assert!((y.get(0, 0) - ys - Complex64::new(0.0, 0.015)).norm() < 1e-12);
    assert_eq!(y.get(0, 0), y.get(1, 1));
    assert_eq!(
        build_ybus(&[Branch::from_impedance(0, 5, 0.0, 0.1, 0.0)], 2).unwrap_err().name(),
        "IndexOutOfRange"
    );
}

#[test]
fn fixture_ybus_is_symmetric_with_matching_row_sums() {
    let sys = system(&fixtures::ieee14());
    let y = sys.ybus().unwrap();
    for i in 0..y.n {
        let mut row = Complex64::new(0.0, 0.0);
        for j in 0..y.n {
            assert_eq!(y.get(i, j), y.get(j, i));
            row += y.get(i, j);
        }
        // a row sums to the bus's shunt: half-charging of its lines plus loads
        let charging: f64 = sys
            .branches
            .iter()
            .filter(|b| b.from == i || b.to == i)
            .map(|b| b.shunt_susceptance_half)
            .sum();
        assert!((row.im - charging - sys.buses[i].shunt.im).abs() < 1e-9, "bus {i}");
    }
}

#[test]
fn two_bus_lossless_matches_closed_form() {
    // slack 1∠0 feeding 0.5 pu of active load over j0.1: V2 = cos θ2 and
    // sin 2θ2 = -0.1
    let buses = vec![BusRecord::slack(0, 1.0, 0.0), BusRecord::pq(1, -0.5, 0.0)];
    let branches = vec![Branch::from_impedance(0, 1, 0.0, 0.1, 0.0)];
    let y = build_ybus(&branches, 2).unwrap();
    let (sol, _) = newton_raphson(&y, &buses, &branches, &NewtonRaphsonConfig::default()).unwrap();
    let theta = -0.5 * 0.1f64.asin();
    assert!(sol.converged);
    assert!((sol.theta[1] - theta).abs() < 1e-9);
    assert!((sol.v[1] - theta.cos()).abs() < 1e-9);
    assert!(sol.branch_flows[0].p_loss.abs() < 1e-9);
}

#[test]
fn ieee14_matches_reference_solution() {
    let sol = nr(&system(&fixtures::ieee14()));
    assert!(sol.converged);
    assert!(sol.iterations_run <= 5);
    assert!(sol.max_mismatch < 1e-6);
    for (i, &(v, a)) in IEEE14_SOLUTION.iter().enumerate() {
        assert!((sol.v[i] - v).abs() < 1e-6, "V{}", i + 1);
        assert!((sol.theta[i] - a).abs() < 1e-6, "θ{}", i + 1);
    }
    assert!((sol.p_calc[0] - IEEE14_SLACK_POWER.0).abs() < 1e-5);
    assert!((sol.q_calc[0] - IEEE14_SLACK_POWER.1).abs() < 1e-5);
}

#[test]
fn losses_balance_injections() {
    let sol = nr(&system(&fixtures::ieee14()));
    let injected: f64 = sol.p_calc.iter().sum();
    let lost: f64 = sol.branch_flows.iter().map(|f| f.p_loss).sum();
    assert!((injected - lost).abs() < 1e-9);
    assert!(lost > 0.0);
}

#[test]
fn gauss_seidel_agrees_with_newton_on_small_cases() {
    for net in [fixtures::two_bus(), fixtures::five_bus()] {
        let sys = system(&net);
        let a = nr(&sys);
        let b = gs_to_tolerance(&sys);
        assert!(b.converged);
        for i in 0..sys.bus_count() {
            assert!((a.v[i] - b.v[i]).abs() < 1e-3);
            assert!((a.theta[i] - b.theta[i]).abs() < 1e-3);
        }
    }
}

#[test]
fn gauss_seidel_default_run_traces_ten_iterations() {
    let sys = system(&fixtures::ieee14());
    let (sol, trace) =
        gauss_seidel(&sys.ybus().unwrap(), &sys.buses, &sys.branches, &GaussSeidelConfig::default()).unwrap();
    assert!(!sol.converged);
    assert_eq!(sol.iterations_run, 10);
    assert_eq!(trace.iteration_records().count(), 10);
    assert!(trace.config.iter().any(|(k, v)| k == "acceleration" && v == "1.6"));
}

#[test]
fn pv_buses_hold_their_setpoint() {
    let sys = system(&fixtures::five_bus());
    for sol in [nr(&sys), gs_to_tolerance(&sys)] {
        assert!((sol.v[1] - 1.0).abs() < 1e-12);
        assert!((sol.p_calc[1] - (0.4 - 0.2)).abs() < 1e-5);
    }
}

#[test]
fn split_bus_extracts_identically() {
    let a = system(&fixtures::ieee14());
    let b = system(&fixtures::ieee14_split());
    assert_eq!(a.bus_count(), b.bus_count());
    assert_eq!(a.branches.len(), b.branches.len());
    let (sa, sb) = (nr(&a), nr(&b));
    for i in 0..a.bus_count() {
        assert!((sa.v[i] - sb.v[i]).abs() < 1e-10);
        assert!((sa.theta[i] - sb.theta[i]).abs() < 1e-10);
    }
}

#[test]
fn islanded_load_needs_a_slack() {
    let mut net = fixtures::two_bus();
    let line = net.lines().find(|l| !l.spec.is_connecting()).unwrap().id;
    net.remove_component(line).unwrap();
    let err = extract_bus_system(&net, SlackPolicy::Required).unwrap_err();
    assert_eq!(err.name(), "IslandWithoutSlack");
    assert!(extract_bus_system(&net, SlackPolicy::ReferenceFallback).is_ok());
}

#[test]
fn degenerate_inputs_fail_cleanly() {
    let buses = vec![BusRecord::slack(0, 1.0, 0.0), BusRecord::pq(1, -0.5, 0.0)];
    let y = build_ybus(&[], 2).unwrap();
    assert_eq!(
        newton_raphson(&y, &buses, &[], &NewtonRaphsonConfig::default()).unwrap_err().name(),
        "SingularJacobian"
    );
    assert_eq!(
        gauss_seidel(&y, &buses, &[], &GaussSeidelConfig::default()).unwrap_err().name(),
        "SingularDiagonal"
    );
    let y3 = build_ybus(&[], 3).unwrap();
    assert_eq!(
        newton_raphson(&y3, &buses, &[], &NewtonRaphsonConfig::default()).unwrap_err().name(),
        "DimensionMismatch"
    );
    let no_slack = vec![BusRecord::pq(0, 0.0, 0.0), BusRecord::pq(1, -0.5, 0.0)];
    let br = [Branch::from_impedance(0, 1, 0.0, 0.1, 0.0)];
    let y = build_ybus(&br, 2).unwrap();
    assert_eq!(newton_raphson(&y, &no_slack, &br, &NewtonRaphsonConfig::default()).unwrap_err(), PowerFlowError::NoSlack);
}

#[test]
fn overloaded_line_does_not_converge() {
    // far beyond the 5 pu transfer limit of j0.1 at 1 pu
    let buses = vec![BusRecord::slack(0, 1.0, 0.0), BusRecord::pq(1, -8.0, 0.0)];
    let br = [Branch::from_impedance(0, 1, 0.0, 0.1, 0.0)];
    let y = build_ybus(&br, 2).unwrap();
    let cfg = NewtonRaphsonConfig { max_iterations: 30, ..NewtonRaphsonConfig::default() };
    match newton_raphson(&y, &buses, &br, &cfg) {
        Ok((sol, _)) => assert!(!sol.converged),
        Err(e) => assert!(matches!(e.name(), "Diverged" | "SingularJacobian"), "{e}"),
    }
}

prop_compose! {
    /// A random connected radial system: bus k hangs off an earlier bus.
    fn radial()(n in 2usize..7)
        (parents in proptest::collection::vec(0usize..100, n - 1),
         loads in proptest::collection::vec((0.0..0.3f64, -0.05..0.15f64), n - 1),
         lines in proptest::collection::vec((0.005..0.05f64, 0.02..0.2f64, 0.0..0.05f64), n - 1))
        -> (Vec<BusRecord>, Vec<Branch>)
    {
        let mut buses = vec![BusRecord::slack(0, 1.0, 0.0)];
        let mut branches = Vec::new();
        for k in 1..=parents.len() {
            buses.push(BusRecord::pq(k, -loads[k - 1].0, -loads[k - 1].1));
            let (r, x, b) = lines[k - 1];
            branches.push(Branch::from_impedance(parents[k - 1] % k, k, r, x, b));
        }
        (buses, branches)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn converged_solutions_satisfy_kcl((buses, branches) in radial()) {
        let y = build_ybus(&branches, buses.len()).unwrap();
        let cfg = NewtonRaphsonConfig { max_iterations: 20, ..NewtonRaphsonConfig::default() };
        let (sol, _) = newton_raphson(&y, &buses, &branches, &cfg).unwrap();
        prop_assert!(sol.converged);
        let mut p = vec![0.0; buses.len()];
        let mut q = vec![0.0; buses.len()];
        for f in &sol.branch_flows {
            let br = &branches[f.branch];
            p[br.from] += f.p_from;
            q[br.from] += f.q_from;
            p[br.to] += f.p_to;
            q[br.to] += f.q_to;
        }
        for b in &buses[1..] {
            prop_assert!((p[b.index] - b.p_sched).abs() < 1e-6);
            prop_assert!((q[b.index] - b.q_sched).abs() < 1e-6);
        }
        let g = gauss_seidel(&y, &buses, &branches, &GaussSeidelConfig { max_iterations: 5000, ..GaussSeidelConfig::default() }).unwrap().0;
        prop_assert!(g.converged);
        for i in 0..buses.len() {
            prop_assert!((g.v[i] - sol.v[i]).abs() < 1e-3);
            prop_assert!((g.theta[i] - sol.theta[i]).abs() < 1e-3);
        }
    }
}
