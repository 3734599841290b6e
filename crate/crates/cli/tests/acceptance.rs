//! Acceptance checks. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use sld_core::estimation::{
    self, fdse_estimate, measurement_function, measurement_jacobian, wls_estimate, EstimatorConfig, StateLayout,
};
use sld_core::network::spec::{ComponentKind, Quantity, Unit};
use sld_core::network::NetworkError;
use sld_core::perunit::{convert_to_per_unit, impedance_base, resolve_bases, voltage_to_pu};
use sld_core::persistence::{from_str, load_project, to_string};
use sld_core::powerflow::{
    extract_bus_system, gauss_seidel, newton_raphson, BusSystem, GaussSeidelConfig, NewtonRaphsonConfig,
    PowerFlowSolution, SlackPolicy,
};
use sld_core::trace::render_text;
use sld_core::{fixtures, Network};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn nr(sys: &BusSystem) -> Result<PowerFlowSolution, String> {
    let y = sys.ybus().map_err(|e| e.to_string())?;
    let (sol, _) = newton_raphson(&y, &sys.buses, &sys.branches, &NewtonRaphsonConfig::default()).map_err(|e| e.to_string())?;
    Ok(sol)
}

fn newton_on_case14() -> Outcome {
    let start = Instant::now();
    let net = load_project(fixture("case14.sld"), None).map_err(|e| e.to_string())?;
    let sys = extract_bus_system(&net, SlackPolicy::Required).map_err(|e| e.to_string())?;
    let sol = nr(&sys)?;
    let elapsed = start.elapsed();
    ensure!(sys.bus_count() == 14, "{} buses", sys.bus_count());
    ensure!(sol.converged, "not converged");
    ensure!(sol.iterations_run <= 5, "{} iterations", sol.iterations_run);
    ensure!(sol.max_mismatch < 1e-6, "mismatch {:e}", sol.max_mismatch);
    ensure!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    Ok(format!("{} iterations, mismatch {:.2e}, {:.1} ms", sol.iterations_run, sol.max_mismatch, elapsed.as_secs_f64() * 1e3))
}

fn gauss_seidel_defaults() -> Outcome {
    let sys = extract_bus_system(&fixtures::ieee14(), SlackPolicy::Required).map_err(|e| e.to_string())?;
    let y = sys.ybus().map_err(|e| e.to_string())?;
    let (sol, trace) = gauss_seidel(&y, &sys.buses, &sys.branches, &GaussSeidelConfig::default()).map_err(|e| e.to_string())?;
    let records = trace.iteration_records().count();
    ensure!(!sol.converged, "14-bus reached tolerance within the default cap");
    ensure!(records == 10, "{records} iteration records");
    let header = render_text(&trace, 6);
    let first = header.lines().take(5).collect::<Vec<_>>().join("\n");
    ensure!(first.contains("acceleration") && first.contains("1.6"), "header lacks acceleration 1.6:\n{first}");

    let mut worst: f64 = 0.0;
    for net in [fixtures::two_bus(), fixtures::five_bus()] {
        let sys = extract_bus_system(&net, SlackPolicy::Required).map_err(|e| e.to_string())?;
        ensure!(sys.bus_count() <= 5, "{} buses", sys.bus_count());
        let y = sys.ybus().map_err(|e| e.to_string())?;
        let cfg = GaussSeidelConfig { max_iterations: 10_000, ..GaussSeidelConfig::default() };
        let (g, _) = gauss_seidel(&y, &sys.buses, &sys.branches, &cfg).map_err(|e| e.to_string())?;
        ensure!(g.converged, "GS did not reach tolerance");
        let n = nr(&sys)?;
        worst = worst.max(max_abs_diff(&g.v, &n.v)).max(max_abs_diff(&g.theta, &n.theta));
    }
    ensure!(worst < 1e-3, "GS vs NR differ by {worst:e}");
    Ok(format!("10 records, acceleration 1.6, GS vs NR {worst:.2e}"))
}

fn estimators_recover_power_flow() -> Outcome {
    let base = fixtures::ieee14();
    let sys = extract_bus_system(&base, SlackPolicy::Required).map_err(|e| e.to_string())?;
    let sol = nr(&sys)?;
    let metered = load_project(fixture("case14-metered.sld"), None).map_err(|e| e.to_string())?;
    ensure!(metered == fixtures::metered(&base, &sys, &sol).map_err(|e| e.to_string())?, "bundled metered case is stale");
    let se_sys = extract_bus_system(&metered, SlackPolicy::ReferenceFallback).map_err(|e| e.to_string())?;
    let set = estimation::meters_to_measurements(&metered, &se_sys).map_err(|e| e.to_string())?;
    let y = se_sys.ybus().map_err(|e| e.to_string())?;
    let refs = se_sys.slack_buses();
    let (wls, _) = wls_estimate(&set, &y, &se_sys.branches, &refs, None, &EstimatorConfig::wls()).map_err(|e| e.to_string())?;
    let (fd, _) = fdse_estimate(&set, &y, &se_sys.branches, &refs, None, &EstimatorConfig::fdse()).map_err(|e| e.to_string())?;
    ensure!(wls.converged && fd.converged, "estimator did not converge");
    let d_wls = max_abs_diff(&wls.v, &sol.v).max(max_abs_diff(&wls.theta, &sol.theta));
    let d_fd = max_abs_diff(&fd.v, &wls.v).max(max_abs_diff(&fd.theta, &wls.theta));
    ensure!(d_wls < 1e-6, "WLS off by {d_wls:e}");
    ensure!(d_fd < 1e-4, "FD-SE vs WLS {d_fd:e}");
    Ok(format!("{} measurements, WLS {d_wls:.2e}, FD-SE vs WLS {d_fd:.2e}", set.len()))
}

fn jacobian_against_finite_differences() -> Outcome {
    let base = load_project(fixture("case14-metered.sld"), None).map_err(|e| e.to_string())?;
    let sys = extract_bus_system(&base, SlackPolicy::ReferenceFallback).map_err(|e| e.to_string())?;
    let set = estimation::meters_to_measurements(&base, &sys).map_err(|e| e.to_string())?;
    let y = sys.ybus().map_err(|e| e.to_string())?;
    let layout = StateLayout::new(sys.bus_count(), &sys.slack_buses());
    let mut rng = StdRng::seed_from_u64(20);
    let step = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let v: Vec<f64> = (0..y.n).map(|_| rng.random_range(0.9..1.1)).collect();
        let mut t: Vec<f64> = (0..y.n).map(|_| rng.random_range(-0.5..0.5)).collect();
        for &r in &sys.slack_buses() {
            t[r] = 0.0;
        }
        let h = measurement_jacobian(&v, &t, &y, &sys.branches, &set, &layout).map_err(|e| e.to_string())?;
        for bus in 0..y.n {
            let columns = [(false, layout.angle_col[bus]), (true, Some(layout.v_col(bus)))];
            for (is_v, col) in columns {
                let Some(col) = col else { continue };
                let (mut vp, mut vm, mut tp, mut tm) = (v.clone(), v.clone(), t.clone(), t.clone());
                let (p, m) = if is_v { (&mut vp[bus], &mut vm[bus]) } else { (&mut tp[bus], &mut tm[bus]) };
                *p += step;
                *m -= step;
                let hp = measurement_function(&vp, &tp, &y, &sys.branches, &set).map_err(|e| e.to_string())?;
                let hm = measurement_function(&vm, &tm, &y, &sys.branches, &set).map_err(|e| e.to_string())?;
                for r in 0..set.len() {
                    let fd = (hp[r] - hm[r]) / (2.0 * step);
                    worst = worst.max((fd - h[(r, col)]).abs() / h[(r, col)].abs().max(1.0));
                }
            }
        }
    }
    ensure!(worst < 1e-6, "worst relative error {worst:e}");
    Ok(format!("20 states, worst relative error {worst:.2e}"))
}

fn per_unit_bases() -> Outcome {
    let zb = impedance_base(138e3, 100e6).map_err(|e| e.to_string())?;
    ensure!((zb - 190.44).abs() < 1e-9, "impedance base {zb}");
    let (net, ids) = fixtures::three_region_chain();
    let bases = resolve_bases(&net).map_err(|e| e.to_string())?;
    let v = |id, t| bases.region_of(id, t).map(|r| r.v_base).unwrap_or(f64::NAN);
    for (got, want) in [(v(ids.generator, 0), 13.8e3), (v(ids.hv_bus, 0), 138e3), (v(ids.load, 0), 69e3)] {
        ensure!(((got - want) / want).abs() < 1e-12, "base {got} vs {want}");
    }
    let report = convert_to_per_unit(&net, &bases);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for e in &report.entries {
        for value in &e.values {
            if value.original != 0.0 {
                worst = worst.max(((value.to_original() - value.original) / value.original).abs());
                count += 1;
            }
        }
    }
    ensure!(worst <= 1e-12, "round trip error {worst:e}");
    let hv = bases.region_of(ids.hv_bus, 0).ok_or("no HV region")?;
    let half = voltage_to_pu(&Quantity::new(69.0, Unit::KV), hv);
    ensure!((half - 0.5).abs() < 1e-12, "69 kV on 138 kV base = {half}");
    Ok(format!("Zb 190.44 Ω, 13.8/138/69 kV, {count} values round-trip within {worst:.1e}"))
}

fn persistence_round_trip() -> Outcome {
    for seed in 0..1000u64 {
        let net = common::random_network(seed, (seed % 120) as usize);
        let text = to_string(&net);
        let back = from_str(&text, None).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure!(back == net, "seed {seed}: structural mismatch");
        ensure!(to_string(&back) == text, "seed {seed}: re-save differs");
    }
    Ok("1000 fuzz networks, byte-identical re-save".into())
}

fn graph_invariants() -> Outcome {
    let mut f = common::Fuzzer::new(10_000);
    let mut removes = 0;
    for i in 0..10_000 {
        if f.step().map_err(|e| format!("op {i}: {e}"))? == common::OpKind::Remove {
            removes += 1;
        }
    }
    ensure!(f.net.lines().count() > 0, "no lines survived");

    let net: &Network = &f.net;
    let (mut rotated, mut rejected) = (0, 0);
    for c in net.components() {
        let connected_bar = c.kind() == ComponentKind::BusBar && net.incident_lines(c.id).next().is_some();
        let mut n = net.clone();
        let r: Result<(), NetworkError> = (0..4).try_for_each(|_| n.rotate_component(c.id).map(|_| ()));
        match r {
            Ok(()) => {
                ensure!(!connected_bar, "connected bar {} rotated", c.id);
                ensure!(n.component(c.id).unwrap().placement == c.placement, "rotate⁴ moved {}", c.id);
                for l in net.incident_lines(c.id) {
                    let after = n.line(l.id).unwrap();
                    ensure!(after.end_a == l.end_a && after.end_b == l.end_b, "rotate⁴ changed line {}", l.id);
                }
                rotated += 1;
            }
            Err(NetworkError::BusBarConnected(_)) => {
                ensure!(connected_bar, "free bar {} refused rotation", c.id);
                ensure!(n == *net, "rejected rotation changed the network");
                rejected += 1;
            }
            Err(NetworkError::InvalidRoute(_)) => ensure!(n == *net || !connected_bar, "partial rotation"),
            Err(e) => return Err(format!("rotate {}: {e}", c.id)),
        }
        let mut d = net.clone();
        let removed = d.remove_component(c.id).map_err(|e| e.to_string())?;
        let expected: BTreeSet<_> = std::iter::once(c.id).chain(net.incident_lines(c.id).map(|l| l.id)).collect();
        ensure!(removed == expected, "cascade delete of {}", c.id);
    }
    ensure!(f.refused_rotations + rejected > 0, "no connected bar was ever rotated");
    Ok(format!(
        "10000 ops ({removes} deletes, {} connected-bar rotations refused), rotate⁴ on {rotated}, {rejected} more refused",
        f.refused_rotations
    ))
}

fn split_bus_merges() -> Outcome {
    let a = extract_bus_system(&fixtures::ieee14(), SlackPolicy::Required).map_err(|e| e.to_string())?;
    let b = extract_bus_system(&load_project(fixture("case14-split.sld"), None).map_err(|e| e.to_string())?, SlackPolicy::Required)
        .map_err(|e| e.to_string())?;
    ensure!(a.bus_count() == b.bus_count(), "{} vs {} buses", a.bus_count(), b.bus_count());
    ensure!(a.branches.len() == b.branches.len(), "branch counts differ");
    let key = |s: &BusSystem| {
        s.buses.iter().map(|r| (r.kind, r.p_sched, r.q_sched, r.v_set, r.shunt)).collect::<Vec<_>>()
    };
    ensure!(key(&a) == key(&b), "bus data differ");
    let ends = |s: &BusSystem| s.branches.iter().map(|br| (br.from, br.to, br.series_admittance)).collect::<Vec<_>>();
    ensure!(ends(&a) == ends(&b), "branches differ");
    let (sa, sb) = (nr(&a)?, nr(&b)?);
    let d = max_abs_diff(&sa.v, &sb.v).max(max_abs_diff(&sa.theta, &sb.theta));
    ensure!(d < 1e-10, "solutions differ by {d:e}");
    Ok(format!("14 buses both ways, solution difference {d:.1e}"))
}

fn cli_exit_codes() -> Outcome {
    let run = |args: &[&str]| -> Result<(i32, String), String> {
        let out = Command::new(env!("CARGO_BIN_EXE_sld")).args(args).output().map_err(|e| e.to_string())?;
        Ok((out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned()))
    };
    let case14 = fixture("case14.sld");
    let empty = fixture("empty.sld");
    let (c, _) = run(&["solve", "--input", case14.to_str().unwrap(), "--mode", "powerflow", "--method", "nr"])?;
    ensure!(c == 0, "converged case exited {c}");
    let (c, err) = run(&["solve", "--input", empty.to_str().unwrap(), "--mode", "powerflow", "--method", "nr"])?;
    ensure!(c == 2 && err.contains("NoSlackDesignated"), "empty project exited {c}: {err}");
    let (c, err) = run(&["solve", "--input", case14.to_str().unwrap(), "--mode", "powerflow", "--method", "wls"])?;
    ensure!(c == 2 && err.contains("MethodModeMismatch"), "mismatch exited {c}: {err}");
    let (c, _) = run(&["solve", "--input", case14.to_str().unwrap(), "--method", "gs"])?;
    ensure!(c == 3, "unconverged GS exited {c}");
    Ok("0 converged, 2 invalid, 2 mismatch, 3 unconverged".into())
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("newton-raphson 14-bus", newton_on_case14),
        ("gauss-seidel defaults", gauss_seidel_defaults),
        ("state estimation recovery", estimators_recover_power_flow),
        ("measurement jacobian", jacobian_against_finite_differences),
        ("per-unit bases", per_unit_bases),
        ("persistence round trip", persistence_round_trip),
        ("graph invariants", graph_invariants),
        ("split bus merge", split_bus_merges),
        ("cli exit codes", cli_exit_codes),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                println!("FAIL  {name}: {why}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
