//! Acceptance suite: one PASS/FAIL line per criterion. Runs sequentially in
//! `main` so the wall-time criterion is measured without competing tests.

use std::time::Instant;

use fbmcf::barrier::{BarrierSurface, K_MIN};
use fbmcf::cli_io::{parse_config_str, run_config};
use fbmcf::diagnostics::{area_balance, blowup_estimate, boundary_residuals, rescale_compare, BoundaryResiduals, Monitor};
use fbmcf::flow::{FlowConfig, FlowEngine, FlowState};
use fbmcf::oracles::{canonical_case, hemisphere_exact, CaseName};
use fbmcf::perturbation::{eval_p_sigma, identity_suite, random_p_max};
use fbmcf::Execution;
use nalgebra::Vector3;

const EXEC: Execution = Execution::Parallel;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(results: &mut Vec<bool>, id: usize, name: &str, outcome: fbmcf::Result<Outcome>) {
    let (pass, detail) = match outcome {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!("{} criterion {id:>2} ({name}): {detail}", if pass { "PASS" } else { "FAIL" });
    results.push(pass);
}

struct HemiRun {
    max_rel_err: f64,
    balance: f64,
    wall: f64,
    h0: f64,
    trajectory: Vec<(f64, f64)>,
    a_tilde_dev: f64,
    p_sigma_max: f64,
}

fn hemisphere_run() -> fbmcf::Result<HemiRun> {
    let case = canonical_case(CaseName::HemiPlane, None, 0)?;
    assert!(case.mesh.vertex_count() >= 2562);
    let flow = FlowConfig { t_end: Some(0.2), ..case.flow.clone() };
    let start = Instant::now();
    let engine = FlowEngine::new(case.barrier.clone(), flow, EXEC)?;
    let diag = fbmcf::diagnostics::DiagnosticsConfig { boundary_residuals: false, ..case.diagnostics.clone() };
    let mut monitor = Monitor::new(diag, case.barrier.clone(), engine.k, EXEC)?;
    let mut max_rel_err: f64 = 0.0;
    let mut balance = Vec::new();
    let mut trajectory = Vec::new();
    let mut h0 = f64::NAN;
    let mut states: Vec<FlowState> = Vec::new();
    engine.run(case.mesh.clone(), |s| {
        let (r, x) = monitor.record(s)?;
        let exact = hemisphere_exact(1.0, s.t)?.r;
        let numeric = s.mesh.positions.iter().map(|p| p.norm()).sum::<f64>() / s.mesh.vertex_count() as f64;
        max_rel_err = max_rel_err.max((numeric - exact).abs() / exact);
        balance.push((r.t, r.area, x.h2_integral));
        trajectory.push((r.t, r.h_max));
        if h0.is_nan() {
            h0 = r.h_min;
        }
        if states.len() < 4 || s.step % 500 == 0 {
            states.push(s.clone());
        }
        Ok(())
    })?;
    let wall = start.elapsed().as_secs_f64();

    let mut a_tilde_dev: f64 = 0.0;
    let mut p_sigma_max: f64 = 0.0;
    for s in &states {
        for (v, (g, p)) in s.geometry.vertices.iter().zip(&s.perturbed).enumerate() {
            a_tilde_dev = a_tilde_dev.max((p.a_tilde - g.a).abs().max());
            let direct = eval_p_sigma(&case.barrier, engine.k, &s.mesh.positions[v], &g.normal, &g.tangent)?;
            p_sigma_max = p_sigma_max.max(direct.abs().max());
        }
    }
    Ok(HemiRun { max_rel_err, balance: area_balance(&balance)?, wall, h0, trajectory, a_tilde_dev, p_sigma_max })
}

fn criterion_ball_curvatures() -> fbmcf::Result<Outcome> {
    let extremes = |b: &BarrierSurface, n: usize| -> fbmcf::Result<(f64, f64)> {
        let pts = b.sample_points(n, 1);
        let balls = b.ball_curvatures(&pts, EXEC)?;
        Ok((balls.iter().map(|c| c.zbar).fold(f64::NEG_INFINITY, f64::max), balls.iter().map(|c| c.zlow).fold(f64::INFINITY, f64::min)))
    };
    let (s_hi, s_lo) = extremes(&BarrierSurface::sphere(1.0, Vector3::zeros())?, 10_000)?;
    let (slab_hi, _) = extremes(&BarrierSurface::slab(0.5)?, 2000)?;
    let (c_hi, c_lo) = extremes(&BarrierSurface::cylinder(2.0, Vector3::z(), Vector3::zeros())?, 2000)?;
    let sphere_ok = (s_hi - 1.0).abs() <= 1e-6 && (s_lo - 1.0).abs() <= 1e-6;
    let slab_ok = (slab_hi - 4.0).abs() <= 0.04;
    let cyl_ok = (0.49..=0.51).contains(&c_hi) && (-0.01..=0.01).contains(&c_lo);
    Ok(Outcome {
        pass: sphere_ok && slab_ok && cyl_ok,
        detail: format!(
            "sphere Zbar={s_hi:.9} Zlow={s_lo:.9} (1 +/- 1e-6); slab Zbar={slab_hi:.5} (4 +/- 1%); cylinder Zbar={c_hi:.5} in [0.49, 0.51], Zlow={c_lo:.5} in [-0.01, 0.01]"
        ),
    })
}

fn criterion_umbilic_p(hemi: &fbmcf::Result<HemiRun>) -> fbmcf::Result<Outcome> {
    let plane = BarrierSurface::plane(Vector3::z(), 0.0)?;
    let sphere = BarrierSurface::sphere(1.0, Vector3::zeros())?;
    let p_plane = random_p_max(&plane, K_MIN, 1000, 11)?;
    let p_sphere = random_p_max(&sphere, 1.0, 1000, 12)?;
    let (dev, direct) = match hemi {
        Ok(h) => (h.a_tilde_dev, h.p_sigma_max),
        Err(e) => return Err(fbmcf::Error::InvalidParams(format!("hemisphere run failed: {e}"))),
    };
    let pass = p_plane <= 1e-12 && p_sphere <= 1e-12 && dev <= 1e-12 && direct <= 1e-12;
    Ok(Outcome {
        pass,
        detail: format!(
            "max|P| plane {p_plane:.2e}, sphere {p_sphere:.2e}; HEMI_PLANE run max|A~ - A| {dev:.2e}, direct max|P^Sigma| {direct:.2e} (tol 1e-12)"
        ),
    })
}

fn criterion_identity_suite() -> fbmcf::Result<Outcome> {
    let cyl = BarrierSurface::cylinder(2.0, Vector3::z(), Vector3::zeros())?;
    let ell = BarrierSurface::ellipsoid(Vector3::new(2.0, 1.5, 1.0), Vector3::zeros())?;
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, b) in [("cylinder", &cyl), ("ellipsoid", &ell)] {
        let k = b.ball_curvatures(&b.sample_points(400, 0), EXEC)?.iter().map(|c| c.zbar).fold(K_MIN, f64::max);
        let r = identity_suite(b, k, 100, 5)?;
        pass &= r.algebraic_max() <= 1e-10 && r.normal_derivative <= 1e-6;
        parts.push(format!("{name}: algebraic {:.2e} (1e-10), normal derivative {:.2e} (1e-6)", r.algebraic_max(), r.normal_derivative));
    }
    Ok(Outcome { pass, detail: parts.join("; ") })
}

fn criterion_boundary_refinement() -> fbmcf::Result<Outcome> {
    let t_star = 0.002;
    let mut levels: Vec<(f64, BoundaryResiduals)> = Vec::new();
    for n in [8, 16, 32] {
        let case = canonical_case(CaseName::CapCylinder, Some(n), 0)?;
        let flow = FlowConfig { t_end: Some(t_star), ..case.flow.clone() };
        let engine = FlowEngine::new(case.barrier.clone(), flow, EXEC)?;
        let out = engine.run(case.mesh.clone(), |_| Ok(()))?;
        let s = &out.final_state;
        levels.push((s.mesh.max_edge_length(), boundary_residuals(s, &case.barrier, engine.k, EXEC)?));
    }
    let names = ["res_NH", "res_h11", "res_h22", "res_NAtilde", "res_P12"];
    let pick = |r: &BoundaryResiduals| [r.res_nh, r.res_h11, r.res_h22, r.res_natilde, r.res_p12];
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let orders: Vec<f64> = levels.windows(2).map(|w| (pick(&w[0].1)[i] / pick(&w[1].1)[i]).log2() / (w[0].0 / w[1].0).log2()).collect();
        pass &= orders.iter().all(|&o| o >= 1.0);
        let values: Vec<String> = levels.iter().map(|l| format!("{:.2e}", pick(&l.1)[i])).collect();
        parts.push(format!("{name} {} orders {:.2}/{:.2}", values.join("/"), orders[0], orders[1]));
    }
    Ok(Outcome { pass, detail: format!("n=8/16/32 at t={t_star}: {} (need >= 1)", parts.join("; ")) })
}

struct CaseRun {
    records: Vec<fbmcf::diagnostics::DiagnosticsRecord>,
    zeta_ok: bool,
    grad_h4: Vec<f64>,
    final_state: FlowState,
    barrier: BarrierSurface,
}

fn run_case(name: CaseName, stop_max_a: f64) -> fbmcf::Result<CaseRun> {
    let case = canonical_case(name, None, 0)?;
    let flow = FlowConfig { stop_max_a, ..case.flow.clone() };
    let engine = FlowEngine::new(case.barrier.clone(), flow, EXEC)?;
    let diag = fbmcf::diagnostics::DiagnosticsConfig { boundary_residuals: false, ..case.diagnostics.clone() };
    let mut monitor = Monitor::new(diag, case.barrier.clone(), engine.k, EXEC)?;
    let mut records = Vec::new();
    let mut zeta_ok = true;
    let mut grad_h4 = Vec::new();
    let out = engine.run(case.mesh.clone(), |s| {
        let (r, x) = monitor.record(s)?;
        zeta_ok &= x.zeta.bracket_ok;
        grad_h4.push(s.geometry.vertices.iter().map(|g| g.grad_h.norm_squared() / g.h.powi(4)).fold(0.0, f64::max));
        records.push(r);
        Ok(())
    })?;
    Ok(CaseRun { records, zeta_ok, grad_h4, final_state: out.final_state, barrier: case.barrier })
}

fn criterion_convexity(run: &CaseRun) -> Outcome {
    let first = &run.records[0];
    let min_a = run.records.iter().map(|r| r.lambda_min_a).fold(f64::INFINITY, f64::min);
    let min_at = run.records.iter().map(|r| r.lambda_min_atilde).fold(f64::INFINITY, f64::min);
    let last = run.records.last().unwrap();
    let pass = last.max_a >= 50.0 && min_a > first.lambda_min_a / 3.0 && min_at > first.lambda_min_atilde / 2.0;
    Outcome {
        pass,
        detail: format!(
            "CAP_CYLINDER to maxA={:.2}: min lambda(A) {min_a:.4} > {:.4}, min lambda(A~) {min_at:.4} > {:.4}",
            last.max_a,
            first.lambda_min_a / 3.0,
            first.lambda_min_atilde / 2.0
        ),
    }
}

fn criterion_pinching(run: &CaseRun) -> Outcome {
    let f0 = run.records[0].f_max;
    let f_max = run.records.iter().map(|r| r.f_max).fold(f64::NEG_INFINITY, f64::max);
    Outcome { pass: f_max <= 2.0 * f0 + 1.0, detail: format!("sigma=0.1: max f {f_max:.4e} <= 2 f0 + 1 = {:.4e}", 2.0 * f0 + 1.0) }
}

fn criterion_gradient(run: &CaseRun) -> Outcome {
    let last = run.records.last().unwrap();
    let (g0, g1) = (run.grad_h4[0], *run.grad_h4.last().unwrap());
    Outcome {
        pass: last.max_a >= 30.0 && g1 <= g0 && run.zeta_ok,
        detail: format!(
            "max |grad H|^2/H^4 final {g1:.3e} <= initial {g0:.3e} at maxA={:.2} (need >= 30); zeta bracket at every vertex and record: {}",
            last.max_a, run.zeta_ok
        ),
    }
}

fn criterion_rescaled(run: &CaseRun) -> fbmcf::Result<Outcome> {
    let h0 = run.records[0].h_min;
    let traj: Vec<(f64, f64)> = run.records.iter().map(|r| (r.t, r.h_max)).collect();
    let est = blowup_estimate(h0, &traj)?;
    let s = &run.final_state;
    let r = rescale_compare(&s.mesh, Some(&s.geometry), &run.barrier, s.t, est.fitted_t, 10_000, 0, EXEC)?;
    Ok(Outcome {
        pass: r.hausdorff <= 0.05,
        detail: format!("Hausdorff {:.4} <= 0.05 (t={:.5}, fitted T={:.5}, scale {:.2})", r.hausdorff, s.t, est.fitted_t, r.scale),
    })
}

fn criterion_drift(run: &CaseRun) -> Outcome {
    let first = &run.records[0];
    let before: Vec<_> = run.records.iter().filter(|r| r.max_a < 20.0).collect();
    let umbilic = before.iter().map(|r| r.umbilic_ratio_max).fold(0.0, f64::max);
    let h_min = before.iter().map(|r| r.h_min).fold(f64::INFINITY, f64::min);
    let growth = umbilic / first.umbilic_ratio_max;
    let drop = (first.h_min - h_min) / first.h_min;
    Outcome {
        pass: growth >= 3.0 && drop <= 0.02,
        detail: format!(
            "max|A_0|/H grows {:.3e} -> {umbilic:.3e} (x{growth:.2} >= 3) before maxA=20; min H drop {:.3}% <= 2%",
            first.umbilic_ratio_max,
            100.0 * drop.max(0.0)
        ),
    }
}

fn criterion_determinism() -> fbmcf::Result<Outcome> {
    let tmp = tempfile::tempdir().map_err(|e| fbmcf::Error::InvalidParams(e.to_string()))?;
    let out = tmp.path().join("out");
    let text = format!(
        "[barrier]\nkind = cylinder\n[initial]\ncase = CAP_CYLINDER\nsubdivision = 10\nseed = 42\n[flow]\nt_end = 0.002\n[output]\ndirectory = {}\nrecord_every = 5\n",
        out.display()
    );
    let cfg = parse_config_str(&text)?;
    let read = || std::fs::read(out.join("diagnostics.csv")).map_err(|e| fbmcf::Error::InvalidParams(e.to_string()));
    run_config(&cfg)?;
    let first = read()?;
    run_config(&cfg)?;
    let second = read()?;
    let rows = first.iter().filter(|&&b| b == b'\n').count() - 1;
    Ok(Outcome {
        pass: first == second,
        detail: format!("two CAP_CYLINDER runs, seed 42: {rows} rows, byte-identical: {}", first == second),
    })
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut results = Vec::new();

    let hemi = hemisphere_run();
    report(
        &mut results,
        1,
        "hemisphere tracking",
        hemi.as_ref().map_err(|e| fbmcf::Error::InvalidParams(e.to_string())).map(|h| Outcome {
            pass: h.max_rel_err <= 0.02 && h.balance <= 0.05 && h.wall <= 120.0,
            detail: format!(
                "max relative radius error {:.3e} <= 2e-2; area balance {:.3e} <= 5e-2; wall {:.1} s <= 120 s",
                h.max_rel_err, h.balance, h.wall
            ),
        }),
    );
    report(
        &mut results,
        2,
        "blow-up bound",
        hemi.as_ref().map_err(|e| fbmcf::Error::InvalidParams(e.to_string())).and_then(|h| {
            let est = blowup_estimate(h.h0, &h.trajectory)?;
            Ok(Outcome {
                pass: (est.fitted_t - 0.25).abs() <= 0.01,
                detail: format!("fitted T {:.5} = 0.25 +/- 0.01 (bound H0^-2 = {:.5})", est.fitted_t, est.paper_bound),
            })
        }),
    );
    report(&mut results, 3, "ball curvatures", criterion_ball_curvatures());
    report(&mut results, 4, "umbilic P", criterion_umbilic_p(&hemi));
    report(&mut results, 5, "P identity suite", criterion_identity_suite());
    report(&mut results, 6, "boundary identity refinement", criterion_boundary_refinement());

    let cylinder = run_case(CaseName::CapCylinder, 50.0);
    report(
        &mut results,
        7,
        "convexity",
        cylinder.as_ref().map(criterion_convexity).map_err(|e| fbmcf::Error::InvalidParams(e.to_string())),
    );
    report(
        &mut results,
        8,
        "traceless pinching",
        cylinder.as_ref().map(criterion_pinching).map_err(|e| fbmcf::Error::InvalidParams(e.to_string())),
    );
    drop(cylinder);

    let perturbed = run_case(CaseName::HemiPlanePerturbed, 50.0);
    report(&mut results, 9, "gradient", perturbed.as_ref().map(criterion_gradient).map_err(|e| fbmcf::Error::InvalidParams(e.to_string())));
    report(
        &mut results,
        10,
        "rescaled hemisphere",
        perturbed.as_ref().map_err(|e| fbmcf::Error::InvalidParams(e.to_string())).and_then(criterion_rescaled),
    );
    drop(perturbed);

    let sphere = run_case(CaseName::CapSphere, 20.0);
    report(
        &mut results,
        11,
        "non-umbilic drift",
        sphere.as_ref().map(criterion_drift).map_err(|e| fbmcf::Error::InvalidParams(e.to_string())),
    );
    report(&mut results, 12, "determinism", criterion_determinism());

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
