use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::barrier::{BarrierKind, BarrierSurface, K_MIN};
use crate::cli_io::config::{parse_config, FrameFormat, InitialSource, RunConfig};
use crate::cli_io::output::{frame_time, list_frames, read_csv, OutputWriter, Summary, CSV_NAME, SUMMARY_NAME};
use crate::diagnostics::{area_balance, blowup_estimate, rescale_compare, DiagnosticsRecord, Monitor};
use crate::error::{Error, Result};
use crate::flow::{FlowEngine, StopReason};
use crate::mesh::{make_cap, read_obj, CapSpec, TriMesh};
use crate::oracles::canonical_case;
use crate::par::Execution;
use crate::perturbation::{identity_suite, random_p_max};

/// Tolerances used by `verify`.
pub const ALGEBRAIC_TOL: f64 = 1e-10;
pub const DERIVATIVE_TOL: f64 = 1e-6;
pub const UMBILIC_P_TOL: f64 = 1e-12;

/// Barrier and initial mesh described by a configuration.
pub fn build_setup(cfg: &RunConfig) -> Result<(BarrierSurface, TriMesh)> {
    let section = &cfg.barrier;
    let (barrier, mesh) = match &cfg.initial.source {
        InitialSource::Case(name) => {
            let case = canonical_case(*name, cfg.initial.subdivision, cfg.initial.seed)?;
            if case.barrier.kind() != section.kind {
                return Err(cfg.invalid(
                    "barrier",
                    "kind",
                    format!("case {name} lies on a {} barrier, not {}", case.barrier.kind(), section.kind),
                ));
            }
            let mut barrier = match &section.params {
                Some(p) => BarrierSurface::from_params(section.kind, p)
                    .map_err(|e| cfg.invalid("barrier", "params", e.to_string()))?
                    .with_orientation(case.barrier.orientation_sign())?,
                None => case.barrier.clone(),
            };
            if let Some(sign) = section.orientation_sign {
                barrier = barrier.with_orientation(sign)?;
            }
            let spec = override_spec(cfg, case.spec)?;
            (barrier, make_cap(&spec)?)
        }
        InitialSource::Obj(path) => {
            for key in ["subdivision", "amplitude", "radius"] {
                if cfg.line_of("initial", key).is_some() {
                    return Err(cfg.invalid("initial", key, "only applies to named cases"));
                }
            }
            let barrier = BarrierSurface::from_params(section.kind, section.params.as_deref().unwrap_or(&[]))
                .map_err(|e| cfg.invalid("barrier", "params", e.to_string()))?
                .with_orientation(section.orientation_sign.unwrap_or(1.0))?;
            (barrier, read_obj(path)?)
        }
    };
    let barrier = match section.tubular_width {
        Some(w) => barrier.with_tubular_width(w)?,
        None => barrier,
    };
    Ok((barrier, mesh))
}

fn override_spec(cfg: &RunConfig, spec: CapSpec) -> Result<CapSpec> {
    let radius = cfg.initial.radius;
    if cfg.initial.amplitude.is_some() && !matches!(spec, CapSpec::PerturbedHemisphere { .. }) {
        return Err(cfg.invalid("initial", "amplitude", "only HEMI_PLANE_PERTURBED takes an amplitude"));
    }
    let spec = match spec {
        CapSpec::PerturbedHemisphere { radius: r, amplitude, seed, segments } => CapSpec::PerturbedHemisphere {
            radius: radius.unwrap_or(r),
            amplitude: cfg.initial.amplitude.unwrap_or(amplitude),
            seed,
            segments,
        },
        CapSpec::HemispherePlane { radius: r, segments } => CapSpec::HemispherePlane { radius: radius.unwrap_or(r), segments },
        CapSpec::CapSphere { radius: r, segments } => CapSpec::CapSphere { radius: radius.unwrap_or(r), segments },
        CapSpec::CapCylinder { radius: r, cylinder_radius, segments } => {
            CapSpec::CapCylinder { radius: radius.unwrap_or(r), cylinder_radius, segments }
        }
        CapSpec::FlatDisk { radius: r, segments } => CapSpec::FlatDisk { radius: radius.unwrap_or(r), segments },
    };
    Ok(spec)
}

/// Everything a `run` produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub stop_reason: StopReason,
    pub records: Vec<DiagnosticsRecord>,
    pub summary: Summary,
    pub output_dir: PathBuf,
}

/// Runs the flow described by `cfg`, writing frames, CSV and summary.
pub fn run_config(cfg: &RunConfig) -> Result<RunReport> {
    let (barrier, mesh) = build_setup(cfg)?;
    let engine = FlowEngine::new(barrier.clone(), cfg.flow.clone(), cfg.execution)?;
    cfg.diagnostics.validate(engine.k).map_err(|e| cfg.invalid("diagnostics", "eta", e.to_string()))?;
    let mut monitor = Monitor::new(cfg.diagnostics.clone(), barrier.clone(), engine.k, cfg.execution)?;
    let dir = &cfg.output.directory;
    let mut writer = OutputWriter::create(dir, cfg.output.frame_format == FrameFormat::Obj, cfg.output.frame_every)?;
    let mut records = Vec::new();
    let mut balance = Vec::new();
    let outcome = engine.run(mesh, |state| {
        let (record, extras) = monitor.record(state)?;
        writer.record(&record, &state.mesh)?;
        balance.push((record.t, record.area, extras.h2_integral));
        records.push(record);
        Ok(())
    })?;
    let last = &outcome.final_state;
    writer.final_frame(last.t, &last.mesh)?;

    let mut s = Summary::default();
    s.push("stop_reason", outcome.stop_reason);
    s.push("stop_detail", outcome.detail.as_deref().unwrap_or("none"));
    s.push("t_final", format!("{:e}", last.t));
    s.push("steps", last.step);
    s.push("records", records.len());
    s.push("vertices", last.mesh.vertex_count());
    s.push("seed", cfg.initial.seed);
    s.push("barrier_kind", barrier.kind());
    s.push("barrier_params", barrier.params().iter().map(|p| format!("{p:e}")).collect::<Vec<_>>().join(","));
    s.push("barrier_orientation_sign", barrier.orientation_sign());
    s.push("barrier_tubular_width", format!("{:e}", barrier.tubular_width()));
    s.push("K", format!("{:e}", engine.k));
    s.push("C_grad", format!("{:e}", monitor.c_grad().unwrap_or(f64::NAN)));
    s.push("initial_area", format!("{:e}", outcome.initial_area));
    s.push("final_area", format!("{:e}", last.mesh.area()));
    match area_balance(&balance) {
        Ok(r) => s.push("area_balance_residual", format!("{r:e}")),
        Err(e) => s.push("area_balance_residual", format!("unavailable ({e})")),
    }
    let h0 = records.first().map_or(f64::NAN, |r| r.h_min);
    let trajectory: Vec<(f64, f64)> = records.iter().map(|r| (r.t, r.h_max)).collect();
    s.push("H0", format!("{h0:e}"));
    match blowup_estimate(h0, &trajectory) {
        Ok(b) => {
            s.push("blowup_bound", format!("{:e}", b.paper_bound));
            s.push("blowup_fitted_T", format!("{:e}", b.fitted_t));
            s.push("blowup_within_bound", b.within_bound);
            match rescale_compare(&last.mesh, Some(&last.geometry), &barrier, last.t, b.fitted_t, 10_000, cfg.initial.seed, cfg.execution) {
                Ok(r) => {
                    s.push("rescale_hausdorff", format!("{:e}", r.hausdorff));
                    s.push("rescale_surface_to_hemisphere", format!("{:e}", r.surface_to_hemisphere));
                    s.push("rescale_hemisphere_to_surface", format!("{:e}", r.hemisphere_to_surface));
                    s.push("rescale_scale", format!("{:e}", r.scale));
                    s.push("rescale_umbilic_ratio_max", format!("{:e}", r.umbilic_ratio_max));
                }
                Err(e) => s.push("rescale_hausdorff", format!("unavailable ({e})")),
            }
        }
        Err(e) => s.push("blowup_fitted_T", format!("unavailable ({e})")),
    }
    writer.finish(&s)?;
    Ok(RunReport { stop_reason: outcome.stop_reason, records, summary: s, output_dir: dir.clone() })
}

#[derive(Debug, Parser)]
#[command(name = "fbmcf", version, about = "Free-boundary mean curvature flow simulator and monitors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run single-threaded.
    #[arg(long, global = true)]
    pub sequential: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a flow from a configuration file.
    Run { config: PathBuf },
    /// Check the vanishing identities of P and basic barrier invariants.
    Verify {
        #[command(flatten)]
        barrier: BarrierArgs,
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sampled ball curvatures and derivative bounds of a barrier.
    Ballcurv {
        #[command(flatten)]
        barrier: BarrierArgs,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rescale the last frame of a run and compare it with the unit hemisphere.
    Rescale {
        frames_dir: PathBuf,
        /// Singular time; fitted from diagnostics.csv when omitted.
        #[arg(long = "T")]
        t_singular: Option<f64>,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Exit with status 1 when the Hausdorff distance exceeds this.
        #[arg(long)]
        tol: Option<f64>,
    },
}

#[derive(Debug, Args)]
pub struct BarrierArgs {
    /// plane, sphere, cylinder, ellipsoid, slab or custom.
    pub kind: String,
    /// Sphere or cylinder radius.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Slab gap.
    #[arg(long)]
    pub gap: Option<f64>,
    /// Raw parameter list, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub params: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    pub orientation: Option<f64>,
}

impl BarrierArgs {
    pub fn build(&self) -> Result<BarrierSurface> {
        let kind: BarrierKind = self.kind.parse()?;
        let mut params = self.params.clone().unwrap_or_default();
        let lead = match kind {
            BarrierKind::Slab => self.gap,
            BarrierKind::Sphere | BarrierKind::Cylinder => self.radius,
            _ => None,
        };
        if let Some(v) = lead {
            if params.is_empty() {
                params.push(v);
            } else {
                params[0] = v;
            }
        }
        BarrierSurface::from_params(kind, &params)?.with_orientation(self.orientation.unwrap_or(1.0))
    }
}

/// Outcome of a subcommand, mapped to the process exit status.
#[derive(Debug)]
pub enum Outcome {
    Pass,
    ToleranceFailure(String),
}

fn is_config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Parse { .. } | Error::Validation { .. } | Error::InvalidParams(_) | Error::Io { .. } | Error::BoundaryOffSurface { .. }
    )
}

fn status(pass: bool) -> &'static str {
    if pass {
        "ok"
    } else {
        "FAIL"
    }
}

pub fn verify(barrier: &BarrierSurface, points: usize, seed: u64, exec: Execution) -> Result<Outcome> {
    let samples = barrier.sample_points(points.max(2), seed);
    let zbar = barrier.ball_curvatures(&samples, exec)?.iter().map(|b| b.zbar).fold(0.0, f64::max);
    let k = zbar.max(K_MIN);
    println!("barrier: {} (K = {k:.6})", barrier.kind());

    let mut invariant = 0.0f64;
    for p in &samples {
        let frame = barrier.surface_frame(p)?;
        let a = barrier.shape_operator_ambient(p)?;
        invariant = invariant
            .max(barrier.phi(p).abs() / barrier.grad_phi(p).norm())
            .max((frame.normal.norm() - 1.0).abs())
            .max((a * frame.normal).norm())
            .max((a - a.transpose()).norm());
        let s = 0.1 / k;
        let cp = barrier.closest_point(&(p + frame.normal * s));
        invariant = invariant.max((cp.point - p).norm()).max((cp.distance - s).abs());
    }
    let mut failures = Vec::new();
    let inv_ok = invariant <= 1e-9;
    println!("barrier invariants max residual: {invariant:.3e} [{}]", status(inv_ok));
    if !inv_ok {
        failures.push("barrier invariants");
    }
    let r = identity_suite(barrier, k, points, seed)?;
    let alg_ok = r.algebraic_max() <= ALGEBRAIC_TOL;
    let fd_ok = r.normal_derivative <= DERIVATIVE_TOL;
    println!("P identities (algebraic) max residual: {:.3e} (tol {ALGEBRAIC_TOL:e}) [{}]", r.algebraic_max(), status(alg_ok));
    println!("P normal derivative max residual: {:.3e} (tol {DERIVATIVE_TOL:e}) [{}]", r.normal_derivative, status(fd_ok));
    if !alg_ok {
        failures.push("algebraic identities");
    }
    if !fd_ok {
        failures.push("normal derivative");
    }
    if barrier.is_umbilic() {
        let p = random_p_max(barrier, k, 1000, seed)?;
        let ok = p <= UMBILIC_P_TOL;
        println!("umbilic barrier max |P|: {p:.3e} (tol {UMBILIC_P_TOL:e}) [{}]", status(ok));
        if !ok {
            failures.push("umbilic P");
        }
    }
    Ok(if failures.is_empty() { Outcome::Pass } else { Outcome::ToleranceFailure(failures.join(", ")) })
}

pub fn ballcurv(barrier: &BarrierSurface, samples: usize, seed: u64, exec: Execution) -> Result<Outcome> {
    let pts = barrier.sample_points(samples, seed);
    let balls = barrier.ball_curvatures(&pts, exec)?;
    let zbar = balls.iter().map(|b| b.zbar).fold(f64::NEG_INFINITY, f64::max);
    let zlow = balls.iter().map(|b| b.zlow).fold(f64::INFINITY, f64::min);
    let bounds = barrier.estimate_bounds(&pts, exec)?;
    println!("barrier: {}", barrier.kind());
    println!("samples: {}", pts.len());
    println!("Zbar={zbar:.6}");
    println!("Zlow={zlow:.6}");
    println!("K={:.6}", bounds.k);
    println!("L1={:.6}", bounds.l1);
    println!("L2={:.6}", bounds.l2);
    Ok(Outcome::Pass)
}

/// Barrier recorded in a run's summary.
pub fn barrier_from_summary(summary: &Summary) -> Result<BarrierSurface> {
    let field = |k: &str| summary.get(k).ok_or_else(|| Error::InvalidParams(format!("summary lacks `{k}`")));
    let kind: BarrierKind = field("barrier_kind")?.parse()?;
    let params: Vec<f64> = field("barrier_params")?
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| Error::InvalidParams(format!("bad barrier parameter `{s}`"))))
        .collect::<Result<_>>()?;
    let sign: f64 = field("barrier_orientation_sign")?.parse().map_err(|_| Error::InvalidParams("bad orientation".into()))?;
    let width: f64 = field("barrier_tubular_width")?.parse().map_err(|_| Error::InvalidParams("bad tubular width".into()))?;
    let mut b = BarrierSurface::from_params(kind, &params)?.with_orientation(sign)?;
    if width.is_finite() {
        b = b.with_tubular_width(width)?;
    }
    Ok(b)
}

pub fn rescale(dir: &Path, t_singular: Option<f64>, samples: usize, seed: u64, tol: Option<f64>, exec: Execution) -> Result<Outcome> {
    let summary_path = dir.join(SUMMARY_NAME);
    let text = std::fs::read_to_string(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
    let barrier = barrier_from_summary(&Summary::parse(&text))?;
    let frames = list_frames(dir)?;
    let last = frames.last().ok_or_else(|| Error::InvalidParams(format!("no frames in {}", dir.display())))?;
    let t = frame_time(last)?;
    let mesh = read_obj(last)?;
    let t_est = match t_singular {
        Some(v) => v,
        None => {
            let records = read_csv(&dir.join(CSV_NAME))?;
            let h0 = records.first().map_or(f64::NAN, |r| r.h_min);
            let traj: Vec<(f64, f64)> = records.iter().map(|r| (r.t, r.h_max)).collect();
            blowup_estimate(h0, &traj)?.fitted_t
        }
    };
    let r = rescale_compare(&mesh, None, &barrier, t, t_est, samples, seed, exec)?;
    println!("frame: {}", last.display());
    println!("t: {t:e}");
    println!("T: {t_est:e}");
    println!("scale: {:e}", r.scale);
    println!("hausdorff: {:e}", r.hausdorff);
    println!("surface_to_hemisphere: {:e}", r.surface_to_hemisphere);
    println!("hemisphere_to_surface: {:e}", r.hemisphere_to_surface);
    Ok(match tol {
        Some(tol) if r.hausdorff > tol => Outcome::ToleranceFailure(format!("Hausdorff distance {} > {tol}", r.hausdorff)),
        _ => Outcome::Pass,
    })
}

fn dispatch(cli: Cli) -> Result<Outcome> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::default() };
    match cli.command {
        Command::Run { config } => {
            let mut cfg = parse_config(&config)?;
            if cli.sequential {
                cfg.execution = Execution::Sequential;
            }
            let report = run_config(&cfg)?;
            println!("{}", report.summary.render().trim_end());
            println!("output: {}", report.output_dir.display());
            Ok(match report.stop_reason {
                StopReason::MeshDegenerate | StopReason::DtFloor => {
                    Outcome::ToleranceFailure(format!("run stopped on {}", report.stop_reason))
                }
                _ => Outcome::Pass,
            })
        }
        Command::Verify { barrier, points, seed } => verify(&barrier.build()?, points, seed, exec),
        Command::Ballcurv { barrier, samples, seed } => ballcurv(&barrier.build()?, samples, seed, exec),
        Command::Rescale { frames_dir, t_singular, samples, seed, tol } => rescale(&frames_dir, t_singular, samples, seed, tol, exec),
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit status: 0 on success, 1 on a tolerance or
/// numerical failure, 2 on a usage or configuration error.
pub fn cli_dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(Outcome::Pass) => 0,
        Ok(Outcome::ToleranceFailure(msg)) => {
            eprintln!("tolerance failure: {msg}");
            1
        }
        Err(e) if is_config_error(&e) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
