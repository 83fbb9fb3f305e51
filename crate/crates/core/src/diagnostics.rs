//! Monitored quantities along a run: convexity, pinching, gradient and
//! boundary identities, area balance, blow-up time and rescaled shape.

use nalgebra::{Matrix2, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::barrier::{cutoff_profile, BarrierSurface};
use crate::error::{Error, Result};
use crate::flow::FlowState;
use crate::mesh::{fit_height_polynomial, k_ring, mesh_quality, HeightFit, SurfaceGeometry, TriMesh};
use crate::par::{map_indices, try_map_indices, Execution};
use crate::perturbation::eval_p_sigma;

/// Column order of `diagnostics.csv`.
pub const CSV_COLUMNS: [&str; 19] = [
    "t",
    "dt",
    "area",
    "boundary_length",
    "H_min",
    "H_max",
    "maxA",
    "lambda_min_A",
    "lambda_min_Atilde",
    "pinch_margin",
    "f_max",
    "grad_ratio_max",
    "res_NH",
    "res_h11",
    "res_h22",
    "res_NAtilde",
    "res_P12",
    "umbilic_ratio_max",
    "min_angle",
];

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsConfig {
    pub sigma: f64,
    pub eta: f64,
    pub epsilon_pinch: f64,
    /// Convexity reference `D`.
    pub d_convexity: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// `None` calibrates to twice the initial `max |grad H|^2`.
    pub c_grad: Option<f64>,
    /// Whether to evaluate the boundary identity residuals at every record.
    pub boundary_residuals: bool,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            sigma: 0.1,
            eta: 0.05,
            epsilon_pinch: 0.01,
            d_convexity: 0.0,
            a: 1.0,
            b: 1.0,
            c: 1.0,
            c_grad: None,
            boundary_residuals: true,
        }
    }
}

impl DiagnosticsConfig {
    /// Range checks; `k` is the barrier's ball-curvature bound.
    pub fn validate(&self, k: f64) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma < 0.5) {
            return Err(Error::InvalidParams(format!("sigma must lie in (0, 0.5), got {}", self.sigma)));
        }
        let eta_max = 1f64.min(1.0 / (4.0 * k));
        if !(self.eta > 0.0 && self.eta < eta_max) {
            return Err(Error::InvalidParams(format!("eta must lie in (0, {eta_max}), got {}", self.eta)));
        }
        if !(self.epsilon_pinch > 0.0) || !(self.d_convexity >= 0.0) {
            return Err(Error::InvalidParams("epsilon_pinch must be positive and D non-negative".into()));
        }
        if self.c_grad.is_some_and(|c| !(c >= 0.0)) {
            return Err(Error::InvalidParams("C_grad must be non-negative".into()));
        }
        Ok(())
    }
}

/// One row of `diagnostics.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub dt: f64,
    pub area: f64,
    pub boundary_length: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_a: f64,
    pub lambda_min_a: f64,
    pub lambda_min_atilde: f64,
    pub pinch_margin: f64,
    pub f_max: f64,
    pub grad_ratio_max: f64,
    pub res_nh: f64,
    pub res_h11: f64,
    pub res_h22: f64,
    pub res_natilde: f64,
    pub res_p12: f64,
    pub umbilic_ratio_max: f64,
    pub min_angle: f64,
}

impl DiagnosticsRecord {
    pub fn values(&self) -> [f64; 19] {
        [
            self.t,
            self.dt,
            self.area,
            self.boundary_length,
            self.h_min,
            self.h_max,
            self.max_a,
            self.lambda_min_a,
            self.lambda_min_atilde,
            self.pinch_margin,
            self.f_max,
            self.grad_ratio_max,
            self.res_nh,
            self.res_h11,
            self.res_h22,
            self.res_natilde,
            self.res_p12,
            self.umbilic_ratio_max,
            self.min_angle,
        ]
    }

    /// Inverse of [`values`](Self::values).
    pub fn from_values(v: &[f64]) -> Self {
        DiagnosticsRecord {
            t: v[0],
            dt: v[1],
            area: v[2],
            boundary_length: v[3],
            h_min: v[4],
            h_max: v[5],
            max_a: v[6],
            lambda_min_a: v[7],
            lambda_min_atilde: v[8],
            pinch_margin: v[9],
            f_max: v[10],
            grad_ratio_max: v[11],
            res_nh: v[12],
            res_h11: v[13],
            res_h22: v[14],
            res_natilde: v[15],
            res_p12: v[16],
            umbilic_ratio_max: v[17],
            min_angle: v[18],
        }
    }

    pub fn csv_header() -> String {
        CSV_COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        self.values().iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",")
    }
}

/// Quantities logged alongside a record but not part of the CSV schema.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RecordExtras {
    pub step: usize,
    /// `sum_v H_v^2 area_v`.
    pub h2_integral: f64,
    /// Minimum over vertices of `|A~|^2 - H~^2 / 2` before clamping.
    pub pinch_raw_min: f64,
    pub g_functional_max: f64,
    pub zeta: ZetaReport,
    pub convex_a: bool,
    pub convex_atilde: bool,
    pub orthogonality_max: f64,
    pub boundary_phi_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexityMargin {
    pub lambda_min_a: f64,
    pub lambda_min_atilde: f64,
    /// `lambda_min(A) > D / 3`.
    pub a_pass: bool,
    /// `lambda_min(A~) > D / 2`.
    pub atilde_pass: bool,
}

pub fn convexity_margin(state: &FlowState, d: f64) -> ConvexityMargin {
    let lambda_min_a = state.geometry.vertices.iter().map(|g| g.kappa[0]).fold(f64::INFINITY, f64::min);
    let lambda_min_atilde = state.perturbed.iter().map(|p| min_eigenvalue(&p.a_tilde)).fold(f64::INFINITY, f64::min);
    ConvexityMargin { lambda_min_a, lambda_min_atilde, a_pass: lambda_min_a > d / 3.0, atilde_pass: lambda_min_atilde > d / 2.0 }
}

fn min_eigenvalue(m: &Matrix2<f64>) -> f64 {
    let mean = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let d = (0.25 * (m[(0, 0)] - m[(1, 1)]).powi(2) + m[(0, 1)] * m[(1, 0)]).max(0.0).sqrt();
    mean - d
}

/// `max_v max(0, |A~|^2 - H~^2 / 2) / H~^(2 - sigma)` and the unclamped
/// minimum of the numerator.
pub fn pinching_f(state: &FlowState, sigma: f64) -> Result<(f64, f64)> {
    let mut f_max: f64 = 0.0;
    let mut raw_min = f64::INFINITY;
    for (v, p) in state.perturbed.iter().enumerate() {
        if !(p.h_tilde > 0.0) {
            return Err(Error::NonpositiveHtilde { vertex: v, value: p.h_tilde });
        }
        let num = p.a_tilde_norm2 - 0.5 * p.h_tilde * p.h_tilde;
        raw_min = raw_min.min(num);
        f_max = f_max.max(num.max(0.0) / p.h_tilde.powf(2.0 - sigma));
    }
    Ok((f_max, raw_min))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ZetaReport {
    pub min: f64,
    pub max: f64,
    /// `max |zeta - eta|` over boundary vertices.
    pub boundary_deviation: f64,
    /// Largest finite-difference `|grad zeta|`.
    pub grad_max: f64,
    /// `eta e^-2 <= zeta <= eta e^2` and `|grad zeta| <= 5 e^2` at every vertex.
    pub bracket_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReport {
    pub grad_ratio_max: f64,
    pub g_functional_max: f64,
    pub zeta: ZetaReport,
}

/// `zeta = eta exp(rho / eta)` with `rho = d chi(|d| / eta)`.
pub fn zeta_at(barrier: &BarrierSurface, eta: f64, x: &Vector3<f64>) -> Result<f64> {
    let cp = barrier.closest_point(x);
    if !cp.converged {
        return Err(Error::NoConvergence { point: *x });
    }
    let d = cp.distance;
    let rho = d * cutoff_profile(d.abs() / eta).0;
    Ok(eta * (rho / eta).exp())
}

#[allow(clippy::too_many_arguments)]
pub fn gradient_test(
    state: &FlowState,
    barrier: &BarrierSurface,
    k: f64,
    config: &DiagnosticsConfig,
    c_grad: f64,
    exec: Execution,
) -> Result<GradientReport> {
    let eta = config.eta;
    let mesh = &state.mesh;
    let step = 1e-6 * eta;
    let per_vertex = try_map_indices(exec, mesh.vertex_count(), |v| -> Result<(f64, f64, f64, f64)> {
        let g = &state.geometry.vertices[v];
        let p = &state.perturbed[v];
        let x = mesh.positions[v];
        let h = g.h;
        let grad2 = g.grad_h.norm_squared();
        let ratio = grad2 / (eta * h.powi(4) + c_grad);

        let zeta = zeta_at(barrier, eta, &x)?;
        let cp = barrier.closest_point(&x);
        let dir = barrier.normal_at(&cp.point)?;
        let zeta_grad = ((zeta_at(barrier, eta, &(x + dir * step))? - zeta_at(barrier, eta, &(x - dir * step))?) / (2.0 * step)).abs();

        let f = barrier.extend_all(&x, k)?;
        let nu_s_t = f.nu - g.normal * g.normal.dot(&f.nu);
        let h_s_nunu = g.normal.dot(&(f.a * g.normal));
        let corrected = g.grad_h - nu_s_t * (h_s_nunu * h);
        let pinch = p.a_tilde_norm2 - 0.5 * p.h_tilde * p.h_tilde;
        let g_fun = if h > 0.0 {
            corrected.norm_squared() / h + config.b * h * pinch + config.b * config.a * p.a_tilde_norm2 - zeta * h.powi(3) + config.c
        } else {
            f64::NAN
        };
        Ok((ratio, g_fun, zeta, zeta_grad))
    })?;
    let e2 = std::f64::consts::E.powi(2);
    let mut zeta = ZetaReport { min: f64::INFINITY, max: f64::NEG_INFINITY, bracket_ok: true, ..Default::default() };
    let mut report = GradientReport { grad_ratio_max: 0.0, g_functional_max: f64::NEG_INFINITY, zeta };
    for (v, &(ratio, g_fun, z, zg)) in per_vertex.iter().enumerate() {
        report.grad_ratio_max = report.grad_ratio_max.max(ratio);
        report.g_functional_max = report.g_functional_max.max(g_fun);
        zeta.min = zeta.min.min(z);
        zeta.max = zeta.max.max(z);
        zeta.grad_max = zeta.grad_max.max(zg);
        if mesh.is_boundary(v) {
            zeta.boundary_deviation = zeta.boundary_deviation.max((z - eta).abs());
        }
        if z < eta / e2 - 1e-12 || z > eta * e2 + 1e-12 || zg > 5.0 * e2 + 1e-6 {
            zeta.bracket_ok = false;
        }
    }
    report.zeta = zeta;
    Ok(report)
}

/// Maximum residuals of the boundary identities over boundary vertices.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoundaryResiduals {
    pub res_nh: f64,
    pub res_h11: f64,
    pub res_h22: f64,
    pub res_natilde: f64,
    pub res_p12: f64,
}

/// `(point, normal, tangent frame, second fundamental form)`.
pub type SurfacePoint = (Vector3<f64>, Vector3<f64>, [Vector3<f64>; 2], Matrix2<f64>);

/// Derivative data of the surface at one boundary vertex, from a one-sided
/// quartic height fit in a frame `(N, T, nu)` with zero fitted slope.
#[derive(Debug, Clone)]
pub struct BoundaryJet {
    pub vertex: usize,
    pub origin: Vector3<f64>,
    pub conormal: Vector3<f64>,
    pub tangent: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub fit: HeightFit,
}

impl BoundaryJet {
    pub fn h(&self) -> Matrix2<f64> {
        let f = &self.fit;
        -Matrix2::new(f.derivative(2, 0), f.derivative(1, 1), f.derivative(1, 1), f.derivative(0, 2))
    }

    /// `(nabla_1 h_11, nabla_1 h_22)`.
    pub fn conormal_derivatives(&self) -> (f64, f64) {
        (-self.fit.derivative(3, 0), -self.fit.derivative(1, 2))
    }

    /// Point, unit normal, orthonormal tangent frame and second fundamental
    /// form of the fitted surface at parameter `(u, 0)`.
    pub fn surface_at(&self, u: f64) -> Option<SurfacePoint> {
        let f = &self.fit;
        let (wu, wv) = (f.derivative_at(1, 0, u, 0.0), f.derivative_at(0, 1, u, 0.0));
        let hess = Matrix2::new(
            f.derivative_at(2, 0, u, 0.0),
            f.derivative_at(1, 1, u, 0.0),
            f.derivative_at(1, 1, u, 0.0),
            f.derivative_at(0, 2, u, 0.0),
        );
        let g = Matrix2::new(1.0 + wu * wu, wu * wv, wu * wv, 1.0 + wv * wv);
        let l_inv = g.cholesky()?.l().try_inverse()?;
        let second = -hess / g.determinant().sqrt();
        let coord = [self.conormal + self.normal * wu, self.tangent + self.normal * wv];
        let frame = [coord[0] * l_inv[(0, 0)] + coord[1] * l_inv[(0, 1)], coord[0] * l_inv[(1, 0)] + coord[1] * l_inv[(1, 1)]];
        let normal = (self.normal - self.conormal * wu - self.tangent * wv).normalize();
        let point = self.origin + self.conormal * u + self.normal * f.eval(u, 0.0);
        Some((point, normal, frame, l_inv * second * l_inv.transpose()))
    }
}

/// One-sided jet at a boundary vertex over its `rings`-ring.
pub fn boundary_jet(mesh: &TriMesh, geometry: &SurfaceGeometry, vertex: usize, rings: usize) -> Option<BoundaryJet> {
    let frame = geometry.frame(vertex)?;
    let origin = mesh.positions[vertex];
    let pts: Vec<Vector3<f64>> = k_ring(&mesh.topology().neighbors, vertex, rings).iter().map(|&q| mesh.positions[q]).collect();
    let (mut n_vec, mut t_vec, mut normal) = (frame.conormal, frame.tangent, frame.normal);
    let mut fit = fit_height_polynomial(&origin, &[n_vec, t_vec, normal], &pts, 4, false)?;
    for _ in 0..2 {
        let (d, e) = (fit.derivative(1, 0), fit.derivative(0, 1));
        if d.hypot(e) < 1e-13 {
            break;
        }
        normal = (normal - n_vec * d - t_vec * e).normalize();
        n_vec = (n_vec - normal * normal.dot(&n_vec)).normalize();
        t_vec = normal.cross(&n_vec) * normal.cross(&n_vec).dot(&t_vec).signum();
        fit = fit_height_polynomial(&origin, &[n_vec, t_vec, normal], &pts, 4, false)?;
    }
    Some(BoundaryJet { vertex, origin, conormal: n_vec, tangent: t_vec, normal, fit })
}

/// Residuals of the five boundary identities at every boundary vertex.
pub fn boundary_residual_terms(state: &FlowState, barrier: &BarrierSurface, k: f64, exec: Execution) -> Result<Vec<BoundaryResiduals>> {
    let mesh = &state.mesh;
    let frames = &state.geometry.frames;
    for f in frames {
        let phi = barrier.phi(&mesh.positions[f.vertex]);
        if phi.abs() > 1e-6 {
            return Err(Error::BoundaryOffSurface { vertex: f.vertex, phi });
        }
    }
    let scale = mesh.max_edge_length();
    try_map_indices(exec, frames.len(), |i| -> Result<BoundaryResiduals> {
        let v = frames[i].vertex;
        let jet = boundary_jet(mesh, &state.geometry, v, 4).ok_or(Error::QuadricFitSingular(v))?;
        let p = mesh.positions[v];
        let h = jet.h();
        let hh = h.trace();
        let (d1h11, d1h22) = jet.conormal_derivatives();
        let n_h = d1h11 + d1h22;

        let bf = barrier.surface_frame_with_basis(&p, [jet.normal, jet.tangent]);
        let a_s = barrier.shape_operator_ambient(&p)?;
        let hs_nn = jet.normal.dot(&(a_s * jet.normal));
        let hs_22 = jet.tangent.dot(&(a_s * jet.tangent));
        let d_hs22 = barrier.cov_deriv_shape(&p, &jet.normal, &jet.tangent, &jet.tangent, 1e-4 * scale.max(1e-6))?;
        drop(bf);

        let res_nh = (n_h - hs_nn * hh).abs();
        let res_h11 = (d1h11 - (2.0 * hs_22 * hh + (hs_nn - 3.0 * hs_22) * h[(0, 0)] + d_hs22)).abs();
        let res_h22 = (d1h22 - (hs_22 * hh + (hs_nn - 3.0 * hs_22) * h[(1, 1)] - d_hs22)).abs();

        let atilde2 = |u: f64| -> Result<f64> {
            let (x, nu, frame, a) = jet.surface_at(u).ok_or(Error::QuadricFitSingular(v))?;
            let ps = eval_p_sigma(barrier, k, &x, &nu, &frame)?;
            let at = a + ps;
            Ok((at * at).trace())
        };
        let delta = 1e-3 * scale;
        let half_n_atilde2 = 0.5 * (atilde2(delta)? - atilde2(-delta)?) / (2.0 * delta);
        let ps0 = eval_p_sigma(barrier, k, &p, &jet.normal, &[jet.conormal, jet.tangent])?;
        let at0 = h + ps0;
        let atilde_norm2 = (at0 * at0).trace();
        let rhs = 3.0 * hs_22 * hh * h[(0, 0)] + (hs_nn - 2.0 * hs_22) * atilde_norm2 - 2.0 * hs_22 * h[(0, 0)].powi(2)
            + d_hs22 * (h[(0, 0)] - h[(1, 1)]);
        let res_natilde = (half_n_atilde2 - rhs).abs();
        let res_p12 = (ps0[(0, 1)] + h[(0, 1)]).abs();
        Ok(BoundaryResiduals { res_nh, res_h11, res_h22, res_natilde, res_p12 })
    })
}

pub fn boundary_residuals(state: &FlowState, barrier: &BarrierSurface, k: f64, exec: Execution) -> Result<BoundaryResiduals> {
    let terms = boundary_residual_terms(state, barrier, k, exec)?;
    Ok(terms.iter().fold(BoundaryResiduals::default(), |m, r| BoundaryResiduals {
        res_nh: m.res_nh.max(r.res_nh),
        res_h11: m.res_h11.max(r.res_h11),
        res_h22: m.res_h22.max(r.res_h22),
        res_natilde: m.res_natilde.max(r.res_natilde),
        res_p12: m.res_p12.max(r.res_p12),
    }))
}

/// Largest `|Å| / H` over vertices.
pub fn umbilic_ratio_max(geometry: &SurfaceGeometry) -> f64 {
    geometry.vertices.iter().map(|g| (g.a_norm2 - 0.5 * g.h * g.h).max(0.0).sqrt() / g.h.abs()).fold(0.0, f64::max)
}

/// Worst relative discrepancy `|dA + int H^2 dV dt| / |dA|` between
/// consecutive records, with the time integral by the trapezoid rule.
/// `records` holds `(t, area, int H^2 dV)`.
pub fn area_balance(records: &[(f64, f64, f64)]) -> Result<f64> {
    if records.len() < 2 {
        return Err(Error::InsufficientRecords);
    }
    let mut worst: f64 = 0.0;
    for w in records.windows(2) {
        let (t0, a0, i0) = w[0];
        let (t1, a1, i1) = w[1];
        let da = a1 - a0;
        let dissipated = 0.5 * (i0 + i1) * (t1 - t0);
        let residual = (da + dissipated).abs();
        if da == 0.0 {
            if residual != 0.0 {
                worst = f64::INFINITY;
            }
            continue;
        }
        worst = worst.max(residual / da.abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlowupEstimate {
    /// `H_0^-2`.
    pub paper_bound: f64,
    pub fitted_t: f64,
    pub within_bound: bool,
    pub window: usize,
}

/// Fits `H_max(t) = c / sqrt(T - t)` over the later half of `trajectory`
/// (`(t, H_max)` pairs), i.e. a straight line through `(t, H_max^-2)`.
pub fn blowup_estimate(h0: f64, trajectory: &[(f64, f64)]) -> Result<BlowupEstimate> {
    if !(h0 > 0.0) {
        return Err(Error::FitFailed(format!("H0 must be positive, got {h0}")));
    }
    if trajectory.len() < 3 {
        return Err(Error::InsufficientRecords);
    }
    let window = &trajectory[trajectory.len() / 2..];
    let window = if window.len() < 3 { &trajectory[trajectory.len() - 3..] } else { window };
    if window.iter().any(|&(_, h)| !(h > 0.0 && h.is_finite())) {
        return Err(Error::FitFailed("H_max must be positive".into()));
    }
    if window.windows(2).any(|w| !(w[1].1 > w[0].1)) {
        return Err(Error::FitFailed("H_max is not increasing over the fit window".into()));
    }
    let n = window.len() as f64;
    let (mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0);
    for &(t, h) in window {
        let y = 1.0 / (h * h);
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
    }
    let slope = (n * sty - st * sy) / (n * stt - st * st);
    let intercept = (sy - slope * st) / n;
    if !(slope < 0.0) {
        return Err(Error::FitFailed(format!("H_max^-2 does not decrease (slope {slope})")));
    }
    let fitted_t = -intercept / slope;
    let paper_bound = 1.0 / (h0 * h0);
    Ok(BlowupEstimate { paper_bound, fitted_t, within_bound: fitted_t <= paper_bound * 1.05, window: window.len() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescaleReport {
    pub hausdorff: f64,
    /// Largest distance from the rescaled surface to the hemisphere.
    pub surface_to_hemisphere: f64,
    /// Largest distance from the hemisphere to the rescaled surface.
    pub hemisphere_to_surface: f64,
    pub scale: f64,
    pub umbilic_ratio_max: f64,
}

/// Distance from `y` to the closed unit upper hemisphere.
pub fn distance_to_unit_hemisphere(y: &Vector3<f64>) -> f64 {
    if y.z >= 0.0 {
        (y.norm() - 1.0).abs()
    } else {
        let rho = y.x.hypot(y.y);
        ((rho - 1.0).powi(2) + y.z * y.z).sqrt()
    }
}

/// Distance from `p` to the triangle `(a, b, c)`.
pub fn point_triangle_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    let (ab, ac, ap) = (b - a, c - a, p - a);
    let (d1, d2) = (ab.dot(&ap), ac.dot(&ap));
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm();
    }
    let bp = p - b;
    let (d3, d4) = (ab.dot(&bp), ac.dot(&bp));
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (p - (a + ab * v)).norm();
    }
    let cp = p - c;
    let (d5, d6) = (ab.dot(&cp), ac.dot(&cp));
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (p - (a + ac * w)).norm();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + (c - b) * w)).norm();
    }
    let denom = 1.0 / (va + vb + vc);
    let (v, w) = (vb * denom, vc * denom);
    (p - (a + ab * v + ac * w)).norm()
}

/// Rescales the surface about the barrier projection of its boundary
/// centroid, with `nu_S` turned to `-e_z` and lengths divided by
/// `sqrt(4 (T - t))`, and measures the Hausdorff distance to the unit upper
/// hemisphere with `samples` points each way.
#[allow(clippy::too_many_arguments)]
pub fn rescale_compare(
    mesh: &TriMesh,
    geometry: Option<&SurfaceGeometry>,
    barrier: &BarrierSurface,
    t: f64,
    t_est: f64,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<RescaleReport> {
    if !(t_est > t) {
        return Err(Error::NonpositiveRemaining { t, t_est });
    }
    let boundary: Vec<usize> = mesh.boundary_vertices().collect();
    if boundary.is_empty() {
        return Err(Error::InvalidParams("surface has no boundary".into()));
    }
    let centroid = boundary.iter().map(|&v| mesh.positions[v]).sum::<Vector3<f64>>() / boundary.len() as f64;
    let origin = barrier.closest_point(&centroid).point;
    let nu_s = barrier.normal_at(&origin)?;
    let rotation = Rotation3::rotation_between(&nu_s, &(-Vector3::z()))
        .unwrap_or_else(|| Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI));
    let scale = 1.0 / (4.0 * (t_est - t)).sqrt();
    let positions: Vec<Vector3<f64>> = mesh.positions.iter().map(|p| rotation * (p - origin) * scale).collect();
    let faces = mesh.faces();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let areas: Vec<f64> =
        faces.iter().map(|&[a, b, c]| 0.5 * (positions[b] - positions[a]).cross(&(positions[c] - positions[a])).norm()).collect();
    let total: f64 = areas.iter().sum();
    let mut cumulative = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a / total;
        cumulative.push(acc);
    }
    let mut surface_pts: Vec<Vector3<f64>> = positions.clone();
    for _ in 0..samples {
        let r: f64 = rng.random();
        let f = cumulative.partition_point(|&c| c < r).min(faces.len() - 1);
        let (mut s, mut u): (f64, f64) = (rng.random(), rng.random());
        if s + u > 1.0 {
            s = 1.0 - s;
            u = 1.0 - u;
        }
        let [a, b, c] = faces[f];
        surface_pts.push(positions[a] + (positions[b] - positions[a]) * s + (positions[c] - positions[a]) * u);
    }
    let forward = surface_pts.iter().map(distance_to_unit_hemisphere).fold(0.0, f64::max);

    let hemi_pts: Vec<Vector3<f64>> = (0..samples)
        .map(|_| {
            let z: f64 = rng.random();
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let rho = (1.0 - z * z).max(0.0).sqrt();
            Vector3::new(rho * phi.cos(), rho * phi.sin(), z)
        })
        .collect();
    let backward = map_indices(exec, hemi_pts.len(), |i| {
        let q = &hemi_pts[i];
        faces.iter().map(|&[a, b, c]| point_triangle_distance(q, &positions[a], &positions[b], &positions[c])).fold(f64::INFINITY, f64::min)
    })
    .into_iter()
    .fold(0.0, f64::max);

    Ok(RescaleReport {
        hausdorff: forward.max(backward),
        surface_to_hemisphere: forward,
        hemisphere_to_surface: backward,
        scale,
        umbilic_ratio_max: geometry.map_or(f64::NAN, umbilic_ratio_max),
    })
}

/// Assembles records along a run.
#[derive(Debug, Clone)]
pub struct Monitor {
    pub config: DiagnosticsConfig,
    pub barrier: BarrierSurface,
    pub k: f64,
    pub exec: Execution,
    c_grad: Option<f64>,
}

impl Monitor {
    pub fn new(config: DiagnosticsConfig, barrier: BarrierSurface, k: f64, exec: Execution) -> Result<Self> {
        config.validate(k)?;
        let c_grad = config.c_grad;
        Ok(Monitor { config, barrier, k, exec, c_grad })
    }

    /// `C_grad` in effect; fixed by the first recorded state when not configured.
    pub fn c_grad(&self) -> Option<f64> {
        self.c_grad
    }

    pub fn record(&mut self, state: &FlowState) -> Result<(DiagnosticsRecord, RecordExtras)> {
        let geometry = &state.geometry;
        let c_grad =
            *self.c_grad.get_or_insert_with(|| 2.0 * geometry.vertices.iter().map(|g| g.grad_h.norm_squared()).fold(0.0, f64::max));
        let (h_min, h_max) = geometry.h_range();
        let convex = convexity_margin(state, self.config.d_convexity);
        let pinch_margin = geometry.vertices.iter().map(|g| g.kappa[0] - self.config.epsilon_pinch * g.h).fold(f64::INFINITY, f64::min);
        let (f_max, pinch_raw_min) = match pinching_f(state, self.config.sigma) {
            Ok(v) => v,
            Err(Error::NonpositiveHtilde { vertex, value }) => {
                log::warn!("t = {}: H~ = {value} at vertex {vertex}; f_max undefined", state.t);
                (f64::NAN, f64::NAN)
            }
            Err(e) => return Err(e),
        };
        let gradient = gradient_test(state, &self.barrier, self.k, &self.config, c_grad, self.exec)?;
        let residuals = if self.config.boundary_residuals && !geometry.frames.is_empty() {
            boundary_residuals(state, &self.barrier, self.k, self.exec)?
        } else {
            BoundaryResiduals::default()
        };
        let record = DiagnosticsRecord {
            t: state.t,
            dt: state.dt,
            area: state.mesh.area(),
            boundary_length: state.mesh.boundary_length(),
            h_min,
            h_max,
            max_a: geometry.max_a_norm(),
            lambda_min_a: convex.lambda_min_a,
            lambda_min_atilde: convex.lambda_min_atilde,
            pinch_margin,
            f_max,
            grad_ratio_max: gradient.grad_ratio_max,
            res_nh: residuals.res_nh,
            res_h11: residuals.res_h11,
            res_h22: residuals.res_h22,
            res_natilde: residuals.res_natilde,
            res_p12: residuals.res_p12,
            umbilic_ratio_max: umbilic_ratio_max(geometry),
            min_angle: mesh_quality(&state.mesh).min_angle,
        };
        let extras = RecordExtras {
            step: state.step,
            h2_integral: geometry.vertices.iter().map(|g| g.h * g.h * g.area).sum(),
            pinch_raw_min,
            g_functional_max: gradient.g_functional_max,
            zeta: gradient.zeta,
            convex_a: convex.a_pass,
            convex_atilde: convex.atilde_pass,
            orthogonality_max: geometry.frames.iter().map(|f| f.orthogonality_residual).fold(0.0, f64::max),
            boundary_phi_max: geometry.frames.iter().map(|f| self.barrier.phi(&state.mesh.positions[f.vertex]).abs()).fold(0.0, f64::max),
        };
        Ok((record, extras))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{FlowConfig, FlowEngine};
    use crate::mesh::{make_cap, CapSpec};

    fn state_for(spec: &CapSpec) -> (FlowEngine, FlowState) {
        let e = FlowEngine::new(spec.barrier().unwrap(), FlowConfig::default(), Execution::Parallel).unwrap();
        let s = e.initial_state(make_cap(spec).unwrap()).unwrap();
        (e, s)
    }

    #[test]
    fn header_has_nineteen_columns() {
        assert_eq!(DiagnosticsRecord::csv_header().split(',').count(), 19);
        assert_eq!(DiagnosticsRecord::default().csv_row().split(',').count(), 19);
        assert!(DiagnosticsRecord::csv_header().starts_with("t,dt,area,"));
    }

    #[test]
    fn hemisphere_monitors() {
        let (e, s) = state_for(&CapSpec::HemispherePlane { radius: 1.0, segments: 16 });
        let c = convexity_margin(&s, 0.0);
        assert!((c.lambda_min_a - 1.0).abs() < 0.05);
        assert!(c.a_pass && c.atilde_pass);
        let (f, _) = pinching_f(&s, 0.1).unwrap();
        assert!(f < 1e-3);
        let cfg = DiagnosticsConfig::default();
        let g = gradient_test(&s, &e.barrier, e.k, &cfg, 0.0, Execution::Parallel).unwrap();
        assert!(g.grad_ratio_max < 1e-4, "{g:?}");
        assert_eq!(g.zeta.boundary_deviation, 0.0);
        assert!(g.zeta.bracket_ok);
        let r = boundary_residuals(&s, &e.barrier, e.k, Execution::Parallel).unwrap();
        assert!(r.res_nh < 0.1 && r.res_h11 < 0.1 && r.res_h22 < 0.1 && r.res_p12 < 1e-2, "{r:?}");
        let (e2, s2) = state_for(&CapSpec::HemispherePlane { radius: 1.0, segments: 32 });
        let r2 = boundary_residuals(&s2, &e2.barrier, e2.k, Execution::Parallel).unwrap();
        assert!(r2.res_nh < r.res_nh / 4.0 && r2.res_h11 < r.res_h11 / 4.0, "{r2:?}");
        assert!(umbilic_ratio_max(&s.geometry) < 1e-3);
    }

    #[test]
    fn nonpositive_h_tilde_is_reported() {
        let (_, mut s) = state_for(&CapSpec::HemispherePlane { radius: 1.0, segments: 4 });
        s.perturbed[3].h_tilde = -1.0;
        assert!(matches!(pinching_f(&s, 0.1), Err(Error::NonpositiveHtilde { vertex: 3, .. })));
    }

    #[test]
    fn zeta_bracket() {
        let b = BarrierSurface::plane(Vector3::z(), 0.0).unwrap();
        let eta = 0.05;
        assert_eq!(zeta_at(&b, eta, &Vector3::new(0.3, 0.2, 0.0)).unwrap(), eta);
        for i in 0..200 {
            let z = -0.2 + 0.002 * i as f64;
            let zeta = zeta_at(&b, eta, &Vector3::new(0.0, 0.0, z)).unwrap();
            assert!(zeta >= eta * (-2f64).exp() - 1e-15 && zeta <= eta * 2f64.exp() + 1e-15);
        }
    }

    #[test]
    fn area_balance_examples() {
        let recs: Vec<(f64, f64, f64)> = (0..5)
            .map(|i| {
                let t = 0.04 * i as f64;
                (t, 2.0 * std::f64::consts::PI * (1.0 - 4.0 * t), 8.0 * std::f64::consts::PI)
            })
            .collect();
        assert!(area_balance(&recs).unwrap() < 1e-12);
        assert_eq!(area_balance(&[(0.0, 1.0, 0.0), (1.0, 1.0, 0.0)]).unwrap(), 0.0);
        assert!(matches!(area_balance(&recs[..1]), Err(Error::InsufficientRecords)));
    }

    #[test]
    fn blowup_fit_recovers_singular_time() {
        for r0 in [1.0f64, 0.5] {
            let t_sing = r0 * r0 / 4.0;
            let traj: Vec<(f64, f64)> = (0..40).map(|i| i as f64 * 0.02 * t_sing).map(|t| (t, 2.0 / (r0 * r0 - 4.0 * t).sqrt())).collect();
            let est = blowup_estimate(2.0 / r0, &traj).unwrap();
            assert!((est.paper_bound - t_sing).abs() < 1e-15);
            assert!((est.fitted_t - t_sing).abs() < 1e-10);
            assert!(est.within_bound);
        }
        let flat: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 0.0)).collect();
        assert!(matches!(blowup_estimate(1.0, &flat), Err(Error::FitFailed(_))));
    }

    #[test]
    fn triangle_distance_regions() {
        let (a, b, c) = (Vector3::zeros(), Vector3::x(), Vector3::y());
        assert!((point_triangle_distance(&Vector3::new(0.2, 0.2, 1.0), &a, &b, &c) - 1.0).abs() < 1e-15);
        assert!((point_triangle_distance(&Vector3::new(-1.0, -1.0, 0.0), &a, &b, &c) - 2f64.sqrt()).abs() < 1e-15);
        assert!((point_triangle_distance(&Vector3::new(0.5, -1.0, 0.0), &a, &b, &c) - 1.0).abs() < 1e-15);
        assert!((point_triangle_distance(&Vector3::new(1.0, 1.0, 0.0), &a, &b, &c) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn exact_hemisphere_rescales_to_unit() {
        let spec = CapSpec::HemispherePlane { radius: 0.6, segments: 16 };
        let m = make_cap(&spec).unwrap();
        let t = 0.16;
        let r = rescale_compare(&m, None, &spec.barrier().unwrap(), t, 0.25, 2000, 1, Execution::Parallel).unwrap();
        assert!((r.scale - 1.0 / 0.6).abs() < 1e-12);
        assert!(r.hausdorff <= 2.0 * m.max_edge_length() / 0.6, "{r:?}");
        assert!(matches!(
            rescale_compare(&m, None, &spec.barrier().unwrap(), 0.3, 0.25, 10, 1, Execution::Parallel),
            Err(Error::NonpositiveRemaining { .. })
        ));
    }

    #[test]
    fn config_ranges() {
        assert!(DiagnosticsConfig::default().validate(0.1).is_ok());
        assert!(DiagnosticsConfig { sigma: 0.9, ..Default::default() }.validate(0.1).is_err());
        assert!(DiagnosticsConfig { eta: 0.3, ..Default::default() }.validate(1.0).is_err());
    }
}
