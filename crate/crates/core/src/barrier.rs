//! Analytic barrier surfaces.
//!
//! Every catalog barrier is a quadric level set `phi(x) = x^T Q x + b.x + c`,
//! so the gradient and Hessian are available in closed form. The global unit
//! normal is `nu_S = orientation_sign * grad phi / |grad phi|`, and the second
//! fundamental form uses the convention `A_S(u, v) = -<D_u v, nu_S>`. With the
//! default orientation the catalog spheres, cylinders, ellipsoids and slabs
//! are convex (`A_S >= 0`).

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Matrix3, Matrix4, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Lower clamp for the ball-curvature bound `K`; flat barriers would otherwise
/// give an infinite truncation radius.
pub const K_MIN: f64 = 0.1;

/// Mean-curvature floor below which `|grad A_S| / H_S` is not sampled.
pub const H_FLOOR: f64 = 1e-6;

const NEWTON_MAX_ITER: usize = 50;
const NEWTON_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BarrierKind {
    Plane,
    Sphere,
    Cylinder,
    Ellipsoid,
    Slab,
    Custom,
}

impl fmt::Display for BarrierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BarrierKind::Plane => "plane",
            BarrierKind::Sphere => "sphere",
            BarrierKind::Cylinder => "cylinder",
            BarrierKind::Ellipsoid => "ellipsoid",
            BarrierKind::Slab => "slab",
            BarrierKind::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl FromStr for BarrierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "plane" => Ok(BarrierKind::Plane),
            "sphere" => Ok(BarrierKind::Sphere),
            "cylinder" => Ok(BarrierKind::Cylinder),
            "ellipsoid" => Ok(BarrierKind::Ellipsoid),
            "slab" => Ok(BarrierKind::Slab),
            "custom" | "custom-analytic" => Ok(BarrierKind::Custom),
            other => Err(Error::InvalidParams(format!("unknown barrier kind `{other}`"))),
        }
    }
}

/// A barrier surface `S = {phi = 0}` with a chosen global unit normal.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierSurface {
    kind: BarrierKind,
    params: Vec<f64>,
    orientation_sign: f64,
    q: Matrix3<f64>,
    b: Vector3<f64>,
    c: f64,
    width: f64,
}

/// Geometry of `S` at one of its points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierPointFrame {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub tangent: [Vector3<f64>; 2],
    /// Second fundamental form in the tangent basis.
    pub a: Matrix2<f64>,
    pub h: f64,
    /// Trace-free part `A_S - H_S/2 I`.
    pub a_ring: Matrix2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierBounds {
    pub k: f64,
    pub l1: f64,
    pub l2: f64,
    pub sample_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPoint {
    pub distance: f64,
    pub point: Vector3<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallCurvature {
    pub zbar: f64,
    pub zlow: f64,
}

/// Which tensor [`BarrierSurface::extend_tensor`] should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtendedField {
    ShapeOperator,
    Metric,
    NormalCovector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtendedTensor {
    Bilinear(Matrix3<f64>),
    Covector(Vector3<f64>),
}

/// All extended barrier fields at one ambient point, each already multiplied
/// by the truncation factor `chi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtendedFields {
    pub chi: f64,
    pub distance: f64,
    pub a: Matrix3<f64>,
    pub g: Matrix3<f64>,
    pub nu: Vector3<f64>,
}

impl ExtendedFields {
    pub fn zero() -> Self {
        ExtendedFields { chi: 0.0, distance: f64::INFINITY, a: Matrix3::zeros(), g: Matrix3::zeros(), nu: Vector3::zeros() }
    }

    pub fn is_zero(&self) -> bool {
        self.chi == 0.0
    }
}

fn unit(v: Vector3<f64>) -> Vector3<f64> {
    v / v.norm()
}

/// Deterministic orthonormal tangent pair for a unit normal.
pub fn tangent_basis(n: &Vector3<f64>) -> [Vector3<f64>; 2] {
    let mut k = 0;
    for i in 1..3 {
        if n[i].abs() < n[k].abs() {
            k = i;
        }
    }
    let mut helper = Vector3::zeros();
    helper[k] = 1.0;
    let e1 = unit(helper - n * n.dot(&helper));
    let e2 = n.cross(&e1);
    [e1, e2]
}

impl BarrierSurface {
    fn from_quadric(kind: BarrierKind, params: Vec<f64>, q: Matrix3<f64>, b: Vector3<f64>, c: f64, width: f64) -> Self {
        BarrierSurface { kind, params, orientation_sign: 1.0, q, b, c, width }
    }

    /// Plane `{n . x = offset}` with `nu_S = n`.
    pub fn plane(normal: Vector3<f64>, offset: f64) -> Result<Self> {
        let len = normal.norm();
        if !(len > 0.0) || !offset.is_finite() {
            return Err(Error::InvalidParams("plane needs a nonzero normal".into()));
        }
        let n = normal / len;
        Ok(Self::from_quadric(BarrierKind::Plane, vec![n.x, n.y, n.z, offset], Matrix3::zeros(), n, -offset, f64::INFINITY))
    }

    pub fn sphere(radius: f64, center: Vector3<f64>) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidParams(format!("sphere radius must be positive, got {radius}")));
        }
        Ok(Self::from_quadric(
            BarrierKind::Sphere,
            vec![radius, center.x, center.y, center.z],
            Matrix3::identity(),
            -2.0 * center,
            center.norm_squared() - radius * radius,
            radius,
        ))
    }

    /// Infinite circular cylinder of the given radius around the line
    /// `point + s * axis`.
    pub fn cylinder(radius: f64, axis: Vector3<f64>, point: Vector3<f64>) -> Result<Self> {
        if !(radius > 0.0) || !(axis.norm() > 0.0) {
            return Err(Error::InvalidParams("cylinder needs positive radius and nonzero axis".into()));
        }
        let a = unit(axis);
        let q = Matrix3::identity() - a * a.transpose();
        Ok(Self::from_quadric(
            BarrierKind::Cylinder,
            vec![radius, a.x, a.y, a.z, point.x, point.y, point.z],
            q,
            -2.0 * q * point,
            (point.transpose() * q * point)[0] - radius * radius,
            radius,
        ))
    }

    pub fn ellipsoid(radii: Vector3<f64>, center: Vector3<f64>) -> Result<Self> {
        if radii.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::InvalidParams("ellipsoid radii must be positive".into()));
        }
        let q = Matrix3::from_diagonal(&radii.map(|r| 1.0 / (r * r)));
        let rmax = radii.max();
        let rmin = radii.min();
        Ok(Self::from_quadric(
            BarrierKind::Ellipsoid,
            vec![radii.x, radii.y, radii.z, center.x, center.y, center.z],
            q,
            -2.0 * q * center,
            (center.transpose() * q * center)[0] - 1.0,
            rmin * rmin / rmax,
        ))
    }

    /// The two planes `z = 0` and `z = gap`, normals pointing away from the
    /// region between them.
    pub fn slab(gap: f64) -> Result<Self> {
        if !(gap > 0.0) {
            return Err(Error::InvalidParams(format!("slab gap must be positive, got {gap}")));
        }
        let ez = Vector3::z();
        Ok(Self::from_quadric(BarrierKind::Slab, vec![gap], ez * ez.transpose(), Vector3::new(0.0, 0.0, -gap), 0.0, 0.5 * gap))
    }

    /// General quadric from the coefficient table
    /// `[qxx, qyy, qzz, qxy, qxz, qyz, bx, by, bz, c]` and a declared
    /// tubular width.
    pub fn custom(coefficients: &[f64], width: f64) -> Result<Self> {
        if coefficients.len() != 10 || coefficients.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("custom quadric needs 10 finite coefficients".into()));
        }
        if !(width > 0.0) {
            return Err(Error::InvalidParams("custom quadric needs a positive tubular width".into()));
        }
        let k = coefficients;
        let q = Matrix3::new(k[0], k[3], k[4], k[3], k[1], k[5], k[4], k[5], k[2]);
        let mut params = coefficients.to_vec();
        params.push(width);
        Ok(Self::from_quadric(BarrierKind::Custom, params, q, Vector3::new(k[6], k[7], k[8]), k[9], width))
    }

    /// Builds a catalog barrier from a kind and a flat parameter list, as read
    /// from a run configuration. Missing trailing parameters take defaults.
    pub fn from_params(kind: BarrierKind, params: &[f64]) -> Result<Self> {
        let get = |i: usize, default: f64| params.get(i).copied().unwrap_or(default);
        let vec3 = |i: usize, default: Vector3<f64>| {
            if params.len() >= i + 3 {
                Vector3::new(params[i], params[i + 1], params[i + 2])
            } else {
                default
            }
        };
        match kind {
            BarrierKind::Plane => Self::plane(vec3(0, Vector3::z()), get(3, 0.0)),
            BarrierKind::Sphere => Self::sphere(get(0, 1.0), vec3(1, Vector3::zeros())),
            BarrierKind::Cylinder => Self::cylinder(get(0, 1.0), vec3(1, Vector3::z()), vec3(4, Vector3::zeros())),
            BarrierKind::Ellipsoid => Self::ellipsoid(vec3(0, Vector3::new(2.0, 1.5, 1.0)), vec3(3, Vector3::zeros())),
            BarrierKind::Slab => Self::slab(get(0, 0.5)),
            BarrierKind::Custom => {
                if params.len() < 10 {
                    return Err(Error::InvalidParams("custom quadric needs 10 coefficients".into()));
                }
                Self::custom(&params[..10], get(10, f64::INFINITY).min(1e6))
            }
        }
    }

    /// Flips or keeps the global normal; `sign` must be +1 or -1.
    pub fn with_orientation(mut self, sign: f64) -> Result<Self> {
        if sign != 1.0 && sign != -1.0 {
            return Err(Error::InvalidParams(format!("orientation_sign must be +1 or -1, got {sign}")));
        }
        self.orientation_sign = sign;
        Ok(self)
    }

    pub fn with_tubular_width(mut self, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::InvalidParams("tubular width must be positive".into()));
        }
        self.width = width;
        Ok(self)
    }

    pub fn kind(&self) -> BarrierKind {
        self.kind
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn orientation_sign(&self) -> f64 {
        self.orientation_sign
    }

    pub fn tubular_width(&self) -> f64 {
        self.width
    }

    /// True for barriers whose trace-free second fundamental form vanishes.
    pub fn is_umbilic(&self) -> bool {
        matches!(self.kind, BarrierKind::Plane | BarrierKind::Sphere | BarrierKind::Slab)
    }

    /// True when every component of `S` is a plane, so reflection across
    /// `S` is an isometry.
    pub fn is_planar(&self) -> bool {
        matches!(self.kind, BarrierKind::Plane | BarrierKind::Slab)
    }

    pub fn phi(&self, x: &Vector3<f64>) -> f64 {
        (x.transpose() * self.q * x)[0] + self.b.dot(x) + self.c
    }

    pub fn grad_phi(&self, x: &Vector3<f64>) -> Vector3<f64> {
        2.0 * self.q * x + self.b
    }

    pub fn hessian_phi(&self, _x: &Vector3<f64>) -> Matrix3<f64> {
        2.0 * self.q
    }

    /// `nu_S` extended off `S` as the normalized, oriented level-set gradient.
    pub fn normal_at(&self, x: &Vector3<f64>) -> Result<Vector3<f64>> {
        let g = self.grad_phi(x);
        let n = g.norm();
        if n < 1e-12 {
            return Err(Error::DegenerateGradient { norm: n });
        }
        Ok(self.orientation_sign * g / n)
    }

    /// Second fundamental form at `p` as an ambient bilinear form, already
    /// composed with the projection onto `T_p S`.
    pub fn shape_operator_ambient(&self, p: &Vector3<f64>) -> Result<Matrix3<f64>> {
        let g = self.grad_phi(p);
        let gn = g.norm();
        if gn < 1e-12 {
            return Err(Error::DegenerateGradient { norm: gn });
        }
        let nu = g / gn;
        let proj = Matrix3::identity() - nu * nu.transpose();
        let a = proj * self.hessian_phi(p) * proj * (self.orientation_sign / gn);
        Ok(0.5 * (a + a.transpose()))
    }

    fn closed_form_projection(&self, x: &Vector3<f64>) -> Option<Vector3<f64>> {
        let p = &self.params;
        match self.kind {
            BarrierKind::Plane => {
                let n = Vector3::new(p[0], p[1], p[2]);
                Some(x - n * (n.dot(x) - p[3]))
            }
            BarrierKind::Sphere => {
                let c = Vector3::new(p[1], p[2], p[3]);
                let r = x - c;
                let len = r.norm();
                (len > 0.0).then(|| c + r * (p[0] / len))
            }
            BarrierKind::Cylinder => {
                let a = Vector3::new(p[1], p[2], p[3]);
                let o = Vector3::new(p[4], p[5], p[6]);
                let r = x - o;
                let along = a * a.dot(&r);
                let radial = r - along;
                let len = radial.norm();
                (len > 0.0).then(|| o + along + radial * (p[0] / len))
            }
            BarrierKind::Slab => {
                let gap = p[0];
                let z = if x.z <= 0.5 * gap { 0.0 } else { gap };
                Some(Vector3::new(x.x, x.y, z))
            }
            BarrierKind::Ellipsoid | BarrierKind::Custom => None,
        }
    }

    /// Damped Newton on the stationarity system `y - x + mu grad phi(y) = 0,
    /// phi(y) = 0`, seeded by gradient steps that drive `phi` to zero.
    fn newton_projection(&self, x: &Vector3<f64>) -> (Vector3<f64>, bool) {
        let scale = x.norm().max(1.0);
        let mut y = *x;
        for _ in 0..NEWTON_MAX_ITER {
            let g = self.grad_phi(&y);
            let gg = g.norm_squared();
            if gg < 1e-24 {
                break;
            }
            let f = self.phi(&y);
            if f.abs() / gg.sqrt() < 1e-3 * scale {
                break;
            }
            y -= g * (f / gg);
        }
        let g = self.grad_phi(&y);
        let gg = g.norm_squared();
        if gg < 1e-24 {
            return (y, false);
        }
        let mut mu = -(x - y).dot(&g) / gg;
        let residual = |y: &Vector3<f64>, mu: f64| -> Vector4<f64> {
            let r = y - x + self.grad_phi(y) * mu;
            Vector4::new(r.x, r.y, r.z, self.phi(y))
        };
        let h = self.hessian_phi(&y);
        for _ in 0..NEWTON_MAX_ITER {
            let g = self.grad_phi(&y);
            let gn = g.norm();
            let nu = g / gn;
            let offset = x - y;
            let tangential = (offset - nu * nu.dot(&offset)).norm();
            let phi = self.phi(&y);
            if phi.abs() / gn <= NEWTON_TOL * scale && tangential <= NEWTON_TOL * scale {
                return (y, true);
            }
            let r = residual(&y, mu);
            let mut jac = Matrix4::zeros();
            let top = Matrix3::identity() + h * mu;
            jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&top);
            jac.fixed_view_mut::<3, 1>(0, 3).copy_from(&g);
            jac.fixed_view_mut::<1, 3>(3, 0).copy_from(&g.transpose());
            let Some(step) = jac.lu().solve(&(-r)) else {
                return (y, false);
            };
            let r0 = r.norm();
            let mut alpha = 1.0;
            loop {
                let y_new = y + step.fixed_rows::<3>(0) * alpha;
                let mu_new = mu + step[3] * alpha;
                if residual(&y_new, mu_new).norm() < r0 || alpha < 1e-4 {
                    y = y_new;
                    mu = mu_new;
                    break;
                }
                alpha *= 0.5;
            }
        }
        let g = self.grad_phi(&y);
        let offset = x - y;
        let nu = g / g.norm();
        let ok = self.phi(&y).abs() / g.norm() <= 1e-10 * scale && (offset - nu * nu.dot(&offset)).norm() <= 1e-10 * scale;
        (y, ok)
    }

    /// Closest point on `S` and signed distance, without the tubular-width check.
    pub fn closest_point(&self, x: &Vector3<f64>) -> ClosestPoint {
        let (point, converged) = match self.closed_form_projection(x) {
            Some(p) => (p, true),
            None => self.newton_projection(x),
        };
        let offset = x - point;
        let dist = offset.norm();
        let sign = match self.normal_at(&point) {
            Ok(nu) if offset.dot(&nu) < 0.0 => -1.0,
            _ => 1.0,
        };
        ClosestPoint { distance: sign * dist, point, converged }
    }

    /// Signed distance to `S`: positive on the side `nu_S` points into.
    pub fn signed_distance(&self, x: &Vector3<f64>) -> Result<ClosestPoint> {
        let cp = self.closest_point(x);
        if !cp.converged {
            return Err(Error::NoConvergence { point: *x });
        }
        if cp.distance.abs() > self.width {
            return Err(Error::OutsideTubular { distance: cp.distance, width: self.width });
        }
        Ok(cp)
    }

    pub fn surface_frame(&self, p: &Vector3<f64>) -> Result<BarrierPointFrame> {
        let nu = self.normal_at(p)?;
        self.surface_frame_with_basis(p, tangent_basis(&nu))
    }

    /// Frame at `p` using a caller-chosen orthonormal tangent basis.
    pub fn surface_frame_with_basis(&self, p: &Vector3<f64>, tangent: [Vector3<f64>; 2]) -> Result<BarrierPointFrame> {
        let g = self.grad_phi(p);
        let gn = g.norm();
        if gn < 1e-12 {
            return Err(Error::DegenerateGradient { norm: gn });
        }
        let off = self.phi(p).abs() / gn;
        if off > 1e-8 {
            return Err(Error::InvalidParams(format!("point is not on the barrier (distance ~ {off:e})")));
        }
        let normal = self.orientation_sign * g / gn;
        let hess = self.hessian_phi(p) * (self.orientation_sign / gn);
        let mut a = Matrix2::zeros();
        for i in 0..2 {
            for j in 0..2 {
                a[(i, j)] = tangent[i].dot(&(hess * tangent[j]));
            }
        }
        a = 0.5 * (a + a.transpose());
        let h = a.trace();
        let a_ring = a - Matrix2::identity() * (0.5 * h);
        Ok(BarrierPointFrame { point: *p, normal, tangent, a, h, a_ring })
    }

    /// `(nabla^S_X A_S)(Y, Z)` at `p` for `X, Y, Z` tangent at `p`, by central
    /// differences along the curve `s -> closest(p + s X)`. Evaluating the
    /// projected ambient form on fixed vectors is parallel to first order, so
    /// no connection terms appear.
    pub fn cov_deriv_shape(&self, p: &Vector3<f64>, x: &Vector3<f64>, y: &Vector3<f64>, z: &Vector3<f64>, step: f64) -> Result<f64> {
        let eval = |s: f64| -> Result<f64> {
            let q = self.closest_point(&(p + x * s));
            if !q.converged {
                return Err(Error::NoConvergence { point: p + x * s });
            }
            let a = self.shape_operator_ambient(&q.point)?;
            Ok(y.dot(&(a * z)))
        };
        Ok((eval(step)? - eval(-step)?) / (2.0 * step))
    }

    fn trace_free_ambient(&self, p: &Vector3<f64>) -> Result<Matrix3<f64>> {
        let a = self.shape_operator_ambient(p)?;
        let nu = self.normal_at(p)?;
        let proj = Matrix3::identity() - nu * nu.transpose();
        Ok(a - proj * (0.5 * a.trace()))
    }

    fn cov_deriv_trace_free(&self, p: &Vector3<f64>, x: &Vector3<f64>, y: &Vector3<f64>, z: &Vector3<f64>, step: f64) -> Result<f64> {
        let eval = |s: f64| -> Result<f64> {
            let q = self.closest_point(&(p + x * s));
            let a = self.trace_free_ambient(&q.point)?;
            Ok(y.dot(&(a * z)))
        };
        Ok((eval(step)? - eval(-step)?) / (2.0 * step))
    }

    /// `(nabla^2_S A_ring)(W, X; Y, Z)`: outer central difference along `W` of
    /// the first covariant derivative evaluated on vectors projected to the
    /// moving tangent plane.
    fn second_cov_deriv_trace_free(
        &self,
        p: &Vector3<f64>,
        w: &Vector3<f64>,
        x: &Vector3<f64>,
        y: &Vector3<f64>,
        z: &Vector3<f64>,
        step: f64,
    ) -> Result<f64> {
        let eval = |s: f64| -> Result<f64> {
            let q = self.closest_point(&(p + w * s)).point;
            let nu = self.normal_at(&q)?;
            let proj = |v: &Vector3<f64>| v - nu * nu.dot(v);
            self.cov_deriv_trace_free(&q, &proj(x), &proj(y), &proj(z), step)
        };
        Ok((eval(step)? - eval(-step)?) / (2.0 * step))
    }

    /// Random (or, for flat pieces, gridded) points on `S`.
    pub fn sample_points(&self, n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = &self.params;
        let sphere_dir = |rng: &mut ChaCha8Rng| {
            let z: f64 = rng.random_range(-1.0..1.0);
            let t: f64 = rng.random_range(0.0..2.0 * PI);
            let s = (1.0 - z * z).sqrt();
            Vector3::new(s * t.cos(), s * t.sin(), z)
        };
        match self.kind {
            BarrierKind::Plane => {
                let normal = Vector3::new(p[0], p[1], p[2]);
                let [e1, e2] = tangent_basis(&normal);
                let o = normal * p[3];
                (0..n).map(|_| o + e1 * rng.random_range(-2.0..2.0) + e2 * rng.random_range(-2.0..2.0)).collect()
            }
            BarrierKind::Sphere => {
                let c = Vector3::new(p[1], p[2], p[3]);
                (0..n).map(|_| c + sphere_dir(&mut rng) * p[0]).collect()
            }
            BarrierKind::Cylinder => {
                let r = p[0];
                let a = Vector3::new(p[1], p[2], p[3]);
                let o = Vector3::new(p[4], p[5], p[6]);
                let [e1, e2] = tangent_basis(&a);
                (0..n)
                    .map(|_| {
                        let t: f64 = rng.random_range(0.0..2.0 * PI);
                        let s: f64 = rng.random_range(-2.0 * r..2.0 * r);
                        o + a * s + (e1 * t.cos() + e2 * t.sin()) * r
                    })
                    .collect()
            }
            BarrierKind::Ellipsoid => {
                let radii = Vector3::new(p[0], p[1], p[2]);
                let c = Vector3::new(p[3], p[4], p[5]);
                (0..n).map(|_| c + sphere_dir(&mut rng).component_mul(&radii)).collect()
            }
            BarrierKind::Slab => {
                // aligned grids on both planes, so every point has a partner
                // directly across the gap
                let gap = p[0];
                let side = ((n as f64 / 2.0).sqrt().floor() as usize).max(1);
                let half = 2.0 * gap;
                let mut pts = Vec::with_capacity(2 * side * side);
                for z in [0.0, gap] {
                    for i in 0..side {
                        for j in 0..side {
                            let u = -half + 2.0 * half * (i as f64 + 0.5) / side as f64;
                            let v = -half + 2.0 * half * (j as f64 + 0.5) / side as f64;
                            pts.push(Vector3::new(u, v, z));
                        }
                    }
                }
                pts
            }
            BarrierKind::Custom => {
                let mut out = Vec::with_capacity(n);
                let mut tries = 0;
                while out.len() < n && tries < 100 * n.max(1) {
                    tries += 1;
                    let x = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                    let cp = self.closest_point(&x);
                    if cp.converged && cp.distance.abs() <= self.width {
                        out.push(cp.point);
                    }
                }
                out
            }
        }
    }

    /// Interior and exterior ball curvatures at every sample. The local limit
    /// `q -> p` (the principal curvatures) is part of the supremum/infimum.
    pub fn ball_curvatures(&self, samples: &[Vector3<f64>], exec: Execution) -> Result<Vec<BallCurvature>> {
        let distinct = samples.len() >= 2 && samples.iter().any(|q| (q - samples[0]).norm() > 1e-14);
        if !distinct {
            return Err(Error::InsufficientSamples { needed: 2, got: samples.len() });
        }
        par::try_map_indices(exec, samples.len(), |i| {
            let p = samples[i];
            let frame = self.surface_frame(&p)?;
            let eig = frame.a.symmetric_eigenvalues();
            let mut zbar = eig.max();
            let mut zlow = eig.min();
            for q in samples {
                let dq = p - q;
                let r2 = dq.norm_squared();
                if r2 <= 1e-28 {
                    continue;
                }
                let ratio = 2.0 * dq.dot(&frame.normal) / r2;
                zbar = zbar.max(ratio);
                zlow = zlow.min(ratio);
            }
            Ok(BallCurvature { zbar, zlow })
        })
    }

    /// Sampled estimates of `K`, `L1`, `L2`. These are estimates, not
    /// certified bounds.
    pub fn estimate_bounds(&self, samples: &[Vector3<f64>], exec: Execution) -> Result<BarrierBounds> {
        if samples.is_empty() {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        let zbar = if samples.len() >= 2 {
            self.ball_curvatures(samples, exec)?.iter().map(|b| b.zbar).fold(0.0, f64::max)
        } else {
            self.surface_frame(&samples[0])?.a.symmetric_eigenvalues().max()
        };
        let k = zbar.max(K_MIN);
        let step = 1e-3 / k;
        let per_sample = par::try_map_indices(exec, samples.len(), |i| -> Result<(f64, f64)> {
            let p = samples[i];
            let frame = self.surface_frame(&p)?;
            let e = frame.tangent;
            let mut grad2 = 0.0;
            let mut hess2 = 0.0;
            for a in &e {
                for b in &e {
                    for c in &e {
                        let d = self.cov_deriv_shape(&p, a, b, c, step)?;
                        grad2 += d * d;
                        for w in &e {
                            let d2 = self.second_cov_deriv_trace_free(&p, w, a, b, c, step)?;
                            hess2 += d2 * d2;
                        }
                    }
                }
            }
            let l1 = if frame.h >= H_FLOOR { grad2.sqrt() / frame.h } else { 0.0 };
            Ok((l1, hess2.sqrt()))
        })?;
        let l1 = per_sample.iter().map(|v| v.0).fold(0.0, f64::max);
        let l2 = per_sample.iter().map(|v| v.1).fold(0.0, f64::max);
        Ok(BarrierBounds { k, l1, l2, sample_count: samples.len() })
    }

    /// Extended `A_S`, `g_S` and `nu_S^flat` at an ambient point, truncated by
    /// `chi_K`. Zero outside the support.
    pub fn extend_all(&self, x: &Vector3<f64>, k: f64) -> Result<ExtendedFields> {
        if !(k > 0.0) {
            return Err(Error::NonpositiveK(k));
        }
        let cp = match self.signed_distance(x) {
            Ok(cp) => cp,
            Err(Error::OutsideTubular { .. }) => return Ok(ExtendedFields::zero()),
            Err(e) => {
                // the support is far inside the tubular width, so a failed
                // projection from a point clearly outside it is harmless
                let quick = self.phi(x).abs() / self.grad_phi(x).norm().max(1e-300);
                if quick > 1.0 / k {
                    return Ok(ExtendedFields::zero());
                }
                return Err(e);
            }
        };
        let chi = cutoff_chi(cp.distance, k)?;
        if chi == 0.0 {
            return Ok(ExtendedFields { distance: cp.distance, ..ExtendedFields::zero() });
        }
        let nu = self.normal_at(&cp.point)?;
        let a = self.shape_operator_ambient(&cp.point)?;
        let g = Matrix3::identity() - nu * nu.transpose();
        Ok(ExtendedFields { chi, distance: cp.distance, a: a * chi, g: g * chi, nu: nu * chi })
    }

    pub fn extend_tensor(&self, x: &Vector3<f64>, which: ExtendedField, k: f64) -> Result<ExtendedTensor> {
        let f = self.extend_all(x, k)?;
        Ok(match which {
            ExtendedField::ShapeOperator => ExtendedTensor::Bilinear(f.a),
            ExtendedField::Metric => ExtendedTensor::Bilinear(f.g),
            ExtendedField::NormalCovector => ExtendedTensor::Covector(f.nu),
        })
    }
}

/// Smooth step `chi`: 1 on `s <= 1`, 0 on `s >= 2`, C^2 in between with
/// `chi' >= -2` and `|chi''| <= 32/7`. Returns `(chi, chi', chi'')`.
pub fn cutoff_profile(s: f64) -> (f64, f64, f64) {
    if s <= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    if s >= 2.0 {
        return (0.0, 0.0, 0.0);
    }
    // F rises from 0 to 1 on u in [0, 1]; F'' is a trapezoid on [0, 1/2]
    // (ramp width DELTA) mirrored with opposite sign on [1/2, 1].
    const DELTA: f64 = 1.0 / 16.0;
    const AMP: f64 = 32.0 / 7.0; // 1 / (1/4 - DELTA/2)
    let half = |u: f64| -> (f64, f64, f64) {
        if u <= DELTA {
            (AMP * u * u * u / (6.0 * DELTA), AMP * u * u / (2.0 * DELTA), AMP * u / DELTA)
        } else if u <= 0.5 - DELTA {
            (AMP * (u * u / 2.0 - DELTA * u / 2.0 + DELTA * DELTA / 6.0), AMP * (u - DELTA / 2.0), AMP)
        } else {
            let v = 0.5 - u;
            (0.5 - (2.0 * v - AMP * v * v * v / (6.0 * DELTA)), 2.0 - AMP * v * v / (2.0 * DELTA), AMP * v / DELTA)
        }
    };
    let u = s - 1.0;
    let (f, df, ddf) = if u <= 0.5 {
        half(u)
    } else {
        let (f, df, ddf) = half(1.0 - u);
        (1.0 - f, df, -ddf)
    };
    (1.0 - f, -df, -ddf)
}

/// Truncation `chi_K(d) = chi(|d| / (K^-1 / 4))`.
pub fn cutoff_chi(d: f64, k: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::NonpositiveK(k));
    }
    Ok(cutoff_profile(4.0 * k * d.abs()).0)
}
