//! The perturbation tensor `P`, its restriction `P^Sigma` to the evolving
//! surface and the perturbed second fundamental form `A~ = A + P^Sigma`.

use nalgebra::{Matrix2, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::barrier::{BarrierSurface, ExtendedFields};
use crate::error::Result;
use crate::mesh::{SurfaceGeometry, TriMesh};
use crate::par::{try_map_indices, Execution};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbedSff {
    pub p_sigma: Matrix2<f64>,
    pub a_tilde: Matrix2<f64>,
    pub h_tilde: f64,
    pub a_tilde_norm2: f64,
}

impl PerturbedSff {
    fn from_parts(a: &Matrix2<f64>, p_sigma: Matrix2<f64>) -> Self {
        let a_tilde = a + p_sigma;
        PerturbedSff { p_sigma, a_tilde, h_tilde: a_tilde.trace(), a_tilde_norm2: (a_tilde * a_tilde).trace() }
    }
}

fn bilinear(m: &Matrix3<f64>, u: &Vector3<f64>, v: &Vector3<f64>) -> f64 {
    u.dot(&(m * v))
}

/// `P(U, V, X, Y, Z)` from already extended fields.
pub fn eval_p_fields(f: &ExtendedFields, u: &Vector3<f64>, v: &Vector3<f64>, x: &Vector3<f64>, y: &Vector3<f64>, z: &Vector3<f64>) -> f64 {
    if f.is_zero() {
        return 0.0;
    }
    let (nu_u, nu_v) = (f.nu.dot(u), f.nu.dot(v));
    let first = (bilinear(&f.a, u, x) * nu_v + bilinear(&f.a, v, x) * nu_u) * bilinear(&f.g, y, z);
    let second = (bilinear(&f.g, u, x) * nu_v + bilinear(&f.g, v, x) * nu_u) * bilinear(&f.a, y, z);
    first - second
}

/// `P(U, V, X, Y, Z)` at the ambient point `x_amb`.
#[allow(clippy::too_many_arguments)]
pub fn eval_p(
    barrier: &BarrierSurface,
    k: f64,
    x_amb: &Vector3<f64>,
    u: &Vector3<f64>,
    v: &Vector3<f64>,
    x: &Vector3<f64>,
    y: &Vector3<f64>,
    z: &Vector3<f64>,
) -> Result<f64> {
    let f = barrier.extend_all(x_amb, k)?;
    Ok(eval_p_fields(&f, u, v, x, y, z))
}

/// `P^Sigma(e_i, e_j) = P(e_i, e_j, nu, nu, nu)` in the given tangent basis.
pub fn eval_p_sigma(
    barrier: &BarrierSurface,
    k: f64,
    position: &Vector3<f64>,
    normal: &Vector3<f64>,
    tangent: &[Vector3<f64>; 2],
) -> Result<Matrix2<f64>> {
    let f = barrier.extend_all(position, k)?;
    let mut p = Matrix2::zeros();
    if f.is_zero() {
        return Ok(p);
    }
    for i in 0..2 {
        for j in i..2 {
            let value = eval_p_fields(&f, &tangent[i], &tangent[j], normal, normal, normal);
            p[(i, j)] = value;
            p[(j, i)] = value;
        }
    }
    Ok(p)
}

/// `A~` at every vertex, in the frame of the vertex geometry. Umbilic
/// barriers have `P = 0` identically, so `A~ = A` is returned exactly.
pub fn perturbed_sff(
    mesh: &TriMesh,
    geometry: &SurfaceGeometry,
    barrier: &BarrierSurface,
    k: f64,
    exec: Execution,
) -> Result<Vec<PerturbedSff>> {
    if barrier.is_umbilic() {
        return Ok(geometry.vertices.iter().map(|g| PerturbedSff::from_parts(&g.a, Matrix2::zeros())).collect());
    }
    try_map_indices(exec, mesh.vertex_count(), |v| {
        let g = &geometry.vertices[v];
        let p = eval_p_sigma(barrier, k, &mesh.positions[v], &g.normal, &g.tangent)?;
        Ok(PerturbedSff::from_parts(&g.a, p))
    })
}

/// Maximum residuals of the boundary decomposition `P^Sigma_11 = P^Sigma_22 = 0`,
/// `P^Sigma_12 = -h_12` in the boundary frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoundaryDecomposition {
    pub p11: f64,
    pub p22: f64,
    pub p12_plus_h12: f64,
    pub h12_tilde: f64,
}

pub fn boundary_decomposition(geometry: &SurfaceGeometry, perturbed: &[PerturbedSff]) -> BoundaryDecomposition {
    let mut r = BoundaryDecomposition::default();
    for f in &geometry.frames {
        let p = &perturbed[f.vertex];
        let a = &geometry.vertices[f.vertex].a;
        r.p11 = r.p11.max(p.p_sigma[(0, 0)].abs());
        r.p22 = r.p22.max(p.p_sigma[(1, 1)].abs());
        r.p12_plus_h12 = r.p12_plus_h12.max((p.p_sigma[(0, 1)] + a[(0, 1)]).abs());
        r.h12_tilde = r.h12_tilde.max(p.a_tilde[(0, 1)].abs());
    }
    r
}

/// Maximum residuals of the five vanishing identities of `P` on `S`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IdentityReport {
    pub points: usize,
    /// `X`, `Y` or `Z` normal to `S`.
    pub normal_slot: f64,
    /// `U`, `V` tangent to `S`.
    pub tangent_pair: f64,
    /// `P(U, V, V, V, V)` with `V` tangent.
    pub repeated_tangent: f64,
    /// `P(nu_S, nu_S, ., ., .)`.
    pub normal_pair: f64,
    /// Centered difference of `P` along `nu_S`.
    pub normal_derivative: f64,
}

impl IdentityReport {
    pub fn algebraic_max(&self) -> f64 {
        self.normal_slot.max(self.tangent_pair).max(self.repeated_tangent).max(self.normal_pair)
    }
}

/// Checks the identities at `n_points` seeded points of `S` with random
/// vector arguments.
pub fn identity_suite(barrier: &BarrierSurface, k: f64, n_points: usize, seed: u64) -> Result<IdentityReport> {
    let points = barrier.sample_points(n_points.max(1), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9));
    let mut random_vec = || Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let mut report = IdentityReport { points: points.len(), ..Default::default() };
    let step = 1e-3 / k;
    for p in &points {
        let f = barrier.extend_all(p, k)?;
        let nu = barrier.normal_at(p)?;
        let tangent = |w: Vector3<f64>| w - nu * nu.dot(&w);
        let args: Vec<Vector3<f64>> = (0..5).map(|_| random_vec()).collect();
        let [u, v, x, y, z] = [args[0], args[1], args[2], args[3], args[4]];
        let pf =
            |a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>, d: &Vector3<f64>, e: &Vector3<f64>| eval_p_fields(&f, a, b, c, d, e);

        let normal_slot =
            [pf(&u, &v, &nu, &y, &z), pf(&u, &v, &x, &nu, &z), pf(&u, &v, &x, &y, &nu)].iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let (tu, tv) = (tangent(u), tangent(v));
        let tangent_pair = pf(&tu, &tv, &x, &y, &z).abs();
        let repeated_tangent = pf(&u, &tv, &tv, &tv, &tv).abs();
        let normal_pair = pf(&nu, &nu, &x, &y, &z).abs();
        let plus = eval_p(barrier, k, &(p + nu * step), &u, &v, &x, &y, &z)?;
        let minus = eval_p(barrier, k, &(p - nu * step), &u, &v, &x, &y, &z)?;
        let normal_derivative = ((plus - minus) / (2.0 * step)).abs();

        report.normal_slot = report.normal_slot.max(normal_slot);
        report.tangent_pair = report.tangent_pair.max(tangent_pair);
        report.repeated_tangent = report.repeated_tangent.max(repeated_tangent);
        report.normal_pair = report.normal_pair.max(normal_pair);
        report.normal_derivative = report.normal_derivative.max(normal_derivative);
    }
    Ok(report)
}

/// Largest `|P|` over `n` evaluations at random points of the support of
/// `chi_K` around `S`, with random arguments of unit scale.
pub fn random_p_max(barrier: &BarrierSurface, k: f64, n: usize, seed: u64) -> Result<f64> {
    let points = barrier.sample_points(n.max(1), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
    let mut worst: f64 = 0.0;
    for p in &points {
        let nu = barrier.normal_at(p)?;
        let offset = rng.random_range(-0.45..0.45) / k;
        let width = barrier.tubular_width();
        let x_amb = p + nu * offset.clamp(-0.9 * width, 0.9 * width);
        let mut arg = || Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let (u, v, x, y, z) = (arg(), arg(), arg(), arg(), arg());
        worst = worst.max(eval_p(barrier, k, &x_amb, &u, &v, &x, &y, &z)?.abs());
    }
    Ok(worst)
}
