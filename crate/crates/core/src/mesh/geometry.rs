use nalgebra::{DMatrix, DVector, Matrix2, SMatrix, SVector, Vector3};

use super::TriMesh;
use crate::barrier::{tangent_basis, BarrierSurface};
use crate::error::{Error, Result};
use crate::par::{try_map_indices, Execution};

/// Discrete geometry at one vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexGeometry {
    /// Unit normal of the fitted surface.
    pub normal: Vector3<f64>,
    /// Orthonormal tangent basis; at boundary vertices `(N, T)` with `N`
    /// the outward conormal.
    pub tangent: [Vector3<f64>; 2],
    /// Second fundamental form in `tangent`, `A(u, v) = -<D_u v, normal>`.
    pub a: Matrix2<f64>,
    pub h: f64,
    /// Principal curvatures, ascending.
    pub kappa: [f64; 2],
    pub a_norm2: f64,
    pub grad_h: Vector3<f64>,
    /// Barycentric area.
    pub area: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFrame {
    pub vertex: usize,
    pub conormal: Vector3<f64>,
    pub tangent: Vector3<f64>,
    pub normal: Vector3<f64>,
    /// Barrier normal at the vertex.
    pub barrier_normal: Vector3<f64>,
    /// `|<nu_raw, nu_S>|` for the one-sided area-weighted mesh normal.
    pub orthogonality_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGeometry {
    pub vertices: Vec<VertexGeometry>,
    /// Frames at boundary vertices, in vertex order.
    pub frames: Vec<BoundaryFrame>,
}

impl SurfaceGeometry {
    pub fn max_a_norm(&self) -> f64 {
        self.vertices.iter().map(|g| g.a_norm2).fold(0.0, f64::max).sqrt()
    }

    pub fn h_range(&self) -> (f64, f64) {
        self.vertices.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), g| (lo.min(g.h), hi.max(g.h)))
    }

    pub fn frame(&self, vertex: usize) -> Option<&BoundaryFrame> {
        self.frames.binary_search_by_key(&vertex, |f| f.vertex).ok().map(|i| &self.frames[i])
    }
}

/// Least-squares polynomial height function `w(u, v)` over a local frame.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightFit {
    pub degree: usize,
    pub with_constant: bool,
    /// Coefficients of `u^i v^j` in [`HeightFit::monomials`] order.
    pub coeffs: Vec<f64>,
}

impl HeightFit {
    pub fn monomials(degree: usize, with_constant: bool) -> Vec<(i32, i32)> {
        let start = if with_constant { 0 } else { 1 };
        (start..=degree as i32).flat_map(|d| (0..=d).rev().map(move |i| (i, d - i))).collect()
    }

    /// `d^{i+j} w / du^i dv^j` at the origin.
    pub fn derivative(&self, i: i32, j: i32) -> f64 {
        self.derivative_at(i, j, 0.0, 0.0)
    }

    /// `d^{i+j} w / du^i dv^j` at `(u, v)`.
    pub fn derivative_at(&self, i: i32, j: i32, u: f64, v: f64) -> f64 {
        Self::monomials(self.degree, self.with_constant)
            .iter()
            .zip(&self.coeffs)
            .filter(|((a, b), _)| *a >= i && *b >= j)
            .map(|(&(a, b), c)| {
                let fa = factorial(a) / factorial(a - i);
                let fb = factorial(b) / factorial(b - j);
                c * fa * fb * u.powi(a - i) * v.powi(b - j)
            })
            .sum()
    }

    pub fn eval(&self, u: f64, v: f64) -> f64 {
        Self::monomials(self.degree, self.with_constant).iter().zip(&self.coeffs).map(|(&(i, j), c)| c * u.powi(i) * v.powi(j)).sum()
    }
}

fn factorial(n: i32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Fits `w(u, v)` to `points` expressed in the frame `(e1, e2, n)` at `origin`.
/// Returns `None` if the system is rank deficient.
pub fn fit_height_polynomial(
    origin: &Vector3<f64>,
    frame: &[Vector3<f64>; 3],
    points: &[Vector3<f64>],
    degree: usize,
    with_constant: bool,
) -> Option<HeightFit> {
    let monomials = HeightFit::monomials(degree, with_constant);
    if points.len() < monomials.len() {
        return None;
    }
    let scale = points.iter().map(|p| (p - origin).norm()).sum::<f64>() / points.len() as f64;
    if scale <= 0.0 {
        return None;
    }
    let mut m = DMatrix::zeros(points.len(), monomials.len());
    let mut rhs = DVector::zeros(points.len());
    for (r, p) in points.iter().enumerate() {
        let d = (p - origin) / scale;
        let (u, v) = (d.dot(&frame[0]), d.dot(&frame[1]));
        for (c, &(i, j)) in monomials.iter().enumerate() {
            m[(r, c)] = u.powi(i) * v.powi(j);
        }
        rhs[r] = d.dot(&frame[2]);
    }
    let svd = m.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-10 * smax {
        return None;
    }
    let sol = svd.solve(&rhs, 0.0).ok()?;
    let coeffs = monomials.iter().zip(sol.iter()).map(|(&(i, j), c)| c * scale.powi(1 - i - j)).collect();
    Some(HeightFit { degree, with_constant, coeffs })
}

/// Least squares height polynomial through the origin, of degree 4 when
/// `QUARTIC` holds and 2 otherwise. Returns `[w_u, w_v, w_uu / 2, w_uv, w_vv / 2]`.
fn fit_jet<const N: usize, const QUARTIC: bool>(
    origin: &Vector3<f64>,
    frame: &[Vector3<f64>; 3],
    points: &[Vector3<f64>],
) -> Option<[f64; 5]> {
    if points.len() < N + 2 {
        return None;
    }
    let scale = points.iter().map(|p| (p - origin).norm()).sum::<f64>() / points.len() as f64;
    if scale <= 0.0 {
        return None;
    }
    let mut m = SMatrix::<f64, N, N>::zeros();
    let mut rhs = SVector::<f64, N>::zeros();
    for p in points {
        let d = (p - origin) / scale;
        let (u, v, w) = (d.dot(&frame[0]), d.dot(&frame[1]), d.dot(&frame[2]));
        let mut row = SVector::<f64, N>::zeros();
        let (uu, uv, vv) = (u * u, u * v, v * v);
        row[0] = u;
        row[1] = v;
        row[2] = uu;
        row[3] = uv;
        row[4] = vv;
        if QUARTIC {
            row[5] = uu * u;
            row[6] = uu * v;
            row[7] = uv * v;
            row[8] = vv * v;
            row[9] = uu * uu;
            row[10] = uu * uv;
            row[11] = uu * vv;
            row[12] = uv * vv;
            row[13] = vv * vv;
        }
        m.syger(1.0, &row, &row, 1.0);
        rhs.axpy(w, &row, 1.0);
    }
    let diag_max = (0..N).map(|i| m[(i, i)]).fold(0.0, f64::max);
    let chol = m.cholesky()?;
    let l = chol.l_dirty();
    if (0..N).any(|i| l[(i, i)] * l[(i, i)] < 1e-12 * diag_max) {
        return None;
    }
    let s = chol.solve(&rhs);
    Some([s[0], s[1], s[2] / scale, s[3] / scale, s[4] / scale])
}

fn fit_local(origin: &Vector3<f64>, frame: &[Vector3<f64>; 3], rings: &[Vec<Vector3<f64>>; 2]) -> Option<[f64; 5]> {
    fit_jet::<14, true>(origin, frame, &rings[1])
        .or_else(|| fit_jet::<5, false>(origin, frame, &rings[0]))
        .or_else(|| fit_jet::<5, false>(origin, frame, &rings[1]))
}

struct Fitted {
    normal: Vector3<f64>,
    tangent: [Vector3<f64>; 2],
    a: Matrix2<f64>,
}

/// Mirror image of `q` across the barrier.
fn reflect(barrier: &BarrierSurface, q: &Vector3<f64>) -> Vector3<f64> {
    let cp = barrier.closest_point(q);
    2.0 * cp.point - q
}

/// Per-vertex normals, curvatures and boundary frames. With a barrier,
/// boundary vertices use a frame tangent to it and a stencil extended by
/// mirror images across it. The mirror is exact for planar barriers and
/// first order otherwise; one-sided stencils are more accurate on curved
/// barriers but make the flow unstable.
pub fn compute_geometry(mesh: &TriMesh, barrier: Option<&BarrierSurface>, exec: Execution) -> Result<SurfaceGeometry> {
    let topo = mesh.topology();
    let pos = &mesh.positions;
    let nv = mesh.vertex_count();
    let face_areas: Vec<Vector3<f64>> = (0..mesh.faces().len()).map(|f| mesh.face_vector_area(f)).collect();

    let raw_normal = |v: usize| -> Vector3<f64> {
        let s: Vector3<f64> = topo.vertex_faces[v].iter().map(|&f| face_areas[f]).sum();
        let n = s.norm();
        if n > 0.0 {
            s / n
        } else {
            Vector3::z()
        }
    };

    let boundary_basis = |v: usize, n: &Vector3<f64>, barrier_normal: Option<Vector3<f64>>| -> [Vector3<f64>; 2] {
        let (prev, next) = topo.loop_links[v].expect("boundary vertex has loop links");
        let dir = pos[next] - pos[prev];
        let t = match barrier_normal.map(|ns| ns.cross(n)).filter(|t| t.norm() > 1e-8) {
            Some(t) => t * t.dot(&dir).signum(),
            None => dir - n * n.dot(&dir),
        };
        let t = if t.norm() > 0.0 { t.normalize() } else { tangent_basis(n)[0] };
        let mut conormal = t.cross(n);
        let centroid: Vector3<f64> = topo.neighbors[v].iter().map(|&q| pos[q]).sum::<Vector3<f64>>() / topo.neighbors[v].len() as f64;
        if conormal.dot(&(pos[v] - centroid)) < 0.0 {
            conormal = -conormal;
        }
        [conormal, t]
    };

    let fit_vertex = |v: usize| -> Result<Fitted> {
        let p = pos[v];
        let on_boundary = topo.boundary[v];
        let barrier_normal = match (on_boundary, barrier) {
            (true, Some(b)) => Some(b.normal_at(&p)?),
            _ => None,
        };
        let constrain = |n: Vector3<f64>| -> Vector3<f64> {
            match barrier_normal {
                Some(ns) => {
                    let t = n - ns * ns.dot(&n);
                    if t.norm() > 1e-8 {
                        t.normalize()
                    } else {
                        n
                    }
                }
                None => n,
            }
        };
        let stencil = |ring: &[usize]| -> Vec<Vector3<f64>> {
            let mut pts: Vec<Vector3<f64>> = ring.iter().map(|&q| pos[q]).collect();
            if let (true, Some(b)) = (on_boundary, barrier) {
                pts.extend(ring.iter().filter(|&&q| !topo.boundary[q]).map(|&q| reflect(b, &pos[q])));
            }
            pts
        };
        let rings = [stencil(&topo.ring2[v]), stencil(&topo.ring3[v])];

        let normal = constrain(raw_normal(v));
        let tangent = if on_boundary { boundary_basis(v, &normal, barrier_normal) } else { tangent_basis(&normal) };
        let frame = [tangent[0], tangent[1], normal];
        let [d, e, a, b, c] = fit_local(&p, &frame, &rings).ok_or(Error::QuadricFitSingular(v))?;
        // Graph of w over the frame: coordinate tangents t_i + w_i n, metric
        // g = I + grad w grad w^T, second form -Hess w / sqrt(det g).
        let g = Matrix2::new(1.0 + d * d, d * e, d * e, 1.0 + e * e);
        let second = -Matrix2::new(2.0 * a, b, b, 2.0 * c) / g.determinant().sqrt();
        let l = g.cholesky().ok_or(Error::QuadricFitSingular(v))?;
        let l_inv = l.l().try_inverse().ok_or(Error::QuadricFitSingular(v))?;
        let coord = [tangent[0] + normal * d, tangent[1] + normal * e];
        let orth = [coord[0] * l_inv[(0, 0)] + coord[1] * l_inv[(0, 1)], coord[0] * l_inv[(1, 0)] + coord[1] * l_inv[(1, 1)]];
        let fitted_normal = (normal - d * tangent[0] - e * tangent[1]).normalize();
        let mut fitted = Fitted { normal: fitted_normal, tangent: orth, a: l_inv * second * l_inv.transpose() };
        // Re-express in an orthonormal basis of the fitted tangent plane.
        let n = constrain(fitted.normal);
        let tangent = if on_boundary { boundary_basis(v, &n, barrier_normal) } else { tangent_basis(&n) };
        if n != fitted.normal || tangent != fitted.tangent {
            let proj = |t: &Vector3<f64>| [t.dot(&fitted.tangent[0]), t.dot(&fitted.tangent[1])];
            let (t0, t1) = (proj(&tangent[0]), proj(&tangent[1]));
            let r = Matrix2::new(t0[0], t0[1], t1[0], t1[1]);
            fitted.a = r * fitted.a * r.transpose();
        }
        fitted.normal = n;
        fitted.tangent = tangent;
        fitted.a = 0.5 * (fitted.a + fitted.a.transpose());
        Ok(fitted)
    };

    if let Some(b) = barrier {
        for v in mesh.boundary_vertices() {
            let phi = b.phi(&pos[v]);
            if phi.abs() > 1e-6 {
                return Err(Error::BoundaryOffSurface { vertex: v, phi });
            }
        }
    }
    let fitted = try_map_indices(exec, nv, fit_vertex)?;
    let h: Vec<f64> = fitted.iter().map(|f| f.a.trace()).collect();

    let vertices = try_map_indices(exec, nv, |v| -> Result<VertexGeometry> {
        let f = &fitted[v];
        let mut m = Matrix2::zeros();
        let mut rhs = nalgebra::Vector2::zeros();
        for &q in &topo.neighbors[v] {
            let d = pos[q] - pos[v];
            let x = nalgebra::Vector2::new(d.dot(&f.tangent[0]), d.dot(&f.tangent[1]));
            m += x * x.transpose();
            rhs += x * (h[q] - h[v]);
        }
        let g = m.try_inverse().map(|inv| inv * rhs).unwrap_or_else(nalgebra::Vector2::zeros);
        let grad_h = f.tangent[0] * g[0] + f.tangent[1] * g[1];
        let (k0, k1) = symmetric_eigenvalues(&f.a);
        let area = topo.vertex_faces[v].iter().map(|&fi| face_areas[fi].norm()).sum::<f64>() / 3.0;
        Ok(VertexGeometry {
            normal: f.normal,
            tangent: f.tangent,
            a: f.a,
            h: h[v],
            kappa: [k0, k1],
            a_norm2: (f.a * f.a).trace(),
            grad_h,
            area,
        })
    })?;

    let mut frames = Vec::new();
    if let Some(b) = barrier {
        for v in mesh.boundary_vertices() {
            let g = &vertices[v];
            let barrier_normal = b.normal_at(&pos[v])?;
            frames.push(BoundaryFrame {
                vertex: v,
                conormal: g.tangent[0],
                tangent: g.tangent[1],
                normal: g.normal,
                barrier_normal,
                orthogonality_residual: raw_normal(v).dot(&barrier_normal).abs(),
            });
        }
    }
    Ok(SurfaceGeometry { vertices, frames })
}

/// Eigenvalues of a symmetric 2x2 matrix, ascending.
pub(crate) fn symmetric_eigenvalues(a: &Matrix2<f64>) -> (f64, f64) {
    let m = 0.5 * (a[(0, 0)] + a[(1, 1)]);
    let d = (0.25 * (a[(0, 0)] - a[(1, 1)]).powi(2) + a[(0, 1)] * a[(1, 0)]).max(0.0).sqrt();
    (m - d, m + d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{icosphere, make_cap, CapSpec};

    fn max_h_error(g: &SurfaceGeometry, exact: f64) -> f64 {
        g.vertices.iter().map(|v| (v.h - exact).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn sphere_curvature_converges() {
        let r = 2.0;
        let errs: Vec<f64> = (3..5)
            .map(|level| {
                let m = icosphere(level, r).unwrap();
                let g = compute_geometry(&m, None, Execution::Sequential).unwrap();
                for (v, vg) in g.vertices.iter().enumerate() {
                    assert!((vg.normal - m.positions[v] / r).norm() < 1e-3);
                    assert!(vg.kappa[1] - vg.kappa[0] < 1e-2);
                }
                max_h_error(&g, 2.0 / r)
            })
            .collect();
        assert!(errs[0] < 5e-3, "{errs:?}");
        assert!(errs[0] / errs[1] > 8.0, "{errs:?}");
    }

    #[test]
    fn hemisphere_boundary_uses_barrier() {
        let spec = CapSpec::HemispherePlane { radius: 1.0, segments: 24 };
        let m = make_cap(&spec).unwrap();
        let b = spec.barrier().unwrap();
        let g = compute_geometry(&m, Some(&b), Execution::Sequential).unwrap();
        assert_eq!(g.frames.len(), 96);
        assert!(max_h_error(&g, 2.0) < 2e-3);
        for f in &g.frames {
            assert!(f.normal.dot(&f.barrier_normal).abs() < 1e-12);
            assert!((f.conormal + Vector3::z()).norm() < 1e-12);
            assert!(f.orthogonality_residual < m.max_edge_length());
            assert!(g.vertices[f.vertex].grad_h.norm() < 1e-2);
        }
    }

    #[test]
    fn curved_barrier_boundary_converges() {
        let errs: Vec<f64> = [16, 32]
            .iter()
            .map(|&n| {
                let spec = CapSpec::CapSphere { radius: 0.5, segments: n };
                let m = make_cap(&spec).unwrap();
                let g = compute_geometry(&m, Some(&spec.barrier().unwrap()), Execution::Sequential).unwrap();
                for f in &g.frames {
                    assert!((f.conormal - f.barrier_normal).norm() < 1e-12);
                }
                max_h_error(&g, 4.0)
            })
            .collect();
        assert!(errs[1] < 5e-2, "{errs:?}");
        assert!(errs[0] / errs[1] > 1.7, "{errs:?}");
    }

    #[test]
    fn boundary_off_barrier_is_reported() {
        let spec = CapSpec::HemispherePlane { radius: 1.0, segments: 4 };
        let m = make_cap(&spec).unwrap();
        let v = m.boundary_vertices().next().unwrap();
        let mut pos = m.positions.clone();
        pos[v].z += 1e-3;
        let moved = m.with_positions(pos);
        let r = compute_geometry(&moved, Some(&spec.barrier().unwrap()), Execution::Sequential);
        assert!(matches!(r, Err(Error::BoundaryOffSurface { vertex, .. }) if vertex == v));
    }

    #[test]
    fn flat_disk_is_flat() {
        let m = make_cap(&CapSpec::FlatDisk { radius: 1.0, segments: 6 }).unwrap();
        let g = compute_geometry(&m, None, Execution::Sequential).unwrap();
        for vg in &g.vertices {
            assert!(vg.a_norm2 < 1e-20);
            assert!((vg.normal.z.abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn policies_agree() {
        let m = make_cap(&CapSpec::CapSphere { radius: 0.5, segments: 8 }).unwrap();
        let b = BarrierSurface::sphere(1.0, Vector3::zeros()).unwrap();
        let a = compute_geometry(&m, Some(&b), Execution::Sequential).unwrap();
        let c = compute_geometry(&m, Some(&b), Execution::Parallel).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn height_fit_recovers_polynomial() {
        let w = |u: f64, v: f64| 0.3 * u * u - 0.2 * u * v + 0.1 * v * v * v + 0.05 * u * u * u * u;
        let mut pts = Vec::new();
        for i in -3..=3 {
            for j in -3..=3 {
                let (u, v) = (0.1 * i as f64, 0.1 * j as f64);
                pts.push(Vector3::new(u, v, w(u, v)));
            }
        }
        let frame = [Vector3::x(), Vector3::y(), Vector3::z()];
        let fit = fit_height_polynomial(&Vector3::zeros(), &frame, &pts, 4, true).unwrap();
        assert!((fit.derivative(2, 0) - 0.6).abs() < 1e-9);
        assert!((fit.derivative(1, 1) + 0.2).abs() < 1e-9);
        assert!((fit.derivative(0, 3) - 0.6).abs() < 1e-9);
        assert!((fit.derivative(4, 0) - 1.2).abs() < 1e-8);
        let (u, v) = (0.05, -0.1);
        let w_uv_exact = -0.2;
        let w_vv_exact = 0.6 * v;
        let w_uu_exact = 0.6 + 0.6 * u * u;
        assert!((fit.derivative_at(1, 1, u, v) - w_uv_exact).abs() < 1e-8);
        assert!((fit.derivative_at(0, 2, u, v) - w_vv_exact).abs() < 1e-8);
        assert!((fit.derivative_at(2, 0, u, v) - w_uu_exact).abs() < 1e-8);
        assert!((fit.derivative_at(0, 0, u, v) - w(u, v)).abs() < 1e-10);
        assert!(fit_height_polynomial(&Vector3::zeros(), &frame, &pts[..5], 4, true).is_none());
    }
}
