use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TriMesh;
use crate::barrier::BarrierSurface;
use crate::error::{Error, Result};

/// Canonical initial surfaces. `segments` is the number of edge
/// subdivisions per octant of the underlying half-octahedron, giving
/// `2 n^2 + 2 n + 1` vertices.
#[derive(Debug, Clone, PartialEq)]
pub enum CapSpec {
    /// Hemisphere of `radius` standing on the plane `z = 0`.
    HemispherePlane { radius: f64, segments: usize },
    /// Sphere cap of `radius` meeting the unit sphere orthogonally.
    CapSphere { radius: f64, segments: usize },
    /// Geodesic-normal cap over a disk of `radius` on a cylinder.
    CapCylinder { radius: f64, cylinder_radius: f64, segments: usize },
    /// Hemisphere with radius modulated by a seeded even polynomial.
    PerturbedHemisphere { radius: f64, amplitude: f64, seed: u64, segments: usize },
    /// Flat disk in the plane `z = 0`.
    FlatDisk { radius: f64, segments: usize },
}

impl CapSpec {
    pub fn segments(&self) -> usize {
        match *self {
            CapSpec::HemispherePlane { segments, .. }
            | CapSpec::CapSphere { segments, .. }
            | CapSpec::CapCylinder { segments, .. }
            | CapSpec::PerturbedHemisphere { segments, .. }
            | CapSpec::FlatDisk { segments, .. } => segments,
        }
    }

    /// The barrier on which the cap's boundary lies.
    pub fn barrier(&self) -> Result<BarrierSurface> {
        match *self {
            CapSpec::HemispherePlane { .. } | CapSpec::PerturbedHemisphere { .. } | CapSpec::FlatDisk { .. } => {
                BarrierSurface::plane(Vector3::z(), 0.0)?.with_orientation(-1.0)
            }
            CapSpec::CapSphere { .. } => BarrierSurface::sphere(1.0, Vector3::zeros()),
            CapSpec::CapCylinder { cylinder_radius, .. } => BarrierSurface::cylinder(cylinder_radius, Vector3::z(), Vector3::zeros()),
        }
    }
}

/// Builds the mesh described by `spec`.
pub fn make_cap(spec: &CapSpec) -> Result<TriMesh> {
    let n = spec.segments();
    if n == 0 {
        return Err(Error::InvalidParams("segments must be positive".into()));
    }
    let (unit, faces) = half_octahedron(n);
    let positive = |name: &str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("{name} must be positive, got {v}")))
        }
    };
    let positions: Vec<Vector3<f64>> = match *spec {
        CapSpec::HemispherePlane { radius, .. } => {
            positive("radius", radius)?;
            unit.iter().map(|p| p * radius).collect()
        }
        CapSpec::CapSphere { radius, .. } => {
            positive("radius", radius)?;
            let d = (1.0 + radius * radius).sqrt();
            let alpha0 = (radius / d).acos();
            let center = Vector3::new(0.0, 0.0, d);
            unit.iter()
                .map(|p| {
                    let (theta, az) = polar(p);
                    let a = theta * alpha0 / FRAC_PI_2;
                    let w = Vector3::new(a.sin() * az.cos(), a.sin() * az.sin(), -a.cos());
                    center + radius * w
                })
                .collect()
        }
        CapSpec::CapCylinder { radius, cylinder_radius, .. } => {
            positive("radius", radius)?;
            positive("cylinder_radius", cylinder_radius)?;
            if radius >= cylinder_radius {
                return Err(Error::InvalidParams("cap radius must be below the cylinder radius".into()));
            }
            unit.iter()
                .map(|p| {
                    let (s, z, h) = (radius * p.x, radius * p.y, radius * p.z);
                    let ang = s / cylinder_radius;
                    let normal = Vector3::new(ang.cos(), ang.sin(), 0.0);
                    cylinder_radius * normal + Vector3::new(0.0, 0.0, z) - h * normal
                })
                .collect()
        }
        CapSpec::PerturbedHemisphere { radius, amplitude, seed, .. } => {
            positive("radius", radius)?;
            if !(0.0..1.0).contains(&amplitude) {
                return Err(Error::InvalidParams(format!("amplitude must lie in [0, 1), got {amplitude}")));
            }
            let f = EvenPolynomial::random(seed);
            let scale = unit.iter().map(|p| f.eval(p).abs()).fold(0.0, f64::max);
            let scale = if scale > 0.0 { 1.0 / scale } else { 0.0 };
            unit.iter().map(|p| p * radius * (1.0 + amplitude * scale * f.eval(p))).collect()
        }
        CapSpec::FlatDisk { radius, .. } => {
            positive("radius", radius)?;
            unit.iter()
                .map(|p| {
                    let (theta, az) = polar(p);
                    let rho = radius * theta / FRAC_PI_2;
                    Vector3::new(rho * az.cos(), rho * az.sin(), 0.0)
                })
                .collect()
        }
    };
    let mut faces = faces;
    let center = match *spec {
        CapSpec::CapSphere { radius, .. } => Some(Vector3::new(0.0, 0.0, (1.0 + radius * radius).sqrt())),
        CapSpec::CapCylinder { cylinder_radius, .. } => Some(Vector3::new(cylinder_radius, 0.0, 0.0)),
        CapSpec::FlatDisk { .. } => None,
        _ => Some(Vector3::zeros()),
    };
    if let Some(c) = center {
        orient_away_from(&positions, &mut faces, &c);
    }
    TriMesh::new(positions, faces)
}

/// Subdivided icosahedron projected to the sphere of `radius` about the origin.
pub fn icosphere(level: usize, radius: f64) -> Result<TriMesh> {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut positions: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|c| Vector3::from(*c).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, positions: &mut Vec<Vector3<f64>>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                positions.push((positions[a] + positions[b]).normalize());
                positions.len() - 1
            })
        };
        let mut next = Vec::with_capacity(4 * faces.len());
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut positions);
            let bc = midpoint(b, c, &mut positions);
            let ca = midpoint(c, a, &mut positions);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    for p in &mut positions {
        *p *= radius;
    }
    TriMesh::new(positions, faces)
}

/// Upper half of the octahedron, each octant split into `n^2` triangles and
/// projected to the unit sphere. Faces are counter-clockwise seen from outside.
fn half_octahedron(n: usize) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let corners = [Vector3::new(1i64, 0, 0), Vector3::new(0, 1, 0), Vector3::new(-1, 0, 0), Vector3::new(0, -1, 0)];
    let top = Vector3::new(0i64, 0, 1);
    let ni = n as i64;
    let mut index: HashMap<[i64; 3], usize> = HashMap::new();
    let mut positions = Vec::new();
    let mut faces = Vec::new();
    for q in 0..4 {
        let (a, b, c) = (corners[q], corners[(q + 1) % 4], top);
        let mut id = |i: i64, j: i64| -> usize {
            let p = a * (ni - i - j) + b * i + c * j;
            *index.entry([p.x, p.y, p.z]).or_insert_with(|| {
                positions.push(Vector3::new(p.x as f64, p.y as f64, p.z as f64).normalize());
                positions.len() - 1
            })
        };
        for j in 0..ni {
            for i in 0..(ni - j) {
                let (v0, v1, v2) = (id(i, j), id(i + 1, j), id(i, j + 1));
                faces.push([v0, v1, v2]);
                if i + j + 2 <= ni {
                    let v3 = id(i + 1, j + 1);
                    faces.push([v1, v3, v2]);
                }
            }
        }
    }
    (positions, faces)
}

fn polar(p: &Vector3<f64>) -> (f64, f64) {
    let theta = p.z.clamp(-1.0, 1.0).acos();
    (theta, p.y.atan2(p.x))
}

/// Reverses every face if the mesh normals mostly point towards `center`.
fn orient_away_from(positions: &[Vector3<f64>], faces: &mut [[usize; 3]], center: &Vector3<f64>) {
    let score: f64 = faces
        .iter()
        .map(|&[a, b, c]| {
            let n = (positions[b] - positions[a]).cross(&(positions[c] - positions[a]));
            let centroid = (positions[a] + positions[b] + positions[c]) / 3.0;
            n.dot(&(centroid - center))
        })
        .sum();
    if score < 0.0 {
        for f in faces.iter_mut() {
            f.swap(1, 2);
        }
    }
}

/// Random polynomial of degree at most four in `x, y, z`, even in `z`.
struct EvenPolynomial {
    terms: Vec<([i32; 3], f64)>,
}

impl EvenPolynomial {
    fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut terms = Vec::new();
        for i in 0..=4 {
            for j in 0..=(4 - i) {
                for k in (0..=(4 - i - j)).step_by(2) {
                    if i + j + k > 0 {
                        terms.push(([i, j, k], rng.random_range(-1.0..1.0)));
                    }
                }
            }
        }
        EvenPolynomial { terms }
    }

    fn eval(&self, p: &Vector3<f64>) -> f64 {
        self.terms.iter().map(|([i, j, k], c)| c * p.x.powi(*i) * p.y.powi(*j) * p.z.powi(*k)).sum()
    }
}
