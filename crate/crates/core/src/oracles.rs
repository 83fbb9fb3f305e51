//! Closed-form references and the canonical experiment setups.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;

use crate::barrier::BarrierSurface;
use crate::diagnostics::DiagnosticsConfig;
use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::mesh::{make_cap, CapSpec, TriMesh};

/// Hemisphere of initial radius `r0` shrinking on a plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HemisphereSolution {
    pub r0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HemisphereState {
    pub r: f64,
    pub h: f64,
    pub area: f64,
    pub remaining_time: f64,
}

impl HemisphereSolution {
    pub fn new(r0: f64) -> Result<Self> {
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(Error::InvalidParams(format!("r0 must be positive, got {r0}")));
        }
        Ok(HemisphereSolution { r0 })
    }

    pub fn singular_time(&self) -> f64 {
        0.25 * self.r0 * self.r0
    }

    pub fn at(&self, t: f64) -> Result<HemisphereState> {
        let singular = self.singular_time();
        if !(t >= 0.0 && t < singular) {
            return Err(Error::PastSingularTime { t, singular });
        }
        let r = (self.r0 * self.r0 - 4.0 * t).sqrt();
        Ok(HemisphereState { r, h: 2.0 / r, area: 2.0 * std::f64::consts::PI * r * r, remaining_time: singular - t })
    }
}

pub fn hemisphere_exact(r0: f64, t: f64) -> Result<HemisphereState> {
    HemisphereSolution::new(r0)?.at(t)
}

/// Integrates `dr/dt = -2 / r` from `r0` to `t` with `steps` classical
/// Runge-Kutta steps.
pub fn integrate_radius(r0: f64, t: f64, steps: usize) -> f64 {
    let f = |r: f64| -2.0 / r;
    let h = t / steps as f64;
    let mut r = r0;
    for _ in 0..steps {
        let k1 = f(r);
        let k2 = f(r + 0.5 * h * k1);
        let k3 = f(r + 0.5 * h * k2);
        let k4 = f(r + h * k3);
        r += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseName {
    HemiPlane,
    HemiPlanePerturbed,
    CapSphere,
    CapCylinder,
}

impl CaseName {
    pub const ALL: [CaseName; 4] = [CaseName::HemiPlane, CaseName::HemiPlanePerturbed, CaseName::CapSphere, CaseName::CapCylinder];

    pub fn key(&self) -> &'static str {
        match self {
            CaseName::HemiPlane => "HEMI_PLANE",
            CaseName::HemiPlanePerturbed => "HEMI_PLANE_PERTURBED",
            CaseName::CapSphere => "CAP_SPHERE",
            CaseName::CapCylinder => "CAP_CYLINDER",
        }
    }

    /// Octant subdivision used when none is requested.
    pub fn default_segments(&self) -> usize {
        match self {
            CaseName::HemiPlane => 36,
            _ => 16,
        }
    }
}

impl fmt::Display for CaseName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for CaseName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CaseName::ALL
            .into_iter()
            .find(|c| c.key().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParams(format!("unknown case '{s}'")))
    }
}

/// A named barrier, initial surface and run configuration.
#[derive(Debug, Clone)]
pub struct CanonicalCase {
    pub name: CaseName,
    pub spec: CapSpec,
    pub barrier: BarrierSurface,
    pub mesh: TriMesh,
    pub flow: FlowConfig,
    pub diagnostics: DiagnosticsConfig,
    /// Centre and radius of the round sphere the initial surface lies on, if any.
    pub reference_sphere: Option<(Vector3<f64>, f64)>,
}

impl CanonicalCase {
    /// Largest `|<nu, nu_S>|` at boundary vertices, with `nu` the normal of
    /// the reference sphere.
    pub fn contact_angle_residual(&self) -> Option<f64> {
        let (c, _) = self.reference_sphere?;
        let mut worst: f64 = 0.0;
        for v in self.mesh.boundary_vertices() {
            let x = self.mesh.positions[v];
            let ns = self.barrier.normal_at(&x).ok()?;
            worst = worst.max((x - c).normalize().dot(&ns).abs());
        }
        Some(worst)
    }
}

/// Case `name` at `segments` octant subdivisions (its default when `None`).
pub fn canonical_case(name: CaseName, segments: Option<usize>, seed: u64) -> Result<CanonicalCase> {
    let n = segments.unwrap_or_else(|| name.default_segments());
    let (spec, reference_sphere) = match name {
        CaseName::HemiPlane => (CapSpec::HemispherePlane { radius: 1.0, segments: n }, Some((Vector3::zeros(), 1.0))),
        CaseName::HemiPlanePerturbed => (CapSpec::PerturbedHemisphere { radius: 1.0, amplitude: 0.05, seed, segments: n }, None),
        CaseName::CapSphere => {
            let r = 0.5;
            (CapSpec::CapSphere { radius: r, segments: n }, Some((Vector3::new(0.0, 0.0, (1.0f64 + r * r).sqrt()), r)))
        }
        CaseName::CapCylinder => (CapSpec::CapCylinder { radius: 0.2, cylinder_radius: 2.0, segments: n }, None),
    };
    let barrier = spec.barrier()?;
    let mesh = make_cap(&spec)?;
    let flow = FlowConfig { seed, ..FlowConfig::default() };
    Ok(CanonicalCase { name, spec, barrier, mesh, flow, diagnostics: DiagnosticsConfig::default(), reference_sphere })
}

/// All canonical cases at their default resolution.
pub fn canonical_cases() -> Vec<CanonicalCase> {
    CaseName::ALL.into_iter().map(|c| canonical_case(c, None, 0).expect("built-in case parameters are valid")).collect()
}
