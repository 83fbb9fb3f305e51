use super::TriMesh;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshQuality {
    /// Smallest interior angle over all faces, in degrees.
    pub min_angle: f64,
    /// Largest ratio of longest to shortest edge within a face.
    pub max_edge_ratio: f64,
    pub min_area: f64,
}

pub fn mesh_quality(mesh: &TriMesh) -> MeshQuality {
    let mut q = MeshQuality { min_angle: 180.0, max_edge_ratio: 1.0, min_area: f64::INFINITY };
    for (f, face) in mesh.faces().iter().enumerate() {
        let p = face.map(|v| mesh.positions[v]);
        let mut lengths = [0.0; 3];
        for k in 0..3 {
            let (a, b, c) = (p[k], p[(k + 1) % 3], p[(k + 2) % 3]);
            let (u, v) = (b - a, c - a);
            let angle = u.angle(&v).to_degrees();
            q.min_angle = q.min_angle.min(if angle.is_nan() { 0.0 } else { angle });
            lengths[k] = u.norm();
        }
        let longest = lengths.iter().cloned().fold(0.0, f64::max);
        let shortest = lengths.iter().cloned().fold(f64::INFINITY, f64::min);
        q.max_edge_ratio = q.max_edge_ratio.max(if shortest > 0.0 { longest / shortest } else { f64::INFINITY });
        q.min_area = q.min_area.min(mesh.face_vector_area(f).norm());
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn equilateral_triangle() {
        let s = 3f64.sqrt() / 2.0;
        let m = TriMesh::new(vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.5, s, 0.0)], vec![[0, 1, 2]]).unwrap();
        let q = mesh_quality(&m);
        assert!((q.min_angle - 60.0).abs() < 1e-10);
        assert!((q.max_edge_ratio - 1.0).abs() < 1e-12);
        assert!((q.min_area - s / 2.0).abs() < 1e-12);
    }

    #[test]
    fn right_isoceles_triangle() {
        let m = TriMesh::new(vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0)], vec![[0, 1, 2]]).unwrap();
        let q = mesh_quality(&m);
        assert!((q.min_angle - 45.0).abs() < 1e-10);
        assert!((q.max_edge_ratio - 2f64.sqrt()).abs() < 1e-12);
    }
}
