use rayon::prelude::*;

use super::{jacobian_from, ReferenceMesh};
use crate::quadrature::TriangleRule;
use crate::{Mat2, Vec2};

/// Outcome of the discrete bijectivity check.
#[derive(Debug, Clone, PartialEq)]
pub struct BijectivityReport {
    pub passed: bool,
    pub min_det: f64,
    /// Elements with a non-positive Jacobian determinant at some sample, ascending.
    pub offending: Vec<usize>,
}

/// Basis gradients at the sample set used by the bijectivity check: a Gauss
/// rule of order 2p plus all Lagrange nodes.
#[derive(Debug, Clone)]
pub struct BijectivityProbe {
    grads: Vec<Vec<[f64; 2]>>,
}

impl BijectivityProbe {
    pub fn new(mesh: &ReferenceMesh) -> Self {
        let b = mesh.basis();
        let rule = TriangleRule::with_degree(2 * b.degree());
        let mut pts: Vec<Vec2> = rule.points.iter().map(|p| Vec2::new(p[0], p[1])).collect();
        pts.extend((0..b.n_nodes()).map(|k| b.node(k)));
        BijectivityProbe {
            grads: pts.iter().map(|x| b.grad(x)).collect(),
        }
    }

    pub fn min_det_of(&self, mesh: &ReferenceMesh, nodes: &[Vec2], k: usize) -> f64 {
        let conn = &mesh.elements()[k];
        self.grads
            .iter()
            .map(|g| jacobian_from(conn, nodes, g).determinant())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn check(&self, mesh: &ReferenceMesh, nodes: &[Vec2]) -> BijectivityReport {
        let dets: Vec<f64> = (0..mesh.n_elements())
            .into_par_iter()
            .map(|k| self.min_det_of(mesh, nodes, k))
            .collect();
        let offending: Vec<usize> = dets
            .iter()
            .enumerate()
            .filter(|(_, d)| !(**d > 0.0))
            .map(|(k, _)| k)
            .collect();
        let min_det =
            dets.iter().copied().fold(
                f64::INFINITY,
                |a, b| if b < a || b.is_nan() { b } else { a },
            );
        BijectivityReport {
            passed: offending.is_empty(),
            min_det,
            offending,
        }
    }

    /// Cheap early-exit variant used inside line searches.
    pub fn passes(&self, mesh: &ReferenceMesh, nodes: &[Vec2]) -> bool {
        (0..mesh.n_elements()).all(|k| self.min_det_of(mesh, nodes, k) > 0.0)
    }
}

/// Checks that every mapped elemental map Ψ_{k,Φ}^hf has a positive Jacobian.
pub fn discrete_bijectivity_check(mesh: &ReferenceMesh, nodes: &[Vec2]) -> BijectivityReport {
    BijectivityProbe::new(mesh).check(mesh, nodes)
}

/// ½‖A‖_F² / |det A| for A = D_mapped D_orig⁻¹; +∞ when |det A| < 1e−14.
pub fn composite_distortion(d_orig: &Mat2, d_mapped: &Mat2) -> f64 {
    match d_orig.try_inverse() {
        Some(inv) => distortion_of(&(d_mapped * inv)),
        None => f64::INFINITY,
    }
}

pub(crate) fn distortion_of(a: &Mat2) -> f64 {
    let det = a.determinant();
    if !(det.abs() >= 1e-14) {
        return f64::INFINITY;
    }
    0.5 * a.norm_squared() / det.abs()
}

fn vertex_matrix(mesh: &ReferenceMesh, nodes: &[Vec2], k: usize) -> Mat2 {
    let [a, b, c] = mesh.vertices(k);
    Mat2::from_columns(&[nodes[b] - nodes[a], nodes[c] - nodes[a]])
}

/// f_msh,k of the mapped p = 1 sub-map relative to the unmapped one.
pub fn element_distortion(mesh: &ReferenceMesh, mapped: &[Vec2], k: usize) -> f64 {
    composite_distortion(
        &vertex_matrix(mesh, mesh.nodes(), k),
        &vertex_matrix(mesh, mapped, k),
    )
}

/// 2 r_in / R_circ of a triangle (1 for equilateral, 0 when degenerate).
pub fn radius_ratio(a: &Vec2, b: &Vec2, c: &Vec2) -> f64 {
    let (la, lb, lc) = ((b - c).norm(), (c - a).norm(), (a - b).norm());
    let area = 0.5 * ((b - a).x * (c - a).y - (b - a).y * (c - a).x).abs();
    let den = (la + lb + lc) * la * lb * lc;
    if !(den > 0.0) {
        return 0.0;
    }
    (16.0 * area * area / den).min(1.0)
}

pub fn element_radius_ratio(mesh: &ReferenceMesh, nodes: &[Vec2], k: usize) -> f64 {
    let [a, b, c] = mesh.vertices(k);
    radius_ratio(&nodes[a], &nodes[b], &nodes[c])
}

pub fn min_radius_ratio(mesh: &ReferenceMesh, nodes: &[Vec2]) -> f64 {
    (0..mesh.n_elements())
        .map(|k| element_radius_ratio(mesh, nodes, k))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distortion_examples() {
        let i = Mat2::identity();
        assert!((composite_distortion(&i, &i) - 1.0).abs() < 1e-15);
        assert!((composite_distortion(&i, &Mat2::new(2.0, 0.0, 0.0, 1.0)) - 1.25).abs() < 1e-15);
        for th in [0.3f64, 1.7, -2.4] {
            let r = Mat2::new(th.cos(), -th.sin(), th.sin(), th.cos());
            assert!((composite_distortion(&i, &r) - 1.0).abs() < 1e-14);
        }
        let orig = Mat2::new(1.0, 0.3, 0.2, 2.0);
        assert!((composite_distortion(&orig, &orig) - 1.0).abs() < 1e-14);
        assert!(composite_distortion(&i, &Mat2::new(1.0, 1.0, 1.0, 1.0)).is_infinite());
    }

    #[test]
    fn radius_ratio_examples() {
        let s3 = 3f64.sqrt();
        let eq = radius_ratio(
            &Vec2::new(0.0, 0.0),
            &Vec2::new(1.0, 0.0),
            &Vec2::new(0.5, s3 / 2.0),
        );
        assert!((eq - 1.0).abs() < 1e-14);
        let deg = radius_ratio(
            &Vec2::new(0.0, 0.0),
            &Vec2::new(1.0, 0.0),
            &Vec2::new(2.0, 0.0),
        );
        assert_eq!(deg, 0.0);
        let ri = radius_ratio(
            &Vec2::new(0.0, 0.0),
            &Vec2::new(1.0, 0.0),
            &Vec2::new(0.0, 1.0),
        );
        // classical formulas: r_in = (2 − √2)/2, R = √2/2
        let oracle = 2.0 * ((2.0 - 2f64.sqrt()) / 2.0) / (2f64.sqrt() / 2.0);
        assert!((ri - oracle).abs() < 1e-14);
        assert!((ri - (2.0 * 2f64.sqrt() - 2.0)).abs() < 1e-14);
    }
}
