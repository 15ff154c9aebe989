//! High-order triangular meshes, mapped meshes, bijectivity checks and
//! quality indicators.

mod generate;
mod inner_product;
mod lagrange;
mod locate;
mod quality;
mod text;

pub use generate::structured_mesh;
pub use inner_product::{InnerProductMatrix, NormKind};
pub use lagrange::TriangleLagrange;
pub use locate::MeshLocator;
pub use quality::{
    composite_distortion, discrete_bijectivity_check, element_distortion, element_radius_ratio,
    min_radius_ratio, radius_ratio, BijectivityProbe, BijectivityReport,
};
pub use text::{read_matrix, write_matrix};

use crate::geometry::Chart;
use crate::{Error, Mat2, Result, Vec2};

/// Degree-p triangular mesh: nodes, connectivity (0-based, n_lp locals per
/// element in [`TriangleLagrange`] order).
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceMesh {
    basis: TriangleLagrange,
    nodes: Vec<Vec2>,
    elements: Vec<Vec<usize>>,
}

impl ReferenceMesh {
    pub fn new(degree: usize, nodes: Vec<Vec2>, elements: Vec<Vec<usize>>) -> Result<Self> {
        if degree == 0 {
            return Err(Error::Construction("mesh degree must be at least 1".into()));
        }
        let basis = TriangleLagrange::new(degree);
        let nlp = basis.n_nodes();
        let mut used = vec![false; nodes.len()];
        for (k, e) in elements.iter().enumerate() {
            if e.len() != nlp {
                return Err(Error::Construction(format!(
                    "element {k} has {} nodes, expected {nlp}",
                    e.len()
                )));
            }
            for &i in e {
                if i >= nodes.len() {
                    return Err(Error::Construction(format!(
                        "element {k} references missing node {i}"
                    )));
                }
                used[i] = true;
            }
        }
        if let Some(j) = used.iter().position(|u| !u) {
            return Err(Error::Construction(format!(
                "node {j} is not referenced by any element"
            )));
        }
        Ok(ReferenceMesh {
            basis,
            nodes,
            elements,
        })
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    pub fn basis(&self) -> &TriangleLagrange {
        &self.basis
    }

    pub fn nodes(&self) -> &[Vec2] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn elements(&self) -> &[Vec<usize>] {
        &self.elements
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    /// Global indices of the three vertices of element k.
    pub fn vertices(&self, k: usize) -> [usize; 3] {
        let [a, b, c] = self.basis.vertex_locals();
        let e = &self.elements[k];
        [e[a], e[b], e[c]]
    }

    /// Ψ_k^hf(X) = Σ x_{i,k} ℓ_i(X), optionally with overridden (mapped) nodes.
    pub fn elemental_map_eval(&self, k: usize, x: &Vec2, nodes: Option<&[Vec2]>) -> Vec2 {
        let nodes = nodes.unwrap_or(&self.nodes);
        let l = self.basis.eval(x);
        self.elements[k]
            .iter()
            .zip(&l)
            .fold(Vec2::zeros(), |acc, (&i, &w)| acc + nodes[i] * w)
    }

    pub fn elemental_jacobian(&self, k: usize, x: &Vec2, nodes: Option<&[Vec2]>) -> Mat2 {
        let nodes = nodes.unwrap_or(&self.nodes);
        let g = self.basis.grad(x);
        jacobian_from(&self.elements[k], nodes, &g)
    }

    /// Global indices of the nodes that are element vertices, ascending.
    pub fn vertex_nodes(&self) -> Vec<usize> {
        let mut is_v = vec![false; self.nodes.len()];
        for k in 0..self.elements.len() {
            for v in self.vertices(k) {
                is_v[v] = true;
            }
        }
        (0..self.nodes.len()).filter(|&i| is_v[i]).collect()
    }

    /// Linear triangulation of every element's Lagrange lattice (p² triangles
    /// per element) on the same node set.
    pub fn p1_submesh(&self) -> ReferenceMesh {
        let p = self.degree();
        let lat = self.basis.lattice();
        let local = |i: usize, j: usize| {
            lat.iter()
                .position(|&(a, b)| a == i && b == j)
                .expect("lattice point")
        };
        let mut tris = Vec::with_capacity(self.elements.len() * p * p);
        for e in &self.elements {
            for j in 0..p {
                for i in 0..p - j {
                    tris.push(vec![e[local(i, j)], e[local(i + 1, j)], e[local(i, j + 1)]]);
                    if i + j + 1 < p {
                        tris.push(vec![
                            e[local(i + 1, j)],
                            e[local(i + 1, j + 1)],
                            e[local(i, j + 1)],
                        ]);
                    }
                }
            }
        }
        ReferenceMesh::new(1, self.nodes.clone(), tris).expect("sub-triangulation of a valid mesh")
    }

    /// Total area by quadrature of the elemental Jacobians.
    pub fn area(&self) -> f64 {
        let rule = crate::quadrature::TriangleRule::with_degree(2 * self.degree());
        let grads: Vec<_> = rule
            .points
            .iter()
            .map(|p| self.basis.grad(&Vec2::new(p[0], p[1])))
            .collect();
        let mut a = 0.0;
        for e in &self.elements {
            for (g, w) in grads.iter().zip(&rule.weights) {
                a += w * jacobian_from(e, &self.nodes, g).determinant();
            }
        }
        a
    }
}

pub(crate) fn jacobian_from(conn: &[usize], nodes: &[Vec2], grads: &[[f64; 2]]) -> Mat2 {
    let mut j = Mat2::zeros();
    for (&i, g) in conn.iter().zip(grads) {
        let x = nodes[i];
        j[(0, 0)] += x.x * g[0];
        j[(0, 1)] += x.x * g[1];
        j[(1, 0)] += x.y * g[0];
        j[(1, 1)] += x.y * g[1];
    }
    j
}

/// Per-node partition label I_Φ and reference coordinates x^ref.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRefs {
    pub labels: Vec<usize>,
    pub coords: Vec<Vec2>,
}

impl NodeRefs {
    /// Locates every mesh node in the chart.
    pub fn compute(mesh: &ReferenceMesh, chart: &dyn Chart) -> Result<Self> {
        let mut labels = Vec::with_capacity(mesh.n_nodes());
        let mut coords = Vec::with_capacity(mesh.n_nodes());
        for (j, p) in mesh.nodes().iter().enumerate() {
            let (q, x) = chart
                .locate(p)
                .map_err(|e| Error::Construction(format!("mesh node {j}: {e}")))?;
            labels.push(q);
            coords.push(x);
        }
        Ok(NodeRefs { labels, coords })
    }

    /// Largest ‖Ψ_{I_j}(x_j^ref) − x_j‖.
    pub fn max_residual(&self, mesh: &ReferenceMesh, chart: &dyn Chart) -> f64 {
        mesh.nodes()
            .iter()
            .enumerate()
            .map(|(j, p)| (chart.forward(self.labels[j], &self.coords[j]) - p).norm())
            .fold(0.0, f64::max)
    }
}

const MAP_TOL: f64 = 1e-8;

/// Φ(x_j) = Ψ_{I_j}(x_j^ref + φ_{I_j}(x_j^ref)) for every node.
///
/// With `at_mu = None` the reference geometry is used and the image is
/// written as x_j + (Ψ(z) − Ψ(x^ref)), so a vanishing displacement leaves
/// nodes bitwise unchanged.
pub fn map_mesh(
    mesh: &ReferenceMesh,
    refs: &NodeRefs,
    reference: &dyn Chart,
    at_mu: Option<&dyn Chart>,
    displacement: impl Fn(usize, &Vec2) -> Vec2,
) -> Result<Vec<Vec2>> {
    let bx = reference.ref_box();
    let mut out = Vec::with_capacity(mesh.n_nodes());
    for (j, x) in mesh.nodes().iter().enumerate() {
        let q = refs.labels[j];
        let xr = refs.coords[j];
        let d = displacement(q, &xr);
        let mut z = xr + d;
        if !bx.contains(&z, MAP_TOL) {
            return Err(Error::Mapping(format!(
                "node {j} displaced to reference point ({}, {}) outside the reference box",
                z.x, z.y
            )));
        }
        z.x = z.x.clamp(0.0, 1.0);
        if !bx.periodic {
            z.y = z.y.clamp(bx.y0, bx.y1);
        }
        let y = match at_mu {
            Some(c) => c.forward(q, &z),
            None if d == Vec2::zeros() => *x,
            None => x + (reference.forward(q, &z) - reference.forward(q, &xr)),
        };
        out.push(y);
    }
    Ok(out)
}
