use nalgebra::DVector;
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use super::{jacobian_from, ReferenceMesh};
use crate::quadrature::TriangleRule;
use crate::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L2,
    H1,
}

/// Sparse Gram matrix X of the FE space: (u, v) = vᵀ X u.
#[derive(Debug, Clone)]
pub struct InnerProductMatrix {
    pub matrix: CsrMatrix<f64>,
    pub kind: NormKind,
}

impl InnerProductMatrix {
    /// Isoparametric assembly with a degree-(2p+2) triangle rule.
    pub fn assemble(mesh: &ReferenceMesh, kind: NormKind) -> Self {
        let b = mesh.basis();
        let rule = TriangleRule::with_degree(2 * b.degree() + 2);
        let vals: Vec<Vec<f64>> = rule
            .points
            .iter()
            .map(|p| b.eval(&Vec2::new(p[0], p[1])))
            .collect();
        let grads: Vec<Vec<[f64; 2]>> = rule
            .points
            .iter()
            .map(|p| b.grad(&Vec2::new(p[0], p[1])))
            .collect();
        let n = mesh.n_nodes();
        let nlp = b.n_nodes();
        let mut coo = CooMatrix::new(n, n);
        let mut local = vec![0.0; nlp * nlp];
        let mut phys = vec![[0.0; 2]; nlp];
        for conn in mesh.elements() {
            local.iter_mut().for_each(|v| *v = 0.0);
            for (qp, w) in rule.weights.iter().enumerate() {
                let j = jacobian_from(conn, mesh.nodes(), &grads[qp]);
                let det = j.determinant();
                let wd = w * det.abs();
                let l = &vals[qp];
                if kind == NormKind::H1 {
                    let jit = j
                        .try_inverse()
                        .expect("degenerate mesh element")
                        .transpose();
                    for (a, g) in grads[qp].iter().enumerate() {
                        let v = jit * Vec2::new(g[0], g[1]);
                        phys[a] = [v.x, v.y];
                    }
                }
                for a in 0..nlp {
                    for c in 0..nlp {
                        let mut v = l[a] * l[c];
                        if kind == NormKind::H1 {
                            v += phys[a][0] * phys[c][0] + phys[a][1] * phys[c][1];
                        }
                        local[a * nlp + c] += wd * v;
                    }
                }
            }
            for a in 0..nlp {
                for c in 0..nlp {
                    coo.push(conn[a], conn[c], local[a * nlp + c]);
                }
            }
        }
        InnerProductMatrix {
            matrix: CsrMatrix::from(&coo),
            kind,
        }
    }

    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.matrix * u
    }

    pub fn dot(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        v.dot(&self.apply(u))
    }

    pub fn norm(&self, u: &DVector<f64>) -> f64 {
        self.dot(u, u).max(0.0).sqrt()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}
