use crate::Vec2;

/// Degree-p Lagrange basis on the reference triangle with equispaced nodes.
///
/// Local node order: for j in 0..=p, for i in 0..=p−j, node X = (i/p, j/p);
/// so the vertices are locals 0, p and n_lp − 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleLagrange {
    degree: usize,
    lattice: Vec<(usize, usize)>,
}

/// R_m(λ) = Π_{s<m} (pλ − s)/(s + 1) and its derivative.
fn silvester(p: usize, m: usize, lam: f64) -> (f64, f64) {
    let pf = p as f64;
    let mut val = 1.0;
    let mut der = 0.0;
    for s in 0..m {
        let f = (pf * lam - s as f64) / (s as f64 + 1.0);
        let df = pf / (s as f64 + 1.0);
        der = der * f + val * df;
        val *= f;
    }
    (val, der)
}

impl TriangleLagrange {
    pub fn new(degree: usize) -> Self {
        assert!(degree >= 1, "Lagrange degree must be at least 1");
        let mut lattice = Vec::new();
        for j in 0..=degree {
            for i in 0..=degree - j {
                lattice.push((i, j));
            }
        }
        TriangleLagrange { degree, lattice }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_nodes(&self) -> usize {
        self.lattice.len()
    }

    /// Lattice indices (i, j) of each local node.
    pub fn lattice(&self) -> &[(usize, usize)] {
        &self.lattice
    }

    pub fn node(&self, k: usize) -> Vec2 {
        let (i, j) = self.lattice[k];
        let p = self.degree as f64;
        Vec2::new(i as f64 / p, j as f64 / p)
    }

    pub fn vertex_locals(&self) -> [usize; 3] {
        [0, self.degree, self.lattice.len() - 1]
    }

    pub fn eval(&self, x: &Vec2) -> Vec<f64> {
        let l1 = 1.0 - x.x - x.y;
        let p = self.degree;
        self.lattice
            .iter()
            .map(|&(i, j)| {
                silvester(p, p - i - j, l1).0 * silvester(p, i, x.x).0 * silvester(p, j, x.y).0
            })
            .collect()
    }

    /// Reference gradients [∂/∂X1, ∂/∂X2] of every basis function.
    pub fn grad(&self, x: &Vec2) -> Vec<[f64; 2]> {
        let l1 = 1.0 - x.x - x.y;
        let p = self.degree;
        self.lattice
            .iter()
            .map(|&(i, j)| {
                let (a, da) = silvester(p, p - i - j, l1);
                let (b, db) = silvester(p, i, x.x);
                let (c, dc) = silvester(p, j, x.y);
                [-da * b * c + a * db * c, -da * b * c + a * b * dc]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn kronecker_property() {
        for p in 1..=5 {
            let b = TriangleLagrange::new(p);
            assert_eq!(b.n_nodes(), (p + 1) * (p + 2) / 2);
            for k in 0..b.n_nodes() {
                let v = b.eval(&b.node(k));
                for (m, val) in v.iter().enumerate() {
                    let e = if m == k { 1.0 } else { 0.0 };
                    assert!((val - e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn matches_vandermonde_solve() {
        // interpolate a monomial basis through the nodes and compare the
        // cardinal functions at off-node points
        let p = 3;
        let b = TriangleLagrange::new(p);
        let monos: Vec<(i32, i32)> = (0..=p as i32)
            .flat_map(|j| (0..=(p as i32 - j)).map(move |i| (i, j)))
            .collect();
        let n = b.n_nodes();
        let v = DMatrix::from_fn(n, n, |r, c| {
            let x = b.node(r);
            x.x.powi(monos[c].0) * x.y.powi(monos[c].1)
        });
        let vinv = v.try_inverse().unwrap();
        let x = Vec2::new(0.21, 0.33);
        let row = DVector::from_fn(n, |c, _| x.x.powi(monos[c].0) * x.y.powi(monos[c].1));
        let oracle = vinv.transpose() * row;
        let got = b.eval(&x);
        for k in 0..n {
            assert!((oracle[k] - got[k]).abs() < 1e-11);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let b = TriangleLagrange::new(4);
        let x = Vec2::new(0.17, 0.29);
        let g = b.grad(&x);
        let h = 1e-6;
        for d in 0..2 {
            let mut e = Vec2::zeros();
            e[d] = h;
            let fp = b.eval(&(x + e));
            let fm = b.eval(&(x - e));
            for k in 0..b.n_nodes() {
                assert!(((fp[k] - fm[k]) / (2.0 * h) - g[k][d]).abs() < 1e-7);
            }
        }
    }
}
