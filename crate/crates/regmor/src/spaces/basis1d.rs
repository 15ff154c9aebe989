use std::f64::consts::TAU;

use nalgebra::DMatrix;

use crate::quadrature::{gauss_lobatto_nodes, Rule1d};

/// Values and first/second derivatives of a 1D basis at a set of points
/// (rows: points, columns: basis functions).
#[derive(Debug, Clone)]
pub struct Tab1d {
    pub v: DMatrix<f64>,
    pub d1: DMatrix<f64>,
    pub d2: DMatrix<f64>,
}

/// Lagrange polynomials on Gauss-Lobatto nodes of [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeBasis {
    nodes: Vec<f64>,
    bary: Vec<f64>,
    d: DMatrix<f64>,
    dd: DMatrix<f64>,
}

impl LagrangeBasis {
    /// Degree-`degree` basis (degree + 1 nodes).
    pub fn new(degree: usize) -> Self {
        let nodes = gauss_lobatto_nodes(degree + 1, 0.0, 1.0);
        let n = nodes.len();
        let bary: Vec<f64> = (0..n)
            .map(|j| {
                1.0 / (0..n)
                    .filter(|&k| k != j)
                    .map(|k| nodes[j] - nodes[k])
                    .product::<f64>()
            })
            .collect();
        // D[k][i] = ℓ_i'(x_k)
        let mut d = DMatrix::zeros(n, n);
        for k in 0..n {
            let mut diag = 0.0;
            for i in 0..n {
                if i != k {
                    let v = (bary[i] / bary[k]) / (nodes[k] - nodes[i]);
                    d[(k, i)] = v;
                    diag -= v;
                }
            }
            d[(k, k)] = diag;
        }
        let dd = &d * &d;
        LagrangeBasis { nodes, bary, d, dd }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Cardinal function values ℓ_i(x) by the barycentric formula.
    pub fn values(&self, x: f64) -> Vec<f64> {
        let n = self.nodes.len();
        if let Some(k) = self.nodes.iter().position(|&xk| xk == x) {
            let mut v = vec![0.0; n];
            v[k] = 1.0;
            return v;
        }
        let terms: Vec<f64> = (0..n).map(|i| self.bary[i] / (x - self.nodes[i])).collect();
        let s: f64 = terms.iter().sum();
        terms.iter().map(|t| t / s).collect()
    }

    /// (ℓ_i(x), ℓ_i'(x), ℓ_i''(x)); derivatives are interpolated exactly from
    /// their nodal values since they are polynomials of lower degree.
    pub fn eval(&self, x: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let l = self.values(x);
        let n = l.len();
        let mut d1 = vec![0.0; n];
        let mut d2 = vec![0.0; n];
        for k in 0..n {
            if l[k] == 0.0 {
                continue;
            }
            for i in 0..n {
                d1[i] += l[k] * self.d[(k, i)];
                d2[i] += l[k] * self.dd[(k, i)];
            }
        }
        (l, d1, d2)
    }
}

/// Trigonometric basis {1, cos 2πkx (k=1..J_f), sin 2πkx (k=1..J_f)}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourierBasis {
    pub order: usize,
}

impl FourierBasis {
    pub fn eval(&self, x: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let jf = self.order;
        let n = 2 * jf + 1;
        let (mut v, mut d1, mut d2) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        v[0] = 1.0;
        for k in 1..=jf {
            let w = TAU * k as f64;
            let (s, c) = (w * x).sin_cos();
            v[k] = c;
            d1[k] = -w * s;
            d2[k] = -w * w * c;
            v[jf + k] = s;
            d1[jf + k] = w * c;
            d2[jf + k] = -w * w * s;
        }
        (v, d1, d2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Basis1d {
    Lagrange(LagrangeBasis),
    Fourier(FourierBasis),
}

impl Basis1d {
    pub fn dim(&self) -> usize {
        match self {
            Basis1d::Lagrange(b) => b.nodes.len(),
            Basis1d::Fourier(f) => 2 * f.order + 1,
        }
    }

    pub fn eval(&self, x: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        match self {
            Basis1d::Lagrange(b) => b.eval(x),
            Basis1d::Fourier(f) => f.eval(x),
        }
    }

    pub fn values(&self, x: f64) -> Vec<f64> {
        match self {
            Basis1d::Lagrange(b) => b.values(x),
            Basis1d::Fourier(f) => f.eval(x).0,
        }
    }

    pub fn tabulate(&self, points: &[f64]) -> Tab1d {
        let n = self.dim();
        let mut t = Tab1d {
            v: DMatrix::zeros(points.len(), n),
            d1: DMatrix::zeros(points.len(), n),
            d2: DMatrix::zeros(points.len(), n),
        };
        for (r, &x) in points.iter().enumerate() {
            let (v, d1, d2) = self.eval(x);
            for c in 0..n {
                t.v[(r, c)] = v[c];
                t.d1[(r, c)] = d1[c];
                t.d2[(r, c)] = d2[c];
            }
        }
        t
    }

    /// 1D mass, first- and second-derivative Gram matrices on the basis interval
    /// ([0,1] for Lagrange, one period for Fourier).
    pub fn gram_matrices(&self) -> [DMatrix<f64>; 3] {
        match self {
            Basis1d::Lagrange(b) => {
                let n = b.nodes.len();
                let rule = Rule1d::gauss_legendre(n + 1, 0.0, 1.0);
                let tab = self.tabulate(&rule.nodes);
                let w = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(rule.weights.clone()));
                [
                    tab.v.transpose() * &w * &tab.v,
                    tab.d1.transpose() * &w * &tab.d1,
                    tab.d2.transpose() * &w * &tab.d2,
                ]
            }
            Basis1d::Fourier(f) => {
                let n = 2 * f.order + 1;
                let mut m = DMatrix::zeros(n, n);
                let mut k1 = DMatrix::zeros(n, n);
                let mut k2 = DMatrix::zeros(n, n);
                m[(0, 0)] = 1.0;
                for k in 1..=f.order {
                    let w2 = (TAU * k as f64).powi(2);
                    for idx in [k, f.order + k] {
                        m[(idx, idx)] = 0.5;
                        k1[(idx, idx)] = 0.5 * w2;
                        k2[(idx, idx)] = 0.5 * w2 * w2;
                    }
                }
                [m, k1, k2]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lagrange_partition_of_unity_and_derivatives() {
        let b = LagrangeBasis::new(7);
        for &x in &[0.0, 0.13, 0.5, 0.77, 1.0] {
            let (v, d1, d2) = b.eval(x);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-13);
            assert!(d1.iter().sum::<f64>().abs() < 1e-10);
            assert!(d2.iter().sum::<f64>().abs() < 1e-8);
        }
        // reproduces x^3 and its derivatives
        let (v, d1, d2) = b.eval(0.37);
        let f: Vec<f64> = b.nodes().iter().map(|x| x.powi(3)).collect();
        let dot = |a: &[f64]| a.iter().zip(&f).map(|(p, q)| p * q).sum::<f64>();
        assert!((dot(&v) - 0.37f64.powi(3)).abs() < 1e-13);
        assert!((dot(&d1) - 3.0 * 0.37f64.powi(2)).abs() < 1e-11);
        assert!((dot(&d2) - 6.0 * 0.37).abs() < 1e-9);
    }

    #[test]
    fn fourier_gram_matches_periodic_quadrature() {
        let b = Basis1d::Fourier(FourierBasis { order: 4 });
        let [m, k1, k2] = b.gram_matrices();
        let rule = Rule1d::periodic_trapezoid(40, -0.5, 0.5);
        let tab = b.tabulate(&rule.nodes);
        let w = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(rule.weights.clone()));
        assert!((tab.v.transpose() * &w * &tab.v - m).amax() < 1e-12);
        assert!((tab.d1.transpose() * &w * &tab.d1 - k1).amax() < 1e-9);
        assert!((tab.d2.transpose() * &w * &tab.d2 - k2).amax() < 1e-6);
    }

    #[test]
    fn fourier_members_are_periodic() {
        let f = FourierBasis { order: 8 };
        for &x in &[-0.5, -0.3, 0.0, 0.21] {
            let (a, _, _) = f.eval(x);
            let (b, _, _) = f.eval(x + 1.0);
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }
}
