//! One-dimensional rules on arbitrary intervals, tensor rules, and a collapsed
//! Gauss rule on the reference triangle.

use std::num::NonZeroUsize;

use gauss_quad::{FiniteAboveNegOneF64, GaussJacobi, GaussLegendre};

#[derive(Debug, Clone, PartialEq)]
pub struct Rule1d {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule1d {
    /// `n`-point Gauss-Legendre rule on `[a, b]`, nodes ascending.
    pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Self {
        assert!(n >= 1, "quadrature needs at least one point");
        let rule = GaussLegendre::new(NonZeroUsize::new(n).unwrap());
        let mut pairs: Vec<(f64, f64)> = rule.as_node_weight_pairs().to_vec();
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        // symmetrize so that reflections of the interval map nodes onto nodes
        for k in 0..n / 2 {
            let (xl, wl) = pairs[k];
            let (xr, wr) = pairs[n - 1 - k];
            let x = 0.5 * (xr - xl);
            let w = 0.5 * (wl + wr);
            pairs[k] = (-x, w);
            pairs[n - 1 - k] = (x, w);
        }
        if n % 2 == 1 {
            pairs[n / 2].0 = 0.0;
        }
        Rule1d {
            nodes: pairs.iter().map(|p| mid + half * p.0).collect(),
            weights: pairs.iter().map(|p| half * p.1).collect(),
        }
    }

    /// Equispaced rectangle rule on a periodic interval; exact for trigonometric
    /// polynomials of degree below `n`.
    pub fn periodic_trapezoid(n: usize, a: f64, b: f64) -> Self {
        assert!(n >= 1);
        let h = (b - a) / n as f64;
        Rule1d {
            nodes: (0..n).map(|k| a + (k as f64 + 0.5) * h).collect(),
            weights: vec![h; n],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Legendre polynomial P_n and its derivative at `x`.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = if (1.0 - x * x).abs() < 1e-300 {
        0.5 * n as f64 * (n as f64 + 1.0) * x.powi(n as i32 + 1)
    } else {
        n as f64 * (p0 - x * p1) / (1.0 - x * x)
    };
    (p1, dp)
}

/// `n` Gauss-Lobatto points on `[a, b]` (endpoints included), ascending.
///
/// Interior points are the zeros of P'_{n-1}, i.e. of the Jacobi(1,1)
/// polynomial of degree n-2; they are refined by Newton on P'_{n-1}.
pub fn gauss_lobatto_nodes(n: usize, a: f64, b: f64) -> Vec<f64> {
    assert!(n >= 2, "Gauss-Lobatto rule needs at least two points");
    let deg = n - 1;
    let mut x: Vec<f64> = Vec::with_capacity(n);
    x.push(-1.0);
    if n > 2 {
        let one = FiniteAboveNegOneF64::new(1.0).unwrap();
        let jac = GaussJacobi::new(NonZeroUsize::new(n - 2).unwrap(), one, one);
        let mut interior: Vec<f64> = jac.as_node_weight_pairs().iter().map(|p| p.0).collect();
        interior.sort_by(f64::total_cmp);
        let nd = deg as f64;
        for xi in interior.iter_mut() {
            for _ in 0..20 {
                let (p, dp) = legendre_with_derivative(deg, *xi);
                let d2p = (2.0 * *xi * dp - nd * (nd + 1.0) * p) / (1.0 - *xi * *xi);
                let step = dp / d2p;
                *xi -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
        }
        let m = interior.len();
        for k in 0..m / 2 {
            let s = 0.5 * (interior[m - 1 - k] - interior[k]);
            interior[k] = -s;
            interior[m - 1 - k] = s;
        }
        if m % 2 == 1 {
            interior[m / 2] = 0.0;
        }
        x.extend(interior);
    }
    x.push(1.0);
    // nodes on [0,1] with the left half defined as 1 − (right half), so that
    // t ↦ 1 − t permutes the node set exactly in floating point
    let mut unit: Vec<f64> = x.iter().map(|&t| 0.5 + 0.5 * t).collect();
    for k in 0..n / 2 {
        unit[k] = 1.0 - unit[n - 1 - k];
    }
    unit.iter()
        .enumerate()
        .map(|(k, &u)| {
            if k == 0 {
                a
            } else if k == n - 1 {
                b
            } else {
                a + (b - a) * u
            }
        })
        .collect()
}

/// Tensor product of two 1D rules; point `(i, j)` is stored at `i + j * nx`.
#[derive(Debug, Clone)]
pub struct TensorRule {
    pub x: Rule1d,
    pub y: Rule1d,
}

impl TensorRule {
    pub fn new(x: Rule1d, y: Rule1d) -> Self {
        TensorRule { x, y }
    }

    pub fn integrate(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let mut s = 0.0;
        for (&yj, &wy) in self.y.nodes.iter().zip(&self.y.weights) {
            for (&xi, &wx) in self.x.nodes.iter().zip(&self.x.weights) {
                s += wx * wy * f(xi, yj);
            }
        }
        s
    }
}

/// Quadrature on the reference triangle {X1, X2 ≥ 0, X1 + X2 ≤ 1}.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl TriangleRule {
    /// Collapsed (Duffy) Gauss rule exact for polynomials of total degree `degree`.
    pub fn with_degree(degree: usize) -> Self {
        let n = (degree + 3) / 2;
        let g = Rule1d::gauss_legendre(n, 0.0, 1.0);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for (&v, &wv) in g.nodes.iter().zip(&g.weights) {
            for (&u, &wu) in g.nodes.iter().zip(&g.weights) {
                points.push([u * (1.0 - v), v]);
                weights.push(wu * wv * (1.0 - v));
            }
        }
        TriangleRule { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
