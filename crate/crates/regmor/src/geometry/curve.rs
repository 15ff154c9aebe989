use crate::{Error, Result, Vec2};

/// Parameterization t ∈ [0,1] ↦ R² of a partition facet.
#[derive(Debug, Clone, PartialEq)]
pub enum CurveParam {
    Line {
        start: Vec2,
        end: Vec2,
    },
    /// Circular arc, angle moving linearly from `start_angle` to `end_angle` (radians).
    Arc {
        center: Vec2,
        radius: f64,
        start_angle: f64,
        end_angle: f64,
    },
    /// Chebyshev expansion in s = 2t − 1 (one coefficient vector per coordinate).
    Polynomial {
        cx: Vec<f64>,
        cy: Vec<f64>,
    },
    /// Piecewise-linear table with equispaced parameter breakpoints.
    Table {
        points: Vec<Vec2>,
    },
}

fn clenshaw(c: &[f64], s: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &ck in c.iter().skip(1).rev() {
        let b0 = 2.0 * s * b1 - b2 + ck;
        b2 = b1;
        b1 = b0;
    }
    s * b1 - b2 + c[0]
}

fn chebyshev_derivative(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    if n <= 1 {
        return vec![0.0];
    }
    let mut d = vec![0.0; n + 1];
    for k in (1..n).rev() {
        d[k - 1] = d[k + 1] + 2.0 * k as f64 * c[k];
    }
    d[0] *= 0.5;
    d.truncate(n - 1);
    d
}

/// Chebyshev coefficients of the interpolant through samples at s_j = cos(πj/n).
fn chebyshev_from_lobatto_samples(f: &[f64]) -> Vec<f64> {
    let n = f.len() - 1;
    if n == 0 {
        return vec![f[0]];
    }
    let nf = n as f64;
    (0..=n)
        .map(|k| {
            let mut s = 0.0;
            for (j, &fj) in f.iter().enumerate() {
                let w = if j == 0 || j == n { 0.5 } else { 1.0 };
                s += w * fj * (std::f64::consts::PI * (j * k) as f64 / nf).cos();
            }
            let scale = if k == 0 || k == n { 1.0 / nf } else { 2.0 / nf };
            s * scale
        })
        .collect()
}

impl CurveParam {
    pub fn line(start: Vec2, end: Vec2) -> Self {
        CurveParam::Line { start, end }
    }

    pub fn arc(center: Vec2, radius: f64, start_angle: f64, end_angle: f64) -> Self {
        CurveParam::Arc {
            center,
            radius,
            start_angle,
            end_angle,
        }
    }

    pub fn table(points: Vec<Vec2>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Construction(
                "curve table needs at least two points".into(),
            ));
        }
        Ok(CurveParam::Table { points })
    }

    /// Polynomial through samples taken at Chebyshev-Lobatto parameters
    /// t_j = (1 + cos(πj/n))/2, j = 0..=n (so the first sample is t = 1).
    pub fn from_lobatto_samples(samples: &[Vec2]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Construction("polynomial curve needs samples".into()));
        }
        let xs: Vec<f64> = samples.iter().map(|p| p.x).collect();
        let ys: Vec<f64> = samples.iter().map(|p| p.y).collect();
        Ok(CurveParam::Polynomial {
            cx: chebyshev_from_lobatto_samples(&xs),
            cy: chebyshev_from_lobatto_samples(&ys),
        })
    }

    /// Chebyshev-Lobatto parameters used by [`CurveParam::from_lobatto_samples`].
    pub fn lobatto_parameters(degree: usize) -> Vec<f64> {
        if degree == 0 {
            return vec![0.5];
        }
        (0..=degree)
            .map(|j| 0.5 * (1.0 + (std::f64::consts::PI * j as f64 / degree as f64).cos()))
            .collect()
    }

    /// Degree-`degree` polynomial interpolant of this curve.
    pub fn to_polynomial(&self, degree: usize) -> CurveParam {
        let samples: Vec<Vec2> = Self::lobatto_parameters(degree)
            .iter()
            .map(|&t| self.eval(t))
            .collect();
        Self::from_lobatto_samples(&samples).expect("nonempty samples")
    }

    pub fn eval(&self, t: f64) -> Vec2 {
        match self {
            CurveParam::Line { start, end } => start * (1.0 - t) + end * t,
            CurveParam::Arc {
                center,
                radius,
                start_angle,
                end_angle,
            } => {
                let a = start_angle + t * (end_angle - start_angle);
                center + *radius * Vec2::new(a.cos(), a.sin())
            }
            CurveParam::Polynomial { cx, cy } => {
                let s = 2.0 * t - 1.0;
                Vec2::new(clenshaw(cx, s), clenshaw(cy, s))
            }
            CurveParam::Table { points } => {
                let (k, u) = Self::segment(points.len(), t);
                points[k] * (1.0 - u) + points[k + 1] * u
            }
        }
    }

    pub fn deriv(&self, t: f64) -> Vec2 {
        match self {
            CurveParam::Line { start, end } => end - start,
            CurveParam::Arc {
                radius,
                start_angle,
                end_angle,
                ..
            } => {
                let da = end_angle - start_angle;
                let a = start_angle + t * da;
                *radius * da * Vec2::new(-a.sin(), a.cos())
            }
            CurveParam::Polynomial { cx, cy } => {
                let s = 2.0 * t - 1.0;
                let dx = chebyshev_derivative(cx);
                let dy = chebyshev_derivative(cy);
                2.0 * Vec2::new(clenshaw(&dx, s), clenshaw(&dy, s))
            }
            CurveParam::Table { points } => {
                let (k, _) = Self::segment(points.len(), t);
                (points[k + 1] - points[k]) * (points.len() - 1) as f64
            }
        }
    }

    fn segment(n_points: usize, t: f64) -> (usize, f64) {
        let m = (n_points - 1) as f64;
        let k = ((t * m).floor().max(0.0) as usize).min(n_points - 2);
        (k, t * m - k as f64)
    }

    pub fn start(&self) -> Vec2 {
        match self {
            CurveParam::Line { start, .. } => *start,
            CurveParam::Table { points } => points[0],
            _ => self.eval(0.0),
        }
    }

    pub fn end(&self) -> Vec2 {
        match self {
            CurveParam::Line { end, .. } => *end,
            CurveParam::Table { points } => points[points.len() - 1],
            _ => self.eval(1.0),
        }
    }

    /// Same curve traversed backwards: γ(1 − t).
    pub fn reversed(&self) -> CurveParam {
        match self {
            CurveParam::Line { start, end } => CurveParam::Line {
                start: *end,
                end: *start,
            },
            CurveParam::Arc {
                center,
                radius,
                start_angle,
                end_angle,
            } => CurveParam::Arc {
                center: *center,
                radius: *radius,
                start_angle: *end_angle,
                end_angle: *start_angle,
            },
            CurveParam::Polynomial { cx, cy } => {
                let flip = |c: &Vec<f64>| {
                    c.iter()
                        .enumerate()
                        .map(|(k, v)| if k % 2 == 1 { -v } else { *v })
                        .collect()
                };
                CurveParam::Polynomial {
                    cx: flip(cx),
                    cy: flip(cy),
                }
            }
            CurveParam::Table { points } => CurveParam::Table {
                points: points.iter().rev().copied().collect(),
            },
        }
    }

    /// Image under the affine map p ↦ a p + b (a scalar scaling, b a shift).
    pub fn scaled(&self, a: f64, b: Vec2) -> CurveParam {
        match self {
            CurveParam::Line { start, end } => CurveParam::Line {
                start: a * start + b,
                end: a * end + b,
            },
            CurveParam::Arc {
                center,
                radius,
                start_angle,
                end_angle,
            } => CurveParam::Arc {
                center: a * center + b,
                radius: a * radius,
                start_angle: *start_angle,
                end_angle: *end_angle,
            },
            CurveParam::Polynomial { cx, cy } => {
                let mut cx: Vec<f64> = cx.iter().map(|v| a * v).collect();
                let mut cy: Vec<f64> = cy.iter().map(|v| a * v).collect();
                cx[0] += b.x;
                cy[0] += b.y;
                CurveParam::Polynomial { cx, cy }
            }
            CurveParam::Table { points } => CurveParam::Table {
                points: points.iter().map(|p| a * p + b).collect(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_reproduces_polynomial_curves() {
        let f = |t: f64| Vec2::new(t * t * t - 2.0 * t, 0.5 + t * t);
        let samples: Vec<Vec2> = CurveParam::lobatto_parameters(5)
            .iter()
            .map(|&t| f(t))
            .collect();
        let c = CurveParam::from_lobatto_samples(&samples).unwrap();
        for k in 0..=20 {
            let t = k as f64 / 20.0;
            assert!((c.eval(t) - f(t)).norm() < 1e-13);
            let d = Vec2::new(3.0 * t * t - 2.0, 2.0 * t);
            assert!((c.deriv(t) - d).norm() < 1e-12);
        }
    }

    #[test]
    fn reversal_is_exact_reflection() {
        let curves = [
            CurveParam::line(Vec2::new(0.0, 0.0), Vec2::new(1.0, 2.0)),
            CurveParam::arc(Vec2::zeros(), 2.0, 0.1, 1.2),
            CurveParam::arc(Vec2::zeros(), 1.0, 0.0, 1.0).to_polynomial(10),
            CurveParam::table(vec![
                Vec2::zeros(),
                Vec2::new(1.0, 0.5),
                Vec2::new(2.0, 0.0),
            ])
            .unwrap(),
        ];
        for c in &curves {
            let r = c.reversed();
            // off the table breakpoints, where one-sided slopes differ
            for k in 0..10 {
                let t = (k as f64 + 0.3) / 10.0;
                assert!((r.eval(t) - c.eval(1.0 - t)).norm() < 1e-14);
                assert!((r.deriv(t) + c.deriv(1.0 - t)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let c = CurveParam::arc(Vec2::new(0.3, -0.2), 1.5, -0.4, 2.0);
        let h = 1e-6;
        for k in 1..10 {
            let t = k as f64 / 10.0;
            let fd = (c.eval(t + h) - c.eval(t - h)) / (2.0 * h);
            assert!((fd - c.deriv(t)).norm() < 1e-8);
        }
    }

    #[test]
    fn sampled_arc_is_accurate_at_degree_ten() {
        let arc = CurveParam::arc(Vec2::zeros(), 1.0, 0.0, std::f64::consts::FRAC_PI_2);
        let p = arc.to_polynomial(10);
        for k in 0..=50 {
            let t = k as f64 / 50.0;
            assert!((p.eval(t) - arc.eval(t)).norm() < 1e-9);
        }
        assert!((p.start() - arc.start()).norm() < 1e-14);
        assert!((p.end() - arc.end()).norm() < 1e-14);
    }
}
