use nalgebra::{DMatrix, DVector};

use crate::Result;

const ARMIJO_C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;
/// Largest coefficient change allowed on the very first step.
const FIRST_STEP: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct BfgsReport {
    pub x: DVector<f64>,
    pub f: f64,
    /// ‖∇f‖_∞ at `x`.
    pub grad_inf: f64,
    pub iterations: usize,
    /// Gradient test met, as opposed to iteration cap or stalled line search.
    pub converged: bool,
}

/// BFGS with Armijo backtracking.
///
/// Trial points are rejected (and the step halved) when the objective is not
/// finite, returns an error, or `accept` says no. `x0` must be acceptable.
pub fn bfgs<F, A>(
    mut objective: F,
    accept: A,
    x0: DVector<f64>,
    max_iter: usize,
    grad_tol: f64,
) -> Result<BfgsReport>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
    A: Fn(&DVector<f64>) -> bool,
{
    let n = x0.len();
    let mut x = x0;
    let (mut f, mut g) = objective(&x)?;
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut scaled = false;
    let mut iterations = 0;
    let done = |f: f64, g: &DVector<f64>| g.amax() <= grad_tol * (1.0 + f.abs());
    if n == 0 || done(f, &g) {
        return Ok(BfgsReport {
            grad_inf: g.amax(),
            x,
            f,
            iterations,
            converged: true,
        });
    }
    while iterations < max_iter {
        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            h.fill_with_identity();
            scaled = false;
            d = -g.clone();
            slope = -g.norm_squared();
        }
        let mut alpha = if scaled {
            1.0
        } else {
            (FIRST_STEP / d.amax()).min(1.0)
        };
        let mut step = None;
        for _ in 0..MAX_HALVINGS {
            let xt = &x + &d * alpha;
            if let Ok((ft, gt)) = objective(&xt) {
                if ft.is_finite()
                    && gt.iter().all(|v| v.is_finite())
                    && ft <= f + ARMIJO_C1 * alpha * slope
                    && accept(&xt)
                {
                    step = Some((xt, ft, gt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((xt, ft, gt)) = step else {
            log::debug!("line search stalled after {iterations} iterations at f = {f:.6e}");
            break;
        };
        iterations += 1;
        let s = &xt - &x;
        let y = &gt - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if !scaled {
                h *= sy / y.norm_squared();
                scaled = true;
            }
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        x = xt;
        f = ft;
        g = gt;
        if done(f, &g) {
            return Ok(BfgsReport {
                grad_inf: g.amax(),
                x,
                f,
                iterations,
                converged: true,
            });
        }
    }
    Ok(BfgsReport {
        grad_inf: g.amax(),
        x,
        f,
        iterations,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let rep = bfgs(
            |x| {
                let (a, b) = (x[0], x[1]);
                let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
                let g = DVector::from_vec(vec![
                    -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                    200.0 * (b - a * a),
                ]);
                Ok((f, g))
            },
            |_| true,
            DVector::from_vec(vec![-1.2, 1.0]),
            2000,
            1e-10,
        )
        .unwrap();
        assert!(rep.converged);
        assert!((rep.x[0] - 1.0).abs() < 1e-6 && (rep.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejected_region_is_never_entered() {
        // minimum of (x-2)² lies outside the accepted half-line x ≤ 1
        let rep = bfgs(
            |x| {
                Ok((
                    (x[0] - 2.0).powi(2),
                    DVector::from_element(1, 2.0 * (x[0] - 2.0)),
                ))
            },
            |x| x[0] <= 1.0,
            DVector::from_element(1, 0.0),
            100,
            1e-12,
        )
        .unwrap();
        assert!(rep.x[0] <= 1.0);
        assert!(rep.x[0] > 0.9);
    }
}
