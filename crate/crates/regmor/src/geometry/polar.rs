use std::f64::consts::TAU;

use super::{Chart, RefBox};
use crate::{Error, Mat2, Result, Vec2};

/// Ψ([ρ, θ]) = (r + (R − r)ρ)[cos 2πθ, sin 2πθ] on (0,1) × (−1/2, 1/2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarChart {
    inner: f64,
    outer: f64,
}

const RADIAL_TOL: f64 = 1e-10;

impl PolarChart {
    pub fn new(inner: f64, outer: f64) -> Result<Self> {
        if !(inner > 0.0 && outer > inner && outer.is_finite()) {
            return Err(Error::Construction(format!(
                "polar chart needs 0 < r < R, got r = {inner}, R = {outer}"
            )));
        }
        Ok(PolarChart { inner, outer })
    }

    pub fn inner_radius(&self) -> f64 {
        self.inner
    }

    pub fn outer_radius(&self) -> f64 {
        self.outer
    }

    fn eval(&self, x: &Vec2) -> Vec2 {
        let rho = self.inner + (self.outer - self.inner) * x.x;
        let (s, c) = (TAU * x.y).sin_cos();
        Vec2::new(rho * c, rho * s)
    }

    /// Forward map; x1 must lie in [0,1].
    pub fn polar_forward(&self, x: &Vec2) -> Result<Vec2> {
        if !(x.x >= 0.0 && x.x <= 1.0) {
            return Err(Error::Domain(format!(
                "radial coordinate {} outside [0,1]",
                x.x
            )));
        }
        Ok(self.eval(x))
    }

    /// Inverse map with θ in (−1/2, 1/2].
    pub fn polar_inverse(&self, p: &Vec2) -> Result<Vec2> {
        let n = p.norm();
        let tol = RADIAL_TOL * self.outer;
        if !(n >= self.inner - tol && n <= self.outer + tol) {
            return Err(Error::Domain(format!(
                "point ({}, {}) has radius {n} outside [{}, {}]",
                p.x, p.y, self.inner, self.outer
            )));
        }
        let rho = ((n - self.inner) / (self.outer - self.inner)).clamp(0.0, 1.0);
        let mut theta = p.y.atan2(p.x) / TAU;
        if theta <= -0.5 {
            theta += 1.0;
        }
        Ok(Vec2::new(rho, theta))
    }
}

impl Chart for PolarChart {
    fn n_elements(&self) -> usize {
        1
    }

    fn ref_box(&self) -> RefBox {
        RefBox::POLAR
    }

    fn forward(&self, _q: usize, x: &Vec2) -> Vec2 {
        self.eval(x)
    }

    fn jacobian(&self, _q: usize, x: &Vec2) -> Mat2 {
        let dr = self.outer - self.inner;
        let rho = self.inner + dr * x.x;
        let (s, c) = (TAU * x.y).sin_cos();
        Mat2::new(dr * c, -TAU * rho * s, dr * s, TAU * rho * c)
    }

    fn locate(&self, p: &Vec2) -> Result<(usize, Vec2)> {
        Ok((0, self.polar_inverse(p)?))
    }

    fn element_area(&self, _q: usize) -> f64 {
        std::f64::consts::PI * (self.outer * self.outer - self.inner * self.inner)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart() -> PolarChart {
        PolarChart::new(0.2, 1.0).unwrap()
    }

    #[test]
    fn forward_examples() {
        let c = chart();
        let p = c.polar_forward(&Vec2::new(0.0, 0.0)).unwrap();
        assert!((p - Vec2::new(0.2, 0.0)).norm() < 1e-15);
        let p = c.polar_forward(&Vec2::new(1.0, 0.25)).unwrap();
        assert!((p - Vec2::new(0.0, 1.0)).norm() < 1e-15);
        let p = c.polar_forward(&Vec2::new(0.5, 0.5)).unwrap();
        assert!((p - Vec2::new(-0.6, 0.0)).norm() < 1e-15);
        assert!(c.polar_forward(&Vec2::new(1.2, 0.0)).is_err());
    }

    #[test]
    fn inverse_examples() {
        let c = chart();
        let x = c.polar_inverse(&Vec2::new(0.2, 0.0)).unwrap();
        assert!((x - Vec2::new(0.0, 0.0)).norm() < 1e-15);
        let x = c.polar_inverse(&Vec2::new(0.0, 1.0)).unwrap();
        assert!((x - Vec2::new(1.0, 0.25)).norm() < 1e-15);
        // negative real axis is θ = 1/2, not −1/2
        let x = c.polar_inverse(&Vec2::new(-0.6, 0.0)).unwrap();
        assert_eq!(x.y, 0.5);
        assert!(c.polar_inverse(&Vec2::new(0.05, 0.0)).is_err());
        assert!(c.polar_inverse(&Vec2::new(1.5, 0.0)).is_err());
    }

    #[test]
    fn bad_radii_rejected() {
        assert!(PolarChart::new(0.0, 1.0).is_err());
        assert!(PolarChart::new(1.0, 0.5).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let c = chart();
        let x = Vec2::new(0.37, -0.21);
        let j = c.jacobian(0, &x);
        let h = 1e-6;
        for d in 0..2 {
            let mut e = Vec2::zeros();
            e[d] = h;
            let fd = (c.forward(0, &(x + e)) - c.forward(0, &(x - e))) / (2.0 * h);
            assert!((fd - j.column(d)).norm() < 1e-8);
        }
    }
}
