use super::CurveParam;
use crate::{Error, Mat2, Result, Vec2};

const CORNER_TOL: f64 = 1e-12;
const CONTAIN_TOL: f64 = 1e-8;
const NEWTON_MAX_ITER: usize = 50;

/// Curvilinear quadrilateral given by its four facet curves, mapped from the
/// unit square by transfinite (Gordon-Hall) interpolation.
///
/// Facets follow the reference ordering: bottom (X2=0, c00→c10), top
/// (X2=1, c01→c11), left (X1=0, c00→c01), right (X1=1, c10→c11).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadElement {
    edges: [CurveParam; 4],
    corners: [Vec2; 4],
    scale: f64,
}

/// Outcome of inverting Ψ at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Inverse {
    /// Converged inside the closed square (clamped coordinates).
    Inside(Vec2),
    /// Converged, but the preimage lies outside the square.
    Outside(Vec2),
    Failed,
}

impl QuadElement {
    pub fn new(
        bottom: CurveParam,
        top: CurveParam,
        left: CurveParam,
        right: CurveParam,
    ) -> Result<Self> {
        let checks = [
            ("bottom start / left start", bottom.start(), left.start()),
            ("bottom end / right start", bottom.end(), right.start()),
            ("top start / left end", top.start(), left.end()),
            ("top end / right end", top.end(), right.end()),
        ];
        for (what, a, b) in checks {
            if (a - b).norm() > CORNER_TOL * (1.0 + a.norm()) {
                return Err(Error::Construction(format!(
                    "inconsistent corner ({what}): ({}, {}) vs ({}, {})",
                    a.x, a.y, b.x, b.y
                )));
            }
        }
        let corners = [bottom.start(), bottom.end(), top.end(), top.start()];
        let mut scale: f64 = 0.0;
        for a in &corners {
            for b in &corners {
                scale = scale.max((a - b).norm());
            }
        }
        Ok(QuadElement {
            edges: [bottom, top, left, right],
            corners,
            scale,
        })
    }

    /// Straight-sided element through c00, c10, c11, c01 (counter-clockwise).
    pub fn from_corners(c00: Vec2, c10: Vec2, c11: Vec2, c01: Vec2) -> Self {
        Self::new(
            CurveParam::line(c00, c10),
            CurveParam::line(c01, c11),
            CurveParam::line(c00, c01),
            CurveParam::line(c10, c11),
        )
        .expect("straight edges share corners")
    }

    /// Facet curve in reference orientation (0 bottom, 1 top, 2 left, 3 right).
    pub fn edge(&self, facet: usize) -> &CurveParam {
        &self.edges[facet]
    }

    pub fn edges(&self) -> &[CurveParam; 4] {
        &self.edges
    }

    /// Corners c00, c10, c11, c01.
    pub fn corners(&self) -> &[Vec2; 4] {
        &self.corners
    }

    pub fn diameter(&self) -> f64 {
        self.scale
    }

    pub fn forward(&self, x: &Vec2) -> Vec2 {
        let (u, v) = (x.x, x.y);
        let [b, t, l, r] = &self.edges;
        let [c00, c10, c11, c01] = &self.corners;
        b.eval(u) * (1.0 - v) + t.eval(u) * v + l.eval(v) * (1.0 - u) + r.eval(v) * u
            - (c00 * ((1.0 - u) * (1.0 - v))
                + c10 * (u * (1.0 - v))
                + c11 * (u * v)
                + c01 * ((1.0 - u) * v))
    }

    pub fn jacobian(&self, x: &Vec2) -> Mat2 {
        let (u, v) = (x.x, x.y);
        let [b, t, l, r] = &self.edges;
        let [c00, c10, c11, c01] = &self.corners;
        let du = b.deriv(u) * (1.0 - v) + t.deriv(u) * v - l.eval(v) + r.eval(v)
            - (-c00 * (1.0 - v) + c10 * (1.0 - v) + c11 * v - c01 * v);
        let dv = -b.eval(u) + t.eval(u) + l.deriv(v) * (1.0 - u) + r.deriv(v) * u
            - (-c00 * (1.0 - u) - c10 * u + c11 * u + c01 * (1.0 - u));
        Mat2::from_columns(&[du, dv])
    }

    fn newton(&self, p: &Vec2, seed: Vec2) -> Option<Vec2> {
        let tol = 1e-10 * self.scale.max(1.0);
        let mut x = seed;
        let mut converged_at = None;
        for it in 0..NEWTON_MAX_ITER {
            let r = self.forward(&x) - p;
            let rn = r.norm();
            if !rn.is_finite() {
                return None;
            }
            if rn <= tol && converged_at.is_none() {
                converged_at = Some(it);
            }
            // a couple of extra steps after convergence push the error to round-off
            if let Some(c) = converged_at {
                if it >= c + 2 || rn == 0.0 {
                    break;
                }
            }
            let j = self.jacobian(&x);
            let step = j.try_inverse()? * r;
            x -= step;
            x.x = x.x.clamp(-0.5, 1.5);
            x.y = x.y.clamp(-0.5, 1.5);
        }
        let rn = (self.forward(&x) - p).norm();
        (rn <= tol).then_some(x)
    }

    /// Λ = Ψ⁻¹ by multi-start Newton.
    pub fn invert(&self, p: &Vec2) -> Inverse {
        let seeds = [
            Vec2::new(0.5, 0.5),
            Vec2::new(0.25, 0.25),
            Vec2::new(0.75, 0.25),
            Vec2::new(0.25, 0.75),
            Vec2::new(0.75, 0.75),
        ];
        let mut outside = None;
        for s in seeds {
            if let Some(x) = self.newton(p, s) {
                let inside = x.x >= -CONTAIN_TOL
                    && x.x <= 1.0 + CONTAIN_TOL
                    && x.y >= -CONTAIN_TOL
                    && x.y <= 1.0 + CONTAIN_TOL;
                if inside {
                    return Inverse::Inside(Vec2::new(x.x.clamp(0.0, 1.0), x.y.clamp(0.0, 1.0)));
                }
                outside.get_or_insert(x);
            }
        }
        match outside {
            Some(x) => Inverse::Outside(x),
            None => Inverse::Failed,
        }
    }

    pub fn inverse(&self, p: &Vec2) -> Result<Vec2> {
        match self.invert(p) {
            Inverse::Inside(x) => Ok(x),
            Inverse::Outside(x) => Err(Error::Domain(format!(
                "point ({}, {}) lies outside the element (preimage ({}, {}))",
                p.x, p.y, x.x, x.y
            ))),
            Inverse::Failed => Err(Error::Inversion(format!(
                "Newton did not converge for point ({}, {})",
                p.x, p.y
            ))),
        }
    }
}
