//! Reference-domain charts: the polar map for annuli and Gordon-Hall maps for
//! partition elements, with inverses and facet connectivity.

mod curve;
mod gordon_hall;
mod layouts;
mod partition;
mod polar;

pub use curve::CurveParam;
pub use gordon_hall::QuadElement;
pub use layouts::{
    four_element_layout, rotated_chord_layout, side_by_side, square_grid, unit_square,
};
pub use partition::{FacetLink, Partition};
pub use polar::PolarChart;

use crate::{Mat2, Result, Vec2};

/// Reference facets of the unit square: ℓ1: X2=0, ℓ2: X2=1, ℓ3: X1=0, ℓ4: X1=1.
pub const FACETS: usize = 4;

/// Point on reference facet `facet` (0-based) at parameter `t`.
pub fn facet_point(facet: usize, t: f64) -> Vec2 {
    match facet {
        0 => Vec2::new(t, 0.0),
        1 => Vec2::new(t, 1.0),
        2 => Vec2::new(0.0, t),
        3 => Vec2::new(1.0, t),
        _ => panic!("facet index {facet} out of range"),
    }
}

/// Unit tangent of a reference facet (direction of increasing `t`).
pub fn facet_tangent(facet: usize) -> Vec2 {
    if facet < 2 {
        Vec2::new(1.0, 0.0)
    } else {
        Vec2::new(0.0, 1.0)
    }
}

/// Component index (0 or 1) of the reference normal of a facet.
pub fn facet_normal_component(facet: usize) -> usize {
    if facet < 2 {
        1
    } else {
        0
    }
}

/// Reference box of a chart: X1 ∈ [0,1], X2 ∈ [y0, y1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefBox {
    pub y0: f64,
    pub y1: f64,
    pub periodic: bool,
}

impl RefBox {
    pub const UNIT: RefBox = RefBox {
        y0: 0.0,
        y1: 1.0,
        periodic: false,
    };
    pub const POLAR: RefBox = RefBox {
        y0: -0.5,
        y1: 0.5,
        periodic: true,
    };

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    /// Wraps the second coordinate into the box for periodic charts:
    /// x2 ↦ mod(x2 + 1/2, 1) − 1/2 on the polar box.
    pub fn wrap(&self, x2: f64) -> f64 {
        if !self.periodic {
            return x2;
        }
        let h = self.height();
        (x2 - self.y0).rem_euclid(h) + self.y0
    }

    pub fn contains(&self, x: &Vec2, tol: f64) -> bool {
        let x2_ok = self.periodic || (x.y >= self.y0 - tol && x.y <= self.y1 + tol);
        x.x >= -tol && x.x <= 1.0 + tol && x2_ok
    }
}

/// Family of reference-to-physical maps {Ψ_q}.
pub trait Chart: Send + Sync {
    fn n_elements(&self) -> usize;
    fn ref_box(&self) -> RefBox;
    /// Ψ_q(X); total on the reference box (and beyond it for periodic charts).
    fn forward(&self, q: usize, x: &Vec2) -> Vec2;
    fn jacobian(&self, q: usize, x: &Vec2) -> Mat2;
    /// Containing element (lowest index on ties) and reference coordinates.
    fn locate(&self, p: &Vec2) -> Result<(usize, Vec2)>;
    /// |Ω_q|.
    fn element_area(&self, q: usize) -> f64;

    fn total_area(&self) -> f64 {
        (0..self.n_elements()).map(|q| self.element_area(q)).sum()
    }
}

/// Φ^geo(p) = Ψ_{q,μ}(Λ_{q,μ̄}(p)).
pub fn geometric_map(at_mu: &dyn Chart, at_ref: &dyn Chart, p: &Vec2) -> Result<Vec2> {
    let (q, x) = at_ref.locate(p)?;
    Ok(at_mu.forward(q, &x))
}
