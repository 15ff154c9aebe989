//! Ready-made partitions used by the synthetic problems and the tests.

use super::{CurveParam, Partition, QuadElement};
use crate::{Result, Vec2};

fn v(x: f64, y: f64) -> Vec2 {
    Vec2::new(x, y)
}

/// Single identity element on [0,1]².
pub fn unit_square() -> Partition {
    let e = QuadElement::from_corners(v(0.0, 0.0), v(1.0, 0.0), v(1.0, 1.0), v(0.0, 1.0));
    Partition::with_detected_connectivity(vec![e]).expect("unit square")
}

/// Two unit squares [0,1]×[0,1] and [1,2]×[0,1] sharing one facet.
pub fn side_by_side() -> Partition {
    let a = QuadElement::from_corners(v(0.0, 0.0), v(1.0, 0.0), v(1.0, 1.0), v(0.0, 1.0));
    let b = QuadElement::from_corners(v(1.0, 0.0), v(2.0, 0.0), v(2.0, 1.0), v(1.0, 1.0));
    Partition::with_detected_connectivity(vec![a, b]).expect("side-by-side squares")
}

/// n × n grid of equal squares covering [0,1]².
pub fn square_grid(n: usize) -> Partition {
    let h = 1.0 / n as f64;
    let mut elements = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let (x0, y0) = (i as f64 * h, j as f64 * h);
            elements.push(QuadElement::from_corners(
                v(x0, y0),
                v(x0 + h, y0),
                v(x0 + h, y0 + h),
                v(x0, y0 + h),
            ));
        }
    }
    Partition::with_detected_connectivity(elements).expect("square grid")
}

/// The 1-based connectivity tables of the four-element layout.
pub fn four_element_tables() -> (Vec<Vec<i32>>, Vec<Vec<i32>>, Vec<Vec<i32>>) {
    let qext = vec![
        vec![-1, 1, 1, 2],
        vec![2, 4, 4, -1],
        vec![3, 3, -1, 3],
        vec![-1, -1, 2, -1],
    ];
    let ell_ext = vec![
        vec![-1, 2, 3, 2],
        vec![1, 1, 3, -1],
        vec![1, 4, -1, 2],
        vec![-1, -1, 3, -1],
    ];
    let orif = vec![
        vec![1, 1, 1, 1],
        vec![1, 1, 0, 1],
        vec![1, 1, 1, 0],
        vec![1, 1, 1, 1],
    ];
    (qext, ell_ext, orif)
}

/// Four-element decomposition of the box [−1,4]×[−1,1] around an interior
/// chord running from `a` to `b` (default a = (0,0), b = (2,0)).
///
/// The chord separates the two central elements; it may be any curve with
/// those endpoints, which makes the layout usable for parametric geometries.
pub fn four_element_layout_with(a: Vec2, b: Vec2, chord: CurveParam) -> Result<Partition> {
    let (v0, v1, v2) = (v(0.0, 1.0), v(-1.0, 1.0), v(-1.0, -1.0));
    let (v4, v6, v7) = (v(3.0, -1.0), v(4.0, 1.0), v(4.0, -1.0));
    let (v3, v5) = (a, b);
    let l = CurveParam::line;
    let e1 = QuadElement::new(l(v0, v1), l(v3, v2), l(v0, v3), l(v1, v2))?;
    let e2 = QuadElement::new(l(v3, v2), l(v5, v4), chord.clone(), l(v2, v4))?;
    let e3 = QuadElement::new(l(v0, v3), l(v6, v5), l(v0, v6), chord)?;
    let e4 = QuadElement::new(l(v5, v4), l(v6, v7), l(v5, v6), l(v4, v7))?;
    let (qext, ell_ext, orif) = four_element_tables();
    Partition::from_tables(vec![e1, e2, e3, e4], &qext, &ell_ext, &orif)
}

pub fn four_element_layout() -> Partition {
    four_element_layout_with(
        v(0.0, 0.0),
        v(2.0, 0.0),
        CurveParam::line(v(0.0, 0.0), v(2.0, 0.0)),
    )
    .expect("four-element layout")
}

/// Circular arc from `a` to `b` bulging by `sagitta` to the left of a→b
/// (straight line when the sagitta vanishes).
pub fn arc_through(a: Vec2, b: Vec2, sagitta: f64) -> CurveParam {
    if sagitta.abs() < 1e-14 {
        return CurveParam::line(a, b);
    }
    let c = (b - a).norm();
    let radius = (c * c / 4.0 + sagitta * sagitta) / (2.0 * sagitta.abs());
    let mid = 0.5 * (a + b);
    let t = (b - a) / c;
    let nrm = v(-t.y, t.x);
    // centre sits opposite the bulge
    let center = mid - nrm * (radius - sagitta.abs()) * sagitta.signum();
    let ang = |p: Vec2| (p.y - center.y).atan2(p.x - center.x);
    let a0 = ang(a);
    let half = (c / (2.0 * radius)).clamp(-1.0, 1.0).asin();
    let sweep = if sagitta.abs() > radius {
        2.0 * std::f64::consts::PI - 2.0 * half
    } else {
        2.0 * half
    };
    // a bulge to the left means travelling clockwise around the centre
    CurveParam::arc(center, radius, a0, a0 - sagitta.signum() * sweep)
}

/// Four-element layout whose chord is rotated by `angle` about (1,0) and
/// bent into an arc with the given sagitta.
pub fn rotated_chord_layout(angle: f64, sagitta: f64) -> Result<Partition> {
    let (s, c) = angle.sin_cos();
    let a = v(1.0 - c, -s);
    let b = v(1.0 + c, s);
    let chord = arc_through(a, b, sagitta);
    // declared corners are the arc's own endpoints so they agree to round-off
    let (a, b) = (chord.start(), chord.end());
    four_element_layout_with(a, b, chord)
}
