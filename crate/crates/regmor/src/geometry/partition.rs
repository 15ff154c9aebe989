use std::fmt::Write as _;

use super::gordon_hall::Inverse;
use super::{facet_point, Chart, CurveParam, QuadElement, RefBox, FACETS};
use crate::io::Tokens;
use crate::{Error, Mat2, Result, Vec2};

const INTERFACE_TOL: f64 = 1e-10;

/// Neighbour across a facet: element index, its facet, and whether both
/// facet parameterizations run in the same direction (orif = 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FacetLink {
    pub element: usize,
    pub facet: usize,
    pub same_orientation: bool,
}

/// Quadrilateral decomposition {Ω_q} with Gordon-Hall maps Ψ_q and facet
/// connectivity.
#[derive(Debug, Clone)]
pub struct Partition {
    elements: Vec<QuadElement>,
    links: Vec<[Option<FacetLink>; FACETS]>,
    areas: Vec<f64>,
    bboxes: Vec<(Vec2, Vec2)>,
}

impl Partition {
    pub fn new(
        elements: Vec<QuadElement>,
        links: Vec<[Option<FacetLink>; FACETS]>,
    ) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::Construction("partition has no elements".into()));
        }
        if links.len() != elements.len() {
            return Err(Error::Construction(
                "connectivity size does not match element count".into(),
            ));
        }
        let n = elements.len();
        for (q, row) in links.iter().enumerate() {
            for (l, link) in row.iter().enumerate() {
                let Some(lk) = link else { continue };
                if lk.element >= n || lk.facet >= FACETS {
                    return Err(Error::Construction(format!(
                        "facet ({q},{l}) links out of range"
                    )));
                }
                if lk.element == q {
                    return Err(Error::Construction(format!(
                        "facet ({q},{l}) links to its own element"
                    )));
                }
                match links[lk.element][lk.facet] {
                    Some(back) if back.element == q && back.facet == l => {
                        if back.same_orientation != lk.same_orientation {
                            return Err(Error::Construction(format!(
                                "orientation flags differ across facet ({q},{l})"
                            )));
                        }
                    }
                    _ => {
                        return Err(Error::Construction(format!(
                            "connectivity tables are not symmetric at facet ({q},{l})"
                        )))
                    }
                }
            }
        }
        let mut areas = Vec::with_capacity(n);
        let mut bboxes = Vec::with_capacity(n);
        for e in &elements {
            let rule = crate::quadrature::Rule1d::gauss_legendre(16, 0.0, 1.0);
            let mut a = 0.0;
            for (&y, &wy) in rule.nodes.iter().zip(&rule.weights) {
                for (&x, &wx) in rule.nodes.iter().zip(&rule.weights) {
                    a += wx * wy * e.jacobian(&Vec2::new(x, y)).determinant();
                }
            }
            if !(a > 0.0) {
                return Err(Error::Construction(
                    "element map is not orientation preserving".into(),
                ));
            }
            areas.push(a);
            let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
            let mut hi = -lo;
            for c in e.edges() {
                for k in 0..=64 {
                    let p = c.eval(k as f64 / 64.0);
                    lo = lo.inf(&p);
                    hi = hi.sup(&p);
                }
            }
            let pad = 0.05 * (hi - lo).norm() + 1e-9;
            bboxes.push((lo.add_scalar(-pad), hi.add_scalar(pad)));
        }
        let p = Partition {
            elements,
            links,
            areas,
            bboxes,
        };
        p.check_interfaces()?;
        Ok(p)
    }

    /// Builds a partition from the 4 × N_dd tables in 1-based form (−1 marks
    /// boundary facets; orif entries are 0/1).
    pub fn from_tables(
        elements: Vec<QuadElement>,
        qext: &[Vec<i32>],
        ell_ext: &[Vec<i32>],
        orif: &[Vec<i32>],
    ) -> Result<Self> {
        let n = elements.len();
        let shape_ok = |t: &[Vec<i32>]| t.len() == FACETS && t.iter().all(|r| r.len() == n);
        if !(shape_ok(qext) && shape_ok(ell_ext) && shape_ok(orif)) {
            return Err(Error::Construction(format!(
                "connectivity tables must be 4 x {n}"
            )));
        }
        let mut links = vec![[None; FACETS]; n];
        for l in 0..FACETS {
            for q in 0..n {
                let qe = qext[l][q];
                if qe == -1 {
                    continue;
                }
                let le = ell_ext[l][q];
                if qe < 1 || qe as usize > n || !(1..=4).contains(&le) {
                    return Err(Error::Construction(format!(
                        "invalid table entry at facet ({l},{q})"
                    )));
                }
                links[q][l] = Some(FacetLink {
                    element: qe as usize - 1,
                    facet: le as usize - 1,
                    same_orientation: orif[l][q] != 0,
                });
            }
        }
        Self::new(elements, links)
    }

    /// Detects facet connectivity geometrically (shared endpoints and midpoint).
    pub fn with_detected_connectivity(elements: Vec<QuadElement>) -> Result<Self> {
        let n = elements.len();
        let mut links = vec![[None; FACETS]; n];
        let scale = elements
            .iter()
            .map(|e| e.diameter())
            .fold(0.0, f64::max)
            .max(1.0);
        let close = |a: Vec2, b: Vec2| (a - b).norm() <= 1e-9 * scale;
        for q in 0..n {
            for l in 0..FACETS {
                let c = elements[q].edge(l);
                for q2 in 0..n {
                    if q2 == q {
                        continue;
                    }
                    for l2 in 0..FACETS {
                        let c2 = elements[q2].edge(l2);
                        let mid = close(c.eval(0.5), c2.eval(0.5));
                        let same = close(c.start(), c2.start()) && close(c.end(), c2.end());
                        let rev = close(c.start(), c2.end()) && close(c.end(), c2.start());
                        if mid && (same || rev) {
                            if links[q][l].is_some() {
                                return Err(Error::Construction(format!(
                                    "facet ({q},{l}) matches more than one neighbour"
                                )));
                            }
                            links[q][l] = Some(FacetLink {
                                element: q2,
                                facet: l2,
                                same_orientation: same,
                            });
                        }
                    }
                }
            }
        }
        Self::new(elements, links)
    }

    fn check_interfaces(&self) -> Result<()> {
        for (q, row) in self.links.iter().enumerate() {
            for (l, link) in row.iter().enumerate() {
                let Some(lk) = link else { continue };
                let scale = self.elements[q].diameter().max(1.0);
                for k in 0..20 {
                    let t = (k as f64 + 0.5) / 20.0;
                    let s = if lk.same_orientation { t } else { 1.0 - t };
                    let a = self.elements[q].forward(&facet_point(l, t));
                    let b = self.elements[lk.element].forward(&facet_point(lk.facet, s));
                    if (a - b).norm() > INTERFACE_TOL * scale {
                        return Err(Error::Construction(format!(
                            "facet ({q},{l}) and ({},{}) do not coincide",
                            lk.element, lk.facet
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn elements(&self) -> &[QuadElement] {
        &self.elements
    }

    pub fn element(&self, q: usize) -> &QuadElement {
        &self.elements[q]
    }

    pub fn link(&self, q: usize, facet: usize) -> Option<FacetLink> {
        self.links[q][facet]
    }

    pub fn n_interior_facets(&self) -> usize {
        self.links.iter().flatten().filter(|l| l.is_some()).count() / 2
    }

    /// Interior facet pairs ((q, ℓ), link) with (q, ℓ) listed first in
    /// lexicographic order; each interface appears once.
    pub fn interfaces(&self) -> Vec<(usize, usize, FacetLink)> {
        let mut out = Vec::new();
        for (q, row) in self.links.iter().enumerate() {
            for (l, link) in row.iter().enumerate() {
                if let Some(lk) = link {
                    if (q, l) < (lk.element, lk.facet) {
                        out.push((q, l, *lk));
                    }
                }
            }
        }
        out
    }

    /// (qext, ell_ext, orif) as 4 × N_dd tables, 1-based, −1 for boundary facets.
    pub fn tables(&self) -> (Vec<Vec<i32>>, Vec<Vec<i32>>, Vec<Vec<i32>>) {
        let n = self.elements.len();
        let mut qext = vec![vec![-1; n]; FACETS];
        let mut lext = vec![vec![-1; n]; FACETS];
        let mut orif = vec![vec![1; n]; FACETS];
        for q in 0..n {
            for l in 0..FACETS {
                if let Some(lk) = self.links[q][l] {
                    qext[l][q] = lk.element as i32 + 1;
                    lext[l][q] = lk.facet as i32 + 1;
                    orif[l][q] = lk.same_orientation as i32;
                }
            }
        }
        (qext, lext, orif)
    }

    /// Serializes to the text partition format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "partition {}", self.elements.len()).unwrap();
        for (q, e) in self.elements.iter().enumerate() {
            let c = e.corners();
            writeln!(
                s,
                "element {} corners {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}",
                q + 1,
                c[0].x, c[0].y, c[1].x, c[1].y, c[2].x, c[2].y, c[3].x, c[3].y
            )
            .unwrap();
            for edge in e.edges() {
                write_curve(&mut s, edge);
            }
        }
        let (qe, le, of) = self.tables();
        for (name, t) in [("qext", qe), ("ell_ext", le), ("orif", of)] {
            writeln!(s, "{name}").unwrap();
            for row in t {
                let r: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(s, "{}", r.join(" ")).unwrap();
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tok = Tokens::new(text);
        tok.expect("partition")?;
        let n = tok.usize()?;
        let mut elements = Vec::with_capacity(n);
        for q in 0..n {
            tok.expect("element")?;
            let idx = tok.usize()?;
            if idx != q + 1 {
                return Err(Error::Input(format!(
                    "expected element {}, found {idx}",
                    q + 1
                )));
            }
            tok.expect("corners")?;
            let mut corners = [Vec2::zeros(); 4];
            for c in corners.iter_mut() {
                *c = Vec2::new(tok.f64()?, tok.f64()?);
            }
            let mut edges = Vec::with_capacity(4);
            for _ in 0..4 {
                edges.push(read_curve(&mut tok)?);
            }
            let mut it = edges.into_iter();
            let e = QuadElement::new(
                it.next().unwrap(),
                it.next().unwrap(),
                it.next().unwrap(),
                it.next().unwrap(),
            )?;
            for (a, b) in e.corners().iter().zip(&corners) {
                if (a - b).norm() > 1e-12 * (1.0 + b.norm()) {
                    return Err(Error::Construction(format!(
                        "element {} declared corner ({}, {}) does not match its edges",
                        q + 1,
                        b.x,
                        b.y
                    )));
                }
            }
            elements.push(e);
        }
        let mut tables = Vec::new();
        for name in ["qext", "ell_ext", "orif"] {
            tok.expect(name)?;
            let mut t = vec![vec![0i32; n]; FACETS];
            for row in t.iter_mut() {
                for v in row.iter_mut() {
                    *v = tok.i32()?;
                }
            }
            tables.push(t);
        }
        Self::from_tables(elements, &tables[0], &tables[1], &tables[2])
    }
}

fn write_curve(s: &mut String, c: &CurveParam) {
    match c {
        CurveParam::Line { start, end } => writeln!(
            s,
            "line {:.17e} {:.17e} {:.17e} {:.17e}",
            start.x, start.y, end.x, end.y
        )
        .unwrap(),
        CurveParam::Arc {
            center,
            radius,
            start_angle,
            end_angle,
        } => writeln!(
            s,
            "arc {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}",
            center.x, center.y, radius, start_angle, end_angle
        )
        .unwrap(),
        CurveParam::Polynomial { cx, cy } => {
            writeln!(s, "chebyshev {}", cx.len()).unwrap();
            for (a, b) in cx.iter().zip(cy) {
                writeln!(s, "{a:.17e} {b:.17e}").unwrap();
            }
        }
        CurveParam::Table { points } => {
            writeln!(s, "table {}", points.len()).unwrap();
            for p in points {
                writeln!(s, "{:.17e} {:.17e}", p.x, p.y).unwrap();
            }
        }
    }
}

fn read_curve(tok: &mut Tokens) -> Result<CurveParam> {
    let kind = tok.word()?;
    match kind {
        "line" => {
            let a = Vec2::new(tok.f64()?, tok.f64()?);
            let b = Vec2::new(tok.f64()?, tok.f64()?);
            Ok(CurveParam::line(a, b))
        }
        "arc" => {
            let c = Vec2::new(tok.f64()?, tok.f64()?);
            Ok(CurveParam::arc(c, tok.f64()?, tok.f64()?, tok.f64()?))
        }
        "chebyshev" => {
            let n = tok.usize()?;
            let (mut cx, mut cy) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for _ in 0..n {
                cx.push(tok.f64()?);
                cy.push(tok.f64()?);
            }
            if n == 0 {
                return Err(Error::Input("empty chebyshev curve".into()));
            }
            Ok(CurveParam::Polynomial { cx, cy })
        }
        "table" => {
            let n = tok.usize()?;
            let mut pts = Vec::with_capacity(n);
            for _ in 0..n {
                pts.push(Vec2::new(tok.f64()?, tok.f64()?));
            }
            CurveParam::table(pts)
        }
        other => Err(Error::Input(format!("unknown edge type '{other}'"))),
    }
}

impl Chart for Partition {
    fn n_elements(&self) -> usize {
        self.elements.len()
    }

    fn ref_box(&self) -> RefBox {
        RefBox::UNIT
    }

    fn forward(&self, q: usize, x: &Vec2) -> Vec2 {
        self.elements[q].forward(x)
    }

    fn jacobian(&self, q: usize, x: &Vec2) -> Mat2 {
        self.elements[q].jacobian(x)
    }

    fn locate(&self, p: &Vec2) -> Result<(usize, Vec2)> {
        let mut failed = false;
        for (q, e) in self.elements.iter().enumerate() {
            let (lo, hi) = &self.bboxes[q];
            if p.x < lo.x || p.y < lo.y || p.x > hi.x || p.y > hi.y {
                continue;
            }
            match e.invert(p) {
                Inverse::Inside(x) => return Ok((q, x)),
                Inverse::Outside(_) => {}
                Inverse::Failed => failed = true,
            }
        }
        if failed {
            Err(Error::Inversion(format!(
                "could not invert element maps at ({}, {})",
                p.x, p.y
            )))
        } else {
            Err(Error::Domain(format!(
                "point ({}, {}) is outside every partition element",
                p.x, p.y
            )))
        }
    }

    fn element_area(&self, q: usize) -> f64 {
        self.areas[q]
    }
}
