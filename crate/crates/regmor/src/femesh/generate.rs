use std::collections::HashMap;

use super::{NodeRefs, ReferenceMesh, TriangleLagrange};
use crate::geometry::Chart;
use crate::{Result, Vec2};

/// Deduplicates physical points through a hash grid.
struct NodeSet {
    h: f64,
    tol: f64,
    grid: HashMap<(i64, i64), Vec<usize>>,
    points: Vec<Vec2>,
}

impl NodeSet {
    fn new(scale: f64) -> Self {
        NodeSet {
            h: 1e-6 * scale,
            tol: 1e-9 * scale,
            grid: HashMap::new(),
            points: Vec::new(),
        }
    }

    /// Index of `p`, inserting it if new; the flag reports a fresh insertion.
    fn insert(&mut self, p: Vec2) -> (usize, bool) {
        let key = ((p.x / self.h).floor() as i64, (p.y / self.h).floor() as i64);
        for dj in -1..=1 {
            for di in -1..=1 {
                if let Some(list) = self.grid.get(&(key.0 + di, key.1 + dj)) {
                    for &i in list {
                        if (self.points[i] - p).norm() <= self.tol {
                            return (i, false);
                        }
                    }
                }
            }
        }
        let i = self.points.len();
        self.points.push(p);
        self.grid.entry(key).or_default().push(i);
        (i, true)
    }
}

/// Structured degree-p triangulation of every chart element: `cells.0 × cells.1`
/// cells in reference space, each split into two triangles, with all
/// Lagrange nodes placed by Ψ_q (so elements follow curved geometry).
///
/// Coincident nodes on shared facets (and periodic seams) are merged; node
/// references come from the first element that created the node.
pub fn structured_mesh(
    chart: &dyn Chart,
    cells: (usize, usize),
    degree: usize,
) -> Result<(ReferenceMesh, NodeRefs)> {
    assert!(cells.0 >= 1 && cells.1 >= 1);
    let bx = chart.ref_box();
    let lag = TriangleLagrange::new(degree);
    let (m1, m2) = (cells.0 * degree, cells.1 * degree);
    let scale = chart.total_area().sqrt().max(1e-3);
    let mut set = NodeSet::new(scale);
    let mut labels = Vec::new();
    let mut coords = Vec::new();
    let mut elements = Vec::new();
    for q in 0..chart.n_elements() {
        let mut ids = vec![0usize; (m1 + 1) * (m2 + 1)];
        for b in 0..=m2 {
            for a in 0..=m1 {
                let x = Vec2::new(
                    a as f64 / m1 as f64,
                    bx.y0 + bx.height() * b as f64 / m2 as f64,
                );
                let (id, fresh) = set.insert(chart.forward(q, &x));
                if fresh {
                    labels.push(q);
                    coords.push(x);
                }
                ids[a + b * (m1 + 1)] = id;
            }
        }
        let at = |a: usize, b: usize| ids[a + b * (m1 + 1)];
        for cj in 0..cells.1 {
            for ci in 0..cells.0 {
                let o = (ci * degree, cj * degree);
                // lattice offsets spanned by the two reference-triangle edge vectors
                for (e1, e2) in [((1i64, 0i64), (1i64, 1i64)), ((1, 1), (0, 1))] {
                    let conn: Vec<usize> = lag
                        .lattice()
                        .iter()
                        .map(|&(i, j)| {
                            let a = o.0 as i64 + e1.0 * i as i64 + e2.0 * j as i64;
                            let b = o.1 as i64 + e1.1 * i as i64 + e2.1 * j as i64;
                            at(a as usize, b as usize)
                        })
                        .collect();
                    elements.push(conn);
                }
            }
        }
    }
    let mesh = ReferenceMesh::new(degree, set.points, elements)?;
    Ok((mesh, NodeRefs { labels, coords }))
}
