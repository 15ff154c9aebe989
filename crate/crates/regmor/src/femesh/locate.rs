use super::ReferenceMesh;
use crate::{Error, Result, Vec2};

const OUTSIDE_TOL: f64 = 1e-6;
const BARY_TOL: f64 = 1e-10;

/// Point location in a (possibly curved) triangular mesh: bucket grid over
/// padded element bounding boxes, then Newton inversion of Ψ_k^hf.
#[derive(Debug, Clone)]
pub struct MeshLocator<'a> {
    mesh: &'a ReferenceMesh,
    nodes: &'a [Vec2],
    lo: Vec2,
    cell: Vec2,
    dims: (usize, usize),
    buckets: Vec<Vec<usize>>,
}

impl<'a> MeshLocator<'a> {
    pub fn new(mesh: &'a ReferenceMesh) -> Self {
        Self::with_nodes(mesh, mesh.nodes())
    }

    /// Locator over the mesh geometry defined by `nodes` (e.g. mapped nodes).
    pub fn with_nodes(mesh: &'a ReferenceMesh, nodes: &'a [Vec2]) -> Self {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = -lo;
        let boxes: Vec<(Vec2, Vec2)> = mesh
            .elements()
            .iter()
            .map(|e| {
                let mut a = Vec2::new(f64::INFINITY, f64::INFINITY);
                let mut b = -a;
                for &i in e {
                    a = a.inf(&nodes[i]);
                    b = b.sup(&nodes[i]);
                }
                let pad = 0.1 * (b - a).norm() + OUTSIDE_TOL;
                (a.add_scalar(-pad), b.add_scalar(pad))
            })
            .collect();
        for (a, b) in &boxes {
            lo = lo.inf(a);
            hi = hi.sup(b);
        }
        let n = (mesh.n_elements() as f64).sqrt().ceil().max(1.0) as usize;
        let dims = (n, n);
        let cell = Vec2::new((hi.x - lo.x) / n as f64, (hi.y - lo.y) / n as f64);
        let mut buckets = vec![Vec::new(); n * n];
        let idx = |v: f64, o: f64, h: f64| (((v - o) / h).floor().max(0.0) as usize).min(n - 1);
        for (k, (a, b)) in boxes.iter().enumerate() {
            for j in idx(a.y, lo.y, cell.y)..=idx(b.y, lo.y, cell.y) {
                for i in idx(a.x, lo.x, cell.x)..=idx(b.x, lo.x, cell.x) {
                    buckets[i + j * n].push(k);
                }
            }
        }
        MeshLocator {
            mesh,
            nodes,
            lo,
            cell,
            dims,
            buckets,
        }
    }

    fn invert(&self, k: usize, p: &Vec2) -> Option<Vec2> {
        let mut x = Vec2::new(1.0 / 3.0, 1.0 / 3.0);
        for _ in 0..30 {
            let r = self.mesh.elemental_map_eval(k, &x, Some(self.nodes)) - p;
            let j = self.mesh.elemental_jacobian(k, &x, Some(self.nodes));
            let step = j.try_inverse()? * r;
            x -= step;
            x.x = x.x.clamp(-1.0, 2.0);
            x.y = x.y.clamp(-1.0, 2.0);
            if step.norm() < 1e-15 {
                break;
            }
        }
        x.iter().all(|v| v.is_finite()).then_some(x)
    }

    fn project(x: &Vec2) -> Vec2 {
        let mut a = x.x.max(0.0);
        let mut b = x.y.max(0.0);
        let s = a + b;
        if s > 1.0 {
            a /= s;
            b /= s;
        }
        Vec2::new(a, b)
    }

    /// Containing element (lowest index on ties) and reference coordinates.
    pub fn locate(&self, p: &Vec2) -> Result<(usize, Vec2)> {
        let (n1, n2) = self.dims;
        let i = ((p.x - self.lo.x) / self.cell.x).floor();
        let j = ((p.y - self.lo.y) / self.cell.y).floor();
        let mut best: Option<(f64, usize, Vec2)> = None;
        if i >= 0.0 && j >= 0.0 && (i as usize) < n1 && (j as usize) < n2 {
            for &k in &self.buckets[i as usize + j as usize * n1] {
                let Some(x) = self.invert(k, p) else { continue };
                let viol = (-x.x).max(-x.y).max(x.x + x.y - 1.0);
                if viol <= BARY_TOL {
                    return Ok((k, Self::project(&x)));
                }
                let xp = Self::project(&x);
                let d = (self.mesh.elemental_map_eval(k, &xp, Some(self.nodes)) - p).norm();
                if best.is_none_or(|b| d < b.0) {
                    best = Some((d, k, xp));
                }
            }
        }
        match best {
            Some((d, k, x)) if d <= OUTSIDE_TOL => Ok((k, x)),
            _ => Err(Error::Interpolation(format!(
                "point ({}, {}) lies outside every mesh element",
                p.x, p.y
            ))),
        }
    }

    /// Evaluates the FE field `u` at physical points.
    pub fn interpolate(&self, u: &[f64], points: &[Vec2]) -> Result<Vec<f64>> {
        let b = self.mesh.basis();
        points
            .iter()
            .map(|p| {
                let (k, x) = self.locate(p)?;
                let l = b.eval(&x);
                Ok(self.mesh.elements()[k]
                    .iter()
                    .zip(&l)
                    .map(|(&i, w)| u[i] * w)
                    .sum())
            })
            .collect()
    }
}
