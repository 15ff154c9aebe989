//! Registration sensors: scalar fields on a structured Q3 grid over the
//! reference box of each partition element.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix, CsrMatrix};

use crate::femesh::{MeshLocator, NodeRefs, ReferenceMesh};
use crate::geometry::{Chart, RefBox};
use crate::io::{BinReader, BinWriter};
use crate::quadrature::Rule1d;
use crate::{Error, Result, Vec2};

const CUBIC_NODES: [f64; 4] = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];

/// Cubic Lagrange functions on equispaced nodes of [0,1] and their derivatives.
fn cubic(u: f64) -> ([f64; 4], [f64; 4]) {
    let mut v = [0.0; 4];
    let mut d = [0.0; 4];
    for i in 0..4 {
        let mut val = 1.0;
        let mut der = 0.0;
        let mut denom = 1.0;
        for k in 0..4 {
            if k == i {
                continue;
            }
            let f = u - CUBIC_NODES[k];
            der = der * f + val;
            val *= f;
            denom *= CUBIC_NODES[i] - CUBIC_NODES[k];
        }
        v[i] = val / denom;
        d[i] = der / denom;
    }
    (v, d)
}

/// Tensor Q3 grid with `cells` cells per direction over X1 ∈ [0,1], X2 ∈ [y0,y1];
/// node (a, b) is stored at a + b(3·cells + 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorGrid {
    pub cells: usize,
    pub bx: RefBox,
}

impl SensorGrid {
    pub fn new(cells: usize, bx: RefBox) -> Result<Self> {
        if cells == 0 {
            return Err(Error::Construction(
                "sensor grid needs at least one cell".into(),
            ));
        }
        Ok(SensorGrid { cells, bx })
    }

    /// Default resolution: 19 cells, 58² = 3364 nodes per element.
    pub fn default_for(bx: RefBox) -> Self {
        SensorGrid { cells: 19, bx }
    }

    pub fn nodes_per_side(&self) -> usize {
        3 * self.cells + 1
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes_per_side().pow(2)
    }

    pub fn node(&self, k: usize) -> Vec2 {
        let n = self.nodes_per_side();
        let h = 1.0 / (n - 1) as f64;
        let (a, b) = (k % n, k / n);
        let y = if b == n - 1 {
            self.bx.y1
        } else {
            self.bx.y0 + self.bx.height() * b as f64 * h
        };
        let x = if a == n - 1 { 1.0 } else { a as f64 * h };
        Vec2::new(x, y)
    }

    pub fn nodes(&self) -> Vec<Vec2> {
        (0..self.n_nodes()).map(|k| self.node(k)).collect()
    }

    /// Wraps (periodic) and clamps a point into the box.
    pub fn normalize(&self, x: &Vec2) -> Vec2 {
        let y = self.bx.wrap(x.y);
        Vec2::new(x.x.clamp(0.0, 1.0), y.clamp(self.bx.y0, self.bx.y1))
    }

    /// The 16 node indices of the containing cell, their basis values and
    /// gradients at `x` (assumed normalized).
    pub fn shape(&self, x: &Vec2) -> ([usize; 16], [f64; 16], [Vec2; 16]) {
        let n = self.cells as f64;
        let sx = x.x * n;
        let sy = (x.y - self.bx.y0) / self.bx.height() * n;
        let cx = (sx.floor().max(0.0) as usize).min(self.cells - 1);
        let cy = (sy.floor().max(0.0) as usize).min(self.cells - 1);
        let (vx, dx) = cubic(sx - cx as f64);
        let (vy, dy) = cubic(sy - cy as f64);
        let (jx, jy) = (n, n / self.bx.height());
        let nn = self.nodes_per_side();
        let mut idx = [0; 16];
        let mut val = [0.0; 16];
        let mut grad = [Vec2::zeros(); 16];
        for b in 0..4 {
            for a in 0..4 {
                let l = a + 4 * b;
                idx[l] = (3 * cx + a) + (3 * cy + b) * nn;
                val[l] = vx[a] * vy[b];
                grad[l] = Vec2::new(dx[a] * vy[b] * jx, vx[a] * dy[b] * jy);
            }
        }
        (idx, val, grad)
    }

    /// 1D Q3 mass and stiffness matrices along a side of length `len`.
    fn matrices_1d(&self, len: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let nn = self.nodes_per_side();
        let h = len / self.cells as f64;
        let rule = Rule1d::gauss_legendre(4, 0.0, 1.0);
        let mut m = DMatrix::zeros(nn, nn);
        let mut k = DMatrix::zeros(nn, nn);
        for c in 0..self.cells {
            for (&u, &w) in rule.nodes.iter().zip(&rule.weights) {
                let (v, d) = cubic(u);
                for a in 0..4 {
                    for b in 0..4 {
                        m[(3 * c + a, 3 * c + b)] += w * h * v[a] * v[b];
                        k[(3 * c + a, 3 * c + b)] += w * d[a] * d[b] / h;
                    }
                }
            }
        }
        (m, k)
    }

    /// Sparse 2D stiffness Ky⊗Mx + My⊗Kx.
    fn stiffness(&self) -> CooMatrix<f64> {
        let nn = self.nodes_per_side();
        let (mx, kx) = self.matrices_1d(1.0);
        let (my, ky) = self.matrices_1d(self.bx.height());
        let mut coo = CooMatrix::new(nn * nn, nn * nn);
        for b in 0..nn {
            for b2 in b.saturating_sub(3)..(b + 4).min(nn) {
                for a in 0..nn {
                    for a2 in a.saturating_sub(3)..(a + 4).min(nn) {
                        let v = kx[(a, a2)] * my[(b, b2)] + mx[(a, a2)] * ky[(b, b2)];
                        if v != 0.0 {
                            coo.push(a + b * nn, a2 + b2 * nn, v);
                        }
                    }
                }
            }
        }
        coo
    }
}

/// Per-element nodal values on a [`SensorGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct SensorField {
    grid: SensorGrid,
    values: Vec<Vec<f64>>,
    rescale: Option<(f64, f64)>,
}

impl SensorField {
    pub fn from_values(grid: SensorGrid, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Construction(
                "sensor needs at least one element".into(),
            ));
        }
        for (q, v) in values.iter().enumerate() {
            if v.len() != grid.n_nodes() {
                return Err(Error::Construction(format!(
                    "sensor element {q} has {} values, grid has {} nodes",
                    v.len(),
                    grid.n_nodes()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Construction(format!(
                    "sensor element {q} has non-finite values"
                )));
            }
        }
        Ok(SensorField {
            grid,
            values,
            rescale: None,
        })
    }

    /// Samples `f(q, X)` at the grid nodes of every element.
    pub fn from_fn(
        grid: SensorGrid,
        n_elements: usize,
        f: impl Fn(usize, &Vec2) -> f64,
    ) -> Result<Self> {
        let nodes = grid.nodes();
        let values = (0..n_elements)
            .map(|q| nodes.iter().map(|x| f(q, x)).collect())
            .collect();
        Self::from_values(grid, values)
    }

    pub fn grid(&self) -> &SensorGrid {
        &self.grid
    }

    pub fn n_elements(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self, q: usize) -> &[f64] {
        &self.values[q]
    }

    /// (min, max) before rescaling, if [`SensorField::rescale`] was applied.
    pub fn rescale_record(&self) -> Option<(f64, f64)> {
        self.rescale
    }

    /// Affinely maps the values so the global min is 0 and max is 1. A constant
    /// field becomes identically zero.
    pub fn rescale(&mut self) -> (f64, f64) {
        let lo = self
            .values
            .iter()
            .flatten()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .values
            .iter()
            .flatten()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for v in self.values.iter_mut().flatten() {
            *v = if span > 0.0 {
                ((*v - lo) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
        self.rescale = Some((lo, hi));
        (lo, hi)
    }

    pub fn eval(&self, q: usize, x: &Vec2) -> f64 {
        let (idx, val, _) = self.grid.shape(&self.grid.normalize(x));
        let v = &self.values[q];
        idx.iter().zip(&val).map(|(&i, w)| w * v[i]).sum()
    }

    pub fn grad(&self, q: usize, x: &Vec2) -> Vec2 {
        self.eval_grad(q, x).1
    }

    pub fn eval_grad(&self, q: usize, x: &Vec2) -> (f64, Vec2) {
        let (idx, val, grad) = self.grid.shape(&self.grid.normalize(x));
        let v = &self.values[q];
        let mut s = 0.0;
        let mut g = Vec2::zeros();
        for l in 0..16 {
            s += val[l] * v[idx[l]];
            g += grad[l] * v[idx[l]];
        }
        (s, g)
    }

    /// Σ_q ∫ s_q t_q over the reference box by a per-cell 4×4 Gauss rule.
    pub fn l2_inner(&self, other: &SensorField) -> f64 {
        let rule = Rule1d::gauss_legendre(4, 0.0, 1.0);
        let n = self.grid.cells;
        let h = self.grid.bx.height();
        let w0 = h / (n * n) as f64;
        let mut s = 0.0;
        for q in 0..self.n_elements() {
            for cy in 0..n {
                for cx in 0..n {
                    for (&v, &wv) in rule.nodes.iter().zip(&rule.weights) {
                        for (&u, &wu) in rule.nodes.iter().zip(&rule.weights) {
                            let x = Vec2::new(
                                (cx as f64 + u) / n as f64,
                                self.grid.bx.y0 + h * (cy as f64 + v) / n as f64,
                            );
                            s += w0 * wu * wv * self.eval(q, &x) * other.eval(q, &x);
                        }
                    }
                }
            }
        }
        s
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::new(b"RGMSENSR", 1);
        w.u64(self.grid.cells as u64);
        w.f64(self.grid.bx.y0);
        w.f64(self.grid.bx.y1);
        w.u32(self.grid.bx.periodic as u32);
        let (lo, hi) = self.rescale.unwrap_or((f64::NAN, f64::NAN));
        w.f64(lo);
        w.f64(hi);
        let m = DMatrix::from_fn(self.grid.n_nodes(), self.n_elements(), |i, q| {
            self.values[q][i]
        });
        w.matrix(&m);
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let (mut r, version) = BinReader::new(data, b"RGMSENSR")?;
        if version != 1 {
            return Err(Error::Input(format!(
                "unsupported sensor file version {version}"
            )));
        }
        let cells = r.u64()? as usize;
        let bx = RefBox {
            y0: r.f64()?,
            y1: r.f64()?,
            periodic: r.u32()? != 0,
        };
        let (lo, hi) = (r.f64()?, r.f64()?);
        let m = r.matrix()?;
        let grid = SensorGrid::new(cells, bx).map_err(|e| Error::Input(e.to_string()))?;
        if m.nrows() != grid.n_nodes() {
            return Err(Error::Input(
                "sensor file shape does not match its grid".into(),
            ));
        }
        let values = m
            .column_iter()
            .map(|c| c.iter().cloned().collect())
            .collect();
        let mut s = Self::from_values(grid, values).map_err(|e| Error::Input(e.to_string()))?;
        if lo.is_finite() && hi.is_finite() {
            s.rescale = Some((lo, hi));
        }
        Ok(s)
    }
}

/// s^ext(x) = s(x₁, mod(x₂ + 1/2, 1) − 1/2) for a polar sensor.
pub fn periodic_extend(sensor: &SensorField, x: &Vec2) -> f64 {
    let bx = RefBox::POLAR;
    sensor.eval(0, &Vec2::new(x.x, bx.wrap(x.y)))
}

fn check_snapshot(mesh: &ReferenceMesh, u: &[f64]) -> Result<()> {
    if u.len() != mesh.n_nodes() {
        return Err(Error::Input(format!(
            "snapshot has {} entries, mesh has {} nodes",
            u.len(),
            mesh.n_nodes()
        )));
    }
    if let Some(j) = u.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!("snapshot entry {j} is not finite")));
    }
    Ok(())
}

struct ElementFit {
    data: Vec<usize>,
    shapes: Vec<([usize; 16], [f64; 16])>,
    factor: Option<CscCholesky<f64>>,
}

/// Regularized least-squares fit of mesh data onto each element's grid:
/// (ξ_s K + Σ_j e_j e_jᵀ) s_q = Σ_j u_j e_j, with e_j the grid shape values
/// at the reference coordinates of the nodes labelled q. The factorization
/// depends only on the mesh, so it is computed once and reused.
pub struct GridFitter {
    grid: SensorGrid,
    n_nodes: usize,
    elements: Vec<ElementFit>,
}

impl GridFitter {
    pub fn new(grid: SensorGrid, refs: &NodeRefs, n_elements: usize, xi_s: f64) -> Result<Self> {
        if !(xi_s > 0.0 && xi_s.is_finite()) {
            return Err(Error::Input(format!(
                "sensor smoothing weight must be positive, got {xi_s}"
            )));
        }
        let stiff = grid.stiffness();
        let mut elements = Vec::with_capacity(n_elements);
        for q in 0..n_elements {
            let data: Vec<usize> = (0..refs.labels.len())
                .filter(|&j| refs.labels[j] == q)
                .collect();
            let shapes: Vec<_> = data
                .iter()
                .map(|&j| {
                    let (idx, val, _) = grid.shape(&grid.normalize(&refs.coords[j]));
                    (idx, val)
                })
                .collect();
            let factor = if data.is_empty() {
                None
            } else {
                let mut coo = CooMatrix::new(grid.n_nodes(), grid.n_nodes());
                for (i, j, v) in stiff.triplet_iter() {
                    coo.push(i, j, xi_s * v);
                }
                for (idx, val) in &shapes {
                    for a in 0..16 {
                        for b in 0..16 {
                            coo.push(idx[a], idx[b], val[a] * val[b]);
                        }
                    }
                }
                let csc = CscMatrix::from(&coo);
                Some(CscCholesky::factor(&csc).map_err(|e| {
                    Error::LinearAlgebra(format!(
                        "sensor fit system for element {q} is not SPD: {e:?}"
                    ))
                })?)
            };
            elements.push(ElementFit {
                data,
                shapes,
                factor,
            });
        }
        Ok(GridFitter {
            grid,
            n_nodes: refs.labels.len(),
            elements,
        })
    }

    pub fn fit(&self, u: &[f64]) -> Result<SensorField> {
        if u.len() != self.n_nodes {
            return Err(Error::Input(format!(
                "snapshot has {} entries, expected {}",
                u.len(),
                self.n_nodes
            )));
        }
        let mean = u.iter().sum::<f64>() / u.len() as f64;
        let values = self
            .elements
            .iter()
            .map(|el| match &el.factor {
                None => vec![mean; self.grid.n_nodes()],
                Some(f) => {
                    let mut rhs = DMatrix::zeros(self.grid.n_nodes(), 1);
                    for (&j, (idx, val)) in el.data.iter().zip(&el.shapes) {
                        for a in 0..16 {
                            rhs[(idx[a], 0)] += val[a] * u[j];
                        }
                    }
                    f.solve(&rhs).column(0).iter().cloned().collect()
                }
            })
            .collect();
        SensorField::from_values(self.grid, values)
    }
}

/// Grid-fit sensor in one call.
pub fn sensor_from_grid_fit(
    mesh: &ReferenceMesh,
    u: &[f64],
    refs: &NodeRefs,
    n_elements: usize,
    grid: SensorGrid,
    xi_s: f64,
) -> Result<SensorField> {
    check_snapshot(mesh, u)?;
    GridFitter::new(grid, refs, n_elements, xi_s)?.fit(u)
}

/// H¹ smoothing on the linear sub-triangulation of the mesh with the raw data
/// as Dirichlet trace, sampled at Ψ_q(x̂_j) for every grid node.
pub struct PhysicalSmoother {
    n_nodes: usize,
    interior: Vec<usize>,
    boundary: Vec<usize>,
    factor: CscCholesky<f64>,
    /// rows of (ξK + M) and M restricted to interior rows
    a_rows: CsrMatrix<f64>,
    m_rows: CsrMatrix<f64>,
    grid: SensorGrid,
    samples: Vec<Vec<(Vec<usize>, Vec<f64>)>>,
}

/// Linear-element mass and stiffness on a degree-1 mesh.
fn p1_matrices(sub: &ReferenceMesh) -> (CooMatrix<f64>, CooMatrix<f64>) {
    let n = sub.n_nodes();
    let mut m = CooMatrix::new(n, n);
    let mut k = CooMatrix::new(n, n);
    for e in sub.elements() {
        let p: Vec<Vec2> = e.iter().map(|&i| sub.nodes()[i]).collect();
        let d1 = p[1] - p[0];
        let d2 = p[2] - p[0];
        let area = 0.5 * (d1.x * d2.y - d1.y * d2.x).abs();
        // ∇λ_i up to a common sign, which cancels in the products
        let g: Vec<Vec2> = (0..3)
            .map(|i| {
                let a = p[(i + 1) % 3];
                let b = p[(i + 2) % 3];
                Vec2::new(a.y - b.y, b.x - a.x) / (2.0 * area)
            })
            .collect();
        for a in 0..3 {
            for b in 0..3 {
                let mass = if a == b { area / 6.0 } else { area / 12.0 };
                m.push(e[a], e[b], mass);
                k.push(e[a], e[b], area * g[a].dot(&g[b]));
            }
        }
    }
    (m, k)
}

fn boundary_nodes(sub: &ReferenceMesh) -> Vec<bool> {
    let mut count = std::collections::HashMap::new();
    for e in sub.elements() {
        for a in 0..3 {
            let (i, j) = (e[a], e[(a + 1) % 3]);
            *count.entry((i.min(j), i.max(j))).or_insert(0usize) += 1;
        }
    }
    let mut on = vec![false; sub.n_nodes()];
    for ((i, j), c) in count {
        if c == 1 {
            on[i] = true;
            on[j] = true;
        }
    }
    on
}

fn restrict(
    coo: &CooMatrix<f64>,
    rows: &[Option<usize>],
    cols: &[Option<usize>],
    nr: usize,
    nc: usize,
) -> CooMatrix<f64> {
    let mut out = CooMatrix::new(nr, nc);
    for (i, j, v) in coo.triplet_iter() {
        if let (Some(r), Some(c)) = (rows[i], cols[j]) {
            out.push(r, c, *v);
        }
    }
    out
}

impl PhysicalSmoother {
    /// `chart` holds the reference-parameter geometry Ψ_{q,μ̄}; `xi_s = 0` is
    /// allowed and reduces to interpolation of the raw data.
    pub fn new(
        mesh: &ReferenceMesh,
        chart: &dyn Chart,
        grid: SensorGrid,
        xi_s: f64,
    ) -> Result<Self> {
        if !(xi_s >= 0.0 && xi_s.is_finite()) {
            return Err(Error::Input(format!(
                "sensor smoothing weight must be non-negative, got {xi_s}"
            )));
        }
        let sub = mesh.p1_submesh();
        let n = sub.n_nodes();
        let (m, k) = p1_matrices(&sub);
        let on_b = boundary_nodes(&sub);
        let interior: Vec<usize> = (0..n).filter(|&i| !on_b[i]).collect();
        let boundary: Vec<usize> = (0..n).filter(|&i| on_b[i]).collect();
        let mut imap = vec![None; n];
        for (r, &i) in interior.iter().enumerate() {
            imap[i] = Some(r);
        }
        let all: Vec<Option<usize>> = (0..n).map(Some).collect();
        let mut a = CooMatrix::new(n, n);
        for (i, j, v) in k.triplet_iter() {
            a.push(i, j, xi_s * v);
        }
        for (i, j, v) in m.triplet_iter() {
            a.push(i, j, *v);
        }
        let ni = interior.len();
        let a_ii = restrict(&a, &imap, &imap, ni, ni);
        let factor = CscCholesky::factor(&CscMatrix::from(&a_ii))
            .map_err(|e| Error::LinearAlgebra(format!("smoothing system is not SPD: {e:?}")))?;
        let a_rows = CsrMatrix::from(&restrict(&a, &imap, &all, ni, n));
        let m_rows = CsrMatrix::from(&restrict(&m, &imap, &all, ni, n));
        let locator = MeshLocator::new(&sub);
        let gnodes = grid.nodes();
        let mut samples = Vec::with_capacity(chart.n_elements());
        for q in 0..chart.n_elements() {
            let mut per = Vec::with_capacity(gnodes.len());
            for x in &gnodes {
                let p = chart.forward(q, x);
                let (t, xr) = locator.locate(&p).map_err(|e| {
                    Error::Interpolation(format!(
                        "sensor sample at ({:.6}, {:.6}) from element {q}: {e}",
                        p.x, p.y
                    ))
                })?;
                let w = sub.basis().eval(&xr);
                per.push((sub.elements()[t].clone(), w));
            }
            samples.push(per);
        }
        Ok(PhysicalSmoother {
            n_nodes: n,
            interior,
            boundary,
            factor,
            a_rows,
            m_rows,
            grid,
            samples,
        })
    }

    /// Smoothed nodal field ũ^sm.
    pub fn smooth(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.n_nodes {
            return Err(Error::Input(format!(
                "snapshot has {} entries, expected {}",
                u.len(),
                self.n_nodes
            )));
        }
        let uv = DVector::from_column_slice(u);
        let mut ub = DVector::zeros(self.n_nodes);
        for &i in &self.boundary {
            ub[i] = u[i];
        }
        let rhs = &self.m_rows * &uv - &self.a_rows * &ub;
        let sol = self.factor.solve(&rhs);
        let mut out = u.to_vec();
        for (r, &i) in self.interior.iter().enumerate() {
            out[i] = sol[(r, 0)];
        }
        Ok(out)
    }

    pub fn fit(&self, u: &[f64]) -> Result<SensorField> {
        let sm = self.smooth(u)?;
        let values = self
            .samples
            .iter()
            .map(|per| {
                per.iter()
                    .map(|(conn, w)| conn.iter().zip(w).map(|(&i, wi)| wi * sm[i]).sum())
                    .collect()
            })
            .collect();
        SensorField::from_values(self.grid, values)
    }
}

/// Physical-smoothing sensor in one call.
pub fn sensor_from_physical_smoothing(
    mesh: &ReferenceMesh,
    u: &[f64],
    chart: &dyn Chart,
    grid: SensorGrid,
    xi_s: f64,
) -> Result<SensorField> {
    check_snapshot(mesh, u)?;
    PhysicalSmoother::new(mesh, chart, grid, xi_s)?.fit(u)
}
