//! Displacement spaces: tensor Lagrange (or Lagrange × Fourier) fields on the
//! reference box of each element, constrained to keep facets in place and to
//! glue across interfaces, with an orthonormal basis in the mapping norm.

mod basis1d;

pub use basis1d::{Basis1d, FourierBasis, LagrangeBasis, Tab1d};

use nalgebra::{DMatrix, DVector, SVD};

use crate::geometry::{
    facet_normal_component, facet_point, unit_square, Chart, Partition, RefBox, FACETS,
};
use crate::io::{BinReader, BinWriter};
use crate::quadrature::{gauss_lobatto_nodes, Rule1d};
use crate::{Error, Mat2, Result, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    Rect,
    Polar,
    Dd,
}

/// Which mapping norm defines the Gramian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormVariant {
    /// Σ_q |Ω_q| ‖φ_q‖²_{H²} on the reference square.
    Standard,
    /// H² norm of the pushed-forward field through the affine fit of each element.
    Modified,
}

/// Tensor basis values and first derivatives at a set of points
/// (rows: points, columns: local functions l = i + j n1).
#[derive(Debug, Clone)]
pub struct LocalTab {
    pub v: DMatrix<f64>,
    pub dx: DMatrix<f64>,
    pub dy: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct DisplacementSpace {
    kind: SpaceKind,
    variant: NormVariant,
    degree: usize,
    fourier_order: usize,
    n_dd: usize,
    bx: Basis1d,
    by: Basis1d,
    constraints: DMatrix<f64>,
    basis: DMatrix<f64>,
    gram: DMatrix<f64>,
    a_stab: DMatrix<f64>,
    full_dim: usize,
}

/// Scalar Gram matrices of the tensor basis: full H² with gradients and
/// Hessians transformed by `a_inv` (∇ ↦ A^{-T}∇), and the untransformed H²
/// seminorm.
fn scalar_grams(
    bx: &Basis1d,
    by: &Basis1d,
    y_box: RefBox,
    a_inv: &Mat2,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let rx = Rule1d::gauss_legendre(bx.dim() + 1, 0.0, 1.0);
    let ry = match by {
        Basis1d::Lagrange(_) => Rule1d::gauss_legendre(by.dim() + 1, y_box.y0, y_box.y1),
        Basis1d::Fourier(_) => Rule1d::periodic_trapezoid(2 * by.dim() + 2, y_box.y0, y_box.y1),
    };
    let tx = bx.tabulate(&rx.nodes);
    let ty = by.tabulate(&ry.nodes);
    let (n1, n2) = (bx.dim(), by.dim());
    let np = rx.len() * ry.len();
    let nl = n1 * n2;
    // derivative tables: value, ∂1, ∂2, ∂11, ∂12, ∂22
    let mut d: Vec<DMatrix<f64>> = (0..6).map(|_| DMatrix::zeros(np, nl)).collect();
    let mut w = DVector::zeros(np);
    for b in 0..ry.len() {
        for a in 0..rx.len() {
            let p = a + b * rx.len();
            w[p] = (rx.weights[a] * ry.weights[b]).sqrt();
            for j in 0..n2 {
                for i in 0..n1 {
                    let l = i + j * n1;
                    d[0][(p, l)] = tx.v[(a, i)] * ty.v[(b, j)];
                    d[1][(p, l)] = tx.d1[(a, i)] * ty.v[(b, j)];
                    d[2][(p, l)] = tx.v[(a, i)] * ty.d1[(b, j)];
                    d[3][(p, l)] = tx.d2[(a, i)] * ty.v[(b, j)];
                    d[4][(p, l)] = tx.d1[(a, i)] * ty.d1[(b, j)];
                    d[5][(p, l)] = tx.v[(a, i)] * ty.d2[(b, j)];
                }
            }
        }
    }
    for m in d.iter_mut() {
        for mut col in m.column_iter_mut() {
            col.component_mul_assign(&w);
        }
    }
    let gram_of = |mats: &[DMatrix<f64>]| {
        let mut g = DMatrix::zeros(nl, nl);
        for m in mats {
            g += m.transpose() * m;
        }
        g
    };
    let semi = gram_of(&[d[3].clone(), d[4].clone(), d[4].clone(), d[5].clone()]);
    // transformed gradient components g'_k = Σ_m Ainv[m,k] ∂_m
    let t = a_inv;
    let g1 = &d[1] * t[(0, 0)] + &d[2] * t[(1, 0)];
    let g2 = &d[1] * t[(0, 1)] + &d[2] * t[(1, 1)];
    let hess = |m: usize, n: usize| match (m, n) {
        (0, 0) => &d[3],
        (1, 1) => &d[5],
        _ => &d[4],
    };
    let mut h = Vec::with_capacity(4);
    for k in 0..2 {
        for l in 0..2 {
            let mut acc = DMatrix::zeros(np, nl);
            for m in 0..2 {
                for n in 0..2 {
                    let c = t[(m, k)] * t[(n, l)];
                    if c != 0.0 {
                        acc += hess(m, n) * c;
                    }
                }
            }
            h.push(acc);
        }
    }
    let mut full = gram_of(&[d[0].clone(), g1, g2]);
    full += gram_of(&h);
    (symmetrize(full), symmetrize(semi))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Affine fit A = [((P10−P00)+(P11−P01))/2, ((P01−P00)+(P11−P10))/2] of a quadrilateral.
pub fn affine_fit(corners: &[Vec2; 4]) -> Mat2 {
    let [p00, p10, p11, p01] = *corners;
    let c0 = ((p10 - p00) + (p11 - p01)) * 0.5;
    let c1 = ((p01 - p00) + (p11 - p10)) * 0.5;
    Mat2::from_columns(&[c0, c1])
}

/// Basis of the null space of `c`, with untouched coordinates as unit columns.
fn null_space(c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = c.ncols();
    let touched: Vec<usize> = (0..n)
        .filter(|&k| c.column(k).iter().any(|v| *v != 0.0))
        .collect();
    let free: Vec<usize> = (0..n)
        .filter(|k| touched.binary_search(k).is_err())
        .collect();
    let mut cols: Vec<DVector<f64>> = free
        .iter()
        .map(|&k| {
            let mut e = DVector::zeros(n);
            e[k] = 1.0;
            e
        })
        .collect();
    if !touched.is_empty() {
        let t = touched.len();
        let rows = c.nrows().max(t);
        let mut sub = DMatrix::zeros(rows, t);
        for (jj, &k) in touched.iter().enumerate() {
            for r in 0..c.nrows() {
                sub[(r, jj)] = c[(r, k)];
            }
        }
        let svd = SVD::new(sub, false, true);
        let vt = svd.v_t.expect("right singular vectors requested");
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let tol = 1e-10 * smax;
        for (r, &s) in svd.singular_values.iter().enumerate() {
            if smax == 0.0 || s <= tol {
                let mut v = DVector::zeros(n);
                for (jj, &k) in touched.iter().enumerate() {
                    v[k] = vt[(r, jj)];
                }
                cols.push(v);
            }
        }
    }
    if cols.is_empty() {
        return DMatrix::zeros(n, 0);
    }
    DMatrix::from_columns(&cols)
}

/// G-orthonormalizes the columns of `n` by two Cholesky-QR passes and fixes
/// signs so each column's largest-magnitude entry is positive.
fn gram_orthonormalize(n: DMatrix<f64>, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut b = n;
    for _ in 0..2 {
        let k = symmetrize(b.transpose() * g * &b);
        let chol = k.cholesky().ok_or_else(|| {
            Error::LinearAlgebra(
                "mapping Gramian is not positive definite on the null space".into(),
            )
        })?;
        let y = chol
            .l()
            .solve_lower_triangular(&b.transpose())
            .ok_or_else(|| Error::LinearAlgebra("singular Cholesky factor".into()))?;
        b = y.transpose();
    }
    for mut col in b.column_iter_mut() {
        let mut best = 0;
        for (r, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = r;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
    Ok(b)
}

impl DisplacementSpace {
    fn n1(&self) -> usize {
        self.bx.dim()
    }

    fn n2(&self) -> usize {
        self.by.dim()
    }

    /// Number of local tensor functions per element and component.
    pub fn n_local(&self) -> usize {
        self.n1() * self.n2()
    }

    /// Raw index 𝙸(i, j, q, d).
    pub fn raw_index(&self, i: usize, j: usize, q: usize, d: usize) -> usize {
        i + j * self.n1() + self.n_local() * (q + self.n_dd * d)
    }

    /// Start of the (q, d) block in raw coefficient vectors.
    pub fn offset(&self, q: usize, d: usize) -> usize {
        self.raw_index(0, 0, q, d)
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn variant(&self) -> NormVariant {
        self.variant
    }

    /// J (or J_r for polar spaces).
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn fourier_order(&self) -> usize {
        self.fourier_order
    }

    pub fn n_elements(&self) -> usize {
        self.n_dd
    }

    pub fn ref_box(&self) -> RefBox {
        match self.kind {
            SpaceKind::Polar => RefBox::POLAR,
            _ => RefBox::UNIT,
        }
    }

    /// Length of raw coefficient vectors.
    pub fn raw_dim(&self) -> usize {
        2 * self.n_dd * self.n_local()
    }

    /// Number of reduced coefficients M.
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Dimension of the constrained ambient space before any restriction.
    pub fn full_dim(&self) -> usize {
        self.full_dim
    }

    /// Raw × M matrix B realizing W_M.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn a_stab(&self) -> &DMatrix<f64> {
        &self.a_stab
    }

    pub fn constraints(&self) -> &DMatrix<f64> {
        &self.constraints
    }

    /// Raw coefficients W_M a.
    pub fn expand(&self, a: &DVector<f64>) -> DVector<f64> {
        &self.basis * a
    }

    /// Tensor basis values and derivatives at one reference point.
    pub fn local_eval(&self, x: &Vec2) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (vx, dx, _) = self.bx.eval(x.x);
        let (vy, dy, _) = self.by.eval(x.y);
        let (n1, n2) = (self.n1(), self.n2());
        let mut v = vec![0.0; n1 * n2];
        let mut g1 = vec![0.0; n1 * n2];
        let mut g2 = vec![0.0; n1 * n2];
        for j in 0..n2 {
            for i in 0..n1 {
                let l = i + j * n1;
                v[l] = vx[i] * vy[j];
                g1[l] = dx[i] * vy[j];
                g2[l] = vx[i] * dy[j];
            }
        }
        (v, g1, g2)
    }

    /// Local values only; exact Kronecker deltas at the tensor nodes.
    pub fn local_values(&self, x: &Vec2) -> Vec<f64> {
        let vx = self.bx.values(x.x);
        let vy = self.by.values(x.y);
        let n1 = self.n1();
        let mut v = vec![0.0; n1 * self.n2()];
        for (j, &b) in vy.iter().enumerate() {
            for (i, &a) in vx.iter().enumerate() {
                v[i + j * n1] = a * b;
            }
        }
        v
    }

    pub fn tabulate(&self, points: &[Vec2]) -> LocalTab {
        let nl = self.n_local();
        let mut t = LocalTab {
            v: DMatrix::zeros(points.len(), nl),
            dx: DMatrix::zeros(points.len(), nl),
            dy: DMatrix::zeros(points.len(), nl),
        };
        for (r, x) in points.iter().enumerate() {
            let (v, g1, g2) = self.local_eval(x);
            for l in 0..nl {
                t.v[(r, l)] = v[l];
                t.dx[(r, l)] = g1[l];
                t.dy[(r, l)] = g2[l];
            }
        }
        t
    }

    /// `table · B[(q,d) block]`: maps reduced coefficients to values of
    /// φ_{q,d} at the tabulated points.
    pub fn element_operator(&self, q: usize, d: usize, table: &DMatrix<f64>) -> DMatrix<f64> {
        table * self.basis.rows(self.offset(q, d), self.n_local())
    }

    pub fn eval_raw(&self, raw: &[f64], q: usize, x: &Vec2) -> Vec2 {
        let v = self.local_values(x);
        let mut out = Vec2::zeros();
        for d in 0..2 {
            let o = self.offset(q, d);
            out[d] = v.iter().zip(&raw[o..o + v.len()]).map(|(a, b)| a * b).sum();
        }
        out
    }

    /// ∇φ_q(X): entry (d, k) = ∂φ_{q,d}/∂X_k.
    pub fn grad_raw(&self, raw: &[f64], q: usize, x: &Vec2) -> Mat2 {
        let (_, g1, g2) = self.local_eval(x);
        let mut out = Mat2::zeros();
        for d in 0..2 {
            let c = &raw[self.offset(q, d)..self.offset(q, d) + g1.len()];
            out[(d, 0)] = g1.iter().zip(c).map(|(a, b)| a * b).sum();
            out[(d, 1)] = g2.iter().zip(c).map(|(a, b)| a * b).sum();
        }
        out
    }

    pub fn eval(&self, a: &DVector<f64>, q: usize, x: &Vec2) -> Vec2 {
        self.eval_raw(self.expand(a).as_slice(), q, x)
    }

    pub fn gradient(&self, a: &DVector<f64>, q: usize, x: &Vec2) -> Mat2 {
        self.grad_raw(self.expand(a).as_slice(), q, x)
    }

    /// det ∇Φ_q = det(I + ∇φ_q).
    pub fn jacobian_det(&self, a: &DVector<f64>, q: usize, x: &Vec2) -> f64 {
        (Mat2::identity() + self.gradient(a, q, x)).determinant()
    }

    /// ((u, v)) for raw coefficient vectors.
    pub fn inner_raw(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(&(&self.gram * v))
    }

    /// ((W_M a, W_M b)); equals a·b for orthonormal bases.
    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.inner_raw(&self.expand(a), &self.expand(b))
    }

    /// max |C u| over the assembled constraints.
    pub fn constraint_residual(&self, raw: &DVector<f64>) -> f64 {
        if self.constraints.nrows() == 0 {
            return 0.0;
        }
        (&self.constraints * raw).amax()
    }

    /// Same space with basis B V (V has orthonormal columns for an isometric
    /// restriction) and stabilization VᵀA_stab V.
    pub fn restricted(&self, v: &DMatrix<f64>) -> Result<DisplacementSpace> {
        if v.nrows() != self.dim() {
            return Err(Error::Construction(format!(
                "restriction has {} rows, space has dimension {}",
                v.nrows(),
                self.dim()
            )));
        }
        let mut s = self.clone();
        s.basis = &self.basis * v;
        s.a_stab = symmetrize(v.transpose() * &self.a_stab * v);
        Ok(s)
    }

    /// Serializes the space to the binary cache format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::new(b"RGMSPACE", 1);
        w.u32(match self.kind {
            SpaceKind::Rect => 0,
            SpaceKind::Polar => 1,
            SpaceKind::Dd => 2,
        });
        w.u32(match self.variant {
            NormVariant::Standard => 0,
            NormVariant::Modified => 1,
        });
        for v in [
            self.degree,
            self.fourier_order,
            self.n_dd,
            self.full_dim,
            self.dim(),
        ] {
            w.u64(v as u64);
        }
        w.matrix(&self.basis);
        w.matrix(&self.gram);
        w.matrix(&self.a_stab);
        w.matrix(&self.constraints);
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let (mut r, version) = BinReader::new(data, b"RGMSPACE")?;
        if version != 1 {
            return Err(Error::Input(format!(
                "unsupported space cache version {version}"
            )));
        }
        let kind = match r.u32()? {
            0 => SpaceKind::Rect,
            1 => SpaceKind::Polar,
            2 => SpaceKind::Dd,
            k => return Err(Error::Input(format!("unknown space kind {k}"))),
        };
        let variant = match r.u32()? {
            0 => NormVariant::Standard,
            1 => NormVariant::Modified,
            k => return Err(Error::Input(format!("unknown norm variant {k}"))),
        };
        let mut hdr = [0usize; 5];
        for h in hdr.iter_mut() {
            *h = r.u64()? as usize;
        }
        let [degree, fourier_order, n_dd, full_dim, m] = hdr;
        if degree < 2 || n_dd == 0 || degree > 64 || fourier_order > 256 {
            return Err(Error::Input("corrupt space cache header".into()));
        }
        let (bx, by) = bases(kind, degree, fourier_order);
        let basis = r.matrix()?;
        let gram = r.matrix()?;
        let a_stab = r.matrix()?;
        let constraints = r.matrix()?;
        let raw = 2 * n_dd * bx.dim() * by.dim();
        if basis.nrows() != raw
            || basis.ncols() != m
            || gram.shape() != (raw, raw)
            || a_stab.shape() != (m, m)
            || constraints.ncols() != raw
            || !r.at_end()
        {
            return Err(Error::Input("space cache shapes are inconsistent".into()));
        }
        Ok(DisplacementSpace {
            kind,
            variant,
            degree,
            fourier_order,
            n_dd,
            bx,
            by,
            constraints,
            basis,
            gram,
            a_stab,
            full_dim,
        })
    }
}

fn bases(kind: SpaceKind, degree: usize, jf: usize) -> (Basis1d, Basis1d) {
    let bx = Basis1d::Lagrange(LagrangeBasis::new(degree));
    let by = match kind {
        SpaceKind::Polar => Basis1d::Fourier(FourierBasis { order: jf }),
        _ => Basis1d::Lagrange(LagrangeBasis::new(degree)),
    };
    (bx, by)
}

struct Assembly {
    kind: SpaceKind,
    variant: NormVariant,
    degree: usize,
    fourier_order: usize,
    n_dd: usize,
    constraints: DMatrix<f64>,
    /// Per element: 2×2 component coupling and scalar Gram.
    blocks: Vec<(Mat2, DMatrix<f64>)>,
    seminorm: DMatrix<f64>,
}

fn finish(asm: Assembly) -> Result<DisplacementSpace> {
    let (bx, by) = bases(asm.kind, asm.degree, asm.fourier_order);
    let nl = bx.dim() * by.dim();
    let n_dd = asm.n_dd;
    let raw = 2 * n_dd * nl;
    let off = |q: usize, d: usize| nl * (q + n_dd * d);
    let mut gram = DMatrix::zeros(raw, raw);
    for (q, (c, s)) in asm.blocks.iter().enumerate() {
        for d in 0..2 {
            for e in 0..2 {
                if c[(d, e)] != 0.0 {
                    gram.view_mut((off(q, d), off(q, e)), (nl, nl))
                        .copy_from(&(s * c[(d, e)]));
                }
            }
        }
    }
    let gram = symmetrize(gram);
    let null = null_space(&asm.constraints);
    if null.ncols() == 0 {
        return Err(Error::Construction(
            "displacement space is empty: constraints admit only zero".into(),
        ));
    }
    let basis = gram_orthonormalize(null, &gram)?;
    let mut hb = DMatrix::zeros(raw, basis.ncols());
    for q in 0..n_dd {
        for d in 0..2 {
            let o = off(q, d);
            hb.rows_mut(o, nl)
                .copy_from(&(&asm.seminorm * basis.rows(o, nl)));
        }
    }
    let a_stab = symmetrize(basis.transpose() * hb);
    let full_dim = basis.ncols();
    Ok(DisplacementSpace {
        kind: asm.kind,
        variant: asm.variant,
        degree: asm.degree,
        fourier_order: asm.fourier_order,
        n_dd,
        bx,
        by,
        constraints: asm.constraints,
        basis,
        gram,
        a_stab,
        full_dim,
    })
}

/// Rectangular space on the unit square: [𝒬_J]² with φ·n = 0 on all edges.
pub fn build_rect_space(j: usize) -> Result<DisplacementSpace> {
    let mut s = build_dd_space(&unit_square(), j)?;
    s.kind = SpaceKind::Rect;
    Ok(s)
}

/// Polar space on [0,1] × [−1/2,1/2]: both components in 𝒫_{J_r} ⊗ 𝔽_{J_f},
/// the radial one vanishing at x₁ ∈ {0,1}. Unit weight on the reference box.
pub fn build_polar_space(jr: usize, jf: usize) -> Result<DisplacementSpace> {
    if jr < 2 {
        return Err(Error::Construction(format!(
            "polar space needs J_r >= 2, got {jr}"
        )));
    }
    let (bx, by) = bases(SpaceKind::Polar, jr, jf);
    let (n1, n2) = (bx.dim(), by.dim());
    let nl = n1 * n2;
    let thetas: Vec<f64> = (0..n2)
        .map(|k| -0.5 + (k as f64 + 0.5) / n2 as f64)
        .collect();
    let mut c = DMatrix::zeros(2 * n2, 2 * nl);
    let mut row = 0;
    for x1 in [0.0, 1.0] {
        let vx = bx.values(x1);
        for &t in &thetas {
            let vy = by.values(t);
            for j in 0..n2 {
                for i in 0..n1 {
                    c[(row, i + j * n1)] = vx[i] * vy[j];
                }
            }
            row += 1;
        }
    }
    let (full, semi) = scalar_grams(&bx, &by, RefBox::POLAR, &Mat2::identity());
    finish(Assembly {
        kind: SpaceKind::Polar,
        variant: NormVariant::Standard,
        degree: jr,
        fourier_order: jf,
        n_dd: 1,
        constraints: c,
        blocks: vec![(Mat2::identity(), full)],
        seminorm: semi,
    })
}

/// Spectral-element space over a partition with the standard norm.
pub fn build_dd_space(partition: &Partition, j: usize) -> Result<DisplacementSpace> {
    build_dd_space_with(partition, j, NormVariant::Standard)
}

/// Constraint rows of the broken space: φ_q·n̂ = 0 on every facet and
/// tangential continuity across interfaces, both at the facet Lobatto points.
pub fn dd_constraints(partition: &Partition, j: usize) -> DMatrix<f64> {
    let (bx, by) = bases(SpaceKind::Dd, j, 0);
    let n1 = bx.dim();
    let nl = n1 * by.dim();
    let n_dd = partition.elements().len();
    let off = |q: usize, d: usize| nl * (q + n_dd * d);
    let ts = gauss_lobatto_nodes(j + 1, 0.0, 1.0);
    let local = |facet: usize, t: f64| -> Vec<f64> {
        let x = facet_point(facet, t);
        let vx = bx.values(x.x);
        let vy = by.values(x.y);
        let mut v = vec![0.0; nl];
        for (jj, &b) in vy.iter().enumerate() {
            for (i, &a) in vx.iter().enumerate() {
                v[i + jj * n1] = a * b;
            }
        }
        v
    };
    let interfaces = partition.interfaces();
    let n_rows = (n_dd * FACETS + interfaces.len()) * ts.len();
    let mut c = DMatrix::zeros(n_rows, 2 * n_dd * nl);
    let mut row = 0;
    for q in 0..n_dd {
        for facet in 0..FACETS {
            let d = facet_normal_component(facet);
            for &t in &ts {
                for (l, v) in local(facet, t).into_iter().enumerate() {
                    c[(row, off(q, d) + l)] = v;
                }
                row += 1;
            }
        }
    }
    for (q, l, link) in interfaces {
        let d = 1 - facet_normal_component(l);
        let d2 = 1 - facet_normal_component(link.facet);
        let (sign, flip) = if link.same_orientation {
            (1.0, false)
        } else {
            (-1.0, true)
        };
        for &t in &ts {
            let s = if flip { 1.0 - t } else { t };
            for (k, v) in local(l, t).into_iter().enumerate() {
                c[(row, off(q, d) + k)] += v;
            }
            for (k, v) in local(link.facet, s).into_iter().enumerate() {
                c[(row, off(link.element, d2) + k)] -= sign * v;
            }
            row += 1;
        }
    }
    c
}

pub fn build_dd_space_with(
    partition: &Partition,
    j: usize,
    variant: NormVariant,
) -> Result<DisplacementSpace> {
    if j < 2 {
        return Err(Error::Construction(format!(
            "displacement space needs J >= 2, got {j}"
        )));
    }
    let (bx, by) = bases(SpaceKind::Dd, j, 0);
    let n_dd = partition.elements().len();
    let constraints = dd_constraints(partition, j);
    let (std_full, semi) = scalar_grams(&bx, &by, RefBox::UNIT, &Mat2::identity());
    let blocks = (0..n_dd)
        .map(|q| match variant {
            NormVariant::Standard => Ok((
                Mat2::identity() * partition.element_area(q),
                std_full.clone(),
            )),
            NormVariant::Modified => {
                let a = affine_fit(partition.element(q).corners());
                let a_inv = a.try_inverse().ok_or_else(|| {
                    Error::Construction(format!("element {q} has a degenerate affine fit"))
                })?;
                let (full, _) = scalar_grams(&bx, &by, RefBox::UNIT, &a_inv);
                Ok((a.transpose() * a * a.determinant().abs(), full))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    finish(Assembly {
        kind: SpaceKind::Dd,
        variant,
        degree: j,
        fourier_order: 0,
        n_dd,
        constraints,
        blocks,
        seminorm: semi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_basis_is_cardinal_and_sums_to_one() {
        let s = build_rect_space(4).unwrap();
        let nodes = gauss_lobatto_nodes(5, 0.0, 1.0);
        for (j, &y) in nodes.iter().enumerate() {
            for (i, &x) in nodes.iter().enumerate() {
                let v = s.local_values(&Vec2::new(x, y));
                for (l, val) in v.iter().enumerate() {
                    let expect = if l == i + 5 * j { 1.0 } else { 0.0 };
                    assert!((val - expect).abs() < 1e-12);
                }
            }
        }
        let mut seed = 0.3f64;
        for _ in 0..20 {
            seed = (seed * 7.31 + 0.17).fract();
            let x = Vec2::new(seed, (seed * 3.7).fract());
            assert!((s.local_values(&x).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rect_dimensions() {
        assert_eq!(build_rect_space(2).unwrap().dim(), 6);
        assert_eq!(build_rect_space(3).unwrap().dim(), 16);
        assert!(build_rect_space(1).is_err());
    }

    #[test]
    fn polar_dimension_and_wall_condition() {
        let s = build_polar_space(4, 2).unwrap();
        assert_eq!(s.dim(), 3 * 5 + 5 * 5);
        for m in 0..s.dim() {
            let mut a = DVector::zeros(s.dim());
            a[m] = 1.0;
            for k in 0..20 {
                let th = -0.5 + k as f64 / 20.0;
                assert!(s.eval(&a, 0, &Vec2::new(0.0, th)).x.abs() < 1e-12);
                assert!(s.eval(&a, 0, &Vec2::new(1.0, th)).x.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn basis_is_orthonormal() {
        let s = build_rect_space(5).unwrap();
        let g = s.basis().transpose() * s.gram() * s.basis();
        assert!((g - DMatrix::identity(s.dim(), s.dim())).amax() < 1e-10);
    }

    #[test]
    fn constant_field_has_unit_norm_on_unit_element() {
        // φ = e₁ with no wall constraint: check directly against the Gramian
        let s = build_rect_space(3).unwrap();
        let mut u = DVector::zeros(s.raw_dim());
        for l in 0..s.n_local() {
            u[s.offset(0, 0) + l] = 0.7;
        }
        assert!((s.inner_raw(&u, &u) - 0.49).abs() < 1e-12);
    }

    #[test]
    fn cache_round_trip() {
        let s = build_polar_space(3, 1).unwrap();
        let back = DisplacementSpace::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(back.basis(), s.basis());
        assert_eq!(back.gram(), s.gram());
        assert_eq!(back.kind(), SpaceKind::Polar);
        let mut bytes = s.to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(DisplacementSpace::from_bytes(&bytes).is_err());
    }

    #[test]
    fn affine_fit_of_parallelogram_is_exact() {
        let a = Mat2::new(2.0, 0.5, 0.1, 1.5);
        let b = Vec2::new(0.3, -1.0);
        let c = [
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ]
        .map(|p| a * p + b);
        assert!((affine_fit(&c) - a).amax() < 1e-14);
    }
}
