use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::optimize::bfgs;
use super::{RegistrationConfig, TemplateSpace};
use crate::femesh::{BijectivityProbe, NodeRefs, ReferenceMesh};
use crate::geometry::Chart;
use crate::quadrature::{Rule1d, TriangleRule};
use crate::sensor::SensorField;
use crate::spaces::{DisplacementSpace, LocalTab};
use crate::{Error, Mat2, Result, Vec2};

const BOX_TOL: f64 = 1e-8;
const EXP_CLAMP: f64 = 700.0;
const COLLAPSED: f64 = 1e30;
/// Trial maps must keep every element's smallest Jacobian determinant above
/// this fraction of its value on the unmapped mesh.
const DET_MARGIN: f64 = 1e-2;

/// Values of the individual terms at one coefficient vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts {
    /// 𝔣, the proximity to the template space.
    pub proximity: f64,
    /// aᵀ A_stab a.
    pub stab: f64,
    /// 𝔑_msh.
    pub mesh: f64,
    /// 𝔠.
    pub constraint: f64,
    pub total: f64,
}

/// Mesh nodes of one partition element with their basis tables.
struct NodeGroup {
    nodes: Vec<usize>,
    tab: DMatrix<f64>,
}

struct MeshData<'a> {
    mesh: &'a ReferenceMesh,
    refs: &'a NodeRefs,
    probe: BijectivityProbe,
    min_dets: Vec<f64>,
    all: Vec<NodeGroup>,
    vertices: Vec<NodeGroup>,
    areas: Vec<f64>,
    d_orig_inv: Vec<Mat2>,
}

/// Template values at the quadrature points and the factored weighted Gram
/// matrix of the projection onto 𝒮_N.
pub struct Projector {
    psi: Vec<DMatrix<f64>>,
    chol: Cholesky<f64, Dyn>,
}

/// One registration problem: a displacement space on a chart, optionally with
/// a mesh for the distortion penalty and the discrete bijectivity check.
pub struct Registration<'a> {
    space: &'a DisplacementSpace,
    chart: &'a dyn Chart,
    config: RegistrationConfig,
    points: Vec<Vec2>,
    weights: DVector<f64>,
    geo: Vec<DVector<f64>>,
    tab: LocalTab,
    mesh: Option<MeshData<'a>>,
}

/// Registration outcome for one target.
#[derive(Debug, Clone)]
pub struct RegisterResult {
    pub a: DVector<f64>,
    /// 𝔣*_{N,M} = 𝔣(a*).
    pub proximity: f64,
    pub parts: ObjectiveParts,
    pub iterations: usize,
    pub rho_c: f64,
}

fn element_areas(mesh: &ReferenceMesh) -> Vec<f64> {
    let rule = TriangleRule::with_degree(2 * mesh.degree());
    (0..mesh.n_elements())
        .map(|k| {
            rule.points
                .iter()
                .zip(&rule.weights)
                .map(|(p, w)| {
                    w * mesh
                        .elemental_jacobian(k, &Vec2::new(p[0], p[1]), None)
                        .determinant()
                        .abs()
                })
                .sum()
        })
        .collect()
}

impl<'a> Registration<'a> {
    pub fn new(
        space: &'a DisplacementSpace,
        chart: &'a dyn Chart,
        mesh: Option<(&'a ReferenceMesh, &'a NodeRefs)>,
        config: RegistrationConfig,
    ) -> Result<Self> {
        config.validate()?;
        if chart.n_elements() != space.n_elements() {
            return Err(Error::Construction(format!(
                "chart has {} elements, space has {}",
                chart.n_elements(),
                space.n_elements()
            )));
        }
        let n = config.quad_order.unwrap_or(space.degree() + 3);
        let bx = space.ref_box();
        let rx = Rule1d::gauss_legendre(n, 0.0, 1.0);
        let ry = Rule1d::gauss_legendre(n, bx.y0, bx.y1);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for (&y, &wy) in ry.nodes.iter().zip(&ry.weights) {
            for (&x, &wx) in rx.nodes.iter().zip(&rx.weights) {
                points.push(Vec2::new(x, y));
                weights.push(wx * wy);
            }
        }
        let weights = DVector::from_vec(weights);
        let geo = (0..space.n_elements())
            .map(|q| {
                DVector::from_fn(points.len(), |p, _| {
                    weights[p] * chart.jacobian(q, &points[p]).determinant().abs()
                })
            })
            .collect();
        let tab = space.tabulate(&points);
        let mesh = match mesh {
            None => None,
            Some((m, refs)) => {
                if refs.labels.len() != m.n_nodes() {
                    return Err(Error::Construction(
                        "node references do not match the mesh".into(),
                    ));
                }
                let group = |ids: &[usize]| -> Vec<NodeGroup> {
                    (0..space.n_elements())
                        .map(|q| {
                            let nodes: Vec<usize> = ids
                                .iter()
                                .copied()
                                .filter(|&j| refs.labels[j] == q)
                                .collect();
                            let pts: Vec<Vec2> = nodes.iter().map(|&j| refs.coords[j]).collect();
                            NodeGroup {
                                tab: space.tabulate(&pts).v,
                                nodes,
                            }
                        })
                        .collect()
                };
                let all_ids: Vec<usize> = (0..m.n_nodes()).collect();
                let d_orig_inv = (0..m.n_elements())
                    .map(|k| {
                        let [a, b, c] = m.vertices(k);
                        let nd = m.nodes();
                        Mat2::from_columns(&[nd[b] - nd[a], nd[c] - nd[a]])
                            .try_inverse()
                            .ok_or_else(|| {
                                Error::Construction(format!(
                                    "mesh element {k} has collapsed vertices"
                                ))
                            })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let probe = BijectivityProbe::new(m);
                let min_dets = (0..m.n_elements())
                    .map(|k| probe.min_det_of(m, m.nodes(), k))
                    .collect();
                Some(MeshData {
                    mesh: m,
                    refs,
                    probe,
                    min_dets,
                    all: group(&all_ids),
                    vertices: group(&m.vertex_nodes()),
                    areas: element_areas(m),
                    d_orig_inv,
                })
            }
        };
        Ok(Registration {
            space,
            chart,
            config,
            points,
            weights,
            geo,
            tab,
            mesh,
        })
    }

    pub fn space(&self) -> &DisplacementSpace {
        self.space
    }

    pub fn config(&self) -> &RegistrationConfig {
        &self.config
    }

    pub fn quadrature_points(&self) -> &[Vec2] {
        &self.points
    }

    /// Σ|𝙳_k| over the mesh, the value of 𝔑_msh(0) e^{f_msh,max − 1}.
    pub fn mesh_area(&self) -> Option<f64> {
        self.mesh.as_ref().map(|m| m.areas.iter().sum())
    }

    fn block<'v>(
        &self,
        raw: &'v DVector<f64>,
        q: usize,
        d: usize,
    ) -> nalgebra::DVectorView<'v, f64> {
        raw.rows(self.space.offset(q, d), self.space.n_local())
    }

    fn add_block(&self, g: &mut DVector<f64>, q: usize, d: usize, v: &DVector<f64>) {
        let o = self.space.offset(q, d);
        let n = self.space.n_local();
        let mut rows = g.rows_mut(o, n);
        rows += v;
    }

    /// Template values at the quadrature points, with the weighted Gram matrix factored.
    pub fn projector(&self, templates: &TemplateSpace) -> Result<Projector> {
        let nt = templates.len();
        let np = self.points.len();
        let mut psi = Vec::with_capacity(self.space.n_elements());
        let mut gram = DMatrix::zeros(nt, nt);
        for q in 0..self.space.n_elements() {
            let m = DMatrix::from_fn(np, nt, |p, n| {
                templates.fields()[n].eval(q, &self.points[p])
            });
            let mut wm = m.clone();
            for mut c in wm.column_iter_mut() {
                c.component_mul_assign(&self.geo[q]);
            }
            gram += m.transpose() * wm;
            psi.push(m);
        }
        let chol = gram.cholesky().ok_or_else(|| {
            Error::LinearAlgebra("template Gram matrix is not positive definite".into())
        })?;
        Ok(Projector { psi, chol })
    }

    /// Φ_q at the quadrature points, failing outside the reference box.
    fn mapped_points(&self, raw: &DVector<f64>, q: usize) -> Result<Vec<Vec2>> {
        let u = &self.tab.v * self.block(raw, q, 0);
        let v = &self.tab.v * self.block(raw, q, 1);
        let bx = self.space.ref_box();
        self.points
            .iter()
            .enumerate()
            .map(|(p, x)| {
                let z = Vec2::new(x.x + u[p], x.y + v[p]);
                if !bx.contains(&z, BOX_TOL) || !z.x.is_finite() || !z.y.is_finite() {
                    return Err(Error::Evaluation(format!(
                        "quadrature point of element {q} mapped outside the reference box to ({:.6}, {:.6})",
                        z.x, z.y
                    )));
                }
                Ok(z)
            })
            .collect()
    }

    /// 𝔣 with its gradient in raw coordinates (projection coefficients held
    /// fixed) and the projection coefficients.
    pub fn proximity_raw(
        &self,
        sensor: &SensorField,
        proj: &Projector,
        raw: &DVector<f64>,
    ) -> Result<(f64, DVector<f64>, DVector<f64>)> {
        let nq = self.space.n_elements();
        let mut vals = Vec::with_capacity(nq);
        let mut grads = Vec::with_capacity(nq);
        let mut b = DVector::zeros(proj.psi[0].ncols());
        for q in 0..nq {
            let z = self.mapped_points(raw, q)?;
            let mut s = DVector::zeros(z.len());
            let mut g = Vec::with_capacity(z.len());
            for (p, zp) in z.iter().enumerate() {
                let (v, gr) = sensor.eval_grad(q, zp);
                s[p] = v;
                g.push(gr);
            }
            b += proj.psi[q].transpose() * s.component_mul(&self.geo[q]);
            vals.push(s);
            grads.push(g);
        }
        let c = proj.chol.solve(&b);
        let mut f = 0.0;
        let mut graw = DVector::zeros(self.space.raw_dim());
        for q in 0..nq {
            let r = &vals[q] - &proj.psi[q] * &c;
            f += r.component_mul(&r).dot(&self.geo[q]);
            for d in 0..2 {
                let w =
                    DVector::from_fn(r.len(), |p, _| 2.0 * self.geo[q][p] * r[p] * grads[q][p][d]);
                self.add_block(&mut graw, q, d, &(self.tab.v.transpose() * w));
            }
        }
        Ok((f, graw, c))
    }

    /// 𝔣(a; s, 𝒮_N).
    pub fn proximity(
        &self,
        sensor: &SensorField,
        proj: &Projector,
        a: &DVector<f64>,
    ) -> Result<f64> {
        Ok(self.proximity_raw(sensor, proj, &self.space.expand(a))?.0)
    }

    /// 𝔠 and its raw gradient.
    pub fn constraint_raw(&self, raw: &DVector<f64>) -> (f64, DVector<f64>) {
        let eps = self.config.eps;
        let cexp = self.config.c_exp();
        let mut total = -self.config.delta * self.space.n_elements() as f64;
        let mut graw = DVector::zeros(self.space.raw_dim());
        for q in 0..self.space.n_elements() {
            let (b0, b1) = (self.block(raw, q, 0), self.block(raw, q, 1));
            let g00 = &self.tab.dx * b0;
            let g01 = &self.tab.dy * b0;
            let g10 = &self.tab.dx * b1;
            let g11 = &self.tab.dy * b1;
            let np = self.points.len();
            let mut h = DVector::zeros(np);
            for p in 0..np {
                let det = (1.0 + g00[p]) * (1.0 + g11[p]) - g01[p] * g10[p];
                let e1 = ((eps - det) / cexp).min(EXP_CLAMP).exp();
                let e2 = ((det - 1.0 / eps) / cexp).min(EXP_CLAMP).exp();
                total += self.weights[p] * (e1 + e2);
                h[p] = self.weights[p] * (e2 - e1) / cexp;
            }
            let t0 = self.tab.dx.transpose() * h.component_mul(&g11.add_scalar(1.0))
                - self.tab.dy.transpose() * h.component_mul(&g10);
            let t1 = self.tab.dy.transpose() * h.component_mul(&g00.add_scalar(1.0))
                - self.tab.dx.transpose() * h.component_mul(&g01);
            self.add_block(&mut graw, q, 0, &t0);
            self.add_block(&mut graw, q, 1, &t1);
        }
        (total, graw)
    }

    pub fn constraint(&self, a: &DVector<f64>) -> f64 {
        self.constraint_raw(&self.space.expand(a)).0
    }

    /// Displaced reference points z = X + φ_q(X) of a node group.
    fn displaced(
        &self,
        raw: &DVector<f64>,
        q: usize,
        g: &NodeGroup,
        refs: &NodeRefs,
    ) -> Result<Vec<Vec2>> {
        let u = &g.tab * self.block(raw, q, 0);
        let v = &g.tab * self.block(raw, q, 1);
        let bx = self.space.ref_box();
        g.nodes
            .iter()
            .enumerate()
            .map(|(r, &j)| {
                let x = refs.coords[j];
                let mut z = Vec2::new(x.x + u[r], x.y + v[r]);
                if !bx.contains(&z, BOX_TOL) || !z.x.is_finite() || !z.y.is_finite() {
                    return Err(Error::Mapping(format!(
                        "mesh node {j} displaced outside the reference box"
                    )));
                }
                z.x = z.x.clamp(0.0, 1.0);
                if !bx.periodic {
                    z.y = z.y.clamp(bx.y0, bx.y1);
                }
                Ok(z)
            })
            .collect()
    }

    fn place(
        &self,
        md: &MeshData,
        groups: &[NodeGroup],
        raw: &DVector<f64>,
        out: &mut [Vec2],
    ) -> Result<Vec<Vec<Vec2>>> {
        let mut zs = Vec::with_capacity(groups.len());
        for (q, g) in groups.iter().enumerate() {
            let z = self.displaced(raw, q, g, md.refs)?;
            for (r, &j) in g.nodes.iter().enumerate() {
                let x = md.refs.coords[j];
                if z[r] != x {
                    out[j] = md.mesh.nodes()[j]
                        + (self.chart.forward(q, &z[r]) - self.chart.forward(q, &x));
                }
            }
            zs.push(z);
        }
        Ok(zs)
    }

    /// Mapped positions of all mesh nodes.
    pub fn map_nodes(&self, a: &DVector<f64>) -> Result<Vec<Vec2>> {
        self.map_nodes_raw(&self.space.expand(a))
    }

    pub fn map_nodes_raw(&self, raw: &DVector<f64>) -> Result<Vec<Vec2>> {
        let md = self
            .mesh
            .as_ref()
            .ok_or_else(|| Error::Mapping("registration has no mesh".into()))?;
        let mut out = md.mesh.nodes().to_vec();
        self.place(md, &md.all, raw, &mut out)?;
        Ok(out)
    }

    /// 𝔑_msh and its raw gradient; zero without a mesh.
    pub fn mesh_penalty_raw(&self, raw: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let mut graw = DVector::zeros(self.space.raw_dim());
        let Some(md) = self.mesh.as_ref() else {
            return Ok((0.0, graw));
        };
        let mut pos = md.mesh.nodes().to_vec();
        let zs = self.place(md, &md.vertices, raw, &mut pos)?;
        let mut dy = vec![Vec2::zeros(); pos.len()];
        let fmax = self.config.f_msh_max;
        let mut total = 0.0;
        for k in 0..md.mesh.n_elements() {
            let [ia, ib, ic] = md.mesh.vertices(k);
            let dm = Mat2::from_columns(&[pos[ib] - pos[ia], pos[ic] - pos[ia]]);
            let a = dm * md.d_orig_inv[k];
            let det = a.determinant();
            if !(det > 1e-14) {
                return Ok((COLLAPSED, DVector::zeros(self.space.raw_dim())));
            }
            let n2 = a.norm_squared();
            let f = 0.5 * n2 / det;
            let pk = md.areas[k] * (f - fmax).exp();
            total += pk;
            let inv_t = a.try_inverse().expect("positive determinant").transpose();
            let df_da = (a - inv_t * (0.5 * n2)) / det;
            let df_ddm = df_da * md.d_orig_inv[k].transpose() * pk;
            let (c0, c1) = (df_ddm.column(0).into_owned(), df_ddm.column(1).into_owned());
            dy[ib] += c0;
            dy[ic] += c1;
            dy[ia] -= c0 + c1;
        }
        for (q, g) in md.vertices.iter().enumerate() {
            let mut w0 = DVector::zeros(g.nodes.len());
            let mut w1 = DVector::zeros(g.nodes.len());
            for (r, &j) in g.nodes.iter().enumerate() {
                let dz = self.chart.jacobian(q, &zs[q][r]).transpose() * dy[j];
                w0[r] = dz.x;
                w1[r] = dz.y;
            }
            self.add_block(&mut graw, q, 0, &(g.tab.transpose() * w0));
            self.add_block(&mut graw, q, 1, &(g.tab.transpose() * w1));
        }
        Ok((total, graw))
    }

    pub fn mesh_penalty(&self, a: &DVector<f64>) -> Result<f64> {
        Ok(self.mesh_penalty_raw(&self.space.expand(a))?.0)
    }

    /// Penalized objective 𝔣 + ξ aᵀA_stab a + ξ_msh 𝔑_msh + ρ_c max(𝔠, 0)² and its gradient.
    pub fn objective(
        &self,
        sensor: &SensorField,
        proj: &Projector,
        a: &DVector<f64>,
        rho_c: f64,
    ) -> Result<(f64, DVector<f64>, ObjectiveParts)> {
        let raw = self.space.expand(a);
        let (f, gf, _) = self.proximity_raw(sensor, proj, &raw)?;
        let (c, gc) = self.constraint_raw(&raw);
        let (m, gm) = self.mesh_penalty_raw(&raw)?;
        let sa = self.space.a_stab() * a;
        let stab = a.dot(&sa);
        let cp = c.max(0.0);
        let xi = self.config.xi;
        let xm = self.config.xi_msh;
        let total = f + xi * stab + xm * m + rho_c * cp * cp;
        let graw = gf + gm * xm + gc * (2.0 * rho_c * cp);
        let grad = self.space.basis().tr_mul(&graw) + sa * (2.0 * xi);
        Ok((
            total,
            grad,
            ObjectiveParts {
                proximity: f,
                stab,
                mesh: m,
                constraint: c,
                total,
            },
        ))
    }

    /// Discrete bijectivity of the mapped mesh, with every element keeping a
    /// fixed fraction of its original smallest determinant; without a mesh,
    /// positivity of det ∇Φ_q at the quadrature points.
    pub fn admissible(&self, a: &DVector<f64>) -> bool {
        let raw = self.space.expand(a);
        match &self.mesh {
            Some(md) => match self.map_nodes_raw(&raw) {
                Ok(nodes) => md
                    .min_dets
                    .iter()
                    .enumerate()
                    .all(|(k, d0)| md.probe.min_det_of(md.mesh, &nodes, k) > DET_MARGIN * d0),
                Err(_) => false,
            },
            None => (0..self.space.n_elements()).all(|q| {
                let (b0, b1) = (self.block(&raw, q, 0), self.block(&raw, q, 1));
                let (g00, g01) = (&self.tab.dx * b0, &self.tab.dy * b0);
                let (g10, g11) = (&self.tab.dx * b1, &self.tab.dy * b1);
                (0..self.points.len())
                    .all(|p| (1.0 + g00[p]) * (1.0 + g11[p]) - g01[p] * g10[p] > 0.0)
            }),
        }
    }

    /// Samples s_q ∘ Φ_q(·; a) at the sensor grid nodes.
    pub fn pullback(&self, sensor: &SensorField, a: &DVector<f64>) -> Result<SensorField> {
        let raw = self.space.expand(a);
        let nodes = sensor.grid().nodes();
        let values = (0..sensor.n_elements())
            .map(|q| {
                nodes
                    .iter()
                    .map(|x| sensor.eval(q, &(x + self.space.eval_raw(raw.as_slice(), q, x))))
                    .collect()
            })
            .collect();
        SensorField::from_values(*sensor.grid(), values)
    }

    /// Minimizes the penalized objective from `a_init`, escalating ρ_c by 10
    /// while the constraint is violated.
    pub fn register_one(
        &self,
        sensor: &SensorField,
        proj: &Projector,
        a_init: &DVector<f64>,
    ) -> Result<RegisterResult> {
        if a_init.len() != self.space.dim() {
            return Err(Error::Input(format!(
                "initial coefficients have length {}, space dimension is {}",
                a_init.len(),
                self.space.dim()
            )));
        }
        let c0 = self.constraint(a_init);
        if c0 > 0.0 || !self.admissible(a_init) {
            return Err(Error::Registration(format!(
                "initial map is not admissible (constraint {c0:.3e})"
            )));
        }
        let mut rho = self.config.rho_c;
        let mut a = a_init.clone();
        let mut iterations = 0;
        for _ in 0..=self.config.max_escalations {
            let rep = bfgs(
                |x| self.objective(sensor, proj, x, rho).map(|(f, g, _)| (f, g)),
                |x| self.admissible(x),
                a,
                self.config.max_iter,
                self.config.grad_tol,
            )?;
            iterations += rep.iterations;
            a = rep.x;
            let (_, _, parts) = self.objective(sensor, proj, &a, rho)?;
            if parts.constraint <= 0.0 {
                return Ok(RegisterResult {
                    proximity: parts.proximity,
                    a,
                    parts,
                    iterations,
                    rho_c: rho,
                });
            }
            rho *= 10.0;
        }
        Err(Registration::infeasible())
    }

    fn infeasible() -> Error {
        Error::Registration(
            "bijectivity constraint still violated after the maximum number of penalty escalations"
                .into(),
        )
    }
}
