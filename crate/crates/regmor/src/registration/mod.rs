//! Registration: the proximity measure against a template space, the
//! bijectivity constraint, the mesh-distortion penalty, a penalized
//! quasi-Newton solver and the greedy parametric loop.

mod greedy;
mod objective;
mod optimize;

pub use greedy::{greedy_registration, GreedyIteration, GreedyResult, SnapshotOutcome};
pub use objective::{ObjectiveParts, Projector, RegisterResult, Registration};
pub use optimize::{bfgs, BfgsReport};

use nalgebra::{DMatrix, DVector};

use crate::sensor::SensorField;
use crate::{Error, Result};

/// Weights, constraint constants and solver settings of a registration run.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationConfig {
    pub xi: f64,
    pub xi_msh: f64,
    pub eps: f64,
    /// C_exp = c_exp_factor · ε.
    pub c_exp_factor: f64,
    pub delta: f64,
    pub f_msh_max: f64,
    pub tol: f64,
    pub tol_pod: f64,
    pub n_max: usize,
    /// Gauss points per direction for 𝔣 and 𝔠; `None` means J + 3.
    pub quad_order: Option<usize>,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub rho_c: f64,
    pub max_escalations: usize,
    /// First greedy pass by parameter continuation instead of a = 0 everywhere.
    pub continuation: bool,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            xi: 1e-4,
            xi_msh: 1e-6,
            eps: 0.1,
            c_exp_factor: 0.025,
            delta: 1.0,
            f_msh_max: 10.0,
            tol: 1e-3,
            tol_pod: 1e-3,
            n_max: 5,
            quad_order: None,
            max_iter: 500,
            grad_tol: 1e-7,
            rho_c: 1.0,
            max_escalations: 5,
            continuation: true,
        }
    }
}

impl RegistrationConfig {
    pub fn c_exp(&self) -> f64 {
        self.c_exp_factor * self.eps
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("xi", self.xi),
            ("xi_msh", self.xi_msh),
            ("c_exp_factor", self.c_exp_factor),
            ("delta", self.delta),
            ("f_msh_max", self.f_msh_max),
            ("rho_c", self.rho_c),
            ("grad_tol", self.grad_tol),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Input(format!(
                    "reg.{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::Input(format!(
                "reg.eps must lie in (0,1), got {}",
                self.eps
            )));
        }
        if !(self.tol_pod >= 0.0 && self.tol_pod < 1.0) {
            return Err(Error::Input(format!(
                "reg.tol_pod must lie in [0,1), got {}",
                self.tol_pod
            )));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::Input(format!(
                "reg.tol must be non-negative, got {}",
                self.tol
            )));
        }
        if self.n_max == 0 || self.max_iter == 0 {
            return Err(Error::Input(
                "reg.n_max and opt.max_iter must be at least 1".into(),
            ));
        }
        if self.quad_order == Some(0) {
            return Err(Error::Input("reg.quad_order must be at least 1".into()));
        }
        Ok(())
    }
}

/// Template space 𝒮_N: sensor-like fields on a common grid.
#[derive(Debug, Clone)]
pub struct TemplateSpace {
    fields: Vec<SensorField>,
}

impl TemplateSpace {
    pub fn new(fields: Vec<SensorField>) -> Result<Self> {
        let mut t = TemplateSpace { fields: Vec::new() };
        for f in fields {
            t.push(f)?;
        }
        if t.fields.is_empty() {
            return Err(Error::Construction(
                "template space needs at least one field".into(),
            ));
        }
        Ok(t)
    }

    /// Adds a field after checking that the normalized Gram determinant stays
    /// above 1e−12.
    pub fn push(&mut self, f: SensorField) -> Result<()> {
        if let Some(first) = self.fields.first() {
            if first.grid() != f.grid() || first.n_elements() != f.n_elements() {
                return Err(Error::Construction(
                    "template fields must share a grid".into(),
                ));
            }
        }
        let mut all = self.fields.clone();
        all.push(f);
        let n = all.len();
        let mut g = DMatrix::from_fn(n, n, |i, j| {
            if i <= j {
                all[i].l2_inner(&all[j])
            } else {
                0.0
            }
        });
        g.fill_lower_triangle_with_upper_triangle();
        let d = DVector::from_fn(n, |i, _| 1.0 / g[(i, i)].sqrt());
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::Construction("template field has zero norm".into()));
        }
        let gn = DMatrix::from_fn(n, n, |i, j| g[(i, j)] * d[i] * d[j]);
        let det = gn.determinant();
        if !(det > 1e-12) {
            return Err(Error::Construction(format!(
                "template field is linearly dependent on the current space (normalized Gram determinant {det:.3e})"
            )));
        }
        self.fields = all;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn fields(&self) -> &[SensorField] {
        &self.fields
    }
}
