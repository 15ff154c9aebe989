//! Run configuration: a TOML file with one section per stage.
//!
//! Every numeric knob is optional; unset keys fall back to the per-problem
//! presets of [`ProblemSetup::for_kind`].

use std::path::{Path, PathBuf};

use regmor::pipeline::{ProblemSetup, SensorApproach};
use regmor::reduction::{Truncation, R2_THRESHOLD};
use regmor::registration::RegistrationConfig;
use regmor::synthetic::{ManifoldKind, ManifoldSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemSection,
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub sensor: SensorSection,
    #[serde(default)]
    pub reg: RegSection,
    #[serde(default)]
    pub opt: OptSection,
    #[serde(default)]
    pub reduction: ReductionSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    /// `square_front`, `annulus_gaussian` or `partitioned_front`.
    pub kind: String,
    pub n_train: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lo: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hi: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sharpness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cells: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mesh_degree: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub space_degree: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fourier_order: Option<usize>,
}

fn default_n_test() -> usize {
    20
}

/// Locations of artifacts. Inputs named here must exist when the file is loaded.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    /// Run directory; `--out` overrides it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Mapping bundle read by `reduce` instead of `<out>/mapping.bin`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mapping: Option<PathBuf>,
    /// Model bundle read by `predict` instead of `<out>/model.bin`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub approach: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cells: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rescale: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi_msh: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_exp_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_msh_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_pod: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub continuation: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quad_order: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_escalations: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionSection {
    /// Register before POD (default true).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub registered: Option<bool>,
    /// POD energy tolerance; ignored when `sweep` is set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Solution-basis sizes to evaluate; the model keeps the largest.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<usize>>,
    /// Only `thin_plate` is available.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r2_threshold: Option<f64>,
}

/// Everything the stages need, with presets applied and values checked.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub spec: ManifoldSpec,
    pub setup: ProblemSetup,
    pub registered: bool,
    pub truncation: Truncation,
    pub sweep: Option<Vec<usize>>,
    pub r2_threshold: f64,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Input(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Parses, resolves and checks that referenced inputs exist.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::from_toml(&text)?;
        cfg.resolve()?;
        for p in [&cfg.paths.mapping, &cfg.paths.model].into_iter().flatten() {
            if !p.exists() {
                return Err(CliError::Input(format!(
                    "config references missing file {}",
                    p.display()
                )));
            }
        }
        Ok(cfg)
    }

    /// SHA-256 of the numerical settings; paths do not contribute.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.paths = PathsSection::default();
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let kind = ManifoldKind::from_name(&self.problem.kind)?;
        let mut spec =
            ManifoldSpec::new(kind, self.problem.n_train, self.problem.n_test, self.seed);
        if let Some(lo) = &self.problem.lo {
            spec.lo = lo.clone();
        }
        if let Some(hi) = &self.problem.hi {
            spec.hi = hi.clone();
        }
        if let Some(s) = self.problem.sharpness {
            spec.sharpness = s;
        }
        spec.validate()?;

        let mut setup = ProblemSetup::for_kind(kind);
        let p = &self.problem;
        if let Some([a, b]) = p.cells {
            setup.cells = (a, b);
        }
        set(&mut setup.mesh_degree, p.mesh_degree);
        set(&mut setup.space_degree, p.space_degree);
        set(&mut setup.fourier_order, p.fourier_order);
        if setup.cells.0 == 0 || setup.cells.1 == 0 || setup.mesh_degree == 0 {
            return Err(CliError::Input(
                "problem.cells and problem.mesh_degree must be positive".into(),
            ));
        }

        let s = &self.sensor;
        if let Some(a) = &s.approach {
            setup.sensor.approach = SensorApproach::from_name(a)?;
        }
        set(&mut setup.sensor.cells, s.cells);
        set(&mut setup.sensor.xi_s, s.xi_s);
        set(&mut setup.sensor.rescale, s.rescale);
        if setup.sensor.cells == 0 || !(setup.sensor.xi_s >= 0.0) {
            return Err(CliError::Input(
                "sensor.cells must be positive and sensor.xi_s non-negative".into(),
            ));
        }

        let r: &mut RegistrationConfig = &mut setup.registration;
        let g = &self.reg;
        set(&mut r.xi, g.xi);
        set(&mut r.xi_msh, g.xi_msh);
        set(&mut r.eps, g.eps);
        set(&mut r.c_exp_factor, g.c_exp_factor);
        set(&mut r.delta, g.delta);
        set(&mut r.f_msh_max, g.f_msh_max);
        set(&mut r.tol, g.tol);
        set(&mut r.tol_pod, g.tol_pod);
        set(&mut r.n_max, g.n_max);
        set(&mut r.continuation, g.continuation);
        let o = &self.opt;
        set(&mut r.max_iter, o.max_iter);
        set(&mut r.grad_tol, o.grad_tol);
        set(&mut r.rho_c, o.rho_c);
        set(&mut r.max_escalations, o.max_escalations);
        if o.quad_order.is_some() {
            r.quad_order = o.quad_order;
        }
        r.validate()?;

        let d = &self.reduction;
        if let Some(k) = &d.kernel {
            if k != "thin_plate" {
                return Err(CliError::Input(format!(
                    "reduction.kernel '{k}' is not available; use thin_plate"
                )));
            }
        }
        let tol = d.tol.unwrap_or(1e-3);
        if !(0.0..1.0).contains(&tol) {
            return Err(CliError::Input(format!(
                "reduction.tol must lie in [0,1), got {tol}"
            )));
        }
        let truncation = match &d.sweep {
            Some(s) if s.is_empty() || s.contains(&0) => {
                return Err(CliError::Input(
                    "reduction.sweep must list positive sizes".into(),
                ))
            }
            Some(s) => Truncation::Fixed(*s.iter().max().unwrap()),
            None => Truncation::Tolerance(tol),
        };
        let r2_threshold = d.r2_threshold.unwrap_or(R2_THRESHOLD);
        if !r2_threshold.is_finite() {
            return Err(CliError::Input(
                "reduction.r2_threshold must be finite".into(),
            ));
        }
        Ok(Resolved {
            spec,
            setup,
            registered: d.registered.unwrap_or(true),
            truncation,
            sweep: d.sweep.clone(),
            r2_threshold,
        })
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}
