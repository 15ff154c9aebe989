//! Offline and online stages wired together for the synthetic problems:
//! sensors from nodal snapshots, greedy registration, POD of the mapped
//! fields, regression, and evaluation on held-out parameters.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::femesh::{map_mesh, InnerProductMatrix, NodeRefs, NormKind, ReferenceMesh};
use crate::geometry::{four_element_layout, unit_square, Chart, Partition, PolarChart};
use crate::reduction::{error_metrics, pod, ReducedModel, Truncation};
use crate::registration::{
    greedy_registration, GreedyResult, Registration, RegistrationConfig, TemplateSpace,
};
use crate::sensor::{GridFitter, PhysicalSmoother, SensorField, SensorGrid};
use crate::spaces::{build_dd_space, build_polar_space, build_rect_space, DisplacementSpace};
use crate::synthetic::{ManifoldKind, ManifoldSpec};
use crate::{Error, Result, Vec2};

enum Geometry {
    Partition(Partition),
    Polar(PolarChart),
}

/// A synthetic manifold together with its reference geometry and mesh.
pub struct Problem {
    pub spec: ManifoldSpec,
    geometry: Geometry,
    pub mesh: ReferenceMesh,
    pub refs: NodeRefs,
}

impl Problem {
    pub fn new(spec: ManifoldSpec, cells: (usize, usize), degree: usize) -> Result<Self> {
        spec.validate()?;
        let geometry = match spec.kind {
            ManifoldKind::SquareFront => Geometry::Partition(unit_square()),
            ManifoldKind::AnnulusGaussian => Geometry::Polar(PolarChart::new(0.2, 1.0)?),
            ManifoldKind::PartitionedFront => Geometry::Partition(four_element_layout()),
        };
        let chart: &dyn Chart = match &geometry {
            Geometry::Partition(p) => p,
            Geometry::Polar(p) => p,
        };
        let (mesh, refs) = crate::femesh::structured_mesh(chart, cells, degree)?;
        Ok(Problem {
            spec,
            geometry,
            mesh,
            refs,
        })
    }

    pub fn chart(&self) -> &dyn Chart {
        match &self.geometry {
            Geometry::Partition(p) => p,
            Geometry::Polar(p) => p,
        }
    }

    pub fn n_elements(&self) -> usize {
        self.chart().n_elements()
    }

    /// The displacement space matching the geometry: rectangular on the unit
    /// square, polar on the annulus, spectral-element otherwise.
    pub fn space(&self, degree: usize, fourier_order: usize) -> Result<DisplacementSpace> {
        match (&self.geometry, self.spec.kind) {
            (Geometry::Polar(_), _) => build_polar_space(degree, fourier_order),
            (Geometry::Partition(_), ManifoldKind::SquareFront) => build_rect_space(degree),
            (Geometry::Partition(p), _) => build_dd_space(p, degree),
        }
    }

    pub fn sensor_grid(&self, cells: usize) -> Result<SensorGrid> {
        SensorGrid::new(cells, self.chart().ref_box())
    }

    /// Nodal snapshot matrix on the reference mesh.
    pub fn snapshots(&self, params: &[Vec<f64>]) -> DMatrix<f64> {
        self.spec.snapshots(params, self.mesh.nodes())
    }

    /// u_μ at arbitrary (deformed) node positions.
    pub fn truth(&self, mu: &[f64], nodes: &[Vec2]) -> DVector<f64> {
        DVector::from_vec(self.spec.values(mu, nodes))
    }

    /// Nodes of Φ(𝒯_hf; a) on the reference geometry.
    pub fn mapped_nodes(&self, space: &DisplacementSpace, a: &DVector<f64>) -> Result<Vec<Vec2>> {
        let raw = space.expand(a);
        map_mesh(&self.mesh, &self.refs, self.chart(), None, |q, x| {
            space.eval_raw(raw.as_slice(), q, x)
        })
    }

    /// Mesh with the same connectivity and new node positions.
    pub fn mesh_with_nodes(&self, nodes: Vec<Vec2>) -> Result<ReferenceMesh> {
        ReferenceMesh::new(self.mesh.degree(), nodes, self.mesh.elements().to_vec())
    }
}

/// Mesh, space and registration settings that work for each synthetic problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSetup {
    pub cells: (usize, usize),
    pub mesh_degree: usize,
    pub space_degree: usize,
    pub fourier_order: usize,
    pub registration: RegistrationConfig,
    pub sensor: SensorSettings,
}

impl ProblemSetup {
    pub fn for_kind(kind: ManifoldKind) -> Self {
        let mut registration = RegistrationConfig {
            quad_order: Some(20),
            max_iter: 200,
            ..RegistrationConfig::default()
        };
        let mut sensor = SensorSettings::default();
        let (cells, space_degree) = match kind {
            ManifoldKind::SquareFront => ((12, 12), 4),
            ManifoldKind::AnnulusGaussian => ((6, 32), 5),
            ManifoldKind::PartitionedFront => {
                // the sharp tilted front needs a stiffer map to give maps that
                // vary smoothly with μ; extra templates absorb misalignment
                registration.xi = 1e-2;
                registration.n_max = 2;
                sensor.cells = 29;
                ((8, 8), 6)
            }
        };
        ProblemSetup {
            cells,
            mesh_degree: 2,
            space_degree,
            fourier_order: 4,
            registration,
            sensor,
        }
    }

    pub fn problem(&self, spec: ManifoldSpec) -> Result<Problem> {
        Problem::new(spec, self.cells, self.mesh_degree)
    }
}

/// How nodal snapshots become sensor fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorApproach {
    /// Penalized least squares directly on the sensor grid.
    GridFit,
    /// H¹ smoothing on the mesh, then sampling at the grid nodes.
    PhysicalSmoothing,
}

impl SensorApproach {
    pub fn name(self) -> &'static str {
        match self {
            SensorApproach::GridFit => "grid_fit",
            SensorApproach::PhysicalSmoothing => "physical_smoothing",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "grid_fit" => Ok(SensorApproach::GridFit),
            "physical_smoothing" => Ok(SensorApproach::PhysicalSmoothing),
            _ => Err(Error::Input(format!("unknown sensor approach '{s}'"))),
        }
    }
}

/// Sensor construction settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSettings {
    pub approach: SensorApproach,
    pub cells: usize,
    pub xi_s: f64,
    pub rescale: bool,
}

impl Default for SensorSettings {
    fn default() -> Self {
        SensorSettings {
            approach: SensorApproach::GridFit,
            cells: 19,
            xi_s: 1e-5,
            rescale: true,
        }
    }
}

/// Sensors of the snapshot columns, optionally rescaled to [0,1].
pub fn make_sensors(
    problem: &Problem,
    snapshots: &DMatrix<f64>,
    settings: SensorSettings,
) -> Result<Vec<SensorField>> {
    let grid = problem.sensor_grid(settings.cells)?;
    let fit: Box<dyn Fn(&[f64]) -> Result<SensorField> + Sync> = match settings.approach {
        SensorApproach::GridFit => {
            let f = GridFitter::new(grid, &problem.refs, problem.n_elements(), settings.xi_s)?;
            Box::new(move |u| f.fit(u))
        }
        SensorApproach::PhysicalSmoothing => {
            let f = PhysicalSmoother::new(&problem.mesh, problem.chart(), grid, settings.xi_s)?;
            Box::new(move |u| f.fit(u))
        }
    };
    snapshots
        .column_iter()
        .map(|c| {
            let mut s = fit(c.as_slice())?;
            if settings.rescale {
                s.rescale();
            }
            Ok(s)
        })
        .collect()
}

/// Index of the training parameter closest to the centre of the box
/// (lowest index on ties); its sensor seeds the template space.
pub fn central_sample(params: &[Vec<f64>], lo: &[f64], hi: &[f64]) -> usize {
    let d = |m: &Vec<f64>| -> f64 {
        m.iter()
            .zip(lo.iter().zip(hi))
            .map(|(x, (l, h))| ((x - 0.5 * (l + h)) / (h - l)).powi(2))
            .sum()
    };
    let mut best = 0;
    for k in 1..params.len() {
        if d(&params[k]) < d(&params[best]) {
            best = k;
        }
    }
    best
}

/// Everything the offline stage produces.
pub struct Offline {
    pub params: Vec<Vec<f64>>,
    /// `None` for the unregistered pipeline.
    pub greedy: Option<GreedyResult>,
    /// Field snapshots used for POD (mapped ones when registered).
    pub snapshots: DMatrix<f64>,
    pub model: ReducedModel,
}

/// Settings of a full offline run.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineSettings {
    pub registration: RegistrationConfig,
    pub sensor: SensorSettings,
    pub truncation: Truncation,
    pub registered: bool,
}

/// Greedy registration of the training snapshots, seeded with the sensor of
/// sample `seed`.
pub fn register_training(
    problem: &Problem,
    space: &DisplacementSpace,
    config: &RegistrationConfig,
    params: &[Vec<f64>],
    sensors: &[SensorField],
    seed: usize,
) -> Result<GreedyResult> {
    let reg = Registration::new(
        space,
        problem.chart(),
        Some((&problem.mesh, &problem.refs)),
        config.clone(),
    )?;
    let templates = TemplateSpace::new(vec![sensors[seed].clone()])?;
    greedy_registration(&reg, params, sensors, templates)
}

/// Field snapshots u_μ ∘ Φ_μ on the reference mesh, one column per sample.
pub fn registered_snapshots(
    problem: &Problem,
    space: &DisplacementSpace,
    params: &[Vec<f64>],
    coefficients: &[DVector<f64>],
) -> Result<DMatrix<f64>> {
    let cols: Vec<DVector<f64>> = params
        .par_iter()
        .zip(coefficients.par_iter())
        .map(|(mu, a)| Ok(problem.truth(mu, &problem.mapped_nodes(space, a)?)))
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_columns(&cols))
}

/// Offline stage: sensors, greedy registration (when enabled), POD of the
/// (mapped) fields in the H¹ product of the reference mesh, regressors.
pub fn run_offline(
    problem: &Problem,
    space: &DisplacementSpace,
    params: &[Vec<f64>],
    settings: &OfflineSettings,
    fingerprint: &str,
) -> Result<Offline> {
    if params.is_empty() {
        return Err(Error::Input("no training parameters".into()));
    }
    let raw = problem.snapshots(params);
    let (greedy, snapshots) = if settings.registered {
        let sensors = make_sensors(problem, &raw, settings.sensor)?;
        let seed = central_sample(params, &problem.spec.lo, &problem.spec.hi);
        let g = register_training(
            problem,
            space,
            &settings.registration,
            params,
            &sensors,
            seed,
        )?;
        let snaps = registered_snapshots(problem, space, params, &g.full_coefficients)?;
        (Some(g), snaps)
    } else {
        (None, raw)
    };
    let model = fit_model(
        problem,
        space,
        params,
        greedy
            .as_ref()
            .map(|g| (&g.modes, g.coefficients.as_slice())),
        &snapshots,
        settings.truncation,
        fingerprint,
    )?;
    Ok(Offline {
        params: params.to_vec(),
        greedy,
        snapshots,
        model,
    })
}

/// POD of the field snapshots and regression of both coefficient sets.
/// `maps` holds the mapping modes W_M and the reduced mapping coefficients of
/// a registered run.
pub fn fit_model(
    problem: &Problem,
    space: &DisplacementSpace,
    params: &[Vec<f64>],
    maps: Option<(&DMatrix<f64>, &[DVector<f64>])>,
    snapshots: &DMatrix<f64>,
    truncation: Truncation,
    fingerprint: &str,
) -> Result<ReducedModel> {
    let x = InnerProductMatrix::assemble(&problem.mesh, NormKind::H1);
    let (basis, alpha) = pod(snapshots, &x, truncation)?;
    let (modes, map_coeffs) = match maps {
        Some((_, c)) if c.len() != params.len() => {
            return Err(Error::Input(format!(
                "{} mapping coefficient vectors for {} parameters",
                c.len(),
                params.len()
            )))
        }
        Some((w, c)) => (w.clone(), DMatrix::from_columns(c)),
        None => (
            DMatrix::zeros(space.dim(), 0),
            DMatrix::zeros(0, params.len()),
        ),
    };
    ReducedModel::train(
        params,
        modes,
        &map_coeffs,
        basis,
        &alpha,
        fingerprint.to_string(),
    )
}

/// Held-out evaluation of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub e_avg: f64,
    pub errors: Vec<Option<f64>>,
    pub bijective: Vec<bool>,
    pub min_radius_ratio: Vec<f64>,
}

/// Predicts every test parameter and measures the relative H¹ error on the
/// predicted mesh against the exact field at its nodes.
pub fn evaluate(
    problem: &Problem,
    space: &DisplacementSpace,
    model: &ReducedModel,
    test: &[Vec<f64>],
) -> Result<Evaluation> {
    let rows: Vec<(DVector<f64>, DVector<f64>, InnerProductMatrix, bool, f64)> = test
        .par_iter()
        .map(|mu| {
            let (m, uh) = model.predict_field(
                mu,
                space,
                &problem.mesh,
                &problem.refs,
                problem.chart(),
                None,
            )?;
            let truth = problem.truth(mu, &m.nodes);
            let x = InnerProductMatrix::assemble(&problem.mesh_with_nodes(m.nodes)?, NormKind::H1);
            Ok((truth, uh, x, m.bijectivity.passed, m.min_radius_ratio))
        })
        .collect::<Result<_>>()?;
    let truth: Vec<DVector<f64>> = rows.iter().map(|r| r.0.clone()).collect();
    let preds: Vec<DVector<f64>> = rows.iter().map(|r| r.1.clone()).collect();
    let xs: Vec<&InnerProductMatrix> = rows.iter().map(|r| &r.2).collect();
    let rep = error_metrics(&truth, &preds, &xs)?;
    Ok(Evaluation {
        e_avg: rep.e_avg,
        errors: rep.per_sample,
        bijective: rows.iter().map(|r| r.3).collect(),
        min_radius_ratio: rows.iter().map(|r| r.4).collect(),
    })
}
