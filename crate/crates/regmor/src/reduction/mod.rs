//! POD in a sparse inner product, thin-plate-spline regression of reduced
//! coefficients with R² gating, and the online prediction of meshes and fields.

mod rbf;

pub use rbf::{thin_plate, CoefficientRegressor, GateFallback, RbfCoordinate, R2_THRESHOLD};

use nalgebra::{DMatrix, DVector};

use crate::femesh::{
    map_mesh, min_radius_ratio, BijectivityProbe, BijectivityReport, InnerProductMatrix, NodeRefs,
    ReferenceMesh,
};
use crate::geometry::Chart;
use crate::io::{BinReader, BinWriter};
use crate::spaces::DisplacementSpace;
use crate::{Error, Result, Vec2};

/// Smallest M with λ₁ + … + λ_M ≥ (1 − tol)(λ₁ + … + λ_K), eigenvalues sorted
/// descending. Returns 0 only for an empty spectrum.
pub fn pod_cardinality(eigenvalues: &[f64], tol: f64) -> usize {
    let total: f64 = eigenvalues.iter().sum();
    let target = (1.0 - tol) * total;
    let mut acc = 0.0;
    for (m, l) in eigenvalues.iter().enumerate() {
        acc += l;
        if acc >= target {
            return m + 1;
        }
    }
    eigenvalues.len()
}

/// How many POD modes to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truncation {
    Tolerance(f64),
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    /// Z_N, X-orthonormal columns.
    pub modes: DMatrix<f64>,
    /// All eigenvalues of the snapshot Gramian, descending and clipped at zero.
    pub eigenvalues: Vec<f64>,
}

impl PodBasis {
    pub fn n(&self) -> usize {
        self.modes.ncols()
    }

    pub fn reconstruct(&self, alpha: &DVector<f64>) -> DVector<f64> {
        &self.modes * alpha
    }

    /// Copy keeping the first `n` modes.
    pub fn truncated(&self, n: usize) -> PodBasis {
        PodBasis {
            modes: self.modes.columns(0, n.min(self.n())).into_owned(),
            eigenvalues: self.eigenvalues.clone(),
        }
    }
}

/// Method of snapshots in the X inner product; snapshots are the columns of
/// `snapshots`. Returns the basis and the coefficients α^k = Z_NᵀXu^k (N × K).
pub fn pod(
    snapshots: &DMatrix<f64>,
    x: &InnerProductMatrix,
    truncation: Truncation,
) -> Result<(PodBasis, DMatrix<f64>)> {
    let k = snapshots.ncols();
    if k == 0 {
        return Err(Error::Input("POD needs at least one snapshot".into()));
    }
    if snapshots.nrows() != x.dim() {
        return Err(Error::Input(format!(
            "snapshots have {} rows, X has {}",
            snapshots.nrows(),
            x.dim()
        )));
    }
    if snapshots.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input(
            "snapshot matrix has non-finite entries".into(),
        ));
    }
    let xu = DMatrix::from_columns(
        &snapshots
            .column_iter()
            .map(|c| x.apply(&c.into_owned()))
            .collect::<Vec<_>>(),
    );
    let mut c = snapshots.transpose() * &xu;
    c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .total_cmp(&eig.eigenvalues[i])
            .then(i.cmp(&j))
    });
    let lambdas: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let rank = lambdas.iter().filter(|&&l| l > 1e-13 * lambdas[0]).count();
    let n = match truncation {
        Truncation::Tolerance(t) => pod_cardinality(&lambdas, t),
        Truncation::Fixed(n) => n,
    }
    .min(rank);
    if n == 0 {
        return Err(Error::Input("POD with zero retained modes".into()));
    }
    let mut z = DMatrix::zeros(snapshots.nrows(), n);
    for (col, &i) in order.iter().take(n).enumerate() {
        z.set_column(
            col,
            &(snapshots * eig.eigenvectors.column(i) / lambdas[col].sqrt()),
        );
    }
    // one Cholesky re-orthonormalization pass in X
    let xz = DMatrix::from_columns(
        &z.column_iter()
            .map(|c| x.apply(&c.into_owned()))
            .collect::<Vec<_>>(),
    );
    let g = z.transpose() * &xz;
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::LinearAlgebra("POD modes are not X-independent".into()))?;
    let l = chol.l();
    let linv_t = l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::LinearAlgebra("POD re-orthonormalization failed".into()))?
        .transpose();
    let mut z = z * linv_t;
    for mut col in z.column_iter_mut() {
        let (imax, _) =
            col.iter().enumerate().fold(
                (0, 0.0),
                |b, (r, v)| if v.abs() > b.1 { (r, v.abs()) } else { b },
            );
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }
    let coeffs = z.transpose() * xu;
    Ok((
        PodBasis {
            modes: z,
            eigenvalues: lambdas,
        },
        coeffs,
    ))
}

/// Relative X-norm errors and their mean over samples with nonzero truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub e_avg: f64,
    /// `None` for excluded zero-norm truths.
    pub per_sample: Vec<Option<f64>>,
}

/// E_avg = mean_k ‖u^k − û^k‖_X / ‖u^k‖_X, each pair measured in its own X.
pub fn error_metrics(
    truth: &[DVector<f64>],
    predictions: &[DVector<f64>],
    x: &[&InnerProductMatrix],
) -> Result<ErrorReport> {
    if truth.len() != predictions.len() || truth.len() != x.len() {
        return Err(Error::Input(
            "truth, predictions and inner products differ in count".into(),
        ));
    }
    let mut per_sample = Vec::with_capacity(truth.len());
    for (k, ((u, uh), xk)) in truth.iter().zip(predictions).zip(x).enumerate() {
        if u.len() != uh.len() || u.len() != xk.dim() {
            return Err(Error::Input(format!("sample {k} has mismatched lengths")));
        }
        let nu = xk.norm(u);
        if nu == 0.0 {
            log::warn!("sample {k} has a zero-norm truth and is excluded");
            per_sample.push(None);
        } else {
            per_sample.push(Some(xk.norm(&(u - uh)) / nu));
        }
    }
    let vals: Vec<f64> = per_sample.iter().flatten().copied().collect();
    if vals.is_empty() {
        return Err(Error::Input("no sample with nonzero truth".into()));
    }
    Ok(ErrorReport {
        e_avg: vals.iter().sum::<f64>() / vals.len() as f64,
        per_sample,
    })
}

/// Deformed mesh for one parameter with its quality report.
#[derive(Debug, Clone)]
pub struct MapPrediction {
    pub nodes: Vec<Vec2>,
    /// Predicted mapping coefficients in space coordinates.
    pub coefficients: DVector<f64>,
    pub bijectivity: BijectivityReport,
    pub min_radius_ratio: f64,
    /// Whether μ lies inside the training parameter box.
    pub in_box: bool,
}

/// Mapping modes, solution POD basis and the two coefficient regressors.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedModel {
    /// W_M in space coordinates (dim × M); zero columns for an unregistered model.
    pub map_modes: DMatrix<f64>,
    pub map_regressor: Option<CoefficientRegressor>,
    pub pod: PodBasis,
    pub field_regressor: CoefficientRegressor,
    pub fingerprint: String,
}

const MODEL_MAGIC: &[u8; 8] = b"RGMMODEL";

impl ReducedModel {
    /// Fits the regressors. `map_coefficients` holds the reduced mapping
    /// coefficients per sample (M × K), `field_coefficients` α^k (N × K).
    pub fn train(
        params: &[Vec<f64>],
        map_modes: DMatrix<f64>,
        map_coefficients: &DMatrix<f64>,
        pod: PodBasis,
        field_coefficients: &DMatrix<f64>,
        fingerprint: String,
    ) -> Result<Self> {
        let map_regressor = if map_modes.ncols() > 0 {
            Some(CoefficientRegressor::fit(
                params,
                &map_coefficients.transpose(),
                GateFallback::Zero,
            )?)
        } else {
            None
        };
        let field_regressor =
            CoefficientRegressor::fit(params, &field_coefficients.transpose(), GateFallback::Mean)?;
        Ok(ReducedModel {
            map_modes,
            map_regressor,
            pod,
            field_regressor,
            fingerprint,
        })
    }

    pub fn n_params(&self) -> usize {
        self.field_regressor.n_params()
    }

    /// Model restricted to the first `n` solution modes.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.pod.n() {
            return Err(Error::Input(format!(
                "cannot keep {n} of {} solution modes",
                self.pod.n()
            )));
        }
        Ok(ReducedModel {
            pod: self.pod.truncated(n),
            field_regressor: self.field_regressor.truncated(n),
            ..self.clone()
        })
    }

    /// â_μ in space coordinates, W_M â_μ.
    pub fn map_coefficients(&self, mu: &[f64]) -> Result<DVector<f64>> {
        match &self.map_regressor {
            Some(r) => Ok(&self.map_modes * r.predict(mu)?),
            None => {
                self.field_regressor.predict(mu)?;
                Ok(DVector::zeros(self.map_modes.nrows()))
            }
        }
    }

    /// Φ_μ(𝒯_hf): nodes mapped by the predicted displacement and, if given,
    /// the geometry at μ.
    #[allow(clippy::too_many_arguments)]
    pub fn predict_map(
        &self,
        mu: &[f64],
        space: &DisplacementSpace,
        mesh: &ReferenceMesh,
        refs: &NodeRefs,
        reference: &dyn Chart,
        at_mu: Option<&dyn Chart>,
    ) -> Result<MapPrediction> {
        let a = self.map_coefficients(mu)?;
        if a.len() != space.dim() {
            return Err(Error::Input(format!(
                "model has {} mapping coefficients, space dimension is {}",
                a.len(),
                space.dim()
            )));
        }
        let raw = space.expand(&a);
        let nodes = map_mesh(mesh, refs, reference, at_mu, |q, x| {
            space.eval_raw(raw.as_slice(), q, x)
        })?;
        let bijectivity = BijectivityProbe::new(mesh).check(mesh, &nodes);
        let min_radius_ratio = min_radius_ratio(mesh, &nodes);
        Ok(MapPrediction {
            nodes,
            coefficients: a,
            bijectivity,
            min_radius_ratio,
            in_box: self.field_regressor.in_box(mu),
        })
    }

    /// û_μ = Z_N α̂_μ.
    pub fn predict_coefficients(&self, mu: &[f64]) -> Result<DVector<f64>> {
        self.field_regressor.predict(mu)
    }

    pub fn predict_values(&self, mu: &[f64]) -> Result<DVector<f64>> {
        Ok(self.pod.reconstruct(&self.predict_coefficients(mu)?))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn predict_field(
        &self,
        mu: &[f64],
        space: &DisplacementSpace,
        mesh: &ReferenceMesh,
        refs: &NodeRefs,
        reference: &dyn Chart,
        at_mu: Option<&dyn Chart>,
    ) -> Result<(MapPrediction, DVector<f64>)> {
        let m = self.predict_map(mu, space, mesh, refs, reference, at_mu)?;
        Ok((m, self.predict_values(mu)?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::new(MODEL_MAGIC, 1);
        w.str(&self.fingerprint);
        w.matrix(&self.map_modes);
        match &self.map_regressor {
            Some(r) => {
                w.u32(1);
                r.write(&mut w);
            }
            None => w.u32(0),
        }
        w.matrix(&self.pod.modes);
        w.f64s(&self.pod.eigenvalues);
        self.field_regressor.write(&mut w);
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let (mut r, version) = BinReader::new(data, MODEL_MAGIC)?;
        if version != 1 {
            return Err(Error::Input(format!("unsupported model version {version}")));
        }
        let fingerprint = r.str()?;
        let map_modes = r.matrix()?;
        let map_regressor = match r.u32()? {
            0 => None,
            1 => Some(CoefficientRegressor::read(&mut r)?),
            v => return Err(Error::Input(format!("bad regressor flag {v}"))),
        };
        let modes = r.matrix()?;
        let eigenvalues = r.f64s()?;
        let field_regressor = CoefficientRegressor::read(&mut r)?;
        if !r.at_end() {
            return Err(Error::Input("trailing bytes in model file".into()));
        }
        Ok(ReducedModel {
            map_modes,
            map_regressor,
            pod: PodBasis { modes, eigenvalues },
            field_regressor,
            fingerprint,
        })
    }
}
