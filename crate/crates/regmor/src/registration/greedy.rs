use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::objective::{Projector, RegisterResult, Registration};
use super::TemplateSpace;
use crate::reduction::pod_cardinality;
use crate::sensor::SensorField;
use crate::{Error, Result};

/// Outcome of one snapshot in the last outer iteration.
#[derive(Debug, Clone)]
pub enum SnapshotOutcome {
    Registered(RegisterResult),
    Failed(String),
}

impl SnapshotOutcome {
    pub fn result(&self) -> Option<&RegisterResult> {
        match self {
            SnapshotOutcome::Registered(r) => Some(r),
            SnapshotOutcome::Failed(_) => None,
        }
    }
}

/// Summary of one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyIteration {
    /// Template-space size N during the iteration.
    pub n_templates: usize,
    /// max_k 𝔣*_{N,M} over the registered snapshots.
    pub max_proximity: f64,
    /// Index of the worst snapshot.
    pub worst: usize,
    /// Retained mapping modes M after POD.
    pub n_modes: usize,
}

#[derive(Debug, Clone)]
pub struct GreedyResult {
    pub templates: TemplateSpace,
    /// Mapping basis in space coordinates (dim × M); columns are orthonormal
    /// in |||·|||, so raw displacements are `space.basis() * modes`.
    pub modes: DMatrix<f64>,
    /// POD eigenvalues of the mapping snapshots, descending.
    pub eigenvalues: Vec<f64>,
    /// Registered coefficients a^k in the full space (zero for failures).
    pub full_coefficients: Vec<DVector<f64>>,
    /// Reduced coefficients ((W_M e_m, φ^{*,k})).
    pub coefficients: Vec<DVector<f64>>,
    pub outcomes: Vec<SnapshotOutcome>,
    pub history: Vec<GreedyIteration>,
}

impl GreedyResult {
    pub fn n_failed(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| o.result().is_none())
            .count()
    }
}

/// POD of coefficient vectors whose inner product is Euclidean.
///
/// Returns the modes (columns orthonormal), all eigenvalues (descending,
/// clipped at zero) and the retained count.
pub(crate) fn euclidean_pod(
    snaps: &[DVector<f64>],
    tol_pod: f64,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let k = snaps.len();
    let dim = snaps[0].len();
    let a = DMatrix::from_columns(snaps);
    let c = a.transpose() * &a;
    let eig = c.symmetric_eigen();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .total_cmp(&eig.eigenvalues[i])
            .then(i.cmp(&j))
    });
    let lambdas: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = lambdas.iter().sum();
    if total <= 0.0 {
        return Ok((DMatrix::zeros(dim, 0), lambdas));
    }
    let floor = 1e-14 * lambdas[0];
    let m = pod_cardinality(&lambdas, tol_pod).min(lambdas.iter().filter(|&&l| l > floor).count());
    let mut modes = DMatrix::zeros(dim, m);
    for (col, &i) in order.iter().take(m).enumerate() {
        let u = eig.eigenvectors.column(i);
        let mut v = &a * u / lambdas[col].sqrt();
        let (imax, _) =
            v.iter().enumerate().fold(
                (0, 0.0),
                |b, (r, x)| if x.abs() > b.1 { (r, x.abs()) } else { b },
            );
        if v[imax] < 0.0 {
            v.neg_mut();
        }
        modes.set_column(col, &v);
    }
    Ok((modes, lambdas))
}

/// Greedy parametric registration: register every snapshot, compress the
/// maps by POD, and enrich the template space with the worst mapped snapshot
/// until max_k 𝔣* < tol or N reaches n_max.
pub fn greedy_registration(
    reg: &Registration,
    params: &[Vec<f64>],
    snapshots: &[SensorField],
    initial: TemplateSpace,
) -> Result<GreedyResult> {
    if snapshots.is_empty() {
        return Err(Error::Input(
            "greedy registration needs at least one snapshot".into(),
        ));
    }
    if params.len() != snapshots.len() {
        return Err(Error::Input(format!(
            "{} parameters for {} snapshots",
            params.len(),
            snapshots.len()
        )));
    }
    let cfg = reg.config().clone();
    if cfg.n_max < initial.len() {
        return Err(Error::Input(format!(
            "n_max = {} is below the initial template count {}",
            cfg.n_max,
            initial.len()
        )));
    }
    let dim = reg.space().dim();
    let mut templates = initial;
    let mut start: Vec<DVector<f64>> = vec![DVector::zeros(dim); snapshots.len()];
    let mut history = Vec::new();
    let mut first = true;
    loop {
        let proj = reg.projector(&templates)?;
        let outcomes: Vec<SnapshotOutcome> = if first && cfg.continuation {
            continuation_pass(reg, &proj, params, snapshots)?
        } else {
            snapshots
                .par_iter()
                .zip(start.par_iter())
                .map(|(s, a0)| match reg.register_one(s, &proj, a0) {
                    Ok(r) => SnapshotOutcome::Registered(r),
                    Err(e) => SnapshotOutcome::Failed(e.to_string()),
                })
                .collect()
        };
        first = false;
        for (k, o) in outcomes.iter().enumerate() {
            match o {
                SnapshotOutcome::Registered(r) => start[k] = r.a.clone(),
                SnapshotOutcome::Failed(msg) => log::warn!("snapshot {k} skipped: {msg}"),
            }
        }
        let ok: Vec<usize> = (0..outcomes.len())
            .filter(|&k| outcomes[k].result().is_some())
            .collect();
        if ok.is_empty() {
            let first = match &outcomes[0] {
                SnapshotOutcome::Failed(m) => m.clone(),
                SnapshotOutcome::Registered(_) => unreachable!(),
            };
            return Err(Error::Registration(format!(
                "all {} registrations failed; first: {first}",
                outcomes.len()
            )));
        }
        let (mut worst, mut fmax) = (ok[0], f64::NEG_INFINITY);
        for &k in &ok {
            let f = outcomes[k].result().unwrap().proximity;
            if f > fmax {
                fmax = f;
                worst = k;
            }
        }
        let registered: Vec<DVector<f64>> = ok.iter().map(|&k| start[k].clone()).collect();
        let (modes, eigenvalues) = euclidean_pod(&registered, cfg.tol_pod)?;
        log::info!(
            "N = {}: max proximity {fmax:.4e} (snapshot {worst}), M = {}",
            templates.len(),
            modes.ncols()
        );
        history.push(GreedyIteration {
            n_templates: templates.len(),
            max_proximity: fmax,
            worst,
            n_modes: modes.ncols(),
        });
        let stop = fmax < cfg.tol || templates.len() >= cfg.n_max;
        let enriched = !stop && {
            let field = reg.pullback(&snapshots[worst], &start[worst])?;
            match templates.push(field) {
                Ok(()) => true,
                Err(e) => {
                    log::warn!("enrichment stopped: {e}");
                    false
                }
            }
        };
        if !enriched {
            let coefficients = start
                .iter()
                .enumerate()
                .map(|(k, a)| {
                    if outcomes[k].result().is_some() {
                        modes.tr_mul(a)
                    } else {
                        DVector::zeros(modes.ncols())
                    }
                })
                .collect();
            let full_coefficients = start
                .iter()
                .enumerate()
                .map(|(k, a)| {
                    if outcomes[k].result().is_some() {
                        a.clone()
                    } else {
                        DVector::zeros(dim)
                    }
                })
                .collect();
            return Ok(GreedyResult {
                templates,
                modes,
                eigenvalues,
                full_coefficients,
                coefficients,
                outcomes,
                history,
            });
        }
    }
}

/// A warm-started registration ending this much worse than its neighbour is
/// repeated from a = 0.
const RETRY_FACTOR: f64 = 10.0;

/// Min-max normalized parameters (degenerate directions left unscaled).
fn normalized(params: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = params[0].len();
    let lo: Vec<f64> = (0..p)
        .map(|d| params.iter().map(|m| m[d]).fold(f64::INFINITY, f64::min))
        .collect();
    let hi: Vec<f64> = (0..p)
        .map(|d| {
            params
                .iter()
                .map(|m| m[d])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    params
        .iter()
        .map(|m| {
            (0..p)
                .map(|d| {
                    if hi[d] > lo[d] {
                        (m[d] - lo[d]) / (hi[d] - lo[d])
                    } else {
                        m[d] - lo[d]
                    }
                })
                .collect()
        })
        .collect()
}

/// First pass by parameter continuation: start from the snapshot closest to
/// the template space at a = 0, then repeatedly register the unvisited
/// snapshot nearest (in normalized parameters) to a registered one, starting
/// from that neighbour's coefficients and falling back to a = 0 when that
/// fails or ends far worse than the neighbour.
fn continuation_pass(
    reg: &Registration,
    proj: &Projector,
    params: &[Vec<f64>],
    snapshots: &[SensorField],
) -> Result<Vec<SnapshotOutcome>> {
    let k = snapshots.len();
    let dim = reg.space().dim();
    let zero = DVector::zeros(dim);
    let x = normalized(params);
    let dist = |i: usize, j: usize| -> f64 {
        x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum()
    };
    let f0: Vec<f64> = snapshots
        .par_iter()
        .map(|s| reg.proximity(s, proj, &zero).unwrap_or(f64::INFINITY))
        .collect();
    let mut root = 0;
    for i in 1..k {
        if f0[i] < f0[root] {
            root = i;
        }
    }
    let mut outcomes: Vec<Option<SnapshotOutcome>> = vec![None; k];
    let mut order = vec![(root, None::<usize>)];
    let mut visited = vec![false; k];
    visited[root] = true;
    // nearest visited neighbour of every unvisited snapshot
    let mut near: Vec<(f64, usize)> = (0..k).map(|i| (dist(i, root), root)).collect();
    while order.len() < k {
        let mut next = None;
        for i in 0..k {
            if !visited[i] && next.is_none_or(|n: usize| near[i].0 < near[n].0) {
                next = Some(i);
            }
        }
        let i = next.expect("unvisited snapshot");
        visited[i] = true;
        order.push((i, Some(near[i].1)));
        for j in 0..k {
            if !visited[j] && dist(j, i) < near[j].0 {
                near[j] = (dist(j, i), i);
            }
        }
    }
    for (i, parent) in order {
        let from = parent.and_then(|p| outcomes[p].as_ref().and_then(|o| o.result()));
        let guess = from.map(|r| r.a.clone()).unwrap_or_else(|| zero.clone());
        let mut res = reg.register_one(&snapshots[i], proj, &guess);
        if let Some(pr) = from {
            let poor = res.as_ref().map_or(true, |r| {
                r.proximity > RETRY_FACTOR * pr.proximity.max(reg.config().tol)
            });
            if poor {
                let fresh = reg.register_one(&snapshots[i], proj, &zero);
                res = match (res, fresh) {
                    (Ok(w), Ok(z)) => Ok(if z.proximity < w.proximity { z } else { w }),
                    (Err(_), z) => z,
                    (w, Err(_)) => w,
                };
            }
        }
        outcomes[i] = Some(match res {
            Ok(r) => SnapshotOutcome::Registered(r),
            Err(e) => SnapshotOutcome::Failed(e.to_string()),
        });
    }
    Ok(outcomes
        .into_iter()
        .map(|o| o.expect("every snapshot visited"))
        .collect())
}
