use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Coefficients whose leave-one-out R² does not exceed this are switched off.
pub const R2_THRESHOLD: f64 = 0.75;

/// What a switched-off coordinate predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateFallback {
    Zero,
    Mean,
}

/// φ(r) = r² log r, with φ(0) = 0.
pub fn thin_plate(r: f64) -> f64 {
    if r <= 0.0 {
        0.0
    } else {
        r * r * r.ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbfCoordinate {
    /// Kernel weights (one per center) followed by the linear tail [c, b₁..b_P].
    pub coeffs: DVector<f64>,
    pub r2: f64,
    pub active: bool,
    pub mean: f64,
}

/// Per-coordinate thin-plate-spline interpolants on min-max normalized
/// parameters, with leave-one-out R² gating.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientRegressor {
    lo: Vec<f64>,
    scale: Vec<f64>,
    centers: Vec<Vec<f64>>,
    coords: Vec<RbfCoordinate>,
    fallback: GateFallback,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl CoefficientRegressor {
    /// Fits one interpolant per column of `targets` (rows = training samples).
    pub fn fit(
        params: &[Vec<f64>],
        targets: &DMatrix<f64>,
        fallback: GateFallback,
    ) -> Result<Self> {
        let k = params.len();
        if k == 0 || targets.nrows() != k {
            return Err(Error::Input(format!(
                "{} parameters for {} target rows",
                k,
                targets.nrows()
            )));
        }
        let p = params[0].len();
        if params
            .iter()
            .any(|m| m.len() != p || m.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Input(
                "training parameters must be finite and of equal length".into(),
            ));
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("training targets must be finite".into()));
        }
        if k < p + 2 {
            return Err(Error::Input(format!(
                "RBF fit needs at least {} samples for {p} parameters, got {k}",
                p + 2
            )));
        }
        let mut lo = vec![f64::INFINITY; p];
        let mut hi = vec![f64::NEG_INFINITY; p];
        for m in params {
            for d in 0..p {
                lo[d] = lo[d].min(m[d]);
                hi[d] = hi[d].max(m[d]);
            }
        }
        let scale: Vec<f64> = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| if h > l { 1.0 / (h - l) } else { 1.0 })
            .collect();
        let centers: Vec<Vec<f64>> = params
            .iter()
            .map(|m| (0..p).map(|d| (m[d] - lo[d]) * scale[d]).collect())
            .collect();
        for i in 0..k {
            for j in 0..i {
                if dist(&centers[i], &centers[j]) < 1e-12 {
                    return Err(Error::Input(format!(
                        "training parameters {j} and {i} coincide"
                    )));
                }
            }
        }
        let n = k + p + 1;
        let mut a = DMatrix::zeros(n, n);
        for i in 0..k {
            for j in 0..k {
                a[(i, j)] = thin_plate(dist(&centers[i], &centers[j]));
            }
            a[(i, k)] = 1.0;
            a[(k, i)] = 1.0;
            for d in 0..p {
                a[(i, k + 1 + d)] = centers[i][d];
                a[(k + 1 + d, i)] = centers[i][d];
            }
        }
        let inv = a
            .clone()
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::LinearAlgebra("RBF interpolation system is singular".into()))?;
        let lu = a.lu();
        let mut coords = Vec::with_capacity(targets.ncols());
        for c in 0..targets.ncols() {
            let y = targets.column(c);
            let mut rhs = DVector::zeros(n);
            rhs.rows_mut(0, k).copy_from(&y);
            let coeffs = lu.solve(&rhs).ok_or_else(|| {
                Error::LinearAlgebra("RBF interpolation system is singular".into())
            })?;
            let mean = y.mean();
            let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
            // leave-one-out residuals in closed form
            let ss_res: f64 = (0..k).map(|i| (coeffs[i] / inv[(i, i)]).powi(2)).sum();
            let tiny = 1e-24 * (1.0 + mean * mean) * k as f64;
            let r2 = if ss_tot <= tiny {
                if ss_res <= tiny {
                    1.0
                } else {
                    f64::NEG_INFINITY
                }
            } else {
                1.0 - ss_res / ss_tot
            };
            coords.push(RbfCoordinate {
                coeffs,
                r2,
                active: r2 > R2_THRESHOLD,
                mean,
            });
        }
        Ok(CoefficientRegressor {
            lo,
            scale,
            centers,
            coords,
            fallback,
        })
    }

    pub fn n_params(&self) -> usize {
        self.lo.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.coords.len()
    }

    pub fn coordinates(&self) -> &[RbfCoordinate] {
        &self.coords
    }

    pub fn fallback(&self) -> GateFallback {
        self.fallback
    }

    /// Copy keeping the first `n` output coordinates.
    pub fn truncated(&self, n: usize) -> Self {
        let mut r = self.clone();
        r.coords.truncate(n);
        r
    }

    /// Switches a coordinate on or off regardless of its score.
    pub fn set_active(&mut self, c: usize, active: bool) {
        self.coords[c].active = active;
    }

    pub fn normalize(&self, mu: &[f64]) -> Vec<f64> {
        mu.iter()
            .zip(&self.lo)
            .zip(&self.scale)
            .map(|((m, l), s)| (m - l) * s)
            .collect()
    }

    /// Whether `mu` lies inside the training bounding box.
    pub fn in_box(&self, mu: &[f64]) -> bool {
        self.normalize(mu)
            .iter()
            .all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v))
    }

    /// Raw interpolant value of coordinate `c`, ignoring the gate. Parameters
    /// outside the training box are replaced by the nearest point of the box.
    pub fn interpolate(&self, c: usize, mu: &[f64]) -> f64 {
        let x: Vec<f64> = self
            .normalize(mu)
            .iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        let k = self.centers.len();
        let w = &self.coords[c].coeffs;
        let mut v = w[k];
        for (d, xd) in x.iter().enumerate() {
            v += w[k + 1 + d] * xd;
        }
        for (i, ctr) in self.centers.iter().enumerate() {
            v += w[i] * thin_plate(dist(&x, ctr));
        }
        v
    }

    pub fn predict(&self, mu: &[f64]) -> Result<DVector<f64>> {
        if mu.len() != self.n_params() {
            return Err(Error::Input(format!(
                "parameter has {} components, model expects {}",
                mu.len(),
                self.n_params()
            )));
        }
        Ok(DVector::from_fn(self.coords.len(), |c, _| {
            let rc = &self.coords[c];
            if rc.active {
                self.interpolate(c, mu)
            } else {
                match self.fallback {
                    GateFallback::Zero => 0.0,
                    GateFallback::Mean => rc.mean,
                }
            }
        }))
    }

    pub(crate) fn write(&self, w: &mut crate::io::BinWriter) {
        w.u32(match self.fallback {
            GateFallback::Zero => 0,
            GateFallback::Mean => 1,
        });
        w.f64s(&self.lo);
        w.f64s(&self.scale);
        w.u64(self.centers.len() as u64);
        for c in &self.centers {
            w.f64s(c);
        }
        w.u64(self.coords.len() as u64);
        for c in &self.coords {
            w.f64s(c.coeffs.as_slice());
            w.f64(c.r2);
            w.u32(c.active as u32);
            w.f64(c.mean);
        }
    }

    pub(crate) fn read(r: &mut crate::io::BinReader) -> Result<Self> {
        let fallback = match r.u32()? {
            0 => GateFallback::Zero,
            1 => GateFallback::Mean,
            v => return Err(Error::Input(format!("unknown gate fallback tag {v}"))),
        };
        let lo = r.f64s()?;
        let scale = r.f64s()?;
        let nc = r.u64()? as usize;
        let centers = (0..nc).map(|_| r.f64s()).collect::<Result<Vec<_>>>()?;
        let no = r.u64()? as usize;
        let mut coords = Vec::with_capacity(no.min(1 << 20));
        for _ in 0..no {
            let coeffs = DVector::from_vec(r.f64s()?);
            let r2 = r.f64()?;
            let active = r.u32()? != 0;
            let mean = r.f64()?;
            coords.push(RbfCoordinate {
                coeffs,
                r2,
                active,
                mean,
            });
        }
        if scale.len() != lo.len() || centers.iter().any(|c| c.len() != lo.len()) {
            return Err(Error::Input("inconsistent regressor record".into()));
        }
        Ok(CoefficientRegressor {
            lo,
            scale,
            centers,
            coords,
            fallback,
        })
    }
}
