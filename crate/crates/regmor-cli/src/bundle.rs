use nalgebra::{DMatrix, DVector};
use regmor::io::{BinReader, BinWriter};

use crate::error::CliError;

const MAGIC: &[u8; 8] = b"RGMMAPPS";

/// Output of `register`: the mapping basis and per-snapshot coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingBundle {
    pub fingerprint: String,
    pub params: Vec<Vec<f64>>,
    /// W_M in space coordinates.
    pub modes: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// a^k in the full space, zero for failed snapshots.
    pub full: Vec<DVector<f64>>,
    /// Reduced coefficients, one M-vector per snapshot.
    pub reduced: Vec<DVector<f64>>,
    pub registered: Vec<bool>,
}

fn columns(vs: &[DVector<f64>], rows: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, vs.len());
    for (k, v) in vs.iter().enumerate() {
        m.set_column(k, v);
    }
    m
}

fn split(m: &DMatrix<f64>) -> Vec<DVector<f64>> {
    m.column_iter().map(|c| c.into_owned()).collect()
}

impl MappingBundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        let k = self.params.len();
        let p = self.params.first().map_or(0, Vec::len);
        let mut w = BinWriter::new(MAGIC, 1);
        w.str(&self.fingerprint);
        w.matrix(&DMatrix::from_fn(p, k, |d, j| self.params[j][d]));
        w.matrix(&self.modes);
        w.f64s(&self.eigenvalues);
        w.matrix(&columns(&self.full, self.modes.nrows()));
        w.matrix(&columns(&self.reduced, self.modes.ncols()));
        for &r in &self.registered {
            w.u32(r as u32);
        }
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, CliError> {
        let (mut r, version) = BinReader::new(data, MAGIC)?;
        if version != 1 {
            return Err(CliError::Input(format!(
                "unsupported mapping bundle version {version}"
            )));
        }
        let fingerprint = r.str()?;
        let pm = r.matrix()?;
        let modes = r.matrix()?;
        let eigenvalues = r.f64s()?;
        let full = r.matrix()?;
        let reduced = r.matrix()?;
        let k = pm.ncols();
        if full.ncols() != k
            || reduced.ncols() != k
            || full.nrows() != modes.nrows()
            || reduced.nrows() != modes.ncols()
        {
            return Err(CliError::Input("inconsistent mapping bundle shapes".into()));
        }
        let registered = (0..k)
            .map(|_| r.u32().map(|v| v != 0))
            .collect::<regmor::Result<Vec<_>>>()?;
        if !r.at_end() {
            return Err(CliError::Input("trailing bytes in mapping bundle".into()));
        }
        Ok(MappingBundle {
            fingerprint,
            params: split(&pm).iter().map(|c| c.as_slice().to_vec()).collect(),
            modes,
            eigenvalues,
            full: split(&full),
            reduced: split(&reduced),
            registered,
        })
    }
}
