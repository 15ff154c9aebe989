//! Plain-text mesh and dense-matrix formats.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use super::ReferenceMesh;
use crate::io::Tokens;
use crate::{Error, Result, Vec2};

impl ReferenceMesh {
    /// Header `p N_hf N_e`, node block `index x y`, then 1-based connectivity rows.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "{} {} {}",
            self.degree(),
            self.n_nodes(),
            self.n_elements()
        )
        .unwrap();
        for (j, p) in self.nodes().iter().enumerate() {
            writeln!(s, "{} {:.17e} {:.17e}", j + 1, p.x, p.y).unwrap();
        }
        for e in self.elements() {
            let row: Vec<String> = e.iter().map(|i| (i + 1).to_string()).collect();
            writeln!(s, "{}", row.join(" ")).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut t = Tokens::new(text);
        let p = t.usize()?;
        let n = t.usize()?;
        let ne = t.usize()?;
        if p == 0 {
            return Err(Error::Input("mesh degree must be at least 1".into()));
        }
        let nlp = (p + 1) * (p + 2) / 2;
        let mut nodes = Vec::with_capacity(n);
        for j in 0..n {
            let idx = t.usize()?;
            if idx != j + 1 {
                return Err(Error::Input(format!(
                    "expected node {}, found {idx}",
                    j + 1
                )));
            }
            nodes.push(Vec2::new(t.f64()?, t.f64()?));
        }
        let mut elements = Vec::with_capacity(ne);
        for k in 0..ne {
            let mut e = Vec::with_capacity(nlp);
            for _ in 0..nlp {
                let i = t.usize()?;
                if i == 0 || i > n {
                    return Err(Error::Input(format!(
                        "element {} references node {i} out of range",
                        k + 1
                    )));
                }
                e.push(i - 1);
            }
            elements.push(e);
        }
        ReferenceMesh::new(p, nodes, elements).map_err(|e| Error::Input(e.to_string()))
    }
}

/// Dense matrix as text: header `rows cols`, then one row per line.
pub fn write_matrix(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    writeln!(s, "{} {}", m.nrows(), m.ncols()).unwrap();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|j| format!("{:.17e}", m[(i, j)]))
            .collect();
        writeln!(s, "{}", row.join(" ")).unwrap();
    }
    s
}

pub fn read_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut t = Tokens::new(text);
    let r = t.usize()?;
    let c = t.usize()?;
    let mut m = DMatrix::zeros(r, c);
    for i in 0..r {
        for j in 0..c {
            let v = t.f64()?;
            if !v.is_finite() {
                return Err(Error::Input(format!(
                    "non-finite matrix entry at ({i}, {j})"
                )));
            }
            m[(i, j)] = v;
        }
    }
    Ok(m)
}
