//! Shared text tokenizer, binary bundles and CSV helpers.

use crate::{Error, Result};

/// Whitespace tokenizer for the text formats.
pub struct Tokens<'a> {
    it: std::str::SplitWhitespace<'a>,
}

impl<'a> Tokens<'a> {
    pub fn new(text: &'a str) -> Self {
        Tokens {
            it: text.split_whitespace(),
        }
    }

    pub fn word(&mut self) -> Result<&'a str> {
        self.it
            .next()
            .ok_or_else(|| Error::Input("unexpected end of file".into()))
    }

    pub fn expect(&mut self, w: &str) -> Result<()> {
        let got = self.word()?;
        if got != w {
            return Err(Error::Input(format!("expected '{w}', found '{got}'")));
        }
        Ok(())
    }

    pub fn f64(&mut self) -> Result<f64> {
        let w = self.word()?;
        w.parse()
            .map_err(|_| Error::Input(format!("invalid number '{w}'")))
    }

    pub fn usize(&mut self) -> Result<usize> {
        let w = self.word()?;
        w.parse()
            .map_err(|_| Error::Input(format!("invalid count '{w}'")))
    }

    pub fn i32(&mut self) -> Result<i32> {
        let w = self.word()?;
        w.parse()
            .map_err(|_| Error::Input(format!("invalid integer '{w}'")))
    }
}

/// Little-endian binary writer for bundles: a tag, a format version, then
/// typed records.
pub struct BinWriter {
    buf: Vec<u8>,
}

impl BinWriter {
    pub fn new(magic: &[u8; 8], version: u32) -> Self {
        let mut w = BinWriter { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u32(version);
        w
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for &x in v {
            self.f64(x);
        }
    }

    pub fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
    }

    /// Shape then column-major entries.
    pub fn matrix(&mut self, m: &nalgebra::DMatrix<f64>) {
        self.u64(m.nrows() as u64);
        self.u64(m.ncols() as u64);
        for &x in m.as_slice() {
            self.f64(x);
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct BinReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> BinReader<'a> {
    /// Checks the tag and returns the reader with the stored version.
    pub fn new(data: &'a [u8], magic: &[u8; 8]) -> Result<(Self, u32)> {
        if data.len() < 12 || &data[..8] != magic {
            return Err(Error::Input(format!(
                "not a {} file",
                String::from_utf8_lossy(magic).trim_end_matches('\0')
            )));
        }
        let mut r = BinReader { data, pos: 8 };
        let v = r.u32()?;
        Ok((r, v))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Input("truncated binary file".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()? as usize;
        if n > self.data.len() {
            return Err(Error::Input("corrupt length in binary file".into()));
        }
        Ok(n)
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Input("invalid utf-8 in binary file".into()))
    }

    pub fn matrix(&mut self) -> Result<nalgebra::DMatrix<f64>> {
        let r = self.len()?;
        let c = self.len()?;
        if r.saturating_mul(c).saturating_mul(8) > self.data.len() {
            return Err(Error::Input("corrupt matrix shape in binary file".into()));
        }
        let v: Vec<f64> = (0..r * c).map(|_| self.f64()).collect::<Result<_>>()?;
        Ok(nalgebra::DMatrix::from_vec(r, c, v))
    }

    pub fn at_end(&self) -> bool {
        self.pos == self.data.len()
    }
}

/// Full-precision scientific notation used in every CSV file.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.17e}")
}

/// Writes a CSV with a header row.
pub fn csv_string(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| fmt_f64(*v)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Parses a numeric CSV; a first line that does not parse is treated as a header.
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut header = Vec::new();
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(|c| c.trim()).collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            cells.iter().map(|c| c.parse::<f64>()).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if ln == 0 || (rows.is_empty() && header.is_empty()) => {
                header = cells.iter().map(|c| c.to_string()).collect()
            }
            Err(_) => {
                return Err(Error::Input(format!(
                    "line {}: non-numeric CSV entry",
                    ln + 1
                )))
            }
        }
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let m = nalgebra::DMatrix::from_fn(3, 2, |i, j| (i as f64 + 0.1) * (j as f64 - 2.5));
        let mut w = BinWriter::new(b"TESTBLOB", 3);
        w.str("hello");
        w.matrix(&m);
        w.f64s(&[1.5, -2.0]);
        let bytes = w.finish();
        let (mut r, v) = BinReader::new(&bytes, b"TESTBLOB").unwrap();
        assert_eq!(v, 3);
        assert_eq!(r.str().unwrap(), "hello");
        assert_eq!(r.matrix().unwrap(), m);
        assert_eq!(r.f64s().unwrap(), vec![1.5, -2.0]);
        assert!(r.at_end());
        assert!(BinReader::new(&bytes, b"OTHERTAG").is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows = vec![vec![0.1, 1.0 / 3.0], vec![-2e-300, 7.0]];
        let s = csv_string(&["a", "b"], &rows);
        let (h, back) = parse_csv(&s).unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(back, rows);
    }
}
