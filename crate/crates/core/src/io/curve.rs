//! Learning-curve CSV with the header
//! `iter,psnr,ssim,psnr_band1,...,psnr_band5,loss,lr,wall_ms`.
//!
//! Floats use the shortest representation that parses back to the same
//! value; `NaN` marks a missing value (the loss before the first step, or an
//! empty latitude band).

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ViewMetrics;

pub const CURVE_HEADER: &str = "iter,psnr,ssim,psnr_band1,psnr_band2,psnr_band3,psnr_band4,psnr_band5,loss,lr,wall_ms";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iter: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub psnr_band1: f64,
    pub psnr_band2: f64,
    pub psnr_band3: f64,
    pub psnr_band4: f64,
    pub psnr_band5: f64,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

impl CurveRow {
    pub fn new(iter: usize, m: &ViewMetrics, loss: f64, lr: f64, wall_ms: u64) -> Self {
        let b = m.band_psnr;
        Self {
            iter,
            psnr: m.psnr,
            ssim: m.ssim,
            psnr_band1: b[0],
            psnr_band2: b[1],
            psnr_band3: b[2],
            psnr_band4: b[3],
            psnr_band5: b[4],
            loss,
            lr,
            wall_ms,
        }
    }

    pub fn bands(&self) -> [f64; 5] {
        [self.psnr_band1, self.psnr_band2, self.psnr_band3, self.psnr_band4, self.psnr_band5]
    }

    /// Field-wise equality that treats two NaNs as equal.
    pub fn same_as(&self, other: &CurveRow) -> bool {
        let eq = |a: f64, b: f64| a == b || (a.is_nan() && b.is_nan());
        let (x, y) = (self.float_fields(), other.float_fields());
        self.iter == other.iter && self.wall_ms == other.wall_ms && x.iter().zip(&y).all(|(a, b)| eq(*a, *b))
    }

    fn float_fields(&self) -> [f64; 9] {
        let b = self.bands();
        [self.psnr, self.ssim, b[0], b[1], b[2], b[3], b[4], self.loss, self.lr]
    }
}

/// Appends rows to a new CSV file, flushing after each so a failed run keeps
/// every row written so far.
pub struct CurveWriter {
    path: PathBuf,
    inner: csv::Writer<File>,
}

impl CurveWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_owned(),
            inner: csv::Writer::from_writer(file),
        })
    }

    pub fn append(&mut self, row: &CurveRow) -> Result<()> {
        let path = &self.path;
        self.inner.serialize(row).map_err(|source| Error::Csv {
            path: path.clone(),
            source,
        })?;
        self.inner.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn read_curve(path: &Path) -> Result<Vec<CurveRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|source| Error::Csv {
        path: path.to_owned(),
        source,
    })?;
    let header = rdr
        .headers()
        .map_err(|source| Error::Csv {
            path: path.to_owned(),
            source,
        })?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != CURVE_HEADER {
        return Err(Error::data(path, format!("unexpected header {header:?}")));
    }
    rdr.deserialize()
        .map(|r| {
            r.map_err(|source| Error::Csv {
                path: path.to_owned(),
                source,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(iter: usize, x: f64) -> CurveRow {
        CurveRow {
            iter,
            psnr: x,
            ssim: 0.5 * x,
            psnr_band1: f64::NAN,
            psnr_band2: 1.0 / 3.0,
            psnr_band3: 99.0,
            psnr_band4: -0.0,
            psnr_band5: 1e-300,
            loss: f64::NAN,
            lr: 5e-4,
            wall_ms: 17,
        }
    }

    #[test]
    fn header_is_written_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let mut w = CurveWriter::create(&path).unwrap();
        for i in 0..3 {
            w.append(&row(i, 20.0 + i as f64)).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], CURVE_HEADER);
        assert_eq!(text.matches("iter").count(), 1);
    }

    #[test]
    fn decimal_point_is_a_dot() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        CurveWriter::create(&path).unwrap().append(&row(5, 12.25)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let data = text.lines().nth(1).unwrap();
        assert!(data.starts_with("5,12.25,6.125,NaN,"), "{data}");
        assert_eq!(data.split(',').count(), 11);
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        std::fs::write(&path, "iter,psnr\n1,2\n").unwrap();
        assert!(read_curve(&path).is_err());
    }

    proptest! {
        #[test]
        fn read_inverts_write(xs in proptest::collection::vec(-1e6f64..1e6, 1..20)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("c.csv");
            let rows: Vec<_> = xs.iter().enumerate().map(|(i, x)| row(i, *x)).collect();
            let mut w = CurveWriter::create(&path).unwrap();
            for r in &rows {
                w.append(r).unwrap();
            }
            let back = read_curve(&path).unwrap();
            prop_assert_eq!(back.len(), rows.len());
            for (a, b) in rows.iter().zip(&back) {
                prop_assert!(a.same_as(b), "{:?} vs {:?}", a, b);
            }
        }
    }
}
