use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DELTA_WINDOW: usize = 2;

/// Regression deltas over time (columns) with a +-2 frame window. Frames
/// beyond either edge replicate the edge frame.
pub fn deltas(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, t_len) = x.shape();
    let norm: f64 = 2.0 * (1..=DELTA_WINDOW).map(|w| (w * w) as f64).sum::<f64>();
    let last = t_len.saturating_sub(1) as isize;
    let at = |t: isize| t.clamp(0, last) as usize;
    DMatrix::from_fn(rows, t_len, |r, t| {
        let t = t as isize;
        (1..=DELTA_WINDOW)
            .map(|w| {
                let wi = w as isize;
                w as f64 * (x[(r, at(t + wi))] - x[(r, at(t - wi))])
            })
            .sum::<f64>()
            / norm
    })
}

/// Per-dimension (row) mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population statistics over all frames of all matrices.
    pub fn fit<'a, I>(sets: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a DMatrix<f64>>,
    {
        let sets: Vec<&DMatrix<f64>> = sets.into_iter().collect();
        let dim = sets
            .first()
            .map(|m| m.nrows())
            .ok_or_else(|| Error::Data("no features to fit statistics on".into()))?;
        if sets.iter().any(|m| m.nrows() != dim) {
            return Err(Error::Argument("feature dimensions differ".into()));
        }
        let count: usize = sets.iter().map(|m| m.ncols()).sum();
        if count == 0 {
            return Err(Error::Data("no frames to fit statistics on".into()));
        }
        let mut mean = vec![0.0; dim];
        for m in &sets {
            for (r, acc) in mean.iter_mut().enumerate() {
                *acc += m.row(r).sum();
            }
        }
        mean.iter_mut().for_each(|v| *v /= count as f64);
        let mut var = vec![0.0; dim];
        for m in &sets {
            for (r, acc) in var.iter_mut().enumerate() {
                *acc += m.row(r).iter().map(|v| (v - mean[r]).powi(2)).sum::<f64>();
            }
        }
        let std = var.iter().map(|v| (v / count as f64).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    // A zero deviation passes the dimension through unscaled.
    fn scale(&self, r: usize) -> f64 {
        let s = self.std[r];
        if s > 0.0 && s.is_finite() {
            s
        } else {
            1.0
        }
    }

    fn check(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.dim() {
            return Err(Error::Argument(format!(
                "features have {} dimensions, statistics have {}",
                x.nrows(),
                self.dim()
            )));
        }
        Ok(())
    }
}

pub fn standardize(x: &DMatrix<f64>, stats: &FeatureStats) -> Result<DMatrix<f64>> {
    stats.check(x)?;
    Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| {
        (x[(r, c)] - stats.mean[r]) / stats.scale(r)
    }))
}

pub fn unstandardize(x: &DMatrix<f64>, stats: &FeatureStats) -> Result<DMatrix<f64>> {
    stats.check(x)?;
    Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| {
        x[(r, c)] * stats.scale(r) + stats.mean[r]
    }))
}

/// Writes `rows: u64, cols: u64` then row-major float64, all little-endian.
pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(&(m.nrows() as u64).to_le_bytes())?;
    put(&(m.ncols() as u64).to_le_bytes())?;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            put(&m[(r, c)].to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut word = [0u8; 8];
    let mut next = |r: &mut BufReader<fs::File>| -> Result<[u8; 8]> {
        r.read_exact(&mut word)
            .map_err(|_| Error::Format(format!("{}: truncated matrix file", path.display())))?;
        Ok(word)
    };
    let rows = u64::from_le_bytes(next(&mut r)?) as usize;
    let cols = u64::from_le_bytes(next(&mut r)?) as usize;
    let total = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("matrix dimensions overflow".into()))?;
    let mut data = Vec::with_capacity(total.min(1 << 24));
    for _ in 0..total {
        data.push(f64::from_le_bytes(next(&mut r)?));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes",
            path.display(),
            rest.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

/// JSON sidecar describing a feature matrix dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub frame_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub bands: usize,
    #[serde(default)]
    pub stats: Option<FeatureStats>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the matrix to `path` and its sidecar to `path` + `.json`.
pub fn write_feature_dump(
    path: impl AsRef<Path>,
    m: &DMatrix<f64>,
    sidecar: &FeatureSidecar,
) -> Result<()> {
    let path = path.as_ref();
    write_matrix(path, m)?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

pub fn read_feature_dump(path: impl AsRef<Path>) -> Result<(DMatrix<f64>, FeatureSidecar)> {
    let path = path.as_ref();
    let m = read_matrix(path)?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
    Ok((m, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn deltas_of_constant_and_ramp() {
        let c = DMatrix::from_element(3, 10, 4.2);
        assert!(deltas(&c).iter().all(|&v| v == 0.0));

        let a = 0.7;
        let ramp = DMatrix::from_fn(2, 12, |_, t| a * t as f64);
        let d = deltas(&ramp);
        for t in 2..10 {
            assert!((d[(0, t)] - a).abs() < 1e-12);
        }

        let single = DMatrix::from_element(4, 1, -3.0);
        assert!(deltas(&single).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardization_fit_and_inverse() {
        let x = DMatrix::from_fn(3, 50, |r, c| {
            ((r + 1) * c) as f64 * 0.3 + r as f64 - (c % 7) as f64
        });
        let stats = FeatureStats::fit([&x]).unwrap();
        let z = standardize(&x, &stats).unwrap();
        for r in 0..3 {
            let mean = z.row(r).mean();
            let var = z.row(r).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-6);
        }
        let back = unstandardize(&z, &stats).unwrap();
        assert!((back - &x).amax() < 1e-12);

        let id = FeatureStats::identity(3);
        assert_eq!(standardize(&x, &id).unwrap(), x);
    }

    #[test]
    fn zero_std_passes_through() {
        let x = DMatrix::from_element(1, 5, 2.0);
        let stats = FeatureStats::fit([&x]).unwrap();
        assert_eq!(stats.std[0], 0.0);
        let z = standardize(&x, &stats).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn feature_dump_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("feats.bin");
        let m = DMatrix::from_fn(4, 3, |r, c| r as f64 - 0.5 * c as f64);
        let side = FeatureSidecar {
            frame_size: 1024,
            hop: 160,
            sample_rate: 16000,
            bands: 4,
            stats: Some(FeatureStats::identity(4)),
        };
        write_feature_dump(&p, &m, &side).unwrap();
        let (m2, s2) = read_feature_dump(&p).unwrap();
        assert_eq!(m2, m);
        assert_eq!(s2, side);
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 16 + 12 * 8);
        assert_eq!(&bytes[..8], &4u64.to_le_bytes());
        // row-major: second value is (0, 1)
        assert_eq!(&bytes[24..32], &(-0.5f64).to_le_bytes());
        std::fs::write(&p, &bytes[..40]).unwrap();
        assert!(matches!(read_matrix(&p), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn unstandardize_inverts(vals in proptest::collection::vec(-50.0f64..50.0, 12), m in -3.0f64..3.0, s in 0.1f64..4.0) {
            let x = DMatrix::from_vec(2, 6, vals);
            let stats = FeatureStats { mean: vec![m, -m], std: vec![s, 1.0 / s] };
            let back = unstandardize(&standardize(&x, &stats).unwrap(), &stats).unwrap();
            prop_assert!((back - x).amax() < 1e-12);
        }
    }
}
