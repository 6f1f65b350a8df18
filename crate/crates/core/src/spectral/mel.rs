use nalgebra::DMatrix;

use super::features::deltas;
use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular band-integration matrix and its pseudo-inverse.
///
/// Band centres are equally spaced on the Mel scale from 0 Hz to Nyquist.
/// Each triangle rises from the previous centre and falls to the next, so
/// the rows form a partition of unity over the linear bins; the first and
/// last bands are half-triangles that cover DC and Nyquist. The
/// back-transformation is the Moore-Penrose pseudo-inverse of that matrix.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    matrix: DMatrix<f64>,
    pinv: DMatrix<f64>,
}

impl MelFilterbank {
    pub fn new(bands: usize, frame_size: usize, sample_rate: u32) -> Result<Self> {
        if bands < 2 {
            return Err(Error::Argument("need at least two Mel bands".into()));
        }
        if frame_size < 2 || sample_rate == 0 {
            return Err(Error::Argument("invalid frame size or sample rate".into()));
        }
        let bins = frame_size / 2 + 1;
        let nyquist = f64::from(sample_rate) / 2.0;
        let top = hz_to_mel(nyquist);
        let centres: Vec<f64> = (0..bands)
            .map(|b| mel_to_hz(top * b as f64 / (bands - 1) as f64))
            .collect();
        let bin_hz = |k: usize| k as f64 * f64::from(sample_rate) / frame_size as f64;

        let matrix = DMatrix::from_fn(bands, bins, |b, k| {
            let f = bin_hz(k);
            let c = centres[b];
            let rise = if b == 0 {
                if f >= c {
                    1.0
                } else {
                    0.0
                }
            } else {
                (f - centres[b - 1]) / (c - centres[b - 1])
            };
            let fall = if b == bands - 1 {
                if f <= c {
                    1.0
                } else {
                    0.0
                }
            } else {
                (centres[b + 1] - f) / (centres[b + 1] - c)
            };
            rise.min(fall).max(0.0)
        });
        Self::from_matrix(matrix)
    }

    /// Wraps an arbitrary nonnegative band matrix (B × F).
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Argument(
                "filterbank weights must be finite and nonnegative".into(),
            ));
        }
        if let Some(b) = (0..matrix.nrows()).find(|&b| matrix.row(b).iter().all(|&v| v == 0.0)) {
            return Err(Error::Argument(format!(
                "Mel band {b} covers no frequency bin"
            )));
        }
        let svd = matrix.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let pinv = svd
            .pseudo_inverse(smax * 1e-12)
            .map_err(|e| Error::Argument(format!("pseudo-inverse failed: {e}")))?;
        Ok(Self { matrix, pinv })
    }

    pub fn bands(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn bins(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn pseudo_inverse(&self) -> &DMatrix<f64> {
        &self.pinv
    }
}

/// Log Mel-band energies (B × T) with their regression deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFeatures {
    pub log_energies: DMatrix<f64>,
    pub deltas: DMatrix<f64>,
}

impl MelFeatures {
    pub fn from_log_energies(log_energies: DMatrix<f64>) -> Self {
        let deltas = deltas(&log_energies);
        Self {
            log_energies,
            deltas,
        }
    }

    pub fn bands(&self) -> usize {
        self.log_energies.nrows()
    }

    pub fn frames(&self) -> usize {
        self.log_energies.ncols()
    }

    /// Log energies stacked over deltas, 2B × T.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (b, t) = self.log_energies.shape();
        let mut out = DMatrix::zeros(2 * b, t);
        out.rows_mut(0, b).copy_from(&self.log_energies);
        out.rows_mut(b, b).copy_from(&self.deltas);
        out
    }
}

fn check_bins(rows: usize, fb: &MelFilterbank) -> Result<()> {
    if rows != fb.bins() {
        return Err(Error::Argument(format!(
            "{rows} frequency bins, filterbank expects {}",
            fb.bins()
        )));
    }
    Ok(())
}

/// Linear band energies `M · |X|`.
pub fn mel_energies(magnitudes: &DMatrix<f64>, fb: &MelFilterbank) -> Result<DMatrix<f64>> {
    check_bins(magnitudes.nrows(), fb)?;
    Ok(&fb.matrix * magnitudes)
}

/// `log(max(M · |X|, floor))` plus deltas.
pub fn mel_forward(
    magnitudes: &DMatrix<f64>,
    fb: &MelFilterbank,
    floor: f64,
) -> Result<MelFeatures> {
    let lin = mel_energies(magnitudes, fb)?;
    Ok(MelFeatures::from_log_energies(
        lin.map(|e| e.max(floor).ln()),
    ))
}

/// Back-transformation from linear Mel energies to magnitudes, clipped at 0.
pub fn mel_backward(mel: &DMatrix<f64>, fb: &MelFilterbank) -> Result<DMatrix<f64>> {
    if mel.nrows() != fb.bands() {
        return Err(Error::Argument(format!(
            "{} bands, filterbank has {}",
            mel.nrows(),
            fb.bands()
        )));
    }
    Ok((&fb.pinv * mel).map(|v| v.max(0.0)))
}
