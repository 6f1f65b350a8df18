use serde::{Deserialize, Serialize};

use crate::cs::{autocorr, CsConfig};
use crate::error::{Error, Result};
use crate::pef::estimate_tdoa;

/// Ratios beyond ±99 dB are reported as ±99.
pub const DB_CAP: f64 = 99.0;

/// Largest lag searched when aligning an output to its reference.
pub const ALIGN_WINDOW: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub stage: String,
    /// `None` when no clean reference is available.
    pub snr_db: Option<f64>,
    pub sdr_db: Option<f64>,
    /// `Σ_{τ∈(dc, τmax]} R(τ)² / R(0)²` of the output.
    pub long_term_corr: f64,
    /// Delay of the output relative to the reference, in samples.
    pub alignment: Option<isize>,
}

fn db(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return if num > 0.0 { DB_CAP } else { -DB_CAP };
    }
    if num <= 0.0 {
        return -DB_CAP;
    }
    (10.0 * (num / den).log10()).clamp(-DB_CAP, DB_CAP)
}

/// `10 log10(|s|² / |y − s|²)`.
pub fn snr_db(reference: &[f64], estimate: &[f64]) -> f64 {
    let s: f64 = reference.iter().map(|v| v * v).sum();
    let e: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    db(s, e)
}

/// Scale-invariant signal-to-distortion ratio: the estimate is split into
/// its projection on the reference and the remainder.
pub fn sdr_db(reference: &[f64], estimate: &[f64]) -> f64 {
    let ss: f64 = reference.iter().map(|v| v * v).sum();
    if ss <= 0.0 {
        return -DB_CAP;
    }
    let alpha = reference
        .iter()
        .zip(estimate)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        / ss;
    let target = alpha * alpha * ss;
    let err: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(a, b)| (b - alpha * a).powi(2))
        .sum();
    db(target, err)
}

/// Unweighted long-lag correlation energy over the correlation-shaping
/// lag layout: lags `dont_care + 1 ..= tau_max`.
pub fn long_term_correlation(x: &[f64], cfg: &CsConfig) -> f64 {
    let r = autocorr(x, cfg.tau_max);
    if r[0] <= 0.0 {
        return 0.0;
    }
    r[cfg.dont_care + 1..].iter().map(|v| v * v).sum::<f64>() / (r[0] * r[0])
}

/// Lag `d` of `estimate` behind `reference` for `|d| ≤ window`, from the
/// PHAT-weighted cross-correlation. Whitening keeps the direct path on top
/// for periodic sources and long reverberant tails, where the plain
/// cross-correlation peak is ambiguous. Silent input gives 0.
pub fn align(reference: &[f64], estimate: &[f64], window: usize) -> isize {
    let n = reference.len().max(estimate.len());
    let pad = |x: &[f64]| {
        let mut v = x.to_vec();
        v.resize(n, 0.0);
        v
    };
    let window = window.min(n.saturating_sub(1) / 2);
    estimate_tdoa(&pad(reference), &pad(estimate), window).unwrap_or(0)
}

/// Scores `estimate` against an optional clean reference. The estimate is
/// first shifted by the best alignment lag; lengths may differ by at most
/// the alignment window and only the common part is compared.
pub fn measure(stage: &str, estimate: &[f64], reference: Option<&[f64]>) -> Result<MetricsReport> {
    if estimate.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "{stage}: output contains non-finite samples"
        )));
    }
    let long_term_corr = long_term_correlation(estimate, &CsConfig::default());
    let Some(reference) = reference else {
        return Ok(MetricsReport {
            stage: stage.into(),
            snr_db: None,
            sdr_db: None,
            long_term_corr,
            alignment: None,
        });
    };
    if estimate.len().abs_diff(reference.len()) > ALIGN_WINDOW {
        return Err(Error::Data(format!(
            "{stage}: {} samples against a {}-sample reference",
            estimate.len(),
            reference.len()
        )));
    }
    let window = ALIGN_WINDOW.min(reference.len().saturating_sub(1));
    let d = align(reference, estimate, window);
    let n = reference.len();
    let shifted: Vec<f64> = (0..n)
        .map(|i| {
            let j = i as isize + d;
            if j >= 0 && (j as usize) < estimate.len() {
                estimate[j as usize]
            } else {
                0.0
            }
        })
        .collect();
    Ok(MetricsReport {
        stage: stage.into(),
        snr_db: Some(snr_db(reference, &shifted)),
        sdr_db: Some(sdr_db(reference, &shifted)),
        long_term_corr,
        alignment: Some(d),
    })
}
