//! Phase-error based multi-channel dereverberation.
//!
//! For every channel pair the wrapped phase difference of their spectra is
//! mapped to a mask `η = 1 / (1 + γ^{θ²})`. The masks of all pairs that
//! contain a channel are fused by a modified geometric mean, and the masked
//! spectra of all channels are summed.

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::neural::sigmoid;
use crate::spectral::{istft_cropped, stft_padded, Spectrogram, WindowKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PefConfig {
    pub gamma: f64,
    /// Fusion exponent; `None` uses the channel count.
    pub m: Option<f64>,
    pub frame_size: usize,
    pub hop: usize,
    /// Highest masked bin; bins above pass through with unit gain. `None`
    /// masks up to Nyquist.
    pub omega_max: Option<usize>,
    pub normalize_output: bool,
    /// Estimate per-pair delays and compensate them before masking.
    pub estimate_tdoa: bool,
    pub max_lag: usize,
}

impl Default for PefConfig {
    fn default() -> Self {
        Self {
            gamma: 0.01,
            m: None,
            frame_size: 1024,
            hop: 160,
            omega_max: None,
            normalize_output: true,
            estimate_tdoa: false,
            max_lag: 64,
        }
    }
}

impl PefConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if let Some(m) = self.m {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::Config(format!("m must be positive, got {m}")));
            }
        }
        Ok(())
    }
}

/// Principal value in `(-π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Delay of `b` relative to `a` in samples, by PHAT-weighted generalised
/// cross-correlation. `b[n] = a[n - 7]` gives `7`. Among equal peaks the
/// smaller absolute lag wins.
pub fn estimate_tdoa(a: &[f64], b: &[f64], max_lag: usize) -> Result<isize> {
    if a.len() != b.len() {
        return Err(Error::Data(format!(
            "signals differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if 2 * max_lag >= a.len() {
        return Err(Error::Argument(format!(
            "max lag {max_lag} must be below half the length {}",
            a.len()
        )));
    }
    let silent = |x: &[f64]| x.iter().all(|&v| v == 0.0);
    if silent(a) || silent(b) {
        return Err(Error::UndefinedDelay);
    }
    let n = (2 * a.len()).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let spectrum = |x: &[f64]| {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        buf.resize(n, Complex64::default());
        fwd.process(&mut buf);
        buf
    };
    let fa = spectrum(a);
    let fb = spectrum(b);
    let mut cross: Vec<Complex64> = fb.iter().zip(&fa).map(|(y, x)| y * x.conj()).collect();
    let peak = cross.iter().map(|c| c.norm()).fold(0.0, f64::max);
    for c in cross.iter_mut() {
        let mag = c.norm();
        *c = if mag > 1e-12 * peak {
            *c / mag
        } else {
            Complex64::default()
        };
    }
    planner.plan_fft_inverse(n).process(&mut cross);

    let at = |lag: isize| cross[lag.rem_euclid(n as isize) as usize].re;
    let mut best = 0isize;
    let mut best_val = at(0);
    for d in 1..=max_lag as isize {
        for lag in [d, -d] {
            let v = at(lag);
            if v > best_val {
                best = lag;
                best_val = v;
            }
        }
    }
    Ok(best)
}

/// Delays `β_ij` of channel `j` relative to channel `i` for every `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDelays {
    channels: usize,
    delays: Vec<isize>,
}

impl PairDelays {
    pub fn zeros(channels: usize) -> Self {
        Self {
            channels,
            delays: vec![0; pair_list(channels).len()],
        }
    }

    /// Antisymmetric lookup: `get(j, i) == -get(i, j)`.
    pub fn get(&self, i: usize, j: usize) -> isize {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => 0,
            std::cmp::Ordering::Less => self.delays[pair_index(self.channels, i, j)],
            std::cmp::Ordering::Greater => -self.delays[pair_index(self.channels, j, i)],
        }
    }
}

pub fn estimate_pair_delays(channels: &[Vec<f64>], max_lag: usize) -> Result<PairDelays> {
    let delays = pair_list(channels.len())
        .into_iter()
        .map(|(i, j)| estimate_tdoa(&channels[i], &channels[j], max_lag))
        .collect::<Result<_>>()?;
    Ok(PairDelays {
        channels: channels.len(),
        delays,
    })
}

fn pair_list(m: usize) -> Vec<(usize, usize)> {
    (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .collect()
}

fn pair_index(m: usize, i: usize, j: usize) -> usize {
    // pairs before row i, then offset within the row
    i * m - i * (i + 1) / 2 + (j - i - 1)
}

/// Wrapped phase differences for every channel pair `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseErrorField {
    pub channels: usize,
    pub pairs: Vec<(usize, usize)>,
    pub theta: Vec<DMatrix<f64>>,
}

impl PhaseErrorField {
    /// `θ_ij`, negated when `i > j`.
    pub fn get(&self, i: usize, j: usize) -> Result<DMatrix<f64>> {
        if i == j || i >= self.channels || j >= self.channels {
            return Err(Error::Argument(format!(
                "no phase error for pair ({i}, {j})"
            )));
        }
        if i < j {
            Ok(self.theta[pair_index(self.channels, i, j)].clone())
        } else {
            Ok(-&self.theta[pair_index(self.channels, j, i)])
        }
    }
}

fn check_specs(specs: &[Spectrogram]) -> Result<()> {
    if specs.len() < 2 {
        return Err(Error::Argument(format!(
            "phase errors need at least two channels, got {}",
            specs.len()
        )));
    }
    let shape = specs[0].data().shape();
    if specs.iter().any(|s| s.data().shape() != shape) {
        return Err(Error::Data("channel spectrograms differ in shape".into()));
    }
    Ok(())
}

/// `θ_ij = wrap(∠X_i - ∠X_j - ω β_ij)`. Without `delays` the channels are
/// taken as time-aligned.
pub fn phase_errors(specs: &[Spectrogram], delays: Option<&PairDelays>) -> Result<PhaseErrorField> {
    check_specs(specs)?;
    let pairs = pair_list(specs.len());
    let phases: Vec<DMatrix<f64>> = specs.iter().map(Spectrogram::phases).collect();
    let theta = pairs
        .iter()
        .map(|&(i, j)| {
            let beta = delays.map_or(0, |d| d.get(i, j)) as f64;
            DMatrix::from_fn(phases[i].nrows(), phases[i].ncols(), |k, t| {
                let omega = specs[i].bin_omega(k);
                wrap_phase(phases[i][(k, t)] - phases[j][(k, t)] - omega * beta)
            })
        })
        .collect();
    Ok(PhaseErrorField {
        channels: specs.len(),
        pairs,
        theta,
    })
}

/// `η = 1 / (1 + γ^{θ²})`, evaluated as a logistic function of `-θ² ln γ`.
pub fn pair_mask(theta: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let lg = gamma.ln();
    theta.map(|t| sigmoid(-t * t * lg))
}

/// `Φ = (∏ η)^{1/m}` elementwise.
pub fn fuse_masks(masks: &[&DMatrix<f64>], m: f64) -> Result<DMatrix<f64>> {
    let first = masks
        .first()
        .ok_or_else(|| Error::Argument("no masks to fuse".into()))?;
    if masks.iter().any(|k| k.shape() != first.shape()) {
        return Err(Error::Argument("masks differ in shape".into()));
    }
    let mut prod = (*first).clone();
    for k in &masks[1..] {
        prod.component_mul_assign(k);
    }
    Ok(prod.map(|p| p.powf(1.0 / m)))
}

/// Per-channel fused masks for a set of channel spectrograms.
pub fn channel_masks(
    specs: &[Spectrogram],
    delays: Option<&PairDelays>,
    cfg: &PefConfig,
) -> Result<Vec<DMatrix<f64>>> {
    cfg.validate()?;
    let field = phase_errors(specs, delays)?;
    let etas: Vec<DMatrix<f64>> = field
        .theta
        .iter()
        .map(|t| pair_mask(t, cfg.gamma))
        .collect();
    let m_ch = specs.len();
    let m = cfg.m.unwrap_or(m_ch as f64);
    let limit = cfg.omega_max.unwrap_or(usize::MAX);
    (0..m_ch)
        .map(|i| {
            let own: Vec<&DMatrix<f64>> = (0..m_ch)
                .filter(|&j| j != i)
                .map(|j| &etas[pair_index(m_ch, i.min(j), i.max(j))])
                .collect();
            let mut phi = fuse_masks(&own, m)?;
            for k in (limit.saturating_add(1))..phi.nrows() {
                phi.row_mut(k).fill(1.0);
            }
            Ok(phi)
        })
        .collect()
}

/// Dereverberates a multichannel recording into one channel:
/// `Ŝ = Σ_i Φ_i X_i` (divided by the channel count when normalising). With
/// delay estimation on, channel `i` is advanced by `β_0i` before summation
/// so that all channels line up with channel 0.
pub fn pef_dereverb_signals(channels: &[Vec<f64>], cfg: &PefConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if channels.len() < 2 {
        return Err(Error::Argument(format!(
            "phase-error filtering needs at least two channels, got {}",
            channels.len()
        )));
    }
    let len = channels[0].len();
    if channels.iter().any(|c| c.len() != len) {
        return Err(Error::Data("channels differ in length".into()));
    }
    if len == 0 {
        return Ok(Vec::new());
    }
    let specs: Vec<Spectrogram> = channels
        .iter()
        .map(|c| stft_padded(c, cfg.frame_size, cfg.hop, WindowKind::Hann))
        .collect::<Result<_>>()?;
    let delays = if cfg.estimate_tdoa {
        Some(estimate_pair_delays(
            channels,
            cfg.max_lag.min((len - 1) / 2),
        )?)
    } else {
        None
    };
    let masks = channel_masks(&specs, delays.as_ref(), cfg)?;

    let mut sum = DMatrix::<Complex64>::zeros(specs[0].bins(), specs[0].frames());
    for (i, (spec, phi)) in specs.iter().zip(&masks).enumerate() {
        let beta = delays.as_ref().map_or(0, |d| d.get(0, i)) as f64;
        for t in 0..sum.ncols() {
            for k in 0..sum.nrows() {
                let mut v = spec.data()[(k, t)] * phi[(k, t)];
                if beta != 0.0 {
                    v *= Complex64::from_polar(1.0, spec.bin_omega(k) * beta);
                }
                sum[(k, t)] += v;
            }
        }
    }
    if cfg.normalize_output {
        sum /= Complex64::new(channels.len() as f64, 0.0);
    }
    let out = Spectrogram::from_parts(cfg.frame_size, cfg.hop, WindowKind::Hann, sum)?;
    istft_cropped(&out, WindowKind::Hann, len)
}

pub fn pef_dereverb(input: &AudioBuffer, cfg: &PefConfig) -> Result<AudioBuffer> {
    let y = pef_dereverb_signals(input.channels(), cfg)?;
    AudioBuffer::mono(input.sample_rate(), y)
}
