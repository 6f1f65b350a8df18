use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    /// Periodic Hann.
    #[default]
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
            WindowKind::Rectangular => vec![1.0; len],
        }
    }
}

/// Complex STFT, bins × frames. The forward transform is scaled by
/// `1/sqrt(frame_size)` so that one-sided frame energy equals the energy of
/// the windowed frame (see [`Spectrogram::frame_energy`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    frame_size: usize,
    hop: usize,
    window: WindowKind,
    data: DMatrix<Complex64>,
}

impl Spectrogram {
    pub fn from_parts(
        frame_size: usize,
        hop: usize,
        window: WindowKind,
        data: DMatrix<Complex64>,
    ) -> Result<Self> {
        check_frame_params(frame_size, hop)?;
        if data.nrows() != frame_size / 2 + 1 {
            return Err(Error::Argument(format!(
                "{} bins do not match frame size {frame_size}",
                data.nrows()
            )));
        }
        Ok(Self {
            frame_size,
            hop,
            window,
            data,
        })
    }

    pub fn frame_size(&self) -> usize {
        self.frame_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window(&self) -> WindowKind {
        self.window
    }

    pub fn bins(&self) -> usize {
        self.data.nrows()
    }

    pub fn frames(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<Complex64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut DMatrix<Complex64> {
        &mut self.data
    }

    pub fn magnitudes(&self) -> DMatrix<f64> {
        self.data.map(|c| c.norm())
    }

    pub fn phases(&self) -> DMatrix<f64> {
        self.data.map(|c| c.arg())
    }

    /// Angular frequency of `bin` in radians per sample.
    pub fn bin_omega(&self, bin: usize) -> f64 {
        2.0 * PI * bin as f64 / self.frame_size as f64
    }

    /// Energy of frame `t` summed over the full two-sided spectrum.
    pub fn frame_energy(&self, t: usize) -> f64 {
        let col = self.data.column(t);
        let last = self.bins() - 1;
        col.iter()
            .enumerate()
            .map(|(k, c)| {
                let w = if k == 0 || k == last { 1.0 } else { 2.0 };
                w * c.norm_sqr()
            })
            .sum()
    }

    /// Scales every bin by a real gain, keeping the phase.
    pub fn apply_gain(&self, gain: &DMatrix<f64>) -> Result<Spectrogram> {
        if gain.shape() != self.data.shape() {
            return Err(Error::Argument(format!(
                "gain shape {:?} does not match spectrogram {:?}",
                gain.shape(),
                self.data.shape()
            )));
        }
        let mut out = self.clone();
        out.data.zip_apply(gain, |c, g| *c *= g);
        Ok(out)
    }

    /// Frame count produced by [`stft`] for a signal of `len` samples.
    pub fn frame_count(len: usize, frame_size: usize, hop: usize) -> usize {
        if len < frame_size {
            0
        } else {
            (len - frame_size) / hop + 1
        }
    }

    /// Samples covered by the frames of this spectrogram.
    pub fn signal_len(&self) -> usize {
        if self.frames() == 0 {
            0
        } else {
            (self.frames() - 1) * self.hop + self.frame_size
        }
    }
}

fn check_frame_params(frame_size: usize, hop: usize) -> Result<()> {
    if !frame_size.is_power_of_two() || frame_size < 2 {
        return Err(Error::Argument(format!(
            "frame size {frame_size} is not a power of two"
        )));
    }
    if hop == 0 || hop > frame_size {
        return Err(Error::Argument(format!(
            "hop {hop} must be in 1..={frame_size}"
        )));
    }
    Ok(())
}

pub fn stft(x: &[f64], frame_size: usize, hop: usize, window: WindowKind) -> Result<Spectrogram> {
    check_frame_params(frame_size, hop)?;
    let frames = Spectrogram::frame_count(x.len(), frame_size, hop);
    if frames == 0 {
        return Err(Error::EmptySpectrogram {
            len: x.len(),
            frame_size,
        });
    }
    let w = window.coefficients(frame_size);
    let fft = FftPlanner::new().plan_fft_forward(frame_size);
    let scale = 1.0 / (frame_size as f64).sqrt();
    let bins = frame_size / 2 + 1;
    let mut data = DMatrix::zeros(bins, frames);
    let mut buf = vec![Complex64::default(); frame_size];
    for t in 0..frames {
        let start = t * hop;
        for (b, (&s, &wn)) in buf
            .iter_mut()
            .zip(x[start..start + frame_size].iter().zip(&w))
        {
            *b = Complex64::new(s * wn, 0.0);
        }
        fft.process(&mut buf);
        for k in 0..bins {
            data[(k, t)] = buf[k] * scale;
        }
    }
    Ok(Spectrogram {
        frame_size,
        hop,
        window,
        data,
    })
}

/// Sum of squared windows over one hop period of the overlapped interior.
fn overlap_profile(w: &[f64], hop: usize) -> Vec<f64> {
    (0..hop)
        .map(|r| w.iter().skip(r).step_by(hop).map(|v| v * v).sum())
        .collect()
}

/// Weighted overlap-add inverse of [`stft`]. The output has
/// [`Spectrogram::signal_len`] samples.
pub fn istft(spec: &Spectrogram, window: WindowKind) -> Result<Vec<f64>> {
    let n = spec.frame_size;
    let hop = spec.hop;
    let w = window.coefficients(n);
    let profile = overlap_profile(&w, hop);
    let pmax = profile.iter().cloned().fold(0.0, f64::max);
    let pmin = profile.iter().cloned().fold(f64::INFINITY, f64::min);
    if pmax <= 0.0 || pmin < 1e-6 * pmax {
        return Err(Error::Config(format!(
            "{window:?} window with hop {hop} does not overlap-add to a constant for frame {n}"
        )));
    }
    let floor = 1e-3 * pmax;

    let len = spec.signal_len();
    let mut out = vec![0.0; len];
    let mut wsum = vec![0.0; len];
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let scale = 1.0 / (n as f64).sqrt();
    let mut buf = vec![Complex64::default(); n];
    for t in 0..spec.frames() {
        let col = spec.data.column(t);
        buf[..col.len()].copy_from_slice(col.as_slice());
        // Hermitian completion: bins above Nyquist mirror the lower half.
        for k in 1..n - col.len() + 1 {
            buf[n - k] = col[k].conj();
        }
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        ifft.process(&mut buf);
        let start = t * hop;
        for i in 0..n {
            out[start + i] += buf[i].re * scale * w[i];
            wsum[start + i] += w[i] * w[i];
        }
    }
    for (o, s) in out.iter_mut().zip(&wsum) {
        *o /= s.max(floor);
    }
    Ok(out)
}

/// Leading zeros inserted by [`stft_padded`]. With this offset every
/// sample of the original signal is covered by all frames that overlap it.
pub fn padding_offset(frame_size: usize, hop: usize) -> usize {
    frame_size - hop
}

/// STFT of `x` zero-padded on both sides so that no sample sits in a
/// partially overlapped edge region. Invert with [`istft_cropped`].
pub fn stft_padded(
    x: &[f64],
    frame_size: usize,
    hop: usize,
    window: WindowKind,
) -> Result<Spectrogram> {
    check_frame_params(frame_size, hop)?;
    if x.is_empty() {
        return Err(Error::EmptySpectrogram { len: 0, frame_size });
    }
    let front = padding_offset(frame_size, hop);
    let last = front + x.len() - 1;
    let total = (last / hop) * hop + frame_size;
    let mut padded = vec![0.0; total];
    padded[front..front + x.len()].copy_from_slice(x);
    stft(&padded, frame_size, hop, window)
}

/// Inverse of [`stft_padded`], cropped back to `len` samples.
pub fn istft_cropped(spec: &Spectrogram, window: WindowKind, len: usize) -> Result<Vec<f64>> {
    let full = istft(spec, window)?;
    let front = padding_offset(spec.frame_size, spec.hop);
    if front + len > full.len() {
        return Err(Error::Argument(format!(
            "spectrogram covers {} samples, cannot crop {len}",
            full.len().saturating_sub(front)
        )));
    }
    Ok(full[front..front + len].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frame_count_and_hop() {
        let x = vec![0.0; 16000];
        let s = stft(&x, 1024, 160, WindowKind::Hann).unwrap();
        assert_eq!(s.bins(), 513);
        assert_eq!(s.frames(), (16000 - 1024) / 160 + 1);
        // 160 samples at 16 kHz is a 10 ms shift
        assert_eq!(s.hop() as f64 / 16000.0, 0.010);
        assert!(s.magnitudes().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn short_signal_errors() {
        assert!(matches!(
            stft(&[0.0; 100], 128, 32, WindowKind::Hann),
            Err(Error::EmptySpectrogram { .. })
        ));
        assert!(stft(&[0.0; 1000], 100, 10, WindowKind::Hann).is_err());
        assert!(stft(&[0.0; 1000], 128, 0, WindowKind::Hann).is_err());
    }

    #[test]
    fn bin_centred_sine_is_concentrated() {
        // Periodic Hann on an integer-period sine leaks only into the two
        // adjacent bins (each -6.02 dB); every other bin is at round-off.
        let n = 512;
        let k0 = 37;
        let x: Vec<f64> = (0..4096)
            .map(|i| (2.0 * PI * k0 as f64 * i as f64 / n as f64).sin())
            .collect();
        let s = stft(&x, n, 128, WindowKind::Hann).unwrap();
        let mag = s.magnitudes();
        for t in 0..s.frames() {
            let col = mag.column(t);
            let (kmax, &peak) = col
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap();
            assert_eq!(kmax, k0);
            let adj = 20.0 * (col[k0 + 1] / peak).log10();
            assert!((adj + 6.0206).abs() < 1e-6, "{adj}");
            for (k, &m) in col.iter().enumerate() {
                if k.abs_diff(k0) >= 2 {
                    assert!(20.0 * (m / peak).log10() < -30.0);
                }
            }
        }
    }

    #[test]
    fn parseval_frame_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..3000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = stft(&x, 256, 100, WindowKind::Hann).unwrap();
        let w = WindowKind::Hann.coefficients(256);
        for t in 0..s.frames() {
            let e: f64 = x[t * 100..t * 100 + 256]
                .iter()
                .zip(&w)
                .map(|(a, b)| (a * b) * (a * b))
                .sum();
            assert!((s.frame_energy(t) - e).abs() < 1e-9);
        }
    }

    #[test]
    fn white_noise_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..16000).map(|_| rng.random_range(-1.0..1.0)).collect();
        for (n, hop) in [(1024, 160), (512, 256), (256, 64)] {
            let s = stft(&x, n, hop, WindowKind::Hann).unwrap();
            let y = istft(&s, WindowKind::Hann).unwrap();
            let interior = n..s.signal_len() - n;
            let num: f64 = interior.clone().map(|i| (y[i] - x[i]).powi(2)).sum();
            let den: f64 = interior.map(|i| x[i] * x[i]).sum();
            assert!((num / den).sqrt() <= 1e-6);
        }
    }

    #[test]
    fn padded_roundtrip_covers_every_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for len in [1, 159, 1000, 4099] {
            let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = stft_padded(&x, 1024, 160, WindowKind::Hann).unwrap();
            let y = istft_cropped(&s, WindowKind::Hann, len).unwrap();
            let err = x
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "len {len}: {err}");
        }
        assert!(stft_padded(&[], 1024, 160, WindowKind::Hann).is_err());
    }

    #[test]
    fn zero_and_modified_spectrograms() {
        let s = stft(&vec![0.0; 4096], 512, 128, WindowKind::Hann).unwrap();
        assert!(istft(&s, WindowKind::Hann)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..4096).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = stft(&x, 512, 128, WindowKind::Hann).unwrap();
        let gain = DMatrix::from_fn(s.bins(), s.frames(), |k, t| ((k * 7 + t) % 5) as f64 / 4.0);
        let y = istft(&s.apply_gain(&gain).unwrap(), WindowKind::Hann).unwrap();
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn non_cola_pair_is_rejected() {
        let s = stft(&vec![0.0; 4096], 512, 512, WindowKind::Hann).unwrap();
        assert!(matches!(istft(&s, WindowKind::Hann), Err(Error::Config(_))));
        let s = stft(&vec![0.0; 4096], 512, 512, WindowKind::Rectangular).unwrap();
        assert!(istft(&s, WindowKind::Rectangular).is_ok());
    }
}
