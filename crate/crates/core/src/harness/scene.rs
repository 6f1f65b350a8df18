use std::f64::consts::{LN_10, PI, TAU};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, write_wav, AudioBuffer, SampleFormat};
use crate::cs::convolve;
use crate::error::{Error, Result};
use crate::DEFAULT_SAMPLE_RATE;

/// Peak level the mixture is scaled down to when it would clip.
const PEAK_LIMIT: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SourceSpec {
    /// One channel of a WAV file, used at its full length.
    Wav {
        path: PathBuf,
        #[serde(default)]
        channel: usize,
    },
    /// Sum of sinusoids with seeded random phases.
    Tones {
        frequencies: Vec<f64>,
        amplitude: f64,
    },
    /// Jittered glottal pulse train through per-syllable formant resonators,
    /// with a syllabic on/off envelope.
    SpeechLike {
        f0: f64,
        syllable_rate: f64,
    },
    Noise {
        kind: NoiseKind,
    },
}

impl Default for SourceSpec {
    fn default() -> Self {
        SourceSpec::SpeechLike {
            f0: 120.0,
            syllable_rate: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    /// 1/f power spectrum.
    Pink,
}

/// Additive noise. Generated noise is independent across channels; a WAV
/// file supplies channel `c mod channels(file)` to microphone `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NoiseSpec {
    White,
    Pink,
    Wav { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RirSpec {
    None,
    /// Unit direct path at `direct_delays[c]` followed by Gaussian noise
    /// whose amplitude falls 60 dB over `t60` seconds.
    Exponential {
        t60: f64,
        #[serde(default)]
        direct_delays: Vec<usize>,
        #[serde(default = "default_tail_gain")]
        tail_gain: f64,
    },
}

fn default_tail_gain() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub source: SourceSpec,
    pub noise: NoiseSpec,
    /// `None` leaves the noise out entirely.
    pub snr_db: Option<f64>,
    pub rir: RirSpec,
    pub channels: usize,
    pub seed: u64,
    pub sample_rate: u32,
    /// Length of generated sources in seconds.
    pub duration: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            source: SourceSpec::default(),
            noise: NoiseSpec::White,
            snr_db: Some(10.0),
            rir: RirSpec::None,
            channels: 1,
            seed: 0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            duration: 1.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("scene needs at least one channel".into()));
        }
        if self.sample_rate == 0 || !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Config(
                "scene needs a positive sample rate and duration".into(),
            ));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::Config(
                    "SNR must be finite; omit it for a noise-free scene".into(),
                ));
            }
        }
        if let RirSpec::Exponential {
            t60,
            direct_delays,
            tail_gain,
        } = &self.rir
        {
            if !(*t60 > 0.0 && t60.is_finite()) || !(*tail_gain >= 0.0) {
                return Err(Error::Config(
                    "T60 must be positive and the tail gain nonnegative".into(),
                ));
            }
            if !direct_delays.is_empty() && direct_delays.len() != self.channels {
                return Err(Error::Config(format!(
                    "{} direct delays for {} channels",
                    direct_delays.len(),
                    self.channels
                )));
            }
        }
        if let SourceSpec::SpeechLike { f0, syllable_rate } = self.source {
            if !(f0 > 0.0) || !(syllable_rate > 0.0) {
                return Err(Error::Config(
                    "speech-like source needs positive f0 and rate".into(),
                ));
            }
        }
        Ok(())
    }
}

/// A synthesized recording together with the components it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub sample_rate: u32,
    pub clean: Vec<f64>,
    pub rirs: Vec<Vec<f64>>,
    /// `clean ∗ rir` per channel, truncated to the clean length.
    pub reverberant: Vec<Vec<f64>>,
    pub noise: Vec<Vec<f64>>,
    pub mixture: Vec<Vec<f64>>,
}

impl Scene {
    pub fn mixture_buffer(&self) -> Result<AudioBuffer> {
        AudioBuffer::new(self.sample_rate, self.mixture.clone())
    }

    /// Writes `mixture.wav`, `clean.wav`, `reverberant.wav`, `noise.wav` and
    /// `rir.wav` as 32-bit float files. Room responses are zero-padded to the
    /// longest one.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let sr = self.sample_rate;
        let parts = [
            ("mixture.wav", self.mixture.clone()),
            ("clean.wav", vec![self.clean.clone()]),
            ("reverberant.wav", self.reverberant.clone()),
            ("noise.wav", self.noise.clone()),
            ("rir.wav", padded(&self.rirs)),
        ];
        for (name, chans) in parts {
            write_wav(
                &AudioBuffer::new(sr, chans)?,
                dir.join(name),
                SampleFormat::Float32,
            )?;
        }
        Ok(())
    }
}

fn padded(xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let len = xs.iter().map(Vec::len).max().unwrap_or(0);
    xs.iter()
        .map(|x| {
            let mut v = x.clone();
            v.resize(len, 0.0);
            v
        })
        .collect()
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn white_noise(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// Gaussian noise with a 1/f power spectrum, scaled to unit variance.
pub fn pink_noise(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if len == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex64> = white_noise(len, rng)
        .into_iter()
        .map(|v| Complex64::new(v, 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(len - k);
        *c = if f == 0 {
            Complex64::new(0.0, 0.0)
        } else {
            *c / (f as f64).sqrt()
        };
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let std = (x.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    if std > 0.0 {
        x.iter().map(|v| v / std).collect()
    } else {
        x
    }
}

pub fn tonal_source(
    frequencies: &[f64],
    amplitude: f64,
    len: usize,
    sample_rate: u32,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for &f in frequencies {
        let ph = rng.random_range(0.0..TAU);
        let w = TAU * f / f64::from(sample_rate);
        for (n, o) in out.iter_mut().enumerate() {
            *o += amplitude * (w * n as f64 + ph).sin();
        }
    }
    out
}

const VOWELS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
];
const BANDWIDTHS: [f64; 3] = [80.0, 100.0, 120.0];

/// Synthetic voiced speech: each syllable picks a vowel, is voiced for
/// 80% of its duration under a raised-cosine envelope, and is silent for
/// the rest. The result peaks at 0.5.
pub fn speech_like_source(
    f0: f64,
    syllable_rate: f64,
    len: usize,
    sample_rate: u32,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let fs = f64::from(sample_rate);
    let syllable = ((fs / syllable_rate).round() as usize).max(1);
    let voiced = (syllable * 4) / 5;
    let mut out = vec![0.0; len];
    let mut start = 0;
    while start < len {
        let formants = VOWELS[rng.random_range(0..VOWELS.len())];
        let pitch = f0 * rng.random_range(0.85..1.15);
        let end = (start + voiced).min(len);
        let mut exc = vec![0.0; end - start];
        let mut t = 0.0;
        while (t as usize) < exc.len() {
            exc[t as usize] = 1.0;
            t += fs / pitch * rng.random_range(0.98..1.02);
        }
        for e in exc.iter_mut() {
            let g: f64 = StandardNormal.sample(rng);
            *e += 0.02 * g;
        }
        let mut seg = exc;
        for (&f, &bw) in formants.iter().zip(&BANDWIDTHS) {
            let r = (-PI * bw / fs).exp();
            let a1 = 2.0 * r * (TAU * f / fs).cos();
            let a2 = -r * r;
            let (mut y1, mut y2) = (0.0, 0.0);
            for v in seg.iter_mut() {
                let y = *v * (1.0 - r) + a1 * y1 + a2 * y2;
                y2 = y1;
                y1 = y;
                *v = y;
            }
        }
        let n = seg.len();
        for (i, v) in seg.into_iter().enumerate() {
            let env = 0.5 - 0.5 * (TAU * (i as f64 + 0.5) / n as f64).cos();
            out[start + i] = v * env;
        }
        start += syllable;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    out
}

/// Unit impulse at `direct_delay` followed by a Gaussian tail with
/// amplitude envelope `tail_gain·10^(−3t/T60)`, 1.2·T60 long.
pub fn exponential_rir(
    t60: f64,
    direct_delay: usize,
    tail_gain: f64,
    sample_rate: u32,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let fs = f64::from(sample_rate);
    let tail = (1.2 * t60 * fs).ceil() as usize;
    let decay = 3.0 * LN_10 / (t60 * fs);
    let mut h = vec![0.0; direct_delay + tail + 1];
    h[direct_delay] = 1.0;
    for n in 1..=tail {
        let g: f64 = StandardNormal.sample(rng);
        h[direct_delay + n] = tail_gain * g * (-decay * n as f64).exp();
    }
    h
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Gain that brings `noise` to `snr_db` below `signal`.
pub fn scale_to_snr(signal: &[f64], noise: &[f64], snr_db: f64) -> Result<f64> {
    let es = energy(signal);
    let en = energy(noise);
    if es <= 0.0 {
        return Err(Error::Data("source has zero energy".into()));
    }
    if en <= 0.0 {
        return Err(Error::Data("noise has zero energy".into()));
    }
    Ok((es / en / 10f64.powf(snr_db / 10.0)).sqrt())
}

fn load_channel(path: &Path, channel: usize, sample_rate: u32) -> Result<Vec<f64>> {
    let buf = read_wav(path)?;
    if buf.sample_rate() != sample_rate {
        return Err(Error::Config(format!(
            "{} is sampled at {} Hz, scene expects {sample_rate}",
            path.display(),
            buf.sample_rate()
        )));
    }
    Ok(buf.channel(channel)?.to_vec())
}

/// Builds a deterministic scene: reverberant source per channel plus noise
/// scaled to the requested SNR against that channel's reverberant source.
/// When the mixture would clip, every component is scaled by one common
/// factor so its peak is 0.99.
pub fn synthesize_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let sr = spec.sample_rate;
    let len = (spec.duration * f64::from(sr)).round() as usize;
    let mut src_rng = rng_for(spec.seed, 0);
    let clean = match &spec.source {
        SourceSpec::Wav { path, channel } => load_channel(path, *channel, sr)?,
        SourceSpec::Tones {
            frequencies,
            amplitude,
        } => tonal_source(frequencies, *amplitude, len, sr, &mut src_rng),
        SourceSpec::SpeechLike { f0, syllable_rate } => {
            speech_like_source(*f0, *syllable_rate, len, sr, &mut src_rng)
        }
        SourceSpec::Noise { kind } => match kind {
            NoiseKind::White => white_noise(len, &mut src_rng),
            NoiseKind::Pink => pink_noise(len, &mut src_rng),
        },
    };
    if energy(&clean) <= 0.0 {
        return Err(Error::Data("source has zero energy".into()));
    }
    let n = clean.len();
    let rirs: Vec<Vec<f64>> = (0..spec.channels)
        .map(|c| match &spec.rir {
            RirSpec::None => vec![1.0],
            RirSpec::Exponential {
                t60,
                direct_delays,
                tail_gain,
            } => {
                let d = direct_delays.get(c).copied().unwrap_or(0);
                exponential_rir(
                    *t60,
                    d,
                    *tail_gain,
                    sr,
                    &mut rng_for(spec.seed, 100 + c as u64),
                )
            }
        })
        .collect();
    let reverberant: Vec<Vec<f64>> = rirs
        .iter()
        .map(|h| {
            let mut y = convolve(&clean, h);
            y.truncate(n);
            y
        })
        .collect();
    let file_noise = match &spec.noise {
        NoiseSpec::Wav { path } if spec.snr_db.is_some() => {
            let buf = read_wav(path)?;
            if buf.len() < n || buf.sample_rate() != sr {
                return Err(Error::Config(format!(
                    "{} must be at least {n} samples at {sr} Hz",
                    path.display()
                )));
            }
            Some(buf.into_channels())
        }
        _ => None,
    };
    let mut noise = Vec::with_capacity(spec.channels);
    for (c, rev) in reverberant.iter().enumerate() {
        let Some(snr) = spec.snr_db else {
            noise.push(vec![0.0; n]);
            continue;
        };
        let mut rng = rng_for(spec.seed, 1 + c as u64);
        let raw = match (&spec.noise, &file_noise) {
            (_, Some(chans)) => chans[c % chans.len()][..n].to_vec(),
            (NoiseSpec::Pink, _) => pink_noise(n, &mut rng),
            _ => white_noise(n, &mut rng),
        };
        let g = scale_to_snr(rev, &raw, snr)?;
        noise.push(raw.into_iter().map(|v| v * g).collect());
    }
    let mut scene = Scene {
        sample_rate: sr,
        clean,
        rirs,
        mixture: reverberant
            .iter()
            .zip(&noise)
            .map(|(r, v)| r.iter().zip(v).map(|(a, b)| a + b).collect())
            .collect(),
        reverberant,
        noise,
    };
    let peak = scene
        .mixture
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > PEAK_LIMIT {
        let g = PEAK_LIMIT / peak;
        let scale = |x: &mut Vec<f64>| x.iter_mut().for_each(|v| *v *= g);
        scale(&mut scene.clean);
        scene.reverberant.iter_mut().for_each(scale);
        scene.noise.iter_mut().for_each(scale);
        scene.mixture.iter_mut().for_each(scale);
    }
    Ok(scene)
}

/// Energy-decay T60 of an impulse response: Schroeder backward integration,
/// a least-squares line through the −5…−35 dB part of the decay curve, and
/// extrapolation to −60 dB. Returns seconds.
pub fn estimate_t60(h: &[f64], sample_rate: u32) -> Option<f64> {
    let mut edc = vec![0.0; h.len()];
    let mut acc = 0.0;
    for (i, v) in h.iter().enumerate().rev() {
        acc += v * v;
        edc[i] = acc;
    }
    if acc <= 0.0 {
        return None;
    }
    let pts: Vec<(f64, f64)> = edc
        .iter()
        .enumerate()
        .map(|(i, e)| (i as f64 / f64::from(sample_rate), 10.0 * (e / acc).log10()))
        .filter(|&(_, db)| (-35.0..=-5.0).contains(&db))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (mx, my) = (sx / m, sy / m);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope < 0.0).then(|| -60.0 / slope)
}
