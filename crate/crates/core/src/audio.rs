//! Multi-channel waveform container and RIFF/WAVE I/O.
//!
//! Samples are held as `f64` in `[-1, 1]`. Integer PCM is scaled by
//! `1/32768`, so an int16 value of `-32768` reads back as exactly `-1.0`.

use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    sample_rate: u32,
    channels: Vec<Vec<f64>>,
}

/// On-disk sample encoding used by [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleFormat {
    #[default]
    Pcm16,
    Float32,
}

/// Outcome of a write; `clipped` counts samples clamped into `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WriteReport {
    pub clipped: usize,
}

impl WriteReport {
    pub fn clipping_occurred(&self) -> bool {
        self.clipped > 0
    }
}

impl AudioBuffer {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Argument("sample rate must be positive".into()));
        }
        if channels.is_empty() {
            return Err(Error::Argument("at least one channel is required".into()));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::Data("channels have unequal lengths".into()));
        }
        Ok(Self {
            sample_rate,
            channels,
        })
    }

    pub fn mono(sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        Self::new(sample_rate, vec![samples])
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, index: usize) -> Result<&[f64]> {
        self.channels
            .get(index)
            .map(Vec::as_slice)
            .ok_or_else(|| channel_out_of_range(index, self.channels.len()))
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Emits a warning when the rate differs from the 16 kHz that all
    /// frame-size defaults assume. Returns whether the rate matched.
    pub fn check_default_rate(&self) -> bool {
        let ok = self.sample_rate == crate::DEFAULT_SAMPLE_RATE;
        if !ok {
            warn!(
                "sample rate is {} Hz; default frame sizes assume {} Hz",
                self.sample_rate,
                crate::DEFAULT_SAMPLE_RATE
            );
        }
        ok
    }
}

fn channel_out_of_range(index: usize, count: usize) -> Error {
    Error::Argument(format!(
        "channel {index} out of range for {count}-channel buffer"
    ))
}

// The file is opened before hound sees it, so any I/O failure hound
// reports afterwards means the content ran short.
fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => {
            Error::Format(format!("{}: truncated WAV data: {e}", path.display()))
        }
        hound::Error::Unsupported => Error::Unsupported(format!("{}", path.display())),
        hound::Error::FormatError(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

fn map_hound_write(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::io(path, e),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader =
        hound::WavReader::new(std::io::BufReader::new(file)).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let n_channels = spec.channels as usize;
    if n_channels == 0 {
        return Err(Error::Format("zero channels declared".into()));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => {
            return Err(Error::Unsupported(format!(
                "{}: {bits}-bit {fmt:?} samples",
                path.display()
            )))
        }
    };
    if !interleaved.len().is_multiple_of(n_channels) {
        return Err(Error::Format("truncated sample frame".into()));
    }

    let frames = interleaved.len() / n_channels;
    let mut channels = vec![Vec::with_capacity(frames); n_channels];
    for frame in interleaved.chunks_exact(n_channels) {
        for (ch, &v) in channels.iter_mut().zip(frame) {
            ch.push(v);
        }
    }
    AudioBuffer::new(spec.sample_rate, channels)
}

/// Writes `buffer` as interleaved WAV. Out-of-range samples are clamped to
/// `[-1, 1]` and counted in the report rather than rejected.
pub fn write_wav(
    buffer: &AudioBuffer,
    path: impl AsRef<Path>,
    format: SampleFormat,
) -> Result<WriteReport> {
    let path = path.as_ref();
    if buffer.channels.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data("cannot write non-finite samples".into()));
    }
    let spec = hound::WavSpec {
        channels: buffer.num_channels() as u16,
        sample_rate: buffer.sample_rate,
        bits_per_sample: match format {
            SampleFormat::Pcm16 => 16,
            SampleFormat::Float32 => 32,
        },
        sample_format: match format {
            SampleFormat::Pcm16 => hound::SampleFormat::Int,
            SampleFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound_write(path, e))?;
    let mut report = WriteReport::default();
    for n in 0..buffer.len() {
        for ch in &buffer.channels {
            let mut v = ch[n];
            if v.abs() > 1.0 {
                report.clipped += 1;
                v = v.clamp(-1.0, 1.0);
            }
            match format {
                SampleFormat::Pcm16 => {
                    let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q)
                }
                SampleFormat::Float32 => writer.write_sample(v as f32),
            }
            .map_err(|e| map_hound_write(path, e))?;
        }
    }
    writer.finalize().map_err(|e| map_hound_write(path, e))?;
    if report.clipping_occurred() {
        warn!(
            "{}: clamped {} samples to [-1, 1]",
            path.display(),
            report.clipped
        );
    }
    Ok(report)
}

/// Delays one channel by `delay` samples (negative advances it). Vacated
/// samples are zero; other channels are untouched.
pub fn shift_channel(buffer: &AudioBuffer, channel: usize, delay: isize) -> Result<AudioBuffer> {
    let len = buffer.len();
    if channel >= buffer.num_channels() {
        return Err(channel_out_of_range(channel, buffer.num_channels()));
    }
    if delay.unsigned_abs() >= len.max(1) {
        return Err(Error::Argument(format!(
            "|delay| = {} must be below the signal length {len}",
            delay.unsigned_abs()
        )));
    }
    let mut out = buffer.clone();
    out.channels[channel] = shift_samples(&buffer.channels[channel], delay);
    Ok(out)
}

/// `out[n] = x[n - delay]`, zero outside the input.
pub fn shift_samples(x: &[f64], delay: isize) -> Vec<f64> {
    let len = x.len();
    let mut out = vec![0.0; len];
    let d = delay.unsigned_abs();
    if d >= len {
        return out;
    }
    if delay >= 0 {
        out[d..].copy_from_slice(&x[..len - d]);
    } else {
        out[..len - d].copy_from_slice(&x[d..]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp(name: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(name);
        (dir, p)
    }

    #[test]
    fn header_echo() {
        let buf = AudioBuffer::new(16000, vec![vec![0.0; 16000]; 2]).unwrap();
        let (_d, p) = tmp("a.wav");
        write_wav(&buf, &p, SampleFormat::Pcm16).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.num_channels(), 2);
        assert_eq!(back.sample_rate(), 16000);
        assert_eq!(back.len(), 16000);
        assert!(back.channels().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn int16_min_reads_as_minus_one() {
        let (_d, p) = tmp("m.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(i16::MIN).unwrap();
        w.write_sample(i16::MAX).unwrap();
        w.finalize().unwrap();
        let b = read_wav(&p).unwrap();
        assert_eq!(b.channel(0).unwrap()[0], -1.0);
        assert_eq!(b.channel(0).unwrap()[1], 32767.0 / 32768.0);
    }

    #[test]
    fn pcm16_sine_quantization_bound() {
        let x: Vec<f64> = (0..4000)
            .map(|n| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * n as f64 / 16000.0).sin())
            .collect();
        let buf = AudioBuffer::mono(16000, x.clone()).unwrap();
        let (_d, p) = tmp("s.wav");
        write_wav(&buf, &p, SampleFormat::Pcm16).unwrap();
        let back = read_wav(&p).unwrap();
        let err = back
            .channel(0)
            .unwrap()
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 2f64.powi(-15), "{err}");
    }

    #[test]
    fn clipping_is_clamped_and_flagged() {
        let buf = AudioBuffer::mono(16000, vec![1.5, -2.0, 0.25]).unwrap();
        let (_d, p) = tmp("c.wav");
        let report = write_wav(&buf, &p, SampleFormat::Float32).unwrap();
        assert_eq!(report.clipped, 2);
        let back = read_wav(&p).unwrap();
        assert_eq!(back.channel(0).unwrap(), &[1.0, -1.0, 0.25]);
    }

    #[test]
    fn unsupported_and_malformed() {
        let (_d, p) = tmp("u.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 8,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Unsupported(_))));

        let (_d2, q) = tmp("bad.wav");
        std::fs::write(&q, b"RIFF\x04\x00\x00\x00WAVEjunk").unwrap();
        let err = read_wav(&q).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err:?}");
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let buf = AudioBuffer::mono(16000, vec![0.0; 4]).unwrap();
        let err = write_wav(&buf, "/nonexistent-dir/x.wav", SampleFormat::Pcm16).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn shift_definitions() {
        let mut x = vec![0.0; 32];
        x[10] = 1.0;
        let buf = AudioBuffer::new(16000, vec![x.clone(), x.clone()]).unwrap();
        assert_eq!(shift_channel(&buf, 0, 0).unwrap(), buf);

        let s = shift_channel(&buf, 0, 3).unwrap();
        assert_eq!(s.channel(0).unwrap()[13], 1.0);
        assert_eq!(s.channel(1).unwrap(), x.as_slice());

        let ramp: Vec<f64> = (1..=32).map(f64::from).collect();
        let b = AudioBuffer::mono(16000, ramp.clone()).unwrap();
        let back = shift_channel(&shift_channel(&b, 0, -3).unwrap(), 0, 3).unwrap();
        let back = back.channel(0).unwrap();
        assert_eq!(&back[..3], &[0.0; 3]);
        assert_eq!(&back[3..], &ramp[3..]);

        assert!(matches!(shift_channel(&buf, 2, 1), Err(Error::Argument(_))));
        assert!(shift_channel(&buf, 0, 32).is_err());
    }

    #[test]
    fn invariants_on_construction() {
        assert!(AudioBuffer::new(0, vec![vec![0.0]]).is_err());
        assert!(AudioBuffer::new(16000, vec![]).is_err());
        assert!(AudioBuffer::new(16000, vec![vec![0.0], vec![]]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn float32_roundtrip_is_identity(
            data in proptest::collection::vec(-1.0f32..=1.0, 1..200),
            ch in 1usize..4,
        ) {
            let chans: Vec<Vec<f64>> = (0..ch)
                .map(|c| data.iter().map(|&v| f64::from(v) * if c % 2 == 0 { 1.0 } else { -0.5 }).collect())
                .collect();
            let buf = AudioBuffer::new(22050, chans).unwrap();
            let (_d, p) = tmp("r.wav");
            write_wav(&buf, &p, SampleFormat::Float32).unwrap();
            prop_assert_eq!(read_wav(&p).unwrap(), buf);
        }

        #[test]
        fn shift_preserves_energy_up_to_padding(
            data in proptest::collection::vec(-1.0f64..1.0, 8..64),
            delay in -7isize..7,
        ) {
            let shifted = shift_samples(&data, delay);
            let d = delay.unsigned_abs();
            let dropped: f64 = if delay >= 0 {
                data[data.len() - d..].iter().map(|v| v * v).sum()
            } else {
                data[..d].iter().map(|v| v * v).sum()
            };
            let e_in: f64 = data.iter().map(|v| v * v).sum();
            let e_out: f64 = shifted.iter().map(|v| v * v).sum();
            prop_assert!((e_in - dropped - e_out).abs() < 1e-12);
        }
    }
}
