//! Short-time spectral analysis and Mel-domain features.

mod features;
mod mel;
mod stft;

pub use features::{
    deltas, read_feature_dump, read_matrix, standardize, unstandardize, write_feature_dump,
    write_matrix, FeatureSidecar, FeatureStats,
};
pub use mel::{mel_backward, mel_energies, mel_forward, MelFeatures, MelFilterbank};
pub use stft::{istft, istft_cropped, padding_offset, stft, stft_padded, Spectrogram, WindowKind};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Default log floor applied before taking logs of band energies.
pub const LOG_FLOOR: f64 = 1e-10;

/// Analysis parameters shared by feature extraction and resynthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub frame_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub bands: usize,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    /// 1024-sample frames with a 10 ms hop and 40 Mel bands at 16 kHz.
    fn default() -> Self {
        Self {
            frame_size: 1024,
            hop: 160,
            sample_rate: crate::DEFAULT_SAMPLE_RATE,
            bands: 40,
            log_floor: LOG_FLOOR,
        }
    }
}

impl FeatureConfig {
    pub fn filterbank(&self) -> Result<MelFilterbank> {
        MelFilterbank::new(self.bands, self.frame_size, self.sample_rate)
    }

    /// Hann STFT of `x` followed by log-Mel energies and their deltas.
    pub fn analyze(&self, x: &[f64], fb: &MelFilterbank) -> Result<(Spectrogram, MelFeatures)> {
        let spec = stft(x, self.frame_size, self.hop, WindowKind::Hann)?;
        let feats = mel_forward(&spec.magnitudes(), fb, self.log_floor)?;
        Ok((spec, feats))
    }
}
