//! Single-channel speech enhancement. Two recurrent networks predict the
//! log-Mel spectra of speech and noise from noisy features; their estimates
//! define a magnitude-domain gain that is applied to the noisy STFT, and the
//! result is resynthesised with the noisy phase.

use std::path::Path;

use log::info;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::neural::{
    read_checkpoint, train, write_checkpoint, Example, LayerSpec, SeqInput, SequenceNetwork,
    Topology, TrainConfig, TrainReport,
};
use crate::spectral::{
    istft_cropped, mel_backward, mel_forward, standardize, stft_padded, unstandardize,
    FeatureConfig, FeatureStats, MelFeatures, MelFilterbank, Spectrogram, WindowKind,
};

const GAIN_EPS: f64 = 1e-10;
const CHECKPOINT_KIND: &str = "sse";

/// Per-bin real gains, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterGain {
    pub gains: DMatrix<f64>,
}

impl FilterGain {
    pub fn apply(&self, spec: &Spectrogram) -> Result<Spectrogram> {
        spec.apply_gain(&self.gains)
    }
}

/// Spectral-subtraction gain from Mel-domain speech and noise estimates:
/// `1 - M⁺exp(N) / max(M⁺(exp(S) + exp(N)), eps)`, clamped to `[0, 1]`.
/// `s_log` and `n_log` are natural-log band energies.
pub fn build_filter(
    x_mag: &DMatrix<f64>,
    s_log: &DMatrix<f64>,
    n_log: &DMatrix<f64>,
    fb: &MelFilterbank,
) -> Result<FilterGain> {
    if s_log.shape() != n_log.shape() {
        return Err(Error::Argument(
            "speech and noise estimates differ in shape".into(),
        ));
    }
    if x_mag.shape() != (fb.bins(), s_log.ncols()) {
        return Err(Error::Argument(format!(
            "magnitudes {:?} do not match {} bins × {} frames",
            x_mag.shape(),
            fb.bins(),
            s_log.ncols()
        )));
    }
    let s_lin = s_log.map(f64::exp);
    let n_lin = n_log.map(f64::exp);
    let noise = mel_backward(&n_lin, fb)?;
    let total = mel_backward(&(s_lin + n_lin), fb)?;
    let gains = noise.zip_map(&total, |n, t| {
        let g = 1.0 - n / t.max(GAIN_EPS);
        // NaN from overflowing estimates falls to 0
        if g.is_nan() {
            0.0
        } else {
            g.clamp(0.0, 1.0)
        }
    });
    Ok(FilterGain { gains })
}

/// Speech and noise predictors with the feature normalisation they were
/// trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancementModel {
    speech_net: SequenceNetwork,
    noise_net: SequenceNetwork,
    features: FeatureConfig,
    input_stats: FeatureStats,
    speech_stats: FeatureStats,
    noise_stats: FeatureStats,
}

#[derive(Serialize, Deserialize)]
struct ModelMetadata {
    features: FeatureConfig,
    input_stats: FeatureStats,
    speech_stats: FeatureStats,
    noise_stats: FeatureStats,
}

impl EnhancementModel {
    pub fn new(
        speech_net: SequenceNetwork,
        noise_net: SequenceNetwork,
        features: FeatureConfig,
        input_stats: FeatureStats,
        speech_stats: FeatureStats,
        noise_stats: FeatureStats,
    ) -> Result<Self> {
        let b = features.bands;
        let checks = [
            (speech_net.input_dim(), 2 * b, "speech network input"),
            (noise_net.input_dim(), 2 * b, "noise network input"),
            (speech_net.output_dim(), b, "speech network output"),
            (noise_net.output_dim(), b, "noise network output"),
            (input_stats.dim(), 2 * b, "input statistics"),
            (speech_stats.dim(), b, "speech statistics"),
            (noise_stats.dim(), b, "noise statistics"),
        ];
        for (got, want, what) in checks {
            if got != want {
                return Err(Error::Config(format!(
                    "{what} has dimension {got}, expected {want}"
                )));
            }
        }
        Ok(Self {
            speech_net,
            noise_net,
            features,
            input_stats,
            speech_stats,
            noise_stats,
        })
    }

    pub fn features(&self) -> &FeatureConfig {
        &self.features
    }

    pub fn speech_net(&self) -> &SequenceNetwork {
        &self.speech_net
    }

    pub fn noise_net(&self) -> &SequenceNetwork {
        &self.noise_net
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = ModelMetadata {
            features: self.features.clone(),
            input_stats: self.input_stats.clone(),
            speech_stats: self.speech_stats.clone(),
            noise_stats: self.noise_stats.clone(),
        };
        let meta = serde_json::to_value(meta).expect("metadata serializes");
        write_checkpoint(
            path,
            CHECKPOINT_KIND,
            &[&self.speech_net, &self.noise_net],
            meta,
        )
    }

    /// Loads a model written by [`EnhancementModel::save`]. A checkpoint of
    /// another kind is a state error: no enhancement model is available.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck = read_checkpoint(path)?;
        if ck.kind != CHECKPOINT_KIND || ck.networks.len() != 2 {
            return Err(Error::State(format!(
                "checkpoint holds a '{}' model with {} networks, not an enhancement model",
                ck.kind,
                ck.networks.len()
            )));
        }
        let meta: ModelMetadata = serde_json::from_value(ck.metadata)
            .map_err(|e| Error::Format(format!("enhancement metadata: {e}")))?;
        let mut nets = ck.networks.into_iter();
        let speech = nets.next().expect("two networks");
        let noise = nets.next().expect("two networks");
        Self::new(
            speech,
            noise,
            meta.features,
            meta.input_stats,
            meta.speech_stats,
            meta.noise_stats,
        )
    }

    /// Natural-log Mel estimates of speech and noise for noisy features.
    pub fn predict(&self, noisy: &MelFeatures) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let input = SeqInput::Dense(standardize(&noisy.stacked(), &self.input_stats)?);
        let s = unstandardize(&self.speech_net.forward(&input)?, &self.speech_stats)?;
        let n = unstandardize(&self.noise_net.forward(&input)?, &self.noise_stats)?;
        Ok((s, n))
    }
}

fn analyze(
    cfg: &FeatureConfig,
    fb: &MelFilterbank,
    x: &[f64],
) -> Result<(Spectrogram, MelFeatures)> {
    let spec = stft_padded(x, cfg.frame_size, cfg.hop, WindowKind::Hann)?;
    let feats = mel_forward(&spec.magnitudes(), fb, cfg.log_floor)?;
    Ok((spec, feats))
}

/// Enhances one channel of samples. The output has the input's length.
pub fn enhance_signal(model: &EnhancementModel, x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let cfg = &model.features;
    let fb = cfg.filterbank()?;
    let (spec, feats) = analyze(cfg, &fb, x)?;
    let (s_log, n_log) = model.predict(&feats)?;
    let gain = build_filter(&spec.magnitudes(), &s_log, &n_log, &fb)?;
    istft_cropped(&gain.apply(&spec)?, WindowKind::Hann, x.len())
}

/// Enhances channel `channel` of `noisy` into a mono buffer.
pub fn enhance(
    model: &EnhancementModel,
    noisy: &AudioBuffer,
    channel: usize,
) -> Result<AudioBuffer> {
    if noisy.sample_rate() != model.features.sample_rate {
        return Err(Error::Config(format!(
            "input is sampled at {} Hz, model expects {} Hz",
            noisy.sample_rate(),
            model.features.sample_rate
        )));
    }
    let y = enhance_signal(model, noisy.channel(channel)?)?;
    AudioBuffer::mono(noisy.sample_rate(), y)
}

/// Training settings for the two enhancement networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SseConfig {
    pub features: FeatureConfig,
    /// Hidden layers of both networks; a linear output layer of `bands`
    /// units is appended.
    pub hidden_layers: Vec<LayerSpec>,
    pub train: TrainConfig,
    pub init_seed: u64,
}

impl Default for SseConfig {
    fn default() -> Self {
        let mut hidden = Topology::enhancement(80, 40).layers;
        hidden.pop();
        Self {
            features: FeatureConfig::default(),
            hidden_layers: hidden,
            train: TrainConfig::default(),
            init_seed: 0,
        }
    }
}

impl SseConfig {
    pub fn topology(&self) -> Topology {
        let mut layers = self.hidden_layers.clone();
        layers.push(LayerSpec::Linear {
            units: self.features.bands,
        });
        Topology {
            input_dim: 2 * self.features.bands,
            layers,
        }
    }
}

/// One utterance: the clean source and the additive noise. The network
/// input is their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub clean: Vec<f64>,
    pub noise: Vec<f64>,
}

impl TrainingPair {
    pub fn new(clean: Vec<f64>, noise: Vec<f64>) -> Result<Self> {
        if clean.len() != noise.len() {
            return Err(Error::Data(format!(
                "clean has {} samples, noise has {}",
                clean.len(),
                noise.len()
            )));
        }
        Ok(Self { clean, noise })
    }

    pub fn mixture(&self) -> Vec<f64> {
        self.clean
            .iter()
            .zip(&self.noise)
            .map(|(s, n)| s + n)
            .collect()
    }
}

struct PairFeatures {
    input: DMatrix<f64>,
    speech: DMatrix<f64>,
    noise: DMatrix<f64>,
}

fn pair_features(
    cfg: &FeatureConfig,
    fb: &MelFilterbank,
    pair: &TrainingPair,
) -> Result<PairFeatures> {
    if pair.clean.len() != pair.noise.len() {
        return Err(Error::Data("clean and noise lengths differ".into()));
    }
    let (_, mix) = analyze(cfg, fb, &pair.mixture())?;
    let (_, speech) = analyze(cfg, fb, &pair.clean)?;
    let (_, noise) = analyze(cfg, fb, &pair.noise)?;
    Ok(PairFeatures {
        input: mix.stacked(),
        speech: speech.log_energies,
        noise: noise.log_energies,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SseTrainReport {
    pub speech: TrainReport,
    pub noise: TrainReport,
}

fn examples(
    feats: &[PairFeatures],
    input_stats: &FeatureStats,
    target_stats: &FeatureStats,
    target: fn(&PairFeatures) -> &DMatrix<f64>,
) -> Result<Vec<Example>> {
    feats
        .iter()
        .map(|f| {
            Ok(Example::dense(
                standardize(&f.input, input_stats)?,
                standardize(target(f), target_stats)?,
            ))
        })
        .collect()
}

/// Trains the speech network on clean log-Mel targets and the noise
/// network on the noise waveform's own log-Mel features. Normalisation
/// statistics come from the training pairs only.
pub fn train_sse(
    train_pairs: &[TrainingPair],
    valid_pairs: &[TrainingPair],
    cfg: &SseConfig,
) -> Result<(EnhancementModel, SseTrainReport)> {
    if train_pairs.is_empty() {
        return Err(Error::Data("no training pairs".into()));
    }
    let fc = &cfg.features;
    let fb = fc.filterbank()?;
    let train_feats: Vec<PairFeatures> = train_pairs
        .iter()
        .map(|p| pair_features(fc, &fb, p))
        .collect::<Result<_>>()?;
    let valid_feats: Vec<PairFeatures> = valid_pairs
        .iter()
        .map(|p| pair_features(fc, &fb, p))
        .collect::<Result<_>>()?;

    let input_stats = FeatureStats::fit(train_feats.iter().map(|f| &f.input))?;
    let speech_stats = FeatureStats::fit(train_feats.iter().map(|f| &f.speech))?;
    let noise_stats = FeatureStats::fit(train_feats.iter().map(|f| &f.noise))?;

    let topology = cfg.topology();
    let mut reports = Vec::with_capacity(2);
    let mut nets = Vec::with_capacity(2);
    for (idx, (stats, name)) in [(&speech_stats, "speech"), (&noise_stats, "noise")]
        .into_iter()
        .enumerate()
    {
        let pick: fn(&PairFeatures) -> &DMatrix<f64> = if idx == 0 {
            |f| &f.speech
        } else {
            |f| &f.noise
        };
        let tr = examples(&train_feats, &input_stats, stats, pick)?;
        let va = examples(&valid_feats, &input_stats, stats, pick)?;
        let init = SequenceNetwork::random(&topology, cfg.init_seed.wrapping_add(idx as u64))?;
        let tcfg = TrainConfig {
            rng_seed: cfg.train.rng_seed.wrapping_add(idx as u64),
            ..cfg.train.clone()
        };
        let (net, report) = train(&init, &tr, &va, &tcfg)?;
        info!(
            "{name} network: cost {:.4e} -> {:.4e} (epoch {})",
            report.initial_valid_cost, report.best_valid_cost, report.best_epoch
        );
        nets.push(net);
        reports.push(report);
    }
    let noise_net = nets.pop().expect("two networks");
    let speech_net = nets.pop().expect("two networks");
    let noise_report = reports.pop().expect("two reports");
    let speech_report = reports.pop().expect("two reports");
    let model = EnhancementModel::new(
        speech_net,
        noise_net,
        fc.clone(),
        input_stats,
        speech_stats,
        noise_stats,
    )?;
    Ok((
        model,
        SseTrainReport {
            speech: speech_report,
            noise: noise_report,
        },
    ))
}

/// Model with constant outputs: every frame predicts `speech_log` for all
/// speech bands and `noise_log` for all noise bands. Useful as a fixed
/// reference filter.
pub fn constant_model(
    features: FeatureConfig,
    speech_log: f64,
    noise_log: f64,
) -> Result<EnhancementModel> {
    let b = features.bands;
    let topo = Topology {
        input_dim: 2 * b,
        layers: vec![LayerSpec::Linear { units: b }],
    };
    let mut speech = SequenceNetwork::zeros(&topo)?;
    let mut noise = SequenceNetwork::zeros(&topo)?;
    for (net, v) in [(&mut speech, speech_log), (&mut noise, noise_log)] {
        // the only layer's bias is its second parameter block
        let mut slices = net.param_slices_mut();
        slices[1].fill(v);
    }
    EnhancementModel::new(
        speech,
        noise,
        features,
        FeatureStats::identity(2 * b),
        FeatureStats::identity(b),
        FeatureStats::identity(b),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_features() -> FeatureConfig {
        FeatureConfig {
            frame_size: 256,
            hop: 64,
            bands: 20,
            ..FeatureConfig::default()
        }
    }

    #[test]
    fn no_noise_and_all_noise_limits() {
        let fb = MelFilterbank::new(20, 256, 16000).unwrap();
        let x = DMatrix::from_element(129, 3, 1.0);
        let tiny = DMatrix::from_element(20, 3, -230.0);
        let loud = DMatrix::from_element(20, 3, 0.0);
        let g = build_filter(&x, &loud, &tiny, &fb).unwrap();
        assert!(g.gains.iter().all(|&v| (v - 1.0).abs() < 1e-9));
        let g = build_filter(&x, &tiny, &loud, &fb).unwrap();
        assert!(g.gains.iter().all(|&v| v.abs() < 1e-9));
        assert!(build_filter(&x, &loud, &DMatrix::zeros(20, 2), &fb).is_err());
    }

    #[test]
    fn pass_through_model_is_identity() {
        let model = constant_model(small_features(), 0.0, -230.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..3000).map(|_| rng.random_range(-0.5..0.5)).collect();
        let y = enhance_signal(&model, &x).unwrap();
        assert_eq!(y.len(), x.len());
        let err = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6);

        let z = enhance_signal(&model, &vec![0.0; 1000]).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn model_roundtrip_and_kind_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sse.ckpt");
        let model = constant_model(small_features(), 0.5, -1.0).unwrap();
        model.save(&p).unwrap();
        assert_eq!(EnhancementModel::load(&p).unwrap(), model);

        let other = dir.path().join("other.ckpt");
        write_checkpoint(&other, "lm", &[model.speech_net()], serde_json::Value::Null).unwrap();
        assert!(matches!(
            EnhancementModel::load(&other),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn rate_mismatch_and_pair_lengths() {
        let model = constant_model(small_features(), 0.0, 0.0).unwrap();
        let buf = AudioBuffer::mono(8000, vec![0.0; 500]).unwrap();
        assert!(matches!(enhance(&model, &buf, 0), Err(Error::Config(_))));
        assert!(matches!(
            TrainingPair::new(vec![0.0; 3], vec![0.0; 4]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn zero_noise_targets_hit_floor() {
        let fc = small_features();
        let fb = fc.filterbank().unwrap();
        let pair = TrainingPair::new(
            (0..2000).map(|i| (i as f64 * 0.1).sin()).collect(),
            vec![0.0; 2000],
        )
        .unwrap();
        let f = pair_features(&fc, &fb, &pair).unwrap();
        assert!(f.noise.iter().all(|&v| v == fc.log_floor.ln()));
    }
}
