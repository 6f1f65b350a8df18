use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{measure, MetricsReport};
use super::scene::{synthesize_scene, SceneSpec};
use crate::audio::{read_wav, write_wav, AudioBuffer, SampleFormat};
use crate::cs::{cs_dereverb_signals, CsConfig};
use crate::error::{Error, Result};
use crate::lm::{parse_nbest, rescore, write_nbest, LstmLm, NBestList, NgramLm, RescoreParams};
use crate::pef::{pef_dereverb_signals, PefConfig};
use crate::sse::{enhance_signal, EnhancementModel};

/// Processing stages in their only permitted order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Sse,
    Pef,
    Cs,
    Rescore,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Sse => "sse",
            Stage::Pef => "pef",
            Stage::Cs => "cs",
            Stage::Rescore => "rescore",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PipelineInput {
    /// Synthesized scene; its clean source is the metric reference.
    Scene(SceneSpec),
    /// Recording on disk with an optional clean mono reference.
    Wav {
        path: PathBuf,
        #[serde(default)]
        clean: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SseStageConfig {
    pub model: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescoreStageConfig {
    pub nbest: PathBuf,
    #[serde(default)]
    pub lstm: Option<PathBuf>,
    #[serde(default)]
    pub ngram: Option<PathBuf>,
    #[serde(default)]
    pub params: RescoreParams,
}

/// Declarative pipeline description, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: PipelineInput,
    #[serde(default)]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub sse: Option<SseStageConfig>,
    #[serde(default)]
    pub pef: PefConfig,
    #[serde(default)]
    pub cs: CsConfig,
    #[serde(default)]
    pub rescore: Option<RescoreStageConfig>,
    pub output_dir: PathBuf,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Reads a JSON config; relative paths are taken relative to the file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        match &mut cfg.input {
            PipelineInput::Wav { path, clean } => {
                resolve(base, path);
                if let Some(c) = clean {
                    resolve(base, c);
                }
            }
            PipelineInput::Scene(spec) => {
                if let super::scene::SourceSpec::Wav { path, .. } = &mut spec.source {
                    resolve(base, path);
                }
                if let super::scene::NoiseSpec::Wav { path } = &mut spec.noise {
                    resolve(base, path);
                }
            }
        }
        if let Some(s) = &mut cfg.sse {
            resolve(base, &mut s.model);
        }
        if let Some(r) = &mut cfg.rescore {
            resolve(base, &mut r.nbest);
            for p in [&mut r.lstm, &mut r.ngram].into_iter().flatten() {
                resolve(base, p);
            }
        }
        resolve(base, &mut cfg.output_dir);
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    /// One row for the input and one per audio stage.
    pub rows: Vec<MetricsReport>,
    pub files: Vec<PathBuf>,
}

struct Resources {
    model: Option<EnhancementModel>,
    nbest: Vec<NBestList>,
    lstm: Option<LstmLm>,
    ngram: Option<NgramLm>,
}

fn as_config(what: &str, e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(format!("{what}: {other}")),
    }
}

/// Checks the whole configuration and loads every referenced resource.
fn prepare(cfg: &PipelineConfig, channels: usize, sample_rate: u32) -> Result<Resources> {
    if cfg.stages.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "stages must be distinct and ordered sse, pef, cs, rescore".into(),
        ));
    }
    let has = |s| cfg.stages.contains(&s);
    let mut res = Resources {
        model: None,
        nbest: Vec::new(),
        lstm: None,
        ngram: None,
    };
    if has(Stage::Sse) {
        let sse = cfg
            .sse
            .as_ref()
            .ok_or_else(|| Error::Config("sse stage requested without a model".into()))?;
        let model = EnhancementModel::load(&sse.model)
            .map_err(|e| as_config(&format!("enhancement model {}", sse.model.display()), e))?;
        if model.features().sample_rate != sample_rate {
            return Err(Error::Config(format!(
                "model expects {} Hz input, got {sample_rate}",
                model.features().sample_rate
            )));
        }
        res.model = Some(model);
    }
    if has(Stage::Pef) {
        cfg.pef.validate()?;
        if channels < 2 {
            return Err(Error::Config("pef stage needs a multichannel input".into()));
        }
    }
    if has(Stage::Cs) {
        cfg.cs.validate()?;
    }
    if has(Stage::Rescore) {
        let r = cfg.rescore.as_ref().ok_or_else(|| {
            Error::Config("rescore stage requested without an N-best list".into())
        })?;
        r.params.validate()?;
        let text = fs::read_to_string(&r.nbest)
            .map_err(|e| as_config("N-best list", Error::io(&r.nbest, e)))?;
        res.nbest = parse_nbest(&text).map_err(|e| as_config("N-best list", e))?;
        if let Some(p) = &r.lstm {
            res.lstm = Some(LstmLm::load(p).map_err(|e| as_config("LSTM language model", e))?);
        }
        if let Some(p) = &r.ngram {
            res.ngram = Some(NgramLm::read_arpa(p).map_err(|e| as_config("ARPA model", e))?);
        }
    }
    Ok(res)
}

fn write_float(
    dir: &Path,
    name: &str,
    sr: u32,
    chans: Vec<Vec<f64>>,
    files: &mut Vec<PathBuf>,
) -> Result<()> {
    let path = dir.join(name);
    write_wav(&AudioBuffer::new(sr, chans)?, &path, SampleFormat::Float32)?;
    files.push(path);
    Ok(())
}

fn write_metrics(dir: &Path, rows: &[MetricsReport], files: &mut Vec<PathBuf>) -> Result<()> {
    let csv_path = dir.join("metrics.csv");
    let mut w = csv::Writer::from_path(&csv_path)
        .map_err(|e| Error::Data(format!("{}: {e}", csv_path.display())))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Data(format!("{}: {e}", csv_path.display())))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let json_path = dir.join("metrics.json");
    let json = serde_json::to_string_pretty(rows).expect("metrics serialize");
    fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
    files.push(csv_path);
    files.push(json_path);
    Ok(())
}

/// Runs the configured stages on one recording. Everything referenced by
/// the configuration is loaded and checked before any audio is processed.
/// Audio outputs are written as 32-bit float WAV; metrics go to
/// `metrics.csv` and `metrics.json` in the output directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    let (input, reference, scene, res) = match &cfg.input {
        PipelineInput::Scene(spec) => {
            spec.validate()?;
            let res = prepare(cfg, spec.channels, spec.sample_rate)?;
            let scene = synthesize_scene(spec)?;
            (
                scene.mixture_buffer()?,
                Some(scene.clean.clone()),
                Some(scene),
                res,
            )
        }
        PipelineInput::Wav { path, clean } => {
            let input = read_wav(path)?;
            let reference = match clean {
                Some(c) => {
                    let buf = read_wav(c)?;
                    if buf.sample_rate() != input.sample_rate() {
                        return Err(Error::Config(
                            "clean reference has a different sample rate".into(),
                        ));
                    }
                    Some(buf.channel(0)?.to_vec())
                }
                None => None,
            };
            let res = prepare(cfg, input.num_channels(), input.sample_rate())?;
            (input, reference, None, res)
        }
    };

    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    if let Some(scene) = &scene {
        scene.write(dir.join("scene"))?;
    }
    let sr = input.sample_rate();
    let reference = reference.as_deref();
    let mut current: Vec<Vec<f64>> = input.into_channels();
    write_float(dir, "input.wav", sr, current.clone(), &mut files)?;
    let mut rows = vec![measure("input", &current[0], reference)?];

    for (i, &stage) in cfg.stages.iter().enumerate() {
        let name = format!("{:02}_{}", i + 1, stage.name());
        info!("pipeline stage {name}");
        match stage {
            Stage::Sse => {
                let model = res.model.as_ref().expect("model loaded in prepare");
                current = current
                    .par_iter()
                    .map(|c| enhance_signal(model, c))
                    .collect::<Result<_>>()?;
            }
            Stage::Pef => {
                current = vec![pef_dereverb_signals(&current, &cfg.pef)?];
            }
            Stage::Cs => {
                let (y, report) = cs_dereverb_signals(&current, &cfg.cs)?;
                let trace = dir.join(format!("{name}_trace.json"));
                let json = serde_json::to_string_pretty(&report).expect("report serializes");
                fs::write(&trace, json + "\n").map_err(|e| Error::io(&trace, e))?;
                files.push(trace);
                current = vec![y];
            }
            Stage::Rescore => {
                let r = cfg.rescore.as_ref().expect("checked in prepare");
                let rescored = res
                    .nbest
                    .par_iter()
                    .map(|l| rescore(l, res.lstm.as_ref(), res.ngram.as_ref(), &r.params))
                    .collect::<Result<Vec<_>>>()?;
                let lists: Vec<NBestList> = rescored.iter().map(|r| r.to_nbest()).collect();
                let path = dir.join(format!("{name}.nbest"));
                fs::write(&path, write_nbest(&lists)).map_err(|e| Error::io(&path, e))?;
                files.push(path);
                let best: String = rescored
                    .iter()
                    .map(|r| format!("{} {}\n", r.utt_id, r.best().hypothesis.words.join(" ")))
                    .collect();
                let path = dir.join(format!("{name}_1best.txt"));
                fs::write(&path, best).map_err(|e| Error::io(&path, e))?;
                files.push(path);
                continue;
            }
        }
        write_float(dir, &format!("{name}.wav"), sr, current.clone(), &mut files)?;
        rows.push(measure(stage.name(), &current[0], reference)?);
    }
    write_metrics(dir, &rows, &mut files)?;
    Ok(PipelineReport { rows, files })
}
