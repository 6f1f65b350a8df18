//! `speechfront` command line tool.
//!
//! Exit status: 0 on success, 1 for data errors (unreadable or malformed
//! input), 2 for configuration errors, 3 for numerical failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::Serialize;
use speechfront::audio::{read_wav, write_wav, AudioBuffer, SampleFormat};
use speechfront::cs::{cs_dereverb, CsConfig};
use speechfront::harness::{measure, run_pipeline, synthesize_scene, PipelineConfig, SceneSpec};
use speechfront::lm::{
    parse_corpus, parse_nbest, rescore, select_data, train_lm, write_nbest, ComponentProbs,
    LmConfig, LstmLm, NgramLm, RescoreParams, SelectConfig, Vocabulary,
};
use speechfront::pef::{pef_dereverb, PefConfig};
use speechfront::sse::{enhance_signal, train_sse, EnhancementModel, SseConfig, TrainingPair};
use speechfront::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(
    name = "speechfront",
    version,
    about = "Speech enhancement, dereverberation and LM rescoring"
)]
struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enhance every channel of a recording with a trained model.
    Enhance(EnhanceArgs),
    /// Train the speech and noise networks from clean/noise WAV pairs.
    TrainSse(TrainSseArgs),
    /// Phase-error filtering of a multichannel recording.
    DereverbPef(PefArgs),
    /// Correlation-shaping dereverberation of a multichannel recording.
    DereverbCs(CsArgs),
    /// Train an LSTM language model on a text corpus.
    TrainLm(TrainLmArgs),
    /// Rank training sentences by in-domain perplexity and keep the best.
    SelectData(SelectArgs),
    /// Rerank N-best lists with interpolated language models.
    Rescore(RescoreArgs),
    /// Synthesize a reverberant, noisy scene with its oracle components.
    Synth(SynthArgs),
    /// Objective metrics of a processed recording.
    Eval(EvalArgs),
    /// Run a staged pipeline described by a JSON config.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct OutFormat {
    /// Write 32-bit float samples instead of 16-bit PCM.
    #[arg(long)]
    float: bool,
}

impl OutFormat {
    fn format(&self) -> SampleFormat {
        if self.float {
            SampleFormat::Float32
        } else {
            SampleFormat::Pcm16
        }
    }
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    fmt: OutFormat,
}

#[derive(Args)]
struct TrainSseArgs {
    /// Lines of `clean.wav noise.wav`, relative to the list file.
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: Option<PathBuf>,
    /// JSON training configuration; defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the per-epoch training report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PefArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Fusion exponent, or `auto` for the channel count.
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    frame: Option<usize>,
    #[arg(long)]
    hop_ms: Option<f64>,
    /// Highest masked frequency bin.
    #[arg(long)]
    omega_max: Option<usize>,
    #[arg(long)]
    estimate_tdoa: bool,
    /// Sum the masked channels without dividing by their count.
    #[arg(long)]
    no_normalize: bool,
    #[command(flatten)]
    fmt: OutFormat,
}

#[derive(Args)]
struct CsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    eq_ms: Option<f64>,
    #[arg(long)]
    dont_care_ms: Option<f64>,
    #[arg(long)]
    tau_max_ms: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    /// Write the objective trace and step size as JSON.
    #[arg(long)]
    dump_trace: Option<PathBuf>,
    #[command(flatten)]
    fmt: OutFormat,
}

#[derive(Args)]
struct TrainLmArgs {
    /// One whitespace-tokenized sentence per line.
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    top_k: usize,
    #[arg(long, default_value_t = 5)]
    order: usize,
    #[arg(long, default_value_t = 0.1)]
    k: f64,
    /// Selected sentences, in corpus order.
    #[arg(long)]
    out: PathBuf,
    /// Optional `index perplexity` listing in rank order.
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Args)]
struct RescoreArgs {
    #[arg(long)]
    nbest: PathBuf,
    #[arg(long)]
    lstm: Option<PathBuf>,
    #[arg(long)]
    arpa: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    lm_scale: f64,
    #[arg(long, default_value_t = 0.0)]
    word_penalty: f64,
    /// Pick lambda by perplexity on this corpus (needs both models).
    #[arg(long)]
    tune_on: Option<PathBuf>,
    /// Reranked lists; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `utt_id words…` of every 1-best.
    #[arg(long)]
    best: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    clean: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    channel: usize,
    #[arg(long, default_value = "eval")]
    stage: String,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    write_text(path, &(text + "\n"))
}

/// Reads a JSON config or falls back to defaults.
fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn save_audio(buffer: &AudioBuffer, path: &Path, fmt: &OutFormat) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_wav(buffer, path, fmt.format()).map(|_| ())
}

fn enhance(a: &EnhanceArgs) -> Result<()> {
    let model = EnhancementModel::load(&a.model)?;
    let input = read_wav(&a.input)?;
    if input.sample_rate() != model.features().sample_rate {
        return Err(Error::Config(format!(
            "input is {} Hz, model expects {}",
            input.sample_rate(),
            model.features().sample_rate
        )));
    }
    let chans = input
        .channels()
        .iter()
        .map(|c| enhance_signal(&model, c))
        .collect::<Result<Vec<_>>>()?;
    save_audio(
        &AudioBuffer::new(input.sample_rate(), chans)?,
        &a.out,
        &a.fmt,
    )
}

fn read_pairs(list: &Path, sample_rate: u32) -> Result<Vec<TrainingPair>> {
    let base = list.parent().unwrap_or(Path::new("."));
    let mut pairs = Vec::new();
    for (i, line) in read_text(list)?.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => continue,
            [clean, noise] => {
                let load = |p: &str| -> Result<Vec<f64>> {
                    let buf = read_wav(base.join(p))?;
                    if buf.sample_rate() != sample_rate {
                        return Err(Error::Config(format!("{p}: expected {sample_rate} Hz")));
                    }
                    Ok(buf.channel(0)?.to_vec())
                };
                pairs.push(TrainingPair::new(load(clean)?, load(noise)?)?);
            }
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "expected `clean.wav noise.wav`".into(),
                })
            }
        }
    }
    Ok(pairs)
}

fn train_sse_cmd(a: &TrainSseArgs) -> Result<()> {
    let cfg: SseConfig = load_config(a.config.as_deref())?;
    let sr = cfg.features.sample_rate;
    let train = read_pairs(&a.train, sr)?;
    let valid = match &a.valid {
        Some(p) => read_pairs(p, sr)?,
        None => Vec::new(),
    };
    let (model, report) = train_sse(&train, &valid, &cfg)?;
    model.save(&a.out)?;
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    info!("saved enhancement model to {}", a.out.display());
    Ok(())
}

fn pef_cmd(a: &PefArgs) -> Result<()> {
    let mut cfg: PefConfig = load_config(a.config.as_deref())?;
    let input = read_wav(&a.input)?;
    if let Some(g) = a.gamma {
        cfg.gamma = g;
    }
    match a.m.as_deref() {
        None => {}
        Some("auto") => cfg.m = None,
        Some(v) => {
            cfg.m = Some(
                v.parse()
                    .map_err(|_| Error::Config(format!("--m {v} is not a number")))?,
            )
        }
    }
    if let Some(f) = a.frame {
        cfg.frame_size = f;
    }
    if let Some(ms) = a.hop_ms {
        cfg.hop = (ms * f64::from(input.sample_rate()) / 1000.0).round() as usize;
    }
    if a.omega_max.is_some() {
        cfg.omega_max = a.omega_max;
    }
    cfg.estimate_tdoa |= a.estimate_tdoa;
    if a.no_normalize {
        cfg.normalize_output = false;
    }
    let y = pef_dereverb(&input, &cfg)?;
    save_audio(&y, &a.out, &a.fmt)
}

fn cs_cmd(a: &CsArgs) -> Result<()> {
    let mut cfg: CsConfig = load_config(a.config.as_deref())?;
    let input = read_wav(&a.input)?;
    let samples = |ms: f64| (ms * f64::from(input.sample_rate()) / 1000.0).round() as usize;
    if let Some(v) = a.eq_ms {
        cfg.eq_len = samples(v);
    }
    if let Some(v) = a.dont_care_ms {
        cfg.dont_care = samples(v);
    }
    if let Some(v) = a.tau_max_ms {
        cfg.tau_max = samples(v);
    }
    if let Some(v) = a.mu {
        cfg.mu = v;
    }
    if let Some(v) = a.iters {
        cfg.max_iters = v;
    }
    let (y, report) = cs_dereverb(&input, &cfg)?;
    save_audio(&y, &a.out, &a.fmt)?;
    if let Some(p) = &a.dump_trace {
        write_json(p, &report)?;
    }
    Ok(())
}

fn read_corpus(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(parse_corpus(&read_text(path)?))
}

fn train_lm_cmd(a: &TrainLmArgs) -> Result<()> {
    let mut cfg: LmConfig = load_config(a.config.as_deref())?;
    if let Some(h) = a.hidden {
        cfg.hidden = h;
    }
    if let Some(e) = a.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(s) = a.seed {
        cfg.train.rng_seed = s;
        cfg.init_seed = s;
    }
    let train = read_corpus(&a.train)?;
    let valid = match &a.valid {
        Some(p) => read_corpus(p)?,
        None => Vec::new(),
    };
    let vocab = Vocabulary::from_corpus(&train, cfg.max_vocab);
    let (lm, report) = train_lm(&train, &valid, vocab, &cfg)?;
    lm.save(&a.out)?;
    for (e, p) in report.perplexities.iter().enumerate() {
        info!("epoch {}: perplexity {p:.4}", e + 1);
    }
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    Ok(())
}

fn select_cmd(a: &SelectArgs) -> Result<()> {
    let train = read_corpus(&a.train)?;
    let dev = read_corpus(&a.dev)?;
    let cfg = SelectConfig {
        order: a.order,
        k: a.k,
    };
    let sel = select_data(&train, &dev, a.top_k, &cfg)?;
    let text: String = sel
        .indices
        .iter()
        .map(|&i| train[i].join(" ") + "\n")
        .collect();
    write_text(&a.out, &text)?;
    if let Some(p) = &a.scores {
        let text: String = sel
            .ranking
            .iter()
            .map(|&i| format!("{i} {}\n", sel.perplexities[i]))
            .collect();
        write_text(p, &text)?;
    }
    Ok(())
}

fn rescore_cmd(a: &RescoreArgs) -> Result<()> {
    let lists = parse_nbest(&read_text(&a.nbest)?)?;
    let lstm = a.lstm.as_ref().map(LstmLm::load).transpose()?;
    let ngram = a.arpa.as_ref().map(NgramLm::read_arpa).transpose()?;
    let mut params = RescoreParams {
        lambda: a.lambda,
        lm_scale: a.lm_scale,
        word_penalty: a.word_penalty,
    };
    if let Some(dev) = &a.tune_on {
        let (Some(l), Some(n)) = (&lstm, &ngram) else {
            return Err(Error::Config(
                "--tune-on needs both --lstm and --arpa".into(),
            ));
        };
        let probs = ComponentProbs::compute(l, n, &read_corpus(dev)?)?;
        let (lambda, ppl) = probs.optimize_lambda();
        info!("lambda {lambda:.2} gives dev perplexity {ppl:.4}");
        params.lambda = lambda;
    }
    let mut reranked = Vec::with_capacity(lists.len());
    let mut best = String::new();
    for l in &lists {
        let r = rescore(l, lstm.as_ref(), ngram.as_ref(), &params)?;
        best += &format!("{} {}\n", r.utt_id, r.best().hypothesis.words.join(" "));
        reranked.push(r.to_nbest());
    }
    let text = write_nbest(&reranked);
    match &a.out {
        Some(p) => write_text(p, &text)?,
        None => print!("{text}"),
    }
    if let Some(p) = &a.best {
        write_text(p, &best)?;
    }
    Ok(())
}

fn synth_cmd(a: &SynthArgs) -> Result<()> {
    let mut spec: SceneSpec = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let scene = synthesize_scene(&spec)?;
    scene.write(&a.out)?;
    write_json(&a.out.join("scene.json"), &spec)
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let input = read_wav(&a.input)?;
    let reference = match &a.clean {
        Some(p) => {
            let buf = read_wav(p)?;
            if buf.sample_rate() != input.sample_rate() {
                return Err(Error::Config("reference sample rate differs".into()));
            }
            Some(buf.channel(0)?.to_vec())
        }
        None => None,
    };
    let report = measure(&a.stage, input.channel(a.channel)?, reference.as_deref())?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    Ok(())
}

fn pipeline_cmd(a: &PipelineArgs) -> Result<()> {
    let cfg = PipelineConfig::load(&a.config)?;
    let report = run_pipeline(&cfg)?;
    for r in &report.rows {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
        println!(
            "{:<8} snr {:>7} sdr {:>7} long-term {:.4}",
            r.stage,
            fmt(r.snr_db),
            fmt(r.sdr_db),
            r.long_term_corr
        );
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Enhance(a) => enhance(a),
        Command::TrainSse(a) => train_sse_cmd(a),
        Command::DereverbPef(a) => pef_cmd(a),
        Command::DereverbCs(a) => cs_cmd(a),
        Command::TrainLm(a) => train_lm_cmd(a),
        Command::SelectData(a) => select_cmd(a),
        Command::Rescore(a) => rescore_cmd(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Pipeline(a) => pipeline_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e.kind() {
                ErrorKind::Data => 1,
                ErrorKind::Config => 2,
                ErrorKind::Numerical => 3,
            };
            if code == 3 {
                warn!("numerical failure; try a smaller step size");
            }
            ExitCode::from(code)
        }
    }
}
