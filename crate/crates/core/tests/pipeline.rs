//! End-to-end pipeline runs on synthetic scenes.

use std::fs;
use std::path::Path;

use speechfront::audio::read_wav;
use speechfront::cs::CsConfig;
use speechfront::harness::{
    run_pipeline, synthesize_scene, PipelineConfig, PipelineInput, RescoreStageConfig, RirSpec,
    SceneSpec, SseStageConfig, Stage,
};
use speechfront::spectral::FeatureConfig;
use speechfront::sse::constant_model;
use speechfront::Error;

fn scene(channels: usize, snr: Option<f64>) -> SceneSpec {
    SceneSpec {
        channels,
        snr_db: snr,
        rir: RirSpec::Exponential {
            t60: 0.2,
            direct_delays: (0..channels).map(|c| 2 * c).collect(),
            tail_gain: 0.1,
        },
        duration: 0.5,
        seed: 7,
        ..SceneSpec::default()
    }
}

fn config(dir: &Path, input: SceneSpec, stages: Vec<Stage>) -> PipelineConfig {
    PipelineConfig {
        input: PipelineInput::Scene(input),
        stages,
        sse: None,
        pef: Default::default(),
        cs: CsConfig {
            max_iters: 20,
            ..CsConfig::default()
        },
        rescore: None,
        output_dir: dir.to_path_buf(),
    }
}

#[test]
fn empty_stage_list_copies_input() {
    let dir = tempfile::tempdir().unwrap();
    let spec = scene(2, Some(5.0));
    let report = run_pipeline(&config(dir.path(), spec.clone(), vec![])).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0].stage, "input");
    let written = read_wav(dir.path().join("input.wav")).unwrap();
    let expected = synthesize_scene(&spec).unwrap();
    for (a, b) in written.channels().iter().zip(&expected.mixture) {
        for (x, y) in a.iter().zip(b) {
            assert_eq!(*x, *y as f32 as f64);
        }
    }
    assert!(dir.path().join("metrics.csv").exists());
    assert!(dir.path().join("metrics.json").exists());
}

#[test]
fn pef_on_identical_channels_keeps_scale_free_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SceneSpec {
        rir: RirSpec::None,
        ..scene(3, None)
    };
    let report = run_pipeline(&config(dir.path(), spec, vec![Stage::Pef])).unwrap();
    let (input, pef) = (&report.rows[0], &report.rows[1]);
    assert_eq!(pef.alignment, Some(0));
    assert!((input.long_term_corr - pef.long_term_corr).abs() <= 1e-6 * input.long_term_corr);
    // Both are exact copies of the reference up to scale, so SDR saturates.
    assert!(pef.sdr_db.unwrap() > 80.0, "{:?}", pef.sdr_db);
}

#[test]
fn one_row_per_audio_stage_and_rescoring_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("sse.ckpt");
    constant_model(FeatureConfig::default(), 0.0, -2.0)
        .unwrap()
        .save(&model_path)
        .unwrap();
    let nbest = dir.path().join("in.nbest");
    fs::write(&nbest, "u1 1 -5 0 a b\nu1 2 -4 0 a\n").unwrap();
    let out = dir.path().join("out");
    let mut cfg = config(
        &out,
        scene(2, Some(10.0)),
        vec![Stage::Sse, Stage::Cs, Stage::Rescore],
    );
    cfg.sse = Some(SseStageConfig { model: model_path });
    cfg.rescore = Some(RescoreStageConfig {
        nbest,
        lstm: None,
        ngram: None,
        params: Default::default(),
    });
    let report = run_pipeline(&cfg).unwrap();
    let stages: Vec<&str> = report.rows.iter().map(|r| r.stage.as_str()).collect();
    assert_eq!(stages, ["input", "sse", "cs"]);
    assert!(report.rows.iter().all(|r| r.snr_db.unwrap().is_finite()));
    let best = fs::read_to_string(out.join("03_rescore_1best.txt")).unwrap();
    assert_eq!(best, "u1 a\n");
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn misconfiguration_fails_before_processing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let cfg = config(&out, scene(2, Some(0.0)), vec![Stage::Sse]);
    assert!(matches!(run_pipeline(&cfg), Err(Error::Config(_))));
    let mut missing = cfg.clone();
    missing.sse = Some(SseStageConfig {
        model: dir.path().join("absent.ckpt"),
    });
    assert!(matches!(run_pipeline(&missing), Err(Error::Config(_))));
    let unordered = config(&out, scene(2, Some(0.0)), vec![Stage::Cs, Stage::Pef]);
    assert!(matches!(run_pipeline(&unordered), Err(Error::Config(_))));
    let mono_pef = config(&out, scene(1, Some(0.0)), vec![Stage::Pef]);
    assert!(matches!(run_pipeline(&mono_pef), Err(Error::Config(_))));
    assert!(!out.exists());
}

#[test]
fn repeated_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            run_pipeline(&config(
                &out,
                scene(2, Some(5.0)),
                vec![Stage::Pef, Stage::Cs],
            ))
            .unwrap();
            out
        })
        .collect();
    let mut names: Vec<_> = fs::read_dir(&runs[0])
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 6);
    for n in names {
        let p = runs[0].join(&n);
        if p.is_file() {
            assert_eq!(
                fs::read(&p).unwrap(),
                fs::read(runs[1].join(&n)).unwrap(),
                "{n:?}"
            );
        }
    }
}

#[test]
fn config_file_paths_are_relative_to_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pipeline.json");
    fs::write(
        &path,
        r#"{
            "input": {"type": "scene", "channels": 2, "duration": 0.25, "snr_db": 5.0},
            "stages": ["pef"],
            "output_dir": "run"
        }"#,
    )
    .unwrap();
    let cfg = PipelineConfig::load(&path).unwrap();
    assert_eq!(cfg.output_dir, dir.path().join("run"));
    let report = run_pipeline(&cfg).unwrap();
    assert_eq!(report.rows.len(), 2);
    fs::write(
        &path,
        r#"{"input": {"type": "scene"}, "output_dir": "x", "bogus": 1}"#,
    )
    .unwrap();
    assert!(matches!(PipelineConfig::load(&path), Err(Error::Config(_))));
}
