use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn speechfront(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_speechfront"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

const SCENE: &str = r#"{
    "channels": 2,
    "duration": 0.5,
    "snr_db": 10.0,
    "seed": 3,
    "rir": {"type": "exponential", "t60": 0.2, "direct_delays": [0, 3]}
}"#;

#[test]
fn synth_then_eval_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("scene.json"), SCENE).unwrap();
    let out = speechfront(
        &["synth", "--config", "scene.json", "--out", "scene"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = speechfront(
        &[
            "eval",
            "--in",
            "scene/mixture.wav",
            "--clean",
            "scene/clean.wav",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let snr = report["snr_db"].as_f64().unwrap();
    assert!(snr.is_finite() && snr < 10.0, "{snr}");
    assert!(report["long_term_corr"].as_f64().unwrap() > 0.0);
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    // Missing input file is a data error.
    let out = speechfront(&["eval", "--in", "absent.wav"], p);
    assert_eq!(code(&out), 1);
    // A malformed N-best line is a data error too.
    fs::write(p.join("bad.nbest"), "u1 x y\n").unwrap();
    assert_eq!(
        code(&speechfront(&["rescore", "--nbest", "bad.nbest"], p)),
        1
    );
    // An invalid config value is a configuration error.
    fs::write(p.join("scene.json"), SCENE).unwrap();
    speechfront(&["synth", "--config", "scene.json", "--out", "s"], p);
    let out = speechfront(
        &[
            "dereverb-pef",
            "--in",
            "s/mixture.wav",
            "--out",
            "y.wav",
            "--gamma",
            "-1",
        ],
        p,
    );
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    // Unknown fields in a config file are rejected.
    fs::write(p.join("odd.json"), r#"{"channels": 2, "colour": "blue"}"#).unwrap();
    assert_eq!(
        code(&speechfront(
            &["synth", "--config", "odd.json", "--out", "o"],
            p
        )),
        2
    );
    // Divergence under an absurd step size is numerical.
    let out = speechfront(
        &[
            "dereverb-cs",
            "--in",
            "s/mixture.wav",
            "--out",
            "z.wav",
            "--mu",
            "1e9",
            "--iters",
            "5",
        ],
        p,
    );
    assert!(
        matches!(code(&out), 0 | 3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn dereverberation_commands_write_audio() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("scene.json"), SCENE).unwrap();
    speechfront(&["synth", "--config", "scene.json", "--out", "s"], p);
    let out = speechfront(
        &[
            "dereverb-pef",
            "--in",
            "s/mixture.wav",
            "--out",
            "pef.wav",
            "--estimate-tdoa",
        ],
        p,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = speechfront(
        &[
            "dereverb-cs",
            "--in",
            "s/mixture.wav",
            "--out",
            "cs.wav",
            "--iters",
            "10",
            "--dump-trace",
            "trace.json",
        ],
        p,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(p.join("pef.wav").exists() && p.join("cs.wav").exists());
    let trace: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("trace.json")).unwrap()).unwrap();
    assert!(!trace["objective"].as_array().unwrap().is_empty());
}

#[test]
fn pipeline_runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    for name in ["a", "b"] {
        let cfg = format!(
            r#"{{"input": {{"type": "scene", "channels": 2, "duration": 0.3, "seed": 9}},
                "stages": ["pef", "cs"], "cs": {{"max_iters": 5}}, "output_dir": "{name}"}}"#
        );
        fs::write(p.join(format!("{name}.json")), cfg).unwrap();
        let out = speechfront(&["pipeline", "--config", &format!("{name}.json")], p);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["metrics.csv", "01_pef.wav", "02_cs.wav"] {
        assert_eq!(
            fs::read(p.join("a").join(f)).unwrap(),
            fs::read(p.join("b").join(f)).unwrap()
        );
    }
}

#[test]
fn lm_training_selection_and_rescoring() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let corpus = "the cat sat\nthe dog sat\nthe cat ran\n".repeat(10);
    fs::write(p.join("train.txt"), &corpus).unwrap();
    fs::write(p.join("dev.txt"), "the cat sat\n").unwrap();
    let out = speechfront(
        &[
            "train-lm",
            "--train",
            "train.txt",
            "--valid",
            "dev.txt",
            "--hidden",
            "8",
            "--epochs",
            "3",
            "--out",
            "lm.ckpt",
            "--report",
            "lm.json",
        ],
        p,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("lm.json")).unwrap()).unwrap();
    assert_eq!(report["perplexities"].as_array().unwrap().len(), 3);

    fs::write(p.join("pool.txt"), "the cat sat\nzz yy xx\nthe dog ran\n").unwrap();
    let out = speechfront(
        &[
            "select-data",
            "--train",
            "pool.txt",
            "--dev",
            "dev.txt",
            "--top-k",
            "2",
            "--out",
            "sel.txt",
        ],
        p,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read_to_string(p.join("sel.txt")).unwrap(),
        "the cat sat\nthe dog ran\n"
    );

    fs::write(
        p.join("in.nbest"),
        "u1 1 -10 0 the cat sat\nu1 2 -10 0 sat the cat\n",
    )
    .unwrap();
    let out = speechfront(
        &[
            "rescore", "--nbest", "in.nbest", "--lstm", "lm.ckpt", "--lambda", "1", "--best",
            "best.txt",
        ],
        p,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read_to_string(p.join("best.txt")).unwrap(),
        "u1 the cat sat\n"
    );
    let listing = String::from_utf8(out.stdout).unwrap();
    assert_eq!(listing.lines().count(), 2);
}
