//! End-to-end checks of the `advc` binary: real subprocesses, real files.

use advc_core::dsp;
use advc_core::tensorio::wav;
use std::path::Path;
use std::process::{Command, Output};

fn advc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advc"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("stdout not JSON ({e}): {text}"))
}

fn seed_corpus(root: &Path) {
    let target = root.join("corpus/target");
    std::fs::create_dir_all(&target).unwrap();
    for i in 0..4u64 {
        wav::write_wav(
            &target.join(format!("t{i:02}.wav")),
            &dsp::speech_like(0.5, 100 + i),
        )
        .unwrap();
    }
    for (spk, base) in [("alice", 200u64), ("bob", 300u64)] {
        let sub = root.join("corpus/external").join(spk);
        std::fs::create_dir_all(&sub).unwrap();
        for i in 0..3u64 {
            wav::write_wav(
                &sub.join(format!("{spk}{i:02}.wav")),
                &dsp::speech_like(0.5, base + i),
            )
            .unwrap();
        }
    }
}

const CONFIG: &str = r#"
seed = 7
target_speaker = "target"

[paths]
target_corpus = "corpus/target"
external_corpus = "corpus/external"
workdir = "work"

[split]
split_ratio = 0.75
augment_rates = [1.1]

[extractor]
dim = 24

[generator]
input_dim = 24
hidden_dim = 16
encoder_blocks = 1
decoder_blocks = 1
attention_heads = 2
conv_kernel = 3
dropout = 0.0

[training]
steps = 12
batch_size = 2
crop_frames = 16
warmup_steps = 4
checkpoint_every = 6
validate_every = 4
seed = 7

[vocoder]
iterations = 8

[eval]
tsne_perplexity = 3.0
tsne_iterations = 150
probe_window = 8
"#;

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    seed_corpus(root);
    std::fs::write(root.join("advc.toml"), CONFIG).unwrap();

    // prepare: 4 sources x 2 rate copies + 6 external = 14 feature files.
    let out = advc(root, &["prepare"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    assert_eq!(summary["features_extracted"], 14);
    assert_eq!(summary["features_cached"], 0);

    // Idempotence: the second run extracts nothing.
    let out = advc(root, &["prepare"]);
    assert!(out.status.success());
    let summary = stdout_json(&out);
    assert_eq!(summary["features_extracted"], 0);
    assert_eq!(summary["features_cached"], 14);

    // train: final checkpoint lands at the configured step count.
    let out = advc(root, &["train"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let outcome = stdout_json(&out);
    let ckpt = outcome["final_checkpoint"].as_str().unwrap().to_string();
    assert!(ckpt.ends_with("ckpt_12.vcck"), "{ckpt}");
    assert!(root.join(&ckpt).exists() || Path::new(&ckpt).exists());
    let log = root.join("work/checkpoints/train_log.jsonl");
    let lines = std::fs::read_to_string(&log).unwrap();
    assert!(lines.lines().count() >= 12, "short train log");

    // convert: one output per input, stems preserved.
    let input = root.join("corpus/external/alice/alice00.wav");
    let out = advc(
        root,
        &[
            "convert",
            "--checkpoint",
            &ckpt,
            "--out-dir",
            "converted",
            input.to_str().unwrap(),
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.join("converted/alice00.wav").exists());

    // evaluate: pair the conversion against the source rendition by stem.
    let out = advc(
        root,
        &[
            "evaluate",
            "--converted",
            "converted",
            "--reference",
            "corpus/external/alice",
            "--json-out",
            "eval.json",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("MCD (dB)"), "missing table: {text}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["n_pairs"], 1);
    assert_eq!(report["pairs"][0]["stem"], "alice00");

    // visualize: two panels plus the side-by-side composite.
    let out = advc(
        root,
        &[
            "visualize",
            "--with-lsim",
            &ckpt,
            "--without-lsim",
            &ckpt,
            "--out-dir",
            "viz",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for artifact in [
        "viz/tsne_with_lsim.png",
        "viz/tsne_without_lsim.png",
        "viz/tsne_with_lsim.vctf",
        "viz/tsne_comparison.png",
    ] {
        assert!(root.join(artifact).exists(), "{artifact}");
    }
}

#[test]
fn missing_config_reports_a_json_envelope() {
    let dir = tempfile::tempdir().unwrap();
    let out = advc(dir.path(), &["prepare"]);
    assert_eq!(out.status.code(), Some(11));
    let err: serde_json::Value =
        serde_json::from_slice(&out.stderr).expect("stderr is a JSON envelope");
    assert_eq!(err["error"]["kind"], "io");
    assert_eq!(err["error"]["exit_code"], 11);
}

#[test]
fn evaluate_with_no_pairs_exits_with_param_code() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("advc.toml"), CONFIG).unwrap();
    std::fs::create_dir_all(root.join("conv")).unwrap();
    std::fs::create_dir_all(root.join("ref")).unwrap();
    let out = advc(
        root,
        &["evaluate", "--converted", "conv", "--reference", "ref"],
    );
    assert_eq!(out.status.code(), Some(9));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "param");
}
