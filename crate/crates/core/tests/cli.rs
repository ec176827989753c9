use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use xcoder::crosscoder::{write_checkpoint, CrosscoderParams};
use xcoder::numerics::RngState;

fn xcoder(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xcoder"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn xcoder")
}

fn code(cwd: &Path, args: &[&str]) -> i32 {
    xcoder(cwd, args).status.code().expect("exit code")
}

fn ok(cwd: &Path, args: &[&str]) {
    let out = xcoder(cwd, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn with_fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["fixture", "--out", "fix", "--rollouts", "20", "--seed", "2"]);
    dir
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(dir.path(), &["bogus"]), 2);
    assert_eq!(code(dir.path(), &["train", "--out", "t"]), 2);
    assert_eq!(code(dir.path(), &["--help"]), 0);
    assert_eq!(code(dir.path(), &["diff", "--out", "d", "--checkpoint", "missing.xccp"]), 2);
}

#[test]
fn bad_files_exit_three_and_divergence_four() {
    let dir = with_fixture();
    let p = dir.path();
    assert_eq!(code(p, &["diff", "--out", "d", "--checkpoint", "fix/rollouts.jsonl"]), 3);

    fs::create_dir(p.join("cut")).unwrap();
    let bytes = fs::read(p.join("fix/shards/shard-000.xcas")).unwrap();
    fs::write(p.join("cut/shard-000.xcas"), &bytes[..bytes.len() - 7]).unwrap();
    fs::copy(p.join("fix/shards/shard-000.meta.jsonl"), p.join("cut/shard-000.meta.jsonl")).unwrap();
    assert_eq!(code(p, &["ingest", "--out", "bad", "--inputs", "cut/shard-000.xcas"]), 3);

    ok(p, &["ingest", "--out", "ds", "--inputs", "fix/shards/shard-000.xcas"]);
    assert_eq!(code(p, &["train", "--out", "t", "--manifest", "ds/manifest.json", "--lambda", "-1"]), 2);
    assert_eq!(
        code(p, &["train", "--out", "t", "--manifest", "ds/manifest.json", "--steps", "5", "--learning-rate", "1e200"]),
        4
    );
}

#[test]
fn zero_strength_steer_matches_generate() {
    let dir = with_fixture();
    let p = dir.path();
    let prompt = "so x=2. then y";
    ok(
        p,
        &[
            "steer", "--out", "st", "--models", "fix/models", "--checkpoint", "fix/planted.xccp", "--feature", "0",
            "--strengths", "0", "--prompt", prompt, "--max-tokens", "50", "--seed", "9",
        ],
    );
    ok(p, &["generate", "--out", "gen", "--models", "fix/models", "--prompt", prompt, "--max-tokens", "50", "--seed", "9"]);
    let steered = fs::read_to_string(p.join("st/texts/strength_+0.0000.txt")).unwrap();
    let plain = fs::read_to_string(p.join("gen/continuation.txt")).unwrap();
    assert_eq!(steered, plain);
}

#[test]
fn symmetric_decoders_are_all_shared() {
    let dir = tempfile::tempdir().unwrap();
    let mut cc = CrosscoderParams::init_random(6, 12, &mut RngState::new(1));
    cc.dec_reasoning = cc.dec_base.clone();
    write_checkpoint(&dir.path().join("sym.xccp"), &cc).unwrap();
    ok(dir.path(), &["diff", "--out", "d", "--checkpoint", "sym.xccp"]);
    let classes = fs::read_to_string(dir.path().join("d/classes.tsv")).unwrap();
    assert!(classes.lines().any(|l| l == "shared\t12\t1.000000000"), "{classes}");
    let per_feature = fs::read_to_string(dir.path().join("d/norm_diff.tsv")).unwrap();
    assert!(per_feature.lines().skip(1).all(|l| l.ends_with("\t0.500000000\tshared")), "{per_feature}");
}

#[test]
fn report_fractions_sum_to_one_and_configs_are_recorded() {
    let dir = with_fixture();
    let p = dir.path();
    ok(p, &["ingest", "--out", "ds", "--inputs", "fix/shards/shard-000.xcas", "fix/shards/shard-001.xcas"]);
    ok(p, &["train", "--out", "tr", "--manifest", "ds/manifest.json", "--steps", "60", "--d-crosscoder", "24", "--lambda", "0.5"]);
    ok(p, &["diff", "--out", "df", "--checkpoint", "tr/crosscoder.xccp"]);
    ok(p, &["report", "--out", "rp", "--diff", "df/norm_diff.json"]);
    let hist = fs::read_to_string(p.join("rp/class_histogram.tsv")).unwrap();
    let total: f64 = hist
        .lines()
        .skip(1)
        .filter_map(|l| l.split('\t').nth(2))
        .filter(|f| !f.is_empty())
        .map(|f| f.parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-9, "{hist}");
    assert!(p.join("rp/class_histogram.svg").exists());

    for (dir, command) in [("ds", "ingest"), ("tr", "train"), ("df", "diff"), ("rp", "report"), ("fix", "fixture")] {
        let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join(dir).join("config.json")).unwrap()).unwrap();
        assert_eq!(cfg["command"], command);
        assert_eq!(cfg["params"].is_object(), command != "report");
    }
}

#[test]
fn config_file_overrides_defaults_and_flags_override_config() {
    let dir = with_fixture();
    let p = dir.path();
    fs::write(p.join("gen.json"), r#"{"prompt": "then x", "sampling": {"max_tokens": 7, "temperature": 0.0}}"#).unwrap();
    ok(p, &["generate", "--out", "a", "--models", "fix/models", "--config", "gen.json"]);
    ok(p, &["generate", "--out", "b", "--models", "fix/models", "--config", "gen.json", "--max-tokens", "3"]);
    let read = |d: &str| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(p.join(d).join("generation.json")).unwrap()).unwrap()
    };
    assert_eq!(read("a")["tokens"].as_array().unwrap().len(), 7);
    assert_eq!(read("b")["tokens"].as_array().unwrap().len(), 3);
}
