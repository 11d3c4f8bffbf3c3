use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use recsys_dan::checkpoint::Checkpoint;
use recsys_dan::data::Vocabulary;
use recsys_dan::models::{DanVariant, ModelConfig};
use recsys_dan::training::DanModel;
use serde_json::Value;

const TINY: &str = "\
seed = 3
synth.users = 30
synth.items = 20
synth.interactions = 300
min_count = 1
max_len = 12
embed_dim = 4
hidden_dim = 4
interaction_dim = 8
discriminator_hidden = 8
batch_size = 64
lr = 1
source_epochs = 2
adversarial_epochs = 2
finetune_epochs = 1
";

fn bin(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recsys-dan"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.cfg");
    fs::write(&path, TINY).unwrap();
    path.to_string_lossy().into_owned()
}

fn stderr_error(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "stderr should be one line: {text}");
    serde_json::from_str(lines[0]).expect("error line is JSON")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn missing_input_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(dir.path(), &["pair", "--source", "nowhere/source.jsonl", "--target", "nowhere/target.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_error(&out);
    assert_eq!(err["exit_code"], 2);
    assert!(err["message"].as_str().unwrap().contains("nowhere/source.jsonl"), "{err}");
}

#[test]
fn adapt_before_source_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    stdout_json(&bin(dir.path(), &["--config", &cfg, "synth"]));
    let out = bin(dir.path(), &["--config", &cfg, "adapt"]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_error(&out);
    assert_eq!(err["error"], "phase-order");
    assert!(err["message"].as_str().unwrap().contains("train-source"), "{err}");
}

#[test]
fn unknown_flag_is_a_single_line_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(dir.path(), &["eval", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_error(&out)["error"], "usage");
}

#[test]
fn bad_config_line_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    fs::write(&path, "seed = 1\nbogus_key = 4\n").unwrap();
    let out = bin(dir.path(), &["--config", path.to_str().unwrap(), "synth"]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_error(&out);
    assert!(err["message"].as_str().unwrap().contains("line 2"), "{err}");
}

#[test]
fn amazon_schema_files_pair_like_canonical_ones() {
    let dir = tempfile::tempdir().unwrap();
    let mut canonical = Vec::new();
    let mut amazon = Vec::new();
    for u in 0..6 {
        for i in 0..5 {
            let text = format!("good item {i} from user {u}");
            let rating = 1 + (u + i) % 5;
            canonical.push(format!(
                r#"{{"user_id":"u{u}","item_id":"i{i}","rating":{rating},"review_text":"{text}"}}"#
            ));
            amazon.push(format!(r#"{{"reviewerID":"u{u}","asin":"i{i}","overall":{rating},"reviewText":"{text}"}}"#));
        }
    }
    for (name, lines) in [("c.jsonl", &canonical), ("a.jsonl", &amazon)] {
        fs::write(dir.path().join(name), lines.join("\n")).unwrap();
    }
    let c = dir.path().join("c.jsonl");
    let a = dir.path().join("a.jsonl");
    let (c, a) = (c.to_str().unwrap(), a.to_str().unwrap());
    let out_c = dir.path().join("canonical");
    let out_a = dir.path().join("amazon");
    let one = stdout_json(&bin(&out_c, &["--set", "min_count=1", "pair", "--source", c, "--target", c]));
    let two = stdout_json(&bin(&out_a, &["--schema", "amazon", "--set", "min_count=1", "pair", "--source", a, "--target", a]));
    assert_eq!(one, two);
    assert_eq!(fs::read(out_c.join("pair.json")).unwrap(), fs::read(out_a.join("pair.json")).unwrap());

    let wrong = bin(&out_a, &["pair", "--source", a, "--target", a]);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn predict_with_a_constant_head_prints_its_bias() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = Vocabulary::from_tokens(["<pad>", "<unk>", "good", "bad"].map(String::from).to_vec(), 1);
    let config = ModelConfig { embed_dim: 4, hidden_dim: 4, interaction_dim: 8, discriminator_hidden: 8, ..ModelConfig::new(4) };
    let mut model = DanModel::new(config, DanVariant::UiDan, 0).unwrap();
    model.head.dense.params.get_mut(0).data_mut().fill(0.0);
    model.head.dense.params.get_mut(1).data_mut()[0] = 3.0;
    let ck = dir.path().join("ck");
    Checkpoint::new(model, vocab, 8).save(&ck).unwrap();

    let out = bin(dir.path(), &["predict", "--checkpoint", ck.to_str().unwrap(), "--user-text", "good stuff", "--item-text", ""]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "3.0");
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(dir.path(), &["gradcheck"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 9, "{text}");
}

#[test]
fn full_pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        let synth = stdout_json(&bin(&out, &["--config", &cfg, "--variant", "h", "--set", "synth.shared_user_fraction=0.3", "--set", "synth.shared_item_fraction=0.3", "synth"]));
        assert!(synth["shared_users"].as_u64().unwrap() > 0);
        for phase in ["train-source", "adapt", "finetune"] {
            stdout_json(&bin(&out, &["--config", &cfg, "--variant", "h", phase]));
        }
        let eval = stdout_json(&bin(&out, &["--config", &cfg, "eval"]));
        assert!(eval["rmse"].as_f64().unwrap().is_finite());
        assert_eq!(eval["variant"], "H-DAN");
        let base = stdout_json(&bin(&out, &["--config", &cfg, "eval", "--source-only"]));
        assert!(base["rmse"].as_f64().unwrap().is_finite());
        out
    };
    let (a, b) = (run("a"), run("b"));
    for rel in [
        "pair.json",
        "reports/source.csv",
        "reports/adapt.csv",
        "reports/finetune.csv",
        "checkpoints/finetuned/manifest.json",
    ] {
        assert_eq!(fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap(), "{rel}");
    }
    for entry in fs::read_dir(a.join("checkpoints/finetuned/tensors")).unwrap() {
        let path = entry.unwrap().path();
        let other = b.join("checkpoints/finetuned/tensors").join(path.file_name().unwrap());
        assert_eq!(fs::read(&path).unwrap(), fs::read(other).unwrap());
    }
}
