mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use common::*;
use pipmn::data::read_index;
use pipmn::model::{load_checkpoint, PipmnModel};
use serde_json::Value;
use tempfile::TempDir;

/// 20 tone clips (5 per class), their stack cache, and one trained run.
struct Fixture {
    dir: TempDir,
    manifest: PathBuf,
    cache: PathBuf,
    run: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let manifest = tone_corpus(dir.path(), 4, 5, 4.0);
        let cache = dir.path().join("cache");
        let o = pipmn(&[
            "features",
            "--manifest",
            s(&manifest),
            "--cache-dir",
            s(&cache),
            "--seed",
            "3",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let run = dir.path().join("run");
        let o = pipmn(&[
            "train",
            "--out",
            s(&run),
            "--cache-dir",
            s(&cache),
            "--seed",
            "3",
            "--epochs",
            "300",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        Fixture {
            dir,
            manifest,
            cache,
            run,
        }
    })
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn features_three_long_clips_give_21_segments_and_warm_rerun_is_cached() {
    let dir = TempDir::new().unwrap();
    let audio = dir.path().join("audio");
    fs::create_dir_all(&audio).unwrap();
    let mut m = String::from("clip_id,file_path,labels\n");
    for (i, genre) in ["blues", "jazz", "rock"].iter().enumerate() {
        tone_wav(&audio.join(format!("{genre}.wav")), TONES[i], 30.0, i as u64);
        m += &format!("{genre}.00000,audio/{genre}.wav,{genre}\n");
    }
    let manifest = dir.path().join("m.csv");
    fs::write(&manifest, m).unwrap();
    let cache = dir.path().join("cache");

    let o = pipmn(&["features", "--manifest", s(&manifest), "--cache-dir", s(&cache)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("21 extracted, 0 cached"), "{}", stdout(&o));
    let pipf = fs::read_dir(cache.join("stack"))
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "pipf")
        })
        .count();
    assert_eq!(pipf, 21);

    let o = pipmn(&["features", "--manifest", s(&manifest), "--cache-dir", s(&cache)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("0 extracted, 21 cached"), "{}", stdout(&o));
}

#[test]
fn features_with_a_missing_file_exits_2_and_names_it() {
    let dir = TempDir::new().unwrap();
    let manifest = tone_corpus(dir.path(), 2, 5, 1.0);
    let mut text = fs::read_to_string(&manifest).unwrap();
    text += "ghost,audio/ghost.wav,class0\n";
    fs::write(&manifest, text).unwrap();
    let o = pipmn(&[
        "features",
        "--manifest",
        s(&manifest),
        "--cache-dir",
        s(&dir.path().join("c")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).contains("ghost.wav"), "{}", stdout(&o));
}

#[test]
fn cache_dir_defaults_to_the_environment() {
    let dir = TempDir::new().unwrap();
    let manifest = tone_corpus(dir.path(), 2, 5, 1.0);
    let cache = dir.path().join("envcache");
    let o = std::process::Command::new(env!("CARGO_BIN_EXE_pipmn"))
        .args(["features", "--manifest", s(&manifest)])
        .env("PIPMN_CACHE_DIR", &cache)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(cache.join("stack").join("index.jsonl").exists());
    let o = pipmn(&["features", "--manifest", s(&manifest)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("cache_dir"));
}

#[test]
fn trained_fixture_fits_its_training_split() {
    let f = fixture();
    let report = json(&f.run.join("report.json"));
    assert_eq!(report["schema"], "pipmn.train-report/1");
    assert_eq!(report["train"]["accuracy"], 1.0, "{report:#}");
    for name in ["checkpoint.pipc", "runlog.jsonl", "config.json"] {
        assert!(f.run.join(name).exists(), "{name}");
    }
}

#[test]
fn echoed_config_re_parses_identically() {
    let f = fixture();
    let echoed = json(&f.run.join("config.json"));
    assert_eq!(json(&f.run.join("report.json"))["config"], echoed);
    let ck = load_checkpoint(f.run.join("checkpoint.pipc")).unwrap();
    assert_eq!(ck.meta.extra["run_config"], echoed);
    // feed the echo back in: same effective config
    let out = f.dir.path().join("again");
    let o = pipmn(&[
        "train",
        "--config",
        s(&f.run.join("config.json")),
        "--out",
        s(&out),
        "--epochs",
        "1",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut again = json(&out.join("config.json"));
    again["epochs"] = echoed["epochs"].clone();
    assert_eq!(again, echoed);
}

#[test]
fn same_seed_gives_identical_run_logs() {
    let f = fixture();
    let mut logs = Vec::new();
    for tag in ["a", "b"] {
        let out = f.dir.path().join(format!("seed-{tag}"));
        let o = pipmn(&[
            "train",
            "--out",
            s(&out),
            "--cache-dir",
            s(&f.cache),
            "--seed",
            "11",
            "--epochs",
            "5",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        logs.push(fs::read(out.join("runlog.jsonl")).unwrap());
    }
    assert_eq!(logs[0], logs[1]);
    let text = String::from_utf8(logs[0].clone()).unwrap();
    assert_eq!(text.lines().count(), 6, "header + 5 epochs");
}

#[test]
fn zero_epochs_checkpoint_is_the_initialization() {
    let f = fixture();
    let out = f.dir.path().join("zero");
    let o = pipmn(&[
        "train",
        "--out",
        s(&out),
        "--cache-dir",
        s(&f.cache),
        "--seed",
        "5",
        "--epochs",
        "0",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ck = load_checkpoint(out.join("checkpoint.pipc")).unwrap();
    let init: PipmnModel<f32> = PipmnModel::new(ck.model.config.clone(), 5).unwrap();
    for (a, b) in ck.model.params.iter().zip(init.params.iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.tensor.data(), b.tensor.data(), "{}", a.name);
    }
}

#[test]
fn invalid_config_exits_1_naming_the_field() {
    let f = fixture();
    let out = f.dir.path().join("bad");
    for (json, field) in [
        (r#"{"batch_size": 0}"#, "batch_size"),
        (r#"{"dropout": 0.1}"#, "dropout"),
        (r#"{"num_classes": 7}"#, "num_classes"),
        (r#"{"in_dim": 20}"#, "in_dim"),
    ] {
        let cfg = write_config(f.dir.path(), "bad.json", json);
        let o = pipmn(&[
            "train",
            "--config",
            s(&cfg),
            "--out",
            s(&out),
            "--cache-dir",
            s(&f.cache),
        ]);
        assert_eq!(code(&o), 1, "{json}: {}", stderr(&o));
        assert!(stderr(&o).contains(field), "{json}: {}", stderr(&o));
    }
}

#[test]
fn divergence_exits_3() {
    let f = fixture();
    let out = f.dir.path().join("diverge");
    let o = pipmn(&[
        "train",
        "--out",
        s(&out),
        "--cache-dir",
        s(&f.cache),
        "--epochs",
        "20",
        "--lr",
        "1e30",
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"), "{}", stderr(&o));
}

#[test]
fn eval_reproduces_the_stored_validation_metrics() {
    let f = fixture();
    let o = pipmn(&[
        "eval",
        "--checkpoint",
        s(&f.run.join("checkpoint.pipc")),
        "--split",
        "val",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let end = text.find("\n}\n").unwrap() + 2;
    let out: Value = serde_json::from_str(&text[..end]).unwrap();
    let stored = json(&f.run.join("report.json"));
    assert_eq!(out["metrics"], stored["val"]);
    assert_eq!(out["config"], stored["config"]);
    assert!(text[end..].contains("macro_f1"), "table follows the JSON");
}

#[test]
fn eval_on_the_fitted_split_scores_all_ones() {
    let f = fixture();
    let o = pipmn(&[
        "eval",
        "--checkpoint",
        s(&f.run.join("checkpoint.pipc")),
        "--split",
        "train",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let out: Value = serde_json::from_str(&text[..text.find("\n}\n").unwrap() + 2]).unwrap();
    for key in ["accuracy", "macro_precision", "macro_f1", "micro_f1"] {
        assert_eq!(out["metrics"][key], 1.0, "{key}");
    }
}

#[test]
fn eval_on_an_empty_split_exits_1() {
    let dir = TempDir::new().unwrap();
    // under ten clips everything lands in train
    let manifest = tone_corpus(dir.path(), 2, 3, 1.0);
    let cache = dir.path().join("cache");
    assert_eq!(
        code(&pipmn(&[
            "features",
            "--manifest",
            s(&manifest),
            "--cache-dir",
            s(&cache)
        ])),
        0
    );
    let (_, entries) = read_index(cache.join("stack")).unwrap();
    assert!(entries.iter().all(|e| e.split == pipmn::data::Split::Train));
    let out = dir.path().join("run");
    let o = pipmn(&[
        "train",
        "--out",
        s(&out),
        "--cache-dir",
        s(&cache),
        "--epochs",
        "1",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = pipmn(&[
        "eval",
        "--checkpoint",
        s(&out.join("checkpoint.pipc")),
        "--split",
        "val",
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("empty"), "{}", stderr(&o));
}

fn total(args: &[&str]) -> u64 {
    let mut a = vec!["params", "--json"];
    a.extend_from_slice(args);
    let o = pipmn(&a);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    v["total"].as_u64().unwrap()
}

#[test]
fn params_counts() {
    assert_eq!(total(&[]), 1_375_797);
    assert_eq!(total(&["--variant", "mfcc50"]), 348_297);
    assert_eq!(total(&["--variant", "mel100"]), 1_375_797);
    assert_eq!(total(&["--variant", "no_long_range_skip"]), 1_375_796);
    let o = pipmn(&["params"]);
    assert!(stdout(&o).contains("1375797"));
    assert!(stdout(&o).contains("stage3"));
}

#[test]
fn params_minimal_config_is_head_dominated() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "min.json",
        r#"{"n": 1, "kappas": [1], "time_length": 1, "in_dim": 2, "alpha": 1, "num_classes": 50}"#,
    );
    let o = pipmn(&["params", "--json", "--config", s(&cfg)]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let head = v["groups"]
        .as_array()
        .unwrap()
        .iter()
        .find(|g| g["group"] == "head")
        .unwrap();
    let head = head["count"].as_u64().unwrap();
    assert_eq!(head, 2 * 50 + 50);
    assert!(2 * head > v["total"].as_u64().unwrap());
}

#[test]
fn gradcheck_passes_and_lists_every_op() {
    let o = pipmn(&["gradcheck", "--size", "tiny"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let text = stdout(&o);
    for op in [
        "linear",
        "layer_norm",
        "gelu",
        "depthwise_conv1d",
        "dense_mlp",
        "model[tiny]",
    ] {
        assert!(text.lines().any(|l| l.starts_with(op)), "{op} missing:\n{text}");
    }
    assert!(text.trim_end().ends_with("PASS"));
}

#[test]
fn predict_gives_one_distribution_per_segment() {
    let f = fixture();
    let wav = f.dir.path().join("long.wav");
    tone_wav(&wav, TONES[2], 30.0, 77);
    let o = pipmn(&[
        "predict",
        "--checkpoint",
        s(&f.run.join("checkpoint.pipc")),
        "--wav",
        s(&wav),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let segs = v["segments"].as_array().unwrap();
    assert_eq!(segs.len(), 7);
    for seg in segs {
        let p = seg["probabilities"].as_object().unwrap();
        assert_eq!(p.len(), 4);
        let sum: f64 = p.values().map(|x| x.as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-5);
        assert_eq!(seg["labels"].as_array().unwrap().len(), 1);
    }
    assert_eq!(segs[0]["labels"][0], "class2");
}

#[test]
fn predict_on_unreadable_audio_exits_2() {
    let f = fixture();
    let junk = f.dir.path().join("junk.wav");
    fs::write(&junk, b"not a wav file").unwrap();
    let ck = f.run.join("checkpoint.pipc");
    assert_eq!(
        code(&pipmn(&["predict", "--checkpoint", s(&ck), "--wav", s(&junk)])),
        2
    );
    let missing = f.dir.path().join("nope.wav");
    assert_eq!(
        code(&pipmn(&["predict", "--checkpoint", s(&ck), "--wav", s(&missing)])),
        2
    );
}

#[test]
fn ablate_writes_seven_consistent_rows() {
    let f = fixture();
    let out = f.dir.path().join("ablation");
    let o = pipmn(&[
        "ablate",
        "--out-dir",
        s(&out),
        "--manifest",
        s(&f.manifest),
        "--cache-dir",
        s(&f.cache),
        "--seed",
        "3",
        "--epochs",
        "2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(out.join("ablation.csv")).unwrap();
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["variant", "Accuracy", "MaP", "MaF1", "MiF1", "Params", "status"]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 7);
    for r in &rows {
        assert_eq!(&r[6], "ok");
        let params: u64 = r[5].parse().unwrap();
        let classes = ["--num-classes", "4", "--variant", &r[0]];
        assert_eq!(params, total(&classes), "{}", &r[0]);
        assert_eq!(&r[1], &r[4], "micro-F1 equals accuracy");
    }
    let skipless = rows.iter().find(|r| &r[0] == "no_long_range_skip").unwrap();
    let ck = load_checkpoint(out.join("no_long_range_skip").join("checkpoint.pipc")).unwrap();
    assert!(ck.model.rho_ids().is_empty());
    assert!(ck.model.params.iter().all(|p| !p.name.ends_with(".rho")));
    assert_eq!(
        skipless[5].parse::<u64>().unwrap() + 1,
        rows[0][5].parse::<u64>().unwrap()
    );
}

#[test]
fn ablate_records_failures_and_exits_2() {
    let dir = TempDir::new().unwrap();
    let manifest = tone_corpus(dir.path(), 2, 5, 1.0);
    let cache = dir.path().join("cache");
    assert_eq!(
        code(&pipmn(&[
            "features",
            "--manifest",
            s(&manifest),
            "--cache-dir",
            s(&cache)
        ])),
        0
    );
    let out = dir.path().join("ablation");
    // no manifest and no mfcc50/mel100 caches: those variants fail
    let o = pipmn(&[
        "ablate",
        "--out-dir",
        s(&out),
        "--cache-dir",
        s(&cache),
        "--epochs",
        "1",
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let rows: Vec<csv::StringRecord> = csv::Reader::from_path(out.join("ablation.csv"))
        .unwrap()
        .records()
        .map(|r| r.unwrap())
        .collect();
    assert_eq!(rows.len(), 7);
    let failed: Vec<&str> = rows
        .iter()
        .filter(|r| r[6].starts_with("failed"))
        .map(|r| &r[0])
        .collect();
    assert_eq!(failed, ["mfcc50", "mel100"]);
}
