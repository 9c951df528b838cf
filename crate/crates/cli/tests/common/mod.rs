#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const RATE: u32 = 22050;
pub const TONES: [f32; 4] = [220.0, 660.0, 1500.0, 3500.0];

pub fn pipmn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pipmn"))
        .args(args)
        .env_remove("PIPMN_CACHE_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

/// A noisy sine at `freq`, 16-bit mono.
pub fn tone_wav(path: &Path, freq: f32, seconds: f32, seed: u64) {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    let n = (seconds * RATE as f32) as usize;
    for i in 0..n {
        let t = i as f32 / RATE as f32;
        let v = 0.5 * (2.0 * std::f32::consts::PI * freq * t + phase).sin() + rng.gen_range(-0.05..0.05);
        w.write_sample((v * 32767.0) as i16).unwrap();
    }
    w.finalize().unwrap();
}

/// `clips_per_class` clips of each tone class and a manifest listing them.
pub fn tone_corpus(dir: &Path, classes: usize, clips_per_class: usize, seconds: f32) -> PathBuf {
    let audio = dir.join("audio");
    fs::create_dir_all(&audio).unwrap();
    let mut manifest = String::from("clip_id,file_path,labels\n");
    for (c, &freq) in TONES.iter().enumerate().take(classes) {
        for k in 0..clips_per_class {
            let id = format!("tone{c}-{k}");
            tone_wav(
                &audio.join(format!("{id}.wav")),
                freq,
                seconds,
                (c * 100 + k) as u64,
            );
            manifest += &format!("{id},audio/{id}.wav,class{c}\n");
        }
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest).unwrap();
    path
}

pub fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
