//! Library-level path from WAV files on disk to a reloaded, re-evaluated
//! checkpoint.

use std::f32::consts::TAU;
use std::fs;
use std::path::Path;

use pipmn::data::{
    make_split, materialize_features, read_manifest, Dataset, GaussianMeans, Order, Split, Task,
};
use pipmn::dsp::FeatureKind;
use pipmn::model::{load_checkpoint, save_checkpoint, CheckpointMeta, PipConfig, PipmnModel};
use pipmn::train::{evaluate, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tone(path: &Path, freq: f32, rate: u32, seconds: f32, seed: u64) {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for i in 0..(rate as f32 * seconds) as usize {
        let s = 0.4 * (TAU * freq * i as f32 / rate as f32).sin() + rng.gen_range(-0.05..0.05);
        w.write_sample((s * i16::MAX as f32) as i16).unwrap();
    }
    w.finalize().unwrap();
}

fn tiny(classes: usize) -> PipConfig {
    PipConfig {
        n: 2,
        kappas: vec![2, 3],
        time_length: 3,
        alpha: 2,
        ..PipConfig::base(classes)
    }
}

#[test]
fn wav_corpus_to_reloaded_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("clip_id,file_path,labels\n");
    for c in 0..2 {
        for k in 0..6 {
            let name = format!("c{c}-{k}.wav");
            // one clip per class arrives at 16 kHz and is resampled
            let rate = if k == 0 { 16_000 } else { 22_050 };
            tone(
                &dir.path().join(&name),
                [440.0, 2500.0][c],
                rate,
                8.0,
                (c * 10 + k) as u64,
            );
            csv += &format!("clip{c}{k},{name},{}\n", ["low", "high"][c]);
        }
    }
    let manifest_path = dir.path().join("manifest.csv");
    fs::write(&manifest_path, csv).unwrap();

    let m = read_manifest(&manifest_path).unwrap();
    let split = make_split(&m, 1).unwrap();
    let cache = dir.path().join("cache");
    let summary = materialize_features(&m, &split, &cache, FeatureKind::Stack).unwrap();
    assert!(summary.ok());
    assert_eq!((summary.extracted, summary.entries.len()), (24, 24));
    let again = materialize_features(&m, &split, &cache, FeatureKind::Stack).unwrap();
    assert_eq!((again.extracted, again.cached), (0, 24));

    let data = Dataset::from_index(&summary.dir, Task::Multiclass).unwrap();
    assert_eq!(data.classes, ["high", "low"]);
    assert_eq!(
        data.count(Split::Train) + data.count(Split::Val) + data.count(Split::Test),
        24
    );
    // both segments of a clip land in the same split
    for item in &data.items {
        assert_eq!(Some(item.split), split.get(&item.clip_id));
    }
    let b = data.batch(&[0]).unwrap();
    assert_eq!(b.features.shape(), [1, 399, 100]);

    let mut model: PipmnModel<f32> = PipmnModel::new(tiny(2), 0).unwrap();
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 8,
        optimizer: pipmn::train::AdamWConfig {
            lr: 3e-3,
            ..Default::default()
        },
        ..Default::default()
    };
    let out = train(&mut model, &data, &cfg, |_| {}).unwrap();
    assert_eq!(out.log.epochs.last().unwrap().train_acc, 1.0);

    let meta = CheckpointMeta {
        feature_kind: FeatureKind::Stack,
        task: Task::Multiclass,
        classes: data.classes.clone(),
        extra: Default::default(),
    };
    let path = dir.path().join("model.pipc");
    save_checkpoint(&path, &out.best, &meta).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let loss = cfg.loss(Task::Multiclass);
    for s in [Split::Train, Split::Val] {
        let a = evaluate(&out.best, &data, s, 8, loss, 0.5).unwrap();
        let b = evaluate(&back.model, &data, s, 32, loss, 0.5).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn batches_cover_the_split_once_with_a_short_tail() {
    let data = GaussianMeans {
        samples: 300,
        classes: 3,
        frames: 5,
        dims: 4,
        separation: 1.0,
        seed: 0,
    }
    .build()
    .unwrap();
    for order in [Order::Sequential, Order::Shuffled { seed: 9, epoch: 2 }] {
        let batches: Vec<_> = data
            .batches(Split::Train, 128, order)
            .unwrap()
            .map(Result::unwrap)
            .collect();
        let sizes: Vec<usize> = batches.iter().map(|b| b.len()).collect();
        assert_eq!(sizes, [128, 128, 44]);
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.items.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..300).collect::<Vec<_>>());
    }
    let order = |epoch| {
        data.batches(Split::Train, 128, Order::Shuffled { seed: 9, epoch })
            .unwrap()
            .order()
            .to_vec()
    };
    assert_eq!(order(1), order(1));
    assert_ne!(order(1), order(2));
}
