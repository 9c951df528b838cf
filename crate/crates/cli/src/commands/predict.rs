use std::path::Path;

use pipmn::data::Task;
use pipmn::dsp::{load_wav, resample, segment_clip, FeatureExtractor, PIPELINE_RATE, SEGMENT_SECONDS};
use pipmn::model::load_checkpoint;
use pipmn::train::probabilities;
use pipmn::Tensor;
use serde::Serialize;

use super::eval::stored_config;
use super::{ExitCodeExt, Failure, EXIT_DATA, EXIT_INVALID};
use crate::config::RunConfig;

pub const PREDICT_SCHEMA: &str = "pipmn.predict/1";

#[derive(Serialize)]
struct SegmentPrediction {
    segment: usize,
    start_s: f64,
    end_s: f64,
    /// Argmax class, or every class at or above the threshold (multilabel).
    labels: Vec<String>,
    probabilities: serde_json::Map<String, serde_json::Value>,
}

#[derive(Serialize)]
struct PredictOutput<'a> {
    schema: &'static str,
    file: &'a Path,
    checkpoint: &'a Path,
    task: Task,
    config: &'a RunConfig,
    segments: Vec<SegmentPrediction>,
}

pub fn run(checkpoint: &Path, wav: &Path) -> Result<(), Failure> {
    let ck = load_checkpoint(checkpoint).exit(EXIT_INVALID)?;
    let cfg = stored_config(&ck)?;
    let audio = load_wav(wav).exit(EXIT_DATA)?;
    let audio = resample(&audio, PIPELINE_RATE).exit(EXIT_DATA)?;
    let extractor = FeatureExtractor::new(ck.meta.feature_kind).exit(EXIT_INVALID)?;
    let segments = segment_clip(&audio, SEGMENT_SECONDS);
    let mut data = Vec::new();
    let mut frames = 0;
    for seg in &segments {
        let fm = extractor.extract(seg).exit(EXIT_DATA)?;
        frames = fm.frames;
        data.extend(fm.data);
    }
    let dims = ck.meta.feature_kind.dims();
    let x = Tensor::new(&[segments.len(), frames, dims], data).exit(EXIT_INVALID)?;
    let probs = probabilities(&ck.model, ck.meta.task, &x)?;

    let classes = &ck.meta.classes;
    let out = PredictOutput {
        schema: PREDICT_SCHEMA,
        file: wav,
        checkpoint,
        task: ck.meta.task,
        config: &cfg,
        segments: probs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let labels = match ck.meta.task {
                    Task::Multiclass => {
                        let best = (0..p.len()).fold(0, |b, k| if p[k] > p[b] { k } else { b });
                        vec![classes[best].clone()]
                    }
                    Task::Multilabel => (0..p.len())
                        .filter(|&k| p[k] >= cfg.threshold)
                        .map(|k| classes[k].clone())
                        .collect(),
                };
                SegmentPrediction {
                    segment: i,
                    start_s: i as f64 * SEGMENT_SECONDS,
                    end_s: ((i + 1) as f64 * SEGMENT_SECONDS).min(audio.duration_s().max(SEGMENT_SECONDS)),
                    labels,
                    probabilities: classes.iter().cloned().zip(p.iter().map(|&v| v.into())).collect(),
                }
            })
            .collect(),
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&out).expect("output serializes")
    );
    Ok(())
}
