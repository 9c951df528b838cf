use std::path::Path;

use anyhow::anyhow;
use log::warn;
use pipmn::data::{make_split, materialize_features, read_manifest, DataError, Split, SplitAssignment};
use pipmn::dsp::FeatureKind;

use super::{ExitCodeExt, Failure, EXIT_DATA, EXIT_INVALID};
use crate::config::{Overrides, RunConfig};

pub fn run(config: Option<&Path>, kind: Option<FeatureKind>, o: &Overrides) -> Result<(), Failure> {
    let cfg = RunConfig::resolve(config, o)?;
    let manifest_path = cfg.manifest.clone().ok_or_else(|| {
        Failure::new(
            EXIT_INVALID,
            anyhow!("no manifest; pass --manifest or set `manifest`"),
        )
    })?;
    let cache_dir = cfg.cache_dir()?;
    let manifest = read_manifest(&manifest_path).exit(EXIT_INVALID)?;
    let split = match make_split(&manifest, cfg.seed) {
        Ok(s) => s,
        Err(DataError::TooFewClips { min, found }) => {
            warn!(
                "{found} clips is below the {min} needed for a train/val/test split; all clips go to train"
            );
            SplitAssignment {
                seed: cfg.seed,
                assignment: manifest
                    .rows
                    .iter()
                    .map(|r| (r.clip_id.clone(), Split::Train))
                    .collect(),
            }
        }
        Err(e) => return Err(Failure::new(EXIT_INVALID, e)),
    };
    let kind = kind.unwrap_or(cfg.feature_kind());
    let summary = materialize_features(&manifest, &split, &cache_dir, kind).exit(EXIT_INVALID)?;

    println!("{} extracted, {} cached", summary.extracted, summary.cached);
    let per_split: Vec<String> = Split::ALL
        .iter()
        .map(|&s| format!("{s}={}", summary.entries.iter().filter(|e| e.split == s).count()))
        .collect();
    println!(
        "{} segments in {} ({})",
        summary.entries.len(),
        summary.dir.display(),
        per_split.join(", ")
    );
    if summary.ok() {
        return Ok(());
    }
    println!("{} clips failed:", summary.failures.len());
    for f in &summary.failures {
        println!("  {} ({}): {}", f.clip_id, f.file.display(), f.error);
    }
    Err(Failure::new(
        EXIT_DATA,
        anyhow!(
            "{} of {} clips could not be extracted",
            summary.failures.len(),
            manifest.rows.len()
        ),
    ))
}
