use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};
use log::{error, info};
use pipmn::data::{make_split, materialize_features, read_manifest};
use pipmn::model::Variant;
use pipmn::train::MetricsReport;

use super::{open_dataset, write_json, ExitCodeExt, Failure, CONFIG_FILE, EXIT_DATA, EXIT_INVALID};
use crate::config::{Overrides, RunConfig};

pub const ABLATION_FILE: &str = "ablation.csv";
pub const HEADER: [&str; 7] = ["variant", "Accuracy", "MaP", "MaF1", "MiF1", "Params", "status"];

fn fmt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// Columns of one successful row, scored on test (val when test is empty).
fn row(variant: Variant, m: &MetricsReport, params: usize) -> Vec<String> {
    vec![
        variant.to_string(),
        fmt(m.accuracy.or(m.example_acc)),
        fmt(m.macro_precision.or(m.label_macro_acc)),
        fmt(m.macro_f1),
        fmt(m.micro_f1.or(m.label_micro_f1)),
        params.to_string(),
        "ok".into(),
    ]
}

fn run_variant(base: &RunConfig, v: Variant, out_dir: &Path) -> Result<Vec<String>, Failure> {
    let mut cfg = base.clone();
    cfg.variant = v;
    // the base in_dim belongs to the stacked features
    if v.feature_kind() != pipmn::dsp::FeatureKind::Stack {
        cfg.in_dim = None;
    }
    cfg.validate()?;
    if let Some(path) = &cfg.manifest {
        let m = read_manifest(path).exit(EXIT_INVALID)?;
        let split = make_split(&m, cfg.seed).exit(EXIT_INVALID)?;
        let s = materialize_features(&m, &split, cfg.cache_dir()?, cfg.feature_kind()).exit(EXIT_DATA)?;
        if !s.ok() {
            return Err(Failure::new(
                EXIT_DATA,
                anyhow!("{} clips failed extraction", s.failures.len()),
            ));
        }
    }
    let data = open_dataset(&mut cfg)?;
    let report = super::train::fit(&cfg, &data, &out_dir.join(v.name()))?;
    let scored = report
        .test
        .as_ref()
        .or(report.val.as_ref())
        .ok_or_else(|| Failure::new(EXIT_INVALID, anyhow!("no val or test segments to score")))?;
    Ok(row(v, scored, report.param_count))
}

pub fn run(config: Option<&Path>, out_dir: &Path, o: &Overrides) -> Result<(), Failure> {
    let cfg = RunConfig::resolve(config, o)?;
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .exit(EXIT_INVALID)?;
    write_json(&out_dir.join(CONFIG_FILE), &cfg).exit(EXIT_INVALID)?;

    let path = out_dir.join(ABLATION_FILE);
    let mut csv = csv::Writer::from_path(&path).exit(EXIT_INVALID)?;
    csv.write_record(HEADER).exit(EXIT_INVALID)?;
    let mut failed = Vec::new();
    for v in Variant::ALL {
        info!("ablation variant {v}");
        let record = match run_variant(&cfg, v, out_dir) {
            Ok(r) => r,
            Err(f) => {
                error!("variant {v} failed: {:#}", f.error);
                failed.push(v);
                let mut r = vec![v.to_string()];
                r.extend(std::iter::repeat_n(String::new(), HEADER.len() - 2));
                r.push(format!("failed: {:#}", f.error));
                r
            }
        };
        csv.write_record(&record).exit(EXIT_INVALID)?;
        csv.flush().exit(EXIT_INVALID)?;
    }
    drop(csv);
    print!("{}", fs::read_to_string(&path).exit(EXIT_INVALID)?);
    if failed.is_empty() {
        Ok(())
    } else {
        let names: Vec<&str> = failed.iter().map(|v| v.name()).collect();
        Err(Failure::new(
            EXIT_DATA,
            anyhow!("{} variants failed: {}", failed.len(), names.join(", ")),
        ))
    }
}
