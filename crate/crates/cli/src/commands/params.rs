use std::path::Path;

use pipmn::model::PipmnModel;
use serde_json::json;

use super::{ExitCodeExt, Failure, EXIT_INVALID};
use crate::config::{Overrides, RunConfig};

pub fn run(config: Option<&Path>, json: bool, o: &Overrides) -> Result<(), Failure> {
    let cfg = RunConfig::resolve(config, o)?;
    let arch = cfg.model_config(cfg.num_classes.unwrap_or(10));
    let model: PipmnModel<f32> = PipmnModel::new(arch.clone(), cfg.seed).exit(EXIT_INVALID)?;
    let groups = model.param_breakdown();
    let total = model.param_count();
    if json {
        let out = json!({
            "config": cfg,
            "variant": cfg.variant,
            "groups": groups,
            "total": total,
        });
        println!(
            "{}",
            serde_json::to_string_pretty(&out).expect("output serializes")
        );
        return Ok(());
    }
    println!(
        "variant {}  (n={}, kappas={:?}, time_length={}, in_dim={}, alpha={}, classes={})",
        cfg.variant, arch.n, arch.kappas, arch.time_length, arch.in_dim, arch.alpha, arch.num_classes
    );
    for g in &groups {
        println!("{:<18} {:>12}", g.group, g.count);
    }
    println!("{:<18} {:>12}", "total", total);
    Ok(())
}
