//! Balanced human/robot training schedule over a written dataset.

use std::collections::BTreeMap;

use hand2robot::dataset::{read_normalization, Dataset, MANIFEST_FILE};
use hand2robot::mixer::{build_index, build_schedule, default_human_fraction, schedule_to_string, MixError, MixPlan};
use serde::{Deserialize, Serialize};

use crate::config::LoadedConfig;
use crate::{CliError, RunOptions};

pub const SCHEDULE_FILE: &str = "training_schedule.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSummary {
    pub counts: BTreeMap<String, usize>,
    pub human_fraction: f64,
    pub batch_size: usize,
    pub human_per_batch: usize,
    pub batches: usize,
    pub schedule: String,
}

pub fn cmd_mix(cfg: &LoadedConfig, run: &RunOptions) -> Result<MixSummary, CliError> {
    let c = &cfg.config;
    let root = cfg.output();
    let ds = Dataset::open(&root).map_err(|e| CliError::Input(format!("{}: {e}", root.display())))?;
    read_normalization(&root, &ds.manifest).map_err(|e| CliError::Input(format!("{}: {e}", root.display())))?;
    let index = build_index(&ds.manifest).map_err(|e| match e {
        MixError::EmptyEmbodiment(_) => CliError::Input(e.to_string()),
        other => CliError::Config(other.to_string()),
    })?;

    let rho = c
        .mix
        .human_fraction
        .unwrap_or_else(|| default_human_fraction(index.human_len(), index.robot_len()));
    let mut plan = MixPlan::new(c.mix.batch_size, rho, c.seed).map_err(|e| CliError::Config(e.to_string()))?;
    plan.human_with_replacement = c.mix.human_with_replacement;
    plan.robot_with_replacement = c.mix.robot_with_replacement;
    let batches = c
        .mix
        .batches
        .unwrap_or_else(|| index.human_len().div_ceil(plan.human_count()).max(1));
    plan.epoch_batches = Some(batches);

    let schedule = build_schedule(&plan, &index, batches, MANIFEST_FILE, &ds.manifest.normalization)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let path = root.join(SCHEDULE_FILE);
    if !run.dry_run {
        hand2robot::dataset::write_atomic(&path, schedule_to_string(&schedule).as_bytes())
            .map_err(|e| CliError::Input(e.to_string()))?;
    }
    for (k, v) in index.counts() {
        log::info!("{k}: {v} samples");
    }
    Ok(MixSummary {
        counts: index.counts(),
        human_fraction: rho,
        batch_size: plan.batch_size,
        human_per_batch: plan.human_count(),
        batches,
        schedule: SCHEDULE_FILE.into(),
    })
}
