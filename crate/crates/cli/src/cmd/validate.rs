//! Re-checks a written dataset.

use std::path::Path;

use hand2robot::dataset::{validate_dataset, Finding};

use crate::{CliError, RunOptions};

/// All findings for the dataset at `root`; empty means clean. A missing
/// root is a config error rather than a finding.
pub fn cmd_validate(root: &Path, run: &RunOptions) -> Result<Vec<Finding>, CliError> {
    if !root.is_dir() {
        return Err(CliError::Config(format!("no dataset at {}", root.display())));
    }
    let findings = validate_dataset(run.exec, root);
    log::debug!("{}: {} findings", root.display(), findings.len());
    Ok(findings)
}
