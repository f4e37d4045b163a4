//! Study orchestration: one declarative config in, one reproducible report
//! bundle out.

mod plots;
mod report;
mod runner;

pub use plots::emit_plot_data;
pub use report::{
    BalanceEntry, ControlRow, NullRow, OutcomeReport, Report, ReportBundle, StratumReport,
};
pub use runner::run_study;

use crate::data::{DataError, OutcomeId, StudySettings};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("invalid config:\n{}", .0.join("\n"))]
    InvalidConfig(Vec<String>),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("step `{step}`{}{} failed: {message}",
        match outcome { Some(o) => format!(", outcome {o}"), None => String::new() },
        match stratum { Some(s) => format!(", stratum {s}"), None => String::new() })]
    Step {
        step: &'static str,
        outcome: Option<OutcomeId>,
        stratum: Option<String>,
        message: String,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportOptions {
    #[serde(default)]
    pub emit_km_curves: bool,
    #[serde(default = "default_bootstrap_reps")]
    pub bootstrap_reps: usize,
}

fn default_bootstrap_reps() -> usize {
    500
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            emit_km_curves: false,
            bootstrap_reps: default_bootstrap_reps(),
        }
    }
}

/// Declarative description of one study run against one data bundle.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub covariates: PathBuf,
    pub cohort: PathBuf,
    pub outcomes: PathBuf,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub settings: StudySettings,
    #[serde(default)]
    pub report: ReportOptions,
    /// Externally developed risk models (model.json files) per outcome;
    /// outcomes not listed get an internally developed model.
    #[serde(default)]
    pub external_risk_models: BTreeMap<OutcomeId, PathBuf>,
}

impl StudyConfig {
    /// Resolves relative paths against `base` (usually the config file's
    /// directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        fix(&mut self.covariates);
        fix(&mut self.cohort);
        fix(&mut self.outcomes);
        if let Some(dir) = &mut self.output_dir {
            fix(dir);
        }
        for path in self.external_risk_models.values_mut() {
            fix(path);
        }
    }

    /// All semantic problems, empty when the config is runnable.
    pub fn problems(&self) -> Vec<String> {
        let mut out = self.settings.problems();
        for (name, path) in [
            ("covariates", &self.covariates),
            ("cohort", &self.cohort),
            ("outcomes", &self.outcomes),
        ] {
            if !path.is_file() {
                out.push(format!("{name} file not found: {}", path.display()));
            }
        }
        for (outcome, path) in &self.external_risk_models {
            if !self.settings.outcome_ids.contains(outcome) {
                out.push(format!(
                    "external risk model for unknown outcome {outcome}"
                ));
            }
            if !path.is_file() {
                out.push(format!(
                    "external risk model file not found: {}",
                    path.display()
                ));
            }
        }
        if self.report.bootstrap_reps < 10 {
            out.push("report.bootstrap_reps must be at least 10".to_string());
        }
        out
    }
}

/// Parses and fully validates a config file, collecting every problem in
/// one pass.
pub fn validate_config(path: impl AsRef<Path>) -> Result<StudyConfig, Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| vec![format!("cannot read {}: {e}", path.display())])?;
    let mut config: StudyConfig =
        serde_json::from_str(&text).map_err(|e| vec![format!("invalid JSON: {e}")])?;
    let base = path.parent().unwrap_or(Path::new("."));
    config.resolve_paths(base);
    let problems = config.problems();
    if problems.is_empty() {
        Ok(config)
    } else {
        Err(problems)
    }
}
