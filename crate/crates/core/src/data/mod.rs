//! In-memory data model for subjects, covariates, and outcomes, plus the
//! flat-file exchange formats every other module consumes.
//!
//! Tables are immutable after construction and safe to share across parallel
//! workers. Rows are kept in ascending subject-id order, which is also the
//! canonical order of the CSV exchange files.

mod io;

pub use io::{bundle_paths, load_bundle, write_bundle};

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::PathBuf;
use thiserror::Error;

pub type SubjectId = u64;
pub type CovariateId = u64;
pub type OutcomeId = u64;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}:{line}: {reason}")]
    Malformed {
        file: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("duplicate subject id {0}")]
    DuplicateSubject(SubjectId),
    #[error("duplicate (subject {subject}, covariate {covariate}) pair")]
    DuplicateEntry {
        subject: SubjectId,
        covariate: CovariateId,
    },
    #[error("entry references unknown subject id {0}")]
    UnknownSubject(SubjectId),
    #[error("subject {subject}: event day {event_day} for outcome {outcome} exceeds follow-up {followup}")]
    EventAfterFollowup {
        subject: SubjectId,
        outcome: OutcomeId,
        event_day: u32,
        followup: u32,
    },
    #[error("non-finite covariate value for subject {subject}, covariate {covariate}")]
    NonFiniteValue {
        subject: SubjectId,
        covariate: CovariateId,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    Binary,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CovariateMeta {
    pub name: String,
    pub kind: CovariateKind,
}

/// Sparse subject-by-covariate matrix. Absent entries are zero; binary
/// covariates store only the value 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTable {
    subject_ids: Vec<SubjectId>,
    index: HashMap<SubjectId, usize>,
    rows: Vec<Vec<(CovariateId, f64)>>,
    covariate_meta: BTreeMap<CovariateId, CovariateMeta>,
}

impl CovariateTable {
    /// Builds a table, inferring covariate kind from the stored values: a
    /// covariate whose entries are all exactly 1 is binary, anything else is
    /// continuous. Names default to `c<id>`.
    pub fn from_entries(
        subject_ids: Vec<SubjectId>,
        entries: impl IntoIterator<Item = (SubjectId, CovariateId, f64)>,
    ) -> Result<Self, DataError> {
        Self::from_entries_named(subject_ids, entries, &BTreeMap::new())
    }

    /// Same as [`from_entries`](Self::from_entries) with explicit covariate
    /// names for ids present in `names`.
    pub fn from_entries_named(
        mut subject_ids: Vec<SubjectId>,
        entries: impl IntoIterator<Item = (SubjectId, CovariateId, f64)>,
        names: &BTreeMap<CovariateId, String>,
    ) -> Result<Self, DataError> {
        subject_ids.sort_unstable();
        if let Some(dup) = first_adjacent_dup(&subject_ids) {
            return Err(DataError::DuplicateSubject(dup));
        }
        let index: HashMap<SubjectId, usize> = subject_ids
            .iter()
            .enumerate()
            .map(|(i, &s)| (s, i))
            .collect();
        let mut rows: Vec<Vec<(CovariateId, f64)>> = vec![Vec::new(); subject_ids.len()];
        let mut all_ones: BTreeMap<CovariateId, bool> = BTreeMap::new();
        for (subject, covariate, value) in entries {
            if !value.is_finite() {
                return Err(DataError::NonFiniteValue { subject, covariate });
            }
            let &row = index
                .get(&subject)
                .ok_or(DataError::UnknownSubject(subject))?;
            rows[row].push((covariate, value));
            let flag = all_ones.entry(covariate).or_insert(true);
            *flag = *flag && value == 1.0;
        }
        for (row, &subject) in rows.iter_mut().zip(&subject_ids) {
            row.sort_unstable_by_key(|&(c, _)| c);
            if let Some((covariate, _)) = row
                .windows(2)
                .find(|w| w[0].0 == w[1].0)
                .map(|w| w[0])
            {
                return Err(DataError::DuplicateEntry { subject, covariate });
            }
        }
        let covariate_meta = all_ones
            .into_iter()
            .map(|(id, ones)| {
                let name = names
                    .get(&id)
                    .cloned()
                    .unwrap_or_else(|| format!("c{id}"));
                let kind = if ones {
                    CovariateKind::Binary
                } else {
                    CovariateKind::Continuous
                };
                (id, CovariateMeta { name, kind })
            })
            .collect();
        Ok(Self {
            subject_ids,
            index,
            rows,
            covariate_meta,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn subject_ids(&self) -> &[SubjectId] {
        &self.subject_ids
    }

    /// Covariate entries for one subject, sorted by covariate id. Empty slice
    /// for subjects with no stored entries; `None` for unknown subjects.
    pub fn row(&self, subject: SubjectId) -> Option<&[(CovariateId, f64)]> {
        self.index.get(&subject).map(|&i| self.rows[i].as_slice())
    }

    pub fn value(&self, subject: SubjectId, covariate: CovariateId) -> f64 {
        self.row(subject)
            .and_then(|row| {
                row.binary_search_by_key(&covariate, |&(c, _)| c)
                    .ok()
                    .map(|i| row[i].1)
            })
            .unwrap_or(0.0)
    }

    pub fn covariate_meta(&self) -> &BTreeMap<CovariateId, CovariateMeta> {
        &self.covariate_meta
    }

    pub fn meta(&self, covariate: CovariateId) -> Option<&CovariateMeta> {
        self.covariate_meta.get(&covariate)
    }

    /// All entries in canonical order (ascending subject id, then covariate id).
    pub fn iter_entries(&self) -> impl Iterator<Item = (SubjectId, CovariateId, f64)> + '_ {
        self.subject_ids
            .iter()
            .zip(&self.rows)
            .flat_map(|(&s, row)| row.iter().map(move |&(c, v)| (s, c, v)))
    }
}

fn first_adjacent_dup(sorted: &[u64]) -> Option<u64> {
    sorted.windows(2).find(|w| w[0] == w[1]).map(|w| w[0])
}

/// One subject's treatment assignment, follow-up, and outcome history.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortRow {
    pub subject_id: SubjectId,
    pub treated: bool,
    pub followup_days: u32,
    /// First post-index event day per outcome; absent means no event within
    /// follow-up.
    pub outcomes: BTreeMap<OutcomeId, u32>,
    /// Outcomes observed before the index date; such subjects are excluded
    /// from both risk-model development and estimation for that outcome.
    pub prior_outcomes: BTreeSet<OutcomeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortTable {
    rows: Vec<CohortRow>,
    index: HashMap<SubjectId, usize>,
}

impl CohortTable {
    pub fn new(mut rows: Vec<CohortRow>) -> Result<Self, DataError> {
        rows.sort_by_key(|r| r.subject_id);
        if let Some(dup) = first_adjacent_dup(
            &rows.iter().map(|r| r.subject_id).collect::<Vec<_>>(),
        ) {
            return Err(DataError::DuplicateSubject(dup));
        }
        for row in &rows {
            for (&outcome, &event_day) in &row.outcomes {
                if event_day > row.followup_days {
                    return Err(DataError::EventAfterFollowup {
                        subject: row.subject_id,
                        outcome,
                        event_day,
                        followup: row.followup_days,
                    });
                }
            }
        }
        let index = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.subject_id, i))
            .collect();
        Ok(Self { rows, index })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[CohortRow] {
        &self.rows
    }

    pub fn get(&self, subject: SubjectId) -> Option<&CohortRow> {
        self.index.get(&subject).map(|&i| &self.rows[i])
    }

    pub fn subject_ids(&self) -> impl Iterator<Item = SubjectId> + '_ {
        self.rows.iter().map(|r| r.subject_id)
    }

    /// New table containing only `subjects`, order preserved. The input table
    /// is untouched.
    pub fn restrict(&self, subjects: &HashSet<SubjectId>) -> Result<CohortTable, DataError> {
        if let Some(&unknown) = subjects.iter().find(|s| !self.index.contains_key(s)) {
            return Err(DataError::UnknownSubject(unknown));
        }
        let rows = self
            .rows
            .iter()
            .filter(|r| subjects.contains(&r.subject_id))
            .cloned()
            .collect();
        CohortTable::new(rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Estimand {
    /// Average treatment effect in the whole stratum.
    Ate,
    /// Average treatment effect on the treated.
    Att,
}

/// What to do with subjects censored before the end of the prediction window
/// when building the binary risk-model label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskLabelRule {
    /// Keep early-censored subjects as negatives. Biased downward at high
    /// censoring rates, but uses every subject.
    KeepEarlyCensored,
    /// Drop subjects censored before the window ends without an event.
    DropEarlyCensored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieMethod {
    Efron,
    Breslow,
}

/// All analysis knobs in one place.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySettings {
    #[serde(default = "default_risk_strata")]
    pub risk_strata_count: usize,
    #[serde(default = "default_ps_strata")]
    pub ps_strata_count: usize,
    /// Matching caliper in units of standard deviations of the logit
    /// propensity score.
    #[serde(default = "default_caliper")]
    pub caliper: f64,
    #[serde(default = "default_cv_folds")]
    pub cv_folds: usize,
    #[serde(default = "default_time_at_risk")]
    pub time_at_risk_days: u32,
    /// Strictly decreasing positive penalty grid; `None` derives a 20-point
    /// log-spaced grid from the data.
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_estimand")]
    pub estimand: Estimand,
    pub outcome_ids: Vec<OutcomeId>,
    #[serde(default)]
    pub negative_control_ids: Vec<OutcomeId>,
    /// Minimum outcome events required to develop a risk model.
    #[serde(default = "default_min_events")]
    pub min_events: usize,
    /// Minimum fraction of subjects with preference score in [0.3, 0.7].
    #[serde(default = "default_equipoise_threshold")]
    pub equipoise_threshold: f64,
    /// Post-adjustment standardized mean differences above this fail balance.
    #[serde(default = "default_smd_threshold")]
    pub smd_threshold: f64,
    /// Significance level for negative-control effects.
    #[serde(default = "default_control_alpha")]
    pub control_alpha: f64,
    /// Diagnostics fail when more than this fraction of negative controls is
    /// significant.
    #[serde(default = "default_control_fraction")]
    pub max_significant_control_fraction: f64,
    #[serde(default = "default_risk_labels")]
    pub risk_labels: RiskLabelRule,
    #[serde(default = "default_tie_method")]
    pub tie_method: TieMethod,
}

fn default_risk_strata() -> usize {
    4
}
fn default_ps_strata() -> usize {
    5
}
fn default_caliper() -> f64 {
    0.2
}
fn default_cv_folds() -> usize {
    3
}
fn default_time_at_risk() -> u32 {
    730
}
fn default_estimand() -> Estimand {
    Estimand::Att
}
fn default_min_events() -> usize {
    25
}
fn default_equipoise_threshold() -> f64 {
    0.2
}
fn default_smd_threshold() -> f64 {
    0.1
}
fn default_control_alpha() -> f64 {
    0.05
}
fn default_control_fraction() -> f64 {
    0.10
}
fn default_risk_labels() -> RiskLabelRule {
    RiskLabelRule::KeepEarlyCensored
}
fn default_tie_method() -> TieMethod {
    TieMethod::Efron
}

impl Default for StudySettings {
    fn default() -> Self {
        Self {
            risk_strata_count: default_risk_strata(),
            ps_strata_count: default_ps_strata(),
            caliper: default_caliper(),
            cv_folds: default_cv_folds(),
            time_at_risk_days: default_time_at_risk(),
            lambda_grid: None,
            seed: 0,
            estimand: default_estimand(),
            outcome_ids: Vec::new(),
            negative_control_ids: Vec::new(),
            min_events: default_min_events(),
            equipoise_threshold: default_equipoise_threshold(),
            smd_threshold: default_smd_threshold(),
            control_alpha: default_control_alpha(),
            max_significant_control_fraction: default_control_fraction(),
            risk_labels: default_risk_labels(),
            tie_method: default_tie_method(),
        }
    }
}

impl StudySettings {
    /// All constraint violations, empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.risk_strata_count < 2 {
            out.push("risk_strata_count must be >= 2".to_string());
        }
        if self.ps_strata_count < 1 {
            out.push("ps_strata_count must be >= 1".to_string());
        }
        if self.cv_folds < 2 {
            out.push("cv_folds must be >= 2".to_string());
        }
        if !(self.caliper > 0.0) {
            out.push("caliper must be positive".to_string());
        }
        if self.time_at_risk_days == 0 {
            out.push("time_at_risk_days must be positive".to_string());
        }
        if let Some(grid) = &self.lambda_grid {
            if grid.is_empty() {
                out.push("lambda_grid must not be empty".to_string());
            }
            if grid.iter().any(|&l| !(l > 0.0)) {
                out.push("lambda_grid values must be strictly positive".to_string());
            }
            if grid.windows(2).any(|w| w[1] >= w[0]) {
                out.push("lambda_grid must be strictly decreasing".to_string());
            }
        }
        if self.outcome_ids.is_empty() {
            out.push("outcome_ids must not be empty".to_string());
        }
        let outcomes: BTreeSet<_> = self.outcome_ids.iter().collect();
        if self.outcome_ids.len() != outcomes.len() {
            out.push("outcome_ids contains duplicates".to_string());
        }
        if let Some(overlap) = self
            .negative_control_ids
            .iter()
            .find(|id| outcomes.contains(id))
        {
            out.push(format!(
                "outcome id {overlap} also listed as a negative control"
            ));
        }
        if !(0.0..=1.0).contains(&self.equipoise_threshold) {
            out.push("equipoise_threshold must be in [0, 1]".to_string());
        }
        if !(self.smd_threshold > 0.0) {
            out.push("smd_threshold must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.control_alpha) || self.control_alpha == 0.0 {
            out.push("control_alpha must be in (0, 1)".to_string());
        }
        if !(0.0..=1.0).contains(&self.max_significant_control_fraction) {
            out.push("max_significant_control_fraction must be in [0, 1]".to_string());
        }
        out
    }
}
