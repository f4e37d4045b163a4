//! Synthetic observational cohorts with known ground truth.
//!
//! Covariates are independent Bernoulli draws, treatment follows a logistic
//! model on the covariates, and event times are exponential with a
//! log-linear hazard. The true treatment effect is a piecewise-constant log
//! hazard ratio over quantile bins of each subject's true event risk, so the
//! generating process mirrors the estimands the pipeline reports.
//!
//! Every draw comes from a stream keyed by `(seed, subject, purpose,
//! outcome)`; generation order never affects output.

use crate::data::{
    CohortRow, CohortTable, CovariateId, CovariateTable, OutcomeId, SubjectId,
};
use crate::quantiles::{assign_bin, bin_boundaries};
use crate::rng::{stream, Purpose};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

/// Ids assigned to generated negative-control outcomes start above this base.
pub const NEGATIVE_CONTROL_BASE: OutcomeId = 9000;

/// Outcome ids for `count` generated negative controls.
pub fn negative_control_ids(count: usize) -> Vec<OutcomeId> {
    (1..=count as u64).map(|i| NEGATIVE_CONTROL_BASE + i).collect()
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error("unknown outcome id {0}")]
    UnknownOutcome(OutcomeId),
}

/// Logistic model for treatment assignment.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct TreatmentModel {
    #[serde(default)]
    pub intercept: f64,
    /// Log-odds contribution per covariate.
    #[serde(default)]
    pub coefficients: BTreeMap<CovariateId, f64>,
}

/// Constant-hazard event model with a risk-dependent treatment effect.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeModel {
    /// Log of the per-day baseline hazard.
    pub baseline_log_hazard: f64,
    #[serde(default)]
    pub covariate_log_hazard: BTreeMap<CovariateId, f64>,
    /// Log hazard ratio of treatment per quantile bin of true untreated
    /// risk; length gives the number of bins. `[x]` is a constant effect.
    pub true_log_hr: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub n_subjects: usize,
    pub n_binary_covariates: usize,
    /// One prevalence per covariate, each strictly inside (0, 1).
    pub covariate_prevalences: Vec<f64>,
    #[serde(default)]
    pub treatment: TreatmentModel,
    pub outcome_models: BTreeMap<OutcomeId, OutcomeModel>,
    /// Per-day rate of random loss to follow-up; 0 disables it.
    #[serde(default)]
    pub censoring_rate: f64,
    pub admin_censor_day: u32,
    #[serde(default)]
    pub negative_control_count: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Window used for "true risk": the probability of an untreated event within
/// two years.
pub const TRUE_RISK_HORIZON_DAYS: f64 = 730.0;

impl SimulationSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_subjects == 0 {
            return Err(SimError::InvalidSpec("n_subjects must be positive".into()));
        }
        if self.covariate_prevalences.len() != self.n_binary_covariates {
            return Err(SimError::InvalidSpec(format!(
                "expected {} covariate prevalences, found {}",
                self.n_binary_covariates,
                self.covariate_prevalences.len()
            )));
        }
        if self
            .covariate_prevalences
            .iter()
            .any(|&p| !(p > 0.0 && p < 1.0))
        {
            return Err(SimError::InvalidSpec(
                "covariate prevalences must lie strictly inside (0, 1)".into(),
            ));
        }
        if self.outcome_models.is_empty() && self.negative_control_count == 0 {
            return Err(SimError::InvalidSpec(
                "at least one outcome model is required".into(),
            ));
        }
        for (&id, model) in &self.outcome_models {
            if !model.baseline_log_hazard.is_finite()
                || model.baseline_log_hazard.exp() <= 0.0
            {
                return Err(SimError::InvalidSpec(format!(
                    "outcome {id}: baseline hazard is degenerate"
                )));
            }
            if model.true_log_hr.is_empty() {
                return Err(SimError::InvalidSpec(format!(
                    "outcome {id}: true_log_hr must have at least one bin"
                )));
            }
            let nc_range = NEGATIVE_CONTROL_BASE + 1
                ..=NEGATIVE_CONTROL_BASE + self.negative_control_count as u64;
            if nc_range.contains(&id) {
                return Err(SimError::InvalidSpec(format!(
                    "outcome id {id} collides with the generated negative-control range"
                )));
            }
        }
        if self.censoring_rate < 0.0 || !self.censoring_rate.is_finite() {
            return Err(SimError::InvalidSpec("censoring_rate must be >= 0".into()));
        }
        if self.admin_censor_day == 0 {
            return Err(SimError::InvalidSpec(
                "admin_censor_day must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Named outcome models plus the generated negative-control models.
    /// Control models are deterministic in the seed: baseline two-year risk
    /// uniform in [0.01, 0.10], sparse covariate effects, and a treatment
    /// effect that is exactly zero.
    pub fn all_outcome_models(&self) -> BTreeMap<OutcomeId, OutcomeModel> {
        let mut models = self.outcome_models.clone();
        for i in 1..=self.negative_control_count as u64 {
            let id = NEGATIVE_CONTROL_BASE + i;
            let mut rng = stream(self.seed, i, Purpose::ControlModel, 0);
            let risk = 0.01 + 0.09 * rng.random::<f64>();
            let baseline_log_hazard =
                (-(1.0 - risk).ln() / TRUE_RISK_HORIZON_DAYS).ln();
            let mut covariate_log_hazard = BTreeMap::new();
            for covariate in 1..=self.n_binary_covariates as u64 {
                if rng.random::<f64>() < 0.35 {
                    covariate_log_hazard
                        .insert(covariate, -0.6 + 1.2 * rng.random::<f64>());
                }
            }
            models.insert(
                id,
                OutcomeModel {
                    baseline_log_hazard,
                    covariate_log_hazard,
                    true_log_hr: vec![0.0],
                },
            );
        }
        models
    }
}

/// Ground truth retained by the simulator for verification.
#[derive(Debug, Clone)]
pub struct TruthRecord {
    pub subject_ids: Vec<SubjectId>,
    pub outcomes: BTreeMap<OutcomeId, OutcomeTruth>,
}

/// Truth for one outcome, aligned with `TruthRecord::subject_ids`.
#[derive(Debug, Clone)]
pub struct OutcomeTruth {
    /// Probability of an untreated event within the two-year window.
    pub true_risk: Vec<f64>,
    /// Quantile bin of true risk (1-based) that the effect applies to.
    pub risk_bin: Vec<usize>,
    /// Log hazard ratio actually applied to the subject when treated.
    pub true_log_hr: Vec<f64>,
}

impl TruthRecord {
    /// `truth.csv`: one row per (subject, outcome).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("subject_id,true_risk,outcome_id,true_log_hr\n");
        for (i, &subject) in self.subject_ids.iter().enumerate() {
            for (&outcome, truth) in &self.outcomes {
                let _ = writeln!(
                    out,
                    "{subject},{},{outcome},{}",
                    truth.true_risk[i], truth.true_log_hr[i]
                );
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

fn dot_sparse(row: &[(CovariateId, f64)], coefs: &BTreeMap<CovariateId, f64>) -> f64 {
    row.iter()
        .map(|(c, v)| coefs.get(c).copied().unwrap_or(0.0) * v)
        .sum()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Exponential draw with the given per-day rate; infinite when rate is 0.
fn exp_draw(rng: &mut impl Rng, rate: f64) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

/// Probability of an untreated event within the two-year window for one
/// covariate row under `outcome`'s model.
pub fn true_risk(
    spec: &SimulationSpec,
    outcome: OutcomeId,
    covariate_row: &[(CovariateId, f64)],
) -> Result<f64, SimError> {
    let models = spec.all_outcome_models();
    let model = models.get(&outcome).ok_or(SimError::UnknownOutcome(outcome))?;
    Ok(true_risk_for(model, covariate_row))
}

fn true_risk_for(model: &OutcomeModel, covariate_row: &[(CovariateId, f64)]) -> f64 {
    let hazard =
        (model.baseline_log_hazard + dot_sparse(covariate_row, &model.covariate_log_hazard)).exp();
    1.0 - (-TRUE_RISK_HORIZON_DAYS * hazard).exp()
}

/// Generates a complete bundle plus its ground truth.
pub fn simulate(
    spec: &SimulationSpec,
) -> Result<(CovariateTable, CohortTable, TruthRecord), SimError> {
    spec.validate()?;
    let n = spec.n_subjects;
    let subject_ids: Vec<SubjectId> = (1..=n as u64).collect();

    // Covariates: one stream per subject so generation order is irrelevant.
    let mut entries: Vec<(SubjectId, CovariateId, f64)> = Vec::new();
    let mut rows: Vec<Vec<(CovariateId, f64)>> = Vec::with_capacity(n);
    for &subject in &subject_ids {
        let mut rng = stream(spec.seed, subject, Purpose::Covariates, 0);
        let mut row = Vec::new();
        for (j, &prevalence) in spec.covariate_prevalences.iter().enumerate() {
            if rng.random::<f64>() < prevalence {
                row.push((j as u64 + 1, 1.0));
            }
        }
        for &(c, v) in &row {
            entries.push((subject, c, v));
        }
        rows.push(row);
    }

    // Treatment assignment.
    let treated: Vec<bool> = subject_ids
        .iter()
        .zip(&rows)
        .map(|(&subject, row)| {
            let eta = spec.treatment.intercept + dot_sparse(row, &spec.treatment.coefficients);
            stream(spec.seed, subject, Purpose::Treatment, 0).random::<f64>() < logistic(eta)
        })
        .collect();

    // Random + administrative censoring.
    let followup: Vec<u32> = subject_ids
        .iter()
        .map(|&subject| {
            let mut rng = stream(spec.seed, subject, Purpose::Censoring, 0);
            let t = exp_draw(&mut rng, spec.censoring_rate);
            if t >= spec.admin_censor_day as f64 {
                spec.admin_censor_day
            } else {
                t.ceil() as u32
            }
        })
        .collect();

    // Outcomes, with truth bookkeeping.
    let models = spec.all_outcome_models();
    let mut outcome_events: Vec<BTreeMap<OutcomeId, u32>> = vec![BTreeMap::new(); n];
    let mut truth_outcomes: BTreeMap<OutcomeId, OutcomeTruth> = BTreeMap::new();
    for (&outcome, model) in &models {
        let risks: Vec<f64> = rows.iter().map(|row| true_risk_for(model, row)).collect();
        let boundaries = bin_boundaries(&risks, model.true_log_hr.len());
        let bins: Vec<usize> = risks.iter().map(|&r| assign_bin(r, &boundaries)).collect();
        let log_hrs: Vec<f64> = bins.iter().map(|&b| model.true_log_hr[b - 1]).collect();
        for i in 0..n {
            let subject = subject_ids[i];
            let mut log_hazard = model.baseline_log_hazard
                + dot_sparse(&rows[i], &model.covariate_log_hazard);
            if treated[i] {
                log_hazard += log_hrs[i];
            }
            let rate = log_hazard.exp();
            if rate <= 0.0 || !rate.is_finite() {
                return Err(SimError::InvalidSpec(format!(
                    "outcome {outcome}: degenerate hazard {rate} for subject {subject}"
                )));
            }
            let mut rng = stream(spec.seed, subject, Purpose::EventTime, outcome);
            let t = exp_draw(&mut rng, rate);
            if t <= followup[i] as f64 {
                outcome_events[i].insert(outcome, t.ceil() as u32);
            }
        }
        truth_outcomes.insert(
            outcome,
            OutcomeTruth {
                true_risk: risks,
                risk_bin: bins,
                true_log_hr: log_hrs,
            },
        );
    }

    let cohort_rows: Vec<CohortRow> = (0..n)
        .map(|i| CohortRow {
            subject_id: subject_ids[i],
            treated: treated[i],
            followup_days: followup[i],
            outcomes: std::mem::take(&mut outcome_events[i]),
            prior_outcomes: BTreeSet::new(),
        })
        .collect();

    let names: BTreeMap<CovariateId, String> = (1..=spec.n_binary_covariates as u64)
        .map(|c| (c, format!("x{c}")))
        .collect();
    let covariates = CovariateTable::from_entries_named(subject_ids.clone(), entries, &names)
        .expect("generated covariates are valid");
    let cohort = CohortTable::new(cohort_rows).expect("generated cohort is valid");
    let truth = TruthRecord {
        subject_ids,
        outcomes: truth_outcomes,
    };
    Ok((covariates, cohort, truth))
}
