//! Baseline-risk model development and risk stratification.
//!
//! The outcome model is developed on the 1:1 propensity-matched subset of
//! the pooled cohorts (after excluding subjects with a pre-index occurrence
//! of the outcome) to avoid fitting differentially between arms, then
//! evaluated in four populations and used to cut the whole eligible
//! population into quantile strata of predicted risk.

use crate::data::{
    CohortRow, CohortTable, CovariateTable, OutcomeId, RiskLabelRule, StudySettings,
    SubjectId,
};
use crate::lasso::{
    self, c_statistic, calibration_metrics, LassoError, PerformanceSummary,
    PopulationLabel, SparseLinearModel,
};
use crate::propensity::{match_caliper, PropensityError, PsAssignment};
use crate::quantiles::bin_boundaries;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("outcome {0}: no eligible subjects after prior-outcome exclusion")]
    NoEligibleSubjects(OutcomeId),
    #[error("outcome {outcome}: matching produced an empty development set")]
    EmptyMatchedSet { outcome: OutcomeId },
    #[error("insufficient events: {found} events in the development set, {required} required")]
    InsufficientEvents { found: usize, required: usize },
    #[error("{distinct} distinct predictions cannot fill {k} risk strata; reduce risk_strata_count")]
    TooFewDistinctPredictions { distinct: usize, k: usize },
    #[error("risk strata need at least 2 bins, requested {0}")]
    TooFewStrata(usize),
    #[error("no predictions to stratify")]
    EmptyPredictions,
    #[error(transparent)]
    Lasso(#[from] LassoError),
    #[error(transparent)]
    Propensity(#[from] PropensityError),
}

/// Binary label for the risk model: did the outcome occur within the
/// time-at-risk window. `None` drops the subject (early-censored non-event
/// under the drop rule).
pub fn risk_label(
    row: &CohortRow,
    outcome: OutcomeId,
    time_at_risk: u32,
    rule: RiskLabelRule,
) -> Option<bool> {
    match row.outcomes.get(&outcome) {
        Some(&day) if day <= time_at_risk => Some(true),
        _ => {
            if row.followup_days >= time_at_risk {
                Some(false)
            } else {
                match rule {
                    RiskLabelRule::KeepEarlyCensored => Some(false),
                    RiskLabelRule::DropEarlyCensored => None,
                }
            }
        }
    }
}

/// Artifacts of risk-model development on the matched subset.
#[derive(Debug, Clone)]
pub struct Development {
    pub ps_model: SparseLinearModel,
    /// Propensity assignment over the eligible population, with match
    /// partners filled in.
    pub ps: PsAssignment,
    pub matched_subjects: Vec<SubjectId>,
    pub n_development: usize,
    pub n_development_events: usize,
}

/// One outcome's risk model, evaluation, and stratification of the eligible
/// population.
#[derive(Debug, Clone)]
pub struct RiskStratification {
    pub outcome_id: OutcomeId,
    /// Subjects analyzable for this outcome, ascending id order.
    pub eligible: Vec<SubjectId>,
    /// Subjects excluded for a pre-index occurrence of the outcome.
    pub excluded_prior: Vec<SubjectId>,
    pub development: Development,
    pub model: SparseLinearModel,
    pub performance: Vec<PerformanceSummary>,
    /// Predicted risk aligned with `eligible`.
    pub predictions: Vec<f64>,
    /// Ascending risk cutpoints (`risk_strata_count - 1` of them).
    pub boundaries: Vec<f64>,
    /// Stratum per eligible subject, 1-based.
    pub labels: Vec<usize>,
}

impl RiskStratification {
    pub fn stratum_members(&self, stratum: usize) -> Vec<SubjectId> {
        self.eligible
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == stratum)
            .map(|(&s, _)| s)
            .collect()
    }
}

fn eligible_split(
    cohort: &CohortTable,
    outcome: OutcomeId,
) -> (Vec<SubjectId>, Vec<SubjectId>) {
    let mut eligible = Vec::new();
    let mut excluded = Vec::new();
    for row in cohort.rows() {
        if row.prior_outcomes.contains(&outcome) {
            excluded.push(row.subject_id);
        } else {
            eligible.push(row.subject_id);
        }
    }
    (eligible, excluded)
}

/// Develops the outcome risk model on the matched, prior-outcome-excluded
/// subset.
pub fn develop_risk_model(
    cov: &CovariateTable,
    cohort: &CohortTable,
    outcome: OutcomeId,
    settings: &StudySettings,
) -> Result<(Development, SparseLinearModel), RiskError> {
    let (eligible, _) = eligible_split(cohort, outcome);
    if eligible.is_empty() {
        return Err(RiskError::NoEligibleSubjects(outcome));
    }
    let treated: Vec<bool> = eligible
        .iter()
        .map(|&s| cohort.get(s).expect("eligible subject").treated)
        .collect();
    let ps_model = lasso::fit_cv(
        cov,
        &eligible,
        &treated,
        settings.cv_folds,
        settings.lambda_grid.as_deref(),
        settings.seed ^ outcome.rotate_left(11),
    )?;
    let propensity = lasso::predict_proba(&ps_model, cov, &eligible);
    let mut ps = PsAssignment::new(eligible.clone(), treated, propensity)?;
    match_caliper(&mut ps, settings.caliper, settings.seed ^ outcome.rotate_left(23))?;
    let matched = ps.matched_subjects();
    if matched.is_empty() {
        return Err(RiskError::EmptyMatchedSet { outcome });
    }

    let mut dev_subjects = Vec::with_capacity(matched.len());
    let mut dev_labels = Vec::with_capacity(matched.len());
    for &s in &matched {
        let row = cohort.get(s).expect("matched subject");
        if let Some(label) =
            risk_label(row, outcome, settings.time_at_risk_days, settings.risk_labels)
        {
            dev_subjects.push(s);
            dev_labels.push(label);
        }
    }
    let n_events = dev_labels.iter().filter(|&&l| l).count();
    if n_events < settings.min_events {
        return Err(RiskError::InsufficientEvents {
            found: n_events,
            required: settings.min_events,
        });
    }
    let model = lasso::fit_cv(
        cov,
        &dev_subjects,
        &dev_labels,
        settings.cv_folds,
        settings.lambda_grid.as_deref(),
        settings.seed ^ outcome.rotate_left(37),
    )?;
    Ok((
        Development {
            ps_model,
            ps,
            matched_subjects: matched,
            n_development: dev_subjects.len(),
            n_development_events: n_events,
        },
        model,
    ))
}

/// Discrimination and calibration in the matched set, the treatment cohort,
/// the comparator cohort, and the entire eligible population. Populations
/// that cannot support a metric are flagged, not fatal.
pub fn evaluate_risk_model(
    model: &SparseLinearModel,
    cov: &CovariateTable,
    cohort: &CohortTable,
    outcome: OutcomeId,
    matched: &[SubjectId],
    settings: &StudySettings,
) -> Vec<PerformanceSummary> {
    let (eligible, _) = eligible_split(cohort, outcome);
    let populations: Vec<(PopulationLabel, Vec<SubjectId>)> = vec![
        (PopulationLabel::Matched, matched.to_vec()),
        (
            PopulationLabel::Treatment,
            eligible
                .iter()
                .copied()
                .filter(|&s| cohort.get(s).expect("eligible").treated)
                .collect(),
        ),
        (
            PopulationLabel::Comparator,
            eligible
                .iter()
                .copied()
                .filter(|&s| !cohort.get(s).expect("eligible").treated)
                .collect(),
        ),
        (PopulationLabel::Entire, eligible),
    ];

    populations
        .into_iter()
        .map(|(label, subjects)| {
            let mut kept = Vec::with_capacity(subjects.len());
            let mut labels = Vec::with_capacity(subjects.len());
            for &s in &subjects {
                let row = cohort.get(s).expect("population subject");
                if let Some(l) =
                    risk_label(row, outcome, settings.time_at_risk_days, settings.risk_labels)
                {
                    kept.push(s);
                    labels.push(l);
                }
            }
            let n_events = labels.iter().filter(|&&l| l).count();
            let mut summary = PerformanceSummary {
                population: label,
                n: kept.len(),
                n_events,
                c_statistic: None,
                calibration_intercept: None,
                calibration_slope: None,
                note: None,
            };
            if kept.is_empty() {
                summary.note = Some("empty population".into());
                return summary;
            }
            let pred = lasso::predict_proba(model, cov, &kept);
            match c_statistic(&pred, &labels) {
                Ok(c) => summary.c_statistic = Some(c),
                Err(e) => summary.note = Some(e.to_string()),
            }
            match calibration_metrics(&pred, &labels) {
                Ok((intercept, slope)) => {
                    summary.calibration_intercept = Some(intercept);
                    summary.calibration_slope = Some(slope);
                }
                Err(e) => {
                    if summary.note.is_none() {
                        summary.note = Some(e.to_string());
                    }
                }
            }
            summary
        })
        .collect()
}

/// Quantile cut of predicted risk over the pooled population. Boundary ties
/// go to the lower stratum.
pub fn assign_risk_strata(
    predictions: &[f64],
    k: usize,
) -> Result<(Vec<f64>, Vec<usize>), RiskError> {
    if k < 2 {
        return Err(RiskError::TooFewStrata(k));
    }
    if predictions.is_empty() {
        return Err(RiskError::EmptyPredictions);
    }
    let boundaries = bin_boundaries(predictions, k);
    if boundaries.len() + 1 < k {
        let mut distinct: Vec<u64> = predictions.iter().map(|p| p.to_bits()).collect();
        distinct.sort_unstable();
        distinct.dedup();
        return Err(RiskError::TooFewDistinctPredictions {
            distinct: distinct.len(),
            k,
        });
    }
    let labels = predictions
        .iter()
        .map(|&p| crate::quantiles::assign_bin(p, &boundaries))
        .collect();
    Ok((boundaries, labels))
}

/// Full step-3 pipeline for one outcome: develop (or adopt) the risk model,
/// evaluate it, predict risk for every eligible subject, and cut the
/// population into risk strata.
pub fn stratify_by_risk(
    cov: &CovariateTable,
    cohort: &CohortTable,
    outcome: OutcomeId,
    settings: &StudySettings,
    external_model: Option<SparseLinearModel>,
) -> Result<RiskStratification, RiskError> {
    let (eligible, excluded_prior) = eligible_split(cohort, outcome);
    if eligible.is_empty() {
        return Err(RiskError::NoEligibleSubjects(outcome));
    }
    let (development, model) = match external_model {
        Some(model) => {
            // External model: matching still defines the evaluation subset.
            let dev = matched_development(cov, cohort, outcome, settings)?;
            (dev, model)
        }
        None => develop_risk_model(cov, cohort, outcome, settings)?,
    };
    let performance = evaluate_risk_model(
        &model,
        cov,
        cohort,
        outcome,
        &development.matched_subjects,
        settings,
    );
    let predictions = lasso::predict_proba(&model, cov, &eligible);
    let (boundaries, labels) = assign_risk_strata(&predictions, settings.risk_strata_count)?;
    Ok(RiskStratification {
        outcome_id: outcome,
        eligible,
        excluded_prior,
        development,
        model,
        performance,
        predictions,
        boundaries,
        labels,
    })
}

/// Propensity model + matching only, for externally supplied risk models.
fn matched_development(
    cov: &CovariateTable,
    cohort: &CohortTable,
    outcome: OutcomeId,
    settings: &StudySettings,
) -> Result<Development, RiskError> {
    let (eligible, _) = eligible_split(cohort, outcome);
    let treated: Vec<bool> = eligible
        .iter()
        .map(|&s| cohort.get(s).expect("eligible subject").treated)
        .collect();
    let ps_model = lasso::fit_cv(
        cov,
        &eligible,
        &treated,
        settings.cv_folds,
        settings.lambda_grid.as_deref(),
        settings.seed ^ outcome.rotate_left(11),
    )?;
    let propensity = lasso::predict_proba(&ps_model, cov, &eligible);
    let mut ps = PsAssignment::new(eligible.clone(), treated, propensity)?;
    match_caliper(&mut ps, settings.caliper, settings.seed ^ outcome.rotate_left(23))?;
    let matched = ps.matched_subjects();
    if matched.is_empty() {
        return Err(RiskError::EmptyMatchedSet { outcome });
    }
    Ok(Development {
        ps_model,
        ps,
        matched_subjects: matched.clone(),
        n_development: matched.len(),
        n_development_events: 0,
    })
}
