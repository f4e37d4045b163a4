//! End-to-end pipeline execution: load, risk-stratify per outcome, estimate
//! every stratum with diagnostics, and assemble the report bundle.
//!
//! Outcome and stratum tasks run on the rayon pool; every random draw is
//! keyed off the config seed, and task outputs are merged in a fixed order,
//! so identical configs produce byte-identical bundles regardless of
//! scheduling.

use crate::data::{load_bundle, CohortTable, CovariateTable, OutcomeId, StudySettings};
use crate::lasso::{model_from_json, SparseLinearModel};
use crate::risk::{stratify_by_risk, RiskStratification};
use crate::study::report::{
    BalanceEntry, ControlRow, KmCsvRow, OutcomeReport, PsCsvRow, Report, ReportBundle,
    RiskCsvRow, SkippedControl, StratumReport,
};
use crate::study::{ReportOptions, StudyConfig, StudyError};
use crate::survival::{estimate_stratum, StratumAnalysis, StratumLabel};
use rayon::prelude::*;

struct OutcomeResult {
    report: OutcomeReport,
    risk_rows: Vec<RiskCsvRow>,
    ps_rows: Vec<PsCsvRow>,
    km_rows: Vec<KmCsvRow>,
}

fn load_external_model(
    config: &StudyConfig,
    outcome: OutcomeId,
) -> Result<Option<SparseLinearModel>, StudyError> {
    match config.external_risk_models.get(&outcome) {
        None => Ok(None),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| StudyError::Step {
                step: "load-external-model",
                outcome: Some(outcome),
                stratum: None,
                message: format!("{}: {e}", path.display()),
            })?;
            let model = model_from_json(&text).map_err(|e| StudyError::Step {
                step: "load-external-model",
                outcome: Some(outcome),
                stratum: None,
                message: format!("{}: {e}", path.display()),
            })?;
            Ok(Some(model))
        }
    }
}

fn analyze_outcome(
    cov: &CovariateTable,
    cohort: &CohortTable,
    outcome: OutcomeId,
    settings: &StudySettings,
    options: &ReportOptions,
    external: Option<SparseLinearModel>,
) -> Result<OutcomeResult, StudyError> {
    let external_used = external.is_some();
    let stratification =
        stratify_by_risk(cov, cohort, outcome, settings, external).map_err(|e| {
            StudyError::Step {
                step: "risk-stratification",
                outcome: Some(outcome),
                stratum: None,
                message: e.to_string(),
            }
        })?;

    // Risk quarters, then the overall population.
    let mut tasks: Vec<(StratumLabel, Vec<u64>)> = (1..=settings.risk_strata_count)
        .map(|q| (StratumLabel::Stratum(q), stratification.stratum_members(q)))
        .collect();
    tasks.push((StratumLabel::Overall, stratification.eligible.clone()));

    let analyses: Vec<(StratumLabel, StratumAnalysis)> = tasks
        .into_par_iter()
        .map(|(label, members)| {
            let analysis = estimate_stratum(
                cov,
                cohort,
                outcome,
                &members,
                label,
                settings,
                options.bootstrap_reps,
                options.emit_km_curves,
            );
            (label, analysis)
        })
        .collect();

    Ok(assemble_outcome(
        stratification,
        analyses,
        external_used,
    ))
}

fn assemble_outcome(
    stratification: RiskStratification,
    analyses: Vec<(StratumLabel, StratumAnalysis)>,
    external_model: bool,
) -> OutcomeResult {
    let outcome = stratification.outcome_id;
    let mut risk_rows = Vec::with_capacity(stratification.eligible.len());
    for ((&subject, &risk), &stratum) in stratification
        .eligible
        .iter()
        .zip(&stratification.predictions)
        .zip(&stratification.labels)
    {
        risk_rows.push(RiskCsvRow {
            subject_id: subject,
            outcome_id: outcome,
            predicted_risk: risk,
            risk_stratum: stratum,
        });
    }

    let mut ps_rows = Vec::new();
    let dev_ps = &stratification.development.ps;
    for i in 0..dev_ps.len() {
        ps_rows.push(PsCsvRow {
            outcome_id: outcome,
            scope: "development".to_string(),
            subject_id: dev_ps.subject_ids[i],
            propensity: dev_ps.propensity[i],
            preference: dev_ps.preference[i],
            match_partner: dev_ps.match_partner[i],
            ps_stratum: None,
        });
    }

    let mut km_rows = Vec::new();
    let mut strata_reports = Vec::with_capacity(analyses.len());
    for (label, analysis) in analyses {
        let scope = match label {
            StratumLabel::Stratum(q) => format!("q{q}"),
            StratumLabel::Overall => "overall".to_string(),
        };
        if let Some(ps) = &analysis.ps {
            for i in 0..ps.len() {
                ps_rows.push(PsCsvRow {
                    outcome_id: outcome,
                    scope: scope.clone(),
                    subject_id: ps.subject_ids[i],
                    propensity: ps.propensity[i],
                    preference: ps.preference[i],
                    match_partner: None,
                    ps_stratum: ps.ps_stratum[i],
                });
            }
        }
        if let Some(km) = &analysis.pooled_km {
            for (i, &day) in km.days.iter().enumerate() {
                km_rows.push(KmCsvRow {
                    outcome_id: outcome,
                    risk_stratum: label,
                    arm: "treated",
                    day,
                    survival: km.treated_survival[i],
                });
                km_rows.push(KmCsvRow {
                    outcome_id: outcome,
                    risk_stratum: label,
                    arm: "comparator",
                    day,
                    survival: km.comparator_survival[i],
                });
            }
        }
        let null = analysis.null;
        strata_reports.push(StratumReport {
            label,
            equipoise: analysis.equipoise,
            balance: analysis.balance.iter().map(BalanceEntry::from_row).collect(),
            preference: analysis.preference_hist,
            negative_controls: analysis
                .controls
                .iter()
                .map(|c| ControlRow::new(c, null.as_ref()))
                .collect(),
            skipped_controls: analysis
                .skipped_controls
                .into_iter()
                .map(|(outcome_id, reason)| SkippedControl { outcome_id, reason })
                .collect(),
            empirical_null: null,
            effect: analysis.effect,
        });
    }

    let report = OutcomeReport {
        outcome_id: outcome,
        n_eligible: stratification.eligible.len(),
        n_excluded_prior_outcome: stratification.excluded_prior.len(),
        excluded_prior_outcome: stratification.excluded_prior,
        risk_model: stratification.model,
        external_model,
        n_development: stratification.development.n_development,
        n_development_events: stratification.development.n_development_events,
        performance: stratification.performance,
        risk_boundaries: stratification.boundaries,
        strata: strata_reports,
    };
    OutcomeResult {
        report,
        risk_rows,
        ps_rows,
        km_rows,
    }
}

/// Runs the whole pipeline for one config. The caller decides where (and
/// whether) to write the bundle.
pub fn run_study(config: &StudyConfig) -> Result<ReportBundle, StudyError> {
    let problems = config.problems();
    if !problems.is_empty() {
        return Err(StudyError::InvalidConfig(problems));
    }
    let (cov, cohort) = load_bundle(&config.covariates, &config.cohort, &config.outcomes)?;
    run_study_on(config, &cov, &cohort)
}

/// Same as [`run_study`] with pre-loaded tables, for callers that already
/// hold the data in memory.
pub fn run_study_on(
    config: &StudyConfig,
    cov: &CovariateTable,
    cohort: &CohortTable,
) -> Result<ReportBundle, StudyError> {
    let settings = &config.settings;
    let externals: Vec<Option<SparseLinearModel>> = settings
        .outcome_ids
        .iter()
        .map(|&o| load_external_model(config, o))
        .collect::<Result<_, _>>()?;

    let results: Vec<Result<OutcomeResult, StudyError>> = settings
        .outcome_ids
        .par_iter()
        .zip(externals.into_par_iter())
        .map(|(&outcome, external)| {
            analyze_outcome(cov, cohort, outcome, settings, &config.report, external)
        })
        .collect();

    let mut outcomes = Vec::new();
    let mut risk_rows = Vec::new();
    let mut ps_rows = Vec::new();
    let mut km_rows = Vec::new();
    for result in results {
        let r = result?;
        outcomes.push(r.report);
        risk_rows.extend(r.risk_rows);
        ps_rows.extend(r.ps_rows);
        km_rows.extend(r.km_rows);
    }

    Ok(ReportBundle {
        report: Report {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: settings.seed,
            settings: settings.clone(),
            report_options: config.report.clone(),
            outcomes,
        },
        risk_rows,
        ps_rows,
        km_rows,
    })
}
