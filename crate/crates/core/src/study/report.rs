//! Machine-readable report and its CSV views.
//!
//! `report.json` carries every analytic result; the CSVs are projections of
//! it plus the subject-level tables (propensity scores, predicted risks,
//! pooled survival curves) that are too large to embed in JSON.

use crate::calibration::{ControlEstimate, EmpiricalNull};
use crate::data::{OutcomeId, StudySettings, SubjectId};
use crate::lasso::{PerformanceSummary, SparseLinearModel};
use crate::propensity::{BalanceRow, PreferenceHistogram};
use crate::study::{ReportOptions, StudyError};
use crate::survival::{StratumEffect, StratumLabel};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Balance entry as stored in `report.json`. Non-finite standardized
/// differences (zero pooled variance with unequal means) are stored as
/// absent and rendered as `inf` in the CSV view.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceEntry {
    pub covariate_id: u64,
    pub name: String,
    pub smd_before: Option<f64>,
    pub smd_after: Option<f64>,
}

impl BalanceEntry {
    pub fn from_row(row: &BalanceRow) -> Self {
        let keep = |x: f64| x.is_finite().then_some(x);
        BalanceEntry {
            covariate_id: row.covariate_id,
            name: row.name.clone(),
            smd_before: keep(row.smd_before),
            smd_after: keep(row.smd_after),
        }
    }
}

/// Negative-control estimate with its standard and calibrated p-values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlRow {
    pub outcome_id: OutcomeId,
    pub log_hr: f64,
    pub se: f64,
    pub p: f64,
    pub calibrated_p: Option<f64>,
}

impl ControlRow {
    pub fn new(est: &ControlEstimate, null: Option<&EmpiricalNull>) -> Self {
        ControlRow {
            outcome_id: est.outcome_id,
            log_hr: est.log_hr,
            se: est.se,
            p: crate::calibration::standard_p(est.log_hr, est.se),
            calibrated_p: null.map(|n| crate::calibration::calibrated_p(est.log_hr, est.se, n)),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedControl {
    pub outcome_id: OutcomeId,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StratumReport {
    pub label: StratumLabel,
    pub effect: StratumEffect,
    pub equipoise: Option<f64>,
    pub balance: Vec<BalanceEntry>,
    pub preference: Option<PreferenceHistogram>,
    pub negative_controls: Vec<ControlRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped_controls: Vec<SkippedControl>,
    pub empirical_null: Option<EmpiricalNull>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeReport {
    pub outcome_id: OutcomeId,
    pub n_eligible: usize,
    pub n_excluded_prior_outcome: usize,
    /// Subjects excluded for a pre-index occurrence of this outcome.
    pub excluded_prior_outcome: Vec<SubjectId>,
    pub risk_model: SparseLinearModel,
    pub external_model: bool,
    pub n_development: usize,
    pub n_development_events: usize,
    pub performance: Vec<PerformanceSummary>,
    pub risk_boundaries: Vec<f64>,
    /// Risk quarters in order, then the overall stratum.
    pub strata: Vec<StratumReport>,
}

/// The machine contract for one study run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub seed: u64,
    pub settings: StudySettings,
    pub report_options: ReportOptions,
    pub outcomes: Vec<OutcomeReport>,
}

impl Report {
    pub fn all_diagnostics_pass(&self) -> bool {
        self.outcomes
            .iter()
            .flat_map(|o| &o.strata)
            .all(|s| s.effect.diagnostics.passed())
    }
}

/// Per-subject predicted risk row.
#[derive(Debug, Clone)]
pub struct RiskCsvRow {
    pub subject_id: SubjectId,
    pub outcome_id: OutcomeId,
    pub predicted_risk: f64,
    pub risk_stratum: usize,
}

/// Per-subject propensity row for one scope (development matching, one risk
/// quarter, or overall).
#[derive(Debug, Clone)]
pub struct PsCsvRow {
    pub outcome_id: OutcomeId,
    pub scope: String,
    pub subject_id: SubjectId,
    pub propensity: f64,
    pub preference: f64,
    pub match_partner: Option<SubjectId>,
    pub ps_stratum: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct KmCsvRow {
    pub outcome_id: OutcomeId,
    pub risk_stratum: StratumLabel,
    pub arm: &'static str,
    pub day: u32,
    pub survival: f64,
}

/// Full output of a run: the report plus subject-level tables.
#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub report: Report,
    pub risk_rows: Vec<RiskCsvRow>,
    pub ps_rows: Vec<PsCsvRow>,
    pub km_rows: Vec<KmCsvRow>,
}

fn fmt_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_smd(v: &Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "inf".to_string())
}

fn write_file(path: &Path, contents: &str) -> Result<(), StudyError> {
    std::fs::write(path, contents).map_err(|source| StudyError::Write {
        path: path.to_path_buf(),
        source,
    })
}

impl ReportBundle {
    pub fn estimates_csv(&self) -> String {
        let mut out = String::from(
            "outcome_id,risk_stratum,hr,hr_lo,hr_hi,ard,ard_lo,ard_hi,n_t,n_c,py_t,py_c,events_t,events_c,diagnostics_pass\n",
        );
        for stratum in self.strata() {
            let e = &stratum.effect;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                e.outcome_id,
                e.risk_stratum,
                fmt_opt(&e.hr.map(|h| h.hr)),
                fmt_opt(&e.hr.map(|h| h.lo)),
                fmt_opt(&e.hr.map(|h| h.hi)),
                fmt_opt(&e.ard.map(|a| a.ard)),
                fmt_opt(&e.ard.map(|a| a.lo)),
                fmt_opt(&e.ard.map(|a| a.hi)),
                e.n_treated,
                e.n_comparator,
                e.person_years_treated,
                e.person_years_comparator,
                e.events_treated,
                e.events_comparator,
                e.diagnostics.status.as_str(),
            );
        }
        out
    }

    pub fn balance_csv(&self) -> String {
        let mut out =
            String::from("outcome_id,risk_stratum,covariate_id,name,smd_before,smd_after\n");
        for (outcome, stratum) in self.strata_with_outcome() {
            for row in &stratum.balance {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    outcome,
                    stratum.label,
                    row.covariate_id,
                    row.name,
                    fmt_smd(&row.smd_before),
                    fmt_smd(&row.smd_after),
                );
            }
        }
        out
    }

    pub fn ncs_csv(&self) -> String {
        let mut out = String::from(
            "analysis_outcome_id,risk_stratum,outcome_id,log_hr,se,p,calibrated_p\n",
        );
        for (outcome, stratum) in self.strata_with_outcome() {
            for c in &stratum.negative_controls {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    outcome,
                    stratum.label,
                    c.outcome_id,
                    c.log_hr,
                    c.se,
                    c.p,
                    fmt_opt(&c.calibrated_p),
                );
            }
        }
        out
    }

    pub fn verdicts_csv(&self) -> String {
        let mut out = String::from("outcome_id,risk_stratum,pass,reasons\n");
        for (outcome, stratum) in self.strata_with_outcome() {
            let reasons = stratum
                .effect
                .diagnostics
                .reasons
                .join("; ")
                .replace(',', ";");
            let _ = writeln!(
                out,
                "{},{},{},{}",
                outcome,
                stratum.label,
                stratum.effect.diagnostics.status.as_str(),
                reasons,
            );
        }
        out
    }

    pub fn risk_csv(&self) -> String {
        let mut out = String::from("subject_id,outcome_id,predicted_risk,risk_stratum\n");
        for r in &self.risk_rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.subject_id, r.outcome_id, r.predicted_risk, r.risk_stratum
            );
        }
        out
    }

    pub fn ps_csv(&self) -> String {
        let mut out = String::from(
            "outcome_id,scope,subject_id,propensity,preference,match_partner,ps_stratum\n",
        );
        for r in &self.ps_rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.outcome_id,
                r.scope,
                r.subject_id,
                r.propensity,
                r.preference,
                fmt_opt(&r.match_partner),
                fmt_opt(&r.ps_stratum),
            );
        }
        out
    }

    pub fn km_csv(&self) -> String {
        let mut out = String::from("outcome_id,risk_stratum,arm,day,survival\n");
        for r in &self.km_rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.outcome_id, r.risk_stratum, r.arm, r.day, r.survival
            );
        }
        out
    }

    pub fn nulls_json(&self) -> String {
        let rows: Vec<NullRow> = self
            .strata_with_outcome()
            .filter_map(|(outcome, s)| {
                s.empirical_null.map(|n| NullRow {
                    outcome_id: outcome,
                    risk_stratum: s.label,
                    mu: n.mu,
                    sigma: n.sigma,
                    n_controls: n.n_controls,
                })
            })
            .collect();
        serde_json::to_string_pretty(&rows).expect("null rows serialize")
    }

    fn strata(&self) -> impl Iterator<Item = &StratumReport> {
        self.report.outcomes.iter().flat_map(|o| o.strata.iter())
    }

    fn strata_with_outcome(&self) -> impl Iterator<Item = (OutcomeId, &StratumReport)> {
        self.report
            .outcomes
            .iter()
            .flat_map(|o| o.strata.iter().map(move |s| (o.outcome_id, s)))
    }

    /// Writes the whole bundle into `dir`: `report.json`, the CSV views,
    /// per-outcome `model_<id>.json`, and `nulls.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), StudyError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| StudyError::Write {
            path: dir.to_path_buf(),
            source,
        })?;
        let report_json =
            serde_json::to_string_pretty(&self.report).expect("report serializes");
        write_file(&dir.join("report.json"), &report_json)?;
        write_file(&dir.join("estimates.csv"), &self.estimates_csv())?;
        write_file(&dir.join("balance.csv"), &self.balance_csv())?;
        write_file(&dir.join("ncs.csv"), &self.ncs_csv())?;
        write_file(&dir.join("verdicts.csv"), &self.verdicts_csv())?;
        write_file(&dir.join("risk.csv"), &self.risk_csv())?;
        write_file(&dir.join("ps.csv"), &self.ps_csv())?;
        write_file(&dir.join("nulls.json"), &self.nulls_json())?;
        if self.report.report_options.emit_km_curves {
            write_file(&dir.join("km.csv"), &self.km_csv())?;
        }
        for outcome in &self.report.outcomes {
            let path = dir.join(format!("model_{}.json", outcome.outcome_id));
            write_file(&path, &crate::lasso::model_to_json(&outcome.risk_model))?;
        }
        Ok(())
    }
}

/// Row of `nulls.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NullRow {
    pub outcome_id: OutcomeId,
    pub risk_stratum: StratumLabel,
    pub mu: f64,
    pub sigma: f64,
    pub n_controls: usize,
}
