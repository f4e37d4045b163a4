//! Negative-control effect estimation, empirical-null fitting, calibrated
//! p-values, and the composite per-stratum diagnostics verdict.
//!
//! Negative controls are outcomes believed causally unrelated to either
//! treatment; their estimated effects measure residual bias. A Normal
//! empirical null fitted to those estimates recalibrates p-values for the
//! outcomes of interest.

use crate::data::{CohortTable, OutcomeId, StudySettings, SubjectId};
use crate::propensity::BalanceRow;
use crate::survival::{fit_cox, survival_rows};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("no negative controls configured")]
    NoControls,
    #[error("empirical null needs at least 5 usable estimates, found {0}")]
    TooFewEstimates(usize),
    #[error("non-finite input")]
    NonFinite,
}

/// Effect estimate for one negative-control outcome.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ControlEstimate {
    pub outcome_id: OutcomeId,
    pub log_hr: f64,
    pub se: f64,
}

/// Normal distribution of bias fitted to negative-control estimates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EmpiricalNull {
    pub mu: f64,
    pub sigma: f64,
    pub n_controls: usize,
}

#[derive(Debug, Clone, Default)]
pub struct NcOutput {
    pub estimates: Vec<ControlEstimate>,
    /// Controls that produced no estimate, with the reason.
    pub skipped: Vec<(OutcomeId, String)>,
}

/// Stratified Cox fits for every configured negative control, reusing the
/// stratum's propensity fifths. Subjects with a pre-index occurrence of a
/// control are excluded from that control's fit (their fifth labels are
/// kept for everyone else). Controls with no events or failed fits are
/// skipped with a record.
pub fn estimate_negative_controls(
    cohort: &CohortTable,
    members: &[SubjectId],
    fifth_labels: &[usize],
    settings: &StudySettings,
) -> NcOutput {
    let mut out = NcOutput::default();
    for &control in &settings.negative_control_ids {
        let keep: Vec<usize> = members
            .iter()
            .enumerate()
            .filter(|(_, &s)| {
                !cohort
                    .get(s)
                    .is_some_and(|r| r.prior_outcomes.contains(&control))
            })
            .map(|(i, _)| i)
            .collect();
        let subset: Vec<SubjectId> = keep.iter().map(|&i| members[i]).collect();
        let labels: Vec<usize> = keep.iter().map(|&i| fifth_labels[i]).collect();
        let (times, events, treated) =
            survival_rows(cohort, &subset, control, settings.time_at_risk_days);
        if !events.iter().any(|&e| e) {
            out.skipped.push((control, "no events".into()));
            continue;
        }
        match fit_cox(&times, &events, &treated, &labels, settings.tie_method) {
            Ok(fit) => out.estimates.push(ControlEstimate {
                outcome_id: control,
                log_hr: fit.log_hr,
                se: fit.se,
            }),
            Err(e) => out.skipped.push((control, e.to_string())),
        }
    }
    out
}

/// Maximum-likelihood `(mu, sigma)` under
/// `log_hr_i ~ Normal(mu, sigma^2 + se_i^2)`.
///
/// For fixed `sigma` the optimal `mu` is a precision-weighted mean, so a 1-D
/// golden-section search over `sigma >= 0` suffices.
pub fn fit_empirical_null(
    estimates: &[ControlEstimate],
) -> Result<EmpiricalNull, CalibrationError> {
    if estimates.len() < 5 {
        return Err(CalibrationError::TooFewEstimates(estimates.len()));
    }
    if estimates
        .iter()
        .any(|e| !e.log_hr.is_finite() || !e.se.is_finite() || e.se < 0.0)
    {
        return Err(CalibrationError::NonFinite);
    }
    let profile_ll = |sigma: f64| -> (f64, f64) {
        let mut num = 0.0;
        let mut den = 0.0;
        for e in estimates {
            let v = sigma * sigma + e.se * e.se;
            let precision = if v > 0.0 { 1.0 / v } else { 1e300 };
            num += e.log_hr * precision;
            den += precision;
        }
        let mu = num / den;
        let mut ll = 0.0;
        for e in estimates {
            let v = (sigma * sigma + e.se * e.se).max(1e-300);
            ll += -0.5 * (2.0 * std::f64::consts::PI * v).ln()
                - (e.log_hr - mu).powi(2) / (2.0 * v);
        }
        (ll, mu)
    };

    let n = estimates.len() as f64;
    let mean = estimates.iter().map(|e| e.log_hr).sum::<f64>() / n;
    let sd = (estimates
        .iter()
        .map(|e| (e.log_hr - mean).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let mut lo = 0.0f64;
    let mut hi = (2.0 * sd).max(1e-4);
    // Expand until the optimum is interior.
    while profile_ll(hi).0 > profile_ll(hi * 0.99).0 && hi < 1e3 {
        hi *= 2.0;
    }
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - phi * (hi - lo);
    let mut b = lo + phi * (hi - lo);
    let (mut fa, mut fb) = (profile_ll(a).0, profile_ll(b).0);
    while hi - lo > 1e-8 {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + phi * (hi - lo);
            fb = profile_ll(b).0;
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - phi * (hi - lo);
            fa = profile_ll(a).0;
        }
    }
    let sigma = 0.5 * (lo + hi);
    let (_, mu) = profile_ll(sigma);
    Ok(EmpiricalNull {
        mu,
        sigma,
        n_controls: estimates.len(),
    })
}

fn two_sided_p(z: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    2.0 * normal.cdf(-z.abs())
}

/// Standard two-sided p-value for a log hazard ratio.
pub fn standard_p(log_hr: f64, se: f64) -> f64 {
    if se <= 0.0 {
        return if log_hr == 0.0 { 1.0 } else { 0.0 };
    }
    two_sided_p(log_hr / se)
}

/// Two-sided p-value of `log_hr` under the empirical null
/// `Normal(mu, sigma^2 + se^2)`. Reduces to the standard p when the null is
/// `(0, 0)`.
pub fn calibrated_p(log_hr: f64, se: f64, null: &EmpiricalNull) -> f64 {
    let denom = (null.sigma * null.sigma + se * se).sqrt();
    if denom <= 0.0 {
        return if log_hr == null.mu { 1.0 } else { 0.0 };
    }
    two_sided_p((log_hr - null.mu) / denom)
}

/// Negative-control significance summary at a given alpha.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ControlSummary {
    pub n_estimated: usize,
    pub n_significant: usize,
}

impl ControlSummary {
    pub fn significant_fraction(&self) -> f64 {
        if self.n_estimated == 0 {
            0.0
        } else {
            self.n_significant as f64 / self.n_estimated as f64
        }
    }
}

pub fn control_summary(estimates: &[ControlEstimate], alpha: f64) -> ControlSummary {
    let n_significant = estimates
        .iter()
        .filter(|e| standard_p(e.log_hr, e.se) < alpha)
        .count();
    ControlSummary {
        n_estimated: estimates.len(),
        n_significant,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Pass,
    Fail,
    Indeterminate,
}

impl VerdictStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictStatus::Pass => "pass",
            VerdictStatus::Fail => "fail",
            VerdictStatus::Indeterminate => "indeterminate",
        }
    }
}

/// Composite diagnostics decision with human-readable reasons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdict {
    pub status: VerdictStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<String>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.status == VerdictStatus::Pass
    }
}

/// Pass requires, simultaneously: every post-adjustment SMD within the
/// threshold, an equipoise fraction at or above the threshold, and no more
/// than the allowed fraction of significant negative controls. A failing
/// present input wins over a missing one; otherwise missing inputs make the
/// verdict indeterminate.
pub fn diagnostics_verdict(
    balance: Option<&[BalanceRow]>,
    equipoise: Option<f64>,
    controls: Option<ControlSummary>,
    settings: &StudySettings,
) -> Verdict {
    let mut reasons = Vec::new();
    let mut missing = Vec::new();
    let mut failed = false;

    match balance {
        Some(rows) => {
            let mut offending: Vec<&BalanceRow> = rows
                .iter()
                .filter(|r| !(r.smd_after.abs() <= settings.smd_threshold))
                .collect();
            if !offending.is_empty() {
                failed = true;
                offending.sort_by(|a, b| {
                    b.smd_after
                        .abs()
                        .partial_cmp(&a.smd_after.abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                });
                let shown: Vec<String> = offending
                    .iter()
                    .take(5)
                    .map(|r| format!("{} ({:.3})", r.name, r.smd_after))
                    .collect();
                let more = if offending.len() > 5 {
                    format!(" and {} more", offending.len() - 5)
                } else {
                    String::new()
                };
                reasons.push(format!(
                    "covariate imbalance after adjustment beyond {}: {}{}",
                    settings.smd_threshold,
                    shown.join("; "),
                    more
                ));
            }
        }
        None => missing.push("balance not computed"),
    }

    match equipoise {
        Some(f) => {
            if f < settings.equipoise_threshold {
                failed = true;
                reasons.push(format!(
                    "equipoise {f:.3} below threshold {}",
                    settings.equipoise_threshold
                ));
            }
        }
        None => missing.push("equipoise not computed"),
    }

    match controls {
        Some(summary) => {
            let fraction = summary.significant_fraction();
            if fraction > settings.max_significant_control_fraction {
                failed = true;
                reasons.push(format!(
                    "{}/{} negative controls significant at alpha {}",
                    summary.n_significant, summary.n_estimated, settings.control_alpha
                ));
            }
        }
        None => missing.push("negative controls not estimated"),
    }

    let status = if failed {
        VerdictStatus::Fail
    } else if !missing.is_empty() {
        VerdictStatus::Indeterminate
    } else {
        VerdictStatus::Pass
    };
    reasons.extend(missing.into_iter().map(str::to_string));
    Verdict { status, reasons }
}
