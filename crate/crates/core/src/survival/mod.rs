//! Within-stratum effect estimation: propensity fifths, stratified Cox
//! hazard ratios, and pooled Kaplan-Meier risk differences at the
//! time-at-risk horizon.

pub mod cox;
pub mod km;

pub use cox::{fit_cox, partial_loglik, CoxError, CoxFit};
pub use km::{km_curve, SurvivalCurve};

use crate::calibration::{self, ControlEstimate, EmpiricalNull, Verdict, VerdictStatus};
use crate::data::{
    CohortTable, CovariateTable, Estimand, OutcomeId, StudySettings, SubjectId,
};
use crate::lasso::{self, SparseLinearModel};
use crate::propensity::{
    compute_balance, equipoise_fraction, preference_histogram, stratify_ps_on,
    stratum_weights, Adjustment, BalanceRow, PreferenceHistogram, PsAssignment,
};
use crate::rng::{stream, Purpose};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub const Z95: f64 = 1.959963984540054;

#[derive(Debug, Error)]
pub enum SurvivalError {
    #[error("no stratum contains both treatment arms")]
    NoInformativeStratum,
    #[error("input length mismatch")]
    LengthMismatch,
    #[error(transparent)]
    Cox(#[from] CoxError),
}

/// Per-subject follow-up for one arm within one propensity stratum.
#[derive(Debug, Clone, Default)]
pub struct ArmData {
    pub times: Vec<u32>,
    pub events: Vec<bool>,
}

impl ArmData {
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn sorted(&self) -> ArmData {
        let mut order: Vec<usize> = (0..self.times.len()).collect();
        order.sort_unstable_by_key(|&i| self.times[i]);
        ArmData {
            times: order.iter().map(|&i| self.times[i]).collect(),
            events: order.iter().map(|&i| self.events[i]).collect(),
        }
    }
}

/// Survival inputs for one propensity stratum.
#[derive(Debug, Clone)]
pub struct StratumSurvival {
    pub weight: f64,
    pub treated: ArmData,
    pub comparator: ArmData,
}

/// Weighted Kaplan-Meier difference at the horizon, in percentage points.
/// Positive values favor the target treatment.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ArdEstimate {
    pub ard: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct BootstrapSpec {
    pub reps: usize,
    pub seed: u64,
    pub outcome: u64,
    pub stratum: u64,
}

/// Kaplan-Meier survival at `horizon` from pre-sorted arm data with
/// per-subject resampling multiplicities.
fn km_at_horizon_weighted(arm: &ArmData, counts: Option<&[u32]>, horizon: u32) -> f64 {
    let mut at_risk: f64 = match counts {
        Some(c) => c.iter().map(|&x| f64::from(x)).sum(),
        None => arm.times.len() as f64,
    };
    let mut survival = 1.0;
    let mut i = 0;
    let n = arm.times.len();
    while i < n && at_risk > 0.0 {
        let t = arm.times[i];
        if t > horizon {
            break;
        }
        let mut d = 0.0;
        let mut removed = 0.0;
        while i < n && arm.times[i] == t {
            let mult = counts.map_or(1.0, |c| f64::from(c[i]));
            removed += mult;
            if arm.events[i] {
                d += mult;
            }
            i += 1;
        }
        if d > 0.0 {
            survival *= 1.0 - d / at_risk;
        }
        at_risk -= removed;
    }
    survival
}

/// Weighted difference in Kaplan-Meier survival at the horizon across
/// propensity strata, with a percentile bootstrap over subjects within each
/// (stratum, arm) cell.
///
/// Strata missing an arm are excluded and the remaining weights are
/// renormalized; the number of exclusions is reported.
pub fn ard_at_horizon(
    strata: &[StratumSurvival],
    horizon: u32,
    bootstrap: BootstrapSpec,
) -> Result<(ArdEstimate, usize), SurvivalError> {
    let usable: Vec<&StratumSurvival> = strata
        .iter()
        .filter(|s| !s.treated.is_empty() && !s.comparator.is_empty())
        .collect();
    let excluded = strata.len() - usable.len();
    if usable.is_empty() {
        return Err(SurvivalError::NoInformativeStratum);
    }
    let total_weight: f64 = usable.iter().map(|s| s.weight).sum();
    if total_weight <= 0.0 {
        return Err(SurvivalError::NoInformativeStratum);
    }

    let sorted: Vec<(f64, ArmData, ArmData)> = usable
        .iter()
        .map(|s| (s.weight / total_weight, s.treated.sorted(), s.comparator.sorted()))
        .collect();

    let point: f64 = sorted
        .iter()
        .map(|(w, t, c)| {
            w * (km_at_horizon_weighted(t, None, horizon)
                - km_at_horizon_weighted(c, None, horizon))
        })
        .sum::<f64>()
        * 100.0;

    let mut draws = Vec::with_capacity(bootstrap.reps);
    let mut counts_buf: Vec<u32> = Vec::new();
    for rep in 0..bootstrap.reps {
        let mut rng = stream(
            bootstrap.seed,
            bootstrap.outcome,
            Purpose::Bootstrap,
            bootstrap.stratum * 1_000_000 + rep as u64,
        );
        let mut ard = 0.0;
        for (w, treated, comparator) in &sorted {
            let mut arm_surv = [0.0f64; 2];
            for (k, arm) in [comparator, treated].into_iter().enumerate() {
                let n = arm.times.len();
                counts_buf.clear();
                counts_buf.resize(n, 0);
                for _ in 0..n {
                    counts_buf[rng.random_range(0..n)] += 1;
                }
                arm_surv[k] = km_at_horizon_weighted(arm, Some(&counts_buf), horizon);
            }
            ard += w * (arm_surv[1] - arm_surv[0]);
        }
        draws.push(ard * 100.0);
    }
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |q: f64| -> f64 {
        if draws.is_empty() {
            return point;
        }
        let pos = q * (draws.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        draws[lo] * (1.0 - frac) + draws[hi] * frac
    };
    Ok((
        ArdEstimate {
            ard: point,
            lo: quantile(0.025),
            hi: quantile(0.975),
        },
        excluded,
    ))
}

/// Hazard ratio estimate with its Wald interval.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HrEstimate {
    pub log_hr: f64,
    pub se: f64,
    pub hr: f64,
    pub lo: f64,
    pub hi: f64,
}

impl From<CoxFit> for HrEstimate {
    fn from(fit: CoxFit) -> Self {
        let (lo, hi) = fit.hr_ci95();
        HrEstimate {
            log_hr: fit.log_hr,
            se: fit.se,
            hr: fit.hr(),
            lo,
            hi,
        }
    }
}

/// Which slice of the population an estimate describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratumLabel {
    Overall,
    #[serde(untagged)]
    Stratum(usize),
}

impl fmt::Display for StratumLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StratumLabel::Stratum(q) => write!(f, "{q}"),
            StratumLabel::Overall => write!(f, "overall"),
        }
    }
}

/// Relative and absolute effect for one risk stratum, with the bookkeeping
/// columns of the per-stratum incidence table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StratumEffect {
    pub outcome_id: OutcomeId,
    pub risk_stratum: StratumLabel,
    pub hr: Option<HrEstimate>,
    pub ard: Option<ArdEstimate>,
    pub n_treated: usize,
    pub n_comparator: usize,
    pub person_years_treated: f64,
    pub person_years_comparator: f64,
    pub events_treated: usize,
    pub events_comparator: usize,
    pub diagnostics: Verdict,
    /// Reasons estimates are absent, plus non-fatal warnings.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Full per-stratum output: the effect summary plus the diagnostic artifacts
/// behind it.
#[derive(Debug, Clone)]
pub struct StratumAnalysis {
    pub effect: StratumEffect,
    pub ps_model: Option<SparseLinearModel>,
    pub ps: Option<PsAssignment>,
    pub ps_collapsed: bool,
    pub balance: Vec<BalanceRow>,
    pub equipoise: Option<f64>,
    pub preference_hist: Option<PreferenceHistogram>,
    pub controls: Vec<ControlEstimate>,
    pub skipped_controls: Vec<(OutcomeId, String)>,
    pub null: Option<EmpiricalNull>,
    pub pooled_km: Option<PooledKm>,
}

/// Stratum-weight-pooled survival curves per arm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PooledKm {
    pub days: Vec<u32>,
    pub treated_survival: Vec<f64>,
    pub comparator_survival: Vec<f64>,
}

/// Follow-up time, event indicator, and arm per member for one outcome,
/// censored at the time-at-risk horizon.
pub fn survival_rows(
    cohort: &CohortTable,
    members: &[SubjectId],
    outcome: OutcomeId,
    time_at_risk: u32,
) -> (Vec<u32>, Vec<bool>, Vec<bool>) {
    let mut times = Vec::with_capacity(members.len());
    let mut events = Vec::with_capacity(members.len());
    let mut treated = Vec::with_capacity(members.len());
    for &s in members {
        let row = cohort.get(s).expect("member subjects exist in the cohort");
        let censor = row.followup_days.min(time_at_risk);
        match row.outcomes.get(&outcome) {
            Some(&day) if day <= censor => {
                times.push(day);
                events.push(true);
            }
            _ => {
                times.push(censor);
                events.push(false);
            }
        }
        treated.push(row.treated);
    }
    (times, events, treated)
}

pub(crate) const DAYS_PER_YEAR: f64 = 365.25;

/// Estimates one risk stratum: a fresh propensity model, propensity fifths,
/// the stratified hazard ratio, the pooled risk difference, covariate
/// balance, overlap, and negative-control diagnostics.
///
/// Failures of individual pieces degrade to absent estimates with recorded
/// reasons; this function does not abort the stratum.
#[allow(clippy::too_many_arguments)]
pub fn estimate_stratum(
    cov: &CovariateTable,
    cohort: &CohortTable,
    outcome_id: OutcomeId,
    members: &[SubjectId],
    label: StratumLabel,
    settings: &StudySettings,
    bootstrap_reps: usize,
    emit_km: bool,
) -> StratumAnalysis {
    let stratum_code = match label {
        StratumLabel::Stratum(q) => q as u64,
        StratumLabel::Overall => 0,
    };
    let (times, events, treated) =
        survival_rows(cohort, members, outcome_id, settings.time_at_risk_days);
    let mut effect = StratumEffect {
        outcome_id,
        risk_stratum: label,
        hr: None,
        ard: None,
        n_treated: treated.iter().filter(|&&t| t).count(),
        n_comparator: treated.iter().filter(|&&t| !t).count(),
        person_years_treated: person_years(&times, &treated, true),
        person_years_comparator: person_years(&times, &treated, false),
        events_treated: count_events(&events, &treated, true),
        events_comparator: count_events(&events, &treated, false),
        diagnostics: Verdict {
            status: VerdictStatus::Indeterminate,
            reasons: Vec::new(),
        },
        notes: Vec::new(),
    };
    let mut analysis_parts = StratumParts::default();

    // Fresh propensity model for this stratum.
    match lasso::fit_cv(
        cov,
        members,
        &treated,
        settings.cv_folds,
        settings.lambda_grid.as_deref(),
        settings.seed ^ (outcome_id.rotate_left(17)) ^ stratum_code.rotate_left(41),
    ) {
        Ok(model) => {
            let propensity = lasso::predict_proba(&model, cov, members);
            match PsAssignment::new(members.to_vec(), treated.clone(), propensity) {
                Ok(mut ps) => {
                    let reference: Vec<f64> = match settings.estimand {
                        Estimand::Att => ps
                            .propensity
                            .iter()
                            .zip(&ps.treated)
                            .filter(|(_, &t)| t)
                            .map(|(&p, _)| p)
                            .collect(),
                        Estimand::Ate => ps.propensity.clone(),
                    };
                    let strata =
                        stratify_ps_on(&reference, &ps.propensity, settings.ps_strata_count);
                    if strata.collapsed {
                        effect.notes.push(format!(
                            "propensity strata collapsed to {}",
                            strata.n_strata
                        ));
                    }
                    for (slot, &s) in ps.ps_stratum.iter_mut().zip(&strata.labels) {
                        *slot = Some(s);
                    }
                    analysis_parts.ps_collapsed = strata.collapsed;
                    analysis_parts.labels = Some(strata.labels);
                    analysis_parts.n_strata = strata.n_strata;
                    analysis_parts.ps = Some(ps);
                    analysis_parts.ps_model = Some(model);
                }
                Err(e) => effect.notes.push(format!("propensity scores: {e}")),
            }
        }
        Err(e) => effect.notes.push(format!("propensity model: {e}")),
    }

    let mut balance = Vec::new();
    let mut equipoise = None;
    let mut preference_hist = None;
    let mut controls = Vec::new();
    let mut skipped_controls = Vec::new();
    let mut null = None;
    let mut pooled_km = None;

    if let (Some(ps), Some(labels)) = (&analysis_parts.ps, &analysis_parts.labels) {
        let n_strata = analysis_parts.n_strata;
        let att = settings.estimand == Estimand::Att;
        let weights = stratum_weights(labels, &treated, n_strata, att);

        equipoise = Some(equipoise_fraction(&ps.preference));
        preference_hist = Some(preference_histogram(&ps.preference, &treated, 25));
        match compute_balance(
            cov,
            members,
            &treated,
            Adjustment::Strata {
                labels,
                n_strata,
                weights: &weights,
            },
        ) {
            Ok(rows) => balance = rows,
            Err(e) => effect.notes.push(format!("balance: {e}")),
        }

        match fit_cox(&times, &events, &treated, labels, settings.tie_method) {
            Ok(fit) => effect.hr = Some(fit.into()),
            Err(e) => effect.notes.push(format!("cox: {e}")),
        }

        let survival_strata =
            split_by_stratum(&times, &events, &treated, labels, n_strata, &weights);
        match ard_at_horizon(
            &survival_strata,
            settings.time_at_risk_days,
            BootstrapSpec {
                reps: bootstrap_reps,
                seed: settings.seed,
                outcome: outcome_id,
                stratum: stratum_code,
            },
        ) {
            Ok((ard, excluded)) => {
                if excluded > 0 {
                    effect.notes.push(format!(
                        "{excluded} propensity strata lacked both arms and were excluded from the risk difference"
                    ));
                }
                effect.ard = Some(ard);
            }
            Err(e) => effect.notes.push(format!("risk difference: {e}")),
        }

        if emit_km {
            pooled_km = Some(pool_km(&survival_strata, settings.time_at_risk_days));
        }

        let nc = calibration::estimate_negative_controls(
            cohort, members, labels, settings,
        );
        controls = nc.estimates;
        skipped_controls = nc.skipped;
        match calibration::fit_empirical_null(&controls) {
            Ok(n) => null = Some(n),
            Err(e) => {
                if !settings.negative_control_ids.is_empty() {
                    effect.notes.push(format!("empirical null: {e}"));
                }
            }
        }
    }

    effect.diagnostics = calibration::diagnostics_verdict(
        if balance.is_empty() { None } else { Some(&balance) },
        equipoise,
        if settings.negative_control_ids.is_empty() || controls.is_empty() {
            None
        } else {
            Some(calibration::control_summary(&controls, settings.control_alpha))
        },
        settings,
    );

    StratumAnalysis {
        effect,
        ps_model: analysis_parts.ps_model,
        ps: analysis_parts.ps,
        ps_collapsed: analysis_parts.ps_collapsed,
        balance,
        equipoise,
        preference_hist,
        controls,
        skipped_controls,
        null,
        pooled_km,
    }
}

#[derive(Default)]
struct StratumParts {
    ps_model: Option<SparseLinearModel>,
    ps: Option<PsAssignment>,
    labels: Option<Vec<usize>>,
    n_strata: usize,
    ps_collapsed: bool,
}

fn person_years(times: &[u32], treated: &[bool], arm: bool) -> f64 {
    times
        .iter()
        .zip(treated)
        .filter(|&(_, &t)| t == arm)
        .map(|(&d, _)| f64::from(d))
        .sum::<f64>()
        / DAYS_PER_YEAR
}

fn count_events(events: &[bool], treated: &[bool], arm: bool) -> usize {
    events
        .iter()
        .zip(treated)
        .filter(|&(&e, &t)| e && t == arm)
        .count()
}

fn split_by_stratum(
    times: &[u32],
    events: &[bool],
    treated: &[bool],
    labels: &[usize],
    n_strata: usize,
    weights: &[f64],
) -> Vec<StratumSurvival> {
    let mut out: Vec<StratumSurvival> = (0..n_strata)
        .map(|s| StratumSurvival {
            weight: weights[s],
            treated: ArmData::default(),
            comparator: ArmData::default(),
        })
        .collect();
    for i in 0..times.len() {
        let slot = &mut out[labels[i] - 1];
        let arm = if treated[i] {
            &mut slot.treated
        } else {
            &mut slot.comparator
        };
        arm.times.push(times[i]);
        arm.events.push(events[i]);
    }
    out
}

fn pool_km(strata: &[StratumSurvival], horizon: u32) -> PooledKm {
    let usable: Vec<&StratumSurvival> = strata
        .iter()
        .filter(|s| !s.treated.is_empty() && !s.comparator.is_empty())
        .collect();
    let total_w: f64 = usable.iter().map(|s| s.weight).sum();
    let mut days: Vec<u32> = Vec::new();
    let curves: Vec<(f64, SurvivalCurve, SurvivalCurve)> = usable
        .iter()
        .map(|s| {
            let t = km_curve(&s.treated.times, &s.treated.events);
            let c = km_curve(&s.comparator.times, &s.comparator.events);
            days.extend(t.event_times.iter().chain(&c.event_times));
            (s.weight / total_w.max(f64::MIN_POSITIVE), t, c)
        })
        .collect();
    days.retain(|&d| d <= horizon);
    days.sort_unstable();
    days.dedup();
    let mut treated_survival = Vec::with_capacity(days.len());
    let mut comparator_survival = Vec::with_capacity(days.len());
    for &d in &days {
        let mut st = 0.0;
        let mut sc = 0.0;
        for (w, t, c) in &curves {
            st += w * t.survival_at(d);
            sc += w * c.survival_at(d);
        }
        treated_survival.push(st);
        comparator_survival.push(sc);
    }
    PooledKm {
        days,
        treated_survival,
        comparator_survival,
    }
}
