//! Independent oracles and simulation scenarios shared by the integration
//! and acceptance suites. Everything here is deliberately written from the
//! definitions, not by calling back into the implementation under test.

#![allow(dead_code)]

use riskstrat_core::data::{CovariateId, CovariateKind, CovariateTable, StudySettings, SubjectId};
use riskstrat_core::sim::{OutcomeModel, SimulationSpec, TreatmentModel};
use std::collections::BTreeMap;

pub const MAIN_OUTCOME: u64 = 101;

/// Per-day log baseline hazard giving the requested two-year event risk
/// under an exponential event-time model.
pub fn baseline_log_hazard(two_year_risk: f64) -> f64 {
    (-(1.0 - two_year_risk).ln() / 730.0).ln()
}

fn coef(pairs: &[(u64, f64)]) -> BTreeMap<u64, f64> {
    pairs.iter().copied().collect()
}

/// Confounded treatment (x1..x3 drive both arms and hazard), true hazard
/// ratio exactly 1. The crude estimate is biased upward by construction.
pub fn confounded_null_spec(n: usize, seed: u64) -> SimulationSpec {
    SimulationSpec {
        n_subjects: n,
        n_binary_covariates: 10,
        covariate_prevalences: vec![0.3; 10],
        treatment: TreatmentModel {
            intercept: -0.6,
            coefficients: coef(&[(1, 0.8), (2, 0.8), (3, 0.8)]),
        },
        outcome_models: BTreeMap::from([(
            MAIN_OUTCOME,
            OutcomeModel {
                baseline_log_hazard: baseline_log_hazard(0.015),
                covariate_log_hazard: coef(&[
                    (1, 0.7),
                    (2, 0.7),
                    (3, 0.7),
                    (4, 0.5),
                    (5, 0.5),
                ]),
                true_log_hr: vec![0.0; 4],
            },
        )]),
        censoring_rate: 2e-4,
        admin_censor_day: 730,
        negative_control_count: 0,
        seed,
    }
}

/// Randomized treatment with a constant hazard ratio across risk strata and
/// a strongly discriminating risk model.
pub fn randomized_constant_hr_spec(n: usize, seed: u64, hr: f64) -> SimulationSpec {
    SimulationSpec {
        n_subjects: n,
        n_binary_covariates: 8,
        covariate_prevalences: vec![0.35; 8],
        treatment: TreatmentModel::default(),
        outcome_models: BTreeMap::from([(
            MAIN_OUTCOME,
            OutcomeModel {
                baseline_log_hazard: baseline_log_hazard(0.02),
                covariate_log_hazard: coef(&[
                    (1, 1.2),
                    (2, 1.0),
                    (3, 0.8),
                    (4, 0.6),
                    (5, 0.5),
                ]),
                true_log_hr: vec![hr.ln(); 4],
            },
        )]),
        censoring_rate: 1e-4,
        admin_censor_day: 730,
        negative_control_count: 0,
        seed,
    }
}

/// No covariate signal at all: any fitted risk model is noise.
pub fn no_signal_spec(n: usize, seed: u64) -> SimulationSpec {
    SimulationSpec {
        n_subjects: n,
        n_binary_covariates: 10,
        covariate_prevalences: vec![0.3; 10],
        treatment: TreatmentModel::default(),
        outcome_models: BTreeMap::from([(
            MAIN_OUTCOME,
            OutcomeModel {
                baseline_log_hazard: baseline_log_hazard(0.04),
                covariate_log_hazard: BTreeMap::new(),
                true_log_hr: vec![0.0; 4],
            },
        )]),
        censoring_rate: 0.0,
        admin_censor_day: 730,
        negative_control_count: 0,
        seed,
    }
}

/// Randomized treatment, clean confounding structure, and a block of
/// true-null negative controls for calibration checks.
pub fn clean_null_controls_spec(n: usize, seed: u64, controls: usize) -> SimulationSpec {
    SimulationSpec {
        n_subjects: n,
        n_binary_covariates: 10,
        covariate_prevalences: vec![0.3; 10],
        treatment: TreatmentModel::default(),
        outcome_models: BTreeMap::from([(
            MAIN_OUTCOME,
            OutcomeModel {
                baseline_log_hazard: baseline_log_hazard(0.03),
                covariate_log_hazard: coef(&[(1, 0.5), (2, 0.5)]),
                true_log_hr: vec![0.0; 4],
            },
        )]),
        censoring_rate: 1e-4,
        admin_censor_day: 730,
        negative_control_count: controls,
        seed,
    }
}

/// Strong propensity separation everywhere (three covariates at log-odds
/// 2.5 each) with negative controls confounded through the same covariates.
/// Mirrors a lowest-risk-quarter failure pattern: poor equipoise and
/// clearly non-null control estimates.
pub fn separation_spec(n: usize, seed: u64) -> SimulationSpec {
    SimulationSpec {
        n_subjects: n,
        n_binary_covariates: 10,
        covariate_prevalences: vec![0.5; 10],
        treatment: TreatmentModel {
            intercept: -3.75,
            coefficients: coef(&[(2, 2.5), (3, 2.5), (4, 2.5)]),
        },
        outcome_models: BTreeMap::from([(
            MAIN_OUTCOME,
            OutcomeModel {
                baseline_log_hazard: baseline_log_hazard(0.06),
                covariate_log_hazard: coef(&[(1, -2.0)]),
                true_log_hr: vec![0.0; 4],
            },
        )]),
        censoring_rate: 0.0,
        admin_censor_day: 730,
        negative_control_count: 30,
        seed,
    }
}

pub fn settings_for(spec: &SimulationSpec, controls: &[u64]) -> StudySettings {
    StudySettings {
        outcome_ids: vec![MAIN_OUTCOME],
        negative_control_ids: controls.to_vec(),
        seed: spec.seed,
        ..StudySettings::default()
    }
}

// ---------------------------------------------------------------------------
// Projected-gradient oracle for the penalized logistic objective.
// ---------------------------------------------------------------------------

/// Dense instance of the L1-logistic problem.
pub struct LassoInstance {
    /// Row-major dense design, `n x p`, original scale.
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub lambda: f64,
    pub continuous: Vec<bool>,
}

impl LassoInstance {
    /// Scale factors matching the unit-variance standardization contract:
    /// continuous columns are divided by their (population) SD.
    pub fn scales(&self) -> Vec<f64> {
        let n = self.x.len() as f64;
        let p = self.continuous.len();
        (0..p)
            .map(|j| {
                if !self.continuous[j] {
                    return 1.0;
                }
                let mean: f64 = self.x.iter().map(|r| r[j]).sum::<f64>() / n;
                let var: f64 =
                    self.x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect()
    }

    /// Penalized objective at original-scale coefficients:
    /// `(1/n) sum logloss + lambda * sum |beta_j * scale_j|`.
    pub fn objective(&self, intercept: f64, coefs: &[f64]) -> f64 {
        let n = self.x.len() as f64;
        let scales = self.scales();
        let mut loss = 0.0;
        for (row, &yi) in self.x.iter().zip(&self.y) {
            let eta: f64 =
                intercept + row.iter().zip(coefs).map(|(x, b)| x * b).sum::<f64>();
            loss += if eta > 0.0 {
                eta + (-eta).exp().ln_1p() - yi * eta
            } else {
                eta.exp().ln_1p() - yi * eta
            };
        }
        loss / n
            + self.lambda
                * coefs
                    .iter()
                    .zip(&scales)
                    .map(|(b, s)| (b * s).abs())
                    .sum::<f64>()
    }

    /// Projected-gradient minimization on the positive/negative split of
    /// the standardized coefficients. Returns `(objective, intercept,
    /// original-scale coefficients)`.
    pub fn solve_projected_gradient(&self, max_iters: usize) -> (f64, f64, Vec<f64>) {
        let n = self.x.len();
        let p = self.continuous.len();
        let nf = n as f64;
        let scales = self.scales();
        // Standardized design.
        let xs: Vec<Vec<f64>> = self
            .x
            .iter()
            .map(|row| row.iter().zip(&scales).map(|(x, s)| x / s).collect())
            .collect();
        let mut intercept = 0.0f64;
        let mut plus = vec![0.0f64; p];
        let mut minus = vec![0.0f64; p];

        let objective = |intercept: f64, plus: &[f64], minus: &[f64]| -> f64 {
            let mut loss = 0.0;
            for (row, &yi) in xs.iter().zip(&self.y) {
                let eta: f64 = intercept
                    + row
                        .iter()
                        .enumerate()
                        .map(|(j, x)| x * (plus[j] - minus[j]))
                        .sum::<f64>();
                loss += if eta > 0.0 {
                    eta + (-eta).exp().ln_1p() - yi * eta
                } else {
                    eta.exp().ln_1p() - yi * eta
                };
            }
            loss / nf
                + self.lambda * (plus.iter().sum::<f64>() + minus.iter().sum::<f64>())
        };

        let mut step = 1.0f64;
        let mut current = objective(intercept, &plus, &minus);
        for _ in 0..max_iters {
            // Gradient of the smooth part.
            let mut g0 = 0.0;
            let mut g = vec![0.0f64; p];
            for (row, &yi) in xs.iter().zip(&self.y) {
                let eta: f64 = intercept
                    + row
                        .iter()
                        .enumerate()
                        .map(|(j, x)| x * (plus[j] - minus[j]))
                        .sum::<f64>();
                let r = 1.0 / (1.0 + (-eta).exp()) - yi;
                g0 += r;
                for (gj, xj) in g.iter_mut().zip(row) {
                    *gj += r * xj;
                }
            }
            g0 /= nf;
            for gj in g.iter_mut() {
                *gj /= nf;
            }

            // Backtracking projected step.
            loop {
                let cand_intercept = intercept - step * g0;
                let cand_plus: Vec<f64> = plus
                    .iter()
                    .zip(&g)
                    .map(|(v, gj)| (v - step * (gj + self.lambda)).max(0.0))
                    .collect();
                let cand_minus: Vec<f64> = minus
                    .iter()
                    .zip(&g)
                    .map(|(v, gj)| (v - step * (-gj + self.lambda)).max(0.0))
                    .collect();
                let cand = objective(cand_intercept, &cand_plus, &cand_minus);
                if cand <= current + 1e-15 || step < 1e-12 {
                    let moved = (cand_intercept - intercept).abs().max(
                        cand_plus
                            .iter()
                            .zip(&plus)
                            .chain(cand_minus.iter().zip(&minus))
                            .map(|(a, b)| (a - b).abs())
                            .fold(0.0, f64::max),
                    );
                    intercept = cand_intercept;
                    plus = cand_plus;
                    minus = cand_minus;
                    current = cand;
                    if moved < 1e-12 && step >= 1e-6 {
                        let coefs: Vec<f64> = (0..p)
                            .map(|j| (plus[j] - minus[j]) / scales[j])
                            .collect();
                        return (current, intercept, coefs);
                    }
                    step *= 1.3;
                    break;
                }
                step *= 0.5;
            }
        }
        let coefs: Vec<f64> = (0..p).map(|j| (plus[j] - minus[j]) / scales[j]).collect();
        (current, intercept, coefs)
    }

    /// Converts the dense instance into the sparse table format.
    pub fn to_table(&self) -> (CovariateTable, Vec<SubjectId>, Vec<bool>) {
        let subjects: Vec<SubjectId> = (1..=self.x.len() as u64).collect();
        let mut entries: Vec<(SubjectId, CovariateId, f64)> = Vec::new();
        for (i, row) in self.x.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    entries.push((subjects[i], j as u64 + 1, v));
                }
            }
        }
        let cov = CovariateTable::from_entries(subjects.clone(), entries).unwrap();
        // The sparse table infers kind from values; the instance must agree.
        for (j, &continuous) in self.continuous.iter().enumerate() {
            if let Some(meta) = cov.meta(j as u64 + 1) {
                let inferred = meta.kind == CovariateKind::Continuous;
                assert_eq!(
                    inferred, continuous,
                    "instance column {j} kind does not match inference"
                );
            }
        }
        let labels = self.y.iter().map(|&y| y == 1.0).collect();
        (cov, subjects, labels)
    }
}

// ---------------------------------------------------------------------------
// Brute-force Efron partial likelihood.
// ---------------------------------------------------------------------------

/// Direct evaluation of the Efron-corrected log partial likelihood by
/// explicit risk-set scans.
pub fn efron_loglik_brute(
    times: &[u32],
    events: &[bool],
    treated: &[bool],
    strata: &[usize],
    beta: f64,
) -> f64 {
    let n = times.len();
    let mut ll = 0.0;
    let mut seen: Vec<(usize, u32)> = Vec::new();
    for i in 0..n {
        if !events[i] || seen.contains(&(strata[i], times[i])) {
            continue;
        }
        seen.push((strata[i], times[i]));
        let t = times[i];
        let s = strata[i];
        let dead: Vec<usize> = (0..n)
            .filter(|&k| strata[k] == s && times[k] == t && events[k])
            .collect();
        let at_risk: Vec<usize> = (0..n).filter(|&k| strata[k] == s && times[k] >= t).collect();
        let d = dead.len() as f64;
        let sum_risk: f64 = at_risk
            .iter()
            .map(|&k| if treated[k] { beta.exp() } else { 1.0 })
            .sum();
        let sum_dead: f64 = dead
            .iter()
            .map(|&k| if treated[k] { beta.exp() } else { 1.0 })
            .sum();
        for &k in &dead {
            if treated[k] {
                ll += beta;
            }
        }
        for l in 0..dead.len() {
            ll -= (sum_risk - (l as f64 / d) * sum_dead).ln();
        }
    }
    ll
}

/// Two-stage grid search maximizer of the brute-force partial likelihood.
pub fn grid_search_cox(
    times: &[u32],
    events: &[bool],
    treated: &[bool],
    strata: &[usize],
) -> f64 {
    let eval = |b: f64| efron_loglik_brute(times, events, treated, strata, b);
    let mut best = (f64::NEG_INFINITY, 0.0);
    let mut b = -4.0;
    while b <= 4.0 {
        let ll = eval(b);
        if ll > best.0 {
            best = (ll, b);
        }
        b += 1e-3;
    }
    let center = best.1;
    let mut fine = (f64::NEG_INFINITY, center);
    let mut b = center - 2e-3;
    while b <= center + 2e-3 {
        let ll = eval(b);
        if ll > fine.0 {
            fine = (ll, b);
        }
        b += 1e-7;
    }
    fine.1
}

// ---------------------------------------------------------------------------
// Statistics helpers.
// ---------------------------------------------------------------------------

/// One-sample Kolmogorov-Smirnov test against Uniform(0, 1); returns the
/// asymptotic p-value.
pub fn ks_uniform_p(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let upper = (i as f64 + 1.0) / n - x;
        let lower = x - i as f64 / n;
        d = d.max(upper).max(lower);
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        p += 2.0 * (-1.0f64).powi(k + 1) * (-2.0 * kf * kf * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}

fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with midranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let ra = midranks(a);
    let rb = midranks(b);
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    cov / (va.sqrt() * vb.sqrt())
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}
