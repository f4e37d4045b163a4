//! Propensity-score machinery: preference transform, 1:1 caliper matching,
//! quantile stratification, covariate balance, and overlap summaries.

use crate::data::{CovariateId, CovariateKind, CovariateTable, SubjectId};
use crate::quantiles::{assign_bin, bin_boundaries};
use crate::rng::{stream, Purpose};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PropensityError {
    #[error("propensity and preference inputs must lie strictly inside (0, 1)")]
    BoundaryInput,
    #[error("caliper must be positive")]
    InvalidCaliper,
    #[error("input length mismatch")]
    LengthMismatch,
    #[error("both treatment arms must be non-empty")]
    EmptyArm,
}

/// Per-subject propensity state for one population.
///
/// `match_partner` pairs are symmetric and always cross treatment arms;
/// `ps_stratum` is populated only after stratification.
#[derive(Debug, Clone)]
pub struct PsAssignment {
    pub subject_ids: Vec<SubjectId>,
    pub treated: Vec<bool>,
    pub propensity: Vec<f64>,
    pub preference: Vec<f64>,
    pub match_partner: Vec<Option<SubjectId>>,
    pub ps_stratum: Vec<Option<usize>>,
}

impl PsAssignment {
    /// Builds the assignment from raw scores, filling in preference scores
    /// with the observed treated fraction.
    pub fn new(
        subject_ids: Vec<SubjectId>,
        treated: Vec<bool>,
        propensity: Vec<f64>,
    ) -> Result<Self, PropensityError> {
        if subject_ids.len() != treated.len() || subject_ids.len() != propensity.len() {
            return Err(PropensityError::LengthMismatch);
        }
        if propensity.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(PropensityError::BoundaryInput);
        }
        let n = subject_ids.len();
        let treated_fraction = treated.iter().filter(|&&t| t).count() as f64 / n as f64;
        let preference: Vec<f64> = if treated_fraction == 0.0 || treated_fraction == 1.0 {
            // Degenerate population; preference is undefined, fall back to
            // the raw score.
            propensity.clone()
        } else {
            propensity
                .iter()
                .map(|&p| preference_score(p, treated_fraction))
                .collect::<Result<_, _>>()?
        };
        Ok(Self {
            subject_ids,
            treated,
            propensity,
            preference,
            match_partner: vec![None; n],
            ps_stratum: vec![None; n],
        })
    }

    pub fn len(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subject_ids.is_empty()
    }

    /// Subjects retained by matching, both arms.
    pub fn matched_subjects(&self) -> Vec<SubjectId> {
        self.subject_ids
            .iter()
            .zip(&self.match_partner)
            .filter(|(_, p)| p.is_some())
            .map(|(&s, _)| s)
            .collect()
    }
}

/// Preference score: solves `logit(F) = logit(S) - logit(P)` where `P` is
/// the treated fraction, removing prevalence from the overlap diagnostic.
pub fn preference_score(propensity: f64, treated_fraction: f64) -> Result<f64, PropensityError> {
    if !(propensity > 0.0 && propensity < 1.0)
        || !(treated_fraction > 0.0 && treated_fraction < 1.0)
    {
        return Err(PropensityError::BoundaryInput);
    }
    let logit = |x: f64| (x / (1.0 - x)).ln();
    Ok(1.0 / (1.0 + (-(logit(propensity) - logit(treated_fraction))).exp()))
}

/// Fraction of subjects whose preference score falls in [0.3, 0.7].
pub fn equipoise_fraction(preference: &[f64]) -> f64 {
    if preference.is_empty() {
        return 0.0;
    }
    preference
        .iter()
        .filter(|&&f| (0.3..=0.7).contains(&f))
        .count() as f64
        / preference.len() as f64
}

/// Greedy 1:1 nearest-neighbour matching without replacement on the logit
/// propensity scale.
///
/// The caliper is `caliper * SD(logit propensity)` over all subjects.
/// Treated subjects are processed in descending propensity order; distance
/// ties are broken by a seeded shuffle so results are reproducible.
pub fn match_caliper(
    ps: &mut PsAssignment,
    caliper: f64,
    seed: u64,
) -> Result<(), PropensityError> {
    if !(caliper > 0.0) || !caliper.is_finite() {
        return Err(PropensityError::InvalidCaliper);
    }
    let n = ps.len();
    ps.match_partner = vec![None; n];
    if n == 0 {
        return Ok(());
    }
    let logits: Vec<f64> = ps.propensity.iter().map(|&p| (p / (1.0 - p)).ln()).collect();
    let mean = logits.iter().sum::<f64>() / n as f64;
    let sd = (logits.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let width = caliper * sd;

    // Seeded tiebreak ranks, one per subject.
    let tiebreak: Vec<u64> = ps
        .subject_ids
        .iter()
        .map(|&s| stream(seed, s, Purpose::Matching, 0).random())
        .collect();

    let mut treated_idx: Vec<usize> = (0..n).filter(|&i| ps.treated[i]).collect();
    // Descending propensity, then seeded rank.
    treated_idx.sort_by(|&a, &b| {
        ps.propensity[b]
            .partial_cmp(&ps.propensity[a])
            .unwrap()
            .then(tiebreak[a].cmp(&tiebreak[b]))
            .then(ps.subject_ids[a].cmp(&ps.subject_ids[b]))
    });

    // Comparators keyed by (logit, seeded rank, id) for nearest-unmatched
    // lookups with O(log n) removal.
    let mut pool: std::collections::BTreeMap<(OrderedBits, u64, SubjectId), usize> =
        std::collections::BTreeMap::new();
    for i in (0..n).filter(|&i| !ps.treated[i]) {
        pool.insert((to_bits(logits[i]), tiebreak[i], ps.subject_ids[i]), i);
    }

    for &t in &treated_idx {
        if pool.is_empty() {
            break;
        }
        let key = (to_bits(logits[t]), 0, 0);
        let below = pool.range(..key).next_back().map(|(&k, &v)| (k, v));
        let above = pool.range(key..).next().map(|(&k, &v)| (k, v));
        let dist = |i: usize| (logits[i] - logits[t]).abs();
        let candidate = match (below, above) {
            (None, None) => None,
            (Some((k, v)), None) | (None, Some((k, v))) => Some((k, v)),
            (Some((kb, vb)), Some((ka, va))) => {
                let (db, da) = (dist(vb), dist(va));
                if db < da {
                    Some((kb, vb))
                } else if da < db {
                    Some((ka, va))
                } else if (tiebreak[vb], ps.subject_ids[vb]) <= (tiebreak[va], ps.subject_ids[va]) {
                    Some((kb, vb))
                } else {
                    Some((ka, va))
                }
            }
        };
        if let Some((key, c)) = candidate {
            if dist(c) <= width {
                ps.match_partner[t] = Some(ps.subject_ids[c]);
                ps.match_partner[c] = Some(ps.subject_ids[t]);
                pool.remove(&key);
            }
        }
    }
    Ok(())
}

type OrderedBits = u64;

/// Total order on finite f64 values via sign-flipped bit patterns.
fn to_bits(x: f64) -> OrderedBits {
    let bits = x.to_bits();
    if x >= 0.0 {
        bits ^ 0x8000_0000_0000_0000
    } else {
        !bits
    }
}

/// Outcome of quantile stratification.
#[derive(Debug, Clone)]
pub struct PsStrata {
    /// 1-based stratum per subject.
    pub labels: Vec<usize>,
    pub boundaries: Vec<f64>,
    /// Number of strata actually produced.
    pub n_strata: usize,
    /// Set when ties forced fewer strata than requested.
    pub collapsed: bool,
}

/// Stratifies `values` into `k` quantile bins of `reference` (boundary ties
/// to the lower stratum). Collapses with a warning flag when there are too
/// few distinct values.
pub fn stratify_ps_on(reference: &[f64], values: &[f64], k: usize) -> PsStrata {
    assert!(k >= 1, "stratum count must be >= 1");
    let boundaries = bin_boundaries(reference, k);
    let n_strata = boundaries.len() + 1;
    let labels = values.iter().map(|&v| assign_bin(v, &boundaries)).collect();
    PsStrata {
        labels,
        boundaries,
        n_strata,
        collapsed: n_strata < k,
    }
}

/// Quantile stratification of a score vector on its own distribution.
pub fn stratify_ps(values: &[f64], k: usize) -> PsStrata {
    stratify_ps_on(values, values, k)
}

/// Standardized mean difference per covariate, before and after adjustment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceRow {
    pub covariate_id: CovariateId,
    pub name: String,
    pub smd_before: f64,
    pub smd_after: f64,
}

/// How the "after" side of the balance table is computed.
pub enum Adjustment<'a> {
    /// No adjustment: after equals before.
    None,
    /// Matched subset of the same population.
    MatchedSet(&'a [SubjectId]),
    /// Stratum labels aligned with the population; within-stratum means are
    /// combined with the given per-stratum weights.
    Strata {
        labels: &'a [usize],
        n_strata: usize,
        weights: &'a [f64],
    },
}

struct ArmMoments {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    n: f64,
}

impl ArmMoments {
    fn new(p: usize) -> Self {
        ArmMoments {
            sum: vec![0.0; p],
            sum_sq: vec![0.0; p],
            n: 0.0,
        }
    }
}

fn smd_from(
    mean_t: f64,
    var_t: f64,
    mean_c: f64,
    var_c: f64,
) -> f64 {
    let pooled = ((var_t + var_c) / 2.0).max(0.0);
    let diff = mean_t - mean_c;
    if pooled > 0.0 {
        diff / pooled.sqrt()
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

/// Computes per-covariate standardized mean differences (treated minus
/// comparator over the pooled SD). Binary covariates use `p(1-p)` variance;
/// continuous covariates use the sample variance.
pub fn compute_balance(
    cov: &CovariateTable,
    subjects: &[SubjectId],
    treated: &[bool],
    adjustment: Adjustment,
) -> Result<Vec<BalanceRow>, PropensityError> {
    if subjects.len() != treated.len() {
        return Err(PropensityError::LengthMismatch);
    }
    let n_t = treated.iter().filter(|&&t| t).count();
    if n_t == 0 || n_t == subjects.len() {
        return Err(PropensityError::EmptyArm);
    }
    let ids: Vec<CovariateId> = cov.covariate_meta().keys().copied().collect();
    let pos: HashMap<CovariateId, usize> =
        ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let p = ids.len();

    let smds = |keep: &dyn Fn(usize) -> bool| -> Vec<f64> {
        let mut arm_t = ArmMoments::new(p);
        let mut arm_c = ArmMoments::new(p);
        for (i, &s) in subjects.iter().enumerate() {
            if !keep(i) {
                continue;
            }
            let arm = if treated[i] { &mut arm_t } else { &mut arm_c };
            arm.n += 1.0;
            for &(c, v) in cov.row(s).unwrap_or(&[]) {
                let j = pos[&c];
                arm.sum[j] += v;
                arm.sum_sq[j] += v * v;
            }
        }
        moments_to_smds(cov, &ids, &arm_t, &arm_c)
    };

    let before = smds(&|_| true);
    let after = match adjustment {
        Adjustment::None => before.clone(),
        Adjustment::MatchedSet(matched) => {
            let matched: std::collections::HashSet<SubjectId> =
                matched.iter().copied().collect();
            smds(&|i| matched.contains(&subjects[i]))
        }
        Adjustment::Strata {
            labels,
            n_strata,
            weights,
        } => {
            if labels.len() != subjects.len() || weights.len() != n_strata {
                return Err(PropensityError::LengthMismatch);
            }
            // Stratum-weighted means and second moments per arm.
            let mut per_stratum: Vec<[ArmMoments; 2]> = (0..n_strata)
                .map(|_| [ArmMoments::new(p), ArmMoments::new(p)])
                .collect();
            for (i, &s) in subjects.iter().enumerate() {
                let arm = &mut per_stratum[labels[i] - 1][usize::from(treated[i])];
                arm.n += 1.0;
                for &(c, v) in cov.row(s).unwrap_or(&[]) {
                    let j = pos[&c];
                    arm.sum[j] += v;
                    arm.sum_sq[j] += v * v;
                }
            }
            let mut weighted = [ArmMoments::new(p), ArmMoments::new(p)];
            let total_w: f64 = (0..n_strata)
                .filter(|&s| per_stratum[s][0].n > 0.0 && per_stratum[s][1].n > 0.0)
                .map(|s| weights[s])
                .sum();
            for s in 0..n_strata {
                // Strata missing an arm carry no balance information.
                if per_stratum[s][0].n == 0.0 || per_stratum[s][1].n == 0.0 || total_w <= 0.0 {
                    continue;
                }
                let w = weights[s] / total_w;
                for arm in 0..2 {
                    let m = &per_stratum[s][arm];
                    weighted[arm].n += w;
                    for j in 0..p {
                        weighted[arm].sum[j] += w * m.sum[j] / m.n;
                        weighted[arm].sum_sq[j] += w * m.sum_sq[j] / m.n;
                    }
                }
            }
            moments_to_smds(cov, &ids, &weighted[1], &weighted[0])
        }
    };

    Ok(ids
        .iter()
        .enumerate()
        .map(|(j, &c)| BalanceRow {
            covariate_id: c,
            name: cov.meta(c).map(|m| m.name.clone()).unwrap_or_default(),
            smd_before: before[j],
            smd_after: after[j],
        })
        .collect())
}

fn moments_to_smds(
    cov: &CovariateTable,
    ids: &[CovariateId],
    arm_t: &ArmMoments,
    arm_c: &ArmMoments,
) -> Vec<f64> {
    ids.iter()
        .enumerate()
        .map(|(j, &c)| {
            if arm_t.n <= 0.0 || arm_c.n <= 0.0 {
                return f64::NAN;
            }
            let binary = cov
                .meta(c)
                .is_none_or(|m| m.kind == CovariateKind::Binary);
            let mean_t = arm_t.sum[j] / arm_t.n;
            let mean_c = arm_c.sum[j] / arm_c.n;
            let (var_t, var_c) = if binary {
                (mean_t * (1.0 - mean_t), mean_c * (1.0 - mean_c))
            } else {
                let sample_var = |m: &ArmMoments| {
                    if m.n > 1.0 {
                        let mean = m.sum[j] / m.n;
                        ((m.sum_sq[j] / m.n - mean * mean) * m.n / (m.n - 1.0)).max(0.0)
                    } else {
                        0.0
                    }
                };
                (sample_var(arm_t), sample_var(arm_c))
            };
            smd_from(mean_t, var_t, mean_c, var_c)
        })
        .collect()
}

/// Maximum absolute post-adjustment SMD; infinite values propagate.
pub fn max_abs_smd_after(rows: &[BalanceRow]) -> f64 {
    rows.iter()
        .map(|r| r.smd_after.abs())
        .fold(0.0, f64::max)
}

/// Per-stratum weights for combining stratum-level estimates: the stratum's
/// share of the population (ATE) or of its treated subjects (ATT).
pub fn stratum_weights(
    labels: &[usize],
    treated: &[bool],
    n_strata: usize,
    att: bool,
) -> Vec<f64> {
    let mut counts = vec![0.0; n_strata];
    for (i, &s) in labels.iter().enumerate() {
        if !att || treated[i] {
            counts[s - 1] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    if total > 0.0 {
        for c in counts.iter_mut() {
            *c /= total;
        }
    }
    counts
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreferenceHistogram {
    pub bin_edges: Vec<f64>,
    pub treated_density: Vec<f64>,
    pub comparator_density: Vec<f64>,
}

/// Fixed-width preference-score histogram (density scale) per arm, for
/// overlap plots.
pub fn preference_histogram(preference: &[f64], treated: &[bool], bins: usize) -> PreferenceHistogram {
    let bins = bins.max(1);
    let edges: Vec<f64> = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    let mut counts = [vec![0.0; bins], vec![0.0; bins]];
    let mut totals = [0.0f64, 0.0f64];
    for (&f, &t) in preference.iter().zip(treated) {
        let b = ((f * bins as f64) as usize).min(bins - 1);
        counts[usize::from(t)][b] += 1.0;
        totals[usize::from(t)] += 1.0;
    }
    let width = 1.0 / bins as f64;
    for arm in 0..2 {
        if totals[arm] > 0.0 {
            for c in counts[arm].iter_mut() {
                *c /= totals[arm] * width;
            }
        }
    }
    PreferenceHistogram {
        bin_edges: edges,
        comparator_density: std::mem::take(&mut counts[0]),
        treated_density: std::mem::take(&mut counts[1]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn preference_equals_propensity_at_half_prevalence() {
        for s in [0.1, 0.37, 0.5, 0.93] {
            assert_abs_diff_eq!(preference_score(s, 0.5).unwrap(), s, epsilon = 1e-12);
        }
    }

    #[test]
    fn preference_worked_example() {
        // logit(F) = logit(0.8) - logit(0.25) = ln 4 + ln 3 = ln 12.
        assert_abs_diff_eq!(
            preference_score(0.8, 0.25).unwrap(),
            12.0 / 13.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn preference_rejects_boundaries() {
        assert!(preference_score(0.0, 0.5).is_err());
        assert!(preference_score(0.5, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn preference_monotone_in_propensity(
            s1 in 0.01f64..0.99,
            s2 in 0.01f64..0.99,
            p in 0.05f64..0.95,
        ) {
            prop_assume!(s1 < s2);
            let f1 = preference_score(s1, p).unwrap();
            let f2 = preference_score(s2, p).unwrap();
            prop_assert!(f1 < f2);
        }

        #[test]
        fn preference_preserves_ranking(
            scores in proptest::collection::vec(0.01f64..0.99, 2..40),
            p in 0.05f64..0.95,
        ) {
            let prefs: Vec<f64> = scores
                .iter()
                .map(|&s| preference_score(s, p).unwrap())
                .collect();
            let rank = |v: &[f64]| {
                let mut idx: Vec<usize> = (0..v.len()).collect();
                idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
                idx
            };
            prop_assert_eq!(rank(&scores), rank(&prefs));
        }
    }

    #[test]
    fn equipoise_examples() {
        assert_abs_diff_eq!(equipoise_fraction(&[0.5; 10]), 1.0);
        let half: Vec<f64> = (0..10).map(|i| if i < 5 { 0.1 } else { 0.5 }).collect();
        assert_abs_diff_eq!(equipoise_fraction(&half), 0.5);
    }

    fn assignment(treated: Vec<bool>, propensity: Vec<f64>) -> PsAssignment {
        let ids: Vec<SubjectId> = (1..=treated.len() as u64).collect();
        PsAssignment::new(ids, treated, propensity).unwrap()
    }

    #[test]
    fn identical_scores_equal_arms_all_matched() {
        let mut ps = assignment(
            vec![true, true, false, false],
            vec![0.4, 0.4, 0.4, 0.4],
        );
        match_caliper(&mut ps, 0.2, 1).unwrap();
        assert!(ps.match_partner.iter().all(|p| p.is_some()));
    }

    #[test]
    fn empty_comparator_gives_zero_matches() {
        let mut ps = assignment(vec![true, true], vec![0.3, 0.6]);
        match_caliper(&mut ps, 0.2, 1).unwrap();
        assert!(ps.match_partner.iter().all(|p| p.is_none()));
    }

    #[test]
    fn caliper_excludes_distant_pairs() {
        // Treated logits {0, 3}; comparator logits {0.01, 10}. With a
        // caliper width of 1 only the (0, 0.01) pair is feasible.
        let logit_inv = |l: f64| 1.0 / (1.0 + f64::exp(-l));
        let props = vec![
            logit_inv(0.0),
            logit_inv(3.0),
            logit_inv(0.01),
            logit_inv(10.0),
        ];
        let mut ps = assignment(vec![true, true, false, false], props.clone());
        // Choose the configured caliper so that caliper * SD(logit) == 1.
        let logits = [0.0, 3.0, 0.01, 10.0];
        let mean: f64 = logits.iter().sum::<f64>() / 4.0;
        let sd = (logits.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        match_caliper(&mut ps, 1.0 / sd, 1).unwrap();
        assert_eq!(ps.match_partner[0], Some(3));
        assert_eq!(ps.match_partner[2], Some(1));
        assert_eq!(ps.match_partner[1], None);
        assert_eq!(ps.match_partner[3], None);
    }

    #[test]
    fn matching_is_symmetric_one_to_one_and_within_caliper() {
        let mut rng = crate::rng::stream(3, 0, Purpose::Matching, 9);
        let n = 400;
        let treated: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.4).collect();
        let propensity: Vec<f64> = treated
            .iter()
            .map(|&t| {
                let base: f64 = rng.random();
                (0.15 + 0.7 * base * if t { 1.1 } else { 0.9 }).clamp(0.01, 0.99)
            })
            .collect();
        let mut ps = assignment(treated, propensity);
        match_caliper(&mut ps, 0.2, 5).unwrap();

        let ids = ps.subject_ids.clone();
        let index: HashMap<SubjectId, usize> =
            ids.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let logits: Vec<f64> = ps.propensity.iter().map(|&p| (p / (1.0 - p)).ln()).collect();
        let mean = logits.iter().sum::<f64>() / n as f64;
        let width =
            0.2 * (logits.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let mut seen = 0;
        for i in 0..n {
            if let Some(partner) = ps.match_partner[i] {
                seen += 1;
                let j = index[&partner];
                assert_eq!(ps.match_partner[j], Some(ids[i]), "symmetry");
                assert_ne!(ps.treated[i], ps.treated[j], "pairs cross arms");
                assert!((logits[i] - logits[j]).abs() <= width + 1e-12);
            }
        }
        assert!(seen > 0, "at least some pairs expected");
        assert_eq!(seen % 2, 0);
    }

    #[test]
    fn stratify_single_stratum() {
        let s = stratify_ps(&[0.1, 0.5, 0.9], 1);
        assert_eq!(s.labels, vec![1, 1, 1]);
        assert!(!s.collapsed);
    }

    #[test]
    fn stratify_ten_values_five_strata() {
        let values: Vec<f64> = (1..=10).map(|i| i as f64 / 11.0).collect();
        let s = stratify_ps(&values, 5);
        let mut sizes = [0; 5];
        for &l in &s.labels {
            sizes[l - 1] += 1;
        }
        assert_eq!(sizes, [2, 2, 2, 2, 2]);
    }

    #[test]
    fn stratify_collapses_identical_values() {
        let s = stratify_ps(&[0.4; 12], 5);
        assert!(s.collapsed);
        assert_eq!(s.n_strata, 1);
        assert!(s.labels.iter().all(|&l| l == 1));
    }

    #[test]
    fn stratify_is_monotone_in_score() {
        let values = [0.2, 0.8, 0.3, 0.5, 0.9, 0.1, 0.6, 0.7];
        let s = stratify_ps(&values, 4);
        for i in 0..values.len() {
            for j in 0..values.len() {
                if values[i] < values[j] {
                    assert!(s.labels[i] <= s.labels[j]);
                }
            }
        }
    }

    fn balance_fixture() -> (CovariateTable, Vec<SubjectId>, Vec<bool>) {
        // Treated prevalence of covariate 1 is 0.3 (3/10), comparator 0.2
        // (2/10).
        let mut entries = Vec::new();
        let subjects: Vec<SubjectId> = (1..=20).collect();
        let treated: Vec<bool> = (0..20).map(|i| i < 10).collect();
        for s in 1..=3u64 {
            entries.push((s, 1, 1.0));
        }
        for s in 11..=12u64 {
            entries.push((s, 1, 1.0));
        }
        let cov = CovariateTable::from_entries(subjects.clone(), entries).unwrap();
        (cov, subjects, treated)
    }

    #[test]
    fn smd_closed_form() {
        let (cov, subjects, treated) = balance_fixture();
        let rows = compute_balance(&cov, &subjects, &treated, Adjustment::None).unwrap();
        let expected = 0.1 / (0.185f64).sqrt();
        assert_abs_diff_eq!(rows[0].smd_before, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(rows[0].smd_after, expected, epsilon = 1e-12);
    }

    #[test]
    fn identical_arms_have_zero_smd() {
        let subjects: Vec<SubjectId> = (1..=8).collect();
        let treated = vec![true, true, false, false, true, true, false, false];
        let entries = vec![
            (1, 1, 1.0),
            (3, 1, 1.0),
            (5, 1, 1.0),
            (7, 1, 1.0),
        ];
        let cov = CovariateTable::from_entries(subjects.clone(), entries).unwrap();
        let rows = compute_balance(&cov, &subjects, &treated, Adjustment::None).unwrap();
        assert_eq!(rows[0].smd_before, 0.0);
    }

    #[test]
    fn zero_variance_different_means_is_infinite() {
        let subjects: Vec<SubjectId> = (1..=4).collect();
        let treated = vec![true, true, false, false];
        let entries = vec![(1, 1, 1.0), (2, 1, 1.0)];
        let cov = CovariateTable::from_entries(subjects.clone(), entries).unwrap();
        let rows = compute_balance(&cov, &subjects, &treated, Adjustment::None).unwrap();
        assert!(rows[0].smd_before.is_infinite() && rows[0].smd_before > 0.0);
    }

    #[test]
    fn att_stratum_weights_use_treated_counts() {
        let labels = vec![1, 1, 2, 2, 2];
        let treated = vec![true, false, true, true, false];
        let w = stratum_weights(&labels, &treated, 2, true);
        assert_abs_diff_eq!(w[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 2.0 / 3.0, epsilon = 1e-12);
        let w_ate = stratum_weights(&labels, &treated, 2, false);
        assert_abs_diff_eq!(w_ate[0], 0.4, epsilon = 1e-12);
    }
}
