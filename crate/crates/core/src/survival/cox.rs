//! Stratified Cox partial likelihood for a single binary covariate.
//!
//! Day-granularity data ties heavily, so Efron's correction is the default;
//! Breslow is available behind the settings flag. With one binary covariate
//! the likelihood only depends on per-event-time risk-set and event counts
//! split by arm, which are precomputed once so Newton iterations are cheap.

use crate::data::TieMethod;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoxError {
    #[error("no contrast: no stratum has an event with both arms at risk")]
    NoContrast,
    #[error("non-convergence: {0}")]
    NonConvergence(String),
    #[error("input length mismatch")]
    LengthMismatch,
}

/// Risk-set summary at one event time.
#[derive(Debug, Clone, Copy)]
struct EventBlock {
    /// Events at this time, split by arm.
    d0: f64,
    d1: f64,
    /// Subjects at risk, split by arm.
    n0: f64,
    n1: f64,
}

fn build_blocks(
    times: &[u32],
    events: &[bool],
    treated: &[bool],
    strata: &[usize],
) -> Result<Vec<EventBlock>, CoxError> {
    if times.len() != events.len() || times.len() != treated.len() || times.len() != strata.len()
    {
        return Err(CoxError::LengthMismatch);
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_unstable_by_key(|&i| (strata[i], std::cmp::Reverse(times[i])));
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let stratum = strata[order[i]];
        let (mut n0, mut n1) = (0.0, 0.0);
        while i < order.len() && strata[order[i]] == stratum {
            let time = times[order[i]];
            let (mut d0, mut d1) = (0.0, 0.0);
            // Everyone with this follow-up time enters the risk set before
            // the events at this time are processed.
            while i < order.len() && strata[order[i]] == stratum && times[order[i]] == time {
                let idx = order[i];
                if treated[idx] {
                    n1 += 1.0;
                } else {
                    n0 += 1.0;
                }
                if events[idx] {
                    if treated[idx] {
                        d1 += 1.0;
                    } else {
                        d0 += 1.0;
                    }
                }
                i += 1;
            }
            if d0 + d1 > 0.0 {
                blocks.push(EventBlock { d0, d1, n0, n1 });
            }
        }
    }
    Ok(blocks)
}

/// Log partial likelihood with gradient and Hessian at `beta`.
fn loglik_blocks(blocks: &[EventBlock], beta: f64, ties: TieMethod) -> (f64, f64, f64) {
    let ebeta = beta.exp();
    let (mut ll, mut grad, mut hess) = (0.0, 0.0, 0.0);
    for b in blocks {
        let d = b.d0 + b.d1;
        let a = b.n0 + b.n1 * ebeta;
        let a1 = b.n1 * ebeta;
        let (bb, b1) = (b.d0 + b.d1 * ebeta, b.d1 * ebeta);
        ll += b.d1 * beta;
        let terms = d as usize;
        for l in 0..terms {
            let frac = match ties {
                TieMethod::Efron => l as f64 / d,
                TieMethod::Breslow => 0.0,
            };
            let denom = a - frac * bb;
            let c = a1 - frac * b1;
            ll -= denom.ln();
            let ratio = c / denom;
            grad -= ratio;
            hess -= ratio - ratio * ratio;
        }
        grad += b.d1;
    }
    (ll, grad, hess)
}

/// Log partial likelihood (value, gradient, Hessian) for a single binary
/// treatment covariate, stratified, at an arbitrary coefficient.
pub fn partial_loglik(
    times: &[u32],
    events: &[bool],
    treated: &[bool],
    strata: &[usize],
    beta: f64,
    ties: TieMethod,
) -> Result<(f64, f64, f64), CoxError> {
    let blocks = build_blocks(times, events, treated, strata)?;
    Ok(loglik_blocks(&blocks, beta, ties))
}

#[derive(Debug, Clone, Copy)]
pub struct CoxFit {
    pub log_hr: f64,
    pub se: f64,
    pub loglik: f64,
    pub n_events: usize,
}

impl CoxFit {
    pub fn hr(&self) -> f64 {
        self.log_hr.exp()
    }

    /// 95% Wald interval on the hazard-ratio scale.
    pub fn hr_ci95(&self) -> (f64, f64) {
        let z = 1.959963984540054;
        (
            (self.log_hr - z * self.se).exp(),
            (self.log_hr + z * self.se).exp(),
        )
    }
}

/// Newton maximization of the stratified partial likelihood.
///
/// Strata with a single arm or no events contribute nothing. Errors: no
/// informative stratum at all, or a monotone likelihood (all informative
/// events in one arm).
pub fn fit_cox(
    times: &[u32],
    events: &[bool],
    treated: &[bool],
    strata: &[usize],
    ties: TieMethod,
) -> Result<CoxFit, CoxError> {
    let blocks = build_blocks(times, events, treated, strata)?;
    let informative: Vec<EventBlock> = blocks
        .iter()
        .copied()
        .filter(|b| b.n0 > 0.0 && b.n1 > 0.0)
        .collect();
    if informative.is_empty() {
        return Err(CoxError::NoContrast);
    }
    let d1: f64 = informative.iter().map(|b| b.d1).sum();
    let d: f64 = informative.iter().map(|b| b.d0 + b.d1).sum();
    if d1 == 0.0 || d1 == d {
        return Err(CoxError::NonConvergence(
            "monotone likelihood: all informative events in one arm".into(),
        ));
    }

    let mut beta = 0.0;
    let (mut ll, mut grad, mut hess) = loglik_blocks(&informative, beta, ties);
    for _ in 0..100 {
        if hess >= 0.0 {
            return Err(CoxError::NonConvergence("non-concave likelihood".into()));
        }
        let mut step = -grad / hess;
        // Step halving keeps the likelihood monotone.
        let mut halvings = 0;
        loop {
            let candidate = beta + step;
            let (new_ll, new_grad, new_hess) = loglik_blocks(&informative, candidate, ties);
            if new_ll >= ll - 1e-12 || halvings >= 30 {
                beta = candidate;
                (ll, grad, hess) = (new_ll, new_grad, new_hess);
                break;
            }
            step /= 2.0;
            halvings += 1;
        }
        if beta.abs() > 25.0 {
            return Err(CoxError::NonConvergence(
                "coefficient diverged".into(),
            ));
        }
        if grad.abs() < 1e-12 || (-grad / hess).abs() < 1e-11 {
            break;
        }
    }
    if hess >= 0.0 {
        return Err(CoxError::NonConvergence("non-concave likelihood".into()));
    }
    Ok(CoxFit {
        log_hr: beta,
        se: (-1.0 / hess).sqrt(),
        loglik: ll,
        n_events: d as usize,
    })
}
