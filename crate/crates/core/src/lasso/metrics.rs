//! Discrimination and calibration metrics for fitted probability models.

use super::{logistic, LassoError};
use serde::{Deserialize, Serialize};

/// Concordance statistic with a 95% confidence interval from the asymptotic
/// rank-variance (DeLong) method.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CStatistic {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationLabel {
    Matched,
    Treatment,
    Comparator,
    Entire,
}

impl PopulationLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PopulationLabel::Matched => "matched",
            PopulationLabel::Treatment => "treatment",
            PopulationLabel::Comparator => "comparator",
            PopulationLabel::Entire => "entire",
        }
    }
}

/// Model performance in one evaluation population. Metrics are absent when
/// the population cannot support them (single-class labels, degenerate
/// predictions); `note` says why.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerformanceSummary {
    pub population: PopulationLabel,
    pub n: usize,
    pub n_events: usize,
    pub c_statistic: Option<CStatistic>,
    pub calibration_intercept: Option<f64>,
    pub calibration_slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Probability that a random positive outranks a random negative, ties
/// counted 1/2.
pub fn c_statistic(pred: &[f64], labels: &[bool]) -> Result<CStatistic, LassoError> {
    if pred.len() != labels.len() {
        return Err(LassoError::LengthMismatch("labels"));
    }
    if pred.iter().any(|p| !p.is_finite()) {
        return Err(LassoError::NonFinite("predictions"));
    }
    let mut pos: Vec<f64> = Vec::new();
    let mut neg: Vec<f64> = Vec::new();
    for (&p, &l) in pred.iter().zip(labels) {
        if l {
            pos.push(p);
        } else {
            neg.push(p);
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(LassoError::NoContrast);
    }
    let mut pos_sorted = pos.clone();
    let mut neg_sorted = neg.clone();
    pos_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    neg_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // Placement of each positive among the negatives and vice versa.
    let placement = |sorted: &[f64], v: f64, above: bool| -> f64 {
        let below = sorted.partition_point(|&x| x < v);
        let not_above = sorted.partition_point(|&x| x <= v);
        let ties = not_above - below;
        let count = if above {
            sorted.len() - not_above
        } else {
            below
        };
        (count as f64 + 0.5 * ties as f64) / sorted.len() as f64
    };
    let v10: Vec<f64> = pos.iter().map(|&p| placement(&neg_sorted, p, false)).collect();
    let v01: Vec<f64> = neg.iter().map(|&q| placement(&pos_sorted, q, true)).collect();
    let auc = v10.iter().sum::<f64>() / v10.len() as f64;

    let var_of = |v: &[f64], mean: f64| -> f64 {
        if v.len() < 2 {
            return 0.0;
        }
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let s10 = var_of(&v10, auc);
    let s01 = var_of(&v01, auc);
    let se = (s10 / pos.len() as f64 + s01 / neg.len() as f64).sqrt();
    let z = 1.959963984540054;
    Ok(CStatistic {
        estimate: auc,
        lo: (auc - z * se).max(0.0).min(auc),
        hi: (auc + z * se).min(1.0).max(auc),
    })
}

/// Calibration intercept and slope.
///
/// Slope: coefficient of `logit(pred)` in a univariate logistic refit.
/// Intercept: intercept of an offset refit with the slope fixed at 1.
pub fn calibration_metrics(pred: &[f64], labels: &[bool]) -> Result<(f64, f64), LassoError> {
    if pred.len() != labels.len() {
        return Err(LassoError::LengthMismatch("labels"));
    }
    if pred.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(LassoError::NonFinite("predictions outside (0, 1)"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(LassoError::NoContrast);
    }
    let u: Vec<f64> = pred.iter().map(|&p| (p / (1.0 - p)).ln()).collect();
    let spread = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - u.iter().cloned().fold(f64::INFINITY, f64::min);
    if spread < 1e-12 {
        return Err(LassoError::DegeneratePredictions);
    }
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();

    // Two-parameter Newton for (a, b) in logit(P(y=1)) = a + b*u.
    let (mut a, mut b) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mut g = [0.0f64; 2];
        let mut h = [[0.0f64; 2]; 2];
        for (&ui, &yi) in u.iter().zip(&y) {
            let p = logistic(a + b * ui);
            let r = p - yi;
            let v = (p * (1.0 - p)).max(1e-12);
            g[0] += r;
            g[1] += r * ui;
            h[0][0] += v;
            h[0][1] += v * ui;
            h[1][1] += v * ui * ui;
        }
        h[1][0] = h[0][1];
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        if det.abs() < 1e-300 {
            return Err(LassoError::DegeneratePredictions);
        }
        let da = (h[1][1] * g[0] - h[0][1] * g[1]) / det;
        let db = (h[0][0] * g[1] - h[1][0] * g[0]) / det;
        a -= da;
        b -= db;
        if !a.is_finite() || !b.is_finite() {
            return Err(LassoError::NonConvergence);
        }
        if da.abs().max(db.abs()) < 1e-10 {
            break;
        }
    }
    let slope = b;

    // One-parameter Newton with u as an offset.
    let mut c = 0.0f64;
    for _ in 0..200 {
        let mut g = 0.0;
        let mut hh = 0.0;
        for (&ui, &yi) in u.iter().zip(&y) {
            let p = logistic(c + ui);
            g += p - yi;
            hh += (p * (1.0 - p)).max(1e-12);
        }
        let dc = g / hh;
        c -= dc;
        if !c.is_finite() {
            return Err(LassoError::NonConvergence);
        }
        if dc.abs() < 1e-10 {
            break;
        }
    }
    Ok((c, slope))
}
