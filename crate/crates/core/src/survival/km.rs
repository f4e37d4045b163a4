//! Kaplan-Meier product-limit estimator with Greenwood variance.

/// Step-function survival estimate. Steps occur only at event times;
/// survival is 1 before the first event.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    pub event_times: Vec<u32>,
    pub survival: Vec<f64>,
    pub greenwood_var: Vec<f64>,
}

impl SurvivalCurve {
    pub fn survival_at(&self, day: u32) -> f64 {
        match self.event_times.partition_point(|&t| t <= day) {
            0 => 1.0,
            k => self.survival[k - 1],
        }
    }

    pub fn variance_at(&self, day: u32) -> f64 {
        match self.event_times.partition_point(|&t| t <= day) {
            0 => 0.0,
            k => self.greenwood_var[k - 1],
        }
    }
}

/// Product-limit estimate over per-subject follow-up times and event flags.
///
/// When the risk set is exhausted by events (survival reaches zero) the
/// Greenwood sum is undefined; the variance is reported as 0 there.
pub fn km_curve(times: &[u32], events: &[bool]) -> SurvivalCurve {
    assert_eq!(times.len(), events.len());
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_unstable_by_key(|&i| times[i]);

    let mut curve = SurvivalCurve {
        event_times: Vec::new(),
        survival: Vec::new(),
        greenwood_var: Vec::new(),
    };
    let mut at_risk = times.len() as f64;
    let mut survival = 1.0;
    let mut greenwood_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut d = 0.0;
        let mut removed = 0.0;
        while i < order.len() && times[order[i]] == t {
            removed += 1.0;
            if events[order[i]] {
                d += 1.0;
            }
            i += 1;
        }
        if d > 0.0 {
            survival *= 1.0 - d / at_risk;
            let var = if at_risk > d {
                greenwood_sum += d / (at_risk * (at_risk - d));
                survival * survival * greenwood_sum
            } else {
                0.0
            };
            curve.event_times.push(t);
            curve.survival.push(survival);
            curve.greenwood_var.push(var);
        }
        at_risk -= removed;
    }
    curve
}
