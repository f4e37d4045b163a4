//! Quantile-bin machinery shared by risk stratification, propensity
//! stratification, and the simulator's truth bookkeeping.
//!
//! Convention used everywhere: the boundary for cumulative probability
//! `i/k` is the `ceil(n * i / k)`-th order statistic (1-based), and a value
//! exactly on a boundary belongs to the lower bin.

/// Boundaries cutting `values` into `k` bins: `k - 1` cutpoints, deduplicated
/// when ties make some bins empty.
///
/// Returns the deduplicated cutpoints; fewer than `k - 1` cutpoints means the
/// requested bins collapsed.
pub fn bin_boundaries(values: &[f64], k: usize) -> Vec<f64> {
    assert!(k >= 1, "bin count must be at least 1");
    if k == 1 || values.is_empty() {
        return Vec::new();
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in quantile input"));
    let n = sorted.len();
    let mut bounds = Vec::with_capacity(k - 1);
    for i in 1..k {
        // ceil(n * i / k) as 1-based order statistic
        let rank = (n * i).div_ceil(k);
        let b = sorted[rank - 1];
        if bounds.last().is_none_or(|&prev| b > prev) {
            bounds.push(b);
        }
    }
    // A boundary equal to the maximum would leave the top bin empty.
    let max = *sorted.last().unwrap();
    while bounds.last().is_some_and(|&b| b >= max) {
        bounds.pop();
    }
    bounds
}

/// Bin index in `1..=boundaries.len() + 1`. Values on a boundary go to the
/// lower bin.
pub fn assign_bin(value: f64, boundaries: &[f64]) -> usize {
    1 + boundaries.iter().filter(|&&b| value > b).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_distinct_values_five_bins_two_each() {
        let values: Vec<f64> = (1..=10).map(f64::from).collect();
        let bounds = bin_boundaries(&values, 5);
        assert_eq!(bounds, vec![2.0, 4.0, 6.0, 8.0]);
        let mut sizes = [0usize; 5];
        for &v in &values {
            sizes[assign_bin(v, &bounds) - 1] += 1;
        }
        assert_eq!(sizes, [2, 2, 2, 2, 2]);
    }

    #[test]
    fn boundary_ties_go_to_lower_bin() {
        let bounds = vec![2.0, 4.0];
        assert_eq!(assign_bin(2.0, &bounds), 1);
        assert_eq!(assign_bin(2.0001, &bounds), 2);
        assert_eq!(assign_bin(4.0, &bounds), 2);
        assert_eq!(assign_bin(5.0, &bounds), 3);
    }

    #[test]
    fn identical_values_collapse_to_one_bin() {
        let values = vec![3.0; 8];
        let bounds = bin_boundaries(&values, 4);
        assert!(bounds.is_empty());
        assert_eq!(assign_bin(3.0, &bounds), 1);
    }

    #[test]
    fn single_bin_has_no_boundaries() {
        assert!(bin_boundaries(&[1.0, 2.0, 3.0], 1).is_empty());
    }

    #[test]
    fn uneven_sizes_differ_by_at_most_one() {
        for n in 5..40usize {
            for k in 2..=6usize {
                let values: Vec<f64> = (0..n).map(|i| i as f64).collect();
                let bounds = bin_boundaries(&values, k);
                if bounds.len() + 1 < k {
                    continue;
                }
                let mut sizes = vec![0usize; k];
                for &v in &values {
                    sizes[assign_bin(v, &bounds) - 1] += 1;
                }
                let max = sizes.iter().max().unwrap();
                let min = sizes.iter().min().unwrap();
                assert!(max - min <= 1, "n={n} k={k} sizes={sizes:?}");
            }
        }
    }
}
