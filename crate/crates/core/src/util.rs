/// Weighted median of `values`: the smallest value whose cumulative weight
/// reaches half of the total. Falls back to the plain (lower) median when
/// all weights vanish.
pub(crate) fn weighted_median(values: &[f64], weights: &[f64]) -> f64 {
    debug_assert_eq!(values.len(), weights.len());
    debug_assert!(!values.is_empty());
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return values[order[(order.len() - 1) / 2]];
    }
    let half = 0.5 * total;
    let mut acc = 0.0;
    for &k in &order {
        acc += weights[k];
        if acc >= half {
            return values[k];
        }
    }
    values[*order.last().unwrap()]
}

/// Gaussian decay `exp(-x^2 / (2 sigma^2))`; an infinite `sigma` gives 1.
#[inline]
pub(crate) fn gauss(x: f64, sigma: f64) -> f64 {
    if sigma.is_infinite() {
        1.0
    } else {
        (-(x * x) / (2.0 * sigma * sigma)).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_median_cases() {
        assert_eq!(weighted_median(&[3.0, 1.0, 2.0], &[1.0, 1.0, 1.0]), 2.0);
        assert_eq!(weighted_median(&[3.0, 1.0, 2.0], &[10.0, 1.0, 1.0]), 3.0);
        assert_eq!(weighted_median(&[3.0, 1.0, 2.0, 4.0], &[0.0; 4]), 2.0);
        assert_eq!(weighted_median(&[5.0], &[0.0]), 5.0);
    }

    #[test]
    fn gauss_limits() {
        assert_eq!(gauss(0.0, 1.0), 1.0);
        assert_eq!(gauss(1e6, f64::INFINITY), 1.0);
        assert!((gauss(2f64.sqrt(), 1.0) - (-1f64).exp()).abs() < 1e-15);
    }
}
