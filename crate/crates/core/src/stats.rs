//! Small descriptive-statistics helpers shared by diagnostics and analysis.

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation with the `n - 1` denominator; 0 for fewer than
/// two values.
pub fn sample_sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    let ss: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    (ss / (x.len() - 1) as f64).sqrt()
}

/// Quantile of already sorted data by linear interpolation between order
/// statistics at position `p (n - 1)`. Panics on empty input.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let w = h - lo as f64;
    if w == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + w * (sorted[hi] - sorted[lo])
    }
}

pub fn quantile(x: &[f64], p: f64) -> f64 {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_one_to_5000() {
        let x: Vec<f64> = (1..=5000).map(f64::from).collect();
        assert_eq!(quantile(&x, 0.5), 2500.5);
        assert_eq!(quantile(&x, 0.0), 1.0);
        assert_eq!(quantile(&x, 1.0), 5000.0);
    }

    #[test]
    fn interpolates_between_order_statistics() {
        let x = [3.0, 1.0, 2.0, 4.0];
        assert!((quantile(&x, 0.025) - 1.075).abs() < 1e-12);
        assert!((quantile(&x, 0.975) - 3.925).abs() < 1e-12);
    }

    #[test]
    fn sd_uses_n_minus_one() {
        assert_eq!(sample_sd(&[1.0, 3.0]), 2f64.sqrt());
        assert_eq!(sample_sd(&[5.0]), 0.0);
    }
}
