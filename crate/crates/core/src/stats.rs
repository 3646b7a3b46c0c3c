//! Small numeric helpers shared across modules.

pub(crate) fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(expit(x))` without overflow or cancellation.
pub(crate) fn log_expit(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub(crate) fn normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let r = x - mean;
    (-(r * r) / (2.0 * variance)).exp() / (2.0 * std::f64::consts::PI * variance).sqrt()
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Variance with divisor `n`.
pub(crate) fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Nearest-rank order statistic: the smallest value with at least a
/// fraction `p` of the sample at or below it.
pub(crate) fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = (p * n as f64 - 1e-9).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Weighted Pearson correlation.
#[cfg(test)]
pub(crate) fn weighted_corr(x: &[f64], y: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for ((a, b), c) in x.iter().zip(y).zip(w) {
        sxy += c * (a - mx) * (b - my);
        sxx += c * (a - mx) * (a - mx);
        syy += c * (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_expit_matches_naive_in_safe_range() {
        for &x in &[-30.0, -2.0, 0.0, 1.5, 30.0] {
            assert!((log_expit(x) - expit(x).ln()).abs() < 1e-12);
        }
        assert!(log_expit(-800.0).is_finite());
        assert_eq!(log_expit(800.0), 0.0);
    }

    #[test]
    fn nearest_rank_picks_order_statistics() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(nearest_rank(&v, 0.25), 1.0);
        assert_eq!(nearest_rank(&v, 0.26), 2.0);
        assert_eq!(nearest_rank(&v, 1.0), 4.0);
        assert_eq!(nearest_rank(&v, 0.0), 1.0);
        let w: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(nearest_rank(&w, 0.95), 19.0);
    }
}
