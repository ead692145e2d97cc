//! Deterministic reductions.
//!
//! All ensemble averages go through a fixed pairwise summation tree so the
//! result depends only on the order of the inputs, never on how the inputs
//! were produced.

const LEAF: usize = 32;

/// Pairwise sum with a fixed split rule.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= LEAF {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Pairwise sum of `f(x)` without materialising the mapped slice.
pub fn pairwise_sum_by<T>(xs: &[T], f: &impl Fn(&T) -> f64) -> f64 {
    if xs.len() <= LEAF {
        let mut s = 0.0;
        for x in xs {
            s += f(x);
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum_by(&xs[..mid], f) + pairwise_sum_by(&xs[mid..], f)
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Mean and unbiased variance (two-pass).
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let m = mean(xs);
    if n < 2 {
        return (m, 0.0);
    }
    let ss = pairwise_sum_by(xs, &|x: &f64| (x - m) * (x - m));
    (m, ss / (n - 1) as f64)
}

/// `ln(mean(exp(v)))`, stable for very large or very small `v`.
/// Returns `-inf` when every entry is `-inf`.
pub fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s = pairwise_sum_by(v, &|x: &f64| (x - m).exp());
    m + (s / v.len() as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_exact_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
    }

    #[test]
    fn log_mean_exp_handles_extremes() {
        assert!((log_mean_exp(&[1000.0, 1000.0]) - 1000.0).abs() < 1e-12);
        let v = [-1e4, -1e4 + 2f64.ln()];
        assert!((log_mean_exp(&v) - (-1e4 + 1.5f64.ln())).abs() < 1e-9);
        assert_eq!(log_mean_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn mean_var_small() {
        let (m, v) = mean_var(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((v - 5.0 / 3.0).abs() < 1e-15);
    }
}
