//! Scalar statistics used across the estimators: standard-normal functions
//! robust far into the tails, correlation coefficients, and log-sum-exp.

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_74; // ln(sqrt(2*pi))

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

/// Standard normal CDF via erfc; accurate over the full double range.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// log of the standard normal CDF, stable for very negative arguments.
///
/// Uses erfc directly while it does not underflow, then the asymptotic
/// expansion Phi(z) ~ phi(z)/(-z) * (1 - 1/z^2 + 3/z^4 - 15/z^6 + ...).
pub fn log_normal_cdf(z: f64) -> f64 {
    if z > -20.0 {
        let c = libm::erfc(-z / SQRT_2);
        if c > 0.0 {
            return (0.5 * c).ln();
        }
    }
    let zi = 1.0 / (z * z);
    // 4-term tail series is ~1e-6 relative at z = -20 and improves fast.
    let series = 1.0 + zi * (-1.0 + zi * (3.0 + zi * (-15.0 + zi * 105.0)));
    -0.5 * z * z - LN_SQRT_2PI - (-z).ln() + series.ln()
}

/// Inverse Mills ratio phi(z)/Phi(z), stable in both tails.
pub fn mills_ratio(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI - log_normal_cdf(z)).exp()
}

/// log(sum(exp(x_i))) without overflow; -inf for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

/// Pearson correlation coefficient of paired samples.
///
/// Degenerate cases: if both coordinates are constant the points are
/// perfectly aligned and 1.0 is returned; if only one is constant the
/// correlation is undefined and NaN is returned.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    let eps = 1e-300;
    if sxx < eps && syy < eps {
        return 1.0;
    }
    if sxx < eps || syy < eps {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}

/// Ranks with midpoint tie handling (1-based average ranks).
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("NaN in rank input"));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson of midpoint ranks).
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&ranks(xs), &ranks(ys))
}
