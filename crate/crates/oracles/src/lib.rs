//! Independent numeric oracles for the test suites: orthant probabilities of
//! low-dimensional Gaussians by nested Gauss-Legendre quadrature, and the
//! closed-form bivariate orthant. Deliberately dependency-free and separate
//! from the code under test.

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_74;

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            // Legendre P_n(x) and derivative via the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = pk;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        // Recompute derivative at the converged node for the weight.
        let mut p0 = 1.0;
        let mut p1 = x;
        for k in 2..=n {
            let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = pk;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Lower Cholesky factor of a symmetric PSD matrix (row-major, n x n), with
/// a tiny relative jitter if needed.
fn cholesky_lower(cov: &[f64], n: usize) -> Vec<f64> {
    let mean_diag: f64 = (0..n).map(|i| cov[i * n + i]).sum::<f64>() / n as f64;
    let mut jitter = 0.0;
    'retry: loop {
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = cov[i * n + j];
                if i == j {
                    s += jitter;
                }
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if s <= 0.0 {
                        jitter = if jitter == 0.0 {
                            1e-12 * mean_diag.max(1e-300)
                        } else {
                            jitter * 10.0
                        };
                        assert!(jitter < mean_diag, "matrix far from PSD");
                        continue 'retry;
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        return l;
    }
}

/// P(X_i > 0 for all i) for X ~ N(mean, cov), dimensions 1..=3, by nested
/// quadrature over the whitened variables (the innermost integral is a
/// normal CDF, so only dim-1 numeric integrals remain).
pub fn positive_orthant(mean: &[f64], cov: &[f64], quad_points: usize) -> f64 {
    let n = mean.len();
    assert!((1..=3).contains(&n), "orthant oracle supports dims 1..=3");
    assert_eq!(cov.len(), n * n);
    let l = cholesky_lower(cov, n);
    let bound = 9.0;
    let (nodes, weights) = gauss_legendre(quad_points);

    // z1 range from mean[0] + L00 z1 > 0.
    let z1_low = (-mean[0] / l[0]).max(-bound);
    if z1_low >= bound {
        return 0.0;
    }
    match n {
        1 => normal_cdf(-(-mean[0] / l[0])),
        2 => {
            let half = 0.5 * (bound - z1_low);
            let mid = 0.5 * (bound + z1_low);
            let mut acc = 0.0;
            for (x, w) in nodes.iter().zip(&weights) {
                let z1 = mid + half * x;
                let lo2 = -(mean[1] + l[n] * z1) / l[n + 1];
                acc += w * normal_pdf(z1) * (1.0 - normal_cdf(lo2));
            }
            acc * half
        }
        3 => {
            let half1 = 0.5 * (bound - z1_low);
            let mid1 = 0.5 * (bound + z1_low);
            let mut acc = 0.0;
            for (x1, w1) in nodes.iter().zip(&weights) {
                let z1 = mid1 + half1 * x1;
                let lo2 = ((-(mean[1] + l[n] * z1)) / l[n + 1]).max(-bound);
                if lo2 >= bound {
                    continue;
                }
                let half2 = 0.5 * (bound - lo2);
                let mid2 = 0.5 * (bound + lo2);
                let mut inner = 0.0;
                for (x2, w2) in nodes.iter().zip(&weights) {
                    let z2 = mid2 + half2 * x2;
                    let lo3 = -(mean[2] + l[2 * n] * z1 + l[2 * n + 1] * z2) / l[2 * n + 2];
                    inner += w2 * normal_pdf(z2) * (1.0 - normal_cdf(lo3));
                }
                acc += w1 * normal_pdf(z1) * inner * half2;
            }
            acc * half1
        }
        _ => unreachable!(),
    }
}

/// P(sign(X_i) matches signs[i] for all i), signs in {0, 1} meaning
/// (non-positive, positive).
pub fn orthant_for_signs(mean: &[f64], cov: &[f64], signs: &[u8], quad_points: usize) -> f64 {
    let n = mean.len();
    let mut m = vec![0.0; n];
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        let si = if signs[i] == 1 { 1.0 } else { -1.0 };
        m[i] = si * mean[i];
        for j in 0..n {
            let sj = if signs[j] == 1 { 1.0 } else { -1.0 };
            c[i * n + j] = si * sj * cov[i * n + j];
        }
    }
    positive_orthant(&m, &c, quad_points)
}

/// Closed-form zero-mean bivariate positive orthant:
/// 1/4 + asin(rho) / (2 pi).
pub fn bivariate_orthant_closed_form(rho: f64) -> f64 {
    0.25 + rho.clamp(-1.0, 1.0).asin() / (2.0 * std::f64::consts::PI)
}

/// Marginal likelihood of sign observations under a centred Gaussian prior:
/// Z = P(y_i f_i + noise > 0 for all i), f ~ N(0, K), which is the orthant
/// probability of D K D + noise2 I with D = diag(y).
pub fn sign_likelihood_evidence(
    k: &[f64],
    labels: &[u8],
    noise2: f64,
    quad_points: usize,
) -> f64 {
    let n = labels.len();
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        let yi = if labels[i] == 1 { 1.0 } else { -1.0 };
        for j in 0..n {
            let yj = if labels[j] == 1 { 1.0 } else { -1.0 };
            c[i * n + j] = yi * yj * k[i * n + j];
        }
        c[i * n + i] += noise2;
    }
    positive_orthant(&vec![0.0; n], &c, quad_points)
}
