//! Derived analyses: probability-versus-error curves, entropic factors,
//! per-image marginals with product-independence predictions and the
//! Chernoff bound, critical-sample-ratio complexity, and label corruption.

use nalgebra::DMatrix;
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use rayon::prelude::*;

use crate::data::LabelledDataset;
use crate::error::{Error, Result};
use crate::funcspace::{BinaryFunction, FrequencyTable};
use crate::gp::{posterior_prob_ep, Linking};
use crate::kernel::KernelMatrix;
use crate::net::NetParams;
use crate::rng;
use crate::stats;

/// Default number of random functions per error value.
pub const DEFAULT_FUNCTIONS_PER_ERROR: usize = 20;

/// Default box half-side for CSR on unit-range inputs.
pub const DEFAULT_CSR_RADIUS: f64 = 0.25;

/// Everything the EP route needs to price a test labelling: the kernel over
/// the ordered point set (training block first), the training labels, and
/// the linking function.
#[derive(Clone, Copy)]
pub struct EpContext<'a> {
    pub kernel: &'a KernelMatrix,
    pub s_labels: &'a [u8],
    pub linking: Linking,
}

impl<'a> EpContext<'a> {
    pub fn log_posterior(&self, f: &BinaryFunction) -> Result<f64> {
        posterior_prob_ep(self.kernel, self.s_labels, f, self.linking)
    }

    pub fn pricer(&self) -> Result<crate::gp::EpPricer<'a>> {
        crate::gp::EpPricer::new(self.kernel, self.s_labels, self.linking)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorCurvePoint {
    pub epsilon: f64,
    pub mean_log10_pb: f64,
    pub std_log10_pb: f64,
    pub n_functions: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorCurve {
    pub points: Vec<ErrorCurvePoint>,
    /// `(epsilon, log10(rho(eps) * mean P_B))` per grid value.
    pub weighted: Vec<(f64, f64)>,
}

impl ErrorCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epsilon,mean_log10,std_log10,n,weighted_log10\n");
        for (p, (_, w)) in self.points.iter().zip(&self.weighted) {
            out.push_str(&format!(
                "{},{:.12e},{:.12e},{},{:.12e}\n",
                p.epsilon, p.mean_log10_pb, p.std_log10_pb, p.n_functions, w
            ));
        }
        out
    }
}

/// Probability-versus-error curve: for each grid value, sample functions at
/// exactly that error by flipping distinct random bits of `truth`, price
/// each with the EP ratio of likelihoods, and aggregate the log
/// probabilities.
pub fn error_curve(
    truth: &BinaryFunction,
    grid: &[f64],
    n_per_error: usize,
    ctx: &EpContext,
    seed: u64,
) -> Result<ErrorCurve> {
    if grid.iter().any(|&e| !(0.0..=1.0).contains(&e)) {
        return Err(Error::Other("error grid values must lie in [0,1]".into()));
    }
    let mut eps_values: Vec<f64> = grid.to_vec();
    eps_values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eps_values.dedup();
    let e_size = truth.len();

    // Draw all functions first so EP pricing can run in parallel.
    let mut jobs: Vec<(f64, Vec<BinaryFunction>)> = Vec::new();
    for (gi, &eps) in eps_values.iter().enumerate() {
        let k = (eps * e_size as f64).round() as usize;
        let fs = if k == 0 {
            vec![truth.clone()]
        } else {
            let mut rng = rng::rng_from_seed(rng::derive_seed2(seed, 4, gi as u64));
            (0..n_per_error)
                .map(|_| {
                    let flips = rng::choose_indices(&mut rng, e_size, k);
                    let f = truth.with_flipped(&flips);
                    debug_assert_eq!(f.error_count(truth).unwrap() as usize, k);
                    f
                })
                .collect()
        };
        jobs.push((eps, fs));
    }

    let pricer = ctx.pricer()?;
    let priced: Vec<Result<(f64, Vec<f64>)>> = jobs
        .into_par_iter()
        .map(|(eps, fs)| {
            let lps = fs
                .iter()
                .map(|f| pricer.log_posterior(f))
                .collect::<Result<Vec<f64>>>()?;
            Ok((eps, lps))
        })
        .collect();

    let ln10 = std::f64::consts::LN_10;
    let mut points = Vec::new();
    let mut weighted = Vec::new();
    for job in priced {
        let (eps, lps) = job?;
        let n = lps.len();
        let log10s: Vec<f64> = lps.iter().map(|lp| lp / ln10).collect();
        let mean = log10s.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (log10s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let k = (eps * e_size as f64).round() as usize;
        let (_, log10_rho) = entropic_factor(e_size, k)?;
        // log10( rho * mean(P) ) with the mean taken on probabilities.
        let log10_mean_p = (stats::log_sum_exp(&lps) - (n as f64).ln()) / ln10;
        weighted.push((eps, log10_rho + log10_mean_p));
        points.push(ErrorCurvePoint {
            epsilon: eps,
            mean_log10_pb: mean,
            std_log10_pb: std,
            n_functions: n,
        });
    }
    Ok(ErrorCurve { points, weighted })
}

/// Exact binomial coefficient and its base-10 logarithm: the number of
/// functions with exactly `k_errors` mistakes on a test set of `e_size`.
pub fn entropic_factor(e_size: usize, k_errors: usize) -> Result<(BigUint, f64)> {
    if k_errors > e_size {
        return Err(Error::Other(format!(
            "cannot make {k_errors} errors on {e_size} bits"
        )));
    }
    let mut rho = BigUint::one();
    for i in 0..k_errors as u64 {
        rho = rho * BigUint::from(e_size as u64 - i) / BigUint::from(i + 1);
    }
    Ok((rho.clone(), log10_biguint(&rho)))
}

/// log10 of a positive big integer via its top 53 bits.
fn log10_biguint(v: &BigUint) -> f64 {
    assert!(!v.is_zero());
    let bits = v.bits();
    if bits <= 53 {
        return v.to_f64().unwrap().log10();
    }
    let shift = bits - 53;
    let top = (v >> shift).to_f64().unwrap();
    (top.log2() + shift as f64) * std::f64::consts::LN_2 / std::f64::consts::LN_10
}

/// Per-image misclassification probabilities of a sampled table.
pub fn per_image_marginals(table: &FrequencyTable, truth: &BinaryFunction) -> Result<Vec<f64>> {
    table.per_bit_marginals(truth)
}

/// Predicted log10 probability of `f` if images were classified
/// independently with marginals `p`: product of `p_i` on erred bits and
/// `1 - p_i` elsewhere. Impossible bits give `-inf`.
pub fn product_prediction(p: &[f64], f: &BinaryFunction, truth: &BinaryFunction) -> Result<f64> {
    if p.len() != f.len() || f.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            got: f.len(),
        });
    }
    let mut log10 = 0.0;
    for i in 0..p.len() {
        let errs = f.bit(i) != truth.bit(i);
        let prob = if errs { p[i] } else { 1.0 - p[i] };
        if prob <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        log10 += prob.log10();
    }
    Ok(log10)
}

/// Upper bound on the log10 pmf of the error count in the upper tail:
/// `log10 p(eps) <= [-eps (ln(eps / mean) - 1) - mean] log10(e)`.
pub fn chernoff_bound(mean_error: f64, epsilon: f64) -> Result<f64> {
    if !(mean_error > 0.0) {
        return Err(Error::ChernoffRegime {
            epsilon,
            mean: mean_error,
        });
    }
    if epsilon < mean_error {
        return Err(Error::ChernoffRegime {
            epsilon,
            mean: mean_error,
        });
    }
    let exponent = -epsilon * ((epsilon / mean_error).ln() - 1.0) - mean_error;
    Ok(exponent * std::f64::consts::LOG10_E)
}

/// Exact Poisson-Binomial pmf over the number of successes, by convolution.
pub fn poisson_binomial_pmf(ps: &[f64]) -> Vec<f64> {
    let mut pmf = vec![0.0; ps.len() + 1];
    pmf[0] = 1.0;
    for (i, &p) in ps.iter().enumerate() {
        for k in (0..=i + 1).rev() {
            let stay = pmf[k] * (1.0 - p);
            let up = if k > 0 { pmf[k - 1] * p } else { 0.0 };
            pmf[k] = stay + up;
        }
    }
    pmf
}

/// Flip the labels of a uniformly chosen `floor(c * |S|)` subset.
pub fn corrupt_labels(s: &LabelledDataset, fraction: f64, seed: u64) -> Result<LabelledDataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Other(format!(
            "corruption fraction {fraction} outside [0,1]"
        )));
    }
    let mut labels = s.labels()?.to_vec();
    let k = (fraction * labels.len() as f64).floor() as usize;
    let mut rng = rng::rng_from_seed(rng::derive_seed(seed, 5));
    for idx in rng::choose_indices(&mut rng, labels.len(), k) {
        labels[idx] = 1 - labels[idx];
    }
    s.clone().with_labels(labels)
}

/// Anything CSR can probe: a thresholded scalar field with an input
/// gradient. The default gradient is by central differences; exact
/// implementations override it.
pub trait CsrEvaluator: Sync {
    fn preactivation(&self, x: &[f64]) -> f64;

    fn class(&self, x: &[f64]) -> u8 {
        (self.preactivation(x) > 0.0) as u8
    }

    fn input_gradient(&self, x: &[f64]) -> Vec<f64> {
        let h = 1e-5;
        let mut g = vec![0.0; x.len()];
        let mut probe = x.to_vec();
        for i in 0..x.len() {
            probe[i] = x[i] + h;
            let plus = self.preactivation(&probe);
            probe[i] = x[i] - h;
            let minus = self.preactivation(&probe);
            probe[i] = x[i];
            g[i] = (plus - minus) / (2.0 * h);
        }
        g
    }
}

impl CsrEvaluator for NetParams {
    fn preactivation(&self, x: &[f64]) -> f64 {
        crate::net::forward(self, x).expect("dimension checked by caller")
    }

    fn input_gradient(&self, x: &[f64]) -> Vec<f64> {
        // Exact: chain ReLU masks backwards through the layers.
        let mut a = nalgebra::DVector::from_row_slice(x);
        let mut masks: Vec<Vec<bool>> = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.w * &a + &layer.b;
            if l != last {
                masks.push(z.iter().map(|&v| v > 0.0).collect());
                z.apply(|v| *v = v.max(0.0));
            }
            a = z;
        }
        let mut g = self.layers[last].w.row(0).transpose().into_owned();
        for l in (0..last).rev() {
            for (i, &alive) in masks[l].iter().enumerate() {
                if !alive {
                    g[i] = 0.0;
                }
            }
            g = self.layers[l].w.transpose() * g;
        }
        g.iter().cloned().collect()
    }
}

/// Smallest L-infinity flip distance found for each sample within the box of
/// half-side `r`, or infinity. Probing is gradient-sign descent on the
/// pre-activation magnitude (10 steps of `r/10`, clipped to the box)
/// followed by uniform random probes up to `probe_budget` evaluations.
pub fn min_flip_distances(
    evaluator: &dyn CsrEvaluator,
    samples: &DMatrix<f64>,
    r: f64,
    probe_budget: usize,
    seed: u64,
) -> Vec<f64> {
    assert!(r > 0.0, "box half-side must be positive");
    let dim = samples.ncols();
    let grad_steps = 10usize;
    (0..samples.nrows())
        .map(|row| {
            let x0: Vec<f64> = samples.row(row).iter().cloned().collect();
            let class0 = evaluator.class(&x0);
            let mut best = f64::INFINITY;
            let linf = |x: &[f64]| -> f64 {
                x.iter()
                    .zip(&x0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            };

            // Gradient-sign walk toward a sign flip.
            let z0 = evaluator.preactivation(&x0);
            let toward = -z0.signum();
            let mut x = x0.clone();
            for _ in 0..grad_steps {
                let g = evaluator.input_gradient(&x);
                for i in 0..dim {
                    let step = toward * g[i].signum() * (r / grad_steps as f64);
                    x[i] = (x[i] + step).clamp(x0[i] - r, x0[i] + r);
                }
                if evaluator.class(&x) != class0 {
                    best = best.min(linf(&x));
                    break;
                }
            }

            // Uniform probes for the remaining budget.
            let remaining = probe_budget.saturating_sub(grad_steps);
            let mut rng =
                rng::rng_from_seed(rng::derive_seed2(seed, 6, row as u64));
            let mut probe = vec![0.0; dim];
            for _ in 0..remaining {
                for i in 0..dim {
                    probe[i] = x0[i] + rng.random_range(-r..=r);
                }
                if evaluator.class(&probe) != class0 {
                    best = best.min(linf(&probe));
                }
            }
            best
        })
        .collect()
}

/// Critical sample ratio: the fraction of samples with an output-flipping
/// neighbour inside the L-infinity box of half-side `r`.
pub fn csr(
    evaluator: &dyn CsrEvaluator,
    samples: &DMatrix<f64>,
    r: f64,
    probe_budget: usize,
    seed: u64,
) -> f64 {
    let dists = min_flip_distances(evaluator, samples, r, probe_budget, seed);
    dists.iter().filter(|d| d.is_finite()).count() as f64 / dists.len() as f64
}

/// CSR at several radii with one shared probe set (at the largest radius),
/// so the fractions are monotone in `r` by construction.
pub fn csr_profile(
    evaluator: &dyn CsrEvaluator,
    samples: &DMatrix<f64>,
    radii: &[f64],
    probe_budget: usize,
    seed: u64,
) -> Vec<f64> {
    let r_max = radii.iter().cloned().fold(0.0, f64::max);
    let dists = min_flip_distances(evaluator, samples, r_max, probe_budget, seed);
    radii
        .iter()
        .map(|&r| dists.iter().filter(|&&d| d <= r).count() as f64 / dists.len() as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use num_traits::FromPrimitive;

    #[test]
    fn entropic_factor_basics() {
        let (rho, log10) = entropic_factor(100, 0).unwrap();
        assert_eq!(rho, BigUint::one());
        assert_eq!(log10, 0.0);
        let (rho, _) = entropic_factor(5, 2).unwrap();
        assert_eq!(rho, BigUint::from_u64(10).unwrap());
        assert!(entropic_factor(5, 6).is_err());
    }

    #[test]
    fn entropic_factor_large_log10() {
        // C(1000, 500) has log10 = 299.4318... (exceeds f64 as an integer).
        let (rho, log10) = entropic_factor(1000, 500).unwrap();
        assert!(rho.bits() > 990);
        assert_relative_eq!(log10, 299.43182715186374, max_relative = 1e-12);
    }

    #[test]
    fn entropic_factors_sum_to_two_power(){
        for e in [1usize, 5, 17, 40] {
            let mut total = BigUint::zero();
            for k in 0..=e {
                total += entropic_factor(e, k).unwrap().0;
            }
            assert_eq!(total, BigUint::one() << e);
        }
    }

    #[test]
    fn tail_mass_anchors() {
        // Sum_{k<=3} C(100,k) / 2^100 as a percentage is about 1e-23.
        let mut numer = BigUint::zero();
        for k in 0..=3 {
            numer += entropic_factor(100, k).unwrap().0;
        }
        let log10_pct =
            log10_biguint(&numer) + 2.0 - 100.0 * std::f64::consts::LOG10_2;
        let pct = 10f64.powf(log10_pct);
        assert!((1e-24..=1e-22).contains(&pct), "{pct:e}");

        // Sum_{47..=53} C(100,k) carries over half the mass: exact integer
        // comparison 2 * sum > 2^100.
        let mut mid = BigUint::zero();
        for k in 47..=53 {
            mid += entropic_factor(100, k).unwrap().0;
        }
        assert!(mid * 2u32 > (BigUint::one() << 100));
    }

    #[test]
    fn product_prediction_examples() {
        let truth = BinaryFunction::from_bits(&[0, 0]);
        let f_both = BinaryFunction::from_bits(&[1, 1]);
        let lp = product_prediction(&[0.5, 0.5], &f_both, &truth).unwrap();
        assert_relative_eq!(lp, 0.25f64.log10(), max_relative = 1e-12);

        let lp = product_prediction(&[0.0, 0.0], &truth, &truth).unwrap();
        assert_eq!(lp, 0.0);

        let lp = product_prediction(&[0.0, 0.5], &f_both, &truth).unwrap();
        assert_eq!(lp, f64::NEG_INFINITY);
    }

    #[test]
    fn marginal_mean_equals_mean_error() {
        let truth = BinaryFunction::from_bits(&[1, 0, 1, 0]);
        let mut t = FrequencyTable::new(4, "x");
        t.record_many(truth.with_flipped(&[0]), 3).unwrap();
        t.record_many(truth.with_flipped(&[1, 2]), 1).unwrap();
        t.record_many(truth.clone(), 6).unwrap();
        let p = per_image_marginals(&t, &truth).unwrap();
        let mean_p = p.iter().sum::<f64>() / p.len() as f64;
        assert_relative_eq!(mean_p, t.mean_error(&truth).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn chernoff_examples() {
        // At epsilon = mean the exponent vanishes: bound = 1.
        assert_relative_eq!(chernoff_bound(2.0, 2.0).unwrap(), 0.0);
        // At epsilon = e * mean: exponent = -mean, bound = -mean*log10(e).
        let m = 1.7;
        let got = chernoff_bound(m, std::f64::consts::E * m).unwrap();
        assert_relative_eq!(got, -m * std::f64::consts::LOG10_E, max_relative = 1e-12);
        assert!(chernoff_bound(2.0, 1.0).is_err());
        assert!(chernoff_bound(0.0, 1.0).is_err());
    }

    #[test]
    fn poisson_binomial_matches_binomial() {
        let p = 0.3;
        let n = 8;
        let pmf = poisson_binomial_pmf(&vec![p; n]);
        assert_relative_eq!(pmf.iter().sum::<f64>(), 1.0, max_relative = 1e-12);
        for (k, &got) in pmf.iter().enumerate() {
            let binom = entropic_factor(n, k).unwrap().0.to_f64().unwrap();
            let want = binom * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32);
            assert_relative_eq!(got, want, max_relative = 1e-10);
        }
    }

    #[test]
    fn chernoff_majorises_exact_pmf() {
        let mut rng = rng::rng_from_seed(12);
        for _ in 0..50 {
            let n = rng.random_range(2..=30);
            let ps: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
            let mean: f64 = ps.iter().sum();
            let pmf = poisson_binomial_pmf(&ps);
            for (k, &pk) in pmf.iter().enumerate() {
                let eps = k as f64;
                if eps >= mean && pk > 0.0 {
                    let bound = chernoff_bound(mean, eps).unwrap();
                    assert!(
                        pk.log10() <= bound + 1e-9,
                        "pmf({k}) = {pk:e} exceeds bound 1e{bound}"
                    );
                }
            }
        }
    }

    #[test]
    fn corrupt_labels_examples() {
        let ds = LabelledDataset::new(
            DMatrix::from_fn(10, 2, |i, j| (i + j) as f64 + 1.0),
            vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1],
            "t",
        )
        .unwrap();
        let same = corrupt_labels(&ds, 0.0, 1).unwrap();
        assert_eq!(same.labels().unwrap(), ds.labels().unwrap());

        let all = corrupt_labels(&ds, 1.0, 1).unwrap();
        for (a, b) in all.labels().unwrap().iter().zip(ds.labels().unwrap()) {
            assert_eq!(*a, 1 - *b);
        }

        let fifth = corrupt_labels(&ds, 0.2, 3).unwrap();
        let flips = fifth
            .labels()
            .unwrap()
            .iter()
            .zip(ds.labels().unwrap())
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(flips, 2);
    }

    struct LinearField {
        offset: f64,
    }

    impl CsrEvaluator for LinearField {
        fn preactivation(&self, x: &[f64]) -> f64 {
            x[0] - self.offset
        }
    }

    #[test]
    fn csr_constant_function_is_zero() {
        struct Constant;
        impl CsrEvaluator for Constant {
            fn preactivation(&self, _x: &[f64]) -> f64 {
                1.0
            }
        }
        let samples = DMatrix::from_fn(20, 3, |i, j| (i * 3 + j) as f64 / 60.0);
        assert_eq!(csr(&Constant, &samples, 0.25, 50, 1), 0.0);
    }

    #[test]
    fn csr_one_dimensional_threshold_geometry() {
        // Decision boundary at 0.5; exactly the samples within r of it are
        // critical.
        let field = LinearField { offset: 0.5 };
        let xs = [0.1, 0.3, 0.45, 0.6, 0.9];
        let samples = DMatrix::from_fn(5, 1, |i, _| xs[i]);
        let r = 0.25;
        let dists = min_flip_distances(&field, &samples, r, 40, 7);
        for (i, &x) in xs.iter().enumerate() {
            let should_flip = (x - 0.5).abs() <= r;
            assert_eq!(
                dists[i].is_finite(),
                should_flip,
                "sample {x}: distance {:?}",
                dists[i]
            );
        }
        assert_relative_eq!(csr(&field, &samples, r, 40, 7), 3.0 / 5.0);
    }

    #[test]
    fn csr_profile_is_monotone() {
        let field = LinearField { offset: 0.4 };
        let mut rng = rng::rng_from_seed(3);
        let samples = DMatrix::from_fn(40, 1, |_, _| rng.random_range(0.0..1.0));
        let radii = [0.02, 0.05, 0.1, 0.2, 0.4];
        let fractions = csr_profile(&field, &samples, &radii, 60, 11);
        for w in fractions.windows(2) {
            assert!(w[0] <= w[1] + 1e-12, "profile not monotone: {fractions:?}");
        }
    }

    #[test]
    fn net_input_gradient_matches_finite_differences() {
        use crate::net::{init_params, InitScheme, NetConfig};
        let config = NetConfig::new(vec![4, 6, 5, 1], InitScheme::prior(1.3)).unwrap();
        let params = init_params(&config, 17);
        let mut rng = rng::rng_from_seed(29);
        for _ in 0..10 {
            let x: Vec<f64> = (0..4).map(|_| rng::standard_normal(&mut rng)).collect();
            let exact = CsrEvaluator::input_gradient(&params, &x);
            // Default trait method = central differences.
            struct Fd<'a>(&'a NetParams);
            impl CsrEvaluator for Fd<'_> {
                fn preactivation(&self, x: &[f64]) -> f64 {
                    crate::net::forward(self.0, x).unwrap()
                }
            }
            let numeric = Fd(&params).input_gradient(&x);
            for (e, n) in exact.iter().zip(&numeric) {
                assert!((e - n).abs() < 1e-6, "{e} vs {n}");
            }
        }
    }
}
