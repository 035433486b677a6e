//! Bayesian posterior machinery over network outputs: the exact Gaussian
//! regression posterior with thresholded sampling, expectation propagation
//! for the 0-1 likelihood (Heaviside or probit linking) with its
//! marginal-likelihood estimate, ratio-of-likelihoods posterior
//! probabilities, sampling from the EP-approximated posterior, the
//! infinite-time gradient-flow output law from NNGP/NTK kernel pairs, and
//! renormalisation of EP probability maps.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::funcspace::{BinaryFunction, FrequencyTable};
use crate::kernel::{jittered_cholesky, KernelMatrix};
use crate::rng;
use crate::stats;

/// Gaussian likelihood variance used for the regression route.
pub const DEFAULT_NOISE_VARIANCE: f64 = 0.002;

/// EP update damping.
const EP_DAMPING: f64 = 0.8;
/// EP stops when no site parameter moves more than this between sweeps.
const EP_TOLERANCE: f64 = 1e-6;
/// Sweep cap; non-convergence is flagged, not fatal.
pub const EP_MAX_SWEEPS: usize = 100;

/// Gaussian over the latent outputs at the test points.
#[derive(Clone, Debug)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub noise_variance: f64,
}

impl GaussianPosterior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Linking function between the latent output and the binary label.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Linking {
    /// Hard sign likelihood; the zero-noise limit of the probit moments.
    Heaviside,
    /// `P(y=1|f) = Phi(scale * f)`.
    Probit { scale: f64 },
}

impl Linking {
    fn noise_variance(&self) -> f64 {
        match *self {
            Linking::Heaviside => 0.0,
            Linking::Probit { scale } => 1.0 / (scale * scale),
        }
    }
}

/// Regression targets in {-1, 1} from binary labels.
pub fn regression_targets(labels: &[u8]) -> DVector<f64> {
    DVector::from_iterator(labels.len(), labels.iter().map(|&y| 2.0 * y as f64 - 1.0))
}

/// Exact GP regression posterior over the test block of a kernel indexed
/// with the training points first.
pub fn regression_posterior(
    kernel: &KernelMatrix,
    train_targets: &DVector<f64>,
    noise_variance: f64,
) -> Result<GaussianPosterior> {
    if noise_variance <= 0.0 {
        return Err(Error::Other("noise variance must be positive".into()));
    }
    let n = kernel.n();
    let ns = train_targets.len();
    if ns == 0 || ns >= n {
        return Err(Error::DimensionMismatch(format!(
            "{ns} training targets for a kernel over {n} points"
        )));
    }
    let ne = n - ns;
    let mut k_ss = kernel.block(0..ns, 0..ns);
    for i in 0..ns {
        k_ss[(i, i)] += noise_variance;
    }
    let k_se = kernel.block(0..ns, ns..n);
    let k_ee = kernel.block(ns..n, ns..n);

    let (chol, _) = jittered_cholesky(&k_ss)?;
    let alpha = chol.solve(train_targets);
    let mean = k_se.transpose() * alpha;
    // covariance = K_EE - K_ES (K_SS + s2 I)^-1 K_SE via the factor solve.
    let w = chol.solve(&k_se);
    let mut covariance = &k_ee - k_se.transpose() * w;
    symmetrise(&mut covariance);
    let _ = ne;
    Ok(GaussianPosterior {
        mean,
        covariance,
        noise_variance,
    })
}

fn symmetrise(m: &mut DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Square root factor `A` with `A A^T = covariance`, tolerating numerically
/// semi-definite inputs by eigenvalue clamping.
fn covariance_factor(covariance: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = covariance.clone().symmetric_eigen();
    let n = covariance.nrows();
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        let lam = eig.eigenvalues[j].max(0.0).sqrt();
        for i in 0..n {
            a[(i, j)] = eig.eigenvectors[(i, j)] * lam;
        }
    }
    a
}

/// Draw `n` joint samples, threshold each coordinate, and tally the
/// resulting functions.
pub fn sample_functions(
    posterior: &GaussianPosterior,
    n: u64,
    seed: u64,
    provenance: &str,
) -> Result<FrequencyTable> {
    if n == 0 {
        return Err(Error::Other("need at least one sample".into()));
    }
    let dim = posterior.dim();
    let factor = covariance_factor(&posterior.covariance);
    let mut rng = rng::rng_from_seed(seed);
    let mut table = FrequencyTable::new(dim, provenance);
    let mut z = DVector::zeros(dim);
    let mut bits = vec![0u8; dim];
    for _ in 0..n {
        for i in 0..dim {
            z[i] = rng::standard_normal(&mut rng);
        }
        let sample = &posterior.mean + &factor * &z;
        for i in 0..dim {
            bits[i] = if sample[i] > 0.0 { 1 } else { 0 };
        }
        table.record(BinaryFunction::from_bits(&bits))?;
    }
    Ok(table)
}

/// Site parameters and the Gaussian approximation produced by expectation
/// propagation, along with its marginal-likelihood estimate.
#[derive(Clone, Debug)]
pub struct EpState {
    pub site_precision: DVector<f64>,
    pub site_mean_times_precision: DVector<f64>,
    pub posterior_mean: DVector<f64>,
    pub posterior_cov: DMatrix<f64>,
    pub log_marginal: f64,
    pub converged: bool,
    pub sweeps: usize,
}

struct TiltedMoments {
    log_z: f64,
    mean: f64,
    variance: f64,
}

/// Moments of the tilted distribution `N(f; cav) * Phi(y f / noise)`, in the
/// zero-noise (Heaviside) limit when `noise2 = 0`.
fn tilted_moments(y: f64, cav_mean: f64, cav_var: f64, noise2: f64) -> TiltedMoments {
    let denom2 = noise2 + cav_var;
    let denom = denom2.sqrt();
    let z = y * cav_mean / denom;
    let log_z = stats::log_normal_cdf(z);
    let r = stats::mills_ratio(z);
    let mean = cav_mean + y * cav_var * r / denom;
    let variance = cav_var - cav_var * cav_var * r * (z + r) / denom2;
    TiltedMoments {
        log_z,
        mean,
        variance,
    }
}

fn recompute_posterior(
    k: &DMatrix<f64>,
    tau: &DVector<f64>,
    nu: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
    let n = k.nrows();
    let srt = DVector::from_iterator(n, tau.iter().map(|&t| t.max(0.0).sqrt()));
    let mut b = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] += srt[i] * k[(i, j)] * srt[j];
        }
    }
    let chol: Cholesky<f64, nalgebra::Dyn> = match Cholesky::new(b.clone()) {
        Some(c) => c,
        None => {
            for i in 0..n {
                b[(i, i)] += 1e-10;
            }
            Cholesky::new(b).ok_or(Error::FactorisationFailed { max_jitter: 1e-10 })?
        }
    };
    let half_log_det_b: f64 = (0..n).map(|i| chol.l()[(i, i)].ln()).sum();
    // Sigma = K - K Srt B^-1 Srt K
    let mut sk = k.clone();
    for i in 0..n {
        for j in 0..n {
            sk[(i, j)] *= srt[i];
        }
    }
    // sk = Srt K (row-scaled); solve B X = Srt K, Sigma = K - (Srt K)^T X
    let x = chol.solve(&sk);
    let mut sigma = k - sk.transpose() * x;
    symmetrise(&mut sigma);
    let mu = &sigma * nu;
    Ok((mu, sigma, half_log_det_b))
}

/// Fit EP site approximations for the 0-1 likelihood over `k_ss`.
///
/// Site updates run in random-permutation sweeps with damping; sites whose
/// refreshed precision would turn negative are skipped, so `tau >= 0` is an
/// invariant. Non-convergence within [`EP_MAX_SWEEPS`] is flagged on the
/// returned state, not an error.
pub fn ep_fit(k_ss: &DMatrix<f64>, labels: &[u8], linking: Linking) -> Result<EpState> {
    let n = k_ss.nrows();
    if labels.len() != n || n == 0 {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for kernel over {n} points",
            labels.len()
        )));
    }
    // Pre-condition the kernel so the initial posterior is factorable.
    let (_, jitter) = jittered_cholesky(k_ss)?;
    let mut k = k_ss.clone();
    if jitter > 0.0 {
        for i in 0..n {
            k[(i, i)] += jitter;
        }
    }
    let y: Vec<f64> = labels.iter().map(|&l| 2.0 * l as f64 - 1.0).collect();
    let noise2 = linking.noise_variance();

    let mut tau = DVector::zeros(n);
    let mut nu = DVector::zeros(n);
    let mut mu = DVector::zeros(n);
    let mut sigma = k.clone();

    let mut order_rng = rng::rng_from_seed(0x4550_5f53_5745_4550);
    let mut converged = false;
    let mut sweeps = 0;
    let mut half_log_det_b = 0.0;
    while sweeps < EP_MAX_SWEEPS {
        sweeps += 1;
        let mut max_delta: f64 = 0.0;
        for &i in rng::permutation(&mut order_rng, n).iter() {
            let sigma_ii = sigma[(i, i)];
            if sigma_ii <= 0.0 {
                continue;
            }
            let tau_cav = 1.0 / sigma_ii - tau[i];
            if tau_cav <= 1e-12 {
                continue;
            }
            let nu_cav = mu[i] / sigma_ii - nu[i];
            let cav_var = 1.0 / tau_cav;
            let cav_mean = nu_cav * cav_var;

            let tm = tilted_moments(y[i], cav_mean, cav_var, noise2);
            if !(tm.variance > 0.0) || !tm.mean.is_finite() {
                continue;
            }
            let tau_raw = 1.0 / tm.variance - tau_cav;
            let nu_raw = tm.mean / tm.variance - nu_cav;
            let tau_new = tau[i] + EP_DAMPING * (tau_raw - tau[i]);
            let nu_new = nu[i] + EP_DAMPING * (nu_raw - nu[i]);
            if tau_new < 0.0 {
                continue;
            }
            let d_tau: f64 = tau_new - tau[i];
            let d_nu: f64 = nu_new - nu[i];
            let denom = 1.0 + d_tau * sigma_ii;
            if denom <= 1e-12 {
                continue;
            }
            // Rank-1 refresh of the posterior, on raw column-major slices.
            let si: Vec<f64> = sigma.column(i).iter().cloned().collect();
            let coef_cov = d_tau / denom;
            let coef_mean = (d_nu - d_tau * mu[i]) / denom;
            let data = sigma.as_mut_slice();
            for (cidx, col) in data.chunks_exact_mut(n).enumerate() {
                let factor = coef_cov * si[cidx];
                if factor == 0.0 {
                    continue;
                }
                for (cell, &s) in col.iter_mut().zip(&si) {
                    *cell -= factor * s;
                }
            }
            for (m, &s) in mu.iter_mut().zip(&si) {
                *m += coef_mean * s;
            }

            max_delta = max_delta.max(d_tau.abs()).max(d_nu.abs());
            tau[i] = tau_new;
            nu[i] = nu_new;
        }
        let (new_mu, new_sigma, hldb) = recompute_posterior(&k, &tau, &nu)?;
        mu = new_mu;
        sigma = new_sigma;
        half_log_det_b = hldb;
        if max_delta < EP_TOLERANCE {
            converged = true;
            break;
        }
    }

    // Marginal likelihood from the converged cavities:
    //   log Z = sum log Zhat_i
    //         + 1/2 sum log(1 + tau_i s2cav_i)
    //         + sum (tau_i mcav_i^2 - 2 mcav_i nu_i - nu_i^2 s2cav_i)
    //               / (2 (1 + tau_i s2cav_i))
    //         - 1/2 log|B| + 1/2 nu^T Sigma nu
    let mut log_marginal = -half_log_det_b + 0.5 * (nu.transpose() * &sigma * &nu)[(0, 0)];
    for i in 0..n {
        let sigma_ii = sigma[(i, i)];
        let tau_cav = (1.0 / sigma_ii - tau[i]).max(1e-12);
        let nu_cav = mu[i] / sigma_ii - nu[i];
        let s2_cav = 1.0 / tau_cav;
        let m_cav = nu_cav * s2_cav;
        let tm = tilted_moments(y[i], m_cav, s2_cav, noise2);
        let denom = 1.0 + tau[i] * s2_cav;
        log_marginal += tm.log_z
            + 0.5 * denom.ln()
            + (tau[i] * m_cav * m_cav - 2.0 * m_cav * nu[i] - nu[i] * nu[i] * s2_cav)
                / (2.0 * denom);
    }

    Ok(EpState {
        site_precision: tau,
        site_mean_times_precision: nu,
        posterior_mean: mu,
        posterior_cov: sigma,
        log_marginal,
        converged,
        sweeps,
    })
}

/// EP estimate of the log probability that the prior assigns exactly these
/// labels to these points.
pub fn log_prob_labelling(k: &DMatrix<f64>, labels: &[u8], linking: Linking) -> Result<f64> {
    Ok(ep_fit(k, labels, linking)?.log_marginal)
}

/// Ratio-of-likelihoods posterior: `log P(f|S) = log P(labels of S and f
/// together) - log P(labels of S)` for a kernel indexed with the training
/// points first.
pub fn posterior_prob_ep(
    kernel: &KernelMatrix,
    s_labels: &[u8],
    f: &BinaryFunction,
    linking: Linking,
) -> Result<f64> {
    let n = kernel.n();
    let ns = s_labels.len();
    if ns + f.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "kernel covers {n} points but |S| + |E| = {}",
            ns + f.len()
        )));
    }
    if f.is_empty() {
        return Ok(0.0);
    }
    let mut joint = s_labels.to_vec();
    joint.extend(f.bits());
    let log_pf = log_prob_labelling(&kernel.entries, &joint, linking)?;
    let k_ss = kernel.block(0..ns, 0..ns);
    let log_ps = log_prob_labelling(&k_ss, s_labels, linking)?;
    Ok(log_pf - log_ps)
}

/// Bulk ratio-of-likelihoods pricing over one training set: the training
/// marginal `log P(S)` is fitted once and shared across every function.
pub struct EpPricer<'a> {
    kernel: &'a KernelMatrix,
    s_labels: &'a [u8],
    linking: Linking,
    log_prob_s: f64,
}

impl<'a> EpPricer<'a> {
    pub fn new(kernel: &'a KernelMatrix, s_labels: &'a [u8], linking: Linking) -> Result<Self> {
        let ns = s_labels.len();
        if ns >= kernel.n() {
            return Err(Error::DimensionMismatch(format!(
                "{ns} training labels for kernel over {} points",
                kernel.n()
            )));
        }
        let k_ss = kernel.block(0..ns, 0..ns);
        let log_prob_s = log_prob_labelling(&k_ss, s_labels, linking)?;
        Ok(EpPricer {
            kernel,
            s_labels,
            linking,
            log_prob_s,
        })
    }

    pub fn log_prob_s(&self) -> f64 {
        self.log_prob_s
    }

    /// `log P(f|S)` for a labelling of the test block.
    pub fn log_posterior(&self, f: &BinaryFunction) -> Result<f64> {
        if f.is_empty() {
            return Ok(0.0);
        }
        let ns = self.s_labels.len();
        if ns + f.len() != self.kernel.n() {
            return Err(Error::DimensionMismatch(format!(
                "kernel covers {} points but |S| + |E| = {}",
                self.kernel.n(),
                ns + f.len()
            )));
        }
        let mut joint = self.s_labels.to_vec();
        joint.extend(f.bits());
        let log_pf = log_prob_labelling(&self.kernel.entries, &joint, self.linking)?;
        Ok(log_pf - self.log_prob_s)
    }
}

/// Gaussian over the test latents conditioned on the EP site approximations
/// of the training block.
pub fn ep_posterior(ep: &EpState, kernel: &KernelMatrix, n_train: usize) -> Result<GaussianPosterior> {
    let n = kernel.n();
    if ep.site_precision.len() != n_train || n_train >= n {
        return Err(Error::DimensionMismatch(format!(
            "EP state over {} sites for kernel with {n_train} training points of {n}",
            ep.site_precision.len()
        )));
    }
    let k_se = kernel.block(0..n_train, n_train..n);
    let k_ee = kernel.block(n_train..n, n_train..n);
    let tau = &ep.site_precision;
    let nu = &ep.site_mean_times_precision;

    // mean = K_ES (nu - Tau mu_post); cov = K_EE - K_ES (Tau - Tau Sigma Tau) K_SE
    let mut adjusted = nu.clone();
    for i in 0..n_train {
        adjusted[i] -= tau[i] * ep.posterior_mean[i];
    }
    let mean = k_se.transpose() * adjusted;

    let mut inner = DMatrix::zeros(n_train, n_train);
    for i in 0..n_train {
        for j in 0..n_train {
            inner[(i, j)] = -tau[i] * ep.posterior_cov[(i, j)] * tau[j];
        }
        inner[(i, i)] += tau[i];
    }
    let mut covariance = k_ee - k_se.transpose() * &inner * &k_se;
    symmetrise(&mut covariance);
    Ok(GaussianPosterior {
        mean,
        covariance,
        noise_variance: 0.0,
    })
}

/// Sample functions from the EP-approximated posterior.
pub fn ep_posterior_sample(
    ep: &EpState,
    kernel: &KernelMatrix,
    n_train: usize,
    n: u64,
    seed: u64,
) -> Result<FrequencyTable> {
    let posterior = ep_posterior(ep, kernel, n_train)?;
    sample_functions(&posterior, n, seed, "gp-ep")
}

/// Output distribution of infinitely trained gradient flow in the linearised
/// (infinite-width, infinitesimal-learning-rate) regime, from the NNGP/NTK
/// kernel pair over the same ordered points.
pub fn ntk_output_distribution(
    nngp: &KernelMatrix,
    ntk: &KernelMatrix,
    train_targets: &DVector<f64>,
) -> Result<GaussianPosterior> {
    let n = nngp.n();
    if ntk.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "NNGP over {n} points, NTK over {}",
            ntk.n()
        )));
    }
    let ns = train_targets.len();
    if ns == 0 || ns >= n {
        return Err(Error::DimensionMismatch(format!(
            "{ns} training targets for kernels over {n} points"
        )));
    }
    let k_ss = nngp.block(0..ns, 0..ns);
    let k_se = nngp.block(0..ns, ns..n);
    let k_ee = nngp.block(ns..n, ns..n);
    let t_ss = ntk.block(0..ns, 0..ns);
    let t_se = ntk.block(0..ns, ns..n);

    let (chol, _) = jittered_cholesky(&t_ss)?;
    // a = Theta_SS^-1 Theta_SE, alpha = Theta_SS^-1 y
    let a = chol.solve(&t_se);
    let alpha = chol.solve(train_targets);
    let mean = t_se.transpose() * alpha;
    let cross = a.transpose() * &k_se;
    let mut covariance =
        k_ee + a.transpose() * &k_ss * &a - &cross - cross.transpose();
    symmetrise(&mut covariance);
    Ok(GaussianPosterior {
        mean,
        covariance,
        noise_variance: 0.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Renormalisation {
    /// Scale so the probabilities sum to one over the map's support.
    UnitSum,
    /// Multiply every probability by the supplied factor.
    External(f64),
}

/// Apply one multiplicative constant to a map of log probabilities,
/// preserving all ratios.
pub fn renormalise_ep(
    log_probs: &BTreeMap<BinaryFunction, f64>,
    reference: Renormalisation,
) -> Result<BTreeMap<BinaryFunction, f64>> {
    if log_probs.is_empty() {
        return Err(Error::EmptyTable);
    }
    let shift = match reference {
        Renormalisation::UnitSum => {
            let values: Vec<f64> = log_probs.values().cloned().collect();
            -stats::log_sum_exp(&values)
        }
        Renormalisation::External(factor) => {
            if factor <= 0.0 {
                return Err(Error::Other("renormalisation factor must be positive".into()));
            }
            factor.ln()
        }
    };
    Ok(log_probs
        .iter()
        .map(|(f, &lp)| (f.clone(), lp + shift))
        .collect())
}
