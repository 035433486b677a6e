//! Posterior estimation by direct parameter sampling on small Boolean
//! systems: draw parameters from the (untruncated) Gaussian prior, keep the
//! draws that label the training subset exactly, and tally the full-domain
//! function of each kept draw. Exact up to sampling error, so it serves as
//! the gold standard the approximate estimators are checked against.

use rayon::prelude::*;

use crate::data;
use crate::error::{Error, Result};
use crate::funcspace::{BinaryFunction, FrequencyTable};
use crate::net::NetConfig;
#[cfg(test)]
use crate::net::{Layer, NetParams};
use crate::rng::{self, Prng};

/// Largest Boolean dimension the sampler will enumerate.
pub const MAX_DOMAIN_BITS: usize = 12;

#[derive(Clone, Debug)]
pub struct AbiConfig {
    pub net: NetConfig,
    /// Prior deviations; weights are scaled by `1/sqrt(fan_in)` as usual,
    /// biases use `sigma_b` directly. Untruncated, unlike the optimiser's
    /// initialiser.
    pub sigma_w: f64,
    pub sigma_b: f64,
    /// Target labelling of the full `2^d` domain.
    pub target: BinaryFunction,
    /// Domain indices that form the training subset (may be empty, in which
    /// case every sample is accepted and the table estimates the prior).
    pub train_indices: Vec<usize>,
    pub n_samples: u64,
}

impl AbiConfig {
    pub fn validate(&self) -> Result<()> {
        let d = self.net.input_dim();
        if d > MAX_DOMAIN_BITS {
            return Err(Error::BadBooleanDimension(d));
        }
        let domain = 1usize << d;
        if self.target.len() != domain {
            return Err(Error::LengthMismatch {
                expected: domain,
                got: self.target.len(),
            });
        }
        if self.sigma_w <= 0.0 || self.sigma_b <= 0.0 {
            return Err(Error::Other("prior deviations must be positive".into()));
        }
        let mut seen = vec![false; domain];
        for &i in &self.train_indices {
            if i >= domain {
                return Err(Error::Other(format!("train index {i} outside domain")));
            }
            if seen[i] {
                return Err(Error::Other(format!("duplicate train index {i}")));
            }
            seen[i] = true;
        }
        if self.n_samples == 0 {
            return Err(Error::Other("need at least one sample".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AbiSample {
    /// Tally of full-domain functions over accepted draws.
    pub table: FrequencyTable,
    pub accepted: u64,
    pub n_samples: u64,
}

impl AbiSample {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.n_samples as f64
    }
}

/// Flat parameter buffer for the rejection loop; reused across samples so
/// the hot path allocates nothing.
pub(crate) struct FlatNet {
    widths: Vec<usize>,
    params: Vec<f64>,
    scratch_a: Vec<f64>,
    scratch_b: Vec<f64>,
}

impl FlatNet {
    pub(crate) fn new(config: &NetConfig) -> Self {
        let widths = config.layer_widths.clone();
        let n_params: usize = (0..widths.len() - 1)
            .map(|l| widths[l] * widths[l + 1] + widths[l + 1])
            .sum();
        let max_width = *widths.iter().max().unwrap();
        FlatNet {
            widths,
            params: vec![0.0; n_params],
            scratch_a: vec![0.0; max_width],
            scratch_b: vec![0.0; max_width],
        }
    }

    /// Draw all parameters from the untruncated Gaussian prior, layer by
    /// layer, weights (input-major) then biases.
    pub(crate) fn draw(&mut self, rng: &mut Prng, sigma_w: f64, sigma_b: f64) {
        let mut pos = 0;
        for l in 0..self.widths.len() - 1 {
            let fan_in = self.widths[l];
            let fan_out = self.widths[l + 1];
            let w_std = sigma_w / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                self.params[pos] = w_std * rng::standard_normal(rng);
                pos += 1;
            }
            for _ in 0..fan_out {
                self.params[pos] = sigma_b * rng::standard_normal(rng);
                pos += 1;
            }
        }
    }

    /// Pre-activation output for one input row.
    pub(crate) fn eval(&mut self, x: &[f64]) -> f64 {
        let n_layers = self.widths.len() - 1;
        self.scratch_a[..x.len()].copy_from_slice(x);
        let mut pos = 0;
        for l in 0..n_layers {
            let fan_in = self.widths[l];
            let fan_out = self.widths[l + 1];
            let (a, z) = if l % 2 == 0 {
                (&self.scratch_a, &mut self.scratch_b)
            } else {
                (&self.scratch_b, &mut self.scratch_a)
            };
            let weights = &self.params[pos..pos + fan_in * fan_out];
            let biases = &self.params[pos + fan_in * fan_out..pos + fan_in * fan_out + fan_out];
            for (o, zo) in z[..fan_out].iter_mut().enumerate() {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                let mut acc = biases[o];
                for (wi, ai) in row.iter().zip(&a[..fan_in]) {
                    acc += wi * ai;
                }
                *zo = if l == n_layers - 1 { acc } else { acc.max(0.0) };
            }
            pos += fan_in * fan_out + fan_out;
        }
        let out_buf = if n_layers % 2 == 0 {
            &self.scratch_a
        } else {
            &self.scratch_b
        };
        out_buf[0]
    }

    /// Reconstruct structured parameters (for re-checking accepted samples
    /// through the ordinary forward path).
    #[cfg(test)]
    pub(crate) fn to_net_params(&self) -> NetParams {
        let mut layers = Vec::new();
        let mut pos = 0;
        for l in 0..self.widths.len() - 1 {
            let fan_in = self.widths[l];
            let fan_out = self.widths[l + 1];
            let mut w = nalgebra::DMatrix::zeros(fan_out, fan_in);
            for o in 0..fan_out {
                for i in 0..fan_in {
                    w[(o, i)] = self.params[pos + o * fan_in + i];
                }
            }
            pos += fan_in * fan_out;
            let b = nalgebra::DVector::from_row_slice(&self.params[pos..pos + fan_out]);
            pos += fan_out;
            layers.push(Layer { w, b });
        }
        NetParams { layers }
    }
}

fn domain_rows(d: usize) -> Vec<Vec<f64>> {
    let ds = data::boolean_domain(d).expect("validated dimension");
    (0..ds.len()).map(|i| ds.row(i)).collect()
}

/// Run the rejection sampler. Per-shard seeds derive from `seed` and the
/// shard index, so the result is independent of worker count.
pub fn abi_sample(config: &AbiConfig, seed: u64) -> Result<AbiSample> {
    config.validate()?;
    let d = config.net.input_dim();
    let domain = domain_rows(d);
    let n_domain = domain.len();
    let target_bits: Vec<u8> = config
        .train_indices
        .iter()
        .map(|&i| config.target.bit(i))
        .collect();

    let shard_size: u64 = 1 << 14;
    let ranges: Vec<(u64, u64)> = (0..config.n_samples)
        .step_by(shard_size as usize)
        .map(|s| (s, (s + shard_size).min(config.n_samples)))
        .collect();

    let shards: Vec<Result<FrequencyTable>> = ranges
        .into_par_iter()
        .enumerate()
        .map(|(shard_idx, (start, end))| {
            let mut rng = rng::rng_from_seed(rng::derive_seed2(seed, 3, shard_idx as u64));
            let mut net = FlatNet::new(&config.net);
            let mut table = FrequencyTable::new(n_domain, "abi");
            let mut bits = vec![0u8; n_domain];
            for _ in start..end {
                net.draw(&mut rng, config.sigma_w, config.sigma_b);
                let mut ok = true;
                for (&idx, &want) in config.train_indices.iter().zip(&target_bits) {
                    let z = net.eval(&domain[idx]);
                    let bit = (z > 0.0) as u8;
                    if bit != want {
                        ok = false;
                        break;
                    }
                }
                if !ok {
                    continue;
                }
                for (i, row) in domain.iter().enumerate() {
                    bits[i] = (net.eval(row) > 0.0) as u8;
                }
                table.record(BinaryFunction::from_bits(&bits))?;
            }
            Ok(table)
        })
        .collect();

    let mut table = FrequencyTable::new(n_domain, "abi");
    for shard in shards {
        table.merge(&shard?)?;
    }
    if table.total() == 0 {
        return Err(Error::NoAcceptedSamples(config.n_samples));
    }
    Ok(AbiSample {
        accepted: table.total(),
        n_samples: config.n_samples,
        table,
    })
}
