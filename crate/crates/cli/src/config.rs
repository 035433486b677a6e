//! Declarative experiment configuration: a single TOML document with
//! explicit keys. The schema is versioned and unknown keys are rejected so
//! configs cannot drift silently.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use funcprob::analysis;
use funcprob::data::{
    self, boolean_domain, load_idx, normalise, Binarisation, LabelledDataset, Normalisation, Split,
};
use funcprob::funcspace::BinaryFunction;
use funcprob::net::{InitScheme, NetConfig};
use funcprob::opt::{OptKind, OptimiserConfig};
use funcprob::rng::derive_seed;

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable that overrides the dataset directory.
pub const DATA_DIR_ENV: &str = "FUNCPROB_DATA_DIR";

// Seed stream tags; each consumer of the master seed derives its own stream.
pub const STREAM_SPLIT: u64 = 0xD5;
pub const STREAM_CORRUPT: u64 = 0xC0;
pub const STREAM_SAMPLER: u64 = 0x5A;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub master_seed: u64,
    /// Sample count for the sampling estimators.
    pub n: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub architecture: ArchitectureConfig,
    #[serde(default)]
    pub optimiser: Option<OptimiserSection>,
    #[serde(default)]
    pub gp: Option<GpSection>,
    #[serde(default)]
    pub abi: Option<AbiSection>,
    #[serde(default)]
    pub error_curve: Option<ErrorCurveSection>,
    #[serde(default)]
    pub csr: Option<CsrSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// `digits`, `mnist`, `fashion`, or `boolean`.
    pub name: String,
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    pub s_size: usize,
    pub e_size: usize,
    #[serde(default)]
    pub binarisation: Option<Binarisation>,
    #[serde(default)]
    pub normalisation: Option<Normalisation>,
    /// Fraction of training labels flipped after the split.
    #[serde(default)]
    pub corruption: f64,
    /// Boolean datasets: the input dimension d (domain size 2^d).
    #[serde(default)]
    pub boolean_d: Option<usize>,
    /// Boolean datasets: hex of the target labelling of the full domain.
    #[serde(default)]
    pub target_hex: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub hidden: Vec<usize>,
    #[serde(default = "default_sigma_w")]
    pub sigma_w: f64,
    /// GP-prior bias deviation; the optimiser's initialiser always uses 0.
    #[serde(default)]
    pub sigma_b: Option<f64>,
}

fn default_sigma_w() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimiserSection {
    pub kind: OptKind,
    pub loss: funcprob::net::Loss,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub overtrain_epochs: Option<usize>,
    #[serde(default)]
    pub max_epochs: Option<usize>,
}

impl OptimiserSection {
    pub fn to_optimiser_config(&self) -> OptimiserConfig {
        let mut cfg = match self.kind {
            OptKind::Sgd => OptimiserConfig::sgd(),
            OptKind::Adam => OptimiserConfig::adam(),
            OptKind::Adagrad => OptimiserConfig::adagrad(),
            OptKind::Adadelta => OptimiserConfig::adadelta(),
            OptKind::Rmsprop => OptimiserConfig::rmsprop(),
        };
        if let Some(lr) = self.learning_rate {
            cfg.learning_rate = lr;
        }
        if let Some(bs) = self.batch_size {
            cfg.batch_size = bs;
        }
        if let Some(p) = self.overtrain_epochs {
            cfg.overtrain_epochs = p;
        }
        if let Some(m) = self.max_epochs {
            cfg.max_epochs = m;
        }
        cfg
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpSection {
    #[serde(default = "default_noise_variance")]
    pub noise_variance: f64,
    #[serde(default)]
    pub linking: Option<funcprob::gp::Linking>,
    /// Kernel depth; defaults to the number of hidden layers.
    #[serde(default)]
    pub depth: Option<usize>,
}

fn default_noise_variance() -> f64 {
    funcprob::gp::DEFAULT_NOISE_VARIANCE
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbiSection {
    #[serde(default)]
    pub sigma_w: Option<f64>,
    #[serde(default)]
    pub sigma_b: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorCurveSection {
    pub grid: Vec<f64>,
    #[serde(default = "default_n_per_error")]
    pub n_per_error: usize,
}

fn default_n_per_error() -> usize {
    analysis::DEFAULT_FUNCTIONS_PER_ERROR
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsrSection {
    #[serde(default = "default_csr_radius")]
    pub radius: f64,
    #[serde(default = "default_probe_budget")]
    pub probe_budget: usize,
}

fn default_csr_radius() -> f64 {
    analysis::DEFAULT_CSR_RADIUS
}

fn default_probe_budget() -> usize {
    100
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).context("failed to parse experiment config")?;
        if config.schema_version != SCHEMA_VERSION {
            bail!(
                "config schema version {} unsupported (expected {SCHEMA_VERSION})",
                config.schema_version
            );
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.s_size == 0 || self.dataset.e_size == 0 {
            bail!("s_size and e_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.dataset.corruption) {
            bail!("corruption must lie in [0,1]");
        }
        if self.architecture.hidden.is_empty() {
            bail!("need at least one hidden layer");
        }
        if self.architecture.sigma_w <= 0.0 {
            bail!("sigma_w must be positive");
        }
        match self.dataset.name.as_str() {
            "digits" | "mnist" | "fashion" => {}
            "boolean" => {
                let d = self
                    .dataset
                    .boolean_d
                    .context("boolean dataset needs boolean_d")?;
                if !(1..=16).contains(&d) {
                    bail!("boolean_d outside 1..=16");
                }
                if self.dataset.target_hex.is_none() {
                    bail!("boolean dataset needs target_hex");
                }
                if self.dataset.s_size + self.dataset.e_size > (1 << d) {
                    bail!("s_size + e_size exceeds the 2^d domain");
                }
            }
            other => bail!("unknown dataset name {other:?}"),
        }
        Ok(())
    }

    /// The GP prior deviations: `sigma_w` from the architecture and
    /// `sigma_b` defaulting to a tenth of it.
    pub fn prior_sigmas(&self) -> (f64, f64) {
        let sw = self.architecture.sigma_w;
        (sw, self.architecture.sigma_b.unwrap_or(0.1 * sw))
    }

    pub fn net_config(&self, input_dim: usize, init: InitScheme) -> Result<NetConfig> {
        let mut widths = vec![input_dim];
        widths.extend(&self.architecture.hidden);
        widths.push(1);
        Ok(NetConfig::new(widths, init)?)
    }

    pub fn kernel_depth(&self) -> usize {
        self.gp
            .as_ref()
            .and_then(|g| g.depth)
            .unwrap_or(self.architecture.hidden.len())
    }

    pub fn data_dir(&self) -> PathBuf {
        if let Some(dir) = &self.dataset.data_dir {
            return dir.clone();
        }
        if let Ok(env_dir) = std::env::var(DATA_DIR_ENV) {
            return PathBuf::from(env_dir);
        }
        PathBuf::from("data")
    }

    /// Load, binarise, normalise, split, and corrupt per the dataset block.
    /// Returns the split plus bookkeeping notes for the manifest.
    pub fn resolve_split(&self) -> Result<(Split, BTreeMap<String, String>)> {
        let mut notes = BTreeMap::new();
        let ds = &self.dataset;
        let split_seed = derive_seed(self.master_seed, STREAM_SPLIT);
        let mut split = match ds.name.as_str() {
            "boolean" => {
                let d = ds.boolean_d.unwrap();
                let domain = boolean_domain(d)?;
                let target_hex = ds.target_hex.as_ref().unwrap();
                let target = BinaryFunction::from_hex(target_hex, 1 << d)?;
                let labelled = domain.with_labels(target.bits())?;
                data::split_single(&labelled, ds.s_size, ds.e_size, split_seed)?
            }
            name => {
                let dir = self.data_dir();
                let (train_prefix, test_prefix) = match name {
                    "digits" => ("digits-train", "digits-test"),
                    "mnist" | "fashion" => ("train", "t10k"),
                    _ => unreachable!("validated"),
                };
                let load = |prefix: &str| -> Result<LabelledDataset> {
                    Ok(load_idx(
                        &dir.join(format!("{prefix}-images-idx3-ubyte")),
                        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
                    )?)
                };
                let binarisation = ds.binarisation.unwrap_or(match name {
                    "fashion" => Binarisation::FashionPartition,
                    _ => Binarisation::MnistParity,
                });
                let normalisation = ds.normalisation.unwrap_or(Normalisation::UnitRange);
                let prep = |raw: LabelledDataset| -> Result<LabelledDataset> {
                    let binarised = raw.binarised(binarisation)?;
                    Ok(normalise(&binarised, normalisation))
                };
                let train_archive = prep(load(train_prefix)?)?;
                let test_archive = prep(load(test_prefix)?)?;
                notes.insert("binarisation".into(), format!("{binarisation:?}"));
                notes.insert("normalisation".into(), format!("{normalisation:?}"));
                data::make_split(&train_archive, &test_archive, ds.s_size, ds.e_size, split_seed)?
            }
        };
        if ds.corruption > 0.0 {
            let corrupt_seed = derive_seed(self.master_seed, STREAM_CORRUPT);
            split.train = analysis::corrupt_labels(&split.train, ds.corruption, corrupt_seed)?;
            notes.insert("corruption".into(), format!("{}", ds.corruption));
        }
        notes.insert("split_seed".into(), format!("{split_seed}"));
        notes.insert(
            "train_indices".into(),
            format!("{:?}", split.train_indices),
        );
        notes.insert("test_indices".into(), format!("{:?}", split.test_indices));
        Ok((split, notes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
master_seed = 7
n = 10

[dataset]
name = "boolean"
boolean_d = 3
target_hex = "10"
s_size = 3
e_size = 5

[architecture]
hidden = [8, 8]
"#;

    #[test]
    fn minimal_config_parses() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.master_seed, 7);
        assert_eq!(c.prior_sigmas(), (1.0, 0.1));
        assert_eq!(c.kernel_depth(), 2);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = MINIMAL.replace("[architecture]", "mystery = 3\n[architecture]");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let bad2 = MINIMAL.replace("s_size = 3", "s_size = 3\nextra_key = 1");
        assert!(ExperimentConfig::from_toml(&bad2).is_err());
    }

    #[test]
    fn schema_version_checked() {
        let bad = MINIMAL.replace("schema_version = 1", "schema_version = 2");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn roundtrips_through_toml() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let text = c.to_toml();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back.master_seed, c.master_seed);
        assert_eq!(back.dataset.name, c.dataset.name);
    }

    #[test]
    fn boolean_split_resolves() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let (split, _) = c.resolve_split().unwrap();
        assert_eq!(split.train.len(), 3);
        assert_eq!(split.test.len(), 5);
        // Labels come from the target function over the domain.
        assert!(split.train.is_labelled());
    }
}
