//! Experiment execution: resolve the config, run the requested estimator,
//! and persist results plus a manifest sufficient to re-execute the run
//! bit-identically.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;

use funcprob::abi::{abi_sample, AbiConfig};
use funcprob::analysis::{self, EpContext};
use funcprob::data::Split;
use funcprob::funcspace::{BinaryFunction, FrequencyTable};
use funcprob::gp::{
    ep_fit, ep_posterior_sample, ntk_output_distribution, regression_posterior,
    regression_targets, sample_functions, Linking,
};
use funcprob::kernel::{nngp_relu_kernel, ntk_relu_kernel, KernelMatrix};
use funcprob::net::{threshold, InitScheme};
use funcprob::opt::{estimate_p_opt, train_to_zero_error, TrainOutcome};
use funcprob::rng::derive_seed;

use crate::config::{ExperimentConfig, STREAM_SAMPLER};

/// Which estimator a run executes; selected by the CLI subcommand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorKind {
    Opt,
    GpMse,
    GpEp,
    Ntk,
    Abi,
    EpProb,
    ErrorCurve,
    Csr,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Opt => "sample-opt",
            EstimatorKind::GpMse => "sample-gp-mse",
            EstimatorKind::GpEp => "sample-gp-ep",
            EstimatorKind::Ntk => "ntk",
            EstimatorKind::Abi => "abi",
            EstimatorKind::EpProb => "ep-prob",
            EstimatorKind::ErrorCurve => "error-curve",
            EstimatorKind::Csr => "csr",
        }
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    /// Result files, relative to `out_dir`, in write order. The manifest is
    /// not listed; it is not part of the replayable payload.
    pub result_files: Vec<String>,
    pub notes: BTreeMap<String, String>,
}

/// Stack the split's training inputs above its test inputs.
fn stacked_points(split: &Split) -> DMatrix<f64> {
    let ns = split.train.len();
    let ne = split.test.len();
    let d = split.train.dim();
    DMatrix::from_fn(ns + ne, d, |i, j| {
        if i < ns {
            split.train.inputs()[(i, j)]
        } else {
            split.test.inputs()[(i - ns, j)]
        }
    })
}

fn kernels_for(
    config: &ExperimentConfig,
    split: &Split,
    with_ntk: bool,
) -> Result<(KernelMatrix, Option<KernelMatrix>)> {
    let (sigma_w, sigma_b) = config.prior_sigmas();
    let depth = config.kernel_depth();
    let points = stacked_points(split);
    let nngp = nngp_relu_kernel(&points, depth, sigma_w, sigma_b)?;
    let ntk = if with_ntk {
        Some(ntk_relu_kernel(&points, depth, sigma_w, sigma_b)?)
    } else {
        None
    };
    Ok((nngp, ntk))
}

fn linking_of(config: &ExperimentConfig) -> Linking {
    config
        .gp
        .as_ref()
        .and_then(|g| g.linking)
        .unwrap_or(Linking::Heaviside)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_table(dir: &Path, stem: &str, table: &FrequencyTable) -> Result<Vec<String>> {
    write_file(dir, &format!("{stem}.csv"), &table.to_csv())?;
    write_file(dir, &format!("{stem}.json"), &table.to_json())?;
    Ok(vec![format!("{stem}.csv"), format!("{stem}.json")])
}

/// Execute one experiment. `functions_csv` feeds the `ep-prob` estimator;
/// `jobs = 0` keeps the global thread pool.
pub fn run(
    config: &ExperimentConfig,
    kind: EstimatorKind,
    out_dir: &Path,
    jobs: usize,
    functions_csv: Option<&Path>,
) -> Result<RunOutput> {
    config.validate()?;
    if jobs > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .context("building worker pool")?;
        return pool.install(|| run_inner(config, kind, out_dir, functions_csv, jobs));
    }
    run_inner(config, kind, out_dir, functions_csv, jobs)
}

fn run_inner(
    config: &ExperimentConfig,
    kind: EstimatorKind,
    out_dir: &Path,
    functions_csv: Option<&Path>,
    jobs: usize,
) -> Result<RunOutput> {
    if config.n == 0
        && matches!(
            kind,
            EstimatorKind::Opt
                | EstimatorKind::GpMse
                | EstimatorKind::GpEp
                | EstimatorKind::Ntk
                | EstimatorKind::Abi
        )
    {
        bail!("n = 0: nothing to sample");
    }
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let started = Instant::now();
    let (split, mut notes) = config.resolve_split()?;
    let sampler_seed = derive_seed(config.master_seed, STREAM_SAMPLER);

    let mut result_files = Vec::new();
    match kind {
        EstimatorKind::Opt => {
            let section = config
                .optimiser
                .as_ref()
                .context("sample-opt needs an [optimiser] section")?;
            let net = config.net_config(
                split.train.dim(),
                InitScheme::TrainInit {
                    sigma_w: config.architecture.sigma_w,
                },
            )?;
            let opt_config = section.to_optimiser_config();
            let sample = estimate_p_opt(
                &net,
                &opt_config,
                section.loss,
                &split,
                config.n,
                config.master_seed,
            )?;
            notes.insert("converged".into(), sample.converged.to_string());
            notes.insert("discarded".into(), sample.discarded.to_string());
            result_files.extend(write_table(out_dir, "table", &sample.table)?);
        }
        EstimatorKind::GpMse => {
            let (nngp, _) = kernels_for(config, &split, false)?;
            let noise = config
                .gp
                .as_ref()
                .map(|g| g.noise_variance)
                .unwrap_or(funcprob::gp::DEFAULT_NOISE_VARIANCE);
            let targets = regression_targets(split.train.labels()?);
            let posterior = regression_posterior(&nngp, &targets, noise)?;
            let table = sample_functions(&posterior, config.n, sampler_seed, "gp-mse")?;
            result_files.extend(write_table(out_dir, "table", &table)?);
        }
        EstimatorKind::GpEp => {
            let (nngp, _) = kernels_for(config, &split, false)?;
            let linking = linking_of(config);
            let ns = split.train.len();
            let k_ss = nngp.block(0..ns, 0..ns);
            let state = ep_fit(&k_ss, split.train.labels()?, linking)?;
            notes.insert("ep_converged".into(), state.converged.to_string());
            notes.insert("ep_sweeps".into(), state.sweeps.to_string());
            let table = ep_posterior_sample(&state, &nngp, ns, config.n, sampler_seed)?;
            result_files.extend(write_table(out_dir, "table", &table)?);
        }
        EstimatorKind::Ntk => {
            let (nngp, ntk) = kernels_for(config, &split, true)?;
            let targets = regression_targets(split.train.labels()?);
            let posterior = ntk_output_distribution(&nngp, &ntk.unwrap(), &targets)?;
            let table = sample_functions(&posterior, config.n, sampler_seed, "ntk")?;
            result_files.extend(write_table(out_dir, "table", &table)?);
        }
        EstimatorKind::Abi => {
            let ds = &config.dataset;
            if ds.name != "boolean" {
                bail!("the abi estimator runs on the boolean dataset only");
            }
            let d = ds.boolean_d.unwrap();
            let target = BinaryFunction::from_hex(ds.target_hex.as_ref().unwrap(), 1 << d)?;
            let (sw_default, sb_default) = config.prior_sigmas();
            let (sigma_w, sigma_b) = match &config.abi {
                Some(a) => (
                    a.sigma_w.unwrap_or(sw_default),
                    a.sigma_b.unwrap_or(sb_default),
                ),
                None => (sw_default, sb_default),
            };
            let abi_config = AbiConfig {
                net: config.net_config(d, InitScheme::prior(sigma_w))?,
                sigma_w,
                sigma_b,
                target,
                train_indices: split.train_indices.clone(),
                n_samples: config.n,
            };
            let sample = abi_sample(&abi_config, sampler_seed)?;
            notes.insert("accepted".into(), sample.accepted.to_string());
            notes.insert(
                "acceptance_rate".into(),
                format!("{:.6e}", sample.acceptance_rate()),
            );
            result_files.extend(write_table(out_dir, "abi-full", &sample.table)?);
            let restricted = sample.table.restrict(&split.test_indices);
            result_files.extend(write_table(out_dir, "table", &restricted)?);
        }
        EstimatorKind::EpProb => {
            let path = functions_csv.context("ep-prob needs --functions <table.csv>")?;
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let functions =
                FrequencyTable::from_csv(&text, split.test.len(), "input")?;
            let (nngp, _) = kernels_for(config, &split, false)?;
            let linking = linking_of(config);
            let s_labels = split.train.labels()?;
            let pricer = funcprob::gp::EpPricer::new(&nngp, s_labels, linking)?;
            let fs: Vec<BinaryFunction> = functions.iter().map(|(f, _)| f.clone()).collect();
            use rayon::prelude::*;
            let priced: Vec<funcprob::Result<f64>> = fs
                .par_iter()
                .map(|f| pricer.log_posterior(f))
                .collect();
            let mut csv = String::from("function_hex,log10_prob,estimator,linking\n");
            let linking_name = match linking {
                Linking::Heaviside => "heaviside".to_string(),
                Linking::Probit { scale } => format!("probit({scale})"),
            };
            for (f, lp) in fs.iter().zip(priced) {
                let lp = lp?;
                csv.push_str(&format!(
                    "{},{:.12e},gp-ep,{}\n",
                    f.to_hex(),
                    lp * std::f64::consts::LOG10_E,
                    linking_name
                ));
            }
            write_file(out_dir, "logprobs.csv", &csv)?;
            result_files.push("logprobs.csv".into());
        }
        EstimatorKind::ErrorCurve => {
            let section = config
                .error_curve
                .as_ref()
                .context("error-curve needs an [error_curve] section")?;
            let (nngp, _) = kernels_for(config, &split, false)?;
            let linking = linking_of(config);
            let truth = BinaryFunction::from_bits(split.test.labels()?);
            let ctx = EpContext {
                kernel: &nngp,
                s_labels: split.train.labels()?,
                linking,
            };
            let curve = analysis::error_curve(
                &truth,
                &section.grid,
                section.n_per_error,
                &ctx,
                derive_seed(config.master_seed, 0xEC),
            )?;
            write_file(out_dir, "error_curve.csv", &curve.to_csv())?;
            result_files.push("error_curve.csv".into());
        }
        EstimatorKind::Csr => {
            let section = config.csr.clone().unwrap_or(crate::config::CsrSection {
                radius: analysis::DEFAULT_CSR_RADIUS,
                probe_budget: 100,
            });
            let opt_section = config
                .optimiser
                .as_ref()
                .context("csr trains one network; it needs an [optimiser] section")?;
            let net = config.net_config(
                split.train.dim(),
                InitScheme::TrainInit {
                    sigma_w: config.architecture.sigma_w,
                },
            )?;
            let opt_config = opt_section.to_optimiser_config();
            let outcome = train_to_zero_error(
                &net,
                &opt_config,
                opt_section.loss,
                &split.train,
                derive_seed(config.master_seed, 0xC5),
            )?;
            let params = match outcome {
                TrainOutcome::Converged { params, epochs } => {
                    notes.insert("train_epochs".into(), epochs.to_string());
                    params
                }
                TrainOutcome::Discarded => bail!("training run discarded; no function to probe"),
            };
            let fraction = analysis::csr(
                &params,
                split.test.inputs(),
                section.radius,
                section.probe_budget,
                derive_seed(config.master_seed, 0xC6),
            );
            // Record the function alongside its complexity.
            let f = funcprob::net::evaluate_function(&params, &split.test)?;
            let json = serde_json::json!({
                "csr": fraction,
                "radius": section.radius,
                "probe_budget": section.probe_budget,
                "n_samples": split.test.len(),
                "function_hex": f.to_hex(),
                "train_errors_on_eval": 0,
            });
            write_file(out_dir, "csr.json", &serde_json::to_string_pretty(&json)?)?;
            result_files.push("csr.json".into());
        }
    }

    let wall = started.elapsed().as_secs_f64();
    // Sanity: thresholding convention is pinned here so a manifest reader
    // can interpret the tables (positive pre-activation means label 1).
    debug_assert_eq!(threshold(0.5).unwrap(), 1);

    let manifest = render_manifest(config, kind, &result_files, &notes, wall, jobs, functions_csv);
    write_file(out_dir, "manifest.txt", &manifest)?;
    Ok(RunOutput {
        out_dir: out_dir.to_path_buf(),
        result_files,
        notes,
    })
}

const CONFIG_BEGIN: &str = "--- config.toml ---";
const CONFIG_END: &str = "--- end config.toml ---";

fn render_manifest(
    config: &ExperimentConfig,
    kind: EstimatorKind,
    result_files: &[String],
    notes: &BTreeMap<String, String>,
    wall_seconds: f64,
    jobs: usize,
    functions_csv: Option<&Path>,
) -> String {
    let mut out = String::new();
    out.push_str(&format!("manifest_version = 1\n"));
    out.push_str(&format!("estimator = {}\n", kind.name()));
    out.push_str(&format!("master_seed = {}\n", config.master_seed));
    out.push_str(&format!("n = {}\n", config.n));
    out.push_str(&format!("jobs = {jobs}\n"));
    out.push_str(&format!("wall_seconds = {wall_seconds:.3}\n"));
    if let Some(p) = functions_csv {
        out.push_str(&format!("functions_csv = {}\n", p.display()));
    }
    for (k, v) in notes {
        out.push_str(&format!("note.{k} = {v}\n"));
    }
    for f in result_files {
        out.push_str(&format!("output = {f}\n"));
    }
    out.push_str(CONFIG_BEGIN);
    out.push('\n');
    out.push_str(&config.to_toml());
    out.push_str(CONFIG_END);
    out.push('\n');
    out
}

/// Parse a manifest back into the pieces needed to re-execute the run.
pub fn parse_manifest(text: &str) -> Result<(ExperimentConfig, EstimatorKind, Option<PathBuf>, Vec<String>)> {
    let begin = text
        .find(CONFIG_BEGIN)
        .context("manifest has no embedded config")?;
    let end = text.find(CONFIG_END).context("manifest config unterminated")?;
    let config_text = &text[begin + CONFIG_BEGIN.len()..end];
    let config = ExperimentConfig::from_toml(config_text.trim_start_matches('\n'))?;

    let mut kind = None;
    let mut functions_csv = None;
    let mut outputs = Vec::new();
    for line in text[..begin].lines() {
        if let Some(rest) = line.strip_prefix("estimator = ") {
            kind = Some(match rest.trim() {
                "sample-opt" => EstimatorKind::Opt,
                "sample-gp-mse" => EstimatorKind::GpMse,
                "sample-gp-ep" => EstimatorKind::GpEp,
                "ntk" => EstimatorKind::Ntk,
                "abi" => EstimatorKind::Abi,
                "ep-prob" => EstimatorKind::EpProb,
                "error-curve" => EstimatorKind::ErrorCurve,
                "csr" => EstimatorKind::Csr,
                other => bail!("unknown estimator {other:?} in manifest"),
            });
        } else if let Some(rest) = line.strip_prefix("functions_csv = ") {
            functions_csv = Some(PathBuf::from(rest.trim()));
        } else if let Some(rest) = line.strip_prefix("output = ") {
            outputs.push(rest.trim().to_string());
        }
    }
    Ok((
        config,
        kind.context("manifest missing estimator")?,
        functions_csv,
        outputs,
    ))
}

/// Re-execute a manifest into `replay_dir` and byte-compare every result
/// file against the original run directory. Returns the mismatched files.
pub fn replay(manifest_path: &Path, replay_dir: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(manifest_path)
        .with_context(|| format!("reading {}", manifest_path.display()))?;
    let (config, kind, functions_csv, outputs) = parse_manifest(&text)?;
    let original_dir = manifest_path
        .parent()
        .context("manifest has no parent directory")?;
    run(&config, kind, replay_dir, 0, functions_csv.as_deref())?;
    let mut mismatches = Vec::new();
    for name in &outputs {
        let a = std::fs::read(original_dir.join(name))
            .with_context(|| format!("original output {name}"))?;
        let b = std::fs::read(replay_dir.join(name))
            .with_context(|| format!("replayed output {name}"))?;
        if a != b {
            mismatches.push(name.clone());
        }
    }
    Ok(mismatches)
}
