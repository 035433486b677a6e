// Scratch: criterion-9 corruption profile + joint-pair dump at master seed 1.
use funcprob::data::make_split;
use funcprob::funcspace::BinaryFunction;
use funcprob::gp::{regression_posterior, regression_targets, sample_functions};
use funcprob::kernel::nngp_relu_kernel;
use funcprob::net::{InitScheme, Loss, NetConfig};
use funcprob::opt::{estimate_p_opt, OptimiserConfig};
use funcprob::rng::derive_seed;
use funcprob::stats;
use funcprob_cli::config::ExperimentConfig;
use nalgebra::DMatrix;

fn main() {
    let text = std::fs::read_to_string("/tmp/probe/c6.toml").unwrap();
    let n_sgd: u64 = 600;
    for corruption in [0.0f64, 0.2] {
        let mut config = ExperimentConfig::from_toml(&text).unwrap();
        config.master_seed = 1;
        config.dataset.corruption = corruption;
        let (split, _) = config.resolve_split().unwrap();
        let net = config.net_config(split.train.dim(), InitScheme::TrainInit { sigma_w: 1.0 }).unwrap();
        let opt = OptimiserConfig::sgd();
        let t0 = std::time::Instant::now();
        let sgd = estimate_p_opt(&net, &opt, Loss::Mse, &split, n_sgd, 1).unwrap();
        let elapsed = t0.elapsed();
        let ns = split.train.len();
        let pts = DMatrix::from_fn(ns + split.test.len(), split.train.dim(), |i, j| {
            if i < ns { split.train.inputs()[(i, j)] } else { split.test.inputs()[(i - ns, j)] }
        });
        let kernel = nngp_relu_kernel(&pts, 2, 1.0, 0.1).unwrap();
        let post = regression_posterior(&kernel, &regression_targets(split.train.labels().unwrap()), 0.002).unwrap();
        let gp = sample_functions(&post, 100_000, derive_seed(1, 0x5A), "gp-mse").unwrap();
        let min_sgd = 3u64;
        let (mut la, mut lb) = (Vec::new(), Vec::new());
        let mut sum_sgd = 0.0;
        for (f, c) in sgd.table.iter() {
            let gc = gp.count(f);
            if c >= min_sgd && gc >= 10 {
                sum_sgd += c as f64 / sgd.table.total() as f64;
                la.push((c as f64 / sgd.table.total() as f64).ln());
                lb.push((gc as f64 / gp.total() as f64).ln());
            }
        }
        println!(
            "c={corruption}: {elapsed:.0?} | discarded {} | sgd distinct {} | gp distinct {} | joint {} | pearson {:.3} | sum_sgd {:.3}",
            sgd.discarded, sgd.table.distinct(), gp.distinct(), la.len(), stats::pearson(&la, &lb), sum_sgd
        );
        if corruption == 0.0 {
            println!("joint pairs (ln p_sgd, ln p_gp):");
            for (a, b) in la.iter().zip(&lb) {
                println!("  {a:.2} {b:.2}");
            }
        }
    }
    let _ = make_split; let _ = BinaryFunction::zeros(1);
}
