// Scratch: criterion-6 fidelity probe across master seeds.
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
    let n_sgd: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    for master in [1u64, 2, 3, 4] {
        let mut config = ExperimentConfig::from_toml(&text).unwrap();
        config.master_seed = master;
        let (split, _) = config.resolve_split().unwrap();
        let net = config.net_config(split.train.dim(), InitScheme::TrainInit { sigma_w: 1.0 }).unwrap();
        let opt = OptimiserConfig::sgd();
        let t0 = std::time::Instant::now();
        let sgd = estimate_p_opt(&net, &opt, Loss::Mse, &split, n_sgd, master).unwrap();
        let ns = split.train.len();
        let pts = DMatrix::from_fn(ns + split.test.len(), split.train.dim(), |i, j| {
            if i < ns { split.train.inputs()[(i, j)] } else { split.test.inputs()[(i - ns, j)] }
        });
        let kernel = nngp_relu_kernel(&pts, 2, 1.0, 0.1).unwrap();
        let post = regression_posterior(&kernel, &regression_targets(split.train.labels().unwrap()), 0.002).unwrap();
        let gp = sample_functions(&post, 100_000, derive_seed(master, 0x5A), "gp-mse").unwrap();

        // criterion threshold: count >= 10 per table scaled to n_sgd
        let min_sgd = ((10.0 * n_sgd as f64 / 2000.0).round() as u64).max(1);
        let (mut la, mut lb) = (Vec::new(), Vec::new());
        let mut sum_sgd = 0.0;
        let mut sum_gp = 0.0;
        for (f, c) in sgd.table.iter() {
            let gc = gp.count(f);
            if c >= min_sgd && gc >= 10 {
                sum_sgd += c as f64 / sgd.table.total() as f64;
                sum_gp += gc as f64 / gp.total() as f64;
                la.push((c as f64 / sgd.table.total() as f64).ln());
                lb.push((gc as f64 / gp.total() as f64).ln());
            }
        }
        let top_gp_hex = gp.sorted_rows()[0].0.clone();
        let top = BinaryFunction::from_hex(&top_gp_hex, split.test.len()).unwrap();
        let truth = BinaryFunction::from_bits(split.test.labels().unwrap());
        println!(
            "master {master}: {:.0?} | discarded {} | gp distinct {} | joint {} | pearson {:.3} | sum_sgd {:.3} sum_gp {:.3} | top-in-sgd {} | err sgd {:.3} gp {:.3}",
            t0.elapsed(), sgd.discarded, gp.distinct(), la.len(),
            stats::pearson(&la, &lb), sum_sgd, sum_gp,
            sgd.table.count(&top),
            sgd.table.mean_error(&truth).unwrap(), gp.mean_error(&truth).unwrap()
        );
    }
}
