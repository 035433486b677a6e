// Scratch probe: reduced-scale dry runs of the statistical acceptance
// experiments, to sanity-check effect directions before the full-scale run.

use funcprob::abi::{abi_sample, AbiConfig};
use funcprob::data::{boolean_domain, split_single};
use funcprob::funcspace::BinaryFunction;
use funcprob::gp::{
    regression_posterior, regression_targets, sample_functions, EpPricer, Linking,
};
use funcprob::kernel::nngp_relu_kernel;
use funcprob::net::{InitScheme, NetConfig};
use funcprob::opt::{estimate_p_opt, OptimiserConfig};
use funcprob::stats;
use funcprob_cli::config::ExperimentConfig;
use nalgebra::DMatrix;

fn stacked(split: &funcprob::data::Split) -> DMatrix<f64> {
    let ns = split.train.len();
    let d = split.train.dim();
    DMatrix::from_fn(ns + split.test.len(), d, |i, j| {
        if i < ns {
            split.train.inputs()[(i, j)]
        } else {
            split.test.inputs()[(i - ns, j)]
        }
    })
}

fn probe_abi() {
    let d = 5usize;
    let domain = 1usize << d;
    let net = NetConfig::new(vec![d, 20, 20, 1], InitScheme::prior(1.0)).unwrap();

    // Prior run to find high-frequency targets.
    let prior_cfg = AbiConfig {
        net: net.clone(),
        sigma_w: 1.0,
        sigma_b: 1.0,
        target: BinaryFunction::zeros(domain),
        train_indices: vec![],
        n_samples: 200_000,
    };
    let t0 = std::time::Instant::now();
    let prior = abi_sample(&prior_cfg, 1).unwrap();
    println!("prior run n=2e5 in {:.1?}; distinct {}", t0.elapsed(), prior.table.distinct());
    let rows = prior.table.sorted_rows();
    for (hex, count, p) in rows.iter().take(8) {
        println!("  {hex} count {count} p {p:.4}");
    }

    // Target: most frequent non-constant function.
    let target_hex = rows
        .iter()
        .map(|(h, _, _)| h.clone())
        .find(|h| h != "00000000" && h != "ffffffff")
        .unwrap();
    println!("target = {target_hex}");
    let target = BinaryFunction::from_hex(&target_hex, domain).unwrap();

    let labelled = boolean_domain(d).unwrap().with_labels(target.bits()).unwrap();
    let split = split_single(&labelled, 8, domain - 8, 99).unwrap();

    let abi_cfg = AbiConfig {
        net: net.clone(),
        sigma_w: 1.0,
        sigma_b: 1.0,
        target: target.clone(),
        train_indices: split.train_indices.clone(),
        n_samples: 1_000_000,
    };
    let t0 = std::time::Instant::now();
    let abi = abi_sample(&abi_cfg, 2).unwrap();
    println!(
        "abi n=1e6 in {:.1?}: accepted {} (rate {:.3})",
        t0.elapsed(),
        abi.accepted,
        abi.acceptance_rate()
    );
    let abi_on_e = abi.table.restrict(&split.test_indices);

    // GP-MSE on the same split.
    let points = stacked(&split);
    let kernel = nngp_relu_kernel(&points, 2, 1.0, 1.0).unwrap();
    let targets = regression_targets(split.train.labels().unwrap());
    let posterior = regression_posterior(&kernel, &targets, 0.002).unwrap();
    let gp = sample_functions(&posterior, 1_000_000, 3, "gp-mse").unwrap();

    // Spearman over ABI count >= 50 functions.
    let mut abi_lp = Vec::new();
    let mut gp_lp = Vec::new();
    let mut missing = 0;
    for (f, c) in abi_on_e.iter() {
        if c < 50 {
            continue;
        }
        abi_lp.push((c as f64 / abi_on_e.total() as f64).ln());
        let gc = gp.count(f);
        if gc == 0 {
            missing += 1;
        }
        gp_lp.push(((gc.max(1)) as f64 / gp.total() as f64).ln());
    }
    println!(
        "abi-vs-gpmse: {} functions (missing in gp: {missing}), spearman {:.3}",
        abi_lp.len(),
        stats::spearman(&abi_lp, &gp_lp)
    );

    // EP ratio-of-likelihoods on the same functions.
    let pricer = EpPricer::new(&kernel, split.train.labels().unwrap(), Linking::Heaviside).unwrap();
    let t0 = std::time::Instant::now();
    let mut ep_lp = Vec::new();
    let mut abi_lp2 = Vec::new();
    for (f, c) in abi_on_e.iter() {
        if c < 50 {
            continue;
        }
        abi_lp2.push((c as f64 / abi_on_e.total() as f64).ln());
        ep_lp.push(pricer.log_posterior(f).unwrap());
    }
    println!(
        "abi-vs-ep: {} functions priced in {:.1?}, spearman {:.3}",
        ep_lp.len(),
        t0.elapsed(),
        stats::spearman(&abi_lp2, &ep_lp)
    );
}

fn probe_sgd_vs_gp(corruption: f64) {
    let text = std::fs::read_to_string("/tmp/probe/c6.toml").unwrap();
    let mut config = ExperimentConfig::from_toml(&text).unwrap();
    config.dataset.corruption = corruption;
    let (split, _) = config.resolve_split().unwrap();
    let net = config
        .net_config(split.train.dim(), InitScheme::TrainInit { sigma_w: 1.0 })
        .unwrap();
    let opt = OptimiserConfig::sgd();
    let t0 = std::time::Instant::now();
    let n_sgd = 300;
    let sample = estimate_p_opt(&net, &opt, funcprob::net::Loss::Mse, &split, n_sgd, 1).unwrap();
    println!(
        "sgd n={n_sgd} c={corruption} in {:.1?} (discarded {})",
        t0.elapsed(),
        sample.discarded
    );

    let points = stacked(&split);
    let kernel = nngp_relu_kernel(&points, 2, 1.0, 0.1).unwrap();
    let targets = regression_targets(split.train.labels().unwrap());
    let posterior = regression_posterior(&kernel, &targets, 0.002).unwrap();
    let gp = sample_functions(&posterior, 100_000, 7, "gp-mse").unwrap();
    println!("  gp distinct {} | sgd distinct {}", gp.distinct(), sample.table.distinct());

    let min_count = 3; // scaled-down stand-in for 10 at n=2000
    let mut la = Vec::new();
    let mut lb = Vec::new();
    let mut sum_sgd = 0.0;
    for (f, c) in sample.table.iter() {
        let gc = gp.count(f);
        if c >= min_count && gc >= min_count {
            sum_sgd += c as f64 / sample.table.total() as f64;
            la.push((c as f64 / sample.table.total() as f64).ln());
            lb.push((gc as f64 / gp.total() as f64).ln());
        }
    }
    println!(
        "  joint {} | pearson(log,log) {:.3} | sum_sgd_on_joint {:.3}",
        la.len(),
        stats::pearson(&la, &lb),
        sum_sgd
    );
    // top GP function present in SGD sample?
    let top_gp = gp.sorted_rows()[0].0.clone();
    let top = BinaryFunction::from_hex(&top_gp, split.test.len()).unwrap();
    println!(
        "  top gp function count in sgd: {} (gp p {:.3})",
        sample.table.count(&top),
        gp.probability(&top)
    );
    // mean errors
    let truth = BinaryFunction::from_bits(split.test.labels().unwrap());
    println!(
        "  mean error: sgd {:.3} gp {:.3}",
        sample.table.mean_error(&truth).unwrap(),
        gp.mean_error(&truth).unwrap()
    );

    // product predictions (criterion 8 probe)
    if corruption == 0.0 {
        let p = gp.per_bit_marginals(&truth).unwrap();
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for (f, c) in gp.iter() {
            if c < 100 {
                continue;
            }
            let pred = funcprob::analysis::product_prediction(&p, f, &truth).unwrap();
            let actual = (c as f64 / gp.total() as f64).log10();
            worst = worst.max((pred - actual).abs());
            checked += 1;
        }
        println!("  product-prediction: {checked} functions, worst |delta decades| {worst:.3}");
    }
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    match which.as_str() {
        "abi" => probe_abi(),
        "sgd" => probe_sgd_vs_gp(0.0),
        "corrupt" => probe_sgd_vs_gp(0.2),
        _ => {
            probe_abi();
            probe_sgd_vs_gp(0.0);
            probe_sgd_vs_gp(0.2);
        }
    }
}
