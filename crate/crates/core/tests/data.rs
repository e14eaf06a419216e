mod common;

use loanvar::data::{generate_synthetic, load_csv, preprocess, write_csv, Split, SynthConfig};
use loanvar::neural::sigmoid;

#[test]
fn zero_coefficients_give_the_intercept_rate() {
    let cfg = SynthConfig {
        loans: 100_000,
        width: 4,
        coefficients: vec![],
        intercept: -2.0,
        seed: 4,
        ..SynthConfig::default()
    };
    let ds = generate_synthetic(&cfg).unwrap();
    let p = sigmoid(-2.0);
    let rate = ds.records.iter().filter(|r| r.defaulted).count() as f64 / 1e5;
    let se = (p * (1.0 - p) / 1e5).sqrt();
    assert!((rate - p).abs() < 3.0 * se, "rate {rate}, expected {p}");
}

#[test]
fn default_lifetimes_follow_the_truncated_weibull() {
    let cfg = SynthConfig {
        loans: 100_000,
        width: 2,
        coefficients: vec![],
        intercept: 0.0,
        seed: 5,
        ..SynthConfig::default()
    };
    let ds = generate_synthetic(&cfg).unwrap();
    let generated: Vec<u32> = ds.records.iter().filter(|r| r.defaulted).map(|r| r.lifetime).collect();

    // Independent sample: rejection from the untruncated Weibull.
    let mut r = common::rng(77);
    let mut oracle = Vec::new();
    while oracle.len() < 100_000 {
        let t = common::weibull_draw(&mut r, cfg.weibull_lambda, cfg.weibull_rho);
        if t < cfg.term as f64 {
            oracle.push(t.floor() as u32);
        }
    }
    let cdf = |v: &[u32], i: u32| v.iter().filter(|x| **x <= i).count() as f64 / v.len() as f64;
    let d = (0..cfg.term).map(|i| (cdf(&generated, i) - cdf(&oracle, i)).abs()).fold(0.0, f64::max);
    let (n1, n2) = (generated.len() as f64, oracle.len() as f64);
    // Two-sample Kolmogorov-Smirnov at the 0.1% level.
    let critical = 1.95 * ((n1 + n2) / (n1 * n2)).sqrt();
    assert!(d < critical, "KS distance {d} vs {critical}");
}

#[test]
fn split_normalize_and_reload() {
    let cfg = SynthConfig {
        loans: 2_000,
        width: 5,
        coefficients: vec![1.0, -0.5, 0.25],
        seed: 6,
        ..SynthConfig::default()
    };
    let raw = generate_synthetic(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("book.csv");
    write_csv(&raw, &path).unwrap();
    let loaded = load_csv(&path).unwrap();
    assert!(loaded.rejected.is_empty());
    assert_eq!(loaded.dataset.records, raw.records);

    let ratios = [0.7, 0.15, 0.15];
    let a = preprocess(&raw, ratios, 1).unwrap();
    let b = preprocess(&loaded.dataset, ratios, 1).unwrap();
    assert_eq!(a.splits, b.splits);
    assert_eq!(a.indices(Split::Train).len(), 1400);
    let train = a.subset(Split::Train);
    for j in 0..5 {
        let col: Vec<f64> = train.iter().map(|r| r.features[j]).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-6);
    }
    assert_ne!(preprocess(&raw, ratios, 2).unwrap().splits, a.splits);
}
