mod common;

use common::{loan, weibull_draw};
use loanvar::data::LoanRecord;
use loanvar::loan_math;
use loanvar::neural::{DsnnLossWeights, ModelConfig};
use loanvar::survival::{
    fit_weibull, fit_weibull_with, lifetime_distribution, snn_default_rate, survival, train_dsnn, train_snn_only,
    DsnnConfig, SurvivalModel, WeibullParams,
};
use proptest::prelude::*;
use rand::Rng;

const REL_TOL: f64 = 0.02;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn uncensored_weibull_recovery() {
    let mut r = common::rng(5);
    let t: Vec<f64> = (0..100_000).map(|_| weibull_draw(&mut r, 0.05, 1.5)).collect();
    let e = vec![true; t.len()];
    let p = fit_weibull(&t, &e).unwrap();
    assert!(rel(p.lambda, 0.05) < REL_TOL, "lambda {}", p.lambda);
    assert!(rel(p.rho, 1.5) < REL_TOL, "rho {}", p.rho);
}

#[test]
fn exponential_data_gives_unit_shape() {
    let mut r = common::rng(6);
    let t: Vec<f64> = (0..100_000).map(|_| weibull_draw(&mut r, 0.1, 1.0)).collect();
    let p = fit_weibull_with(&t, &vec![true; t.len()], false).unwrap();
    assert!(rel(p.rho, 1.0) < REL_TOL, "rho {}", p.rho);
}

#[test]
fn all_equal_event_times_are_degenerate() {
    assert!(fit_weibull(&[4.0; 50], &[true; 50]).is_err());
}

proptest! {
    #[test]
    fn lifetime_masses_are_a_distribution(
        lambda in 1e-3f64..0.5,
        rho in 0.3f64..3.0,
        g in -5.0f64..3.0,
        term in 2u32..60,
    ) {
        let p = WeibullParams::new(lambda, rho).unwrap();
        let d = lifetime_distribution(p, g, term).unwrap();
        prop_assert_eq!(d.default_probs.len(), term as usize);
        prop_assert_eq!(d.default_probs[0], 0.0);
        prop_assert!(d.default_probs.iter().all(|q| *q >= 0.0));
        let total: f64 = d.default_probs.iter().sum::<f64>() + d.survival;
        prop_assert!((total - 1.0).abs() < 1e-9);
        let s_last = survival((term - 1) as f64, p, g).unwrap();
        prop_assert_eq!(snn_default_rate(p, g, term).unwrap(), 1.0 - s_last);
    }
}

#[test]
fn categorical_return_distribution() {
    let net = common::random_net(&[3, 4, 1], &[loanvar::neural::Activation::Tanh, loanvar::neural::Activation::Linear], 2, 0.5);
    let model = SurvivalModel {
        snn: net,
        weibull: WeibullParams::new(0.02, 1.3).unwrap(),
    };
    let l = loan(0, vec![0.2, -0.4, 0.9], 36, 0.011, false, 36);
    let d = model.predict(&l).unwrap();
    let support: Vec<f64> = d.support().collect();
    let masses: Vec<f64> = d.masses().collect();
    assert_eq!(support.len(), 37);
    assert_eq!(support[0], -1.0);
    assert_eq!(support[36], 0.011);
    assert!((masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let mut direct = 0.0;
    for i in 0..36 {
        direct += masses[i] * loan_math::default_return(&l.terms, i as u32).unwrap();
    }
    direct += masses[36] * l.terms.rate;
    assert!((d.mean() - direct).abs() < 1e-15);
}

/// Lifetimes from a Weibull whose scale depends on feature 0, censored at
/// the term.
fn survival_book(n: usize, term: u32, seed: u64) -> Vec<LoanRecord> {
    let mut r = common::rng(seed);
    (0..n)
        .map(|i| {
            let f: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
            let lambda = 0.02 * (1.2 * f[0]).exp();
            let t = weibull_draw(&mut r, lambda, 1.4);
            if t < term as f64 {
                loan(i, f, term, 0.01, true, t.floor() as u32)
            } else {
                loan(i, f, term, 0.01, false, term)
            }
        })
        .collect()
}

fn dsnn_cfg(epochs: usize) -> DsnnConfig {
    DsnnConfig {
        model: ModelConfig {
            batch_size: 64,
            learning_rate: 0.02,
            epochs,
            seed: 31,
            ..ModelConfig::default()
        },
        ..DsnnConfig::default()
    }
}

#[test]
fn two_branch_training_shrinks_the_gap() {
    let book = survival_book(2000, 24, 8);
    let fit = train_dsnn(&book, &dsnn_cfg(10)).unwrap();
    assert!(fit.final_dif < fit.initial_dif, "{} -> {}", fit.initial_dif, fit.final_dif);
    assert_eq!(fit.trace.dif.len(), 10);
    assert!(fit.model.survival.survival_loss(&book).unwrap().is_finite());
}

#[test]
fn switched_off_expert_reduces_to_survival_training() {
    let book = survival_book(500, 24, 9);
    let mut cfg = dsnn_cfg(4);
    cfg.loss_weights = DsnnLossWeights {
        survival: 1.0,
        expert: 0.0,
        dif: 0.0,
    };
    let pair = train_dsnn(&book, &cfg).unwrap();
    let (alone, trace) = train_snn_only(&book, &cfg).unwrap();
    for (a, b) in pair.trace.survival.iter().zip(&trace) {
        assert!((a - b).abs() <= 1e-12 * b.abs(), "{a} vs {b}");
    }
    assert_eq!(pair.model.survival.weibull, alone.weibull);
    let pa = pair.model.survival.snn.parameters();
    let pb = alone.snn.parameters();
    let worst = pa.iter().zip(&pb).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-12, "parameter drift {worst}");
}

#[test]
fn mixed_terms_are_rejected() {
    let mut book = survival_book(50, 24, 10);
    book.push(loan(99, vec![0.0; 3], 36, 0.01, false, 36));
    assert!(train_dsnn(&book, &dsnn_cfg(1)).is_err());
}
