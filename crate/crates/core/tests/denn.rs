mod common;

use common::loan;
use loanvar::data::{feature_matrix, LoanRecord};
use loanvar::denn::{from_outputs, predict_denn, train_denn};
use loanvar::neural::{loss_mse, sigmoid, ModelConfig};
use rand::Rng;

const TERM: u32 = 36;

/// Defaults decided by a threshold on feature 0; default lifetimes follow
/// `round(L * sigmoid(2 * feature 1))`.
fn book(n: usize, seed: u64) -> Vec<LoanRecord> {
    let mut r = common::rng(seed);
    (0..n)
        .map(|i| {
            let f: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
            let defaulted = f[0] > 0.3;
            let lifetime = if defaulted {
                ((TERM as f64 * sigmoid(2.0 * f[1])).round() as u32).min(TERM - 1)
            } else {
                TERM
            };
            loan(i, f, TERM, 0.012, defaulted, lifetime)
        })
        .collect()
}

fn cfg() -> ModelConfig {
    ModelConfig {
        batch_size: 32,
        learning_rate: 0.1,
        epochs: 40,
        seed: 77,
        ..ModelConfig::default()
    }
}

#[test]
fn threshold_defaults_are_learned() {
    let train = book(3000, 1);
    let test = book(1000, 2);
    let fit = train_denn(&train, &cfg()).unwrap();

    let x = feature_matrix(&test);
    let p = fit.model.dr_nn.predict_batch(&x, test.len()).unwrap();
    let hits = p.iter().zip(&test).filter(|(p, l)| (**p >= 0.5) == l.defaulted).count();
    let accuracy = hits as f64 / test.len() as f64;
    assert!(accuracy > 0.95, "accuracy {accuracy}");

    let defaults: Vec<LoanRecord> = test.into_iter().filter(|l| l.defaulted).collect();
    let xd = feature_matrix(&defaults);
    let pred = fit.model.dl_nn.predict_batch(&xd, defaults.len()).unwrap();
    let truth: Vec<f64> = defaults.iter().map(|l| l.lifetime as f64 / TERM as f64).collect();
    let mse = loss_mse(&pred, &truth).unwrap();
    assert!(mse < 0.01, "lifetime mse {mse}");
}

#[test]
fn training_is_reproducible() {
    let train = book(300, 3);
    let c = ModelConfig { epochs: 3, ..cfg() };
    let a = train_denn(&train, &c).unwrap();
    let b = train_denn(&train, &c).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.dr_trace, b.dr_trace);
    let l = &train[0];
    assert_eq!(predict_denn(&a.model, l).unwrap(), predict_denn(&b.model, l).unwrap());
}

#[test]
fn degenerate_outputs() {
    let l = loan(0, vec![0.0; 4], TERM, 0.01, false, TERM);
    let none = from_outputs(&l, 0.0, 0.3).unwrap();
    assert_eq!(none.mean(), l.terms.rate);
    let wiped = from_outputs(&l, 1.0, 0.0).unwrap();
    assert_eq!(wiped.default_return, -1.0);
    assert_eq!(wiped.mean(), -1.0);
}
