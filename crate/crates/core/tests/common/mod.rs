//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use loanvar::data::{Dataset, LoanRecord};
use loanvar::loan_math::LoanTerms;
use loanvar::neural::{
    objective_and_gradient, pair_objective_and_gradient, Activation, LossKind, Network, NetworkSpec, TrainSet,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Root of `sum_{t=1..td} C (1+r)^-t = M` by plain bisection on
/// `(-1 + 1e-12, 10]`, evaluated term by term.
pub fn irr_bisection(amount: f64, installment: f64, td: u32) -> f64 {
    let f = |r: f64| -> f64 {
        let mut pv = 0.0;
        let mut disc = 1.0;
        for _ in 0..td {
            disc /= 1.0 + r;
            pv += installment * disc;
        }
        pv - amount
    };
    let (mut lo, mut hi) = (-1.0 + 1e-12, 10.0);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Network with every parameter drawn uniformly from `[-scale, scale]`.
pub fn random_net(sizes: &[usize], acts: &[Activation], seed: u64, scale: f64) -> Network {
    let spec = NetworkSpec {
        layer_sizes: sizes.to_vec(),
        activations: acts.to_vec(),
        l2_coefficient: 1e-3,
        seed,
    };
    let mut net = Network::init(&spec).unwrap();
    let mut r = rng(seed ^ 0xabcdef);
    let p: Vec<f64> = (0..net.parameter_count()).map(|_| r.random_range(-scale..scale)).collect();
    net.set_parameters(&p).unwrap();
    net
}

/// Largest relative error between analytic and central-difference
/// gradients, with the denominator floored at `floor`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn check_single(net: &Network, data: &TrainSet<'_>, loss: &LossKind, cw: f64, h: f64) -> f64 {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (_, g) = objective_and_gradient(net, data, &idx, loss, cw).unwrap();
    let mut probe = net.clone();
    let numeric = central_difference(
        |p| {
            probe.set_parameters(p).unwrap();
            objective_and_gradient(&probe, data, &idx, loss, cw).unwrap().0
        },
        &net.parameters(),
        h,
    );
    max_rel_err(&g.flatten(), &numeric, 1e-6)
}

/// Worst relative error over both networks of a two-branch model.
pub fn check_pair(snn: &Network, dnn: &Network, data: &TrainSet<'_>, loss: &LossKind, cw: f64, h: f64) -> f64 {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (_, gs, ge) = pair_objective_and_gradient(snn, dnn, data, &idx, loss, cw).unwrap();
    let mut probe = snn.clone();
    let ns = central_difference(
        |p| {
            probe.set_parameters(p).unwrap();
            pair_objective_and_gradient(&probe, dnn, data, &idx, loss, cw).unwrap().0
        },
        &snn.parameters(),
        h,
    );
    let mut probe = dnn.clone();
    let ne = central_difference(
        |p| {
            probe.set_parameters(p).unwrap();
            pair_objective_and_gradient(snn, &probe, data, &idx, loss, cw).unwrap().0
        },
        &dnn.parameters(),
        h,
    );
    max_rel_err(&gs.flatten(), &ns, 1e-6).max(max_rel_err(&ge.flatten(), &ne, 1e-6))
}

/// Random features, lifetimes in `[1, term]` and events consistent with them.
pub fn survival_batch(rows: usize, width: usize, term: u32, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let x: Vec<f64> = (0..rows * width).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut t = Vec::new();
    let mut e = Vec::new();
    for _ in 0..rows {
        if r.random::<f64>() < 0.4 {
            t.push(r.random_range(1..term) as f64);
            e.push(1.0);
        } else {
            t.push(term as f64);
            e.push(0.0);
        }
    }
    (x, t, e)
}

pub fn loan(id: usize, features: Vec<f64>, term: u32, rate: f64, defaulted: bool, lifetime: u32) -> LoanRecord {
    LoanRecord {
        id: format!("L{id}"),
        features,
        terms: LoanTerms::from_rate(10_000.0, term, rate).unwrap(),
        lifetime,
        defaulted,
        grade: None,
    }
}

/// Continuous Weibull draw with cumulative hazard `(lambda t)^rho`.
pub fn weibull_draw(r: &mut impl Rng, lambda: f64, rho: f64) -> f64 {
    let u: f64 = r.random();
    (-(1.0 - u).ln()).powf(1.0 / rho) / lambda
}

pub fn dataset(records: Vec<LoanRecord>) -> Dataset {
    let width = records[0].features.len();
    Dataset::new(records, width).unwrap()
}
