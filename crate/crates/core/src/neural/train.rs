//! Mini-batch gradient descent.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{self, LossKind};
use super::{backward, Activation, Gradients, Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Weight of positive (default) samples in the cross-entropy loss.
    pub class_weight_positive: f64,
    /// Seeds the per-epoch shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 0.01,
            epochs: 50,
            class_weight_positive: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        if !(self.class_weight_positive > 0.0 && self.class_weight_positive.is_finite()) {
            return Err(Error::Config(format!(
                "bad class weight {}",
                self.class_weight_positive
            )));
        }
        Ok(())
    }
}

/// Hyper-parameters shared by every model built on the 128/64/32 stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_coefficient: f64,
    /// Positive-class weight for default classifiers; `None` uses
    /// `#negatives / #positives` of the training split.
    pub class_weight_positive: Option<f64>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 0.01,
            epochs: 50,
            l2_coefficient: 1e-4,
            class_weight_positive: None,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, width: usize, activations: [Activation; 4], seed: u64) -> NetworkSpec {
        NetworkSpec::deep(width, activations, self.l2_coefficient, seed)
    }

    pub fn train_config(&self, seed: u64, class_weight_positive: f64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            class_weight_positive,
            seed,
        }
    }
}

/// Row-major features plus whichever targets the loss needs.
#[derive(Debug, Clone, Copy)]
pub struct TrainSet<'a> {
    pub features: &'a [f64],
    pub width: usize,
    /// Binary labels or regression targets.
    pub targets: &'a [f64],
    pub lifetimes: &'a [f64],
    pub events: &'a [f64],
}

impl<'a> TrainSet<'a> {
    pub fn supervised(features: &'a [f64], width: usize, targets: &'a [f64]) -> Self {
        Self {
            features,
            width,
            targets,
            lifetimes: &[],
            events: &[],
        }
    }

    pub fn survival(features: &'a [f64], width: usize, lifetimes: &'a [f64], events: &'a [f64]) -> Self {
        Self {
            features,
            width,
            targets: events,
            lifetimes,
            events,
        }
    }

    pub fn len(&self) -> usize {
        self.features.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, net: &Network, loss: &LossKind) -> Result<()> {
        if self.is_empty() {
            return Err(Error::domain("empty training set"));
        }
        if self.width != net.input_width() || !self.features.len().is_multiple_of(self.width) {
            return Err(Error::Dimension {
                expected: net.input_width(),
                got: self.width,
            });
        }
        let n = self.len();
        let need = |v: &[f64], what: &str| -> Result<()> {
            if v.len() != n {
                return Err(Error::Config(format!("{what}: {} values for {n} samples", v.len())));
            }
            Ok(())
        };
        match loss {
            LossKind::WeightedBce | LossKind::Mse => need(self.targets, "targets"),
            LossKind::SurvivalNll { .. } | LossKind::DsnnCombined { .. } => {
                need(self.lifetimes, "lifetimes")?;
                need(self.events, "events")
            }
        }
    }

    fn gather(&self, idx: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len() * self.width);
        for &i in idx {
            out.extend_from_slice(&self.features[i * self.width..(i + 1) * self.width]);
        }
        out
    }
}

fn pick(values: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| values[i]).collect()
}

fn single_output(net: &Network) -> Result<()> {
    if net.output_width() != 1 {
        return Err(Error::Spec(format!(
            "losses expect a single output unit, network has {}",
            net.output_width()
        )));
    }
    Ok(())
}

/// Data loss on the samples `idx` plus the L2 penalty, and its gradient.
pub fn objective_and_gradient(
    net: &Network,
    data: &TrainSet<'_>,
    idx: &[usize],
    loss: &LossKind,
    class_weight_positive: f64,
) -> Result<(f64, Gradients)> {
    let (data_loss, grads) = data_loss_and_gradient(net, data, idx, loss, class_weight_positive)?;
    let mut grads = grads;
    add_l2_gradient(net, &mut grads);
    Ok((data_loss + net.l2_penalty(), grads))
}

fn data_loss_and_gradient(
    net: &Network,
    data: &TrainSet<'_>,
    idx: &[usize],
    loss: &LossKind,
    class_weight_positive: f64,
) -> Result<(f64, Gradients)> {
    single_output(net)?;
    let rows = idx.len();
    let x = data.gather(idx);
    let acts = net.forward_cached(&x, rows);
    let out = acts.last().expect("non-empty");
    let (value, d_out) = match *loss {
        LossKind::WeightedBce => {
            loss::weighted_bce_grad(out, &pick(data.targets, idx), class_weight_positive)?
        }
        LossKind::Mse => loss::mse_grad(out, &pick(data.targets, idx))?,
        LossKind::SurvivalNll { weibull, .. } => loss::survival_nll_grad(
            out,
            &pick(data.lifetimes, idx),
            &pick(data.events, idx),
            weibull,
        )?,
        LossKind::DsnnCombined { .. } => {
            return Err(Error::Config(
                "the two-branch loss trains a network pair; use train_pair".into(),
            ))
        }
    };
    Ok((value, backward(net, &acts, rows, d_out)))
}

fn add_l2_gradient(net: &Network, grads: &mut Gradients) {
    let c = net.spec.l2_coefficient;
    if c == 0.0 {
        return;
    }
    for (layer, (gw, _)) in net.layers.iter().zip(grads.layers.iter_mut()) {
        for (g, w) in gw.iter_mut().zip(&layer.weights) {
            *g += 2.0 * c * w;
        }
    }
}

/// Plain gradient step on the data gradient; the L2 term is applied as a
/// multiplicative weight decay, `w <- w (1 - 2 lr c) - lr g`.
fn sgd_step(net: &mut Network, grads: &Gradients, lr: f64) {
    let decay = 1.0 - 2.0 * lr * net.spec.l2_coefficient;
    for (layer, (gw, gb)) in net.layers.iter_mut().zip(&grads.layers) {
        for (w, g) in layer.weights.iter_mut().zip(gw) {
            *w = *w * decay - lr * g;
        }
        for (b, g) in layer.biases.iter_mut().zip(gb) {
            *b -= lr * g;
        }
    }
}

/// Drive `epochs` passes of shuffled mini-batches through `step`, which
/// returns the batch's data loss. Returns the per-epoch mean loss.
fn run_epochs(
    n: usize,
    cfg: &TrainConfig,
    mut step: impl FnMut(&[usize]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut rng = rng::chacha(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (s, batch) in order.chunks(cfg.batch_size).enumerate() {
            let value = step(batch)?;
            if !value.is_finite() {
                return Err(Error::Training {
                    epoch,
                    step: s,
                    reason: format!("loss became {value}"),
                });
            }
            total += value * batch.len() as f64;
        }
        trace.push(total / n as f64);
    }
    Ok(trace)
}

/// Train one network in place. Returns the per-epoch mean data loss.
pub fn train(net: &mut Network, data: &TrainSet<'_>, loss: &LossKind, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    loss.validate()?;
    data.check(net, loss)?;
    let lr = cfg.learning_rate;
    run_epochs(data.len(), cfg, |batch| {
        let (value, grads) = data_loss_and_gradient(net, data, batch, loss, cfg.class_weight_positive)?;
        if value.is_finite() {
            sgd_step(net, &grads, lr);
        }
        Ok(value)
    })
}

/// Per-epoch means of the two-branch loss and its parts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairTrace {
    pub total: Vec<f64>,
    pub survival: Vec<f64>,
    pub expert: Vec<f64>,
    pub dif: Vec<f64>,
}

struct PairEval {
    parts: loss::DsnnLossEval,
    survival_grads: Gradients,
    expert_grads: Gradients,
}

fn pair_eval(
    survival_net: &Network,
    expert_net: &Network,
    data: &TrainSet<'_>,
    idx: &[usize],
    loss: &LossKind,
    class_weight_positive: f64,
) -> Result<PairEval> {
    let LossKind::DsnnCombined {
        weibull,
        term,
        weights,
    } = *loss
    else {
        return Err(Error::Config("train_pair needs the two-branch loss".into()));
    };
    single_output(survival_net)?;
    single_output(expert_net)?;
    let rows = idx.len();
    let x = data.gather(idx);
    let s_acts = survival_net.forward_cached(&x, rows);
    let e_acts = expert_net.forward_cached(&x, rows);
    let parts = loss::dsnn_combined_grad(
        s_acts.last().expect("non-empty"),
        e_acts.last().expect("non-empty"),
        &pick(data.lifetimes, idx),
        &pick(data.events, idx),
        weibull,
        term,
        weights,
        class_weight_positive,
    )?;
    let survival_grads = backward(survival_net, &s_acts, rows, parts.d_survival_out.clone());
    let expert_grads = backward(expert_net, &e_acts, rows, parts.d_expert_out.clone());
    Ok(PairEval {
        parts,
        survival_grads,
        expert_grads,
    })
}

/// Two-branch objective (data loss plus both networks' L2 penalties) and the
/// gradients for each network.
pub fn pair_objective_and_gradient(
    survival_net: &Network,
    expert_net: &Network,
    data: &TrainSet<'_>,
    idx: &[usize],
    loss: &LossKind,
    class_weight_positive: f64,
) -> Result<(f64, Gradients, Gradients)> {
    let mut ev = pair_eval(survival_net, expert_net, data, idx, loss, class_weight_positive)?;
    add_l2_gradient(survival_net, &mut ev.survival_grads);
    add_l2_gradient(expert_net, &mut ev.expert_grads);
    let value = ev.parts.total + survival_net.l2_penalty() + expert_net.l2_penalty();
    Ok((value, ev.survival_grads, ev.expert_grads))
}

/// Jointly train a survival network and an expert default-rate network on
/// the two-branch loss, one combined step per batch.
pub fn train_pair(
    survival_net: &mut Network,
    expert_net: &mut Network,
    data: &TrainSet<'_>,
    loss: &LossKind,
    cfg: &TrainConfig,
) -> Result<PairTrace> {
    cfg.validate()?;
    loss.validate()?;
    data.check(survival_net, loss)?;
    data.check(expert_net, loss)?;
    let n = data.len();
    let lr = cfg.learning_rate;
    let mut trace = PairTrace::default();
    let (mut s_acc, mut e_acc, mut d_acc) = (0.0, 0.0, 0.0);
    let mut seen = 0;
    let total = run_epochs(n, cfg, |batch| {
        let ev = pair_eval(survival_net, expert_net, data, batch, loss, cfg.class_weight_positive)?;
        if ev.parts.total.is_finite() {
            sgd_step(survival_net, &ev.survival_grads, lr);
            sgd_step(expert_net, &ev.expert_grads, lr);
        }
        let w = batch.len() as f64;
        s_acc += ev.parts.survival * w;
        e_acc += ev.parts.expert * w;
        d_acc += ev.parts.dif * w;
        seen += batch.len();
        if seen == n {
            trace.survival.push(s_acc / n as f64);
            trace.expert.push(e_acc / n as f64);
            trace.dif.push(d_acc / n as f64);
            (s_acc, e_acc, d_acc, seen) = (0.0, 0.0, 0.0, 0);
        }
        Ok(ev.parts.total)
    })?;
    trace.total = total;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Activation, NetworkSpec};

    fn toy() -> (Vec<f64>, Vec<f64>) {
        // Linearly separable on the first coordinate.
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..64 {
            let a = (i as f64 / 63.0) * 4.0 - 2.0;
            let b = ((i * 7) % 13) as f64 / 13.0 - 0.5;
            x.extend_from_slice(&[a, b]);
            y.push(if a > 0.0 { 1.0 } else { 0.0 });
        }
        (x, y)
    }

    fn net(l2: f64, seed: u64) -> Network {
        Network::init(&NetworkSpec {
            layer_sizes: vec![2, 4, 1],
            activations: vec![Activation::Tanh, Activation::Sigmoid],
            l2_coefficient: l2,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn zero_epochs_leave_parameters_alone() {
        let (x, y) = toy();
        let mut n = net(1e-3, 1);
        let before = n.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let trace = train(&mut n, &TrainSet::supervised(&x, 2, &y), &LossKind::WeightedBce, &cfg).unwrap();
        assert!(trace.is_empty());
        assert_eq!(n, before);
    }

    #[test]
    fn training_is_deterministic_and_decreasing() {
        let (x, y) = toy();
        let cfg = TrainConfig {
            batch_size: 8,
            learning_rate: 0.05,
            epochs: 40,
            class_weight_positive: 1.0,
            seed: 3,
        };
        let data = TrainSet::supervised(&x, 2, &y);
        let mut a = net(0.0, 5);
        let mut b = net(0.0, 5);
        let ta = train(&mut a, &data, &LossKind::WeightedBce, &cfg).unwrap();
        let tb = train(&mut b, &data, &LossKind::WeightedBce, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert!(ta.last().unwrap() < &ta[0]);
        assert!(ta.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{ta:?}");
    }

    #[test]
    fn pure_l2_step_is_weight_decay() {
        let mut n = net(0.01, 9);
        let before = n.clone();
        let lr = 0.1;
        let zero = Gradients::zeros_like(&n);
        sgd_step(&mut n, &zero, lr);
        let factor = 1.0 - 2.0 * lr * 0.01;
        for (a, b) in n.layers.iter().zip(&before.layers) {
            for (w1, w0) in a.weights.iter().zip(&b.weights) {
                assert_eq!(*w1, w0 * factor);
            }
            assert_eq!(a.biases, b.biases);
        }
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let x = vec![f64::NAN, 0.0];
        let y = vec![1.0];
        let mut n = net(0.0, 1);
        let err = train(
            &mut n,
            &TrainSet::supervised(&x, 2, &y),
            &LossKind::Mse,
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Training { epoch: 0, step: 0, .. }), "{err}");
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let x = vec![0.0; 6];
        let y = vec![0.0; 2];
        let mut n = net(0.0, 1);
        assert!(train(&mut n, &TrainSet::supervised(&x, 3, &y), &LossKind::Mse, &TrainConfig::default()).is_err());
    }
}
