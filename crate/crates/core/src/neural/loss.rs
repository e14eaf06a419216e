//! Training losses and their gradients with respect to network outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survival::{self, WeibullParams};

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-12;
/// Lifetimes below this are lifted inside the hazard log (a zero-payment
/// default is treated as happening mid-way through the first month).
pub const MIN_HAZARD_TIME: f64 = 0.5;

/// Relative importance of the three terms of the two-branch loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DsnnLossWeights {
    pub survival: f64,
    pub expert: f64,
    pub dif: f64,
}

impl Default for DsnnLossWeights {
    fn default() -> Self {
        Self {
            survival: 1.0,
            expert: 1.0,
            dif: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// Class-weighted binary cross entropy on a sigmoid output; the class
    /// weight comes from the training config.
    WeightedBce,
    /// Mean squared error.
    Mse,
    /// Weibull proportional-hazards negative log likelihood on a linear output.
    SurvivalNll { weibull: WeibullParams, term: u32 },
    /// Survival NLL + expert BCE + squared gap between the expert's default
    /// rate and the one implied by the survival branch.
    DsnnCombined {
        weibull: WeibullParams,
        term: u32,
        weights: DsnnLossWeights,
    },
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::WeightedBce | LossKind::Mse => Ok(()),
            LossKind::SurvivalNll { weibull, .. } => weibull.validate(),
            LossKind::DsnnCombined {
                weibull,
                term,
                weights,
            } => {
                weibull.validate()?;
                if term < 2 {
                    return Err(Error::Config("two-branch loss needs a term of at least 2".into()));
                }
                let w = [weights.survival, weights.expert, weights.dif];
                if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(Error::Config(format!("negative loss weight in {weights:?}")));
                }
                Ok(())
            }
        }
    }
}

fn check_class_weight(w: f64) -> Result<()> {
    if w > 0.0 && w.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("class weight must be positive, got {w}")))
    }
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension { expected: a, got: b });
    }
    if a == 0 {
        return Err(Error::domain("empty batch"));
    }
    Ok(())
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// `-(1/b) sum w_i (E_i ln p_i + (1 - E_i) ln(1 - p_i))`, with `w_i` the
/// positive-class weight for `E_i = 1` and 1 otherwise.
pub fn loss_weighted_bce(predictions: &[f64], labels: &[f64], class_weight_positive: f64) -> Result<f64> {
    Ok(weighted_bce_grad(predictions, labels, class_weight_positive)?.0)
}

pub(crate) fn weighted_bce_grad(
    predictions: &[f64],
    labels: &[f64],
    class_weight_positive: f64,
) -> Result<(f64, Vec<f64>)> {
    same_len(predictions.len(), labels.len())?;
    check_class_weight(class_weight_positive)?;
    let b = predictions.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(predictions.len());
    for (&p, &e) in predictions.iter().zip(labels) {
        let p = clamp_prob(p);
        let (term, g) = if e == 1.0 {
            (class_weight_positive * p.ln(), class_weight_positive / p)
        } else if e == 0.0 {
            ((1.0 - p).ln(), -1.0 / (1.0 - p))
        } else {
            return Err(Error::domain(format!("binary label must be 0 or 1, got {e}")));
        };
        loss -= term;
        grad.push(-g / b);
    }
    Ok((loss / b, grad))
}

/// Mean of squared differences.
pub fn loss_mse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    Ok(mse_grad(predictions, targets)?.0)
}

pub(crate) fn mse_grad(predictions: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    same_len(predictions.len(), targets.len())?;
    let b = predictions.len() as f64;
    let mut loss = 0.0;
    let grad = predictions
        .iter()
        .zip(targets)
        .map(|(&p, &y)| {
            let d = p - y;
            loss += d * d;
            2.0 * d / b
        })
        .collect();
    Ok((loss / b, grad))
}

/// Negative log likelihood of observed lifetimes under
/// `h(t) = lambda^rho rho t^(rho-1) exp(g)`:
/// `-(1/b) sum (E_i ln h(max(t_i, 0.5)) + ln S(t_i))`.
pub fn loss_survival_nll(
    outputs: &[f64],
    lifetimes: &[f64],
    events: &[f64],
    lambda: f64,
    rho: f64,
) -> Result<f64> {
    let params = WeibullParams::new(lambda, rho)?;
    Ok(survival_nll_grad(outputs, lifetimes, events, params)?.0)
}

pub(crate) fn survival_nll_grad(
    outputs: &[f64],
    lifetimes: &[f64],
    events: &[f64],
    params: WeibullParams,
) -> Result<(f64, Vec<f64>)> {
    params.validate()?;
    same_len(outputs.len(), lifetimes.len())?;
    same_len(outputs.len(), events.len())?;
    let b = outputs.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(outputs.len());
    for ((&g, &t), &e) in outputs.iter().zip(lifetimes).zip(events) {
        if t < 0.0 || !t.is_finite() {
            return Err(Error::domain(format!("lifetime must be non-negative, got {t}")));
        }
        if e != 0.0 && e != 1.0 {
            return Err(Error::domain(format!("event flag must be 0 or 1, got {e}")));
        }
        let (cum, d_cum) = survival::cumulative_hazard_with_slope(t, params, g);
        let mut ll = -cum;
        let mut dll = -d_cum;
        if e == 1.0 {
            ll += survival::log_hazard(t.max(MIN_HAZARD_TIME), params, g);
            dll += 1.0;
        }
        loss -= ll;
        grad.push(-dll / b);
    }
    Ok((loss / b, grad))
}

/// `(1/b) sum (p_expert - p_survival)^2`.
pub fn loss_dif(expert: &[f64], survival: &[f64]) -> Result<f64> {
    same_len(expert.len(), survival.len())?;
    let b = expert.len() as f64;
    Ok(expert
        .iter()
        .zip(survival)
        .map(|(a, s)| (a - s) * (a - s))
        .sum::<f64>()
        / b)
}

/// Value of the two-branch loss with its parts, and gradients with respect to
/// the survival output `g` and the expert output `p`.
#[derive(Debug, Clone)]
pub(crate) struct DsnnLossEval {
    pub total: f64,
    pub survival: f64,
    pub expert: f64,
    pub dif: f64,
    pub d_survival_out: Vec<f64>,
    pub d_expert_out: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dsnn_combined_grad(
    snn_out: &[f64],
    dnn_out: &[f64],
    lifetimes: &[f64],
    events: &[f64],
    weibull: WeibullParams,
    term: u32,
    weights: DsnnLossWeights,
    class_weight_positive: f64,
) -> Result<DsnnLossEval> {
    same_len(snn_out.len(), dnn_out.len())?;
    let b = snn_out.len() as f64;
    let (survival, d_nll) = survival_nll_grad(snn_out, lifetimes, events, weibull)?;
    let (expert, d_bce) = weighted_bce_grad(dnn_out, events, class_weight_positive)?;

    let horizon = (term - 1) as f64;
    let mut dif = 0.0;
    let mut d_survival_out = Vec::with_capacity(snn_out.len());
    let mut d_expert_out = Vec::with_capacity(snn_out.len());
    for i in 0..snn_out.len() {
        // N1: default rate implied by the survival branch.
        let (cum, d_cum) = survival::cumulative_hazard_with_slope(horizon, weibull, snn_out[i]);
        let s = (-cum).exp();
        let p_snn = 1.0 - s;
        let dp_dg = s * d_cum;
        // N2: squared gap to the expert.
        let gap = dnn_out[i] - p_snn;
        dif += gap * gap;
        let d_gap = 2.0 * gap / b;
        d_survival_out.push(weights.survival * d_nll[i] - weights.dif * d_gap * dp_dg);
        d_expert_out.push(weights.expert * d_bce[i] + weights.dif * d_gap);
    }
    dif /= b;
    Ok(DsnnLossEval {
        total: weights.survival * survival + weights.expert * expert + weights.dif * dif,
        survival,
        expert,
        dif,
        d_survival_out,
        d_expert_out,
    })
}
