//! Weibull survival model and the two-branch survival network.
//!
//! The survival branch outputs a scalar `g` that scales a Weibull baseline:
//! `h(t) = lambda^rho rho t^(rho-1) e^g` and `S(t) = exp(-(lambda t)^rho e^g)`.
//! A loan's default-month distribution follows from differences of `S` on
//! the integer month grid.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{feature_matrix, LoanRecord};
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::loan_math;
use crate::neural::{
    self, loss_dif, Activation, DsnnLossWeights, LossKind, ModelConfig, Network, PairTrace, TrainSet,
};
use crate::neural::loss::MIN_HAZARD_TIME;
use crate::rng;

/// Exponent arguments are capped here before `exp`.
pub const EXP_CAP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullParams {
    /// Scale-related rate (1/months).
    pub lambda: f64,
    /// Shape.
    pub rho: f64,
}

impl WeibullParams {
    pub fn new(lambda: f64, rho: f64) -> Result<Self> {
        let p = Self { lambda, rho };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if ok(self.lambda) && ok(self.rho) {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "weibull parameters must be positive and finite (lambda {}, rho {})",
                self.lambda, self.rho
            )))
        }
    }
}

/// Cumulative hazard `(lambda t)^rho e^g` and its derivative with respect to
/// `g`. The derivative is zero where the exponent is capped.
#[inline]
pub(crate) fn cumulative_hazard_with_slope(t: f64, p: WeibullParams, g: f64) -> (f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0);
    }
    let arg = p.rho * (p.lambda * t).ln() + g;
    if arg > EXP_CAP {
        (EXP_CAP.exp(), 0.0)
    } else {
        let v = arg.exp();
        (v, v)
    }
}

#[inline]
pub(crate) fn log_hazard(t: f64, p: WeibullParams, g: f64) -> f64 {
    p.rho * p.lambda.ln() + p.rho.ln() + (p.rho - 1.0) * t.ln() + g
}

/// Hazard rate at `t > 0`.
pub fn hazard(t: f64, params: WeibullParams, g: f64) -> Result<f64> {
    params.validate()?;
    if !(t > 0.0) {
        return Err(Error::domain(format!("hazard needs t > 0, got {t}")));
    }
    Ok(params.lambda.powf(params.rho) * params.rho * t.powf(params.rho - 1.0) * g.exp())
}

/// Survival probability at `t >= 0`.
pub fn survival(t: f64, params: WeibullParams, g: f64) -> Result<f64> {
    params.validate()?;
    if !(t >= 0.0) {
        return Err(Error::domain(format!("survival needs t >= 0, got {t}")));
    }
    Ok((-cumulative_hazard_with_slope(t, params, g).0).exp())
}

/// Probabilities of defaulting after `i` installments (`i < L`) and of
/// surviving the whole term.
#[derive(Debug, Clone, PartialEq)]
pub struct LifetimeDistribution {
    pub default_probs: Vec<f64>,
    pub survival: f64,
}

impl LifetimeDistribution {
    pub fn default_probability(&self) -> f64 {
        1.0 - self.survival
    }
}

/// `p_0 = 1 - S(0) = 0`, `p_i = S(i-1) - S(i)` for `1 <= i < L`, and the
/// survival mass `S(L-1)`.
pub fn lifetime_distribution(params: WeibullParams, g: f64, term: u32) -> Result<LifetimeDistribution> {
    params.validate()?;
    if term == 0 {
        return Err(Error::domain("term must be at least one month"));
    }
    let s: Vec<f64> = (0..term)
        .map(|i| (-cumulative_hazard_with_slope(i as f64, params, g).0).exp())
        .collect();
    let mut default_probs = Vec::with_capacity(term as usize);
    default_probs.push(1.0 - s[0]);
    for i in 1..term as usize {
        default_probs.push(s[i - 1] - s[i]);
    }
    Ok(LifetimeDistribution {
        default_probs,
        survival: s[term as usize - 1],
    })
}

/// Default rate implied by the survival branch, `1 - S(L-1)`.
pub fn snn_default_rate(params: WeibullParams, g: f64, term: u32) -> Result<f64> {
    if term < 2 {
        return Err(Error::domain("term must be at least 2 months"));
    }
    Ok(1.0 - survival((term - 1) as f64, params, g)?)
}

/// Censored maximum-likelihood Weibull fit.
///
/// Events contribute the log density, censored observations the log
/// survival. Zero lifetimes are lifted to half a month.
pub fn fit_weibull(lifetimes: &[f64], events: &[bool]) -> Result<WeibullParams> {
    fit_weibull_with(lifetimes, events, true)
}

/// As [`fit_weibull`]; with `censored = false` every lifetime is treated as an
/// observed event.
pub fn fit_weibull_with(lifetimes: &[f64], events: &[bool], censored: bool) -> Result<WeibullParams> {
    if lifetimes.len() != events.len() {
        return Err(Error::Dimension {
            expected: lifetimes.len(),
            got: events.len(),
        });
    }
    if let Some(t) = lifetimes.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(Error::WeibullFit(format!("invalid lifetime {t}")));
    }
    // A zero lifetime counts as half a month, as in the likelihood loss.
    let logs: Vec<f64> = lifetimes
        .iter()
        .map(|&t| if t > 0.0 { t.ln() } else { MIN_HAZARD_TIME.ln() })
        .collect();
    let is_event = |i: usize| !censored || events[i];
    let d = (0..logs.len()).filter(|&i| is_event(i)).count() as f64;
    if d == 0.0 {
        return Err(Error::WeibullFit("no events to fit".into()));
    }
    let event_log_sum: f64 = (0..logs.len()).filter(|&i| is_event(i)).map(|i| logs[i]).sum();
    let max_log = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    // Weighted moments of ln t under weights t^rho (scaled by t_max^rho).
    let moments = |rho: f64| {
        let (mut w, mut a, mut b) = (0.0, 0.0, 0.0);
        for &l in &logs {
            let wi = (rho * (l - max_log)).exp();
            w += wi;
            a += wi * l;
            b += wi * l * l;
        }
        (w, a / w, b / w)
    };
    // Profile-likelihood score in rho; strictly decreasing.
    let score = |rho: f64| {
        let (_, a, _) = moments(rho);
        d / rho + event_log_sum - d * a
    };
    let slope = |rho: f64| {
        let (_, a, b) = moments(rho);
        -d / (rho * rho) - d * (b - a * a)
    };

    let (mut lo, mut hi) = (0.5, 2.0);
    while score(lo) < 0.0 {
        if lo <= 1e-3 {
            return Err(Error::WeibullFit("shape estimate below 1e-3".into()));
        }
        lo = (lo / 4.0).max(1e-3);
    }
    while score(hi) > 0.0 {
        if hi >= 1e3 {
            return Err(Error::WeibullFit(
                "shape diverges (lifetimes carry no spread)".into(),
            ));
        }
        hi = (hi * 4.0).min(1e3);
    }

    let mut rho = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = score(rho);
        if f == 0.0 {
            break;
        }
        if f > 0.0 {
            lo = rho;
        } else {
            hi = rho;
        }
        let newton = rho - f / slope(rho);
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let done = (next - rho).abs() <= 1e-13 * rho || hi - lo <= 1e-13 * rho;
        rho = next;
        if done {
            break;
        }
    }
    let (w, _, _) = moments(rho);
    // lambda^rho = d / sum t^rho
    let log_sum = rho * max_log + w.ln();
    let lambda = ((d.ln() - log_sum) / rho).exp();
    WeibullParams::new(lambda, rho).map_err(|e| Error::WeibullFit(e.to_string()))
}

/// Discrete return distribution over default months plus full repayment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalReturnDistribution {
    /// `default_returns[i]` is the return when the loan defaults after `i`
    /// installments.
    pub default_returns: Vec<f64>,
    pub promised: f64,
    pub default_probs: Vec<f64>,
    pub survival: f64,
}

impl CategoricalReturnDistribution {
    pub fn support(&self) -> impl Iterator<Item = f64> + '_ {
        self.default_returns.iter().copied().chain(std::iter::once(self.promised))
    }

    pub fn masses(&self) -> impl Iterator<Item = f64> + '_ {
        self.default_probs.iter().copied().chain(std::iter::once(self.survival))
    }

    pub fn mean(&self) -> f64 {
        self.support().zip(self.masses()).map(|(r, p)| r * p).sum()
    }
}

/// Survival branch plus the Weibull baseline it scales.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalModel {
    pub snn: Network,
    pub weibull: WeibullParams,
}

impl SurvivalModel {
    pub fn output(&self, loan: &LoanRecord) -> Result<f64> {
        Ok(self.snn.forward(&loan.features)?[0])
    }

    pub fn lifetime_distribution(&self, loan: &LoanRecord) -> Result<LifetimeDistribution> {
        lifetime_distribution(self.weibull, self.output(loan)?, loan.terms.term)
    }

    pub fn predict(&self, loan: &LoanRecord) -> Result<CategoricalReturnDistribution> {
        let dist = self.lifetime_distribution(loan)?;
        let default_returns = (0..loan.terms.term)
            .map(|i| loan_math::default_return(&loan.terms, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(CategoricalReturnDistribution {
            default_returns,
            promised: loan.terms.rate,
            default_probs: dist.default_probs,
            survival: dist.survival,
        })
    }

    /// Mean survival negative log likelihood over `records`.
    pub fn survival_loss(&self, records: &[LoanRecord]) -> Result<f64> {
        let x = feature_matrix(records);
        let g = self.snn.predict_batch(&x, records.len())?;
        let (t, e) = lifetimes_and_events(records);
        neural::loss_survival_nll(&g, &t, &e, self.weibull.lambda, self.weibull.rho)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsnnModel {
    pub survival: SurvivalModel,
    /// Expert default-rate branch, used only during training.
    pub dnn: Network,
    pub loss_weights: DsnnLossWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DsnnConfig {
    pub model: ModelConfig,
    pub loss_weights: DsnnLossWeights,
    /// Positive-class weight of the expert's cross entropy.
    pub expert_class_weight: f64,
    /// Fit the Weibull baseline treating repaid loans as censored.
    pub censored_fit: bool,
}

impl Default for DsnnConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss_weights: DsnnLossWeights::default(),
            expert_class_weight: 1.0,
            censored_fit: true,
        }
    }
}

pub const SNN_ACTIVATIONS: [Activation; 4] =
    [Activation::Tanh, Activation::Tanh, Activation::Sigmoid, Activation::Linear];
pub const DNN_ACTIVATIONS: [Activation; 4] =
    [Activation::Tanh, Activation::Tanh, Activation::Tanh, Activation::Sigmoid];

/// Outcome of two-branch training.
#[derive(Debug, Clone)]
pub struct DsnnFit {
    pub model: DsnnModel,
    pub trace: PairTrace,
    /// Gap loss over the training set at initialization and after training.
    pub initial_dif: f64,
    pub final_dif: f64,
}

fn lifetimes_and_events(records: &[LoanRecord]) -> (Vec<f64>, Vec<f64>) {
    records.iter().map(|r| (r.lifetime as f64, r.event())).unzip()
}

fn common_term(records: &[LoanRecord]) -> Result<u32> {
    let term = records
        .first()
        .ok_or_else(|| Error::domain("empty training set"))?
        .terms
        .term;
    if records.iter().any(|r| r.terms.term != term) {
        return Err(Error::Config(
            "two-branch training needs a single loan term across the training set".into(),
        ));
    }
    Ok(term)
}

/// Fit the Weibull baseline on a training split.
pub fn fit_baseline(train_set: &[LoanRecord], censored: bool) -> Result<WeibullParams> {
    let t: Vec<f64> = train_set.iter().map(|r| r.lifetime as f64).collect();
    let e: Vec<bool> = train_set.iter().map(|r| r.defaulted).collect();
    fit_weibull_with(&t, &e, censored)
}

fn survival_init(width: usize, cfg: &ModelConfig) -> Result<Network> {
    Network::init(&cfg.spec(width, SNN_ACTIVATIONS, rng::derive_seed(cfg.seed, "snn-init")))
}

fn gap_over(survival_net: &Network, expert: &Network, weibull: WeibullParams, term: u32, x: &[f64], n: usize) -> Result<f64> {
    let g = survival_net.predict_batch(x, n)?;
    let p = expert.predict_batch(x, n)?;
    let p_snn = g
        .iter()
        .map(|&gi| snn_default_rate(weibull, gi, term))
        .collect::<Result<Vec<_>>>()?;
    loss_dif(&p, &p_snn)
}

/// Fit the baseline, then jointly train the survival and expert branches.
pub fn train_dsnn(train_set: &[LoanRecord], cfg: &DsnnConfig) -> Result<DsnnFit> {
    let term = common_term(train_set)?;
    let weibull = fit_baseline(train_set, cfg.censored_fit)?;
    let width = train_set[0].features.len();
    let mut snn = survival_init(width, &cfg.model)?;
    let mut dnn = Network::init(&cfg.model.spec(width, DNN_ACTIVATIONS, rng::derive_seed(cfg.model.seed, "dnn-init")))?;

    let x = feature_matrix(train_set);
    let (t, e) = lifetimes_and_events(train_set);
    let data = TrainSet::survival(&x, width, &t, &e);
    let n = train_set.len();
    let initial_dif = gap_over(&snn, &dnn, weibull, term, &x, n)?;
    let loss = LossKind::DsnnCombined {
        weibull,
        term,
        weights: cfg.loss_weights,
    };
    let tc = cfg
        .model
        .train_config(rng::derive_seed(cfg.model.seed, "survival-shuffle"), cfg.expert_class_weight);
    let trace = neural::train_pair(&mut snn, &mut dnn, &data, &loss, &tc)?;
    let final_dif = gap_over(&snn, &dnn, weibull, term, &x, n)?;
    Ok(DsnnFit {
        model: DsnnModel {
            survival: SurvivalModel { snn, weibull },
            dnn,
            loss_weights: cfg.loss_weights,
        },
        trace,
        initial_dif,
        final_dif,
    })
}

/// The survival branch trained alone on its likelihood, with the same
/// initialization and batch order as the two-branch model.
pub fn train_snn_only(train_set: &[LoanRecord], cfg: &DsnnConfig) -> Result<(SurvivalModel, Vec<f64>)> {
    let term = common_term(train_set)?;
    let weibull = fit_baseline(train_set, cfg.censored_fit)?;
    let width = train_set[0].features.len();
    let mut snn = survival_init(width, &cfg.model)?;
    let x = feature_matrix(train_set);
    let (t, e) = lifetimes_and_events(train_set);
    let data = TrainSet::survival(&x, width, &t, &e);
    let tc = cfg
        .model
        .train_config(rng::derive_seed(cfg.model.seed, "survival-shuffle"), cfg.expert_class_weight);
    let trace = neural::train(&mut snn, &data, &LossKind::SurvivalNll { weibull, term }, &tc)?;
    Ok((SurvivalModel { snn, weibull }, trace))
}

/// Return distribution from the survival branch.
pub fn predict_dsnn(model: &DsnnModel, loan: &LoanRecord) -> Result<CategoricalReturnDistribution> {
    model.survival.predict(loan)
}

const DSNN_MAGIC: &str = "loanvar-dsnn";

fn save_net(net: &Network, path: &Path) -> Result<()> {
    neural::write_network(net, std::io::BufWriter::new(File::create(path)?))
}

pub(crate) fn load_net(path: &Path) -> Result<Network> {
    neural::read_network(BufReader::new(File::open(path)?))
}

pub fn save_survival(model: &SurvivalModel, dir: &Path, name: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_net(&model.snn, &dir.join(format!("{name}-snn.net")))?;
    let mut kv = KvFile::new();
    kv.set("format", format!("{DSNN_MAGIC} 1"))
        .set("lambda", model.weibull.lambda)
        .set("rho", model.weibull.rho)
        .set("snn", format!("{name}-snn.net"));
    kv.write(&dir.join(format!("{name}.manifest")))
}

/// Persist both branches, the baseline and the loss weights.
pub fn save_dsnn(model: &DsnnModel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_net(&model.survival.snn, &dir.join("dsnn-snn.net"))?;
    save_net(&model.dnn, &dir.join("dsnn-dnn.net"))?;
    let w = model.loss_weights;
    let mut kv = KvFile::new();
    kv.set("format", format!("{DSNN_MAGIC} 1"))
        .set("lambda", model.survival.weibull.lambda)
        .set("rho", model.survival.weibull.rho)
        .set("w_survival", w.survival)
        .set("w_expert", w.expert)
        .set("w_dif", w.dif)
        .set("snn", "dsnn-snn.net")
        .set("dnn", "dsnn-dnn.net");
    kv.write(&dir.join("dsnn.manifest"))
}

fn read_manifest(path: &Path) -> Result<KvFile> {
    let kv = KvFile::read(path)?;
    if kv.raw("format")? != format!("{DSNN_MAGIC} 1") {
        return Err(Error::Format(format!("{}: unknown manifest format", path.display())));
    }
    Ok(kv)
}

pub fn load_survival(dir: &Path, name: &str) -> Result<SurvivalModel> {
    let kv = read_manifest(&dir.join(format!("{name}.manifest")))?;
    Ok(SurvivalModel {
        snn: load_net(&dir.join(kv.raw("snn")?))?,
        weibull: WeibullParams::new(kv.get("lambda")?, kv.get("rho")?)?,
    })
}

pub fn load_dsnn(dir: &Path) -> Result<DsnnModel> {
    let kv = read_manifest(&dir.join("dsnn.manifest"))?;
    Ok(DsnnModel {
        survival: SurvivalModel {
            snn: load_net(&dir.join(kv.raw("snn")?))?,
            weibull: WeibullParams::new(kv.get("lambda")?, kv.get("rho")?)?,
        },
        dnn: load_net(&dir.join(kv.raw("dnn")?))?,
        loss_weights: DsnnLossWeights {
            survival: kv.get("w_survival")?,
            expert: kv.get("w_expert")?,
            dif: kv.get("w_dif")?,
        },
    })
}
