//! Two independent networks: one for the default probability, one for the
//! fraction of the term a defaulting loan survives. Together they give a
//! two-point return distribution per loan.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{feature_matrix, LoanRecord};
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::loan_math;
use crate::neural::{self, Activation, LossKind, ModelConfig, Network, TrainSet};
use crate::rng;
use crate::survival::load_net;

pub const ACTIVATIONS: [Activation; 4] =
    [Activation::Tanh, Activation::Tanh, Activation::Tanh, Activation::Sigmoid];

#[derive(Debug, Clone, PartialEq)]
pub struct DennModel {
    /// Default-rate network.
    pub dr_nn: Network,
    /// Default-lifetime network; outputs lifetime / term.
    pub dl_nn: Network,
}

/// Promised return with probability `1 - p`, predicted default return with
/// probability `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryReturnDistribution {
    pub promised: f64,
    pub default_return: f64,
    pub default_probability: f64,
}

impl BinaryReturnDistribution {
    pub fn mean(&self) -> f64 {
        (1.0 - self.default_probability) * self.promised + self.default_probability * self.default_return
    }
}

#[derive(Debug, Clone)]
pub struct DennFit {
    pub model: DennModel,
    pub dr_trace: Vec<f64>,
    pub dl_trace: Vec<f64>,
    pub class_weight_positive: f64,
}

/// `#negatives / #positives`.
pub fn balanced_class_weight(records: &[LoanRecord]) -> Result<f64> {
    let pos = records.iter().filter(|r| r.defaulted).count();
    if pos == 0 {
        return Err(Error::Training {
            epoch: 0,
            step: 0,
            reason: "no defaulted loans in the training split".into(),
        });
    }
    Ok((records.len() - pos) as f64 / pos as f64)
}

/// Train the default-rate network on every loan and the lifetime network on
/// defaulted loans only.
pub fn train_denn(train_set: &[LoanRecord], cfg: &ModelConfig) -> Result<DennFit> {
    let defaults: Vec<LoanRecord> = train_set.iter().filter(|r| r.defaulted).cloned().collect();
    if defaults.is_empty() {
        return Err(Error::Training {
            epoch: 0,
            step: 0,
            reason: "no defaulted loans: the lifetime network has no labels".into(),
        });
    }
    let class_weight = match cfg.class_weight_positive {
        Some(w) => w,
        None => balanced_class_weight(train_set)?.max(f64::MIN_POSITIVE),
    };
    let width = train_set[0].features.len();

    let mut dr_nn = Network::init(&cfg.spec(width, ACTIVATIONS, rng::derive_seed(cfg.seed, "dr-init")))?;
    let x = feature_matrix(train_set);
    let events: Vec<f64> = train_set.iter().map(LoanRecord::event).collect();
    let dr_trace = neural::train(
        &mut dr_nn,
        &TrainSet::supervised(&x, width, &events),
        &LossKind::WeightedBce,
        &cfg.train_config(rng::derive_seed(cfg.seed, "dr-shuffle"), class_weight),
    )?;

    let mut dl_nn = Network::init(&cfg.spec(width, ACTIVATIONS, rng::derive_seed(cfg.seed, "dl-init")))?;
    let xd = feature_matrix(&defaults);
    let ratios: Vec<f64> = defaults
        .iter()
        .map(|r| r.lifetime as f64 / r.terms.term as f64)
        .collect();
    let dl_trace = neural::train(
        &mut dl_nn,
        &TrainSet::supervised(&xd, width, &ratios),
        &LossKind::Mse,
        &cfg.train_config(rng::derive_seed(cfg.seed, "dl-shuffle"), 1.0),
    )?;

    Ok(DennFit {
        model: DennModel { dr_nn, dl_nn },
        dr_trace,
        dl_trace,
        class_weight_positive: class_weight,
    })
}

/// Installments a defaulting loan is predicted to pay: nearest integer to
/// `ratio * term`, kept below the term.
pub fn predicted_default_lifetime(ratio: f64, term: u32) -> u32 {
    let t = (ratio * term as f64).round();
    t.clamp(0.0, (term - 1) as f64) as u32
}

pub fn predict_denn(model: &DennModel, loan: &LoanRecord) -> Result<BinaryReturnDistribution> {
    let p = model.dr_nn.forward(&loan.features)?[0];
    let ratio = model.dl_nn.forward(&loan.features)?[0];
    from_outputs(loan, p, ratio)
}

/// Distribution from raw network outputs.
pub fn from_outputs(loan: &LoanRecord, default_probability: f64, lifetime_ratio: f64) -> Result<BinaryReturnDistribution> {
    let paid = predicted_default_lifetime(lifetime_ratio, loan.terms.term);
    Ok(BinaryReturnDistribution {
        promised: loan.terms.rate,
        default_return: loan_math::default_return(&loan.terms, paid)?,
        default_probability: default_probability.clamp(0.0, 1.0),
    })
}

pub fn save_denn(model: &DennModel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (net, file) in [(&model.dr_nn, "denn-dr.net"), (&model.dl_nn, "denn-dl.net")] {
        neural::write_network(net, std::io::BufWriter::new(std::fs::File::create(dir.join(file))?))?;
    }
    let mut kv = KvFile::new();
    kv.set("format", "loanvar-denn 1")
        .set("dr_nn", "denn-dr.net")
        .set("dl_nn", "denn-dl.net");
    kv.write(&dir.join("denn.manifest"))
}

pub fn load_denn(dir: &Path) -> Result<DennModel> {
    let kv = KvFile::read(&dir.join("denn.manifest"))?;
    if kv.raw("format")? != "loanvar-denn 1" {
        return Err(Error::Format("unknown DeNN manifest format".into()));
    }
    Ok(DennModel {
        dr_nn: load_net(&dir.join(kv.raw("dr_nn")?))?,
        dl_nn: load_net(&dir.join(kv.raw("dl_nn")?))?,
    })
}
