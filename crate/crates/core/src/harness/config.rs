use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::neural::{DsnnLossWeights, ModelConfig};
use crate::risk_opt::{OptConfig, RiskSpec};
use crate::survival::DsnnConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Denn,
    Dsnn,
    SnnOnly,
    Equal,
    Random,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Denn, Method::Dsnn, Method::SnnOnly, Method::Equal, Method::Random];

    pub fn name(self) -> &'static str {
        match self {
            Method::Denn => "denn",
            Method::Dsnn => "dsnn",
            Method::SnnOnly => "snn_only",
            Method::Equal => "equal",
            Method::Random => "random",
        }
    }

    /// Whether weights come from the optimizer.
    pub fn optimizes(self) -> bool {
        matches!(self, Method::Denn | Method::Dsnn | Method::SnnOnly)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Parse a comma-separated method list.
pub fn parse_methods(s: &str) -> Result<Vec<Method>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

/// Everything one experiment run needs. Serialized as a flat TOML file;
/// every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Loan CSV; when absent a synthetic book is generated.
    pub csv: Option<PathBuf>,
    pub methods: Vec<Method>,
    /// `var95`, `var99`, `cvar95` or `cvar99`.
    pub objective: String,
    pub portfolio_size: usize,
    pub portfolio_count: usize,
    pub scenarios: usize,
    pub confidences: Vec<f64>,
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads for the portfolio stage; 0 uses every core.
    pub threads: usize,
    pub split: [f64; 3],

    // synthetic book
    pub loans: usize,
    pub width: usize,
    pub term: u32,
    pub weibull_lambda: f64,
    pub weibull_rho: f64,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub rate_min: f64,
    pub rate_max: f64,
    pub rate_risk_loading: f64,

    // networks
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub class_weight_positive: Option<f64>,
    pub w_snn: f64,
    pub w_dnn: f64,
    pub w_dif: f64,
    pub expert_class_weight: f64,

    // optimizer
    pub starts: usize,
    pub max_iterations: usize,
    pub polish_evaluations: usize,

    // histograms
    pub hist_min: f64,
    pub hist_max: f64,
    pub hist_bin_width: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let model = ModelConfig::default();
        let opt = OptConfig::default();
        let dsnn = DsnnConfig::default();
        Self {
            csv: None,
            methods: vec![Method::Denn, Method::Dsnn, Method::SnnOnly, Method::Equal, Method::Random],
            objective: "var95".into(),
            portfolio_size: 40,
            portfolio_count: 2_000,
            scenarios: 10_000,
            confidences: vec![0.99, 0.95, 0.90, 0.85, 0.80],
            seed: 0,
            out: PathBuf::from("run"),
            threads: 0,
            split: [164_720.0 / 244_720.0, 40_000.0 / 244_720.0, 40_000.0 / 244_720.0],
            loans: synth.loans,
            width: synth.width,
            term: synth.term,
            weibull_lambda: synth.weibull_lambda,
            weibull_rho: synth.weibull_rho,
            intercept: synth.intercept,
            coefficients: synth.coefficients,
            rate_min: synth.rate_min,
            rate_max: synth.rate_max,
            rate_risk_loading: synth.rate_risk_loading,
            epochs: model.epochs,
            batch_size: model.batch_size,
            learning_rate: model.learning_rate,
            l2: model.l2_coefficient,
            class_weight_positive: model.class_weight_positive,
            w_snn: dsnn.loss_weights.survival,
            w_dnn: dsnn.loss_weights.expert,
            w_dif: dsnn.loss_weights.dif,
            expert_class_weight: dsnn.expert_class_weight,
            starts: opt.starts,
            max_iterations: opt.max_iterations,
            polish_evaluations: opt.polish_evaluations,
            hist_min: -0.040,
            hist_max: 0.015,
            hist_bin_width: 0.001,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        if self.portfolio_size == 0 || self.portfolio_count == 0 || self.scenarios == 0 {
            return bad("portfolio size, portfolio count and scenarios must be positive".into());
        }
        if let Some(c) = self.confidences.iter().find(|c| !(**c > 0.0 && **c < 1.0)) {
            return bad(format!("confidence {c} outside (0, 1)"));
        }
        if !(self.hist_bin_width > 0.0) || self.hist_max <= self.hist_min {
            return bad("histogram range/bin width invalid".into());
        }
        self.risk_spec()?;
        self.synth_config().validate()
    }

    pub fn risk_spec(&self) -> Result<RiskSpec> {
        self.objective.parse()
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            loans: self.loans,
            width: self.width,
            term: self.term,
            weibull_lambda: self.weibull_lambda,
            weibull_rho: self.weibull_rho,
            intercept: self.intercept,
            coefficients: self.coefficients.clone(),
            rate_min: self.rate_min,
            rate_max: self.rate_max,
            rate_risk_loading: self.rate_risk_loading,
            seed: crate::rng::derive_seed(self.seed, "synthetic"),
            ..SynthConfig::default()
        }
    }

    pub fn model_config(&self, seed: u64) -> ModelConfig {
        ModelConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            l2_coefficient: self.l2,
            class_weight_positive: self.class_weight_positive,
            seed,
        }
    }

    pub fn dsnn_config(&self, seed: u64) -> DsnnConfig {
        DsnnConfig {
            model: self.model_config(seed),
            loss_weights: DsnnLossWeights {
                survival: self.w_snn,
                expert: self.w_dnn,
                dif: self.w_dif,
            },
            expert_class_weight: self.expert_class_weight,
            censored_fit: true,
        }
    }

    pub fn opt_config(&self, seed: u64) -> OptConfig {
        OptConfig {
            starts: self.starts,
            max_iterations: self.max_iterations,
            polish_evaluations: self.polish_evaluations,
            seed,
            ..OptConfig::default()
        }
    }
}
