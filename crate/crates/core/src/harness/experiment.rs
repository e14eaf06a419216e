use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::histogram::emit_histogram;
use crate::data::{self, Dataset, LoanRecord, Split};
use crate::denn::{self, DennModel};
use crate::error::{Error, Result};
use crate::loan_math::annualized_loss;
use crate::risk_opt::{self, RiskSpec};
use crate::rng::{self, derive_indexed, derive_seed};
use crate::simulation::{self, ReturnDistribution, WeightVector};
use crate::survival::{self, SurvivalModel};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub loans: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub train_default_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub denn_class_weight: Option<f64>,
    pub denn_dr_final_loss: Option<f64>,
    pub denn_dl_final_loss: Option<f64>,
    /// Threshold-0.5 accuracy of the default-rate network on the test split.
    pub denn_test_accuracy: Option<f64>,
    pub weibull_lambda: Option<f64>,
    pub weibull_rho: Option<f64>,
    pub dsnn_initial_dif: Option<f64>,
    pub dsnn_final_dif: Option<f64>,
    pub dsnn_test_survival_loss: Option<f64>,
    pub snn_only_test_survival_loss: Option<f64>,
}

/// Everything except timings, which live in a separate file so that report
/// files stay reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config: ExperimentConfig,
    pub methods: Vec<Method>,
    pub confidences: Vec<f64>,
    pub objective: String,
    pub seeds: BTreeMap<String, u64>,
    pub dataset: DatasetSummary,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub metadata: RunMetadata,
    /// `table[m][c]`: annualized VaR of method `m` at confidence `c`.
    pub table: Vec<Vec<f64>>,
    /// Realized portfolio returns per method, one per portfolio.
    pub realized: Vec<Vec<f64>>,
    /// Chosen weights per method and portfolio.
    pub weights: Vec<Vec<Vec<f64>>>,
    pub timings: Vec<(String, f64)>,
}

impl ExperimentReport {
    pub fn methods(&self) -> &[Method] {
        &self.metadata.methods
    }

    pub fn row(&self, method: Method) -> Option<&[f64]> {
        let i = self.methods().iter().position(|m| *m == method)?;
        Some(&self.table[i])
    }

    pub fn realized_for(&self, method: Method) -> Option<&[f64]> {
        let i = self.methods().iter().position(|m| *m == method)?;
        Some(&self.realized[i])
    }
}

/// Annualized VaR of a pooled realized-return sample at each confidence.
pub fn var_row(realized: &[f64], confidences: &[f64]) -> Result<Vec<f64>> {
    confidences
        .iter()
        .map(|&c| Ok(annualized_loss(-risk_opt::var(realized, c)?)))
        .collect()
}

/// Load or generate the loan book, then split and standardize it.
pub fn prepare_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let raw = match &cfg.csv {
        Some(path) => {
            let loaded = data::load_csv(path)?;
            if !loaded.rejected.is_empty() {
                info!("{} rows rejected from {}", loaded.rejected.len(), path.display());
            }
            loaded.dataset
        }
        None => data::generate_synthetic(&cfg.synth_config())?,
    };
    data::preprocess(&raw, cfg.split, derive_seed(cfg.seed, "split"))
}

fn seeds(cfg: &ExperimentConfig) -> BTreeMap<String, u64> {
    let mut s = BTreeMap::new();
    s.insert("master".to_string(), cfg.seed);
    s.insert("synthetic".to_string(), cfg.synth_config().seed);
    for label in ["split", "denn", "dsnn", "portfolio", "random"] {
        s.insert(label.to_string(), derive_seed(cfg.seed, label));
    }
    s
}

struct Models {
    denn: Option<DennModel>,
    dsnn: Option<SurvivalModel>,
    snn_only: Option<SurvivalModel>,
}

fn train_models(cfg: &ExperimentConfig, ds: &Dataset, diag: &mut Diagnostics, timings: &mut Vec<(String, f64)>) -> Result<Models> {
    let train = ds.subset(Split::Train);
    let test = ds.subset(Split::Test);
    let wants = |m: Method| cfg.methods.contains(&m);
    let mut models = Models {
        denn: None,
        dsnn: None,
        snn_only: None,
    };

    if wants(Method::Denn) {
        let t0 = Instant::now();
        let fit = denn::train_denn(&train, &cfg.model_config(derive_seed(cfg.seed, "denn"))).map_err(|e| e.at_stage("train denn"))?;
        diag.denn_class_weight = Some(fit.class_weight_positive);
        diag.denn_dr_final_loss = fit.dr_trace.last().copied();
        diag.denn_dl_final_loss = fit.dl_trace.last().copied();
        diag.denn_test_accuracy = Some(accuracy(&fit.model, &test)?);
        models.denn = Some(fit.model);
        timings.push(("train_denn".into(), t0.elapsed().as_secs_f64()));
    }
    let dsnn_cfg = cfg.dsnn_config(derive_seed(cfg.seed, "dsnn"));
    if wants(Method::Dsnn) {
        let t0 = Instant::now();
        let fit = survival::train_dsnn(&train, &dsnn_cfg).map_err(|e| e.at_stage("train dsnn"))?;
        let model = fit.model.survival;
        diag.weibull_lambda = Some(model.weibull.lambda);
        diag.weibull_rho = Some(model.weibull.rho);
        diag.dsnn_initial_dif = Some(fit.initial_dif);
        diag.dsnn_final_dif = Some(fit.final_dif);
        diag.dsnn_test_survival_loss = Some(model.survival_loss(&test)?);
        models.dsnn = Some(model);
        timings.push(("train_dsnn".into(), t0.elapsed().as_secs_f64()));
    }
    if wants(Method::SnnOnly) {
        let t0 = Instant::now();
        let (model, _) = survival::train_snn_only(&train, &dsnn_cfg).map_err(|e| e.at_stage("train snn_only"))?;
        diag.weibull_lambda = Some(model.weibull.lambda);
        diag.weibull_rho = Some(model.weibull.rho);
        diag.snn_only_test_survival_loss = Some(model.survival_loss(&test)?);
        models.snn_only = Some(model);
        timings.push(("train_snn_only".into(), t0.elapsed().as_secs_f64()));
    }
    Ok(models)
}

fn accuracy(model: &DennModel, test: &[LoanRecord]) -> Result<f64> {
    if test.is_empty() {
        return Ok(f64::NAN);
    }
    let x = data::feature_matrix(test);
    let p = model.dr_nn.predict_batch(&x, test.len())?;
    let hits = p
        .iter()
        .zip(test)
        .filter(|(p, r)| (**p >= 0.5) == r.defaulted)
        .count();
    Ok(hits as f64 / test.len() as f64)
}

/// Predicted return distribution of every test loan, per optimizing method.
fn predictions(models: &Models, method: Method, test: &[LoanRecord]) -> Result<Vec<ReturnDistribution>> {
    let missing = || Error::Config(format!("no trained model for `{method}`"));
    match method {
        Method::Denn => {
            let m = models.denn.as_ref().ok_or_else(missing)?;
            test.iter().map(|l| Ok(denn::predict_denn(m, l)?.into())).collect()
        }
        Method::Dsnn | Method::SnnOnly => {
            let m = if method == Method::Dsnn {
                models.dsnn.as_ref()
            } else {
                models.snn_only.as_ref()
            }
            .ok_or_else(missing)?;
            test.iter().map(|l| Ok(m.predict(l)?.into())).collect()
        }
        Method::Equal | Method::Random => Ok(Vec::new()),
    }
}

/// Portfolio `p`: `n` test-split positions drawn with replacement.
pub fn sample_portfolio(master: u64, p: usize, n: usize, test_len: usize) -> Vec<usize> {
    let mut rng = rng::chacha(derive_indexed(master, "portfolio", p as u64));
    (0..n).map(|_| rng.random_range(0..test_len)).collect()
}

struct MethodPlan<'a> {
    method: Method,
    dists: Vec<ReturnDistribution>,
    cfg: &'a ExperimentConfig,
    spec: RiskSpec,
}

impl MethodPlan<'_> {
    fn weights(&self, p: usize, loans: &[usize]) -> Result<Vec<f64>> {
        let n = loans.len();
        let master = self.cfg.seed;
        match self.method {
            Method::Equal => Ok(WeightVector::equal(n).0),
            Method::Random => {
                let mut rng = rng::chacha(derive_indexed(master, "random", p as u64));
                Ok(risk_opt::dirichlet_ones(n, &mut rng))
            }
            m => {
                let dists: Vec<ReturnDistribution> = loans.iter().map(|&i| self.dists[i].clone()).collect();
                let label = format!("scenarios/{m}");
                let matrix = simulation::simulate(&dists, self.cfg.scenarios, derive_indexed(master, &label, p as u64))?;
                let opt = self.cfg.opt_config(derive_indexed(master, &format!("opt/{m}"), p as u64));
                Ok(risk_opt::minimize_risk(&matrix, self.spec, &opt)?.weights.0)
            }
        }
    }
}

fn worker_count(cfg: &ExperimentConfig) -> usize {
    if cfg.threads > 0 {
        cfg.threads
    } else {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }
}

/// Weights for every portfolio, computed across worker threads. Results are
/// collected by portfolio index, so the thread count never changes them.
fn all_weights(plan: &MethodPlan<'_>, portfolios: &[Vec<usize>], workers: usize) -> Result<Vec<Vec<f64>>> {
    let workers = workers.clamp(1, portfolios.len().max(1));
    let chunk = portfolios.len().div_ceil(workers);
    let chunks: Vec<Result<Vec<Vec<f64>>>> = std::thread::scope(|s| {
        let handles: Vec<_> = portfolios
            .chunks(chunk.max(1))
            .enumerate()
            .map(|(c, part)| {
                s.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(j, loans)| plan.weights(c * chunk + j, loans))
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("portfolio worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(portfolios.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Run the whole protocol on an already prepared dataset, without writing
/// anything.
pub fn run_on_dataset(cfg: &ExperimentConfig, ds: &Dataset) -> Result<ExperimentReport> {
    cfg.validate()?;
    let spec = cfg.risk_spec()?;
    let mut timings = Vec::new();
    let mut diagnostics = Diagnostics::default();

    let train = ds.subset(Split::Train);
    let test = ds.subset(Split::Test);
    if test.is_empty() {
        return Err(Error::Config("the test split is empty".into()).at_stage("portfolios"));
    }
    let dataset = DatasetSummary {
        loans: ds.len(),
        train: train.len(),
        validation: ds.indices(Split::Validation).len(),
        test: test.len(),
        train_default_rate: train.iter().filter(|r| r.defaulted).count() as f64 / train.len().max(1) as f64,
    };

    let models = train_models(cfg, ds, &mut diagnostics, &mut timings)?;
    let portfolios: Vec<Vec<usize>> = (0..cfg.portfolio_count)
        .map(|p| sample_portfolio(cfg.seed, p, cfg.portfolio_size, test.len()))
        .collect();
    let realized_loans = test
        .iter()
        .map(LoanRecord::realized_return)
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.at_stage("realized returns"))?;

    let workers = worker_count(cfg);
    let mut table = Vec::new();
    let mut realized = Vec::new();
    let mut weights = Vec::new();
    for &method in &cfg.methods {
        let t0 = Instant::now();
        let stage = format!("portfolios {method}");
        let plan = MethodPlan {
            method,
            dists: predictions(&models, method, &test).map_err(|e| e.at_stage(&stage))?,
            cfg,
            spec,
        };
        let w = all_weights(&plan, &portfolios, workers).map_err(|e| e.at_stage(&stage))?;
        let r: Vec<f64> = w
            .iter()
            .zip(&portfolios)
            .map(|(w, loans)| w.iter().zip(loans).map(|(wi, &i)| wi * realized_loans[i]).sum())
            .collect();
        table.push(var_row(&r, &cfg.confidences)?);
        realized.push(r);
        weights.push(w);
        timings.push((format!("portfolios_{method}"), t0.elapsed().as_secs_f64()));
        info!("{method}: done in {:.1}s", t0.elapsed().as_secs_f64());
    }

    // Where and how fast the run executes is not part of the experiment.
    let mut echo = cfg.clone();
    echo.out = PathBuf::new();
    echo.threads = 0;
    Ok(ExperimentReport {
        metadata: RunMetadata {
            config: echo,
            methods: cfg.methods.clone(),
            confidences: cfg.confidences.clone(),
            objective: spec.to_string(),
            seeds: seeds(cfg),
            dataset,
            diagnostics,
        },
        table,
        realized,
        weights,
        timings,
    })
}

/// Prepare the data, run every stage and write the report to `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let t0 = Instant::now();
    let ds = prepare_dataset(cfg).map_err(|e| e.at_stage("data"))?;
    let prep = t0.elapsed().as_secs_f64();
    let mut report = run_on_dataset(cfg, &ds)?;
    report.timings.insert(0, ("data".into(), prep));
    write_report(&report, &cfg.out).map_err(|e| e.at_stage("write report"))?;
    Ok(report)
}

/// Format the VaR table: rows are methods, columns confidence levels.
pub fn format_table(methods: &[Method], confidences: &[f64], table: &[Vec<f64>]) -> String {
    let mut s = String::from("method");
    for c in confidences {
        s.push_str(&format!("\t{}%", (c * 100.0).round() as u32));
    }
    s.push('\n');
    for (m, row) in methods.iter().zip(table) {
        s.push_str(m.name());
        for v in row {
            s.push_str(&format!("\t{v:.4}"));
        }
        s.push('\n');
    }
    s
}

/// Tables and histograms derived from realized returns.
pub fn write_tables(dir: &Path, meta: &RunMetadata, realized: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    std::fs::create_dir_all(dir)?;
    let cfg = &meta.config;
    let table = realized
        .iter()
        .map(|r| var_row(r, &meta.confidences))
        .collect::<Result<Vec<_>>>()?;
    std::fs::write(dir.join("var_table.tsv"), format_table(&meta.methods, &meta.confidences, &table))?;
    for (m, r) in meta.methods.iter().zip(realized) {
        emit_histogram(r, cfg.hist_bin_width, (cfg.hist_min, cfg.hist_max))?.write(&dir.join(format!("histogram_{m}.csv")))?;
    }
    Ok(table)
}

pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let meta = &report.metadata;
    write_tables(dir, meta, &report.realized)?;
    for (i, m) in meta.methods.iter().enumerate() {
        let mut s = String::from("portfolio,realized_return\n");
        for (p, r) in report.realized[i].iter().enumerate() {
            s.push_str(&format!("{p},{r}\n"));
        }
        std::fs::write(dir.join(format!("realized_{m}.csv")), s)?;
        let mut s = String::new();
        for w in &report.weights[i] {
            let line: Vec<String> = w.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        std::fs::write(dir.join(format!("weights_{m}.csv")), s)?;
    }
    let json = serde_json::to_string_pretty(meta).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(dir.join("metadata.json"), json + "\n")?;
    let timings: BTreeMap<&str, f64> = report.timings.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let json = serde_json::to_string_pretty(&timings).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(dir.join("timings.json"), json + "\n")?;
    Ok(())
}

/// Reload a saved run's metadata and realized returns.
pub fn load_run(dir: &Path) -> Result<(RunMetadata, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(dir.join("metadata.json"))?;
    let meta: RunMetadata = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    let mut realized = Vec::new();
    for m in &meta.methods {
        let path = dir.join(format!("realized_{m}.csv"));
        let mut rdr = csv::Reader::from_path(&path)?;
        let mut r = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let v = rec
                .get(1)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Row {
                    path: path.clone(),
                    row: row + 2,
                    reason: "bad realized return".into(),
                })?;
            r.push(v);
        }
        realized.push(r);
    }
    Ok((meta, realized))
}
