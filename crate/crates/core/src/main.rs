use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use loanvar::data::{self, Normalization, Split};
use loanvar::harness::{self, parse_methods, ExperimentConfig, Method};
use loanvar::kv::KvFile;
use loanvar::rng::derive_seed;
use loanvar::simulation::{self, ReturnDistribution};
use loanvar::{denn, risk_opt, survival, Result};

#[derive(Parser)]
#[command(name = "loanvar", version, about = "Loan-portfolio VaR/CVaR minimization with neural return distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat TOML config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Risk measure to minimize
    #[arg(long, value_parser = ["var95", "var99", "cvar95", "cvar99"])]
    objective: Option<String>,
    /// Comma-separated subset of denn,dsnn,snn_only,equal,random
    #[arg(long)]
    methods: Option<String>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.objective {
            cfg.objective = o.clone();
        }
        if let Some(m) = &self.methods {
            cfg.methods = parse_methods(m)?;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic loan book and its ground truth
    Generate(Common),
    /// Fit the selected models and save them
    Train(Common),
    /// Optimize weights for one portfolio of loans
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Directory written by `train`
        #[arg(long)]
        models: PathBuf,
        /// Loan CSV with raw features
        #[arg(long)]
        loans: PathBuf,
    },
    /// Run the full portfolio experiment
    Experiment(Common),
    /// Rebuild tables and histograms from a saved run
    Report {
        #[command(flatten)]
        common: Common,
        /// Directory written by `experiment`
        #[arg(long)]
        run: PathBuf,
    },
}

fn generate(c: &Common) -> Result<()> {
    let cfg = c.config()?;
    let synth = cfg.synth_config();
    let ds = data::generate_synthetic(&synth)?;
    std::fs::create_dir_all(&cfg.out)?;
    data::write_csv(&ds, &cfg.out.join("loans.csv"))?;
    synth.truth().to_kv().write(&cfg.out.join("truth.txt"))?;
    println!("wrote {} loans to {}", ds.len(), cfg.out.join("loans.csv").display());
    Ok(())
}

fn train(c: &Common) -> Result<()> {
    let cfg = c.config()?;
    cfg.validate()?;
    let ds = harness::prepare_dataset(&cfg)?;
    let train = ds.subset(Split::Train);
    let test = ds.subset(Split::Test);
    let out = &cfg.out;
    std::fs::create_dir_all(out)?;
    if let Some(norm) = &ds.normalization {
        norm.to_kv().write(&out.join("normalization.txt"))?;
    }
    let mut summary = KvFile::new();
    summary.set("seed", cfg.seed).set("train", train.len()).set("test", test.len());
    for m in &cfg.methods {
        match m {
            Method::Denn => {
                let fit = denn::train_denn(&train, &cfg.model_config(derive_seed(cfg.seed, "denn")))?;
                denn::save_denn(&fit.model, out)?;
                summary.set("denn_class_weight", fit.class_weight_positive);
                println!("denn: default-rate loss {:?}", fit.dr_trace.last());
            }
            Method::Dsnn => {
                let fit = survival::train_dsnn(&train, &cfg.dsnn_config(derive_seed(cfg.seed, "dsnn")))?;
                let test_loss = fit.model.survival.survival_loss(&test)?;
                survival::save_dsnn(&fit.model, out)?;
                summary.set("dsnn_test_survival_loss", test_loss);
                println!("dsnn: test survival loss {test_loss:.6}, dif {:.6} -> {:.6}", fit.initial_dif, fit.final_dif);
            }
            Method::SnnOnly => {
                let (model, _) = survival::train_snn_only(&train, &cfg.dsnn_config(derive_seed(cfg.seed, "dsnn")))?;
                let test_loss = model.survival_loss(&test)?;
                survival::save_survival(&model, out, "snn_only")?;
                summary.set("snn_only_test_survival_loss", test_loss);
                println!("snn_only: test survival loss {test_loss:.6}");
            }
            Method::Equal | Method::Random => {}
        }
    }
    summary.write(&out.join("train.txt"))?;
    println!("models written to {}", out.display());
    Ok(())
}

fn optimize(c: &Common, models: &Path, loans: &Path) -> Result<()> {
    let cfg = c.config()?;
    let spec = cfg.risk_spec()?;
    let method = match cfg.methods.as_slice() {
        [m] => *m,
        _ if c.methods.is_none() => Method::Dsnn,
        _ => {
            return Err(loanvar::Error::Config("optimize takes exactly one method".into()));
        }
    };
    let norm = Normalization::from_kv(&KvFile::read(&models.join("normalization.txt"))?)?;
    let mut records = data::load_csv(loans)?.dataset.records;
    for r in &mut records {
        norm.apply(&mut r.features);
    }
    let n = records.len();
    let weights = match method {
        Method::Equal => simulation::WeightVector::equal(n).0,
        Method::Random => {
            let mut rng = loanvar::rng::chacha(derive_seed(cfg.seed, "random"));
            risk_opt::dirichlet_ones(n, &mut rng)
        }
        m => {
            let dists: Vec<ReturnDistribution> = match m {
                Method::Denn => {
                    let model = denn::load_denn(models)?;
                    records.iter().map(|l| Ok(denn::predict_denn(&model, l)?.into())).collect::<Result<_>>()?
                }
                Method::Dsnn => {
                    let model = survival::load_dsnn(models)?;
                    records.iter().map(|l| Ok(survival::predict_dsnn(&model, l)?.into())).collect::<Result<_>>()?
                }
                _ => {
                    let model = survival::load_survival(models, "snn_only")?;
                    records.iter().map(|l| Ok(model.predict(l)?.into())).collect::<Result<_>>()?
                }
            };
            let matrix = simulation::simulate(&dists, cfg.scenarios, derive_seed(cfg.seed, "scenarios"))?;
            let sol = risk_opt::minimize_risk(&matrix, spec, &cfg.opt_config(derive_seed(cfg.seed, "opt")))?;
            println!("{spec} (monthly loss) = {:.6}", sol.objective);
            sol.weights.0
        }
    };
    let mut text = String::from("id,weight\n");
    for (r, w) in records.iter().zip(&weights) {
        text.push_str(&format!("{},{w}\n", r.id));
    }
    print!("{text}");
    if c.out.is_some() {
        std::fs::create_dir_all(&cfg.out)?;
        std::fs::write(cfg.out.join("weights.csv"), text)?;
    }
    Ok(())
}

fn experiment(c: &Common) -> Result<()> {
    let cfg = c.config()?;
    let report = harness::run_experiment(&cfg)?;
    print!("{}", harness::format_table(report.methods(), &report.metadata.confidences, &report.table));
    println!("report written to {}", cfg.out.display());
    Ok(())
}

fn report(c: &Common, run: &Path) -> Result<()> {
    let (mut meta, realized) = harness::load_run(run)?;
    if let Some(p) = &c.config {
        let over = ExperimentConfig::load(p)?;
        meta.confidences = over.confidences.clone();
        meta.config.hist_min = over.hist_min;
        meta.config.hist_max = over.hist_max;
        meta.config.hist_bin_width = over.hist_bin_width;
    }
    let out = c.out.clone().unwrap_or_else(|| run.to_path_buf());
    let table = harness::write_tables(&out, &meta, &realized)?;
    print!("{}", harness::format_table(&meta.methods, &meta.confidences, &table));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(c) => generate(c),
        Command::Train(c) => train(c),
        Command::Optimize { common, models, loans } => optimize(common, models, loans),
        Command::Experiment(c) => experiment(c),
        Command::Report { common, run } => report(common, run),
    };
    match result {
        Ok(()) => {
            info!("done");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
