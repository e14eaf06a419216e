//! Loan records, CSV ingestion, preprocessing and the synthetic generator.

use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::loan_math::{self, LoanTerms};
use crate::neural::sigmoid;
use crate::rng;

/// One loan: features, contractual terms and observed outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoanRecord {
    pub id: String,
    pub features: Vec<f64>,
    pub terms: LoanTerms,
    /// Installments paid; equals the term for a loan that did not default.
    pub lifetime: u32,
    pub defaulted: bool,
    pub grade: Option<String>,
}

impl LoanRecord {
    pub fn validate(&self) -> Result<()> {
        self.terms.validate()?;
        if self.defaulted && self.lifetime >= self.terms.term {
            return Err(Error::Inconsistent(format!(
                "defaulted loan with lifetime {} on a {}-month term",
                self.lifetime, self.terms.term
            )));
        }
        if !self.defaulted && self.lifetime != self.terms.term {
            return Err(Error::Inconsistent(format!(
                "repaid loan with lifetime {} on a {}-month term",
                self.lifetime, self.terms.term
            )));
        }
        if let Some(v) = self.features.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite feature {v}")));
        }
        Ok(())
    }

    /// Monthly return actually earned, from the true outcome.
    pub fn realized_return(&self) -> Result<f64> {
        loan_math::realized_return(&self.terms, self.defaulted, self.lifetime)
    }

    pub fn event(&self) -> f64 {
        if self.defaulted {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Per-feature standardization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, width: usize) -> Self {
        let rows: Vec<&[f64]> = rows.collect();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; width];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; width];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Self { mean, std }
    }

    /// Standardize in place; zero-variance features map to 0.
    pub fn apply(&self, x: &mut [f64]) {
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = if *s > 0.0 { (*v - m) / s } else { 0.0 };
        }
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::new();
        kv.set_list("mean", &self.mean).set_list("std", &self.std);
        kv
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let mean: Vec<f64> = kv.get_list("mean")?;
        let std: Vec<f64> = kv.get_list("std")?;
        if mean.len() != std.len() {
            return Err(Error::Format("normalization mean/std length mismatch".into()));
        }
        Ok(Self { mean, std })
    }
}

/// Ground truth behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub weibull_lambda: f64,
    pub weibull_rho: f64,
    pub term: u32,
    pub seed: u64,
}

impl SyntheticTruth {
    /// True default probability for raw (unnormalized) features.
    pub fn default_probability(&self, raw_features: &[f64]) -> f64 {
        sigmoid(self.score(raw_features))
    }

    fn score(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::new();
        kv.set("intercept", self.intercept)
            .set_list("coefficients", &self.coefficients)
            .set("weibull_lambda", self.weibull_lambda)
            .set("weibull_rho", self.weibull_rho)
            .set("term", self.term)
            .set("seed", self.seed);
        kv
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        Ok(Self {
            intercept: kv.get("intercept")?,
            coefficients: kv.get_list("coefficients")?,
            weibull_lambda: kv.get("weibull_lambda")?,
            weibull_rho: kv.get("weibull_rho")?,
            term: kv.get("term")?,
            seed: kv.get("seed")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<LoanRecord>,
    pub width: usize,
    /// One entry per record once `preprocess` has run.
    pub splits: Vec<Split>,
    /// Training-split statistics already applied to `records`.
    pub normalization: Option<Normalization>,
    pub truth: Option<SyntheticTruth>,
}

impl Dataset {
    pub fn new(records: Vec<LoanRecord>, width: usize) -> Result<Self> {
        for r in &records {
            if r.features.len() != width {
                return Err(Error::Dimension {
                    expected: width,
                    got: r.features.len(),
                });
            }
        }
        Ok(Self {
            records,
            width,
            splits: Vec::new(),
            normalization: None,
            truth: None,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Records of one split; before splitting, every record counts as
    /// training data.
    pub fn subset(&self, split: Split) -> Vec<LoanRecord> {
        if self.splits.is_empty() {
            return if split == Split::Train {
                self.records.clone()
            } else {
                Vec::new()
            };
        }
        self.indices(split)
            .into_iter()
            .map(|i| self.records[i].clone())
            .collect()
    }
}

/// Row-major feature matrix of `records`.
pub fn feature_matrix(records: &[LoanRecord]) -> Vec<f64> {
    records.iter().flat_map(|r| r.features.iter().copied()).collect()
}

const TAIL_COLUMNS: [&str; 6] = ["amount", "installment", "term", "rate", "lifetime", "default"];

/// A row dropped during loading.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    /// 1-based data row number (the header is row 0).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Loaded {
    pub dataset: Dataset,
    pub rejected: Vec<Rejection>,
}

/// Feature width declared by a header, or an error describing what is wrong.
fn schema_width(header: &csv::StringRecord, path: &Path) -> Result<(usize, bool)> {
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    let bad = |reason: String| Error::Row {
        path: path.to_owned(),
        row: 0,
        reason,
    };
    if cols.first() != Some(&"id") {
        return Err(bad("first column must be `id`".into()));
    }
    let width = cols[1..].iter().take_while(|c| c.starts_with("f_")).count();
    for (j, c) in cols[1..=width].iter().enumerate() {
        if *c != format!("f_{j}") {
            return Err(bad(format!("feature column {j} is named `{c}`")));
        }
    }
    let rest = &cols[1 + width..];
    let has_grade = rest.len() == TAIL_COLUMNS.len() + 1 && rest.last() == Some(&"grade");
    let tail = if has_grade { &rest[..rest.len() - 1] } else { rest };
    if tail != TAIL_COLUMNS {
        let missing: Vec<&str> = TAIL_COLUMNS.iter().filter(|c| !tail.contains(c)).copied().collect();
        return Err(bad(if missing.is_empty() {
            format!("columns after features must be {}", TAIL_COLUMNS.join(","))
        } else {
            format!("missing columns: {}", missing.join(","))
        }));
    }
    Ok((width, has_grade))
}

/// Load loans from a CSV with header `id, f_0..f_{d-1}, amount, installment,
/// term, rate, lifetime, default[, grade]`.
///
/// Malformed cells abort the load; rows that parse but violate the outcome
/// invariants are dropped and reported.
pub fn load_csv(path: &Path) -> Result<Loaded> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = reader.headers()?.clone();
    let (width, has_grade) = schema_width(&header, path)?;
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let cell_err = |col: &str, v: &str| Error::Row {
            path: path.to_owned(),
            row: row_no,
            reason: format!("column `{col}`: cannot parse `{v}`"),
        };
        let num = |j: usize, name: &str| -> Result<f64> {
            let v = row.get(j).unwrap_or("");
            v.parse::<f64>().map_err(|_| cell_err(name, v))
        };
        let int = |j: usize, name: &str| -> Result<u32> {
            let v = row.get(j).unwrap_or("");
            v.parse::<u32>().map_err(|_| cell_err(name, v))
        };
        let mut features = Vec::with_capacity(width);
        for j in 0..width {
            features.push(num(1 + j, &format!("f_{j}"))?);
        }
        let base = 1 + width;
        let flag = row.get(base + 5).unwrap_or("");
        let defaulted = match flag {
            "1" => true,
            "0" => false,
            v => return Err(cell_err("default", v)),
        };
        let terms = LoanTerms {
            amount: num(base, "amount")?,
            installment: num(base + 1, "installment")?,
            term: int(base + 2, "term")?,
            rate: num(base + 3, "rate")?,
        };
        let record = LoanRecord {
            id: row.get(0).unwrap_or("").to_owned(),
            features,
            terms,
            lifetime: int(base + 4, "lifetime")?,
            defaulted,
            grade: if has_grade {
                row.get(base + 6).filter(|g| !g.is_empty()).map(str::to_owned)
            } else {
                None
            },
        };
        if let Err(e) = record.validate() {
            warn!("{}: row {row_no} rejected: {e}", path.display());
            rejected.push(Rejection {
                row: row_no,
                reason: e.to_string(),
            });
            continue;
        }
        if !record.terms.is_self_consistent() {
            warn!(
                "{}: row {row_no}: terms inconsistent with promised rate (gap {:.2e})",
                path.display(),
                record.terms.consistency_gap()
            );
        }
        records.push(record);
    }
    Ok(Loaded {
        dataset: Dataset::new(records, width)?,
        rejected,
    })
}

pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let has_grade = dataset.records.iter().any(|r| r.grade.is_some());
    let mut header = vec!["id".to_owned()];
    header.extend((0..dataset.width).map(|j| format!("f_{j}")));
    header.extend(TAIL_COLUMNS.iter().map(|s| s.to_string()));
    if has_grade {
        header.push("grade".into());
    }
    w.write_record(&header)?;
    for r in &dataset.records {
        let mut row = vec![r.id.clone()];
        row.extend(r.features.iter().map(|v| v.to_string()));
        row.push(r.terms.amount.to_string());
        row.push(r.terms.installment.to_string());
        row.push(r.terms.term.to_string());
        row.push(r.terms.rate.to_string());
        row.push(r.lifetime.to_string());
        row.push(if r.defaulted { "1" } else { "0" }.into());
        if has_grade {
            row.push(r.grade.clone().unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Split sizes for `n` records; validation and training round to nearest,
/// test takes the remainder.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !(*r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be positive and sum to 1")));
    }
    let train = ((n as f64) * ratios[0]).round() as usize;
    let val = (((n as f64) * ratios[1]).round() as usize).min(n - train.min(n));
    let train = train.min(n);
    Ok([train, val, n - train - val])
}

/// Seeded train/validation/test split followed by standardization with
/// training-split statistics.
pub fn preprocess(dataset: &Dataset, ratios: [f64; 3], seed: u64) -> Result<Dataset> {
    if dataset.is_empty() {
        return Err(Error::domain("cannot split an empty dataset"));
    }
    let n = dataset.len();
    let [n_train, n_val, _] = split_sizes(n, ratios)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::chacha(seed));
    let mut splits = vec![Split::Test; n];
    for (pos, &i) in order.iter().enumerate() {
        splits[i] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
    }
    let norm = Normalization::fit(
        dataset
            .records
            .iter()
            .zip(&splits)
            .filter(|(_, s)| **s == Split::Train)
            .map(|(r, _)| r.features.as_slice()),
        dataset.width,
    );
    let mut records = dataset.records.clone();
    for r in &mut records {
        norm.apply(&mut r.features);
    }
    Ok(Dataset {
        records,
        width: dataset.width,
        splits,
        normalization: Some(norm),
        truth: dataset.truth.clone(),
    })
}

/// Parameters of the synthetic loan book.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub loans: usize,
    pub width: usize,
    pub term: u32,
    /// Weibull truth for the lifetime of defaulting loans.
    pub weibull_lambda: f64,
    pub weibull_rho: f64,
    pub intercept: f64,
    /// Default-propensity coefficients; missing trailing entries are zero.
    pub coefficients: Vec<f64>,
    /// Range of promised monthly rates.
    pub rate_min: f64,
    pub rate_max: f64,
    /// How strongly the promised rate tracks default propensity.
    pub rate_risk_loading: f64,
    pub amount_min: f64,
    pub amount_max: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            loans: 20_000,
            width: 16,
            term: 36,
            weibull_lambda: 0.05,
            weibull_rho: 1.5,
            intercept: -2.0,
            coefficients: vec![1.2, -1.0, 0.8, -0.7, 0.6, -0.5, 0.4, -0.3],
            rate_min: 0.005,
            rate_max: 0.022,
            rate_risk_loading: 0.5,
            amount_min: 1_000.0,
            amount_max: 35_000.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.loans == 0 || self.width == 0 {
            return bad("need at least one loan and one feature");
        }
        if self.term < 2 {
            return bad("term must be at least 2 months");
        }
        if !(self.weibull_lambda > 0.0 && self.weibull_rho > 0.0) {
            return bad("weibull parameters must be positive");
        }
        if self.coefficients.len() > self.width {
            return bad("more coefficients than features");
        }
        if !(self.rate_min > -1.0 && self.rate_min <= self.rate_max) {
            return bad("bad rate range");
        }
        if !(self.amount_min > 0.0 && self.amount_min <= self.amount_max) {
            return bad("bad amount range");
        }
        Ok(())
    }

    pub fn truth(&self) -> SyntheticTruth {
        SyntheticTruth {
            intercept: self.intercept,
            coefficients: self.coefficients.clone(),
            weibull_lambda: self.weibull_lambda,
            weibull_rho: self.weibull_rho,
            term: self.term,
            seed: self.seed,
        }
    }
}

/// Default lifetime drawn from the Weibull truth conditioned on `T < term`,
/// floored to whole months.
pub fn sample_default_lifetime(u: f64, lambda: f64, rho: f64, term: u32) -> u32 {
    let cap = 1.0 - (-(lambda * term as f64).powf(rho)).exp();
    let v = u * cap;
    let t = (-(1.0 - v).ln()).powf(1.0 / rho) / lambda;
    (t.floor() as u32).min(term - 1)
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let truth = cfg.truth();
    let mut rng = rng::chacha(cfg.seed);
    let mut records = Vec::with_capacity(cfg.loans);
    for i in 0..cfg.loans {
        let features: Vec<f64> = (0..cfg.width).map(|_| rng.sample(StandardNormal)).collect();
        let score = truth.score(&features);
        let defaulted = rng.random::<f64>() < sigmoid(score);
        let noise: f64 = rng.sample(StandardNormal);
        let rate = cfg.rate_min
            + (cfg.rate_max - cfg.rate_min) * sigmoid(cfg.rate_risk_loading * score + 0.5 * noise);
        let amount = (cfg.amount_min + (cfg.amount_max - cfg.amount_min) * rng.random::<f64>()).round();
        let terms = LoanTerms::from_rate(amount, cfg.term, rate)?;
        let u: f64 = rng.random();
        let lifetime = if defaulted {
            sample_default_lifetime(u, cfg.weibull_lambda, cfg.weibull_rho, cfg.term)
        } else {
            cfg.term
        };
        records.push(LoanRecord {
            id: format!("L{i:06}"),
            features,
            terms,
            lifetime,
            defaulted,
            grade: None,
        });
    }
    let mut ds = Dataset::new(records, cfg.width)?;
    ds.truth = Some(truth);
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn small() -> Dataset {
        generate_synthetic(&SynthConfig {
            loans: 500,
            width: 4,
            coefficients: vec![1.0, -0.5],
            seed: 3,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn generated_records_are_valid() {
        let ds = small();
        for r in &ds.records {
            r.validate().unwrap();
            assert!(r.terms.is_self_consistent());
        }
        assert!(ds.records.iter().any(|r| r.defaulted));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loans.csv");
        let ds = small();
        write_csv(&ds, &path).unwrap();
        let loaded = load_csv(&path).unwrap();
        assert!(loaded.rejected.is_empty());
        assert_eq!(loaded.dataset.records, ds.records);
        assert_eq!(loaded.dataset.width, 4);
    }

    fn write(text: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        std::fs::File::create(&path).unwrap().write_all(text.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn three_rows_and_a_rejection() {
        let header = "id,f_0,f_1,amount,installment,term,rate,lifetime,default\n";
        let rows = "a,0.1,2,1200,100,12,0,12,0\nb,-1,0,1200,100,12,0,3,1\nc,5,5,1200,100,12,0,0,1\n";
        let (_d, p) = write(&format!("{header}{rows}"));
        let loaded = load_csv(&p).unwrap();
        assert_eq!(loaded.dataset.len(), 3);

        let (_d, p) = write(&format!("{header}{rows}d,0,0,1200,100,12,0,12,1\n"));
        let loaded = load_csv(&p).unwrap();
        assert_eq!(loaded.dataset.len(), 3);
        assert_eq!(loaded.rejected.len(), 1);
        assert_eq!(loaded.rejected[0].row, 4);
    }

    #[test]
    fn schema_errors() {
        let (_d, p) = write("id,f_0,amount,installment,term,rate,lifetime\nx,1,1,1,1,0,1\n");
        assert!(matches!(load_csv(&p), Err(Error::Row { row: 0, .. })));
        let (_d, p) = write("id,f_0,amount,installment,term,rate,lifetime,default\nx,abc,1,1,1,0,1,0\n");
        let err = load_csv(&p).unwrap_err();
        assert!(matches!(err, Error::Row { row: 1, .. }), "{err}");
    }

    #[test]
    fn split_sizes_for_the_reference_book() {
        let n = 244_720;
        let ratios = [164_720.0 / n as f64, 40_000.0 / n as f64, 40_000.0 / n as f64];
        assert_eq!(split_sizes(n, ratios).unwrap(), [164_720, 40_000, 40_000]);
        assert!(split_sizes(10, [0.5, 0.5, 0.0]).is_err());
    }

    #[test]
    fn preprocess_standardizes_on_train_only() {
        let ds = small();
        let a = preprocess(&ds, [0.6, 0.2, 0.2], 9).unwrap();
        let b = preprocess(&ds, [0.6, 0.2, 0.2], 9).unwrap();
        assert_eq!(a.splits, b.splits);
        let train = a.subset(Split::Train);
        assert_eq!(train.len(), 300);
        for j in 0..a.width {
            let vals: Vec<f64> = train.iter().map(|r| r.features[j]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
        assert!(preprocess(&Dataset::new(vec![], 2).unwrap(), [0.6, 0.2, 0.2], 1).is_err());
    }

    #[test]
    fn zero_variance_feature_maps_to_zero() {
        let norm = Normalization::fit([[1.0, 3.0], [2.0, 3.0]].iter().map(|r| r.as_slice()), 2);
        let mut x = [7.0, 3.0];
        norm.apply(&mut x);
        assert_eq!(x[1], 0.0);
    }

    #[test]
    fn truth_sidecar_round_trip() {
        let t = small().truth.unwrap();
        assert_eq!(SyntheticTruth::from_kv(&KvFile::parse(&t.to_kv().render()).unwrap()).unwrap(), t);
    }
}
