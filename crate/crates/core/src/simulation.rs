//! Monte-Carlo scenario matrices.
//!
//! Row `i` of a scenario matrix holds `k` independent draws of loan `i`'s
//! monthly return; column `j` is one joint scenario. Loans are drawn
//! independently of each other.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denn::BinaryReturnDistribution;
use crate::error::{Error, Result};
use crate::rng::counter_uniform;
use crate::survival::CategoricalReturnDistribution;

const MASS_TOL: f64 = 1e-9;

/// Predicted distribution of one loan's monthly return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ReturnDistribution {
    Binary(BinaryReturnDistribution),
    Categorical(CategoricalReturnDistribution),
}

impl From<BinaryReturnDistribution> for ReturnDistribution {
    fn from(d: BinaryReturnDistribution) -> Self {
        ReturnDistribution::Binary(d)
    }
}

impl From<CategoricalReturnDistribution> for ReturnDistribution {
    fn from(d: CategoricalReturnDistribution) -> Self {
        ReturnDistribution::Categorical(d)
    }
}

impl ReturnDistribution {
    /// Support points and their masses, in support order.
    pub fn points(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            ReturnDistribution::Binary(b) => (
                vec![b.default_return, b.promised],
                vec![b.default_probability, 1.0 - b.default_probability],
            ),
            ReturnDistribution::Categorical(c) => (c.support().collect(), c.masses().collect()),
        }
    }

    pub fn mean(&self) -> f64 {
        let (s, m) = self.points();
        s.iter().zip(&m).map(|(a, b)| a * b).sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        let (s, m) = self.points();
        s.iter().zip(&m).map(|(a, b)| b * (a - mu) * (a - mu)).sum()
    }

    fn sampler(&self) -> Result<Sampler> {
        let (support, masses) = self.points();
        if let Some(m) = masses.iter().find(|m| !(**m >= -MASS_TOL && m.is_finite())) {
            return Err(Error::Distribution(format!("mass {m} out of range")));
        }
        if let Some(r) = support.iter().find(|r| !(**r >= -1.0 && r.is_finite())) {
            return Err(Error::Distribution(format!("support point {r} below -1")));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::Distribution(format!("masses sum to {total}")));
        }
        let mut acc = 0.0;
        let cdf = masses
            .iter()
            .map(|m| {
                acc += m.max(0.0);
                acc
            })
            .collect();
        Ok(Sampler { support, cdf })
    }
}

struct Sampler {
    support: Vec<f64>,
    cdf: Vec<f64>,
}

impl Sampler {
    /// Inverse CDF at `u` in `[0, 1)`.
    #[inline]
    fn draw(&self, u: f64) -> f64 {
        let idx = self.cdf.partition_point(|&c| c <= u);
        self.support[idx.min(self.support.len() - 1)]
    }
}

/// `n x k` simulated monthly returns, row-major by loan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMatrix {
    pub returns: Vec<f64>,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
}

impl ScenarioMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Distribution("ragged scenario rows".into()));
        }
        Ok(Self {
            returns: rows.into_iter().flatten().collect(),
            n,
            k,
            seed,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.returns[i * self.k..(i + 1) * self.k]
    }

    /// Plain-text dump: one line per loan, one column per scenario.
    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for i in 0..self.n {
            let line: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Draw `k` scenarios. Cell `(i, j)` uses its own counter-based uniform, so
/// the matrix does not depend on fill order.
pub fn simulate(dists: &[ReturnDistribution], k: usize, seed: u64) -> Result<ScenarioMatrix> {
    if k == 0 {
        return Err(Error::Distribution("scenario count must be positive".into()));
    }
    let samplers = dists.iter().map(ReturnDistribution::sampler).collect::<Result<Vec<_>>>()?;
    let mut returns = Vec::with_capacity(dists.len() * k);
    for (i, s) in samplers.iter().enumerate() {
        returns.extend((0..k).map(|j| s.draw(counter_uniform(seed, i as u64, j as u64))));
    }
    Ok(ScenarioMatrix {
        returns,
        n: dists.len(),
        k,
        seed,
    })
}

/// Capital weights on the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        let v = Self(w);
        v.validate()?;
        Ok(v)
    }

    pub fn equal(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::domain("empty weight vector"));
        }
        if let Some(w) = self.0.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::domain(format!("weight {w} outside [0, 1]")));
        }
        let sum: f64 = self.0.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("weights sum to {sum}")));
        }
        Ok(())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `r_p[j] = sum_i w_i R[i, j]`.
pub fn portfolio_returns(w: &[f64], m: &ScenarioMatrix) -> Result<Vec<f64>> {
    if w.len() != m.n {
        return Err(Error::Dimension {
            expected: m.n,
            got: w.len(),
        });
    }
    let mut out = vec![0.0; m.k];
    for (i, &wi) in w.iter().enumerate() {
        if wi == 0.0 {
            continue;
        }
        for (o, r) in out.iter_mut().zip(m.row(i)) {
            *o += wi * r;
        }
    }
    Ok(out)
}
