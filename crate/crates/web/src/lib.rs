//! Browser demo. Each operation has a plain Rust entry point returning a
//! serializable struct and a `#[wasm_bindgen]` wrapper that hands JSON to
//! the page.

use loanvar::denn::BinaryReturnDistribution;
use loanvar::loan_math::{default_return, LoanTerms};
use loanvar::risk_opt::{minimize_risk, objective, OptConfig, RiskSpec};
use loanvar::simulation::{simulate, ReturnDistribution};
use loanvar::survival::{self, lifetime_distribution, snn_default_rate, WeibullParams};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, Serialize)]
pub struct LifetimeCurve {
    /// Probability of defaulting after `i` installments.
    pub default_probs: Vec<f64>,
    /// `S(t)` for `t = 0..=term`.
    pub survival: Vec<f64>,
    pub default_rate: f64,
}

pub fn lifetime_curve(lambda: f64, rho: f64, g: f64, term: u32) -> Result<LifetimeCurve, String> {
    let params = WeibullParams::new(lambda, rho).map_err(|e| e.to_string())?;
    let dist = lifetime_distribution(params, g, term).map_err(|e| e.to_string())?;
    let survival = (0..=term)
        .map(|t| survival::survival(t as f64, params, g))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Ok(LifetimeCurve {
        default_probs: dist.default_probs,
        survival,
        default_rate: snn_default_rate(params, g, term).map_err(|e| e.to_string())?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LoanDistribution {
    pub installment: f64,
    /// Monthly return for each number of installments paid, then full
    /// repayment.
    pub support: Vec<f64>,
    pub masses: Vec<f64>,
    pub mean: f64,
    /// Loss not exceeded with probability `alpha`, in monthly units.
    pub var: f64,
}

/// Return distribution of one loan whose default lifetime follows the
/// Weibull model.
pub fn loan_distribution(
    amount: f64,
    rate: f64,
    term: u32,
    lambda: f64,
    rho: f64,
    g: f64,
    alpha: f64,
) -> Result<LoanDistribution, String> {
    let terms = LoanTerms::from_rate(amount, term, rate).map_err(|e| e.to_string())?;
    let params = WeibullParams::new(lambda, rho).map_err(|e| e.to_string())?;
    let dist = lifetime_distribution(params, g, term).map_err(|e| e.to_string())?;
    let mut support = (0..term)
        .map(|i| default_return(&terms, i))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    support.push(rate);
    let mut masses = dist.default_probs;
    masses.push(dist.survival);
    let mean = support.iter().zip(&masses).map(|(r, p)| r * p).sum();
    Ok(LoanDistribution {
        installment: terms.installment,
        var: discrete_var(&support, &masses, alpha)?,
        support,
        masses,
        mean,
    })
}

/// Negative of the smallest return whose cumulative mass exceeds `1 - alpha`.
fn discrete_var(support: &[f64], masses: &[f64], alpha: f64) -> Result<f64, String> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(format!("confidence {alpha} must lie in (0, 1)"));
    }
    let mut points: Vec<(f64, f64)> = support.iter().copied().zip(masses.iter().copied()).collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut acc = 0.0;
    for (r, p) in &points {
        acc += p;
        if acc > 1.0 - alpha {
            return Ok(-r);
        }
    }
    Ok(-points.last().map_or(0.0, |p| p.0))
}

#[derive(Debug, Clone, Copy)]
pub struct BinaryLoan {
    pub promised: f64,
    pub default_return: f64,
    pub default_probability: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightSweep {
    /// Weight on the first loan.
    pub weights: Vec<f64>,
    pub risk: Vec<f64>,
    pub optimum_weight: f64,
    pub optimum_risk: f64,
}

/// Risk of a two-loan portfolio over a weight grid, and the optimizer's
/// answer on the same scenarios.
pub fn weight_sweep(
    a: BinaryLoan,
    b: BinaryLoan,
    scenarios: usize,
    objective_name: &str,
    seed: u64,
    grid: usize,
) -> Result<WeightSweep, String> {
    let spec: RiskSpec = objective_name.parse().map_err(|e: loanvar::Error| e.to_string())?;
    let dists: Vec<ReturnDistribution> = [a, b]
        .iter()
        .map(|l| {
            BinaryReturnDistribution {
                promised: l.promised,
                default_return: l.default_return,
                default_probability: l.default_probability,
            }
            .into()
        })
        .collect();
    let m = simulate(&dists, scenarios, seed).map_err(|e| e.to_string())?;
    let grid = grid.max(1);
    let weights: Vec<f64> = (0..=grid).map(|i| i as f64 / grid as f64).collect();
    let risk = weights
        .iter()
        .map(|&w| objective(&[w, 1.0 - w], &m, spec))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let sol = minimize_risk(&m, spec, &OptConfig { seed, ..OptConfig::default() }).map_err(|e| e.to_string())?;
    Ok(WeightSweep {
        weights,
        risk,
        optimum_weight: sol.weights.0[0],
        optimum_risk: sol.objective,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = lifetimeCurve)]
pub fn lifetime_curve_js(lambda: f64, rho: f64, g: f64, term: u32) -> Result<String, JsValue> {
    to_js(lifetime_curve(lambda, rho, g, term))
}

#[wasm_bindgen(js_name = loanDistribution)]
pub fn loan_distribution_js(
    amount: f64,
    rate: f64,
    term: u32,
    lambda: f64,
    rho: f64,
    g: f64,
    alpha: f64,
) -> Result<String, JsValue> {
    to_js(loan_distribution(amount, rate, term, lambda, rho, g, alpha))
}

#[wasm_bindgen(js_name = weightSweep)]
#[allow(clippy::too_many_arguments)]
pub fn weight_sweep_js(
    p1: f64,
    rd1: f64,
    r1: f64,
    p2: f64,
    rd2: f64,
    r2: f64,
    scenarios: usize,
    objective_name: &str,
    seed: u32,
) -> Result<String, JsValue> {
    let a = BinaryLoan {
        promised: r1,
        default_return: rd1,
        default_probability: p1,
    };
    let b = BinaryLoan {
        promised: r2,
        default_return: rd2,
        default_probability: p2,
    };
    to_js(weight_sweep(a, b, scenarios, objective_name, seed as u64, 100))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_is_consistent() {
        let c = lifetime_curve(0.02, 1.3, 0.0, 36).unwrap();
        assert_eq!(c.survival.len(), 37);
        assert_eq!(c.survival[0], 1.0);
        let total: f64 = c.default_probs.iter().sum::<f64>() + c.survival[35];
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(c.default_rate, 1.0 - c.survival[35]);
        assert!(lifetime_curve(-1.0, 1.0, 0.0, 36).is_err());
    }

    #[test]
    fn distribution_and_var() {
        let d = loan_distribution(10_000.0, 0.01, 36, 0.02, 1.3, 0.0, 0.95).unwrap();
        assert_eq!(d.support[0], -1.0);
        assert_eq!(*d.support.last().unwrap(), 0.01);
        assert!((d.masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(d.var > -0.01 && d.mean < 0.01);
        // A near-riskless loan has VaR equal to minus its promised rate.
        let safe = loan_distribution(10_000.0, 0.01, 36, 1e-4, 1.0, -5.0, 0.95).unwrap();
        assert_eq!(safe.var, -0.01);
    }

    #[test]
    fn sweep_optimum_matches_grid() {
        let a = BinaryLoan {
            promised: 0.012,
            default_return: -0.6,
            default_probability: 0.08,
        };
        let b = BinaryLoan {
            promised: 0.02,
            default_return: -0.3,
            default_probability: 0.12,
        };
        let s = weight_sweep(a, b, 2000, "var95", 1, 100).unwrap();
        assert_eq!(s.weights.len(), 101);
        let grid_best = s.risk.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(s.optimum_risk <= grid_best + 1e-12);
        assert!((0.0..=1.0).contains(&s.optimum_weight));
        assert!(weight_sweep(a, b, 100, "var42x", 1, 10).is_err());
    }
}
