//! Loan-return arithmetic.
//!
//! A loan of amount `M` repaid by `L` equal monthly installments `C` has a
//! monthly internal rate of return `r` solving `M = sum_{t=1..n} C / (1+r)^t`,
//! where `n` is the number of installments actually paid. Rates are monthly
//! everywhere; only reporting annualizes them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowest admissible rate inside the root search.
const RATE_FLOOR: f64 = -1.0 + 1e-12;
const BRACKET_WIDTH: f64 = 1e-12;

/// Contractual terms of a loan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoanTerms {
    /// Loan amount.
    pub amount: f64,
    /// Monthly installment.
    pub installment: f64,
    /// Term in months.
    pub term: u32,
    /// Promised monthly return, i.e. the rate that reproduces `amount` when
    /// every installment is paid.
    pub rate: f64,
}

impl LoanTerms {
    pub fn new(amount: f64, installment: f64, term: u32, rate: f64) -> Result<Self> {
        let terms = Self {
            amount,
            installment,
            term,
            rate,
        };
        terms.validate()?;
        Ok(terms)
    }

    /// Terms whose installment follows from the annuity relation, so they are
    /// self-consistent by construction.
    pub fn from_rate(amount: f64, term: u32, rate: f64) -> Result<Self> {
        if term == 0 {
            return Err(Error::domain("loan term must be at least one month"));
        }
        let installment = annuity_installment(amount, term, rate);
        Self::new(amount, installment, term, rate)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.amount.is_finite() && self.installment.is_finite() && self.rate.is_finite();
        if !finite {
            return Err(Error::domain("non-finite loan terms"));
        }
        if self.amount <= 0.0 || self.installment <= 0.0 {
            return Err(Error::domain(format!(
                "amount and installment must be positive (got {}, {})",
                self.amount, self.installment
            )));
        }
        if self.term == 0 {
            return Err(Error::domain("loan term must be at least one month"));
        }
        if self.rate <= -1.0 {
            return Err(Error::domain(format!("promised rate {} is not above -1", self.rate)));
        }
        Ok(())
    }

    /// Relative gap between `amount` and the present value of the full
    /// installment schedule at the promised rate.
    pub fn consistency_gap(&self) -> f64 {
        (present_value(self.installment, self.term, self.rate) - self.amount).abs() / self.amount
    }

    pub fn is_self_consistent(&self) -> bool {
        self.consistency_gap() < 1e-6
    }
}

/// Installment that amortizes `amount` over `term` months at monthly `rate`.
pub fn annuity_installment(amount: f64, term: u32, rate: f64) -> f64 {
    if rate.abs() < 1e-14 {
        amount / term as f64
    } else {
        amount * rate / (1.0 - (1.0 + rate).powi(-(term as i32)))
    }
}

/// Present value of `payments` installments of `installment` at monthly `rate`.
pub fn present_value(installment: f64, payments: u32, rate: f64) -> f64 {
    let discount = 1.0 / (1.0 + rate);
    let mut factor = 1.0;
    let mut pv = 0.0;
    for _ in 0..payments {
        factor *= discount;
        pv += installment * factor;
    }
    pv
}

/// Monthly return of a loan that stops paying after `paid` installments.
///
/// Returns exactly `-1.0` when nothing was paid.
pub fn default_return(terms: &LoanTerms, paid: u32) -> Result<f64> {
    terms.validate()?;
    if paid > terms.term {
        return Err(Error::domain(format!(
            "default lifetime {paid} exceeds term {}",
            terms.term
        )));
    }
    if paid == 0 {
        return Ok(-1.0);
    }
    let excess = |r: f64| present_value(terms.installment, paid, r) - terms.amount;

    // The present value is strictly decreasing in r, so a sign change brackets
    // the unique root.
    let mut lo = RATE_FLOOR;
    let mut hi = 1.0;
    while excess(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::domain("rate bracket did not close"));
        }
    }
    if excess(lo) < 0.0 {
        // Even a near-total loss rate discounts below the amount; the
        // numerical root sits at the floor.
        return Ok(lo);
    }
    while hi - lo > BRACKET_WIDTH {
        let mid = 0.5 * (lo + hi);
        let f = excess(mid);
        if f == 0.0 {
            return Ok(mid);
        }
        if f > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Realized monthly return given the loan's outcome.
pub fn realized_return(terms: &LoanTerms, defaulted: bool, paid: u32) -> Result<f64> {
    if !defaulted {
        return Ok(terms.rate);
    }
    if paid >= terms.term {
        return Err(Error::Inconsistent(format!(
            "defaulted loan reports {paid} payments on a {}-month term",
            terms.term
        )));
    }
    default_return(terms, paid)
}

/// Annualized loss for a monthly return: `-12 r`.
pub fn annualized_loss(monthly_return: f64) -> f64 {
    -12.0 * monthly_return
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn terms(amount: f64, installment: f64, term: u32) -> LoanTerms {
        LoanTerms::new(amount, installment, term, 0.01).unwrap()
    }

    /// Independent oracle: plain bisection on the same equation over a fixed
    /// bracket, written without the helpers above.
    fn oracle(m: f64, c: f64, n: u32) -> f64 {
        let f = |r: f64| (1..=n).map(|t| c / (1.0 + r).powi(t as i32)).sum::<f64>() - m;
        let (mut lo, mut hi) = (-1.0 + 1e-12, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn zero_payments_is_total_loss() {
        assert_eq!(default_return(&terms(1000.0, 40.0, 36), 0).unwrap(), -1.0);
    }

    #[test]
    fn undiscounted_schedule_gives_zero_rate() {
        let r = default_return(&terms(1200.0, 100.0, 12), 12).unwrap();
        assert_abs_diff_eq!(r, 0.0, epsilon = 1e-11);
    }

    #[test]
    fn partial_payment_matches_oracle() {
        let t = terms(1000.0, 100.0, 36);
        let r = default_return(&t, 6).unwrap();
        assert!(r < 0.0);
        let residual = (present_value(100.0, 6, r) - 1000.0).abs() / 1000.0;
        assert!(residual < 1e-10, "residual {residual}");
        assert_abs_diff_eq!(r, oracle(1000.0, 100.0, 6), epsilon = 1e-10);
    }

    #[test]
    fn out_of_range_lifetime_is_rejected() {
        assert!(default_return(&terms(1000.0, 40.0, 36), 37).is_err());
        let bad = LoanTerms {
            amount: f64::NAN,
            installment: 1.0,
            term: 3,
            rate: 0.0,
        };
        assert!(default_return(&bad, 1).is_err());
    }

    #[test]
    fn realized_return_cases() {
        let t = LoanTerms::from_rate(1000.0, 36, 0.01).unwrap();
        assert_eq!(realized_return(&t, false, 36).unwrap(), 0.01);
        assert_eq!(realized_return(&t, true, 0).unwrap(), -1.0);
        assert!(matches!(realized_return(&t, true, 36), Err(Error::Inconsistent(_))));

        let flat = LoanTerms::new(1200.0, 100.0, 36, 0.02).unwrap();
        assert_abs_diff_eq!(realized_return(&flat, true, 12).unwrap(), 0.0, epsilon = 1e-11);
    }

    #[test]
    fn annualization() {
        assert_eq!(annualized_loss(0.0), 0.0);
        assert_abs_diff_eq!(annualized_loss(0.01), -0.12, epsilon = 1e-15);
        assert_abs_diff_eq!(annualized_loss(-0.0313), 0.3756, epsilon = 1e-12);
    }

    #[test]
    fn full_term_reproduces_promised_rate() {
        let t = LoanTerms::from_rate(5000.0, 36, 0.0125).unwrap();
        assert!(t.is_self_consistent());
        assert_abs_diff_eq!(default_return(&t, 36).unwrap(), 0.0125, epsilon = 1e-10);
    }

    #[test]
    fn monotone_and_bounded_by_promised_rate() {
        let t = LoanTerms::from_rate(10_000.0, 36, 0.015).unwrap();
        let mut prev = -1.0;
        for paid in 1..36 {
            let r = default_return(&t, paid).unwrap();
            assert!(r > prev);
            assert!(r <= t.rate);
            prev = r;
        }
    }
}
