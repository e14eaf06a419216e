use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed-width bins over `[min, max)`, plus under- and overflow counts.
/// A value equal to `max` falls in the last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub min: f64,
    pub max: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.underflow + self.overflow + self.counts.iter().sum::<u64>()
    }

    /// Lower edge of bin `i`.
    pub fn edge(&self, i: usize) -> f64 {
        if i == self.counts.len() {
            self.max
        } else {
            self.min + i as f64 * self.bin_width
        }
    }

    /// `lower,upper,count` rows, bracketed by the underflow and overflow rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lower,upper,count\n");
        let _ = writeln!(s, "-inf,{:.6},{}", self.min, self.underflow);
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{:.6},{:.6},{}", self.edge(i), self.edge(i + 1), c);
        }
        let _ = writeln!(s, "{:.6},inf,{}", self.max, self.overflow);
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

pub fn emit_histogram(returns: &[f64], bin_width: f64, range: (f64, f64)) -> Result<Histogram> {
    let (min, max) = range;
    if returns.is_empty() {
        return Err(Error::domain("empty sample"));
    }
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::Config(format!("bin width {bin_width} must be positive")));
    }
    if !(min.is_finite() && max.is_finite() && max > min) {
        return Err(Error::Config(format!("invalid histogram range [{min}, {max}]")));
    }
    let bins = (((max - min) / bin_width) - 1e-9).ceil().max(1.0) as usize;
    let mut h = Histogram {
        min,
        max,
        bin_width,
        counts: vec![0; bins],
        underflow: 0,
        overflow: 0,
    };
    for &r in returns {
        if r.is_nan() || r > max {
            h.overflow += 1;
        } else if r < min {
            h.underflow += 1;
        } else {
            let i = ((r - min) / bin_width).floor() as usize;
            h.counts[i.min(bins - 1)] += 1;
        }
    }
    Ok(h)
}
