//! Plain-text parameter files.
//!
//! ```text
//! loanvar-network 1
//! sizes 16 128 64 32 1
//! activations tanh tanh tanh sigmoid
//! l2 0.0001
//! seed 7
//! layer 0
//! w <fan_in rows of fan_out values>
//! b <fan_out values>
//! ...
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::{Activation, Layer, Network, NetworkSpec};
use crate::error::{Error, Result};

const MAGIC: &str = "loanvar-network";
const VERSION: u32 = 1;

pub fn write_network(net: &Network, mut out: impl Write) -> Result<()> {
    let mut s = String::new();
    let join = |v: &mut String, items: &mut dyn Iterator<Item = String>| {
        let parts: Vec<String> = items.collect();
        v.push_str(&parts.join(" "));
        v.push('\n');
    };
    writeln!(s, "{MAGIC} {VERSION}").unwrap();
    s.push_str("sizes ");
    join(&mut s, &mut net.spec.layer_sizes.iter().map(|v| v.to_string()));
    s.push_str("activations ");
    join(&mut s, &mut net.spec.activations.iter().map(|a| a.to_string()));
    writeln!(s, "l2 {}", net.spec.l2_coefficient).unwrap();
    writeln!(s, "seed {}", net.spec.seed).unwrap();
    for (i, layer) in net.layers.iter().enumerate() {
        writeln!(s, "layer {i}").unwrap();
        for row in layer.weights.chunks(layer.fan_out) {
            s.push_str("w ");
            join(&mut s, &mut row.iter().map(|v| v.to_string()));
        }
        s.push_str("b ");
        join(&mut s, &mut layer.biases.iter().map(|v| v.to_string()));
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

fn parse_f64(tok: &str) -> Result<f64> {
    tok.parse()
        .map_err(|_| Error::Format(format!("bad number `{tok}`")))
}

pub fn read_network(input: impl BufRead) -> Result<Network> {
    let mut lines = input.lines();
    let mut next = |what: &str| -> Result<String> {
        lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::Format(format!("unexpected end of file, expected {what}")))
    };
    let header = next("header")?;
    let mut h = header.split_whitespace();
    if h.next() != Some(MAGIC) {
        return Err(Error::Format("not a network file".into()));
    }
    let version: u32 = h
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format("missing version".into()))?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }

    let field = |line: String, key: &str| -> Result<Vec<String>> {
        let mut parts = line.split_whitespace().map(str::to_owned);
        if parts.next().as_deref() != Some(key) {
            return Err(Error::Format(format!("expected `{key}` line, got `{line}`")));
        }
        Ok(parts.collect())
    };
    let layer_sizes = field(next("sizes")?, "sizes")?
        .iter()
        .map(|v| v.parse().map_err(|_| Error::Format(format!("bad size `{v}`"))))
        .collect::<Result<Vec<usize>>>()?;
    let activations = field(next("activations")?, "activations")?
        .iter()
        .map(|v| v.parse::<Activation>())
        .collect::<Result<Vec<_>>>()?;
    let l2 = field(next("l2")?, "l2")?;
    let seed = field(next("seed")?, "seed")?;
    let spec = NetworkSpec {
        layer_sizes,
        activations,
        l2_coefficient: parse_f64(l2.first().map(String::as_str).unwrap_or(""))?,
        seed: seed
            .first()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format("bad seed".into()))?,
    };
    spec.validate()?;

    let mut layers = Vec::new();
    for (i, (pair, &activation)) in spec.layer_sizes.windows(2).zip(&spec.activations).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let tag = field(next("layer")?, "layer")?;
        if tag.first().map(String::as_str) != Some(i.to_string().as_str()) {
            return Err(Error::Format(format!("expected layer {i}")));
        }
        let mut weights = Vec::with_capacity(fan_in * fan_out);
        for _ in 0..fan_in {
            let row = field(next("weights")?, "w")?;
            if row.len() != fan_out {
                return Err(Error::Format(format!("layer {i}: weight row has {} values", row.len())));
            }
            for v in &row {
                weights.push(parse_f64(v)?);
            }
        }
        let biases = field(next("biases")?, "b")?
            .iter()
            .map(|v| parse_f64(v))
            .collect::<Result<Vec<_>>>()?;
        if biases.len() != fan_out {
            return Err(Error::Format(format!("layer {i}: {} biases", biases.len())));
        }
        layers.push(Layer {
            fan_in,
            fan_out,
            weights,
            biases,
            activation,
        });
    }
    let net = Network { spec, layers };
    if !net.is_finite() {
        return Err(Error::Format("non-finite parameter".into()));
    }
    Ok(net)
}
