//! Line-oriented text format.
//!
//! ```text
//! # d = 2
//! 1 -1 | 1 1 | 5e-7 0e0
//! -1 1 | 1 1 | 5e-7 0e0
//! ```
//!
//! One term per line: the Fourier mode, the Taylor multi-index and the real
//! and imaginary parts, separated by `|`. Lines starting with `#` are
//! comments; a `# d = N` comment fixes the dimension of an empty series.
//! Coefficients are printed in shortest round-trip exponent form, so parsing
//! what was written reproduces every coefficient bit for bit.

use std::io::Write;

use num_complex::Complex;

use super::FourierTaylorSeries;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub fn write_series<T: Real, W: Write>(series: &FourierTaylorSeries<T>, mut out: W) -> Result<()> {
    writeln!(out, "# d = {}", series.dim())?;
    for (md, c) in series.iter() {
        let ks: Vec<String> = md.k.iter().map(i32::to_string).collect();
        let ms: Vec<String> = md.m.iter().map(u32::to_string).collect();
        writeln!(out, "{} | {} | {:e} {:e}", ks.join(" "), ms.join(" "), c.re, c.im)?;
    }
    Ok(())
}

impl<T: Real> FourierTaylorSeries<T> {
    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        write_series(self, &mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

fn parse_fields<F: std::str::FromStr>(field: &str, line: usize, what: &str) -> Result<Vec<F>> {
    field
        .split_whitespace()
        .map(|tok| {
            tok.parse::<F>().map_err(|_| Error::Parse {
                line,
                message: format!("bad {what} entry {tok:?}"),
            })
        })
        .collect()
}

pub fn parse_series<T: Real>(text: &str) -> Result<FourierTaylorSeries<T>> {
    let mut dim: Option<usize> = None;
    let mut terms = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(value) = comment.trim().strip_prefix("d =") {
                if let Ok(d) = value.trim().parse::<usize>() {
                    dim.get_or_insert(d);
                }
            }
            continue;
        }
        let parts: Vec<&str> = trimmed.split('|').collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                line,
                message: "expected `k.. | m.. | re im`".into(),
            });
        }
        let k: Vec<i32> = parse_fields(parts[0], line, "mode")?;
        let m: Vec<u32> = parse_fields(parts[1], line, "multi-index")?;
        let c: Vec<T> = parse_fields(parts[2], line, "coefficient")?;
        if c.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 coefficient fields, found {}", c.len()),
            });
        }
        let d = *dim.get_or_insert(k.len());
        if k.len() != d || m.len() != d {
            return Err(Error::Parse {
                line,
                message: format!(
                    "dimension mismatch: expected {d}, found |k| = {}, |m| = {}",
                    k.len(),
                    m.len()
                ),
            });
        }
        terms.push((k, m, Complex::new(c[0], c[1])));
    }
    let dim = dim.ok_or_else(|| Error::Parse {
        line: 0,
        message: "empty series without a `# d = N` header".into(),
    })?;
    FourierTaylorSeries::from_terms(dim, terms)
}
