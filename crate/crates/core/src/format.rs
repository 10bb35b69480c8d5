//! Shared helpers for the line-oriented text headers of the artifact files.

use std::io::BufRead;
use std::str::FromStr;

use crate::error::{Error, Result};

pub fn fmt_f64s(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ")
}

pub fn fmt_i64s(v: &[i64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Formats with 12 significant digits in plain decimal notation.
pub fn fmt_sig12(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (11 - mag).max(0) as usize;
    let s = format!("{v:.decimals$}");
    // rounding may have carried into a new digit (9.99.. -> 10.0..)
    let digits = s.chars().filter(|c| c.is_ascii_digit()).collect::<String>();
    let significant = digits.trim_start_matches('0').len();
    if significant > 12 && decimals > 0 {
        let d = decimals - 1;
        format!("{v:.d$}")
    } else {
        s
    }
}

pub struct Field {
    pub name: String,
    pub rest: String,
}

impl Field {
    pub fn parse_one<T: FromStr>(&self) -> Result<T> {
        self.rest
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad value {:?} for {}", self.rest, self.name)))
    }

    pub fn parse_all<T: FromStr>(&self) -> Result<Vec<T>> {
        self.rest
            .split_ascii_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Format(format!("bad value {t:?} for {}", self.name))))
            .collect()
    }
}

pub struct HeaderReader<R> {
    inner: R,
}

impl<R: BufRead> HeaderReader<R> {
    pub fn new(inner: R) -> Self {
        HeaderReader { inner }
    }

    pub fn line(&mut self) -> Result<String> {
        let mut buf = String::new();
        if self.inner.read_line(&mut buf)? == 0 {
            return Err(Error::Format("unexpected end of file".into()));
        }
        if buf.ends_with('\n') {
            buf.pop();
        }
        Ok(buf)
    }

    pub fn expect_magic(&mut self, magic: &str) -> Result<()> {
        let line = self.line()?;
        if line != magic {
            return Err(Error::Format(format!("expected magic {magic:?}, found {line:?}")));
        }
        Ok(())
    }

    pub fn field(&mut self, name: &str) -> Result<Field> {
        let line = self.line()?;
        let (head, rest) = line.split_once(' ').unwrap_or((line.as_str(), ""));
        if head != name {
            return Err(Error::Format(format!("expected field {name:?}, found {line:?}")));
        }
        Ok(Field { name: name.to_string(), rest: rest.to_string() })
    }

    pub fn into_inner(self) -> R {
        self.inner
    }
}
