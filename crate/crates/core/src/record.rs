//! Line-oriented text records used for model serialization.
//!
//! Floats are written with `Display`, which prints the shortest decimal that
//! parses back to the same bits.

use std::fmt::Display;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{LfdError, Result};

pub(crate) fn write_line<W: Write>(w: &mut W, key: &str, value: impl Display) -> Result<()> {
    writeln!(w, "{key} {value}")?;
    Ok(())
}

pub(crate) fn write_floats<W: Write>(w: &mut W, key: &str, values: &[f64]) -> Result<()> {
    write!(w, "{key} {}", values.len())?;
    for v in values {
        write!(w, " {v}")?;
    }
    writeln!(w)?;
    Ok(())
}

pub(crate) struct RecordReader<R> {
    inner: R,
    line: String,
}

impl<R: BufRead> RecordReader<R> {
    pub(crate) fn new(inner: R) -> Self {
        Self {
            inner,
            line: String::new(),
        }
    }

    fn next_line(&mut self) -> Result<&str> {
        self.line.clear();
        if self.inner.read_line(&mut self.line)? == 0 {
            return Err(LfdError::Parse("unexpected end of record".into()));
        }
        Ok(self.line.trim_end())
    }

    pub(crate) fn expect_header(&mut self, magic: &str, version: u32) -> Result<()> {
        let expected = format!("{magic} v{version}");
        let line = self.next_line()?;
        if line != expected {
            return Err(LfdError::Parse(format!("expected header `{expected}`, found `{line}`")));
        }
        Ok(())
    }

    /// Read a `key value...` line and return the value part.
    pub(crate) fn field(&mut self, key: &str) -> Result<String> {
        let line = self.next_line()?;
        match line.split_once(' ') {
            Some((k, rest)) if k == key => Ok(rest.to_string()),
            _ if line == key => Ok(String::new()),
            _ => Err(LfdError::Parse(format!("expected field `{key}`, found `{line}`"))),
        }
    }

    pub(crate) fn parse<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let raw = self.field(key)?;
        raw.trim()
            .parse()
            .map_err(|_| LfdError::Parse(format!("bad value for `{key}`: `{raw}`")))
    }

    pub(crate) fn floats(&mut self, key: &str) -> Result<Vec<f64>> {
        let raw = self.field(key)?;
        let mut parts = raw.split_ascii_whitespace();
        let n: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| LfdError::Parse(format!("missing length for `{key}`")))?;
        let values = parts
            .map(|s| s.parse::<f64>().map_err(|_| LfdError::Parse(format!("bad float `{s}` in `{key}`"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != n {
            return Err(LfdError::Parse(format!(
                "`{key}` declares {n} values but has {}",
                values.len()
            )));
        }
        Ok(values)
    }
}
