//! Line-oriented `key = value` text shared by the run config and scene specs.
//! `#` starts a comment; blank lines are ignored; keys may repeat.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", i + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        out.push(Entry {
            key: key.to_string(),
            value: value.trim().trim_matches('"').to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

impl Entry {
    pub fn parse<T: std::str::FromStr>(&self) -> Result<T> {
        self.value.parse().map_err(|_| {
            Error::Config(format!(
                "line {}: cannot parse {} = {:?}",
                self.line, self.key, self.value
            ))
        })
    }

    /// Whitespace-separated list of numbers.
    pub fn parse_floats(&self) -> Result<Vec<f64>> {
        self.value
            .split_whitespace()
            .map(|t| {
                t.parse().map_err(|_| {
                    Error::Config(format!("line {}: {} has non-numeric {t:?}", self.line, self.key))
                })
            })
            .collect()
    }

    pub fn parse_bool(&self) -> Result<bool> {
        match self.value.to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            _ => Err(Error::Config(format!(
                "line {}: {} expects a boolean, got {:?}",
                self.line, self.key, self.value
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_repeats() {
        let e = parse("# header\na = 1\n\nplane = 0 0 1 2 # trailing\nplane=1 0 0 3\n").unwrap();
        assert_eq!(e.len(), 3);
        assert_eq!(e[0].parse::<i32>().unwrap(), 1);
        assert_eq!(e[1].parse_floats().unwrap(), vec![0.0, 0.0, 1.0, 2.0]);
        assert_eq!(e[2].line, 5);
    }

    #[test]
    fn rejects_missing_equals() {
        assert!(parse("lambda1 1.0").is_err());
        assert!(parse("= 3").is_err());
    }
}
