//! Line-oriented `key=value` text used by metadata, manifests and configs.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{CkmError, Result};

/// Ordered `key=value` document. Blank lines and `#` comments are skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDoc {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CkmError::Metadata {
                line: i + 1,
                message: format!("expected key=value, got `{line}`"),
            })?;
            entries.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
        }
        Ok(Self { entries })
    }

    /// Whitespace-separated `key=value` pairs on a single line.
    pub fn parse_inline(line: &str, line_no: usize) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| CkmError::Metadata {
                line: line_no,
                message: format!("expected key=value, got `{tok}`"),
            })?;
            entries.insert(k.to_string(), (line_no, v.to_string()));
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), (0, value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| CkmError::Metadata {
                line: *line,
                message: format!("bad value for `{key}`: {e}"),
            }),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.parse_value(key)?.ok_or_else(|| CkmError::Metadata {
            line: 0,
            message: format!("missing key `{key}`"),
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, (_, v)) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_reports_lines() {
        let doc = KvDoc::parse("# c\na=1\n\nb = x y\n").unwrap();
        assert_eq!(doc.require::<i32>("a").unwrap(), 1);
        assert_eq!(doc.get("b"), Some("x y"));
        let err = KvDoc::parse("a=1\noops\n").unwrap_err();
        assert!(matches!(err, CkmError::Metadata { line: 2, .. }));
        let err = KvDoc::parse("a=z\n")
            .unwrap()
            .require::<f64>("a")
            .unwrap_err();
        assert!(matches!(err, CkmError::Metadata { line: 1, .. }));
    }

    #[test]
    fn inline_pairs() {
        let doc = KvDoc::parse_inline("scene=7 bs_height=20", 3).unwrap();
        assert_eq!(doc.get("scene"), Some("7"));
        assert!(matches!(
            KvDoc::parse_inline("scene=7 junk", 3),
            Err(CkmError::Metadata { line: 3, .. })
        ));
    }
}
