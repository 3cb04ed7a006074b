use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use ckm_core::kv::KvDoc;
use ckm_core::manifest::Manifest;
use ckm_core::{CkmError, Result};

/// Resolves each setting as flag, else config entry, else default, and
/// records the result in the run manifest.
pub struct Settings {
    file: KvDoc,
    pub manifest: Manifest,
}

impl Settings {
    pub fn new(command: &str, config: Option<&Path>) -> Result<Self> {
        let mut manifest = Manifest::new(command);
        let file = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CkmError::io(p, e))?;
                manifest.input(p)?;
                KvDoc::parse(&text)?
            }
            None => KvDoc::default(),
        };
        Ok(Self { file, manifest })
    }

    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.file.parse_value(key)?.unwrap_or(default),
        };
        self.manifest.setting(key, &v);
        Ok(v)
    }

    /// Optional setting without a default.
    pub fn opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.file.parse_value(key)?,
        };
        if let Some(v) = &v {
            self.manifest.setting(key, v);
        }
        Ok(v)
    }

    /// A switch is on when given as a flag or set true in the config.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool> {
        let v = flag || self.file.parse_value::<bool>(key)?.unwrap_or(false);
        self.manifest.setting(key, v);
        Ok(v)
    }
}

/// Parses `row,col`.
pub fn parse_pair(s: &str) -> Result<(usize, usize)> {
    let bad = || CkmError::invalid(format!("expected `row,col`, got `{s}`"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

pub fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| CkmError::invalid(format!("`{t}` is not a block index")))
        })
        .collect()
}
