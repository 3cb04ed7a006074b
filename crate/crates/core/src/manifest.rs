//! Run manifests: the command, its resolved settings and content hashes of
//! every file read or written.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{CkmError, Result};
use crate::kv::KvDoc;
use crate::rng::RNG_ALGORITHM;

pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CkmError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    doc: KvDoc,
    inputs: usize,
    outputs: usize,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut doc = KvDoc::default();
        doc.set("tool", "ckm");
        doc.set("version", env!("CARGO_PKG_VERSION"));
        doc.set("rng", RNG_ALGORITHM);
        doc.set("command", command);
        Self {
            doc,
            inputs: 0,
            outputs: 0,
        }
    }

    /// Records a resolved setting as `setting.<key>`.
    pub fn setting(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.doc.set(&format!("setting.{key}"), value);
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        let i = self.inputs;
        self.doc.set(&format!("input.{i:03}.path"), path.display());
        self.doc
            .set(&format!("input.{i:03}.sha256"), sha256_file(path)?);
        self.inputs += 1;
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> Result<&mut Self> {
        let i = self.outputs;
        self.doc.set(&format!("output.{i:03}.path"), path.display());
        self.doc
            .set(&format!("output.{i:03}.sha256"), sha256_file(path)?);
        self.outputs += 1;
        Ok(self)
    }

    pub fn doc(&self) -> &KvDoc {
        &self.doc
    }

    pub fn to_text(&self) -> String {
        self.doc.to_text()
    }

    /// Writes `<file>.manifest.txt` next to a single-file output.
    pub fn write_beside(&self, file: &Path) -> Result<()> {
        let mut name = file.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.txt");
        let path = file.with_file_name(name);
        fs::write(&path, self.to_text()).map_err(|e| CkmError::io(path, e))
    }

    /// Writes `manifest.txt` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| CkmError::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.to_text()).map_err(|e| CkmError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn records_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.bin");
        fs::write(&f, b"abc").unwrap();
        let mut m = Manifest::new("sample");
        m.setting("stride", 2).input(&f).unwrap();
        let d = m.doc();
        assert_eq!(d.get("setting.stride"), Some("2"));
        assert_eq!(d.get("input.000.sha256").unwrap().len(), 64);
        m.write_to_dir(dir.path()).unwrap();
        let back =
            KvDoc::parse(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(back.to_text(), d.to_text());
    }
}
