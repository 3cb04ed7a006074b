//! Adapter for CKMImageNet-style PNG corpora.
//!
//! A layout manifest (`key=value` lines) names the metadata file and the
//! per-scene image paths:
//!
//! ```text
//! layout_version=1
//! metadata=metadata.txt
//! gain_pattern={scene}/path{path}_gain.png
//! angle_pattern={scene}/path{path}_aoa.png
//! bit_depth=8
//! ```
//!
//! Each non-comment metadata line describes one scene with whitespace
//! separated pairs: `scene`, `bs_height`, `ue_height`, `carrier_hz`,
//! `pixel_spacing_m` and optionally `bs_row` with `bs_col`.

use std::path::{Path, PathBuf};

use crate::error::{CkmError, Result};
use crate::kv::KvDoc;
use crate::map::{import_png_gray, write_png_gray, ChannelKind, SceneMeta};
use crate::priors::{build_priors, PriorConfig};
use crate::synth::SceneMaps;

pub const LAYOUT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub metadata: String,
    pub gain_pattern: String,
    pub angle_pattern: String,
    pub bit_depth: u8,
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            metadata: "metadata.txt".into(),
            gain_pattern: "{scene}/path{path}_gain.png".into(),
            angle_pattern: "{scene}/path{path}_aoa.png".into(),
            bit_depth: 8,
        }
    }
}

impl Layout {
    pub fn from_kv(d: &KvDoc) -> Result<Self> {
        let version: u32 = d.require("layout_version")?;
        if version != LAYOUT_VERSION {
            return Err(CkmError::Metadata {
                line: 0,
                message: format!("unsupported layout_version {version}"),
            });
        }
        let def = Self::default();
        let layout = Self {
            metadata: d.parse_value("metadata")?.unwrap_or(def.metadata),
            gain_pattern: d.parse_value("gain_pattern")?.unwrap_or(def.gain_pattern),
            angle_pattern: d.parse_value("angle_pattern")?.unwrap_or(def.angle_pattern),
            bit_depth: d.parse_value("bit_depth")?.unwrap_or(def.bit_depth),
        };
        if layout.bit_depth != 8 && layout.bit_depth != 16 {
            return Err(CkmError::invalid(format!(
                "bit_depth {} must be 8 or 16",
                layout.bit_depth
            )));
        }
        Ok(layout)
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::default();
        d.set("layout_version", LAYOUT_VERSION);
        d.set("metadata", &self.metadata);
        d.set("gain_pattern", &self.gain_pattern);
        d.set("angle_pattern", &self.angle_pattern);
        d.set("bit_depth", self.bit_depth);
        d
    }

    fn resolve(pattern: &str, scene: &str, path: usize) -> String {
        pattern
            .replace("{scene}", scene)
            .replace("{path}", &path.to_string())
    }

    pub fn gain_path(&self, root: &Path, scene: &str, path: usize) -> PathBuf {
        root.join(Self::resolve(&self.gain_pattern, scene, path))
    }

    pub fn angle_path(&self, root: &Path, scene: &str, path: usize) -> PathBuf {
        root.join(Self::resolve(&self.angle_pattern, scene, path))
    }
}

/// One metadata line.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub id: String,
    pub meta: SceneMeta,
    pub pixel_spacing_m: f64,
}

impl SceneRecord {
    pub fn to_line(&self) -> String {
        let mut s = format!(
            "scene={} bs_height={} ue_height={} carrier_hz={} pixel_spacing_m={}",
            self.id,
            self.meta.bs_height_m,
            self.meta.ue_height_m,
            self.meta.carrier_hz,
            self.pixel_spacing_m
        );
        if let Some((r, c)) = self.meta.bs_pixel {
            s.push_str(&format!(" bs_row={r} bs_col={c}"));
        }
        s
    }
}

pub fn parse_metadata(text: &str) -> Result<Vec<SceneRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let line_no = i + 1;
        let d = KvDoc::parse_inline(line, line_no)?;
        let at_line = |e: CkmError| match e {
            CkmError::Metadata { message, .. } => CkmError::Metadata {
                line: line_no,
                message,
            },
            other => CkmError::Metadata {
                line: line_no,
                message: other.to_string(),
            },
        };
        let id: String = d.require("scene").map_err(at_line)?;
        let meta = SceneMeta::from_kv(&d).map_err(at_line)?;
        let pixel_spacing_m: f64 = d.require("pixel_spacing_m").map_err(at_line)?;
        if !(pixel_spacing_m > 0.0) {
            return Err(CkmError::Metadata {
                line: line_no,
                message: format!("pixel_spacing_m must be positive, got {pixel_spacing_m}"),
            });
        }
        out.push(SceneRecord {
            id,
            meta,
            pixel_spacing_m,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IngestReport {
    pub ingested: Vec<String>,
    /// `(scene, reason)` for every scene left out.
    pub skipped: Vec<(String, String)>,
}

fn load_png(
    path: &Path,
    kind: ChannelKind,
    bits: u8,
    spacing: f64,
) -> Result<crate::map::CkmTensor> {
    if !path.is_file() {
        return Err(CkmError::format(
            0,
            format!("missing image {}", path.display()),
        ));
    }
    import_png_gray(path, kind, bits, spacing)
}

/// Decodes one scene's four images.
pub fn load_scene(root: &Path, layout: &Layout, rec: &SceneRecord) -> Result<SceneMaps> {
    let (bits, s) = (layout.bit_depth, rec.pixel_spacing_m);
    let maps = SceneMaps {
        pgm1: load_png(
            &layout.gain_path(root, &rec.id, 1),
            ChannelKind::GainDb,
            bits,
            s,
        )?,
        pam1: load_png(
            &layout.angle_path(root, &rec.id, 1),
            ChannelKind::AngleDeg,
            bits,
            s,
        )?,
        pgm2: load_png(
            &layout.gain_path(root, &rec.id, 2),
            ChannelKind::GainDb,
            bits,
            s,
        )?,
        pam2: load_png(
            &layout.angle_path(root, &rec.id, 2),
            ChannelKind::AngleDeg,
            bits,
            s,
        )?,
        meta: rec.meta,
        clamp_count: 0,
    };
    if maps.named().iter().any(|(_, t)| !t.same_grid(&maps.pgm1)) {
        return Err(CkmError::format(
            0,
            format!("scene {}: images differ in size", rec.id),
        ));
    }
    Ok(maps)
}

/// Reads every scene listed in the metadata, derives its priors and writes
/// native tensors to `out/<scene>/`. Scenes whose BS cannot be located are
/// skipped and reported.
pub fn ingest_ckmimagenet(
    root: &Path,
    layout: &Layout,
    out: &Path,
    cfg: &PriorConfig,
) -> Result<IngestReport> {
    let meta_path = root.join(&layout.metadata);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| CkmError::io(&meta_path, e))?;
    let records = parse_metadata(&text)?;
    let mut report = IngestReport::default();
    for rec in &records {
        let maps = load_scene(root, layout, rec)?;
        let priors = match build_priors(&maps.pgm1, &maps.meta, cfg) {
            Ok(p) => p,
            Err(e @ CkmError::NoCoverage(_)) => {
                log::warn!("skipping scene {}: {e}", rec.id);
                report.skipped.push((rec.id.clone(), e.to_string()));
                continue;
            }
            Err(e) => return Err(e),
        };
        let maps = SceneMaps {
            meta: SceneMeta {
                bs_pixel: Some(priors.bs_pixel),
                ..maps.meta
            },
            ..maps
        };
        let dir = out.join(&rec.id);
        let mut extra = KvDoc::default();
        extra.set("scene", &rec.id);
        maps.write_dir(&dir, &extra)?;
        crate::map::write_tensor(&priors.to_tensor()?, dir.join("priors.ckmt"))?;
        report.ingested.push(rec.id.clone());
    }
    Ok(report)
}

/// Writes scenes as PNG images plus a metadata file in `layout`.
pub fn export_ckmimagenet(
    root: &Path,
    layout: &Layout,
    scenes: &[(String, SceneMaps)],
) -> Result<()> {
    let mut lines = String::from("# scene metadata\n");
    for (id, maps) in scenes {
        for (p, (pgm, pam)) in [(1, maps.path(1)?), (2, maps.path(2)?)] {
            for (path, t) in [
                (layout.gain_path(root, id, p), pgm),
                (layout.angle_path(root, id, p), pam),
            ] {
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir).map_err(|e| CkmError::io(dir, e))?;
                }
                write_png_gray(
                    &path,
                    t.width(),
                    t.height(),
                    &t.encoded_plane(0),
                    layout.bit_depth,
                )?;
            }
        }
        let rec = SceneRecord {
            id: id.clone(),
            meta: maps.meta,
            pixel_spacing_m: maps.pgm1.pixel_spacing_m(),
        };
        lines.push_str(&rec.to_line());
        lines.push('\n');
    }
    let path = root.join(&layout.metadata);
    std::fs::write(&path, lines).map_err(|e| CkmError::io(path, e))
}
