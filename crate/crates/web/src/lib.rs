//! Browser bindings for a single synthetic scene: layer rendering, sampled
//! completion with masked RMSE, and per-pixel correlation similarity with
//! the angular spectrum of any pixel's correlation matrix.

use std::fmt::Write as _;

use ckm_core::baselines::{bicubic_upscale, knn_complete};
use ckm_core::eval::{cosine_map, heat_rgb, masked_rmse, CosineSummary, PixelScm, ScmField};
use ckm_core::map::{is_angle_sentinel, is_gain_sentinel, ChannelKind, CkmTensor};
use ckm_core::priors::{building_map, los_map, PriorConfig};
use ckm_core::sampling::{sample, SamplingGrid};
use ckm_core::scm::{steering_vector, CorrMatrix, SteeringConfig};
use ckm_core::synth::{generate_scene, SceneFamily, SceneMaps};
use ckm_core::{CkmError, Result};
use wasm_bindgen::prelude::*;

const SENTINEL_RGB: [u8; 3] = [24, 32, 64];

/// Angles of the spectrum grid, one per degree.
pub const SPECTRUM_POINTS: usize = 181;

/// One scene plus the latest completion and similarity map.
pub struct Session {
    scene: SceneMaps,
    mask: CkmTensor,
    completed: Option<[CkmTensor; 2]>,
    cosine: Option<CkmTensor>,
}

impl Session {
    pub fn new(seed: u64) -> Result<Self> {
        let scene = generate_scene(&SceneFamily::default().sample(seed)?)?;
        let mask = building_map(&scene.pgm1, PriorConfig::default().threshold_pixel)?;
        Ok(Self {
            scene,
            mask,
            completed: None,
            cosine: None,
        })
    }

    pub fn width(&self) -> usize {
        self.scene.pgm1.width()
    }

    pub fn height(&self) -> usize {
        self.scene.pgm1.height()
    }

    fn truth(&self, path: usize) -> Result<CkmTensor> {
        let (g, a) = self.scene.path(path)?;
        g.concat(a)
    }

    /// RGBA pixels of a named layer: `pgm1`..`pam2`, `buildings`, `los`,
    /// `done_pgm1`..`done_pam2` after a completion, `cosine` after a
    /// similarity run.
    pub fn layer(&self, name: &str) -> Result<Vec<u8>> {
        let s = &self.scene;
        let done = |path: usize, ch: usize| -> Result<Vec<u8>> {
            let c = self
                .completed
                .as_ref()
                .ok_or_else(|| CkmError::invalid("run a completion first"))?;
            Ok(rgba(&c[path - 1], ch))
        };
        match name {
            "pgm1" => Ok(rgba(&s.pgm1, 0)),
            "pam1" => Ok(rgba(&s.pam1, 0)),
            "pgm2" => Ok(rgba(&s.pgm2, 0)),
            "pam2" => Ok(rgba(&s.pam2, 0)),
            "buildings" => Ok(rgba(&self.mask, 0)),
            "los" => Ok(rgba(
                &los_map(&s.pgm1, &s.meta, PriorConfig::default().tol_db)?,
                0,
            )),
            "done_pgm1" => done(1, 0),
            "done_pam1" => done(1, 1),
            "done_pgm2" => done(2, 0),
            "done_pam2" => done(2, 1),
            "cosine" => self
                .cosine
                .as_ref()
                .map(|t| rgba(t, 0))
                .ok_or_else(|| CkmError::invalid("run a similarity map first")),
            _ => Err(CkmError::invalid(format!("unknown layer `{name}`"))),
        }
    }

    /// Samples both paths at `stride`, completes them with `bicubic` or
    /// `knn`, and reports building-masked RMSE.
    pub fn complete(&mut self, method: &str, stride: usize) -> Result<String> {
        let grid = SamplingGrid::with_stride(stride)?;
        let (w, h) = (self.width(), self.height());
        if w % stride != 0 || h % stride != 0 {
            return Err(CkmError::invalid(format!(
                "stride {stride} does not divide {w}x{h}"
            )));
        }
        let mut report = String::new();
        let mut out = Vec::with_capacity(2);
        for path in [1, 2] {
            let truth = self.truth(path)?;
            let lr = sample(&truth, &grid)?;
            let full = match method {
                "bicubic" => bicubic_upscale(&lr, stride)?,
                "knn" => knn_complete(&lr, &grid, (w, h), 4, 2.0)?,
                m => return Err(CkmError::invalid(format!("unknown method `{m}`"))),
            };
            let e = masked_rmse(&full, &truth, &self.mask)?;
            let _ = writeln!(
                report,
                "path {path}: gain RMSE {:.3} dB, angle RMSE {:.3} deg over {} pixels",
                e.get(ChannelKind::GainDb).unwrap_or(f64::NAN),
                e.get(ChannelKind::AngleDeg).unwrap_or(f64::NAN),
                e.pixels
            );
            out.push(full);
        }
        let p2 = out.pop().expect("two paths");
        let p1 = out.pop().expect("two paths");
        self.completed = Some([p1, p2]);
        self.cosine = None;
        Ok(report)
    }

    fn fields(&self, antennas: usize) -> Result<(ScmField, ScmField)> {
        let c = self
            .completed
            .as_ref()
            .ok_or_else(|| CkmError::invalid("run a completion first"))?;
        let cfg = SteeringConfig::new(antennas, 0.5)?;
        Ok((
            ScmField::new(&c[0], &c[1], &self.mask, cfg)?,
            ScmField::new(&self.truth(1)?, &self.truth(2)?, &self.mask, cfg)?,
        ))
    }

    /// Per-pixel cosine similarity of completed and true correlation matrices.
    pub fn similarity(&mut self, antennas: usize) -> Result<CosineSummary> {
        let (pred, truth) = self.fields(antennas)?;
        let c = cosine_map(&pred, &truth, self.scene.pgm1.pixel_spacing_m())?;
        self.cosine = Some(c.map);
        Ok(c.summary)
    }

    /// `a(θ)ᴴ R a(θ)` in dB relative to its peak on a one-degree grid, true
    /// spectrum followed by completed; empty at building or uncovered pixels.
    pub fn spectrum(&self, row: usize, col: usize, antennas: usize) -> Result<Vec<f64>> {
        if row >= self.height() || col >= self.width() {
            return Err(CkmError::invalid(format!(
                "pixel ({row}, {col}) is off the grid"
            )));
        }
        let (pred, truth) = self.fields(antennas)?;
        let cfg = *truth.config();
        let mut out = Vec::with_capacity(2 * SPECTRUM_POINTS);
        for field in [&truth, &pred] {
            match field.scm_at(row, col) {
                PixelScm::Matrix(r) => out.extend(angular_spectrum(&cfg, &r)),
                _ => return Ok(Vec::new()),
            }
        }
        Ok(out)
    }
}

fn angular_spectrum(cfg: &SteeringConfig, r: &CorrMatrix) -> Vec<f64> {
    let n = r.n();
    let power: Vec<f64> = (0..SPECTRUM_POINTS)
        .map(|deg| {
            let a = steering_vector(cfg, (deg as f64).to_radians());
            let mut acc = 0.0;
            for m in 0..n {
                for k in 0..n {
                    acc += (a[m].conj() * r.get(m, k) * a[k]).re;
                }
            }
            acc.max(0.0)
        })
        .collect();
    let peak = power.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
    power
        .iter()
        .map(|p| 10.0 * (p.max(peak * 1e-6) / peak).log10())
        .collect()
}

fn rgba(t: &CkmTensor, ch: usize) -> Vec<u8> {
    let kind = t.channels()[ch];
    let mut out = Vec::with_capacity(t.width() * t.height() * 4);
    for v in t.plane(ch) {
        let v = v as f64;
        let rgb = match kind {
            ChannelKind::GainDb if is_gain_sentinel(v) => SENTINEL_RGB,
            ChannelKind::AngleDeg if is_angle_sentinel(v) => SENTINEL_RGB,
            ChannelKind::Cosine if v < 0.0 => SENTINEL_RGB,
            ChannelKind::Cosine => heat_rgb(v),
            ChannelKind::GainDb | ChannelKind::AngleDeg => heat_rgb(kind.encode(v)),
            _ => {
                let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                [g, g, g]
            }
        };
        out.extend_from_slice(&[rgb[0], rgb[1], rgb[2], 255]);
    }
    out
}

fn js(e: CkmError) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo(Session);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> std::result::Result<Demo, JsError> {
        Session::new(seed as u64).map(Demo).map_err(js)
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn layer(&self, name: &str) -> std::result::Result<Vec<u8>, JsError> {
        self.0.layer(name).map_err(js)
    }

    pub fn complete(
        &mut self,
        method: &str,
        stride: usize,
    ) -> std::result::Result<String, JsError> {
        self.0.complete(method, stride).map_err(js)
    }

    /// `[mean, median, min, fraction above 0.8, pixels]`.
    pub fn similarity(&mut self, antennas: usize) -> std::result::Result<Vec<f64>, JsError> {
        let s = self.0.similarity(antennas).map_err(js)?;
        Ok(vec![
            s.mean,
            s.median,
            s.min,
            s.fraction_above,
            s.pixels as f64,
        ])
    }

    pub fn spectrum(
        &self,
        row: usize,
        col: usize,
        antennas: usize,
    ) -> std::result::Result<Vec<f64>, JsError> {
        self.0.spectrum(row, col, antennas).map_err(js)
    }
}
