//! Completion metrics in physical units, streamed correlation-matrix
//! comparison and report assembly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{CkmError, Result};
use crate::map::{
    is_gain_sentinel, write_png_gray, write_png_rgb, ChannelKind, CkmTensor, COSINE_SENTINEL,
};
use crate::scm::{
    corr_from_paths, cosine_similarity, CorrMatrix, Path as ScmPath, PathSet, SteeringConfig,
};

/// Cosine level the field summary counts pixels above.
pub const COSINE_THRESHOLD: f64 = 0.8;

/// Sum in a fixed pairwise tree, independent of thread count.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn plane_of(t: &CkmTensor, kind: ChannelKind) -> Result<Vec<f32>> {
    Ok(t.plane(t.require(kind)?))
}

fn mask_plane(mask: &CkmTensor) -> Result<Vec<f32>> {
    plane_of(mask, ChannelKind::BuildingMask)
}

/// Per-channel RMSE over open, covered pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedRmse {
    pub per_channel: Vec<(ChannelKind, f64)>,
    /// Open pixels that entered the mean.
    pub pixels: usize,
    /// Open pixels skipped because the truth carries the sentinel.
    pub uncovered: usize,
}

impl MaskedRmse {
    pub fn get(&self, kind: ChannelKind) -> Option<f64> {
        self.per_channel
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, v)| *v)
    }
}

/// `sqrt(mean (pred − truth)²)` over pixels where `mask` (a building map,
/// 1 = open) is 1, per channel of `truth`, in physical units. Pixels whose
/// true gain is the sentinel have no path to compare and are counted apart.
/// Angle errors are not wrapped.
pub fn masked_rmse(pred: &CkmTensor, truth: &CkmTensor, mask: &CkmTensor) -> Result<MaskedRmse> {
    masked_rmse_with(pred, truth, mask, |_, d| d)
}

/// As [`masked_rmse`] with angle differences wrapped onto `[−180°, 180°]`.
pub fn masked_rmse_wrapped(
    pred: &CkmTensor,
    truth: &CkmTensor,
    mask: &CkmTensor,
) -> Result<MaskedRmse> {
    masked_rmse_with(pred, truth, mask, |k, d| {
        if k == ChannelKind::AngleDeg {
            (d + 180.0).rem_euclid(360.0) - 180.0
        } else {
            d
        }
    })
}

fn masked_rmse_with(
    pred: &CkmTensor,
    truth: &CkmTensor,
    mask: &CkmTensor,
    diff: impl Fn(ChannelKind, f64) -> f64,
) -> Result<MaskedRmse> {
    if !pred.same_grid(truth) || (mask.width(), mask.height()) != (truth.width(), truth.height()) {
        return Err(CkmError::invalid("prediction, truth and mask grids differ"));
    }
    let open = mask_plane(mask)?;
    let gain = truth.find(ChannelKind::GainDb).map(|c| truth.plane(c));
    let keep: Vec<usize> = (0..open.len()).filter(|&i| open[i] == 1.0).collect();
    let covered: Vec<usize> = keep
        .iter()
        .copied()
        .filter(|&i| gain.as_ref().is_none_or(|g| !is_gain_sentinel(g[i] as f64)))
        .collect();
    if covered.is_empty() {
        return Err(CkmError::invalid("no open, covered pixels to evaluate"));
    }
    let mut per_channel = Vec::with_capacity(truth.n_channels());
    for (ch, &kind) in truth.channels().iter().enumerate() {
        let p = plane_of(pred, kind)?;
        let t = truth.plane(ch);
        let sq: Vec<f64> = covered
            .iter()
            .map(|&i| diff(kind, p[i] as f64 - t[i] as f64).powi(2))
            .collect();
        per_channel.push((kind, (pairwise_sum(&sq) / sq.len() as f64).sqrt()));
    }
    Ok(MaskedRmse {
        per_channel,
        pixels: covered.len(),
        uncovered: keep.len() - covered.len(),
    })
}

/// RMSE over the union of several evaluations, weighting each by its pixel
/// count. Channels are matched by position.
pub fn pooled_rmse(parts: &[MaskedRmse]) -> Result<MaskedRmse> {
    let first = parts
        .first()
        .ok_or_else(|| CkmError::invalid("nothing to pool"))?;
    let pixels: usize = parts.iter().map(|p| p.pixels).sum();
    let mut per_channel = Vec::with_capacity(first.per_channel.len());
    for (ch, (kind, _)) in first.per_channel.iter().enumerate() {
        let sq: Vec<f64> = parts
            .iter()
            .map(|p| p.per_channel[ch].1.powi(2) * p.pixels as f64)
            .collect();
        per_channel.push((*kind, (pairwise_sum(&sq) / pixels as f64).sqrt()));
    }
    Ok(MaskedRmse {
        per_channel,
        pixels,
        uncovered: parts.iter().map(|p| p.uncovered).sum(),
    })
}

/// Correlation content of one pixel.
#[derive(Debug, Clone, PartialEq)]
pub enum PixelScm {
    Building,
    /// Open pixel on which no path arrives.
    Uncovered,
    Matrix(CorrMatrix),
}

/// Per-pixel correlation matrices of a two-path map pair, produced on demand.
#[derive(Debug, Clone)]
pub struct ScmField {
    width: usize,
    height: usize,
    cfg: SteeringConfig,
    gains: [Vec<f32>; 2],
    angles: [Vec<f32>; 2],
    open: Vec<f32>,
}

impl ScmField {
    /// `path1`/`path2` carry `GainDb` and `AngleDeg` channels; `mask` is a
    /// building map (1 = open).
    pub fn new(
        path1: &CkmTensor,
        path2: &CkmTensor,
        mask: &CkmTensor,
        cfg: SteeringConfig,
    ) -> Result<Self> {
        let (w, h) = (path1.width(), path1.height());
        for t in [path2, mask] {
            if (t.width(), t.height()) != (w, h) {
                return Err(CkmError::invalid("path maps and mask must share one grid"));
            }
        }
        Ok(Self {
            width: w,
            height: h,
            cfg,
            gains: [
                plane_of(path1, ChannelKind::GainDb)?,
                plane_of(path2, ChannelKind::GainDb)?,
            ],
            angles: [
                plane_of(path1, ChannelKind::AngleDeg)?,
                plane_of(path2, ChannelKind::AngleDeg)?,
            ],
            open: mask_plane(mask)?,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn config(&self) -> &SteeringConfig {
        &self.cfg
    }

    /// Paths present at a pixel; a path with the gain sentinel is absent.
    pub fn paths_at(&self, row: usize, col: usize) -> Option<PathSet> {
        let i = row * self.width + col;
        if self.open[i] != 1.0 {
            return None;
        }
        let paths: Vec<ScmPath> = (0..2)
            .filter(|&l| !is_gain_sentinel(self.gains[l][i] as f64))
            .map(|l| ScmPath::from_db_deg(self.gains[l][i] as f64, self.angles[l][i] as f64))
            .collect();
        PathSet::new(paths).ok()
    }

    pub fn scm_at(&self, row: usize, col: usize) -> PixelScm {
        if self.open[row * self.width + col] != 1.0 {
            return PixelScm::Building;
        }
        match self.paths_at(row, col) {
            Some(ps) => PixelScm::Matrix(corr_from_paths(&self.cfg, &ps)),
            None => PixelScm::Uncovered,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CosineSummary {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub fraction_above: f64,
    pub threshold: f64,
    pub pixels: usize,
    pub buildings: usize,
    pub uncovered: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CosineMap {
    /// `Cosine` channel with the sentinel on building and uncovered pixels.
    pub map: CkmTensor,
    pub summary: CosineSummary,
}

enum PixelCos {
    Building,
    Uncovered,
    Value(f64),
}

fn pixel_cosine(pred: &ScmField, truth: &ScmField, row: usize, col: usize) -> Result<PixelCos> {
    match (pred.scm_at(row, col), truth.scm_at(row, col)) {
        (PixelScm::Building, _) | (_, PixelScm::Building) => Ok(PixelCos::Building),
        (PixelScm::Matrix(a), PixelScm::Matrix(b)) => {
            // Powers far below f64 range leave an all-zero matrix.
            if a.frobenius_norm() == 0.0 || b.frobenius_norm() == 0.0 {
                return Ok(PixelCos::Uncovered);
            }
            Ok(PixelCos::Value(cosine_similarity(&a, &b)?))
        }
        _ => Ok(PixelCos::Uncovered),
    }
}

fn row_cosines(pred: &ScmField, truth: &ScmField, row: usize) -> Result<Vec<PixelCos>> {
    (0..pred.width)
        .map(|col| pixel_cosine(pred, truth, row, col))
        .collect()
}

/// Per-pixel cosine similarity of two fields, one matrix pair at a time.
pub fn cosine_map(pred: &ScmField, truth: &ScmField, pixel_spacing_m: f64) -> Result<CosineMap> {
    if (pred.width, pred.height) != (truth.width, truth.height) {
        return Err(CkmError::invalid("fields cover different grids"));
    }
    if pred.cfg.n_antennas() != truth.cfg.n_antennas() {
        return Err(CkmError::invalid("fields use different antenna counts"));
    }
    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<PixelCos>> = {
        use rayon::prelude::*;
        (0..pred.height)
            .into_par_iter()
            .map(|r| row_cosines(pred, truth, r))
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<PixelCos>> = (0..pred.height)
        .map(|r| row_cosines(pred, truth, r))
        .collect::<Result<_>>()?;

    let mut plane = Vec::with_capacity(pred.width * pred.height);
    let mut values = Vec::new();
    let (mut buildings, mut uncovered) = (0, 0);
    for c in rows.into_iter().flatten() {
        match c {
            PixelCos::Building => {
                buildings += 1;
                plane.push(COSINE_SENTINEL as f32);
            }
            PixelCos::Uncovered => {
                uncovered += 1;
                plane.push(COSINE_SENTINEL as f32);
            }
            PixelCos::Value(v) => {
                values.push(v);
                plane.push(v.max(0.0) as f32);
            }
        }
    }
    if values.is_empty() {
        return Err(CkmError::invalid("the fields share no covered open pixel"));
    }
    let n = values.len();
    let above = values.iter().filter(|&&v| v > COSINE_THRESHOLD).count();
    let mean = pairwise_sum(&values) / n as f64;
    let mut sorted = values;
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let map = CkmTensor::single(
        pred.width,
        pred.height,
        ChannelKind::Cosine,
        plane,
        pixel_spacing_m,
    )?;
    Ok(CosineMap {
        map,
        summary: CosineSummary {
            mean,
            median,
            min: sorted[0],
            max: sorted[n - 1],
            fraction_above: above as f64 / n as f64,
            threshold: COSINE_THRESHOLD,
            pixels: n,
            buildings,
            uncovered,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Colormap {
    Gray,
    Heat,
}

impl Colormap {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gray" => Ok(Colormap::Gray),
            "heat" => Ok(Colormap::Heat),
            _ => Err(CkmError::invalid(format!(
                "unknown colormap `{s}`; use gray or heat"
            ))),
        }
    }
}

/// Black, red, yellow, white ramp.
pub fn heat_rgb(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * 3.0;
    let c = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    [c(t), c(t - 1.0), c(t - 2.0)]
}

fn is_sentinel(kind: ChannelKind, v: f64) -> bool {
    match kind {
        ChannelKind::GainDb => is_gain_sentinel(v),
        ChannelKind::AngleDeg => crate::map::is_angle_sentinel(v),
        ChannelKind::Cosine => v == COSINE_SENTINEL,
        _ => false,
    }
}

/// Value range of a rendered channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderInfo {
    pub kind: ChannelKind,
    pub min: f64,
    pub max: f64,
    pub sentinels: usize,
}

/// Renders channel `ch` as an 8-bit PNG. Gray renders store the codec's pixel
/// value so they re-import exactly; heat renders stretch the channel's codec
/// range, with cosine maps on `[0, 1]`. Sentinels are black. A sidecar
/// `<path>.txt` records the value range.
pub fn render_png(t: &CkmTensor, ch: usize, cmap: Colormap, path: &Path) -> Result<RenderInfo> {
    let kind = t.channels()[ch];
    let raw = t.plane(ch);
    let enc = t.encoded_plane(ch);
    let mut info = RenderInfo {
        kind,
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
        sentinels: 0,
    };
    let mut unit = Vec::with_capacity(raw.len());
    for (&v, &p) in raw.iter().zip(&enc) {
        let v = v as f64;
        if !v.is_finite() {
            return Err(CkmError::invalid(format!(
                "non-finite value in {} channel",
                kind.name()
            )));
        }
        if is_sentinel(kind, v) {
            info.sentinels += 1;
            unit.push(None);
        } else {
            info.min = info.min.min(v);
            info.max = info.max.max(v);
            unit.push(Some(p));
        }
    }
    match cmap {
        Colormap::Gray => {
            let vals: Vec<f64> = unit.iter().map(|u| u.unwrap_or(0.0)).collect();
            write_png_gray(path, t.width(), t.height(), &vals, 8)?;
        }
        Colormap::Heat => {
            let rgb: Vec<u8> = unit
                .iter()
                .flat_map(|u| u.map_or([0, 0, 0], heat_rgb))
                .collect();
            write_png_rgb(path, t.width(), t.height(), &rgb)?;
        }
    }
    let mut side = format!("channel={}\ncolormap={cmap:?}\n", kind.name());
    if info.sentinels < raw.len() {
        let _ = writeln!(side, "min={}\nmax={}", info.min, info.max);
    }
    let _ = writeln!(side, "sentinel_pixels={}", info.sentinels);
    let side_path = path.with_extension("png.txt");
    fs::write(&side_path, side).map_err(|e| CkmError::io(side_path, e))?;
    Ok(info)
}

/// Results of one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    /// `(path, rmse)` for paths 1 and 2.
    pub rmse: Vec<(usize, MaskedRmse)>,
    pub rmse_wrapped: Vec<(usize, MaskedRmse)>,
    pub cosine: Option<CosineSummary>,
    /// Largest deviation from the observed samples, per path, if checked.
    pub observation_deviation: Vec<(usize, f64)>,
    /// Settings, seeds and input hashes copied into the report.
    pub manifest: crate::kv::KvDoc,
}

impl EvalReport {
    pub fn rmse_gain_db(&self, path: usize) -> Option<f64> {
        self.rmse
            .iter()
            .find(|(p, _)| *p == path)
            .and_then(|(_, r)| r.get(ChannelKind::GainDb))
    }

    pub fn rmse_angle_deg(&self, path: usize) -> Option<f64> {
        self.rmse
            .iter()
            .find(|(p, _)| *p == path)
            .and_then(|(_, r)| r.get(ChannelKind::AngleDeg))
    }

    /// `key: value` lines followed by a CSV block of the RMSE table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "method: {}", self.method);
        for (p, r) in &self.rmse {
            for (k, v) in &r.per_channel {
                let _ = writeln!(s, "rmse_path{p}_{}: {v:.6}", k.name());
            }
            let _ = writeln!(s, "pixels_path{p}: {}", r.pixels);
            let _ = writeln!(s, "uncovered_path{p}: {}", r.uncovered);
        }
        for (p, r) in &self.rmse_wrapped {
            if let Some(v) = r.get(ChannelKind::AngleDeg) {
                let _ = writeln!(s, "diagnostic_wrapped_rmse_path{p}_angle_deg: {v:.6}");
            }
        }
        for (p, d) in &self.observation_deviation {
            let _ = writeln!(s, "observation_deviation_path{p}: {d}");
        }
        if let Some(c) = &self.cosine {
            let _ = writeln!(s, "cosine_mean: {:.6}", c.mean);
            let _ = writeln!(s, "cosine_median: {:.6}", c.median);
            let _ = writeln!(s, "cosine_min: {:.6}", c.min);
            let _ = writeln!(s, "cosine_max: {:.6}", c.max);
            let _ = writeln!(
                s,
                "cosine_fraction_above_{}: {:.6}",
                c.threshold, c.fraction_above
            );
            let _ = writeln!(s, "cosine_pixels: {}", c.pixels);
            let _ = writeln!(s, "cosine_building_pixels: {}", c.buildings);
            let _ = writeln!(s, "cosine_uncovered_pixels: {}", c.uncovered);
        }
        for line in self.manifest.to_text().lines() {
            if let Some((k, v)) = line.split_once('=') {
                let _ = writeln!(s, "manifest.{k}: {v}");
            }
        }
        s.push_str("\n[csv rmse]\npath,channel,rmse,pixels,uncovered\n");
        for (p, r) in &self.rmse {
            for (k, v) in &r.per_channel {
                let _ = writeln!(s, "{p},{},{v:.6},{},{}", k.name(), r.pixels, r.uncovered);
            }
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CkmError::io(dir, e))?;
        }
        fs::write(path, self.to_text()).map_err(|e| CkmError::io(path, e))
    }
}
