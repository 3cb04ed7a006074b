//! Auxiliary input maps derived from a path-gain map: line-of-sight labels,
//! a binary building mask and a Gaussian encoding of the BS location.

use std::f64::consts::PI;

use crate::error::{CkmError, Result};
use crate::map::{is_gain_sentinel, ChannelKind, CkmTensor, SceneMeta, SPEED_OF_LIGHT};

/// Thresholds and widths used when deriving priors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorConfig {
    /// Variance of the BS Gaussian, in squared pixels.
    pub sigma_sq: f64,
    /// Largest |gain − Friis| still labelled line-of-sight, in dB.
    pub tol_db: f64,
    /// Encoded-gain threshold below which a pixel is building.
    pub threshold_pixel: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            sigma_sq: 5.0,
            tol_db: 1.0,
            threshold_pixel: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorBundle {
    pub los: CkmTensor,
    pub building: CkmTensor,
    pub bs: CkmTensor,
    pub bs_pixel: (usize, usize),
}

impl PriorBundle {
    /// `[LosMask, BuildingMask, BsEncoding]` stacked on one grid.
    pub fn to_tensor(&self) -> Result<CkmTensor> {
        self.los.concat(&self.building)?.concat(&self.bs)
    }
}

/// Derives all three priors. A BS location in `meta` overrides detection.
pub fn build_priors(pgm: &CkmTensor, meta: &SceneMeta, cfg: &PriorConfig) -> Result<PriorBundle> {
    let bs_pixel = match meta.bs_pixel {
        Some(p) => p,
        None => detect_bs(pgm)?,
    };
    let meta = SceneMeta {
        bs_pixel: Some(bs_pixel),
        ..*meta
    };
    Ok(PriorBundle {
        los: los_map(pgm, &meta, cfg.tol_db)?,
        building: building_map(pgm, cfg.threshold_pixel)?,
        bs: bs_map(
            pgm.width(),
            pgm.height(),
            bs_pixel,
            cfg.sigma_sq,
            pgm.pixel_spacing_m(),
        )?,
        bs_pixel,
    })
}

/// Location of the strongest non-sentinel gain. Ties resolve to the smallest
/// `(row, col)`.
pub fn detect_bs(pgm: &CkmTensor) -> Result<(usize, usize)> {
    let ch = pgm.require(ChannelKind::GainDb)?;
    let mut best: Option<((usize, usize), f32)> = None;
    for row in 0..pgm.height() {
        for col in 0..pgm.width() {
            let g = pgm.get(row, col, ch);
            if is_gain_sentinel(g as f64) {
                continue;
            }
            if best.is_none_or(|(_, b)| g > b) {
                best = Some(((row, col), g));
            }
        }
    }
    best.map(|(p, _)| p)
        .ok_or_else(|| CkmError::NoCoverage("every pixel holds the building sentinel".into()))
}

/// Free-space gain `20 log10(λ / (4π d))` with unit antenna gains.
pub fn friis_gain_db(distance_m: f64, carrier_hz: f64) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(CkmError::invalid(format!(
            "Friis distance must be positive, got {distance_m}"
        )));
    }
    if !(carrier_hz > 0.0) {
        return Err(CkmError::invalid(format!(
            "carrier frequency must be positive, got {carrier_hz}"
        )));
    }
    let lambda = SPEED_OF_LIGHT / carrier_hz;
    Ok(20.0 * (lambda / (4.0 * PI * distance_m)).log10())
}

/// 3D BS–UE distance for a pixel, from grid offsets and the height gap.
pub fn pixel_distance_m(
    pixel: (usize, usize),
    bs_pixel: (usize, usize),
    spacing_m: f64,
    meta: &SceneMeta,
) -> f64 {
    let dr = pixel.0 as f64 - bs_pixel.0 as f64;
    let dc = pixel.1 as f64 - bs_pixel.1 as f64;
    let horiz_sq = (dr * dr + dc * dc) * spacing_m * spacing_m;
    let dh = meta.bs_height_m - meta.ue_height_m;
    (horiz_sq + dh * dh).sqrt()
}

/// Labels a pixel 1 when its gain is within `tol_db` of the free-space gain
/// at its distance from the BS. Building-sentinel pixels are 0.
pub fn los_map(pgm: &CkmTensor, meta: &SceneMeta, tol_db: f64) -> Result<CkmTensor> {
    meta.validate()?;
    if !(tol_db >= 0.0) {
        return Err(CkmError::invalid(format!(
            "LoS tolerance must be ≥ 0, got {tol_db}"
        )));
    }
    let ch = pgm.require(ChannelKind::GainDb)?;
    let bs = match meta.bs_pixel {
        Some(p) => p,
        None => detect_bs(pgm)?,
    };
    let mut plane = Vec::with_capacity(pgm.width() * pgm.height());
    for row in 0..pgm.height() {
        for col in 0..pgm.width() {
            let g = pgm.get(row, col, ch) as f64;
            let label = if is_gain_sentinel(g) {
                0.0
            } else {
                let d = pixel_distance_m((row, col), bs, pgm.pixel_spacing_m(), meta);
                if d == 0.0 {
                    1.0
                } else if (g - friis_gain_db(d, meta.carrier_hz)?).abs() <= tol_db {
                    1.0
                } else {
                    0.0
                }
            };
            plane.push(label);
        }
    }
    CkmTensor::single(
        pgm.width(),
        pgm.height(),
        ChannelKind::LosMask,
        plane,
        pgm.pixel_spacing_m(),
    )
}

/// 0 where the encoded gain falls below `threshold_pixel`, 1 elsewhere. A
/// building mask passed in place of a gain map is thresholded as-is.
pub fn building_map(pgm: &CkmTensor, threshold_pixel: f64) -> Result<CkmTensor> {
    if !(0.0..=1.0).contains(&threshold_pixel) {
        return Err(CkmError::invalid(format!(
            "building threshold {threshold_pixel} outside [0, 1]"
        )));
    }
    let ch = pgm
        .find(ChannelKind::GainDb)
        .or_else(|| pgm.find(ChannelKind::BuildingMask))
        .ok_or_else(|| CkmError::invalid("building map needs a gain or building channel"))?;
    let plane = pgm
        .encoded_plane(ch)
        .into_iter()
        .map(|p| if p < threshold_pixel { 0.0 } else { 1.0 })
        .collect();
    CkmTensor::single(
        pgm.width(),
        pgm.height(),
        ChannelKind::BuildingMask,
        plane,
        pgm.pixel_spacing_m(),
    )
}

/// `exp(−‖q − bs‖² / (2σ²))` over the grid, distances in pixels.
pub fn bs_map(
    width: usize,
    height: usize,
    bs_pixel: (usize, usize),
    sigma_sq: f64,
    pixel_spacing_m: f64,
) -> Result<CkmTensor> {
    if bs_pixel.0 >= height || bs_pixel.1 >= width {
        return Err(CkmError::invalid(format!(
            "BS pixel {bs_pixel:?} outside {width}x{height} grid"
        )));
    }
    if !(sigma_sq > 0.0) {
        return Err(CkmError::invalid(format!(
            "σ² must be positive, got {sigma_sq}"
        )));
    }
    let mut plane = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            let dr = row as f64 - bs_pixel.0 as f64;
            let dc = col as f64 - bs_pixel.1 as f64;
            plane.push((-(dr * dr + dc * dc) / (2.0 * sigma_sq)).exp() as f32);
        }
    }
    CkmTensor::single(
        width,
        height,
        ChannelKind::BsEncoding,
        plane,
        pixel_spacing_m,
    )
}
