//! Classical completion: Keys bicubic upscaling and k-nearest-neighbour
//! inverse-distance weighting.
//!
//! Both work channel by channel in encoded pixel space. Gain and angle maps
//! are treated as plain images (no circular handling of angles); bicubic
//! output is clamped to `[0, 1]` before decoding, and masks decode by
//! rounding.

use crate::error::{CkmError, Result};
use crate::map::CkmTensor;
use crate::sampling::SamplingGrid;

/// Keys cubic-convolution parameter (the Catmull-Rom member of the family).
pub const KEYS_A: f64 = -0.5;

/// Keys cubic convolution kernel.
pub fn keys_kernel(x: f64, a: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// How output pixels map back onto the low-resolution grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Alignment {
    /// `x_src = x / s`: high-resolution pixel `s·i` lands exactly on sample `i`.
    #[default]
    Corner,
    /// `x_src = (x + 0.5) / s − 0.5`, the pixel-centre convention.
    Center,
}

impl Alignment {
    pub fn name(self) -> &'static str {
        match self {
            Alignment::Corner => "corner",
            Alignment::Center => "center",
        }
    }
}

/// Four `(source index, weight)` taps per output coordinate along one axis,
/// with border indices clamped.
pub fn cubic_taps(in_len: usize, scale: usize, align: Alignment) -> Vec<[(usize, f64); 4]> {
    let s = scale as f64;
    (0..in_len * scale)
        .map(|x| {
            let src = match align {
                Alignment::Corner => x as f64 / s,
                Alignment::Center => (x as f64 + 0.5) / s - 0.5,
            };
            let base = src.floor();
            let frac = src - base;
            let base = base as isize;
            let mut taps = [(0usize, 0.0f64); 4];
            for (slot, m) in (-1isize..=2).enumerate() {
                let idx = (base + m).clamp(0, in_len as isize - 1) as usize;
                taps[slot] = (idx, keys_kernel(frac - m as f64, KEYS_A));
            }
            taps
        })
        .collect()
}

/// Bicubic upscaling of a single `height × width` plane, without clamping.
pub fn bicubic_plane(
    plane: &[f64],
    width: usize,
    height: usize,
    scale: usize,
    align: Alignment,
) -> Vec<f64> {
    let rows = cubic_taps(height, scale, align);
    let cols = cubic_taps(width, scale, align);
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for rt in &rows {
        for ct in &cols {
            let mut acc = 0.0;
            for &(ri, rw) in rt {
                let row = &plane[ri * width..(ri + 1) * width];
                let mut line = 0.0;
                for &(ci, cw) in ct {
                    line += row[ci] * cw;
                }
                acc += rw * line;
            }
            out.push(acc);
        }
    }
    out
}

/// Bicubic completion, counting how many output pixels had to be clamped.
pub fn bicubic_upscale_counted(
    lr: &CkmTensor,
    scale: usize,
    align: Alignment,
) -> Result<(CkmTensor, usize)> {
    if scale == 0 {
        return Err(CkmError::invalid("upscale factor must be at least 1"));
    }
    let (w, h) = (lr.width(), lr.height());
    let mut clamped = 0;
    let planes = (0..lr.n_channels())
        .map(|ch| {
            let kind = lr.channels()[ch];
            let up = bicubic_plane(&lr.encoded_plane(ch), w, h, scale, align);
            let decoded = up
                .into_iter()
                .map(|p| {
                    if !(0.0..=1.0).contains(&p) {
                        clamped += 1;
                    }
                    kind.decode(p) as f32
                })
                .collect();
            (kind, decoded)
        })
        .collect();
    let out = CkmTensor::from_planes(
        w * scale,
        h * scale,
        planes,
        lr.pixel_spacing_m() / scale as f64,
    )?;
    Ok((out, clamped))
}

pub fn bicubic_upscale(lr: &CkmTensor, scale: usize) -> Result<CkmTensor> {
    bicubic_upscale_counted(lr, scale, Alignment::Corner).map(|(t, _)| t)
}

/// Inverse-distance-weighted k-nearest-neighbour completion.
///
/// Observed pixels copy their sample. Other pixels take
/// `Σ wᵢ vᵢ / Σ wᵢ` with `wᵢ = dᵢ^(−power)` over the `k` nearest observed
/// locations (Euclidean distance in full-grid pixels; equal distances order
/// by `(row, col)`).
pub fn knn_complete(
    lr: &CkmTensor,
    grid: &SamplingGrid,
    full_dims: (usize, usize),
    k: usize,
    power: f64,
) -> Result<CkmTensor> {
    let (width, height) = full_dims;
    if k == 0 {
        return Err(CkmError::invalid("k must be at least 1"));
    }
    if !power.is_finite() || power < 0.0 {
        return Err(CkmError::invalid(format!(
            "IDW power must be ≥ 0, got {power}"
        )));
    }
    if grid.sampled_dims(width, height) != (lr.width(), lr.height()) {
        return Err(CkmError::invalid(format!(
            "{}x{} samples do not match the lattice of a {width}x{height} grid",
            lr.width(),
            lr.height()
        )));
    }
    let n_obs = lr.width() * lr.height();
    if k > n_obs {
        return Err(CkmError::invalid(format!(
            "k = {k} exceeds the {n_obs} observed points"
        )));
    }
    let observed: Vec<(i64, i64)> = (0..lr.height())
        .flat_map(|a| (0..lr.width()).map(move |b| (a, b)))
        .map(|(a, b)| {
            let (r, c) = grid.full_index(a, b);
            (r as i64, c as i64)
        })
        .collect();
    let planes: Vec<Vec<f64>> = (0..lr.n_channels())
        .map(|ch| lr.encoded_plane(ch))
        .collect();
    let mut out: Vec<Vec<f32>> = vec![Vec::with_capacity(width * height); planes.len()];
    // (squared distance, row, col, observation index); row-major observation
    // order makes the tuple order the lexicographic tie-break.
    let mut cand: Vec<(i64, i64, i64, usize)> = Vec::with_capacity(n_obs);
    let mut weights = Vec::with_capacity(k);
    for row in 0..height {
        for col in 0..width {
            if let Some((a, b)) = grid.observed_index(row, col) {
                for (ch, dst) in out.iter_mut().enumerate() {
                    dst.push(lr.get(a, b, ch));
                }
                continue;
            }
            cand.clear();
            let (r, c) = (row as i64, col as i64);
            cand.extend(observed.iter().enumerate().map(|(i, &(orow, ocol))| {
                let (dr, dc) = (orow - r, ocol - c);
                (dr * dr + dc * dc, orow, ocol, i)
            }));
            cand.select_nth_unstable(k - 1);
            let nearest = &mut cand[..k];
            nearest.sort_unstable();
            weights.clear();
            weights.extend(
                nearest
                    .iter()
                    .map(|&(d2, ..)| (d2 as f64).sqrt().powf(-power)),
            );
            let wsum: f64 = weights.iter().sum();
            for (ch, plane) in planes.iter().enumerate() {
                let v: f64 = nearest
                    .iter()
                    .zip(&weights)
                    .map(|(&(.., i), w)| w * plane[i])
                    .sum::<f64>()
                    / wsum;
                out[ch].push(lr.channels()[ch].decode(v) as f32);
            }
        }
    }
    let planes = lr.channels().iter().copied().zip(out).collect();
    CkmTensor::from_planes(
        width,
        height,
        planes,
        lr.pixel_spacing_m() / grid.stride() as f64,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::ChannelKind;
    use crate::sampling::{observation_consistency, sample};
    use proptest::prelude::*;

    fn bs_plane(w: usize, h: usize, f: impl Fn(usize, usize) -> f32) -> CkmTensor {
        let plane = (0..h)
            .flat_map(|r| (0..w).map(move |c| (r, c)))
            .map(|(r, c)| f(r, c))
            .collect();
        CkmTensor::single(w, h, ChannelKind::BsEncoding, plane, 1.0).unwrap()
    }

    #[test]
    fn kernel_shape() {
        assert_eq!(keys_kernel(0.0, KEYS_A), 1.0);
        assert_eq!(keys_kernel(1.0, KEYS_A), 0.0);
        assert_eq!(keys_kernel(2.0, KEYS_A), 0.0);
        assert!(keys_kernel(1.5, KEYS_A) < 0.0);
    }

    #[test]
    fn taps_partition_unity() {
        for align in [Alignment::Corner, Alignment::Center] {
            for taps in cubic_taps(7, 3, align) {
                let s: f64 = taps.iter().map(|t| t.1).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_stays_constant() {
        let lr = bs_plane(5, 4, |_, _| 0.375);
        let up = bicubic_upscale(&lr, 2).unwrap();
        assert_eq!((up.width(), up.height()), (10, 8));
        assert!(up.data().iter().all(|&v| (v - 0.375).abs() < 1e-7));
        assert!(bicubic_upscale(&lr, 0).is_err());
    }

    #[test]
    fn quadratic_reproduced_in_interior() {
        let (w, h) = (10, 10);
        let f = |r: f64, c: f64| 0.1 + 0.01 * r + 0.002 * c * c;
        let plane: Vec<f64> = (0..h)
            .flat_map(|r| (0..w).map(move |c| f(r as f64, c as f64)))
            .collect();
        let up = bicubic_plane(&plane, w, h, 2, Alignment::Corner);
        // Interior: every tap stays in bounds.
        for y in 2..(2 * h - 4) {
            for x in 2..(2 * w - 4) {
                let want = f(y as f64 / 2.0, x as f64 / 2.0);
                assert!((up[y * 2 * w + x] - want).abs() < 1e-12, "({y},{x})");
            }
        }
    }

    #[test]
    fn bicubic_is_observation_consistent() {
        let lr = bs_plane(6, 6, |r, c| ((r * 7 + c * 3) % 5) as f32 / 5.0);
        let up = bicubic_upscale(&lr, 2).unwrap();
        let g = SamplingGrid::with_stride(2).unwrap();
        let dev = observation_consistency(&up, &lr, &g).unwrap();
        assert_eq!(dev, vec![0.0]);
        assert_eq!(sample(&up, &g).unwrap(), lr);
    }

    #[test]
    fn knn_zero_distance_and_constants() {
        let g = SamplingGrid::with_stride(2).unwrap();
        let lr = bs_plane(4, 4, |r, c| (r * 4 + c) as f32 / 16.0);
        let hr = knn_complete(&lr, &g, (8, 8), 4, 2.0).unwrap();
        assert_eq!(observation_consistency(&hr, &lr, &g).unwrap(), vec![0.0]);
        let flat = bs_plane(4, 4, |_, _| 0.25);
        let hr = knn_complete(&flat, &g, (8, 8), 4, 2.0).unwrap();
        assert!(hr.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn knn_cell_centre_is_corner_mean() {
        let g = SamplingGrid::with_stride(2).unwrap();
        let lr = bs_plane(2, 2, |r, c| [0.1, 0.2, 0.3, 0.6][r * 2 + c]);
        let hr = knn_complete(&lr, &g, (4, 4), 4, 2.0).unwrap();
        assert!((hr.get(1, 1, 0) - 0.3).abs() < 1e-7);
    }

    #[test]
    fn knn_errors() {
        let g = SamplingGrid::with_stride(2).unwrap();
        let lr = bs_plane(2, 2, |_, _| 0.5);
        assert!(knn_complete(&lr, &g, (4, 4), 5, 2.0).is_err());
        assert!(knn_complete(&lr, &g, (6, 6), 1, 2.0).is_err());
        assert!(knn_complete(&lr, &g, (4, 4), 0, 2.0).is_err());
    }

    #[test]
    fn masks_stay_binary() {
        let lr = CkmTensor::single(
            3,
            3,
            ChannelKind::BuildingMask,
            vec![1., 1., 0., 1., 0., 0., 1., 1., 1.],
            1.0,
        )
        .unwrap();
        let up = bicubic_upscale(&lr, 2).unwrap();
        assert!(up.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    proptest! {
        #[test]
        fn knn_is_convex(vals in proptest::collection::vec(0.0f32..1.0, 16), k in 1usize..8) {
            let g = SamplingGrid::with_stride(2).unwrap();
            let lr = CkmTensor::single(4, 4, ChannelKind::BsEncoding, vals.clone(), 1.0).unwrap();
            let hr = knn_complete(&lr, &g, (8, 8), k, 2.0).unwrap();
            let lo = vals.iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = vals.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            prop_assert!(hr.data().iter().all(|&v| v >= lo - 1e-6 && v <= hi + 1e-6));
        }

        #[test]
        fn channels_are_independent(a in proptest::collection::vec(0.0f32..1.0, 9), b in proptest::collection::vec(0.0f32..1.0, 9)) {
            let ab = CkmTensor::from_planes(3, 3, vec![(ChannelKind::BsEncoding, a.clone()), (ChannelKind::BsEncoding, b.clone())], 1.0).unwrap();
            let ba = CkmTensor::from_planes(3, 3, vec![(ChannelKind::BsEncoding, b), (ChannelKind::BsEncoding, a)], 1.0).unwrap();
            let (ua, ub) = (bicubic_upscale(&ab, 2).unwrap(), bicubic_upscale(&ba, 2).unwrap());
            prop_assert_eq!(ua.plane(0), ub.plane(1));
            prop_assert_eq!(ua.plane(1), ub.plane(0));
        }
    }
}
