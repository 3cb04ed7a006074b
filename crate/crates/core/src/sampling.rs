//! Uniform sparse sampling of a full-resolution grid, and the check that a
//! completion reproduces the observed samples.

use crate::error::{CkmError, Result};
use crate::map::CkmTensor;

/// Observed set `{(row₀ + a·s, col₀ + b·s)}` clipped to the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingGrid {
    stride: usize,
    offset: (usize, usize),
}

impl SamplingGrid {
    pub fn new(stride: usize, offset: (usize, usize)) -> Result<Self> {
        if stride == 0 {
            return Err(CkmError::invalid("sampling stride must be at least 1"));
        }
        if offset.0 >= stride || offset.1 >= stride {
            return Err(CkmError::invalid(format!(
                "offset {offset:?} must be smaller than stride {stride}"
            )));
        }
        Ok(Self { stride, offset })
    }

    /// Stride with the top-left anchored offset `(0, 0)`.
    pub fn with_stride(stride: usize) -> Result<Self> {
        Self::new(stride, (0, 0))
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn offset(&self) -> (usize, usize) {
        self.offset
    }

    /// Low-resolution `(width, height)` for a full grid of `(width, height)`.
    pub fn sampled_dims(&self, width: usize, height: usize) -> (usize, usize) {
        (
            width.saturating_sub(self.offset.1).div_ceil(self.stride),
            height.saturating_sub(self.offset.0).div_ceil(self.stride),
        )
    }

    /// Full-grid `(row, col)` of low-resolution sample `(a, b)`.
    pub fn full_index(&self, a: usize, b: usize) -> (usize, usize) {
        (
            self.offset.0 + a * self.stride,
            self.offset.1 + b * self.stride,
        )
    }

    /// Low-resolution index of a full-grid pixel, if it is observed.
    pub fn observed_index(&self, row: usize, col: usize) -> Option<(usize, usize)> {
        let (r0, c0) = self.offset;
        if row < r0 || col < c0 || (row - r0) % self.stride != 0 || (col - c0) % self.stride != 0 {
            return None;
        }
        Some(((row - r0) / self.stride, (col - c0) / self.stride))
    }
}

/// Decimates `full` onto the sampling lattice.
pub fn sample(full: &CkmTensor, grid: &SamplingGrid) -> Result<CkmTensor> {
    let (w, h) = grid.sampled_dims(full.width(), full.height());
    if w == 0 || h == 0 {
        return Err(CkmError::invalid(format!(
            "offset {:?} leaves nothing of a {}x{} grid",
            grid.offset,
            full.width(),
            full.height()
        )));
    }
    let c = full.n_channels();
    let mut data = Vec::with_capacity(w * h * c);
    for a in 0..h {
        for b in 0..w {
            let (row, col) = grid.full_index(a, b);
            for ch in 0..c {
                data.push(full.get(row, col, ch));
            }
        }
    }
    CkmTensor::new(
        w,
        h,
        full.channels().to_vec(),
        data,
        full.pixel_spacing_m() * grid.stride as f64,
    )
}

/// Per-channel maximum `|completed − observed|` over the observed locations,
/// in physical units.
pub fn observation_consistency(
    completed: &CkmTensor,
    observed: &CkmTensor,
    grid: &SamplingGrid,
) -> Result<Vec<f64>> {
    let (w, h) = grid.sampled_dims(completed.width(), completed.height());
    if (observed.width(), observed.height()) != (w, h) {
        return Err(CkmError::invalid(format!(
            "observed grid {}x{} does not match the {w}x{h} lattice of a {}x{} completion",
            observed.width(),
            observed.height(),
            completed.width(),
            completed.height()
        )));
    }
    if observed.channels() != completed.channels() {
        return Err(CkmError::invalid("observed and completed channels differ"));
    }
    let mut worst = vec![0.0f64; completed.n_channels()];
    for a in 0..h {
        for b in 0..w {
            let (row, col) = grid.full_index(a, b);
            for (ch, acc) in worst.iter_mut().enumerate() {
                let d = (completed.get(row, col, ch) as f64 - observed.get(a, b, ch) as f64).abs();
                *acc = acc.max(d);
            }
        }
    }
    Ok(worst)
}

/// Nearest-neighbour upsampling: every sample fills its `s × s` block.
pub fn upsample_duplicate(lr: &CkmTensor, stride: usize) -> Result<CkmTensor> {
    if stride == 0 {
        return Err(CkmError::invalid("stride must be at least 1"));
    }
    let (w, h) = (lr.width() * stride, lr.height() * stride);
    let c = lr.n_channels();
    let mut data = Vec::with_capacity(w * h * c);
    for row in 0..h {
        for col in 0..w {
            for ch in 0..c {
                data.push(lr.get(row / stride, col / stride, ch));
            }
        }
    }
    CkmTensor::new(
        w,
        h,
        lr.channels().to_vec(),
        data,
        lr.pixel_spacing_m() / stride as f64,
    )
}
