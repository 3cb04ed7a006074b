//! Spatial correlation matrices for a uniform linear array.
//!
//! Under sparse multipath with independent, uniformly distributed path phases,
//! the correlation matrix `R = E[h h^H]` collapses to a power-weighted sum of
//! steering-vector outer products, one per path. This module builds that sum
//! two ways (outer products and the element-wise Toeplitz form), provides a
//! Monte Carlo estimator that averages explicit channel realizations, and the
//! Frobenius cosine similarity used to compare matrices.

use std::f64::consts::{PI, TAU};

use nalgebra::{Complex, DMatrix};
use num_complex::Complex64;
use rand::Rng as _;

use crate::error::{CkmError, Result};
use crate::rng::derived_rng;

/// Monte Carlo draws per independently seeded chunk.
const MC_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteeringConfig {
    n_antennas: usize,
    spacing_ratio: f64,
}

impl SteeringConfig {
    /// `spacing_ratio` is the element spacing over the carrier wavelength.
    pub fn new(n_antennas: usize, spacing_ratio: f64) -> Result<Self> {
        if n_antennas == 0 {
            return Err(CkmError::invalid(
                "steering config needs at least one antenna",
            ));
        }
        if !(spacing_ratio > 0.0 && spacing_ratio.is_finite()) {
            return Err(CkmError::invalid(format!(
                "antenna spacing ratio must be positive, got {spacing_ratio}"
            )));
        }
        Ok(Self {
            n_antennas,
            spacing_ratio,
        })
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    pub fn spacing_ratio(&self) -> f64 {
        self.spacing_ratio
    }

    /// Per-element phase increment for a path arriving at `aoa_rad`.
    fn phase_step(&self, aoa_rad: f64) -> f64 {
        TAU * self.spacing_ratio * aoa_rad.cos()
    }
}

impl Default for SteeringConfig {
    /// 64 elements at half-wavelength spacing.
    fn default() -> Self {
        Self {
            n_antennas: 64,
            spacing_ratio: 0.5,
        }
    }
}

/// Folds an angle onto `[0, π]`, the range a ULA can distinguish.
pub fn fold_aoa(aoa_rad: f64) -> f64 {
    let t = aoa_rad.rem_euclid(TAU).abs();
    if t > PI {
        TAU - t
    } else {
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    /// Mean path power `E[|α|²]`, linear scale.
    pub power: f64,
    /// Angle of arrival in radians, folded onto `[0, π]`.
    pub aoa_rad: f64,
}

impl Path {
    /// Path from a gain in dB and an angle in degrees.
    pub fn from_db_deg(gain_db: f64, aoa_deg: f64) -> Self {
        Self {
            power: 10f64.powf(gain_db / 10.0),
            aoa_rad: fold_aoa(aoa_deg.to_radians()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    paths: Vec<Path>,
}

impl PathSet {
    pub fn new(paths: Vec<Path>) -> Result<Self> {
        if paths.is_empty() {
            return Err(CkmError::invalid("a path set needs at least one path"));
        }
        let mut folded = Vec::with_capacity(paths.len());
        for (i, p) in paths.into_iter().enumerate() {
            if !(p.power >= 0.0 && p.power.is_finite()) {
                return Err(CkmError::invalid(format!(
                    "path {i} has invalid power {}",
                    p.power
                )));
            }
            if !p.aoa_rad.is_finite() {
                return Err(CkmError::invalid(format!(
                    "path {i} has a non-finite angle"
                )));
            }
            folded.push(Path {
                power: p.power,
                aoa_rad: fold_aoa(p.aoa_rad),
            });
        }
        Ok(Self { paths: folded })
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn total_power(&self) -> f64 {
        self.paths.iter().map(|p| p.power).sum()
    }
}

/// Dense row-major `n × n` complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrMatrix {
    n: usize,
    entries: Vec<Complex64>,
}

impl CorrMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            entries: vec![Complex64::new(0.0, 0.0); n * n],
        }
    }

    pub fn from_entries(n: usize, entries: Vec<Complex64>) -> Result<Self> {
        if n == 0 || entries.len() != n * n {
            return Err(CkmError::invalid(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                entries.len()
            )));
        }
        Ok(Self { n, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.n + col]
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            n: self.n,
            entries: self.entries.iter().map(|z| z * s).collect(),
        }
    }

    pub fn is_hermitian(&self) -> bool {
        (0..self.n).all(|m| (0..self.n).all(|k| self.get(m, k) == self.get(k, m).conj()))
    }

    /// Largest `|R[m][n] - R[m+1][n+1]|`.
    pub fn toeplitz_deviation(&self) -> f64 {
        let mut worst = 0.0f64;
        for m in 0..self.n.saturating_sub(1) {
            for k in 0..self.n - 1 {
                worst = worst.max((self.get(m, k) - self.get(m + 1, k + 1)).norm());
            }
        }
        worst
    }

    /// Max absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &CorrMatrix) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `‖self − other‖_F / ‖other‖_F`.
    pub fn relative_frobenius_error(&self, reference: &CorrMatrix) -> f64 {
        let diff: f64 = self
            .entries
            .iter()
            .zip(&reference.entries)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        diff.sqrt() / reference.frobenius_norm()
    }

    fn to_dmatrix(&self) -> DMatrix<Complex<f64>> {
        DMatrix::from_fn(self.n, self.n, |r, c| self.get(r, c))
    }

    /// Eigenvalues in ascending order, assuming the matrix is Hermitian.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .to_dmatrix()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> Vec<f64> {
        let mut sv: Vec<f64> = self
            .to_dmatrix()
            .singular_values()
            .iter()
            .copied()
            .collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        sv
    }

    /// Number of singular values above `rel_tol · σ₁`.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        let sv = self.singular_values();
        match sv.first() {
            Some(&s1) if s1 > 0.0 => sv.iter().filter(|&&s| s > rel_tol * s1).count(),
            _ => 0,
        }
    }
}

/// Steering vector `[1, e^{jψ}, …, e^{j(N−1)ψ}]` with `ψ = 2π (d/λ) cos θ`.
pub fn steering_vector(cfg: &SteeringConfig, aoa_rad: f64) -> Vec<Complex64> {
    let step = cfg.phase_step(aoa_rad);
    (0..cfg.n_antennas)
        .map(|n| Complex64::from_polar(1.0, step * n as f64))
        .collect()
}

/// Correlation matrix via the element-wise closed form. For a ULA the entry
/// `(m, n)` depends only on `m − n`, so the `2N − 1` distinct lags are
/// evaluated once and the matrix is filled from them. Negative lags are the
/// exact conjugates of positive ones.
pub fn corr_from_paths(cfg: &SteeringConfig, paths: &PathSet) -> CorrMatrix {
    let n = cfg.n_antennas;
    let lags = lag_values(cfg, paths);
    let mut entries = vec![Complex64::new(0.0, 0.0); n * n];
    for m in 0..n {
        for k in 0..n {
            entries[m * n + k] = if m >= k {
                lags[m - k]
            } else {
                lags[k - m].conj()
            };
        }
    }
    CorrMatrix { n, entries }
}

/// `r_k = Σ_ℓ p_ℓ e^{j 2π (d/λ) k cos θ_ℓ}` for `k = 0..N`.
fn lag_values(cfg: &SteeringConfig, paths: &PathSet) -> Vec<Complex64> {
    (0..cfg.n_antennas)
        .map(|k| {
            paths
                .paths
                .iter()
                .map(|p| Complex64::from_polar(p.power, cfg.phase_step(p.aoa_rad) * k as f64))
                .sum()
        })
        .collect()
}

/// Correlation matrix as `Σ_ℓ p_ℓ a(θ_ℓ) a(θ_ℓ)^H`, evaluated literally.
/// Only the upper triangle is accumulated; the lower one is its conjugate.
pub fn corr_outer_product(cfg: &SteeringConfig, paths: &PathSet) -> CorrMatrix {
    let n = cfg.n_antennas;
    let mut r = CorrMatrix::zeros(n);
    for p in &paths.paths {
        let a = steering_vector(cfg, p.aoa_rad);
        for m in 0..n {
            for k in m..n {
                r.entries[m * n + k] += a[m] * a[k].conj() * p.power;
            }
        }
    }
    mirror_upper(&mut r);
    r
}

fn mirror_upper(r: &mut CorrMatrix) {
    let n = r.n;
    for m in 0..n {
        for k in 0..m {
            r.entries[m * n + k] = r.entries[k * n + m].conj();
        }
    }
}

/// Sample correlation `(1/D) Σ_d h_d h_d^H` over `n_draws` channel
/// realizations `h = Σ_ℓ √p_ℓ a(θ_ℓ) e^{jφ_ℓ}` with `φ_ℓ ~ U[0, 2π)`.
///
/// Draws are split into fixed-size chunks, each with its own derived seed,
/// and chunk sums are reduced in chunk order, so the result depends only on
/// `(inputs, seed)` and not on how many threads evaluate the chunks.
pub fn monte_carlo_corr(
    cfg: &SteeringConfig,
    paths: &PathSet,
    n_draws: usize,
    seed: u64,
) -> Result<CorrMatrix> {
    if n_draws == 0 {
        return Err(CkmError::invalid("monte carlo needs at least one draw"));
    }
    let steering: Vec<(f64, Vec<Complex64>)> = paths
        .paths
        .iter()
        .map(|p| (p.power.sqrt(), steering_vector(cfg, p.aoa_rad)))
        .collect();
    let n_chunks = n_draws.div_ceil(MC_CHUNK);
    let chunk_sum = |chunk: usize| {
        let draws = MC_CHUNK.min(n_draws - chunk * MC_CHUNK);
        mc_chunk(cfg.n_antennas, &steering, draws, seed, chunk as u64)
    };

    #[cfg(feature = "parallel")]
    let partials: Vec<Vec<Complex64>> = {
        use rayon::prelude::*;
        (0..n_chunks).into_par_iter().map(chunk_sum).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<Vec<Complex64>> = (0..n_chunks).map(chunk_sum).collect();

    let n = cfg.n_antennas;
    let mut r = CorrMatrix::zeros(n);
    for part in &partials {
        for (acc, v) in r.entries.iter_mut().zip(part) {
            *acc += v;
        }
    }
    let inv = 1.0 / n_draws as f64;
    for z in &mut r.entries {
        *z *= inv;
    }
    mirror_upper(&mut r);
    Ok(r)
}

fn mc_chunk(
    n: usize,
    steering: &[(f64, Vec<Complex64>)],
    draws: usize,
    seed: u64,
    chunk: u64,
) -> Vec<Complex64> {
    let mut rng = derived_rng(seed, chunk);
    let mut acc = vec![Complex64::new(0.0, 0.0); n * n];
    let mut h = vec![Complex64::new(0.0, 0.0); n];
    for _ in 0..draws {
        h.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for (amp, a) in steering {
            let phase: f64 = rng.random::<f64>() * TAU;
            let coef = Complex64::from_polar(*amp, phase);
            for (hz, az) in h.iter_mut().zip(a) {
                *hz += az * coef;
            }
        }
        for m in 0..n {
            let hm = h[m];
            for k in m..n {
                acc[m * n + k] += hm * h[k].conj();
            }
        }
    }
    acc
}

/// `tr(A·B) = Σ_{m,n} A[m][n]·B[n][m]`, without forming the product.
pub fn trace_of_product(a: &CorrMatrix, b: &CorrMatrix) -> Result<Complex64> {
    if a.n != b.n {
        return Err(CkmError::invalid(format!(
            "matrix dimensions differ: {} vs {}",
            a.n, b.n
        )));
    }
    let n = a.n;
    let mut acc = Complex64::new(0.0, 0.0);
    for m in 0..n {
        for k in 0..n {
            acc += a.entries[m * n + k] * b.entries[k * n + m];
        }
    }
    Ok(acc)
}

/// Cosine similarity `Re tr(A·B) / (‖A‖_F ‖B‖_F)`.
///
/// For Hermitian inputs the trace is real; a non-negligible imaginary part
/// means at least one argument is not Hermitian and is rejected.
pub fn cosine_similarity(a: &CorrMatrix, b: &CorrMatrix) -> Result<f64> {
    let tr = trace_of_product(a, b)?;
    let (na, nb) = (a.frobenius_norm(), b.frobenius_norm());
    if na == 0.0 || nb == 0.0 {
        return Err(CkmError::invalid("cosine similarity of an all-zero matrix"));
    }
    // Measured against the norm product: near-orthogonal matrices have a
    // trace at round-off level, where a ratio to |tr| means nothing.
    if tr.im.abs() > 1e-9 * na * nb {
        return Err(CkmError::invalid(format!(
            "trace of product has imaginary part {:e}; inputs are not Hermitian",
            tr.im
        )));
    }
    Ok(tr.re / (na * nb))
}
