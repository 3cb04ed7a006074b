//! Built-in verification: gradient checks, agreement of the independent
//! correlation-matrix constructions, matrix structure, Monte Carlo
//! validation and interpolation consistency.

use rand::Rng as _;

use crate::baselines::{bicubic_upscale, knn_complete};
use crate::error::Result;
use crate::map::{ChannelKind, CkmTensor};
use crate::nn::gradcheck::{standard_suite, SUITE_TOL};
use crate::rng::derived_rng;
use crate::sampling::{observation_consistency, SamplingGrid};
use crate::scm::{
    corr_from_paths, corr_outer_product, monte_carlo_corr, Path, PathSet, SteeringConfig,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// A random `(N ≤ max_n, L ≤ max_l)` configuration.
pub fn random_config(
    seed: u64,
    stream: u64,
    max_n: usize,
    max_l: usize,
) -> Result<(SteeringConfig, PathSet)> {
    let mut rng = derived_rng(seed, stream);
    let cfg = SteeringConfig::new(rng.random_range(1..=max_n), rng.random_range(0.1..1.0))?;
    let l = rng.random_range(1..=max_l);
    let paths = (0..l)
        .map(|_| Path {
            power: rng.random_range(0.01..2.0),
            aoa_rad: rng.random_range(0.0..std::f64::consts::PI),
        })
        .collect();
    Ok((cfg, PathSet::new(paths)?))
}

/// Runs every check; the run passes when every outcome does.
pub fn run_selftest(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();

    for g in standard_suite(seed)? {
        let e = g.max_rel_error();
        out.push(outcome(
            &format!("gradient {}", g.name),
            g.passes(SUITE_TOL),
            format!("rel. error {e:.2e}"),
        ));
    }

    let mut worst = 0.0f64;
    let mut structural = 0usize;
    for i in 0..100 {
        let (cfg, paths) = random_config(seed, i, 16, 4)?;
        let a = corr_from_paths(&cfg, &paths);
        let b = corr_outer_product(&cfg, &paths);
        worst = worst.max(a.max_abs_diff(&b));
        let trace = paths.total_power() * cfg.n_antennas() as f64;
        let min_ev = a.hermitian_eigenvalues()[0];
        let ok = a.is_hermitian()
            && min_ev >= -1e-10 * trace
            && a.toeplitz_deviation() == 0.0
            && a.numerical_rank(1e-9) <= paths.len()
            && (a.trace().re - trace).abs() <= 1e-12 * trace.max(1.0);
        structural += ok as usize;
    }
    out.push(outcome(
        "closed form vs outer products",
        worst <= 1e-12,
        format!("max abs diff {worst:.2e}"),
    ));
    out.push(outcome(
        "correlation structure",
        structural == 100,
        format!("{structural}/100 matrices valid"),
    ));

    let mut mc_worst = 0.0f64;
    for i in 0..5 {
        let (cfg, paths) = random_config(seed, 1000 + i, 8, 3)?;
        let mc = monte_carlo_corr(&cfg, &paths, 100_000, seed + i)?;
        mc_worst = mc_worst.max(mc.relative_frobenius_error(&corr_from_paths(&cfg, &paths)));
    }
    out.push(outcome(
        "monte carlo agreement",
        mc_worst < 0.02,
        format!("max rel. Frobenius error {mc_worst:.4}"),
    ));

    let mut rng = derived_rng(seed, 2000);
    let vals: Vec<f32> = (0..64).map(|_| rng.random_range(-200.0..-60.0)).collect();
    let lr = CkmTensor::single(8, 8, ChannelKind::GainDb, vals, 2.0)?;
    let grid = SamplingGrid::with_stride(2)?;
    let knn = knn_complete(&lr, &grid, (16, 16), 4, 2.0)?;
    let knn_dev = observation_consistency(&knn, &lr, &grid)?[0];
    let bic = bicubic_upscale(&lr, 2)?;
    let bic_dev = observation_consistency(&bic, &lr, &grid)?[0];
    out.push(outcome(
        "knn observation consistency",
        knn_dev == 0.0,
        format!("deviation {knn_dev}"),
    ));
    out.push(outcome(
        "bicubic observation consistency",
        bic_dev < 1e-3,
        format!("deviation {bic_dev:.2e}"),
    ));
    Ok(out)
}
