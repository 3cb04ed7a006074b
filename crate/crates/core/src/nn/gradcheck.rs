//! Central finite-difference verification of tape gradients (64-bit).

use rand::Rng as _;

use crate::error::Result;
use crate::rng::rng_from_seed;

use super::ops::{self, BnMode};
use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Comparison of analytic and numerical gradients for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputCheck {
    pub input: usize,
    pub coords_checked: usize,
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)` over the checked coordinates.
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub inputs: Vec<InputCheck>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error() < tol
    }
}

/// Checks the gradient of `L = Σ r ⊙ f(inputs)` for a random fixed `r`,
/// over at most `max_coords` randomly chosen coordinates of each input.
pub fn check<F>(
    name: &str,
    inputs: &[Tensor<f64>],
    f: F,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = rng_from_seed(seed);
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let out_shape = tape.value(out).shape().to_vec();
    let weights: Vec<f64> = (0..tape.value(out).numel())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let seed_t = Tensor::new(out_shape, weights.clone())?;
    let grads = tape.backward_with(out, seed_t);

    let objective = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut t = Tape::inference();
        let vs: Vec<Var> = vals.iter().map(|v| t.constant(v.clone())).collect();
        let o = f(&mut t, &vs)?;
        Ok(t.value(o)
            .data()
            .iter()
            .zip(&weights)
            .map(|(a, b)| a * b)
            .sum())
    };

    let mut report = Vec::with_capacity(inputs.len());
    for (idx, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[idx])
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        let coords: Vec<usize> = if input.numel() <= max_coords {
            (0..input.numel()).collect()
        } else {
            rand::seq::index::sample(&mut rng, input.numel(), max_coords).into_vec()
        };
        let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
        let mut probe = inputs.to_vec();
        for &i in &coords {
            let orig = input.data()[i];
            probe[idx].data_mut()[i] = orig + FD_STEP;
            let up = objective(&probe)?;
            probe[idx].data_mut()[i] = orig - FD_STEP;
            let down = objective(&probe)?;
            probe[idx].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            diff += (analytic[i] - numeric).powi(2);
            na += analytic[i].powi(2);
            nn += numeric.powi(2);
        }
        let denom = na.sqrt().max(nn.sqrt());
        let rel_error = if denom == 0.0 {
            0.0
        } else {
            diff.sqrt() / denom
        };
        report.push(InputCheck {
            input: idx,
            coords_checked: coords.len(),
            rel_error,
        });
    }
    Ok(GradCheck {
        name: name.to_string(),
        inputs: report,
    })
}

/// Tolerance the standard suite is held to.
pub const SUITE_TOL: f64 = 1e-4;

/// Gradient checks of every differentiable op on small shapes drawn from
/// `seed`: convolutions at dilations 1, 2 and 5, PReLU, batch norm in both
/// modes, 4-head attention, pooling, shuffles, concatenation, bicubic
/// upsampling and the MSE loss.
pub fn standard_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = rng_from_seed(seed);
    let mut dim = |lo: usize, hi: usize| rng.random_range(lo..=hi);
    let (n, c, h, w) = (dim(1, 2), dim(2, 3), dim(4, 6), dim(4, 6));
    let (co, hd) = (dim(2, 3), dim(1, 2));
    let s = |k: u64| seed.wrapping_mul(1000).wrapping_add(k);
    let mut out = Vec::new();
    for (k, d) in [(0u64, 1usize), (1, 2), (2, 5)] {
        let x = random_tensor(&[n, c, h, w], s(10 + k), 0.0);
        let wt = random_tensor(&[co, c, 3, 3], s(20 + k), 0.0);
        let b = random_tensor(&[co], s(30 + k), 0.0);
        out.push(check(
            &format!("conv2d-d{d}"),
            &[x, wt, b],
            |t, v| ops::conv2d(t, v[0], v[1], Some(v[2]), d),
            200,
            s(k),
        )?);
    }
    let x = random_tensor(&[n, c, h, w], s(40), 1e-3);
    let a = random_tensor(&[c], s(41), 0.0);
    out.push(check(
        "prelu",
        &[x.clone(), a],
        |t, v| ops::prelu(t, v[0], v[1]),
        200,
        s(3),
    )?);
    let g = random_tensor(&[c], s(42), 0.1);
    let b = random_tensor(&[c], s(43), 0.0);
    out.push(check(
        "batch-norm-train",
        &[x.clone(), g.clone(), b.clone()],
        |t, v| Ok(ops::batch_norm(t, v[0], v[1], v[2], BnMode::Train)?.0),
        200,
        s(4),
    )?);
    let mean: Vec<f64> = (0..c).map(|i| 0.1 * i as f64).collect();
    let var: Vec<f64> = (0..c).map(|i| 0.5 + i as f64).collect();
    out.push(check(
        "batch-norm-eval",
        &[x.clone(), g, b],
        |t, v| {
            Ok(ops::batch_norm(
                t,
                v[0],
                v[1],
                v[2],
                BnMode::Eval {
                    mean: &mean,
                    var: &var,
                },
            )?
            .0)
        },
        200,
        s(5),
    )?);
    let qkv: Vec<Tensor<f64>> = (0..3)
        .map(|k| random_tensor(&[n, 4 * hd, 3, 3], s(50 + k), 0.0))
        .collect();
    out.push(check(
        "attention-4-heads",
        &qkv,
        |t, v| ops::attention(t, v[0], v[1], v[2], 4),
        200,
        s(6),
    )?);
    let z = random_tensor(&[n, c, 2 * h, 2 * w], s(60), 0.0);
    out.push(check(
        "avg-pool-upsample",
        &[z],
        |t, v| {
            let p = ops::avg_pool(t, v[0], 2)?;
            ops::upsample_nearest(t, p, 2)
        },
        200,
        s(7),
    )?);
    let y = random_tensor(&[n, 4 * c, h, w], s(70), 0.0);
    out.push(check(
        "pixel-shuffle",
        &[y.clone()],
        |t, v| ops::pixel_shuffle(t, v[0], 2),
        200,
        s(8),
    )?);
    out.push(check(
        "concat-add",
        &[x.clone(), y],
        |t, v| {
            let cat = ops::concat(t, &[v[0], v[1]])?;
            let head = ops::select_channels(t, cat, 0, c)?;
            ops::add(t, head, v[0])
        },
        200,
        s(9),
    )?);
    out.push(check(
        "bicubic-upsample",
        &[x.clone()],
        |t, v| ops::bicubic_upsample(t, v[0], 2, Default::default()),
        200,
        s(11),
    )?);
    let target = random_tensor(&[n, c, h, w], s(80), 0.0);
    out.push(check(
        "mse",
        &[x, target],
        |t, v| ops::mse(t, v[0], v[1]),
        200,
        s(12),
    )?);
    Ok(out)
}

/// A tensor of uniform values in `[-1, 1)` whose entries avoid a band of
/// half-width `gap` around zero, so kinks are never straddled by the step.
pub fn random_tensor(shape: &[usize], seed: u64, gap: f64) -> Tensor<f64> {
    let mut rng = rng_from_seed(seed);
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|_| {
            let v: f64 = rng.random_range(gap..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}
