//! Turning scenes into network samples and network outputs back into maps.
//!
//! Networks see encoded `[0, 1]` planes: the observed gain and angle of one
//! path, then the optional LoS, building and BS priors in that order. Priors
//! always come from the path-1 gain map, which alone marks buildings without
//! confusing them with pixels that lack a reflection.

use crate::error::{CkmError, Result};
use crate::map::{ChannelKind, CkmTensor, SceneMeta};
use crate::nn::model::{predict, ModelSpec};
use crate::nn::train::Sample;
use crate::nn::{ParamStore, Real, Tensor};
use crate::priors::{build_priors, PriorConfig};
use crate::sampling::{sample, SamplingGrid};
use crate::synth::SceneMaps;

pub use crate::nn::model::InputChannels;

fn input_kinds(channels: &InputChannels) -> Vec<ChannelKind> {
    let mut k = vec![ChannelKind::GainDb, ChannelKind::AngleDeg];
    if channels.los {
        k.push(ChannelKind::LosMask);
    }
    if channels.building {
        k.push(ChannelKind::BuildingMask);
    }
    if channels.bs {
        k.push(ChannelKind::BsEncoding);
    }
    k
}

/// Sampled `[GainDb, AngleDeg]` of `path` stacked with LoS, building and BS
/// priors computed on the sampled path-1 gain map.
pub fn observe(
    scene: &SceneMaps,
    path: usize,
    grid: &SamplingGrid,
    cfg: &PriorConfig,
) -> Result<CkmTensor> {
    let (pgm, pam) = scene.path(path)?;
    let lr_pgm1 = sample(&scene.pgm1, grid)?;
    let meta = SceneMeta {
        bs_pixel: scene
            .meta
            .bs_pixel
            .and_then(|(r, c)| grid.observed_index(r, c)),
        ..scene.meta
    };
    let priors = build_priors(&lr_pgm1, &meta, cfg)?;
    sample(&pgm.concat(pam)?, grid)?.concat(&priors.to_tensor()?)
}

/// `C × h × w` encoded planes selected from an observation stack.
pub fn input_tensor<T: Real>(stack: &CkmTensor, channels: &InputChannels) -> Result<Tensor<T>> {
    let kinds = input_kinds(channels);
    let (w, h) = (stack.width(), stack.height());
    let mut data = Vec::with_capacity(kinds.len() * w * h);
    for kind in &kinds {
        let ch = stack.require(*kind)?;
        data.extend(stack.encoded_plane(ch).into_iter().map(T::of));
    }
    Tensor::new(vec![kinds.len(), h, w], data)
}

/// `2 × H × W` encoded gain and angle of `path`.
pub fn target_tensor<T: Real>(scene: &SceneMaps, path: usize) -> Result<Tensor<T>> {
    let (pgm, pam) = scene.path(path)?;
    let mut data: Vec<T> = pgm.encoded_plane(0).into_iter().map(T::of).collect();
    data.extend(pam.encoded_plane(0).into_iter().map(T::of));
    Tensor::new(vec![2, pgm.height(), pgm.width()], data)
}

pub fn training_sample<T: Real>(
    scene: &SceneMaps,
    path: usize,
    grid: &SamplingGrid,
    cfg: &PriorConfig,
    channels: &InputChannels,
) -> Result<Sample<T>> {
    Ok(Sample {
        input: input_tensor(&observe(scene, path, grid, cfg)?, channels)?,
        target: target_tensor(scene, path)?,
    })
}

/// Decodes a `2 × H × W` (or `1 × 2 × H × W`) network output into a
/// `[GainDb, AngleDeg]` map, clamping to the codec range.
pub fn decode_output<T: Real>(out: &Tensor<T>, pixel_spacing_m: f64) -> Result<CkmTensor> {
    let (c, h, w) = match out.shape() {
        [c, h, w] | [1, c, h, w] => (*c, *h, *w),
        s => {
            return Err(CkmError::invalid(format!(
                "cannot decode output of shape {s:?}"
            )))
        }
    };
    if c != 2 {
        return Err(CkmError::invalid(format!(
            "expected 2 output planes, got {c}"
        )));
    }
    let plane = |i: usize, kind: ChannelKind| -> Vec<f32> {
        out.data()[i * h * w..(i + 1) * h * w]
            .iter()
            .map(|v| kind.decode(v.as_f64()) as f32)
            .collect()
    };
    CkmTensor::from_planes(
        w,
        h,
        vec![
            (ChannelKind::GainDb, plane(0, ChannelKind::GainDb)),
            (ChannelKind::AngleDeg, plane(1, ChannelKind::AngleDeg)),
        ],
        pixel_spacing_m,
    )
}

/// Network completion of an observation stack, reading the planes the
/// model was built for. Observed lattice pixels are
/// replaced by their samples so the result honours the observations exactly.
pub fn complete_with_model<T: Real>(
    spec: &ModelSpec,
    store: &ParamStore<T>,
    stack: &CkmTensor,
    grid: &SamplingGrid,
) -> Result<CkmTensor> {
    if grid.stride() != spec.upscale {
        return Err(CkmError::invalid(format!(
            "sampling stride {} does not match the model's ×{} upscale",
            grid.stride(),
            spec.upscale
        )));
    }
    let x = input_tensor::<T>(stack, &spec.inputs)?;
    let shape = [&[1usize][..], x.shape()].concat();
    let y = predict(spec, store, &x.reshaped(shape)?)?;
    let out = decode_output(&y, stack.pixel_spacing_m() / spec.upscale as f64)?;
    reinsert_observations(out, stack, grid)
}

/// Overwrites every observed pixel of `full` with the matching sample.
pub fn reinsert_observations(
    full: CkmTensor,
    stack: &CkmTensor,
    grid: &SamplingGrid,
) -> Result<CkmTensor> {
    let (w, h) = (full.width(), full.height());
    if grid.sampled_dims(w, h) != (stack.width(), stack.height()) {
        return Err(CkmError::invalid(
            "observation grid does not match the completed map",
        ));
    }
    let mut planes = full.planes();
    for (kind, plane) in planes.iter_mut() {
        let ch = stack.require(*kind)?;
        for a in 0..stack.height() {
            for b in 0..stack.width() {
                let (row, col) = grid.full_index(a, b);
                plane[row * w + col] = stack.get(a, b, ch);
            }
        }
    }
    CkmTensor::from_planes(w, h, planes, full.pixel_spacing_m())
}
