//! Trains a desk-scale model on synthetic scenes and compares its held-out
//! building-masked RMSE against bicubic interpolation.
//!
//! `cargo run --release --example desk_experiment -- <iters> <seed> [key=value ...]`
//! with keys `pool`, `batch`, `lr`, `bicubic_skip`, `channels`, `blocks`,
//! `train`, `test`, `path`, `val`, `aug`, `keep_best`, `epoch`, `eval_every`.

use std::time::Instant;

use ckm_core::baselines::bicubic_upscale;
use ckm_core::dataset::{complete_with_model, observe, training_sample, InputChannels};
use ckm_core::eval::{masked_rmse, pooled_rmse};
use ckm_core::kv::KvDoc;
use ckm_core::map::ChannelKind;
use ckm_core::nn::train::{train, TrainSpec};
use ckm_core::nn::ModelSpec;
use ckm_core::priors::{building_map, PriorConfig};
use ckm_core::sampling::{sample, SamplingGrid};
use ckm_core::synth::{generate_scene, SceneFamily};

fn main() -> ckm_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let iters: usize = args[0].parse().expect("iterations");
    let seed: u64 = args[1].parse().expect("seed");
    let opts = KvDoc::parse(&args[2..].join("\n"))?;
    let get = |k: &str, d: f64| opts.parse_value::<f64>(k).unwrap().unwrap_or(d);
    let path = get("path", 1.0) as usize;
    let (n_train, n_test) = (get("train", 256.0) as u64, get("test", 64.0) as u64);

    let fam = SceneFamily::default();
    let grid = SamplingGrid::with_stride(2)?;
    let cfg = PriorConfig::default();
    let channels = InputChannels::for_path(path);
    let scenes = |range: std::ops::Range<u64>| -> ckm_core::Result<Vec<_>> {
        range.map(|s| generate_scene(&fam.sample(s)?)).collect()
    };
    let train_scenes = scenes(0..n_train)?;
    let test_scenes = scenes(1_000_000..1_000_000 + n_test)?;
    let n_val = get("val", 0.0) as usize;
    let mirrors: &[(bool, bool)] = if get("aug", 0.0) != 0.0 {
        &[(false, false), (true, false), (false, true), (true, true)]
    } else {
        &[(false, false)]
    };
    let (fit_scenes, val_scenes) = train_scenes.split_at(train_scenes.len() - n_val);
    let mut data = Vec::new();
    for m in fit_scenes {
        for &(fr, fc) in mirrors {
            data.push(training_sample::<f32>(
                &m.mirrored(fr, fc)?,
                path,
                &grid,
                &cfg,
                &channels,
            )?);
        }
    }
    let val: Vec<_> = val_scenes
        .iter()
        .map(|m| training_sample::<f32>(m, path, &grid, &cfg, &channels))
        .collect::<ckm_core::Result<_>>()?;

    let spec = ModelSpec {
        inputs: channels,
        base_channels: get("channels", 16.0) as usize,
        n_res_blocks: get("blocks", 4.0) as usize,
        attn_pool: get("pool", 2.0) as usize,
        bicubic_skip: get("bicubic_skip", 0.0) != 0.0,
        ..ModelSpec::desk()
    };
    let ts = TrainSpec {
        batch_size: get("batch", 8.0) as usize,
        lr_initial: get("lr", 1e-3),
        max_iterations: iters,
        seed,
        keep_best: get("keep_best", 0.0) != 0.0,
        epoch_iterations: opts.parse_value::<usize>("epoch").unwrap(),
        ..TrainSpec::default()
    };
    let t0 = Instant::now();
    let every = get("eval_every", 500.0) as usize;
    let rmse_of = |store: &ckm_core::nn::ParamStore<f32>,
                   scenes: &[ckm_core::synth::SceneMaps]|
     -> ckm_core::Result<(f64, f64)> {
        let mut v = Vec::new();
        for m in scenes {
            let (pgm, pam) = m.path(path)?;
            let truth = pgm.concat(pam)?;
            let mask = building_map(&m.pgm1, cfg.threshold_pixel)?;
            let pred = complete_with_model(&spec, store, &observe(m, path, &grid, &cfg)?, &grid)?;
            v.push(masked_rmse(&pred, &truth, &mask)?);
        }
        let p = pooled_rmse(&v)?;
        Ok((
            p.get(ChannelKind::GainDb).unwrap(),
            p.get(ChannelKind::AngleDeg).unwrap(),
        ))
    };
    let mut hook = |it: usize, store: &ckm_core::nn::ParamStore<f32>| -> ckm_core::Result<()> {
        if (it + 1) % every == 0 {
            let te = rmse_of(store, &test_scenes[..32])?;
            let tr = rmse_of(store, &train_scenes[..32])?;
            eprintln!(
                "iter {} {:.0}s test {:.3}/{:.3} train {:.3}/{:.3}",
                it + 1,
                t0.elapsed().as_secs_f64(),
                te.0,
                te.1,
                tr.0,
                tr.1
            );
        }
        Ok(())
    };
    let out = train(&spec, &data, &val, &ts, Some(&mut hook))?;
    for r in out
        .curve
        .iter()
        .filter(|r| r.val_loss.is_some())
        .step_by(10)
    {
        eprintln!(
            "{} lr={} train={:.3e} val={:.3e}",
            r.iteration,
            r.lr,
            r.train_loss,
            r.val_loss.unwrap()
        );
    }

    let (mut model, mut bicubic) = (Vec::new(), Vec::new());
    for m in &test_scenes {
        let (pgm, pam) = m.path(path)?;
        let truth = pgm.concat(pam)?;
        let mask = building_map(&m.pgm1, cfg.threshold_pixel)?;
        let stack = observe(m, path, &grid, &cfg)?;
        let pred = complete_with_model(&spec, &out.store, &stack, &grid)?;
        model.push(masked_rmse(&pred, &truth, &mask)?);
        let bic = bicubic_upscale(&sample(&truth, &grid)?, 2)?;
        bicubic.push(masked_rmse(&bic, &truth, &mask)?);
    }
    let (pm, pb) = (pooled_rmse(&model)?, pooled_rmse(&bicubic)?);
    println!(
        "seed {seed} iters {iters} {:.0}s  model gain {:.4} angle {:.4} | bicubic gain {:.4} angle {:.4}",
        t0.elapsed().as_secs_f64(),
        pm.get(ChannelKind::GainDb).unwrap(),
        pm.get(ChannelKind::AngleDeg).unwrap(),
        pb.get(ChannelKind::GainDb).unwrap(),
        pb.get(ChannelKind::AngleDeg).unwrap()
    );
    Ok(())
}
