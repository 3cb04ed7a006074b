use std::fs;
use std::path::{Path, PathBuf};

use ckm_core::baselines::{bicubic_upscale, knn_complete};
use ckm_core::dataset::{complete_with_model, observe, training_sample, InputChannels};
use ckm_core::eval::{
    cosine_map, masked_rmse, masked_rmse_wrapped, render_png, Colormap, CosineSummary, EvalReport,
    ScmField,
};
use ckm_core::ingest::{ingest_ckmimagenet, Layout};
use ckm_core::kv::KvDoc;
use ckm_core::map::{read_tensor, write_tensor, ChannelKind, CkmTensor, SceneMeta};
use ckm_core::nn::checkpoint::read_checkpoint_header;
use ckm_core::nn::train::{loss_curve_csv, train, Sample as TrainSample, TrainSpec};
use ckm_core::nn::{load_checkpoint, save_checkpoint, ModelSpec, NumericMode, ParamStore, Real};
use ckm_core::priors::{build_priors, building_map, PriorConfig};
use ckm_core::rng::derive_seed;
use ckm_core::sampling::{observation_consistency, sample, SamplingGrid};
use ckm_core::scm::SteeringConfig;
use ckm_core::selftest::run_selftest;
use ckm_core::synth::{generate_scene, SceneFamily, SceneMaps};
use ckm_core::{CkmError, Result};
use rayon::prelude::*;

use crate::args;
use crate::settings::{parse_list, parse_pair, Settings};

fn read_kv(path: &Path) -> Result<KvDoc> {
    KvDoc::parse(&fs::read_to_string(path).map_err(|e| CkmError::io(path, e))?)
}

fn prior_config(s: &mut Settings, f: &args::PriorFlags) -> Result<PriorConfig> {
    let d = PriorConfig::default();
    Ok(PriorConfig {
        sigma_sq: s.get("sigma-sq", f.sigma_sq, d.sigma_sq)?,
        tol_db: s.get("tol-db", f.tol_db, d.tol_db)?,
        threshold_pixel: s.get("threshold", f.threshold, d.threshold_pixel)?,
    })
}

fn grid(s: &mut Settings, stride: Option<usize>, offset: Option<String>) -> Result<SamplingGrid> {
    let stride = s.get("stride", stride, 2)?;
    let offset = parse_pair(&s.get("offset", offset, "0,0".to_string())?)?;
    SamplingGrid::new(stride, offset)
}

fn steering(
    s: &mut Settings,
    antennas: Option<usize>,
    spacing: Option<f64>,
) -> Result<SteeringConfig> {
    let d = SteeringConfig::default();
    SteeringConfig::new(
        s.get("antennas", antennas, d.n_antennas())?,
        s.get("spacing", spacing, d.spacing_ratio())?,
    )
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| CkmError::io(dir, e)),
        None => Ok(()),
    }
}

/// Writes a tensor plus its sidecar manifest.
fn emit_tensor(s: &mut Settings, t: &CkmTensor, out: &Path) -> Result<()> {
    create_parent(out)?;
    write_tensor(t, out)?;
    s.manifest.output(out)?;
    s.manifest.write_beside(out)
}

/// `root` itself when it is a scene, else its scene subdirectories in name order.
fn scene_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join("meta.txt").is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| CkmError::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("meta.txt").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CkmError::invalid(format!(
            "{} holds no scene directories",
            root.display()
        )));
    }
    Ok(dirs)
}

pub fn gen_scenes(a: args::GenScenes, mut s: Settings) -> Result<()> {
    let family = match &a.spec {
        Some(p) => {
            s.manifest.input(p)?;
            SceneFamily::from_kv(&read_kv(p)?)?
        }
        None => SceneFamily::default(),
    };
    let count = s.get("count", a.count, 1)?;
    let seed = s.get("seed", a.seed, 0)?;
    let fam_kv = family.to_kv();
    for key in fam_kv.keys() {
        s.manifest.setting(
            &format!("family.{key}"),
            fam_kv.get(key).unwrap_or_default(),
        );
    }
    let scenes: Vec<_> = (0..count)
        .into_par_iter()
        .map(|i| {
            let spec = family.sample(derive_seed(seed, i as u64))?;
            Ok((spec.clone(), generate_scene(&spec)?))
        })
        .collect::<Result<_>>()?;
    for (i, (spec, maps)) in scenes.iter().enumerate() {
        let id = format!("scene_{i:04}");
        let dir = a.out.join(&id);
        let mut extra = KvDoc::default();
        extra.set("scene", &id);
        extra.set("scene_seed", spec.seed);
        maps.write_dir(&dir, &extra)?;
        let spec_path = dir.join("spec.txt");
        fs::write(&spec_path, spec.to_kv().to_text()).map_err(|e| CkmError::io(&spec_path, e))?;
        for name in ["pgm1", "pam1", "pgm2", "pam2"] {
            s.manifest.output(&dir.join(format!("{name}.ckmt")))?;
        }
        s.manifest
            .output(&dir.join("meta.txt"))?
            .output(&spec_path)?;
        if maps.clamp_count > 0 {
            log::info!("{id}: {} gains clamped", maps.clamp_count);
        }
    }
    s.manifest.write_to_dir(&a.out)?;
    println!("wrote {count} scenes to {}", a.out.display());
    Ok(())
}

pub fn ingest(a: args::Ingest, mut s: Settings) -> Result<()> {
    let layout = match &a.layout {
        Some(p) => {
            s.manifest.input(p)?;
            Layout::from_kv(&read_kv(p)?)?
        }
        None => Layout::default(),
    };
    let cfg = prior_config(&mut s, &a.priors)?;
    s.manifest.setting("dataset", a.dataset.display());
    s.manifest.input(&a.dataset.join(&layout.metadata))?;
    let report = ingest_ckmimagenet(&a.dataset, &layout, &a.out, &cfg)?;
    s.manifest.setting("ingested", report.ingested.join(","));
    for (id, why) in &report.skipped {
        s.manifest.setting(&format!("skipped.{id}"), why);
    }
    s.manifest.write_to_dir(&a.out)?;
    println!(
        "ingested {} scenes, skipped {}",
        report.ingested.len(),
        report.skipped.len()
    );
    Ok(())
}

fn load_meta(scene: &Path) -> Result<SceneMeta> {
    SceneMeta::from_kv(&read_kv(&scene.join("meta.txt"))?)
}

pub fn priors(a: args::Priors, mut s: Settings) -> Result<()> {
    let cfg = prior_config(&mut s, &a.priors)?;
    let pgm_path = a.scene.join("pgm1.ckmt");
    let pgm = read_tensor(&pgm_path)?;
    s.manifest
        .input(&pgm_path)?
        .input(&a.scene.join("meta.txt"))?;
    let bundle = build_priors(&pgm, &load_meta(&a.scene)?, &cfg)?;
    let out = a.out.unwrap_or_else(|| a.scene.join("priors.ckmt"));
    emit_tensor(&mut s, &bundle.to_tensor()?, &out)?;
    println!(
        "BS at {:?}; priors written to {}",
        bundle.bs_pixel,
        out.display()
    );
    Ok(())
}

pub fn sample_cmd(a: args::Sample, mut s: Settings) -> Result<()> {
    let g = grid(&mut s, a.stride, a.offset)?;
    let lr = match (&a.input, &a.scene) {
        (Some(p), _) => {
            s.manifest.input(p)?;
            sample(&read_tensor(p)?, &g)?
        }
        (None, Some(dir)) => {
            let path = s.get("path", a.path, 1)?;
            let cfg = prior_config(&mut s, &a.priors)?;
            let maps = SceneMaps::read_dir(dir)?;
            for (name, _) in maps.named() {
                s.manifest.input(&dir.join(format!("{name}.ckmt")))?;
            }
            s.manifest.input(&dir.join("meta.txt"))?;
            observe(&maps, path, &g, &cfg)?
        }
        (None, None) => return Err(CkmError::invalid("give --in or --scene")),
    };
    emit_tensor(&mut s, &lr, &a.out)?;
    println!(
        "sampled {}x{} -> {}",
        lr.width(),
        lr.height(),
        a.out.display()
    );
    Ok(())
}

/// Gain and angle channels when present, else everything.
fn map_channels(t: &CkmTensor) -> Result<CkmTensor> {
    match (t.find(ChannelKind::GainDb), t.find(ChannelKind::AngleDeg)) {
        (Some(g), Some(a)) => t.channel_tensor(g).concat(&t.channel_tensor(a)),
        (Some(g), None) => Ok(t.channel_tensor(g)),
        (None, Some(a)) => Ok(t.channel_tensor(a)),
        (None, None) => Ok(t.clone()),
    }
}

fn complete_model<T: Real>(ckpt: &Path, lr: &CkmTensor, g: &SamplingGrid) -> Result<CkmTensor> {
    let (spec, store): (ModelSpec, ParamStore<T>) = load_checkpoint(ckpt)?;
    complete_with_model(&spec, &store, lr, g)
}

pub fn complete(a: args::Complete, mut s: Settings) -> Result<()> {
    let method = s.get("method", a.method, "bicubic".to_string())?;
    let g = grid(&mut s, a.stride, a.offset)?;
    s.manifest.input(&a.input)?;
    let lr = read_tensor(&a.input)?;
    let stride = g.stride();
    let full = match method.as_str() {
        "bicubic" => {
            s.manifest.setting("kernel", "keys a=-0.5, x_src=x/s");
            bicubic_upscale(&map_channels(&lr)?, stride)?
        }
        "knn" => {
            let k = s.get("k", a.k, 4)?;
            let power = s.get("power", a.power, 2.0)?;
            knn_complete(
                &map_channels(&lr)?,
                &g,
                (lr.width() * stride, lr.height() * stride),
                k,
                power,
            )?
        }
        "model" => {
            let ckpt = s
                .opt("model", a.model.map(|p| p.display().to_string()))?
                .map(PathBuf::from)
                .ok_or_else(|| CkmError::invalid("--method model needs --model <checkpoint>"))?;
            s.manifest.input(&ckpt)?;
            match read_checkpoint_header(&ckpt)?.1 {
                NumericMode::F32 => complete_model::<f32>(&ckpt, &lr, &g)?,
                NumericMode::F64 => complete_model::<f64>(&ckpt, &lr, &g)?,
            }
        }
        m => {
            return Err(CkmError::invalid(format!(
                "unknown method `{m}`; use bicubic, knn or model"
            )))
        }
    };
    emit_tensor(&mut s, &full, &a.out)?;
    println!(
        "{method} completion {}x{} -> {}",
        full.width(),
        full.height(),
        a.out.display()
    );
    Ok(())
}

fn load_samples<T: Real>(
    root: &Path,
    path: usize,
    g: &SamplingGrid,
    cfg: &PriorConfig,
    inputs: &InputChannels,
    mirror: bool,
    s: &mut Settings,
) -> Result<Vec<TrainSample<T>>> {
    let dirs = scene_dirs(root)?;
    for d in &dirs {
        s.manifest.input(&d.join("meta.txt"))?;
        s.manifest.input(&d.join(format!("pgm{path}.ckmt")))?;
    }
    dirs.par_iter()
        .map(|d| {
            let maps = SceneMaps::read_dir(d)?;
            if maps.pgm1.width() % g.stride() != 0 || maps.pgm1.height() % g.stride() != 0 {
                return Err(CkmError::invalid(format!(
                    "{}: grid is not a multiple of stride {}",
                    d.display(),
                    g.stride()
                )));
            }
            let flips: &[(bool, bool)] = if mirror {
                &[(false, false), (true, false), (false, true), (true, true)]
            } else {
                &[(false, false)]
            };
            flips
                .iter()
                .map(|&(fr, fc)| training_sample(&maps.mirrored(fr, fc)?, path, g, cfg, inputs))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().flatten().collect())
}

struct TrainJob<'a> {
    model: ModelSpec,
    ts: TrainSpec,
    path: usize,
    grid: SamplingGrid,
    cfg: PriorConfig,
    data: &'a Path,
    val: Option<&'a Path>,
    mirror: bool,
    out: &'a Path,
}

fn run_train<T: Real>(job: &TrainJob, s: &mut Settings) -> Result<usize> {
    let data = load_samples::<T>(
        job.data,
        job.path,
        &job.grid,
        &job.cfg,
        &job.model.inputs,
        job.mirror,
        s,
    )?;
    let val = match job.val {
        Some(v) => load_samples::<T>(
            v,
            job.path,
            &job.grid,
            &job.cfg,
            &job.model.inputs,
            false,
            s,
        )?,
        None => Vec::new(),
    };
    log::info!(
        "training on {} samples, {} parameters",
        data.len(),
        job.model.param_count()
    );
    let mut hook = |it: usize, _: &ParamStore<T>| -> Result<()> {
        if (it + 1) % 100 == 0 {
            log::info!("iteration {}", it + 1);
        }
        Ok(())
    };
    let outcome = train(&job.model, &data, &val, &job.ts, Some(&mut hook))?;
    create_parent(job.out)?;
    save_checkpoint(job.out, &job.model, &outcome.store)?;
    let mut curve_name = job.out.file_name().unwrap_or_default().to_os_string();
    curve_name.push(".loss.csv");
    let curve_path = job.out.with_file_name(curve_name);
    fs::write(&curve_path, loss_curve_csv(&outcome.curve))
        .map_err(|e| CkmError::io(&curve_path, e))?;
    s.manifest.output(job.out)?.output(&curve_path)?;
    s.manifest.write_beside(job.out)?;
    Ok(data.len())
}

pub fn train_cmd(a: args::Train, mut s: Settings) -> Result<()> {
    let path = s.get("path", a.path, 1)?;
    if path != 1 && path != 2 {
        return Err(CkmError::invalid(format!(
            "--path must be 1 or 2, got {path}"
        )));
    }
    let base = if path == 1 {
        ModelSpec::primary()
    } else {
        ModelSpec::secondary()
    };
    let defaults = TrainSpec::default();
    let inputs = InputChannels {
        los: base.inputs.los && !s.switch("no-los", a.no_los)?,
        building: !s.switch("no-building", a.no_building)?,
        bs: !s.switch("no-bs", a.no_bs)?,
    };
    let msff_default = base
        .msff_after_blocks
        .iter()
        .map(|k| k.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let g = grid(&mut s, a.stride, None)?;
    let model = ModelSpec {
        inputs,
        n_res_blocks: s.get("blocks", a.blocks, base.n_res_blocks)?,
        base_channels: s.get("channels", a.channels, base.base_channels)?,
        n_heads: s.get("heads", a.heads, base.n_heads)?,
        msff_after_blocks: parse_list(&s.get("msff", a.msff, msff_default)?)?,
        attn_pool: s.get("attn-pool", a.attn_pool, base.attn_pool)?,
        bicubic_skip: s.switch("bicubic-skip", a.bicubic_skip)?,
        upscale: g.stride(),
        ..base
    };
    model.validate()?;
    let ts = TrainSpec {
        batch_size: s.get("batch", a.batch, defaults.batch_size)?,
        lr_initial: s.get("lr", a.lr, defaults.lr_initial)?,
        max_iterations: s.get("iters", a.iters, defaults.max_iterations)?,
        plateau_epochs: s.get("plateau-epochs", a.plateau_epochs, defaults.plateau_epochs)?,
        lr_decay: s.get("lr-decay", a.lr_decay, defaults.lr_decay)?,
        seed: s.get("seed", a.seed, defaults.seed)?,
        epoch_iterations: s.opt("epoch-iters", a.epoch_iters)?,
        keep_best: s.switch("keep-best", a.keep_best)?,
        ..defaults
    };
    ts.validate()?;
    if ts.keep_best && a.val.is_none() {
        return Err(CkmError::invalid("--keep-best needs a --val set"));
    }
    let mode_name = s.get("mode", a.mode, "f32".to_string())?;
    let mode = NumericMode::parse(&mode_name)
        .ok_or_else(|| CkmError::invalid(format!("unknown mode `{mode_name}`; use f32 or f64")))?;
    let cfg = prior_config(&mut s, &a.priors)?;
    let job = TrainJob {
        model,
        ts,
        path,
        grid: g,
        cfg,
        data: &a.data,
        val: a.val.as_deref(),
        mirror: s.switch("mirror", a.mirror)?,
        out: &a.out,
    };
    let n = match mode {
        NumericMode::F32 => run_train::<f32>(&job, &mut s)?,
        NumericMode::F64 => run_train::<f64>(&job, &mut s)?,
    };
    println!(
        "trained on {n} samples for {} iterations -> {}",
        job.ts.max_iterations,
        a.out.display()
    );
    Ok(())
}

fn truth_mask(maps: &SceneMaps) -> Result<CkmTensor> {
    building_map(&maps.pgm1, PriorConfig::default().threshold_pixel)
}

fn summary_text(c: &CosineSummary) -> String {
    format!(
        "mean: {:.6}\nmedian: {:.6}\nmin: {:.6}\nmax: {:.6}\nfraction_above_{}: {:.6}\npixels: {}\nbuilding_pixels: {}\nuncovered_pixels: {}\n",
        c.mean, c.median, c.min, c.max, c.threshold, c.fraction_above, c.pixels, c.buildings, c.uncovered
    )
}

pub fn scm(a: args::Scm, mut s: Settings) -> Result<()> {
    let cfg = steering(&mut s, a.antennas, a.spacing)?;
    let mut load = |p: &Path| -> Result<CkmTensor> {
        s.manifest.input(p)?;
        read_tensor(p)
    };
    let (g1, a1, g2, a2) = (
        load(&a.pgm1)?,
        load(&a.pam1)?,
        load(&a.pgm2)?,
        load(&a.pam2)?,
    );
    let truth = SceneMaps::read_dir(&a.truth)?;
    let mask = truth_mask(&truth)?;
    let pred = ScmField::new(&g1.concat(&a1)?, &g2.concat(&a2)?, &mask, cfg)?;
    let reference = ScmField::new(
        &truth.pgm1.concat(&truth.pam1)?,
        &truth.pgm2.concat(&truth.pam2)?,
        &mask,
        cfg,
    )?;
    let cos = cosine_map(&pred, &reference, truth.pgm1.pixel_spacing_m())?;
    fs::create_dir_all(&a.out).map_err(|e| CkmError::io(&a.out, e))?;
    let t = a.out.join("cosine.ckmt");
    write_tensor(&cos.map, &t)?;
    let png = a.out.join("cosine.png");
    render_png(&cos.map, 0, Colormap::Heat, &png)?;
    let sum = a.out.join("summary.txt");
    fs::write(&sum, summary_text(&cos.summary)).map_err(|e| CkmError::io(&sum, e))?;
    s.manifest.output(&t)?.output(&png)?.output(&sum)?;
    s.manifest.write_to_dir(&a.out)?;
    print!("{}", summary_text(&cos.summary));
    Ok(())
}

/// `(path1, path2)` stacks from a prediction directory.
fn load_prediction(dir: &Path, s: &mut Settings) -> Result<[CkmTensor; 2]> {
    let mut read = |name: &str| -> Result<CkmTensor> {
        let p = dir.join(format!("{name}.ckmt"));
        s.manifest.input(&p)?;
        read_tensor(&p)
    };
    if dir.join("path1.ckmt").is_file() {
        Ok([read("path1")?, read("path2")?])
    } else {
        Ok([
            read("pgm1")?.concat(&read("pam1")?)?,
            read("pgm2")?.concat(&read("pam2")?)?,
        ])
    }
}

pub fn eval(a: args::Eval, mut s: Settings) -> Result<()> {
    let cfg = steering(&mut s, a.antennas, a.spacing)?;
    let g = grid(&mut s, a.stride, a.offset)?;
    let truth = SceneMaps::read_dir(&a.truth)?;
    for (name, _) in truth.named() {
        s.manifest.input(&a.truth.join(format!("{name}.ckmt")))?;
    }
    let pred = load_prediction(&a.pred, &mut s)?;
    let method = match a.method {
        Some(m) => m,
        None => read_kv(&a.pred.join("path1.ckmt.manifest.txt"))
            .ok()
            .and_then(|d| d.get("setting.method").map(str::to_string))
            .unwrap_or_else(|| "unknown".into()),
    };
    s.manifest.setting("method", &method);
    let mask = truth_mask(&truth)?;
    let mut report = EvalReport {
        method,
        rmse: Vec::new(),
        rmse_wrapped: Vec::new(),
        cosine: None,
        observation_deviation: Vec::new(),
        manifest: KvDoc::default(),
    };
    let mut stacks = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        let path = i + 1;
        let (tg, ta) = truth.path(path)?;
        let t = tg.concat(ta)?;
        let p = map_channels(p)?;
        if !p.same_grid(&t) {
            return Err(CkmError::invalid(format!(
                "path {path}: prediction is {}x{}, truth is {}x{}",
                p.width(),
                p.height(),
                t.width(),
                t.height()
            )));
        }
        report.rmse.push((path, masked_rmse(&p, &t, &mask)?));
        report
            .rmse_wrapped
            .push((path, masked_rmse_wrapped(&p, &t, &mask)?));
        let dev = observation_consistency(&p, &sample(&t, &g)?, &g)?;
        report
            .observation_deviation
            .push((path, dev.into_iter().fold(0.0, f64::max)));
        stacks.push((p, t));
    }
    let pf = ScmField::new(&stacks[0].0, &stacks[1].0, &mask, cfg)?;
    let tf = ScmField::new(&stacks[0].1, &stacks[1].1, &mask, cfg)?;
    let cos = cosine_map(&pf, &tf, truth.pgm1.pixel_spacing_m())?;
    report.cosine = Some(cos.summary);
    report.manifest = s.manifest.doc().clone();
    report.write(&a.report)?;
    s.manifest.output(&a.report)?;
    if !a.no_render {
        let mut name = a.report.file_stem().unwrap_or_default().to_os_string();
        name.push("_renders");
        let dir = a.report.with_file_name(name);
        fs::create_dir_all(&dir).map_err(|e| CkmError::io(&dir, e))?;
        for (i, (p, t)) in stacks.iter().enumerate() {
            for (ch, kind) in [(0, "pgm"), (1, "pam")] {
                for (who, src) in [("pred", p), ("truth", t)] {
                    let f = dir.join(format!("{who}_{kind}{}.png", i + 1));
                    render_png(src, ch, Colormap::Gray, &f)?;
                    s.manifest.output(&f)?;
                }
            }
        }
        let f = dir.join("cosine.png");
        render_png(&cos.map, 0, Colormap::Heat, &f)?;
        s.manifest.output(&f)?;
        let t = dir.join("cosine.ckmt");
        write_tensor(&cos.map, &t)?;
        s.manifest.output(&t)?;
        s.manifest.write_to_dir(&dir)?;
    }
    s.manifest.write_beside(&a.report)?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn selftest(a: args::Selftest, mut s: Settings) -> Result<()> {
    let seed = s.get("seed", a.seed, 0)?;
    let results = run_selftest(seed)?;
    let mut failed = Vec::new();
    for r in &results {
        println!(
            "{} {:<40} {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
        if !r.passed {
            failed.push(r.name.clone());
        }
    }
    if failed.is_empty() {
        println!("all {} checks passed", results.len());
        Ok(())
    } else {
        Err(CkmError::Numerical {
            name: "selftest".into(),
            message: format!("failed: {}", failed.join(", ")),
        })
    }
}
