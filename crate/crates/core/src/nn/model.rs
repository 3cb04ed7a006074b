//! E-SRResNet: an SRResNet backbone whose residual blocks carry spatial
//! multi-head attention, with multi-scale dilated fusion blocks between
//! selected residual blocks.

use rand::Rng as _;

use crate::baselines::Alignment;
use crate::error::{CkmError, Result};
use crate::kv::KvDoc;
use crate::rng::derived_rng;

use super::ops::{self, BnBatchStats, BnMode};
use super::params::ParamStore;
use super::real::Real;
use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Where attention sits inside a residual block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MhaPlacement {
    /// `x + MHA(BN(conv(PReLU(BN(conv(x))))))`.
    #[default]
    AfterBn2,
    /// `z + MHA(z)` with `z = x + BN(conv(PReLU(BN(conv(x)))))`.
    AfterSkip,
    /// Plain SRResNet block.
    Off,
}

impl MhaPlacement {
    pub fn name(self) -> &'static str {
        match self {
            MhaPlacement::AfterBn2 => "after_bn2",
            MhaPlacement::AfterSkip => "after_skip",
            MhaPlacement::Off => "off",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "after_bn2" => Some(MhaPlacement::AfterBn2),
            "after_skip" => Some(MhaPlacement::AfterSkip),
            "off" => Some(MhaPlacement::Off),
            _ => None,
        }
    }
}

/// Prior planes that follow the observed gain and angle planes, in the
/// order LoS, building, BS.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputChannels {
    pub los: bool,
    pub building: bool,
    pub bs: bool,
}

impl InputChannels {
    pub const ALL: Self = Self {
        los: true,
        building: true,
        bs: true,
    };

    /// Five planes for path 1, four (no LoS) for path 2.
    pub fn for_path(path: usize) -> Self {
        Self {
            los: path == 1,
            ..Self::ALL
        }
    }

    pub fn count(&self) -> usize {
        2 + self.los as usize + self.building as usize + self.bs as usize
    }

    /// Comma-separated prior names, possibly empty.
    pub fn names(&self) -> String {
        [
            (self.los, "los"),
            (self.building, "building"),
            (self.bs, "bs"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect::<Vec<_>>()
        .join(",")
    }

    pub fn parse(s: &str) -> Result<Self> {
        let mut out = Self {
            los: false,
            building: false,
            bs: false,
        };
        for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            match name {
                "los" => out.los = true,
                "building" => out.building = true,
                "bs" => out.bs = true,
                _ => return Err(CkmError::invalid(format!("unknown input prior `{name}`"))),
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Priors fed alongside the two observed planes.
    pub inputs: InputChannels,
    pub out_channels: usize,
    pub base_channels: usize,
    pub n_res_blocks: usize,
    pub n_heads: usize,
    /// Fusion block `k` runs after the `k`-th residual block (1-based, `k < n_res_blocks`).
    pub msff_after_blocks: Vec<usize>,
    /// Dilations of the two 3×3 fusion branches.
    pub msff_dilations: (usize, usize),
    pub upscale: usize,
    /// Kernel of the head and output convolutions.
    pub edge_kernel: usize,
    /// Attention runs on `p × p` average-pooled tokens; 1 is exact.
    pub attn_pool: usize,
    pub mha_placement: MhaPlacement,
    /// Long skip from the head features to the end of the trunk.
    pub global_skip: bool,
    /// Adds a bicubic enlargement of the first `out_channels` inputs to the output.
    pub bicubic_skip: bool,
}

impl ModelSpec {
    /// 16 blocks × 64 channels with the five-channel primary-path input.
    pub fn primary() -> Self {
        Self {
            inputs: InputChannels::ALL,
            out_channels: 2,
            base_channels: 64,
            n_res_blocks: 16,
            n_heads: 4,
            msff_after_blocks: vec![4, 8, 12],
            msff_dilations: (2, 5),
            upscale: 2,
            edge_kernel: 9,
            attn_pool: 1,
            mha_placement: MhaPlacement::AfterBn2,
            global_skip: true,
            bicubic_skip: false,
        }
    }

    /// 18 blocks × 128 channels with the four-channel secondary-path input.
    pub fn secondary() -> Self {
        Self {
            inputs: InputChannels::for_path(2),
            base_channels: 128,
            n_res_blocks: 18,
            ..Self::primary()
        }
    }

    /// 4 blocks × 16 channels, fusion after block 2.
    pub fn desk() -> Self {
        Self {
            base_channels: 16,
            n_res_blocks: 4,
            msff_after_blocks: vec![2],
            edge_kernel: 3,
            ..Self::primary()
        }
    }

    /// Input planes per pixel.
    pub fn in_channels(&self) -> usize {
        self.inputs.count()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CkmError::invalid(m));
        if self.out_channels == 0 || self.base_channels == 0 || self.n_res_blocks == 0 {
            return bad("channel and block counts must be positive".into());
        }
        if self.n_heads == 0 || self.base_channels % self.n_heads != 0 {
            return bad(format!(
                "{} heads do not divide {} channels",
                self.n_heads, self.base_channels
            ));
        }
        for &k in &self.msff_after_blocks {
            if k == 0 || k >= self.n_res_blocks {
                return bad(format!(
                    "fusion position {k} must lie in [1, {})",
                    self.n_res_blocks
                ));
            }
        }
        let mut sorted = self.msff_after_blocks.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.msff_after_blocks.len() {
            return bad("fusion positions must be distinct".into());
        }
        if self.msff_dilations.0 == 0 || self.msff_dilations.1 == 0 {
            return bad("dilations must be positive".into());
        }
        if self.upscale < 2 {
            return bad(format!("upscale {} must be at least 2", self.upscale));
        }
        if self.edge_kernel % 2 == 0 {
            return bad(format!("edge kernel {} must be odd", self.edge_kernel));
        }
        if self.attn_pool == 0 {
            return bad("attention pooling factor must be at least 1".into());
        }
        if self.bicubic_skip && self.out_channels > self.in_channels() {
            return bad("bicubic skip needs at least out_channels inputs".into());
        }
        Ok(())
    }

    /// Number of trainable scalars:
    ///
    /// * head: `I·C·e² + C` conv plus `C` slopes
    /// * residual block: two 3×3 convs `2(9C² + C)`, two BNs `4C`, slopes `C`,
    ///   and when attention is on four projections `4(C² + C)`
    /// * fusion block: `C² + C`, `2(9C² + C)`, fusion `3C² + C`
    /// * trunk tail: `9C² + C` conv plus `2C` BN
    /// * upsampler: `9·C·C r² + C r²` conv plus `C` slopes
    /// * output: `C·O·e² + O`
    pub fn param_count(&self) -> usize {
        let (i, c, o, e) = (
            self.in_channels(),
            self.base_channels,
            self.out_channels,
            self.edge_kernel,
        );
        let r2 = self.upscale * self.upscale;
        let mha = if self.mha_placement == MhaPlacement::Off {
            0
        } else {
            4 * (c * c + c)
        };
        let head = i * c * e * e + c + c;
        let block = 2 * (9 * c * c + c) + 4 * c + c + mha;
        let msff = (c * c + c) + 2 * (9 * c * c + c) + (3 * c * c + c);
        let tail = 9 * c * c + c + 2 * c;
        let up = 9 * c * c * r2 + c * r2 + c;
        let out = c * o * e * e + o;
        head + self.n_res_blocks * block + self.msff_after_blocks.len() * msff + tail + up + out
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::default();
        d.set("inputs", self.inputs.names());
        d.set("out_channels", self.out_channels);
        d.set("base_channels", self.base_channels);
        d.set("n_res_blocks", self.n_res_blocks);
        d.set("n_heads", self.n_heads);
        d.set(
            "msff_after_blocks",
            self.msff_after_blocks
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        d.set(
            "msff_dilations",
            format!("{},{}", self.msff_dilations.0, self.msff_dilations.1),
        );
        d.set("upscale", self.upscale);
        d.set("edge_kernel", self.edge_kernel);
        d.set("attn_pool", self.attn_pool);
        d.set("mha_placement", self.mha_placement.name());
        d.set("global_skip", self.global_skip);
        d.set("bicubic_skip", self.bicubic_skip);
        d
    }

    pub fn from_kv(d: &KvDoc) -> Result<Self> {
        let list = |key: &str| -> Result<Vec<usize>> {
            let raw: String = d.require(key)?;
            if raw.trim().is_empty() {
                return Ok(Vec::new());
            }
            raw.split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| CkmError::invalid(format!("`{key}`: `{s}` is not an index")))
                })
                .collect()
        };
        let dil = list("msff_dilations")?;
        if dil.len() != 2 {
            return Err(CkmError::invalid("`msff_dilations` needs two values"));
        }
        let placement: String = d.require("mha_placement")?;
        let spec = Self {
            inputs: InputChannels::parse(d.get("inputs").ok_or_else(|| CkmError::Metadata {
                line: 0,
                message: "missing key `inputs`".into(),
            })?)?,
            out_channels: d.require("out_channels")?,
            base_channels: d.require("base_channels")?,
            n_res_blocks: d.require("n_res_blocks")?,
            n_heads: d.require("n_heads")?,
            msff_after_blocks: list("msff_after_blocks")?,
            msff_dilations: (dil[0], dil[1]),
            upscale: d.require("upscale")?,
            edge_kernel: d.require("edge_kernel")?,
            attn_pool: d.require("attn_pool")?,
            mha_placement: MhaPlacement::parse(&placement).ok_or_else(|| {
                CkmError::invalid(format!("unknown attention placement `{placement}`"))
            })?,
            global_skip: d.require("global_skip")?,
            bicubic_skip: d.require("bicubic_skip")?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Parameter builder with a fan-in-scaled uniform initialiser.
pub struct Initializer<'a, T> {
    store: &'a mut ParamStore<T>,
    seed: u64,
}

impl<'a, T: Real> Initializer<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        Self { store, seed }
    }

    fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<()> {
        let mut rng = derived_rng(self.seed, self.store.params().len() as u64);
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::of(rng.random_range(-bound..bound)))
            .collect();
        self.store.add(name, Tensor::new(shape.to_vec(), data)?)?;
        Ok(())
    }

    pub fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) -> Result<()> {
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        self.uniform(&format!("{prefix}.weight"), &[cout, cin, k, k], bound)?;
        self.uniform(&format!("{prefix}.bias"), &[cout], bound)
    }

    pub fn prelu(&mut self, name: &str, c: usize) -> Result<()> {
        self.store.add(name, Tensor::filled(&[c], T::of(0.25)))?;
        Ok(())
    }

    pub fn bn(&mut self, prefix: &str, c: usize) -> Result<()> {
        self.store
            .add(&format!("{prefix}.gamma"), Tensor::filled(&[c], T::one()))?;
        self.store
            .add(&format!("{prefix}.beta"), Tensor::zeros(&[c]))?;
        self.store
            .add_buffer(&format!("{prefix}.running_mean"), Tensor::zeros(&[c]))?;
        self.store.add_buffer(
            &format!("{prefix}.running_var"),
            Tensor::filled(&[c], T::one()),
        )?;
        Ok(())
    }

    pub fn mha(&mut self, prefix: &str, c: usize) -> Result<()> {
        for proj in ["q", "k", "v", "out"] {
            self.conv(&format!("{prefix}.{proj}"), c, c, 1)?;
        }
        Ok(())
    }

    pub fn residual_block(
        &mut self,
        prefix: &str,
        c: usize,
        placement: MhaPlacement,
    ) -> Result<()> {
        self.conv(&format!("{prefix}.conv1"), c, c, 3)?;
        self.bn(&format!("{prefix}.bn1"), c)?;
        self.prelu(&format!("{prefix}.prelu"), c)?;
        self.conv(&format!("{prefix}.conv2"), c, c, 3)?;
        self.bn(&format!("{prefix}.bn2"), c)?;
        if placement != MhaPlacement::Off {
            self.mha(&format!("{prefix}.mha"), c)?;
        }
        Ok(())
    }

    pub fn msff(&mut self, prefix: &str, c: usize) -> Result<()> {
        self.conv(&format!("{prefix}.branch1"), c, c, 1)?;
        self.conv(&format!("{prefix}.branch2"), c, c, 3)?;
        self.conv(&format!("{prefix}.branch3"), c, c, 3)?;
        self.conv(&format!("{prefix}.fuse"), 3 * c, c, 1)
    }
}

/// Fresh parameters for `spec`; identical seeds give identical stores.
pub fn init_params<T: Real>(spec: &ModelSpec, seed: u64) -> Result<ParamStore<T>> {
    spec.validate()?;
    let c = spec.base_channels;
    let r2 = spec.upscale * spec.upscale;
    let mut store = ParamStore::new();
    let mut init = Initializer::new(&mut store, seed);
    init.conv("head.conv", spec.in_channels(), c, spec.edge_kernel)?;
    init.prelu("head.prelu", c)?;
    for b in 1..=spec.n_res_blocks {
        init.residual_block(&format!("blocks.{b}"), c, spec.mha_placement)?;
        if spec.msff_after_blocks.contains(&b) {
            init.msff(&format!("msff.{b}"), c)?;
        }
    }
    init.conv("tail.conv", c, c, 3)?;
    init.bn("tail.bn", c)?;
    init.conv("up.conv", c, c * r2, 3)?;
    init.prelu("up.prelu", c)?;
    init.conv("out.conv", c, spec.out_channels, spec.edge_kernel)?;
    if spec.bicubic_skip {
        // The untrained model is exactly the bicubic enlargement.
        for name in ["out.conv.weight", "out.conv.bias"] {
            let shape = store.get(name)?.shape().to_vec();
            store.set(name, Tensor::zeros(&shape))?;
        }
    }
    Ok(store)
}

/// Records layers onto a tape against a parameter store.
pub struct Layers<'s, T> {
    store: &'s ParamStore<T>,
    phase: Phase,
    bn_updates: Vec<(String, BnBatchStats)>,
}

impl<'s, T: Real> Layers<'s, T> {
    pub fn new(store: &'s ParamStore<T>, phase: Phase) -> Self {
        Self {
            store,
            phase,
            bn_updates: Vec::new(),
        }
    }

    /// Batch statistics gathered in train phase, keyed by BN prefix.
    pub fn into_bn_updates(self) -> Vec<(String, BnBatchStats)> {
        self.bn_updates
    }

    pub fn param(&self, tape: &mut Tape<T>, name: &str) -> Result<Var> {
        let i = self.store.index_of(name)?;
        Ok(tape.param(i, self.store.params()[i].value().clone()))
    }

    pub fn conv(
        &mut self,
        tape: &mut Tape<T>,
        prefix: &str,
        x: Var,
        dilation: usize,
    ) -> Result<Var> {
        let w = self.param(tape, &format!("{prefix}.weight"))?;
        let b = self.param(tape, &format!("{prefix}.bias"))?;
        ops::conv2d(tape, x, w, Some(b), dilation)
    }

    pub fn prelu(&mut self, tape: &mut Tape<T>, name: &str, x: Var) -> Result<Var> {
        let a = self.param(tape, name)?;
        ops::prelu(tape, x, a)
    }

    pub fn bn(&mut self, tape: &mut Tape<T>, prefix: &str, x: Var) -> Result<Var> {
        let g = self.param(tape, &format!("{prefix}.gamma"))?;
        let b = self.param(tape, &format!("{prefix}.beta"))?;
        match self.phase {
            Phase::Train => {
                let (y, stats) = ops::batch_norm(tape, x, g, b, BnMode::Train)?;
                if let Some(s) = stats {
                    self.bn_updates.push((prefix.to_string(), s));
                }
                Ok(y)
            }
            Phase::Eval => {
                let mean = self.store.buffer(&format!("{prefix}.running_mean"))?.data();
                let var = self.store.buffer(&format!("{prefix}.running_var"))?.data();
                Ok(ops::batch_norm(tape, x, g, b, BnMode::Eval { mean, var })?.0)
            }
        }
    }

    /// Spatial multi-head self-attention with 1×1 projections, optionally on
    /// `pool × pool` averaged tokens broadcast back to full resolution.
    pub fn mha(
        &mut self,
        tape: &mut Tape<T>,
        prefix: &str,
        x: Var,
        heads: usize,
        pool: usize,
    ) -> Result<Var> {
        let src = if pool > 1 {
            ops::avg_pool(tape, x, pool)?
        } else {
            x
        };
        let q = self.conv(tape, &format!("{prefix}.q"), src, 1)?;
        let k = self.conv(tape, &format!("{prefix}.k"), src, 1)?;
        let v = self.conv(tape, &format!("{prefix}.v"), src, 1)?;
        let a = ops::attention(tape, q, k, v, heads)?;
        let o = self.conv(tape, &format!("{prefix}.out"), a, 1)?;
        if pool > 1 {
            ops::upsample_nearest(tape, o, pool)
        } else {
            Ok(o)
        }
    }

    pub fn residual_block(
        &mut self,
        tape: &mut Tape<T>,
        prefix: &str,
        x: Var,
        heads: usize,
        pool: usize,
        placement: MhaPlacement,
    ) -> Result<Var> {
        let h = self.conv(tape, &format!("{prefix}.conv1"), x, 1)?;
        let h = self.bn(tape, &format!("{prefix}.bn1"), h)?;
        let h = self.prelu(tape, &format!("{prefix}.prelu"), h)?;
        let h = self.conv(tape, &format!("{prefix}.conv2"), h, 1)?;
        let h = self.bn(tape, &format!("{prefix}.bn2"), h)?;
        let mha = format!("{prefix}.mha");
        match placement {
            MhaPlacement::AfterBn2 => {
                let a = self.mha(tape, &mha, h, heads, pool)?;
                ops::add(tape, x, a)
            }
            MhaPlacement::AfterSkip => {
                let z = ops::add(tape, x, h)?;
                let a = self.mha(tape, &mha, z, heads, pool)?;
                ops::add(tape, z, a)
            }
            MhaPlacement::Off => ops::add(tape, x, h),
        }
    }

    pub fn msff(
        &mut self,
        tape: &mut Tape<T>,
        prefix: &str,
        x: Var,
        dilations: (usize, usize),
    ) -> Result<Var> {
        let b1 = self.conv(tape, &format!("{prefix}.branch1"), x, 1)?;
        let b2 = self.conv(tape, &format!("{prefix}.branch2"), x, dilations.0)?;
        let b3 = self.conv(tape, &format!("{prefix}.branch3"), x, dilations.1)?;
        let cat = ops::concat(tape, &[b1, b2, b3])?;
        let f = self.conv(tape, &format!("{prefix}.fuse"), cat, 1)?;
        ops::add(tape, x, f)
    }
}

/// Result of recording a forward pass.
pub struct Forward {
    pub output: Var,
    pub bn_updates: Vec<(String, BnBatchStats)>,
}

/// Records the full network on `tape` for an `N × in_channels × H × W` input.
pub fn forward<T: Real>(
    spec: &ModelSpec,
    store: &ParamStore<T>,
    tape: &mut Tape<T>,
    input: Var,
    phase: Phase,
) -> Result<Forward> {
    let (_, c_in, h, w) = tape.value(input).dims4()?;
    if c_in != spec.in_channels() {
        return Err(CkmError::invalid(format!(
            "model expects {} input channels, got {c_in}",
            spec.in_channels()
        )));
    }
    if spec.attn_pool > 1 && (h % spec.attn_pool != 0 || w % spec.attn_pool != 0) {
        return Err(CkmError::invalid(format!(
            "{h}x{w} input is not divisible by the attention pooling factor {}",
            spec.attn_pool
        )));
    }
    store.ensure_finite()?;
    let mut l = Layers::new(store, phase);
    let x = l.conv(tape, "head.conv", input, 1)?;
    let head = l.prelu(tape, "head.prelu", x)?;
    let mut x = head;
    for b in 1..=spec.n_res_blocks {
        x = l.residual_block(
            tape,
            &format!("blocks.{b}"),
            x,
            spec.n_heads,
            spec.attn_pool,
            spec.mha_placement,
        )?;
        if spec.msff_after_blocks.contains(&b) {
            x = l.msff(tape, &format!("msff.{b}"), x, spec.msff_dilations)?;
        }
    }
    let t = l.conv(tape, "tail.conv", x, 1)?;
    let mut t = l.bn(tape, "tail.bn", t)?;
    if spec.global_skip {
        t = ops::add(tape, t, head)?;
    }
    let u = l.conv(tape, "up.conv", t, 1)?;
    let u = ops::pixel_shuffle(tape, u, spec.upscale)?;
    let u = l.prelu(tape, "up.prelu", u)?;
    let mut out = l.conv(tape, "out.conv", u, 1)?;
    if spec.bicubic_skip {
        let base = ops::select_channels(tape, input, 0, spec.out_channels)?;
        let up = ops::bicubic_upsample(tape, base, spec.upscale, Alignment::Corner)?;
        out = ops::add(tape, out, up)?;
    }
    Ok(Forward {
        output: out,
        bn_updates: l.into_bn_updates(),
    })
}

/// Folds train-phase batch statistics into the running buffers.
pub fn apply_bn_updates<T: Real>(
    store: &mut ParamStore<T>,
    updates: &[(String, BnBatchStats)],
) -> Result<()> {
    for (prefix, stats) in updates {
        let mut mean = store.buffer(&format!("{prefix}.running_mean"))?.clone();
        let mut var = store.buffer(&format!("{prefix}.running_var"))?.clone();
        ops::update_running_stats(mean.data_mut(), var.data_mut(), stats);
        store.set_buffer(&format!("{prefix}.running_mean"), mean)?;
        store.set_buffer(&format!("{prefix}.running_var"), var)?;
    }
    Ok(())
}

/// Eval-phase prediction without gradient bookkeeping.
pub fn predict<T: Real>(
    spec: &ModelSpec,
    store: &ParamStore<T>,
    input: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::inference();
    let x = tape.constant(input.clone());
    let f = forward(spec, store, &mut tape, x, Phase::Eval)?;
    let out = tape.value(f.output).clone();
    if !out.all_finite() {
        return Err(CkmError::Numerical {
            name: "output".into(),
            message: "forward pass produced a non-finite value".into(),
        });
    }
    Ok(out)
}
