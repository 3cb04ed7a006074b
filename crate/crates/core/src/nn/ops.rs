//! Differentiable operations on `N × C × H × W` batches.

use crate::baselines::{cubic_taps, Alignment};
use crate::error::{CkmError, Result};

use super::real::{gemm, Real, Strides};
use super::tape::{Tape, Var};
use super::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

fn acc<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

fn require_same_shape<T: Real>(tape: &Tape<T>, a: Var, b: Var, op: &str) -> Result<()> {
    let (sa, sb) = (tape.value(a).shape(), tape.value(b).shape());
    if sa != sb {
        return Err(CkmError::invalid(format!(
            "{op}: shapes {sa:?} and {sb:?} differ"
        )));
    }
    Ok(())
}

pub fn add<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    require_same_shape(tape, a, b, "add")?;
    let mut out = tape.value(a).clone();
    acc(out.data_mut(), tape.value(b).data());
    Ok(tape.push(
        out,
        &[a, b],
        Box::new(move |g, tape, grads| {
            for v in [a, b] {
                if grads.wants(v) {
                    acc(grads.slot(tape, v), g.data());
                }
            }
        }),
    ))
}

/// Copies the receptive-field taps of one sample into a
/// `(C·k·k) × (H·W)` matrix; out-of-range taps are zero.
fn im2col<T: Real>(x: &[T], cin: usize, h: usize, w: usize, k: usize, d: usize, cols: &mut [T]) {
    let pad = (d * (k - 1) / 2) as isize;
    let hw = h * w;
    for c in 0..cin {
        let plane = &x[c * hw..(c + 1) * hw];
        for ki in 0..k {
            let dy = (ki * d) as isize - pad;
            for kj in 0..k {
                let dx = (kj * d) as isize - pad;
                let row = ((c * k + ki) * k + kj) * hw;
                let (lo, hi) = valid_span(w, dx);
                for y in 0..h {
                    let out = &mut cols[row + y * w..row + (y + 1) * w];
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || lo >= hi {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    out[..lo].fill(T::zero());
                    out[hi..].fill(T::zero());
                    out[lo..hi].copy_from_slice(
                        &src[(lo as isize + dx) as usize..(hi as isize + dx) as usize],
                    );
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the sample.
fn col2im<T: Real>(
    cols: &[T],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    d: usize,
    dx_out: &mut [T],
) {
    let pad = (d * (k - 1) / 2) as isize;
    let hw = h * w;
    for c in 0..cin {
        let plane = &mut dx_out[c * hw..(c + 1) * hw];
        for ki in 0..k {
            let dy = (ki * d) as isize - pad;
            for kj in 0..k {
                let dx = (kj * d) as isize - pad;
                let row = ((c * k + ki) * k + kj) * hw;
                let (lo, hi) = valid_span(w, dx);
                if lo >= hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &cols[row + y * w + lo..row + y * w + hi];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    acc(
                        &mut dst[(lo as isize + dx) as usize..(hi as isize + dx) as usize],
                        src,
                    );
                }
            }
        }
    }
}

/// Output columns `[lo, hi)` whose source `x + dx` lies inside `[0, w)`.
fn valid_span(w: usize, dx: isize) -> (usize, usize) {
    let lo = (-dx).clamp(0, w as isize) as usize;
    let hi = (w as isize - dx).clamp(0, w as isize) as usize;
    (lo, hi)
}

/// Dilated "same" cross-correlation. Weights are `C_out × C_in × k × k`
/// with odd `k`; padding is `dilation·(k−1)/2`.
pub fn conv2d<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    dilation: usize,
) -> Result<Var> {
    let (n, cin, h, wd) = tape.value(x).dims4()?;
    let (cout, wc, kh, kw) = tape.value(w).dims4()?;
    if wc != cin {
        return Err(CkmError::invalid(format!(
            "conv2d: weights expect {wc} input channels, input has {cin}"
        )));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(CkmError::invalid(format!(
            "conv2d: kernel {kh}x{kw} must be square and odd"
        )));
    }
    if dilation == 0 {
        return Err(CkmError::invalid("conv2d: dilation must be at least 1"));
    }
    if let Some(b) = b {
        if tape.value(b).shape() != [cout] {
            return Err(CkmError::invalid(format!(
                "conv2d: bias shape {:?} does not match {cout} output channels",
                tape.value(b).shape()
            )));
        }
    }
    let k = kh;
    let hw = h * wd;
    let ckk = cin * k * k;
    let mut out = vec![T::zero(); n * cout * hw];
    {
        let xv = tape.value(x).data();
        let wv = tape.value(w).data();
        let bv = b.map(|b| tape.value(b).data());
        let mut cols = if k == 1 {
            Vec::new()
        } else {
            vec![T::zero(); ckk * hw]
        };
        for s in 0..n {
            let xs = &xv[s * cin * hw..(s + 1) * cin * hw];
            let src: &[T] = if k == 1 {
                xs
            } else {
                im2col(xs, cin, h, wd, k, dilation, &mut cols);
                &cols
            };
            let os = &mut out[s * cout * hw..(s + 1) * cout * hw];
            gemm(
                cout,
                ckk,
                hw,
                T::one(),
                wv,
                Strides::rm(ckk),
                src,
                Strides::rm(hw),
                T::zero(),
                os,
                Strides::rm(hw),
            );
            if let Some(bv) = bv {
                for (o, row) in os.chunks_exact_mut(hw).enumerate() {
                    row.iter_mut().for_each(|v| *v += bv[o]);
                }
            }
        }
    }
    let out = Tensor::new(vec![n, cout, h, wd], out)?;
    let mut inputs = vec![x, w];
    inputs.extend(b);
    Ok(tape.push(
        out,
        &inputs,
        Box::new(move |g, tape, grads| {
            let xv = tape.value(x).data();
            let wv = tape.value(w).data();
            let gv = g.data();
            let want_x = grads.wants(x);
            let want_w = grads.wants(w);
            let want_b = b.is_some_and(|b| grads.wants(b));
            let mut dw = vec![T::zero(); if want_w { cout * ckk } else { 0 }];
            let mut dx = vec![T::zero(); if want_x { n * cin * hw } else { 0 }];
            let mut cols = if k == 1 || !want_w {
                Vec::new()
            } else {
                vec![T::zero(); ckk * hw]
            };
            let mut dcols = if k == 1 || !want_x {
                Vec::new()
            } else {
                vec![T::zero(); ckk * hw]
            };
            for s in 0..n {
                let gs = &gv[s * cout * hw..(s + 1) * cout * hw];
                if want_w {
                    let xs = &xv[s * cin * hw..(s + 1) * cin * hw];
                    let src: &[T] = if k == 1 {
                        xs
                    } else {
                        im2col(xs, cin, h, wd, k, dilation, &mut cols);
                        &cols
                    };
                    gemm(
                        cout,
                        hw,
                        ckk,
                        T::one(),
                        gs,
                        Strides::rm(hw),
                        src,
                        Strides::tr(hw),
                        T::one(),
                        &mut dw,
                        Strides::rm(ckk),
                    );
                }
                if want_x {
                    let dxs = &mut dx[s * cin * hw..(s + 1) * cin * hw];
                    if k == 1 {
                        gemm(
                            cin,
                            cout,
                            hw,
                            T::one(),
                            wv,
                            Strides::tr(ckk),
                            gs,
                            Strides::rm(hw),
                            T::zero(),
                            dxs,
                            Strides::rm(hw),
                        );
                    } else {
                        gemm(
                            ckk,
                            cout,
                            hw,
                            T::one(),
                            wv,
                            Strides::tr(ckk),
                            gs,
                            Strides::rm(hw),
                            T::zero(),
                            &mut dcols,
                            Strides::rm(hw),
                        );
                        col2im(&dcols, cin, h, wd, k, dilation, dxs);
                    }
                }
            }
            if want_w {
                acc(grads.slot(tape, w), &dw);
            }
            if want_x {
                acc(grads.slot(tape, x), &dx);
            }
            if let (Some(b), true) = (b, want_b) {
                let db = grads.slot(tape, b);
                for s in 0..n {
                    for (o, row) in gv[s * cout * hw..(s + 1) * cout * hw]
                        .chunks_exact(hw)
                        .enumerate()
                    {
                        db[o] += row.iter().copied().sum::<T>();
                    }
                }
            }
        }),
    ))
}

/// Per-channel leaky rectifier with learnable negative slope `a: [C]`.
pub fn prelu<T: Real>(tape: &mut Tape<T>, x: Var, a: Var) -> Result<Var> {
    let (_, c, h, w) = tape.value(x).dims4()?;
    if tape.value(a).shape() != [c] {
        return Err(CkmError::invalid(format!(
            "prelu: slope shape {:?} does not match {c} channels",
            tape.value(a).shape()
        )));
    }
    let hw = h * w;
    let av = tape.value(a).data().to_vec();
    let mut out = tape.value(x).clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if *v < T::zero() {
            *v *= av[(i / hw) % c];
        }
    }
    Ok(tape.push(
        out,
        &[x, a],
        Box::new(move |g, tape, grads| {
            let xv = tape.value(x).data();
            let av = tape.value(a).data();
            let gv = g.data();
            if grads.wants(a) {
                let mut da = vec![T::zero(); c];
                for (i, (&xi, &gi)) in xv.iter().zip(gv).enumerate() {
                    if xi < T::zero() {
                        da[(i / hw) % c] += gi * xi;
                    }
                }
                acc(grads.slot(tape, a), &da);
            }
            if grads.wants(x) {
                let dx = grads.slot(tape, x);
                for (i, (&xi, &gi)) in xv.iter().zip(gv).enumerate() {
                    dx[i] += if xi < T::zero() {
                        gi * av[(i / hw) % c]
                    } else {
                        gi
                    };
                }
            }
        }),
    ))
}

/// Batch-norm statistics source.
#[derive(Debug, Clone, Copy)]
pub enum BnMode<'a, T> {
    /// Normalise by the batch statistics.
    Train,
    /// Normalise by stored running statistics.
    Eval { mean: &'a [T], var: &'a [T] },
}

/// Per-channel batch statistics observed in train mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (`M − 1`) variance, the running-average input.
    pub var_unbiased: Vec<f64>,
}

/// `running ← (1 − momentum)·running + momentum·batch`.
pub fn update_running_stats<T: Real>(
    running_mean: &mut [T],
    running_var: &mut [T],
    stats: &BnBatchStats,
) {
    let m = BN_MOMENTUM;
    for (r, &b) in running_mean.iter_mut().zip(&stats.mean) {
        *r = T::of((1.0 - m) * r.as_f64() + m * b);
    }
    for (r, &b) in running_var.iter_mut().zip(&stats.var_unbiased) {
        *r = T::of((1.0 - m) * r.as_f64() + m * b);
    }
}

pub fn batch_norm<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    mode: BnMode<'_, T>,
) -> Result<(Var, Option<BnBatchStats>)> {
    let (n, c, h, w) = tape.value(x).dims4()?;
    for p in [gamma, beta] {
        if tape.value(p).shape() != [c] {
            return Err(CkmError::invalid(format!(
                "batch_norm: affine shape {:?} does not match {c} channels",
                tape.value(p).shape()
            )));
        }
    }
    let hw = h * w;
    let m = n * hw;
    let xv = tape.value(x).data();
    let (mean, var, stats) = match mode {
        BnMode::Train => {
            if m < 2 {
                return Err(CkmError::invalid(
                    "batch_norm: train mode needs at least two values per channel",
                ));
            }
            let mut mean = vec![0.0f64; c];
            let mut var = vec![0.0f64; c];
            for ch in 0..c {
                let mut s = 0.0;
                for smp in 0..n {
                    s += xv[(smp * c + ch) * hw..][..hw]
                        .iter()
                        .map(|v| v.as_f64())
                        .sum::<f64>();
                }
                let mu = s / m as f64;
                let mut q = 0.0;
                for smp in 0..n {
                    q += xv[(smp * c + ch) * hw..][..hw]
                        .iter()
                        .map(|v| (v.as_f64() - mu).powi(2))
                        .sum::<f64>();
                }
                mean[ch] = mu;
                var[ch] = q / m as f64;
            }
            let unbiased = var.iter().map(|v| v * m as f64 / (m - 1) as f64).collect();
            let stats = BnBatchStats {
                mean: mean.clone(),
                var_unbiased: unbiased,
            };
            (mean, var, Some(stats))
        }
        BnMode::Eval { mean, var } => {
            if mean.len() != c || var.len() != c {
                return Err(CkmError::invalid(
                    "batch_norm: running statistics length mismatch",
                ));
            }
            (
                mean.iter().map(|v| v.as_f64()).collect(),
                var.iter().map(|v| v.as_f64()).collect(),
                None,
            )
        }
    };
    let inv: Vec<T> = var
        .iter()
        .map(|v| T::of(1.0 / (v + BN_EPS).sqrt()))
        .collect();
    let mean: Vec<T> = mean.iter().map(|&v| T::of(v)).collect();
    let gv = tape.value(gamma).data();
    let bv = tape.value(beta).data();
    let mut xhat = vec![T::zero(); xv.len()];
    let mut out = vec![T::zero(); xv.len()];
    for (i, (&xi, (xh, o))) in xv
        .iter()
        .zip(xhat.iter_mut().zip(out.iter_mut()))
        .enumerate()
    {
        let ch = (i / hw) % c;
        *xh = (xi - mean[ch]) * inv[ch];
        *o = gv[ch] * *xh + bv[ch];
    }
    let train = stats.is_some();
    let out = Tensor::new(vec![n, c, h, w], out)?;
    let xhat = if tape.tracks(&[x, gamma, beta]) {
        xhat
    } else {
        Vec::new()
    };
    let v = tape.push(
        out,
        &[x, gamma, beta],
        Box::new(move |g, tape, grads| {
            let gv = g.data();
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gx = vec![T::zero(); c];
            for (i, (&gi, &xh)) in gv.iter().zip(&xhat).enumerate() {
                let ch = (i / hw) % c;
                sum_g[ch] += gi;
                sum_gx[ch] += gi * xh;
            }
            if grads.wants(beta) {
                acc(grads.slot(tape, beta), &sum_g);
            }
            if grads.wants(gamma) {
                acc(grads.slot(tape, gamma), &sum_gx);
            }
            if grads.wants(x) {
                let gam: Vec<T> = tape.value(gamma).data().to_vec();
                let mf = T::of(m as f64);
                let dx = grads.slot(tape, x);
                for (i, (&gi, &xh)) in gv.iter().zip(&xhat).enumerate() {
                    let ch = (i / hw) % c;
                    dx[i] += if train {
                        gam[ch] * inv[ch] / mf * (mf * gi - sum_g[ch] - xh * sum_gx[ch])
                    } else {
                        gam[ch] * inv[ch] * gi
                    };
                }
            }
        }),
    );
    Ok((v, stats))
}

/// Non-overlapping `p × p` average pooling; `H` and `W` must be multiples of `p`.
pub fn avg_pool<T: Real>(tape: &mut Tape<T>, x: Var, p: usize) -> Result<Var> {
    let (n, c, h, w) = tape.value(x).dims4()?;
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(CkmError::invalid(format!(
            "avg_pool: {h}x{w} is not divisible by {p}"
        )));
    }
    let (ho, wo) = (h / p, w / p);
    let scale = T::of(1.0 / (p * p) as f64);
    let xv = tape.value(x).data();
    let mut out = vec![T::zero(); n * c * ho * wo];
    for (plane, o) in xv.chunks_exact(h * w).zip(out.chunks_exact_mut(ho * wo)) {
        for y in 0..h {
            for xx in 0..w {
                o[(y / p) * wo + xx / p] += plane[y * w + xx];
            }
        }
        o.iter_mut().for_each(|v| *v *= scale);
    }
    let out = Tensor::new(vec![n, c, ho, wo], out)?;
    Ok(tape.push(
        out,
        &[x],
        Box::new(move |g, tape, grads| {
            let dx = grads.slot(tape, x);
            for (plane, gp) in dx
                .chunks_exact_mut(h * w)
                .zip(g.data().chunks_exact(ho * wo))
            {
                for y in 0..h {
                    for xx in 0..w {
                        plane[y * w + xx] += gp[(y / p) * wo + xx / p] * scale;
                    }
                }
            }
        }),
    ))
}

/// Nearest-neighbour enlargement by an integer factor.
pub fn upsample_nearest<T: Real>(tape: &mut Tape<T>, x: Var, p: usize) -> Result<Var> {
    let (n, c, h, w) = tape.value(x).dims4()?;
    if p == 0 {
        return Err(CkmError::invalid(
            "upsample_nearest: factor must be at least 1",
        ));
    }
    let (ho, wo) = (h * p, w * p);
    let xv = tape.value(x).data();
    let mut out = vec![T::zero(); n * c * ho * wo];
    for (plane, o) in xv.chunks_exact(h * w).zip(out.chunks_exact_mut(ho * wo)) {
        for y in 0..ho {
            for xx in 0..wo {
                o[y * wo + xx] = plane[(y / p) * w + xx / p];
            }
        }
    }
    let out = Tensor::new(vec![n, c, ho, wo], out)?;
    Ok(tape.push(
        out,
        &[x],
        Box::new(move |g, tape, grads| {
            let dx = grads.slot(tape, x);
            for (plane, gp) in dx
                .chunks_exact_mut(h * w)
                .zip(g.data().chunks_exact(ho * wo))
            {
                for y in 0..ho {
                    for xx in 0..wo {
                        plane[(y / p) * w + xx / p] += gp[y * wo + xx];
                    }
                }
            }
        }),
    ))
}

/// Row-wise softmax in place.
fn softmax_rows<T: Real>(s: &mut [T], cols: usize) {
    for row in s.chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
}

/// Scaled dot-product attention over the `H·W` spatial tokens of already
/// projected `q`, `k`, `v` (all `N × C × H × W`); channel groups of size
/// `C / heads` form the heads. Returns the output and, per sample and head,
/// the `T × T` row-stochastic weight matrix.
pub fn attention_forward<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
) -> Result<(Tensor<T>, Vec<T>)> {
    let (n, c, h, w) = q.dims4()?;
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(CkmError::invalid("attention: q, k, v shapes differ"));
    }
    if heads == 0 || c % heads != 0 {
        return Err(CkmError::invalid(format!(
            "attention: {c} channels are not divisible by {heads} heads"
        )));
    }
    let t = h * w;
    let dh = c / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut out = vec![T::zero(); n * c * t];
    let mut probs = vec![T::zero(); n * heads * t * t];
    for s in 0..n {
        for hd in 0..heads {
            let off = (s * c + hd * dh) * t;
            let qh = &q.data()[off..off + dh * t];
            let kh = &k.data()[off..off + dh * t];
            let vh = &v.data()[off..off + dh * t];
            let p = &mut probs[(s * heads + hd) * t * t..][..t * t];
            gemm(
                t,
                dh,
                t,
                scale,
                qh,
                Strides::tr(t),
                kh,
                Strides::rm(t),
                T::zero(),
                p,
                Strides::rm(t),
            );
            softmax_rows(p, t);
            gemm(
                dh,
                t,
                t,
                T::one(),
                vh,
                Strides::rm(t),
                p,
                Strides::tr(t),
                T::zero(),
                &mut out[off..off + dh * t],
                Strides::rm(t),
            );
        }
    }
    Ok((Tensor::new(vec![n, c, h, w], out)?, probs))
}

pub fn attention<T: Real>(tape: &mut Tape<T>, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
    let (out, probs) = attention_forward(tape.value(q), tape.value(k), tape.value(v), heads)?;
    let (n, c, h, w) = out.dims4()?;
    let t = h * w;
    let dh = c / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let probs = if tape.tracks(&[q, k, v]) {
        probs
    } else {
        Vec::new()
    };
    Ok(tape.push(
        out,
        &[q, k, v],
        Box::new(move |g, tape, grads| {
            let (qv, kv, vv) = (
                tape.value(q).data(),
                tape.value(k).data(),
                tape.value(v).data(),
            );
            let mut dq = vec![T::zero(); n * c * t];
            let mut dk = vec![T::zero(); n * c * t];
            let mut dv = vec![T::zero(); n * c * t];
            let mut dp = vec![T::zero(); t * t];
            for s in 0..n {
                for hd in 0..heads {
                    let off = (s * c + hd * dh) * t;
                    let span = off..off + dh * t;
                    let p = &probs[(s * heads + hd) * t * t..][..t * t];
                    let go = &g.data()[span.clone()];
                    gemm(
                        dh,
                        t,
                        t,
                        T::one(),
                        go,
                        Strides::rm(t),
                        p,
                        Strides::rm(t),
                        T::zero(),
                        &mut dv[span.clone()],
                        Strides::rm(t),
                    );
                    gemm(
                        t,
                        dh,
                        t,
                        T::one(),
                        go,
                        Strides::tr(t),
                        &vv[span.clone()],
                        Strides::rm(t),
                        T::zero(),
                        &mut dp,
                        Strides::rm(t),
                    );
                    for (prow, drow) in p.chunks_exact(t).zip(dp.chunks_exact_mut(t)) {
                        let dot: T = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
                        for (d, &pv) in drow.iter_mut().zip(prow) {
                            *d = pv * (*d - dot) * scale;
                        }
                    }
                    gemm(
                        dh,
                        t,
                        t,
                        T::one(),
                        &kv[span.clone()],
                        Strides::rm(t),
                        &dp,
                        Strides::tr(t),
                        T::zero(),
                        &mut dq[span.clone()],
                        Strides::rm(t),
                    );
                    gemm(
                        dh,
                        t,
                        t,
                        T::one(),
                        &qv[span.clone()],
                        Strides::rm(t),
                        &dp,
                        Strides::rm(t),
                        T::zero(),
                        &mut dk[span],
                        Strides::rm(t),
                    );
                }
            }
            for (var, d) in [(q, &dq), (k, &dk), (v, &dv)] {
                if grads.wants(var) {
                    acc(grads.slot(tape, var), d);
                }
            }
        }),
    ))
}

/// Channel concatenation of batches with equal `N`, `H`, `W`.
pub fn concat<T: Real>(tape: &mut Tape<T>, parts: &[Var]) -> Result<Var> {
    let Some(&first) = parts.first() else {
        return Err(CkmError::invalid("concat: no inputs"));
    };
    let (n, _, h, w) = tape.value(first).dims4()?;
    let mut chans = Vec::with_capacity(parts.len());
    for &p in parts {
        let (pn, pc, ph, pw) = tape.value(p).dims4()?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(CkmError::invalid("concat: batch or spatial dims differ"));
        }
        chans.push(pc);
    }
    let hw = h * w;
    let total: usize = chans.iter().sum();
    let mut out = Vec::with_capacity(n * total * hw);
    for s in 0..n {
        for (&p, &pc) in parts.iter().zip(&chans) {
            out.extend_from_slice(&tape.value(p).data()[s * pc * hw..(s + 1) * pc * hw]);
        }
    }
    let out = Tensor::new(vec![n, total, h, w], out)?;
    let parts = parts.to_vec();
    Ok(tape.push(
        out,
        &parts.clone(),
        Box::new(move |g, tape, grads| {
            let mut c0 = 0;
            for (&p, &pc) in parts.iter().zip(&chans) {
                if grads.wants(p) {
                    let dp = grads.slot(tape, p);
                    for s in 0..n {
                        acc(
                            &mut dp[s * pc * hw..(s + 1) * pc * hw],
                            &g.data()[(s * total + c0) * hw..(s * total + c0 + pc) * hw],
                        );
                    }
                }
                c0 += pc;
            }
        }),
    ))
}

/// Channels `[start, start + len)` of a batch.
pub fn select_channels<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    start: usize,
    len: usize,
) -> Result<Var> {
    let (n, c, h, w) = tape.value(x).dims4()?;
    if start + len > c || len == 0 {
        return Err(CkmError::invalid(format!(
            "select_channels: [{start}, {}) outside {c} channels",
            start + len
        )));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * len * hw);
    for s in 0..n {
        out.extend_from_slice(
            &tape.value(x).data()[(s * c + start) * hw..(s * c + start + len) * hw],
        );
    }
    let out = Tensor::new(vec![n, len, h, w], out)?;
    Ok(tape.push(
        out,
        &[x],
        Box::new(move |g, tape, grads| {
            let dx = grads.slot(tape, x);
            for s in 0..n {
                acc(
                    &mut dx[(s * c + start) * hw..(s * c + start + len) * hw],
                    &g.data()[s * len * hw..(s + 1) * len * hw],
                );
            }
        }),
    ))
}

/// Channel-to-space rearrangement: channel `c·r² + i·r + j` at `(y, x)` moves
/// to channel `c` at `(y·r + i, x·r + j)`.
pub fn pixel_shuffle_tensor<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if r == 0 || c % (r * r) != 0 {
        return Err(CkmError::invalid(format!(
            "pixel_shuffle: {c} channels are not divisible by {r}²"
        )));
    }
    let co = c / (r * r);
    let (ho, wo) = (h * r, w * r);
    let mut out = vec![T::zero(); x.numel()];
    let xv = x.data();
    for s in 0..n {
        for ch in 0..c {
            let (oc, i, j) = (ch / (r * r), (ch / r) % r, ch % r);
            for y in 0..h {
                for xx in 0..w {
                    out[((s * co + oc) * ho + y * r + i) * wo + xx * r + j] =
                        xv[((s * c + ch) * h + y) * w + xx];
                }
            }
        }
    }
    Tensor::new(vec![n, co, ho, wo], out)
}

/// Inverse of [`pixel_shuffle_tensor`].
pub fn pixel_unshuffle_tensor<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (n, co, ho, wo) = x.dims4()?;
    if r == 0 || ho % r != 0 || wo % r != 0 {
        return Err(CkmError::invalid(format!(
            "pixel_unshuffle: {ho}x{wo} not divisible by {r}"
        )));
    }
    let (h, w, c) = (ho / r, wo / r, co * r * r);
    let mut out = vec![T::zero(); x.numel()];
    let xv = x.data();
    for s in 0..n {
        for ch in 0..c {
            let (oc, i, j) = (ch / (r * r), (ch / r) % r, ch % r);
            for y in 0..h {
                for xx in 0..w {
                    out[((s * c + ch) * h + y) * w + xx] =
                        xv[((s * co + oc) * ho + y * r + i) * wo + xx * r + j];
                }
            }
        }
    }
    Tensor::new(vec![n, c, h, w], out)
}

pub fn pixel_shuffle<T: Real>(tape: &mut Tape<T>, x: Var, r: usize) -> Result<Var> {
    let out = pixel_shuffle_tensor(tape.value(x), r)?;
    Ok(tape.push(
        out,
        &[x],
        Box::new(move |g, tape, grads| {
            let back = pixel_unshuffle_tensor(g, r).expect("shuffle gradient has a valid shape");
            acc(grads.slot(tape, x), back.data());
        }),
    ))
}

/// Separable Keys bicubic enlargement by `scale`, with clamped borders.
pub fn bicubic_upsample<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    scale: usize,
    align: Alignment,
) -> Result<Var> {
    let (n, c, h, w) = tape.value(x).dims4()?;
    if scale == 0 {
        return Err(CkmError::invalid(
            "bicubic_upsample: scale must be at least 1",
        ));
    }
    let to_t = |taps: Vec<[(usize, f64); 4]>| -> Vec<[(usize, T); 4]> {
        taps.into_iter()
            .map(|t| t.map(|(i, wt)| (i, T::of(wt))))
            .collect()
    };
    let rows = to_t(cubic_taps(h, scale, align));
    let cols = to_t(cubic_taps(w, scale, align));
    let (ho, wo) = (h * scale, w * scale);
    let xv = tape.value(x).data();
    let mut out = vec![T::zero(); n * c * ho * wo];
    let mut tmp = vec![T::zero(); h * wo];
    for (plane, o) in xv.chunks_exact(h * w).zip(out.chunks_exact_mut(ho * wo)) {
        for y in 0..h {
            for (xx, ct) in cols.iter().enumerate() {
                tmp[y * wo + xx] = ct.iter().map(|&(i, wt)| plane[y * w + i] * wt).sum();
            }
        }
        for (y, rt) in rows.iter().enumerate() {
            for xx in 0..wo {
                o[y * wo + xx] = rt.iter().map(|&(i, wt)| tmp[i * wo + xx] * wt).sum();
            }
        }
    }
    let out = Tensor::new(vec![n, c, ho, wo], out)?;
    Ok(tape.push(
        out,
        &[x],
        Box::new(move |g, tape, grads| {
            let dx = grads.slot(tape, x);
            let mut tmp = vec![T::zero(); h * wo];
            for (plane, gp) in dx
                .chunks_exact_mut(h * w)
                .zip(g.data().chunks_exact(ho * wo))
            {
                tmp.iter_mut().for_each(|v| *v = T::zero());
                for (y, rt) in rows.iter().enumerate() {
                    for xx in 0..wo {
                        for &(i, wt) in rt {
                            tmp[i * wo + xx] += gp[y * wo + xx] * wt;
                        }
                    }
                }
                for y in 0..h {
                    for (xx, ct) in cols.iter().enumerate() {
                        for &(i, wt) in ct {
                            plane[y * w + i] += tmp[y * wo + xx] * wt;
                        }
                    }
                }
            }
        }),
    ))
}

/// Mean squared difference over all elements, as a one-element tensor.
pub fn mse<T: Real>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    require_same_shape(tape, pred, target, "mse")?;
    let (pv, tv) = (tape.value(pred).data(), tape.value(target).data());
    let count = pv.len();
    if count == 0 {
        return Err(CkmError::invalid("mse: empty tensors"));
    }
    let sum: f64 = pv
        .iter()
        .zip(tv)
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum();
    let out = Tensor::scalar(T::of(sum / count as f64));
    Ok(tape.push(
        out,
        &[pred, target],
        Box::new(move |g, tape, grads| {
            let k = g.data()[0] * T::of(2.0 / count as f64);
            let diff: Vec<T> = {
                let (pv, tv) = (tape.value(pred).data(), tape.value(target).data());
                pv.iter().zip(tv).map(|(&a, &b)| (a - b) * k).collect()
            };
            if grads.wants(pred) {
                acc(grads.slot(tape, pred), &diff);
            }
            if grads.wants(target) {
                let dt = grads.slot(tape, target);
                for (d, v) in dt.iter_mut().zip(&diff) {
                    *d -= *v;
                }
            }
        }),
    ))
}
