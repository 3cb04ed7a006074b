use ckm_core::nn::gradcheck::{check, random_tensor};
use ckm_core::nn::ops::{self, BnMode};
use ckm_core::nn::{Tape, Tensor, Var};

fn val(t: &Tape<f64>, v: Var) -> Vec<f64> {
    t.value(v).data().to_vec()
}

/// Direct evaluation of a dilated same-padded cross-correlation.
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], d: usize) -> Vec<f64> {
    let (n, cin, h, wd) = x.dims4().unwrap();
    let (cout, _, k, _) = w.dims4().unwrap();
    let pad = (d * (k - 1) / 2) as isize;
    let mut out = vec![0.0; n * cout * h * wd];
    for s in 0..n {
        for o in 0..cout {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b[o];
                    for c in 0..cin {
                        for ki in 0..k {
                            for kj in 0..k {
                                let sy = y as isize + (ki * d) as isize - pad;
                                let sx = xx as isize + (kj * d) as isize - pad;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                    continue;
                                }
                                acc += w.data()[((o * cin + c) * k + ki) * k + kj]
                                    * x.data()
                                        [((s * cin + c) * h + sy as usize) * wd + sx as usize];
                            }
                        }
                    }
                    out[((s * cout + o) * h + y) * wd + xx] = acc;
                }
            }
        }
    }
    out
}

fn conv_out(x: Tensor<f64>, w: Tensor<f64>, b: Tensor<f64>, d: usize) -> Vec<f64> {
    let mut t = Tape::new();
    let (x, w, b) = (t.constant(x), t.constant(w), t.constant(b));
    let y = ops::conv2d(&mut t, x, w, Some(b), d).unwrap();
    val(&t, y)
}

#[test]
fn conv_matches_loop_oracle() {
    for (d, k, cin, cout, h) in [
        (2, 3, 1, 1, 7),
        (1, 3, 2, 3, 5),
        (5, 3, 2, 2, 9),
        (1, 5, 3, 2, 6),
        (3, 1, 2, 4, 4),
    ] {
        let x = random_tensor(&[2, cin, h, h + 1], 10 + d as u64, 0.0);
        let w = random_tensor(&[cout, cin, k, k], 20 + k as u64, 0.0);
        let b = random_tensor(&[cout], 30, 0.0);
        let want = naive_conv(&x, &w, b.data(), d);
        let got = conv_out(x, w, b, d);
        let err = got
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "d={d} k={k}: {err}");
    }
}

#[test]
fn conv_trivial_cases() {
    let x = random_tensor(&[1, 3, 4, 4], 1, 0.0);
    let mut eye = vec![0.0; 9];
    for c in 0..3 {
        eye[c * 3 + c] = 1.0;
    }
    let w = Tensor::new(vec![3, 3, 1, 1], eye).unwrap();
    assert_eq!(conv_out(x.clone(), w, Tensor::zeros(&[3]), 1), x.data());
    let out = conv_out(
        x,
        Tensor::zeros(&[2, 3, 3, 3]),
        Tensor::from_f64(&[2], &[0.5, -1.5]).unwrap(),
        2,
    );
    assert!(out[..16].iter().all(|&v| v == 0.5) && out[16..].iter().all(|&v| v == -1.5));
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::zeros(&[1, 2, 3, 3]));
    let w = t.constant(Tensor::zeros(&[1, 3, 3, 3]));
    assert!(ops::conv2d(&mut t, x, w, None, 1).is_err());
}

#[test]
fn dilated_impulse_touches_only_dilated_taps() {
    let mut x = Tensor::<f64>::zeros(&[1, 1, 15, 15]);
    x.data_mut()[7 * 15 + 7] = 1.0;
    let out = conv_out(
        x,
        Tensor::filled(&[1, 1, 3, 3], 1.0),
        Tensor::zeros(&[1]),
        5,
    );
    for y in 0..15 {
        for xx in 0..15 {
            let hit = [2, 7, 12].contains(&y) && [2, 7, 12].contains(&xx);
            assert_eq!(out[y * 15 + xx] != 0.0, hit, "({y},{xx})");
        }
    }
}

#[test]
fn prelu_values() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::from_f64(&[1, 2, 1, 2], &[2.0, -2.0, -3.0, 4.0]).unwrap());
    let a = t.constant(Tensor::from_f64(&[2], &[0.1, 1.0]).unwrap());
    let y = ops::prelu(&mut t, x, a).unwrap();
    let got = val(&t, y);
    assert_eq!(got[0], 2.0);
    assert!((got[1] + 0.2).abs() < 1e-15);
    assert_eq!(&got[2..], &[-3.0, 4.0]);
}

fn bn_train(x: Tensor<f64>) -> Vec<f64> {
    let c = x.shape()[1];
    let mut t = Tape::new();
    let x = t.constant(x);
    let g = t.constant(Tensor::filled(&[c], 1.0));
    let b = t.constant(Tensor::filled(&[c], 0.0));
    let (y, stats) = ops::batch_norm(&mut t, x, g, b, BnMode::Train).unwrap();
    assert!(stats.is_some());
    val(&t, y)
}

#[test]
fn batchnorm_statistics() {
    let x = random_tensor(&[4, 3, 5, 5], 7, 0.0).map(|v| 3.0 * v + 2.0);
    let y = bn_train(x);
    for c in 0..3 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|s| y[(s * 3 + c) * 25..(s * 3 + c + 1) * 25].to_vec())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-6, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-4, "var {var}");
    }
    // Constant channel collapses onto beta.
    let y = bn_train(Tensor::filled(&[2, 1, 3, 3], 4.2));
    assert!(y.iter().all(|v| v.abs() < 1e-9));
    // Already standardised input passes through up to the epsilon effect.
    let z = Tensor::from_f64(&[1, 1, 2, 2], &[1.0, -1.0, 1.0, -1.0]).unwrap();
    let y = bn_train(z.clone());
    for (a, b) in y.iter().zip(z.data()) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn batchnorm_train_rejects_single_value() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::zeros(&[1, 2, 1, 1]));
    let g = t.constant(Tensor::filled(&[2], 1.0));
    let b = t.constant(Tensor::zeros(&[2]));
    assert!(ops::batch_norm(&mut t, x, g, b, BnMode::Train).is_err());
    let (m, v) = (vec![0.0; 2], vec![1.0; 2]);
    assert!(ops::batch_norm(&mut t, x, g, b, BnMode::Eval { mean: &m, var: &v }).is_ok());
}

/// Per-token loop evaluation of multi-head scaled dot-product attention.
fn naive_attention(q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>, heads: usize) -> Vec<f64> {
    let (n, c, h, w) = q.dims4().unwrap();
    let t = h * w;
    let dh = c / heads;
    let at = |x: &Tensor<f64>, s: usize, ch: usize, tok: usize| x.data()[(s * c + ch) * t + tok];
    let mut out = vec![0.0; n * c * t];
    for s in 0..n {
        for hd in 0..heads {
            for i in 0..t {
                let scores: Vec<f64> = (0..t)
                    .map(|j| {
                        (0..dh)
                            .map(|e| at(q, s, hd * dh + e, i) * at(k, s, hd * dh + e, j))
                            .sum::<f64>()
                            / (dh as f64).sqrt()
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                for e in 0..dh {
                    out[(s * c + hd * dh + e) * t + i] = (0..t)
                        .map(|j| (scores[j] - m).exp() / z * at(v, s, hd * dh + e, j))
                        .sum();
                }
            }
        }
    }
    out
}

#[test]
fn attention_matches_token_loop_and_rows_are_stochastic() {
    let q = random_tensor(&[1, 8, 4, 4], 1, 0.0).map(|v| 2.0 * v);
    let k = random_tensor(&[1, 8, 4, 4], 2, 0.0);
    let v = random_tensor(&[1, 8, 4, 4], 3, 0.0);
    let (out, probs) = ops::attention_forward(&q, &k, &v, 2).unwrap();
    let want = naive_attention(&q, &k, &v, 2);
    let err = out
        .data()
        .iter()
        .zip(&want)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-10, "{err}");
    for row in probs.chunks_exact(16) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert!(ops::attention_forward(&q, &k, &v, 3).is_err());
}

#[test]
fn attention_single_token_passes_values() {
    let q = random_tensor(&[2, 4, 1, 1], 4, 0.0);
    let v = random_tensor(&[2, 4, 1, 1], 5, 0.0);
    let (out, probs) = ops::attention_forward(&q, &q, &v, 4).unwrap();
    assert!(probs.iter().all(|&p| p == 1.0));
    assert_eq!(out.data(), v.data());
}

#[test]
fn pixel_shuffle_layout_and_inverse() {
    let x = Tensor::<f64>::from_f64(&[1, 4, 1, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = ops::pixel_shuffle_tensor(&x, 2).unwrap();
    assert_eq!(y.shape(), &[1, 1, 2, 2]);
    assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    let big = random_tensor(&[2, 8, 3, 5], 9, 0.0);
    let back =
        ops::pixel_unshuffle_tensor(&ops::pixel_shuffle_tensor(&big, 2).unwrap(), 2).unwrap();
    assert_eq!(back, big);
    let mut sorted_in = big.data().to_vec();
    let mut sorted_out = ops::pixel_shuffle_tensor(&big, 2).unwrap().into_data();
    sorted_in.sort_by(f64::total_cmp);
    sorted_out.sort_by(f64::total_cmp);
    assert_eq!(sorted_in, sorted_out);
    assert!(ops::pixel_shuffle_tensor(&Tensor::<f64>::zeros(&[1, 6, 2, 2]), 2).is_err());
}

#[test]
fn mse_values() {
    let mut t = Tape::<f64>::new();
    let a = t.constant(random_tensor(&[1, 2, 3, 3], 3, 0.0));
    let b = t.constant(t.value(a).map(|v| v + 1.0));
    let same = ops::mse(&mut t, a, a).unwrap();
    let one = ops::mse(&mut t, b, a).unwrap();
    assert_eq!(val(&t, same), vec![0.0]);
    assert!((val(&t, one)[0] - 1.0).abs() < 1e-15);
    let c = t.constant(Tensor::zeros(&[3]));
    assert!(ops::mse(&mut t, a, c).is_err());
}

#[test]
fn mse_gradient_is_scaled_difference() {
    let p = random_tensor(&[1, 1, 3, 4], 11, 0.0);
    let y = random_tensor(&[1, 1, 3, 4], 12, 0.0);
    let mut t = Tape::new();
    let pv = t.variable(p.clone());
    let yv = t.constant(y.clone());
    let l = ops::mse(&mut t, pv, yv).unwrap();
    let g = t.backward(l);
    for ((gi, a), b) in g.get(pv).unwrap().data().iter().zip(p.data()).zip(y.data()) {
        assert!((gi - 2.0 * (a - b) / 12.0).abs() < 1e-15);
    }
    let r = check("mse", &[p, y], |t, v| ops::mse(t, v[0], v[1]), 64, 1).unwrap();
    assert!(r.passes(1e-6), "{r:?}");
}

const TOL: f64 = 1e-4;

#[test]
fn gradcheck_conv_dilations() {
    for (d, seed) in [(1, 1), (2, 2), (5, 3)] {
        let x = random_tensor(&[2, 2, 7, 6], seed, 0.0);
        let w = random_tensor(&[3, 2, 3, 3], seed + 10, 0.0);
        let b = random_tensor(&[3], seed + 20, 0.0);
        let r = check(
            "conv",
            &[x, w, b],
            |t, v| ops::conv2d(t, v[0], v[1], Some(v[2]), d),
            200,
            seed,
        )
        .unwrap();
        assert!(r.passes(TOL), "d={d}: {r:?}");
    }
}

#[test]
fn gradcheck_prelu_bn_attention() {
    let x = random_tensor(&[2, 3, 4, 4], 5, 1e-3);
    let a = random_tensor(&[3], 6, 0.0);
    let r = check(
        "prelu",
        &[x.clone(), a],
        |t, v| ops::prelu(t, v[0], v[1]),
        200,
        1,
    )
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");

    let g = random_tensor(&[3], 7, 0.1);
    let b = random_tensor(&[3], 8, 0.0);
    let r = check(
        "batchnorm",
        &[x.clone(), g.clone(), b.clone()],
        |t, v| Ok(ops::batch_norm(t, v[0], v[1], v[2], BnMode::Train)?.0),
        200,
        2,
    )
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");
    let (m, var) = ([0.1, -0.2, 0.3], [0.5, 1.5, 2.0]);
    let r = check(
        "batchnorm-eval",
        &[x, g, b],
        |t, v| {
            Ok(ops::batch_norm(
                t,
                v[0],
                v[1],
                v[2],
                BnMode::Eval {
                    mean: &m,
                    var: &var,
                },
            )?
            .0)
        },
        200,
        3,
    )
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");

    let q = random_tensor(&[2, 8, 3, 3], 9, 0.0);
    let k = random_tensor(&[2, 8, 3, 3], 10, 0.0);
    let v = random_tensor(&[2, 8, 3, 3], 11, 0.0);
    let r = check(
        "attention",
        &[q, k, v],
        |t, v| ops::attention(t, v[0], v[1], v[2], 4),
        200,
        4,
    )
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn gradcheck_reshaping_ops() {
    let x = random_tensor(&[2, 8, 3, 2], 12, 0.0);
    let r = check(
        "shuffle",
        &[x.clone()],
        |t, v| ops::pixel_shuffle(t, v[0], 2),
        200,
        5,
    )
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");
    let y = random_tensor(&[2, 3, 3, 2], 13, 0.0);
    let r = check(
        "concat",
        &[x.clone(), y],
        |t, v| ops::concat(t, &[v[0], v[1], v[0]]),
        200,
        6,
    )
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");
    let z = random_tensor(&[1, 2, 4, 6], 14, 0.0);
    let r = check(
        "pool-upsample",
        &[z.clone()],
        |t, v| {
            let p = ops::avg_pool(t, v[0], 2)?;
            ops::upsample_nearest(t, p, 2)
        },
        200,
        7,
    )
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");
    let r = check(
        "bicubic",
        &[x],
        |t, v| {
            let s = ops::select_channels(t, v[0], 1, 3)?;
            ops::bicubic_upsample(t, s, 2, Default::default())
        },
        200,
        8,
    )
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn bicubic_op_matches_baseline_plane() {
    use ckm_core::baselines::{bicubic_plane, Alignment};
    let x = random_tensor(&[1, 1, 5, 7], 15, 0.0);
    let want = bicubic_plane(x.data(), 7, 5, 2, Alignment::Corner);
    let mut t = Tape::new();
    let v = t.constant(x);
    let y = ops::bicubic_upsample(&mut t, v, 2, Alignment::Corner).unwrap();
    let err = val(&t, y)
        .iter()
        .zip(&want)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-12);
}
