use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check, GradCheckConfig};
use super::*;
use crate::Error;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Direct nested-loop convolution, independent of the im2col path.
fn conv_oracle(x: &Tensor, k: &Tensor, b: &[f64], s: usize, p: usize, d: usize) -> Tensor {
    let (n, cin, h, w) = x.dims4().unwrap();
    let (cout, _, kh, kw) = k.dims4().unwrap();
    let ho = (h + 2 * p - d * (kh - 1) - 1) / s + 1;
    let wo = (w + 2 * p - d * (kw - 1) - 1) / s + 1;
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * s + ky * d) as isize - p as isize;
                                let ix = (ox * s + kx * d) as isize - p as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += x.data()[((ni * cin + ci) * h + iy as usize) * w + ix as usize]
                                        * k.data()[((co * cin + ci) * kh + ky) * kw + kx];
                                }
                            }
                        }
                    }
                    out.data_mut()[((ni * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

fn params(shapes: &[(&str, &[usize])], seed: u64) -> (ParamStore, Vec<ParamId>) {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let ids = shapes
        .iter()
        .map(|(n, s)| {
            let id = store.add(*n, s, Init::Zeros, &mut r).unwrap();
            let t = random(s, &mut r);
            store.get_mut(id).tensor.data_mut().copy_from_slice(t.data());
            id
        })
        .collect();
    (store, ids)
}

#[test]
fn conv_same_padding_geometry() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(&[1, 1, 5, 5], 1.0));
    let k = tape.constant(Tensor::full(&[4, 1, 3, 3], 0.1));
    let y = tape.conv2d(x, k, None, ConvGeometry::same(3, 1)).unwrap();
    assert_eq!(tape.shape(y), [1, 4, 5, 5]);
}

#[test]
fn dilated_conv_matches_loop_oracle() {
    let mut r = rng(1);
    let x = random(&[1, 1, 13, 13], &mut r);
    let k = random(&[2, 1, 3, 3], &mut r);
    let b = [0.3, -0.2];
    let mut tape = Tape::new();
    let (xv, kv) = (tape.constant(x.clone()), tape.constant(k.clone()));
    let bv = tape.constant(Tensor::new(&[2], b.to_vec()).unwrap());
    let geom = ConvGeometry { stride: 1, padding: 6, dilation: 6 };
    let y = tape.conv2d(xv, kv, Some(bv), geom).unwrap();
    assert_eq!(tape.shape(y), [1, 2, 13, 13]);
    let oracle = conv_oracle(&x, &k, &b, 1, 6, 6);
    assert!(tape.value(y).max_abs_diff(&oracle) < 1e-12);
}

#[test]
fn conv_identity_kernel() {
    let mut r = rng(2);
    let x = random(&[2, 1, 4, 6], &mut r);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let k = tape.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.conv2d(xv, k, Some(b), ConvGeometry::same(1, 1)).unwrap();
    assert_eq!(tape.value(y).data(), x.data());
}

#[test]
fn conv_errors() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let k = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
    assert!(matches!(tape.conv2d(x, k, None, ConvGeometry::same(3, 1)), Err(Error::Dimension(_))));
    let k = tape.constant(Tensor::zeros(&[1, 2, 3, 3]));
    let geom = ConvGeometry { stride: 1, padding: 0, dilation: 3 };
    assert!(matches!(tape.conv2d(x, k, None, geom), Err(Error::Geometry(_))));
}

#[test]
fn conv_shape_law_over_tuples() {
    let mut r = rng(3);
    for h in [5usize, 8, 13] {
        for p in 0..3 {
            for d in 1..4 {
                for k in [1usize, 3] {
                    for s in 1..3 {
                        let geom = ConvGeometry { stride: s, padding: p, dilation: d };
                        let formula = (h + 2 * p).checked_sub(d * (k - 1) + 1).map(|v| v / s + 1);
                        let mut tape = Tape::new();
                        let x = tape.constant(random(&[1, 2, h, h], &mut r));
                        let kv = tape.constant(random(&[3, 2, k, k], &mut r));
                        match (tape.conv2d(x, kv, None, geom), formula) {
                            (Ok(y), Some(e)) => assert_eq!(tape.shape(y), [1, 3, e, e]),
                            (Err(Error::Geometry(_)), None) => {}
                            (res, f) => panic!("h={h} p={p} d={d} k={k} s={s}: {res:?} vs {f:?}"),
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn group_norm_statistics() {
    let mut tape = Tape::new();
    let ones = tape.constant(Tensor::full(&[2], 1.0));
    let zeros = tape.constant(Tensor::zeros(&[2]));
    let c = tape.constant(Tensor::full(&[1, 2, 3, 3], 4.2));
    let y = tape.group_norm(c, 1, ones, zeros).unwrap();
    assert!(tape.value(y).data().iter().all(|v| v.abs() < 1e-12));

    // A two-valued group: mean 3, std 2.
    let data: Vec<f64> = (0..18).map(|i| if i % 2 == 0 { 1.0 } else { 5.0 }).collect();
    let x = tape.constant(Tensor::new(&[1, 2, 3, 3], data).unwrap());
    let y = tape.group_norm(x, 1, ones, zeros).unwrap();
    let out = tape.value(y).data();
    let mean = out.iter().sum::<f64>() / out.len() as f64;
    let std = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / out.len() as f64).sqrt();
    assert!(mean.abs() < 1e-6);
    assert!((std - 1.0).abs() < 1e-3);

    let ones4 = tape.constant(Tensor::full(&[4], 1.0));
    let zeros4 = tape.constant(Tensor::zeros(&[4]));
    assert!(matches!(tape.group_norm(x, 3, ones, zeros), Err(Error::Config(_))));
    let mut r = rng(4);
    let x4 = random(&[1, 4, 3, 3], &mut r);
    let xv = tape.constant(x4.clone());
    let y = tape.group_norm(xv, 1, ones4, zeros4).unwrap();
    let mean = x4.data().iter().sum::<f64>() / 36.0;
    let var = x4.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 36.0;
    for (o, v) in tape.value(y).data().iter().zip(x4.data()) {
        assert!((o - (v - mean) / (var + 1e-5).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn elementwise_cases() {
    let mut r = rng(5);
    let x = random(&[1, 3, 2, 2], &mut r);
    let mut tape = Tape::new();
    let xv = tape.input(x.clone(), true);
    let d = tape.sub(xv, xv).unwrap();
    assert!(tape.value(d).data().iter().all(|&v| v == 0.0));

    let v = [2.0, -1.0, 0.5];
    let vv = tape.constant(Tensor::new(&[3], v.to_vec()).unwrap());
    let y = tape.mul_channel(xv, vv).unwrap();
    for c in 0..3 {
        for i in 0..4 {
            assert_eq!(tape.value(y).data()[c * 4 + i], x.data()[c * 4 + i] * v[c]);
        }
    }
    let bad = tape.constant(Tensor::zeros(&[4]));
    assert!(matches!(tape.mul_channel(xv, bad), Err(Error::Dimension(_))));
    let other = tape.constant(Tensor::zeros(&[1, 3, 2, 1]));
    assert!(matches!(tape.add(xv, other), Err(Error::Dimension(_))));

    let z = tape.scale(xv, 0.0);
    let s = tape.sum(z);
    let mut store = ParamStore::new();
    let g = tape.backward(s, &mut store).unwrap();
    assert!(tape.value(z).data().iter().all(|&v| v == 0.0));
    assert!(g.get(xv).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn global_avg_pool_cases() {
    let mut tape = Tape::new();
    let c = tape.constant(Tensor::full(&[1, 2, 3, 3], 7.0));
    let p = tape.global_avg_pool(c).unwrap();
    assert_eq!(tape.value(p).data(), &[7.0, 7.0]);
    let x = tape.constant(Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let p = tape.global_avg_pool(x).unwrap();
    assert_eq!(tape.value(p).data(), &[2.5]);
    let x = tape.constant(Tensor::new(&[1, 2, 1, 1], vec![-1.0, 3.0]).unwrap());
    let p = tape.global_avg_pool(x).unwrap();
    assert_eq!(tape.value(p).data(), &[-1.0, 3.0]);
}

#[test]
fn linear_cases() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(&[1, 2], vec![2.0, 3.0]).unwrap());
    let w = tape.constant(Tensor::new(&[1, 2], vec![1.0, 1.0]).unwrap());
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.linear(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[5.0]);

    let eye = tape.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let b2 = tape.constant(Tensor::zeros(&[2]));
    let y = tape.linear(x, eye, b2).unwrap();
    assert_eq!(tape.value(y).data(), &[2.0, 3.0]);

    let mut r = rng(6);
    let (xt, wt, bt) = (random(&[2, 4], &mut r), random(&[3, 4], &mut r), random(&[3], &mut r));
    let (xv, wv, bv) = (tape.constant(xt.clone()), tape.constant(wt.clone()), tape.constant(bt.clone()));
    let y = tape.linear(xv, wv, bv).unwrap();
    for n in 0..2 {
        for o in 0..3 {
            let e: f64 = bt.data()[o] + (0..4).map(|i| wt.data()[o * 4 + i] * xt.data()[n * 4 + i]).sum::<f64>();
            assert!((tape.value(y).data()[n * 3 + o] - e).abs() < 1e-12);
        }
    }
    assert!(matches!(tape.linear(xv, eye, b2), Err(Error::Dimension(_))));
}

#[test]
fn softmax_cases() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(&[1, 2], vec![0.0, 0.0]).unwrap());
    let y = tape.softmax(x, 1).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

    let big = tape.constant(Tensor::new(&[1, 2], vec![1000.0, 0.0]).unwrap());
    let y = tape.softmax(big, 1).unwrap();
    let out = tape.value(y).data();
    // exp(-1000) underflows to zero in any precision wider than f64 too.
    assert!((out[0] - 1.0).abs() < 1e-12 && out[1].abs() < 1e-12 && out.iter().all(|v| v.is_finite()));

    let mut r = rng(7);
    let t = random(&[3, 5, 2], &mut r);
    let shifted = Tensor::from_fn(&[3, 5, 2], |i| t.data()[i] + 17.5);
    let a = softmax_values(&t, 1);
    let b = softmax_values(&shifted, 1);
    assert!(a.max_abs_diff(&b) < 1e-12);
    for o in 0..3 {
        for i in 0..2 {
            let s: f64 = (0..5).map(|k| a.data()[(o * 5 + k) * 2 + i]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn cross_entropy_cases() {
    let mut tape = Tape::new();
    let k = 4;
    let uniform = tape.constant(Tensor::zeros(&[1, k, 2, 2]));
    let l = tape.cross_entropy(uniform, &[0, 1, 2, 3], None, None).unwrap();
    assert!((tape.value(l).data()[0] - 4f64.ln()).abs() < 1e-12);

    let mut sharp = Tensor::zeros(&[1, 3, 1, 2]);
    sharp.data_mut()[2 * 2] = 20.0;
    sharp.data_mut()[1] = 20.0;
    let sv = tape.constant(sharp);
    let l = tape.cross_entropy(sv, &[2, 0], None, None).unwrap();
    assert!(tape.value(l).data()[0] < 1e-3);

    // Weighted: per-pixel summation oracle.
    let mut r = rng(8);
    let logits = random(&[2, 2, 2, 3], &mut r);
    let targets = vec![1; 12];
    let lv = tape.constant(logits.clone());
    let plain = tape.cross_entropy(lv, &targets, None, None).unwrap();
    let weighted = tape.cross_entropy(lv, &targets, Some(&[1.0, 2.0]), None).unwrap();
    let probs = softmax_values(&logits, 1);
    let mut oracle = 0.0;
    for n in 0..2 {
        for p in 0..6 {
            oracle += -2.0 * probs.data()[(n * 2 + 1) * 6 + p].ln();
        }
    }
    oracle /= 12.0;
    assert!((tape.value(weighted).data()[0] - oracle).abs() < 1e-12);
    assert!((tape.value(weighted).data()[0] - 2.0 * tape.value(plain).data()[0]).abs() < 1e-12);

    let ignored = tape.cross_entropy(lv, &[255; 12], None, Some(255)).unwrap();
    assert_eq!(tape.value(ignored).data()[0], 0.0);
    assert!(matches!(tape.cross_entropy(lv, &[2; 12], None, None), Err(Error::Label(_))));
}

#[test]
fn concat_and_narrow() {
    let mut r = rng(9);
    let (a, b) = (random(&[2, 3, 2, 2], &mut r), random(&[2, 5, 2, 2], &mut r));
    let mut tape = Tape::new();
    let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let single = tape.concat(&[av], 1).unwrap();
    assert_eq!(tape.value(single), tape.value(av));
    let c = tape.concat(&[av, bv], 1).unwrap();
    assert_eq!(tape.shape(c), [2, 8, 2, 2]);
    let a2 = tape.narrow(c, 1, 0, 3).unwrap();
    let b2 = tape.narrow(c, 1, 3, 5).unwrap();
    assert_eq!(tape.value(a2).data(), a.data());
    assert_eq!(tape.value(b2).data(), b.data());
    let odd = tape.constant(Tensor::zeros(&[2, 1, 3, 2]));
    assert!(matches!(tape.concat(&[av, odd], 1), Err(Error::Dimension(_))));
}

#[test]
fn bilinear_cases() {
    let mut r = rng(10);
    let x = random(&[1, 2, 3, 5], &mut r);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let same = tape.bilinear_resize(xv, 3, 5).unwrap();
    assert!(tape.value(same).max_abs_diff(&x) < 1e-12);

    let c = tape.constant(Tensor::full(&[1, 1, 3, 3], 2.5));
    let up = tape.bilinear_resize(c, 7, 4).unwrap();
    assert!(tape.value(up).data().iter().all(|v| (v - 2.5).abs() < 1e-12));

    // Hand-evaluated half-pixel weights for 2 -> 4.
    let w = [[1.0, 0.0], [0.75, 0.25], [0.25, 0.75], [0.0, 1.0]];
    let src = [[1.0, 2.0], [3.0, 4.0]];
    let xv = tape.constant(Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let up = tape.bilinear_resize(xv, 4, 4).unwrap();
    for oy in 0..4 {
        for ox in 0..4 {
            let mut e = 0.0;
            for iy in 0..2 {
                for ix in 0..2 {
                    e += w[oy][iy] * w[ox][ix] * src[iy][ix];
                }
            }
            assert!((tape.value(up).data()[oy * 4 + ox] - e).abs() < 1e-9);
        }
    }
}

#[test]
fn backward_basics() {
    let mut r = rng(11);
    let x = random(&[2, 3], &mut r);
    let mut tape = Tape::new();
    let xv = tape.input(x.clone(), true);
    let s = tape.sum(xv);
    let mut store = ParamStore::new();
    let g = tape.backward(s, &mut store).unwrap();
    assert!(g.get(xv).unwrap().iter().all(|&v| v == 1.0));
    assert!(matches!(tape.backward(s, &mut store), Err(Error::State(_))));

    let (a, b) = (1.5, -0.25);
    let mut tape = Tape::new();
    let xv = tape.input(x, true);
    let ax = tape.scale(xv, a);
    let bx = tape.scale(xv, b);
    let t = tape.add(ax, bx).unwrap();
    let s = tape.sum(t);
    let g = tape.backward(s, &mut store).unwrap();
    assert!(g.get(xv).unwrap().iter().all(|&v| (v - (a + b)).abs() < 1e-15));
}

#[test]
fn unreachable_parameters_get_zero_gradient() {
    let (mut store, ids) = params(&[("used", &[3]), ("unused", &[2])], 12);
    let mut tape = Tape::new();
    let u = tape.param(&store, ids[0]);
    let _ = tape.param(&store, ids[1]);
    let s = tape.sum(u);
    tape.backward(s, &mut store).unwrap();
    assert_eq!(store.grad(ids[0]), &[1.0, 1.0, 1.0]);
    assert_eq!(store.grad(ids[1]), &[0.0, 0.0]);
}

fn composite(tape: &mut Tape, x: Var, store: &ParamStore, ids: &[ParamId]) -> crate::Result<Var> {
    let k = tape.param(store, ids[0]);
    let b = tape.param(store, ids[1]);
    let y = tape.conv2d(x, k, Some(b), ConvGeometry::same(3, 2))?;
    let y = tape.relu(y);
    let y = tape.global_avg_pool(y)?;
    let y = tape.reshape(y, &[2, 3])?;
    let w = tape.param(store, ids[2]);
    let lb = tape.param(store, ids[3]);
    let y = tape.linear(y, w, lb)?;
    let y = tape.relu(y);
    Ok(tape.sum(y))
}

#[test]
fn composite_graph_matches_finite_differences() {
    let shapes: [(&str, &[usize]); 4] = [("k", &[3, 2, 3, 3]), ("b", &[3]), ("w", &[2, 3]), ("lb", &[2])];
    let (mut store, ids) = params(&shapes, 13);
    let mut r = rng(14);
    let x = random(&[2, 2, 6, 6], &mut r);
    let report = check(
        |t, v, s| composite(t, v[0], s, &ids),
        &[("x", x)],
        &mut store,
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn backward_is_linear() {
    let shapes: [(&str, &[usize]); 4] = [("k", &[3, 2, 3, 3]), ("b", &[3]), ("w", &[2, 3]), ("lb", &[2])];
    let (mut store, ids) = params(&shapes, 15);
    let mut r = rng(16);
    let x = random(&[2, 2, 5, 5], &mut r);
    let (alpha, beta) = (0.7, -1.3);
    let grads_of = |store: &mut ParamStore, f: &dyn Fn(&mut Tape, Var, Var) -> Var| {
        store.zero_grad();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let l1 = composite(&mut tape, xv, store, &ids).unwrap();
        let k = tape.param(store, ids[0]);
        let cv = tape_vec(&mut tape);
        let sq = tape.mul_channel(xv, cv).unwrap();
        let l2 = {
            let y = tape.conv2d(sq, k, None, ConvGeometry::same(3, 1)).unwrap();
            tape.mean(y)
        };
        let l = f(&mut tape, l1, l2);
        tape.backward(l, store).unwrap();
        ids.iter().map(|&id| store.grad(id).to_vec()).collect::<Vec<_>>()
    };
    let g1 = grads_of(&mut store, &|_, a, _| a);
    let g2 = grads_of(&mut store, &|_, _, b| b);
    let g = grads_of(&mut store, &|t, a, b| {
        let a = t.scale(a, alpha);
        let b = t.scale(b, beta);
        t.add(a, b).unwrap()
    });
    for ((a, b), c) in g1.iter().zip(&g2).zip(&g) {
        for ((x, y), z) in a.iter().zip(b).zip(c) {
            assert!((alpha * x + beta * y - z).abs() < 1e-10);
        }
    }
}

fn tape_vec(tape: &mut Tape) -> Var {
    tape.constant(Tensor::new(&[2], vec![0.5, 2.0]).unwrap())
}

#[test]
fn gradcheck_examples() {
    let cfg = GradCheckConfig::default();
    let mut r = rng(17);

    let (mut store, ids) = params(&[("w", &[3, 4]), ("b", &[3])], 18);
    let x = random(&[2, 4], &mut r);
    let rep = check(
        |t, v, s| {
            let w = t.param(s, ids[0]);
            let b = t.param(s, ids[1]);
            let y = t.linear(v[0], w, b)?;
            let y = t.softmax(y, 1)?;
            let y = t.narrow(y, 1, 0, 1)?;
            Ok(t.sum(y))
        },
        &[("x", x)],
        &mut store,
        &cfg,
    )
    .unwrap();
    assert!(rep.max_rel_error() < 1e-8, "{rep:?}");

    let (mut store, ids) = params(&[("k", &[2, 1, 3, 3]), ("b", &[2])], 19);
    let x = random(&[1, 1, 13, 13], &mut r);
    let geom = ConvGeometry { stride: 1, padding: 6, dilation: 6 };
    let rep = check(
        |t, v, s| {
            let k = t.param(s, ids[0]);
            let b = t.param(s, ids[1]);
            let y = t.conv2d(v[0], k, Some(b), geom)?;
            let y = t.softmax(y, 1)?;
            let y = t.narrow(y, 1, 1, 1)?;
            Ok(t.mean(y))
        },
        &[("x", x)],
        &mut store,
        &cfg,
    )
    .unwrap();
    assert!(rep.max_rel_error() < 1e-4, "{rep:?}");

    let mut store = ParamStore::new();
    let logits = random(&[2, 3, 2, 2], &mut r);
    let targets: Vec<usize> = (0..8).map(|i| i % 3).collect();
    let rep = check(
        |t, v, _| t.cross_entropy(v[0], &targets, Some(&[0.5, 1.0, 2.0]), None),
        &[("logits", logits)],
        &mut store,
        &cfg,
    )
    .unwrap();
    assert!(rep.max_rel_error() < 1e-6, "{rep:?}");
}

#[test]
fn gradcheck_reports_non_finite() {
    let mut store = ParamStore::new();
    let x = Tensor::new(&[1, 2], vec![f64::NAN, 1.0]).unwrap();
    let rep = check(|t, v, _| Ok(t.sum(v[0])), &[("x", x)], &mut store, &GradCheckConfig::default()).unwrap();
    assert!(!rep.passed());
    assert!(rep.non_finite.is_some());
}

#[test]
fn gradcheck_detects_injected_fault() {
    let mut store = ParamStore::new();
    let mut r = rng(20);
    let x = random(&[1, 2, 3, 3], &mut r);
    let cfg = GradCheckConfig {
        analytic_fault: Some(0.01),
        ..Default::default()
    };
    let rep = check(|t, v, _| {
        let y = t.softmax(v[0], 1)?;
        let y = t.narrow(y, 1, 0, 1)?;
        Ok(t.mean(y))
    }, &[("x", x)], &mut store, &cfg)
    .unwrap();
    assert!(!rep.passed());
}

/// Every differentiable operator against central differences on 20 seeds.
#[test]
fn every_operator_matches_finite_differences_on_20_seeds() {
    let cfg = GradCheckConfig::default();
    for seed in 0..20u64 {
        for op in super::gradcheck_suite::OPS {
            let rep = super::gradcheck_suite::run(op, seed, &cfg).unwrap();
            assert!(rep.passed(), "op {op} seed {seed}: {:?}", rep.worst());
        }
    }
}

#[test]
fn ten_steps_are_deterministic() {
    let run = || {
        let shapes: [(&str, &[usize]); 4] = [("k", &[3, 2, 3, 3]), ("b", &[3]), ("w", &[2, 3]), ("lb", &[2])];
        let (mut store, ids) = params(&shapes, 21);
        let sgd = Sgd::new(OptimizerConfig { total_steps: 10, base_lr: 0.1, ..Default::default() }).unwrap();
        let mut r = rng(22);
        for step in 0..10 {
            let x = random(&[2, 2, 5, 5], &mut r);
            store.zero_grad();
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let l = composite(&mut tape, xv, &store, &ids).unwrap();
            tape.backward(l, &mut store).unwrap();
            sgd.step(&mut store, step);
        }
        store.iter().flat_map(|p| p.tensor.data().to_vec()).collect::<Vec<_>>()
    };
    let (a, b) = (run(), run());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}
