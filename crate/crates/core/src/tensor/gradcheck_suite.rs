//! Named single-operator gradient checks, shared by the test-suite and the
//! `gradcheck` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check, GradCheckConfig, GradCheckReport};
use super::{ConvGeometry, Init, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

pub const OPS: &[&str] = &[
    "conv2d",
    "conv2d_dilated",
    "conv2d_strided",
    "group_norm",
    "relu",
    "add_sub",
    "scale",
    "mul_channel",
    "scale_by_sample",
    "global_avg_pool",
    "linear",
    "softmax",
    "cross_entropy",
    "concat_narrow",
    "bilinear_up",
    "bilinear_down",
    "reshape_mean",
];

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Projects an op output onto a random direction so every coordinate matters.
fn project(t: &mut Tape, y: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let w = random(t.shape(y), rng);
    t.weighted_sum(y, &w)
}

pub fn run(op: &str, seed: u64, config: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(op.len() as u64));
    let mut store = ParamStore::new();
    let add = |store: &mut ParamStore, name: &str, shape: &[usize], rng: &mut ChaCha8Rng| {
        let id = store.add(name, shape, Init::Zeros, rng)?;
        let t = random(shape, rng);
        store.get_mut(id).tensor.data_mut().copy_from_slice(t.data());
        Ok::<_, Error>(id)
    };
    let proj_seed: u64 = rng.random();
    let projector = move || ChaCha8Rng::seed_from_u64(proj_seed);

    match op {
        "conv2d" | "conv2d_dilated" | "conv2d_strided" => {
            let (geom, h) = match op {
                "conv2d" => (ConvGeometry::same(3, 1), 5),
                "conv2d_dilated" => (ConvGeometry::same(3, 6), 13),
                _ => (ConvGeometry { stride: 2, padding: 1, dilation: 1 }, 6),
            };
            let k = add(&mut store, "kernel", &[3, 2, 3, 3], &mut rng)?;
            let b = add(&mut store, "bias", &[3], &mut rng)?;
            let x = random(&[2, 2, h, h], &mut rng);
            check(
                |t, v, s| {
                    let (kv, bv) = (t.param(s, k), t.param(s, b));
                    let y = t.conv2d(v[0], kv, Some(bv), geom)?;
                    project(t, y, &mut projector())
                },
                &[("input", x)],
                &mut store,
                config,
            )
        }
        "group_norm" => {
            let sc = add(&mut store, "scale", &[4], &mut rng)?;
            let sh = add(&mut store, "shift", &[4], &mut rng)?;
            let x = random(&[2, 4, 3, 3], &mut rng);
            check(
                |t, v, s| {
                    let (a, b) = (t.param(s, sc), t.param(s, sh));
                    let y = t.group_norm(v[0], 2, a, b)?;
                    project(t, y, &mut projector())
                },
                &[("input", x)],
                &mut store,
                config,
            )
        }
        "relu" => {
            let x = random(&[2, 3, 4], &mut rng);
            check(
                |t, v, _| {
                    let y = t.relu(v[0]);
                    project(t, y, &mut projector())
                },
                &[("input", x)],
                &mut store,
                config,
            )
        }
        "add_sub" => {
            let (a, b) = (random(&[2, 3, 2, 2], &mut rng), random(&[2, 3, 2, 2], &mut rng));
            check(
                |t, v, _| {
                    let s = t.add(v[0], v[1])?;
                    let d = t.sub(s, v[1])?;
                    let d = t.sub(d, v[1])?;
                    project(t, d, &mut projector())
                },
                &[("a", a), ("b", b)],
                &mut store,
                config,
            )
        }
        "scale" => {
            let x = random(&[3, 4], &mut rng);
            check(
                |t, v, _| {
                    let y = t.scale(v[0], -2.5);
                    project(t, y, &mut projector())
                },
                &[("input", x)],
                &mut store,
                config,
            )
        }
        "mul_channel" => {
            let (x, vec, per) = (
                random(&[2, 3, 2, 2], &mut rng),
                random(&[3], &mut rng),
                random(&[2, 3], &mut rng),
            );
            check(
                |t, v, _| {
                    let y = t.mul_channel(v[0], v[1])?;
                    let y = t.mul_channel(y, v[2])?;
                    project(t, y, &mut projector())
                },
                &[("input", x), ("vector", vec), ("per_sample", per)],
                &mut store,
                config,
            )
        }
        "scale_by_sample" => {
            let (x, s) = (random(&[2, 3, 2, 2], &mut rng), random(&[2, 4], &mut rng));
            check(
                |t, v, _| {
                    let y = t.scale_by_sample(v[0], v[1], 2)?;
                    project(t, y, &mut projector())
                },
                &[("input", x), ("scalars", s)],
                &mut store,
                config,
            )
        }
        "global_avg_pool" => {
            let x = random(&[2, 3, 3, 4], &mut rng);
            check(
                |t, v, _| {
                    let y = t.global_avg_pool(v[0])?;
                    project(t, y, &mut projector())
                },
                &[("input", x)],
                &mut store,
                config,
            )
        }
        "linear" => {
            let w = add(&mut store, "weight", &[3, 4], &mut rng)?;
            let b = add(&mut store, "bias", &[3], &mut rng)?;
            let x = random(&[2, 4], &mut rng);
            check(
                |t, v, s| {
                    let (wv, bv) = (t.param(s, w), t.param(s, b));
                    let y = t.linear(v[0], wv, bv)?;
                    project(t, y, &mut projector())
                },
                &[("input", x)],
                &mut store,
                config,
            )
        }
        "softmax" => {
            let x = random(&[2, 4, 3], &mut rng);
            check(
                |t, v, _| {
                    let y = t.softmax(v[0], 1)?;
                    project(t, y, &mut projector())
                },
                &[("input", x)],
                &mut store,
                config,
            )
        }
        "cross_entropy" => {
            let x = random(&[2, 4, 2, 3], &mut rng);
            let targets: Vec<usize> = (0..12).map(|_| rng.random_range(0..5)).collect();
            let weights: Vec<f64> = (0..4).map(|_| rng.random_range(0.2..2.0)).collect();
            check(
                |t, v, _| t.cross_entropy(v[0], &targets, Some(&weights), Some(4)),
                &[("logits", x)],
                &mut store,
                config,
            )
        }
        "concat_narrow" => {
            let (a, b) = (random(&[2, 2, 3], &mut rng), random(&[2, 3, 3], &mut rng));
            check(
                |t, v, _| {
                    let c = t.concat(&[v[0], v[1]], 1)?;
                    let y = t.narrow(c, 1, 1, 3)?;
                    project(t, y, &mut projector())
                },
                &[("a", a), ("b", b)],
                &mut store,
                config,
            )
        }
        "bilinear_up" | "bilinear_down" => {
            let (h, w, oh, ow) = if op == "bilinear_up" { (3, 4, 7, 9) } else { (8, 7, 3, 5) };
            let x = random(&[1, 2, h, w], &mut rng);
            check(
                |t, v, _| {
                    let y = t.bilinear_resize(v[0], oh, ow)?;
                    project(t, y, &mut projector())
                },
                &[("input", x)],
                &mut store,
                config,
            )
        }
        "reshape_mean" => {
            let x = random(&[2, 3, 2], &mut rng);
            check(
                |t, v, _| {
                    let y = t.reshape(v[0], &[3, 4])?;
                    let r = project(t, y, &mut projector())?;
                    let m = t.mean(y);
                    t.add(r, m)
                },
                &[("input", x)],
                &mut store,
                config,
            )
        }
        other => Err(Error::Config(format!("unknown gradcheck op {other}"))),
    }
}
