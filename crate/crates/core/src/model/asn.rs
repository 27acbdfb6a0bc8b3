//! The asymmetric siamese network.

use std::cell::Cell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{stride2, Block, Builder, Conv, Gate, Linear};
use super::ModelConfig;
use crate::tensor::{ConvGeometry, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

/// Softmax-normalized branch weights, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchWeights {
    /// `[n, N_c * N_d]`, entry `i * N_d + j` scales sequence member `i` at rate `j`.
    pub v1: Tensor,
    pub v2: Tensor,
    /// `[n, N_r]`.
    pub w1: Tensor,
    pub w2: Tensor,
    pub wc: Tensor,
}

impl BranchWeights {
    pub fn all(&self) -> [&Tensor; 5] {
        [&self.v1, &self.v2, &self.w1, &self.w2, &self.wc]
    }
}

/// Everything a forward pass produces, copied off the tape.
#[derive(Debug, Clone)]
pub struct ForwardOutputs {
    /// `[n, N+1, H, W]` semantic logits, channel 0 is blank.
    pub m1_raw: Tensor,
    pub m2_raw: Tensor,
    /// `[n, 2, H, W]` change logits.
    pub c_raw: Tensor,
    pub weights: BranchWeights,
    /// `F^(t)_{j,k}` at index `k * N_d + j`.
    pub pyramid1: Vec<Tensor>,
    pub pyramid2: Vec<Tensor>,
    /// Fused maps `F^(t)_k` that feed the semantic decoders.
    pub fused1: Vec<Tensor>,
    pub fused2: Vec<Tensor>,
    /// Change-branch representation maps `F^c_k`.
    pub change_repr: Vec<Tensor>,
    /// `M^(t)_k`.
    pub repr1: Vec<Tensor>,
    pub repr2: Vec<Tensor>,
    /// `M_{j1,j2,k}` at index `(k * N_d + j1) * N_d + j2`.
    pub pair_maps_spatial: Vec<Tensor>,
    /// `M^c_{k1,k2}` at index `k1 * N_r + k2`.
    pub pair_maps_repr: Vec<Tensor>,
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone)]
pub(crate) struct ForwardVars {
    pub m1: Var,
    pub m2: Var,
    pub c: Var,
    pub v: Var,
    pub w: Var,
    pub wc: Var,
    pub pyramid: Vec<Var>,
    pub fused: Vec<Var>,
    pub change_repr: Vec<Var>,
    pub repr: Vec<Var>,
    pub spatial: Vec<Var>,
    pub pairs_repr: Vec<Var>,
    pub n: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Encoder {
    pub stages: Vec<Block>,
}

impl Encoder {
    pub(crate) fn build(b: &mut Builder, name: &str, cfg: &ModelConfig, cin: usize) -> Result<Self> {
        let k = cfg.kernel_size;
        let mut stages = Vec::new();
        let mut c = cin;
        for s in 0..cfg.encoder_blocks {
            let geom = if s < cfg.downsample_stages { stride2(k) } else { ConvGeometry::same(k, 1) };
            let out = cfg.stage_width(s);
            stages.push(b.block(&format!("{name}.s{s}"), c, out, k, geom, true)?);
            c = out;
        }
        Ok(Self { stages })
    }
}

/// Entry block, optional merge, refinement blocks at the deepest resolution,
/// then per stage a block, an upsample and a summation skip, then a 1x1 head.
#[derive(Debug, Clone)]
pub(crate) struct Decoder {
    pub entry: Block,
    pub merge: Option<Block>,
    pub ups: Vec<Block>,
    pub refine: Vec<Block>,
    pub head: Conv,
}

impl Decoder {
    pub(crate) fn build(
        b: &mut Builder,
        name: &str,
        cfg: &ModelConfig,
        merge_in: Option<usize>,
        out: usize,
    ) -> Result<Self> {
        let k = cfg.kernel_size;
        let same = ConvGeometry::same(k, 1);
        let deep = cfg.deep_width();
        let entry = b.block(&format!("{name}.entry"), deep, deep, k, same, true)?;
        let merge = match merge_in {
            Some(c) => Some(b.block(&format!("{name}.merge"), c, deep, 1, ConvGeometry::same(1, 1), true)?),
            None => None,
        };
        let mut refine = Vec::new();
        for r in 0..cfg.decoder_blocks - cfg.downsample_stages {
            refine.push(b.block(&format!("{name}.refine{r}"), deep, deep, k, same, true)?);
        }
        let mut ups = Vec::new();
        let mut c = deep;
        for l in (0..cfg.downsample_stages - 1).rev() {
            let w = cfg.stage_width(l);
            ups.push(b.block(&format!("{name}.up{l}"), c, w, k, same, true)?);
            c = w;
        }
        let head = b.conv(&format!("{name}.head"), c, out, 1, ConvGeometry::same(1, 1))?;
        Ok(Self { entry, merge, ups, refine, head })
    }

    pub(crate) fn merge(&self, t: &mut Tape, s: &ParamStore, x: Var) -> Result<Var> {
        match &self.merge {
            Some(m) => m.apply(t, s, x),
            None => Ok(x),
        }
    }

    /// Runs everything after the merge; `skips[l]` is encoder stage `l`.
    pub(crate) fn finish(&self, t: &mut Tape, s: &ParamStore, mut x: Var, skips: &[Var], out_hw: (usize, usize)) -> Result<Var> {
        for blk in &self.refine {
            x = blk.apply(t, s, x)?;
        }
        let levels = self.ups.len();
        for (i, blk) in self.ups.iter().enumerate() {
            let l = levels - 1 - i;
            let (_, _, h, w) = t.value(skips[l]).dims4()?;
            x = blk.apply(t, s, x)?;
            x = t.bilinear_resize(x, h, w)?;
            x = t.add(x, skips[l])?;
        }
        let y = self.head.apply(t, s, x)?;
        t.bilinear_resize(y, out_hw.0, out_hw.1)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Perceptron {
    pub hidden: Linear,
    pub out: Linear,
}

impl Perceptron {
    fn build(b: &mut Builder, name: &str, din: usize, hidden: usize, dout: usize) -> Result<Self> {
        Ok(Self {
            hidden: b.linear(&format!("{name}.l0"), din, hidden)?,
            out: b.linear(&format!("{name}.l1"), hidden, dout)?,
        })
    }

    /// Global pooling, two layers, softmax over the output vector.
    fn apply(&self, t: &mut Tape, s: &ParamStore, shallow: Var) -> Result<Var> {
        let g = t.global_avg_pool(shallow)?;
        let (n, c) = (t.shape(g)[0], t.shape(g)[1]);
        let g = t.reshape(g, &[n, c])?;
        let h = self.hidden.apply(t, s, g)?;
        let h = t.relu(h);
        let o = self.out.apply(t, s, h)?;
        t.softmax(o, 1)
    }
}

/// Dilated sequences, squeeze gates, a global level and the fusing gates.
#[derive(Debug, Clone)]
pub(crate) struct Pyramid {
    /// `phi[j][k][i]`.
    pub phi: Vec<Vec<Vec<Conv>>>,
    /// `gates[j][k]`.
    pub gates: Vec<Vec<Gate>>,
    pub global: Vec<Conv>,
    pub fuse: Vec<Gate>,
}

impl Pyramid {
    fn build(b: &mut Builder, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let (deep, p, k) = (cfg.deep_width(), cfg.pyramid_width, cfg.kernel_size);
        let mut phi = Vec::new();
        let mut gates = Vec::new();
        for j in 0..cfg.n_d() {
            let geom = ConvGeometry::same(k, cfg.dilation(j));
            let mut pj = Vec::new();
            let mut gj = Vec::new();
            for (kk, &r) in cfg.multipliers.iter().enumerate() {
                let mut seq = Vec::new();
                for (i, &c) in cfg.channel_params.iter().enumerate() {
                    seq.push(b.conv(&format!("{name}.phi.j{j}.k{kk}.i{i}"), deep, c * r, k, geom)?);
                }
                let width: usize = cfg.channel_params.iter().map(|c| c * r).sum::<usize>() + deep;
                gj.push(b.gate(&format!("{name}.gate.j{j}.k{kk}"), width, deep, p, k)?);
                pj.push(seq);
            }
            phi.push(pj);
            gates.push(gj);
        }
        let mut global = Vec::new();
        let mut fuse = Vec::new();
        for kk in 0..cfg.n_r() {
            global.push(b.conv(&format!("{name}.global.k{kk}"), deep, p, 1, ConvGeometry::same(1, 1))?);
            fuse.push(b.gate(&format!("{name}.fuse.k{kk}"), (cfg.n_d() + 1) * p, cfg.stage_width(0), p, k)?);
        }
        Ok(Self { phi, gates, global, fuse })
    }

    /// `F_{j,k}` for all `(j, k)` at index `k * N_d + j`. With `v`, sequence
    /// member `i` at rate `j` is scaled by column `i * N_d + j`.
    fn levels(&self, t: &mut Tape, s: &ParamStore, f: Var, v: Option<Var>) -> Result<Vec<Var>> {
        let nd = self.phi.len();
        let nr = self.global.len();
        let mut out = vec![f; nd * nr];
        for j in 0..nd {
            for kk in 0..nr {
                let mut parts = Vec::new();
                for (i, conv) in self.phi[j][kk].iter().enumerate() {
                    let y = conv.apply(t, s, f)?;
                    let y = t.relu(y);
                    parts.push(match v {
                        Some(v) => t.scale_by_sample(y, v, i * nd + j)?,
                        None => y,
                    });
                }
                parts.push(f);
                out[kk * nd + j] = self.gates[j][kk].apply(t, s, &parts, f)?;
            }
        }
        Ok(out)
    }

    /// Fused map per `k`: the gate over the `N_d` levels and the global level,
    /// all scaled by `w[:, k]`, with a skip from the shallow features.
    fn fuse(&self, t: &mut Tape, s: &ParamStore, f: Var, levels: &[Var], w: Var, shallow: Var) -> Result<Vec<Var>> {
        let nd = self.phi.len();
        let (_, _, h, wd) = t.value(f).dims4()?;
        let pooled = t.global_avg_pool(f)?;
        let mut out = Vec::new();
        for (kk, gate) in self.fuse.iter().enumerate() {
            let g = self.global[kk].apply(t, s, pooled)?;
            let g = t.bilinear_resize(g, h, wd)?;
            let mut parts: Vec<Var> = (0..nd).map(|j| levels[kk * nd + j]).collect();
            parts.push(g);
            let cat = t.concat(&parts, 1)?;
            let scaled = t.scale_by_sample(cat, w, kk)?;
            out.push(gate.apply(t, s, &[scaled], shallow)?);
        }
        Ok(out)
    }
}

/// A two-layer convolution series used by the refinement stage.
#[derive(Debug, Clone)]
pub(crate) struct Series {
    pub first: Conv,
    pub second: Conv,
}

impl Series {
    fn apply(&self, t: &mut Tape, s: &ParamStore, x: Var) -> Result<Var> {
        let y = self.first.apply(t, s, x)?;
        let y = t.relu(y);
        self.second.apply(t, s, y)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Parts {
    pub sem_encoder: Encoder,
    pub chg_encoder: Encoder,
    pub v_gen: Perceptron,
    pub w_gen: Perceptron,
    pub wc_gen: Perceptron,
    pub sem_pyramid: Pyramid,
    pub chg_pyramid: Pyramid,
    /// Per `k`: integrates `F^c_k` with one image's levels into `M^(t)_k`.
    pub repr_proj: Vec<Block>,
    pub sem_decoder: Decoder,
    pub chg_decoder: Decoder,
    pub psi1: Series,
    pub psi2: Series,
}

/// The network and its parameters.
#[derive(Debug, Clone)]
pub struct Asn {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub(crate) parts: Parts,
    forward_calls: Cell<usize>,
}

/// Prefix of the refinement-stage parameters.
pub const ATL_PREFIX: &str = "atl.";

impl Asn {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut b = Builder { store: &mut store, rng: &mut rng };
        let cfg = &config;
        let (nd, nr, p, k) = (cfg.n_d(), cfg.n_r(), cfg.pyramid_width, cfg.kernel_size);
        let shallow = cfg.stage_width(0);
        let sem_encoder = Encoder::build(&mut b, "sem.enc", cfg, cfg.input_channels)?;
        let chg_encoder = Encoder::build(&mut b, "chg.enc", cfg, 2 * cfg.input_channels)?;
        let v_gen = Perceptron::build(&mut b, "sem.bw.v", shallow, cfg.perceptron_hidden, cfg.n_c() * nd)?;
        let w_gen = Perceptron::build(&mut b, "sem.bw.w", shallow, cfg.perceptron_hidden, nr)?;
        let wc_gen = Perceptron::build(&mut b, "chg.bw.w", shallow, cfg.perceptron_hidden, nr)?;
        let sem_pyramid = Pyramid::build(&mut b, "sem.asp", cfg)?;
        let chg_pyramid = Pyramid::build(&mut b, "chg.arp", cfg)?;
        let mut repr_proj = Vec::new();
        for kk in 0..nr {
            repr_proj.push(b.block(
                &format!("chg.arp.repr.k{kk}"),
                (nd + 1) * p,
                p,
                1,
                ConvGeometry::same(1, 1),
                true,
            )?);
        }
        let deep = cfg.deep_width();
        let ks = cfg.semantic_channels();
        let sem_decoder = Decoder::build(&mut b, "sem.dec", cfg, Some(deep + nr * p), ks)?;
        let chg_decoder = Decoder::build(&mut b, "chg.dec", cfg, Some(deep + (nd * nd * nr + nr * nr) * p), 2)?;
        let same = ConvGeometry::same(k, 1);
        let h = cfg.atl_hidden;
        let psi1 = Series {
            first: b.conv("atl.psi1.l0", ks, h, k, same)?,
            second: b.zero_conv("atl.psi1.l1", h, ks, 1)?,
        };
        let psi2 = Series {
            first: b.conv("atl.psi2.l0", 2 * ks, h, k, same)?,
            second: b.zero_conv("atl.psi2.l1", h, 2, 1)?,
        };
        let parts = Parts {
            sem_encoder,
            chg_encoder,
            v_gen,
            w_gen,
            wc_gen,
            sem_pyramid,
            chg_pyramid,
            repr_proj,
            sem_decoder,
            chg_decoder,
            psi1,
            psi2,
        };
        Ok(Self {
            config,
            store,
            parts,
            forward_calls: Cell::new(0),
        })
    }

    /// Number of forward passes run so far (an invocation probe).
    pub fn forward_calls(&self) -> usize {
        self.forward_calls.get()
    }

    pub fn reset_forward_calls(&self) {
        self.forward_calls.set(0);
    }

    pub fn check_inputs(&self, i1: &Tensor, i2: &Tensor) -> Result<()> {
        if i1.shape() != i2.shape() {
            return Err(Error::Dimension(format!("image shapes {:?} and {:?} differ", i1.shape(), i2.shape())));
        }
        let (_, c, h, w) = i1.dims4()?;
        if c != self.config.input_channels {
            return Err(Error::Dimension(format!(
                "images have {c} channels, model expects {}",
                self.config.input_channels
            )));
        }
        let sp = self.config.stride_product();
        if h % sp != 0 || w % sp != 0 {
            return Err(Error::Geometry(format!("extent {h}x{w} is not divisible by the stride product {sp}")));
        }
        Ok(())
    }

    /// Record a full forward pass of images `[n, d, H, W]`.
    pub(crate) fn forward_vars(&self, t: &mut Tape, i1: Var, i2: Var) -> Result<ForwardVars> {
        self.check_inputs(t.value(i1), t.value(i2))?;
        self.forward_calls.set(self.forward_calls.get() + 1);
        let s = &self.store;
        let p = &self.parts;
        let cfg = &self.config;
        let (nd, nr) = (cfg.n_d(), cfg.n_r());
        let (n, _, h, w) = t.value(i1).dims4()?;

        // siamese encoders run once on the stacked batch [I1; I2]
        let x = t.concat(&[i1, i2], 0)?;
        let mut e = Vec::new();
        let mut cur = x;
        for blk in &p.sem_encoder.stages {
            cur = blk.apply(t, s, cur)?;
            e.push(cur);
        }
        let xc = t.concat(&[i1, i2], 1)?;
        let mut ec = Vec::new();
        let mut cur = xc;
        for (blk, &es) in p.chg_encoder.stages.iter().zip(&e) {
            cur = blk.apply(t, s, cur)?;
            let a = t.narrow(es, 0, 0, n)?;
            let b = t.narrow(es, 0, n, n)?;
            cur = t.add(cur, a)?;
            cur = t.add(cur, b)?;
            ec.push(cur);
        }

        let v = p.v_gen.apply(t, s, e[0])?;
        let wv = p.w_gen.apply(t, s, e[0])?;
        let wc = p.wc_gen.apply(t, s, ec[0])?;

        let last = cfg.encoder_blocks - 1;
        let f = p.sem_decoder.entry.apply(t, s, e[last])?;
        let fc = p.chg_decoder.entry.apply(t, s, ec[last])?;
        let (_, _, hb, wb) = t.value(f).dims4()?;
        let fs = t.bilinear_resize(e[0], hb, wb)?;
        let fcs = t.bilinear_resize(ec[0], hb, wb)?;

        // spatial pyramid and semantic fusion
        let levels = p.sem_pyramid.levels(t, s, f, Some(v))?;
        let fused = p.sem_pyramid.fuse(t, s, f, &levels, wv, fs)?;
        let mut spatial = Vec::with_capacity(nd * nd * nr);
        for kk in 0..nr {
            let mut a = Vec::new();
            let mut b = Vec::new();
            for j in 0..nd {
                let scaled = t.scale_by_sample(levels[kk * nd + j], wv, kk)?;
                a.push(t.narrow(scaled, 0, 0, n)?);
                b.push(t.narrow(scaled, 0, n, n)?);
            }
            for j1 in 0..nd {
                for j2 in 0..nd {
                    spatial.push(t.sub(a[j1], b[j2])?);
                }
            }
        }

        // representation pyramid
        let clevels = p.chg_pyramid.levels(t, s, fc, None)?;
        let change_repr = p.chg_pyramid.fuse(t, s, fc, &clevels, wc, fcs)?;
        let repr = self.repr_maps(t, &change_repr, &levels)?;
        let pairs_repr = pair_differences(t, &repr, n)?;

        // semantic decoders
        let mut parts = vec![f];
        parts.extend(&fused);
        let cat = t.concat(&parts, 1)?;
        let x = p.sem_decoder.merge(t, s, cat)?;
        let m = p.sem_decoder.finish(t, s, x, &e, (h, w))?;
        let m1 = t.narrow(m, 0, 0, n)?;
        let m2 = t.narrow(m, 0, n, n)?;

        // change decoder
        let mut parts = vec![fc];
        parts.extend(&spatial);
        parts.extend(&pairs_repr);
        let cat = t.concat(&parts, 1)?;
        let x = p.chg_decoder.merge(t, s, cat)?;
        let c = p.chg_decoder.finish(t, s, x, &ec, (h, w))?;

        Ok(ForwardVars {
            m1,
            m2,
            c,
            v,
            w: wv,
            wc,
            pyramid: levels,
            fused,
            change_repr,
            repr,
            spatial,
            pairs_repr,
            n,
        })
    }

    /// `M^(t)_k` for the stacked batch: projection of `F^c_k` concatenated with
    /// the `N_d` levels of one image at index `k`.
    pub(crate) fn repr_maps(&self, t: &mut Tape, change_repr: &[Var], levels: &[Var]) -> Result<Vec<Var>> {
        let nd = self.config.n_d();
        let mut out = Vec::new();
        for (kk, &fk) in change_repr.iter().enumerate() {
            let twice = t.concat(&[fk, fk], 0)?;
            let mut parts = vec![twice];
            parts.extend((0..nd).map(|j| levels[kk * nd + j]));
            let cat = t.concat(&parts, 1)?;
            out.push(self.parts.repr_proj[kk].apply(t, &self.store, cat)?);
        }
        Ok(out)
    }

    /// Representation pair maps from given `F^c_k` and per-image levels
    /// (`levels1[k * N_d + j]`), outside a full forward pass.
    pub fn arp_pairs(&self, change_repr: &[Tensor], levels1: &[Tensor], levels2: &[Tensor]) -> Result<Vec<Tensor>> {
        let mut t = Tape::inference();
        let fc: Vec<Var> = change_repr.iter().map(|x| t.constant(x.clone())).collect();
        let mut lv = Vec::new();
        for (a, b) in levels1.iter().zip(levels2) {
            let (a, b) = (t.constant(a.clone()), t.constant(b.clone()));
            lv.push(t.concat(&[a, b], 0)?);
        }
        let n = change_repr.first().map(|x| x.shape()[0]).unwrap_or(0);
        let repr = self.repr_maps(&mut t, &fc, &lv)?;
        let pairs = pair_differences(&mut t, &repr, n)?;
        Ok(pairs.iter().map(|&v| t.value(v).clone()).collect())
    }

    pub(crate) fn collect(&self, t: &Tape, fv: &ForwardVars) -> Result<ForwardOutputs> {
        let n = fv.n;
        let val = |v: Var| t.value(v).clone();
        let half = |v: Var, first: bool| -> Result<Tensor> {
            let x = t.value(v);
            let per = x.len() / (2 * n);
            let mut shape = x.shape().to_vec();
            shape[0] = n;
            let off = if first { 0 } else { n * per };
            Tensor::new(&shape, x.data()[off..off + n * per].to_vec())
        };
        let halves = |vs: &[Var], first: bool| -> Result<Vec<Tensor>> { vs.iter().map(|&v| half(v, first)).collect() };
        Ok(ForwardOutputs {
            m1_raw: val(fv.m1),
            m2_raw: val(fv.m2),
            c_raw: val(fv.c),
            weights: BranchWeights {
                v1: half(fv.v, true)?,
                v2: half(fv.v, false)?,
                w1: half(fv.w, true)?,
                w2: half(fv.w, false)?,
                wc: val(fv.wc),
            },
            pyramid1: halves(&fv.pyramid, true)?,
            pyramid2: halves(&fv.pyramid, false)?,
            fused1: halves(&fv.fused, true)?,
            fused2: halves(&fv.fused, false)?,
            change_repr: fv.change_repr.iter().map(|&v| val(v)).collect(),
            repr1: halves(&fv.repr, true)?,
            repr2: halves(&fv.repr, false)?,
            pair_maps_spatial: fv.spatial.iter().map(|&v| val(v)).collect(),
            pair_maps_repr: fv.pairs_repr.iter().map(|&v| val(v)).collect(),
        })
    }

    /// Inference forward pass of `[n, d, H, W]` images.
    pub fn forward(&self, i1: &Tensor, i2: &Tensor) -> Result<ForwardOutputs> {
        let mut t = Tape::inference();
        let (a, b) = (t.constant(i1.clone()), t.constant(i2.clone()));
        let fv = self.forward_vars(&mut t, a, b)?;
        self.collect(&t, &fv)
    }

    /// Refinement of raw maps; returns refined semantic logits and refined
    /// change logits (softmax of the latter is the change probability).
    pub(crate) fn atl_vars(&self, t: &mut Tape, m1: Var, m2: Var, c: Var) -> Result<(Var, Var, Var)> {
        let s = &self.store;
        let gamma = self.config.gamma;
        let n = t.shape(m1)[0];
        let m = t.concat(&[m1, m2], 0)?;
        let r = self.parts.psi1.apply(t, s, m)?;
        let r = t.scale(r, gamma);
        let mh = t.add(m, r)?;
        let m1h = t.narrow(mh, 0, 0, n)?;
        let m2h = t.narrow(mh, 0, n, n)?;
        let both = t.concat(&[m1h, m2h], 1)?;
        let r = self.parts.psi2.apply(t, s, both)?;
        let r = t.scale(r, gamma);
        let ch = t.add(c, r)?;
        Ok((m1h, m2h, ch))
    }

    /// Refined `(m1_hat_raw, m2_hat_raw, c_hat_raw)` from raw maps.
    pub fn atl_forward(&self, m1_raw: &Tensor, m2_raw: &Tensor, c_raw: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let mut t = Tape::inference();
        let (a, b, c) = (t.constant(m1_raw.clone()), t.constant(m2_raw.clone()), t.constant(c_raw.clone()));
        let (x, y, z) = self.atl_vars(&mut t, a, b, c)?;
        Ok((t.value(x).clone(), t.value(y).clone(), t.value(z).clone()))
    }

    /// Freeze everything except the refinement series.
    pub fn freeze_backbone(&mut self) {
        self.store.freeze_except(|name| name.starts_with(ATL_PREFIX));
    }

    /// Freeze the refinement series only (first-stage training).
    pub fn freeze_refinement(&mut self) {
        self.store.freeze_except(|name| !name.starts_with(ATL_PREFIX));
    }
}

/// `out[k1 * K + k2] = maps[k1][:n] - maps[k2][n:]`.
fn pair_differences(t: &mut Tape, maps: &[Var], n: usize) -> Result<Vec<Var>> {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for &m in maps {
        a.push(t.narrow(m, 0, 0, n)?);
        b.push(t.narrow(m, 0, n, n)?);
    }
    let mut out = Vec::new();
    for &x in &a {
        for &y in &b {
            out.push(t.sub(x, y)?);
        }
    }
    Ok(out)
}
