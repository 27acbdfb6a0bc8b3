//! Parameterized building blocks on top of the tape.

use rand_chacha::ChaCha8Rng;

use crate::tensor::{ConvGeometry, Init, ParamId, ParamStore, Tape, Var};
use crate::Result;

pub(crate) fn groups_for(c: usize) -> usize {
    if c % 4 == 0 {
        4
    } else if c % 2 == 0 {
        2
    } else {
        1
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub geom: ConvGeometry,
}

impl Conv {
    pub fn apply(&self, t: &mut Tape, s: &ParamStore, x: Var) -> Result<Var> {
        let (w, b) = (t.param(s, self.w), t.param(s, self.b));
        t.conv2d(x, w, Some(b), self.geom)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    pub scale: ParamId,
    pub shift: ParamId,
    pub groups: usize,
}

/// Convolution, group normalization and an optional ReLU.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Block {
    pub conv: Conv,
    pub norm: Norm,
    pub relu: bool,
}

impl Block {
    pub fn apply(&self, t: &mut Tape, s: &ParamStore, x: Var) -> Result<Var> {
        let y = self.conv.apply(t, s, x)?;
        let (sc, sh) = (t.param(s, self.norm.scale), t.param(s, self.norm.shift));
        let y = t.group_norm(y, self.norm.groups, sc, sh)?;
        Ok(if self.relu { t.relu(y) } else { y })
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn apply(&self, t: &mut Tape, s: &ParamStore, x: Var) -> Result<Var> {
        let (w, b) = (t.param(s, self.w), t.param(s, self.b));
        t.linear(x, w, b)
    }
}

/// Squeeze gate: concat -> 1x1 projection -> 3x3 conv -> plus a skip.
#[derive(Debug, Clone)]
pub(crate) struct Gate {
    pub project: Block,
    pub refine: Block,
    /// 1x1 projection of the skip when its width differs from the output.
    pub skip: Option<Conv>,
}

impl Gate {
    pub fn apply(&self, t: &mut Tape, s: &ParamStore, parts: &[Var], skip: Var) -> Result<Var> {
        let x = if parts.len() == 1 { parts[0] } else { t.concat(parts, 1)? };
        let y = self.project.apply(t, s, x)?;
        let y = self.refine.apply(t, s, y)?;
        let skip = match &self.skip {
            Some(c) => c.apply(t, s, skip)?,
            None => skip,
        };
        let y = t.add(y, skip)?;
        Ok(t.relu(y))
    }
}

/// Registers parameters under a name prefix.
pub(crate) struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, geom: ConvGeometry) -> Result<Conv> {
        let w = self.store.add(format!("{name}.weight"), &[cout, cin, k, k], Init::FanIn(cin * k * k), self.rng)?;
        let b = self.store.add(format!("{name}.bias"), &[cout], Init::Zeros, self.rng)?;
        Ok(Conv { w, b, geom })
    }

    pub fn zero_conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Result<Conv> {
        let w = self.store.add(format!("{name}.weight"), &[cout, cin, k, k], Init::Zeros, self.rng)?;
        let b = self.store.add(format!("{name}.bias"), &[cout], Init::Zeros, self.rng)?;
        Ok(Conv { w, b, geom: ConvGeometry::same(k, 1) })
    }

    pub fn block(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        geom: ConvGeometry,
        relu: bool,
    ) -> Result<Block> {
        let conv = self.conv(&format!("{name}.conv"), cin, cout, k, geom)?;
        let scale = self.store.add(format!("{name}.norm.scale"), &[cout], Init::Ones, self.rng)?;
        let shift = self.store.add(format!("{name}.norm.shift"), &[cout], Init::Zeros, self.rng)?;
        Ok(Block {
            conv,
            norm: Norm { scale, shift, groups: groups_for(cout) },
            relu,
        })
    }

    pub fn linear(&mut self, name: &str, din: usize, dout: usize) -> Result<Linear> {
        let w = self.store.add(format!("{name}.weight"), &[dout, din], Init::FanIn(din), self.rng)?;
        let b = self.store.add(format!("{name}.bias"), &[dout], Init::Zeros, self.rng)?;
        Ok(Linear { w, b })
    }

    pub fn gate(&mut self, name: &str, cin: usize, skip_width: usize, width: usize, k: usize) -> Result<Gate> {
        let project = self.block(&format!("{name}.project"), cin, width, 1, ConvGeometry::same(1, 1), true)?;
        let refine = self.block(&format!("{name}.refine"), width, width, k, ConvGeometry::same(k, 1), false)?;
        let skip = if skip_width == width {
            None
        } else {
            Some(self.conv(&format!("{name}.skip"), skip_width, width, 1, ConvGeometry::same(1, 1))?)
        };
        Ok(Gate { project, refine, skip })
    }
}

pub(crate) fn stride2(k: usize) -> ConvGeometry {
    ConvGeometry {
        stride: 2,
        padding: (k - 1) / 2,
        dilation: 1,
    }
}
