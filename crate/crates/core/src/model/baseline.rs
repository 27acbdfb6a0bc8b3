//! The intuitive two-segmentation baseline: one shared network labels each
//! date independently and differing labels mark change.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::asn::{Decoder, Encoder};
use super::layers::Builder;
use super::predict::{intuitive_baseline, SemanticChangePrediction};
use super::ModelConfig;
use crate::tensor::{softmax_values, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Baseline {
    pub config: ModelConfig,
    pub store: ParamStore,
    encoder: Encoder,
    decoder: Decoder,
}

impl Baseline {
    /// Same encoder and decoder shapes as the semantic branch of the network.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xba5e);
        let mut b = Builder { store: &mut store, rng: &mut rng };
        let encoder = Encoder::build(&mut b, "base.enc", &config, config.input_channels)?;
        let decoder = Decoder::build(&mut b, "base.dec", &config, None, config.semantic_channels())?;
        Ok(Self { config, store, encoder, decoder })
    }

    /// Logits `[n, N+1, H, W]` for a batch of single images.
    pub(crate) fn logits(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let (_, c, h, w) = t.value(x).dims4()?;
        let sp = self.config.stride_product();
        if c != self.config.input_channels {
            return Err(Error::Dimension(format!("images have {c} channels, model expects {}", self.config.input_channels)));
        }
        if h % sp != 0 || w % sp != 0 {
            return Err(Error::Geometry(format!("extent {h}x{w} is not divisible by the stride product {sp}")));
        }
        let s = &self.store;
        let mut e = Vec::new();
        let mut cur = x;
        for blk in &self.encoder.stages {
            cur = blk.apply(t, s, cur)?;
            e.push(cur);
        }
        let f = self.decoder.entry.apply(t, s, *e.last().expect("at least one stage"))?;
        let f = self.decoder.merge(t, s, f)?;
        self.decoder.finish(t, s, f, &e, (h, w))
    }

    pub fn probabilities(&self, images: &Tensor) -> Result<Tensor> {
        let mut t = Tape::inference();
        let x = t.constant(images.clone());
        let l = self.logits(&mut t, x)?;
        Ok(softmax_values(t.value(l), 1))
    }

    pub fn predict(&self, i1: &Tensor, i2: &Tensor) -> Result<Vec<SemanticChangePrediction>> {
        let (p1, p2) = (self.probabilities(i1)?, self.probabilities(i2)?);
        let (n, k, h, w) = p1.dims4()?;
        (0..n)
            .map(|i| intuitive_baseline(&p1.sample(i).reshape(&[k, h, w])?, &p2.sample(i).reshape(&[k, h, w])?))
            .collect()
    }
}
