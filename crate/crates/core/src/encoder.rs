//! Multi-head self-attention encoder over ROI tokens.
//!
//! The `V` rows of the adapter output are the token sequence. Each layer
//! runs `H` attention heads against the previous layer's output,
//! concatenates them along the feature axis and projects with `W_o`.
//! Residual connections, layer norm and a feed-forward sub-block are each
//! switchable; with all three off a layer is the bare
//! `concat(head_1..head_H)·W_o` composition. No positional encoding is
//! used, so the encoder is equivariant to token permutations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub depth: usize,
    pub heads: usize,
    pub embed: usize,
    pub use_ffn: bool,
    pub ffn_hidden: usize,
    pub use_norm: bool,
    pub use_residual: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            heads: 4,
            embed: 64,
            use_ffn: true,
            ffn_hidden: 128,
            use_norm: true,
            use_residual: true,
        }
    }
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.embed / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.embed == 0 {
            return Err(Error::Config("encoder heads and embed must be positive".into()));
        }
        if !self.embed.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embed width {} is not divisible by {} heads",
                self.embed, self.heads
            )));
        }
        if self.use_ffn && self.ffn_hidden == 0 {
            return Err(Error::Config("ffn_hidden must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Norm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub heads: Vec<HeadWeights>,
    pub wo: Tensor,
    pub norm1: Option<Norm>,
    pub ffn: Option<FeedForward>,
    pub norm2: Option<Norm>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub layers: Vec<Layer>,
    frozen: bool,
}

enum Init<'a, R: Rng + ?Sized> {
    Random(&'a mut R),
    Zeros,
}

impl<R: Rng + ?Sized> Init<'_, R> {
    fn weight(&mut self, rows: usize, cols: usize) -> Tensor {
        match self {
            Init::Random(rng) => Tensor::uniform(&[rows, cols], 1.0 / (rows as f64).sqrt(), *rng),
            Init::Zeros => Tensor::zeros(&[rows, cols]),
        }
    }
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        Self::build(config, Init::Random(rng))
    }

    /// Same layout as [`Encoder::new`] with all weights zero; used when
    /// loading checkpoints.
    pub fn zeros(config: EncoderConfig) -> Result<Self> {
        Self::build::<rand_chacha::ChaCha8Rng>(config, Init::Zeros)
    }

    fn build<R: Rng + ?Sized>(config: EncoderConfig, mut init: Init<'_, R>) -> Result<Self> {
        config.validate()?;
        let b = config.embed;
        let dk = config.head_dim();
        let norm = || Norm {
            gamma: Tensor::filled(&[b], 1.0),
            beta: Tensor::zeros(&[b]),
        };
        let mut layers = Vec::with_capacity(config.depth);
        for _ in 0..config.depth {
            let heads = (0..config.heads)
                .map(|_| HeadWeights {
                    wq: init.weight(b, dk),
                    wk: init.weight(b, dk),
                    wv: init.weight(b, dk),
                })
                .collect();
            let wo = init.weight(b, b);
            let norm1 = config.use_norm.then(norm);
            let ffn = if config.use_ffn {
                Some(FeedForward {
                    w1: init.weight(b, config.ffn_hidden),
                    b1: Tensor::zeros(&[config.ffn_hidden]),
                    w2: init.weight(config.ffn_hidden, b),
                    b2: Tensor::zeros(&[b]),
                })
            } else {
                None
            };
            let norm2 = (config.use_ffn && config.use_norm).then(norm);
            layers.push(Layer {
                heads,
                wo,
                norm1,
                ffn,
                norm2,
            });
        }
        let mut enc = Self {
            config,
            layers,
            frozen: false,
        };
        enc.set_frozen(false);
        Ok(enc)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Freezing clears `requires_grad` on every encoder tensor.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
        for (_, t) in self.named_mut() {
            t.requires_grad = !frozen;
            t.grad = None;
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (d, layer) in self.layers.iter().enumerate() {
            let p = format!("encoder.layer{d}");
            for (h, head) in layer.heads.iter().enumerate() {
                out.push((format!("{p}.head{h}.wq"), &head.wq));
                out.push((format!("{p}.head{h}.wk"), &head.wk));
                out.push((format!("{p}.head{h}.wv"), &head.wv));
            }
            out.push((format!("{p}.wo"), &layer.wo));
            if let Some(n) = &layer.norm1 {
                out.push((format!("{p}.norm1.gamma"), &n.gamma));
                out.push((format!("{p}.norm1.beta"), &n.beta));
            }
            if let Some(f) = &layer.ffn {
                out.push((format!("{p}.ffn.w1"), &f.w1));
                out.push((format!("{p}.ffn.b1"), &f.b1));
                out.push((format!("{p}.ffn.w2"), &f.w2));
                out.push((format!("{p}.ffn.b2"), &f.b2));
            }
            if let Some(n) = &layer.norm2 {
                out.push((format!("{p}.norm2.gamma"), &n.gamma));
                out.push((format!("{p}.norm2.beta"), &n.beta));
            }
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (d, layer) in self.layers.iter_mut().enumerate() {
            let p = format!("encoder.layer{d}");
            for (h, head) in layer.heads.iter_mut().enumerate() {
                out.push((format!("{p}.head{h}.wq"), &mut head.wq));
                out.push((format!("{p}.head{h}.wk"), &mut head.wk));
                out.push((format!("{p}.head{h}.wv"), &mut head.wv));
            }
            out.push((format!("{p}.wo"), &mut layer.wo));
            if let Some(n) = &mut layer.norm1 {
                out.push((format!("{p}.norm1.gamma"), &mut n.gamma));
                out.push((format!("{p}.norm1.beta"), &mut n.beta));
            }
            if let Some(f) = &mut layer.ffn {
                out.push((format!("{p}.ffn.w1"), &mut f.w1));
                out.push((format!("{p}.ffn.b1"), &mut f.b1));
                out.push((format!("{p}.ffn.w2"), &mut f.w2));
                out.push((format!("{p}.ffn.b2"), &mut f.b2));
            }
            if let Some(n) = &mut layer.norm2 {
                out.push((format!("{p}.norm2.gamma"), &mut n.gamma));
                out.push((format!("{p}.norm2.beta"), &mut n.beta));
            }
        }
        out
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> EncoderVars<'t> {
        let leaves = self.named().into_iter().map(|(_, t)| tape.param(t)).collect();
        EncoderVars {
            config: self.config,
            leaves,
        }
    }
}

/// Encoder parameters recorded on a tape, in [`Encoder::named`] order.
pub struct EncoderVars<'t> {
    config: EncoderConfig,
    leaves: Vec<Var<'t>>,
}

impl<'t> EncoderVars<'t> {
    pub fn leaves(&self) -> Vec<Var<'t>> {
        self.leaves.clone()
    }

    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let cfg = &self.config;
        let (_, width) = {
            let xv = x.value();
            xv.dims2()?
        };
        if width != cfg.embed {
            return Err(Error::dim("encoder_forward", &x.shape(), &[0, cfg.embed]));
        }
        let mut it = self.leaves.iter().copied();
        let mut next = || it.next().expect("leaf layout matches config");
        let mut h = x;
        for _ in 0..cfg.depth {
            let mut head_outs = Vec::with_capacity(cfg.heads);
            for _ in 0..cfg.heads {
                let (wq, wk, wv) = (next(), next(), next());
                head_outs.push(attention_head(h, wq, wk, wv)?);
            }
            let wo = next();
            let mut a = Var::concat_cols(&head_outs)?.matmul(&wo)?;
            if cfg.use_residual {
                a = a.add(&h)?;
            }
            if cfg.use_norm {
                let (g, b) = (next(), next());
                a = a.layer_norm(&g, &b)?;
            }
            h = a;
            if cfg.use_ffn {
                let (w1, b1, w2, b2) = (next(), next(), next(), next());
                let mut f = h.matmul(&w1)?.add_bias(&b1)?.relu().matmul(&w2)?.add_bias(&b2)?;
                if cfg.use_residual {
                    f = f.add(&h)?;
                }
                if cfg.use_norm {
                    let (g, b) = (next(), next());
                    f = f.layer_norm(&g, &b)?;
                }
                h = f;
            }
        }
        Ok(h)
    }
}

/// Attention weights `softmax_rows(Q·Kᵀ/√d_k)` for one head.
pub fn attention_weights<'t>(x: Var<'t>, wq: Var<'t>, wk: Var<'t>) -> Result<Var<'t>> {
    let q = x.matmul(&wq)?;
    let k = x.matmul(&wk)?;
    let dk = q.shape()[1];
    q.matmul(&k.transpose()?)?
        .mul_scalar(1.0 / (dk as f64).sqrt())
        .softmax_rows()
}

/// One head: `softmax_rows(Q·Kᵀ/√d_k)·(x·W_v)`.
pub fn attention_head<'t>(x: Var<'t>, wq: Var<'t>, wk: Var<'t>, wv: Var<'t>) -> Result<Var<'t>> {
    let (wq_shape, wk_shape, wv_shape) = (wq.shape(), wk.shape(), wv.shape());
    if wq_shape != wk_shape || wq_shape != wv_shape {
        return Err(Error::dim("attention_head", &wq_shape, &wv_shape));
    }
    let weights = attention_weights(x, wq, wk)?;
    weights.matmul(&x.matmul(&wv)?)
}

/// Forward pass without gradient tracking.
pub fn encoder_forward(x: &Tensor, encoder: &Encoder) -> Result<Tensor> {
    let tape = Tape::new();
    let vars = encoder.bind(&tape);
    let out = vars.forward(tape.constant(x.clone()))?;
    let value = out.value().clone();
    Ok(value)
}
