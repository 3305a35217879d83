//! Reconstruction and classification heads, and the three training losses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Weights of the joint objective `λc·L_c + λr·L_r` and the InfoNCE temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_c: f64,
    pub lambda_r: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_c: 0.2,
            lambda_r: 5.0,
            tau: 0.07,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_c >= 0.0 && self.lambda_r >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.lambda_c == 0.0 && self.lambda_r == 0.0 {
            return Err(Error::Config("lambda_c and lambda_r cannot both be zero".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Reconstruction head (`V×B → V×V`) and classification head
/// (`V×B → E`, mean-pooled then L2-normalized).
#[derive(Clone, Debug, PartialEq)]
pub struct Heads {
    pub recon_w: Tensor,
    pub recon_b: Tensor,
    pub cls_w: Tensor,
}

pub struct HeadVars<'t> {
    pub recon_w: Var<'t>,
    pub recon_b: Var<'t>,
    pub cls_w: Var<'t>,
}

impl Heads {
    pub fn new<R: Rng + ?Sized>(embed: usize, regions: usize, latent: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (embed as f64).sqrt();
        Self {
            recon_w: Tensor::uniform(&[embed, regions], bound, rng).with_grad(true),
            recon_b: Tensor::zeros(&[regions]).with_grad(true),
            cls_w: Tensor::uniform(&[embed, latent], bound, rng).with_grad(true),
        }
    }

    pub fn zeros(embed: usize, regions: usize, latent: usize) -> Self {
        Self {
            recon_w: Tensor::zeros(&[embed, regions]).with_grad(true),
            recon_b: Tensor::zeros(&[regions]).with_grad(true),
            cls_w: Tensor::zeros(&[embed, latent]).with_grad(true),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("heads.recon_w".into(), &self.recon_w),
            ("heads.recon_b".into(), &self.recon_b),
            ("heads.cls_w".into(), &self.cls_w),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("heads.recon_w".into(), &mut self.recon_w),
            ("heads.recon_b".into(), &mut self.recon_b),
            ("heads.cls_w".into(), &mut self.cls_w),
        ]
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> HeadVars<'t> {
        HeadVars {
            recon_w: tape.param(&self.recon_w),
            recon_b: tape.param(&self.recon_b),
            cls_w: tape.param(&self.cls_w),
        }
    }
}

impl<'t> HeadVars<'t> {
    pub fn leaves(&self) -> Vec<Var<'t>> {
        vec![self.recon_w, self.recon_b, self.cls_w]
    }

    /// Maps encoder output back to a `V×V` matrix.
    pub fn reconstruct(&self, z: Var<'t>) -> Result<Var<'t>> {
        z.matmul(&self.recon_w)?.add_bias(&self.recon_b)
    }

    /// Mean over tokens, projection to `E` dims, unit-norm scaling. Shape `1×E`.
    pub fn embed(&self, z: Var<'t>) -> Result<Var<'t>> {
        z.mean_rows()?.matmul(&self.cls_w)?.l2_normalize()
    }
}

/// `(1/N)·Σ(target − pred)²` over all `N` elements.
pub fn mse_loss<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    let n = pred.value().len();
    if n == 0 {
        return Err(Error::DegenerateInput("mse over an empty tensor".into()));
    }
    Ok(pred.sub(&target)?.square().sum().mul_scalar(1.0 / n as f64))
}

/// `−log( exp(sim(q,k⁺)/τ) / Σⱼ exp(sim(q,kⱼ)/τ) )` where the sum runs over
/// the positive and every negative, and `sim` is cosine similarity.
pub fn infonce_loss<'t>(query: Var<'t>, positive: Var<'t>, negatives: &[Var<'t>], tau: f64) -> Result<Var<'t>> {
    if negatives.is_empty() {
        return Err(Error::Input("InfoNCE needs at least one negative".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let mut sims = Vec::with_capacity(negatives.len() + 1);
    sims.push(query.cosine_similarity(&positive)?);
    for neg in negatives {
        sims.push(query.cosine_similarity(neg)?);
    }
    // Shift by the (constant) largest similarity so every exponent is ≤ 0
    // and the partition sum stays ≥ 1.
    let shift = sims.iter().map(Var::item).fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<Var<'t>> = sims
        .iter()
        .map(|s| s.add_scalar(-shift).mul_scalar(1.0 / tau))
        .collect();
    let mut partition = scaled[0].exp();
    for s in &scaled[1..] {
        partition = partition.add(&s.exp())?;
    }
    partition.log().sub(&scaled[0])
}

/// `λc·l_c + λr·l_r`.
pub fn combined_loss<'t>(l_c: Var<'t>, l_r: Var<'t>, weights: &LossWeights) -> Result<Var<'t>> {
    l_c.mul_scalar(weights.lambda_c)
        .add(&l_r.mul_scalar(weights.lambda_r))
}
