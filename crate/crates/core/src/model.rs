//! The full parameter bundle: adapter, encoder and both heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapter::{Activation, Adapter, AdapterVars};
use crate::encoder::{Encoder, EncoderConfig, EncoderVars};
use crate::error::{Error, Result};
use crate::objectives::{HeadVars, Heads};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// ROI count `V`.
    pub regions: usize,
    pub adapter_hidden: usize,
    pub activation: Activation,
    pub encoder: EncoderConfig,
    /// Width `E` of the latent vector produced by the classification head.
    pub latent_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            regions: 16,
            adapter_hidden: 1024,
            activation: Activation::Relu,
            encoder: EncoderConfig::default(),
            latent_dim: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.regions < 2 {
            return Err(Error::Config("at least two regions are required".into()));
        }
        if self.adapter_hidden == 0 || self.latent_dim == 0 {
            return Err(Error::Config("adapter_hidden and latent_dim must be positive".into()));
        }
        self.encoder.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub adapter: Adapter,
    pub encoder: Encoder,
    pub heads: Heads,
    pub rng_seed: u64,
}

impl ModelBundle {
    /// Fresh random initialization, fully trainable.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = config.encoder.embed;
        let adapter = Adapter::new(config.regions, config.adapter_hidden, b, config.activation, &mut rng);
        let encoder = Encoder::new(config.encoder, &mut rng)?;
        let heads = Heads::new(b, config.regions, config.latent_dim, &mut rng);
        Ok(Self {
            config,
            adapter,
            encoder,
            heads,
            rng_seed: seed,
        })
    }

    /// All-zero bundle with the layout implied by `config`.
    pub fn zeros(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let b = config.encoder.embed;
        Ok(Self {
            config,
            adapter: Adapter::zeros(config.regions, config.adapter_hidden, b, config.activation),
            encoder: Encoder::zeros(config.encoder)?,
            heads: Heads::zeros(b, config.regions, config.latent_dim),
            rng_seed: seed,
        })
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.adapter.named();
        out.extend(self.encoder.named());
        out.extend(self.heads.named());
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.adapter.named_mut();
        out.extend(self.encoder.named_mut());
        out.extend(self.heads.named_mut());
        out
    }

    pub fn freeze_encoder(&mut self) {
        self.encoder.set_frozen(true);
    }

    pub fn unfreeze_all(&mut self) {
        self.encoder.set_frozen(false);
        for (_, t) in self.named_mut() {
            t.requires_grad = true;
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundModel<'t> {
        BoundModel {
            adapter: self.adapter.bind(tape),
            encoder: self.encoder.bind(tape),
            heads: self.heads.bind(tape),
        }
    }

    /// SHA-256 over encoder tensor names, shapes and little-endian bytes.
    pub fn encoder_digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for (name, t) in self.encoder.named() {
            hasher.update((name.len() as u64).to_le_bytes());
            hasher.update(name.as_bytes());
            for d in t.shape() {
                hasher.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize().into()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let v = self.config.regions;
        if x.shape() != [v, v] {
            return Err(Error::dim("model input", x.shape(), &[v, v]));
        }
        Ok(())
    }

    /// Adapter → encoder → reconstruction head, without gradient tracking.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let tape = Tape::new();
        let m = self.bind(&tape);
        let z = m.encode(tape.constant(x.clone()))?;
        let out = m.heads.reconstruct(z)?;
        let value = out.value().clone();
        Ok(value)
    }

    /// Adapter → encoder → pooled, projected, unit-norm latent vector.
    pub fn latent(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let tape = Tape::new();
        let m = self.bind(&tape);
        let z = m.encode(tape.constant(x.clone()))?;
        let e = m.heads.embed(z)?;
        let value = e.value().data().to_vec();
        Ok(value)
    }
}

/// A [`ModelBundle`] recorded on a tape.
pub struct BoundModel<'t> {
    pub adapter: AdapterVars<'t>,
    pub encoder: EncoderVars<'t>,
    pub heads: HeadVars<'t>,
}

impl<'t> BoundModel<'t> {
    pub fn encode(&self, x: Var<'t>) -> Result<Var<'t>> {
        self.encoder.forward(self.adapter.forward(x)?)
    }

    /// Leaves in [`ModelBundle::named_mut`] order.
    pub fn leaves(&self) -> Vec<Var<'t>> {
        let mut out = self.adapter.leaves();
        out.extend(self.encoder.leaves());
        out.extend(self.heads.leaves());
        out
    }
}
