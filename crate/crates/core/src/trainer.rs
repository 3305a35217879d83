//! Training loops: self-supervised pretraining of the whole model and
//! frozen-encoder fine-tuning of the adapter and heads.
//!
//! Each subject in a batch is seen as two stochastic views (a random
//! fraction of off-diagonal couplings zeroed symmetrically). Both views
//! are encoded; the reconstruction head must recover the unmasked matrix
//! and the classification head embeddings of the two views form the
//! positive pair for InfoNCE, with the other subjects' second views as
//! negatives.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::connectome::ConnectivityMatrix;
use crate::error::{Error, Result};
use crate::objectives::{combined_loss, infonce_loss, mse_loss, LossWeights};
use crate::optim::{adam_step, AdamState};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub use crate::model::ModelBundle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Finetune,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phase: Phase,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss_weights: LossWeights,
    /// Fraction of off-diagonal pairs zeroed in each view.
    pub mask_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(phase: Phase) -> Self {
        Self {
            phase,
            lr: 3e-4,
            weight_decay: 5e-5,
            epochs: 500,
            batch_size: 16,
            loss_weights: LossWeights::default(),
            mask_fraction: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.mask_fraction) {
            return Err(Error::Config("mask fraction must lie in [0, 1)".into()));
        }
        self.loss_weights.validate()
    }
}

/// One line of the JSON-lines training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_c: f64,
    pub l_r: f64,
    pub combined: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub log: Vec<EpochLog>,
}

/// Trains every parameter jointly on an unlabeled cohort.
pub fn pretrain(cohort: &[ConnectivityMatrix], bundle: ModelBundle, config: &TrainConfig) -> Result<TrainOutcome> {
    if config.phase != Phase::Pretrain {
        return Err(Error::Config("pretrain called with a finetune config".into()));
    }
    if bundle.encoder.is_frozen() || bundle.named().iter().any(|(_, t)| !t.requires_grad) {
        return Err(Error::Config("pretraining needs every parameter trainable".into()));
    }
    run(cohort, bundle, config)
}

/// Trains adapter and heads with the encoder frozen.
pub fn finetune(cohort: &[ConnectivityMatrix], bundle: ModelBundle, config: &TrainConfig) -> Result<TrainOutcome> {
    if config.phase != Phase::Finetune {
        return Err(Error::Config("finetune called with a pretrain config".into()));
    }
    if !bundle.encoder.is_frozen() {
        return Err(Error::Config("encoder must be frozen for fine-tuning".into()));
    }
    run(cohort, bundle, config)
}

/// Copy of `x` with `round(fraction · V(V−1)/2)` off-diagonal pairs zeroed.
pub fn masked_view<R: rand::Rng + ?Sized>(x: &ConnectivityMatrix, fraction: f64, rng: &mut R) -> Tensor {
    let v = x.size();
    let mut t = x.to_tensor();
    let pairs = v * (v - 1) / 2;
    let k = (fraction * pairs as f64).round() as usize;
    if k == 0 {
        return t;
    }
    let chosen = rand::seq::index::sample(rng, pairs, k);
    let data = t.data_mut();
    for p in chosen.iter() {
        let (i, j) = pair_index(p, v);
        data[i * v + j] = 0.0;
        data[j * v + i] = 0.0;
    }
    t
}

/// Maps a linear index over the strict upper triangle to `(i, j)`, `i < j`.
fn pair_index(mut p: usize, v: usize) -> (usize, usize) {
    let mut i = 0;
    loop {
        let row = v - 1 - i;
        if p < row {
            return (i, i + 1 + p);
        }
        p -= row;
        i += 1;
    }
}

struct BatchLoss {
    l_c: f64,
    l_r: f64,
    combined: f64,
}

fn run(cohort: &[ConnectivityMatrix], mut bundle: ModelBundle, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if cohort.is_empty() {
        return Err(Error::Input("training cohort is empty".into()));
    }
    let v = bundle.config.regions;
    if let Some(bad) = cohort.iter().find(|m| m.size() != v) {
        return Err(Error::dim("training cohort", &[bad.size(), bad.size()], &[v, v]));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(bundle.named().into_iter().map(|(_, t)| t));
    let mut order: Vec<usize> = (0..cohort.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let tape = Tape::new();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut sum_c, mut sum_r, mut sum_total, mut seen) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            tape.reset();
            let items: Vec<&ConnectivityMatrix> = batch.iter().map(|&i| &cohort[i]).collect();
            let loss = batch_step(&tape, &mut bundle, &mut adam, &items, config, &mut rng)?;
            if !loss.combined.is_finite() {
                return Err(Error::Numerical { epoch });
            }
            let n = items.len() as f64;
            sum_c += loss.l_c * n;
            sum_r += loss.l_r * n;
            sum_total += loss.combined * n;
            seen += items.len();
        }
        let n = seen as f64;
        log.push(EpochLog {
            epoch,
            l_c: sum_c / n,
            l_r: sum_r / n,
            combined: sum_total / n,
        });
    }
    tape.reset();
    for (_, t) in bundle.named_mut() {
        t.grad = None;
    }
    Ok(TrainOutcome { bundle, log })
}

fn batch_step(
    tape: &Tape,
    bundle: &mut ModelBundle,
    adam: &mut AdamState,
    items: &[&ConnectivityMatrix],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<BatchLoss> {
    let model = bundle.bind(tape);
    let mut recon_terms: Vec<Var<'_>> = Vec::with_capacity(items.len());
    let mut first = Vec::with_capacity(items.len());
    let mut second = Vec::with_capacity(items.len());
    for m in items {
        let target = tape.constant(m.to_tensor());
        let mut pair = Vec::with_capacity(2);
        let mut recon = None::<Var<'_>>;
        for _ in 0..2 {
            let view = tape.constant(masked_view(m, config.mask_fraction, rng));
            let z = model.encode(view)?;
            let r = mse_loss(model.heads.reconstruct(z)?, target)?;
            recon = Some(match recon {
                Some(acc) => acc.add(&r)?,
                None => r,
            });
            pair.push(model.heads.embed(z)?);
        }
        recon_terms.push(recon.expect("two views").mul_scalar(0.5));
        second.push(pair.pop().expect("two views"));
        first.push(pair.pop().expect("two views"));
    }

    let l_r = mean(&recon_terms)?;
    // A single-subject batch has no negatives; it contributes reconstruction only.
    let l_c = if items.len() >= 2 {
        let mut terms = Vec::with_capacity(items.len());
        for i in 0..items.len() {
            let negatives: Vec<Var<'_>> = second
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, e)| *e)
                .collect();
            terms.push(infonce_loss(first[i], second[i], &negatives, config.loss_weights.tau)?);
        }
        mean(&terms)?
    } else {
        tape.constant(Tensor::scalar(0.0))
    };
    let total = combined_loss(l_c, l_r, &config.loss_weights)?;
    let out = BatchLoss {
        l_c: l_c.item(),
        l_r: l_r.item(),
        combined: total.item(),
    };
    if !out.combined.is_finite() {
        return Ok(out);
    }

    let grads = tape.backward(total)?;
    let leaves = model.leaves();
    let mut params = bundle.named_mut();
    for ((_, p), leaf) in params.iter_mut().zip(&leaves) {
        if p.requires_grad {
            p.grad = Some(
                grads
                    .leaf(*leaf)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; p.len()]),
            );
        }
    }
    let mut refs: Vec<&mut Tensor> = params.into_iter().map(|(_, p)| p).collect();
    adam_step(&mut refs, adam, config.lr, config.weight_decay)?;
    Ok(out)
}

fn mean<'t>(terms: &[Var<'t>]) -> Result<Var<'t>> {
    let mut acc = terms[0];
    for t in &terms[1..] {
        acc = acc.add(t)?;
    }
    Ok(acc.mul_scalar(1.0 / terms.len() as f64))
}
