//! Randomized finite-difference cases for every differentiable operation,
//! plus the small composed model. Shared with the acceptance suite.
#![allow(dead_code)]

use fcadapt::adapter::Activation;
use fcadapt::encoder::EncoderConfig;
use fcadapt::gradcheck::{check, GradCheck};
use fcadapt::model::{ModelBundle, ModelConfig};
use fcadapt::objectives::{combined_loss, infonce_loss, mse_loss, LossWeights};
use fcadapt::{Result, Tape, Tensor, Var};
use rand::Rng;

pub const H: f64 = 1e-5;
pub const TRIALS_PER_OP: usize = 50;

type OpFn = for<'t> fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>;
type Gen = fn(&mut dyn rand::RngCore) -> Vec<Tensor>;

pub struct OpCase {
    pub name: &'static str,
    pub gen: Gen,
    pub f: OpFn,
}

fn dim(rng: &mut dyn rand::RngCore) -> usize {
    rng.gen_range(1..=4)
}

fn normal(shape: &[usize], rng: &mut dyn rand::RngCore) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

/// Entries bounded away from zero so kinks and singularities sit far
/// outside the difference stencil.
fn away_from_zero(shape: &[usize], rng: &mut dyn rand::RngCore) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.1..1.5);
            if rng.gen_bool(0.5) { v } else { -v }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn positive(shape: &[usize], rng: &mut dyn rand::RngCore) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(0.3..2.0)).collect()).unwrap()
}

fn same_pair(rng: &mut dyn rand::RngCore) -> Vec<Tensor> {
    let (m, n) = (dim(rng), dim(rng));
    vec![normal(&[m, n], rng), normal(&[m, n], rng)]
}

fn one(rng: &mut dyn rand::RngCore) -> Vec<Tensor> {
    let (m, n) = (dim(rng), dim(rng));
    vec![normal(&[m, n], rng)]
}

fn row_vectors(rng: &mut dyn rand::RngCore) -> Vec<Tensor> {
    let n = rng.gen_range(2..=6);
    vec![away_from_zero(&[1, n], rng), away_from_zero(&[1, n], rng)]
}

pub fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            gen: |rng| {
                let (m, k, n) = (dim(rng), dim(rng), dim(rng));
                vec![normal(&[m, k], rng), normal(&[k, n], rng)]
            },
            f: |_, v| v[0].matmul(&v[1]),
        },
        OpCase { name: "add", gen: same_pair, f: |_, v| v[0].add(&v[1]) },
        OpCase { name: "sub", gen: same_pair, f: |_, v| v[0].sub(&v[1]) },
        OpCase { name: "mul", gen: same_pair, f: |_, v| v[0].mul(&v[1]) },
        OpCase {
            name: "add_bias",
            gen: |rng| {
                let (m, n) = (dim(rng), dim(rng));
                vec![normal(&[m, n], rng), normal(&[n], rng)]
            },
            f: |_, v| v[0].add_bias(&v[1]),
        },
        OpCase { name: "mul_scalar", gen: one, f: |_, v| Ok(v[0].mul_scalar(-2.5)) },
        OpCase { name: "add_scalar", gen: one, f: |_, v| Ok(v[0].add_scalar(0.75)) },
        OpCase {
            name: "relu",
            gen: |rng| {
                let (m, n) = (dim(rng), dim(rng));
                vec![away_from_zero(&[m, n], rng)]
            },
            f: |_, v| Ok(v[0].relu()),
        },
        OpCase { name: "transpose", gen: one, f: |_, v| v[0].transpose() },
        OpCase {
            name: "concat_cols",
            gen: |rng| {
                let m = dim(rng);
                (0..3).map(|_| normal(&[m, dim(rng)], rng)).collect()
            },
            f: |_, v| Var::concat_cols(v),
        },
        OpCase { name: "mean_rows", gen: one, f: |_, v| v[0].mean_rows() },
        OpCase { name: "sum", gen: one, f: |_, v| Ok(v[0].sum()) },
        OpCase { name: "square", gen: one, f: |_, v| Ok(v[0].square()) },
        OpCase {
            name: "sqrt",
            gen: |rng| {
                let (m, n) = (dim(rng), dim(rng));
                vec![positive(&[m, n], rng)]
            },
            f: |_, v| Ok(v[0].sqrt()),
        },
        OpCase { name: "exp", gen: one, f: |_, v| Ok(v[0].exp()) },
        OpCase {
            name: "log",
            gen: |rng| {
                let (m, n) = (dim(rng), dim(rng));
                vec![positive(&[m, n], rng)]
            },
            f: |_, v| Ok(v[0].log()),
        },
        OpCase { name: "softmax_rows", gen: one, f: |_, v| v[0].softmax_rows() },
        OpCase { name: "cosine_similarity", gen: row_vectors, f: |_, v| v[0].cosine_similarity(&v[1]) },
        OpCase {
            name: "l2_normalize",
            gen: |rng| {
                let n = rng.gen_range(2..=6);
                vec![away_from_zero(&[1, n], rng)]
            },
            f: |_, v| v[0].l2_normalize(),
        },
        OpCase {
            name: "layer_norm",
            gen: |rng| {
                let (m, n) = (dim(rng), rng.gen_range(2..=5));
                vec![normal(&[m, n], rng), normal(&[n], rng), normal(&[n], rng)]
            },
            f: |_, v| v[0].layer_norm(&v[1], &v[2]),
        },
        OpCase {
            name: "element",
            gen: |rng| {
                let n = rng.gen_range(2..=6);
                vec![normal(&[1, n], rng)]
            },
            f: |_, v| {
                let last = v[0].value().len() - 1;
                v[0].element(last)
            },
        },
        OpCase { name: "mse_loss", gen: same_pair, f: |_, v| mse_loss(v[0], v[1]) },
        OpCase {
            name: "infonce_loss",
            gen: |rng| {
                let n = rng.gen_range(2..=5);
                let m = rng.gen_range(1..=4);
                (0..m + 2).map(|_| away_from_zero(&[1, n], rng)).collect()
            },
            f: |_, v| infonce_loss(v[0], v[1], &v[2..], 0.5),
        },
    ]
}

/// One trial: the op output is contracted with a random weight tensor (also
/// checked) so that non-scalar ops reduce to a scalar.
pub fn check_case(case: &OpCase, rng: &mut dyn rand::RngCore) -> Result<GradCheck> {
    let mut inputs = (case.gen)(rng);
    let shape = {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
        let out = (case.f)(&tape, &vars)?;
        out.shape()
    };
    let n = inputs.len();
    inputs.push(normal(&shape, rng));
    let f = case.f;
    check(&inputs, H, move |tape, v| f(tape, &v[..n])?.mul(&v[n]).map(|p| p.sum()))
}

/// D=1, H=2, B=4, V=3 model with every parameter trainable.
pub fn composed_bundle(seed: u64) -> ModelBundle {
    let config = ModelConfig {
        regions: 3,
        adapter_hidden: 5,
        activation: Activation::Relu,
        encoder: EncoderConfig {
            depth: 1,
            heads: 2,
            embed: 4,
            use_ffn: true,
            ffn_hidden: 6,
            use_norm: true,
            use_residual: true,
        },
        latent_dim: 3,
    };
    ModelBundle::new(config, seed).unwrap()
}

/// Joint objective over two subjects: reconstruction of both plus InfoNCE
/// with subject 0's second view as positive and subject 1 as negative.
pub fn composed_loss<'t>(tape: &'t Tape, bundle: &ModelBundle, xs: &[Tensor; 3]) -> Result<(Var<'t>, Vec<Var<'t>>)> {
    let m = bundle.bind(tape);
    let mut recon = Vec::new();
    let mut emb = Vec::new();
    for x in xs {
        let input = tape.constant(x.clone());
        let z = m.encode(input)?;
        recon.push(mse_loss(m.heads.reconstruct(z)?, input)?);
        emb.push(m.heads.embed(z)?);
    }
    let l_r = recon[0].add(&recon[1])?.add(&recon[2])?.mul_scalar(1.0 / 3.0);
    let l_c = infonce_loss(emb[0], emb[1], &emb[2..], 0.5)?;
    Ok((combined_loss(l_c, l_r, &LossWeights { lambda_c: 0.2, lambda_r: 5.0, tau: 0.5 })?, m.leaves()))
}

/// Normwise relative error over the concatenated parameter gradient.
pub fn check_composed(seed: u64, rng: &mut dyn rand::RngCore) -> Result<f64> {
    let bundle = composed_bundle(seed);
    let sym = |rng: &mut dyn rand::RngCore| {
        let mut t = normal(&[3, 3], rng);
        for i in 0..3 {
            for j in 0..i {
                let v = t.at(j, i);
                t.data_mut()[i * 3 + j] = v;
            }
            t.data_mut()[i * 3 + i] = 1.0;
        }
        t
    };
    let xs = [sym(rng), sym(rng), sym(rng)];

    let tape = Tape::new();
    let (loss, leaves) = composed_loss(&tape, &bundle, &xs)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<f64> = leaves
        .iter()
        .zip(bundle.named())
        .flat_map(|(v, (_, t))| grads.leaf(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let eval = |b: &ModelBundle| -> Result<f64> {
        let tape = Tape::new();
        Ok(composed_loss(&tape, b, &xs)?.0.item())
    };
    let mut probe = bundle.clone();
    let mut numeric = Vec::with_capacity(analytic.len());
    let sizes: Vec<usize> = bundle.named().iter().map(|(_, t)| t.len()).collect();
    for (p, &size) in sizes.iter().enumerate() {
        for k in 0..size {
            let x = probe.named()[p].1.data()[k];
            probe.named_mut()[p].1.data_mut()[k] = x + H;
            let up = eval(&probe)?;
            probe.named_mut()[p].1.data_mut()[k] = x - H;
            let down = eval(&probe)?;
            probe.named_mut()[p].1.data_mut()[k] = x;
            numeric.push((up - down) / (2.0 * H));
        }
    }
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    Ok(norm(&diff) / norm(&analytic).max(norm(&numeric)))
}
