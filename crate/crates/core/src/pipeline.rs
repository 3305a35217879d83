//! End-to-end glue: cohort → matrices, evaluation with repeated splits,
//! the loss-weight ablation grid, and reconstruction inspection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{evaluate, extract_all, render_table, svm_train, AveragedReport, EvalReport, SvmConfig};
use crate::connectome::{pearson_fc, BoldRecording, ConnectivityMatrix};
use crate::error::{Error, Result};
use crate::model::ModelBundle;
use crate::objectives::LossWeights;
use crate::tensor::Tensor;
use crate::trainer::{finetune, TrainConfig};

pub fn to_matrices(recordings: &[BoldRecording]) -> Result<Vec<ConnectivityMatrix>> {
    recordings.iter().map(pearson_fc).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub repeats: usize,
    pub test_fraction: f64,
    pub svm: SvmConfig,
    /// Disease label; it is the positive class for SEN and F1.
    pub positive_label: String,
    /// When set, only subjects carrying either label take part.
    pub negative_label: Option<String>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            repeats: 3,
            test_fraction: 0.3,
            svm: SvmConfig::default(),
            positive_label: crate::synth::PATIENT_LABEL.into(),
            negative_label: None,
            seed: 0,
        }
    }
}

/// Restricts `matrices` to the binary task and returns the positive flags.
pub fn binary_task<'a>(matrices: &'a [ConnectivityMatrix], config: &EvalConfig) -> Result<(Vec<&'a ConnectivityMatrix>, Vec<bool>)> {
    let keep: Vec<&ConnectivityMatrix> = match &config.negative_label {
        Some(neg) => matrices
            .iter()
            .filter(|m| m.label == config.positive_label || &m.label == neg)
            .collect(),
        None => {
            let mut labels: Vec<&str> = matrices.iter().map(|m| m.label.as_str()).collect();
            labels.sort_unstable();
            labels.dedup();
            if labels.len() != 2 {
                return Err(Error::Input(format!(
                    "binary evaluation needs exactly two labels, found {labels:?}; pick one with a negative label"
                )));
            }
            matrices.iter().collect()
        }
    };
    let positive: Vec<bool> = keep.iter().map(|m| m.label == config.positive_label).collect();
    if !positive.iter().any(|&p| p) || positive.iter().all(|&p| p) {
        return Err(Error::Input(format!(
            "label {:?} must be present alongside a negative class",
            config.positive_label
        )));
    }
    Ok((keep, positive))
}

/// Per-class shuffled split; each class contributes `round(fraction·n_c)`
/// test subjects (at least one, leaving at least one for training).
pub fn stratified_split(positive: &[bool], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config("test fraction must lie in (0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..positive.len()).filter(|&i| positive[i] == class).collect();
        if idx.len() < 2 {
            return Err(Error::Input("each class needs at least two subjects to split".into()));
        }
        idx.shuffle(&mut rng);
        let n_test = ((test_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Extracts latents once, then for each repeat draws a fresh stratified
/// split, trains the SVM and scores the held-out part.
pub fn evaluate_bundle(bundle: &ModelBundle, matrices: &[ConnectivityMatrix], config: &EvalConfig) -> Result<AveragedReport> {
    let (subset, positive) = binary_task(matrices, config)?;
    let owned: Vec<ConnectivityMatrix> = subset.into_iter().cloned().collect();
    let features: Vec<Vec<f64>> = extract_all(&owned, bundle)?.into_iter().map(|f| f.vector).collect();
    crate::classifier::repeat_and_average(config.repeats, config.seed, |seed| {
        evaluate_features(&features, &positive, config, seed)
    })
}

/// One split + SVM fit + held-out evaluation over precomputed features.
pub fn evaluate_features(features: &[Vec<f64>], positive: &[bool], config: &EvalConfig, seed: u64) -> Result<EvalReport> {
    let (train, test) = stratified_split(positive, config.test_fraction, seed)?;
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<bool>) {
        idx.iter().map(|&i| (features[i].clone(), positive[i])).unzip()
    };
    let (xtr, ytr) = pick(&train);
    let (xte, yte) = pick(&test);
    let svm = SvmConfig { seed, ..config.svm };
    let model = svm_train(&xtr, &ytr, &svm)?;
    evaluate(&model, &xte, &yte)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub lambda_c: f64,
    pub lambda_r: f64,
    pub report: AveragedReport,
}

/// The three on/off settings of the loss weights, in table order.
pub fn ablation_grid(weights: &LossWeights) -> Vec<(&'static str, LossWeights)> {
    vec![
        ("lambda_r only", LossWeights { lambda_c: 0.0, ..*weights }),
        ("lambda_c only", LossWeights { lambda_r: 0.0, ..*weights }),
        ("both", *weights),
    ]
}

/// Fine-tunes a copy of `bundle` under each grid setting (same seeds) and
/// evaluates it.
pub fn run_ablation(
    bundle: &ModelBundle,
    matrices: &[ConnectivityMatrix],
    train: &TrainConfig,
    eval: &EvalConfig,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(3);
    for (name, weights) in ablation_grid(&train.loss_weights) {
        let cfg = TrainConfig { loss_weights: weights, ..*train };
        let mut start = bundle.clone();
        start.freeze_encoder();
        let tuned = finetune(matrices, start, &cfg)?.bundle;
        let report = evaluate_bundle(&tuned, matrices, eval)?;
        rows.push(AblationRow {
            name: name.to_string(),
            lambda_c: weights.lambda_c,
            lambda_r: weights.lambda_r,
            report,
        });
    }
    Ok(rows)
}

/// Table with one row per setting: check marks for the active weights and
/// the mean accuracy.
pub fn render_ablation_table(rows: &[AblationRow]) -> String {
    let mark = |v: f64| if v > 0.0 { "x" } else { " " };
    let mut out = String::from("lambda_c | lambda_r |     ACC\n---------+----------+--------\n");
    for r in rows {
        out.push_str(&format!(
            "{:^8} | {:^8} | {:>6.2}%\n",
            mark(r.lambda_c),
            mark(r.lambda_r),
            r.report.acc * 100.0
        ));
    }
    out
}

/// Metrics table for a single averaged report.
pub fn render_report(name: &str, report: &AveragedReport) -> String {
    render_table(&[(name.to_string(), report.acc, report.sen, report.spe, report.f1)])
}

/// Input matrix, reconstructed matrix and their MSE for one subject.
pub fn reconstruct_subject(bundle: &ModelBundle, matrix: &ConnectivityMatrix) -> Result<(Tensor, Tensor, f64)> {
    let input = matrix.to_tensor();
    let output = bundle.reconstruct(&input)?;
    let mse = input
        .data()
        .iter()
        .zip(output.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / input.len() as f64;
    Ok((input, output, mse))
}
