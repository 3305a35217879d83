//! Latent readout, linear SVM, and binary diagnosis metrics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::connectome::ConnectivityMatrix;
use crate::error::{Error, Result};
use crate::model::ModelBundle;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentFeature {
    pub subject_id: String,
    pub label: String,
    pub vector: Vec<f64>,
}

/// Adapter → frozen encoder → mean pool → projection → unit norm. No masking.
pub fn extract_latent(matrix: &ConnectivityMatrix, bundle: &ModelBundle) -> Result<LatentFeature> {
    let vector = bundle.latent(&matrix.to_tensor())?;
    if vector.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical { epoch: 0 });
    }
    Ok(LatentFeature {
        subject_id: matrix.subject_id.clone(),
        label: matrix.label.clone(),
        vector,
    })
}

/// Extracts features for many subjects across worker threads; output order
/// matches input order.
pub fn extract_all(matrices: &[ConnectivityMatrix], bundle: &ModelBundle) -> Result<Vec<LatentFeature>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(8);
    let chunk = matrices.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = matrices
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|m| extract_latent(m, bundle)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(matrices.len());
        for h in handles {
            out.extend(h.join().expect("feature worker panicked")?);
        }
        Ok(out)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            epochs: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl SvmModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    /// `true` for the positive class.
    pub fn predict(&self, x: &[f64]) -> bool {
        self.decision(x) >= 0.0
    }
}

/// Linear SVM by stochastic primal sub-gradient descent (Pegasos schedule)
/// on `½‖w‖² + C·Σ max(0, 1 − yᵢ(w·xᵢ + b))`.
///
/// With `λ = 1/(C·n)` the weight step at iteration `t` is `1/(λt)`,
/// followed by projection onto the ball of radius `1/√λ`. The unregularized
/// bias moves by `yᵢ/t` on margin violations.
pub fn svm_train(features: &[Vec<f64>], positive: &[bool], config: &SvmConfig) -> Result<SvmModel> {
    if features.len() != positive.len() {
        return Err(Error::dim("svm_train", &[features.len()], &[positive.len()]));
    }
    if features.is_empty() || positive.iter().all(|&p| p) || positive.iter().all(|&p| !p) {
        return Err(Error::Input("SVM training needs both classes present".into()));
    }
    if !(config.c > 0.0) || config.epochs == 0 {
        return Err(Error::Config("SVM needs C > 0 and at least one epoch".into()));
    }
    let dim = features[0].len();
    if let Some(bad) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::dim("svm_train", &[dim], &[bad.len()]));
    }
    let n = features.len();
    let lambda = 1.0 / (config.c * n as f64);
    let radius = 1.0 / lambda.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut t = 0u64;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let y = if positive[i] { 1.0 } else { -1.0 };
            let x = &features[i];
            let margin = y * (w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b);
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            if margin < 1.0 {
                w.iter_mut().zip(x).for_each(|(v, xi)| *v += eta * y * xi);
                b += y / t as f64;
            }
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius {
                let s = radius / norm;
                w.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    Ok(SvmModel { weights: w, bias: b })
}

/// Confusion counts and derived rates; the positive class is the disease label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub acc: f64,
    pub sen: f64,
    pub spe: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    /// Rates with empty denominators are reported as 0.
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        Self {
            tp,
            fp,
            tn,
            fn_,
            acc: ratio(tp + tn, tp + tn + fp + fn_),
            sen: ratio(tp, tp + fn_),
            spe: ratio(tn, tn + fp),
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn evaluate(model: &SvmModel, features: &[Vec<f64>], positive: &[bool]) -> Result<EvalReport> {
    if features.is_empty() {
        return Err(Error::Input("evaluation set is empty".into()));
    }
    if features.len() != positive.len() {
        return Err(Error::dim("evaluate", &[features.len()], &[positive.len()]));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (x, &truth) in features.iter().zip(positive) {
        match (model.predict(x), truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(EvalReport::from_counts(tp, fp, tn, fn_))
}

/// Per-run reports plus the arithmetic mean of each metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragedReport {
    pub acc: f64,
    pub sen: f64,
    pub spe: f64,
    pub f1: f64,
    pub runs: Vec<EvalReport>,
}

impl AveragedReport {
    pub fn from_runs(runs: Vec<EvalReport>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::Input("no runs to average".into()));
        }
        let n = runs.len() as f64;
        let avg = |f: fn(&EvalReport) -> f64| runs.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            acc: avg(|r| r.acc),
            sen: avg(|r| r.sen),
            spe: avg(|r| r.spe),
            f1: avg(|r| r.f1),
            runs,
        })
    }
}

/// Runs `pipeline` once per seed `base_seed, base_seed + 1, …` and averages.
pub fn repeat_and_average<F>(runs: usize, base_seed: u64, mut pipeline: F) -> Result<AveragedReport>
where
    F: FnMut(u64) -> Result<EvalReport>,
{
    let reports = (0..runs as u64)
        .map(|k| pipeline(base_seed + k))
        .collect::<Result<Vec<_>>>()?;
    AveragedReport::from_runs(reports)
}

/// Aligned plain-text table with ACC / SEN / SPE / F1-score columns.
pub fn render_table(rows: &[(String, f64, f64, f64, f64)]) -> String {
    let name_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("Model".len());
    let mut out = format!(
        "{:<name_w$} | {:>8} | {:>8} | {:>8} | {:>8}\n",
        "Model", "ACC", "SEN", "SPE", "F1-score"
    );
    out.push_str(&format!("{}\n", "-".repeat(name_w + 4 * 11)));
    for (name, acc, sen, spe, f1) in rows {
        out.push_str(&format!(
            "{:<name_w$} | {:>7.2}% | {:>7.2}% | {:>7.2}% | {:>8.4}\n",
            name,
            acc * 100.0,
            sen * 100.0,
            spe * 100.0,
            f1
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn separable(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let pos = i % 2 == 0;
            let x0 = if pos { rng.gen_range(1.0..3.0) } else { rng.gen_range(-3.0..-1.0) };
            xs.push(vec![x0, rng.gen_range(-2.0..2.0)]);
            ys.push(pos);
        }
        (xs, ys)
    }

    #[test]
    fn separable_toy_set_is_fit_exactly() {
        let (xs, ys) = separable(40, 1);
        let model = svm_train(&xs, &ys, &SvmConfig::default()).unwrap();
        let r = evaluate(&model, &xs, &ys).unwrap();
        assert_eq!(r.acc, 1.0);
    }

    #[test]
    fn contradictory_duplicates_cap_accuracy() {
        let xs = vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![-1.0, 0.5], vec![-1.0, 0.5]];
        let ys = vec![true, false, true, false];
        let model = svm_train(&xs, &ys, &SvmConfig::default()).unwrap();
        assert!(evaluate(&model, &xs, &ys).unwrap().acc <= 0.5);
    }

    #[test]
    fn rescaled_features_with_rescaled_c_give_same_signs() {
        let (xs, ys) = separable(30, 2);
        let cfg = SvmConfig { c: 1.0, epochs: 50, seed: 3 };
        let a = svm_train(&xs, &ys, &cfg).unwrap();
        let doubled: Vec<Vec<f64>> = xs.iter().map(|x| x.iter().map(|v| 2.0 * v).collect()).collect();
        let b = svm_train(&doubled, &ys, &SvmConfig { c: cfg.c / 4.0, ..cfg }).unwrap();
        let (mut rng, mut probes) = (ChaCha8Rng::seed_from_u64(4), Vec::new());
        for _ in 0..200 {
            probes.push(vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]);
        }
        for p in &probes {
            let p2: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
            assert_eq!(a.predict(p), b.predict(&p2));
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let xs = vec![vec![1.0], vec![2.0]];
        assert!(matches!(svm_train(&xs, &[true, true], &SvmConfig::default()), Err(Error::Input(_))));
    }

    #[test]
    fn hand_confusion_matrix() {
        let r = EvalReport::from_counts(3, 1, 4, 2);
        assert!((r.acc - 0.7).abs() < 1e-12);
        assert!((r.sen - 0.6).abs() < 1e-12);
        assert!((r.spe - 0.8).abs() < 1e-12);
        assert!((r.f1 - 6.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_all_negative_classifiers() {
        let xs = vec![vec![1.0], vec![-1.0], vec![2.0], vec![-2.0]];
        let ys = vec![true, false, true, false];
        let perfect = SvmModel { weights: vec![1.0], bias: 0.0 };
        let r = evaluate(&perfect, &xs, &ys).unwrap();
        assert_eq!((r.acc, r.sen, r.spe, r.f1), (1.0, 1.0, 1.0, 1.0));

        let never = SvmModel { weights: vec![0.0], bias: -1.0 };
        let r = evaluate(&never, &xs, &ys).unwrap();
        assert_eq!((r.sen, r.spe), (0.0, 1.0));
        assert_eq!(r.f1, 0.0);
        assert_eq!(r.total(), 4);
        assert!(evaluate(&never, &[], &[]).is_err());
    }

    #[test]
    fn averaging_keeps_runs() {
        let seeds = std::cell::RefCell::new(Vec::new());
        let avg = repeat_and_average(3, 10, |s| {
            seeds.borrow_mut().push(s);
            Ok(EvalReport::from_counts(s as usize - 9, 0, 1, 0))
        })
        .unwrap();
        assert_eq!(*seeds.borrow(), vec![10, 11, 12]);
        assert_eq!(avg.runs.len(), 3);
        assert!((avg.acc - 1.0).abs() < 1e-15);
    }

    #[test]
    fn table_has_header_and_rows() {
        let t = render_table(&[("both".into(), 0.7835, 0.7455, 0.8312, 0.5912)]);
        assert!(t.lines().next().unwrap().contains("F1-score"));
        assert!(t.contains("78.35%"));
        assert!(t.contains("0.5912"));
    }
}
