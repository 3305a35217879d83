//! Synthetic two-class cohorts with community-structured connectivity.
//!
//! Regions are split into equal communities. Each community shares one
//! latent source per subject (a sum of three random-phase sinusoids,
//! scaled to unit variance); a region's signal is its mixing weight times
//! that source plus white noise. Class-1 subjects have the mixing weights
//! of community 0 scaled by `1 − inter_class_shift`, which weakens its
//! within-block correlations relative to the noise floor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::connectome::{BoldRecording, ConnectivityMatrix};
use crate::error::{Error, Result};

/// Community whose couplings separate the classes.
pub const PERTURBED_COMMUNITY: usize = 0;
pub const CONTROL_LABEL: &str = "0";
pub const PATIENT_LABEL: &str = "1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub regions: usize,
    pub timepoints: usize,
    pub n_per_class: usize,
    pub n_communities: usize,
    pub inter_class_shift: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            regions: 16,
            timepoints: 120,
            n_per_class: 60,
            n_communities: 4,
            inter_class_shift: 0.8,
            noise_std: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_communities == 0 || !self.regions.is_multiple_of(self.n_communities) {
            return Err(Error::Config(format!(
                "{} regions cannot be split into {} equal communities",
                self.regions, self.n_communities
            )));
        }
        if self.regions < 2 || self.timepoints < 3 || self.n_per_class == 0 {
            return Err(Error::Config("need ≥2 regions, ≥3 timepoints, ≥1 subject per class".into()));
        }
        if !(0.0..=1.0).contains(&self.inter_class_shift) {
            return Err(Error::Config("inter_class_shift must lie in [0, 1]".into()));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("noise_std must be positive".into()));
        }
        Ok(())
    }

    pub fn community_of(&self, region: usize) -> usize {
        region / (self.regions / self.n_communities)
    }
}

/// Subjects alternate class 0 / class 1; ids are `sub-000`, `sub-001`, ….
pub fn generate_cohort(config: &SynthConfig) -> Result<Vec<BoldRecording>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_std).expect("validated std");
    let total = 2 * config.n_per_class;
    let mut out = Vec::with_capacity(total);
    for s in 0..total {
        let class = s % 2;
        let sources: Vec<Vec<f64>> = (0..config.n_communities)
            .map(|_| latent_source(config.timepoints, &mut rng))
            .collect();
        let mut regions = Vec::with_capacity(config.regions);
        for r in 0..config.regions {
            let c = config.community_of(r);
            let mut weight = rng.gen_range(0.8..1.2);
            if class == 1 && c == PERTURBED_COMMUNITY {
                weight *= 1.0 - config.inter_class_shift;
            }
            let series = sources[c]
                .iter()
                .map(|v| weight * v + noise.sample(&mut rng))
                .collect();
            regions.push(series);
        }
        let label = if class == 1 { PATIENT_LABEL } else { CONTROL_LABEL };
        out.push(BoldRecording::new(format!("sub-{s:03}"), label, regions)?);
    }
    Ok(out)
}

fn latent_source<R: Rng + ?Sized>(t: usize, rng: &mut R) -> Vec<f64> {
    let comps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.5..1.0),
                rng.gen_range(0.01..0.12),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let raw: Vec<f64> = (0..t)
        .map(|k| {
            comps
                .iter()
                .map(|(a, f, p)| a * (std::f64::consts::TAU * f * k as f64 + p).sin())
                .sum()
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / t as f64;
    let sd = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64).sqrt();
    raw.iter().map(|v| (v - mean) / sd).collect()
}

/// Mean off-diagonal correlation inside one community block.
pub fn community_strength(fc: &ConnectivityMatrix, community: usize, n_communities: usize) -> f64 {
    let size = fc.size() / n_communities;
    let lo = community * size;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in lo..lo + size {
        for j in lo..lo + size {
            if i != j {
                sum += fc.get(i, j);
                count += 1;
            }
        }
    }
    sum / count as f64
}

/// One-feature threshold classifier on the perturbed block's strength:
/// the cut sits midway between the two training-class means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdRule {
    pub threshold: f64,
    /// True when the positive class has the larger strength.
    pub positive_above: bool,
}

impl ThresholdRule {
    pub fn fit(strengths: &[f64], positive: &[bool]) -> Result<Self> {
        let mean_of = |want: bool| {
            let v: Vec<f64> = strengths
                .iter()
                .zip(positive)
                .filter(|(_, &p)| p == want)
                .map(|(s, _)| *s)
                .collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        match (mean_of(true), mean_of(false)) {
            (Some(p), Some(n)) => Ok(Self {
                threshold: 0.5 * (p + n),
                positive_above: p > n,
            }),
            _ => Err(Error::Input("threshold rule needs both classes".into())),
        }
    }

    pub fn predict(&self, strength: f64) -> bool {
        (strength > self.threshold) == self.positive_above
    }
}

/// Welch t-statistic between two samples.
pub fn welch_t(a: &[f64], b: &[f64]) -> f64 {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v, n)
    };
    let (ma, va, na) = stats(a);
    let (mb, vb, nb) = stats(b);
    (ma - mb) / (va / na + vb / nb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectome::pearson_fc;

    fn strengths(cfg: &SynthConfig) -> (Vec<f64>, Vec<f64>) {
        let (mut c0, mut c1) = (Vec::new(), Vec::new());
        for rec in generate_cohort(cfg).unwrap() {
            let s = community_strength(&pearson_fc(&rec).unwrap(), PERTURBED_COMMUNITY, cfg.n_communities);
            if rec.label == PATIENT_LABEL {
                c1.push(s);
            } else {
                c0.push(s);
            }
        }
        (c0, c1)
    }

    #[test]
    fn same_seed_same_cohort() {
        let cfg = SynthConfig { n_per_class: 3, ..Default::default() };
        assert_eq!(generate_cohort(&cfg).unwrap(), generate_cohort(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg };
        assert_ne!(generate_cohort(&cfg).unwrap(), generate_cohort(&other).unwrap());
    }

    #[test]
    fn strong_shift_is_detectable() {
        let cfg = SynthConfig {
            inter_class_shift: 0.9,
            noise_std: 0.1,
            n_per_class: 30,
            ..Default::default()
        };
        let (c0, c1) = strengths(&cfg);
        assert!(welch_t(&c0, &c1) > 5.0);
    }

    #[test]
    fn threshold_rule_recovers_labels() {
        let cfg = SynthConfig { n_per_class: 50, ..Default::default() };
        let (c0, c1) = strengths(&cfg);
        let all: Vec<f64> = c0.iter().chain(&c1).copied().collect();
        let pos: Vec<bool> = c0.iter().map(|_| false).chain(c1.iter().map(|_| true)).collect();
        let rule = ThresholdRule::fit(&all, &pos).unwrap();
        assert!(!rule.positive_above);
        let correct = all.iter().zip(&pos).filter(|(s, p)| rule.predict(**s) == **p).count();
        assert!(correct as f64 / all.len() as f64 >= 0.95);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = SynthConfig { regions: 15, ..Default::default() };
        assert!(matches!(generate_cohort(&bad), Err(Error::Config(_))));
        let bad = SynthConfig { noise_std: 0.0, ..Default::default() };
        assert!(generate_cohort(&bad).is_err());
        let bad = SynthConfig { inter_class_shift: 1.5, ..Default::default() };
        assert!(generate_cohort(&bad).is_err());
    }

    #[test]
    fn full_shift_still_has_variance() {
        let cfg = SynthConfig { inter_class_shift: 1.0, n_per_class: 2, ..Default::default() };
        assert!(generate_cohort(&cfg).is_ok());
    }
}
