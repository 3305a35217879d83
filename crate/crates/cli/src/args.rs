//! Flag groups shared by several subcommands.
//!
//! Every field is optional so that values can be layered: command-line
//! flags win over the `--config` TOML file, which wins over built-in
//! defaults. The TOML file uses one table per group (`[synth]`, `[model]`,
//! `[train]`, `[eval]`) with the flag names in snake_case.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use fcadapt::adapter::Activation;
use fcadapt::classifier::SvmConfig;
use fcadapt::encoder::EncoderConfig;
use fcadapt::model::ModelConfig;
use fcadapt::objectives::LossWeights;
use fcadapt::pipeline::EvalConfig;
use fcadapt::synth::SynthConfig;
use fcadapt::trainer::{Phase, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "fcadapt", version, about = "Adapter fine-tuning over functional brain networks")]
pub struct Cli {
    /// TOML file with [synth], [model], [train] and [eval] tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic two-class cohort in the dataset directory format.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Self-supervised training of adapter, encoder and heads.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train adapter and heads against the frozen encoder of a checkpoint.
    Finetune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Linear-SVM diagnosis on latent features, averaged over repeated splits.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Fine-tune and evaluate with only λr, only λc, and both.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Write one subject's input and reconstructed matrices as CSV and PNG.
    Reconstruct {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        subject: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthArgs {
    #[arg(long)]
    pub regions: Option<usize>,
    #[arg(long)]
    pub timepoints: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub communities: Option<usize>,
    /// Strength of the class-1 weakening of community 0, in [0, 1].
    #[arg(long)]
    pub shift: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArgs {
    #[arg(long)]
    pub adapter_hidden: Option<usize>,
    /// Token width B shared by adapter output and encoder.
    #[arg(long)]
    pub embed: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub ffn_hidden: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    #[serde(default)]
    pub no_ffn: bool,
    #[arg(long)]
    #[serde(default)]
    pub no_norm: bool,
    #[arg(long)]
    #[serde(default)]
    pub no_residual: bool,
    /// Bare attention layers: no FFN, no norm, no residual.
    #[arg(long)]
    #[serde(default)]
    pub strict_mhsa: bool,
    /// Identity activation between the adapter projections.
    #[arg(long)]
    #[serde(default)]
    pub linear_adapter: bool,
    /// Initialization seed.
    #[arg(long = "init-seed")]
    pub init_seed: Option<u64>,
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lambda_c: Option<f64>,
    #[arg(long)]
    pub lambda_r: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub mask_fraction: Option<f64>,
    #[arg(long = "train-seed")]
    pub train_seed: Option<u64>,
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub svm_c: Option<f64>,
    #[arg(long)]
    pub svm_epochs: Option<usize>,
    #[arg(long)]
    pub positive_label: Option<String>,
    #[arg(long)]
    pub negative_label: Option<String>,
    #[arg(long = "eval-seed")]
    pub eval_seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub synth: SynthArgs,
    #[serde(default)]
    pub model: ModelArgs,
    #[serde(default)]
    pub train: TrainArgs,
    #[serde(default)]
    pub eval: EvalArgs,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text)
            .map_err(|e| fcadapt::Error::Config(format!("{}: {e}", path.display())).into())
    }
}

impl SynthArgs {
    pub fn resolve(&self, file: &SynthArgs) -> SynthConfig {
        let d = SynthConfig::default();
        SynthConfig {
            regions: self.regions.or(file.regions).unwrap_or(d.regions),
            timepoints: self.timepoints.or(file.timepoints).unwrap_or(d.timepoints),
            n_per_class: self.per_class.or(file.per_class).unwrap_or(d.n_per_class),
            n_communities: self.communities.or(file.communities).unwrap_or(d.n_communities),
            inter_class_shift: self.shift.or(file.shift).unwrap_or(d.inter_class_shift),
            noise_std: self.noise.or(file.noise).unwrap_or(d.noise_std),
            seed: self.seed.or(file.seed).unwrap_or(d.seed),
        }
    }
}

impl ModelArgs {
    /// `regions` always comes from the dataset.
    pub fn resolve(&self, file: &ModelArgs, regions: usize) -> (ModelConfig, u64) {
        let d = ModelConfig::default();
        let e = EncoderConfig::default();
        let strict = self.strict_mhsa || file.strict_mhsa;
        let encoder = EncoderConfig {
            depth: self.depth.or(file.depth).unwrap_or(e.depth),
            heads: self.heads.or(file.heads).unwrap_or(e.heads),
            embed: self.embed.or(file.embed).unwrap_or(e.embed),
            use_ffn: !(strict || self.no_ffn || file.no_ffn),
            ffn_hidden: self.ffn_hidden.or(file.ffn_hidden).unwrap_or(e.ffn_hidden),
            use_norm: !(strict || self.no_norm || file.no_norm),
            use_residual: !(strict || self.no_residual || file.no_residual),
        };
        let activation = if self.linear_adapter || file.linear_adapter {
            Activation::Identity
        } else {
            Activation::Relu
        };
        let config = ModelConfig {
            regions,
            adapter_hidden: self.adapter_hidden.or(file.adapter_hidden).unwrap_or(d.adapter_hidden),
            activation,
            encoder,
            latent_dim: self.latent_dim.or(file.latent_dim).unwrap_or(d.latent_dim),
        };
        (config, self.init_seed.or(file.init_seed).unwrap_or(0))
    }
}

impl TrainArgs {
    pub fn resolve(&self, file: &TrainArgs, phase: Phase) -> TrainConfig {
        let d = TrainConfig::new(phase);
        let w = LossWeights::default();
        TrainConfig {
            phase,
            lr: self.lr.or(file.lr).unwrap_or(d.lr),
            weight_decay: self.weight_decay.or(file.weight_decay).unwrap_or(d.weight_decay),
            epochs: self.epochs.or(file.epochs).unwrap_or(d.epochs),
            batch_size: self.batch_size.or(file.batch_size).unwrap_or(d.batch_size),
            loss_weights: LossWeights {
                lambda_c: self.lambda_c.or(file.lambda_c).unwrap_or(w.lambda_c),
                lambda_r: self.lambda_r.or(file.lambda_r).unwrap_or(w.lambda_r),
                tau: self.tau.or(file.tau).unwrap_or(w.tau),
            },
            mask_fraction: self.mask_fraction.or(file.mask_fraction).unwrap_or(d.mask_fraction),
            seed: self.train_seed.or(file.train_seed).unwrap_or(d.seed),
        }
    }
}

impl EvalArgs {
    pub fn resolve(&self, file: &EvalArgs) -> EvalConfig {
        let d = EvalConfig::default();
        let s = SvmConfig::default();
        EvalConfig {
            repeats: self.repeats.or(file.repeats).unwrap_or(d.repeats),
            test_fraction: self.test_fraction.or(file.test_fraction).unwrap_or(d.test_fraction),
            svm: SvmConfig {
                c: self.svm_c.or(file.svm_c).unwrap_or(s.c),
                epochs: self.svm_epochs.or(file.svm_epochs).unwrap_or(s.epochs),
                seed: s.seed,
            },
            positive_label: self
                .positive_label
                .clone()
                .or_else(|| file.positive_label.clone())
                .unwrap_or(d.positive_label),
            negative_label: self.negative_label.clone().or_else(|| file.negative_label.clone()),
            seed: self.eval_seed.or(file.eval_seed).unwrap_or(d.seed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file: FileConfig = toml::from_str("[train]\nlr = 0.01\nepochs = 7\n").unwrap();
        let flags = TrainArgs {
            epochs: Some(3),
            ..Default::default()
        };
        let cfg = flags.resolve(&file.train, Phase::Finetune);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.lr, 0.01);
        assert_eq!(cfg.weight_decay, 5e-5);
        assert_eq!(cfg.loss_weights, LossWeights::default());
    }

    #[test]
    fn strict_mode_disables_all_sub_blocks() {
        let flags = ModelArgs {
            strict_mhsa: true,
            ..Default::default()
        };
        let (cfg, _) = flags.resolve(&ModelArgs::default(), 16);
        assert!(!cfg.encoder.use_ffn && !cfg.encoder.use_norm && !cfg.encoder.use_residual);
        assert_eq!(cfg.regions, 16);
        assert_eq!(cfg.adapter_hidden, 1024);
    }

    #[test]
    fn unknown_file_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[train]\nlearning_rate = 1\n").is_err());
    }
}
