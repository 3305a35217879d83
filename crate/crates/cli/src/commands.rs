use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::Utc;
use serde::Serialize;

use fcadapt::checkpoint::{load_checkpoint, save_checkpoint};
use fcadapt::connectome::{load_cohort, write_cohort, ConnectivityMatrix};
use fcadapt::model::ModelBundle;
use fcadapt::pipeline::{evaluate_bundle, render_ablation_table, render_report, reconstruct_subject, run_ablation, to_matrices};
use fcadapt::synth::generate_cohort;
use fcadapt::trainer::{finetune, pretrain, EpochLog, Phase};
use fcadapt::Error;

use crate::args::{Cli, Command, FileConfig};
use crate::heatmap::{write_csv, write_heatmap};
use crate::manifest::{git_describe, RunManifest};

pub const CHECKPOINT: &str = "checkpoint.bin";
pub const TRAIN_LOG: &str = "train_log.jsonl";

/// Collects the provenance of one invocation and writes it on success.
struct Run {
    command: &'static str,
    out: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started_at: chrono::DateTime<Utc>,
}

impl Run {
    fn start(command: &'static str, out: &Path, inputs: &[&Path]) -> anyhow::Result<Self> {
        std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.to_path_buf(), source: e })?;
        Ok(Self {
            command,
            out: out.to_path_buf(),
            inputs: inputs.iter().map(|p| p.to_path_buf()).collect(),
            outputs: Vec::new(),
            started_at: Utc::now(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn write_text(&mut self, name: &str, text: &str) -> anyhow::Result<()> {
        let path = self.path(name);
        std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        self.write_text(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    fn finish<T: Serialize>(self, config: &T, seed: u64) -> anyhow::Result<()> {
        RunManifest {
            command: self.command.to_string(),
            argv: std::env::args().collect(),
            config: serde_json::to_value(config)?,
            seed,
            inputs: self.inputs,
            outputs: self.outputs,
            started_at: self.started_at,
            finished_at: Utc::now(),
            git_describe: git_describe(),
            tool_version: env!("CARGO_PKG_VERSION"),
        }
        .write(&self.out)
    }
}

fn load_matrices(dir: &Path) -> anyhow::Result<Vec<ConnectivityMatrix>> {
    let recordings = load_cohort(dir)?;
    if recordings.is_empty() {
        return Err(Error::Input(format!("{}: cohort has no subjects", dir.display())).into());
    }
    Ok(to_matrices(&recordings)?)
}

fn write_log(run: &mut Run, log: &[EpochLog]) -> anyhow::Result<()> {
    let mut text = String::new();
    for entry in log {
        text.push_str(&serde_json::to_string(entry)?);
        text.push('\n');
    }
    run.write_text(TRAIN_LOG, &text)
}

fn report_final(log: &[EpochLog]) {
    if let Some(last) = log.last() {
        println!(
            "epoch {}: L_c = {:.6}, L_r = {:.6}, L = {:.6}",
            last.epoch, last.l_c, last.l_r, last.combined
        );
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate { out, synth } => {
            let cfg = synth.resolve(&file.synth);
            let mut run = Run::start("generate", &out, &[])?;
            let cohort = generate_cohort(&cfg)?;
            write_cohort(&out, &cohort)?;
            run.path("manifest.json");
            println!("wrote {} subjects to {}", cohort.len(), out.display());
            run.finish(&cfg, cfg.seed)
        }
        Command::Pretrain { data, out, model, train } => {
            let matrices = load_matrices(&data)?;
            let (model_cfg, init_seed) = model.resolve(&file.model, matrices[0].size());
            let train_cfg = train.resolve(&file.train, Phase::Pretrain);
            let mut run = Run::start("pretrain", &out, &[&data])?;
            let bundle = ModelBundle::new(model_cfg, init_seed)?;
            let outcome = pretrain(&matrices, bundle, &train_cfg)?;
            save_checkpoint(&outcome.bundle, &run.path(CHECKPOINT))?;
            write_log(&mut run, &outcome.log)?;
            report_final(&outcome.log);
            #[derive(Serialize)]
            struct Resolved {
                model: fcadapt::model::ModelConfig,
                init_seed: u64,
                train: fcadapt::trainer::TrainConfig,
            }
            let seed = train_cfg.seed;
            run.finish(&Resolved { model: model_cfg, init_seed, train: train_cfg }, seed)
        }
        Command::Finetune { data, checkpoint, out, train } => {
            let matrices = load_matrices(&data)?;
            let train_cfg = train.resolve(&file.train, Phase::Finetune);
            let mut bundle = load_checkpoint(&checkpoint)?;
            bundle.freeze_encoder();
            let mut run = Run::start("finetune", &out, &[&data, &checkpoint])?;
            let outcome = finetune(&matrices, bundle, &train_cfg)?;
            save_checkpoint(&outcome.bundle, &run.path(CHECKPOINT))?;
            write_log(&mut run, &outcome.log)?;
            report_final(&outcome.log);
            run.finish(&train_cfg, train_cfg.seed)
        }
        Command::Eval { data, checkpoint, out, eval } => {
            let matrices = load_matrices(&data)?;
            let eval_cfg = eval.resolve(&file.eval);
            let bundle = load_checkpoint(&checkpoint)?;
            let mut run = Run::start("eval", &out, &[&data, &checkpoint])?;
            let report = evaluate_bundle(&bundle, &matrices, &eval_cfg)?;
            let table = render_report("adapter + frozen encoder", &report);
            print!("{table}");
            run.write_json("report.json", &report)?;
            run.write_text("report.txt", &table)?;
            run.finish(&eval_cfg, eval_cfg.seed)
        }
        Command::Ablate { data, checkpoint, out, train, eval } => {
            let matrices = load_matrices(&data)?;
            let train_cfg = train.resolve(&file.train, Phase::Finetune);
            let eval_cfg = eval.resolve(&file.eval);
            let bundle = load_checkpoint(&checkpoint)?;
            let mut run = Run::start("ablate", &out, &[&data, &checkpoint])?;
            let rows = run_ablation(&bundle, &matrices, &train_cfg, &eval_cfg)?;
            let table = render_ablation_table(&rows);
            print!("{table}");
            run.write_json("ablation.json", &rows)?;
            run.write_text("ablation.txt", &table)?;
            #[derive(Serialize)]
            struct Resolved {
                train: fcadapt::trainer::TrainConfig,
                eval: fcadapt::pipeline::EvalConfig,
            }
            run.finish(&Resolved { train: train_cfg, eval: eval_cfg.clone() }, train_cfg.seed)
        }
        Command::Reconstruct { data, checkpoint, subject, out } => {
            let matrices = load_matrices(&data)?;
            let matrix = matrices
                .iter()
                .find(|m| m.subject_id == subject)
                .ok_or_else(|| Error::Input(format!("subject {subject:?} not found in {}", data.display())))?;
            let bundle = load_checkpoint(&checkpoint)?;
            let mut run = Run::start("reconstruct", &out, &[&data, &checkpoint])?;
            let (input, output, mse) = reconstruct_subject(&bundle, matrix)?;
            write_csv(&input, &run.path("input.csv")).context("writing input matrix")?;
            write_csv(&output, &run.path("reconstructed.csv")).context("writing reconstruction")?;
            write_heatmap(&input, &run.path("input.png"))?;
            write_heatmap(&output, &run.path("reconstructed.png"))?;
            #[derive(Serialize)]
            struct Summary<'a> {
                subject: &'a str,
                mse: f64,
            }
            run.write_json("reconstruction.json", &Summary { subject: &subject, mse })?;
            println!("{subject}: reconstruction MSE = {mse:.6e}");
            run.finish(&Summary { subject: &subject, mse }, bundle.rng_seed)
        }
    }
}
