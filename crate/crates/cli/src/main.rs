//! `fiqa`: train, score, evaluate, ablate and audit face quality models.

mod config;
mod failure;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fiqa_core::data::synthetic::{self, SynthConfig};
use fiqa_core::data::load_manifest;
use fiqa_core::efficiency::estimate_flops;
use fiqa_core::inference::{batch_predict, join_with_manifest, read_predictions, TtaPolicy};
use fiqa_core::metrics::evaluate;
use fiqa_core::models::{build_model, Backbone, BuildOptions, ModelSpec, QualityModel};
use fiqa_core::trainer::{load_ensemble, run_ablation, train_ensemble, AblationOptions};
use log::info;
use serde::Serialize;

use config::RunFile;
use failure::Failure;

#[derive(Parser)]
#[command(name = "fiqa", version, about = "Face image quality assessment")]
struct Cli {
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train both models and write checkpoints plus an ensemble manifest.
    Train(Common),
    /// Score every image of a manifest into a prediction CSV.
    Predict(Common),
    /// Compare a prediction CSV with manifest labels.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Prediction CSV written by `predict`.
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Train and score the ablation grid.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Add ensemble rows for alpha in {0, 0.25, 0.5, 1}.
        #[arg(long)]
        sweep_alpha: bool,
        /// Add ensemble rows for backbone lr multipliers {0.01, 0.1, 1}.
        #[arg(long)]
        sweep_backbone_lr: bool,
    },
    /// Report parameter counts and FLOPs of the ensemble.
    Audit(Common),
    /// Write a synthetic labelled dataset.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 160)]
        height: u32,
        #[arg(long, default_value_t = 112)]
        width: u32,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args, Clone, Debug, Default)]
struct Common {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ensemble directory or its `ensemble.json`.
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Test-time flips: at validation for `train`, at scoring for `predict`,
    /// as the view count for `audit`.
    #[arg(long, value_enum)]
    tta: Option<Switch>,
    /// Weight of the correlation term.
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    /// Print the resolved config and exit without touching anything.
    #[arg(long)]
    dry_run: bool,
}

impl Common {
    fn resolve(&self) -> Result<RunFile, Failure> {
        let mut run = RunFile::load(self.config.as_deref())?;
        if let Some(s) = self.seed {
            run.train.seed = s;
        }
        if let Some(a) = self.alpha {
            run.train.alpha = a;
        }
        if let Some(t) = self.tta {
            run.train.tta_in_validation = t == Switch::On;
        }
        for (slot, flag) in [
            (&mut run.out, &self.out),
            (&mut run.checkpoints, &self.checkpoints),
            (&mut run.manifest, &self.manifest),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        run.validate()?;
        Ok(run)
    }

    fn policy(&self, default_on: bool) -> TtaPolicy {
        let on = self.tta.map_or(default_on, |t| t == Switch::On);
        if on {
            TtaPolicy::default()
        } else {
            TtaPolicy::none()
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::data(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("plain data") + "\n"))
}

fn dry_run(run: &RunFile) -> Result<(), Failure> {
    print!("{}", run.to_toml());
    Ok(())
}

fn cmd_train(c: &Common) -> Result<(), Failure> {
    let run = c.resolve()?;
    let manifest = run.require_manifest()?;
    let out = run.require_out()?;
    if c.dry_run {
        return dry_run(&run);
    }
    let entries = load_manifest(manifest)?;
    fs::create_dir_all(out).map_err(|e| Failure::data(format!("cannot create {}: {e}", out.display())))?;
    write_text(&out.join("config.toml"), &run.to_toml())?;
    let result = train_ensemble(&run.train, &entries, Some(out))?;
    println!("{:<24}  SRCC    PLCC    Final Score", "validation");
    for r in &result.runs {
        if let Some(m) = r.best_val {
            println!("{:<24}  {}", r.model.spec().backbone.display_name(), m.table_row());
        }
    }
    for (name, m) in [("Ensemble", result.validation), ("Ensemble + TTA", result.validation_tta)] {
        if let Some(m) = m {
            println!("{name:<24}  {}", m.table_row());
        }
    }
    info!("wrote checkpoints to {}", out.display());
    Ok(())
}

fn cmd_predict(c: &Common) -> Result<(), Failure> {
    let run = c.resolve()?;
    let manifest = run.require_manifest()?;
    let checkpoints = run.require_checkpoints()?;
    let out = run.require_out()?;
    if c.dry_run {
        return dry_run(&run);
    }
    let entries = load_manifest(manifest)?;
    let (_, models) = load_ensemble(checkpoints)?;
    let refs: Vec<&QualityModel> = models.iter().collect();
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::data(format!("cannot create {}: {e}", dir.display())))?;
    }
    let summary = batch_predict(&refs, &entries, &c.policy(true), out, run.train.eval_batch_size)?;
    info!("scored {} image(s), {} failed", summary.scored, summary.failed);
    if summary.scored == 0 {
        return Err(Failure::data("no image could be scored"));
    }
    Ok(())
}

fn cmd_evaluate(c: &Common, predictions: &Path) -> Result<(), Failure> {
    let run = c.resolve()?;
    let manifest = run.require_manifest()?;
    if !predictions.is_file() {
        return Err(Failure::config(format!("predictions {} do not exist", predictions.display())));
    }
    if c.dry_run {
        return dry_run(&run);
    }
    let entries = load_manifest(manifest)?;
    let preds = read_predictions(predictions)?;
    let (p, g) = join_with_manifest(&preds, &entries, predictions)?;
    let report = evaluate(&p, &g)?;
    println!("SRCC    PLCC    Final Score");
    println!("{}", report.table_row());
    if let Some(out) = &run.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn cmd_ablate(c: &Common, sweep_alpha: bool, sweep_backbone_lr: bool) -> Result<(), Failure> {
    let run = c.resolve()?;
    let manifest = run.require_manifest()?;
    let out = run.require_out()?;
    if c.dry_run {
        return dry_run(&run);
    }
    let entries = load_manifest(manifest)?;
    let mut opts = AblationOptions::default();
    if sweep_alpha {
        opts.alpha_sweep = AblationOptions::full_alpha_sweep();
    }
    if sweep_backbone_lr {
        opts.backbone_lr_sweep = AblationOptions::full_backbone_lr_sweep();
    }
    let report = run_ablation(&run.train, &entries, &opts)?;
    let table = report.table();
    print!("{table}");
    write_text(&out.join("config.toml"), &run.to_toml())?;
    write_text(&out.join("ablation.txt"), &table)?;
    write_json(&out.join("ablation.json"), &report)
}

fn cmd_audit(c: &Common) -> Result<(), Failure> {
    let run = c.resolve()?;
    if c.dry_run {
        return dry_run(&run);
    }
    let models = match &run.checkpoints {
        Some(_) => load_ensemble(run.require_checkpoints()?)?.1,
        None => Backbone::ALL
            .iter()
            .map(|&b| {
                let opts = BuildOptions {
                    seed: run.train.seed,
                    input_size: run.train.input_size(),
                    weights_dir: None,
                };
                build_model(&ModelSpec::new(b, false), &opts)
            })
            .collect::<Result<_, _>>()?,
    };
    let refs: Vec<&QualityModel> = models.iter().collect();
    let report = estimate_flops(&refs, c.policy(false).count());
    print!("{}", report.table());
    if let Some(out) = &run.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn cmd_synth(out: &Path, cfg: &SynthConfig) -> Result<(), Failure> {
    if cfg.count == 0 || cfg.width == 0 || cfg.height == 0 {
        return Err(Failure::config("count, width and height must be > 0"));
    }
    let entries = synthetic::generate(out, cfg)?;
    info!("wrote {} images and manifest.csv to {}", entries.len(), out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Train(c) => cmd_train(c),
        Command::Predict(c) => cmd_predict(c),
        Command::Evaluate { common, predictions } => cmd_evaluate(common, predictions),
        Command::Ablate {
            common,
            sweep_alpha,
            sweep_backbone_lr,
        } => cmd_ablate(common, *sweep_alpha, *sweep_backbone_lr),
        Command::Audit(c) => cmd_audit(c),
        Command::Synth {
            out,
            count,
            seed,
            height,
            width,
        } => cmd_synth(
            out,
            &SynthConfig {
                count: *count,
                seed: *seed,
                width: *width,
                height: *height,
            },
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.kind().to_string();
            eprintln!("error: CONFIG_ERROR: {msg}");
            let _ = e.print();
            return ExitCode::from(failure::Category::Config.exit_code());
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.line());
            ExitCode::from(f.category.exit_code())
        }
    }
}
