use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use seds_core::ablate::{run_grid, write_table, AblationGrid};
use seds_core::data::{synth_dataset, Manifest, SyntheticSpec};
use seds_core::eval::{encode_split, evaluate_encoded, export_similarity, RetrievalReport};
use seds_core::gradcheck::{run_suite, suite_names};
use seds_core::model::Modality;
use seds_core::train::{load_checkpoint, load_split, resolve_checkpoint, Precision, TrainConfig, Trainer, CONFIG_FILE};
use seds_core::Scalar;

#[derive(Parser)]
#[command(name = "seds", version, about = "Pose/RGB sign-language retrieval: data, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write checkpoints plus a metrics log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on one split in both retrieval directions.
    Eval {
        /// Checkpoint directory, its params.seda, or a training output directory.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value = "fused")]
        modality: Modality,
        /// Comma-separated sample ids whose similarity matrices are exported.
        #[arg(long, value_delimiter = ',')]
        export_sim: Vec<String>,
        /// Directory for exported matrices (default: next to the checkpoint).
        #[arg(long)]
        export_dir: Option<PathBuf>,
        /// Report file (default: report_<split>_<modality>.json next to the checkpoint).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value = "all")]
        module: String,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Train every arm of a grid and write a comparison table.
    Ablate {
        #[arg(long)]
        grid: PathBuf,
        /// Output directory (default: the grid file's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { spec, out } => synth(&spec, &out),
        Command::Train { config, data, out } => {
            let cfg = TrainConfig::load(&config)?;
            let manifest = Manifest::load(&data)?;
            match cfg.precision {
                Precision::F32 => train::<f32>(&cfg, &manifest, &out),
                Precision::F64 => train::<f64>(&cfg, &manifest, &out),
            }
        }
        Command::Eval {
            ckpt,
            data,
            split,
            modality,
            export_sim,
            export_dir,
            report,
        } => {
            let args = EvalArgs {
                ckpt,
                data,
                split,
                modality,
                export_sim,
                export_dir,
                report,
            };
            // The stored config decides the precision; peek at it first.
            let dir = resolve_checkpoint(&args.ckpt)?;
            match TrainConfig::load(dir.join(CONFIG_FILE))?.precision {
                Precision::F32 => eval::<f32>(&args),
                Precision::F64 => eval::<f64>(&args),
            }
        }
        Command::Gradcheck { module, seeds } => gradcheck(&module, seeds),
        Command::Ablate { grid, out } => ablate(&grid, out),
    }
}

fn synth(spec: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let spec: SyntheticSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", spec.display()))?;
    let m = synth_dataset(&spec, out)?;
    println!("wrote {} samples ({} tokens) to {}", m.samples.len(), m.vocab.len(), out.display());
    Ok(())
}

fn train<T: Scalar>(cfg: &TrainConfig, manifest: &Manifest, out: &Path) -> Result<()> {
    let mut tr = Trainer::<T>::new(cfg, manifest)?;
    println!(
        "training {} samples, {} parameters, {} steps",
        tr.train.len(),
        tr.store.num_scalars(),
        tr.schedule.total
    );
    let summary = tr.run(Some(out), |r| {
        if let Some(v) = r.val_r1 {
            println!("epoch {:>3}  step {:>5}  loss {:.4}  val R@1 {:.1}", r.epoch, r.step, r.loss_total, v);
        }
    })?;
    println!(
        "done: {} steps, final loss {:.4}, best epoch {} (val R@1 {})",
        summary.steps,
        summary.final_loss,
        summary.best_epoch,
        summary.best_val_r1.map_or("n/a".into(), |v| format!("{v:.1}"))
    );
    Ok(())
}

struct EvalArgs {
    ckpt: PathBuf,
    data: PathBuf,
    split: String,
    modality: Modality,
    export_sim: Vec<String>,
    export_dir: Option<PathBuf>,
    report: Option<PathBuf>,
}

#[derive(Serialize)]
struct ReportRecord<'a> {
    #[serde(flatten)]
    report: &'a RetrievalReport,
    checkpoint: String,
    split: &'a str,
    modality: Modality,
}

fn eval<T: Scalar>(a: &EvalArgs) -> Result<()> {
    let ck = load_checkpoint::<T>(&a.ckpt)?;
    let manifest = Manifest::load(&a.data)?;
    let samples = load_split(&manifest, &a.split, &ck.config.load_options())?;
    if samples.is_empty() {
        bail!("split {:?} has no samples in {}", a.split, a.data.display());
    }
    let enc = encode_split(&ck.model, &ck.store, &samples)?;
    let ev = evaluate_encoded(&enc, a.modality, ck.model.cfg.normalize)?;
    let checkpoint = ck.dir.display().to_string();
    let records: Vec<ReportRecord> = [&ev.t2v, &ev.v2t]
        .into_iter()
        .map(|r| ReportRecord {
            report: r,
            checkpoint: checkpoint.clone(),
            split: &a.split,
            modality: a.modality,
        })
        .collect();
    for r in &records {
        println!(
            "{} {}: R@1 {:.1}  R@5 {:.1}  R@10 {:.1}  MedR {}",
            a.modality.name(),
            r.report.direction.name(),
            r.report.r1,
            r.report.r5,
            r.report.r10,
            r.report.medr
        );
    }
    let path = a
        .report
        .clone()
        .unwrap_or_else(|| ck.dir.join(format!("report_{}_{}.json", a.split, a.modality.name())));
    std::fs::write(&path, serde_json::to_string_pretty(&records)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    println!("report: {}", path.display());
    if !a.export_sim.is_empty() {
        let dir = a
            .export_dir
            .clone()
            .unwrap_or_else(|| ck.dir.join(format!("similarity_{}", a.split)));
        let index = export_similarity(&enc, ck.model.cfg.normalize, &a.export_sim, &dir)?;
        println!("exported {} samples to {}", index.samples.len(), dir.display());
    }
    Ok(())
}

fn gradcheck(module: &str, seeds: u64) -> Result<()> {
    if module != "all" && !suite_names().contains(&module) {
        bail!("unknown module {module:?} (expected all, {})", suite_names().join(", "));
    }
    let report = run_suite(module, seeds)?;
    let mut failed = 0;
    for c in &report.checks {
        if !c.passed() {
            failed += 1;
            println!("FAIL {}  max rel err {:.3e} over {} entries", c.name, c.max_rel_err, c.entries);
        }
    }
    let worst = report.worst().map_or(0.0, |c| c.max_rel_err);
    println!(
        "{} checks over {seeds} seeds, {failed} failed, worst rel err {worst:.3e}",
        report.checks.len()
    );
    if failed > 0 {
        bail!("{failed} gradient checks failed");
    }
    Ok(())
}

fn ablate(grid_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let grid = AblationGrid::load(grid_path)?;
    let rows = run_grid(&grid, |r| {
        println!(
            "{:<16} seed {:<4} t2v R@1 {:>5.1}  v2t R@1 {:>5.1}",
            r.arm, r.seed, r.t2v_r1, r.v2t_r1
        );
    })?;
    let dir = out.unwrap_or_else(|| grid_path.parent().unwrap_or(Path::new(".")).to_path_buf());
    let (json, csv) = write_table(&rows, &dir)?;
    println!("wrote {} and {}", json.display(), csv.display());
    Ok(())
}
