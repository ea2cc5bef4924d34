mod config;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use protogcd::dataset::{
    generate_synthetic, load_dataset, read_embeddings, sample_components, save_dataset,
    write_embeddings, SamplesPerClass,
};
use protogcd::estimation::{
    estimate_k, is_unimodal, sweep, sweep_argmax, Estimate, ScoreMode, ScoreTriple,
};
use protogcd::evaluation::{evaluate, EvalReport, EvalSubset};
use protogcd::ood::{evaluate_ood, ScoreKind};
use protogcd::rng::{stream_rng, streams};
use protogcd::trainer::{train_with, TrainOptions};
use protogcd::{EmbeddingDataset, Features, ModelParams, TrainConfig};
use serde::Serialize;

use config::FileConfig;
use manifest::{write_json, Artifact, RunManifest};

#[derive(Parser)]
#[command(
    name = "protogcd",
    version,
    about = "Prototype-based generalized category discovery"
)]
struct Cli {
    /// TOML experiment file (flags override it).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "PROTOGCD_OUT", default_value = "out")]
    out: PathBuf,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic vMF-mixture dataset.
    Gen(GenArgs),
    /// Train a model and evaluate it on the unlabeled samples.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Estimate the number of new classes.
    EstimateK(EstimateArgs),
    /// Score ID and OOD embeddings with a checkpoint.
    Ood(OodArgs),
}

#[derive(clap::Args)]
struct GenArgs {
    /// Total number of classes.
    #[arg(long)]
    classes: Option<usize>,
    /// Number of old (labeled) classes.
    #[arg(long)]
    old: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    labeled_fraction: Option<f64>,
    /// Minimum angle between class directions, degrees.
    #[arg(long)]
    min_angle: Option<f64>,
    /// Held-out directions for OOD samples.
    #[arg(long)]
    holdout: Option<usize>,
    /// OOD samples (and as many fresh ID samples) when `--holdout > 0`.
    #[arg(long, default_value_t = 1000)]
    ood_samples: usize,
    /// Base name of the written files.
    #[arg(long, default_value = "dataset")]
    name: String,
}

/// Training overrides shared by `train` and `estimate-k`.
#[derive(clap::Args, Clone)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    e_ramp: Option<usize>,
    #[arg(long)]
    lambda_sup: Option<f64>,
    #[arg(long)]
    lambda_entropy: Option<f64>,
    #[arg(long)]
    lambda_sep: Option<f64>,
    /// Disable the pseudo-label loss.
    #[arg(long)]
    no_dapl: bool,
    /// Number of prototypes (defaults to the dataset's class count).
    #[arg(long)]
    num_classes: Option<usize>,
}

impl TrainFlags {
    fn apply(&self, cfg: &mut TrainConfig, seed: Option<u64>) {
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.optimizer.lr0 = v;
            cfg.optimizer.lr_min = cfg.optimizer.lr_min.min(v);
        }
        if let Some(v) = self.e_ramp {
            cfg.e_ramp = v;
        }
        if let Some(v) = self.lambda_sup {
            cfg.objective.lambda_sup = v;
        }
        if let Some(v) = self.lambda_entropy {
            cfg.objective.lambda_entropy = v;
        }
        if let Some(v) = self.lambda_sep {
            cfg.objective.lambda_sep = v;
        }
        if self.no_dapl {
            cfg.objective.use_dapl = false;
        }
        if let Some(v) = self.num_classes {
            cfg.dims.num_classes = Some(v);
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
    }
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
    /// Held-out dataset for an additional inductive report.
    #[arg(long)]
    eval_split: Option<PathBuf>,
    /// Held-out labeled dataset for best-epoch selection.
    #[arg(long)]
    val: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SubsetArg {
    Unlabeled,
    All,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = SubsetArg::Unlabeled)]
    subset: SubsetArg,
}

#[derive(clap::Args)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Largest candidate number of new classes.
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    probe_epochs: Option<usize>,
    /// Also score every candidate and report the argmax.
    #[arg(long)]
    sweep: bool,
    /// Compare candidates by labeled accuracy only.
    #[arg(long)]
    acc_only: bool,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(clap::Args)]
struct OodArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// In-distribution embeddings (`.pgcd` file or dataset manifest).
    #[arg(long)]
    id: PathBuf,
    /// Out-of-distribution embeddings (`.pgcd` file or dataset manifest).
    #[arg(long)]
    ood: PathBuf,
    /// msp, mls, energy or all.
    #[arg(long, default_value = "all")]
    score: String,
    #[arg(long)]
    tau_base: Option<f64>,
}

struct Run {
    out: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn output(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.outputs.push(p.clone());
        p
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let file = FileConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.or(file.seed);
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let mut run = Run {
        out: cli.out.clone(),
        inputs: cli.config.iter().cloned().collect(),
        outputs: Vec::new(),
    };
    let start = Instant::now();
    let (name, config) = match &cli.command {
        Cmd::Gen(a) => ("gen", cmd_gen(a, &file, seed, &mut run)?),
        Cmd::Train(a) => ("train", cmd_train(a, &file, seed, &mut run)?),
        Cmd::Eval(a) => ("eval", cmd_eval(a, &mut run)?),
        Cmd::EstimateK(a) => ("estimate-k", cmd_estimate(a, &file, seed, &mut run)?),
        Cmd::Ood(a) => ("ood", cmd_ood(a, &file, &mut run)?),
    };
    let manifest = RunManifest {
        command: name.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config,
        seed,
        inputs: run
            .inputs
            .iter()
            .map(|p| Artifact::of(p))
            .collect::<Result<_>>()?,
        outputs: run
            .outputs
            .iter()
            .map(|p| Artifact::of(p))
            .collect::<Result<_>>()?,
        duration_secs: start.elapsed().as_secs_f64(),
    };
    manifest.write(&run.out)?;
    Ok(())
}

fn usage_error(msg: &str) -> ! {
    Cli::command()
        .error(clap::error::ErrorKind::MissingRequiredArgument, msg)
        .exit()
}

fn cmd_gen(
    a: &GenArgs,
    file: &FileConfig,
    seed: Option<u64>,
    run: &mut Run,
) -> Result<serde_json::Value> {
    if a.old.is_none() && !file.gen_sets_old {
        usage_error("the argument '--old <OLD>' is required");
    }
    let mut cfg = file.gen.clone().unwrap_or_default();
    if let Some(v) = a.classes {
        cfg.total_classes = v;
    }
    if let Some(v) = a.old {
        cfg.old_classes = v;
    }
    if let Some(v) = a.per_class {
        cfg.samples_per_class = SamplesPerClass::Constant(v);
    }
    if let Some(v) = a.dim {
        cfg.dim = v;
    }
    if let Some(v) = a.kappa {
        cfg.concentration = v;
    }
    if let Some(v) = a.labeled_fraction {
        cfg.labeled_fraction = v;
    }
    if let Some(v) = a.min_angle {
        cfg.min_prototype_angle = v.to_radians();
    }
    if let Some(v) = a.holdout {
        cfg.holdout_classes = v;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let set = generate_synthetic::<f64>(&cfg)?;
    let manifest_path = run.output(&format!("{}.json", a.name));
    save_dataset(&set.dataset, &manifest_path)?;
    run.outputs.push(manifest_path.with_extension("pgcd"));
    if cfg.holdout_classes > 0 && a.ood_samples > 0 {
        let mut rng = stream_rng(cfg.seed, streams::HOLDOUT);
        let ood = sample_components(
            &set.holdout_prototypes,
            a.ood_samples,
            cfg.concentration,
            &mut rng,
        )?;
        let id = sample_components(&set.prototypes, a.ood_samples, cfg.concentration, &mut rng)?;
        write_embeddings(&run.output(&format!("{}_ood.pgcd", a.name)), &ood)?;
        write_embeddings(&run.output(&format!("{}_id.pgcd", a.name)), &id)?;
    }
    let ds = &set.dataset;
    println!(
        "wrote {} samples ({} labeled, {} unlabeled) to {}",
        ds.len(),
        ds.labeled_count(),
        ds.unlabeled_count(),
        manifest_path.display()
    );
    Ok(serde_json::to_value(&cfg)?)
}

fn load(path: &Path, run: &mut Run) -> Result<EmbeddingDataset> {
    run.inputs.push(path.to_path_buf());
    let ds = load_dataset::<f64>(path).with_context(|| format!("loading {}", path.display()))?;
    let features = path.with_extension("pgcd");
    if features.exists() {
        run.inputs.push(features);
    }
    Ok(ds)
}

#[derive(Serialize)]
struct TrainReport {
    #[serde(flatten)]
    transductive: EvalReport,
    inductive: Option<EvalReport>,
    epochs: usize,
    final_loss: Option<f64>,
    selected_epoch: Option<usize>,
}

fn cmd_train(
    a: &TrainArgs,
    file: &FileConfig,
    seed: Option<u64>,
    run: &mut Run,
) -> Result<serde_json::Value> {
    let mut cfg = file.train();
    a.flags.apply(&mut cfg, seed);
    let ds = load(&a.data, run)?;
    let val = a.val.as_deref().map(|p| load(p, run)).transpose()?;
    let held_out = a.eval_split.as_deref().map(|p| load(p, run)).transpose()?;

    let log_path = run.output("history.jsonl");
    let mut log =
        fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let (params, history) = train_with(
        &ds,
        &cfg,
        TrainOptions {
            validation: val.as_ref(),
            log: Some(&mut log),
            ..Default::default()
        },
    )?;
    params.save(&run.output("model.ckpt"))?;

    let report = TrainReport {
        transductive: evaluate(&params, &ds, EvalSubset::Unlabeled)?,
        inductive: held_out
            .as_ref()
            .map(|h| evaluate(&params, h, EvalSubset::All))
            .transpose()?,
        epochs: history.len(),
        final_loss: history.records.last().map(|r| r.losses.total),
        selected_epoch: history.selected_epoch,
    };
    write_json(&run.output("report.json"), &report)?;
    println!(
        "acc_all {:.4}  acc_old {:.4}  acc_new {:.4}",
        report.transductive.acc_all, report.transductive.acc_old, report.transductive.acc_new
    );
    Ok(serde_json::to_value(cfg)?)
}

fn load_checkpoint(path: &Path, run: &mut Run) -> Result<ModelParams> {
    run.inputs.push(path.to_path_buf());
    ModelParams::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn check_width(params: &ModelParams, width: usize, what: &Path) -> Result<()> {
    if params.d_in() != width {
        bail!(
            "checkpoint expects {}-dimensional inputs but {} has {width} columns",
            params.d_in(),
            what.display()
        );
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs, run: &mut Run) -> Result<serde_json::Value> {
    let params = load_checkpoint(&a.checkpoint, run)?;
    let ds = load(&a.data, run)?;
    check_width(&params, ds.dim(), &a.data)?;
    let subset = match a.subset {
        SubsetArg::Unlabeled => EvalSubset::Unlabeled,
        SubsetArg::All => EvalSubset::All,
    };
    let report = evaluate(&params, &ds, subset)?;
    write_json(&run.output("eval.json"), &report)?;
    println!(
        "acc_all {:.4}  acc_old {:.4}  acc_new {:.4}  compactness {:.4}  separation {:.4}",
        report.acc_all, report.acc_old, report.acc_new, report.compactness, report.separation
    );
    Ok(serde_json::json!({ "subset": subset }))
}

#[derive(Serialize)]
struct SweepReport {
    scores: Vec<ScoreTriple>,
    argmax: Option<usize>,
    unimodal: bool,
}

#[derive(Serialize)]
struct EstimateReport {
    k_old: usize,
    k_max: usize,
    probe_epochs: usize,
    mode: ScoreMode,
    estimate: Estimate,
    sweep: Option<SweepReport>,
}

fn cmd_estimate(
    a: &EstimateArgs,
    file: &FileConfig,
    seed: Option<u64>,
    run: &mut Run,
) -> Result<serde_json::Value> {
    let Some(k_max) = a.k_max.or(file.estimate.k_max) else {
        usage_error("the argument '--k-max <K_MAX>' is required");
    };
    let probe_epochs = a.probe_epochs.or(file.estimate.probe_epochs).unwrap_or(3);
    let mut cfg = file.train();
    a.flags.apply(&mut cfg, seed);
    let ds = load(&a.data, run)?;
    let mode = if a.acc_only {
        ScoreMode::AccOnly
    } else {
        ScoreMode::Proto
    };
    let estimate = estimate_k(&ds, k_max, probe_epochs, &cfg, mode)?;
    println!("estimated K_new: {}", estimate.k_new);
    let sweep = if a.sweep {
        let scores = sweep(&ds, k_max, probe_epochs, &cfg)?;
        let report = SweepReport {
            argmax: sweep_argmax(&scores, mode),
            unimodal: is_unimodal(&scores, mode),
            scores,
        };
        if let Some(k) = report.argmax {
            println!("sweep argmax K_new: {k} (unimodal: {})", report.unimodal);
        }
        Some(report)
    } else {
        None
    };
    let report = EstimateReport {
        k_old: ds.old_classes().len(),
        k_max,
        probe_epochs,
        mode,
        estimate,
        sweep,
    };
    write_json(&run.output("estimate.json"), &report)?;
    Ok(
        serde_json::json!({ "train": cfg, "k_max": k_max, "probe_epochs": probe_epochs, "mode": mode }),
    )
}

fn load_features(path: &Path, run: &mut Run) -> Result<Features> {
    if path.extension().is_some_and(|e| e == "json") {
        Ok(load(path, run)?.features().clone())
    } else {
        run.inputs.push(path.to_path_buf());
        read_embeddings::<f64>(path).with_context(|| format!("loading {}", path.display()))
    }
}

fn cmd_ood(a: &OodArgs, file: &FileConfig, run: &mut Run) -> Result<serde_json::Value> {
    let kinds: Vec<ScoreKind> = if a.score == "all" {
        ScoreKind::ALL.to_vec()
    } else {
        vec![a.score.parse()?]
    };
    let tau_base = a.tau_base.unwrap_or(file.train().objective.tau_base);
    let params = load_checkpoint(&a.checkpoint, run)?;
    let id = load_features(&a.id, run)?;
    let ood = load_features(&a.ood, run)?;
    check_width(&params, id.ncols(), &a.id)?;
    check_width(&params, ood.ncols(), &a.ood)?;
    let reports = evaluate_ood(&params, &id, &ood, &kinds, tau_base)?;
    for r in &reports {
        println!(
            "{:<6} auroc {:.4}  fpr95 {:.4}  aupr_in {:.4}",
            r.score_name.name(),
            r.auroc,
            r.fpr95,
            r.aupr_in
        );
    }
    write_json(&run.output("ood.json"), &reports)?;
    Ok(serde_json::json!({ "scores": kinds, "tau_base": tau_base }))
}
