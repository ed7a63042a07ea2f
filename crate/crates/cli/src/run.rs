use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context as _, Result};
use clap::{Args, ValueEnum};
use sam_core::data::DomainSplit;
use sam_core::mixup::MixupPolicy;
use sam_core::model::{load_checkpoint, save_checkpoint};
use sam_core::train::{ablation_run, per_domain_accuracy, train_run, Mode, TrainConfig};
use serde::Serialize;

use crate::config::{named_policy, DataArgs};
use crate::output::{write_json, write_text};
use crate::Context;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Plain cross-entropy on pooled source domains (reported as DeepAll).
    Erm,
    /// Spectral mixup with the EMA-teacher consistency terms.
    Sam,
}

/// Hyperparameter overrides shared by `train` and `ablate`.
#[derive(Args, Debug, Clone, Default)]
pub struct HyperArgs {
    /// Training epochs; the rampup is shortened to fit.
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,

    /// Initial learning rate.
    #[arg(long = "lr", value_name = "F64")]
    pub learning_rate: Option<f64>,

    /// Original samples per step.
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,

    /// Upper bound of λ ~ U(0, eta).
    #[arg(long, value_name = "F64")]
    pub eta: Option<f64>,

    /// Consistency weight target.
    #[arg(long, value_name = "F64")]
    pub beta: Option<f64>,

    /// Weight of the augmented classification term.
    #[arg(long, value_name = "F64")]
    pub gamma: Option<f64>,

    /// Rampup length of the consistency weight, in epochs.
    #[arg(long, value_name = "N")]
    pub rampup_epochs: Option<usize>,
}

impl HyperArgs {
    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.epochs {
            cfg.epochs = v;
            cfg.rampup_epochs = cfg.rampup_epochs.min(v);
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.eta {
            cfg.eta = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = self.rampup_epochs {
            cfg.rampup_epochs = v;
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub hyper: HyperArgs,

    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,

    /// Domain index used as the unseen test domain.
    #[arg(long, value_name = "N")]
    pub held_out: Option<usize>,

    /// Mixing policy: sam or fact.
    #[arg(long, value_name = "NAME")]
    pub policy: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Checkpoint written by `train`.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub hyper: HyperArgs,

    /// Held-out domains, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub held_out: Option<Vec<usize>>,

    /// Seeds shared by every policy row, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub seeds: Option<Vec<u64>>,
}

fn base_config(ctx: &Context, hyper: &HyperArgs) -> Result<TrainConfig> {
    let mut cfg = ctx.file.train_config()?;
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    hyper.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(args: TrainArgs, ctx: &Context) -> Result<()> {
    let mut cfg = base_config(ctx, &args.hyper)?;
    match args.mode {
        Some(ModeArg::Erm) => cfg.mode = Mode::Erm,
        Some(ModeArg::Sam) => cfg.mode = Mode::Sam,
        None => {}
    }
    if let Some(p) = &args.policy {
        cfg.policy = named_policy(p)?;
    }
    let dataset = args.data.source(&ctx.file).load(ctx.exec)?;
    let held_out = args.held_out.or(ctx.file.data().held_out).unwrap_or(0);
    let split = DomainSplit::leave_one_domain_out(&dataset, held_out, cfg.val_fraction, cfg.seed)?;
    let outcome = train_run(&cfg, &dataset, &split, ctx.exec)?;
    let r = &outcome.report;
    write_json(&ctx.out.join("report.json"), r)?;
    write_text(&ctx.out.join("metrics.csv"), &r.metrics_csv())?;
    save_checkpoint(&outcome.best, cfg.seed, &ctx.out.join("checkpoint.bin"))?;
    println!(
        "{}: held-out domain {} ({}) test accuracy {:.4}, best val {:.4} at epoch {}",
        r.tag,
        held_out,
        dataset.domain_names[held_out],
        r.test_accuracy,
        r.best_val_accuracy,
        r.best_epoch
    );
    Ok(())
}

#[derive(Serialize)]
struct DomainAccuracy {
    domain: usize,
    name: String,
    samples: usize,
    accuracy: Option<f64>,
}

#[derive(Serialize)]
struct EvalReport {
    checkpoint: String,
    seed: u64,
    overall: f64,
    domains: Vec<DomainAccuracy>,
}

pub fn eval(args: EvalArgs, ctx: &Context) -> Result<()> {
    let (params, header) = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let arch = header.architecture;
    let dataset = args.data.source(&ctx.file).load(ctx.exec)?;
    let (c, h, w) = dataset.image_shape();
    if (arch.in_channels, arch.height, arch.width, arch.classes) != (c, h, w, dataset.num_classes()) {
        bail!(
            "checkpoint expects {}x{}x{} inputs and {} classes, dataset has {c}x{h}x{w} and {}",
            arch.in_channels,
            arch.height,
            arch.width,
            arch.classes,
            dataset.num_classes()
        );
    }
    let accs = per_domain_accuracy(&params, &dataset, ctx.exec)?;
    let mut domains = Vec::new();
    let (mut hits, mut total) = (0.0, 0usize);
    for (d, acc) in accs.into_iter().enumerate() {
        let samples = dataset.samples.iter().filter(|s| s.domain == d).count();
        if let Some(a) = acc {
            hits += a * samples as f64;
            total += samples;
        }
        println!(
            "domain {d} ({}): {}",
            dataset.domain_names[d],
            acc.map_or("n/a".to_string(), |a| format!("{a:.4}"))
        );
        domains.push(DomainAccuracy {
            domain: d,
            name: dataset.domain_names[d].clone(),
            samples,
            accuracy: acc,
        });
    }
    let overall = if total == 0 { 0.0 } else { hits / total as f64 };
    println!("overall: {overall:.4}");
    write_json(
        &ctx.out.join("eval.json"),
        &EvalReport {
            checkpoint: args.checkpoint.to_string_lossy().into_owned(),
            seed: header.seed,
            overall,
            domains,
        },
    )
}

pub fn ablate(args: AblateArgs, ctx: &Context) -> Result<()> {
    let cfg = TrainConfig {
        mode: Mode::Sam,
        ..base_config(ctx, &args.hyper)?
    };
    let dataset = args.data.source(&ctx.file).load(ctx.exec)?;
    let section = ctx.file.ablate.clone().unwrap_or_default();
    let held_out = args
        .held_out
        .or(section.held_out)
        .unwrap_or_else(|| vec![ctx.file.data().held_out.unwrap_or(0)]);
    let seeds = args.seeds.or(section.seeds).unwrap_or_else(|| vec![cfg.seed]);
    let table = ablation_run(&cfg, &dataset, &MixupPolicy::ablation_set(), &held_out, &seeds, ctx.exec)?;

    let mut csv = String::from("model,");
    let cells = ["iiA", "iiP", "ieA", "ieP", "eiA", "eiP", "eeA", "eeP"];
    csv.push_str(&cells.join(","));
    csv.push_str(",mean_test_accuracy\n");
    let mut order = String::from("model,held_out,seed,epoch,data_order_digest\n");
    for row in &table.rows {
        let grid: Vec<&str> = row.policy.grid().iter().map(|&b| if b { "1" } else { "0" }).collect();
        writeln!(csv, "{},{},{}", row.name, grid.join(","), row.mean_test_accuracy)?;
        for r in &row.reports {
            for e in &r.epochs {
                writeln!(order, "{},{},{},{},{}", row.name, r.held_out_domain, r.seed, e.epoch, e.data_order_digest)?;
            }
        }
    }
    write_json(&ctx.out.join("ablation.json"), &table)?;
    write_text(&ctx.out.join("ablation.csv"), &csv)?;
    write_text(&ctx.out.join("data_order.csv"), &order)?;
    let rendered = table.render();
    write_text(&ctx.out.join("ablation.md"), &rendered)?;
    print!("{rendered}");
    Ok(())
}
