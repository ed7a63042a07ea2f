use anyhow::{bail, Result};
use clap::Args;
use sam_core::data::{make_batches, LabeledSample};
use sam_core::mixup::{augment_batch, LambdaSampler, MixupPolicy, PairRelation, PolicyRow};
use sam_core::rng::{self, tag};
use serde::Serialize;

use crate::config::{named_policy, DataArgs};
use crate::output::{write_json, write_png};
use crate::Context;

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Samples per mixing batch; a final partial batch is dropped.
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,

    /// Mixing policy: sam or fact.
    #[arg(long, value_name = "NAME")]
    pub policy: Option<String>,

    /// Upper bound of the mixing coefficient, λ ~ U(0, eta).
    #[arg(long, value_name = "F64")]
    pub eta: Option<f64>,
}

#[derive(Serialize)]
struct OriginalEntry {
    id: usize,
    file: String,
    source: Option<String>,
    domain: usize,
    class: usize,
}

#[derive(Serialize)]
struct Sidecar {
    file: String,
    base: usize,
    partner: usize,
    lambda: f64,
    relation: PairRelation,
    row: PolicyRow,
    label: Vec<f64>,
}

#[derive(Serialize)]
struct AugmentManifest {
    seed: u64,
    batch_size: usize,
    eta: f64,
    policy: MixupPolicy,
    domains: Vec<String>,
    classes: Vec<String>,
    originals: Vec<OriginalEntry>,
    augmented: Vec<String>,
}

pub fn run(args: AugmentArgs, ctx: &Context) -> Result<()> {
    let dataset = args.data.source(&ctx.file).load(ctx.exec)?;
    let train = ctx.file.train_config()?;
    let seed = ctx.seed.unwrap_or(train.seed);
    let batch_size = args
        .batch_size
        .or(ctx.file.augment.as_ref().and_then(|a| a.batch_size))
        .unwrap_or(train.batch_size);
    let policy = match &args.policy {
        Some(name) => named_policy(name)?,
        None => train.policy,
    };
    let eta = args.eta.unwrap_or(train.eta);
    let sampler = LambdaSampler::new(eta)?;
    if batch_size < 2 {
        bail!("batch size must be at least 2");
    }
    if dataset.samples.len() < batch_size {
        bail!(
            "dataset has {} samples, fewer than one batch of {batch_size}",
            dataset.samples.len()
        );
    }

    let originals: Vec<OriginalEntry> = dataset
        .samples
        .iter()
        .map(|s| OriginalEntry {
            id: s.id,
            file: format!("originals/{:05}.png", s.id),
            source: s.source.as_ref().map(|p| p.to_string_lossy().into_owned()),
            domain: s.domain,
            class: s.class,
        })
        .collect();
    for (s, entry) in dataset.samples.iter().zip(&originals) {
        write_png(&ctx.out.join(&entry.file), &s.image)?;
    }

    let ids: Vec<usize> = (0..dataset.samples.len()).collect();
    let batches = make_batches(&ids, batch_size, &mut rng::stream(seed, &[tag::AUGMENT, 0]))?;
    let mut augmented = Vec::new();
    for (b, batch_ids) in batches.iter().enumerate() {
        let batch: Vec<LabeledSample> = batch_ids.iter().map(|&i| dataset.samples[i].clone()).collect();
        let mut r = rng::stream(seed, &[tag::AUGMENT, 1, b as u64]);
        for (_, aug) in augment_batch(&batch, &policy, &sampler, &mut r, ctx.exec)? {
            let stem = format!("augmented/{:05}", augmented.len());
            let file = format!("{stem}.png");
            write_png(&ctx.out.join(&file), &aug.image)?;
            let p = aug.provenance;
            let sidecar = Sidecar {
                file: file.clone(),
                base: p.base,
                partner: p.partner,
                lambda: p.lambda,
                relation: p.relation,
                row: p.row,
                label: aug.label,
            };
            write_json(&ctx.out.join(format!("{stem}.json")), &sidecar)?;
            augmented.push(file);
        }
    }

    println!("wrote {} augmented images to {}", augmented.len(), ctx.out.display());
    write_json(
        &ctx.out.join("manifest.json"),
        &AugmentManifest {
            seed,
            batch_size,
            eta,
            policy,
            domains: dataset.domain_names.clone(),
            classes: dataset.class_names.clone(),
            originals,
            augmented,
        },
    )
}
