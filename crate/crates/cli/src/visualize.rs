use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use clap::{Args, ValueEnum};
use sam_core::fourier::{
    image_of_spectral, reconstruct_amplitude_only, reconstruct_phase_only, spectral_of_image,
};
use sam_core::io::{hstack, load_image};
use sam_core::mixup::{mix_spectra, MixupPolicy, PairRelation, PolicyRow};
use sam_core::Image;
use serde::Serialize;

use crate::config::named_policy;
use crate::output::{write_json, write_png};
use crate::Context;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VisualizeMode {
    /// Original, amplitude-only and phase-only reconstructions.
    Reconstruction,
    /// Amplitude, phase and both-spectra mixup of one pair.
    MixupGrid,
}

#[derive(Args, Debug)]
pub struct VisualizeArgs {
    #[arg(long, value_enum)]
    pub mode: VisualizeMode,

    /// Input image (the base sample in grid mode).
    #[arg(long, value_name = "PATH")]
    pub image: PathBuf,

    /// Partner image for grid mode; resized to the base image's size.
    #[arg(long, value_name = "PATH")]
    pub partner: Option<PathBuf>,

    /// Mixing coefficient for grid mode.
    #[arg(long, default_value_t = 0.5, value_name = "F64")]
    pub lambda: f64,

    /// Pair relation used to mark the policy's cell; inferred from
    /// <domain>/<class>/<file> paths when omitted.
    #[arg(long, value_name = "NAME")]
    pub relation: Option<PairRelation>,

    /// Policy whose choice is marked in the grid manifest: sam or fact.
    #[arg(long, default_value = "sam", value_name = "NAME")]
    pub policy: String,

    /// Load images as 1 or 3 channels.
    #[arg(long, default_value_t = 3, value_name = "N")]
    pub channels: usize,

    /// Export reconstructions unscaled instead of stretching each to [0, 1].
    #[arg(long)]
    pub raw: bool,
}

#[derive(Serialize)]
struct View {
    name: &'static str,
    file: String,
    min: f64,
    max: f64,
}

#[derive(Serialize)]
struct ReconstructionManifest {
    mode: VisualizeMode,
    input: String,
    stretched: bool,
    views: Vec<View>,
    strip: String,
}

#[derive(Serialize)]
struct GridCell {
    name: &'static str,
    file: String,
    amplitude: bool,
    phase: bool,
    selected: bool,
}

#[derive(Serialize)]
struct GridManifest {
    mode: VisualizeMode,
    base: String,
    partner: String,
    lambda: f64,
    relation: PairRelation,
    policy_row: PolicyRow,
    cells: Vec<GridCell>,
    strip: String,
}

/// Min-max stretch to `[0, 1]`; a flat image is returned unchanged.
fn stretch(image: &Image) -> Image {
    let (lo, hi) = image.min_max();
    if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
        return image.clone();
    }
    image.map(|v| (v - lo) / (hi - lo))
}

fn infer_relation(a: &Path, b: &Path) -> Option<PairRelation> {
    let parts = |p: &Path| -> Option<(String, String)> {
        let class = p.parent()?;
        let domain = class.parent()?;
        Some((domain.file_name()?.to_str()?.to_owned(), class.file_name()?.to_str()?.to_owned()))
    };
    let (da, ca) = parts(a)?;
    let (db, cb) = parts(b)?;
    Some(match (da == db, ca == cb) {
        (true, true) => PairRelation::IntraDomainIntraLabel,
        (true, false) => PairRelation::IntraDomainInterLabel,
        (false, true) => PairRelation::InterDomainIntraLabel,
        (false, false) => PairRelation::InterDomainInterLabel,
    })
}

pub fn run(args: VisualizeArgs, ctx: &Context) -> Result<()> {
    let image = load_image(&args.image, args.channels, None)
        .with_context(|| format!("reading {}", args.image.display()))?;
    match args.mode {
        VisualizeMode::Reconstruction => reconstruction(&args, &image, ctx),
        VisualizeMode::MixupGrid => grid(&args, &image, ctx),
    }
}

fn reconstruction(args: &VisualizeArgs, image: &Image, ctx: &Context) -> Result<()> {
    let spectral = spectral_of_image(image);
    let outputs = [
        ("original", image.clone()),
        ("amplitude_only", reconstruct_amplitude_only(&spectral)),
        ("phase_only", reconstruct_phase_only(&spectral)),
    ];
    let mut views = Vec::new();
    let mut shown = Vec::new();
    for (name, img) in outputs {
        let (min, max) = img.min_max();
        let display = if args.raw || name == "original" { img } else { stretch(&img) };
        let file = format!("{name}.png");
        write_png(&ctx.out.join(&file), &display)?;
        views.push(View { name, file, min, max });
        shown.push(display);
    }
    write_png(&ctx.out.join("reconstruction.png"), &hstack(&shown)?)?;
    write_json(
        &ctx.out.join("visualize.json"),
        &ReconstructionManifest {
            mode: args.mode,
            input: args.image.to_string_lossy().into_owned(),
            stretched: !args.raw,
            views,
            strip: "reconstruction.png".into(),
        },
    )
}

fn grid(args: &VisualizeArgs, base: &Image, ctx: &Context) -> Result<()> {
    let Some(partner_path) = &args.partner else {
        bail!("mixup-grid mode needs --partner");
    };
    if !(0.0..=1.0).contains(&args.lambda) {
        bail!("--lambda must lie in [0, 1], got {}", args.lambda);
    }
    let partner = load_image(partner_path, args.channels, Some((base.height(), base.width())))
        .with_context(|| format!("reading {}", partner_path.display()))?;
    let relation = match args.relation {
        Some(r) => r,
        None => infer_relation(&args.image, partner_path)
            .context("cannot infer the pair relation from the paths; pass --relation")?,
    };
    let policy: MixupPolicy = named_policy(&args.policy)?;
    let row = policy.row(relation);

    let (sb, sp) = (spectral_of_image(base), spectral_of_image(&partner));
    let cells = [("amplitude_mix", true, false), ("phase_mix", false, true), ("both_mix", true, true)];
    let mut entries = Vec::new();
    let mut strip = vec![base.clone(), partner.clone()];
    for (name, amplitude, phase) in cells {
        let mixed = image_of_spectral(&mix_spectra(&sb, &sp, PolicyRow::new(amplitude, phase, false), args.lambda)?);
        let file = format!("{name}.png");
        write_png(&ctx.out.join(&file), &mixed)?;
        entries.push(GridCell {
            name,
            file,
            amplitude,
            phase,
            selected: row.amplitude == amplitude && row.phase == phase,
        });
        strip.push(mixed);
    }
    write_png(&ctx.out.join("base.png"), base)?;
    write_png(&ctx.out.join("partner.png"), &partner)?;
    write_png(&ctx.out.join("grid.png"), &hstack(&strip)?)?;
    write_json(
        &ctx.out.join("visualize.json"),
        &GridManifest {
            mode: args.mode,
            base: args.image.to_string_lossy().into_owned(),
            partner: partner_path.to_string_lossy().into_owned(),
            lambda: args.lambda,
            relation,
            policy_row: row,
            cells: entries,
            strip: "grid.png".into(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relation_from_layout() {
        let r = infer_relation(Path::new("c/photo/dog/1.png"), Path::new("c/sketch/dog/2.png"));
        assert_eq!(r, Some(PairRelation::InterDomainIntraLabel));
        let r = infer_relation(Path::new("c/photo/dog/1.png"), Path::new("c/photo/cat/2.png"));
        assert_eq!(r, Some(PairRelation::IntraDomainInterLabel));
        assert_eq!(infer_relation(Path::new("1.png"), Path::new("2.png")), None);
    }
}
