//! Multi-domain labeled datasets: synthetic generation, directory ingestion,
//! leave-one-domain-out splits, preprocessing and batching.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::io::load_image;
use crate::plane::{Image, ImagePlane};
use crate::rng::{self, tag};

/// An image with a class label and the index of the domain it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub id: usize,
    pub image: Image,
    pub class: usize,
    pub num_classes: usize,
    pub domain: usize,
    pub source: Option<PathBuf>,
}

impl LabeledSample {
    pub fn one_hot(&self) -> Vec<f64> {
        one_hot(self.class, self.num_classes)
    }
}

pub fn one_hot(class: usize, num_classes: usize) -> Vec<f64> {
    let mut z = vec![0.0; num_classes];
    z[class] = 1.0;
    z
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub domain_names: Vec<String>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn num_domains(&self) -> usize {
        self.domain_names.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// `(channels, height, width)` shared by every sample.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        self.samples[0].image.shape()
    }

    pub fn get(&self, ids: &[usize]) -> Vec<&LabeledSample> {
        ids.iter().map(|&i| &self.samples[i]).collect()
    }
}

/// Sample indices for one leave-one-domain-out fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSplit {
    pub held_out_domain: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl DomainSplit {
    /// Holds out `held_out` entirely for testing and splits every other domain
    /// randomly into train and validation parts.
    pub fn leave_one_domain_out(dataset: &Dataset, held_out: usize, val_fraction: f64, seed: u64) -> Result<Self> {
        let s = dataset.num_domains();
        if held_out >= s {
            return Err(invalid(format!("held-out domain {held_out} out of range for {s} domains")));
        }
        if s < 2 {
            return Err(invalid("leave-one-domain-out needs at least 2 domains"));
        }
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(invalid(format!("validation fraction must be in [0, 1), got {val_fraction}")));
        }
        let mut split = DomainSplit {
            held_out_domain: held_out,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        for d in 0..s {
            let mut ids: Vec<usize> = dataset
                .samples
                .iter()
                .filter(|x| x.domain == d)
                .map(|x| x.id)
                .collect();
            if d == held_out {
                split.test = ids;
                continue;
            }
            ids.shuffle(&mut rng::stream(seed, &[tag::SPLIT, d as u64]));
            let n_val = (ids.len() as f64 * val_fraction).round() as usize;
            let (val, train) = ids.split_at(n_val);
            split.val.extend_from_slice(val);
            split.train.extend_from_slice(train);
        }
        split.train.sort_unstable();
        split.val.sort_unstable();
        if split.train.is_empty() || split.test.is_empty() {
            return Err(invalid("split produced an empty train or test partition"));
        }
        Ok(split)
    }

    pub fn source_domains(&self, num_domains: usize) -> Vec<usize> {
        (0..num_domains).filter(|&d| d != self.held_out_domain).collect()
    }
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

/// Glyph shapes; every one is mirror-symmetric about the vertical axis so a
/// horizontal flip never changes the class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Glyph {
    HorizontalBar,
    VerticalBar,
    Plus,
    Cross,
    Disk,
    Ring,
    Square,
    Triangle,
}

pub const GLYPHS: [Glyph; 8] = [
    Glyph::HorizontalBar,
    Glyph::VerticalBar,
    Glyph::Plus,
    Glyph::Cross,
    Glyph::Disk,
    Glyph::Ring,
    Glyph::Square,
    Glyph::Triangle,
];

/// Appearance of one domain. Shape geometry never depends on it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainStyle {
    /// Background RGB.
    pub background: [f64; 3],
    /// Foreground (stroke) RGB.
    pub foreground: [f64; 3],
    /// Cycles per pixel of the background grating.
    pub texture_frequency: f64,
    /// Relative amplitude of the grating.
    pub texture_contrast: f64,
    /// Grating orientation, radians.
    pub texture_angle: f64,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    /// Stroke width in pixels at 32×32.
    pub stroke: f64,
}

/// Built-in styles for the first four domains.
///
/// The glyph is darker than the background in every channel of every domain,
/// so domains differ by per-channel gain and offset, texture, noise and
/// stroke width: statistics that live mostly in the amplitude spectrum.
pub fn default_styles() -> Vec<DomainStyle> {
    vec![
        DomainStyle {
            background: [0.80, 0.75, 0.65],
            foreground: [0.35, 0.20, 0.15],
            texture_frequency: 0.06,
            texture_contrast: 0.15,
            texture_angle: 0.3,
            noise: 0.03,
            stroke: 3.0,
        },
        DomainStyle {
            background: [0.95, 0.85, 0.35],
            foreground: [0.20, 0.30, 0.05],
            texture_frequency: 0.0,
            texture_contrast: 0.0,
            texture_angle: 0.0,
            noise: 0.0,
            stroke: 4.0,
        },
        DomainStyle {
            background: [0.96, 0.96, 0.96],
            foreground: [0.05, 0.05, 0.05],
            texture_frequency: 0.32,
            texture_contrast: 0.25,
            texture_angle: 1.2,
            noise: 0.08,
            stroke: 1.8,
        },
        DomainStyle {
            background: [0.55, 0.85, 0.60],
            foreground: [0.30, 0.10, 0.45],
            texture_frequency: 0.17,
            texture_contrast: 0.25,
            texture_angle: 2.2,
            noise: 0.05,
            stroke: 2.5,
        },
    ]
}

/// Draws a random domain style (used past the built-in table).
pub fn random_style(rng: &mut impl Rng) -> DomainStyle {
    let mut background = [0.0; 3];
    let mut foreground = [0.0; 3];
    for c in 0..3 {
        background[c] = rng.random_range(0.5..1.0);
        foreground[c] = background[c] - rng.random_range(0.3..=f64::min(background[c], 0.8));
    }
    DomainStyle {
        background,
        foreground,
        texture_frequency: rng.random_range(0.0..0.35),
        texture_contrast: rng.random_range(0.0..0.35),
        texture_angle: rng.random_range(0.0..PI),
        noise: rng.random_range(0.0..0.08),
        stroke: rng.random_range(1.5..4.0),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub num_domains: usize,
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub image_size: usize,
    pub channels: usize,
    pub seed: u64,
    /// Overrides for the per-domain styles; missing entries fall back to the
    /// built-in table and then to seeded random styles.
    pub styles: Vec<DomainStyle>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_domains: 4,
            num_classes: 7,
            samples_per_class: 50,
            image_size: 32,
            channels: 3,
            seed: 1,
            styles: Vec::new(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_domains < 2 {
            return Err(invalid(format!("num_domains must be >= 2, got {}", self.num_domains)));
        }
        if self.num_classes < 2 || self.num_classes > GLYPHS.len() {
            return Err(invalid(format!(
                "num_classes must be in 2..={}, got {}",
                GLYPHS.len(),
                self.num_classes
            )));
        }
        if self.samples_per_class == 0 {
            return Err(invalid("samples_per_class must be positive"));
        }
        if self.image_size < 8 {
            return Err(invalid(format!("image_size must be >= 8, got {}", self.image_size)));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(invalid(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        Ok(())
    }

    pub fn resolved_styles(&self) -> Vec<DomainStyle> {
        let builtin = default_styles();
        let mut rng = rng::stream(self.seed, &[tag::SYNTH, u64::MAX]);
        (0..self.num_domains)
            .map(|d| {
                let fallback = random_style(&mut rng);
                self.styles
                    .get(d)
                    .or(builtin.get(d))
                    .cloned()
                    .unwrap_or(fallback)
            })
            .collect()
    }
}

#[inline]
fn dist_to_segment(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let t = (((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    ((px - ax - t * dx).powi(2) + (py - ay - t * dy).powi(2)).sqrt()
}

/// Anti-aliased coverage in `[0, 1]` of `glyph` at pixel centre `(x, y)`;
/// coordinates are relative to the glyph centre and in units of its radius.
fn coverage(glyph: Glyph, x: f64, y: f64, radius: f64, half_stroke: f64) -> f64 {
    let r = radius;
    let d = match glyph {
        Glyph::HorizontalBar => dist_to_segment(x, y, -r, 0.0, r, 0.0) - half_stroke,
        Glyph::VerticalBar => dist_to_segment(x, y, 0.0, -r, 0.0, r) - half_stroke,
        Glyph::Plus => {
            dist_to_segment(x, y, -r, 0.0, r, 0.0).min(dist_to_segment(x, y, 0.0, -r, 0.0, r)) - half_stroke
        }
        Glyph::Cross => {
            let k = r * std::f64::consts::FRAC_1_SQRT_2;
            dist_to_segment(x, y, -k, -k, k, k).min(dist_to_segment(x, y, -k, k, k, -k)) - half_stroke
        }
        Glyph::Disk => (x * x + y * y).sqrt() - r * 0.8,
        Glyph::Ring => ((x * x + y * y).sqrt() - r * 0.8).abs() - half_stroke,
        Glyph::Square => {
            let k = r * 0.8;
            let outside = (x.abs().max(y.abs()) - k).abs();
            outside - half_stroke
        }
        Glyph::Triangle => {
            let (top, bl, br) = ((0.0, -r), (-r * 0.95, r * 0.7), (r * 0.95, r * 0.7));
            dist_to_segment(x, y, top.0, top.1, bl.0, bl.1)
                .min(dist_to_segment(x, y, bl.0, bl.1, br.0, br.1))
                .min(dist_to_segment(x, y, br.0, br.1, top.0, top.1))
                - half_stroke
        }
    };
    (0.5 - d).clamp(0.0, 1.0)
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn render(glyph: Glyph, style: &DomainStyle, size: usize, channels: usize, rng: &mut impl Rng) -> Image {
    let scale = size as f64 / 32.0;
    let cx = size as f64 / 2.0 + rng.random_range(-2.0..=2.0) * scale;
    let cy = size as f64 / 2.0 + rng.random_range(-2.0..=2.0) * scale;
    let radius = rng.random_range(8.0..=11.0) * scale;
    let half_stroke = 0.5 * style.stroke * scale * rng.random_range(0.85..=1.15);
    let phase = rng.random_range(0.0..2.0 * PI);
    let (sin_a, cos_a) = style.texture_angle.sin_cos();
    let mut rgb = vec![vec![0.0; size * size]; 3];
    for r in 0..size {
        for c in 0..size {
            let (x, y) = (c as f64 + 0.5 - cx, r as f64 + 0.5 - cy);
            let cov = coverage(glyph, x, y, radius, half_stroke);
            let t = 2.0 * PI * style.texture_frequency * (c as f64 * cos_a + r as f64 * sin_a) / scale + phase;
            let tex = 1.0 + style.texture_contrast * t.sin();
            for ch in 0..3 {
                let bg = style.background[ch] * tex;
                let v = bg * (1.0 - cov) + style.foreground[ch] * cov + style.noise * gaussian(rng);
                rgb[ch][r * size + c] = v.clamp(0.0, 1.0);
            }
        }
    }
    let planes = if channels == 1 {
        let gray = (0..size * size)
            .map(|k| 0.299 * rgb[0][k] + 0.587 * rgb[1][k] + 0.114 * rgb[2][k])
            .collect();
        vec![ImagePlane::new(size, size, gray).expect("sized")]
    } else {
        rgb.into_iter()
            .map(|v| ImagePlane::new(size, size, v).expect("sized"))
            .collect()
    };
    Image::new(planes).expect("equal planes")
}

/// Renders `num_classes` glyph classes under `num_domains` styles.
///
/// Samples are ordered by domain, then class, then instance. Every sample has
/// its own random stream, so the corpus depends only on the spec.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let styles = spec.resolved_styles();
    let per_domain = spec.num_classes * spec.samples_per_class;
    let total = spec.num_domains * per_domain;
    let samples = Exec::default().map_range(total, |id| {
        let domain = id / per_domain;
        let class = (id % per_domain) / spec.samples_per_class;
        let mut rng = rng::stream(spec.seed, &[tag::SYNTH, id as u64]);
        LabeledSample {
            id,
            image: render(GLYPHS[class], &styles[domain], spec.image_size, spec.channels, &mut rng),
            class,
            num_classes: spec.num_classes,
            domain,
            source: None,
        }
    });
    Ok(Dataset {
        samples,
        domain_names: (0..spec.num_domains).map(|d| format!("domain{d}")).collect(),
        class_names: GLYPHS[..spec.num_classes]
            .iter()
            .map(|g| serde_json::to_value(g).unwrap().as_str().unwrap().to_string())
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// Directory corpus
// ---------------------------------------------------------------------------

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

fn dir_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Loads `root/<domain>/<class>/<image>`; domains and classes are indexed by
/// sorted directory name and every domain must contain every class.
pub fn ingest_corpus(root: &Path, channels: usize, size: (usize, usize), exec: Exec) -> Result<Dataset> {
    let corpus_err = |path: &Path, message: String| Error::Corpus {
        path: path.to_path_buf(),
        message,
    };
    let domains = sorted_subdirs(root)?;
    if domains.is_empty() {
        return Err(corpus_err(root, "no domain directories".into()));
    }
    let mut class_names: Vec<String> = Vec::new();
    for d in &domains {
        for c in sorted_subdirs(d)? {
            let name = dir_name(&c);
            if !class_names.contains(&name) {
                class_names.push(name);
            }
        }
    }
    class_names.sort();
    if class_names.is_empty() {
        return Err(corpus_err(root, "no class directories".into()));
    }

    let mut files: Vec<(PathBuf, usize, usize)> = Vec::new();
    for (di, d) in domains.iter().enumerate() {
        for (ci, class) in class_names.iter().enumerate() {
            let cdir = d.join(class);
            if !cdir.is_dir() {
                return Err(corpus_err(&cdir, format!("domain '{}' is missing class '{class}'", dir_name(d))));
            }
            let mut images: Vec<PathBuf> = fs::read_dir(&cdir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && is_image_file(p))
                .collect();
            if images.is_empty() {
                return Err(corpus_err(&cdir, format!("class directory '{class}' has no images")));
            }
            images.sort();
            files.extend(images.into_iter().map(|p| (p, di, ci)));
        }
    }

    let decoded = exec.map(&files, |(path, _, _)| load_image(path, channels, Some(size)));
    let num_classes = class_names.len();
    let samples = files
        .into_iter()
        .zip(decoded)
        .enumerate()
        .map(|(id, ((path, domain, class), image))| {
            Ok(LabeledSample {
                id,
                image: image?,
                class,
                num_classes,
                domain,
                source: Some(path),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        samples,
        domain_names: domains.iter().map(|d| dir_name(d)).collect(),
        class_names,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub domain: usize,
    pub class: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub domains: Vec<String>,
    pub classes: Vec<String>,
    pub samples: Vec<ManifestEntry>,
}

/// Manifest of `dataset`; samples without a source file get `path_of(sample)`.
pub fn manifest(dataset: &Dataset, path_of: impl Fn(&LabeledSample) -> String) -> Manifest {
    Manifest {
        domains: dataset.domain_names.clone(),
        classes: dataset.class_names.clone(),
        samples: dataset
            .samples
            .iter()
            .map(|s| ManifestEntry {
                path: s
                    .source
                    .as_ref()
                    .map(|p| p.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path_of(s)),
                domain: s.domain,
                class: s.class,
            })
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Preprocessing and batching
// ---------------------------------------------------------------------------

/// Each transform is skipped when its field is `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessOptions {
    /// Range of the retained area fraction for the random resized crop.
    pub crop_scale: Option<(f64, f64)>,
    pub flip_probability: Option<f64>,
    /// Brightness, contrast and saturation factors are drawn from `[1-m, 1+m]`.
    pub jitter: Option<f64>,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            crop_scale: Some((0.8, 1.0)),
            flip_probability: Some(0.5),
            jitter: Some(0.4),
        }
    }
}

impl PreprocessOptions {
    pub fn disabled() -> Self {
        Self {
            crop_scale: None,
            flip_probability: None,
            jitter: None,
        }
    }
}

/// Bilinear sample of `plane` at continuous pixel-centre coordinates.
fn bilinear(plane: &ImagePlane, y: f64, x: f64) -> f64 {
    let (h, w) = plane.dims();
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = plane.get(y0, x0) * (1.0 - fx) + plane.get(y0, x1) * fx;
    let bottom = plane.get(y1, x0) * (1.0 - fx) + plane.get(y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Crops the square window `(top, left, side)` and resizes it back to `h × w`.
pub fn resized_crop(image: &Image, top: f64, left: f64, side_h: f64, side_w: f64) -> Image {
    let (_, h, w) = image.shape();
    let planes = image
        .planes()
        .iter()
        .map(|p| {
            ImagePlane::from_fn(h, w, |r, c| {
                let y = top + (r as f64 + 0.5) * side_h / h as f64 - 0.5;
                let x = left + (c as f64 + 0.5) * side_w / w as f64 - 0.5;
                bilinear(p, y, x)
            })
            .expect("same dims")
        })
        .collect();
    Image::new(planes).expect("same dims")
}

pub fn flip_horizontal(image: &Image) -> Image {
    let (_, h, w) = image.shape();
    let planes = image
        .planes()
        .iter()
        .map(|p| ImagePlane::from_fn(h, w, |r, c| p.get(r, w - 1 - c)).expect("same dims"))
        .collect();
    Image::new(planes).expect("same dims")
}

fn grayscale(image: &Image) -> Vec<f64> {
    let (c, h, w) = image.shape();
    if c == 3 {
        (0..h * w)
            .map(|k| {
                0.299 * image.plane(0).values()[k] + 0.587 * image.plane(1).values()[k] + 0.114 * image.plane(2).values()[k]
            })
            .collect()
    } else {
        image.plane(0).values().to_vec()
    }
}

/// Brightness, contrast, then saturation, clamping to `[0, 1]` after each.
pub fn color_jitter(image: &Image, brightness: f64, contrast: f64, saturation: f64) -> Image {
    let mut out = image.map(|v| (v * brightness).clamp(0.0, 1.0));
    let gray = grayscale(&out);
    let mean = gray.iter().sum::<f64>() / gray.len() as f64;
    out = out.map(|v| ((v - mean) * contrast + mean).clamp(0.0, 1.0));
    if out.channels() == 3 {
        let gray = grayscale(&out);
        for p in out.planes_mut() {
            for (v, g) in p.values_mut().iter_mut().zip(&gray) {
                *v = ((*v - g) * saturation + g).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Random resized crop, horizontal flip and color jitter, in that order.
pub fn preprocess(sample: &LabeledSample, rng: &mut impl Rng, options: &PreprocessOptions) -> LabeledSample {
    let mut image = sample.image.clone();
    let (_, h, w) = image.shape();
    if let Some((lo, hi)) = options.crop_scale {
        let area = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        if area < 1.0 {
            let side_h = h as f64 * area.sqrt();
            let side_w = w as f64 * area.sqrt();
            let top = rng.random_range(0.0..=(h as f64 - side_h));
            let left = rng.random_range(0.0..=(w as f64 - side_w));
            image = resized_crop(&image, top, left, side_h, side_w);
        }
    }
    if let Some(p) = options.flip_probability {
        if p > 0.0 && rng.random::<f64>() < p {
            image = flip_horizontal(&image);
        }
    }
    if let Some(m) = options.jitter {
        if m > 0.0 {
            let mut factor = || rng.random_range((1.0 - m).max(0.0)..=1.0 + m);
            let (b, c, s) = (factor(), factor(), factor());
            image = color_jitter(&image, b, c, s);
        }
    }
    LabeledSample {
        image,
        ..sample.clone()
    }
}

/// Shuffles `ids` and cuts them into full batches; a partial tail is dropped.
pub fn make_batches(ids: &[usize], batch_size: usize, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(invalid("batch size must be positive"));
    }
    let mut order = ids.to_vec();
    order.shuffle(rng);
    Ok(order.chunks_exact(batch_size).map(|c| c.to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            num_domains: 3,
            num_classes: 4,
            samples_per_class: 5,
            image_size: 16,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn synthetic_counts_and_metadata() {
        let ds = generate_synthetic(&small_spec()).unwrap();
        assert_eq!(ds.samples.len(), 60);
        assert_eq!(ds.num_domains(), 3);
        assert_eq!(ds.num_classes(), 4);
        for (i, s) in ds.samples.iter().enumerate() {
            assert_eq!(s.id, i);
            assert_eq!(s.one_hot().iter().sum::<f64>(), 1.0);
            assert_eq!(s.image.shape(), (3, 16, 16));
            let (lo, hi) = s.image.min_max();
            assert!(lo >= 0.0 && hi <= 1.0);
        }
    }

    #[test]
    fn synthetic_rejects_bad_specs() {
        for spec in [
            SynthSpec { num_domains: 1, ..small_spec() },
            SynthSpec { num_classes: 1, ..small_spec() },
            SynthSpec { num_classes: 9, ..small_spec() },
            SynthSpec { channels: 2, ..small_spec() },
            SynthSpec { samples_per_class: 0, ..small_spec() },
        ] {
            assert!(generate_synthetic(&spec).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn styles_extend_past_builtin_table() {
        let spec = SynthSpec { num_domains: 6, ..small_spec() };
        let styles = spec.resolved_styles();
        assert_eq!(styles.len(), 6);
        assert_eq!(styles[..4], default_styles()[..]);
        assert_ne!(styles[4], styles[5]);
    }

    #[test]
    fn split_is_disjoint_and_holds_out_one_domain() {
        let ds = generate_synthetic(&small_spec()).unwrap();
        let split = DomainSplit::leave_one_domain_out(&ds, 1, 0.1, 3).unwrap();
        assert!(split.test.iter().all(|&i| ds.samples[i].domain == 1));
        assert!(split.train.iter().chain(&split.val).all(|&i| ds.samples[i].domain != 1));
        let mut all: Vec<usize> = split.train.iter().chain(&split.val).chain(&split.test).copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), ds.samples.len());
        assert_eq!(split.val.len(), 4);
        assert!(DomainSplit::leave_one_domain_out(&ds, 3, 0.1, 3).is_err());
    }

    #[test]
    fn preprocess_disabled_is_identity() {
        let ds = generate_synthetic(&small_spec()).unwrap();
        let s = &ds.samples[7];
        let mut rng = rng::stream(1, &[]);
        assert_eq!(preprocess(s, &mut rng, &PreprocessOptions::disabled()), *s);
        let zero_jitter = PreprocessOptions {
            jitter: Some(0.0),
            ..PreprocessOptions::disabled()
        };
        assert_eq!(preprocess(s, &mut rng, &zero_jitter), *s);
        let full_crop = PreprocessOptions {
            crop_scale: Some((1.0, 1.0)),
            ..PreprocessOptions::disabled()
        };
        assert_eq!(preprocess(s, &mut rng, &full_crop), *s);
    }

    #[test]
    fn flip_is_an_involution() {
        let ds = generate_synthetic(&small_spec()).unwrap();
        let img = &ds.samples[3].image;
        assert_eq!(flip_horizontal(&flip_horizontal(img)), *img);
        assert_ne!(flip_horizontal(img), *img);
    }

    #[test]
    fn unit_jitter_is_identity() {
        let ds = generate_synthetic(&small_spec()).unwrap();
        let img = &ds.samples[9].image;
        assert!(color_jitter(img, 1.0, 1.0, 1.0).max_abs_diff(img) < 1e-12);
    }

    #[test]
    fn preprocess_keeps_range_shape_and_label() {
        let ds = generate_synthetic(&small_spec()).unwrap();
        let opts = PreprocessOptions::default();
        for s in &ds.samples {
            let mut rng = rng::stream(4, &[s.id as u64]);
            let out = preprocess(s, &mut rng, &opts);
            let (lo, hi) = out.image.min_max();
            assert!(lo >= 0.0 && hi <= 1.0);
            assert_eq!(out.image.shape(), s.image.shape());
            assert_eq!((out.class, out.domain, out.id), (s.class, s.domain, s.id));
            let mut rng2 = rng::stream(4, &[s.id as u64]);
            assert_eq!(preprocess(s, &mut rng2, &opts), out);
        }
    }

    #[test]
    fn batches_drop_partial_tail() {
        let ids: Vec<usize> = (0..100).collect();
        let b = make_batches(&ids, 16, &mut rng::stream(5, &[])).unwrap();
        assert_eq!(b.len(), 6);
        assert!(b.iter().all(|x| x.len() == 16));
        let again = make_batches(&ids, 16, &mut rng::stream(5, &[])).unwrap();
        assert_eq!(b, again);
        assert!(make_batches(&ids, 0, &mut rng::stream(5, &[])).is_err());
    }
}
