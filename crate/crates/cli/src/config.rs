//! TOML run configuration. Every key is optional; command-line flags win over
//! the file, and the file wins over built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use sam_core::data::{generate_synthetic, ingest_corpus, Dataset, SynthSpec};
use sam_core::mixup::MixupPolicy;
use sam_core::train::TrainConfig;
use sam_core::Exec;
use serde::Deserialize;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub data: Option<DataSection>,
    pub synth: Option<SynthSpec>,
    pub train: Option<TrainConfig>,
    /// `"sam"`, `"fact"`, or a table of rows; overrides `train.policy`.
    pub policy: Option<toml::Value>,
    pub augment: Option<AugmentSection>,
    pub ablate: Option<AblateSection>,
}

/// A directory corpus. Without one, the synthetic corpus is generated.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub corpus: Option<PathBuf>,
    pub channels: Option<usize>,
    pub image_size: Option<usize>,
    pub held_out: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub batch_size: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    pub held_out: Option<Vec<usize>>,
    pub seeds: Option<Vec<u64>>,
}

fn policy_from_value(value: &toml::Value) -> Result<MixupPolicy> {
    match value {
        toml::Value::String(name) => named_policy(name),
        toml::Value::Table(_) => Ok(MixupPolicy::deserialize(value.clone()).context("in [policy]")?),
        other => bail!("policy must be a name or a table, got {}", other.type_str()),
    }
}

pub fn named_policy(name: &str) -> Result<MixupPolicy> {
    match name.to_ascii_lowercase().as_str() {
        "sam" | "ours" => Ok(MixupPolicy::sam()),
        "fact" => Ok(MixupPolicy::fact()),
        other => bail!("unknown policy '{other}' (expected 'sam' or 'fact')"),
    }
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn data(&self) -> DataSection {
        self.data.clone().unwrap_or_default()
    }

    /// Training configuration from the file, before command-line overrides.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = self.train.clone().unwrap_or_default();
        if let Some(p) = &self.policy {
            cfg.policy = policy_from_value(p)?;
        }
        Ok(cfg)
    }
}

/// Data-source flags shared by the commands that read a dataset.
#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    /// Corpus laid out as <root>/<domain>/<class>/<image>; omit for the synthetic corpus.
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,

    /// Side length images are resized (corpus) or rendered (synthetic) to.
    #[arg(long, value_name = "PX")]
    pub image_size: Option<usize>,
}

impl DataArgs {
    pub fn source(&self, file: &RunConfigFile) -> Source {
        Source::resolve(file, self.corpus.as_deref(), self.image_size)
    }
}

/// Where samples come from after merging flags and file.
#[derive(Clone, Debug)]
pub enum Source {
    Corpus {
        root: PathBuf,
        channels: usize,
        size: usize,
    },
    Synthetic(SynthSpec),
}

impl Source {
    pub fn resolve(file: &RunConfigFile, corpus: Option<&Path>, image_size: Option<usize>) -> Self {
        let data = file.data();
        let synth = file.synth.clone().unwrap_or_default();
        match corpus.map(Path::to_path_buf).or(data.corpus) {
            Some(root) => Source::Corpus {
                root,
                channels: data.channels.unwrap_or(3),
                size: image_size.or(data.image_size).unwrap_or(32),
            },
            None => Source::Synthetic(SynthSpec {
                image_size: image_size.or(data.image_size).unwrap_or(synth.image_size),
                channels: data.channels.unwrap_or(synth.channels),
                ..synth
            }),
        }
    }

    pub fn load(&self, exec: Exec) -> Result<Dataset> {
        match self {
            Source::Corpus { root, channels, size } => ingest_corpus(root, *channels, (*size, *size), exec)
                .with_context(|| format!("loading corpus {}", root.display())),
            Source::Synthetic(spec) => Ok(generate_synthetic(spec)?),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let f = RunConfigFile::parse("").unwrap();
        assert_eq!(f.train_config().unwrap(), TrainConfig::default());
        assert!(matches!(Source::resolve(&f, None, None), Source::Synthetic(s) if s == SynthSpec::default()));
    }

    #[test]
    fn full_file_parses() {
        let text = r#"
seed = 7
jobs = 4
out = "runs/cfg"

[data]
channels = 3
image_size = 32
held_out = 3

[synth]
num_domains = 4
samples_per_class = 50

[train]
mode = "erm"
epochs = 20
learning_rate = 0.05
lr_schedule = { kind = "step_at_fraction", fraction = 0.8, factor = 0.1 }
teacher_momentum = 0.9995

[policy]
intra_domain_intra_label = { amplitude = false, phase = true, label = true }
intra_domain_inter_label = { amplitude = false, phase = true, label = true }
inter_domain_intra_label = { amplitude = true, phase = true, label = true }
inter_domain_inter_label = { amplitude = true, phase = false, label = false }

[augment]
batch_size = 16

[ablate]
held_out = [0, 1, 2, 3]
seeds = [0, 1, 2]
"#;
        let f = RunConfigFile::parse(text).unwrap();
        let cfg = f.train_config().unwrap();
        assert_eq!(cfg.epochs, 20);
        assert_eq!(cfg.mode, sam_core::train::Mode::Erm);
        assert_eq!(cfg.policy, MixupPolicy::sam());
        assert_eq!(f.data().held_out, Some(3));
        assert_eq!(f.ablate.unwrap().seeds, Some(vec![0, 1, 2]));
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfigFile::parse("[train]\nepochz = 3\n").unwrap_err();
        assert!(format!("{err:#}").contains("epochz"), "{err:#}");
        let err = RunConfigFile::parse("colour = 1\n").unwrap_err();
        assert!(format!("{err:#}").contains("colour"), "{err:#}");
    }

    #[test]
    fn nested_sections_parse() {
        let f = RunConfigFile::parse(
            r#"
seed = 4
policy = "fact"
[train]
epochs = 3
mode = "erm"
lr_schedule = { kind = "step_every", epochs = 20, factor = 0.1 }
[synth]
samples_per_class = 2
[ablate]
seeds = [1, 2]
"#,
        )
        .unwrap();
        let cfg = f.train_config().unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.policy, MixupPolicy::fact());
        assert_eq!(f.synth.unwrap().samples_per_class, 2);
        assert_eq!(f.ablate.unwrap().seeds, Some(vec![1, 2]));
    }

    #[test]
    fn policy_tables_parse() {
        let f = RunConfigFile::parse(
            r#"
[policy]
intra_domain_intra_label = { amplitude = false, phase = true, label = true }
intra_domain_inter_label = { amplitude = false, phase = true, label = true }
inter_domain_intra_label = { amplitude = true, phase = true, label = true }
inter_domain_inter_label = { amplitude = true, phase = false, label = false }
"#,
        )
        .unwrap();
        assert_eq!(f.train_config().unwrap().policy, MixupPolicy::sam());
        let bad = RunConfigFile::parse("[policy]\nintra_domain = 1\n").unwrap();
        let err = bad.train_config().unwrap_err();
        assert!(format!("{err:#}").contains("intra_domain"), "{err:#}");
    }
}
