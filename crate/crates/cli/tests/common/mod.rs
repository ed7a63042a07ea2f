#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sam_core::data::{generate_synthetic, SynthSpec};
use sam_core::io::save_png;
use sam_core::{Image, ImagePlane};

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_sam-dg"))
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn sam-dg")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "sam-dg {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file below `root`, keyed by relative path.
pub fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// `root/<domain>/<class>/<k>.png` from synthetic renders.
pub fn write_corpus(root: &Path, domains: usize, classes: usize, per_class: usize, size: usize) {
    let ds = generate_synthetic(&SynthSpec {
        num_domains: domains.max(2),
        num_classes: classes.max(2),
        samples_per_class: per_class,
        image_size: size,
        ..SynthSpec::default()
    })
    .unwrap();
    for smp in ds.samples.iter().filter(|x| x.domain < domains && x.class < classes) {
        let dir = root.join(format!("domain{}", smp.domain)).join(format!("class{}", smp.class));
        fs::create_dir_all(&dir).unwrap();
        let k = fs::read_dir(&dir).unwrap().count();
        save_png(&smp.image, &dir.join(format!("{k}.png"))).unwrap();
    }
}

pub fn write_gray(path: &Path, size: usize, value: f64) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    let img = Image::new(vec![ImagePlane::filled(size, size, value).unwrap(); 3]).unwrap();
    save_png(&img, path).unwrap();
}

pub const SMALL_TRAIN: &str = r#"
[synth]
samples_per_class = 6
num_classes = 3
image_size = 16

[train]
epochs = 2
rampup_epochs = 1
batch_size = 8
learning_rate = 0.05
conv1_channels = 4
conv2_channels = 8
"#;
