//! A tiny on-disk project for driving the `twostream` binary.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::Rng;
use sha2::{Digest, Sha256};
use twostream_core::imageio::Image;
use twostream_core::seed;

pub const BIN: &str = env!("CARGO_BIN_EXE_twostream");

pub const CONFIG: &str = r#"
seed = 11
classes = ["tri", "square"]

[[groups]]
name = "shapes"
classes = ["tri", "square"]

[paths]
templates = ["templates/tri.json", "templates/square.json"]
texture_manifest = "textures/manifest.jsonl"
test_manifest = "scenes/manifest.jsonl"
negatives = "negatives"

[statsim]
width = 24
height = 24
channels = 1
noise_sigma = 0.05

[statsim.poses]
x = [{ min = -8.0, max = 8.0, step = 8.0 }]
y = [{ min = -8.0, max = 8.0, step = 8.0 }]
z = [{ min = 0.0, max = 40.0, step = 20.0 }]
mode = "cartesian"

[prune]
crops_per_image = 4

[network]
width = 16
height = 16
channels = 1

[[network.layers]]
type = "conv"
out_channels = 4
kernel = 3
stride = 2
[[network.layers]]
type = "relu"
[[network.layers]]
type = "fc"
out = 8
[[network.layers]]
type = "relu"
[[network.layers]]
type = "dropout"
rate = 0.5
[[network.layers]]
type = "fc"
out = 3
[[network.layers]]
type = "softmax"

[train]
negatives_per_class = 10

[train.shape]
learning_rate = 0.01
batch_size = 8
epochs = 3

[train.texture]
learning_rate = 0.01
batch_size = 8
epochs = 3

[detect]
max_proposals = 30
negative_size = 16
"#;

/// Pipeline order; each later command reads earlier outputs.
pub const PIPELINE: &[&[&str]] = &[
    &["synth"],
    &["train", "--stream", "shape"],
    &["prune"],
    &["train", "--stream", "texture"],
    &["eval-cls"],
    &["detect-eval"],
    &["diagnose"],
];

pub struct Fixture {
    pub dir: tempfile::TempDir,
}

fn stripes(horizontal: bool, phase: usize, side: usize, rng: &mut impl Rng) -> Image {
    Image::from_fn(side, side, 1, |x, y, _| {
        let v = if horizontal { y } else { x };
        let base = if (v + phase) % 4 < 2 { 0.2 } else { 0.8 };
        base + rng.random_range(-0.05..0.05)
    })
    .unwrap()
}

fn scene(class: usize, rng: &mut impl Rng) -> (Image, [usize; 4]) {
    let (x, y, s) = (rng.random_range(4..20), rng.random_range(4..20), 20);
    let img = Image::from_fn(48, 48, 1, |px, py, _| {
        let (u, v) = (px as i64 - x as i64, py as i64 - y as i64);
        let inside = if class == 0 {
            v >= 0 && v < s && u >= (s - v) / 2 && u <= (s + v) / 2
        } else {
            (0..s).contains(&u) && (0..s).contains(&v)
        };
        if inside { 0.3 } else { 0.95 }
    })
    .unwrap();
    (img, [x, y, x + s as usize - 1, y + s as usize - 1])
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let mut rng = seed::rng(1234);
        for sub in ["templates", "textures", "scenes", "negatives"] {
            fs::create_dir_all(root.join(sub)).unwrap();
        }
        fs::write(
            root.join("templates/tri.json"),
            r#"{"class": "tri", "vertices": [[0.5, 0.05], [0.95, 0.9], [0.05, 0.9]]}"#,
        )
        .unwrap();
        fs::write(
            root.join("templates/square.json"),
            r#"{"class": "square", "vertices": [[0.1, 0.1], [0.9, 0.1], [0.9, 0.9], [0.1, 0.9]]}"#,
        )
        .unwrap();

        let mut tex = String::from("{\"classes\": [\"tri\", \"square\"]}\n");
        for i in 0..16 {
            let class = i % 2;
            let name = format!("t{i:02}.png");
            stripes(class == 0, i % 4, 24, &mut rng).save(&root.join("textures").join(&name)).unwrap();
            let cname = ["tri", "square"][class];
            tex.push_str(&format!("{{\"path\": \"{name}\", \"class\": \"{cname}\", \"split\": \"train\"}}\n"));
        }
        fs::write(root.join("textures/manifest.jsonl"), tex).unwrap();

        let mut scenes = String::from("{\"classes\": [\"tri\", \"square\"]}\n");
        for i in 0..4 {
            let class = i % 2;
            let (img, b) = scene(class, &mut rng);
            let name = format!("s{i}.png");
            img.save(&root.join("scenes").join(&name)).unwrap();
            let cname = ["tri", "square"][class];
            scenes.push_str(&format!(
                "{{\"path\": \"{name}\", \"class\": \"{cname}\", \"split\": \"test\", \"boxes\": [[{}, {}, {}, {}]]}}\n",
                b[0], b[1], b[2], b[3]
            ));
        }
        fs::write(root.join("scenes/manifest.jsonl"), scenes).unwrap();

        for i in 0..3 {
            Image::from_fn(40, 40, 1, |_, _, _| rng.random_range(0.6..1.0))
                .unwrap()
                .save(&root.join(format!("negatives/n{i}.png")))
                .unwrap();
        }
        Self::with_config(dir, CONFIG)
    }

    fn with_config(dir: tempfile::TempDir, config: &str) -> Self {
        fs::write(dir.path().join("config.toml"), config).unwrap();
        Self { dir }
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn config_path(&self) -> PathBuf {
        self.root().join("config.toml")
    }

    /// Replaces the config, e.g. with an edited copy of [`CONFIG`].
    pub fn set_config(&self, text: &str) {
        fs::write(self.config_path(), text).unwrap();
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.root().join(name)
    }

    pub fn run(&self, out: &str, args: &[&str]) -> Output {
        Command::new(BIN)
            .arg("--config")
            .arg(self.config_path())
            .arg("--out")
            .arg(self.out(out))
            .args(args)
            .output()
            .expect("binary runs")
    }

    /// Runs every command into `out`; returns sha256 per artifact, keyed by
    /// path relative to `out`, skipping run metadata.
    pub fn run_pipeline(&self, out: &str) -> Result<BTreeMap<String, String>, String> {
        for args in PIPELINE {
            let o = self.run(out, args);
            if !o.status.success() {
                return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&o.stderr)));
            }
        }
        Ok(hash_tree(&self.out(out)))
    }
}

pub fn hash_tree(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "run_meta.json") {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, hex::encode(Sha256::digest(fs::read(&p).unwrap())));
            }
        }
    }
    out
}

pub fn summary(out: &Path, command: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join(command).join("summary.json")).unwrap()).unwrap()
}
