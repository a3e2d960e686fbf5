pub mod detect_eval;
pub mod diagnose;
pub mod eval_cls;
pub mod prune;
pub mod synth;
pub mod train;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use twostream_core::imageio::{crop, load_manifest_with_classes, DatasetManifest, Image, LabeledSample, Split};
use twostream_core::nnet::TrainedModel;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Resolved run settings shared by every command.
pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
    pub jobs: Option<usize>,
}

impl Context {
    pub fn dir(&self, command: &str) -> PathBuf {
        self.out.join(command)
    }

    pub fn model_path(&self, stream: &str) -> PathBuf {
        self.dir(&format!("train-{stream}")).join("model.tsnn")
    }

    pub fn load_model(&self, stream: &str) -> CliResult<TrainedModel> {
        let path = self.model_path(stream);
        if !path.exists() {
            return Err(CliError::MissingInput(format!(
                "{stream} model {} (run `train --stream {stream}` first)",
                path.display()
            )));
        }
        Ok(TrainedModel::load(&path)?)
    }

    /// Both stream models, checked to share one class list.
    pub fn load_models(&self) -> CliResult<(TrainedModel, TrainedModel)> {
        let t = self.load_model("texture")?;
        let s = self.load_model("shape")?;
        if t.classes != s.classes {
            return Err(twostream_core::Error::ClassListMismatch(t.classes, s.classes).into());
        }
        if t.classes[..self.config.classes.len().min(t.classes.len())] != self.config.classes[..] {
            return Err(CliError::Config(format!(
                "models were trained on classes {:?}, config lists {:?}",
                t.classes, self.config.classes
            )));
        }
        Ok((t, s))
    }

    pub fn test_manifest(&self) -> CliResult<DatasetManifest> {
        let path = self
            .config
            .paths
            .test_manifest
            .as_deref()
            .ok_or_else(|| CliError::MissingInput("paths.test_manifest is not set".into()))?;
        load_checked(path, &self.config.classes)
    }
}

/// Loads a manifest and requires its class list to equal `classes`.
pub fn load_checked(path: &Path, classes: &[String]) -> CliResult<DatasetManifest> {
    if !path.exists() {
        return Err(CliError::MissingInput(format!("manifest {}", path.display())));
    }
    let m = load_manifest_with_classes(path, Some(classes))?;
    if m.classes != classes {
        return Err(CliError::Config(format!(
            "manifest {} lists classes {:?}, config lists {:?}",
            path.display(),
            m.classes,
            classes
        )));
    }
    Ok(m)
}

/// Decodes the images of `samples` in parallel, preserving order.
pub fn load_images(manifest: &DatasetManifest, samples: &[&LabeledSample]) -> CliResult<Vec<Image>> {
    samples
        .par_iter()
        .map(|s| Image::load(&manifest.resolve(s)).map_err(CliError::from))
        .collect()
}

/// One labeled crop for classification evaluation.
pub struct Instance {
    pub image_id: String,
    pub label: usize,
    pub patch: Image,
}

/// Ground-truth box crops of test samples; whole images when a sample has
/// no boxes. No margin is added.
pub fn test_instances(manifest: &DatasetManifest) -> CliResult<Vec<Instance>> {
    let samples: Vec<&LabeledSample> = manifest.split(Split::Test).collect();
    if samples.is_empty() {
        return Err(CliError::Dataset("test manifest has no test samples".into()));
    }
    let images = load_images(manifest, &samples)?;
    let mut out = Vec::new();
    for (s, img) in samples.iter().zip(images) {
        match &s.boxes {
            Some(boxes) if !boxes.is_empty() => {
                for b in boxes {
                    out.push(Instance { image_id: s.path.clone(), label: s.label, patch: crop(&img, b)? });
                }
            }
            _ => out.push(Instance { image_id: s.path.clone(), label: s.label, patch: img }),
        }
    }
    Ok(out)
}

/// Argmax over the first `n` entries (foreground classes), lowest index on ties.
pub fn argmax_prefix(p: &[f64], n: usize) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().take(n) {
        if v > p[best] {
            best = i;
        }
    }
    best
}
