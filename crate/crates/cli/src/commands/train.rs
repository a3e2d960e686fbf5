use clap::ValueEnum;
use rayon::prelude::*;
use serde_json::{json, Value};
use twostream_core::detect::sample_negatives;
use twostream_core::imageio::{Image, LabeledSample, Split};
use twostream_core::nnet::{train, Example};
use twostream_core::seed;

use super::{load_checked, Context};
use crate::config::TextureSource;
use crate::error::{CliError, CliResult};
use crate::output::{list_images, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stream {
    Texture,
    Shape,
}

impl Stream {
    pub fn name(self) -> &'static str {
        match self {
            Stream::Texture => "texture",
            Stream::Shape => "shape",
        }
    }
}

pub fn run(ctx: &Context, stream: Stream) -> CliResult<Value> {
    let cfg = &ctx.config;
    let manifest_path = match stream {
        Stream::Shape => ctx.dir("synth").join("manifest.jsonl"),
        Stream::Texture => match cfg.train.texture_source {
            TextureSource::Pruned => ctx.dir("prune").join("manifest.jsonl"),
            TextureSource::Raw => cfg
                .paths
                .texture_manifest
                .clone()
                .ok_or_else(|| CliError::MissingInput("paths.texture_manifest is not set".into()))?,
        },
    };
    let manifest = load_checked(&manifest_path, &cfg.classes)?;
    let classes = cfg.model_classes();
    let spec = cfg.network.spec(classes.len());
    let samples: Vec<&LabeledSample> = manifest.split(Split::Train).collect();
    if samples.is_empty() {
        return Err(CliError::Dataset(format!("{} has no training samples", manifest_path.display())));
    }
    let mut examples: Vec<Example> = samples
        .par_iter()
        .map(|s| {
            let img = Image::load(&manifest.resolve(s))?;
            Ok(Example::from_image(&spec, &img, s.label)?)
        })
        .collect::<CliResult<_>>()?;

    let mut negatives = 0;
    if cfg.train.negatives_per_class > 0 {
        let dir = cfg.paths.negatives.as_deref().expect("validated");
        let corpus: Vec<Image> = list_images(dir)?
            .par_iter()
            .map(|p| Image::load(p).map_err(CliError::from))
            .collect::<CliResult<_>>()?;
        let count = cfg.train.negatives_per_class * cfg.classes.len();
        let mut rng = seed::derive_rng(cfg.seed, &format!("negatives-{}", stream.name()), 0);
        let background = classes.len() - 1;
        for patch in sample_negatives(&corpus, count, cfg.detect.negative_size, &mut rng)? {
            examples.push(Example::from_image(&spec, &patch, background)?);
        }
        negatives = count;
    }

    let section = match stream {
        Stream::Texture => &cfg.train.texture,
        Stream::Shape => &cfg.train.shape,
    };
    let tc = section.to_train_config(seed::derive(cfg.seed, &format!("train-{}", stream.name()), 0));
    log::info!("training {} stream on {} examples", stream.name(), examples.len());
    let (model, log) = train(&examples, &spec, &classes, &tc)?;

    let hits = examples
        .par_iter()
        .map(|e| Ok(usize::from(super::argmax_prefix(&model.forward_input(&e.input)?.posterior, classes.len()) == e.label)))
        .collect::<CliResult<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();

    let dir = ctx.dir(&format!("train-{}", stream.name()));
    model.save(&dir.join("model.tsnn"))?;
    write_json(&dir.join("loss_log.json"), &log)?;
    Ok(json!({
        "stream": stream.name(),
        "classes": classes,
        "examples": examples.len(),
        "negatives": negatives,
        "epochs": log.epoch_losses.len(),
        "initial_loss": log.initial_loss,
        "final_loss": log.epoch_losses.last(),
        "train_accuracy": hits as f64 / examples.len() as f64,
        "model": "model.tsnn",
    }))
}
