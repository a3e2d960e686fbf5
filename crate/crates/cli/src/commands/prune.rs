use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use twostream_core::imageio::{crop, random_center_crops, resize_bilinear, BoundingBox, DatasetManifest, Image, LabeledSample, Split};
use twostream_core::nnet::TrainedModel;
use twostream_core::prune::{prune, PruneReport};
use twostream_core::seed;

use super::{load_checked, load_images, Context};
use crate::config::FeatureSource;
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, write_json};

const THUMB: usize = 8;

enum Extractor {
    Model(TrainedModel),
    Pixels,
}

impl Extractor {
    fn features(&self, patch: &Image) -> CliResult<Vec<f64>> {
        match self {
            Extractor::Model(m) => Ok(m.forward_any(patch)?.features),
            Extractor::Pixels => Ok(resize_bilinear(&patch.to_gray(), THUMB, THUMB)?.into_data()),
        }
    }
}

/// A candidate patch: source sample index and crop box (None = whole image).
#[derive(Clone, Copy)]
struct Candidate {
    sample: usize,
    crop: usize,
    bbox: Option<BoundingBox>,
}

#[derive(Serialize)]
struct ClassSummary {
    class: String,
    images: usize,
    patches: usize,
    kept: usize,
    removed: usize,
    epsilon: f64,
}

fn candidate_boxes(ctx: &Context, index: usize, image: &Image) -> CliResult<Vec<Option<BoundingBox>>> {
    let n = ctx.config.prune.crops_per_image;
    if n == 0 {
        return Ok(vec![None]);
    }
    let mut rng = seed::derive_rng(ctx.config.seed, "prune-crops", index as u64);
    Ok(random_center_crops(image, n, &mut rng)?.into_iter().map(Some).collect())
}

fn patch(image: &Image, bbox: &Option<BoundingBox>) -> CliResult<Image> {
    Ok(match bbox {
        Some(b) => crop(image, b)?,
        None => image.clone(),
    })
}

pub fn run(ctx: &Context) -> CliResult<Value> {
    let cfg = &ctx.config;
    let path = cfg
        .paths
        .texture_manifest
        .as_deref()
        .ok_or_else(|| CliError::MissingInput("paths.texture_manifest is not set".into()))?;
    let input = load_checked(path, &cfg.classes)?;
    let extractor = match cfg.prune.features {
        FeatureSource::ShapeModel => Extractor::Model(ctx.load_model("shape")?),
        FeatureSource::Pixels => Extractor::Pixels,
    };

    let train: Vec<&LabeledSample> = input.split(Split::Train).collect();
    // Features are computed per sample so only one decoded image per worker
    // is alive at a time; crops are re-derived from the same seed on write.
    let per_sample: Vec<(Vec<Candidate>, Vec<Vec<f64>>)> = train
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let img = Image::load(&input.resolve(s))?;
            let boxes = candidate_boxes(ctx, i, &img)?;
            let mut cands = Vec::with_capacity(boxes.len());
            let mut feats = Vec::with_capacity(boxes.len());
            for (k, b) in boxes.into_iter().enumerate() {
                feats.push(extractor.features(&patch(&img, &b)?)?);
                cands.push(Candidate { sample: i, crop: k, bbox: b });
            }
            Ok((cands, feats))
        })
        .collect::<CliResult<_>>()?;

    let dir = ctx.dir("prune");
    let mut output = DatasetManifest::new(cfg.classes.clone(), &dir)?;
    let mut reports = Vec::new();
    let mut summaries = Vec::new();
    for (label, class) in cfg.classes.iter().enumerate() {
        let mut cands = Vec::new();
        let mut feats = Vec::new();
        let mut images = 0;
        for (i, (c, f)) in per_sample.iter().enumerate() {
            if train[i].label == label {
                images += 1;
                cands.extend_from_slice(c);
                feats.extend(f.iter().cloned());
            }
        }
        if cands.len() < 2 {
            return Err(CliError::Dataset(format!(
                "class `{class}` has {} texture patches; pruning needs at least 2",
                cands.len()
            )));
        }
        let (_, result) = prune(&feats, cfg.prune.shrinkage, cfg.prune.retention)?;
        let kept: Vec<Candidate> = result.kept.iter().map(|&k| cands[k]).collect();
        let records: Vec<LabeledSample> = if cfg.prune.crops_per_image == 0 {
            kept.iter()
                .map(|c| LabeledSample {
                    path: input.resolve(train[c.sample]).to_string_lossy().into_owned(),
                    label,
                    split: Split::Train,
                    boxes: None,
                })
                .collect()
        } else {
            write_patches(&input, &train, &kept, &dir, class)?
                .into_iter()
                .map(|path| LabeledSample { path, label, split: Split::Train, boxes: None })
                .collect()
        };
        for r in records {
            output.push(r)?;
        }
        summaries.push(ClassSummary {
            class: class.clone(),
            images,
            patches: cands.len(),
            kept: result.kept.len(),
            removed: result.removed.len(),
            epsilon: result.epsilon,
        });
        reports.push(PruneReport::new(class.clone(), &result, cfg.prune.retention));
    }
    for s in input.split(Split::Test) {
        let mut s = s.clone();
        s.path = input.resolve(&s).to_string_lossy().into_owned();
        output.push(s)?;
    }
    output.save(&dir.join("manifest.jsonl"))?;
    write_json(&dir.join("report.json"), &reports)?;
    let (total, kept): (usize, usize) = summaries.iter().fold((0, 0), |(t, k), s| (t + s.patches, k + s.kept));
    Ok(json!({
        "retention": cfg.prune.retention,
        "shrinkage": cfg.prune.shrinkage,
        "patches": total,
        "kept": kept,
        "classes": summaries,
        "manifest": "manifest.jsonl",
    }))
}

/// Saves kept crops as `patches/<class>/s<sample>_c<crop>.png`, grouped by
/// source image so each image is decoded once.
fn write_patches(
    input: &DatasetManifest,
    train: &[&LabeledSample],
    kept: &[Candidate],
    dir: &std::path::Path,
    class: &str,
) -> CliResult<Vec<String>> {
    let rel_dir = format!("patches/{class}");
    ensure_dir(&dir.join(&rel_dir))?;
    let mut groups: Vec<Vec<Candidate>> = Vec::new();
    for c in kept {
        match groups.last_mut() {
            Some(g) if g[0].sample == c.sample => g.push(*c),
            _ => groups.push(vec![*c]),
        }
    }
    let sources: Vec<&LabeledSample> = groups.iter().map(|g| train[g[0].sample]).collect();
    let names: Vec<Vec<String>> = groups
        .par_iter()
        .zip(sources.par_iter())
        .map(|(g, s)| {
            let img = load_images(input, std::slice::from_ref(s))?.remove(0);
            g.iter()
                .map(|c| {
                    let rel = format!("{rel_dir}/s{:05}_c{:02}.png", c.sample, c.crop);
                    patch(&img, &c.bbox)?.save(&dir.join(&rel))?;
                    Ok(rel)
                })
                .collect::<CliResult<Vec<_>>>()
        })
        .collect::<CliResult<_>>()?;
    Ok(names.into_iter().flatten().collect())
}
