use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};
use twostream_core::imageio::{DatasetManifest, Image, LabeledSample, Split};
use twostream_core::seed;
use twostream_core::statsim::{
    apply_statistics_matching, enumerate_poses, mean_image, render_silhouette, Background, Fill, RenderConfig,
    SilhouetteTemplate,
};

use super::Context;
use crate::config::{BackgroundMode, FillMode};
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, list_images};

fn load_corpus(dir: &Path) -> CliResult<Vec<Image>> {
    list_images(dir)?
        .par_iter()
        .map(|p| Image::load(p).map_err(CliError::from))
        .collect()
}

fn template_fill(mode: FillMode, template: &SilhouetteTemplate, template_path: &Path) -> CliResult<Fill> {
    match mode {
        FillMode::UniformGray => Ok(Fill::UniformGray),
        FillMode::Textured => {
            let rel = template.texture.as_deref().ok_or_else(|| {
                CliError::Config(format!(
                    "statsim.fill = \"textured\" but template {} has no texture",
                    template_path.display()
                ))
            })?;
            let path = template_path.parent().unwrap_or(Path::new("")).join(rel);
            if !path.exists() {
                return Err(CliError::MissingInput(format!("texture {}", path.display())));
            }
            Ok(Fill::Textured(Image::load(&path)?))
        }
    }
}

pub fn run(ctx: &Context) -> CliResult<Value> {
    let cfg = &ctx.config;
    let s = &cfg.statsim;
    if cfg.paths.templates.is_empty() {
        return Err(CliError::MissingInput("no silhouette templates configured (paths.templates)".into()));
    }
    let templates: Vec<(SilhouetteTemplate, &PathBuf)> = cfg
        .paths
        .templates
        .iter()
        .map(|p| SilhouetteTemplate::load(p).map(|t| (t, p)))
        .collect::<Result<_, _>>()?;
    for (t, p) in &templates {
        if !cfg.classes.contains(&t.class) {
            return Err(CliError::Config(format!(
                "template {} has class `{}` which is not in the class list",
                p.display(),
                t.class
            )));
        }
    }

    let background = match s.background {
        BackgroundMode::White => Background::White,
        mode => {
            let dir = cfg.paths.real_corpus.as_deref().ok_or_else(|| {
                CliError::Config("non-white backgrounds need paths.real_corpus".into())
            })?;
            let corpus = load_corpus(dir)?;
            if mode == BackgroundMode::MeanImage {
                Background::MeanImage(mean_image(&corpus, (s.width, s.height))?)
            } else {
                Background::CorpusPatch(corpus)
            }
        }
    };
    let base = RenderConfig {
        width: s.width,
        height: s.height,
        channels: s.channels,
        background,
        fill: Fill::UniformGray,
        blur_sigma: s.blur_sigma,
        noise_sigma: s.noise_sigma,
        object_scale: s.object_scale,
    };
    let poses = enumerate_poses(&s.poses.grid()?);

    let dir = ctx.dir("synth");
    let mut manifest = DatasetManifest::new(cfg.classes.clone(), &dir)?;
    let mut per_class = vec![0usize; cfg.classes.len()];
    for (ti, (template, tpath)) in templates.iter().enumerate() {
        let render_cfg = RenderConfig { fill: template_fill(s.fill, template, tpath)?, ..base.clone() };
        let label = cfg.classes.iter().position(|c| *c == template.class).expect("checked above");
        let class_dir = format!("images/{}", template.class);
        ensure_dir(&dir.join(&class_dir))?;
        let paths: Vec<String> = poses
            .par_iter()
            .enumerate()
            .map(|(pi, pose)| {
                let index = (ti * poses.len() + pi) as u64;
                let mut rng = seed::derive_rng(cfg.seed, "synth", index);
                let (img, _) = render_silhouette(template, pose, &render_cfg, &mut rng)?;
                let img = if s.match_statistics {
                    apply_statistics_matching(&img, &render_cfg, &mut rng)?
                } else {
                    img
                };
                let rel = format!("{class_dir}/t{ti}_p{pi:05}.png");
                img.save(&dir.join(&rel))?;
                Ok(rel)
            })
            .collect::<CliResult<_>>()?;
        per_class[label] += paths.len();
        for path in paths {
            manifest.push(LabeledSample { path, label, split: Split::Train, boxes: None })?;
        }
    }
    manifest.save(&dir.join("manifest.jsonl"))?;
    let counts: serde_json::Map<String, Value> =
        cfg.classes.iter().zip(&per_class).map(|(c, n)| (c.clone(), json!(n))).collect();
    Ok(json!({
        "templates": templates.len(),
        "poses": poses.len(),
        "images": manifest.samples.len(),
        "per_class": counts,
        "manifest": "manifest.jsonl",
    }))
}
