//! TOML run configuration and its validation.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use twostream_core::eval::{ApMode, SimilarityGroup, SimilarityGroups, DEFAULT_MATCH_IOU};
use twostream_core::nnet::{InputDims, LayerSpec, NetworkSpec, TrainConfig};
use twostream_core::statsim::{AxisRange, Enumeration, PoseGrid};

use crate::error::{CliError, CliResult};

/// Name of the extra class used by detection models.
pub const BACKGROUND_CLASS: &str = "__background__";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub classes: Vec<String>,
    /// Similarity groups for the false-positive diagnosis; defaults to the
    /// VOC animals / vehicles / furniture split.
    #[serde(default)]
    pub groups: Option<Vec<SimilarityGroup>>,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub statsim: StatsimConfig,
    #[serde(default)]
    pub prune: PruneConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub detect: DetectConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Output directory; `--out` overrides it.
    pub output: Option<PathBuf>,
    /// Silhouette template JSON files.
    #[serde(default)]
    pub templates: Vec<PathBuf>,
    /// Directory of real images (mean-image and corpus-patch backgrounds).
    pub real_corpus: Option<PathBuf>,
    /// Manifest of web-style texture images for the texture stream.
    pub texture_manifest: Option<PathBuf>,
    /// Manifest whose test split carries ground-truth boxes.
    pub test_manifest: Option<PathBuf>,
    /// Directory of images negatives are cropped from.
    pub negatives: Option<PathBuf>,
    /// Externally computed proposals.
    pub proposals: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BackgroundMode {
    #[default]
    White,
    MeanImage,
    CorpusPatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FillMode {
    #[default]
    UniformGray,
    /// Uses each template's texture file.
    Textured,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseGridConfig {
    pub x: Vec<AxisRange>,
    pub y: Vec<AxisRange>,
    pub z: Vec<AxisRange>,
    pub mode: Enumeration,
}

impl Default for PoseGridConfig {
    fn default() -> Self {
        let r = |min, max| AxisRange { min, max, step: 2.0 };
        Self {
            x: vec![r(-10.0, 10.0)],
            y: vec![r(-10.0, 10.0)],
            z: vec![r(70.0, 110.0), r(250.0, 290.0)],
            mode: Enumeration::Cartesian,
        }
    }
}

impl PoseGridConfig {
    pub fn grid(&self) -> twostream_core::Result<PoseGrid> {
        PoseGrid::from_ranges(&self.x, &self.y, &self.z, self.mode)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsimConfig {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub background: BackgroundMode,
    pub fill: FillMode,
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    pub object_scale: f64,
    /// Apply blur + noise after compositing.
    pub match_statistics: bool,
    pub poses: PoseGridConfig,
}

impl Default for StatsimConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            channels: 3,
            background: BackgroundMode::White,
            fill: FillMode::UniformGray,
            blur_sigma: 1.0,
            noise_sigma: 0.1,
            object_scale: 0.7,
            match_statistics: true,
            poses: PoseGridConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSource {
    /// Penultimate activations of the trained shape-stream model.
    #[default]
    ShapeModel,
    /// Grayscale 8x8 thumbnail intensities.
    Pixels,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub shrinkage: f64,
    pub retention: f64,
    /// Random center crops per texture image; 0 keeps whole images.
    pub crops_per_image: usize,
    pub features: FeatureSource,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            shrinkage: twostream_core::prune::DEFAULT_SHRINKAGE,
            retention: twostream_core::prune::DEFAULT_RETENTION,
            crops_per_image: twostream_core::imageio::DEFAULT_CROP_COUNT,
            features: FeatureSource::ShapeModel,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Custom layer stack; the final fully-connected width is set to the
    /// model's class count. Defaults to the standard desk-scale network.
    pub layers: Option<Vec<LayerSpec>>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { width: 64, height: 64, channels: 3, layers: None }
    }
}

impl NetworkConfig {
    pub fn spec(&self, classes: usize) -> NetworkSpec {
        let input = InputDims { width: self.width, height: self.height, channels: self.channels };
        match &self.layers {
            None => NetworkSpec::standard(input, classes),
            Some(layers) => {
                let mut layers = layers.clone();
                if let Some(LayerSpec::Fc { out }) = layers.iter_mut().rev().find(|l| matches!(l, LayerSpec::Fc { .. })) {
                    *out = classes;
                }
                NetworkSpec { input, layers }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TextureSource {
    /// Output of the `prune` command.
    #[default]
    Pruned,
    /// The configured texture manifest as is.
    Raw,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamTrainConfig {
    #[serde(default = "defaults::lr")]
    pub learning_rate: f64,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
    #[serde(default = "defaults::decay")]
    pub weight_decay: f64,
    #[serde(default = "defaults::dropout")]
    pub dropout: Option<f64>,
    #[serde(default = "defaults::batch")]
    pub batch_size: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
}

mod defaults {
    use twostream_core::nnet::TrainConfig;
    pub fn lr() -> f64 {
        TrainConfig::default().learning_rate
    }
    pub fn momentum() -> f64 {
        TrainConfig::default().momentum
    }
    pub fn decay() -> f64 {
        TrainConfig::default().weight_decay
    }
    pub fn dropout() -> Option<f64> {
        TrainConfig::default().dropout
    }
    pub fn batch() -> usize {
        TrainConfig::default().batch_size
    }
    pub fn epochs() -> usize {
        TrainConfig::default().epochs
    }
}

impl Default for StreamTrainConfig {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            learning_rate: d.learning_rate,
            momentum: d.momentum,
            weight_decay: d.weight_decay,
            dropout: d.dropout,
            batch_size: d.batch_size,
            epochs: d.epochs,
        }
    }
}

impl StreamTrainConfig {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            dropout: self.dropout,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub texture: StreamTrainConfig,
    pub shape: StreamTrainConfig,
    pub texture_source: TextureSource,
    /// Background negatives per foreground class; 0 trains N-way models.
    pub negatives_per_class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProposerKind {
    #[default]
    EdgeDensity,
    SlidingWindow,
    /// Read from `paths.proposals`.
    File,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub proposer: ProposerKind,
    pub max_proposals: usize,
    pub scales: Vec<f64>,
    pub aspect_ratios: Vec<f64>,
    pub stride_fraction: f64,
    pub nms_iou: f64,
    pub score_threshold: f64,
    /// Side of the square negative crops.
    pub negative_size: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            proposer: ProposerKind::EdgeDensity,
            max_proposals: 200,
            scales: vec![32.0, 64.0],
            aspect_ratios: vec![0.5, 1.0, 2.0],
            stride_fraction: 0.25,
            nms_iou: twostream_core::detect::DEFAULT_NMS_IOU,
            score_threshold: 0.05,
            negative_size: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ap_mode: ApMode,
    pub iou_threshold: f64,
    pub diagnosis_top_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ap_mode: ApMode::ElevenPoint, iou_threshold: DEFAULT_MATCH_IOU, diagnosis_top_k: 100 }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> CliResult<()> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

fn unit_interval(name: &str, v: f64, open_low: bool) -> CliResult<()> {
    let ok = if open_low { v > 0.0 && v <= 1.0 } else { (0.0..=1.0).contains(&v) };
    check(ok, || format!("{name} = {v} outside {}0, 1]", if open_low { "(" } else { "[" }))
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        p.output.iter_mut().for_each(fix);
        p.templates.iter_mut().for_each(fix);
        for opt in [&mut p.real_corpus, &mut p.texture_manifest, &mut p.test_manifest, &mut p.negatives, &mut p.proposals] {
            opt.iter_mut().for_each(fix);
        }
    }

    pub fn similarity_groups(&self) -> SimilarityGroups {
        match &self.groups {
            Some(g) => SimilarityGroups { groups: g.clone() },
            None => SimilarityGroups::voc_default(&self.classes),
        }
    }

    /// Class list of trained models: foreground classes plus background
    /// when negatives are configured.
    pub fn model_classes(&self) -> Vec<String> {
        let mut c = self.classes.clone();
        if self.train.negatives_per_class > 0 {
            c.push(BACKGROUND_CLASS.to_string());
        }
        c
    }

    /// Full validation of every section and every referenced input path.
    pub fn validate(&self) -> CliResult<()> {
        check(!self.classes.is_empty(), || "class list is empty".into())?;
        let mut seen = HashSet::new();
        for c in &self.classes {
            check(!c.is_empty() && !c.contains(char::is_whitespace), || {
                format!("class name `{c}` must be non-empty without whitespace")
            })?;
            check(c != BACKGROUND_CLASS, || format!("class name `{c}` is reserved"))?;
            check(seen.insert(c), || format!("duplicate class `{c}`"))?;
        }
        self.similarity_groups()
            .assignment(&self.classes)
            .map_err(|e| CliError::Config(format!("similarity groups: {e}")))?;

        let s = &self.statsim;
        check(s.width >= 3 && s.height >= 3, || "statsim dims must be at least 3x3".into())?;
        check(matches!(s.channels, 1 | 3), || "statsim.channels must be 1 or 3".into())?;
        check(s.blur_sigma >= 0.0 && s.noise_sigma >= 0.0, || "statsim sigmas must be non-negative".into())?;
        check(s.object_scale > 0.0, || "statsim.object_scale must be positive".into())?;
        s.poses.grid().map_err(|e| CliError::Config(format!("statsim.poses: {e}")))?;

        check((0.0..=1.0).contains(&self.prune.shrinkage), || "prune.shrinkage outside [0, 1]".into())?;
        unit_interval("prune.retention", self.prune.retention, true)?;

        let n = &self.network;
        check(matches!(n.channels, 1 | 3), || "network.channels must be 1 or 3".into())?;
        self.network
            .spec(self.model_classes().len())
            .shapes()
            .map_err(|e| CliError::Config(format!("network: {e}")))?;
        for (name, t) in [("train.texture", &self.train.texture), ("train.shape", &self.train.shape)] {
            t.to_train_config(self.seed)
                .validate()
                .map_err(|e| CliError::Config(format!("{name}: {e}")))?;
            check(t.epochs > 0, || format!("{name}.epochs must be positive"))?;
        }

        let d = &self.detect;
        check(d.max_proposals > 0, || "detect.max_proposals must be positive".into())?;
        if d.proposer == ProposerKind::SlidingWindow {
            check(!d.scales.is_empty() && !d.aspect_ratios.is_empty(), || {
                "detect.scales and detect.aspect_ratios must be non-empty".into()
            })?;
            check(d.scales.iter().chain(&d.aspect_ratios).all(|v| *v > 0.0), || {
                "detect.scales and detect.aspect_ratios must be positive".into()
            })?;
            check(d.stride_fraction > 0.0, || "detect.stride_fraction must be positive".into())?;
        }
        unit_interval("detect.nms_iou", d.nms_iou, false)?;
        unit_interval("detect.score_threshold", d.score_threshold, false)?;
        check(d.negative_size >= 1, || "detect.negative_size must be positive".into())?;
        unit_interval("eval.iou_threshold", self.eval.iou_threshold, true)?;

        let p = &self.paths;
        for t in &p.templates {
            exists(t, "paths.templates")?;
        }
        for (name, opt) in [
            ("paths.real_corpus", &p.real_corpus),
            ("paths.texture_manifest", &p.texture_manifest),
            ("paths.test_manifest", &p.test_manifest),
            ("paths.negatives", &p.negatives),
            ("paths.proposals", &p.proposals),
        ] {
            if let Some(path) = opt {
                exists(path, name)?;
            }
        }
        if s.background != BackgroundMode::White {
            check(p.real_corpus.is_some(), || "non-white backgrounds need paths.real_corpus".into())?;
        }
        if self.train.negatives_per_class > 0 {
            check(p.negatives.is_some(), || "train.negatives_per_class needs paths.negatives".into())?;
        }
        if d.proposer == ProposerKind::File {
            check(p.proposals.is_some(), || "detect.proposer = \"file\" needs paths.proposals".into())?;
        }
        Ok(())
    }
}

fn exists(path: &Path, key: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingInput(format!("{key}: {}", path.display())))
    }
}
