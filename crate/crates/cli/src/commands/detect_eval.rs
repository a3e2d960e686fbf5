use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use serde_json::{json, Value};
use twostream_core::detect::{
    edge_density_proposals, load_proposals, nms_grouped, score_proposals, sliding_window_proposals, write_detections,
    Detection, Proposal,
};
use twostream_core::eval::{evaluate_class, mean_ap, text_table, ApResult, GroundTruth};
use twostream_core::imageio::{DatasetManifest, Image, LabeledSample, Split};
use twostream_core::svg::pr_curve_svg;

use super::{diagnose, load_images, Context};
use crate::config::{ProposerKind, BACKGROUND_CLASS};
use crate::error::{CliError, CliResult};
use crate::output::{write_json, write_text};

#[derive(Serialize)]
struct ApReport {
    mode: twostream_core::eval::ApMode,
    iou_threshold: f64,
    per_class: Vec<ApResult>,
    /// Mean over classes with at least one ground-truth object.
    map: f64,
}

/// Ground truth of every test sample; each must carry boxes.
pub fn ground_truth(manifest: &DatasetManifest) -> CliResult<(Vec<&LabeledSample>, Vec<GroundTruth>)> {
    let samples: Vec<&LabeledSample> = manifest.split(Split::Test).collect();
    if samples.is_empty() {
        return Err(CliError::Dataset("test manifest has no test samples".into()));
    }
    let mut gts = Vec::new();
    for s in &samples {
        let boxes = s
            .boxes
            .as_ref()
            .ok_or_else(|| CliError::Dataset(format!("test sample {} has no ground-truth boxes", s.path)))?;
        gts.extend(boxes.iter().map(|b| GroundTruth { image_id: s.path.clone(), class: s.label, bbox: *b }));
    }
    Ok((samples, gts))
}

fn proposals_for(ctx: &Context, image: &Image, file: Option<&BTreeMap<String, Vec<Proposal>>>, id: &str) -> CliResult<Vec<Proposal>> {
    let d = &ctx.config.detect;
    Ok(match d.proposer {
        ProposerKind::EdgeDensity => edge_density_proposals(image, d.max_proposals)?,
        ProposerKind::SlidingWindow => sliding_window_proposals(image, &d.scales, &d.aspect_ratios, d.stride_fraction)?,
        ProposerKind::File => {
            let mut p = file.and_then(|m| m.get(id)).cloned().unwrap_or_default();
            p.truncate(d.max_proposals);
            p
        }
    })
}

pub fn run(ctx: &Context) -> CliResult<Value> {
    let cfg = &ctx.config;
    let classes = &cfg.classes;
    let (mt, ms) = ctx.load_models()?;
    if mt.classes.len() != classes.len() + 1 || mt.classes.last().map(String::as_str) != Some(BACKGROUND_CLASS) {
        return Err(CliError::Config(
            "detection needs models trained with a background class (set train.negatives_per_class > 0)".into(),
        ));
    }
    let manifest = ctx.test_manifest()?;
    let (samples, gts) = ground_truth(&manifest)?;
    let images = load_images(&manifest, &samples)?;
    for (s, img) in samples.iter().zip(&images) {
        for b in s.boxes.iter().flatten() {
            b.check_in(img.width(), img.height())?;
        }
    }

    let file = match cfg.detect.proposer {
        ProposerKind::File => {
            let dims: HashMap<String, (usize, usize)> =
                samples.iter().zip(&images).map(|(s, i)| (s.path.clone(), i.dims())).collect();
            Some(load_proposals(cfg.paths.proposals.as_deref().expect("validated"), &dims)?)
        }
        _ => None,
    };
    let mut raw: Vec<Detection> = Vec::new();
    let mut proposal_count = 0;
    for (s, img) in samples.iter().zip(&images) {
        let props = proposals_for(ctx, img, file.as_ref(), &s.path)?;
        proposal_count += props.len();
        raw.extend(score_proposals(&mt, &ms, &s.path, img, &props, cfg.detect.score_threshold)?);
    }
    let dets = nms_grouped(&raw, cfg.detect.nms_iou);

    let dir = ctx.dir("detect-eval");
    write_detections(&dir.join("detections.txt"), &dets, classes)?;
    let mut per_class = Vec::new();
    for (j, name) in classes.iter().enumerate() {
        if gts.iter().any(|g| g.class == j) {
            per_class.push(evaluate_class(j, name, &dets, &gts, cfg.eval.iou_threshold, cfg.eval.ap_mode)?);
        }
    }
    let map = mean_ap(&per_class)?;
    let report = ApReport { mode: cfg.eval.ap_mode, iou_threshold: cfg.eval.iou_threshold, per_class, map };
    write_json(&dir.join("ap.json"), &report)?;
    let header: Vec<String> = vec!["class".into(), "AP".into()];
    let mut rows: Vec<Vec<String>> =
        report.per_class.iter().map(|r| vec![r.class.clone(), format!("{:.1}", 100.0 * r.ap)]).collect();
    rows.push(vec!["mAP".into(), format!("{:.1}", 100.0 * map)]);
    write_text(&dir.join("ap.txt"), &text_table(&header, &rows))?;
    for r in &report.per_class {
        write_text(&dir.join(format!("pr_{}.svg", r.class)), &pr_curve_svg(r))?;
    }
    let diagnosis = diagnose::write_report(ctx, &dir, &dets, &gts)?;
    let aps: serde_json::Map<String, Value> = report.per_class.iter().map(|r| (r.class.clone(), json!(r.ap))).collect();
    Ok(json!({
        "images": samples.len(),
        "proposals": proposal_count,
        "detections": dets.len(),
        "ap": aps,
        "map": map,
        "false_positives_examined": diagnosis.examined,
    }))
}
