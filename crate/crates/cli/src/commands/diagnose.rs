use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use twostream_core::detect::{read_detections, Detection};
use twostream_core::eval::{diagnose_false_positives, text_table, DiagnosisReport, GroundTruth};

use super::detect_eval::ground_truth;
use super::Context;
use crate::error::{CliError, CliResult};
use crate::output::{write_json, write_text};

/// Writes `diagnosis.json` and `diagnosis.txt` into `dir`.
pub fn write_report(ctx: &Context, dir: &Path, dets: &[Detection], gts: &[GroundTruth]) -> CliResult<DiagnosisReport> {
    let cfg = &ctx.config;
    let report = diagnose_false_positives(dets, gts, &cfg.classes, &cfg.similarity_groups(), cfg.eval.diagnosis_top_k)?;
    write_json(&dir.join("diagnosis.json"), &report)?;
    let header: Vec<String> = ["group", "loc", "sim", "oth", "bg", "total"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = report
        .groups
        .iter()
        .map(|(g, c)| {
            vec![
                g.clone(),
                c.loc.to_string(),
                c.sim.to_string(),
                c.oth.to_string(),
                c.bg.to_string(),
                c.total().to_string(),
            ]
        })
        .collect();
    write_text(&dir.join("diagnosis.txt"), &text_table(&header, &rows))?;
    Ok(report)
}

pub fn run(ctx: &Context, detections: Option<PathBuf>) -> CliResult<Value> {
    let path = detections.unwrap_or_else(|| ctx.dir("detect-eval").join("detections.txt"));
    if !path.exists() {
        return Err(CliError::MissingInput(format!(
            "detections file {} (run `detect-eval` first or pass --detections)",
            path.display()
        )));
    }
    let dets = read_detections(&path, &ctx.config.classes)?;
    let manifest = ctx.test_manifest()?;
    let (_, gts) = ground_truth(&manifest)?;
    let report = write_report(ctx, &ctx.dir("diagnose"), &dets, &gts)?;
    Ok(json!({
        "detections": dets.len(),
        "examined": report.examined,
        "groups": report.groups,
    }))
}
