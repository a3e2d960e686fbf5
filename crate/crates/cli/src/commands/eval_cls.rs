use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;
use twostream_core::eval::{confusion, overall_accuracy, text_table};
use twostream_core::fusion::{fuse_average, Posterior};
use twostream_core::svg::confusion_svg;

use super::{argmax_prefix, test_instances, Context};
use crate::error::CliResult;
use crate::output::{write_json, write_text};

#[derive(Serialize)]
struct Accuracies {
    texture: f64,
    shape: f64,
    fused: f64,
}

#[derive(Serialize)]
struct ClassRow {
    class: String,
    instances: u64,
    #[serde(flatten)]
    accuracy: Accuracies,
}

#[derive(Serialize)]
struct Report {
    instances: usize,
    per_class: Vec<ClassRow>,
    overall: Accuracies,
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

pub fn run(ctx: &Context) -> CliResult<Value> {
    let classes = &ctx.config.classes;
    let n = classes.len();
    let (mt, ms) = ctx.load_models()?;
    let manifest = ctx.test_manifest()?;
    let instances = test_instances(&manifest)?;

    let preds: Vec<[usize; 3]> = instances
        .par_iter()
        .map(|inst| {
            let pt = Posterior::new(mt.forward_any(&inst.patch)?.posterior)?;
            let ps = Posterior::new(ms.forward_any(&inst.patch)?.posterior)?;
            let pf = fuse_average(&pt, &ps)?;
            Ok([pt.as_slice(), ps.as_slice(), pf.as_slice()].map(|p| argmax_prefix(p, n)))
        })
        .collect::<CliResult<_>>()?;
    let labels: Vec<usize> = instances.iter().map(|i| i.label).collect();
    let column = |k: usize| preds.iter().map(|p| p[k]).collect::<Vec<_>>();
    let (pt, ps, pf) = (column(0), column(1), column(2));

    let matrices = [confusion(&pt, &labels, n)?, confusion(&ps, &labels, n)?, confusion(&pf, &labels, n)?];
    let per = matrices.each_ref().map(|m| m.per_class_accuracy());
    let per_class: Vec<ClassRow> = (0..n)
        .map(|j| ClassRow {
            class: classes[j].clone(),
            instances: matrices[0].column_total(j),
            accuracy: Accuracies { texture: per[0][j], shape: per[1][j], fused: per[2][j] },
        })
        .collect();
    let report = Report {
        instances: instances.len(),
        per_class,
        overall: Accuracies {
            texture: overall_accuracy(&pt, &labels)?,
            shape: overall_accuracy(&ps, &labels)?,
            fused: overall_accuracy(&pf, &labels)?,
        },
    };

    let dir = ctx.dir("eval-cls");
    write_json(&dir.join("report.json"), &report)?;
    let header: Vec<String> = ["class", "n", "texture", "shape", "fused"].map(String::from).to_vec();
    let mut rows: Vec<Vec<String>> = report
        .per_class
        .iter()
        .map(|r| {
            vec![
                r.class.clone(),
                r.instances.to_string(),
                pct(r.accuracy.texture),
                pct(r.accuracy.shape),
                pct(r.accuracy.fused),
            ]
        })
        .collect();
    let o = &report.overall;
    rows.push(vec!["overall".into(), report.instances.to_string(), pct(o.texture), pct(o.shape), pct(o.fused)]);
    write_text(&dir.join("report.txt"), &text_table(&header, &rows))?;
    for (name, m) in ["texture", "shape", "fused"].iter().zip(&matrices) {
        write_text(&dir.join(format!("confusion_{name}.svg")), &confusion_svg(m, classes, &format!("{name} stream")))?;
    }
    Ok(serde_json::to_value(&report.overall).expect("serializes"))
}
