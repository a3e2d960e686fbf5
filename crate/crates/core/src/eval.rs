//! Classification and detection metrics plus false-positive diagnosis.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detect::Detection;
use crate::error::{Error, Result};
use crate::imageio::BoundingBox;

pub const DEFAULT_MATCH_IOU: f64 = 0.5;

/// Intersection over union with inclusive-coordinate areas.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix1 = a.x1.max(b.x1);
    let iy1 = a.y1.max(b.y1);
    let ix2 = a.x2.min(b.x2);
    let iy2 = a.y2.min(b.y2);
    if ix1 > ix2 || iy1 > iy2 {
        return 0.0;
    }
    let inter = ((ix2 - ix1 + 1) * (iy2 - iy1 + 1)) as f64;
    inter / (a.area() as f64 + b.area() as f64 - inter)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: String,
    pub class: usize,
    pub bbox: BoundingBox,
}

fn check_sorted(dets: &[Detection]) -> Result<()> {
    match dets.windows(2).position(|w| w[1].score > w[0].score) {
        Some(i) => Err(Error::Unsorted(i + 1)),
        None => Ok(()),
    }
}

/// Greedy rank-order matching. A detection is a true positive when the
/// unmatched same-class, same-image ground truth it overlaps most has
/// IoU ≥ `iou_threshold`; that ground truth is then consumed.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], iou_threshold: f64) -> Result<Vec<bool>> {
    check_sorted(dets)?;
    let mut by_key: HashMap<(&str, usize), Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_key.entry((g.image_id.as_str(), g.class)).or_default().push(i);
    }
    let mut matched = vec![false; gts.len()];
    Ok(dets
        .iter()
        .map(|d| {
            let Some(cands) = by_key.get(&(d.image_id.as_str(), d.class)) else {
                return false;
            };
            let mut best: Option<(usize, f64)> = None;
            for &g in cands {
                if matched[g] {
                    continue;
                }
                let o = iou(&d.bbox, &gts[g].bbox);
                if best.is_none_or(|(_, b)| o > b) {
                    best = Some((g, o));
                }
            }
            match best {
                Some((g, o)) if o >= iou_threshold => {
                    matched[g] = true;
                    true
                }
                _ => false,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ApMode {
    /// Mean of interpolated precision at recall 0, 0.1, …, 1.0.
    #[default]
    ElevenPoint,
    /// Area under the monotonized precision/recall curve.
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub class: String,
    pub points: Vec<PrPoint>,
    pub ap: f64,
    pub mode: ApMode,
}

/// AP from a rank-ordered TP/FP flag sequence over `n_pos` positives.
pub fn average_precision(flags: &[bool], n_pos: usize, mode: ApMode) -> Result<ApResult> {
    if n_pos == 0 {
        return Err(Error::invalid("average precision needs at least one positive"));
    }
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(flags.len());
    for (i, &f) in flags.iter().enumerate() {
        tp += usize::from(f);
        points.push(PrPoint {
            recall: tp as f64 / n_pos as f64,
            precision: tp as f64 / (i + 1) as f64,
        });
    }
    if tp > n_pos {
        return Err(Error::invalid(format!("{tp} true positives exceed {n_pos} positives")));
    }
    let ap = match mode {
        ApMode::ElevenPoint => {
            (0..=10)
                .map(|i| {
                    let t = i as f64 / 10.0;
                    points
                        .iter()
                        .filter(|p| p.recall >= t)
                        .map(|p| p.precision)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
        ApMode::Continuous => {
            let mut rec = vec![0.0];
            let mut prec = vec![0.0];
            rec.extend(points.iter().map(|p| p.recall));
            prec.extend(points.iter().map(|p| p.precision));
            rec.push(1.0);
            prec.push(0.0);
            for i in (0..prec.len() - 1).rev() {
                prec[i] = prec[i].max(prec[i + 1]);
            }
            (1..rec.len())
                .filter(|&i| rec[i] != rec[i - 1])
                .map(|i| (rec[i] - rec[i - 1]) * prec[i])
                .sum()
        }
    };
    Ok(ApResult {
        class: String::new(),
        points,
        ap,
        mode,
    })
}

/// Sorts one class's detections, matches them and computes AP.
pub fn evaluate_class(
    class: usize,
    class_name: &str,
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_threshold: f64,
    mode: ApMode,
) -> Result<ApResult> {
    let mut mine: Vec<Detection> = dets.iter().filter(|d| d.class == class).cloned().collect();
    crate::detect::sort_detections(&mut mine);
    let n_pos = gts.iter().filter(|g| g.class == class).count();
    let flags = match_detections(&mine, gts, iou_threshold)?;
    let mut r = average_precision(&flags, n_pos, mode)?;
    r.class = class_name.to_string();
    Ok(r)
}

pub fn mean_ap(per_class: &[ApResult]) -> Result<f64> {
    if per_class.is_empty() {
        return Err(Error::invalid("mean AP over zero classes"));
    }
    Ok(per_class.iter().map(|r| r.ap).sum::<f64>() / per_class.len() as f64)
}

/// Micro accuracy over every sample.
pub fn overall_accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} predictions", labels.len()),
            actual: format!("{} predictions", preds.len()),
        });
    }
    if preds.is_empty() {
        return Err(Error::invalid("accuracy over zero samples"));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// `counts[pred][gt]`; columns index ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn size(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn column_total(&self, gt: usize) -> u64 {
        self.counts.iter().map(|row| row[gt]).sum()
    }

    /// Each ground-truth column divided by its total; empty columns stay 0.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        let n = self.size();
        let totals: Vec<u64> = (0..n).map(|g| self.column_total(g)).collect();
        self.counts
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&totals)
                    .map(|(&c, &t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
                    .collect()
            })
            .collect()
    }

    /// Diagonal of the normalized matrix.
    pub fn per_class_accuracy(&self) -> Vec<f64> {
        let norm = self.normalized();
        (0..self.size()).map(|i| norm[i][i]).collect()
    }
}

pub fn confusion(preds: &[usize], labels: &[usize], n: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} predictions", labels.len()),
            actual: format!("{} predictions", preds.len()),
        });
    }
    let mut counts = vec![vec![0u64; n]; n];
    for (&p, &l) in preds.iter().zip(labels) {
        for v in [p, l] {
            if v >= n {
                return Err(Error::LabelOutOfRange { label: v, classes: n });
            }
        }
        counts[p][l] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityGroup {
    pub name: String,
    pub classes: Vec<String>,
}

/// Named class groups that must partition the class list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityGroups {
    pub groups: Vec<SimilarityGroup>,
}

impl SimilarityGroups {
    /// Animals, vehicles and furniture as used for VOC classes; any class
    /// of `classes` not listed there lands in a trailing `other` group.
    pub fn voc_default(classes: &[String]) -> Self {
        let table: [(&str, &[&str]); 3] = [
            ("animals", &["bird", "cat", "cow", "dog", "horse", "person", "sheep"]),
            (
                "vehicles",
                &["aeroplane", "bicycle", "bike", "boat", "bus", "car", "motorbike", "train"],
            ),
            ("furniture", &["chair", "diningtable", "table", "sofa"]),
        ];
        let mut groups: Vec<SimilarityGroup> = table
            .iter()
            .map(|(name, members)| SimilarityGroup {
                name: name.to_string(),
                classes: classes.iter().filter(|c| members.contains(&c.as_str())).cloned().collect(),
            })
            .filter(|g| !g.classes.is_empty())
            .collect();
        let rest: Vec<String> = classes
            .iter()
            .filter(|c| !groups.iter().any(|g| g.classes.contains(c)))
            .cloned()
            .collect();
        if !rest.is_empty() {
            groups.push(SimilarityGroup { name: "other".into(), classes: rest });
        }
        Self { groups }
    }

    /// Group index per class; errors on classes outside (or in several) groups.
    pub fn assignment(&self, classes: &[String]) -> Result<Vec<usize>> {
        let mut out = vec![usize::MAX; classes.len()];
        for (gi, g) in self.groups.iter().enumerate() {
            for name in &g.classes {
                let ci = classes
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::UnknownClass(name.clone()))?;
                if out[ci] != usize::MAX {
                    return Err(Error::invalid(format!("class `{name}` is in more than one group")));
                }
                out[ci] = gi;
            }
        }
        if let Some(ci) = out.iter().position(|&g| g == usize::MAX) {
            return Err(Error::invalid(format!(
                "class `{}` is outside all similarity groups",
                classes[ci]
            )));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FpCategory {
    /// Overlaps a same-class object with 0.1 ≤ IoU (poor box or duplicate).
    Loc,
    /// Overlaps an object of a similar class.
    Sim,
    /// Overlaps an object of a dissimilar class.
    Oth,
    /// Overlaps nothing.
    Bg,
}

pub const DIAGNOSIS_MIN_IOU: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub loc: usize,
    pub sim: usize,
    pub oth: usize,
    pub bg: usize,
}

impl CategoryCounts {
    pub fn total(&self) -> usize {
        self.loc + self.sim + self.oth + self.bg
    }

    fn add(&mut self, c: FpCategory) {
        match c {
            FpCategory::Loc => self.loc += 1,
            FpCategory::Sim => self.sim += 1,
            FpCategory::Oth => self.oth += 1,
            FpCategory::Bg => self.bg += 1,
        }
    }
}

/// One examined false positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpRecord {
    pub image_id: String,
    pub class: String,
    pub score: f64,
    pub bbox: BoundingBox,
    /// Rank among this class's detections, from 0.
    pub rank: usize,
    pub category: FpCategory,
    /// Largest IoU with any ground truth in the image.
    pub max_overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    /// Counts per similarity group, in group order.
    pub groups: BTreeMap<String, CategoryCounts>,
    pub examined: usize,
    pub false_positives: Vec<FpRecord>,
}

/// Categorizes the first `top_k` false positives of each class in rank
/// order. Same-class overlap ≥ 0.1 is `Loc`; otherwise overlap ≥ 0.1 with a
/// class of the same group is `Sim`, with any other class `Oth`; the rest
/// is `Bg`.
pub fn diagnose_false_positives(
    dets: &[Detection],
    gts: &[GroundTruth],
    classes: &[String],
    groups: &SimilarityGroups,
    top_k: usize,
) -> Result<DiagnosisReport> {
    let group_of = groups.assignment(classes)?;
    let mut per_group: BTreeMap<String, CategoryCounts> = groups
        .groups
        .iter()
        .map(|g| (g.name.clone(), CategoryCounts::default()))
        .collect();
    let mut records = Vec::new();
    for (ci, name) in classes.iter().enumerate() {
        let mut mine: Vec<Detection> = dets.iter().filter(|d| d.class == ci).cloned().collect();
        crate::detect::sort_detections(&mut mine);
        let flags = match_detections(&mine, gts, DEFAULT_MATCH_IOU)?;
        let fps = mine
            .iter()
            .zip(&flags)
            .enumerate()
            .filter(|(_, (_, &tp))| !tp)
            .take(top_k);
        for (rank, (d, _)) in fps {
            let mut same = 0.0f64;
            let mut similar = 0.0f64;
            let mut other = 0.0f64;
            for g in gts.iter().filter(|g| g.image_id == d.image_id) {
                let o = iou(&d.bbox, &g.bbox);
                if g.class == ci {
                    same = same.max(o);
                } else if group_of.get(g.class) == Some(&group_of[ci]) {
                    similar = similar.max(o);
                } else {
                    other = other.max(o);
                }
            }
            let category = if same >= DIAGNOSIS_MIN_IOU {
                FpCategory::Loc
            } else if similar >= DIAGNOSIS_MIN_IOU {
                FpCategory::Sim
            } else if other >= DIAGNOSIS_MIN_IOU {
                FpCategory::Oth
            } else {
                FpCategory::Bg
            };
            per_group
                .get_mut(&groups.groups[group_of[ci]].name)
                .expect("group exists")
                .add(category);
            records.push(FpRecord {
                image_id: d.image_id.clone(),
                class: name.clone(),
                score: d.score,
                bbox: d.bbox,
                rank,
                category,
                max_overlap: same.max(similar).max(other),
            });
        }
    }
    Ok(DiagnosisReport {
        groups: per_group,
        examined: records.len(),
        false_positives: records,
    })
}

/// Left-aligned first column, right-aligned remaining columns.
pub fn text_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[String]| {
        let mut s = String::new();
        for (i, cell) in cells.iter().enumerate().take(cols) {
            if i == 0 {
                let _ = write!(s, "{cell:<w$}", w = widths[0]);
            } else {
                let _ = write!(s, "  {cell:>w$}", w = widths[i]);
            }
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(header);
    line(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>());
    for row in rows {
        line(row);
    }
    out
}
