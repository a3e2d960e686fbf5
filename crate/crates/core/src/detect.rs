//! Region proposals, negative sampling, two-stream scoring and NMS.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::iou;
use crate::fusion::{fuse_average, Posterior};
use crate::imageio::{crop, BoundingBox, Image};
use crate::nnet::TrainedModel;

pub const DEFAULT_NMS_IOU: f64 = 0.3;

/// Minimum side length accepted by the edge-density proposer.
pub const EDGE_PROPOSER_MIN_SIDE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub bbox: BoundingBox,
    pub objectness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    /// Foreground class index, never the background slot.
    pub class: usize,
    pub score: f64,
    pub bbox: BoundingBox,
}

/// Score descending, then image, class and box ascending.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.image_id.cmp(&b.image_id))
        .then_with(|| a.class.cmp(&b.class))
        .then_with(|| a.bbox.cmp(&b.bbox))
}

pub fn sort_detections(dets: &mut [Detection]) {
    dets.sort_by(detection_order);
}

/// Window side lengths for one `(scale, ratio)` pair, clipped to the image.
pub fn window_size(scale: f64, ratio: f64, width: usize, height: usize) -> (usize, usize) {
    let w = (scale * ratio.sqrt()).round().max(1.0) as usize;
    let h = (scale / ratio.sqrt()).round().max(1.0) as usize;
    (w.min(width), h.min(height))
}

/// Per-axis stride: `max(1, round(fraction · side))`.
pub fn window_stride(fraction: f64, side: usize) -> usize {
    ((fraction * side as f64).round() as usize).max(1)
}

/// Every window of each scale (pixel side of a square window) and aspect
/// ratio (width/height), in scale, ratio, row, column order. Windows never
/// leave the image; objectness is 1.
pub fn sliding_window_proposals(
    image: &Image,
    scales: &[f64],
    aspect_ratios: &[f64],
    stride_fraction: f64,
) -> Result<Vec<Proposal>> {
    if scales.is_empty() || aspect_ratios.is_empty() {
        return Err(Error::invalid("sliding windows need at least one scale and one ratio"));
    }
    if scales.iter().chain(aspect_ratios).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::invalid("scales and ratios must be positive"));
    }
    if !(stride_fraction.is_finite() && stride_fraction > 0.0) {
        return Err(Error::invalid("stride fraction must be positive"));
    }
    let (iw, ih) = image.dims();
    let mut out = Vec::new();
    for &s in scales {
        for &r in aspect_ratios {
            let (w, h) = window_size(s, r, iw, ih);
            let (sx, sy) = (window_stride(stride_fraction, w), window_stride(stride_fraction, h));
            for y in (0..=ih - h).step_by(sy) {
                for x in (0..=iw - w).step_by(sx) {
                    out.push(Proposal {
                        bbox: BoundingBox { x1: x, y1: y, x2: x + w - 1, y2: y + h - 1 },
                        objectness: 1.0,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Summed-area table over a `w × h` map, `(w+1)(h+1)` entries.
struct Integral {
    stride: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(values: &[f64], w: usize, h: usize) -> Self {
        let stride = w + 1;
        let mut sums = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += values[y * w + x];
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self { stride, sums }
    }

    /// Sum over the inclusive rectangle.
    fn rect(&self, x1: usize, y1: usize, x2: usize, y2: usize) -> f64 {
        let s = |x: usize, y: usize| self.sums[y * self.stride + x];
        s(x2 + 1, y2 + 1) - s(x1, y2 + 1) - s(x2 + 1, y1) + s(x1, y1)
    }
}

/// Sobel magnitude at every pixel, zero on the one-pixel border.
pub fn edge_map(image: &Image) -> Result<Vec<f64>> {
    let (w, h) = image.dims();
    let inner = crate::statsim::sobel_magnitudes(image)?;
    let mut map = vec![0.0; w * h];
    for y in 1..h - 1 {
        let src = &inner[(y - 1) * (w - 2)..y * (w - 2)];
        map[y * w + 1..y * w + w - 1].copy_from_slice(src);
    }
    Ok(map)
}

/// Ring thickness used by the edge-density score: 10% of the side, ≥ 1 px.
pub fn ring_width(side: usize) -> usize {
    ((side as f64 * 0.1).round() as usize).max(1)
}

/// Edge mass strictly inside the box minus the mass in its border ring.
fn ring_objectness(integral: &Integral, b: &BoundingBox) -> f64 {
    let total = integral.rect(b.x1, b.y1, b.x2, b.y2);
    let (rx, ry) = (ring_width(b.width()), ring_width(b.height()));
    let inner = if b.width() > 2 * rx && b.height() > 2 * ry {
        integral.rect(b.x1 + rx, b.y1 + ry, b.x2 - rx, b.y2 - ry)
    } else {
        0.0
    };
    inner - (total - inner)
}

/// Objectness of arbitrary boxes under the edge-density score.
pub fn edge_density_scores(image: &Image, boxes: &[BoundingBox]) -> Result<Vec<f64>> {
    let (w, h) = image.dims();
    let integral = Integral::new(&edge_map(image)?, w, h);
    boxes
        .iter()
        .map(|b| {
            b.check_in(w, h)?;
            Ok(ring_objectness(&integral, b))
        })
        .collect()
}

/// Simplified contour-enclosure proposer. Candidates come from a grid of
/// side lengths (multiples of `min(W,H)/16`, aspect within 1:3..3:1) at half
/// that step; the `max_proposals` best by objectness are returned, ties
/// going to the smaller, then lexicographically first, box.
pub fn edge_density_proposals(image: &Image, max_proposals: usize) -> Result<Vec<Proposal>> {
    let (w, h) = image.dims();
    if w < EDGE_PROPOSER_MIN_SIDE || h < EDGE_PROPOSER_MIN_SIDE {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min_width: EDGE_PROPOSER_MIN_SIDE,
            min_height: EDGE_PROPOSER_MIN_SIDE,
        });
    }
    let integral = Integral::new(&edge_map(image)?, w, h);
    let step = (w.min(h) / 16).max(2);
    let pos_step = (step / 2).max(1);
    let sizes = |limit: usize| -> Vec<usize> {
        let mut v: Vec<usize> = (2..).map(|k| k * step).take_while(|&s| s <= limit).collect();
        if v.last() != Some(&limit) {
            v.push(limit);
        }
        v
    };
    let mut cands: Vec<(i64, Proposal)> = Vec::new();
    for &bh in &sizes(h) {
        for &bw in &sizes(w) {
            if bw > 3 * bh || bh > 3 * bw {
                continue;
            }
            let mut ys: Vec<usize> = (0..=h - bh).step_by(pos_step).collect();
            let mut xs: Vec<usize> = (0..=w - bw).step_by(pos_step).collect();
            if ys.last() != Some(&(h - bh)) {
                ys.push(h - bh);
            }
            if xs.last() != Some(&(w - bw)) {
                xs.push(w - bw);
            }
            for &y in &ys {
                for &x in &xs {
                    let bbox = BoundingBox { x1: x, y1: y, x2: x + bw - 1, y2: y + bh - 1 };
                    let objectness = ring_objectness(&integral, &bbox);
                    // Quantized key keeps the ordering total and immune to
                    // summation-order noise.
                    cands.push(((objectness * 1e6).round() as i64, Proposal { bbox, objectness }));
                }
            }
        }
    }
    cands.sort_by(|(ka, a), (kb, b)| {
        kb.cmp(ka)
            .then_with(|| a.bbox.area().cmp(&b.bbox.area()))
            .then_with(|| a.bbox.cmp(&b.bbox))
    });
    cands.truncate(max_proposals);
    Ok(cands.into_iter().map(|(_, p)| p).collect())
}

/// Parses "image_id x1 y1 x2 y2 objectness" lines. Boxes are checked
/// against `dims` (width, height per image id); duplicates are kept.
pub fn parse_proposals(
    text: &str,
    dims: &HashMap<String, (usize, usize)>,
    context: &str,
) -> Result<BTreeMap<String, Vec<Proposal>>> {
    let mut out: BTreeMap<String, Vec<Proposal>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let perr = |message: String| Error::Parse {
            context: context.to_string(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(perr(format!("expected 6 fields, found {}", fields.len())));
        }
        let mut c = [0i64; 4];
        for (k, f) in fields[1..5].iter().enumerate() {
            c[k] = f.parse().map_err(|_| perr(format!("bad coordinate `{f}`")))?;
        }
        let objectness: f64 = fields[5]
            .parse()
            .map_err(|_| perr(format!("bad objectness `{}`", fields[5])))?;
        if !objectness.is_finite() {
            return Err(perr("objectness must be finite".into()));
        }
        let bbox = BoundingBox::from_signed(c)?;
        let id = fields[0];
        let &(w, h) = dims
            .get(id)
            .ok_or_else(|| perr(format!("unknown image id `{id}`")))?;
        bbox.check_in(w, h)?;
        out.entry(id.to_string()).or_default().push(Proposal { bbox, objectness });
    }
    Ok(out)
}

pub fn load_proposals(
    path: &Path,
    dims: &HashMap<String, (usize, usize)>,
) -> Result<BTreeMap<String, Vec<Proposal>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_proposals(&text, dims, &path.display().to_string())
}

/// Square `size × size` crops at uniform positions of uniformly chosen
/// corpus images.
pub fn sample_negatives<R: rand::Rng + ?Sized>(
    corpus: &[Image],
    count: usize,
    size: usize,
    rng: &mut R,
) -> Result<Vec<Image>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if corpus.is_empty() {
        return Err(Error::invalid("negative sampling needs a non-empty corpus"));
    }
    if size == 0 {
        return Err(Error::invalid("negative patch size must be positive"));
    }
    for img in corpus {
        let (w, h) = img.dims();
        if w < size || h < size {
            return Err(Error::ImageTooSmall { width: w, height: h, min_width: size, min_height: size });
        }
    }
    (0..count)
        .map(|_| {
            let img = &corpus[rng.random_range(0..corpus.len())];
            let x = rng.random_range(0..=img.width() - size);
            let y = rng.random_range(0..=img.height() - size);
            crop(img, &BoundingBox { x1: x, y1: y, x2: x + size - 1, y2: y + size - 1 })
        })
        .collect()
}

/// Fused posterior for one crop.
pub fn fused_posterior(model_t: &TrainedModel, model_s: &TrainedModel, patch: &Image) -> Result<Posterior> {
    let pt = Posterior::new(model_t.forward_any(patch)?.posterior)?;
    let ps = Posterior::new(model_s.forward_any(patch)?.posterior)?;
    fuse_average(&pt, &ps)
}

/// Crops each proposal, fuses both streams and emits one detection per
/// foreground class whose fused probability reaches `score_threshold`.
/// The last class of the shared list is background and never emitted.
/// Output follows proposal order, then class order.
pub fn score_proposals(
    model_t: &TrainedModel,
    model_s: &TrainedModel,
    image_id: &str,
    image: &Image,
    proposals: &[Proposal],
    score_threshold: f64,
) -> Result<Vec<Detection>> {
    if model_t.classes != model_s.classes {
        return Err(Error::ClassListMismatch(model_t.classes.clone(), model_s.classes.clone()));
    }
    if model_t.classes.len() < 2 {
        return Err(Error::InvalidSpec(
            "detection models need a foreground class plus background".into(),
        ));
    }
    let foreground = model_t.classes.len() - 1;
    let per: Vec<Vec<Detection>> = proposals
        .par_iter()
        .map(|p| {
            let patch = crop(image, &p.bbox)?;
            let fused = fused_posterior(model_t, model_s, &patch)?;
            Ok((0..foreground)
                .filter(|&j| fused[j] >= score_threshold)
                .map(|j| Detection {
                    image_id: image_id.to_string(),
                    class: j,
                    score: fused[j],
                    bbox: p.bbox,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// Greedy NMS over one image and class: keep the best remaining detection,
/// drop everything overlapping it by more than `iou_threshold`.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<Detection> = dets.to_vec();
    sort_detections(&mut order);
    let mut keep: Vec<Detection> = Vec::new();
    for d in order {
        if keep.iter().all(|k| iou(&k.bbox, &d.bbox) <= iou_threshold) {
            keep.push(d);
        }
    }
    keep
}

/// [`nms`] applied per (image, class); result in detection order.
pub fn nms_grouped(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut groups: BTreeMap<(&str, usize), Vec<Detection>> = BTreeMap::new();
    for d in dets {
        groups.entry((d.image_id.as_str(), d.class)).or_default().push(d.clone());
    }
    let mut out: Vec<Detection> = groups.values().flat_map(|g| nms(g, iou_threshold)).collect();
    sort_detections(&mut out);
    out
}

/// One "image_id class_name score x1 y1 x2 y2" line per detection.
pub fn format_detections(dets: &[Detection], classes: &[String]) -> Result<String> {
    let mut out = String::new();
    for d in dets {
        let name = classes.get(d.class).ok_or(Error::LabelOutOfRange {
            label: d.class,
            classes: classes.len(),
        })?;
        let b = d.bbox;
        let _ = writeln!(
            out,
            "{} {} {:.6} {} {} {} {}",
            d.image_id, name, d.score, b.x1, b.y1, b.x2, b.y2
        );
    }
    Ok(out)
}

pub fn write_detections(path: &Path, dets: &[Detection], classes: &[String]) -> Result<()> {
    std::fs::write(path, format_detections(dets, classes)?).map_err(|e| Error::io(path, e))
}

pub fn parse_detections(text: &str, classes: &[String], context: &str) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let perr = |message: String| Error::Parse {
            context: context.to_string(),
            line: i + 1,
            message,
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 7 {
            return Err(perr(format!("expected 7 fields, found {}", f.len())));
        }
        let class = classes
            .iter()
            .position(|c| c == f[1])
            .ok_or_else(|| Error::UnknownClass(f[1].to_string()))?;
        let score: f64 = f[2].parse().map_err(|_| perr(format!("bad score `{}`", f[2])))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(perr(format!("score {score} outside [0, 1]")));
        }
        let mut c = [0i64; 4];
        for (k, v) in f[3..7].iter().enumerate() {
            c[k] = v.parse().map_err(|_| perr(format!("bad coordinate `{v}`")))?;
        }
        out.push(Detection {
            image_id: f[0].to_string(),
            class,
            score,
            bbox: BoundingBox::from_signed(c)?,
        });
    }
    Ok(out)
}

pub fn read_detections(path: &Path, classes: &[String]) -> Result<Vec<Detection>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text, classes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(score: f64, b: [usize; 4]) -> Detection {
        Detection {
            image_id: "i".into(),
            class: 0,
            score,
            bbox: BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap(),
        }
    }

    #[test]
    fn full_image_window() {
        let img = Image::filled(40, 30, 1, 0.0).unwrap();
        let p = sliding_window_proposals(&img, &[40.0], &[1.0], 0.5).unwrap();
        // A 40x40 window clips to the full 40x30 image.
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].bbox, img.full_box());
    }

    #[test]
    fn window_counts_closed_form() {
        let img = Image::filled(50, 37, 1, 0.0).unwrap();
        for (s, r, f) in [(10.0, 1.0, 0.5), (12.0, 2.0, 0.25), (20.0, 0.5, 0.3)] {
            let p = sliding_window_proposals(&img, &[s], &[r], f).unwrap();
            let (w, h) = window_size(s, r, 50, 37);
            let (sx, sy) = (window_stride(f, w), window_stride(f, h));
            assert_eq!(p.len(), ((50 - w) / sx + 1) * ((37 - h) / sy + 1));
            assert!(p.iter().all(|q| q.bbox.fits_in(50, 37)));
        }
        assert!(sliding_window_proposals(&img, &[], &[1.0], 0.5).is_err());
    }

    #[test]
    fn blank_edge_density() {
        let img = Image::filled(32, 32, 1, 0.3).unwrap();
        let p = edge_density_proposals(&img, 20).unwrap();
        assert_eq!(p.len(), 20);
        assert!(p.iter().all(|q| q.objectness == 0.0));
        assert!(edge_density_proposals(&Image::filled(15, 32, 1, 0.0).unwrap(), 1).is_err());
    }

    #[test]
    fn centered_square_is_found() {
        let img = Image::from_fn(64, 64, 1, |x, y, _| {
            if (20..44).contains(&x) && (20..44).contains(&y) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let p = edge_density_proposals(&img, 50).unwrap();
        assert!(p.windows(2).all(|w| w[0].objectness >= w[1].objectness - 1e-6));
        let square = BoundingBox::new(20, 20, 43, 43).unwrap();
        assert!(iou(&p[0].bbox, &square) >= 0.5, "{:?}", p[0]);
    }

    #[test]
    fn proposals_file() {
        let mut dims = HashMap::new();
        dims.insert("img1".to_string(), (100, 100));
        assert!(parse_proposals("", &dims, "t").unwrap().is_empty());
        let one = parse_proposals("img1 10 10 50 50 0.9\n", &dims, "t").unwrap();
        assert_eq!(one["img1"].len(), 1);
        assert_eq!(one["img1"][0].objectness, 0.9);
        let dup = parse_proposals("img1 1 1 5 5 0.1\nimg1 1 1 5 5 0.1\n", &dims, "t").unwrap();
        assert_eq!(dup["img1"].len(), 2);
        assert!(matches!(
            parse_proposals("img1 10 10 150 50 0.9", &dims, "t"),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(matches!(
            parse_proposals("img1 10 10 50", &dims, "t"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn negatives_sizes() {
        let corpus = vec![Image::filled(20, 30, 3, 0.5).unwrap()];
        let mut rng = crate::seed::rng(3);
        assert!(sample_negatives(&corpus, 0, 8, &mut rng).unwrap().is_empty());
        let n = sample_negatives(&corpus, 10, 8, &mut rng).unwrap();
        assert!(n.iter().all(|i| i.dims() == (8, 8) && i.channels() == 3));
        assert!(sample_negatives(&corpus, 1, 21, &mut rng).is_err());
    }

    #[test]
    fn nms_basics() {
        let a = det(0.9, [0, 0, 9, 9]);
        assert_eq!(nms(&[a.clone()], 0.3), vec![a.clone()]);
        let b = det(0.8, [0, 0, 9, 9]);
        assert_eq!(nms(&[b, a.clone()], 0.3), vec![a]);
    }

    #[test]
    fn detections_round_trip() {
        let classes = vec!["cat".to_string(), "dog".to_string()];
        let mut d = det(0.1234567, [1, 2, 3, 4]);
        d.class = 1;
        let text = format_detections(&[d.clone()], &classes).unwrap();
        assert_eq!(text, "i dog 0.123457 1 2 3 4\n");
        let back = parse_detections(&text, &classes, "t").unwrap();
        assert_eq!(back[0].bbox, d.bbox);
        assert_eq!(back[0].class, 1);
        assert!((back[0].score - 0.123457).abs() < 1e-12);
    }
}
