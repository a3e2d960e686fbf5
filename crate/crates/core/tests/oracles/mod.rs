//! Independent reference implementations used as test oracles. None of
//! these call into the library's own metric code.
#![allow(dead_code)]

/// Inclusive-area IoU from raw corner tuples.
pub fn iou_ref(a: [usize; 4], b: [usize; 4]) -> f64 {
    let inter_w = (a[2].min(b[2]) as i64 - a[0].max(b[0]) as i64 + 1).max(0);
    let inter_h = (a[3].min(b[3]) as i64 - a[1].max(b[1]) as i64 + 1).max(0);
    let inter = (inter_w * inter_h) as f64;
    let area = |r: [usize; 4]| ((r[2] - r[0] + 1) * (r[3] - r[1] + 1)) as f64;
    inter / (area(a) + area(b) - inter)
}

/// Eleven-point AP using integer recall comparisons: recall ≥ i/10 is
/// `10·tp ≥ i·n_pos`.
pub fn eleven_point_ref(flags: &[bool], n_pos: usize) -> f64 {
    let mut tps = Vec::new();
    let mut tp = 0usize;
    for &f in flags {
        tp += f as usize;
        tps.push(tp);
    }
    let mut sum = 0.0;
    for i in 0..=10usize {
        let mut best = 0.0f64;
        for (k, &t) in tps.iter().enumerate() {
            if 10 * t >= i * n_pos {
                best = best.max(t as f64 / (k + 1) as f64);
            }
        }
        sum += best;
    }
    sum / 11.0
}

/// Continuous AP as the mean, over the positives, of the best precision
/// achievable at or after the rank where each is retrieved; unretrieved
/// positives contribute zero.
pub fn continuous_ref(flags: &[bool], n_pos: usize) -> f64 {
    let n = flags.len();
    let prec: Vec<f64> = (0..n)
        .map(|k| flags[..=k].iter().filter(|&&f| f).count() as f64 / (k + 1) as f64)
        .collect();
    let mut sum = 0.0;
    for k in 0..n {
        if flags[k] {
            sum += prec[k..].iter().copied().fold(0.0, f64::max);
        }
    }
    sum / n_pos as f64
}

/// Greedy NMS as a fixed point: the kept set S is the unique subset such
/// that a box is in S iff no higher-ranked member of S overlaps it by more
/// than `thr`. Found by trying every subset. `scores` must be distinct.
pub fn nms_fixed_point(boxes: &[[usize; 4]], scores: &[f64], thr: f64) -> Vec<usize> {
    let n = boxes.len();
    let higher = |a: usize, b: usize| scores[a] > scores[b];
    let mut found = None;
    for mask in 0u32..(1 << n) {
        let ok = (0..n).all(|i| {
            let in_s = mask & (1 << i) != 0;
            let blocked = (0..n).any(|j| {
                mask & (1 << j) != 0 && higher(j, i) && iou_ref(boxes[i], boxes[j]) > thr
            });
            in_s == !blocked
        });
        if ok {
            assert!(found.is_none(), "fixed point must be unique");
            found = Some(mask);
        }
    }
    let mask = found.expect("a fixed point exists");
    let mut kept: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
    kept.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    kept
}

/// Rank-greedy matching by exhaustive search: among every assignment of
/// detections (in given rank order) to distinct same-image ground truths,
/// keep the ones where each detection takes its best unclaimed candidate.
/// `ious[d][g]` is precomputed; `NAN` marks an incompatible pair.
pub fn greedy_match_ref(ious: &[Vec<f64>], thr: f64) -> Vec<bool> {
    let nd = ious.len();
    let ng = ious.first().map_or(0, |r| r.len());
    // Enumerate choice vectors: each detection picks a GT or none.
    let mut choice = vec![ng; nd];
    let total = (ng + 1).pow(nd as u32);
    let mut answers: Vec<Vec<bool>> = Vec::new();
    for code in 0..total {
        let mut c = code;
        for slot in choice.iter_mut() {
            *slot = c % (ng + 1);
            c /= ng + 1;
        }
        // Validity: consistent with the greedy semantics.
        let mut taken = vec![false; ng];
        let mut valid = true;
        let mut flags = Vec::with_capacity(nd);
        for d in 0..nd {
            let best = (0..ng)
                .filter(|&g| !taken[g] && !ious[d][g].is_nan())
                .map(|g| ious[d][g])
                .fold(f64::NEG_INFINITY, f64::max);
            let pick = choice[d];
            if pick == ng {
                // Declared FP: legal only when the best candidate is below threshold.
                if best >= thr {
                    valid = false;
                    break;
                }
                flags.push(false);
            } else {
                if taken[pick] || ious[d][pick].is_nan() || ious[d][pick] != best || best < thr {
                    valid = false;
                    break;
                }
                // Ties: the lowest index wins.
                if (0..pick).any(|g| !taken[g] && ious[d][g] == best) {
                    valid = false;
                    break;
                }
                taken[pick] = true;
                flags.push(true);
            }
        }
        if valid {
            answers.push(flags);
        }
    }
    assert_eq!(answers.len(), 1, "greedy assignment is unique");
    answers.pop().unwrap()
}

/// Dense Gauss-Jordan inverse with partial pivoting plus log|det|.
pub fn dense_inverse(a: &[f64], k: usize) -> (Vec<f64>, f64) {
    let mut m = a.to_vec();
    let mut inv: Vec<f64> = (0..k * k).map(|i| if i / k == i % k { 1.0 } else { 0.0 }).collect();
    let mut log_det = 0.0;
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&x, &y| m[x * k + col].abs().total_cmp(&m[y * k + col].abs()))
            .unwrap();
        if piv != col {
            for j in 0..k {
                m.swap(piv * k + j, col * k + j);
                inv.swap(piv * k + j, col * k + j);
            }
        }
        let p = m[col * k + col];
        log_det += p.abs().ln();
        for j in 0..k {
            m[col * k + j] /= p;
            inv[col * k + j] /= p;
        }
        for r in 0..k {
            if r != col {
                let f = m[r * k + col];
                for j in 0..k {
                    m[r * k + j] -= f * m[col * k + j];
                    inv[r * k + j] -= f * inv[col * k + j];
                }
            }
        }
    }
    (inv, log_det)
}

/// Log-density of N(mean, cov) by explicit inverse and determinant.
pub fn log_density_ref(x: &[f64], mean: &[f64], cov: &[f64]) -> f64 {
    let k = mean.len();
    let (inv, log_det) = dense_inverse(cov, k);
    let d: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    let mut q = 0.0;
    for i in 0..k {
        for j in 0..k {
            q += d[i] * inv[i * k + j] * d[j];
        }
    }
    -0.5 * (k as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + q)
}

/// Every TP/FP sequence of exactly `len` flags.
pub fn all_flag_sequences(len: usize) -> impl Iterator<Item = Vec<bool>> {
    (0u32..(1 << len)).map(move |m| (0..len).map(|i| m & (1 << i) != 0).collect())
}
