//! Reference computations shared by the test targets of both crates.
#![allow(dead_code)]

use crosswalk::detmetrics::iou;
use crosswalk::{Demographics, GroundTruth, PedestrianType, Prediction};

/// Fixed-time stranding probability with deterministic speeds, by midpoint
/// integration over crosswalk length and entry delay.
pub fn cv0_fixed_stranding(demo: &Demographics, design_speed: f64, buffer: f64) -> f64 {
    const NL: usize = 3000;
    const ND: usize = 600;
    let mut total = 0.0;
    for (ty, p) in [
        (PedestrianType::GeneralAdult, demo.p_general),
        (PedestrianType::Elderly, demo.p_elderly),
        (PedestrianType::Wheelchair, demo.p_wheelchair),
    ] {
        let v = ty.nominal_speed();
        let mut hits = 0usize;
        for i in 0..NL {
            let length = 30.0 + 30.0 * (i as f64 + 0.5) / NL as f64;
            for j in 0..ND {
                let delay = 3.0 * (j as f64 + 0.5) / ND as f64;
                if delay + length / v > length / design_speed + buffer {
                    hits += 1;
                }
            }
        }
        total += p * hits as f64 / (NL * ND) as f64;
    }
    total
}

/// Counts unit cells covered by both boxes; integer corners only.
pub fn raster_iou(a: [i32; 4], b: [i32; 4]) -> f64 {
    let inside = |r: [i32; 4], x: i32, y: i32| x >= r[0] && x < r[2] && y >= r[1] && y < r[3];
    let (mut inter, mut union) = (0u32, 0u32);
    for x in 0..40 {
        for y in 0..40 {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += (ia && ib) as u32;
            union += (ia || ib) as u32;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Lexicographically best assignment over all injective pred-to-GT maps:
/// earlier predictions (by score) first prefer a match, then a higher IoU,
/// then a lower GT index.
pub fn brute_force_flags(preds: &[Prediction], gts: &[GroundTruth], threshold: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.partial_cmp(&preds[a].score).unwrap());
    let options: Vec<Vec<Option<usize>>> = order
        .iter()
        .map(|&pi| {
            let p = &preds[pi];
            let mut o = vec![None];
            o.extend((0..gts.len()).filter(|&gi| {
                let g = &gts[gi];
                g.image_id == p.image_id && g.class_index == p.class_index && iou(&p.bbox, &g.bbox) >= threshold
            }).map(Some));
            o
        })
        .collect();

    type Key = Vec<(u8, f64, i64)>;
    let mut best: Option<(Key, Vec<Option<usize>>)> = None;
    let mut choice = vec![0usize; order.len()];
    loop {
        let assignment: Vec<Option<usize>> = choice.iter().zip(&options).map(|(&c, o)| o[c]).collect();
        let used: Vec<usize> = assignment.iter().flatten().copied().collect();
        let mut dedup = used.clone();
        dedup.sort();
        dedup.dedup();
        if dedup.len() == used.len() {
            let key: Key = assignment
                .iter()
                .zip(&order)
                .map(|(a, &pi)| match a {
                    Some(gi) => (1, iou(&preds[pi].bbox, &gts[*gi].bbox), -(*gi as i64)),
                    None => (0, 0.0, 0),
                })
                .collect();
            if best.as_ref().is_none_or(|(k, _)| key.partial_cmp(k) == Some(std::cmp::Ordering::Greater)) {
                best = Some((key, assignment));
            }
        }
        // odometer over choices
        let mut i = 0;
        loop {
            if i == choice.len() {
                let (_, a) = best.unwrap();
                return a.iter().map(Option::is_some).collect();
            }
            choice[i] += 1;
            if choice[i] < options[i].len() {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

/// Sum over true positives of the best precision at or beyond their rank.
pub fn oracle_ap(flags: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if flags.is_empty() { 1.0 } else { 0.0 };
    }
    let mut precision = Vec::new();
    let mut tp = 0;
    for (i, f) in flags.iter().enumerate() {
        tp += *f as usize;
        precision.push(tp as f64 / (i + 1) as f64);
    }
    let mut ap = 0.0;
    for (i, f) in flags.iter().enumerate() {
        if *f {
            ap += precision[i..].iter().cloned().fold(0.0, f64::max) / n_gt as f64;
        }
    }
    ap
}

pub fn oracle_map(preds: &[Prediction], gts: &[GroundTruth], threshold: f64) -> f64 {
    let mut classes: Vec<usize> = preds.iter().map(|p| p.class_index).chain(gts.iter().map(|g| g.class_index)).collect();
    classes.sort();
    classes.dedup();
    let aps: Vec<f64> = classes
        .iter()
        .map(|&c| {
            let cp: Vec<Prediction> = preds.iter().filter(|p| p.class_index == c).cloned().collect();
            let cg: Vec<GroundTruth> = gts.iter().filter(|g| g.class_index == c).cloned().collect();
            oracle_ap(&brute_force_flags(&cp, &cg, threshold), cg.len())
        })
        .collect();
    aps.iter().sum::<f64>() / aps.len() as f64
}

