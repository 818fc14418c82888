//! Detection evaluation: IoU, greedy matching, all-point AP and mAP over a
//! range of IoU thresholds.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Number of IoU thresholds in 0.50:0.95:0.05.
pub const COCO_THRESHOLD_COUNT: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageId {
    Num(i64),
    Name(String),
}

impl From<i64> for ImageId {
    fn from(v: i64) -> Self {
        ImageId::Num(v)
    }
}

impl From<&str> for ImageId {
    fn from(v: &str) -> Self {
        ImageId::Name(v.to_string())
    }
}

/// Corner-form box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[T; 4]", into = "[T; 4]")]
pub struct BBox<T: Copy> {
    pub x_min: T,
    pub y_min: T,
    pub x_max: T,
    pub y_max: T,
}

impl<T: Copy> From<[T; 4]> for BBox<T> {
    fn from([x_min, y_min, x_max, y_max]: [T; 4]) -> Self {
        BBox { x_min, y_min, x_max, y_max }
    }
}

impl<T: Copy> From<BBox<T>> for [T; 4] {
    fn from(b: BBox<T>) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

impl<T: Real> BBox<T> {
    pub fn new(x_min: T, y_min: T, x_max: T, y_max: T) -> Self {
        BBox { x_min, y_min, x_max, y_max }
    }

    pub fn is_valid(&self) -> bool {
        self.x_max >= self.x_min && self.y_max >= self.y_min
    }

    pub fn area(&self) -> T {
        (self.x_max - self.x_min).max(T::zero()) * (self.y_max - self.y_min).max(T::zero())
    }
}

pub fn iou<T: Real>(a: &BBox<T>, b: &BBox<T>) -> T {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(T::zero());
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(T::zero());
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union > T::zero() {
        (inter / union).min(T::one())
    } else {
        T::zero()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth<T: Copy> {
    pub image_id: ImageId,
    pub class_index: usize,
    #[serde(rename = "box")]
    pub bbox: BBox<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction<T: Copy> {
    pub image_id: ImageId,
    pub class_index: usize,
    #[serde(rename = "box")]
    pub bbox: BBox<T>,
    pub score: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchedPrediction {
    /// Index into the prediction slice.
    pub prediction: usize,
    pub is_tp: bool,
    /// Index of the matched ground truth, if any.
    pub ground_truth: Option<usize>,
}

/// Prediction indices by descending score; equal scores keep input order.
pub fn score_order<T: Real>(preds: &[Prediction<T>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .score
            .partial_cmp(&preds[a].score)
            .unwrap_or(Ordering::Equal)
    });
    order
}

/// Greedy matching in score order. Each prediction takes the unmatched
/// same-image, same-class ground truth with the highest IoU (lowest index on
/// ties), provided that IoU reaches `iou_threshold`.
pub fn match_predictions<T: Real>(
    preds: &[Prediction<T>],
    gts: &[GroundTruth<T>],
    iou_threshold: T,
) -> Vec<MatchedPrediction> {
    let mut taken = vec![false; gts.len()];
    score_order(preds)
        .into_iter()
        .map(|pi| {
            let p = &preds[pi];
            let mut best: Option<(usize, T)> = None;
            for (gi, g) in gts.iter().enumerate() {
                if taken[gi] || g.image_id != p.image_id || g.class_index != p.class_index {
                    continue;
                }
                let overlap = iou(&p.bbox, &g.bbox);
                if overlap >= iou_threshold && best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((gi, overlap));
                }
            }
            if let Some((gi, _)) = best {
                taken[gi] = true;
            }
            MatchedPrediction {
                prediction: pi,
                is_tp: best.is_some(),
                ground_truth: best.map(|(gi, _)| gi),
            }
        })
        .collect()
}

/// All-point interpolated AP: area under the monotone precision envelope of
/// the cumulative precision/recall curve. `flags` must be in score order.
pub fn average_precision<T: Real>(flags: &[bool], n_gt: usize) -> T {
    if n_gt == 0 {
        return if flags.is_empty() { T::one() } else { T::zero() };
    }
    let n_gt = T::from_count(n_gt);
    let mut precision = Vec::with_capacity(flags.len());
    let mut recall = Vec::with_capacity(flags.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &hit in flags {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(T::from_count(tp) / T::from_count(tp + fp));
        recall.push(T::from_count(tp) / n_gt);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = T::zero();
    let mut prev_recall = T::zero();
    for (p, r) in precision.into_iter().zip(recall) {
        ap = ap + (r - prev_recall) * p;
        prev_recall = r;
    }
    ap
}

/// Arithmetic mean of per-class APs.
pub fn mean_ap<T: Real>(per_class_ap: &[T]) -> Result<T> {
    if per_class_ap.is_empty() {
        return Err(Error::UndefinedMetric("mAP over zero classes".into()));
    }
    let sum = per_class_ap.iter().fold(T::zero(), |acc, &v| acc + v);
    Ok(sum / T::from_count(per_class_ap.len()))
}

/// 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds<T: Real>() -> Vec<T> {
    (0..COCO_THRESHOLD_COUNT)
        .map(|k| T::lit((50 + 5 * k) as f64 / 100.0))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Drop classes with neither ground truth nor predictions from the mean.
    pub exclude_vacuous: bool,
    /// Evaluate classes `0..n` even when absent from both inputs.
    pub num_classes: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            exclude_vacuous: true,
            num_classes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAp<T> {
    pub class_index: usize,
    pub n_gt: usize,
    pub n_pred: usize,
    /// AP at each threshold, aligned with `EvalResult::thresholds`.
    pub ap: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult<T> {
    pub thresholds: Vec<T>,
    pub per_class: Vec<ClassAp<T>>,
    pub map_per_threshold: Vec<T>,
    pub map_50: T,
    pub map_50_95: T,
}

/// AP for one class at one threshold.
pub fn class_ap<T: Real>(preds: &[Prediction<T>], gts: &[GroundTruth<T>], iou_threshold: T) -> T {
    let flags: Vec<bool> = match_predictions(preds, gts, iou_threshold)
        .into_iter()
        .map(|m| m.is_tp)
        .collect();
    average_precision(&flags, gts.len())
}

pub fn map_over_range<T: Real>(
    preds: &[Prediction<T>],
    gts: &[GroundTruth<T>],
    thresholds: &[T],
    options: EvalOptions,
) -> Result<EvalResult<T>> {
    if thresholds.is_empty() {
        return Err(Error::UndefinedMetric("no IoU thresholds".into()));
    }
    let half = T::lit(0.5);
    let Some(i50) = thresholds.iter().position(|&t| t == half) else {
        return Err(Error::UndefinedMetric("threshold list lacks 0.5".into()));
    };
    let classes: BTreeSet<usize> = preds
        .iter()
        .map(|p| p.class_index)
        .chain(gts.iter().map(|g| g.class_index))
        .chain(0..options.num_classes.unwrap_or(0))
        .collect();

    let mut per_class = Vec::with_capacity(classes.len());
    for &c in &classes {
        let cp: Vec<Prediction<T>> = preds.iter().filter(|p| p.class_index == c).cloned().collect();
        let cg: Vec<GroundTruth<T>> = gts.iter().filter(|g| g.class_index == c).cloned().collect();
        per_class.push(ClassAp {
            class_index: c,
            n_gt: cg.len(),
            n_pred: cp.len(),
            ap: thresholds.iter().map(|&t| class_ap(&cp, &cg, t)).collect(),
        });
    }

    let counted: Vec<&ClassAp<T>> = per_class
        .iter()
        .filter(|c| !(options.exclude_vacuous && c.n_gt == 0 && c.n_pred == 0))
        .collect();
    let map_per_threshold = (0..thresholds.len())
        .map(|ti| mean_ap(&counted.iter().map(|c| c.ap[ti]).collect::<Vec<_>>()))
        .collect::<Result<Vec<T>>>()?;
    let map_50_95 = mean_ap(&map_per_threshold)?;
    Ok(EvalResult {
        thresholds: thresholds.to_vec(),
        map_50: map_per_threshold[i50],
        per_class,
        map_per_threshold,
        map_50_95,
    })
}

/// Records with their 1-based line numbers; blank lines are skipped.
fn parse_lines<R: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<(usize, R)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map(|r| (i + 1, r)).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn check_box<T: Real>(b: &BBox<T>, line: usize) -> Result<()> {
    if b.is_valid() {
        Ok(())
    } else {
        Err(Error::Parse {
            line,
            message: "box has x_max < x_min or y_max < y_min".into(),
        })
    }
}

pub fn parse_predictions<T: Real + for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<Prediction<T>>> {
    let preds: Vec<(usize, Prediction<T>)> = parse_lines(text)?;
    for (line, p) in &preds {
        check_box(&p.bbox, *line)?;
        if !(p.score >= T::zero() && p.score <= T::one()) {
            return Err(Error::Parse {
                line: *line,
                message: format!("score {} outside [0, 1]", p.score),
            });
        }
    }
    Ok(preds.into_iter().map(|(_, p)| p).collect())
}

pub fn parse_ground_truths<T: Real + for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<GroundTruth<T>>> {
    let gts: Vec<(usize, GroundTruth<T>)> = parse_lines(text)?;
    for (line, g) in &gts {
        check_box(&g.bbox, *line)?;
    }
    Ok(gts.into_iter().map(|(_, g)| g).collect())
}
