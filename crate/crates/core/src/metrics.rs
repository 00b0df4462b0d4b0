//! Region attention scores, per-layer profiles and box localization
//! metrics.

use serde::{Deserialize, Serialize};

use crate::boxes::{BoundingBox, BoxSet};
use crate::bundle::{AttentionBundle, Geometry, TokenRef};
use crate::error::{Error, Result};
use crate::map::AttentionMap;
use crate::regions::{scale_span, Patch};

/// A ground-truth pixel rectangle and the patches it touches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub rect: (u32, u32, u32, u32),
    patches: Vec<Patch>,
}

impl Region {
    /// Every patch whose pixel footprint overlaps the half-open rectangle.
    pub fn from_pixel_rect(x1: u32, y1: u32, x2: u32, y2: u32, geometry: &Geometry) -> Result<Self> {
        let mut patches = Vec::new();
        for y in 0..geometry.patch_rows {
            let (py1, py2) = scale_span(y, y + 1, geometry.image_height, geometry.patch_rows);
            if !(py1 < y2 && y1 < py2) {
                continue;
            }
            for x in 0..geometry.patch_cols {
                let (px1, px2) = scale_span(x, x + 1, geometry.image_width, geometry.patch_cols);
                if px1 < x2 && x1 < px2 {
                    patches.push(Patch { y, x });
                }
            }
        }
        Self::from_patches((x1, y1, x2, y2), patches)
    }

    /// A region given directly in patch coordinates.
    pub fn from_patches(rect: (u32, u32, u32, u32), patches: Vec<Patch>) -> Result<Self> {
        if patches.is_empty() {
            return Err(Error::Validation(format!("region {rect:?} covers no patches")));
        }
        Ok(Self { rect, patches })
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    fn check_within(&self, map: &AttentionMap) -> Result<()> {
        match self.patches.iter().find(|p| p.y >= map.rows() || p.x >= map.cols()) {
            Some(p) => Err(Error::Validation(format!(
                "region patch ({}, {}) outside the {}x{} grid",
                p.x,
                p.y,
                map.cols(),
                map.rows()
            ))),
            None => Ok(()),
        }
    }
}

/// Attention values inside `region`, row-major.
pub fn region_attention(map: &AttentionMap, region: &Region) -> Result<Vec<f64>> {
    region.check_within(map)?;
    Ok(region.patches.iter().map(|p| map.get(p.y, p.x) as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupLabel {
    Semantic,
    NonSemantic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGroup {
    pub label: GroupLabel,
    pub members: Vec<TokenRef>,
}

/// Mean attention of a token group over a region: the sum over tokens and
/// region patches divided by `|tokens| · |region|`.
pub fn mean_group_score(maps: &[&AttentionMap], region: &Region) -> Result<f64> {
    if maps.is_empty() {
        return Err(Error::Validation("token group is empty".into()));
    }
    let mut total = 0.0;
    for m in maps {
        maps[0].ensure_same_shape(m, "group score")?;
        total += region_attention(m, region)?.iter().sum::<f64>();
    }
    Ok(total / (maps.len() * region.len()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerScores {
    pub layer: u32,
    pub scores: Vec<(GroupLabel, f64)>,
}

/// Group scores at every layer, ordered by layer index.
pub fn layer_profile(bundles: &[AttentionBundle], region: &Region, groups: &[TokenGroup]) -> Result<Vec<LayerScores>> {
    let first = bundles
        .first()
        .ok_or_else(|| Error::Validation("layer profile needs at least one bundle".into()))?;
    let geometry = first.geometry();
    let mut sorted: Vec<&AttentionBundle> = bundles.iter().collect();
    sorted.sort_by_key(|b| b.layer);

    sorted
        .into_iter()
        .map(|bundle| {
            if bundle.geometry() != geometry {
                return Err(Error::Validation(format!(
                    "layer {} has geometry {:?}, expected {:?}",
                    bundle.layer,
                    bundle.geometry(),
                    geometry
                )));
            }
            let scores = groups
                .iter()
                .map(|g| {
                    let maps = g
                        .members
                        .iter()
                        .map(|t| {
                            bundle.find(t).ok_or_else(|| {
                                Error::Validation(format!(
                                    "token {:?} at position {} missing from layer {}",
                                    t.text, t.position, bundle.layer
                                ))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok((g.label, mean_group_score(&maps, region)?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(LayerScores {
                layer: bundle.layer,
                scores,
            })
        })
        .collect()
}

pub fn intersection_area(a: &BoundingBox, b: &BoundingBox) -> u64 {
    let w = a.x2.min(b.x2).saturating_sub(a.x1.max(b.x1)) as u64;
    let h = a.y2.min(b.y2).saturating_sub(a.y1.max(b.y1)) as u64;
    w * h
}

/// Intersection over union of two half-open boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("IoU threshold must lie in (0, 1], got {threshold}")))
    }
}

/// Greedy one-to-one matching: ground-truth boxes are visited in order and
/// each takes the unused prediction of highest IoU (lowest index on ties)
/// if that IoU reaches `threshold`. Returns the matched prediction per
/// ground-truth box.
pub fn greedy_match(pred: &[BoundingBox], gt: &[BoundingBox], threshold: f64) -> Vec<Option<usize>> {
    let mut used = vec![false; pred.len()];
    gt.iter()
        .map(|g| {
            let mut best: Option<(usize, f64)> = None;
            for (i, p) in pred.iter().enumerate() {
                if used[i] {
                    continue;
                }
                let v = iou(p, g);
                if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((i, v));
                }
            }
            best.map(|(i, _)| {
                used[i] = true;
                i
            })
        })
        .collect()
}

/// Fraction of ground-truth boxes matched at `threshold`.
pub fn recall_at_iou(pred: &BoxSet, gt: &BoxSet, threshold: f64) -> Result<f64> {
    check_threshold(threshold)?;
    if gt.is_empty() {
        return Err(Error::Validation("ground truth has no boxes".into()));
    }
    let matched = greedy_match(&pred.boxes, &gt.boxes, threshold)
        .iter()
        .filter(|m| m.is_some())
        .count();
    Ok(matched as f64 / gt.len() as f64)
}

/// Mean over ground-truth boxes of the best IoU with any prediction.
pub fn mean_best_iou(pred: &BoxSet, gt: &BoxSet) -> Result<f64> {
    if gt.is_empty() {
        return Err(Error::Validation("ground truth has no boxes".into()));
    }
    let total: f64 = gt
        .boxes
        .iter()
        .map(|g| pred.boxes.iter().map(|p| iou(p, g)).fold(0.0, f64::max))
        .sum();
    Ok(total / gt.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub id: String,
    pub recall: f64,
    pub mean_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub samples: Vec<SampleEval>,
    pub mean_recall: f64,
    pub mean_iou: f64,
}

/// Scores `(id, prediction, ground truth)` triples. Samples without
/// ground-truth boxes are left out.
pub fn evaluate<'a>(
    pairs: impl IntoIterator<Item = (String, &'a BoxSet, &'a BoxSet)>,
    threshold: f64,
) -> Result<EvalReport> {
    check_threshold(threshold)?;
    let mut samples = Vec::new();
    for (id, pred, gt) in pairs {
        if gt.is_empty() {
            continue;
        }
        samples.push(SampleEval {
            id,
            recall: recall_at_iou(pred, gt, threshold)?,
            mean_iou: mean_best_iou(pred, gt)?,
        });
    }
    let n = samples.len().max(1) as f64;
    Ok(EvalReport {
        iou_threshold: threshold,
        mean_recall: samples.iter().map(|s| s.recall).sum::<f64>() / n,
        mean_iou: samples.iter().map(|s| s.mean_iou).sum::<f64>() / n,
        samples,
    })
}
