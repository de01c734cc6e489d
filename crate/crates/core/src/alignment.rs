//! Soft IoBB / IoR between normalized CAMs and pathology boxes.
//!
//! With `U` the pixel union of the boxes and `m` a heatmap in `[0, 1]`:
//! IoBB = sum_U m / |U| (soft recall of the box region) and
//! IoR = sum_U m / sum m (soft precision of the salient mass).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cam::{image_heatmap, CamOrder, HeadWeights, Heatmap, Resolution};
use crate::error::{Error, Result};
use crate::tensor_io::{AnnotationSet, BBox, Manifest};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    pub iobb: f64,
    pub ior: f64,
    /// Pixels in the box union.
    pub box_area: usize,
    pub total_mass: f64,
    /// Set when the map has no mass; `ior` is then reported as 0.
    pub zero_mass: bool,
}

/// Row-major mask of the pixels covered by any of `boxes`.
pub fn box_union_mask(height: usize, width: usize, boxes: &[BBox]) -> Vec<bool> {
    let mut mask = vec![false; height * width];
    for b in boxes {
        let (rows, cols) = b.grid_span(height, width, 1.0, 1.0);
        for r in rows {
            mask[r * width + cols.start..r * width + cols.end].fill(true);
        }
    }
    mask
}

pub fn score(map: &Heatmap, boxes: &[BBox]) -> Result<AlignmentScore> {
    if boxes.is_empty() {
        return Err(Error::invalid("alignment needs at least one box"));
    }
    if map.resolution() != Resolution::ImagePixels {
        return Err(Error::invalid(
            "alignment scores need a heatmap at image resolution",
        ));
    }
    let mask = box_union_mask(map.height(), map.width(), boxes);
    let mut inside = 0.0;
    let mut total = 0.0;
    let mut area = 0usize;
    for (&v, &m) in map.values().iter().zip(&mask) {
        total += v;
        if m {
            inside += v;
            area += 1;
        }
    }
    if area == 0 {
        return Err(Error::invalid("boxes cover no pixel of the heatmap"));
    }
    let zero_mass = total == 0.0;
    Ok(AlignmentScore {
        iobb: inside / area as f64,
        ior: if zero_mass { 0.0 } else { inside / total },
        box_area: area,
        total_mass: total,
        zero_mass,
    })
}

pub fn soft_iobb(map: &Heatmap, boxes: &[BBox]) -> Result<f64> {
    score(map, boxes).map(|s| s.iobb)
}

pub fn soft_ior(map: &Heatmap, boxes: &[BBox]) -> Result<f64> {
    score(map, boxes).map(|s| s.ior)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAlignment {
    pub class: String,
    pub n_pairs: usize,
    pub mean_iobb: f64,
    pub mean_ior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallAlignment {
    pub mean_iobb: f64,
    pub mean_ior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub per_class: Vec<ClassAlignment>,
    pub overall: OverallAlignment,
    pub zero_mass_count: usize,
}

/// One scored `(image, class)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScore {
    pub image_id: String,
    pub class_index: usize,
    pub score: AlignmentScore,
}

/// Boxes of one image grouped by manifest class, in class order.
pub fn boxes_by_class<'a>(
    manifest: &Manifest,
    boxes: &'a [BBox],
) -> Result<Vec<(usize, Vec<&'a BBox>)>> {
    let mut groups: Vec<Vec<&BBox>> = vec![Vec::new(); manifest.num_classes()];
    for b in boxes {
        let k = manifest.class_index(&b.label).ok_or_else(|| {
            Error::invalid(format!(
                "annotated class {:?} is not in the manifest",
                b.label
            ))
        })?;
        groups[k].push(b);
    }
    Ok(groups
        .into_iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .collect())
}

pub(crate) fn check_head(manifest: &Manifest, head: &HeadWeights) -> Result<()> {
    if head.classes() != manifest.num_classes() || head.channels() != manifest.layer_shape[0] {
        return Err(Error::shape(format!(
            "head is {}x{}, manifest has {} classes and {} channels",
            head.classes(),
            head.channels(),
            manifest.num_classes(),
            manifest.layer_shape[0]
        )));
    }
    Ok(())
}

/// Scores every annotated `(image, class)` pair, in manifest then class order.
pub fn score_pairs(
    manifest: &Manifest,
    annotations: &AnnotationSet,
    head: &HeadWeights,
    order: CamOrder,
) -> Result<Vec<PairScore>> {
    check_head(manifest, head)?;
    let annotated: Vec<_> = manifest
        .entries
        .iter()
        .filter_map(|e| annotations.get(&e.image_id).map(|b| (e, b)))
        .collect();
    if annotated.is_empty() {
        return Err(Error::EmptyInput(
            "no manifest image has box annotations".into(),
        ));
    }
    let per_image: Vec<Vec<PairScore>> = annotated
        .par_iter()
        .map(|(entry, boxes)| {
            let features = manifest.load_features(entry)?;
            boxes_by_class(manifest, boxes)?
                .into_iter()
                .map(|(k, group)| {
                    let map = image_heatmap(
                        &features,
                        head,
                        k,
                        manifest.image_height,
                        manifest.image_width,
                        order,
                    )?;
                    let owned: Vec<BBox> = group.into_iter().cloned().collect();
                    Ok(PairScore {
                        image_id: entry.image_id.clone(),
                        class_index: k,
                        score: score(&map, &owned)?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

/// Per-class and grand means of IoBB/IoR over all annotated pairs. The grand
/// mean weights every pair equally.
pub fn aggregate_alignment(
    manifest: &Manifest,
    annotations: &AnnotationSet,
    head: &HeadWeights,
    order: CamOrder,
) -> Result<AlignmentReport> {
    let pairs = score_pairs(manifest, annotations, head, order)?;
    Ok(summarize(manifest, &pairs))
}

pub fn summarize(manifest: &Manifest, pairs: &[PairScore]) -> AlignmentReport {
    let m = manifest.num_classes();
    let mut sums = vec![(0usize, 0.0f64, 0.0f64); m];
    let (mut iobb_total, mut ior_total) = (0.0, 0.0);
    let mut zero_mass_count = 0;
    for p in pairs {
        let s = &mut sums[p.class_index];
        s.0 += 1;
        s.1 += p.score.iobb;
        s.2 += p.score.ior;
        iobb_total += p.score.iobb;
        ior_total += p.score.ior;
        zero_mass_count += usize::from(p.score.zero_mass);
    }
    let n = pairs.len().max(1) as f64;
    AlignmentReport {
        per_class: sums
            .iter()
            .enumerate()
            .filter(|(_, s)| s.0 > 0)
            .map(|(k, &(count, iobb, ior))| ClassAlignment {
                class: manifest.class_names[k].clone(),
                n_pairs: count,
                mean_iobb: iobb / count as f64,
                mean_ior: ior / count as f64,
            })
            .collect(),
        overall: OverallAlignment {
            mean_iobb: iobb_total / n,
            mean_ior: ior_total / n,
        },
        zero_mass_count,
    }
}
