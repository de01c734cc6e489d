//! Dissection-style concept counting.
//!
//! Each channel is thresholded at its dataset-wide top-`q` activation value.
//! Connected components of the thresholded map that share at least one cell
//! with the (grid-projected) pathology boxes count as concepts:
//!
//! * Disjoint: all such components over channels and images, per image.
//! * Unique: channels with at least one such component, summed over images,
//!   per image.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::{AnnotationSet, BBox, FeatureMapStack, Manifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    pub fn as_u8(self) -> u8 {
        match self {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(Error::invalid(format!(
                "connectivity must be 4 or 8, got {v}"
            ))),
        }
    }
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.parse::<u8>()
            .map_err(|_| Error::invalid(format!("connectivity must be 4 or 8, got {s:?}")))
            .and_then(Connectivity::try_from)
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

impl Serialize for Connectivity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Connectivity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Connectivity::try_from(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DissectionConfig {
    pub q: f64,
    #[serde(default)]
    pub connectivity: Connectivity,
}

impl DissectionConfig {
    pub fn new(q: f64, connectivity: Connectivity) -> Result<Self> {
        let config = DissectionConfig { q, connectivity };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q > 0.0 && self.q < 1.0 {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "q must lie in (0, 1), got {}",
                self.q
            )))
        }
    }
}

/// 1-based rank of the threshold in the ascending sort: `ceil((1 - q) n)`,
/// kept within `[1, n]`.
pub fn threshold_rank(n: usize, q: f64) -> usize {
    (((1.0 - q) * n as f64).ceil() as usize).clamp(1, n)
}

/// Exact order statistic at [`threshold_rank`]. Reorders `values`.
pub fn quantile_threshold(values: &mut [f32], q: f64) -> Result<f32> {
    if values.is_empty() {
        return Err(Error::EmptyInput("quantile of an empty channel".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("activation values contain NaN"));
    }
    let k = threshold_rank(values.len(), q) - 1;
    let (_, tau, _) = values.select_nth_unstable_by(k, f32::total_cmp);
    Ok(*tau)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelThresholds {
    pub tau: Vec<f32>,
    /// Channels whose dataset-wide values are all equal; never detect.
    pub degenerate: Vec<bool>,
    /// Number of pooled values per channel.
    pub n_values: usize,
}

impl ChannelThresholds {
    pub fn channels(&self) -> usize {
        self.tau.len()
    }

    pub fn degenerate_channels(&self) -> Vec<usize> {
        self.degenerate
            .iter()
            .enumerate()
            .filter_map(|(c, &d)| d.then_some(c))
            .collect()
    }
}

/// Thresholds over all manifest images.
pub fn channel_thresholds(
    manifest: &Manifest,
    config: &DissectionConfig,
) -> Result<ChannelThresholds> {
    if manifest.entries.is_empty() {
        return Err(Error::EmptyInput("manifest has no images".into()));
    }
    let stacks = manifest
        .entries
        .par_iter()
        .map(|e| manifest.load_features(e))
        .collect::<Result<Vec<_>>>()?;
    channel_thresholds_from_stacks(&stacks, config)
}

pub fn channel_thresholds_from_stacks(
    stacks: &[FeatureMapStack],
    config: &DissectionConfig,
) -> Result<ChannelThresholds> {
    config.validate()?;
    let first = stacks
        .first()
        .ok_or_else(|| Error::EmptyInput("no feature maps to threshold".into()))?;
    let shape = first.shape();
    if let Some(bad) = stacks.iter().find(|s| s.shape() != shape) {
        return Err(Error::shape(format!(
            "{:?} has shape {:?}, expected {shape:?}",
            bad.image_id,
            bad.shape()
        )));
    }
    let results = (0..shape.0)
        .into_par_iter()
        .map(|c| {
            let mut values: Vec<f32> = stacks
                .iter()
                .flat_map(|s| s.channel(c).iter().copied())
                .collect();
            let (lo, hi) = values
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| {
                    (l.min(v), h.max(v))
                });
            let tau = quantile_threshold(&mut values, config.q)?;
            Ok((tau, lo == hi))
        })
        .collect::<Result<Vec<_>>>()?;
    let (tau, degenerate) = results.into_iter().unzip();
    Ok(ChannelThresholds {
        tau,
        degenerate,
        n_values: stacks.len() * first.plane_len(),
    })
}

/// Binary `H x W` map, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, cells: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 || cells.len() != height * width {
            return Err(Error::shape(format!(
                "mask of {height}x{width} cannot hold {} cells",
                cells.len()
            )));
        }
        Ok(Mask {
            height,
            width,
            cells,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            cells: vec![false; height * width],
        }
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Cells `>= tau`.
    pub fn threshold(values: &[f32], height: usize, width: usize, tau: f32) -> Self {
        Mask {
            height,
            width,
            cells: values.iter().map(|&v| v >= tau).collect(),
        }
    }

    pub fn is_superset_of(&self, other: &Mask) -> bool {
        self.cells.iter().zip(&other.cells).all(|(&a, &b)| a || !b)
    }
}

struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }
}

/// Maximal connected regions of set cells, as sorted flat indices. Components
/// are ordered by their first cell in raster order.
pub fn connected_components(mask: &Mask, connectivity: Connectivity) -> Vec<Vec<usize>> {
    let (h, w) = (mask.height, mask.width);
    let mut sets = DisjointSet::new(h * w);
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if !mask.cells[i] {
                continue;
            }
            if c > 0 && mask.cells[i - 1] {
                sets.union(i, i - 1);
            }
            if r > 0 {
                let up = i - w;
                if mask.cells[up] {
                    sets.union(i, up);
                }
                if connectivity == Connectivity::Eight {
                    if c > 0 && mask.cells[up - 1] {
                        sets.union(i, up - 1);
                    }
                    if c + 1 < w && mask.cells[up + 1] {
                        sets.union(i, up + 1);
                    }
                }
            }
        }
    }

    let mut slot_of_root = vec![usize::MAX; h * w];
    let mut components: Vec<Vec<usize>> = Vec::new();
    for i in (0..h * w).filter(|&i| mask.cells[i]) {
        let root = sets.find(i);
        if slot_of_root[root] == usize::MAX {
            slot_of_root[root] = components.len();
            components.push(Vec::new());
        }
        components[slot_of_root[root]].push(i);
    }
    components
}

/// Grid cells whose pixel footprint overlaps any box with positive area.
pub fn boxes_to_grid(
    boxes: &[BBox],
    grid_h: usize,
    grid_w: usize,
    image_h: usize,
    image_w: usize,
) -> Mask {
    let cell_h = image_h as f64 / grid_h as f64;
    let cell_w = image_w as f64 / grid_w as f64;
    let mut mask = Mask::empty(grid_h, grid_w);
    for b in boxes {
        let (rows, cols) = b.grid_span(grid_h, grid_w, cell_h, cell_w);
        for r in rows {
            mask.cells[r * grid_w + cols.start..r * grid_w + cols.end].fill(true);
        }
    }
    mask
}

/// Per-channel number of thresholded components touching `box_cells`.
pub fn detect_concepts(
    stack: &FeatureMapStack,
    thresholds: &ChannelThresholds,
    box_cells: &Mask,
    config: &DissectionConfig,
) -> Result<Vec<usize>> {
    if thresholds.channels() != stack.channels {
        return Err(Error::shape(format!(
            "{} thresholds for {} channels",
            thresholds.channels(),
            stack.channels
        )));
    }
    if (box_cells.height, box_cells.width) != (stack.height, stack.width) {
        return Err(Error::shape("box mask does not match the feature grid"));
    }
    if box_cells.count() == 0 {
        return Err(Error::invalid("no box cell on the feature grid"));
    }
    Ok((0..stack.channels)
        .map(|c| {
            if thresholds.degenerate[c] {
                return 0;
            }
            let mask = Mask::threshold(
                stack.channel(c),
                stack.height,
                stack.width,
                thresholds.tau[c],
            );
            connected_components(&mask, config.connectivity)
                .iter()
                .filter(|comp| comp.iter().any(|&i| box_cells.cells[i]))
                .count()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelDetection {
    pub channel: usize,
    pub images_with_detection: usize,
    pub total_components: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptReport {
    pub q: f64,
    pub connectivity: Connectivity,
    pub n_images: usize,
    pub disjoint: f64,
    pub unique: f64,
    pub degenerate_channels: Vec<usize>,
    pub per_channel: Vec<ChannelDetection>,
}

/// Disjoint/Unique concept counts over the manifest images that carry boxes.
/// Boxes of every label on an image form one region.
pub fn concept_report(
    manifest: &Manifest,
    annotations: &AnnotationSet,
    thresholds: &ChannelThresholds,
    config: &DissectionConfig,
) -> Result<ConceptReport> {
    config.validate()?;
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
    let [_, grid_h, grid_w] = manifest.layer_shape;
    let per_image = annotated
        .par_iter()
        .map(|(entry, boxes)| {
            let stack = manifest.load_features(entry)?;
            let cells = boxes_to_grid(
                boxes,
                grid_h,
                grid_w,
                manifest.image_height,
                manifest.image_width,
            );
            detect_concepts(&stack, thresholds, &cells, config)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(&per_image, thresholds, config))
}

/// Folds per-image, per-channel counts into a report, in image order.
pub fn summarize(
    per_image: &[Vec<usize>],
    thresholds: &ChannelThresholds,
    config: &DissectionConfig,
) -> ConceptReport {
    let channels = thresholds.channels();
    let mut per_channel: Vec<ChannelDetection> = (0..channels)
        .map(|channel| ChannelDetection {
            channel,
            images_with_detection: 0,
            total_components: 0,
        })
        .collect();
    let mut disjoint = 0usize;
    let mut unique = 0usize;
    for counts in per_image {
        for (slot, &n) in per_channel.iter_mut().zip(counts) {
            slot.total_components += n;
            slot.images_with_detection += usize::from(n > 0);
            disjoint += n;
            unique += usize::from(n > 0);
        }
    }
    let n_images = per_image.len();
    ConceptReport {
        q: config.q,
        connectivity: config.connectivity,
        n_images,
        disjoint: disjoint as f64 / n_images as f64,
        unique: unique as f64 / n_images as f64,
        degenerate_channels: thresholds.degenerate_channels(),
        per_channel,
    }
}
