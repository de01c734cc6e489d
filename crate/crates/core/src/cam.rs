//! Class activation maps: head-weighted sums of the final feature maps,
//! rectified, normalized per map and upsampled to image resolution.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::{read_tensor, FeatureMapStack, Tensor};

/// Linear classifier head over globally pooled channels, `M x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    classes: usize,
    channels: usize,
    weights: Vec<f32>,
    bias: Option<Vec<f32>>,
}

impl HeadWeights {
    pub fn new(
        classes: usize,
        channels: usize,
        weights: Vec<f32>,
        bias: Option<Vec<f32>>,
    ) -> Result<Self> {
        if classes == 0 || channels == 0 {
            return Err(Error::shape(
                "head needs at least one class and one channel",
            ));
        }
        if weights.len() != classes * channels {
            return Err(Error::shape(format!(
                "head has {} weights, expected {classes}x{channels}",
                weights.len()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != classes {
                return Err(Error::shape(format!(
                    "bias has {} entries for {classes} classes",
                    b.len()
                )));
            }
        }
        Ok(HeadWeights {
            classes,
            channels,
            weights,
            bias,
        })
    }

    pub fn from_tensors(weights: Tensor, bias: Option<Tensor>) -> Result<Self> {
        let &[classes, channels] = weights.dims() else {
            return Err(Error::shape(format!(
                "head tensor must be 2-D [M, C], got {:?}",
                weights.dims()
            )));
        };
        let bias = bias.map(Tensor::into_data);
        Self::new(classes, channels, weights.into_data(), bias)
    }

    pub fn load(path: impl AsRef<Path>, bias: Option<&Path>) -> Result<Self> {
        let weights = read_tensor(path)?;
        let bias = bias.map(read_tensor).transpose()?;
        Self::from_tensors(weights, bias)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn row(&self, class_index: usize) -> &[f32] {
        &self.weights[class_index * self.channels..(class_index + 1) * self.channels]
    }

    pub fn bias(&self) -> Option<&[f32]> {
        self.bias.as_deref()
    }

    /// Returns a copy with the weights of one class multiplied by `factor`.
    pub fn scaled_class(&self, class_index: usize, factor: f32) -> Self {
        let mut out = self.clone();
        out.weights[class_index * self.channels..(class_index + 1) * self.channels]
            .iter_mut()
            .for_each(|w| *w *= factor);
        out
    }

    /// Logits from global-average-pooled features: `W . mean_hw(A) + b`.
    pub fn logits(&self, features: &FeatureMapStack) -> Result<Vec<f64>> {
        self.check_channels(features)?;
        let n = features.plane_len() as f64;
        let pooled: Vec<f64> = (0..features.channels)
            .map(|c| features.channel(c).iter().map(|&v| v as f64).sum::<f64>() / n)
            .collect();
        Ok((0..self.classes)
            .map(|k| {
                let dot: f64 = self
                    .row(k)
                    .iter()
                    .zip(&pooled)
                    .map(|(&w, &a)| w as f64 * a)
                    .sum();
                dot + self.bias.as_ref().map_or(0.0, |b| b[k] as f64)
            })
            .collect())
    }

    fn check_channels(&self, features: &FeatureMapStack) -> Result<()> {
        if features.channels != self.channels {
            return Err(Error::shape(format!(
                "head expects {} channels, features of {:?} have {}",
                self.channels, features.image_id, features.channels
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    FeatureGrid,
    ImagePixels,
}

/// Unnormalized single-channel map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub resolution: Resolution,
}

impl RawMap {
    pub fn new(
        height: usize,
        width: usize,
        values: Vec<f64>,
        resolution: Resolution,
    ) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::shape(format!(
                "map of {height}x{width} cannot hold {} values",
                values.len()
            )));
        }
        Ok(RawMap {
            height,
            width,
            values,
            resolution,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn upsample(&self, target_h: usize, target_w: usize) -> Result<RawMap> {
        let values = bilinear(&self.values, self.height, self.width, target_h, target_w)?;
        Ok(RawMap {
            height: target_h,
            width: target_w,
            values,
            resolution: Resolution::ImagePixels,
        })
    }
}

/// Map with values in `[0, 1]`; max is 1 unless the map is identically 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    resolution: Resolution,
}

impl Heatmap {
    /// Wraps values already in `[0, 1]`.
    pub fn new(
        height: usize,
        width: usize,
        values: Vec<f64>,
        resolution: Resolution,
    ) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::shape(format!(
                "heatmap of {height}x{width} cannot hold {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("heatmap values must lie in [0, 1]"));
        }
        Ok(Heatmap {
            height,
            width,
            values,
            resolution,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width],
            self.values.iter().map(|&v| v as f32).collect(),
        )
        .expect("heatmap extents are nonzero")
    }

    /// 8-bit binary PGM (`P5`) rendering.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.values.iter().map(|&v| (v * 255.0).round() as u8));
        out
    }
}

/// Weighted channel sum before rectification.
pub fn cam_unrectified(
    features: &FeatureMapStack,
    head: &HeadWeights,
    class_index: usize,
) -> Result<RawMap> {
    if class_index >= head.classes {
        return Err(Error::invalid(format!(
            "class index {class_index} out of range for {} classes",
            head.classes
        )));
    }
    head.check_channels(features)?;
    let mut values = vec![0.0f64; features.plane_len()];
    for (c, &w) in head.row(class_index).iter().enumerate() {
        let w = w as f64;
        for (acc, &a) in values.iter_mut().zip(features.channel(c)) {
            *acc += w * a as f64;
        }
    }
    RawMap::new(
        features.height,
        features.width,
        values,
        Resolution::FeatureGrid,
    )
}

/// `max(0, sum_c head[class, c] * features[c])`.
pub fn compute_cam(
    features: &FeatureMapStack,
    head: &HeadWeights,
    class_index: usize,
) -> Result<RawMap> {
    let mut map = cam_unrectified(features, head, class_index)?;
    map.values.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(map)
}

/// Min-max normalization to `[0, 1]`; a constant map becomes all zeros.
pub fn normalize_map(raw: &RawMap) -> Heatmap {
    let (min, max) = raw
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = max - min;
    let values = if range > 0.0 {
        raw.values
            .iter()
            .map(|&v| ((v - min) / range).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; raw.values.len()]
    };
    Heatmap {
        height: raw.height,
        width: raw.width,
        values,
        resolution: raw.resolution,
    }
}

/// Bilinear resampling with half-pixel centers: output pixel `i` samples the
/// source at `(i + 0.5) * src / dst - 0.5`, clamped to the source extent.
pub fn upsample_bilinear(map: &Heatmap, target_h: usize, target_w: usize) -> Result<Heatmap> {
    let values = bilinear(&map.values, map.height, map.width, target_h, target_w)?;
    Ok(Heatmap {
        height: target_h,
        width: target_w,
        values,
        resolution: Resolution::ImagePixels,
    })
}

fn bilinear(src: &[f64], sh: usize, sw: usize, th: usize, tw: usize) -> Result<Vec<f64>> {
    if th < sh || tw < sw {
        return Err(Error::invalid(format!(
            "upsampling target {th}x{tw} is smaller than source {sh}x{sw}"
        )));
    }
    let (lo, hi) = src
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    let taps = |dst: usize, n_src: usize, n_dst: usize| {
        let pos =
            ((dst as f64 + 0.5) * n_src as f64 / n_dst as f64 - 0.5).clamp(0.0, (n_src - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(n_src - 1);
        (i0, i1, pos - i0 as f64)
    };
    let cols: Vec<_> = (0..tw).map(|x| taps(x, sw, tw)).collect();
    let mut out = Vec::with_capacity(th * tw);
    for y in 0..th {
        let (y0, y1, fy) = taps(y, sh, th);
        for &(x0, x1, fx) in &cols {
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bottom = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            // the exact result is a convex combination; clamp away rounding
            out.push((top * (1.0 - fy) + bottom * fy).clamp(lo, hi));
        }
    }
    Ok(out)
}

/// Whether CAMs are normalized at feature resolution before upsampling
/// (default) or upsampled first and normalized at image resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CamOrder {
    #[default]
    NormalizeFirst,
    UpsampleFirst,
}

/// Full pipeline for one `(image, class)`: CAM, normalization, upsampling.
pub fn image_heatmap(
    features: &FeatureMapStack,
    head: &HeadWeights,
    class_index: usize,
    image_h: usize,
    image_w: usize,
    order: CamOrder,
) -> Result<Heatmap> {
    let raw = compute_cam(features, head, class_index)?;
    match order {
        CamOrder::NormalizeFirst => upsample_bilinear(&normalize_map(&raw), image_h, image_w),
        CamOrder::UpsampleFirst => Ok(normalize_map(&raw.upsample(image_h, image_w)?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(c: usize, h: usize, w: usize, data: Vec<f32>) -> FeatureMapStack {
        FeatureMapStack::new("img", (c, h, w), data).unwrap()
    }

    #[test]
    fn identity_weight_rectifies() {
        let f = stack(1, 2, 2, vec![-1.0, 2.0, 3.0, 0.0]);
        let head = HeadWeights::new(1, 1, vec![1.0], None).unwrap();
        assert_eq!(
            compute_cam(&f, &head, 0).unwrap().values,
            vec![0.0, 2.0, 3.0, 0.0]
        );
    }

    #[test]
    fn zero_weights_give_zero_map() {
        let f = stack(2, 2, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let head = HeadWeights::new(1, 2, vec![0.0, 0.0], None).unwrap();
        assert!(compute_cam(&f, &head, 0)
            .unwrap()
            .values
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let f = stack(2, 1, 1, vec![1.0, 2.0]);
        let head = HeadWeights::new(1, 3, vec![0.0; 3], None).unwrap();
        assert!(compute_cam(&f, &head, 0).is_err());
        let head = HeadWeights::new(1, 2, vec![0.0; 2], None).unwrap();
        assert!(compute_cam(&f, &head, 1).is_err());
    }

    #[test]
    fn normalize_examples() {
        let raw = |v: Vec<f64>| RawMap::new(1, v.len(), v, Resolution::FeatureGrid).unwrap();
        assert_eq!(normalize_map(&raw(vec![0.0, 2.0])).values(), &[0.0, 1.0]);
        assert_eq!(normalize_map(&raw(vec![5.0, 5.0])).values(), &[0.0, 0.0]);
        assert_eq!(
            normalize_map(&raw(vec![1.0, 2.0, 3.0])).values(),
            &[0.0, 0.5, 1.0]
        );
    }

    #[test]
    fn upsample_identity_and_constant() {
        let m = Heatmap::new(2, 2, vec![0.0, 0.25, 0.5, 1.0], Resolution::FeatureGrid).unwrap();
        assert_eq!(upsample_bilinear(&m, 2, 2).unwrap().values(), m.values());

        let one = Heatmap::new(1, 1, vec![0.6], Resolution::FeatureGrid).unwrap();
        let up = upsample_bilinear(&one, 3, 5).unwrap();
        assert!(up.values().iter().all(|&v| v == 0.6));

        assert!(upsample_bilinear(&m, 1, 4).is_err());
    }

    #[test]
    fn upsample_checkerboard_2x2_to_4x4() {
        // Hand evaluation: output index i samples (i+0.5)/2-0.5 = -0.25, 0.25, 0.75, 1.25,
        // clamped to 0, 0.25, 0.75, 1 -> per-axis weights on the second source
        // pixel t = [0, 0.25, 0.75, 1]. For [[0,1],[1,0]]: v = tx(1-ty) + ty(1-tx).
        let m = Heatmap::new(2, 2, vec![0.0, 1.0, 1.0, 0.0], Resolution::FeatureGrid).unwrap();
        let up = upsample_bilinear(&m, 4, 4).unwrap();
        let t = [0.0, 0.25, 0.75, 1.0];
        for (y, &ty) in t.iter().enumerate() {
            for (x, &tx) in t.iter().enumerate() {
                let expected: f64 = tx * (1.0 - ty) + ty * (1.0 - tx);
                assert!((up.get(y, x) - expected).abs() < 1e-15, "({y},{x})");
            }
        }
        assert_eq!(up.values()[..4], [0.0, 0.25, 0.75, 1.0]);
        assert_eq!(up.values()[4..8], [0.25, 0.375, 0.625, 0.75]);
    }

    #[test]
    fn head_logits_from_pooled_features() {
        let f = stack(2, 1, 2, vec![1.0, 3.0, -2.0, 0.0]);
        let head = HeadWeights::new(1, 2, vec![0.5, 2.0], Some(vec![0.25])).unwrap();
        // pooled = [2, -1]; 0.5*2 + 2*(-1) + 0.25
        assert_eq!(head.logits(&f).unwrap(), vec![-0.75]);
    }

    #[test]
    fn pgm_header() {
        let m = Heatmap::new(1, 2, vec![0.0, 1.0], Resolution::ImagePixels).unwrap();
        assert_eq!(m.to_pgm(), b"P5\n2 1\n255\n\x00\xff".to_vec());
    }
}
