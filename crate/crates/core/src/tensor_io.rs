//! Interchange formats shared with the exporter: the `FMAP` tensor file, the
//! dataset manifest (JSON) and the bounding-box annotation CSV.
//!
//! Tensor file layout (all integers little-endian):
//!
//! | offset | size      | field                          |
//! |--------|-----------|--------------------------------|
//! | 0      | 4         | magic `b"FMAP"`                |
//! | 4      | 1         | version (`1`)                  |
//! | 5      | 1         | dtype code (`1` = f32)         |
//! | 6      | 1         | ndim, `1..=4`                  |
//! | 7      | 1         | reserved, `0`                  |
//! | 8      | 4 * ndim  | extents as `u32`               |
//! | ...    | 4 * numel | row-major `f32` payload        |

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FMAP";
pub const FORMAT_VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;
pub const MAX_NDIM: usize = 4;
const FIXED_HEADER_LEN: usize = 8;

/// Dense row-major `f32` array of rank 1 to 4.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_NDIM {
            return Err(Error::shape(format!(
                "tensor rank must be in 1..={MAX_NDIM}, got {}",
                dims.len()
            )));
        }
        if let Some(axis) = dims.iter().position(|&d| d == 0) {
            return Err(Error::shape(format!("dimension {axis} has zero extent")));
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::shape("element count overflows usize"))?;
        if numel != data.len() {
            return Err(Error::shape(format!(
                "dims {dims:?} describe {numel} elements but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out =
            Vec::with_capacity(FIXED_HEADER_LEN + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.push(DTYPE_F32);
        out.push(self.dims.len() as u8);
        out.push(0);
        for &d in &self.dims {
            let extent = u32::try_from(d)
                .map_err(|_| Error::shape(format!("extent {d} does not fit in 32 bits")))?;
            out.extend_from_slice(&extent.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < FIXED_HEADER_LEN {
            return Err(Error::Format(format!(
                "file is {} bytes, shorter than the {FIXED_HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"FMAP\"",
                &bytes[0..4]
            )));
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {}", bytes[4])));
        }
        if bytes[5] != DTYPE_F32 {
            return Err(Error::Format(format!(
                "unsupported dtype code {}",
                bytes[5]
            )));
        }
        let ndim = bytes[6] as usize;
        if ndim == 0 || ndim > MAX_NDIM {
            return Err(Error::Format(format!("ndim {ndim} outside 1..={MAX_NDIM}")));
        }
        if bytes[7] != 0 {
            return Err(Error::Format(format!(
                "reserved byte is {}, expected 0",
                bytes[7]
            )));
        }
        let dims_end = FIXED_HEADER_LEN + 4 * ndim;
        if bytes.len() < dims_end {
            return Err(Error::Format(
                "header truncated inside the extent list".into(),
            ));
        }
        let dims: Vec<usize> = bytes[FIXED_HEADER_LEN..dims_end]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        if dims.contains(&0) {
            return Err(Error::Format(format!("zero extent in dims {dims:?}")));
        }
        let expected = dims
            .iter()
            .try_fold(4usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("declared payload size overflows".into()))?;
        let payload = &bytes[dims_end..];
        if payload.len() != expected {
            return Err(Error::Truncated {
                expected,
                actual: payload.len(),
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Tensor { dims, data })
    }
}

pub fn write_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = tensor.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes)
}

/// Activations of the analysed convolutional layer for one image, `C x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapStack {
    pub image_id: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureMapStack {
    pub fn new(
        image_id: impl Into<String>,
        (channels, height, width): (usize, usize, usize),
        data: Vec<f32>,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::shape("feature maps need C, H, W >= 1"));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "feature data has {} values, expected {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(FeatureMapStack {
            image_id: image_id.into(),
            channels,
            height,
            width,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    /// Feature tensor, `[C, H, W]`; relative paths resolve against the manifest directory.
    pub features: PathBuf,
    /// Logits tensor, `[M]`.
    pub logits: PathBuf,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub layer_shape: [usize; 3],
    pub image_width: usize,
    pub image_height: usize,
    pub class_names: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    /// Default classifier head (`[M, C]`), used when no head is given explicitly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_bias: Option<PathBuf>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Manifest {
    /// Parses and fully validates a manifest, including every referenced tensor.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = Self::from_json(&text, base_dir)?;
        manifest.validate_files()?;
        Ok(manifest)
    }

    /// Parses and checks the manifest structure without touching referenced files.
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut manifest: Manifest =
            serde_json::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        manifest.base_dir = base_dir.into();
        manifest.validate_structure()?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn set_base_dir(&mut self, dir: impl Into<PathBuf>) {
        self.base_dir = dir.into();
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn validate_structure(&self) -> Result<()> {
        let [c, h, w] = self.layer_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Manifest(format!(
                "layer_shape {:?} has a zero extent",
                self.layer_shape
            )));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::Manifest("image size must be positive".into()));
        }
        if self.class_names.is_empty() {
            return Err(Error::Manifest("class_names is empty".into()));
        }
        let mut names = HashSet::new();
        for name in &self.class_names {
            if !names.insert(name.as_str()) {
                return Err(Error::Manifest(format!("duplicate class name {name:?}")));
            }
        }
        let m = self.class_names.len();
        let mut ids = HashSet::new();
        for entry in &self.entries {
            if !ids.insert(entry.image_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate image_id {:?}",
                    entry.image_id
                )));
            }
            if entry.labels.len() != m {
                return Err(Error::Manifest(format!(
                    "entry {:?} has {} labels for {m} classes",
                    entry.image_id,
                    entry.labels.len()
                )));
            }
            if entry.labels.iter().any(|&y| y > 1) {
                return Err(Error::Manifest(format!(
                    "entry {:?} has a label outside {{0, 1}}",
                    entry.image_id
                )));
            }
        }
        Ok(())
    }

    /// Reads every referenced tensor and checks it against the declared shapes.
    pub fn validate_files(&self) -> Result<()> {
        for entry in &self.entries {
            self.load_features(entry)?;
            self.load_logits(entry)?;
        }
        Ok(())
    }

    pub fn load_features(&self, entry: &ManifestEntry) -> Result<FeatureMapStack> {
        let tensor = read_tensor(self.resolve(&entry.features))?;
        if tensor.dims() != self.layer_shape {
            return Err(Error::Manifest(format!(
                "features of {:?} have shape {:?}, manifest declares {:?}",
                entry.image_id,
                tensor.dims(),
                self.layer_shape
            )));
        }
        let [c, h, w] = self.layer_shape;
        FeatureMapStack::new(entry.image_id.clone(), (c, h, w), tensor.into_data())
    }

    pub fn load_logits(&self, entry: &ManifestEntry) -> Result<Vec<f32>> {
        let tensor = read_tensor(self.resolve(&entry.logits))?;
        if tensor.dims() != [self.num_classes()] {
            return Err(Error::Manifest(format!(
                "logits of {:?} have shape {:?}, expected [{}]",
                entry.image_id,
                tensor.dims(),
                self.num_classes()
            )));
        }
        Ok(tensor.into_data())
    }

    /// Logits of every image as a row-major `N x M` matrix, with the labels
    /// flattened the same way. Files are read in parallel, rows stay in
    /// manifest order.
    pub fn load_logit_matrix(&self) -> Result<(Vec<f64>, Vec<u8>)> {
        if self.entries.is_empty() {
            return Err(Error::EmptyInput("manifest has no images".into()));
        }
        let rows = self
            .entries
            .par_iter()
            .map(|e| self.load_logits(e))
            .collect::<Result<Vec<_>>>()?;
        let logits = rows.into_iter().flatten().map(f64::from).collect();
        let labels = self
            .entries
            .iter()
            .flat_map(|e| e.labels.iter().copied())
            .collect();
        Ok((logits, labels))
    }
}

/// Axis-aligned box in image pixels, origin top-left, covering `[x, x+w) x [y, y+h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub label: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(label: impl Into<String>, x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox {
            label: label.into(),
            x,
            y,
            w,
            h,
        }
    }

    /// Clips the box to `[0, width) x [0, height)`; `None` when nothing is left.
    pub fn clipped(&self, width: f64, height: f64) -> Option<BBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = (self.x + self.w).min(width);
        let y1 = (self.y + self.h).min(height);
        (x1 > x0 && y1 > y0).then(|| BBox::new(self.label.clone(), x0, y0, x1 - x0, y1 - y0))
    }

    /// Cells of a `grid_h x grid_w` grid whose footprint overlaps the box with
    /// positive area, when each cell spans `cell_w x cell_h` pixels.
    /// Returned as half-open `(rows, cols)` index ranges.
    pub fn grid_span(
        &self,
        grid_h: usize,
        grid_w: usize,
        cell_h: f64,
        cell_w: f64,
    ) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let span = |start: f64, len: f64, cell: f64, n: usize| {
            let end = start + len;
            // cell i overlaps iff i*cell < end && (i+1)*cell > start
            let first = (0..n).find(|&i| (i as f64 + 1.0) * cell > start);
            match first {
                Some(lo) => {
                    let hi = (lo..n)
                        .take_while(|&i| (i as f64) * cell < end)
                        .last()
                        .map_or(lo, |i| i + 1);
                    lo..hi
                }
                None => 0..0,
            }
        };
        (
            span(self.y, self.h, cell_h, grid_h),
            span(self.x, self.w, cell_w, grid_w),
        )
    }
}

/// Boxes per image, keyed by `image_id`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationSet {
    boxes: BTreeMap<String, Vec<BBox>>,
}

impl AnnotationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image_id: impl Into<String>, bbox: BBox) {
        self.boxes.entry(image_id.into()).or_default().push(bbox);
    }

    pub fn get(&self, image_id: &str) -> Option<&[BBox]> {
        self.boxes.get(image_id).map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn num_images(&self) -> usize {
        self.boxes.len()
    }

    pub fn num_boxes(&self) -> usize {
        self.boxes.values().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[BBox])> {
        self.boxes.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

pub const ANNOTATION_HEADER: [&str; 6] = ["image_id", "label", "x", "y", "w", "h"];

pub fn load_annotations(path: impl AsRef<Path>, manifest: &Manifest) -> Result<AnnotationSet> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(file, manifest)
}

/// Parses `image_id,label,x,y,w,h` rows. Boxes are clipped to the manifest's
/// image bounds; labels must name a manifest class.
pub fn parse_annotations<R: Read>(reader: R, manifest: &Manifest) -> Result<AnnotationSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header = rdr.headers().map_err(|e| Error::Annotation {
        line: 1,
        reason: e.to_string(),
    })?;
    if header.iter().ne(ANNOTATION_HEADER.iter().copied()) {
        return Err(Error::Annotation {
            line: 1,
            reason: format!(
                "expected header {:?}, found {:?}",
                ANNOTATION_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let width = manifest.image_width as f64;
    let height = manifest.image_height as f64;
    let mut set = AnnotationSet::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Annotation {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let fail = |reason: String| Error::Annotation { line, reason };
        if record.len() != ANNOTATION_HEADER.len() {
            return Err(fail(format!("expected 6 columns, found {}", record.len())));
        }
        let image_id = &record[0];
        let label = &record[1];
        if manifest.class_index(label).is_none() {
            return Err(fail(format!("label {label:?} is not a manifest class")));
        }
        let mut coords = [0.0f64; 4];
        for (slot, (name, raw)) in coords
            .iter_mut()
            .zip(ANNOTATION_HEADER[2..].iter().zip(record.iter().skip(2)))
        {
            *slot = raw
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| fail(format!("column {name} is not a finite number: {raw:?}")))?;
        }
        let [x, y, w, h] = coords;
        if w <= 0.0 || h <= 0.0 {
            return Err(fail(format!("box size must be positive, got w={w}, h={h}")));
        }
        let bbox = BBox::new(label, x, y, w, h)
            .clipped(width, height)
            .ok_or_else(|| fail(format!("box ({x}, {y}, {w}, {h}) lies outside the image")))?;
        set.insert(image_id, bbox);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> Manifest {
        Manifest::from_json(
            r#"{"layer_shape":[2,4,4],"image_width":256,"image_height":256,
                "class_names":["Atelectasis","Nodule"],"entries":[]}"#,
            ".",
        )
        .unwrap()
    }

    #[test]
    fn two_by_two_layout() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = t.to_bytes().unwrap();
        assert_eq!(&bytes[..8], b"FMAP\x01\x01\x02\x00");
        assert_eq!(&bytes[8..16], &[2, 0, 0, 0, 2, 0, 0, 0]);
        let payload: Vec<u8> = [1.0f32, 2.0, 3.0, 4.0]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        assert_eq!(&bytes[16..], payload.as_slice());
        assert_eq!(bytes.len(), 8 + 8 + 16);
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![1, 1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn handcrafted_scalar() {
        let mut bytes = b"FMAP\x01\x01\x01\x00".to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&7.0f32.to_le_bytes());
        let t = Tensor::from_bytes(&bytes).unwrap();
        assert_eq!(t.dims(), &[1]);
        assert_eq!(t.data(), &[7.0]);
    }

    #[test]
    fn truncated_payload() {
        let t = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let bytes = t.to_bytes().unwrap();
        let err = Tensor::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(
            err,
            Error::Truncated {
                expected: 12,
                actual: 11
            }
        ));
    }

    #[test]
    fn bad_magic_and_dtype() {
        let t = Tensor::new(vec![1], vec![1.0]).unwrap();
        let mut bytes = t.to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(Tensor::from_bytes(&bytes), Err(Error::Format(_))));
        let mut bytes = t.to_bytes().unwrap();
        bytes[5] = 2;
        assert!(matches!(Tensor::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn single_annotation_row() {
        let mut large = manifest();
        large.image_width = 1024;
        large.image_height = 1024;
        let csv = "image_id,label,x,y,w,h\nimg1.png,Atelectasis,100,200,50,60\n";
        let set = parse_annotations(csv.as_bytes(), &large).unwrap();
        assert_eq!(
            set.get("img1.png").unwrap(),
            &[BBox::new("Atelectasis", 100.0, 200.0, 50.0, 60.0)]
        );
    }

    #[test]
    fn empty_body() {
        let set = parse_annotations("image_id,label,x,y,w,h\n".as_bytes(), &manifest()).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn rejects_bad_rows() {
        let m = manifest();
        for body in [
            "a,Atelectasis,1,2,0,5",
            "a,Atelectasis,1,2,-3,5",
            "a,Atelectasis,1,2,3",
            "a,Atelectasis,one,2,3,4",
            "a,Cardiomegaly,1,2,3,4",
            "a,Nodule,300,300,10,10",
        ] {
            let csv = format!("image_id,label,x,y,w,h\n{body}\n");
            assert!(
                matches!(
                    parse_annotations(csv.as_bytes(), &m),
                    Err(Error::Annotation { line: 2, .. })
                ),
                "{body}"
            );
        }
        assert!(parse_annotations("id,label,x,y,w,h\n".as_bytes(), &m).is_err());
    }

    #[test]
    fn clips_overruns() {
        let csv = "image_id,label,x,y,w,h\na,Nodule,-10,250,30,20\n";
        let set = parse_annotations(csv.as_bytes(), &manifest()).unwrap();
        assert_eq!(
            set.get("a").unwrap(),
            &[BBox::new("Nodule", 0.0, 250.0, 20.0, 6.0)]
        );
    }

    #[test]
    fn grid_span_footprints() {
        // 8 px image on a 4-cell grid: cells are 2 px wide.
        let b = BBox::new("n", 2.0, 3.0, 2.0, 2.0);
        assert_eq!(b.grid_span(4, 4, 2.0, 2.0), (1..3, 1..2));
        // touching a cell edge does not count as overlap
        let b = BBox::new("n", 0.0, 0.0, 2.0, 8.0);
        assert_eq!(b.grid_span(4, 4, 2.0, 2.0), (0..4, 0..1));
        let b = BBox::new("n", 7.5, 7.5, 0.5, 0.5);
        assert_eq!(b.grid_span(4, 4, 2.0, 2.0), (3..4, 3..4));
    }

    #[test]
    fn manifest_rejects_label_length() {
        let err = Manifest::from_json(
            r#"{"layer_shape":[1,1,1],"image_width":4,"image_height":4,"class_names":["a"],
               "entries":[{"image_id":"i","features":"f","logits":"l","labels":[1,0]}]}"#,
            ".",
        );
        assert!(matches!(err, Err(Error::Manifest(_))));
    }
}
