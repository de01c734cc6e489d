//! Seeded synthetic datasets in the on-disk layout the tools consume:
//! a manifest, per-image feature and logit tensors, a head, and box CSV.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::cam::HeadWeights;
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor_io::{write_tensor, FeatureMapStack, Manifest, ManifestEntry, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub images: usize,
    pub channels: usize,
    pub grid: (usize, usize),
    pub image: (usize, usize),
    pub classes: Vec<String>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            images: 8,
            channels: 6,
            grid: (7, 7),
            image: (56, 56),
            classes: vec!["Atelectasis".into(), "Nodule".into(), "Mass".into()],
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPaths {
    pub manifest: PathBuf,
    pub annotations: PathBuf,
    pub head: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the dataset under `dir` (created if missing). Every image gets one
/// or two boxes and each class has both positive and negative labels once
/// there are at least two images.
pub fn write_dataset(dir: &Path, spec: &SyntheticSpec) -> Result<SyntheticPaths> {
    let (gh, gw) = spec.grid;
    let (ih, iw) = spec.image;
    let m = spec.classes.len();
    if spec.images == 0 || spec.channels == 0 || gh * gw == 0 || ih * iw == 0 || m == 0 {
        return Err(Error::invalid("synthetic dataset needs nonzero sizes"));
    }
    fs::create_dir_all(dir.join("tensors")).map_err(io_err(dir))?;
    let mut rng = seeded(spec.seed);

    let head_data: Vec<f32> = (0..m * spec.channels)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    let head = HeadWeights::new(m, spec.channels, head_data.clone(), None)?;
    let head_path = dir.join("head.fmap");
    write_tensor(&Tensor::new(vec![m, spec.channels], head_data)?, &head_path)?;

    let mut entries = Vec::with_capacity(spec.images);
    let mut csv = String::from("image_id,label,x,y,w,h\n");
    for i in 0..spec.images {
        let image_id = format!("img{i:03}.png");
        let mut data: Vec<f32> = (0..spec.channels * gh * gw)
            .map(|_| rng.random_range(0.0f32..0.5))
            .collect();
        // a bright blob per channel so thresholded masks have structure
        for c in 0..spec.channels {
            let (r0, c0) = (rng.random_range(0..gh), rng.random_range(0..gw));
            for r in r0..(r0 + 2).min(gh) {
                for col in c0..(c0 + 2).min(gw) {
                    data[c * gh * gw + r * gw + col] += rng.random_range(1.0f32..2.0);
                }
            }
        }
        let stack = FeatureMapStack::new(image_id.clone(), (spec.channels, gh, gw), data)?;
        let logits: Vec<f32> = head.logits(&stack)?.iter().map(|&z| z as f32).collect();
        let labels: Vec<u8> = (0..m).map(|k| u8::from((i + k) % 2 == 0)).collect();

        let features = PathBuf::from("tensors").join(format!("img{i:03}_features.fmap"));
        let logit_path = PathBuf::from("tensors").join(format!("img{i:03}_logits.fmap"));
        write_tensor(
            &Tensor::new(vec![spec.channels, gh, gw], stack.data)?,
            dir.join(&features),
        )?;
        write_tensor(&Tensor::new(vec![m], logits)?, dir.join(&logit_path))?;

        for _ in 0..rng.random_range(1..=2usize) {
            let label = &spec.classes[rng.random_range(0..m)];
            let x = rng.random_range(0..iw);
            let y = rng.random_range(0..ih);
            let w = rng.random_range(1..=(iw - x).min(iw / 2).max(1));
            let h = rng.random_range(1..=(ih - y).min(ih / 2).max(1));
            csv.push_str(&format!("{image_id},{label},{x},{y},{w},{h}\n"));
        }
        entries.push(ManifestEntry {
            image_id,
            features,
            logits: logit_path,
            labels,
        });
    }

    let mut manifest = Manifest::from_json(&empty_manifest_json(spec), dir)?;
    manifest.entries = entries;
    manifest.head = Some(PathBuf::from("head.fmap"));
    let manifest_path = dir.join("manifest.json");
    fs::write(&manifest_path, manifest.to_json()?).map_err(io_err(&manifest_path))?;
    let annotations = dir.join("boxes.csv");
    fs::write(&annotations, csv).map_err(io_err(&annotations))?;
    Ok(SyntheticPaths {
        manifest: manifest_path,
        annotations,
        head: head_path,
    })
}

fn empty_manifest_json(spec: &SyntheticSpec) -> String {
    serde_json::json!({
        "layer_shape": [spec.channels, spec.grid.0, spec.grid.1],
        "image_width": spec.image.1,
        "image_height": spec.image.0,
        "class_names": spec.classes,
        "entries": [],
    })
    .to_string()
}
