//! Labeled image sets and their on-disk bundle form.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::tensorfile::{read_tensor_file, write_tensor_file};
use crate::error::{Error, Result};
use crate::ndcore::Tensor;

pub const NUM_CLASSES: usize = 10;

/// Images `[n, H, W, C]` in `[0, 1]`, class labels and optional per-sample nuisance vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImageSet {
    pub images: Tensor,
    pub labels: Vec<usize>,
    /// `[n, d_z]`: one-hot background color, or intervention scales.
    pub nuisance: Option<Tensor>,
    pub palette_id: String,
    pub num_classes: usize,
}

impl LabeledImageSet {
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        nuisance: Option<Tensor>,
        palette_id: impl Into<String>,
        num_classes: usize,
    ) -> Result<Self> {
        let set = Self {
            images,
            labels,
            nuisance,
            palette_id: palette_id.into(),
            num_classes,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.ndim() != 4 {
            return Err(Error::dim(format!(
                "images must be [n, H, W, C], got {:?}",
                self.images.shape()
            )));
        }
        let n = self.images.rows();
        if self.labels.len() != n {
            return Err(Error::validation(format!(
                "{} labels for {n} images",
                self.labels.len()
            )));
        }
        if let Some(z) = &self.nuisance {
            if z.ndim() != 2 || z.rows() != n {
                return Err(Error::validation(format!(
                    "nuisance shape {:?} does not match {n} images",
                    z.shape()
                )));
            }
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::validation(format!(
                "label {bad} outside [0, {})",
                self.num_classes
            )));
        }
        if self.images.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::validation("image values outside [0, 1]"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.images.shape()[3]
    }

    /// Values per image (`H * W * C`).
    pub fn pixel_len(&self) -> usize {
        self.images.row_len()
    }

    /// Images as `[n, H*W*C]`.
    pub fn flat_images(&self) -> Tensor {
        self.images.clone().flatten_rows()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            images: self.images.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            nuisance: self.nuisance.as_ref().map(|z| z.select_rows(idx)),
            palette_id: self.palette_id.clone(),
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Index of the hottest nuisance entry per sample, for one-hot color nuisance.
    pub fn nuisance_argmax(&self) -> Option<Vec<usize>> {
        self.nuisance.as_ref().map(crate::ndcore::argmax_rows)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub palette: String,
    pub mode: String,
    pub seed: u64,
    pub count: usize,
    pub num_classes: usize,
    pub image_shape: Vec<usize>,
    pub nuisance_dim: Option<usize>,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

pub const IMAGES_FILE: &str = "images.gint";
pub const LABELS_FILE: &str = "labels.gint";
pub const NUISANCE_FILE: &str = "nuisance.gint";
pub const META_FILE: &str = "meta.json";

/// Writes `set` as a bundle directory.
pub fn save_bundle(
    dir: &Path,
    set: &LabeledImageSet,
    mode: &str,
    seed: u64,
    extra: BTreeMap<String, serde_json::Value>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_tensor_file(&dir.join(IMAGES_FILE), &set.images)?;
    let labels = Tensor::new(
        vec![set.len()],
        set.labels.iter().map(|&l| l as f32).collect(),
    )?;
    write_tensor_file(&dir.join(LABELS_FILE), &labels)?;
    let nuisance_path = dir.join(NUISANCE_FILE);
    match &set.nuisance {
        Some(z) => write_tensor_file(&nuisance_path, z)?,
        None if nuisance_path.exists() => {
            fs::remove_file(&nuisance_path).map_err(|e| Error::io(&nuisance_path, e))?
        }
        None => {}
    }
    let meta = BundleMeta {
        palette: set.palette_id.clone(),
        mode: mode.to_string(),
        seed,
        count: set.len(),
        num_classes: set.num_classes,
        image_shape: set.images.shape()[1..].to_vec(),
        nuisance_dim: set.nuisance.as_ref().map(Tensor::row_len),
        extra,
    };
    let path = dir.join(META_FILE);
    fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_bundle(dir: &Path) -> Result<(LabeledImageSet, BundleMeta)> {
    let meta_path = dir.join(META_FILE);
    let meta: BundleMeta = serde_json::from_str(
        &fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?,
    )?;
    let images = read_tensor_file(&dir.join(IMAGES_FILE))?;
    let labels_t = read_tensor_file(&dir.join(LABELS_FILE))?;
    let labels = labels_t
        .data()
        .iter()
        .map(|&v| {
            if v < 0.0 || v.fract() != 0.0 {
                Err(Error::Format(format!("label value {v} is not a class index")))
            } else {
                Ok(v as usize)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let nuisance_path = dir.join(NUISANCE_FILE);
    let nuisance = if nuisance_path.exists() {
        Some(read_tensor_file(&nuisance_path)?)
    } else {
        None
    };
    let set = LabeledImageSet::new(images, labels, nuisance, meta.palette.clone(), meta.num_classes)?;
    Ok((set, meta))
}
