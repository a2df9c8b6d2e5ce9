//! Benchmark data: MNIST ingestion, colored-background synthesis,
//! ground-truth causal models and the tensor/bundle file formats.

pub mod colored;
pub mod dataset;
pub mod idx;
pub mod scm;
pub mod tensorfile;

use std::path::Path;

pub use colored::{synth_colored_mnist, ColorMode, ColorPalette, PALETTE_SIZE};
pub use dataset::{load_bundle, save_bundle, BundleMeta, LabeledImageSet, NUM_CLASSES};
pub use idx::{load_idx, load_idx_images, load_idx_labels, IdxData};
pub use scm::{sample_discrete_scm, sample_linear_scm, DiscreteDraw, LinearDraws, ScmDiscrete, ScmLinear};
pub use tensorfile::{read_tensor_file, write_tensor_file};

use crate::error::Result;

/// Loads `{prefix}-images-idx3-ubyte[.gz]` and `{prefix}-labels-idx1-ubyte[.gz]` from `dir`.
pub fn load_mnist_split(dir: &Path, prefix: &str) -> Result<LabeledImageSet> {
    let pick = |stem: String| {
        let gz = dir.join(format!("{stem}.gz"));
        if gz.exists() {
            gz
        } else {
            dir.join(stem)
        }
    };
    let images = load_idx_images(&pick(format!("{prefix}-images-idx3-ubyte")))?;
    let labels = load_idx_labels(&pick(format!("{prefix}-labels-idx1-ubyte")))?;
    LabeledImageSet::new(images, labels, None, "gray", NUM_CLASSES)
}

/// Keeps the first `per_class` samples of every class, preserving order.
pub fn take_per_class(set: &LabeledImageSet, per_class: usize) -> LabeledImageSet {
    let mut seen = vec![0usize; set.num_classes];
    let idx: Vec<usize> = (0..set.len())
        .filter(|&i| {
            let y = set.labels[i];
            seen[y] += 1;
            seen[y] <= per_class
        })
        .collect();
    set.subset(&idx)
}
