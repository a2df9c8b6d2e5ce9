use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{synth_colored_mnist, ColorMode, ColorPalette, LabeledImageSet};
use crate::error::{Error, Result};
use crate::genmodel::truncated::truncated_draw;
use crate::genmodel::Cvae;
use crate::intervene::basis::{apply_intervention, encode_means, LatentBasis};
use crate::intervene::strategy::{sample_strategy_draw, InterventionStrategy};
use crate::ndcore::rng::stream_rng;
use crate::ndcore::Tensor;

const DECODE_CHUNK: usize = 128;

/// Where source latents `h₀` come from.
#[derive(Clone, Copy, Debug)]
pub enum LatentSource<'a> {
    /// Truncated standard-normal prior.
    Prior,
    /// Posterior means of same-class images from a dataset.
    Encoded(&'a LabeledImageSet),
}

impl LatentSource<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            LatentSource::Prior => "prior",
            LatentSource::Encoded(_) => "encoded",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionRecord {
    pub h0: Vec<f32>,
    pub h_star: Vec<f32>,
    pub label: usize,
    pub z: Vec<f32>,
}

/// `per_class_n` steered samples per class, interleaved by class. Sample `i`
/// depends only on `(seed, i)`, so the result does not depend on threading.
pub fn generate_interventional_set(
    cvae: &Cvae,
    basis: &LatentBasis,
    strategy: &InterventionStrategy,
    per_class_n: usize,
    seed: u64,
    source: LatentSource<'_>,
) -> Result<(LabeledImageSet, Vec<InterventionRecord>)> {
    let d = cvae.arch.latent_dim;
    let classes = cvae.arch.num_classes;
    strategy.validate(d)?;
    if per_class_n == 0 {
        return Err(Error::validation("per_class_n must be > 0"));
    }
    if basis.dim() != d {
        return Err(Error::dim(format!("basis dim {} vs latent dim {d}", basis.dim())));
    }
    let pools = match source {
        LatentSource::Prior => None,
        LatentSource::Encoded(set) => {
            if set.is_empty() {
                return Err(Error::InsufficientData("empty source dataset".into()));
            }
            let means = encode_means(cvae, set)?;
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
            for (i, &y) in set.labels.iter().enumerate() {
                by_class[y].push(i);
            }
            if let Some(c) = by_class.iter().position(Vec::is_empty) {
                return Err(Error::InsufficientData(format!("source dataset has no class {c} images")));
            }
            Some((means, by_class))
        }
    };

    let n = per_class_n * classes;
    let records: Vec<InterventionRecord> = (0..n)
        .into_par_iter()
        .map(|i| {
            let label = i % classes;
            let mut rng = stream_rng(seed, i as u64);
            let h0: Vec<f32> = match &pools {
                None => (0..d).map(|_| truncated_draw(&mut rng, strategy.truncation) as f32).collect(),
                Some((means, by_class)) => {
                    let pool = &by_class[label];
                    means.row(pool[rand::Rng::gen_range(&mut rng, 0..pool.len())]).to_vec()
                }
            };
            let draw = sample_strategy_draw(strategy, d, &mut rng)?;
            let mut h_star = h0.clone();
            for (&j, &s) in draw.directions.iter().zip(&draw.scales) {
                h_star = apply_intervention(&h_star, basis, j, s, strategy.offset_mode)?;
            }
            Ok(InterventionRecord {
                h0,
                h_star,
                label,
                z: draw.z_vector(strategy.top_k),
            })
        })
        .collect::<Result<_>>()?;

    let chunks: Vec<Tensor> = records
        .par_chunks(DECODE_CHUNK)
        .map(|chunk| {
            let h = Tensor::new(
                vec![chunk.len(), d],
                chunk.iter().flat_map(|r| r.h_star.iter().copied()).collect(),
            )?;
            let y: Vec<usize> = chunk.iter().map(|r| r.label).collect();
            cvae.decode(&h, &y)
        })
        .collect::<Result<_>>()?;
    let flat = Tensor::concat_rows(&chunks.iter().collect::<Vec<_>>())?;
    let [hh, ww, cc] = cvae.arch.image_shape;
    let images = flat.reshape(&[n, hh, ww, cc])?;
    let z = Tensor::new(
        vec![n, strategy.top_k],
        records.iter().flat_map(|r| r.z.iter().copied()).collect(),
    )?;
    let set = LabeledImageSet::new(
        images,
        records.iter().map(|r| r.label).collect(),
        Some(z),
        "generated",
        classes,
    )?;
    Ok((set, records))
}

/// Re-renders gray digits over a background color drawn uniformly from the
/// palette, independently of the label.
pub fn transfer_intervention(gray: &LabeledImageSet, palette: &ColorPalette, seed: u64) -> Result<LabeledImageSet> {
    if gray.is_empty() {
        return Err(Error::validation("no gray source images to transfer onto"));
    }
    if gray.channels() != 1 {
        return Err(Error::validation(format!(
            "transfer needs single-channel gray sources, got {} channels",
            gray.channels()
        )));
    }
    synth_colored_mnist(gray, palette, ColorMode::TestCausal, seed)
}
