use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datagen::{read_tensor_file, write_tensor_file, LabeledImageSet};
use crate::error::{Error, Result};
use crate::genmodel::cvae::{Cvae, CvaeArch, ElboReport};
use crate::ndcore::rng::{named_rng, named_seed, stream_rng};
use crate::ndcore::{Adam, AdamConfig, ParamStore, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvaeConfig {
    pub hidden: usize,
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta: f64,
    /// Fraction of the training set held out for the ELBO log.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for CvaeConfig {
    fn default() -> Self {
        Self {
            hidden: 400,
            latent_dim: 16,
            epochs: 20,
            batch_size: 128,
            lr: 1e-3,
            beta: 1.0,
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

impl CvaeConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.hidden == 0 {
            errs.push("hidden must be > 0".to_string());
        }
        if self.latent_dim == 0 {
            errs.push("latent_dim must be > 0".to_string());
        }
        if self.batch_size == 0 {
            errs.push("batch_size must be > 0".to_string());
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            errs.push(format!("lr must be >= 0, got {}", self.lr));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            errs.push(format!("beta must be >= 0, got {}", self.beta));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            errs.push(format!("holdout_fraction must be in [0, 1), got {}", self.holdout_fraction));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::validation(errs.join("; ")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-image negative ELBO over the epoch's training batches.
    pub train_neg_elbo: f64,
    /// Per-image negative ELBO on the held-out split, `None` when nothing is held out.
    pub heldout_neg_elbo: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct CvaeFit {
    pub cvae: Cvae,
    pub history: Vec<EpochLog>,
}

const EVAL_CHUNK: usize = 256;

fn noise_rows(n: usize, dim: usize, seed: u64, first_row: u64) -> Tensor {
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        let mut rng = stream_rng(seed, first_row + i as u64);
        data.extend((0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)));
    }
    Tensor::new(vec![n, dim], data).expect("sized above")
}

/// Per-image negative ELBO over `x`, with noise fixed by `seed` per row.
pub fn heldout_neg_elbo(cvae: &Cvae, x: &Tensor, y: &[usize], beta: f64, seed: u64) -> Result<f64> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::InsufficientData("empty evaluation set".into()));
    }
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let noise = noise_rows(end - start, cvae.arch.latent_dim, seed, start as u64);
        let r: ElboReport = cvae.evaluate_elbo(&x.select_rows(&idx), &y[start..end], &noise, beta)?;
        total += r.total;
        start = end;
    }
    Ok(total / n as f64)
}

/// Fits a CVAE by Adam on minibatches of the per-image negative ELBO.
pub fn train_cvae(train: &LabeledImageSet, config: &CvaeConfig) -> Result<CvaeFit> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientData("empty CVAE training set".into()));
    }
    let [_, h, w, c]: [usize; 4] = train.images.shape().try_into().expect("validated 4-d");
    let arch = CvaeArch {
        image_shape: [h, w, c],
        input_dim: train.pixel_len(),
        hidden: config.hidden,
        latent_dim: config.latent_dim,
        num_classes: train.num_classes,
    };
    let mut cvae = Cvae::<f32>::new(arch, config.seed)?;
    let x_all = train.flat_images();

    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut named_rng(config.seed, "cvae-holdout"));
    let n_hold = ((train.len() as f64) * config.holdout_fraction).floor() as usize;
    let n_hold = n_hold.min(train.len() - 1);
    let (hold_idx, fit_idx) = order.split_at(n_hold);
    let mut fit_idx = fit_idx.to_vec();
    let x_hold = x_all.select_rows(hold_idx);
    let y_hold: Vec<usize> = hold_idx.iter().map(|&i| train.labels[i]).collect();

    let shuffle_seed = named_seed(config.seed, "cvae-shuffle");
    let noise_seed = named_seed(config.seed, "cvae-noise");
    let eval_seed = named_seed(config.seed, "cvae-eval-noise");
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..Default::default()
        },
        &cvae.params,
    );
    let mut history = Vec::with_capacity(config.epochs);
    let mut noise_row = 0u64;
    for epoch in 1..=config.epochs {
        fit_idx.shuffle(&mut stream_rng(shuffle_seed, epoch as u64));
        let mut epoch_total = 0.0;
        for (batch, idx) in fit_idx.chunks(config.batch_size).enumerate() {
            let x = x_all.select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let noise = noise_rows(idx.len(), arch.latent_dim, noise_seed, noise_row);
            noise_row += idx.len() as u64;

            let mut tape = Tape::new();
            let vars = cvae.params.bind(&mut tape);
            let e = cvae.negative_elbo_on_tape(&mut tape, &vars, &x, &y, &noise, config.beta)?;
            let total = tape.scalar(e.total) as f64;
            if !total.is_finite() {
                return Err(Error::TrainingDiverged { epoch, batch });
            }
            epoch_total += total;
            let loss = tape.scale(e.total, 1.0 / idx.len() as f32);
            let grads = tape.backward(loss)?;
            let g = cvae.params.collect_grads(&grads, &vars);
            adam.step(&mut cvae.params, &g).map_err(|err| match err {
                Error::NonFinite { .. } => Error::TrainingDiverged { epoch, batch },
                other => other,
            })?;
        }
        let heldout = if n_hold > 0 {
            Some(heldout_neg_elbo(&cvae, &x_hold, &y_hold, config.beta, eval_seed)?)
        } else {
            None
        };
        history.push(EpochLog {
            epoch,
            train_neg_elbo: epoch_total / fit_idx.len() as f64,
            heldout_neg_elbo: heldout,
        });
    }
    Ok(CvaeFit { cvae, history })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CvaeCheckpointMeta {
    pub arch: CvaeArch,
    pub param_names: Vec<String>,
    pub config: Option<CvaeConfig>,
    pub history: Vec<EpochLog>,
}

fn param_file(name: &str) -> String {
    format!("{name}.gint")
}

/// Writes one tensor file per parameter plus `meta.json` into `dir`.
pub fn save_cvae(dir: &Path, cvae: &Cvae, config: Option<&CvaeConfig>, history: &[EpochLog]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, t) in cvae.params.iter() {
        write_tensor_file(&dir.join(param_file(name)), t)?;
    }
    let meta = CvaeCheckpointMeta {
        arch: cvae.arch,
        param_names: cvae.params.names().to_vec(),
        config: config.cloned(),
        history: history.to_vec(),
    };
    let path = dir.join("meta.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
}

pub fn load_cvae(dir: &Path) -> Result<(Cvae, CvaeCheckpointMeta)> {
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: CvaeCheckpointMeta = serde_json::from_str(&text)?;
    let template = Cvae::<f32>::new(meta.arch, 0)?;
    if template.params.names() != meta.param_names.as_slice() {
        return Err(Error::Format(format!("{} lists unexpected parameters", path.display())));
    }
    let mut params = ParamStore::new();
    for name in &meta.param_names {
        params.push(name.clone(), read_tensor_file(&dir.join(param_file(name)))?);
    }
    let cvae = template.with_params(params)?;
    Ok((cvae, meta))
}
