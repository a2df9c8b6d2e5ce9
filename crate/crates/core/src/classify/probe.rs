use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classify::mlp::Mlp;
use crate::classify::train::{report_from_logits, BatchStream};
use crate::datagen::LabeledImageSet;
use crate::error::{Error, Result};
use crate::ndcore::rng::{named_rng, named_seed};
use crate::ndcore::{Adam, AdamConfig, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressorConfig {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            lr: 1e-3,
            epochs: 30,
            batch: 128,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Image → ẑ model with its fit diagnostics.
#[derive(Clone, Debug)]
pub struct NuisanceRegressor {
    pub model: Mlp<f32>,
    pub train_mae: f64,
    pub val_mae: f64,
    /// MAE of predicting the training-mean z on the validation rows.
    pub mean_baseline_mae: f64,
}

impl NuisanceRegressor {
    pub fn predict(&self, set: &LabeledImageSet) -> Result<Tensor> {
        let x = set.flat_images();
        let mut parts = Vec::new();
        let mut start = 0;
        while start < set.len() {
            let end = (start + 512).min(set.len());
            parts.push(self.model.forward(&x.select_rows(&(start..end).collect::<Vec<_>>()))?);
            start = end;
        }
        Tensor::concat_rows(&parts.iter().collect::<Vec<_>>())
    }
}

fn split(n: usize, holdout: f64, rng_name: &str, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(holdout > 0.0 && holdout < 1.0) {
        return Err(Error::validation(format!("holdout fraction must be in (0, 1), got {holdout}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut named_rng(seed, rng_name));
    let n_val = ((n as f64 * holdout).round() as usize).clamp(1, n.saturating_sub(1));
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} rows cannot be split")));
    }
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}

fn mae(pred: &Tensor, target: &Tensor) -> f64 {
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p as f64 - t as f64).abs())
        .sum();
    s / target.len().max(1) as f64
}

/// Fits an MLP image → z under an L1 loss on the nuisance annotations of `set`.
pub fn nuisance_regressor_train(set: &LabeledImageSet, cfg: &RegressorConfig) -> Result<NuisanceRegressor> {
    let z = set
        .nuisance
        .as_ref()
        .ok_or_else(|| Error::Configuration("dataset has no nuisance annotations to regress".into()))?;
    if cfg.hidden == 0 || cfg.batch == 0 {
        return Err(Error::validation("regressor hidden and batch must be >= 1"));
    }
    let x = set.flat_images();
    let (tr, va) = split(set.len(), cfg.val_fraction, "regressor-split", cfg.seed)?;
    let (xt, zt) = (x.select_rows(&tr), z.select_rows(&tr));
    let (xv, zv) = (x.select_rows(&va), z.select_rows(&va));
    let mut model = Mlp::<f32>::new(&[x.row_len(), cfg.hidden, z.row_len()], cfg.seed, "regressor")?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        &model.params,
    );
    let mut stream = BatchStream::new(tr.len(), cfg.batch, named_seed(cfg.seed, "regressor-batches"));
    for epoch in 1..=cfg.epochs {
        for b in 0..stream.batches_per_pass() {
            let idx = stream.next_batch();
            let mut tape = Tape::new();
            let vars = model.params.bind(&mut tape);
            let xin = tape.constant(xt.select_rows(&idx));
            let target = tape.constant(zt.select_rows(&idx));
            let (_, pred) = model.forward_on_tape(&mut tape, &vars, xin)?;
            let diff = tape.sub(pred, target)?;
            let abs = tape.abs(diff);
            let loss = tape.mean(abs);
            if !tape.scalar(loss).is_finite() {
                return Err(Error::TrainingDiverged { epoch, batch: b });
            }
            let grads = tape.backward(loss)?;
            let g = model.params.collect_grads(&grads, &vars);
            adam.step(&mut model.params, &g)?;
            model.steps_trained += 1;
        }
    }
    let dz = z.row_len();
    let mut mean = vec![0f64; dz];
    for r in 0..zt.rows() {
        for (m, &v) in mean.iter_mut().zip(zt.row(r)) {
            *m += v as f64;
        }
    }
    let mean: Vec<f32> = mean.iter().map(|m| (m / zt.rows() as f64) as f32).collect();
    let baseline = Tensor::from_fn(zv.shape(), |i| mean[i % dz]);
    Ok(NuisanceRegressor {
        train_mae: mae(&model.forward(&xt)?, &zt),
        val_mae: mae(&model.forward(&xv)?, &zv),
        mean_baseline_mae: mae(&baseline, &zv),
        model,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            lr: 1e-3,
            epochs: 20,
            batch: 128,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub subset: Vec<usize>,
    pub accuracy: f64,
    /// Held-out accuracy divided by `1 / subset.len()`.
    pub ratio: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Trains a two-hidden-layer MLP `z → y` restricted to a seeded random subset
/// of `subset_size` classes and reports held-out accuracy over chance.
pub fn correlation_probe(z: &Tensor, labels: &[usize], subset_size: usize, cfg: &ProbeConfig) -> Result<ProbeResult> {
    if subset_size < 2 {
        return Err(Error::validation(format!("subset size must be >= 2, got {subset_size}")));
    }
    let (n, _) = z.check_2d("probe input")?;
    if n != labels.len() {
        return Err(Error::dim(format!("{n} nuisance rows for {} labels", labels.len())));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    if subset_size > classes {
        return Err(Error::validation(format!("subset size {subset_size} exceeds the {classes} classes present")));
    }
    let mut all: Vec<usize> = (0..classes).collect();
    all.shuffle(&mut named_rng(cfg.seed ^ subset_size as u64, "probe-subset"));
    let mut subset = all[..subset_size].to_vec();
    subset.sort_unstable();
    let mut remap = vec![usize::MAX; classes];
    for (k, &c) in subset.iter().enumerate() {
        remap[c] = k;
    }
    let rows: Vec<usize> = (0..n).filter(|&i| remap[labels[i]] != usize::MAX).collect();
    let (tr, te) = split(rows.len(), cfg.test_fraction, "probe-split", cfg.seed)?;
    let pick = |ix: &[usize]| -> (Tensor, Vec<usize>) {
        let r: Vec<usize> = ix.iter().map(|&i| rows[i]).collect();
        (z.select_rows(&r), r.iter().map(|&i| remap[labels[i]]).collect())
    };
    let (xt, yt) = pick(&tr);
    let (xe, ye) = pick(&te);
    let mut model = Mlp::<f32>::new(&[z.row_len(), cfg.hidden, cfg.hidden, subset_size], cfg.seed, "probe")?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        &model.params,
    );
    let mut stream = BatchStream::new(tr.len(), cfg.batch, named_seed(cfg.seed, "probe-batches"));
    for epoch in 1..=cfg.epochs {
        for b in 0..stream.batches_per_pass() {
            let idx = stream.next_batch();
            let y: Vec<usize> = idx.iter().map(|&i| yt[i]).collect();
            let mut tape = Tape::new();
            let vars = model.params.bind(&mut tape);
            let xin = tape.constant(xt.select_rows(&idx));
            let (_, logits) = model.forward_on_tape(&mut tape, &vars, xin)?;
            let loss = tape.softmax_cross_entropy(logits, &y)?;
            if !tape.scalar(loss).is_finite() {
                return Err(Error::TrainingDiverged { epoch, batch: b });
            }
            let grads = tape.backward(loss)?;
            let g = model.params.collect_grads(&grads, &vars);
            adam.step(&mut model.params, &g)?;
        }
    }
    let report = report_from_logits(&model.forward(&xe)?, &ye, subset_size)?;
    Ok(ProbeResult {
        ratio: report.top1 * subset_size as f64,
        accuracy: report.top1,
        subset,
        n_train: tr.len(),
        n_test: te.len(),
    })
}
