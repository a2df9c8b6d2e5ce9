use serde::{Deserialize, Serialize};

use crate::classify::mlp::Mlp;
use crate::classify::train::{BatchStream, Classifier, TrainConfig};
use crate::datagen::LabeledImageSet;
use crate::error::{Error, Result};
use crate::ndcore::rng::{mix, named_seed};
use crate::ndcore::{Adam, AdamConfig, Real, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrmConfig {
    pub penalty_weight: f64,
    /// Steps run at `warmup_weight` before switching to `penalty_weight`.
    pub warmup_steps: usize,
    pub warmup_weight: f64,
}

impl Default for IrmConfig {
    fn default() -> Self {
        Self {
            penalty_weight: 1e4,
            warmup_steps: 100,
            warmup_weight: 1.0,
        }
    }
}

/// `Σ_e CE_e + w Σ_e penalty_e`, divided by `w` when `w > 1`.
pub fn irm_loss_on_tape<T: Real>(
    model: &Mlp<T>,
    tape: &mut Tape<T>,
    vars: &[Var],
    batches: &[(&Tensor<T>, &[usize])],
    weight: f64,
) -> Result<Var> {
    let mut risk: Option<Var> = None;
    let mut penalty: Option<Var> = None;
    for &(x, y) in batches {
        let xv = tape.constant(x.clone());
        let (_, logits) = model.forward_on_tape(tape, vars, xv)?;
        let ce = tape.softmax_cross_entropy(logits, y)?;
        risk = Some(match risk {
            None => ce,
            Some(r) => tape.add(r, ce)?,
        });
        if weight > 0.0 {
            let p = tape.irm_penalty(logits, y)?;
            penalty = Some(match penalty {
                None => p,
                Some(q) => tape.add(q, p)?,
            });
        }
    }
    let risk = risk.ok_or_else(|| Error::Configuration("no environments".into()))?;
    let Some(pen) = penalty else { return Ok(risk) };
    let weighted = tape.scale(pen, T::from_f64(weight));
    let total = tape.add(risk, weighted)?;
    Ok(if weight > 1.0 {
        tape.scale(total, T::from_f64(1.0 / weight))
    } else {
        total
    })
}

/// Trains on several environments with the scalar-multiplier gradient penalty.
/// Uses `config.hidden`, `batch_x` (per environment), `lr`, `epochs`, `seed`.
pub fn irm_train(envs: &[LabeledImageSet], irm: &IrmConfig, config: &TrainConfig) -> Result<Classifier> {
    if envs.len() < 2 {
        return Err(Error::Configuration(format!("IRM needs at least 2 environments, got {}", envs.len())));
    }
    if !(irm.penalty_weight >= 0.0) || !(irm.warmup_weight >= 0.0) {
        return Err(Error::validation("IRM penalty weights must be >= 0"));
    }
    config.validate()?;
    if config.batch_x == 0 {
        return Err(Error::validation("batch_x must be >= 1"));
    }
    if let Some(e) = envs.iter().position(LabeledImageSet::is_empty) {
        return Err(Error::Configuration(format!("environment {e} is empty")));
    }
    let xs: Vec<Tensor> = envs.iter().map(LabeledImageSet::flat_images).collect();
    let input = xs[0].row_len();
    let classes = envs[0].num_classes;
    if xs.iter().any(|x| x.row_len() != input) || envs.iter().any(|e| e.num_classes != classes) {
        return Err(Error::dim("environments disagree on image size or class count"));
    }
    let mut model = Mlp::<f32>::new(&[input, config.hidden, classes], config.seed, "classifier")?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..Default::default()
        },
        &model.params,
    );
    let base = named_seed(config.seed, "irm-env");
    let mut streams: Vec<BatchStream> = envs
        .iter()
        .enumerate()
        .map(|(e, set)| BatchStream::new(set.len(), config.batch_x, mix(base, e as u64)))
        .collect();
    let steps_per_epoch = streams.iter().map(BatchStream::batches_per_pass).max().unwrap_or(1);
    let mut step = 0usize;
    for epoch in 1..=config.epochs {
        for b in 0..steps_per_epoch {
            let weight = if step < irm.warmup_steps {
                irm.warmup_weight
            } else {
                irm.penalty_weight
            };
            let batches: Vec<(Tensor, Vec<usize>)> = streams
                .iter_mut()
                .zip(envs.iter().zip(&xs))
                .map(|(s, (set, x))| {
                    let idx = s.next_batch();
                    (x.select_rows(&idx), idx.iter().map(|&i| set.labels[i]).collect())
                })
                .collect();
            let refs: Vec<(&Tensor, &[usize])> = batches.iter().map(|(x, y)| (x, y.as_slice())).collect();
            let mut tape = Tape::new();
            let vars = model.params.bind(&mut tape);
            let loss = irm_loss_on_tape(&model, &mut tape, &vars, &refs, weight)?;
            if !(tape.scalar(loss) as f64).is_finite() {
                return Err(Error::TrainingDiverged { epoch, batch: b });
            }
            let grads = tape.backward(loss)?;
            let g = model.params.collect_grads(&grads, &vars);
            if step == irm.warmup_steps && irm.penalty_weight != irm.warmup_weight {
                // The loss scale jumps here; stale moments would be miscalibrated.
                adam = Adam::new(
                    AdamConfig {
                        lr: config.lr,
                        ..Default::default()
                    },
                    &model.params,
                );
            }
            adam.step(&mut model.params, &g).map_err(|e| match e {
                Error::NonFinite { .. } => Error::TrainingDiverged { epoch, batch: b },
                other => other,
            })?;
            model.steps_trained += 1;
            step += 1;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::{finite_difference_check, GradCheckConfig};

    fn env(n: usize, shift: f32) -> LabeledImageSet {
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let images = Tensor::from_fn(&[n, 1, 3, 1], |k| {
            let i = k / 3;
            let base = if labels[i] == k % 3 { 0.8 } else { 0.1 };
            (base + shift * ((k % 5) as f32) / 10.0).min(1.0)
        });
        LabeledImageSet::new(images, labels, None, "env", 2).unwrap()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            hidden: 6,
            batch_x: 4,
            epochs: 2,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn needs_two_environments() {
        let r = irm_train(&[env(8, 0.0)], &IrmConfig::default(), &cfg());
        assert!(matches!(r, Err(Error::Configuration(_))));
    }

    #[test]
    fn zero_penalty_is_summed_risk() {
        let envs = [env(8, 0.0), env(8, 0.5)];
        let off = IrmConfig {
            penalty_weight: 0.0,
            warmup_steps: 0,
            warmup_weight: 0.0,
        };
        let a = irm_train(&envs, &off, &cfg()).unwrap();

        // Reference: Adam on Σ_e CE_e with the same batch streams.
        let c = cfg();
        let xs: Vec<Tensor> = envs.iter().map(|e| e.flat_images()).collect();
        let mut m = Mlp::<f32>::new(&[3, 6, 2], c.seed, "classifier").unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &m.params);
        let base = named_seed(c.seed, "irm-env");
        let mut streams: Vec<BatchStream> = (0..2).map(|e| BatchStream::new(8, 4, mix(base, e))).collect();
        for _ in 0..4 {
            let mut tape = Tape::new();
            let vars = m.params.bind(&mut tape);
            let mut total = None;
            for e in 0..2 {
                let idx = streams[e].next_batch();
                let y: Vec<usize> = idx.iter().map(|&i| envs[e].labels[i]).collect();
                let xv = tape.constant(xs[e].select_rows(&idx));
                let (_, l) = m.forward_on_tape(&mut tape, &vars, xv).unwrap();
                let ce = tape.softmax_cross_entropy(l, &y).unwrap();
                total = Some(match total {
                    None => ce,
                    Some(t) => tape.add(t, ce).unwrap(),
                });
            }
            let g = tape.backward(total.unwrap()).unwrap();
            let g = m.params.collect_grads(&g, &vars);
            adam.step(&mut m.params, &g).unwrap();
        }
        assert_eq!(a.params.tensors(), m.params.tensors());
    }

    #[test]
    fn penalty_vanishes_at_symmetric_stationary_point() {
        // Zero logits with balanced labels: d CE / d scale = 0.
        let mut tape = Tape::<f64>::new();
        let l = tape.param(Tensor::zeros(&[4, 2]));
        let p = tape.irm_penalty(l, &[0, 1, 0, 1]).unwrap();
        assert_eq!(tape.scalar(p), 0.0);
    }

    #[test]
    fn irm_loss_gradient() {
        let m = Mlp::<f64>::new(&[3, 4, 3], 1, "irm").unwrap();
        let x1 = Tensor::from_fn(&[4, 3], |i| ((i * 5) % 7) as f64 / 3.0 - 1.0);
        let x2 = Tensor::from_fn(&[3, 3], |i| ((i * 3) % 5) as f64 / 2.0 - 1.0);
        let y1 = [0, 2, 1, 1];
        let y2 = [2, 0, 1];
        let r = finite_difference_check(
            &m.params,
            |tape, vars| irm_loss_on_tape(&m, tape, vars, &[(&x1, &y1), (&x2, &y2)], 50.0),
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }
}
