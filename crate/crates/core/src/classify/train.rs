use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classify::mlp::Mlp;
use crate::datagen::LabeledImageSet;
use crate::error::{Error, Result};
use crate::ndcore::rng::{named_seed, stream_rng};
use crate::ndcore::{argmax_rows, Adam, AdamConfig, Real, Tape, Tensor, Var};

pub type Classifier = Mlp<f32>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    /// Weight on the interventional term.
    pub lambda1: f64,
    /// Weight on the transferred term.
    pub lambda2: f64,
    pub batch_x: usize,
    pub batch_int: usize,
    pub batch_itr: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// When false the original-data term is dropped.
    pub use_original_data: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            lambda1: 0.0,
            lambda2: 0.0,
            batch_x: 128,
            batch_int: 128,
            batch_itr: 128,
            lr: 1e-3,
            epochs: 10,
            seed: 0,
            use_original_data: true,
        }
    }
}

impl TrainConfig {
    /// Interventional-only mode: `λ1 = 1`, no original data.
    pub fn interventional_only(seed: u64) -> Self {
        Self {
            lambda1: 1.0,
            use_original_data: false,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.lambda1 >= 0.0) || !self.lambda1.is_finite() {
            errs.push(format!("λ1 ≥ 0 required, got {}", self.lambda1));
        }
        if !(self.lambda2 >= 0.0) || !self.lambda2.is_finite() {
            errs.push(format!("λ2 ≥ 0 required, got {}", self.lambda2));
        }
        if self.hidden == 0 {
            errs.push("hidden must be > 0".into());
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            errs.push(format!("lr must be >= 0, got {}", self.lr));
        }
        for (name, b, active) in [
            ("batch_x", self.batch_x, self.use_original_data),
            ("batch_int", self.batch_int, self.lambda1 > 0.0),
            ("batch_itr", self.batch_itr, self.lambda2 > 0.0),
        ] {
            if active && b == 0 {
                errs.push(format!("{name} must be >= 1 for an active term"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::validation(errs.join("; ")))
        }
    }
}

/// Endless reshuffled minibatches over `n` items. Pass `p` is shuffled by
/// `stream_rng(seed, p)`.
#[derive(Clone, Debug)]
pub struct BatchStream {
    order: Vec<usize>,
    batch: usize,
    pos: usize,
    pass: u64,
    seed: u64,
}

impl BatchStream {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..n).collect(),
            batch: batch.max(1),
            pos: 0,
            pass: 0,
            seed,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.sort_unstable();
        self.order.shuffle(&mut stream_rng(self.seed, self.pass));
        self.pos = 0;
    }

    /// Next batch; the final batch of a pass may be short.
    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.pass += 1;
            self.reshuffle();
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }

    pub fn batches_per_pass(&self) -> usize {
        self.order.len().div_ceil(self.batch)
    }
}

/// One weighted cross-entropy term of the objective.
pub struct Term<'a, T: Real> {
    pub x: &'a Tensor<T>,
    pub y: &'a [usize],
    pub weight: f64,
}

/// `Σ weight · CE(φ(x), y)` on the tape.
pub fn weighted_loss_on_tape<T: Real>(
    model: &Mlp<T>,
    tape: &mut Tape<T>,
    vars: &[Var],
    terms: &[Term<'_, T>],
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for t in terms {
        let xv = tape.constant(t.x.clone());
        let (_, logits) = model.forward_on_tape(tape, vars, xv)?;
        let ce = tape.softmax_cross_entropy(logits, t.y)?;
        let w = if t.weight == 1.0 { ce } else { tape.scale(ce, T::from_f64(t.weight)) };
        total = Some(match total {
            None => w,
            Some(acc) => tape.add(acc, w)?,
        });
    }
    total.ok_or_else(|| Error::Configuration("objective has no active term".into()))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Classifier,
    /// Loss value at every optimizer step.
    pub loss_trace: Vec<f64>,
}

struct ActiveTerm<'a> {
    x: Tensor,
    set: &'a LabeledImageSet,
    stream: BatchStream,
    weight: f64,
}

/// Minimizes `CE(X) + λ1 CE(X_int) + λ2 CE(X_itr)` with one batch per active
/// term per step. Each term draws from its own stream, so inactive terms
/// consume no randomness.
pub fn train_classifier(
    x: &LabeledImageSet,
    x_int: Option<&LabeledImageSet>,
    x_itr: Option<&LabeledImageSet>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut terms: Vec<ActiveTerm<'_>> = Vec::new();
    let spec = [
        ("original", Some(x), config.use_original_data, 1.0, config.batch_x),
        ("interventional", x_int, config.lambda1 > 0.0, config.lambda1, config.batch_int),
        ("transferred", x_itr, config.lambda2 > 0.0, config.lambda2, config.batch_itr),
    ];
    for (name, set, active, weight, batch) in spec {
        if !active {
            continue;
        }
        let set = set.ok_or_else(|| {
            Error::Configuration(format!("the {name} term has positive weight but no dataset was given"))
        })?;
        if set.is_empty() {
            return Err(Error::Configuration(format!("the {name} dataset is empty")));
        }
        terms.push(ActiveTerm {
            x: set.flat_images(),
            set,
            stream: BatchStream::new(set.len(), batch, named_seed(config.seed, name)),
            weight,
        });
    }
    if terms.is_empty() {
        return Err(Error::Configuration("objective has no active term".into()));
    }
    let input = terms[0].x.row_len();
    let classes = terms[0].set.num_classes;
    for t in &terms {
        if t.x.row_len() != input || t.set.num_classes != classes {
            return Err(Error::dim("training sets disagree on image size or class count"));
        }
    }
    let mut model = Mlp::<f32>::new(&[input, config.hidden, classes], config.seed, "classifier")?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..Default::default()
        },
        &model.params,
    );
    let steps_per_epoch = terms[0].stream.batches_per_pass();
    let mut loss_trace = Vec::with_capacity(steps_per_epoch * config.epochs);
    for epoch in 1..=config.epochs {
        for step in 0..steps_per_epoch {
            let batches: Vec<(Tensor, Vec<usize>, f64)> = terms
                .iter_mut()
                .map(|t| {
                    let idx = t.stream.next_batch();
                    let y = idx.iter().map(|&i| t.set.labels[i]).collect();
                    (t.x.select_rows(&idx), y, t.weight)
                })
                .collect();
            let term_refs: Vec<Term<'_, f32>> = batches
                .iter()
                .map(|(x, y, w)| Term { x, y, weight: *w })
                .collect();
            let mut tape = Tape::new();
            let vars = model.params.bind(&mut tape);
            let loss = weighted_loss_on_tape(&model, &mut tape, &vars, &term_refs)?;
            let lv = tape.scalar(loss) as f64;
            if !lv.is_finite() {
                return Err(Error::TrainingDiverged { epoch, batch: step });
            }
            loss_trace.push(lv);
            let grads = tape.backward(loss)?;
            let g = model.params.collect_grads(&grads, &vars);
            adam.step(&mut model.params, &g).map_err(|e| match e {
                Error::NonFinite { .. } => Error::TrainingDiverged { epoch, batch: step },
                other => other,
            })?;
            model.steps_trained += 1;
        }
    }
    Ok(TrainOutcome { model, loss_trace })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1: f64,
    pub per_class: Vec<f64>,
    pub chance: f64,
    pub n: usize,
}

const EVAL_CHUNK: usize = 512;

/// Logits for every image in `set`.
pub fn predict_logits(model: &Classifier, set: &LabeledImageSet) -> Result<Tensor> {
    let x = set.flat_images();
    let mut parts = Vec::new();
    let mut start = 0;
    while start < set.len() {
        let end = (start + EVAL_CHUNK).min(set.len());
        let idx: Vec<usize> = (start..end).collect();
        parts.push(model.forward(&x.select_rows(&idx))?);
        start = end;
    }
    Tensor::concat_rows(&parts.iter().collect::<Vec<_>>())
}

/// Top-1 accuracy from logits; ties go to the lowest class index.
pub fn report_from_logits(logits: &Tensor, labels: &[usize], num_classes: usize) -> Result<EvalReport> {
    if labels.is_empty() {
        return Err(Error::validation("empty test set"));
    }
    if logits.rows() != labels.len() {
        return Err(Error::dim(format!("{} logit rows for {} labels", logits.rows(), labels.len())));
    }
    let pred = argmax_rows(logits);
    let mut hits = vec![0usize; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (&p, &y) in pred.iter().zip(labels) {
        counts[y] += 1;
        if p == y {
            hits[y] += 1;
        }
    }
    let correct: usize = hits.iter().sum();
    Ok(EvalReport {
        top1: correct as f64 / labels.len() as f64,
        per_class: hits
            .iter()
            .zip(&counts)
            .map(|(&h, &c)| if c == 0 { 0.0 } else { h as f64 / c as f64 })
            .collect(),
        chance: 1.0 / num_classes as f64,
        n: labels.len(),
    })
}

pub fn evaluate(model: &Classifier, test: &LabeledImageSet) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::validation("empty test set"));
    }
    report_from_logits(&predict_logits(model, test)?, &test.labels, test.num_classes)
}
