//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ndcore::params::ParamStore;
use crate::ndcore::tape::{Tape, Var};
use crate::ndcore::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates sampled per parameter tensor; tensors at or below this size are checked exhaustively.
    pub coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            coords_per_param: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
    /// Coordinates whose ±step evaluation crossed a ReLU kink and were excluded.
    pub skipped_kinks: usize,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `loss`.
///
/// `loss` returns the loss value and a piece signature (see
/// [`Tape::kink_signature`]); coordinates where the signature changes between
/// the base point and either probe are skipped.
pub fn check_gradients(
    params: &ParamStore<f64>,
    analytic: &[Tensor<f64>],
    mut loss: impl FnMut(&ParamStore<f64>) -> Result<(f64, u64)>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if cfg.step <= 0.0 {
        return Err(Error::validation("finite-difference step must be > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probe = params.clone();
    let (base, base_sig) = loss(&probe)?;
    if !base.is_finite() {
        return Err(Error::NonFinite {
            name: "loss".into(),
        });
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
        skipped_kinks: 0,
        passed: true,
    };
    for p in 0..params.len() {
        let n = params.get(p).len();
        let coords: Vec<usize> = if n <= cfg.coords_per_param {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, cfg.coords_per_param).into_vec();
            c.sort_unstable();
            c
        };
        for j in coords {
            let orig = params.get(p).data()[j];
            probe.get_mut(p).data_mut()[j] = orig + cfg.step;
            let (up, up_sig) = loss(&probe)?;
            probe.get_mut(p).data_mut()[j] = orig - cfg.step;
            let (down, down_sig) = loss(&probe)?;
            probe.get_mut(p).data_mut()[j] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite {
                    name: format!("loss at perturbed {}[{j}]", params.name(p)),
                });
            }
            if up_sig != base_sig || down_sig != base_sig {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * cfg.step);
            let err = relative_error(analytic[p].data()[j], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = params.name(p).to_string();
                report.worst_index = j;
            }
        }
    }
    report.passed = report.max_rel_error < cfg.tolerance;
    Ok(report)
}

/// Gradient check of a loss expressed as a tape program over `params`.
pub fn finite_difference_check(
    params: &ParamStore<f64>,
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic = params.collect_grads(&grads, &vars);
    check_gradients(
        params,
        &analytic,
        |p| {
            let mut tape = Tape::new();
            let vars = p.bind_frozen(&mut tape);
            let loss = build(&mut tape, &vars)?;
            Ok((tape.scalar(loss), tape.kink_signature()))
        },
        cfg,
    )
}
