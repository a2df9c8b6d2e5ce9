use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::rng::named_rng;
use crate::ndcore::tape::sigmoid;
use crate::ndcore::tensor::affine_forward;
use crate::ndcore::{Linear, ParamStore, Real, Tape, Tensor, Var};

/// Clamp applied to decoder output so every pixel stays strictly inside (0, 1) in f32.
const PIXEL_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvaeArch {
    /// `[H, W, C]` of the images; `input_dim` is their product.
    pub image_shape: [usize; 3],
    pub input_dim: usize,
    pub hidden: usize,
    pub latent_dim: usize,
    pub num_classes: usize,
}

impl Default for CvaeArch {
    fn default() -> Self {
        Self {
            image_shape: [28, 28, 3],
            input_dim: 28 * 28 * 3,
            hidden: 400,
            latent_dim: 16,
            num_classes: 10,
        }
    }
}

impl CvaeArch {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.latent_dim == 0 || self.num_classes == 0 {
            return Err(Error::validation(format!("degenerate CVAE architecture {self:?}")));
        }
        if self.image_shape.iter().product::<usize>() != self.input_dim {
            return Err(Error::validation(format!(
                "image shape {:?} does not flatten to {}",
                self.image_shape, self.input_dim
            )));
        }
        Ok(())
    }
}

/// Conditional VAE with one hidden relu layer on each side and one-hot
/// labels concatenated to both the encoder and decoder inputs.
#[derive(Clone, Debug)]
pub struct Cvae<T: Real = f32> {
    pub arch: CvaeArch,
    pub params: ParamStore<T>,
    enc_hidden: Linear,
    enc_mean: Linear,
    enc_logvar: Linear,
    dec_hidden: Linear,
    dec_out: Linear,
}

/// Negative-ELBO pieces, summed over the batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboReport {
    pub reconstruction: f64,
    pub kl: f64,
    pub total: f64,
    pub batch_size: usize,
}

impl ElboReport {
    pub fn per_item(&self) -> f64 {
        self.total / self.batch_size.max(1) as f64
    }
}

/// Loss nodes of one negative-ELBO evaluation on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ElboVars {
    pub reconstruction: Var,
    pub kl: Var,
    pub total: Var,
}

pub fn one_hot<T: Real>(labels: &[usize], num_classes: usize) -> Result<Tensor<T>> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Index(format!("label {bad} outside [0, {num_classes})")));
    }
    let mut t = Tensor::zeros(&[labels.len(), num_classes]);
    for (i, &l) in labels.iter().enumerate() {
        t.row_mut(i)[l] = T::one();
    }
    Ok(t)
}

fn concat_cols<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n, ca, cb) = (a.rows(), a.row_len(), b.row_len());
    let mut data = Vec::with_capacity(n * (ca + cb));
    for i in 0..n {
        data.extend_from_slice(a.row(i));
        data.extend_from_slice(b.row(i));
    }
    Tensor::new(vec![n, ca + cb], data).expect("row counts checked by caller")
}

fn relu_in_place<T: Real>(t: &mut Tensor<T>) {
    for v in t.data_mut() {
        if *v <= T::zero() {
            *v = T::zero();
        }
    }
}

impl<T: Real> Cvae<T> {
    pub fn new(arch: CvaeArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = named_rng(seed, "cvae-init");
        let mut params = ParamStore::new();
        let (d, h, l, c) = (arch.input_dim, arch.hidden, arch.latent_dim, arch.num_classes);
        let enc_hidden = Linear::init(&mut params, "enc.hidden", d + c, h, &mut rng);
        let enc_mean = Linear::init(&mut params, "enc.mean", h, l, &mut rng);
        let enc_logvar = Linear::init(&mut params, "enc.logvar", h, l, &mut rng);
        let dec_hidden = Linear::init(&mut params, "dec.hidden", l + c, h, &mut rng);
        let dec_out = Linear::init(&mut params, "dec.out", h, d, &mut rng);
        Ok(Self {
            arch,
            params,
            enc_hidden,
            enc_mean,
            enc_logvar,
            dec_hidden,
            dec_out,
        })
    }

    /// Same network with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> Cvae<U> {
        Cvae {
            arch: self.arch,
            params: self.params.cast(),
            enc_hidden: self.enc_hidden,
            enc_mean: self.enc_mean,
            enc_logvar: self.enc_logvar,
            dec_hidden: self.dec_hidden,
            dec_out: self.dec_out,
        }
    }

    /// Replaces the parameters, checking names and shapes.
    pub fn with_params(&self, params: ParamStore<T>) -> Result<Self> {
        if params.names() != self.params.names() {
            return Err(Error::Format("checkpoint parameter names do not match the architecture".into()));
        }
        for ((name, a), b) in self.params.iter().zip(params.tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::dim(format!(
                    "parameter {name}: expected {:?}, found {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(Self {
            params,
            ..self.clone()
        })
    }

    fn check_batch(&self, x: &Tensor<T>, y: &[usize]) -> Result<()> {
        let (n, d) = x.check_2d("cvae input")?;
        if d != self.arch.input_dim {
            return Err(Error::dim(format!(
                "cvae expects {} values per image, got {d}",
                self.arch.input_dim
            )));
        }
        if y.len() != n {
            return Err(Error::dim(format!("{} labels for {n} images", y.len())));
        }
        Ok(())
    }

    fn check_latent(&self, h: &Tensor<T>, y: &[usize]) -> Result<()> {
        let (n, l) = h.check_2d("cvae latent")?;
        if l != self.arch.latent_dim {
            return Err(Error::dim(format!(
                "cvae expects latent dim {}, got {l}",
                self.arch.latent_dim
            )));
        }
        if y.len() != n {
            return Err(Error::dim(format!("{} labels for {n} latents", y.len())));
        }
        if !h.all_finite() {
            return Err(Error::NonFinite { name: "latent".into() });
        }
        Ok(())
    }

    fn p(&self, i: usize) -> &Tensor<T> {
        self.params.get(i)
    }

    /// Posterior mean and log-variance, `[n, latent_dim]` each.
    pub fn encode(&self, x: &Tensor<T>, y: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_batch(x, y)?;
        let inp = concat_cols(x, &one_hot(y, self.arch.num_classes)?);
        let mut hid = affine_forward(&inp, self.p(self.enc_hidden.w), self.p(self.enc_hidden.b))?;
        relu_in_place(&mut hid);
        let mean = affine_forward(&hid, self.p(self.enc_mean.w), self.p(self.enc_mean.b))?;
        let logvar = affine_forward(&hid, self.p(self.enc_logvar.w), self.p(self.enc_logvar.b))?;
        if !mean.all_finite() || !logvar.all_finite() {
            return Err(Error::NonFinite { name: "encoder output".into() });
        }
        Ok((mean, logvar))
    }

    /// Decoder logits, `[n, input_dim]`.
    pub fn decode_logits(&self, h: &Tensor<T>, y: &[usize]) -> Result<Tensor<T>> {
        self.check_latent(h, y)?;
        let inp = concat_cols(h, &one_hot(y, self.arch.num_classes)?);
        let mut hid = affine_forward(&inp, self.p(self.dec_hidden.w), self.p(self.dec_hidden.b))?;
        relu_in_place(&mut hid);
        affine_forward(&hid, self.p(self.dec_out.w), self.p(self.dec_out.b))
    }

    /// Pixel probabilities in (0, 1), `[n, input_dim]`.
    pub fn decode(&self, h: &Tensor<T>, y: &[usize]) -> Result<Tensor<T>> {
        let lo = T::from_f64(PIXEL_EPS);
        let hi = T::from_f64(1.0 - PIXEL_EPS);
        Ok(self.decode_logits(h, y)?.map(|v| {
            let s = sigmoid(v);
            if s < lo {
                lo
            } else if s > hi {
                hi
            } else {
                s
            }
        }))
    }

    pub fn encode_on_tape(&self, tape: &mut Tape<T>, vars: &[Var], x: Var, y: Var) -> Result<(Var, Var)> {
        let inp = tape.concat_cols(x, y)?;
        let hid = self.enc_hidden.forward(tape, vars, inp)?;
        let hid = tape.relu(hid);
        let mean = self.enc_mean.forward(tape, vars, hid)?;
        let logvar = self.enc_logvar.forward(tape, vars, hid)?;
        Ok((mean, logvar))
    }

    pub fn decode_logits_on_tape(&self, tape: &mut Tape<T>, vars: &[Var], h: Var, y: Var) -> Result<Var> {
        let inp = tape.concat_cols(h, y)?;
        let hid = self.dec_hidden.forward(tape, vars, inp)?;
        let hid = tape.relu(hid);
        self.dec_out.forward(tape, vars, hid)
    }

    /// Records the negative ELBO of a batch. `noise` is the standard-normal
    /// draw used by the reparameterization.
    pub fn negative_elbo_on_tape(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        x: &Tensor<T>,
        y: &[usize],
        noise: &Tensor<T>,
        beta: f64,
    ) -> Result<ElboVars> {
        self.check_batch(x, y)?;
        let xv = tape.constant(x.clone());
        let yv = tape.constant(one_hot(y, self.arch.num_classes)?);
        let (mean, logvar) = self.encode_on_tape(tape, vars, xv, yv)?;
        let eps = tape.constant(noise.clone());
        let h = reparameterize_on_tape(tape, mean, logvar, eps)?;
        let logits = self.decode_logits_on_tape(tape, vars, h, yv)?;
        let reconstruction = tape.bce_with_logits_sum(logits, x)?;
        let kl = kl_on_tape(tape, mean, logvar)?;
        let weighted = tape.scale(kl, T::from_f64(beta));
        let total = tape.add(reconstruction, weighted)?;
        Ok(ElboVars {
            reconstruction,
            kl,
            total,
        })
    }

    /// Negative ELBO of a batch without recording gradients.
    pub fn evaluate_elbo(&self, x: &Tensor<T>, y: &[usize], noise: &Tensor<T>, beta: f64) -> Result<ElboReport> {
        let (mean, logvar) = self.encode(x, y)?;
        let h = reparameterize(&mean, &logvar, noise)?;
        let x_hat = self.decode(&h, y)?;
        elbo_loss(x, &x_hat, &mean, &logvar, beta)
    }
}

/// `h = mean + exp(logvar / 2) ⊙ noise`.
pub fn reparameterize<T: Real>(mean: &Tensor<T>, logvar: &Tensor<T>, noise: &Tensor<T>) -> Result<Tensor<T>> {
    if mean.shape() != logvar.shape() || mean.shape() != noise.shape() {
        return Err(Error::dim(format!(
            "reparameterize shapes {:?}, {:?}, {:?}",
            mean.shape(),
            logvar.shape(),
            noise.shape()
        )));
    }
    let half = T::from_f64(0.5);
    let data = mean
        .data()
        .iter()
        .zip(logvar.data())
        .zip(noise.data())
        .map(|((&m, &lv), &e)| m + (lv * half).exp() * e)
        .collect();
    Tensor::new(mean.shape().to_vec(), data)
}

pub fn reparameterize_on_tape<T: Real>(tape: &mut Tape<T>, mean: Var, logvar: Var, noise: Var) -> Result<Var> {
    let half = tape.scale(logvar, T::from_f64(0.5));
    let sd = tape.exp(half);
    let shift = tape.mul(sd, noise)?;
    tape.add(mean, shift)
}

/// `½ Σ (exp(logvar) + mean² − 1 − logvar)`.
pub fn kl_on_tape<T: Real>(tape: &mut Tape<T>, mean: Var, logvar: Var) -> Result<Var> {
    let var = tape.exp(logvar);
    let m2 = tape.square(mean);
    let a = tape.add(var, m2)?;
    let b = tape.sub(a, logvar)?;
    let c = tape.add_scalar(b, -T::one());
    let s = tape.sum(c);
    Ok(tape.scale(s, T::from_f64(0.5)))
}

/// Negative ELBO from probabilities. `x_hat` is clamped away from 0 and 1
/// before taking logs.
pub fn elbo_loss<T: Real>(
    x: &Tensor<T>,
    x_hat: &Tensor<T>,
    mean: &Tensor<T>,
    logvar: &Tensor<T>,
    beta: f64,
) -> Result<ElboReport> {
    if x.shape() != x_hat.shape() {
        return Err(Error::dim(format!(
            "elbo: target {:?} and reconstruction {:?}",
            x.shape(),
            x_hat.shape()
        )));
    }
    if mean.shape() != logvar.shape() {
        return Err(Error::dim(format!(
            "elbo: mean {:?} and logvar {:?}",
            mean.shape(),
            logvar.shape()
        )));
    }
    if !(beta >= 0.0) {
        return Err(Error::validation(format!("beta must be >= 0, got {beta}")));
    }
    if x.data().iter().any(|&v| !(T::zero()..=T::one()).contains(&v)) {
        return Err(Error::Domain("elbo target outside [0, 1]".into()));
    }
    let mut recon = 0.0;
    for (&t, &p) in x.data().iter().zip(x_hat.data()) {
        let (t, p) = (t.as_f64(), p.as_f64().clamp(1e-12, 1.0 - 1e-12));
        recon -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    let mut kl = 0.0;
    for (&m, &lv) in mean.data().iter().zip(logvar.data()) {
        let (m, lv) = (m.as_f64(), lv.as_f64());
        kl += 0.5 * (lv.exp() + m * m - 1.0 - lv);
    }
    let batch_size = if x.ndim() >= 1 { x.rows() } else { 1 };
    Ok(ElboReport {
        reconstruction: recon,
        kl,
        total: recon + beta * kl,
        batch_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::{finite_difference_check, GradCheckConfig};
    use crate::ndcore::rng::stream_rng;
    use rand_distr::{Distribution, StandardNormal};

    fn small() -> CvaeArch {
        CvaeArch {
            image_shape: [2, 2, 3],
            input_dim: 12,
            hidden: 7,
            latent_dim: 3,
            num_classes: 4,
        }
    }

    #[test]
    fn shapes_and_determinism() {
        let m = Cvae::<f32>::new(small(), 1).unwrap();
        let x = Tensor::from_fn(&[5, 12], |i| (i % 7) as f32 / 7.0);
        let y = [0, 1, 2, 3, 0];
        let (mu, lv) = m.encode(&x, &y).unwrap();
        assert_eq!(mu.shape(), &[5, 3]);
        assert_eq!(lv.shape(), &[5, 3]);
        assert_eq!(m.encode(&x, &y).unwrap().0, mu);
        let img = m.decode(&mu, &y).unwrap();
        assert!(img.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(m.decode(&mu, &y).unwrap(), img);
        assert!(matches!(m.encode(&Tensor::zeros(&[2, 11]), &[0, 1]), Err(Error::Dimension(_))));
    }

    #[test]
    fn reparameterize_cases() {
        let mean = Tensor::new(vec![1, 2], vec![1.0f32, -2.0]).unwrap();
        let zero = Tensor::zeros(&[1, 2]);
        assert_eq!(reparameterize(&mean, &zero, &zero).unwrap(), mean);
        let n = Tensor::new(vec![1, 2], vec![0.5f32, 0.25]).unwrap();
        let h = reparameterize(&mean, &zero, &n).unwrap();
        assert_eq!(h.data(), &[1.5, -1.75]);
    }

    #[test]
    fn reparameterize_gradient_wrt_mean_is_identity() {
        let mut ps = ParamStore::<f64>::new();
        ps.push("mean", Tensor::new(vec![2, 2], vec![0.3, -0.2, 1.1, 0.0]).unwrap());
        ps.push("logvar", Tensor::new(vec![2, 2], vec![0.1, -0.4, 0.2, 0.5]).unwrap());
        let noise = Tensor::new(vec![2, 2], vec![0.7, -1.3, 0.2, 0.9]).unwrap();
        let w = Tensor::new(vec![2, 2], vec![1.0, 2.0, -3.0, 0.5]).unwrap();
        let r = finite_difference_check(
            &ps,
            |tape, v| {
                let e = tape.constant(noise.clone());
                let h = reparameterize_on_tape(tape, v[0], v[1], e)?;
                let wv = tape.constant(w.clone());
                let p = tape.mul(h, wv)?;
                Ok(tape.sum(p))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    #[test]
    fn elbo_closed_forms() {
        let z = Tensor::<f64>::zeros(&[1, 1]);
        let half = Tensor::full(&[1, 3], 0.5);
        let r = elbo_loss(&half, &half, &z, &z, 1.0).unwrap();
        assert_eq!(r.kl, 0.0);
        assert!((r.reconstruction - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let one = Tensor::full(&[1, 1], 1.0);
        let r = elbo_loss(&half, &half, &one, &z, 2.0).unwrap();
        assert!((r.kl - 0.5).abs() < 1e-12);
        assert!((r.total - r.reconstruction - 1.0).abs() < 1e-12);
        let bad = Tensor::full(&[1, 3], 1.5);
        assert!(matches!(elbo_loss(&bad, &half, &z, &z, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn kl_nonnegative_random() {
        let mut rng = stream_rng(11, 0);
        for _ in 0..200 {
            let m = Tensor::<f64>::from_fn(&[3, 4], |_| StandardNormal.sample(&mut rng));
            let lv = Tensor::<f64>::from_fn(&[3, 4], |_| { let v: f64 = StandardNormal.sample(&mut rng); 3.0 * v });
            let x = Tensor::full(&[3, 2], 0.5);
            assert!(elbo_loss(&x, &x, &m, &lv, 1.0).unwrap().kl >= 0.0);
        }
    }

    #[test]
    fn tape_elbo_matches_direct_evaluation() {
        let m = Cvae::<f64>::new(small(), 3).unwrap();
        let mut rng = stream_rng(5, 0);
        let x = Tensor::from_fn(&[4, 12], |i| ((i * 37) % 11) as f64 / 10.0);
        let y = [3, 1, 0, 2];
        let noise = Tensor::from_fn(&[4, 3], |_| StandardNormal.sample(&mut rng));
        let mut tape = Tape::new();
        let vars = m.params.bind(&mut tape);
        let e = m.negative_elbo_on_tape(&mut tape, &vars, &x, &y, &noise, 0.7).unwrap();
        let direct = m.evaluate_elbo(&x, &y, &noise, 0.7).unwrap();
        assert!((tape.scalar(e.total) - direct.total).abs() < 1e-9 * direct.total.abs());
        assert!((tape.scalar(e.kl) - direct.kl).abs() < 1e-9);
    }

    #[test]
    fn elbo_gradients_match_finite_differences() {
        let m = Cvae::<f64>::new(small(), 9).unwrap();
        let mut rng = stream_rng(6, 0);
        let x = Tensor::from_fn(&[3, 12], |i| ((i * 13) % 9) as f64 / 8.0);
        let y = [2, 0, 1];
        let noise = Tensor::from_fn(&[3, 3], |_| StandardNormal.sample(&mut rng));
        let r = finite_difference_check(
            &m.params,
            |tape, vars| Ok(m.negative_elbo_on_tape(tape, vars, &x, &y, &noise, 1.0)?.total),
            &GradCheckConfig {
                coords_per_param: 30,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }
}
