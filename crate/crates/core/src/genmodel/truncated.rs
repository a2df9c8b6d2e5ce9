use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::ndcore::rng::stream_rng;
use crate::ndcore::Tensor;

/// Standard normal draws, each coordinate resampled until `|v| ≤ t`.
/// Row `i` depends only on `(seed, i)`.
pub fn sample_truncated_gaussian(dim: usize, t: f64, n: usize, seed: u64) -> Result<Tensor> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::validation(format!("truncation must be a positive finite number, got {t}")));
    }
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        let mut rng = stream_rng(seed, i as u64);
        for _ in 0..dim {
            data.push(truncated_draw(&mut rng, t) as f32);
        }
    }
    Tensor::new(vec![n, dim], data)
}

pub(crate) fn truncated_draw<R: Rng>(rng: &mut R, t: f64) -> f64 {
    loop {
        let v: f64 = rng.sample(StandardNormal);
        if v.abs() <= t {
            return v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn variance(t: &Tensor) -> f64 {
        let n = t.len() as f64;
        let m = t.sum_f64() / n;
        t.data().iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn respects_truncation() {
        let s = sample_truncated_gaussian(4, 0.5, 500, 1).unwrap();
        assert!(s.data().iter().all(|v| v.abs() <= 0.5));
        assert!(matches!(sample_truncated_gaussian(4, 0.0, 5, 1), Err(Error::Validation(_))));
    }

    #[test]
    fn rows_depend_only_on_index() {
        let a = sample_truncated_gaussian(3, 1.0, 10, 4).unwrap();
        let b = sample_truncated_gaussian(3, 1.0, 4, 4).unwrap();
        assert_eq!(&a.data()[..12], b.data());
    }

    #[test]
    fn variance_against_truncated_normal_formula() {
        // Var of N(0,1) truncated to [-t, t] is 1 - 2 t φ(t) / (2Φ(t) - 1).
        let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let s = sample_truncated_gaussian(1, 10.0, 100_000, 2).unwrap();
        assert!((variance(&s) - 1.0).abs() < 0.02);

        let t = 0.1;
        // 2Φ(t) - 1 by Simpson's rule on φ over [-t, t].
        let steps = 1000;
        let h = 2.0 * t / steps as f64;
        let mass: f64 = (0..=steps)
            .map(|i| {
                let w = if i == 0 || i == steps { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                w * phi(-t + i as f64 * h)
            })
            .sum::<f64>()
            * h
            / 3.0;
        let expected = 1.0 - 2.0 * t * phi(t) / mass;
        let s = sample_truncated_gaussian(1, t, 100_000, 3).unwrap();
        let v = variance(&s);
        assert!(v < 0.01);
        assert!((v - expected).abs() < 0.03 * expected, "{v} vs {expected}");
    }
}
