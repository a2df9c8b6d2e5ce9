use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::Classifier;
use crate::datagen::LabeledImageSet;
use crate::error::{Error, Result};
use crate::ndcore::Tensor;

/// Unit-normalized penultimate activations. All-zero rows stay zero.
pub fn feature_extract(classifier: &Classifier, images: &LabeledImageSet) -> Result<Tensor> {
    if classifier.steps_trained == 0 {
        return Err(Error::validation("feature extraction needs a trained classifier"));
    }
    let x = images.flat_images();
    let mut parts = Vec::new();
    let mut start = 0;
    while start < images.len() {
        let end = (start + 512).min(images.len());
        parts.push(classifier.features(&x.select_rows(&(start..end).collect::<Vec<_>>()))?);
        start = end;
    }
    if parts.is_empty() {
        return Ok(Tensor::zeros(&[0, classifier.feature_dim()]));
    }
    let mut f = Tensor::concat_rows(&parts.iter().collect::<Vec<_>>())?;
    let d = f.row_len();
    for row in f.data_mut().chunks_mut(d) {
        let norm = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in row {
                *v = (*v as f64 / norm) as f32;
            }
        }
    }
    Ok(f)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodReport {
    /// Distance from each query to its nearest generated sample.
    pub distances: Vec<f64>,
    pub contributions: Vec<f64>,
    pub total: f64,
    pub mean: f64,
    pub tau: f64,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            let d = x[l] as f64 - y[l] as f64;
            acc[l] += d * d;
        }
    }
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Nearest-neighbor Gaussian-kernel estimate: query `i` contributes
/// `-min_j ||q_i - g_j||² / (2τ²)`.
pub fn estimate_log_px_given_z(query: &Tensor, generated: &Tensor, tau: f64) -> Result<LikelihoodReport> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::validation(format!("τ must be > 0, got {tau}")));
    }
    let (nq, dq) = query.check_2d("query features")?;
    let (ng, dg) = generated.check_2d("generated features")?;
    if ng == 0 {
        return Err(Error::validation("no generated samples to compare against"));
    }
    if nq == 0 {
        return Err(Error::validation("no query samples"));
    }
    if dq != dg {
        return Err(Error::dim(format!("feature dims differ: {dq} vs {dg}")));
    }
    let sq: Vec<f64> = (0..nq)
        .into_par_iter()
        .map(|i| {
            let q = query.row(i);
            (0..ng).map(|j| sq_dist(q, generated.row(j))).fold(f64::INFINITY, f64::min)
        })
        .collect();
    let contributions: Vec<f64> = sq.iter().map(|&d2| -d2 / (2.0 * tau * tau)).collect();
    let total: f64 = contributions.iter().sum();
    Ok(LikelihoodReport {
        distances: sq.iter().map(|d2| d2.sqrt()).collect(),
        mean: total / nq as f64,
        total,
        contributions,
        tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(rows: &[[f32; 2]]) -> Tensor {
        Tensor::new(vec![rows.len(), 2], rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn exact_match_contributes_zero() {
        let g = unit(&[[1.0, 0.0], [0.0, 1.0]]);
        let q = unit(&[[0.0, 1.0]]);
        let r = estimate_log_px_given_z(&q, &g, 1.0).unwrap();
        assert_eq!(r.contributions, vec![0.0]);
    }

    #[test]
    fn closed_form_kernel() {
        let (s, c) = (0.6f32, 0.8f32);
        let q = unit(&[[1.0, 0.0]]);
        let g = unit(&[[c, s]]);
        let d2 = ((1.0 - c as f64).powi(2) + (s as f64).powi(2)) as f64;
        let r = estimate_log_px_given_z(&q, &g, 1.0).unwrap();
        assert!((r.contributions[0] + d2 / 2.0).abs() < 1e-12);
        let r2 = estimate_log_px_given_z(&q, &g, 0.5).unwrap();
        assert!((r2.contributions[0] + d2 / 0.5).abs() < 1e-12);
    }

    #[test]
    fn superset_never_lowers_contributions_and_order_is_irrelevant() {
        let q = Tensor::from_fn(&[7, 3], |i| ((i * 13) % 7) as f32 / 7.0);
        let g = Tensor::from_fn(&[5, 3], |i| ((i * 5) % 11) as f32 / 11.0);
        let more = Tensor::concat_rows(&[&g, &Tensor::from_fn(&[4, 3], |i| (i % 3) as f32 / 2.0)]).unwrap();
        let a = estimate_log_px_given_z(&q, &g, 1.0).unwrap();
        let b = estimate_log_px_given_z(&q, &more, 1.0).unwrap();
        for (x, y) in a.contributions.iter().zip(&b.contributions) {
            assert!(y >= x);
            assert!(*x <= 0.0);
        }
        let rev = more.select_rows(&(0..9).rev().collect::<Vec<_>>());
        assert_eq!(estimate_log_px_given_z(&q, &rev, 1.0).unwrap(), b);
        assert!((b.total - b.contributions.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let q = unit(&[[1.0, 0.0]]);
        assert!(estimate_log_px_given_z(&q, &Tensor::zeros(&[0, 2]), 1.0).is_err());
        assert!(estimate_log_px_given_z(&q, &q, 0.0).is_err());
        assert!(estimate_log_px_given_z(&q, &Tensor::zeros(&[1, 3]), 1.0).is_err());
    }

    #[test]
    fn untrained_classifier_rejected() {
        let m = Classifier::new(&[4, 3, 2], 0, "c").unwrap();
        let set = LabeledImageSet::new(Tensor::zeros(&[1, 2, 2, 1]), vec![0], None, "t", 2).unwrap();
        assert!(matches!(feature_extract(&m, &set), Err(Error::Validation(_))));
    }

    #[test]
    fn features_are_unit_rows() {
        let mut m = Classifier::new(&[4, 6, 2], 3, "c").unwrap();
        m.steps_trained = 1;
        let set = LabeledImageSet::new(
            Tensor::from_fn(&[5, 2, 2, 1], |i| ((i * 7) % 5) as f32 / 4.0),
            vec![0, 1, 0, 1, 0],
            None,
            "t",
            2,
        )
        .unwrap();
        let f = feature_extract(&m, &set).unwrap();
        for i in 0..5 {
            let n: f32 = f.row(i).iter().map(|v| v * v).sum();
            assert!(n == 0.0 || (n.sqrt() - 1.0).abs() < 1e-5);
        }
    }
}
