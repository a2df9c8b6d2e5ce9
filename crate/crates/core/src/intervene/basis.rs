use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::str::FromStr;

use std::fs;
use std::path::Path;

use crate::datagen::{read_tensor_file, write_tensor_file, LabeledImageSet};
use crate::error::{Error, Result};
use crate::genmodel::{sample_truncated_gaussian, Cvae};
use crate::ndcore::Tensor;

const ENCODE_CHUNK: usize = 256;

/// Principal directions of a latent point cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBasis {
    /// `[d, d]`, row `j` is direction `r_j`, ordered by decreasing variance.
    pub directions: Tensor,
    pub sigmas: Vec<f64>,
    pub data_mean: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetMode {
    /// `h* = h + σ_j s′ r_j`
    None,
    /// Component of `h − mean` along `r_j` is replaced by `σ_j s′`.
    MeanProjection,
}

impl fmt::Display for OffsetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OffsetMode::None => "none",
            OffsetMode::MeanProjection => "mean_projection",
        })
    }
}

impl FromStr for OffsetMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(OffsetMode::None),
            "mean_projection" => Ok(OffsetMode::MeanProjection),
            other => Err(Error::validation(format!(
                "unknown offset mode `{other}` (expected none or mean_projection)"
            ))),
        }
    }
}

/// Where the PCA point cloud comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisSource {
    /// Encoder posterior means over a dataset.
    Posterior,
    /// Truncated prior draws.
    Prior,
}

impl FromStr for BasisSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "posterior" => Ok(BasisSource::Posterior),
            "prior" => Ok(BasisSource::Prior),
            other => Err(Error::validation(format!(
                "unknown basis source `{other}` (expected posterior or prior)"
            ))),
        }
    }
}

impl LatentBasis {
    pub fn dim(&self) -> usize {
        self.sigmas.len()
    }

    pub fn direction(&self, j: usize) -> &[f32] {
        self.directions.row(j)
    }

    /// Largest `|r_i · r_j − δ_ij|`.
    pub fn orthonormality_error(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let dot: f64 = self
                    .direction(i)
                    .iter()
                    .zip(self.direction(j))
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// Writes `directions.gint`, `sigmas.gint` and `mean.gint` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let d = self.dim();
        write_tensor_file(&dir.join("directions.gint"), &self.directions)?;
        let to_t = |v: &[f64]| Tensor::new(vec![d], v.iter().map(|&x| x as f32).collect());
        write_tensor_file(&dir.join("sigmas.gint"), &to_t(&self.sigmas)?)?;
        write_tensor_file(&dir.join("mean.gint"), &to_t(&self.data_mean)?)
    }

    /// Inverse of [`LatentBasis::save`]. Sigmas and mean come back at f32 precision.
    pub fn load(dir: &Path) -> Result<Self> {
        let directions = read_tensor_file(&dir.join("directions.gint"))?;
        let (d, d2) = directions.check_2d("basis directions")?;
        let from_t = |name: &str| -> Result<Vec<f64>> {
            let t = read_tensor_file(&dir.join(name))?;
            if t.len() != d {
                return Err(Error::Format(format!("{name} has {} entries, expected {d}", t.len())));
            }
            Ok(t.data().iter().map(|&v| v as f64).collect())
        };
        if d != d2 {
            return Err(Error::Format(format!("basis directions are {d}x{d2}")));
        }
        Ok(Self {
            sigmas: from_t("sigmas.gint")?,
            data_mean: from_t("mean.gint")?,
            directions,
        })
    }

    /// Hex SHA-256 of the basis values, recorded alongside generated sets.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.directions.data() {
            h.update(v.to_le_bytes());
        }
        for v in self.sigmas.iter().chain(&self.data_mean) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// PCA of the rows of `latents` (`[n, d]`).
pub fn fit_basis_from_latents(latents: &Tensor) -> Result<LatentBasis> {
    let (n, d) = latents.check_2d("latents")?;
    if n < 2 {
        return Err(Error::InsufficientData(format!("PCA needs at least 2 points, got {n}")));
    }
    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(latents.row(i)) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut centered = vec![0.0f64; d];
    for i in 0..n {
        for ((c, &v), m) in centered.iter_mut().zip(latents.row(i)).zip(&mean) {
            *c = v as f64 - m;
        }
        for a in 0..d {
            for b in a..d {
                cov[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / (n - 1) as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut directions = Vec::with_capacity(d * d);
    let mut sigmas = Vec::with_capacity(d);
    for &k in &order {
        let col = eig.eigenvectors.column(k);
        // Sign convention: the largest-magnitude entry is positive.
        let pivot = (0..d)
            .max_by(|&a, &b| col[a].abs().partial_cmp(&col[b].abs()).unwrap().then(b.cmp(&a)))
            .unwrap_or(0);
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        directions.extend(col.iter().map(|&v| (sign * v) as f32));
        sigmas.push(eig.eigenvalues[k].max(0.0).sqrt());
    }
    Ok(LatentBasis {
        directions: Tensor::new(vec![d, d], directions)?,
        sigmas,
        data_mean: mean,
    })
}

/// Encoder posterior means of every image in `set`, `[n, latent_dim]`.
pub fn encode_means(cvae: &Cvae, set: &LabeledImageSet) -> Result<Tensor> {
    let x = set.flat_images();
    let mut parts = Vec::new();
    let mut start = 0;
    while start < set.len() {
        let end = (start + ENCODE_CHUNK).min(set.len());
        let idx: Vec<usize> = (start..end).collect();
        parts.push(cvae.encode(&x.select_rows(&idx), &set.labels[start..end])?.0);
        start = end;
    }
    if parts.is_empty() {
        return Ok(Tensor::zeros(&[0, cvae.arch.latent_dim]));
    }
    Tensor::concat_rows(&parts.iter().collect::<Vec<_>>())
}

/// PCA over the aggregate posterior of `dataset`.
pub fn fit_latent_basis(cvae: &Cvae, dataset: &LabeledImageSet) -> Result<LatentBasis> {
    if dataset.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "PCA needs at least 2 images, got {}",
            dataset.len()
        )));
    }
    fit_basis_from_latents(&encode_means(cvae, dataset)?)
}

/// PCA over `n` truncated prior draws.
pub fn fit_prior_basis(latent_dim: usize, n: usize, t: f64, seed: u64) -> Result<LatentBasis> {
    fit_basis_from_latents(&sample_truncated_gaussian(latent_dim, t, n, seed)?)
}

/// Steers `h` along direction `j` (0-based) by `s_prime` standard deviations.
pub fn apply_intervention(
    h: &[f32],
    basis: &LatentBasis,
    j: usize,
    s_prime: f64,
    offset_mode: OffsetMode,
) -> Result<Vec<f32>> {
    let d = basis.dim();
    if h.len() != d {
        return Err(Error::dim(format!("latent has {} entries, basis has {d}", h.len())));
    }
    if j >= d {
        return Err(Error::Index(format!("direction {j} outside [0, {d})")));
    }
    if !s_prime.is_finite() {
        return Err(Error::NonFinite { name: "s_prime".into() });
    }
    let r = basis.direction(j);
    let shift = basis.sigmas[j] * s_prime;
    let coef = match offset_mode {
        OffsetMode::None => shift,
        OffsetMode::MeanProjection => {
            let proj: f64 = h
                .iter()
                .zip(r)
                .zip(&basis.data_mean)
                .map(|((&hv, &rv), &m)| (hv as f64 - m) * rv as f64)
                .sum();
            shift - proj
        }
    };
    Ok(h.iter()
        .zip(r)
        .map(|(&hv, &rv)| (hv as f64 + coef * rv as f64) as f32)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::rng::stream_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn basis_2d(sigma: f64, dir: [f32; 2]) -> LatentBasis {
        let other = [-dir[1], dir[0]];
        LatentBasis {
            directions: Tensor::new(vec![2, 2], vec![dir[0], dir[1], other[0], other[1]]).unwrap(),
            sigmas: vec![sigma, 0.0],
            data_mean: vec![0.0, 0.0],
        }
    }

    #[test]
    fn single_axis_cloud() {
        let lat = Tensor::from_fn(&[50, 3], |i| if i % 3 == 0 { (i / 3) as f32 } else { 0.0 });
        let b = fit_basis_from_latents(&lat).unwrap();
        assert_eq!(b.direction(0), &[1.0, 0.0, 0.0]);
        let xs: Vec<f64> = (0..50).map(f64::from).collect();
        let m = xs.iter().sum::<f64>() / 50.0;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 49.0).sqrt();
        assert!((b.sigmas[0] - sd).abs() < 1e-9);
        assert_eq!(&b.sigmas[1..], &[0.0, 0.0]);
        assert!(b.orthonormality_error() < 1e-5);
    }

    #[test]
    fn save_load_round_trip() {
        let lat = Tensor::from_fn(&[20, 3], |i| ((i * 7) % 5) as f32 * (1 + i % 3) as f32);
        let b = fit_basis_from_latents(&lat).unwrap();
        let dir = tempfile::tempdir().unwrap();
        b.save(dir.path()).unwrap();
        let back = LatentBasis::load(dir.path()).unwrap();
        assert_eq!(back.directions, b.directions);
        for (x, y) in back.sigmas.iter().zip(&b.sigmas) {
            assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0));
        }
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(
            fit_basis_from_latents(&Tensor::zeros(&[1, 3])),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn known_diagonal_covariance() {
        let mut rng = stream_rng(3, 0);
        let scales = [2.0f64, 1.0, 0.5, 0.25];
        let lat = Tensor::from_fn(&[100_000, 4], |i| {
            let v: f64 = rng.sample(StandardNormal);
            (v * scales[i % 4]) as f32
        });
        let b = fit_basis_from_latents(&lat).unwrap();
        for (s, t) in b.sigmas.iter().zip(scales) {
            assert!((s - t).abs() < 0.02 * t, "{s} vs {t}");
        }
        assert!(b.orthonormality_error() < 1e-5);
    }

    #[test]
    fn intervention_arithmetic() {
        let b = basis_2d(2.0, [0.0, 1.0]);
        let h = apply_intervention(&[1.0, 0.0], &b, 0, 3.0, OffsetMode::None).unwrap();
        assert_eq!(h, vec![1.0, 6.0]);
        assert_eq!(apply_intervention(&[1.0, 0.5], &b, 0, 0.0, OffsetMode::None).unwrap(), vec![1.0, 0.5]);

        let b = basis_2d(1.0, [1.0, 0.0]);
        let h = apply_intervention(&[1.0, 1.0], &b, 0, 2.0, OffsetMode::MeanProjection).unwrap();
        assert_eq!(h, vec![2.0, 1.0]);
        assert!(matches!(
            apply_intervention(&[1.0, 1.0], &b, 2, 1.0, OffsetMode::None),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn shifts_compose_additively() {
        let b = basis_2d(1.5, [0.6, 0.8]);
        let h = [0.3f32, -0.7];
        let once = apply_intervention(&h, &b, 0, 1.25, OffsetMode::None).unwrap();
        let twice = apply_intervention(&once, &b, 0, -0.5, OffsetMode::None).unwrap();
        let direct = apply_intervention(&h, &b, 0, 0.75, OffsetMode::None).unwrap();
        for (a, c) in twice.iter().zip(&direct) {
            assert!((a - c).abs() < 1e-6);
        }
    }
}
