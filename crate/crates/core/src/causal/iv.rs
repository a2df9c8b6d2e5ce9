use crate::error::{Error, Result};

/// Default weak-instrument floor, as a fraction of `std(z) std(x)`.
pub const WEAK_INSTRUMENT_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IvEstimate {
    pub effect: f64,
    pub cov_zx: f64,
    pub cov_zy: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn cov(a: &[f64], ma: f64, b: &[f64], mb: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64
}

/// Instrumental-variable ratio `cov(z, y) / cov(z, x)`.
pub fn linear_iv_estimate(z: &[f64], x: &[f64], y: &[f64]) -> Result<IvEstimate> {
    linear_iv_estimate_with_floor(z, x, y, WEAK_INSTRUMENT_FLOOR)
}

pub fn linear_iv_estimate_with_floor(z: &[f64], x: &[f64], y: &[f64], floor: f64) -> Result<IvEstimate> {
    if z.len() != x.len() || z.len() != y.len() {
        return Err(Error::dim(format!(
            "columns differ in length: z {}, x {}, y {}",
            z.len(),
            x.len(),
            y.len()
        )));
    }
    if z.len() < 2 {
        return Err(Error::InsufficientData("need at least 2 samples".into()));
    }
    let (mz, mx, my) = (mean(z), mean(x), mean(y));
    let cov_zx = cov(z, mz, x, mx);
    let cov_zy = cov(z, mz, y, my);
    let sd_z = cov(z, mz, z, mz).sqrt();
    let sd_x = cov(x, mx, x, mx).sqrt();
    let threshold = floor * sd_z * sd_x;
    if !(cov_zx.abs() > threshold) {
        return Err(Error::WeakInstrument {
            cov: cov_zx,
            floor: threshold,
        });
    }
    Ok(IvEstimate {
        effect: cov_zy / cov_zx,
        cov_zx,
        cov_zy,
    })
}
