//! Ground-truth structural causal models used as oracles.
//!
//! The discrete model has edges C → Z, C → Y, Z → X, X → Y; the object
//! features F are folded into the noise of P(X | Z). The linear model adds an
//! intervened nuisance Z_i, an untouched nuisance Z_U and object features F.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::rng::stream_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScmDiscrete {
    pub card_c: usize,
    pub card_z: usize,
    pub card_x: usize,
    pub card_y: usize,
    pub p_c: Vec<f64>,
    /// `[c][z]`
    pub p_z_given_c: Vec<Vec<f64>>,
    /// `[z][x]`
    pub p_x_given_z: Vec<Vec<f64>>,
    /// `[x * card_c + c][y]`
    pub p_y_given_xc: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DiscreteDraw {
    pub c: usize,
    pub z: usize,
    pub x: usize,
    pub y: usize,
}

fn check_dist(row: &[f64], len: usize, what: &str) -> Result<()> {
    if row.len() != len {
        return Err(Error::validation(format!(
            "{what}: {} entries, expected {len}",
            row.len()
        )));
    }
    if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::validation(format!("{what}: negative or non-finite entry")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!("{what}: row sums to {s}")));
    }
    Ok(())
}

fn dirichlet_row<R: Rng>(rng: &mut R, k: usize, alpha: f64) -> Vec<f64> {
    let g = Gamma::new(alpha, 1.0).expect("alpha > 0");
    let mut v: Vec<f64> = (0..k).map(|_| g.sample(rng).max(1e-12)).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|p| *p /= s);
    // Renormalize the last entry so the row sums to one to machine precision.
    let head: f64 = v[..k - 1].iter().sum();
    v[k - 1] = 1.0 - head;
    if v[k - 1] < 0.0 {
        v[k - 1] = 0.0;
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|p| *p /= s);
    }
    v
}

fn categorical<R: Rng>(rng: &mut R, p: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // Roundoff: fall back to the last index with mass.
    p.iter().rposition(|&pi| pi > 0.0).unwrap_or(0)
}

impl ScmDiscrete {
    pub fn validate(&self) -> Result<()> {
        let cards = [self.card_c, self.card_z, self.card_x, self.card_y];
        if cards.iter().any(|&c| c == 0) {
            return Err(Error::validation("cardinalities must be positive"));
        }
        check_dist(&self.p_c, self.card_c, "P(C)")?;
        if self.p_z_given_c.len() != self.card_c {
            return Err(Error::validation("P(Z|C) needs one row per c"));
        }
        for (c, row) in self.p_z_given_c.iter().enumerate() {
            check_dist(row, self.card_z, &format!("P(Z|C={c})"))?;
        }
        if self.p_x_given_z.len() != self.card_z {
            return Err(Error::validation("P(X|Z) needs one row per z"));
        }
        for (z, row) in self.p_x_given_z.iter().enumerate() {
            check_dist(row, self.card_x, &format!("P(X|Z={z})"))?;
        }
        if self.p_y_given_xc.len() != self.card_x * self.card_c {
            return Err(Error::validation("P(Y|X,C) needs one row per (x, c)"));
        }
        for (i, row) in self.p_y_given_xc.iter().enumerate() {
            check_dist(
                row,
                self.card_y,
                &format!("P(Y|X={},C={})", i / self.card_c, i % self.card_c),
            )?;
        }
        Ok(())
    }

    /// Every conditional table drawn from a symmetric Dirichlet(`alpha`).
    pub fn random<R: Rng>(rng: &mut R, cards: [usize; 4], alpha: f64) -> Self {
        let [card_c, card_z, card_x, card_y] = cards;
        Self {
            card_c,
            card_z,
            card_x,
            card_y,
            p_c: dirichlet_row(rng, card_c, alpha),
            p_z_given_c: (0..card_c).map(|_| dirichlet_row(rng, card_z, alpha)).collect(),
            p_x_given_z: (0..card_z).map(|_| dirichlet_row(rng, card_x, alpha)).collect(),
            p_y_given_xc: (0..card_x * card_c)
                .map(|_| dirichlet_row(rng, card_y, alpha))
                .collect(),
        }
    }

    pub fn y_given(&self, x: usize, c: usize) -> &[f64] {
        &self.p_y_given_xc[x * self.card_c + c]
    }

    /// P(x | c) = Σ_z P(z | c) P(x | z).
    pub fn x_given_c(&self, x: usize, c: usize) -> f64 {
        (0..self.card_z)
            .map(|z| self.p_z_given_c[c][z] * self.p_x_given_z[z][x])
            .sum()
    }

    /// The model after cutting C → Z and setting Z ~ `q` independently of C.
    pub fn with_exogenous_z(&self, q: &[f64]) -> Result<Self> {
        check_dist(q, self.card_z, "intervention distribution over Z")?;
        let mut out = self.clone();
        out.p_z_given_c = vec![q.to_vec(); self.card_c];
        Ok(out)
    }
}

/// Ancestral sampling of `n` draws.
pub fn sample_discrete_scm(scm: &ScmDiscrete, n: usize, seed: u64) -> Result<Vec<DiscreteDraw>> {
    scm.validate()?;
    let mut rng = stream_rng(seed, 0);
    Ok((0..n)
        .map(|_| {
            let c = categorical(&mut rng, &scm.p_c);
            let z = categorical(&mut rng, &scm.p_z_given_c[c]);
            let x = categorical(&mut rng, &scm.p_x_given_z[z]);
            let y = categorical(&mut rng, scm.y_given(x, c));
            DiscreteDraw { c, z, x, y }
        })
        .collect())
}

/// Linear-Gaussian model:
/// `Z_U = C + e_U`, `Z_i = e_i` when intervened (else `C + e_i`),
/// `X = a4 F + a5 Z_i + a6 Z_U + U_x`, `Y = a1 C + b X + U_y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScmLinear {
    pub a1: f64,
    pub a4: f64,
    pub a5: f64,
    pub a6: f64,
    pub b: f64,
    pub var_ux: f64,
    pub var_uy: f64,
    pub var_c: f64,
    pub var_f: f64,
    pub var_zi: f64,
    pub var_zu: f64,
    /// Whether Z_i has its incoming edge from C cut.
    pub zi_intervened: bool,
}

impl Default for ScmLinear {
    fn default() -> Self {
        Self {
            a1: 1.0,
            a4: 1.0,
            a5: 1.0,
            a6: 1.0,
            b: 0.5,
            var_ux: 1.0,
            var_uy: 1.0,
            var_c: 1.0,
            var_f: 1.0,
            var_zi: 1.0,
            var_zu: 1.0,
            zi_intervened: true,
        }
    }
}

impl ScmLinear {
    pub fn validate(&self) -> Result<()> {
        let vars = [
            ("U_x", self.var_ux),
            ("U_y", self.var_uy),
            ("C", self.var_c),
            ("F", self.var_f),
            ("Z_i", self.var_zi),
            ("Z_U", self.var_zu),
        ];
        for (name, v) in vars {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::validation(format!("variance of {name} must be > 0, got {v}")));
            }
        }
        let coefs = [self.a1, self.a4, self.a5, self.a6, self.b];
        if coefs.iter().any(|c| !c.is_finite()) {
            return Err(Error::validation("coefficients must be finite"));
        }
        Ok(())
    }
}

/// Column-major sample table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinearDraws {
    pub c: Vec<f64>,
    pub f: Vec<f64>,
    pub z_i: Vec<f64>,
    pub z_u: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl LinearDraws {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

pub fn sample_linear_scm(scm: &ScmLinear, n: usize, seed: u64) -> Result<LinearDraws> {
    scm.validate()?;
    let mut rng = stream_rng(seed, 0);
    let normal = |v: f64| Normal::new(0.0, v.sqrt()).expect("validated variance");
    let (nc, nf, nzi, nzu, nux, nuy) = (
        normal(scm.var_c),
        normal(scm.var_f),
        normal(scm.var_zi),
        normal(scm.var_zu),
        normal(scm.var_ux),
        normal(scm.var_uy),
    );
    let mut out = LinearDraws {
        c: Vec::with_capacity(n),
        f: Vec::with_capacity(n),
        z_i: Vec::with_capacity(n),
        z_u: Vec::with_capacity(n),
        x: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let c = nc.sample(&mut rng);
        let f = nf.sample(&mut rng);
        let e_i = nzi.sample(&mut rng);
        let e_u = nzu.sample(&mut rng);
        let ux = nux.sample(&mut rng);
        let uy = nuy.sample(&mut rng);
        let z_i = if scm.zi_intervened { e_i } else { c + e_i };
        let z_u = c + e_u;
        let x = scm.a4 * f + scm.a5 * z_i + scm.a6 * z_u + ux;
        let y = scm.a1 * c + scm.b * x + uy;
        out.c.push(c);
        out.f.push(f);
        out.z_i.push(z_i);
        out.z_u.push(z_u);
        out.x.push(x);
        out.y.push(y);
    }
    Ok(out)
}
