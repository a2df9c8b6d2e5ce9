//! Exact enumeration over discrete structural causal models.

use serde::Serialize;

use crate::causal::bounds::StrategyBoundInput;
use crate::datagen::scm::ScmDiscrete;
use crate::error::{Error, Result};

/// P(y | do(x)) = Σ_c P(y | x, c) P(c).
pub fn backdoor_adjust_discrete(scm: &ScmDiscrete, x: usize, y: usize) -> Result<f64> {
    scm.validate()?;
    if x >= scm.card_x || y >= scm.card_y {
        return Err(Error::Index(format!(
            "(x={x}, y={y}) outside cardinalities ({}, {})",
            scm.card_x, scm.card_y
        )));
    }
    let mut total = 0.0;
    for c in 0..scm.card_c {
        if scm.p_c[c] == 0.0 {
            continue;
        }
        if scm.x_given_c(x, c) <= 0.0 {
            return Err(Error::Identifiability(format!(
                "P(x={x} | c={c}) = 0 while P(c) > 0"
            )));
        }
        total += scm.y_given(x, c)[y] * scm.p_c[c];
    }
    Ok(total)
}

/// Observational marginals, all by enumeration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObservationalJoint {
    /// `[x][y]`
    pub p_xy: Vec<Vec<f64>>,
    pub p_x: Vec<f64>,
    pub p_z: Vec<f64>,
    /// `[z][x][y]`: P(y, x | z)
    pub p_yx_given_z: Vec<Vec<Vec<f64>>>,
    /// `[z][x]`
    pub p_x_given_z: Vec<Vec<f64>>,
}

impl ObservationalJoint {
    pub fn p_y_given_x(&self, x: usize, y: usize) -> Option<f64> {
        (self.p_x[x] > 0.0).then(|| self.p_xy[x][y] / self.p_x[x])
    }

    pub fn strategy_input(&self, z: usize, x: usize, y: usize) -> Result<StrategyBoundInput> {
        // Clamp roundoff so P(y,x|z) ≤ P(x|z) holds exactly.
        let px = self.p_x_given_z[z][x].clamp(0.0, 1.0);
        StrategyBoundInput::new(self.p_yx_given_z[z][x][y].clamp(0.0, px), px)
    }
}

pub fn observational_joint_discrete(scm: &ScmDiscrete) -> Result<ObservationalJoint> {
    scm.validate()?;
    let (nc, nz, nx, ny) = (scm.card_c, scm.card_z, scm.card_x, scm.card_y);
    let mut p_cz_xy = vec![vec![vec![0.0; ny]; nx]; nz];
    let mut p_z = vec![0.0; nz];
    for c in 0..nc {
        for z in 0..nz {
            let pcz = scm.p_c[c] * scm.p_z_given_c[c][z];
            p_z[z] += pcz;
            for x in 0..nx {
                let pczx = pcz * scm.p_x_given_z[z][x];
                for y in 0..ny {
                    p_cz_xy[z][x][y] += pczx * scm.y_given(x, c)[y];
                }
            }
        }
    }
    let mut p_xy = vec![vec![0.0; ny]; nx];
    for plane in &p_cz_xy {
        for x in 0..nx {
            for y in 0..ny {
                p_xy[x][y] += plane[x][y];
            }
        }
    }
    let p_x = p_xy.iter().map(|r| r.iter().sum()).collect();
    let p_yx_given_z: Vec<Vec<Vec<f64>>> = (0..nz)
        .map(|z| {
            p_cz_xy[z]
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|&v| if p_z[z] > 0.0 { v / p_z[z] } else { 0.0 })
                        .collect()
                })
                .collect()
        })
        .collect();
    let p_x_given_z = p_yx_given_z
        .iter()
        .map(|plane| plane.iter().map(|row| row.iter().sum()).collect())
        .collect();
    Ok(ObservationalJoint {
        p_xy,
        p_x,
        p_z,
        p_yx_given_z,
        p_x_given_z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal::bounds::{intervened_bound, natural_bound};
    use crate::ndcore::rng::stream_rng;

    #[test]
    fn no_confounding_reduces_to_conditional() {
        let mut rng = stream_rng(1, 0);
        let mut scm = ScmDiscrete::random(&mut rng, [3, 2, 2, 2], 1.0);
        for x in 0..2 {
            let row = scm.y_given(x, 0).to_vec();
            for c in 0..3 {
                scm.p_y_given_xc[x * 3 + c] = row.clone();
            }
        }
        let obs = observational_joint_discrete(&scm).unwrap();
        for x in 0..2 {
            let do_p = backdoor_adjust_discrete(&scm, x, 1).unwrap();
            assert!((do_p - obs.p_y_given_x(x, 1).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_y_equals_x() {
        let mut rng = stream_rng(2, 0);
        let mut scm = ScmDiscrete::random(&mut rng, [2, 3, 3, 3], 1.0);
        for x in 0..3 {
            for c in 0..2 {
                let mut row = vec![0.0; 3];
                row[x] = 1.0;
                scm.p_y_given_xc[x * 2 + c] = row;
            }
        }
        for x in 0..3 {
            assert!((backdoor_adjust_discrete(&scm, x, x).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn positivity_violation() {
        let scm = ScmDiscrete {
            card_c: 2,
            card_z: 2,
            card_x: 2,
            card_y: 2,
            p_c: vec![0.5, 0.5],
            p_z_given_c: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            p_x_given_z: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            p_y_given_xc: vec![vec![0.5, 0.5]; 4],
        };
        assert!(matches!(
            backdoor_adjust_discrete(&scm, 0, 0),
            Err(Error::Identifiability(_))
        ));
    }

    #[test]
    fn marginals_are_distributions() {
        let mut rng = stream_rng(3, 0);
        let scm = ScmDiscrete::random(&mut rng, [3, 4, 3, 2], 0.7);
        let obs = observational_joint_discrete(&scm).unwrap();
        let total: f64 = obs.p_xy.iter().flatten().sum();
        assert!((total - 1.0).abs() < 1e-9);
        for z in 0..4 {
            assert!((obs.p_x_given_z[z].iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_independent_gives_product() {
        let scm = ScmDiscrete {
            card_c: 2,
            card_z: 2,
            card_x: 3,
            card_y: 2,
            p_c: vec![0.5; 2],
            p_z_given_c: vec![vec![0.5; 2]; 2],
            p_x_given_z: vec![vec![1.0 / 3.0; 3]; 2],
            p_y_given_xc: vec![vec![0.5; 2]; 6],
        };
        let obs = observational_joint_discrete(&scm).unwrap();
        for x in 0..3 {
            for y in 0..2 {
                assert!((obs.p_xy[x][y] - 1.0 / 6.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bounds_contain_truth_on_random_models() {
        let mut rng = stream_rng(4, 0);
        for _ in 0..200 {
            let scm = ScmDiscrete::random(&mut rng, [3, 3, 3, 2], 1.0);
            let obs = observational_joint_discrete(&scm).unwrap();
            let truth = backdoor_adjust_discrete(&scm, 1, 0).unwrap();
            assert!(natural_bound(obs.p_xy[1][0], obs.p_x[1]).unwrap().contains(truth));

            let cut = scm.with_exogenous_z(&[0.2, 0.3, 0.5]).unwrap();
            let obs = observational_joint_discrete(&cut).unwrap();
            for z in 0..3 {
                let b = intervened_bound(&obs.strategy_input(z, 1, 0).unwrap()).unwrap();
                assert!(b.lower <= truth + 1e-12 && truth <= b.upper + 1e-12);
            }
        }
    }
}
