//! Partial-identification intervals on P(y | do(x)).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CONSISTENCY_TOL: f64 = 1e-9;

/// `[lower, upper]` with `0 ≤ lower ≤ upper ≤ 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalInterval {
    pub lower: f64,
    pub upper: f64,
}

impl CausalInterval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lower) || !(0.0..=1.0).contains(&upper) || lower > upper {
            return Err(Error::validation(format!(
                "invalid interval [{lower}, {upper}]"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, p: f64) -> bool {
        self.lower <= p && p <= self.upper
    }

    pub fn is_subset_of(&self, other: &CausalInterval) -> bool {
        other.lower <= self.lower && self.upper <= other.upper
    }

    /// Subset with both endpoints strictly inside.
    pub fn is_strict_subset_of(&self, other: &CausalInterval) -> bool {
        other.lower < self.lower && self.upper < other.upper
    }
}

fn check_prob(p: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::validation(format!("{what} = {p} is not a probability")));
    }
    Ok(())
}

fn interval(joint: f64, marginal: f64) -> CausalInterval {
    // 1 - marginal is computed first so the width is exactly 1 - P(x).
    let slack = 1.0 - marginal;
    CausalInterval {
        lower: joint,
        upper: (joint + slack).min(1.0),
    }
}

/// `[P(x,y), P(x,y) + 1 − P(x)]`, valid without observing any confounder.
pub fn natural_bound(p_xy: f64, p_x: f64) -> Result<CausalInterval> {
    check_prob(p_xy, "P(x,y)")?;
    check_prob(p_x, "P(x)")?;
    if p_xy > p_x {
        return Err(Error::validation(format!(
            "P(x,y) = {p_xy} exceeds P(x) = {p_x}"
        )));
    }
    Ok(interval(p_xy, p_x))
}

/// Joint and marginal of an intervention strategy z: P(y, x | z) and P(x | z).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyBoundInput {
    pub p_yx_given_z: f64,
    pub p_x_given_z: f64,
}

impl StrategyBoundInput {
    pub fn new(p_yx_given_z: f64, p_x_given_z: f64) -> Result<Self> {
        let s = Self {
            p_yx_given_z,
            p_x_given_z,
        };
        s.validate()?;
        Ok(s)
    }

    /// Input for a strategy whose nuisance is independent of y given x:
    /// P(y, x | z) = P(y | x) P(x | z).
    pub fn from_conditional(p_y_given_x: f64, p_x_given_z: f64) -> Result<Self> {
        check_prob(p_y_given_x, "P(y|x)")?;
        Self::new(p_y_given_x * p_x_given_z, p_x_given_z)
    }

    pub fn validate(&self) -> Result<()> {
        check_prob(self.p_yx_given_z, "P(y,x|z)")?;
        check_prob(self.p_x_given_z, "P(x|z)")?;
        if self.p_yx_given_z > self.p_x_given_z {
            return Err(Error::validation(format!(
                "P(y,x|z) = {} exceeds P(x|z) = {}",
                self.p_yx_given_z, self.p_x_given_z
            )));
        }
        Ok(())
    }
}

/// `[P(y,x|z), P(y,x|z) + 1 − P(x|z)]` after intervening on z.
pub fn intervened_bound(input: &StrategyBoundInput) -> Result<CausalInterval> {
    input.validate()?;
    Ok(interval(input.p_yx_given_z, input.p_x_given_z))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tighter {
    ATighter,
    BTighter,
    Equal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyComparison {
    pub verdict: Tighter,
    pub a: CausalInterval,
    pub b: CausalInterval,
}

/// Picks the strategy with the larger P(x | z); its interval nests inside the other's.
pub fn compare_strategies(
    a: &StrategyBoundInput,
    b: &StrategyBoundInput,
    p_y_given_x: f64,
) -> Result<StrategyComparison> {
    check_prob(p_y_given_x, "P(y|x)")?;
    for (name, s) in [("a", a), ("b", b)] {
        s.validate()?;
        let implied = p_y_given_x * s.p_x_given_z;
        if (s.p_yx_given_z - implied).abs() > CONSISTENCY_TOL {
            return Err(Error::validation(format!(
                "strategy {name}: P(y,x|z) = {} but P(y|x) P(x|z) = {implied}",
                s.p_yx_given_z
            )));
        }
    }
    let ia = intervened_bound(a)?;
    let ib = intervened_bound(b)?;
    let verdict = if a.p_x_given_z > b.p_x_given_z {
        Tighter::ATighter
    } else if b.p_x_given_z > a.p_x_given_z {
        Tighter::BTighter
    } else {
        Tighter::Equal
    };
    let nested = match verdict {
        Tighter::ATighter => ia.is_subset_of(&ib),
        Tighter::BTighter => ib.is_subset_of(&ia),
        Tighter::Equal => true,
    };
    if !nested {
        return Err(Error::Contract(format!(
            "intervals {ia:?} and {ib:?} are not nested"
        )));
    }
    Ok(StrategyComparison {
        verdict,
        a: ia,
        b: ib,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn natural_bound_limits() {
        let i = natural_bound(0.3, 1.0).unwrap();
        assert_eq!((i.lower, i.upper), (0.3, 0.3));
        let i = natural_bound(0.0, 0.0).unwrap();
        assert_eq!((i.lower, i.upper), (0.0, 1.0));
        assert!(matches!(natural_bound(0.5, 0.4), Err(Error::Validation(_))));
    }

    #[test]
    fn intervened_bound_arithmetic() {
        let s = StrategyBoundInput::from_conditional(0.5, 0.8).unwrap();
        let i = intervened_bound(&s).unwrap();
        assert!((i.lower - 0.4).abs() < 1e-12 && (i.upper - 0.6).abs() < 1e-12);
        let i = intervened_bound(&StrategyBoundInput::new(0.3, 1.0).unwrap()).unwrap();
        assert_eq!(i.width(), 0.0);
        assert!(StrategyBoundInput::new(0.9, 0.5).is_err());
    }

    #[test]
    fn comparison_example() {
        let a = StrategyBoundInput::from_conditional(0.5, 0.8).unwrap();
        let b = StrategyBoundInput::from_conditional(0.5, 0.5).unwrap();
        let r = compare_strategies(&a, &b, 0.5).unwrap();
        assert_eq!(r.verdict, Tighter::ATighter);
        assert!((r.b.lower - 0.25).abs() < 1e-12 && (r.b.upper - 0.75).abs() < 1e-12);
        assert!(r.a.is_strict_subset_of(&r.b));

        let r = compare_strategies(&a, &a, 0.5).unwrap();
        assert_eq!(r.verdict, Tighter::Equal);
        assert_eq!(r.a, r.b);
    }

    #[test]
    fn inconsistent_conditional_rejected() {
        let a = StrategyBoundInput::from_conditional(0.5, 0.8).unwrap();
        let b = StrategyBoundInput::from_conditional(0.6, 0.5).unwrap();
        assert!(matches!(compare_strategies(&a, &b, 0.5), Err(Error::Validation(_))));
    }
}
