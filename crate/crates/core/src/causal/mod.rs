//! Causal-effect bounds, identification by adjustment and instruments, and
//! the likelihood score used to rank intervention strategies.

pub mod bounds;
pub mod discrete;
pub mod iv;
pub mod likelihood;

pub use bounds::{compare_strategies, intervened_bound, natural_bound, CausalInterval, StrategyBoundInput, StrategyComparison, Tighter};
pub use discrete::{backdoor_adjust_discrete, observational_joint_discrete, ObservationalJoint};
pub use iv::{linear_iv_estimate, linear_iv_estimate_with_floor, IvEstimate, WEAK_INSTRUMENT_FLOOR};
pub use likelihood::{estimate_log_px_given_z, feature_extract, LikelihoodReport};
