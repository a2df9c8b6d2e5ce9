pub mod irm;
pub mod mlp;
pub mod probe;
pub mod train;

pub use irm::{irm_loss_on_tape, irm_train, IrmConfig};
pub use mlp::Mlp;
pub use probe::{
    correlation_probe, nuisance_regressor_train, NuisanceRegressor, ProbeConfig, ProbeResult, RegressorConfig,
};
pub use train::{
    evaluate, predict_logits, report_from_logits, train_classifier, weighted_loss_on_tape, BatchStream, Classifier,
    EvalReport, Term, TrainConfig, TrainOutcome,
};
