use std::fs;
use std::path::{Path, PathBuf};

use genint::cli::config::ExperimentConfig;
use genint::cli::pipeline::{content_checksum, Pipeline, Stage};
use genint::Error;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn small(out: &Path, extra: &str) -> ExperimentConfig {
    let text = format!(
        "[run]\nout = {}\n\
         [data]\ntrain_per_class = 20\ntest_per_class = 6\n\
         [cvae]\nhidden = 24\nlatent_dim = 3\nepochs = 1\n\
         [intervention]\nper_class = 12\n\
         [classifier]\nhidden = 16\nepochs = 1\n\
         [irm]\nwarmup_steps = 2\n\
         [probe]\nhidden = 8\nepochs = 2\n\
         [regressor]\nhidden = 8\nepochs = 2\n\
         [scm]\ninstances = 10\niv_samples = 5000\n{extra}",
        out.display()
    );
    ExperimentConfig::from_ini_str(&text, &root()).unwrap()
}

fn run(cfg: ExperimentConfig, stages: &[Stage]) -> genint::cli::pipeline::RunSummary {
    Pipeline::new(cfg).run(stages).unwrap()
}

#[test]
fn second_invocation_skips_everything_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let first = run(small(dir.path(), ""), &Stage::ALL);
    assert_eq!(first.executed, Stage::ALL.to_vec());
    let results = dir.path().join("results.csv");
    let before = (fs::read(&results).unwrap(), fs::metadata(&results).unwrap().modified().unwrap());
    let summary = content_checksum(&dir.path().join("summary.json")).unwrap();
    let second = run(small(dir.path(), ""), &Stage::ALL);
    assert!(second.executed.is_empty());
    assert_eq!(second.skipped, Stage::ALL.to_vec());
    assert_eq!(fs::read(&results).unwrap(), before.0);
    assert_eq!(fs::metadata(&results).unwrap().modified().unwrap(), before.1);
    assert_eq!(content_checksum(&dir.path().join("summary.json")).unwrap(), summary);
}

#[test]
fn results_are_identical_across_output_directories() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(small(a.path(), ""), &Stage::ALL);
    run(small(b.path(), ""), &Stage::ALL);
    let ra = fs::read(a.path().join("results.csv")).unwrap();
    assert_eq!(ra, fs::read(b.path().join("results.csv")).unwrap());
    let text = String::from_utf8(ra).unwrap();
    assert!(text.starts_with("run_id,method,split,top1,chance,seed\n"));
    // Five methods and three ablation cells, each on two splits.
    assert_eq!(text.lines().count(), 1 + 2 * 5 + 2 * 3);
    for d in ["int/interventional", "models/erm", "cvae", "reports/ablation.json"] {
        assert_eq!(
            content_checksum(&a.path().join(d)).unwrap(),
            content_checksum(&b.path().join(d)).unwrap(),
            "{d}"
        );
    }
}

#[test]
fn config_change_reruns_only_affected_stages() {
    let dir = tempfile::tempdir().unwrap();
    run(small(dir.path(), ""), &Stage::ALL);
    let again = run(small(dir.path(), "[causal]\ntau = 0.5\n"), &Stage::ALL);
    assert!(again.executed.contains(&Stage::CausalBound));
    assert!(again.executed.contains(&Stage::Ablate));
    for s in [Stage::SynthData, Stage::TrainCvae, Stage::TrainClassifier, Stage::Eval] {
        assert!(again.skipped.contains(&s), "{s} should be current");
    }
}

#[test]
fn damaged_output_triggers_rerun_and_force_reruns() {
    let dir = tempfile::tempdir().unwrap();
    run(small(dir.path(), ""), &[Stage::ScmVerify]);
    fs::write(dir.path().join("reports/scm.json"), "{}").unwrap();
    let r = run(small(dir.path(), ""), &[Stage::ScmVerify]);
    assert_eq!(r.executed, vec![Stage::ScmVerify]);
    let mut p = Pipeline::new(small(dir.path(), ""));
    assert!(p.run(&[Stage::ScmVerify]).unwrap().executed.is_empty());
    p.force = true;
    assert_eq!(p.run(&[Stage::ScmVerify]).unwrap().executed, vec![Stage::ScmVerify]);
}

#[test]
fn missing_input_names_the_producing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let err = Pipeline::new(small(dir.path(), "")).run(&[Stage::GenerateInt]).unwrap_err();
    match err {
        Error::Dependency { stage, .. } => assert_eq!(stage, "synth-data"),
        other => panic!("unexpected {other}"),
    }
    run(small(dir.path(), ""), &[Stage::SynthData]);
    let err = Pipeline::new(small(dir.path(), "")).run(&[Stage::GenerateInt]).unwrap_err();
    assert!(matches!(err, Error::Dependency { ref stage, .. } if stage == "train-cvae"), "{err}");
    assert!(err.is_validation());
}
