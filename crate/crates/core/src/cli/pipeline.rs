use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::causal::{
    backdoor_adjust_discrete, compare_strategies, estimate_log_px_given_z, feature_extract, intervened_bound,
    linear_iv_estimate, natural_bound, observational_joint_discrete, CausalInterval, StrategyBoundInput, Tighter,
};
use crate::classify::{
    correlation_probe, evaluate, irm_train, nuisance_regressor_train, train_classifier, Classifier, EvalReport,
    ProbeConfig, ProbeResult, RegressorConfig, TrainConfig,
};
use crate::cli::config::{strategy_label, ExperimentConfig, Method, SourceKind};
use crate::cli::report::{emit_metrics, read_json, write_csv, write_json, ResultRow};
use crate::datagen::{
    load_bundle, load_mnist_split, sample_linear_scm, save_bundle, synth_colored_mnist, take_per_class, write_tensor_file,
    ColorMode, ColorPalette, LabeledImageSet, ScmDiscrete, ScmLinear,
};
use crate::error::{Error, Result};
use crate::genmodel::{load_cvae, save_cvae, train_cvae, Cvae, CvaeConfig};
use crate::intervene::{
    fit_latent_basis, fit_prior_basis, generate_interventional_set, transfer_intervention, BasisSource,
    InterventionStrategy, LatentBasis, LatentSource,
};
use crate::ndcore::rng::{named_seed, stream_rng};
use crate::ndcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    SynthData,
    TrainCvae,
    FitPca,
    GenerateInt,
    TransferInt,
    TrainClassifier,
    Eval,
    CausalBound,
    CorrAnalysis,
    ScmVerify,
    Ablate,
}

impl Stage {
    /// Execution order of a full run.
    pub const ALL: [Stage; 11] = [
        Stage::SynthData,
        Stage::TrainCvae,
        Stage::FitPca,
        Stage::GenerateInt,
        Stage::TransferInt,
        Stage::TrainClassifier,
        Stage::Eval,
        Stage::CausalBound,
        Stage::CorrAnalysis,
        Stage::ScmVerify,
        Stage::Ablate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::SynthData => "synth-data",
            Stage::TrainCvae => "train-cvae",
            Stage::FitPca => "fit-pca",
            Stage::GenerateInt => "generate-int",
            Stage::TransferInt => "transfer-int",
            Stage::TrainClassifier => "train-classifier",
            Stage::Eval => "eval",
            Stage::CausalBound => "causal-bound",
            Stage::CorrAnalysis => "corr-analysis",
            Stage::ScmVerify => "scm-verify",
            Stage::Ablate => "ablate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
            Error::validation(format!("unknown stage `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

/// Parses `a,b,c`, or `run` for every stage; the result is in pipeline order.
pub fn parse_stages(list: &str) -> Result<Vec<Stage>> {
    let mut out = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if item == "run" {
            out.extend(Stage::ALL);
        } else {
            out.push(item.parse()?);
        }
    }
    if out.is_empty() {
        return Err(Error::validation("no stages selected"));
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// Hex SHA-256 over a file, or over the sorted relative names and contents of a directory tree.
pub fn content_checksum(path: &Path) -> Result<String> {
    fn walk(root: &Path, dir: &Path, h: &mut Sha256) -> Result<()> {
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, h)?;
            } else {
                let rel = p.strip_prefix(root).unwrap_or(&p).to_string_lossy().replace('\\', "/");
                h.update((rel.len() as u64).to_le_bytes());
                h.update(rel.as_bytes());
                let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
                h.update((bytes.len() as u64).to_le_bytes());
                h.update(&bytes);
            }
        }
        Ok(())
    }
    let mut h = Sha256::new();
    if path.is_dir() {
        walk(path, path, &mut h)?;
    } else {
        h.update(fs::read(path).map_err(|e| Error::io(path, e))?);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Stamp {
    stage: String,
    key: String,
    outputs: BTreeMap<String, String>,
    seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub split: String,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyBound {
    pub strategy: String,
    pub queries: usize,
    pub generated: usize,
    pub total_log_p: f64,
    pub mean_log_p: f64,
    /// `exp(mean_log_p)`, the per-query geometric-mean kernel value.
    pub p_x_given_z: f64,
    pub p_y_given_x: f64,
    pub lower: f64,
    pub upper: f64,
    pub width: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct QueryRow {
    strategy: String,
    query: usize,
    distance: f64,
    contribution: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrRow {
    pub dataset: String,
    pub subset_size: usize,
    pub accuracy: f64,
    pub ratio: f64,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrReport {
    pub rows: Vec<CorrRow>,
    pub regressor_train_mae: f64,
    pub regressor_val_mae: f64,
    pub regressor_mean_baseline_mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScmReport {
    pub instances: usize,
    pub natural_checked: usize,
    pub natural_violations: usize,
    pub intervened_checked: usize,
    pub intervened_violations: usize,
    pub theorem1_pairs: usize,
    pub theorem1_strict_subset: usize,
    pub theorem1_max_width_error: f64,
    pub iv_b: f64,
    pub iv_estimate: f64,
    pub iv_samples: usize,
    pub iv_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub strategy: String,
    pub truncation: f64,
    pub top_k: usize,
    pub scale: f64,
    pub directions_per_sample: usize,
    pub offset_mode: String,
    pub mean_log_p: f64,
    pub total_log_p: f64,
    pub confounded_top1: f64,
    pub causal_top1: f64,
}

/// Outcome of one invocation.
#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub executed: Vec<Stage>,
    pub skipped: Vec<Stage>,
}

const STAMPS: &str = "stamps";

pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub force: bool,
    pub verbose: bool,
}

fn dependency(stage: Stage, artifact: PathBuf) -> Error {
    Error::Dependency {
        stage: stage.name().to_string(),
        artifact,
    }
}

fn json_of<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config types serialize")
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig) -> Self {
        Self {
            cfg,
            force: false,
            verbose: false,
        }
    }

    fn out(&self) -> &Path {
        &self.cfg.out_dir
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out().join(rel)
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("[genint] {}", msg.as_ref());
        }
    }

    fn seed(&self, name: &str) -> u64 {
        named_seed(self.cfg.seed, name)
    }

    /// Stable identifier of (config, seed); output paths are excluded.
    pub fn run_id(&self) -> String {
        let mut c = json_of(&self.cfg);
        c["out_dir"] = serde_json::Value::Null;
        c["data"]["mnist_dir"] = serde_json::Value::Null;
        let digest = Sha256::digest(c.to_string().as_bytes());
        hex::encode(digest)[..12].to_string()
    }

    fn methods(&self) -> Vec<Method> {
        let mut m = self.cfg.classifier.methods.clone();
        m.sort();
        m.dedup();
        m
    }

    fn strategies(&self) -> [(&'static str, InterventionStrategy); 2] {
        [
            ("observational", self.cfg.intervention.observational()),
            ("interventional", self.cfg.intervention.strategy.clone()),
        ]
    }

    /// Artifacts a stage reads, each with the stage that produces it.
    fn inputs(&self, stage: Stage) -> Vec<(String, Stage)> {
        use Stage::*;
        let d = |r: &str| (r.to_string(), SynthData);
        let methods = self.methods();
        let model = |m: Method| (format!("models/{}", m.name()), TrainClassifier);
        match stage {
            SynthData => vec![],
            TrainCvae => vec![d("data/train")],
            FitPca => vec![d("data/train"), ("cvae".into(), TrainCvae)],
            GenerateInt => vec![d("data/train"), ("cvae".into(), TrainCvae), ("basis".into(), FitPca)],
            TransferInt => vec![d("data/train_gray")],
            TrainClassifier => {
                let mut v = vec![d("data/train")];
                if methods.contains(&Method::Observational) {
                    v.push(("int/observational".into(), GenerateInt));
                }
                if methods.contains(&Method::Interventional) || methods.contains(&Method::ThreeTerm) {
                    v.push(("int/interventional".into(), GenerateInt));
                }
                if methods.contains(&Method::ThreeTerm) {
                    v.push(("itr".into(), TransferInt));
                }
                v
            }
            Eval => {
                let mut v = vec![d("data/test_confounded"), d("data/test_causal")];
                v.extend(methods.into_iter().map(model));
                v
            }
            CausalBound => vec![
                d("data/test_causal"),
                model(Method::Erm),
                ("int/observational".into(), GenerateInt),
                ("int/interventional".into(), GenerateInt),
            ],
            CorrAnalysis => vec![d("data/train"), d("data/test_causal"), ("int/interventional".into(), GenerateInt)],
            ScmVerify => vec![],
            Ablate => vec![
                d("data/train"),
                d("data/test_confounded"),
                d("data/test_causal"),
                ("cvae".into(), TrainCvae),
                ("basis".into(), FitPca),
                model(Method::Erm),
            ],
        }
    }

    fn outputs(&self, stage: Stage) -> Vec<String> {
        use Stage::*;
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        match stage {
            SynthData => v(&["data"]),
            TrainCvae => v(&["cvae"]),
            FitPca => v(&["basis"]),
            GenerateInt => v(&["int"]),
            TransferInt => v(&["itr"]),
            TrainClassifier => self.methods().iter().map(|m| format!("models/{}", m.name())).collect(),
            Eval => v(&["reports/eval.json"]),
            CausalBound => v(&["reports/bounds.json", "reports/bounds.csv", "reports/likelihood_queries.csv"]),
            CorrAnalysis => v(&["reports/corr.json", "reports/corr.csv"]),
            ScmVerify => v(&["reports/scm.json"]),
            Ablate => v(&["reports/ablation.json", "reports/ablation.csv"]),
        }
    }

    /// The configuration that determines a stage's outputs.
    fn stage_config(&self, stage: Stage) -> serde_json::Value {
        use Stage::*;
        let c = &self.cfg;
        let body = match stage {
            SynthData => json_of(&(&c.data.train_per_class, &c.data.test_per_class, &c.data.causal_mode)),
            TrainCvae => json_of(&c.cvae),
            FitPca => json_of(&(&c.intervention.basis, &c.intervention.basis_prior_samples, &c.intervention.strategy.truncation)),
            GenerateInt => json_of(&c.intervention),
            TransferInt => serde_json::Value::Null,
            TrainClassifier => json_of(&(&c.classifier, &c.irm)),
            Eval => json_of(&self.methods()),
            CausalBound => json_of(&(&c.causal, &c.intervention)),
            CorrAnalysis => json_of(&c.corr),
            ScmVerify => json_of(&c.scm),
            Ablate => json_of(&(&c.ablation, &c.intervention, &c.classifier.train, &c.causal)),
        };
        serde_json::json!({ "stage": stage.name(), "seed": c.seed, "config": body })
    }

    fn stamp_path(&self, stage: Stage) -> PathBuf {
        self.out().join(STAMPS).join(format!("{}.json", stage.name()))
    }

    fn stage_key(&self, stage: Stage) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.stage_config(stage).to_string().as_bytes());
        for (rel, producer) in self.inputs(stage) {
            let p = self.path(&rel);
            if !p.exists() {
                return Err(dependency(producer, p));
            }
            h.update(rel.as_bytes());
            h.update(content_checksum(&p)?.as_bytes());
        }
        if stage == Stage::SynthData {
            for f in ["train", "t10k"] {
                for kind in ["images-idx3-ubyte", "labels-idx1-ubyte"] {
                    let stem = self.cfg.data.mnist_dir.join(format!("{f}-{kind}"));
                    let gz = stem.with_file_name(format!("{f}-{kind}.gz"));
                    let p = if gz.exists() { gz } else { stem };
                    h.update(content_checksum(&p)?.as_bytes());
                }
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    fn up_to_date(&self, stage: Stage, key: &str) -> bool {
        let Ok(stamp) = read_json::<Stamp>(&self.stamp_path(stage)) else {
            return false;
        };
        stamp.key == key
            && self.outputs(stage).iter().all(|rel| {
                let p = self.path(rel);
                p.exists() && content_checksum(&p).ok().as_ref() == stamp.outputs.get(rel)
            })
    }

    /// Runs `stages` in pipeline order, skipping stages whose stamp matches.
    /// `results.csv` and `summary.json` are rewritten only if some stage ran.
    pub fn run(&self, stages: &[Stage]) -> Result<RunSummary> {
        let mut stages = stages.to_vec();
        stages.sort();
        stages.dedup();
        let mut summary = RunSummary::default();
        for &stage in &stages {
            let key = self.stage_key(stage)?;
            if !self.force && self.up_to_date(stage, &key) {
                self.log(format!("{stage}: up to date"));
                summary.skipped.push(stage);
                continue;
            }
            self.log(format!("{stage}: running"));
            let t = Instant::now();
            for rel in self.outputs(stage) {
                let p = self.path(&rel);
                if p.is_dir() {
                    fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
                }
            }
            self.execute(stage)?;
            let seconds = t.elapsed().as_secs_f64();
            let mut outputs = BTreeMap::new();
            for rel in self.outputs(stage) {
                outputs.insert(rel.clone(), content_checksum(&self.path(&rel))?);
            }
            write_json(
                &self.stamp_path(stage),
                &Stamp {
                    stage: stage.name().into(),
                    key,
                    outputs,
                    seconds,
                },
            )?;
            self.log(format!("{stage}: done in {seconds:.1}s"));
            summary.executed.push(stage);
        }
        if !summary.executed.is_empty() {
            self.write_metrics()?;
        }
        Ok(summary)
    }

    fn execute(&self, stage: Stage) -> Result<()> {
        match stage {
            Stage::SynthData => self.synth_data(),
            Stage::TrainCvae => self.train_cvae(),
            Stage::FitPca => self.fit_pca(),
            Stage::GenerateInt => self.generate_int(),
            Stage::TransferInt => self.transfer_int(),
            Stage::TrainClassifier => self.train_classifiers(),
            Stage::Eval => self.eval(),
            Stage::CausalBound => self.causal_bound(),
            Stage::CorrAnalysis => self.corr_analysis(),
            Stage::ScmVerify => self.scm_verify(),
            Stage::Ablate => self.ablate(),
        }
    }

    fn bundle(&self, rel: &str) -> Result<LabeledImageSet> {
        Ok(load_bundle(&self.path(rel))?.0)
    }

    fn model(&self, m: Method) -> Result<Classifier> {
        Classifier::load(&self.path(&format!("models/{}", m.name())))
    }

    fn synth_data(&self) -> Result<()> {
        let d = &self.cfg.data;
        let mut gray = load_mnist_split(&d.mnist_dir, "train")?;
        if d.train_per_class > 0 {
            gray = take_per_class(&gray, d.train_per_class);
        }
        let gray_test = take_per_class(&load_mnist_split(&d.mnist_dir, "t10k")?, d.test_per_class);
        let pal = ColorPalette::hsv20();
        save_bundle(&self.path("data/train_gray"), &gray, "gray", 0, BTreeMap::new())?;
        let splits = [
            ("train", &gray, ColorMode::TrainConfounded),
            ("test_confounded", &gray_test, ColorMode::TestConfounded),
            ("test_causal", &gray_test, d.causal_mode),
        ];
        for (name, src, mode) in splits {
            let seed = self.seed(&format!("synth-{name}"));
            let set = synth_colored_mnist(src, &pal, mode, seed)?;
            save_bundle(&self.path(&format!("data/{name}")), &set, &mode.to_string(), seed, BTreeMap::new())?;
        }
        Ok(())
    }

    fn cvae_config(&self) -> CvaeConfig {
        CvaeConfig {
            seed: self.seed("cvae"),
            ..self.cfg.cvae.clone()
        }
    }

    fn train_cvae(&self) -> Result<()> {
        let train = self.bundle("data/train")?;
        let cfg = self.cvae_config();
        let fit = train_cvae(&train, &cfg)?;
        for e in &fit.history {
            self.log(format!(
                "  epoch {} train -ELBO/img {:.2} held-out {:?}",
                e.epoch, e.train_neg_elbo, e.heldout_neg_elbo
            ));
        }
        save_cvae(&self.path("cvae"), &fit.cvae, Some(&cfg), &fit.history)
    }

    fn load_cvae(&self) -> Result<Cvae> {
        Ok(load_cvae(&self.path("cvae"))?.0)
    }

    fn fit_pca(&self) -> Result<()> {
        let cvae = self.load_cvae()?;
        let iv = &self.cfg.intervention;
        let basis = match iv.basis {
            BasisSource::Posterior => fit_latent_basis(&cvae, &self.bundle("data/train")?)?,
            BasisSource::Prior => fit_prior_basis(
                cvae.arch.latent_dim,
                iv.basis_prior_samples,
                iv.strategy.truncation,
                self.seed("basis-prior"),
            )?,
        };
        let dir = self.path("basis");
        basis.save(&dir)?;
        write_json(
            &dir.join("report.json"),
            &serde_json::json!({
                "source": iv.basis,
                "sigmas": basis.sigmas,
                "orthonormality_error": basis.orthonormality_error(),
            }),
        )
    }

    fn load_basis(&self) -> Result<LatentBasis> {
        LatentBasis::load(&self.path("basis"))
    }

    /// Generates one strategy's set; `train` is the encoded source when configured.
    fn generate(
        &self,
        cvae: &Cvae,
        basis: &LatentBasis,
        train: &LabeledImageSet,
        strategy: &InterventionStrategy,
    ) -> Result<(LabeledImageSet, Vec<crate::intervene::InterventionRecord>)> {
        let source = match self.cfg.intervention.source {
            SourceKind::Prior => LatentSource::Prior,
            SourceKind::Encoded => LatentSource::Encoded(train),
        };
        generate_interventional_set(
            cvae,
            basis,
            strategy,
            self.cfg.intervention.per_class,
            self.seed("generate"),
            source,
        )
    }

    fn generate_int(&self) -> Result<()> {
        let cvae = self.load_cvae()?;
        let basis = self.load_basis()?;
        let train = self.bundle("data/train")?;
        for (name, strategy) in self.strategies() {
            let (set, records) = self.generate(&cvae, &basis, &train, &strategy)?;
            let dir = self.path(&format!("int/{name}"));
            let mut extra = BTreeMap::new();
            extra.insert("t".into(), json_of(&strategy.truncation));
            extra.insert("k".into(), json_of(&strategy.top_k));
            extra.insert("s".into(), json_of(&strategy.scale));
            extra.insert("directions_per_sample".into(), json_of(&strategy.directions_per_sample));
            extra.insert("offset_mode".into(), json_of(&strategy.offset_mode.to_string()));
            extra.insert("source".into(), json_of(&self.cfg.intervention.source));
            extra.insert("basis_checksum".into(), json_of(&basis.checksum()));
            save_bundle(&dir, &set, name, self.seed("generate"), extra)?;
            let d = cvae.arch.latent_dim;
            let stack = |f: &dyn Fn(&crate::intervene::InterventionRecord) -> &Vec<f32>| {
                Tensor::new(vec![records.len(), d], records.iter().flat_map(|r| f(r).iter().copied()).collect())
            };
            write_tensor_file(&dir.join("h0.gint"), &stack(&|r| &r.h0)?)?;
            write_tensor_file(&dir.join("h_star.gint"), &stack(&|r| &r.h_star)?)?;
        }
        Ok(())
    }

    fn transfer_int(&self) -> Result<()> {
        let gray = self.bundle("data/train_gray")?;
        let seed = self.seed("transfer");
        let set = transfer_intervention(&gray, &ColorPalette::hsv20(), seed)?;
        save_bundle(&self.path("itr"), &set, "transferred", seed, BTreeMap::new())
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed("classifier"),
            ..self.cfg.classifier.train.clone()
        }
    }

    fn interventional_only(&self) -> TrainConfig {
        TrainConfig {
            lambda1: 1.0,
            lambda2: 0.0,
            use_original_data: false,
            ..self.train_config()
        }
    }

    /// The two color-slot environments: each digit's first color vs its second.
    pub fn color_environments(train: &LabeledImageSet) -> Result<[LabeledImageSet; 2]> {
        let slots = train
            .nuisance_argmax()
            .ok_or_else(|| Error::Configuration("training set has no color annotations".into()))?;
        let mut idx = [Vec::new(), Vec::new()];
        for (i, c) in slots.into_iter().enumerate() {
            idx[c % 2].push(i);
        }
        Ok([train.subset(&idx[0]), train.subset(&idx[1])])
    }

    fn train_classifiers(&self) -> Result<()> {
        let train = self.bundle("data/train")?;
        let base = self.train_config();
        for m in self.methods() {
            let t = Instant::now();
            let model = match m {
                Method::Erm => {
                    let cfg = TrainConfig {
                        lambda1: 0.0,
                        lambda2: 0.0,
                        ..base.clone()
                    };
                    train_classifier(&train, None, None, &cfg)?.model
                }
                Method::Irm => irm_train(&Self::color_environments(&train)?, &self.cfg.irm, &base)?,
                Method::Observational | Method::Interventional => {
                    let rel = if m == Method::Observational {
                        "int/observational"
                    } else {
                        "int/interventional"
                    };
                    let x_int = self.bundle(rel)?;
                    train_classifier(&train, Some(&x_int), None, &self.interventional_only())?.model
                }
                Method::ThreeTerm => {
                    let x_int = self.bundle("int/interventional")?;
                    let x_itr = self.bundle("itr")?;
                    train_classifier(&train, Some(&x_int), Some(&x_itr), &base)?.model
                }
            };
            model.save(&self.path(&format!("models/{}", m.name())))?;
            self.log(format!("  {} trained in {:.1}s", m.name(), t.elapsed().as_secs_f64()));
        }
        Ok(())
    }

    fn eval(&self) -> Result<()> {
        let splits = [
            ("confounded", self.bundle("data/test_confounded")?),
            ("causal", self.bundle("data/test_causal")?),
        ];
        let mut rows = Vec::new();
        for m in self.methods() {
            let model = self.model(m)?;
            for (split, set) in &splits {
                let report = evaluate(&model, set)?;
                self.log(format!("  {:<20} {:<10} {:.4}", m.name(), split, report.top1));
                rows.push(EvalRow {
                    method: m.name().into(),
                    split: (*split).into(),
                    report,
                });
            }
        }
        write_json(&self.path("reports/eval.json"), &rows)
    }

    fn query_features(&self, erm: &Classifier) -> Result<Tensor> {
        let mut causal = self.bundle("data/test_causal")?;
        let q = self.cfg.causal.queries;
        if q > 0 && q < causal.len() {
            causal = causal.subset(&(0..q).collect::<Vec<_>>());
        }
        feature_extract(erm, &causal)
    }

    fn causal_bound(&self) -> Result<()> {
        let erm = self.model(Method::Erm)?;
        let queries = self.query_features(&erm)?;
        let c = &self.cfg.causal;
        let mut bounds = Vec::new();
        let mut query_rows = Vec::new();
        let mut inputs = Vec::new();
        for (name, strategy) in self.strategies() {
            let set = self.bundle(&format!("int/{name}"))?;
            let rep = estimate_log_px_given_z(&queries, &feature_extract(&erm, &set)?, c.tau)?;
            let p = rep.mean.exp();
            let input = StrategyBoundInput::from_conditional(c.p_y_given_x, p)?;
            let iv = intervened_bound(&input)?;
            for (i, (&d, &contrib)) in rep.distances.iter().zip(&rep.contributions).enumerate() {
                query_rows.push(QueryRow {
                    strategy: name.into(),
                    query: i,
                    distance: d,
                    contribution: contrib,
                });
            }
            bounds.push(StrategyBound {
                strategy: format!("{name}[{}]", strategy_label(&strategy)),
                queries: queries.rows(),
                generated: set.len(),
                total_log_p: rep.total,
                mean_log_p: rep.mean,
                p_x_given_z: p,
                p_y_given_x: c.p_y_given_x,
                lower: iv.lower,
                upper: iv.upper,
                width: iv.width(),
            });
            inputs.push(input);
        }
        let cmp = compare_strategies(&inputs[0], &inputs[1], c.p_y_given_x)?;
        let verdict = match cmp.verdict {
            Tighter::ATighter => bounds[0].strategy.clone(),
            Tighter::BTighter => bounds[1].strategy.clone(),
            Tighter::Equal => "equal".into(),
        };
        write_csv(&self.path("reports/bounds.csv"), &bounds)?;
        write_csv(&self.path("reports/likelihood_queries.csv"), &query_rows)?;
        write_json(
            &self.path("reports/bounds.json"),
            &serde_json::json!({ "tau": c.tau, "strategies": bounds, "tighter": verdict }),
        )
    }

    fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            seed: self.seed("probe"),
            ..self.cfg.corr.probe.clone()
        }
    }

    fn probe_curve(&self, dataset: &str, z: &Tensor, labels: &[usize], rows: &mut Vec<CorrRow>) -> Result<()> {
        for &m in &self.cfg.corr.subset_sizes {
            let ProbeResult {
                accuracy,
                ratio,
                n_train,
                n_test,
                ..
            } = correlation_probe(z, labels, m, &self.probe_config())?;
            self.log(format!("  {dataset:<12} m={m:<3} ratio {ratio:.3}"));
            rows.push(CorrRow {
                dataset: dataset.into(),
                subset_size: m,
                accuracy,
                ratio,
                n_train,
                n_test,
            });
        }
        Ok(())
    }

    fn corr_analysis(&self) -> Result<()> {
        let mut rows = Vec::new();
        for (name, rel) in [("confounded", "data/train"), ("causal_test", "data/test_causal")] {
            let set = self.bundle(rel)?;
            let z = set
                .nuisance
                .as_ref()
                .ok_or_else(|| Error::Configuration(format!("{rel} has no color annotations")))?;
            self.probe_curve(name, z, &set.labels, &mut rows)?;
        }
        let x_int = self.bundle("int/interventional")?;
        let reg_cfg = RegressorConfig {
            seed: self.seed("regressor"),
            ..self.cfg.corr.regressor.clone()
        };
        let reg = nuisance_regressor_train(&x_int, &reg_cfg)?;
        let z_hat = reg.predict(&x_int)?;
        self.log(format!(
            "  regressor val MAE {:.4} vs mean predictor {:.4}",
            reg.val_mae, reg.mean_baseline_mae
        ));
        self.probe_curve("genint", &z_hat, &x_int.labels, &mut rows)?;
        write_csv(&self.path("reports/corr.csv"), &rows)?;
        write_json(
            &self.path("reports/corr.json"),
            &CorrReport {
                rows,
                regressor_train_mae: reg.train_mae,
                regressor_val_mae: reg.val_mae,
                regressor_mean_baseline_mae: reg.mean_baseline_mae,
            },
        )
    }

    fn scm_verify(&self) -> Result<()> {
        let s = &self.cfg.scm;
        let report = verify_scms(s.instances, s.cards, s.alpha, s.iv_samples, s.iv_b, self.seed("scm"))?;
        self.log(format!(
            "  natural violations {} / {}, intervened violations {} / {}, b̂ = {:.4}",
            report.natural_violations,
            report.natural_checked,
            report.intervened_violations,
            report.intervened_checked,
            report.iv_estimate
        ));
        write_json(&self.path("reports/scm.json"), &report)
    }

    fn ablate(&self) -> Result<()> {
        let cvae = self.load_cvae()?;
        let basis = self.load_basis()?;
        let train = self.bundle("data/train")?;
        let conf = self.bundle("data/test_confounded")?;
        let causal = self.bundle("data/test_causal")?;
        let erm = self.model(Method::Erm)?;
        let queries = self.query_features(&erm)?;
        let mut rows = Vec::new();
        for strategy in &self.cfg.ablation {
            let label = strategy_label(strategy);
            // Cells identical to a main strategy reuse its artifacts.
            let reuse = self.strategies().into_iter().find(|(_, s)| s == strategy).and_then(|(name, _)| {
                let method = if name == "observational" {
                    Method::Observational
                } else {
                    Method::Interventional
                };
                let set = self.bundle(&format!("int/{name}")).ok()?;
                let model = self.model(method).ok()?;
                Some((set, model))
            });
            let (set, model) = match reuse {
                Some(pair) => pair,
                None => {
                    let (set, _) = self.generate(&cvae, &basis, &train, strategy)?;
                    let model = train_classifier(&train, Some(&set), None, &self.interventional_only())?.model;
                    (set, model)
                }
            };
            let lik = estimate_log_px_given_z(&queries, &feature_extract(&erm, &set)?, self.cfg.causal.tau)?;
            let row = AblationRow {
                strategy: label,
                truncation: strategy.truncation,
                top_k: strategy.top_k,
                scale: strategy.scale,
                directions_per_sample: strategy.directions_per_sample,
                offset_mode: strategy.offset_mode.to_string(),
                mean_log_p: lik.mean,
                total_log_p: lik.total,
                confounded_top1: evaluate(&model, &conf)?.top1,
                causal_top1: evaluate(&model, &causal)?.top1,
            };
            self.log(format!(
                "  {:<18} mean log P {:.6} causal {:.4}",
                row.strategy, row.mean_log_p, row.causal_top1
            ));
            rows.push(row);
        }
        rows.sort_by(|a, b| a.mean_log_p.total_cmp(&b.mean_log_p).then_with(|| a.strategy.cmp(&b.strategy)));
        write_csv(&self.path("reports/ablation.csv"), &rows)?;
        write_json(&self.path("reports/ablation.json"), &rows)
    }

    /// Rows for `results.csv` from whatever reports exist.
    pub fn result_rows(&self) -> Result<Vec<ResultRow>> {
        let run_id = self.run_id();
        let mut rows = Vec::new();
        let eval = self.path("reports/eval.json");
        if eval.exists() {
            for r in read_json::<Vec<EvalRow>>(&eval)? {
                rows.push(ResultRow {
                    run_id: run_id.clone(),
                    method: r.method,
                    split: r.split,
                    top1: r.report.top1,
                    chance: r.report.chance,
                    seed: self.cfg.seed,
                });
            }
        }
        let abl = self.path("reports/ablation.json");
        if abl.exists() {
            for r in read_json::<Vec<AblationRow>>(&abl)? {
                for (split, top1) in [("confounded", r.confounded_top1), ("causal", r.causal_top1)] {
                    rows.push(ResultRow {
                        run_id: run_id.clone(),
                        method: format!("ablate[{}]", r.strategy),
                        split: split.into(),
                        top1,
                        chance: 0.1,
                        seed: self.cfg.seed,
                    });
                }
            }
        }
        Ok(rows)
    }

    fn write_metrics(&self) -> Result<()> {
        let rows = self.result_rows()?;
        if rows.is_empty() {
            return Ok(());
        }
        let mut checksums = BTreeMap::new();
        let mut timing = BTreeMap::new();
        for stage in Stage::ALL {
            if let Ok(stamp) = read_json::<Stamp>(&self.stamp_path(stage)) {
                timing.insert(stage.name().to_string(), stamp.seconds);
                for (k, v) in stamp.outputs {
                    checksums.insert(k, v);
                }
            }
        }
        let mut reports = serde_json::Map::new();
        for name in ["eval", "bounds", "corr", "scm", "ablation"] {
            let p = self.path(&format!("reports/{name}.json"));
            if p.exists() {
                reports.insert(name.into(), read_json::<serde_json::Value>(&p)?);
            }
        }
        let summary = serde_json::json!({
            "run_id": self.run_id(),
            "seed": self.cfg.seed,
            "config": self.cfg,
            "artifact_checksums": checksums,
            "reports": reports,
            "timing_seconds": timing,
        });
        emit_metrics(&rows, &summary, self.out())
    }
}

/// Property checks on random discrete models plus the linear-IV estimate.
pub fn verify_scms(instances: usize, cards: [usize; 4], alpha: f64, iv_samples: usize, iv_b: f64, seed: u64) -> Result<ScmReport> {
    let mut r = ScmReport {
        instances,
        natural_checked: 0,
        natural_violations: 0,
        intervened_checked: 0,
        intervened_violations: 0,
        theorem1_pairs: 0,
        theorem1_strict_subset: 0,
        theorem1_max_width_error: 0.0,
        iv_b,
        iv_estimate: f64::NAN,
        iv_samples,
        iv_seconds: 0.0,
    };
    const TOL: f64 = 1e-12;
    for i in 0..instances {
        let mut rng = stream_rng(seed, i as u64);
        let scm = ScmDiscrete::random(&mut rng, cards, alpha);
        let obs = observational_joint_discrete(&scm)?;
        for x in 0..scm.card_x {
            for y in 0..scm.card_y {
                let truth = backdoor_adjust_discrete(&scm, x, y)?;
                let nb = natural_bound(obs.p_xy[x][y].min(obs.p_x[x]), obs.p_x[x].min(1.0))?;
                r.natural_checked += 1;
                if truth < nb.lower - TOL || truth > nb.upper + TOL {
                    r.natural_violations += 1;
                }
            }
        }
        let q: Vec<f64> = {
            let v: Vec<f64> = (0..scm.card_z).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = v.iter().sum();
            let mut q: Vec<f64> = v.iter().map(|p| p / s).collect();
            let head: f64 = q[..scm.card_z - 1].iter().sum();
            q[scm.card_z - 1] = 1.0 - head;
            q
        };
        let cut = scm.with_exogenous_z(&q)?;
        let cut_obs = observational_joint_discrete(&cut)?;
        for x in 0..cut.card_x {
            for y in 0..cut.card_y {
                let truth = backdoor_adjust_discrete(&cut, x, y)?;
                for z in 0..cut.card_z {
                    let b = intervened_bound(&cut_obs.strategy_input(z, x, y)?)?;
                    r.intervened_checked += 1;
                    if truth < b.lower - TOL || truth > b.upper + TOL {
                        r.intervened_violations += 1;
                    }
                }
            }
        }
        let p_y_x: f64 = rng.gen_range(0.0..=1.0);
        let hi: f64 = rng.gen_range(1e-6..=1.0);
        let lo: f64 = rng.gen_range(0.0..hi);
        let a = StrategyBoundInput::from_conditional(p_y_x, hi)?;
        let b = StrategyBoundInput::from_conditional(p_y_x, lo)?;
        let cmp = compare_strategies(&a, &b, p_y_x)?;
        r.theorem1_pairs += 1;
        if cmp.verdict == Tighter::ATighter && cmp.a.is_strict_subset_of(&cmp.b) {
            r.theorem1_strict_subset += 1;
        }
        for (iv, p) in [(&cmp.a, hi), (&cmp.b, lo)] {
            let target: CausalInterval = *iv;
            r.theorem1_max_width_error = r.theorem1_max_width_error.max((target.width() - (1.0 - p)).abs());
        }
    }
    let t = Instant::now();
    let scm = ScmLinear {
        b: iv_b,
        ..Default::default()
    };
    let draws = sample_linear_scm(&scm, iv_samples, named_seed(seed, "iv"))?;
    r.iv_estimate = linear_iv_estimate(&draws.z_i, &draws.x, &draws.y)?.effect;
    r.iv_seconds = t.elapsed().as_secs_f64();
    Ok(r)
}
