use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use serde::{Deserialize, Serialize};

use crate::classify::{IrmConfig, ProbeConfig, RegressorConfig, TrainConfig};
use crate::datagen::ColorMode;
use crate::error::{Error, Result};
use crate::genmodel::CvaeConfig;
use crate::intervene::{BasisSource, InterventionStrategy, OffsetMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    pub mnist_dir: PathBuf,
    /// 0 keeps every available digit.
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub causal_mode: ColorMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Prior,
    Encoded,
}

impl FromStr for SourceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prior" => Ok(SourceKind::Prior),
            "encoded" => Ok(SourceKind::Encoded),
            other => Err(Error::validation(format!("unknown latent source `{other}` (expected prior or encoded)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionSection {
    pub strategy: InterventionStrategy,
    pub per_class: usize,
    pub source: SourceKind,
    pub basis: BasisSource,
    pub basis_prior_samples: usize,
}

impl InterventionSection {
    /// Same sampling path with every scale set to zero.
    pub fn observational(&self) -> InterventionStrategy {
        InterventionStrategy {
            scale: 0.0,
            ..self.strategy.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Erm,
    Irm,
    Observational,
    Interventional,
    ThreeTerm,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Erm,
        Method::Irm,
        Method::Observational,
        Method::Interventional,
        Method::ThreeTerm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Irm => "irm",
            Method::Observational => "observational_cvae",
            Method::Interventional => "interventional_cvae",
            Method::ThreeTerm => "three_term",
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSection {
    /// Shared settings; λ1/λ2 here apply to the three-term method only.
    pub train: TrainConfig,
    pub methods: Vec<Method>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalSection {
    pub tau: f64,
    /// Reference P(y|x) for the bound intervals reported per strategy.
    pub p_y_given_x: f64,
    /// Number of causal-test queries scored; 0 means all.
    pub queries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSection {
    pub probe: ProbeConfig,
    pub subset_sizes: Vec<usize>,
    pub regressor: RegressorConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScmSection {
    pub instances: usize,
    /// `[c, z, x, y]`
    pub cards: [usize; 4],
    pub alpha: f64,
    pub iv_samples: usize,
    pub iv_b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataSection,
    pub cvae: CvaeConfig,
    pub intervention: InterventionSection,
    pub ablation: Vec<InterventionStrategy>,
    pub classifier: ClassifierSection,
    pub irm: IrmConfig,
    pub causal: CausalSection,
    pub corr: ProbeSection,
    pub scm: ScmSection,
}

const SCHEMA: &[(&str, &[&str])] = &[
    ("run", &["seed", "out"]),
    ("data", &["mnist_dir", "train_per_class", "test_per_class", "causal_mode"]),
    ("cvae", &["hidden", "latent_dim", "epochs", "batch_size", "lr", "beta", "holdout_fraction"]),
    (
        "intervention",
        &[
            "truncation",
            "top_k",
            "scale",
            "directions_per_sample",
            "offset_mode",
            "per_class",
            "source",
            "basis",
            "basis_prior_samples",
        ],
    ),
    ("ablation", &["grid"]),
    (
        "classifier",
        &["hidden", "epochs", "lr", "batch_x", "batch_int", "batch_itr", "lambda1", "lambda2", "methods"],
    ),
    ("irm", &["penalty_weight", "warmup_steps", "warmup_weight"]),
    ("causal", &["tau", "p_y_given_x", "queries"]),
    ("probe", &["hidden", "epochs", "lr", "batch", "test_fraction", "subset_sizes"]),
    ("regressor", &["hidden", "epochs", "lr", "batch", "val_fraction"]),
    ("scm", &["instances", "card_c", "card_z", "card_x", "card_y", "alpha", "iv_samples", "iv_b"]),
];

fn nearest<'a>(word: &str, candidates: impl IntoIterator<Item = &'a str>) -> Option<&'a str> {
    candidates
        .into_iter()
        .map(|c| (strsim::levenshtein(word, c), c))
        .min()
        .filter(|(d, _)| *d <= 3.max(word.len() / 2))
        .map(|(_, c)| c)
}

struct Reader<'a> {
    ini: &'a Ini,
    errs: Vec<String>,
}

impl Reader<'_> {
    fn raw(&self, sec: &str, key: &str) -> Option<&str> {
        self.ini.section(Some(sec)).and_then(|p| p.get(key)).map(str::trim)
    }

    fn get<T: FromStr>(&mut self, sec: &str, key: &str, default: T) -> T
    where
        T::Err: Display,
    {
        match self.raw(sec, key) {
            None => default,
            Some(v) => match v.parse() {
                Ok(x) => x,
                Err(e) => {
                    self.errs.push(format!("[{sec}] {key} = `{v}`: {e}"));
                    default
                }
            },
        }
    }

    fn list<T: FromStr>(&mut self, sec: &str, key: &str, default: Vec<T>) -> Vec<T>
    where
        T::Err: Display,
    {
        let Some(v) = self.raw(sec, key).map(str::to_string) else {
            return default;
        };
        let mut out = Vec::new();
        for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item.parse() {
                Ok(x) => out.push(x),
                Err(e) => self.errs.push(format!("[{sec}] {key}: `{item}`: {e}")),
            }
        }
        out
    }

    fn check_keys(&mut self) {
        for (sec, props) in self.ini.iter() {
            let Some(sec) = sec else {
                for (k, _) in props.iter() {
                    self.errs.push(format!("key `{k}` appears outside any section"));
                }
                continue;
            };
            match SCHEMA.iter().find(|(s, _)| *s == sec) {
                None => {
                    let hint = nearest(sec, SCHEMA.iter().map(|(s, _)| *s))
                        .map(|s| format!("; did you mean [{s}]?"))
                        .unwrap_or_default();
                    self.errs.push(format!("unknown section [{sec}]{hint}"));
                }
                Some((_, keys)) => {
                    for (k, _) in props.iter() {
                        if !keys.contains(&k) {
                            let hint = nearest(k, keys.iter().copied())
                                .map(|s| format!("; did you mean `{s}`?"))
                                .unwrap_or_default();
                            self.errs.push(format!("unknown key `{k}` in [{sec}]{hint}"));
                        }
                    }
                }
            }
        }
    }
}

/// Parses one ablation cell such as `t=1, k=2, s=3` (keys t, k, s, d, offset).
fn parse_cell(cell: &str, base: &InterventionStrategy) -> std::result::Result<InterventionStrategy, String> {
    let mut st = base.clone();
    let mut dps = None;
    for part in cell.split([',', ' ']).map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| format!("`{part}` is not key=value"))?;
        let bad = |e: &dyn Display| format!("`{part}`: {e}");
        match k.trim() {
            "t" => st.truncation = v.parse().map_err(|e| bad(&e))?,
            "k" => st.top_k = v.parse().map_err(|e| bad(&e))?,
            "s" => st.scale = v.parse().map_err(|e| bad(&e))?,
            "d" => dps = Some(v.parse().map_err(|e| bad(&e))?),
            "offset" => st.offset_mode = v.parse().map_err(|e: Error| bad(&e))?,
            other => return Err(format!("unknown grid key `{other}` (expected t, k, s, d or offset)")),
        }
    }
    st.directions_per_sample = dps.unwrap_or(st.top_k.min(2));
    Ok(st)
}

/// Short label of a strategy, e.g. `t=1,k=2,s=3`.
pub fn strategy_label(s: &InterventionStrategy) -> String {
    let mut out = format!("t={},k={},s={}", s.truncation, s.top_k, s.scale);
    if s.directions_per_sample != s.top_k.min(2) {
        out += &format!(",d={}", s.directions_per_sample);
    }
    if s.offset_mode != OffsetMode::None {
        out += &format!(",offset={}", s.offset_mode);
    }
    out
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    /// Parses INI text; relative paths resolve against `base_dir`.
    pub fn from_ini_str(text: &str, base_dir: &Path) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Configuration(format!("malformed config: {e}")))?;
        let mut r = Reader { ini: &ini, errs: Vec::new() };
        r.check_keys();

        let seed = r.get("run", "seed", 7u64);
        let out_dir = resolve(base_dir, r.get("run", "out", PathBuf::from("runs/default")));
        let data = DataSection {
            mnist_dir: resolve(base_dir, r.get("data", "mnist_dir", PathBuf::from("data/mnist"))),
            train_per_class: r.get("data", "train_per_class", 700),
            test_per_class: r.get("data", "test_per_class", 160),
            causal_mode: r.get("data", "causal_mode", ColorMode::TestCausal),
        };
        let dc = CvaeConfig::default();
        let cvae = CvaeConfig {
            hidden: r.get("cvae", "hidden", dc.hidden),
            latent_dim: r.get("cvae", "latent_dim", dc.latent_dim),
            epochs: r.get("cvae", "epochs", dc.epochs),
            batch_size: r.get("cvae", "batch_size", dc.batch_size),
            lr: r.get("cvae", "lr", dc.lr),
            beta: r.get("cvae", "beta", dc.beta),
            holdout_fraction: r.get("cvae", "holdout_fraction", dc.holdout_fraction),
            seed: 0,
        };
        let ds = InterventionStrategy::default();
        let top_k = r.get("intervention", "top_k", ds.top_k);
        let strategy = InterventionStrategy {
            truncation: r.get("intervention", "truncation", ds.truncation),
            top_k,
            scale: r.get("intervention", "scale", ds.scale),
            directions_per_sample: r.get("intervention", "directions_per_sample", top_k.min(2)),
            offset_mode: r.get("intervention", "offset_mode", ds.offset_mode),
        };
        let intervention = InterventionSection {
            per_class: r.get("intervention", "per_class", 1000),
            source: r.get("intervention", "source", SourceKind::Encoded),
            basis: r.get("intervention", "basis", BasisSource::Posterior),
            basis_prior_samples: r.get("intervention", "basis_prior_samples", 10_000),
            strategy,
        };
        let grid_text = r
            .raw("ablation", "grid")
            .unwrap_or("t=1,k=2,s=0; t=1,k=1,s=1; t=1,k=2,s=3")
            .to_string();
        let mut ablation = Vec::new();
        for cell in grid_text.split(';').map(str::trim).filter(|c| !c.is_empty()) {
            match parse_cell(cell, &intervention.strategy) {
                Ok(s) => ablation.push(s),
                Err(e) => r.errs.push(format!("[ablation] grid cell `{cell}`: {e}")),
            }
        }
        let dt = TrainConfig::default();
        let train = TrainConfig {
            hidden: r.get("classifier", "hidden", dt.hidden),
            epochs: r.get("classifier", "epochs", dt.epochs),
            lr: r.get("classifier", "lr", dt.lr),
            batch_x: r.get("classifier", "batch_x", dt.batch_x),
            batch_int: r.get("classifier", "batch_int", dt.batch_int),
            batch_itr: r.get("classifier", "batch_itr", dt.batch_itr),
            lambda1: r.get("classifier", "lambda1", 0.05),
            lambda2: r.get("classifier", "lambda2", 1.0),
            seed: 0,
            use_original_data: true,
        };
        let classifier = ClassifierSection {
            methods: r.list("classifier", "methods", Method::ALL.to_vec()),
            train,
        };
        let di = IrmConfig::default();
        let irm = IrmConfig {
            penalty_weight: r.get("irm", "penalty_weight", di.penalty_weight),
            warmup_steps: r.get("irm", "warmup_steps", di.warmup_steps),
            warmup_weight: r.get("irm", "warmup_weight", di.warmup_weight),
        };
        let causal = CausalSection {
            tau: r.get("causal", "tau", 1.0),
            p_y_given_x: r.get("causal", "p_y_given_x", 0.1),
            queries: r.get("causal", "queries", 0),
        };
        let dp = ProbeConfig::default();
        let dr = RegressorConfig::default();
        let corr = ProbeSection {
            probe: ProbeConfig {
                hidden: r.get("probe", "hidden", dp.hidden),
                epochs: r.get("probe", "epochs", dp.epochs),
                lr: r.get("probe", "lr", dp.lr),
                batch: r.get("probe", "batch", dp.batch),
                test_fraction: r.get("probe", "test_fraction", dp.test_fraction),
                seed: 0,
            },
            subset_sizes: r.list("probe", "subset_sizes", vec![2, 5, 10]),
            regressor: RegressorConfig {
                hidden: r.get("regressor", "hidden", dr.hidden),
                epochs: r.get("regressor", "epochs", dr.epochs),
                lr: r.get("regressor", "lr", dr.lr),
                batch: r.get("regressor", "batch", dr.batch),
                val_fraction: r.get("regressor", "val_fraction", dr.val_fraction),
                seed: 0,
            },
        };
        let scm = ScmSection {
            instances: r.get("scm", "instances", 1000),
            cards: [
                r.get("scm", "card_c", 3),
                r.get("scm", "card_z", 3),
                r.get("scm", "card_x", 2),
                r.get("scm", "card_y", 2),
            ],
            alpha: r.get("scm", "alpha", 1.0),
            iv_samples: r.get("scm", "iv_samples", 1_000_000),
            iv_b: r.get("scm", "iv_b", 0.5),
        };
        let mut errs = r.errs;
        let cfg = ExperimentConfig {
            seed,
            out_dir,
            data,
            cvae,
            intervention,
            ablation,
            classifier,
            irm,
            causal,
            corr,
            scm,
        };
        errs.extend(cfg.problems());
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Validation(errs.join("\n")))
        }
    }

    /// Every bound violation, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut push = |sec: &str, r: Result<()>| {
            if let Err(e) = r {
                let msg = match e {
                    Error::Validation(m) => m,
                    other => other.to_string(),
                };
                for m in msg.split("; ") {
                    errs.push(format!("[{sec}] {m}"));
                }
            }
        };
        push("cvae", self.cvae.validate());
        push("intervention", self.intervention.strategy.validate(self.cvae.latent_dim));
        for s in &self.ablation {
            push("ablation", s.validate(self.cvae.latent_dim));
        }
        push("classifier", self.classifier.train.validate());
        let mut errs2 = Vec::new();
        let d = &self.data;
        for f in ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"] {
            let p = d.mnist_dir.join(f);
            if !p.exists() && !d.mnist_dir.join(format!("{f}.gz")).exists() {
                errs2.push(format!("[data] mnist_dir: {} not found (plain or .gz)", p.display()));
            }
        }
        if d.test_per_class == 0 {
            errs2.push("[data] test_per_class must be >= 1".into());
        }
        if matches!(d.causal_mode, ColorMode::TrainConfounded | ColorMode::TestConfounded) {
            errs2.push("[data] causal_mode must be test_causal or test_causal_unseen".into());
        }
        if self.intervention.per_class == 0 {
            errs2.push("[intervention] per_class must be >= 1".into());
        }
        if self.intervention.basis_prior_samples < 2 {
            errs2.push("[intervention] basis_prior_samples must be >= 2".into());
        }
        if self.ablation.is_empty() {
            errs2.push("[ablation] grid must contain at least one cell".into());
        }
        if self.classifier.methods.is_empty() {
            errs2.push("[classifier] methods must not be empty".into());
        } else if !self.classifier.methods.contains(&Method::Erm) {
            errs2.push("[classifier] methods must include erm (its features score likelihoods)".into());
        }
        if self.classifier.train.lambda1 <= 0.0 && self.classifier.methods.contains(&Method::ThreeTerm) {
            errs2.push("[classifier] three_term needs lambda1 > 0".into());
        }
        if !(self.irm.penalty_weight >= 0.0) || !(self.irm.warmup_weight >= 0.0) {
            errs2.push("[irm] penalty weights must be >= 0".into());
        }
        if !(self.causal.tau > 0.0) || !self.causal.tau.is_finite() {
            errs2.push(format!("[causal] tau must be > 0, got {}", self.causal.tau));
        }
        if !(0.0..=1.0).contains(&self.causal.p_y_given_x) {
            errs2.push(format!("[causal] p_y_given_x must be in [0, 1], got {}", self.causal.p_y_given_x));
        }
        let p = &self.corr;
        if p.subset_sizes.is_empty() || p.subset_sizes.iter().any(|&m| m < 2 || m > crate::datagen::NUM_CLASSES) {
            errs2.push(format!("[probe] subset_sizes must be in [2, 10], got {:?}", p.subset_sizes));
        }
        for (sec, h, b, f) in [
            ("probe", p.probe.hidden, p.probe.batch, p.probe.test_fraction),
            ("regressor", p.regressor.hidden, p.regressor.batch, p.regressor.val_fraction),
        ] {
            if h == 0 || b == 0 {
                errs2.push(format!("[{sec}] hidden and batch must be >= 1"));
            }
            if !(f > 0.0 && f < 1.0) {
                errs2.push(format!("[{sec}] holdout fraction must be in (0, 1), got {f}"));
            }
        }
        let s = &self.scm;
        if s.cards.iter().any(|&c| c < 2) {
            errs2.push(format!("[scm] cardinalities must be >= 2, got {:?}", s.cards));
        }
        if !(s.alpha > 0.0) {
            errs2.push(format!("[scm] alpha must be > 0, got {}", s.alpha));
        }
        if s.iv_samples < 3 {
            errs2.push("[scm] iv_samples must be >= 3".into());
        }
        errs.extend(errs2);
        errs
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_ini_str(&text, base)
    }

    /// Documented defaults, paths relative to `base_dir`.
    pub fn defaults(base_dir: &Path) -> Result<Self> {
        Self::from_ini_str("", base_dir)
    }
}
