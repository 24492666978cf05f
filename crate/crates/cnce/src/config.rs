//! JSON configuration files (`"schema": 1`).

use std::fmt;
use std::path::Path;

use cnce_core::{EpsilonSchedule, KernelConfig, KernelKind, ModelKind, ModelSpec, OptimizerConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cnce,
    Nce,
    Mle,
    ScoreMatching,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Cnce, Method::Nce, Method::Mle, Method::ScoreMatching];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cnce => "cnce",
            Method::Nce => "nce",
            Method::Mle => "mle",
            Method::ScoreMatching => "score_matching",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Method::ALL.into_iter().find(|m| m.as_str() == s)
    }

    /// Whether `κ` changes the estimate.
    pub fn uses_kappa(self) -> bool {
        matches!(self, Method::Cnce | Method::Nce)
    }

    pub fn check_model(self, spec: &ModelSpec) -> Result<()> {
        match self {
            Method::Mle if spec.kind == ModelKind::Ring => Err(Error::Config("mle unsupported for ring".into())),
            Method::ScoreMatching if !spec.kind.is_smooth() => Err(Error::Config(format!(
                "score_matching unsupported for {}",
                spec.kind
            ))),
            Method::Nce if spec.kind == ModelKind::Bernoulli => {
                Err(Error::Config("nce unsupported for bernoulli (no continuous noise on {0, 1})".into()))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `{"kind": ..., "dim": ..., "ring_mean": ...}`; `dim` defaults per model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ring_mean: Option<f64>,
}

impl ModelConfig {
    pub fn spec(&self) -> Result<ModelSpec> {
        let mut spec = ModelSpec::new(self.kind, self.dim.unwrap_or(self.kind.default_dim()))
            .map_err(|e| Error::Config(format!("model.dim: {e}")))?;
        if let Some(mu) = self.ring_mean {
            if !(mu.is_finite() && mu > 0.0) {
                return Err(Error::Config("model.ring_mean must be positive".into()));
            }
            spec.ring_mean = mu;
        }
        Ok(spec)
    }
}

impl From<ModelSpec> for ModelConfig {
    fn from(spec: ModelSpec) -> Self {
        ModelConfig {
            kind: spec.kind,
            dim: Some(spec.dim),
            ring_mean: (spec.kind == ModelKind::Ring).then_some(spec.ring_mean),
        }
    }
}

/// The `"epsilon"` key: a fixed number, `"auto"`, or a ladder object
/// `{"epsilon_0", "growth", "delta", "epsilon_max"}` for the heuristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonSetting {
    Fixed(f64),
    Auto(EpsilonSchedule),
}

impl Default for EpsilonSetting {
    fn default() -> Self {
        EpsilonSetting::Auto(EpsilonSchedule::default())
    }
}

impl Serialize for EpsilonSetting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            EpsilonSetting::Fixed(e) => s.serialize_f64(*e),
            EpsilonSetting::Auto(sched) if *sched == EpsilonSchedule::default() => s.serialize_str("auto"),
            EpsilonSetting::Auto(sched) => sched.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for EpsilonSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::Number(n) => n
                .as_f64()
                .map(EpsilonSetting::Fixed)
                .ok_or_else(|| D::Error::custom("epsilon must be a finite number")),
            serde_json::Value::String(s) if s == "auto" => Ok(EpsilonSetting::default()),
            serde_json::Value::Object(_) => {
                EpsilonSchedule::deserialize(v).map(EpsilonSetting::Auto).map_err(D::Error::custom)
            }
            other => Err(D::Error::custom(format!(
                "expected a number, \"auto\" or a schedule object, got {other}"
            ))),
        }
    }
}

impl EpsilonSetting {
    pub fn validate(&self, kind: KernelKind) -> Result<()> {
        match self {
            EpsilonSetting::Fixed(e) => {
                let limit = kernel_template(kind, 1.0, true).epsilon_limit();
                if !(e.is_finite() && *e > 0.0 && *e <= limit) {
                    return Err(Error::Config(format!("epsilon must lie in (0, {limit}], got {e}")));
                }
                Ok(())
            }
            EpsilonSetting::Auto(s) => s.validate().map_err(|e| Error::Config(format!("epsilon: {e}"))),
        }
    }
}

/// Conditional noise used for a model: bit flips for binary data, Gaussian
/// perturbations otherwise.
pub fn kernel_kind(spec: &ModelSpec) -> KernelKind {
    if spec.kind == ModelKind::Bernoulli {
        KernelKind::BernoulliFlip
    } else {
        KernelKind::GaussianPerturb
    }
}

pub fn kernel_template(kind: KernelKind, epsilon: f64, per_dim: bool) -> KernelConfig {
    KernelConfig { kind, epsilon, per_dim }
}

fn default_true() -> bool {
    true
}
fn default_methods() -> Vec<Method> {
    vec![Method::Cnce]
}
fn default_n_grid() -> Vec<usize> {
    vec![1_000, 10_000, 100_000]
}
fn default_kappa_grid() -> Vec<usize> {
    vec![1, 10, 100]
}
fn default_repeats() -> usize {
    20
}
fn default_kappa() -> usize {
    10
}

/// Grid of simulations for `cnce experiment`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub model: ModelConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    /// `κ` for CNCE, `ν` for NCE.
    #[serde(default = "default_kappa_grid")]
    pub kappa_grid: Vec<usize>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub epsilon: EpsilonSetting,
    /// Scale the Gaussian perturbation by each coordinate's sample standard deviation.
    #[serde(default = "default_true")]
    pub per_dim: bool,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Store measured run times in `wall_ms`; otherwise the column is 0 and
    /// the CSV is reproducible byte for byte.
    #[serde(default)]
    pub record_wall_time: bool,
}

impl ExperimentConfig {
    pub fn new(model: ModelSpec, methods: Vec<Method>, n_grid: Vec<usize>, kappa_grid: Vec<usize>, repeats: usize) -> Self {
        ExperimentConfig {
            schema: SCHEMA_VERSION,
            model: model.into(),
            methods,
            n_grid,
            kappa_grid,
            repeats,
            master_seed: 0,
            epsilon: EpsilonSetting::default(),
            per_dim: true,
            optimizer: OptimizerConfig::default(),
            record_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<ModelSpec> {
        check_schema(self.schema)?;
        let spec = self.model.spec()?;
        if self.methods.is_empty() {
            return Err(Error::Config("methods must not be empty".into()));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(Error::Config(format!("methods lists {m} twice")));
            }
            m.check_model(&spec)?;
        }
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n_grid must be non-empty and strictly ascending".into()));
        }
        let min_n = if self.methods.contains(&Method::Nce) { spec.dim + 1 } else { 2 };
        if self.n_grid[0] < min_n {
            return Err(Error::Config(format!("n_grid values must be at least {min_n}")));
        }
        if self.kappa_grid.is_empty() || self.kappa_grid.contains(&0) {
            return Err(Error::Config("kappa_grid must be non-empty with entries of at least 1".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        self.epsilon.validate(kernel_kind(&spec))?;
        self.optimizer.validate().map_err(core_config)?;
        Ok(spec)
    }
}

/// One estimation for `cnce estimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub schema: u32,
    pub model: ModelConfig,
    pub method: Method,
    pub n: usize,
    #[serde(default = "default_kappa")]
    pub kappa: usize,
    #[serde(default)]
    pub epsilon: EpsilonSetting,
    #[serde(default = "default_true")]
    pub per_dim: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Data-generating parameters; drawn from the seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_true: Option<Vec<f64>>,
}

impl EstimateConfig {
    pub fn validate(&self) -> Result<ModelSpec> {
        check_schema(self.schema)?;
        let spec = self.model.spec()?;
        self.method.check_model(&spec)?;
        if self.n < 2 || (self.method == Method::Nce && self.n < spec.dim + 1) {
            return Err(Error::Config(format!("n = {} is too small", self.n)));
        }
        if self.kappa == 0 {
            return Err(Error::Config("kappa must be at least 1".into()));
        }
        self.epsilon.validate(kernel_kind(&spec))?;
        self.optimizer.validate().map_err(core_config)?;
        if let Some(theta) = &self.theta_true {
            spec.check_theta(theta).map_err(|e| Error::Config(format!("theta_true: {e}")))?;
            if spec.positive_mask().iter().zip(theta).any(|(&pos, &t)| pos && t <= 0.0) {
                return Err(Error::Config("theta_true: positive entries must be above zero".into()));
            }
        }
        Ok(spec)
    }
}

fn default_eps_grid() -> Vec<f64> {
    vec![0.0, 0.04, 0.02, 0.01]
}
fn default_mc_pairs() -> usize {
    1_000_000
}

/// Settings for `cnce limit-check`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitConfig {
    pub schema: u32,
    pub model: ModelConfig,
    /// Packed precision matrix; the identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(default = "default_eps_grid")]
    pub eps_grid: Vec<f64>,
    #[serde(default = "default_mc_pairs")]
    pub mc_pairs: usize,
    #[serde(default)]
    pub seed: u64,
}

impl LimitConfig {
    pub fn validate(&self) -> Result<ModelSpec> {
        check_schema(self.schema)?;
        let spec = self.model.spec()?;
        if spec.kind != ModelKind::GaussianPrecision {
            return Err(Error::Config("model.kind: the limit check needs gaussian_precision".into()));
        }
        if self.eps_grid.is_empty() || self.eps_grid.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::Config("eps_grid must hold finite non-negative values".into()));
        }
        if self.mc_pairs < 2 || self.mc_pairs % 2 != 0 {
            return Err(Error::Config("mc_pairs must be a positive even number".into()));
        }
        if let Some(theta) = &self.theta {
            spec.check_theta(theta).map_err(|e| Error::Config(format!("theta: {e}")))?;
        }
        Ok(spec)
    }
}

fn check_schema(schema: u32) -> Result<()> {
    if schema != SCHEMA_VERSION {
        return Err(Error::Config(format!("schema: expected {SCHEMA_VERSION}, got {schema}")));
    }
    Ok(())
}

fn core_config(e: cnce_core::Error) -> Error {
    Error::Config(match e {
        cnce_core::Error::Config(msg) => msg,
        other => other.to_string(),
    })
}

/// Parses a JSON document, naming the offending key on failure.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." || path.is_empty() {
            Error::Config(inner.to_string())
        } else {
            Error::Config(format!("{path}: {inner}"))
        }
    })
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_experiment_uses_defaults() {
        let cfg: ExperimentConfig = parse_json(r#"{"schema": 1, "model": {"kind": "gaussian_precision"}}"#).unwrap();
        assert_eq!(cfg.n_grid, vec![1_000, 10_000, 100_000]);
        assert_eq!(cfg.kappa_grid, vec![1, 10, 100]);
        assert_eq!(cfg.repeats, 20);
        assert_eq!(cfg.epsilon, EpsilonSetting::default());
        assert_eq!(cfg.validate().unwrap().dim, 5);
    }

    #[test]
    fn epsilon_forms() {
        let fixed: EpsilonSetting = parse_json("0.5").unwrap();
        assert_eq!(fixed, EpsilonSetting::Fixed(0.5));
        let auto: EpsilonSetting = parse_json("\"auto\"").unwrap();
        assert_eq!(auto, EpsilonSetting::default());
        let sched: EpsilonSetting = parse_json(r#"{"epsilon_0": 0.1, "delta": 0.2}"#).unwrap();
        let EpsilonSetting::Auto(s) = sched else { panic!() };
        assert_eq!((s.epsilon_0, s.delta, s.growth), (0.1, 0.2, 2.0));
        assert!(parse_json::<EpsilonSetting>("\"sometimes\"").is_err());
        for e in [fixed, auto, sched] {
            let text = serde_json::to_string(&e).unwrap();
            assert_eq!(parse_json::<EpsilonSetting>(&text).unwrap(), e);
        }
    }

    #[test]
    fn errors_name_the_key() {
        let err = parse_json::<ExperimentConfig>(r#"{"schema": 1, "model": {"kind": "gaussian_precision"}, "n_grid": [10, "x"]}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("n_grid"), "{err}");
        let err = parse_json::<ExperimentConfig>(r#"{"schema": 1, "model": {"kind": "gaussian_precision"}, "bogus": 1}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("bogus"), "{err}");
        let err = parse_json::<ExperimentConfig>(r#"{"schema": 1, "model": {"kind": "gaussian_precision"}, "optimizer": {"max_iters": -1}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("optimizer.max_iters"), "{err}");
    }

    #[test]
    fn validation_rules() {
        let base = r#"{"schema": 1, "model": {"kind": "ring"}, "methods": ["cnce", "mle"]}"#;
        let cfg: ExperimentConfig = parse_json(base).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("mle unsupported for ring"));

        let mut cfg = ExperimentConfig::new(ModelSpec::gaussian(2), vec![Method::Cnce], vec![100, 10], vec![1], 1);
        assert!(cfg.validate().is_err());
        cfg.n_grid = vec![10, 100];
        cfg.validate().unwrap();
        cfg.schema = 2;
        assert!(cfg.validate().unwrap_err().to_string().contains("schema"));
        cfg.schema = 1;
        cfg.repeats = 0;
        assert!(cfg.validate().is_err());
        cfg.repeats = 1;
        cfg.optimizer.grad_tol = 0.0;
        assert!(cfg.validate().unwrap_err().to_string().contains("grad_tol"));

        let mut bern = ExperimentConfig::new(ModelSpec::bernoulli(), vec![Method::Cnce, Method::ScoreMatching], vec![10], vec![1], 1);
        assert!(bern.validate().is_err());
        bern.methods = vec![Method::Cnce];
        bern.epsilon = EpsilonSetting::Fixed(1.5);
        assert!(bern.validate().is_err());
        bern.epsilon = EpsilonSetting::Fixed(0.5);
        bern.validate().unwrap();
    }

    #[test]
    fn experiment_config_round_trips() {
        let mut cfg = ExperimentConfig::new(ModelSpec::ring(5, 4.0), vec![Method::Cnce, Method::Nce], vec![100], vec![10], 3);
        cfg.epsilon = EpsilonSetting::Fixed(0.3);
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(parse_json::<ExperimentConfig>(&text).unwrap(), cfg);
    }
}
