use std::fmt;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::clicks::SimulationConfig;
use crate::em::EmConfig;
use crate::error::{Error, Result};
use crate::estimators::DEFAULT_EXPOSURE_SAMPLES;
use crate::logopt::{OptimizerConfig, DEFAULT_GRADIENT_SAMPLES};

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic {
        queries: usize,
        docs_per_query: usize,
        feature_dim: usize,
    },
    /// A LETOR/SVMLight file.
    File(PathBuf),
    /// The single three-document query with fixed rankers A,B,C and B,C,A,
    /// examination (1, 0.9, 0.8) and attraction (0.1, 0, 1).
    Fixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodKind {
    Ab,
    Tdi,
    Pi,
    Oi,
    IpsUniform,
    IpsAb,
    IpsLogopt,
    IpsOracleLogopt,
}

impl MethodKind {
    pub const ALL: [MethodKind; 8] = [
        MethodKind::Ab,
        MethodKind::Tdi,
        MethodKind::Pi,
        MethodKind::Oi,
        MethodKind::IpsUniform,
        MethodKind::IpsAb,
        MethodKind::IpsLogopt,
        MethodKind::IpsOracleLogopt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Ab => "ab",
            MethodKind::Tdi => "tdi",
            MethodKind::Pi => "pi",
            MethodKind::Oi => "oi",
            MethodKind::IpsUniform => "ips-uniform",
            MethodKind::IpsAb => "ips-ab",
            MethodKind::IpsLogopt => "ips-logopt",
            MethodKind::IpsOracleLogopt => "ips-oracle-logopt",
        }
    }

    /// Stable index used to derive the method's random stream.
    pub(crate) fn code(self) -> u64 {
        MethodKind::ALL.iter().position(|&m| m == self).expect("listed") as u64 + 1
    }

    pub fn is_interleaving(self) -> bool {
        matches!(self, MethodKind::Tdi | MethodKind::Pi | MethodKind::Oi)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub pairs: usize,
    pub methods: Vec<MethodKind>,
    pub budget: u64,
    /// Query counts at which result rows are emitted.
    pub checkpoints: Vec<u64>,
    pub seed: u64,
    pub simulation: SimulationConfig,
    pub optimizer: OptimizerConfig,
    pub em: EmConfig,
    /// Rankings sampled per LogOpt gradient step.
    pub gradient_samples: usize,
    /// Ranker training: queries sampled and share of features kept.
    pub train_queries: usize,
    pub feature_fraction: f64,
    /// Load `pair_<i>_1.txt` / `pair_<i>_2.txt` weight files instead of training.
    pub rankers_dir: Option<PathBuf>,
    pub ab_prob: f64,
    pub pi_tau: f64,
    /// Sampled rankings per propensity estimate when a logging policy is too
    /// large to enumerate.
    pub exposure_samples: usize,
    /// Record elapsed seconds per row; off by default so output is reproducible.
    pub timing: bool,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::Synthetic {
                queries: 100,
                docs_per_query: 10,
                feature_dim: 16,
            },
            pairs: 10,
            methods: MethodKind::ALL.to_vec(),
            budget: 100_000,
            checkpoints: vec![1_000, 10_000, 100_000],
            seed: 0,
            simulation: SimulationConfig::default(),
            optimizer: OptimizerConfig::default(),
            em: EmConfig::default(),
            gradient_samples: DEFAULT_GRADIENT_SAMPLES,
            train_queries: 100,
            feature_fraction: 0.5,
            rankers_dir: None,
            ab_prob: 0.5,
            pi_tau: 4.0,
            exposure_samples: DEFAULT_EXPOSURE_SAMPLES,
            timing: false,
            threads: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::invalid(format!("bad value {value:?} for {key}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse(key, v))
        .collect()
}

/// Accepts plain integers and `1e5`-style values.
fn parse_count(key: &str, value: &str) -> Result<u64> {
    if let Ok(v) = value.parse::<u64>() {
        return Ok(v);
    }
    let f: f64 = parse(key, value)?;
    if f >= 0.0 && f.fract() == 0.0 && f <= u64::MAX as f64 {
        Ok(f as u64)
    } else {
        Err(Error::invalid(format!(
            "{key} must be a non-negative integer, got {value:?}"
        )))
    }
}

fn parse_counts(key: &str, value: &str) -> Result<Vec<u64>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse_count(key, v))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::invalid(format!("{key} must be true or false, got {value:?}"))),
    }
}

fn join<T: fmt::Display>(values: &[T]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let synthetic = |cfg: &mut Self| -> (usize, usize, usize) {
            match cfg.dataset {
                DatasetSource::Synthetic {
                    queries,
                    docs_per_query,
                    feature_dim,
                } => (queries, docs_per_query, feature_dim),
                _ => (100, 10, 16),
            }
        };
        match key.trim() {
            "dataset" => {
                self.dataset = match value {
                    "synthetic" => {
                        let (queries, docs_per_query, feature_dim) = synthetic(self);
                        DatasetSource::Synthetic {
                            queries,
                            docs_per_query,
                            feature_dim,
                        }
                    }
                    "fixture" => DatasetSource::Fixture,
                    path => DatasetSource::File(PathBuf::from(path.strip_prefix("file:").unwrap_or(path))),
                }
            }
            k @ ("synthetic_queries" | "synthetic_docs" | "synthetic_dim") => {
                let (mut q, mut d, mut f) = synthetic(self);
                let v = parse_count(k, value)? as usize;
                match k {
                    "synthetic_queries" => q = v,
                    "synthetic_docs" => d = v,
                    _ => f = v,
                }
                self.dataset = DatasetSource::Synthetic {
                    queries: q,
                    docs_per_query: d,
                    feature_dim: f,
                };
            }
            k @ "pairs" => self.pairs = parse_count(k, value)? as usize,
            k @ "methods" => self.methods = parse_list(k, value)?,
            k @ "budget" => self.budget = parse_count(k, value)?,
            k @ "checkpoints" => self.checkpoints = parse_counts(k, value)?,
            k @ "seed" => self.seed = parse_count(k, value)?,
            k @ "display_length" => self.simulation.display_length = parse_count(k, value)? as usize,
            k @ "bias_exponent" => self.simulation.bias_exponent = parse(k, value)?,
            k @ "zeta_slope" => self.simulation.zeta_slope = parse(k, value)?,
            k @ "zeta_intercept" => self.simulation.zeta_intercept = parse(k, value)?,
            k @ "steps" => self.optimizer.steps = parse_count(k, value)? as usize,
            k @ "learning_rate" => self.optimizer.learning_rate = parse(k, value)?,
            k @ "epsilon" => self.optimizer.epsilon = parse(k, value)?,
            k @ "update_schedule" => self.optimizer.update_schedule = parse_counts(k, value)?,
            k @ "rho_refresh" => self.optimizer.rho_refresh = parse_count(k, value)? as usize,
            k @ "rho_samples" => self.optimizer.rho_samples = parse_count(k, value)? as usize,
            k @ "max_candidates" => self.optimizer.max_candidates = parse_count(k, value)? as usize,
            k @ "gradient_samples" => self.gradient_samples = parse_count(k, value)? as usize,
            k @ "em_max_iters" => self.em.max_iters = parse_count(k, value)? as usize,
            k @ "em_tol" => self.em.tol = parse(k, value)?,
            k @ "em_zeta_init" => self.em.zeta_init = parse(k, value)?,
            k @ "train_queries" => self.train_queries = parse_count(k, value)? as usize,
            k @ "feature_fraction" => self.feature_fraction = parse(k, value)?,
            "rankers_dir" => self.rankers_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            k @ "ab_prob" => self.ab_prob = parse(k, value)?,
            k @ "pi_tau" => self.pi_tau = parse(k, value)?,
            k @ "exposure_samples" => self.exposure_samples = parse_count(k, value)? as usize,
            k @ "timing" => self.timing = parse_bool(k, value)?,
            k @ "threads" => self.threads = parse_count(k, value)? as usize,
            other => return Err(Error::invalid(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override as given on the command line.
    pub fn set_pair(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("expected key=value, got {assignment:?}")))?;
        self.set(k, v)
    }

    /// Reads `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, format!("expected key = value, got {line:?}")))?;
            cfg.set(k, v).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.simulation.validate()?;
        self.optimizer.validate()?;
        if self.pairs == 0 {
            return Err(Error::invalid("need at least one ranker pair"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("need at least one method"));
        }
        if self.budget == 0 {
            return Err(Error::invalid("query budget must be positive"));
        }
        if self.checkpoints.is_empty() {
            return Err(Error::invalid("need at least one checkpoint"));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) || self.checkpoints[0] == 0 {
            return Err(Error::invalid("checkpoints must be positive and strictly increasing"));
        }
        if *self.checkpoints.last().expect("non-empty") > self.budget {
            return Err(Error::invalid("checkpoints cannot exceed the budget"));
        }
        if !(self.ab_prob > 0.0 && self.ab_prob < 1.0) {
            return Err(Error::invalid("ab_prob must lie in (0, 1)"));
        }
        if self.gradient_samples == 0 || self.exposure_samples == 0 || self.train_queries == 0 {
            return Err(Error::invalid("sample and query counts must be positive"));
        }
        if let DatasetSource::Synthetic {
            queries,
            docs_per_query,
            feature_dim,
        } = self.dataset
        {
            if queries == 0 || docs_per_query < 2 || feature_dim == 0 {
                return Err(Error::invalid(
                    "synthetic datasets need queries, two or more documents each, and features",
                ));
            }
        }
        Ok(())
    }

    /// Every setting as `key = value` lines that [`ExperimentConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        match &self.dataset {
            DatasetSource::Synthetic {
                queries,
                docs_per_query,
                feature_dim,
            } => {
                put("dataset", "synthetic".into());
                put("synthetic_queries", queries.to_string());
                put("synthetic_docs", docs_per_query.to_string());
                put("synthetic_dim", feature_dim.to_string());
            }
            DatasetSource::File(p) => put("dataset", format!("file:{}", p.display())),
            DatasetSource::Fixture => put("dataset", "fixture".into()),
        }
        put("pairs", self.pairs.to_string());
        put("methods", join(&self.methods));
        put("budget", self.budget.to_string());
        put("checkpoints", join(&self.checkpoints));
        put("seed", self.seed.to_string());
        put("display_length", self.simulation.display_length.to_string());
        put("bias_exponent", format!("{:?}", self.simulation.bias_exponent));
        put("zeta_slope", format!("{:?}", self.simulation.zeta_slope));
        put("zeta_intercept", format!("{:?}", self.simulation.zeta_intercept));
        put("steps", self.optimizer.steps.to_string());
        put("learning_rate", format!("{:?}", self.optimizer.learning_rate));
        put("epsilon", format!("{:?}", self.optimizer.epsilon));
        put("update_schedule", join(&self.optimizer.update_schedule));
        put("rho_refresh", self.optimizer.rho_refresh.to_string());
        put("rho_samples", self.optimizer.rho_samples.to_string());
        put("max_candidates", self.optimizer.max_candidates.to_string());
        put("gradient_samples", self.gradient_samples.to_string());
        put("em_max_iters", self.em.max_iters.to_string());
        put("em_tol", format!("{:?}", self.em.tol));
        put("em_zeta_init", format!("{:?}", self.em.zeta_init));
        put("train_queries", self.train_queries.to_string());
        put("feature_fraction", format!("{:?}", self.feature_fraction));
        if let Some(dir) = &self.rankers_dir {
            put("rankers_dir", dir.display().to_string());
        }
        put("ab_prob", format!("{:?}", self.ab_prob));
        put("pi_tau", format!("{:?}", self.pi_tau));
        put("exposure_samples", self.exposure_samples.to_string());
        put("timing", self.timing.to_string());
        put("threads", self.threads.to_string());
        out
    }
}
