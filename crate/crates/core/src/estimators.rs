//! A/B and inverse-propensity estimators of CTR differences.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{delta_bin, ClickModel, DocId, InteractionRecord, Mode, Query, QueryDistribution};
use crate::policy::{self, Policy};
use crate::stats::Welford;

/// Propensities at or below this are treated as zero.
pub const SUPPORT_EPSILON: f64 = 1e-12;
pub const DEFAULT_EXPOSURE_SAMPLES: usize = 10_000;

/// Expected examination of every document of `query` when `policy` ranks
/// and `theta` gives examination per rank. Returns means and their
/// standard errors (zero in exact mode).
pub fn exposure<R: Rng + ?Sized>(
    policy: &dyn Policy,
    query: &Query,
    theta: &[f64],
    mode: Mode,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = query.num_docs();
    let k = theta.len();
    match mode {
        Mode::Exact => {
            let mut e = vec![0.0; n];
            for (r, p) in policy::enumerate_rankings(policy, query, k)? {
                for (i, &d) in r.docs().iter().enumerate() {
                    e[d] += p * theta[i];
                }
            }
            Ok((e, vec![0.0; n]))
        }
        Mode::MonteCarlo { samples } => {
            if samples == 0 {
                return Err(Error::invalid("Monte-Carlo mode needs at least one sample"));
            }
            let bound = policy.bind(query)?;
            let mut acc = vec![Welford::new(); n];
            let mut row = vec![0.0; n];
            let mut buf = Vec::new();
            for _ in 0..samples {
                row.iter_mut().for_each(|v| *v = 0.0);
                let r = policy::sample_bound(bound.as_ref(), k, rng, &mut buf);
                for (i, &d) in r.docs().iter().enumerate() {
                    row[d] = theta[i];
                }
                acc.iter_mut().zip(&row).for_each(|(a, &v)| a.push(v));
            }
            Ok((
                acc.iter().map(Welford::mean).collect(),
                acc.iter().map(Welford::std_error).collect(),
            ))
        }
    }
}

/// Logging propensities and exposure differences for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureTable {
    pub query_id: u64,
    pub rho: Vec<f64>,
    pub lambda: Vec<f64>,
    pub rho_std_error: Vec<f64>,
    pub lambda_std_error: Vec<f64>,
}

impl ExposureTable {
    pub fn new(query_id: u64, rho: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        if rho.len() != lambda.len() {
            return Err(Error::invalid("rho and lambda must cover the same documents"));
        }
        if rho.iter().any(|r| r.is_nan() || *r < 0.0) {
            return Err(Error::invalid("propensities must be non-negative"));
        }
        let n = rho.len();
        Ok(ExposureTable {
            query_id,
            rho,
            lambda,
            rho_std_error: vec![0.0; n],
            lambda_std_error: vec![0.0; n],
        })
    }

    pub fn num_docs(&self) -> usize {
        self.rho.len()
    }
}

pub fn compute_exposure<R: Rng + ?Sized>(
    logging: &dyn Policy,
    policy1: &dyn Policy,
    policy2: &dyn Policy,
    query: &Query,
    theta: &[f64],
    mode: Mode,
    rng: &mut R,
) -> Result<ExposureTable> {
    let (rho, rho_se) = exposure(logging, query, theta, mode, rng)?;
    let (e1, se1) = exposure(policy1, query, theta, mode, rng)?;
    let (e2, se2) = exposure(policy2, query, theta, mode, rng)?;
    Ok(ExposureTable {
        query_id: query.id,
        rho,
        lambda: e1.iter().zip(&e2).map(|(a, b)| a - b).collect(),
        rho_std_error: rho_se,
        lambda_std_error: se1.iter().zip(&se2).map(|(a, b)| a.hypot(*b)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    One,
    Two,
}

pub fn ab_estimate(record: &InteractionRecord, arm: Arm, prob_1: f64) -> Result<f64> {
    if !(prob_1 > 0.0 && prob_1 < 1.0) {
        return Err(Error::invalid(format!(
            "assignment probability {prob_1} outside (0, 1)"
        )));
    }
    let weight = match arm {
        Arm::One => 1.0 / prob_1,
        Arm::Two => -1.0 / (1.0 - prob_1),
    };
    Ok(weight * record.num_clicks() as f64)
}

pub fn ips_estimate(record: &InteractionRecord, table: &ExposureTable) -> Result<f64> {
    let mut x = 0.0;
    for d in record.clicked_docs() {
        let rho = *table
            .rho
            .get(d)
            .ok_or_else(|| Error::invalid(format!("document {d} missing from exposure table")))?;
        if rho <= SUPPORT_EPSILON {
            return Err(Error::SupportViolation {
                query: record.query_id,
                doc: d,
            });
        }
        x += table.lambda[d] / rho;
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportReport {
    /// (query, doc) pairs that can be clicked and matter to the comparison
    /// but are never shown by the logging policy.
    pub violations: Vec<(u64, DocId)>,
    /// Largest propensity standard error seen; zero in exact mode.
    pub max_rho_std_error: f64,
}

impl SupportReport {
    pub fn is_satisfied(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Flags every document with nonzero ζ·λ and zero propensity. Negative λ
/// counts too: dropping such a document biases the estimate as much as
/// dropping a positive one.
pub fn check_support<R: Rng + ?Sized>(
    logging: &dyn Policy,
    policy1: &dyn Policy,
    policy2: &dyn Policy,
    dist: &QueryDistribution,
    model: &ClickModel,
    mode: Mode,
    rng: &mut R,
) -> Result<SupportReport> {
    let mut violations = Vec::new();
    let mut max_se: f64 = 0.0;
    for q in dist.queries() {
        let t = compute_exposure(logging, policy1, policy2, q, model.theta(), mode, rng)?;
        let zeta = model.zeta_for(q.id)?;
        for (d, z) in zeta.iter().enumerate().take(q.num_docs()) {
            if z * t.lambda[d] != 0.0 && t.rho[d] <= SUPPORT_EPSILON {
                violations.push((q.id, d));
            }
        }
        max_se = t.rho_std_error.iter().fold(max_se, |m, s| m.max(*s));
    }
    Ok(SupportReport {
        violations,
        max_rho_std_error: max_se,
    })
}

/// Running per-interaction estimates of one method on one ranker pair.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EstimateSeries {
    acc: Welford,
}

impl EstimateSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.acc.push(x);
    }

    pub fn merge(&mut self, other: &EstimateSeries) {
        self.acc.merge(&other.acc);
    }

    pub fn count(&self) -> u64 {
        self.acc.count()
    }

    pub fn mean(&self) -> f64 {
        self.acc.mean()
    }

    /// (1/N) Σ (truth − x_i)².
    pub fn mse(&self, truth: f64) -> f64 {
        if self.count() == 0 {
            return f64::NAN;
        }
        let bias = self.mean() - truth;
        self.acc.m2() / self.count() as f64 + bias * bias
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub binary_error: u8,
    pub absolute_error: f64,
    pub mse: f64,
}

pub fn metrics(series: &EstimateSeries, true_delta: f64) -> Result<Metrics> {
    if series.count() == 0 {
        return Err(Error::invalid("metrics need at least one estimate"));
    }
    let est = series.mean();
    Ok(Metrics {
        binary_error: u8::from(delta_bin(est) != delta_bin(true_delta)),
        absolute_error: (true_delta - est).abs(),
        mse: series.mse(true_delta),
    })
}
