use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::Rng;

use super::{approx_variance_gradient, ips_value, VarianceContext};
use crate::em::{em_fit, EmConfig, EmFit};
use crate::error::{Error, Result};
use crate::estimators::exposure;
use crate::model::{InteractionLog, Mode, Query, QueryDistribution};
use crate::policy::{is_enumerable, MixturePolicy, Policy, ScoreNetworkPolicy, DEFAULT_EPSILON};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Uniform share of the returned mixture policy.
    pub epsilon: f64,
    /// Query counts at which an online experiment refits the logging policy.
    pub update_schedule: Vec<u64>,
    /// Steps between Monte-Carlo propensity refreshes for queries too large
    /// to enumerate.
    pub rho_refresh: usize,
    pub rho_samples: usize,
    /// Largest candidate set the optimizer accepts.
    pub max_candidates: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            steps: 1_000,
            learning_rate: 1e-2,
            epsilon: DEFAULT_EPSILON,
            update_schedule: vec![1_000, 10_000, 100_000, 1_000_000],
            rho_refresh: 100,
            rho_samples: 1_000,
            max_candidates: 25,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::invalid("epsilon must lie in [0, 1]"));
        }
        if self.update_schedule.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("update schedule must be strictly increasing"));
        }
        if self.rho_refresh == 0 || self.rho_samples == 0 || self.max_candidates == 0 {
            return Err(Error::invalid(
                "refresh interval, sample count and candidate cap must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    /// Mean squared error of the step's sampled click patterns.
    pub variance: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: MixturePolicy<ScoreNetworkPolicy>,
    pub trace: Vec<TraceRow>,
}

/// Propensities of the policy being trained: exact for small queries,
/// otherwise a Monte-Carlo estimate reused for `rho_refresh` steps.
struct RhoCache {
    cached: HashMap<u64, (usize, Vec<f64>)>,
}

impl RhoCache {
    fn get<R: Rng + ?Sized>(
        &mut self,
        policy: &dyn Policy,
        query: &Query,
        theta: &[f64],
        step: usize,
        config: &OptimizerConfig,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if is_enumerable(query.num_docs(), theta.len()) {
            return Ok(exposure(policy, query, theta, Mode::Exact, rng)?.0);
        }
        let epoch = step / config.rho_refresh;
        if let Some((e, rho)) = self.cached.get(&query.id) {
            if *e == epoch {
                return Ok(rho.clone());
            }
        }
        let rho = exposure(
            policy,
            query,
            theta,
            Mode::MonteCarlo {
                samples: config.rho_samples,
            },
            rng,
        )?
        .0;
        self.cached.insert(query.id, (epoch, rho.clone()));
        Ok(rho)
    }
}

/// Plain gradient descent on the estimated variance, starting from
/// `policy` and sampling one query from `dist` per step.
pub fn train_policy<R: Rng + ?Sized>(
    mut policy: MixturePolicy<ScoreNetworkPolicy>,
    dist: &QueryDistribution,
    ctx: &VarianceContext,
    config: &OptimizerConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    config.validate()?;
    if let Some(q) = dist.queries().iter().find(|q| q.num_docs() > config.max_candidates) {
        return Err(Error::invalid(format!(
            "query {} has {} candidates, more than the cap of {}",
            q.id,
            q.num_docs(),
            config.max_candidates
        )));
    }
    let theta = ctx.model.theta();
    let mut cache = RhoCache { cached: HashMap::new() };
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let query = dist.sample(rng);
        let rho = cache.get(&policy, query, theta, step, config, rng)?;
        let est = approx_variance_gradient(&policy, ctx, query, &rho, rng)?;
        let norm = est.params.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::DegenerateTraining(format!("non-finite gradient at step {step}")));
        }
        let lr = config.learning_rate;
        policy
            .base
            .network
            .params_mut()
            .iter_mut()
            .zip(&est.params)
            .for_each(|(w, g)| *w -= lr * g);
        trace.push(TraceRow {
            step,
            variance: est.variance,
            grad_norm: norm,
        });
    }
    Ok(TrainOutcome { policy, trace })
}

/// Trains a freshly initialized network policy.
pub fn train_logging_policy<R: Rng + ?Sized>(
    dist: &QueryDistribution,
    ctx: &VarianceContext,
    config: &OptimizerConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    let dim = dist.queries()[0].feature_dim();
    let init = MixturePolicy::new(ScoreNetworkPolicy::new(dim, rng), config.epsilon)?;
    train_policy(init, dist, ctx, config, rng)
}

/// Mean examination of each logged document under `theta`, per query, with
/// the logged displays standing in for the unknown logging policy.
pub fn empirical_propensities(
    log: &InteractionLog,
    queries: &[Query],
    theta: &[f64],
) -> Result<BTreeMap<u64, Vec<f64>>> {
    let sizes: HashMap<u64, usize> = queries.iter().map(|q| (q.id, q.num_docs())).collect();
    let mut sums: BTreeMap<u64, (Vec<f64>, f64)> = BTreeMap::new();
    for rec in log.iter() {
        let n = *sizes
            .get(&rec.query_id)
            .ok_or_else(|| Error::invalid(format!("logged query {} is not in the dataset", rec.query_id)))?;
        let entry = sums.entry(rec.query_id).or_insert_with(|| (vec![0.0; n], 0.0));
        for (k, &d) in rec.ranking.docs().iter().enumerate() {
            if d >= n {
                return Err(Error::invalid(format!(
                    "logged document {d} outside query {}",
                    rec.query_id
                )));
            }
            entry.0[d] += theta.get(k).copied().unwrap_or(0.0);
        }
        entry.1 += 1.0;
    }
    Ok(sums
        .into_iter()
        .map(|(q, (s, n))| (q, s.into_iter().map(|v| v / n).collect()))
        .collect())
}

#[derive(Debug, Clone)]
pub struct LogOptOutcome {
    pub policy: MixturePolicy<ScoreNetworkPolicy>,
    pub fit: EmFit,
    pub context: VarianceContext,
    pub trace: Vec<TraceRow>,
}

/// Fits the click model to `log`, estimates exposure differences and the
/// CTR difference under it, then trains a logging policy against that
/// estimated variance.
#[allow(clippy::too_many_arguments)]
pub fn optimize_logging_policy<R: Rng + ?Sized>(
    log: &InteractionLog,
    queries: &[Query],
    policy1: &dyn Policy,
    policy2: &dyn Policy,
    config: &OptimizerConfig,
    em_config: &EmConfig,
    samples: usize,
    rng: &mut R,
) -> Result<LogOptOutcome> {
    let fit = em_fit(log, em_config)?;
    let k = log.iter().map(|r| r.ranking.len()).max().unwrap_or(1);
    let model = fit.click_model(queries, k)?;
    let theta = model.theta().to_vec();
    let rho = empirical_propensities(log, queries, &theta)?;
    let by_id: HashMap<u64, &Query> = queries.iter().map(|q| (q.id, q)).collect();

    let mut lambda = BTreeMap::new();
    for &id in rho.keys() {
        let q = by_id[&id];
        let (e1, _) = exposure(policy1, q, &theta, Mode::Exact, rng)?;
        let (e2, _) = exposure(policy2, q, &theta, Mode::Exact, rng)?;
        lambda.insert(id, e1.iter().zip(&e2).map(|(a, b)| a - b).collect::<Vec<f64>>());
    }
    let mut total = 0.0;
    let mut counts: BTreeMap<u64, f64> = BTreeMap::new();
    for rec in log.iter() {
        total += ips_value(
            rec.query_id,
            rec.ranking.docs(),
            &rec.clicks,
            &lambda[&rec.query_id],
            &rho[&rec.query_id],
        )?;
        *counts.entry(rec.query_id).or_default() += 1.0;
    }
    let n = log.len() as f64;
    let delta_hat = total / n;
    let dist = QueryDistribution::new(
        counts.keys().map(|id| by_id[id].clone()).collect(),
        counts.values().map(|c| c / n).collect(),
    )?;
    let context = VarianceContext::new(delta_hat, model, lambda)?.with_samples(samples)?;
    let out = train_logging_policy(&dist, &context, config, rng)?;
    Ok(LogOptOutcome {
        policy: out.policy,
        fit,
        context,
        trace: out.trace,
    })
}

pub fn write_trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("step,variance,grad_norm\n");
    for row in trace {
        let _ = writeln!(out, "{},{:.6e},{:.6e}", row.step, row.variance, row.grad_norm);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logopt::exact_variance;
    use crate::model::ClickModel;
    use crate::policy::UniformPolicy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_doc() -> (QueryDistribution, VarianceContext) {
        let q = Query::one_hot(1, 2);
        let model = ClickModel::new(vec![1.0, 0.5], BTreeMap::from([(1, vec![1.0, 0.0])])).unwrap();
        let ctx = VarianceContext::new(0.5, model, BTreeMap::from([(1, vec![0.5, -0.5])])).unwrap();
        (QueryDistribution::single(q), ctx)
    }

    #[test]
    fn training_reduces_two_doc_variance() {
        let (dist, ctx) = two_doc();
        let q = &dist.queries()[0];
        let config = OptimizerConfig {
            steps: 500,
            ..Default::default()
        };
        let out = train_logging_policy(&dist, &ctx, &config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let uniform = exact_variance(&UniformPolicy, &ctx, q).unwrap();
        assert!(exact_variance(&out.policy, &ctx, q).unwrap() < 0.5 * uniform);
        assert_eq!(out.trace.len(), 500);
    }

    #[test]
    fn identical_rankers_stay_at_zero() {
        let (dist, ctx) = two_doc();
        let ctx = VarianceContext::new(0.0, ctx.model, BTreeMap::from([(1, vec![0.0, 0.0])])).unwrap();
        let config = OptimizerConfig {
            steps: 50,
            ..Default::default()
        };
        let out = train_logging_policy(&dist, &ctx, &config, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(out.trace.iter().all(|r| r.variance == 0.0 && r.grad_norm == 0.0));
        assert_eq!(exact_variance(&out.policy, &ctx, &dist.queries()[0]).unwrap(), 0.0);
    }

    #[test]
    fn seeded_training_is_deterministic() {
        let (dist, ctx) = two_doc();
        let config = OptimizerConfig {
            steps: 40,
            ..Default::default()
        };
        let a = train_logging_policy(&dist, &ctx, &config, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = train_logging_policy(&dist, &ctx, &config, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a.policy.base.network.params(), b.policy.base.network.params());
    }

    #[test]
    fn config_validation() {
        let bad = OptimizerConfig {
            update_schedule: vec![10, 10],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn trace_csv_shape() {
        let csv = write_trace_csv(&[TraceRow {
            step: 0,
            variance: 0.25,
            grad_norm: 1.5,
        }]);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("step,variance,grad_norm\n0,"));
    }
}
