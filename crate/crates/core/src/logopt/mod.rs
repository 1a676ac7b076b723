//! Variance of the IPS estimator as a function of the logging policy, its
//! gradients, and the training loop that minimizes it.

mod train;

use std::collections::BTreeMap;

use rand::Rng;

pub use train::{
    empirical_propensities, optimize_logging_policy, train_logging_policy, train_policy, write_trace_csv,
    LogOptOutcome, OptimizerConfig, TraceRow, TrainOutcome,
};

use crate::clicks::{click_probs, enumerate_click_patterns};
use crate::error::{Error, Result};
use crate::estimators::SUPPORT_EPSILON;
use crate::model::{ClickModel, DocId, Query, QueryDistribution, Ranking};
use crate::policy::{
    draw, enumerate_rankings, softmax_log_placement_grad, softmax_placement, DifferentiablePolicy, Policy,
};

pub const DEFAULT_GRADIENT_SAMPLES: usize = 32;

/// Everything the variance objective needs besides the logging policy.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceContext {
    /// CTR difference the per-interaction estimates are measured against.
    pub delta: f64,
    /// Examination and attraction used to simulate clicks.
    pub model: ClickModel,
    /// Exposure difference between the compared rankers, per query.
    pub lambda: BTreeMap<u64, Vec<f64>>,
    /// Rankings sampled per Monte-Carlo gradient.
    pub samples: usize,
    /// Centre score-function terms on leave-one-out means.
    pub baseline: bool,
    /// Average over every click pattern of a sampled ranking instead of
    /// drawing one.
    pub exact_clicks: bool,
}

impl VarianceContext {
    pub fn new(delta: f64, model: ClickModel, lambda: BTreeMap<u64, Vec<f64>>) -> Result<Self> {
        if !delta.is_finite() {
            return Err(Error::invalid("delta must be finite"));
        }
        for (q, l) in &lambda {
            if !l.iter().all(|v| (-1.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("lambda of query {q} outside [-1, 1]")));
            }
        }
        Ok(VarianceContext {
            delta,
            model,
            lambda,
            samples: DEFAULT_GRADIENT_SAMPLES,
            baseline: true,
            exact_clicks: true,
        })
    }

    pub fn with_samples(mut self, samples: usize) -> Result<Self> {
        if samples == 0 {
            return Err(Error::invalid("need at least one gradient sample"));
        }
        self.samples = samples;
        Ok(self)
    }

    pub fn lambda_for(&self, query: &Query) -> Result<&[f64]> {
        let l = self
            .lambda
            .get(&query.id)
            .ok_or_else(|| Error::invalid(format!("no exposure difference for query {}", query.id)))?;
        if l.len() != query.num_docs() {
            return Err(Error::invalid(format!(
                "exposure difference of query {} covers {} of {} documents",
                query.id,
                l.len(),
                query.num_docs()
            )));
        }
        Ok(l)
    }
}

/// IPS estimate of one click pattern; clicks on documents with no exposure
/// difference contribute nothing whatever their propensity.
fn ips_value(query: u64, docs: &[DocId], clicks: &[bool], lambda: &[f64], rho: &[f64]) -> Result<f64> {
    let mut x = 0.0;
    for (&d, _) in docs.iter().zip(clicks).filter(|(_, &c)| c) {
        if lambda[d] == 0.0 {
            continue;
        }
        if rho[d] <= SUPPORT_EPSILON {
            return Err(Error::SupportViolation { query, doc: d });
        }
        x += lambda[d] / rho[d];
    }
    Ok(x)
}

fn propensities(rankings: &[(Ranking, f64)], theta: &[f64], n: usize) -> Vec<f64> {
    let mut rho = vec![0.0; n];
    for (r, p) in rankings {
        for (k, &d) in r.docs().iter().enumerate() {
            rho[d] += p * theta[k];
        }
    }
    rho
}

/// Σ_c P(c|q) (Δ − Σ_{clicked} λ/ρ)² with ρ computed exactly under `policy`.
pub fn exact_variance(policy: &dyn Policy, ctx: &VarianceContext, query: &Query) -> Result<f64> {
    let theta = ctx.model.theta();
    let lambda = ctx.lambda_for(query)?;
    let rankings = enumerate_rankings(policy, query, theta.len())?;
    let rho = propensities(&rankings, theta, query.num_docs());
    let mut v = 0.0;
    for (r, p) in &rankings {
        for (pattern, pc) in enumerate_click_patterns(r, query, &ctx.model)? {
            let e = ctx.delta - ips_value(query.id, r.docs(), &pattern, lambda, &rho)?;
            v += p * pc * e * e;
        }
    }
    Ok(v)
}

/// Query-weighted exact variance.
pub fn exact_policy_variance(policy: &dyn Policy, ctx: &VarianceContext, dist: &QueryDistribution) -> Result<f64> {
    dist.iter().map(|(q, w)| Ok(w * exact_variance(policy, ctx, q)?)).sum()
}

/// Placement state while walking down one ranking.
struct Walker {
    scores: Vec<f64>,
    epsilon: f64,
    placed: Vec<bool>,
    soft: Vec<f64>,
    scratch: Vec<f64>,
    left: usize,
}

impl Walker {
    fn new(scores: Vec<f64>, epsilon: f64) -> Self {
        let n = scores.len();
        Walker {
            scores,
            epsilon,
            placed: vec![false; n],
            soft: vec![0.0; n],
            scratch: vec![0.0; n],
            left: n,
        }
    }

    fn reset(&mut self) {
        self.placed.iter_mut().for_each(|p| *p = false);
        self.left = self.placed.len();
    }

    /// Pure softmax over unplaced documents into `soft`.
    fn refresh(&mut self) {
        softmax_placement(&self.scores, &self.placed, 0.0, &mut self.soft);
    }

    fn mixed(&self, d: DocId) -> f64 {
        (1.0 - self.epsilon) * self.soft[d] + self.epsilon / self.left as f64
    }

    /// Adds d log π(doc | prefix) / d scores to `acc`, then places `doc`.
    fn place(&mut self, doc: DocId, acc: &mut [f64]) {
        softmax_log_placement_grad(&self.soft, &self.placed, self.epsilon, doc, &mut self.scratch);
        acc.iter_mut().zip(&self.scratch).for_each(|(a, g)| *a += g);
        self.placed[doc] = true;
        self.left -= 1;
    }
}

fn check_network(policy: &dyn DifferentiablePolicy, query: &Query) -> Result<Vec<f64>> {
    let net = policy.network();
    if net.input_dim() != query.feature_dim() {
        return Err(Error::invalid(format!(
            "network expects {} features, query {} has {}",
            net.input_dim(),
            query.id,
            query.feature_dim()
        )));
    }
    Ok(net.scores(&query.features))
}

/// Exact gradient of [`exact_variance`] with respect to the network
/// parameters, by enumeration.
pub fn exact_variance_gradient(
    policy: &dyn DifferentiablePolicy,
    ctx: &VarianceContext,
    query: &Query,
) -> Result<Vec<f64>> {
    let grad = exact_score_gradient(policy, ctx, query)?;
    Ok(policy.network().backprop(&query.features, &grad))
}

/// Exact gradient of [`exact_variance`] with respect to the document scores.
pub fn exact_score_gradient(
    policy: &dyn DifferentiablePolicy,
    ctx: &VarianceContext,
    query: &Query,
) -> Result<Vec<f64>> {
    let scores = check_network(policy, query)?;
    let theta = ctx.model.theta();
    let lambda = ctx.lambda_for(query)?;
    let n = query.num_docs();
    let rankings = enumerate_rankings(policy, query, theta.len())?;
    let rho = propensities(&rankings, theta, n);

    let mut sq_err = Vec::with_capacity(rankings.len());
    let mut w = vec![0.0; n];
    for (r, p) in &rankings {
        let mut ve = 0.0;
        for (pattern, pc) in enumerate_click_patterns(r, query, &ctx.model)? {
            let e = ctx.delta - ips_value(query.id, r.docs(), &pattern, lambda, &rho)?;
            ve += pc * e * e;
            for (&d, _) in r.docs().iter().zip(&pattern).filter(|(_, &c)| c) {
                if lambda[d] != 0.0 {
                    w[d] += p * pc * 2.0 * e * lambda[d] / (rho[d] * rho[d]);
                }
            }
        }
        sq_err.push(ve);
    }

    let mut walker = Walker::new(scores, policy.epsilon());
    let mut grad = vec![0.0; n];
    let mut dlog = vec![0.0; n];
    for ((r, p), ve) in rankings.iter().zip(sq_err) {
        walker.reset();
        dlog.iter_mut().for_each(|v| *v = 0.0);
        let mut coeff = ve;
        for (k, &d) in r.docs().iter().enumerate() {
            walker.refresh();
            walker.place(d, &mut dlog);
            coeff += theta[k] * w[d];
        }
        grad.iter_mut().zip(&dlog).for_each(|(g, l)| *g += p * coeff * l);
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    /// Gradient with respect to the network parameters.
    pub params: Vec<f64>,
    /// Gradient with respect to the per-document scores.
    pub scores: Vec<f64>,
    /// Mean squared error of the sampled click patterns.
    pub variance: f64,
}

/// Monte-Carlo estimate of the variance gradient for one query: samples
/// `ctx.samples` rankings from the policy and one click pattern on each, then
/// averages the frequency term (squared error times the ranking's score
/// function) and the error term (chain rule through the propensities, whose
/// gradient is itself estimated from the same samples).
pub fn approx_variance_gradient<R: Rng + ?Sized>(
    policy: &dyn DifferentiablePolicy,
    ctx: &VarianceContext,
    query: &Query,
    rho: &[f64],
    rng: &mut R,
) -> Result<GradientEstimate> {
    let scores = check_network(policy, query)?;
    let n = query.num_docs();
    if rho.len() != n {
        return Err(Error::invalid("propensities must cover every document"));
    }
    let theta = ctx.model.theta();
    let lambda = ctx.lambda_for(query)?;
    let len = theta.len().min(n);
    let m = ctx.samples;
    let mut walker = Walker::new(scores, policy.epsilon());

    let mut samples: Vec<(Vec<DocId>, f64)> = Vec::with_capacity(m);
    let mut w = vec![0.0; n];
    let mut sq = 0.0;
    let mut probs = vec![0.0; n];
    for _ in 0..m {
        walker.reset();
        let mut docs = Vec::with_capacity(len);
        for _ in 0..len {
            walker.refresh();
            for (d, p) in probs.iter_mut().enumerate() {
                *p = if walker.placed[d] { 0.0 } else { walker.mixed(d) };
            }
            let d = draw(&probs, &walker.placed, rng);
            walker.placed[d] = true;
            walker.left -= 1;
            docs.push(d);
        }
        let ranking = Ranking::from_vec_unchecked(docs);
        let patterns = if ctx.exact_clicks {
            enumerate_click_patterns(&ranking, query, &ctx.model)?
        } else {
            let clicks = click_probs(&ranking, query, &ctx.model)?
                .into_iter()
                .map(|p| p > 0.0 && rng.random::<f64>() < p)
                .collect();
            vec![(clicks, 1.0)]
        };
        let mut e2 = 0.0;
        for (clicks, pc) in &patterns {
            let e = ctx.delta - ips_value(query.id, ranking.docs(), clicks, lambda, rho)?;
            for (&d, _) in ranking.docs().iter().zip(clicks).filter(|(_, &c)| c) {
                if lambda[d] != 0.0 {
                    w[d] += pc * 2.0 * e * lambda[d] / (rho[d] * rho[d]);
                }
            }
            e2 += pc * e * e;
        }
        sq += e2;
        samples.push((ranking.docs().to_vec(), e2));
    }
    w.iter_mut().for_each(|v| *v /= m as f64);

    let eps = policy.epsilon();
    // Leave-one-out baselines: each sample's score-function weight is
    // centred on the mean weight of the other samples, which leaves the
    // expectation unchanged because score functions have mean zero.
    let (scale, mut b_total) = if ctx.baseline && m > 1 {
        (m as f64 / (m - 1) as f64, vec![0.0; len])
    } else {
        (1.0, Vec::new())
    };
    if !b_total.is_empty() {
        for (docs, _) in &samples {
            walker.reset();
            for (k, &doc) in docs.iter().enumerate() {
                walker.refresh();
                b_total[k] += (0..n)
                    .filter(|&d| !walker.placed[d])
                    .map(|d| w[d] * walker.mixed(d))
                    .sum::<f64>();
                walker.placed[doc] = true;
                walker.left -= 1;
            }
        }
    }
    let shift = |total: f64| {
        if m > 1 && ctx.baseline {
            total / (m - 1) as f64
        } else {
            0.0
        }
    };
    let sq_shift = shift(sq);
    let mut grad = vec![0.0; n];
    let mut cum = vec![0.0; n];
    for (docs, e2) in &samples {
        walker.reset();
        cum.iter_mut().for_each(|v| *v = 0.0);
        for (k, &doc) in docs.iter().enumerate() {
            walker.refresh();
            let mut a = 0.0;
            let mut b = 0.0;
            for d in (0..n).filter(|&d| !walker.placed[d]) {
                a += w[d] * walker.soft[d];
                b += w[d] * walker.mixed(d);
            }
            let b = b * scale - b_total.get(k).map_or(0.0, |&t| shift(t));
            for j in 0..n {
                if !walker.placed[j] {
                    grad[j] += theta[k] * (1.0 - eps) * walker.soft[j] * (w[j] - a);
                }
                grad[j] += theta[k] * b * cum[j];
            }
            walker.place(doc, &mut cum);
        }
        let weight = e2 * scale - sq_shift;
        grad.iter_mut().zip(&cum).for_each(|(g, l)| *g += weight * l);
    }
    grad.iter_mut().for_each(|g| *g /= m as f64);
    Ok(GradientEstimate {
        params: policy.network().backprop(&query.features, &grad),
        scores: grad,
        variance: sq / m as f64,
    })
}
