//! Ranking policies as sequential placement distributions.
//!
//! A policy places one document per rank; the probability of the next
//! placement depends only on the documents already placed. Everything else
//! (ranking probabilities, sampling, enumeration) is derived from that single
//! primitive.

mod network;

use std::collections::BTreeMap;

use rand::Rng;

use crate::dataset::LinearRanker;
use crate::error::{Error, Result};
use crate::model::{DocId, Query, Ranking};

pub use network::{
    placement_logprob_grad, softmax_log_placement_grad, softmax_placement, softmax_placement_grad,
    DifferentiablePolicy, ScoreNetwork, ScoreNetworkPolicy, HIDDEN_UNITS,
};

/// Largest number of rankings exact enumeration will produce (6! permutations).
pub const ENUMERATION_CAP: usize = 720;

/// Mixture weight of the uniform component in exploration mixtures.
pub const DEFAULT_EPSILON: f64 = 0.1;

pub trait Policy: Send + Sync {
    /// Specializes the policy to one query, caching per-query state such as
    /// document scores.
    fn bind<'a>(&'a self, query: &'a Query) -> Result<Box<dyn BoundPolicy + 'a>>;
}

pub trait BoundPolicy {
    fn num_docs(&self) -> usize;

    /// Writes the probability of placing each document next. `placed[d]` is
    /// true for documents in `prefix`; their entries must be 0.
    fn placement_probs(&self, prefix: &[DocId], placed: &[bool], out: &mut [f64]);
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn bind<'a>(&'a self, query: &'a Query) -> Result<Box<dyn BoundPolicy + 'a>> {
        (**self).bind(query)
    }
}

impl<P: Policy + ?Sized> Policy for std::sync::Arc<P> {
    fn bind<'a>(&'a self, query: &'a Query) -> Result<Box<dyn BoundPolicy + 'a>> {
        (**self).bind(query)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UniformPolicy;

struct BoundUniform(usize);

impl BoundPolicy for BoundUniform {
    fn num_docs(&self) -> usize {
        self.0
    }

    fn placement_probs(&self, prefix: &[DocId], placed: &[bool], out: &mut [f64]) {
        let p = 1.0 / (self.0 - prefix.len()) as f64;
        for (o, &taken) in out.iter_mut().zip(placed) {
            *o = if taken { 0.0 } else { p };
        }
    }
}

impl Policy for UniformPolicy {
    fn bind<'a>(&'a self, query: &'a Query) -> Result<Box<dyn BoundPolicy + 'a>> {
        Ok(Box::new(BoundUniform(query.num_docs())))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Source {
    Linear(LinearRanker),
    Fixed(BTreeMap<u64, Vec<DocId>>),
}

/// A ranker that always displays the same ordering for a query.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicPolicy {
    source: Source,
}

impl DeterministicPolicy {
    /// Orders documents by descending linear score, ties by ascending id.
    pub fn linear(ranker: LinearRanker) -> Self {
        DeterministicPolicy {
            source: Source::Linear(ranker),
        }
    }

    /// Explicit full orderings per query id.
    pub fn fixed<I: IntoIterator<Item = (u64, Vec<DocId>)>>(orders: I) -> Self {
        DeterministicPolicy {
            source: Source::Fixed(orders.into_iter().collect()),
        }
    }

    /// The complete ordering of the query's documents.
    pub fn order_for(&self, query: &Query) -> Result<Vec<DocId>> {
        match &self.source {
            Source::Linear(r) => {
                if r.dim() != query.feature_dim() {
                    return Err(Error::invalid(format!(
                        "ranker dimension {} does not match feature dimension {}",
                        r.dim(),
                        query.feature_dim()
                    )));
                }
                let scores: Vec<f64> = query.features.iter().map(|x| r.score(x)).collect();
                let mut order: Vec<DocId> = (0..query.num_docs()).collect();
                order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
                Ok(order)
            }
            Source::Fixed(map) => {
                let order = map
                    .get(&query.id)
                    .ok_or_else(|| Error::invalid(format!("no ordering for query {}", query.id)))?;
                let n = query.num_docs();
                let mut seen = vec![false; n];
                let complete =
                    order.len() == n && order.iter().all(|&d| d < n && !std::mem::replace(&mut seen[d], true));
                if !complete {
                    return Err(Error::invalid(format!(
                        "ordering for query {} is not a permutation of its {n} documents",
                        query.id
                    )));
                }
                Ok(order.clone())
            }
        }
    }

    pub fn ranking_for(&self, query: &Query, k: usize) -> Result<Ranking> {
        let order = self.order_for(query)?;
        Ok(Ranking::from_vec_unchecked(order).truncated(k))
    }
}

struct BoundDeterministic(Vec<DocId>);

impl BoundPolicy for BoundDeterministic {
    fn num_docs(&self) -> usize {
        self.0.len()
    }

    fn placement_probs(&self, _prefix: &[DocId], placed: &[bool], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        if let Some(&next) = self.0.iter().find(|&&d| !placed[d]) {
            out[next] = 1.0;
        }
    }
}

impl Policy for DeterministicPolicy {
    fn bind<'a>(&'a self, query: &'a Query) -> Result<Box<dyn BoundPolicy + 'a>> {
        Ok(Box::new(BoundDeterministic(self.order_for(query)?)))
    }
}

/// `(1 - epsilon) * base + epsilon * uniform`, applied at every placement.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePolicy<P> {
    pub base: P,
    epsilon: f64,
}

impl<P: Policy> MixturePolicy<P> {
    pub fn new(base: P, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::invalid(format!("mixture epsilon {epsilon} outside [0, 1]")));
        }
        Ok(MixturePolicy { base, epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

struct BoundMixture<'a> {
    base: Box<dyn BoundPolicy + 'a>,
    epsilon: f64,
}

impl BoundPolicy for BoundMixture<'_> {
    fn num_docs(&self) -> usize {
        self.base.num_docs()
    }

    fn placement_probs(&self, prefix: &[DocId], placed: &[bool], out: &mut [f64]) {
        self.base.placement_probs(prefix, placed, out);
        let floor = self.epsilon / (self.num_docs() - prefix.len()) as f64;
        for (o, &taken) in out.iter_mut().zip(placed) {
            if !taken {
                *o = (1.0 - self.epsilon) * *o + floor;
            }
        }
    }
}

impl<P: Policy> Policy for MixturePolicy<P> {
    fn bind<'a>(&'a self, query: &'a Query) -> Result<Box<dyn BoundPolicy + 'a>> {
        Ok(Box::new(BoundMixture {
            base: self.base.bind(query)?,
            epsilon: self.epsilon,
        }))
    }
}

fn check_prefix(query: &Query, prefix: &[DocId]) -> Result<Vec<bool>> {
    let mut placed = vec![false; query.num_docs()];
    for &d in prefix {
        if !query.contains(d) {
            return Err(Error::invalid(format!("unknown document {d} for query {}", query.id)));
        }
        if std::mem::replace(&mut placed[d], true) {
            return Err(Error::invalid(format!("document {d} repeated in prefix")));
        }
    }
    if prefix.len() >= query.num_docs() {
        return Err(Error::invalid("prefix already places every document"));
    }
    Ok(placed)
}

/// Probability that `doc` is placed directly after `prefix`.
pub fn placement_prob(policy: &dyn Policy, query: &Query, prefix: &[DocId], doc: DocId) -> Result<f64> {
    let placed = check_prefix(query, prefix)?;
    if !query.contains(doc) {
        return Err(Error::invalid(format!("unknown document {doc} for query {}", query.id)));
    }
    if placed[doc] {
        return Err(Error::invalid(format!("document {doc} is already placed")));
    }
    let bound = policy.bind(query)?;
    let mut out = vec![0.0; query.num_docs()];
    bound.placement_probs(prefix, &placed, &mut out);
    Ok(out[doc])
}

/// Product of the placement probabilities along `ranking`.
pub fn ranking_prob(policy: &dyn Policy, query: &Query, ranking: &Ranking) -> Result<f64> {
    ranking.validate_for(query)?;
    let bound = policy.bind(query)?;
    Ok(ranking_prob_bound(bound.as_ref(), ranking.docs()))
}

pub(crate) fn ranking_prob_bound(bound: &dyn BoundPolicy, docs: &[DocId]) -> f64 {
    let n = bound.num_docs();
    let mut placed = vec![false; n];
    let mut out = vec![0.0; n];
    let mut p = 1.0;
    for (x, &d) in docs.iter().enumerate() {
        bound.placement_probs(&docs[..x], &placed, &mut out);
        p *= out[d];
        if p == 0.0 {
            break;
        }
        placed[d] = true;
    }
    p
}

/// Draws one document from `probs` restricted to unplaced entries.
pub(crate) fn draw<R: Rng + ?Sized>(probs: &[f64], placed: &[bool], rng: &mut R) -> DocId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (d, (&p, &taken)) in probs.iter().zip(placed).enumerate() {
        if taken || p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(d);
        if u < acc {
            return d;
        }
    }
    // rounding left u above the accumulated mass
    last.or_else(|| placed.iter().position(|t| !t))
        .expect("no unplaced document left to draw")
}

pub fn sample_ranking<R: Rng + ?Sized>(policy: &dyn Policy, query: &Query, k: usize, rng: &mut R) -> Result<Ranking> {
    if k == 0 {
        return Err(Error::invalid("display length must be at least 1"));
    }
    let bound = policy.bind(query)?;
    Ok(sample_bound(bound.as_ref(), k, rng, &mut Vec::new()))
}

/// Samples a ranking of length `min(k, n)` from an already bound policy.
pub fn sample_bound<R: Rng + ?Sized>(
    bound: &dyn BoundPolicy,
    k: usize,
    rng: &mut R,
    scratch: &mut Vec<f64>,
) -> Ranking {
    let n = bound.num_docs();
    let len = k.min(n);
    scratch.clear();
    scratch.resize(n, 0.0);
    let mut placed = vec![false; n];
    let mut docs = Vec::with_capacity(len);
    for _ in 0..len {
        bound.placement_probs(&docs, &placed, scratch);
        let d = draw(scratch, &placed, rng);
        placed[d] = true;
        docs.push(d);
    }
    Ranking::from_vec_unchecked(docs)
}

/// Whether every ranking of length `min(k, n)` over `n` documents fits
/// under [`ENUMERATION_CAP`].
pub fn is_enumerable(n: usize, k: usize) -> bool {
    let mut count = 1usize;
    for i in 0..k.min(n) {
        count = count.saturating_mul(n - i);
    }
    count <= ENUMERATION_CAP
}

/// Every ranking of length `min(k, n)` with nonzero probability.
///
/// Fails once more than [`ENUMERATION_CAP`] rankings would be produced.
pub fn enumerate_rankings(policy: &dyn Policy, query: &Query, k: usize) -> Result<Vec<(Ranking, f64)>> {
    let bound = policy.bind(query)?;
    enumerate_bound(bound.as_ref(), k)
}

pub fn enumerate_bound(bound: &dyn BoundPolicy, k: usize) -> Result<Vec<(Ranking, f64)>> {
    if k == 0 {
        return Err(Error::invalid("display length must be at least 1"));
    }
    let n = bound.num_docs();
    let len = k.min(n);
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(len);
    let mut placed = vec![false; n];
    descend(bound, len, &mut prefix, &mut placed, 1.0, &mut out)?;
    Ok(out)
}

fn descend(
    bound: &dyn BoundPolicy,
    len: usize,
    prefix: &mut Vec<DocId>,
    placed: &mut [bool],
    p: f64,
    out: &mut Vec<(Ranking, f64)>,
) -> Result<()> {
    if prefix.len() == len {
        if out.len() == ENUMERATION_CAP {
            return Err(Error::EnumerationCap(format!(
                "more than {ENUMERATION_CAP} rankings with nonzero probability"
            )));
        }
        out.push((Ranking::from_vec_unchecked(prefix.clone()), p));
        return Ok(());
    }
    let mut probs = vec![0.0; placed.len()];
    bound.placement_probs(prefix, placed, &mut probs);
    for d in 0..probs.len() {
        if placed[d] || probs[d] <= 0.0 {
            continue;
        }
        prefix.push(d);
        placed[d] = true;
        descend(bound, len, prefix, placed, p * probs[d], out)?;
        placed[d] = false;
        prefix.pop();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn point_mass_and_uniform_placement() {
        let q = Query::one_hot(1, 3);
        let det = DeterministicPolicy::fixed([(1, vec![2, 0, 1])]);
        assert_eq!(placement_prob(&det, &q, &[], 2).unwrap(), 1.0);
        assert_eq!(placement_prob(&det, &q, &[2], 1).unwrap(), 0.0);
        assert!((placement_prob(&UniformPolicy, &q, &[], 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            placement_prob(&UniformPolicy, &q, &[1], 1),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn ranking_probabilities() {
        let q = Query::one_hot(1, 3);
        let det = DeterministicPolicy::fixed([(1, vec![2, 0, 1])]);
        let own = Ranking::new(vec![2, 0, 1]).unwrap();
        assert_eq!(ranking_prob(&det, &q, &own).unwrap(), 1.0);
        let any = Ranking::new(vec![1, 2, 0]).unwrap();
        assert!((ranking_prob(&UniformPolicy, &q, &any).unwrap() - 1.0 / 6.0).abs() < 1e-15);

        let q2 = Query::one_hot(1, 2);
        let det2 = DeterministicPolicy::fixed([(1, vec![0, 1])]);
        let mix = MixturePolicy::new(det2, 0.3).unwrap();
        let r = Ranking::new(vec![0, 1]).unwrap();
        assert!((ranking_prob(&mix, &q2, &r).unwrap() - 0.85).abs() < 1e-12);
    }

    #[test]
    fn deterministic_sampling_and_seed_reproducibility() {
        let q = Query::one_hot(1, 4);
        let det = DeterministicPolicy::fixed([(1, vec![3, 1, 0, 2])]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            assert_eq!(sample_ranking(&det, &q, 4, &mut rng).unwrap().docs(), &[3, 1, 0, 2]);
        }
        let a = sample_ranking(&UniformPolicy, &q, 3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_ranking(&UniformPolicy, &q, 3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let q = Query::one_hot(1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = BTreeMap::new();
        let n = 100_000;
        for _ in 0..n {
            *counts
                .entry(sample_ranking(&UniformPolicy, &q, 3, &mut rng).unwrap())
                .or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        for c in counts.values() {
            assert!((*c as f64 / n as f64 - 1.0 / 6.0).abs() < 0.01);
        }
    }

    #[test]
    fn linear_ties_break_by_doc_id() {
        let q = Query::new(1, vec![vec![1.0], vec![2.0], vec![2.0], vec![0.5]], vec![0; 4]).unwrap();
        let r = LinearRanker::new(vec![1.0], vec![true]).unwrap();
        assert_eq!(DeterministicPolicy::linear(r).order_for(&q).unwrap(), vec![1, 2, 0, 3]);
    }

    #[test]
    fn fixed_order_must_be_a_permutation() {
        let q = Query::one_hot(1, 3);
        assert!(DeterministicPolicy::fixed([(1, vec![0, 1])]).order_for(&q).is_err());
        assert!(DeterministicPolicy::fixed([(1, vec![0, 1, 1])]).order_for(&q).is_err());
        assert!(DeterministicPolicy::fixed([(2, vec![0, 1, 2])]).order_for(&q).is_err());
    }

    #[test]
    fn enumeration_counts_only_positive_branches() {
        let q = Query::one_hot(1, 10);
        let det = DeterministicPolicy::fixed([(1, (0..10).rev().collect())]);
        let all = enumerate_rankings(&det, &q, 5).unwrap();
        assert_eq!(all.len(), 1);
        assert!(matches!(
            enumerate_rankings(&UniformPolicy, &q, 5),
            Err(Error::EnumerationCap(_))
        ));
        let q6 = Query::one_hot(1, 6);
        assert_eq!(enumerate_rankings(&UniformPolicy, &q6, 6).unwrap().len(), 720);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn random_policy(seed: u64, n: usize, eps: f64) -> MixturePolicy<ScoreNetworkPolicy> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            MixturePolicy::new(ScoreNetworkPolicy::new(n, &mut rng), eps).unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn full_rankings_sum_to_one(seed in 0u64..10_000, n in 1usize..=5, eps in 0.0f64..1.0) {
                let q = Query::one_hot(1, n);
                let p = random_policy(seed, n, eps);
                let total: f64 = enumerate_rankings(&p, &q, n).unwrap().iter().map(|(_, p)| p).sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
            }

            #[test]
            fn mixture_floor_holds(seed in 0u64..10_000, n in 2usize..=8, eps in 0.0f64..1.0, cut in 0usize..8) {
                let q = Query::one_hot(1, n);
                let p = random_policy(seed, n, eps);
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
                let prefix_len = cut % n;
                let prefix = sample_ranking(&p, &q, n, &mut rng).unwrap().docs()[..prefix_len].to_vec();
                let left = n - prefix_len;
                for d in (0..n).filter(|d| !prefix.contains(d)) {
                    let pr = placement_prob(&p, &q, &prefix, d).unwrap();
                    prop_assert!(pr >= eps / left as f64 - 1e-15);
                }
            }

            #[test]
            fn placement_probs_normalize(seed in 0u64..10_000, n in 1usize..=8, eps in 0.0f64..1.0) {
                let q = Query::one_hot(1, n);
                let p = random_policy(seed, n, eps);
                let bound = p.bind(&q).unwrap();
                let mut out = vec![0.0; n];
                let mut placed = vec![false; n];
                let mut prefix = Vec::new();
                for d in 0..n {
                    bound.placement_probs(&prefix, &placed, &mut out);
                    prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    placed[d] = true;
                    prefix.push(d);
                }
            }
        }
    }
}
