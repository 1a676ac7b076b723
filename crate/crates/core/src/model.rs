//! Queries, rankings, the position-based click model and ground-truth CTR.

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;

use rand::Rng;

use crate::error::{Error, Result};
use crate::policy::{self, Policy};
use crate::stats::Welford;

/// Index of a document within its query's candidate list.
pub type DocId = usize;

/// Relevance grades run from 0 to this value inclusive.
pub const MAX_LABEL: u8 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: u64,
    /// One dense feature vector per candidate document; documents are
    /// identified by their position in this list.
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl Query {
    pub fn new(id: u64, features: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::invalid(format!("query {id} has no candidate documents")));
        }
        if features.len() != labels.len() {
            return Err(Error::invalid(format!(
                "query {id}: {} feature vectors but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let dim = features[0].len();
        if features.iter().any(|f| f.len() != dim) {
            return Err(Error::invalid(format!("query {id}: ragged feature vectors")));
        }
        if let Some(l) = labels.iter().find(|&&l| l > MAX_LABEL) {
            return Err(Error::invalid(format!("query {id}: label {l} outside 0..={MAX_LABEL}")));
        }
        Ok(Query { id, features, labels })
    }

    /// Query whose documents carry one-hot identity features; used for small
    /// hand-built instances where only document identity matters.
    pub fn one_hot(id: u64, num_docs: usize) -> Self {
        let features = (0..num_docs)
            .map(|i| (0..num_docs).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Query {
            id,
            features,
            labels: vec![0; num_docs],
        }
    }

    pub fn num_docs(&self) -> usize {
        self.features.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn contains(&self, doc: DocId) -> bool {
        doc < self.num_docs()
    }
}

/// An ordered list of distinct documents; its length is the number of
/// displayed positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ranking(Vec<DocId>);

impl Ranking {
    pub fn new(docs: Vec<DocId>) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::invalid("empty ranking"));
        }
        let mut seen = HashSet::with_capacity(docs.len());
        if let Some(d) = docs.iter().find(|d| !seen.insert(**d)) {
            return Err(Error::invalid(format!("document {d} appears twice in ranking")));
        }
        Ok(Ranking(docs))
    }

    pub(crate) fn from_vec_unchecked(docs: Vec<DocId>) -> Self {
        debug_assert!(!docs.is_empty());
        Ranking(docs)
    }

    pub fn docs(&self) -> &[DocId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Zero-based position of `doc`, if displayed.
    pub fn position(&self, doc: DocId) -> Option<usize> {
        self.0.iter().position(|&d| d == doc)
    }

    pub fn truncated(&self, k: usize) -> Ranking {
        Ranking(self.0[..k.min(self.0.len()).max(1)].to_vec())
    }

    pub fn validate_for(&self, query: &Query) -> Result<()> {
        match self.0.iter().find(|&&d| !query.contains(d)) {
            Some(d) => Err(Error::invalid(format!("unknown document {d} for query {}", query.id))),
            None => Ok(()),
        }
    }
}

/// Position-based click model: examination by rank, attraction per
/// (query, document).
#[derive(Debug, Clone, PartialEq)]
pub struct ClickModel {
    theta: Vec<f64>,
    zeta: BTreeMap<u64, Vec<f64>>,
}

impl ClickModel {
    /// `theta[r]` is the examination probability at zero-based rank `r`; ranks
    /// past the end of `theta` are never examined.
    pub fn new(theta: Vec<f64>, zeta: BTreeMap<u64, Vec<f64>>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::invalid("theta must cover at least one rank"));
        }
        let in_unit = |v: &f64| (0.0..=1.0).contains(v);
        if !theta.iter().all(in_unit) {
            return Err(Error::invalid("theta entries must lie in [0, 1]"));
        }
        for (q, z) in &zeta {
            if !z.iter().all(in_unit) {
                return Err(Error::invalid(format!("zeta entries of query {q} must lie in [0, 1]")));
            }
        }
        Ok(ClickModel { theta, zeta })
    }

    pub fn display_length(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Examination probability at zero-based `rank`.
    pub fn theta_at(&self, rank: usize) -> f64 {
        self.theta.get(rank).copied().unwrap_or(0.0)
    }

    pub fn zeta_for(&self, query: u64) -> Result<&[f64]> {
        self.zeta
            .get(&query)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("click model has no entry for query {query}")))
    }

    pub fn zeta(&self, query: u64, doc: DocId) -> Result<f64> {
        self.zeta_for(query)?
            .get(doc)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown document {doc} for query {query}")))
    }

    pub fn zeta_table(&self) -> &BTreeMap<u64, Vec<f64>> {
        &self.zeta
    }

    /// Same attraction table, different examination vector.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        ClickModel::new(theta, self.zeta.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryDistribution {
    queries: Vec<Query>,
    weights: Vec<f64>,
}

impl QueryDistribution {
    pub fn new(queries: Vec<Query>, weights: Vec<f64>) -> Result<Self> {
        if queries.is_empty() || queries.len() != weights.len() {
            return Err(Error::invalid("need one weight per query and at least one query"));
        }
        if weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(Error::invalid("query weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("query weights sum to {total}, not 1")));
        }
        Ok(QueryDistribution { queries, weights })
    }

    pub fn uniform(queries: Vec<Query>) -> Result<Self> {
        let n = queries.len();
        if n == 0 {
            return Err(Error::invalid("empty query distribution"));
        }
        let w = 1.0 / n as f64;
        let mut weights = vec![w; n];
        // absorb rounding so the sum is 1 within the invariant tolerance
        let drift = 1.0 - weights.iter().sum::<f64>();
        weights[n - 1] += drift;
        QueryDistribution::new(queries, weights)
    }

    pub fn single(query: Query) -> Self {
        QueryDistribution {
            queries: vec![query],
            weights: vec![1.0],
        }
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Query, f64)> {
        self.queries.iter().zip(self.weights.iter().copied())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &Query {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (q, w) in self.iter() {
            acc += w;
            if u < acc {
                return q;
            }
        }
        &self.queries[self.queries.len() - 1]
    }
}

/// One logged interaction: the query, the displayed ranking and per-position
/// clicks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionRecord {
    pub query_id: u64,
    pub ranking: Ranking,
    pub clicks: Vec<bool>,
}

impl InteractionRecord {
    pub fn new(query_id: u64, ranking: Ranking, clicks: Vec<bool>) -> Result<Self> {
        if clicks.len() != ranking.len() {
            return Err(Error::invalid(format!(
                "click pattern has {} entries for a ranking of length {}",
                clicks.len(),
                ranking.len()
            )));
        }
        Ok(InteractionRecord {
            query_id,
            ranking,
            clicks,
        })
    }

    pub fn clicked_docs(&self) -> impl Iterator<Item = DocId> + '_ {
        self.ranking
            .docs()
            .iter()
            .zip(&self.clicks)
            .filter(|(_, &c)| c)
            .map(|(&d, _)| d)
    }

    pub fn num_clicks(&self) -> usize {
        self.clicks.iter().filter(|&&c| c).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InteractionLog {
    records: Vec<InteractionRecord>,
}

impl InteractionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: InteractionRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[InteractionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, InteractionRecord> {
        self.records.iter()
    }

    /// One `qid<TAB>doc,doc,...<TAB>0,1,...` line per record.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let docs: Vec<String> = r.ranking.docs().iter().map(|d| d.to_string()).collect();
            let clicks: Vec<&str> = r.clicks.iter().map(|&c| if c { "1" } else { "0" }).collect();
            out.push_str(&format!("{}\t{}\t{}\n", r.query_id, docs.join(","), clicks.join(",")));
        }
        out
    }

    /// Reads the format written by [`InteractionLog::to_text`]; blank lines
    /// are skipped.
    pub fn parse<R: BufRead>(source: R) -> Result<Self> {
        let mut log = InteractionLog::new();
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(
                    lineno,
                    format!("expected 3 tab-separated fields, got {}", fields.len()),
                ));
            }
            let qid = fields[0]
                .trim()
                .parse::<u64>()
                .map_err(|e| Error::parse(lineno, format!("bad query id: {e}")))?;
            let docs = fields[1]
                .split(',')
                .map(|d| d.trim().parse::<DocId>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(lineno, format!("bad document id: {e}")))?;
            let clicks = fields[2]
                .split(',')
                .map(|c| match c.trim() {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(Error::parse(
                        lineno,
                        format!("click flag must be 0 or 1, got {other:?}"),
                    )),
                })
                .collect::<Result<Vec<_>>>()?;
            let ranking = Ranking::new(docs).map_err(|e| Error::parse(lineno, e.to_string()))?;
            let record =
                InteractionRecord::new(qid, ranking, clicks).map_err(|e| Error::parse(lineno, e.to_string()))?;
            log.push(record);
        }
        Ok(log)
    }
}

impl FromIterator<InteractionRecord> for InteractionLog {
    fn from_iter<I: IntoIterator<Item = InteractionRecord>>(iter: I) -> Self {
        InteractionLog {
            records: iter.into_iter().collect(),
        }
    }
}

/// How expectations over policies are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Sum over every ranking with nonzero probability.
    Exact,
    /// Monte-Carlo mean over the given number of sampled rankings.
    MonteCarlo { samples: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    /// Zero in exact mode.
    pub std_error: f64,
}

/// Expected number of clicks on a single displayed ranking.
pub fn expected_ctr_ranking(ranking: &Ranking, query: &Query, model: &ClickModel) -> Result<f64> {
    ranking.validate_for(query)?;
    let zeta = model.zeta_for(query.id)?;
    Ok(ranking
        .docs()
        .iter()
        .enumerate()
        .map(|(r, &d)| model.theta_at(r) * zeta[d])
        .sum())
}

/// Expected clicks per query under `policy`, displaying the model's top-k.
pub fn expected_ctr_policy<R: Rng + ?Sized>(
    policy: &dyn Policy,
    dist: &QueryDistribution,
    model: &ClickModel,
    mode: Mode,
    rng: &mut R,
) -> Result<Estimate> {
    let k = model.display_length();
    match mode {
        Mode::Exact => {
            let mut total = 0.0;
            for (query, w) in dist.iter() {
                for (ranking, p) in policy::enumerate_rankings(policy, query, k)? {
                    total += w * p * expected_ctr_ranking(&ranking, query, model)?;
                }
            }
            Ok(Estimate {
                value: total,
                std_error: 0.0,
            })
        }
        Mode::MonteCarlo { samples } => {
            if samples == 0 {
                return Err(Error::invalid("Monte-Carlo mode needs at least one sample"));
            }
            let bound: Vec<_> = dist.queries().iter().map(|q| policy.bind(q)).collect::<Result<_>>()?;
            let mut acc = Welford::new();
            let mut buf = Vec::new();
            for _ in 0..samples {
                let u: f64 = rng.random();
                let mut qi = dist.queries().len() - 1;
                let mut c = 0.0;
                for (i, w) in dist.weights().iter().enumerate() {
                    c += w;
                    if u < c {
                        qi = i;
                        break;
                    }
                }
                let ranking = policy::sample_bound(bound[qi].as_ref(), k, rng, &mut buf);
                acc.push(expected_ctr_ranking(&ranking, &dist.queries()[qi], model)?);
            }
            Ok(Estimate {
                value: acc.mean(),
                std_error: acc.std_error(),
            })
        }
    }
}

/// E[CTR(policy1)] - E[CTR(policy2)].
pub fn delta<R: Rng + ?Sized>(
    policy1: &dyn Policy,
    policy2: &dyn Policy,
    dist: &QueryDistribution,
    model: &ClickModel,
    mode: Mode,
    rng: &mut R,
) -> Result<Estimate> {
    let a = expected_ctr_policy(policy1, dist, model, mode, rng)?;
    let b = expected_ctr_policy(policy2, dist, model, mode, rng)?;
    Ok(Estimate {
        value: a.value - b.value,
        std_error: a.std_error.hypot(b.std_error),
    })
}

/// Sign of a CTR difference; exact ties map to 0.
pub fn delta_bin(delta: f64) -> i8 {
    if delta > 0.0 {
        1
    } else if delta < 0.0 {
        -1
    } else {
        0
    }
}
