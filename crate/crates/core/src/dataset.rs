//! LETOR-style datasets, synthetic data and simple linear rankers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{Query, MAX_LABEL};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub queries: Vec<Query>,
    pub feature_dim: usize,
}

impl Dataset {
    pub fn new(queries: Vec<Query>) -> Result<Self> {
        let first = queries
            .first()
            .ok_or_else(|| Error::invalid("dataset has no queries"))?;
        let feature_dim = first.feature_dim();
        if let Some(q) = queries.iter().find(|q| q.feature_dim() != feature_dim) {
            return Err(Error::invalid(format!(
                "query {} has feature dimension {}, expected {feature_dim}",
                q.id,
                q.feature_dim()
            )));
        }
        Ok(Dataset { queries, feature_dim })
    }

    /// Drops queries with fewer than two documents; nothing can be compared on them.
    pub fn comparable(self) -> Result<Self> {
        Dataset::new(self.queries.into_iter().filter(|q| q.num_docs() >= 2).collect())
    }

    pub fn query(&self, id: u64) -> Option<&Query> {
        self.queries.iter().find(|q| q.id == id)
    }
}

type SparseDoc = (u8, BTreeMap<usize, f64>);

/// Parses `<label> qid:<int> <fid>:<float> ... [# comment]` lines. Feature ids
/// are 1-based; ids never mentioned on a line read as 0.
pub fn parse_letor<R: BufRead>(source: R) -> Result<Dataset> {
    let mut groups: Vec<(u64, Vec<SparseDoc>)> = Vec::new();
    let mut slot: BTreeMap<u64, usize> = BTreeMap::new();
    let mut dim = 0usize;
    for (i, line) in source.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut toks = body.split_whitespace();
        let label_tok = toks.next().expect("non-empty line has a token");
        let label: i64 = label_tok
            .parse()
            .or_else(|_| label_tok.parse::<f64>().map(|f| f as i64).map_err(|_| ()))
            .map_err(|_| Error::parse(lineno, format!("bad label `{label_tok}`")))?;
        let label = label.clamp(0, MAX_LABEL as i64) as u8;
        let qid_tok = toks.next().ok_or_else(|| Error::parse(lineno, "missing qid"))?;
        let qid: u64 = qid_tok
            .strip_prefix("qid:")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(lineno, format!("bad qid `{qid_tok}`")))?;
        let mut feats = BTreeMap::new();
        for tok in toks {
            let (fid, val) = tok
                .split_once(':')
                .ok_or_else(|| Error::parse(lineno, format!("bad feature `{tok}`")))?;
            let fid: usize = fid
                .parse()
                .ok()
                .filter(|&f| f >= 1)
                .ok_or_else(|| Error::parse(lineno, format!("bad feature id `{fid}`")))?;
            let val: f64 = val
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad feature value `{val}`")))?;
            dim = dim.max(fid);
            feats.insert(fid, val);
        }
        let idx = *slot.entry(qid).or_insert_with(|| {
            groups.push((qid, Vec::new()));
            groups.len() - 1
        });
        groups[idx].1.push((label, feats));
    }
    if groups.is_empty() {
        return Err(Error::invalid("no LETOR records in input"));
    }
    let dim = dim.max(1);
    let queries = groups
        .into_iter()
        .map(|(qid, docs)| {
            let labels = docs.iter().map(|(l, _)| *l).collect();
            let features = docs
                .iter()
                .map(|(_, f)| (1..=dim).map(|fid| f.get(&fid).copied().unwrap_or(0.0)).collect())
                .collect();
            Query::new(qid, features, labels)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(queries)
}

/// Writes every feature explicitly so parsing returns the same dataset.
pub fn write_letor(dataset: &Dataset) -> String {
    let mut out = String::new();
    for q in &dataset.queries {
        for (x, label) in q.features.iter().zip(&q.labels) {
            let _ = write!(out, "{label} qid:{}", q.id);
            for (j, v) in x.iter().enumerate() {
                let _ = write!(out, " {}:{v:?}", j + 1);
            }
            out.push('\n');
        }
    }
    out
}

/// Fractions of documents at or below each grade boundary (labels 0..=3).
const LABEL_CUTS: [f64; 4] = [0.30, 0.55, 0.75, 0.90];
const SYNTHETIC_NOISE: f64 = 0.5;

/// Standard-normal features; labels grade a noisy linear score at the 30th,
/// 55th, 75th and 90th percentiles across the whole dataset.
pub fn generate_synthetic<R: Rng + ?Sized>(
    num_queries: usize,
    docs_per_query: usize,
    feature_dim: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if num_queries == 0 || docs_per_query == 0 || feature_dim == 0 {
        return Err(Error::invalid("synthetic dataset sizes must be at least 1"));
    }
    let truth: Vec<f64> = (0..feature_dim).map(|_| StandardNormal.sample(rng)).collect();
    let noise = Normal::new(0.0, SYNTHETIC_NOISE).expect("valid normal");
    let mut features = Vec::with_capacity(num_queries);
    let mut scores = Vec::with_capacity(num_queries * docs_per_query);
    for _ in 0..num_queries {
        let docs: Vec<Vec<f64>> = (0..docs_per_query)
            .map(|_| (0..feature_dim).map(|_| StandardNormal.sample(rng)).collect())
            .collect();
        for x in &docs {
            let s: f64 = x.iter().zip(&truth).map(|(a, b)| a * b).sum();
            scores.push(s + noise.sample(rng));
        }
        features.push(docs);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let total = scores.len() as f64;
    let mut labels = vec![0u8; scores.len()];
    for (rank, &i) in order.iter().enumerate() {
        let frac = (rank as f64 + 0.5) / total;
        labels[i] = LABEL_CUTS.iter().filter(|&&c| frac >= c).count() as u8;
    }
    let queries = features
        .into_iter()
        .enumerate()
        .map(|(qi, docs)| {
            let l = labels[qi * docs_per_query..(qi + 1) * docs_per_query].to_vec();
            Query::new(qi as u64 + 1, docs, l)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(queries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearRanker {
    weights: Vec<f64>,
    mask: Vec<bool>,
}

impl LinearRanker {
    pub fn new(weights: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if weights.len() != mask.len() || weights.is_empty() {
            return Err(Error::invalid("weights and mask must have the same nonzero length"));
        }
        if weights.iter().zip(&mask).any(|(w, m)| !m && *w != 0.0) {
            return Err(Error::invalid("masked-out features must have zero weight"));
        }
        Ok(LinearRanker { weights, mask })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum()
    }

    /// `dim=<d>` then one `<index> <weight>` line per nonzero weight
    /// (0-based index).
    pub fn to_weights_file(&self) -> String {
        let mut out = format!("dim={}\n", self.dim());
        for (i, w) in self.weights.iter().enumerate().filter(|(_, w)| **w != 0.0) {
            let _ = writeln!(out, "{i} {w:?}");
        }
        out
    }

    /// The mask of a loaded ranker is its set of nonzero weights.
    pub fn from_weights_file(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or_else(|| Error::invalid("empty weights file"))?;
        let dim: usize = head
            .trim()
            .strip_prefix("dim=")
            .and_then(|s| s.parse().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::parse(1, "expected `dim=<int>`"))?;
        let mut weights = vec![0.0; dim];
        for (i, line) in lines {
            let mut toks = line.split_whitespace();
            let (Some(idx), Some(w), None) = (toks.next(), toks.next(), toks.next()) else {
                return Err(Error::parse(i + 1, "expected `<index> <float>`"));
            };
            let idx: usize = idx
                .parse()
                .ok()
                .filter(|&j| j < dim)
                .ok_or_else(|| Error::parse(i + 1, format!("bad index `{idx}`")))?;
            weights[idx] = w
                .parse()
                .map_err(|_| Error::parse(i + 1, format!("bad weight `{w}`")))?;
        }
        let mask = weights.iter().map(|w| *w != 0.0).collect();
        LinearRanker::new(weights, mask)
    }
}

pub const TRAINING_UPDATES: usize = 10_000;
pub const TRAINING_STEP: f64 = 0.01;

/// Pairwise hinge loss on label-ordered pairs, fitted by stochastic
/// subgradient steps over a random subset of queries and features.
pub fn train_linear_ranker<R: Rng + ?Sized>(
    dataset: &Dataset,
    num_train_queries: usize,
    feature_fraction: f64,
    rng: &mut R,
) -> Result<LinearRanker> {
    if !(feature_fraction > 0.0 && feature_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "feature fraction {feature_fraction} outside (0, 1]"
        )));
    }
    if num_train_queries == 0 {
        return Err(Error::invalid("need at least one training query"));
    }
    let dim = dataset.feature_dim;
    let n_q = num_train_queries.min(dataset.queries.len());
    let picked = index::sample(rng, dataset.queries.len(), n_q).into_vec();
    let n_feat = ((dim as f64 * feature_fraction).ceil() as usize).clamp(1, dim);
    let mut feats: Vec<usize> = (0..dim).collect();
    feats.shuffle(rng);
    let mut mask = vec![false; dim];
    feats[..n_feat].iter().for_each(|&j| mask[j] = true);

    let mut pairs: Vec<(&[f64], &[f64])> = Vec::new();
    for &qi in &picked {
        let q = &dataset.queries[qi];
        for i in 0..q.num_docs() {
            for j in 0..q.num_docs() {
                if q.labels[i] > q.labels[j] {
                    pairs.push((&q.features[i], &q.features[j]));
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::DegenerateTraining(
            "no document pair with different labels among the training queries".into(),
        ));
    }
    let mut w = vec![0.0; dim];
    for _ in 0..TRAINING_UPDATES {
        let (better, worse) = pairs[rng.random_range(0..pairs.len())];
        let margin: f64 = (0..dim)
            .filter(|&j| mask[j])
            .map(|j| w[j] * (better[j] - worse[j]))
            .sum();
        if margin < 1.0 {
            for j in (0..dim).filter(|&j| mask[j]) {
                w[j] += TRAINING_STEP * (better[j] - worse[j]);
            }
        }
    }
    LinearRanker::new(w, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::DeterministicPolicy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn parse(s: &str) -> Result<Dataset> {
        parse_letor(s.as_bytes())
    }

    #[test]
    fn parses_single_line() {
        let d = parse("2 qid:7 1:0.5 3:-1.0\n").unwrap();
        assert_eq!(d.queries.len(), 1);
        let q = &d.queries[0];
        assert_eq!((q.id, q.labels.clone()), (7, vec![2]));
        assert_eq!(q.features[0], vec![0.5, 0.0, -1.0]);
    }

    #[test]
    fn malformed_label_reports_line() {
        assert!(matches!(parse("abc qid:7\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse("1 qid:1 1:0\n1 qid:x 1:0\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(parse("1 qid:1 0:3\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("\n# only a comment\n"), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn groups_by_qid_in_file_order_and_clamps_labels() {
        let d = parse("9 qid:7 1:1 # great doc\n0 qid:3 2:1\n-2 qid:7 1:2\n").unwrap();
        assert_eq!(d.queries.iter().map(|q| q.id).collect::<Vec<_>>(), vec![7, 3]);
        assert_eq!(d.queries[0].labels, vec![4, 0]);
        assert_eq!(d.feature_dim, 2);
    }

    #[test]
    fn synthetic_shape_and_determinism() {
        let d = generate_synthetic(1, 3, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!((d.queries.len(), d.queries[0].num_docs(), d.feature_dim), (1, 3, 4));
        let a = generate_synthetic(5, 6, 3, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = generate_synthetic(5, 6, 3, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synthetic_label_histogram() {
        let d = generate_synthetic(50, 10, 8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut hist = [0usize; 5];
        d.queries
            .iter()
            .flat_map(|q| &q.labels)
            .for_each(|&l| hist[l as usize] += 1);
        let expected = [0.30, 0.25, 0.20, 0.15, 0.10];
        for (h, e) in hist.iter().zip(expected) {
            let frac = *h as f64 / 500.0;
            assert!((frac - e).abs() <= 0.1 * e, "histogram {hist:?}");
        }
    }

    #[test]
    fn trainer_orders_linearly_labelled_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let queries = (0..4)
            .map(|qi| {
                let labels: Vec<u8> = vec![0, 3, 1, 4, 2];
                let features = labels
                    .iter()
                    .map(|&l| vec![l as f64 + 0.1 * qi as f64, rng.random_range(-0.05..0.05)])
                    .collect();
                Query::new(qi, features, labels).unwrap()
            })
            .collect();
        let d = Dataset::new(queries).unwrap();
        let r = train_linear_ranker(&d, 4, 1.0, &mut rng).unwrap();
        let policy = DeterministicPolicy::linear(r);
        for q in &d.queries {
            let order = policy.order_for(q).unwrap();
            let labels: Vec<u8> = order.iter().map(|&i| q.labels[i]).collect();
            assert_eq!(labels, vec![4, 3, 2, 1, 0]);
        }
    }

    #[test]
    fn mask_size_and_masked_weights() {
        let d = generate_synthetic(20, 8, 7, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let r = train_linear_ranker(&d, 10, 0.5, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(r.mask().iter().filter(|m| **m).count(), 4);
        assert!(r.weights().iter().zip(r.mask()).all(|(w, m)| *m || *w == 0.0));
        let again = train_linear_ranker(&d, 10, 0.5, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn degenerate_training_data() {
        let q = Query::new(1, vec![vec![1.0], vec![2.0]], vec![2, 2]).unwrap();
        let d = Dataset::new(vec![q]).unwrap();
        let r = train_linear_ranker(&d, 1, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::DegenerateTraining(_))));
        assert!(train_linear_ranker(&d, 1, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn weights_file_round_trip() {
        let r = LinearRanker::new(vec![0.0, -1.5, 0.25], vec![false, true, true]).unwrap();
        let text = r.to_weights_file();
        assert!(text.starts_with("dim=3\n"));
        assert_eq!(LinearRanker::from_weights_file(&text).unwrap(), r);
        assert!(LinearRanker::from_weights_file("dim=2\n5 1.0\n").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn letor_round_trip(seed in 0u64..5000, nq in 1usize..5, nd in 1usize..6, dim in 1usize..5) {
                let d = generate_synthetic(nq, nd, dim, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                let back = parse_letor(write_letor(&d).as_bytes()).unwrap();
                prop_assert_eq!(back, d);
            }

            #[test]
            fn trained_weights_stay_inside_mask(seed in 0u64..5000, frac in 0.05f64..=1.0) {
                let d = generate_synthetic(6, 5, 6, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                let r = train_linear_ranker(&d, 3, frac, &mut ChaCha8Rng::seed_from_u64(seed + 1)).unwrap();
                prop_assert!(r.weights().iter().zip(r.mask()).all(|(w, m)| *m || *w == 0.0));
            }
        }
    }
}
