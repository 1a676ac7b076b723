//! Feed-forward document scorer with a Plackett-Luce placement distribution.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{check_prefix, BoundPolicy, MixturePolicy, Policy};
use crate::error::{Error, Result};
use crate::flat::{self, Block};
use crate::model::{DocId, Query};

pub const HIDDEN_UNITS: usize = 32;

/// `input -> 32 tanh -> 32 tanh -> 1` with all parameters in one flat vector.
///
/// Layout: `w1 (H x d) | b1 (H) | w2 (H x H) | b2 (H) | w3 (H) | b3 (1)`,
/// matrices row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNetwork {
    input_dim: usize,
    params: Vec<f64>,
}

struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    end: usize,
}

fn offsets(d: usize) -> Offsets {
    let h = HIDDEN_UNITS;
    let w1 = 0;
    let b1 = w1 + h * d;
    let w2 = b1 + h;
    let b2 = w2 + h * h;
    let w3 = b2 + h;
    let b3 = w3 + h;
    Offsets {
        w1,
        b1,
        w2,
        b2,
        w3,
        b3,
        end: b3 + 1,
    }
}

impl ScoreNetwork {
    /// LeCun-normal weights (variance 1 / fan-in), zero biases.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, rng: &mut R) -> Self {
        assert!(input_dim > 0, "score network needs at least one input feature");
        let o = offsets(input_dim);
        let mut params = vec![0.0; o.end];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let std = (1.0 / fan_in as f64).sqrt();
            for p in &mut params[range] {
                let z: f64 = StandardNormal.sample(rng);
                *p = z * std;
            }
        };
        fill(o.w1..o.b1, input_dim);
        fill(o.w2..o.b2, HIDDEN_UNITS);
        fill(o.w3..o.b3, HIDDEN_UNITS);
        ScoreNetwork { input_dim, params }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn hidden(&self, x: &[f64], h1: &mut [f64; HIDDEN_UNITS], h2: &mut [f64; HIDDEN_UNITS]) {
        let d = self.input_dim;
        let o = offsets(d);
        let p = &self.params;
        for (i, h) in h1.iter_mut().enumerate() {
            let row = &p[o.w1 + i * d..o.w1 + (i + 1) * d];
            *h = (p[o.b1 + i] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).tanh();
        }
        for (i, h) in h2.iter_mut().enumerate() {
            let row = &p[o.w2 + i * HIDDEN_UNITS..o.w2 + (i + 1) * HIDDEN_UNITS];
            *h = (p[o.b2 + i] + row.iter().zip(h1.iter()).map(|(w, v)| w * v).sum::<f64>()).tanh();
        }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.input_dim);
        let o = offsets(self.input_dim);
        let mut h1 = [0.0; HIDDEN_UNITS];
        let mut h2 = [0.0; HIDDEN_UNITS];
        self.hidden(x, &mut h1, &mut h2);
        self.params[o.b3] + self.params[o.w3..o.b3].iter().zip(&h2).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn scores(&self, features: &[Vec<f64>]) -> Vec<f64> {
        features.iter().map(|x| self.score(x)).collect()
    }

    /// Parameter gradient of `sum_j dscores[j] * score(features[j])`.
    pub fn backprop(&self, features: &[Vec<f64>], dscores: &[f64]) -> Vec<f64> {
        let d = self.input_dim;
        let o = offsets(d);
        let p = &self.params;
        let mut grad = vec![0.0; o.end];
        let mut h1 = [0.0; HIDDEN_UNITS];
        let mut h2 = [0.0; HIDDEN_UNITS];
        let mut dz2 = [0.0; HIDDEN_UNITS];
        for (x, &g) in features.iter().zip(dscores) {
            if g == 0.0 {
                continue;
            }
            self.hidden(x, &mut h1, &mut h2);
            grad[o.b3] += g;
            for i in 0..HIDDEN_UNITS {
                grad[o.w3 + i] += g * h2[i];
                dz2[i] = g * p[o.w3 + i] * (1.0 - h2[i] * h2[i]);
                grad[o.b2 + i] += dz2[i];
                let row = &mut grad[o.w2 + i * HIDDEN_UNITS..o.w2 + (i + 1) * HIDDEN_UNITS];
                for (gw, h) in row.iter_mut().zip(&h1) {
                    *gw += dz2[i] * h;
                }
            }
            for j in 0..HIDDEN_UNITS {
                let mut back = 0.0;
                for (i, dz) in dz2.iter().enumerate() {
                    back += p[o.w2 + i * HIDDEN_UNITS + j] * dz;
                }
                let dz1 = back * (1.0 - h1[j] * h1[j]);
                grad[o.b1 + j] += dz1;
                let row = &mut grad[o.w1 + j * d..o.w1 + (j + 1) * d];
                for (gw, v) in row.iter_mut().zip(x) {
                    *gw += dz1 * v;
                }
            }
        }
        grad
    }

    /// Three `layer` blocks; each row holds the weights followed by the bias.
    pub fn to_blocks(&self) -> Vec<Block> {
        let d = self.input_dim;
        let o = offsets(d);
        let p = &self.params;
        let layer = |idx: u64, w: usize, b: usize, rows: usize, cols: usize| {
            let mut data = Vec::with_capacity(rows * (cols + 1));
            for r in 0..rows {
                data.extend_from_slice(&p[w + r * cols..w + (r + 1) * cols]);
                data.push(p[b + r]);
            }
            Block::new("layer", idx, rows, cols + 1, data)
        };
        vec![
            layer(0, o.w1, o.b1, HIDDEN_UNITS, d),
            layer(1, o.w2, o.b2, HIDDEN_UNITS, HIDDEN_UNITS),
            layer(2, o.w3, o.b3, 1, HIDDEN_UNITS),
        ]
    }

    pub fn from_blocks(blocks: &[Block]) -> Result<Self> {
        let layers: Vec<&Block> = blocks.iter().filter(|b| b.name == "layer").collect();
        if layers.len() != 3 || layers.iter().enumerate().any(|(i, b)| b.index != i as u64) {
            return Err(Error::invalid("expected layer blocks 0, 1, 2"));
        }
        let d = layers[0]
            .cols
            .checked_sub(1)
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::invalid("bad input layer"))?;
        let shapes = [
            (HIDDEN_UNITS, d + 1),
            (HIDDEN_UNITS, HIDDEN_UNITS + 1),
            (1, HIDDEN_UNITS + 1),
        ];
        for (b, &(r, c)) in layers.iter().zip(&shapes) {
            if (b.rows, b.cols) != (r, c) {
                return Err(Error::invalid(format!(
                    "layer {} has shape {}x{}, expected {r}x{c}",
                    b.index, b.rows, b.cols
                )));
            }
        }
        let o = offsets(d);
        let mut params = vec![0.0; o.end];
        let mut unpack = |b: &Block, w: usize, bias: usize| {
            let cols = b.cols - 1;
            for (r, row) in b.data.chunks(b.cols).enumerate() {
                params[w + r * cols..w + (r + 1) * cols].copy_from_slice(&row[..cols]);
                params[bias + r] = row[cols];
            }
        };
        unpack(layers[0], o.w1, o.b1);
        unpack(layers[1], o.w2, o.b2);
        unpack(layers[2], o.w3, o.b3);
        Ok(ScoreNetwork { input_dim: d, params })
    }
}

/// Softmax over unplaced documents, optionally mixed with uniform.
pub fn softmax_placement(scores: &[f64], placed: &[bool], epsilon: f64, out: &mut [f64]) {
    let max = scores
        .iter()
        .zip(placed)
        .filter(|(_, &t)| !t)
        .map(|(s, _)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut left = 0usize;
    for ((o, s), &t) in out.iter_mut().zip(scores).zip(placed) {
        if t {
            *o = 0.0;
        } else {
            *o = (s - max).exp();
            total += *o;
            left += 1;
        }
    }
    let floor = if left > 0 { epsilon / left as f64 } else { 0.0 };
    for (o, &t) in out.iter_mut().zip(placed) {
        if !t {
            *o = (1.0 - epsilon) * *o / total + floor;
        }
    }
}

/// d p(doc) / d scores for the mixed softmax placement; `probs_soft` is the
/// pure softmax (epsilon = 0) over unplaced documents.
pub fn softmax_placement_grad(probs_soft: &[f64], placed: &[bool], epsilon: f64, doc: DocId, out: &mut [f64]) {
    let pd = probs_soft[doc];
    for (j, (o, &t)) in out.iter_mut().zip(placed).enumerate() {
        *o = if t {
            0.0
        } else {
            let delta = if j == doc { 1.0 } else { 0.0 };
            (1.0 - epsilon) * pd * (delta - probs_soft[j])
        };
    }
}

/// d log p(doc) / d scores for the mixed softmax placement.
pub fn softmax_log_placement_grad(probs_soft: &[f64], placed: &[bool], epsilon: f64, doc: DocId, out: &mut [f64]) {
    let left = placed.iter().filter(|t| !**t).count();
    let p_mix = (1.0 - epsilon) * probs_soft[doc] + epsilon / left as f64;
    softmax_placement_grad(probs_soft, placed, epsilon, doc, out);
    for o in out.iter_mut() {
        *o /= p_mix;
    }
}

/// Plackett-Luce policy over network scores, temperature 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNetworkPolicy {
    pub network: ScoreNetwork,
}

impl ScoreNetworkPolicy {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, rng: &mut R) -> Self {
        ScoreNetworkPolicy {
            network: ScoreNetwork::new(input_dim, rng),
        }
    }

    pub fn to_flat(&self) -> String {
        flat::write_blocks(&self.network.to_blocks())
    }

    pub fn from_flat(text: &str) -> Result<Self> {
        Ok(ScoreNetworkPolicy {
            network: ScoreNetwork::from_blocks(&flat::read_blocks(text)?)?,
        })
    }
}

struct BoundSoftmax {
    scores: Vec<f64>,
    epsilon: f64,
}

impl BoundPolicy for BoundSoftmax {
    fn num_docs(&self) -> usize {
        self.scores.len()
    }

    fn placement_probs(&self, _prefix: &[DocId], placed: &[bool], out: &mut [f64]) {
        softmax_placement(&self.scores, placed, self.epsilon, out);
    }
}

fn check_dim(net: &ScoreNetwork, query: &Query) -> Result<()> {
    if net.input_dim() != query.feature_dim() {
        return Err(Error::invalid(format!(
            "network expects {} features, query {} has {}",
            net.input_dim(),
            query.id,
            query.feature_dim()
        )));
    }
    Ok(())
}

impl Policy for ScoreNetworkPolicy {
    fn bind<'a>(&'a self, query: &'a Query) -> Result<Box<dyn BoundPolicy + 'a>> {
        check_dim(&self.network, query)?;
        Ok(Box::new(BoundSoftmax {
            scores: self.network.scores(&query.features),
            epsilon: 0.0,
        }))
    }
}

/// A softmax-over-scores policy (possibly mixed with uniform) whose network
/// parameters can be trained.
pub trait DifferentiablePolicy: Policy {
    fn network(&self) -> &ScoreNetwork;
    fn network_mut(&mut self) -> &mut ScoreNetwork;
    /// Weight of the uniform component; treated as a constant.
    fn epsilon(&self) -> f64;
}

impl DifferentiablePolicy for ScoreNetworkPolicy {
    fn network(&self) -> &ScoreNetwork {
        &self.network
    }

    fn network_mut(&mut self) -> &mut ScoreNetwork {
        &mut self.network
    }

    fn epsilon(&self) -> f64 {
        0.0
    }
}

impl DifferentiablePolicy for MixturePolicy<ScoreNetworkPolicy> {
    fn network(&self) -> &ScoreNetwork {
        &self.base.network
    }

    fn network_mut(&mut self) -> &mut ScoreNetwork {
        &mut self.base.network
    }

    fn epsilon(&self) -> f64 {
        MixturePolicy::epsilon(self)
    }
}

/// Gradient of `log P(doc placed next | prefix)` with respect to every
/// network parameter.
pub fn placement_logprob_grad(
    policy: &dyn DifferentiablePolicy,
    query: &Query,
    prefix: &[DocId],
    doc: DocId,
) -> Result<Vec<f64>> {
    let placed = check_prefix(query, prefix)?;
    if !query.contains(doc) {
        return Err(Error::invalid(format!("unknown document {doc} for query {}", query.id)));
    }
    if placed[doc] {
        return Err(Error::invalid(format!("document {doc} is already placed")));
    }
    let net = policy.network();
    check_dim(net, query)?;
    let scores = net.scores(&query.features);
    let n = query.num_docs();
    let mut soft = vec![0.0; n];
    softmax_placement(&scores, &placed, 0.0, &mut soft);
    let mut ds = vec![0.0; n];
    softmax_log_placement_grad(&soft, &placed, policy.epsilon(), doc, &mut ds);
    Ok(net.backprop(&query.features, &ds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::placement_prob;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_query(seed: u64, n: usize, d: usize) -> Query {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = (0..n)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        Query::new(seed, features, vec![0; n]).unwrap()
    }

    #[test]
    fn equal_scores_give_uniform_placement() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ScoreNetworkPolicy::new(3, &mut rng);
        let q = Query::new(1, vec![vec![0.2, -1.0, 0.5]; 4], vec![0; 4]).unwrap();
        assert!((placement_prob(&p, &q, &[], 2).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn single_unplaced_doc_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = MixturePolicy::new(ScoreNetworkPolicy::new(4, &mut rng), 0.1).unwrap();
        let q = random_query(5, 3, 4);
        let g = placement_logprob_grad(&p, &q, &[2, 0], 1).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_documents_have_identical_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ScoreNetworkPolicy::new(2, &mut rng);
        let q = Query::new(1, vec![vec![0.3, 0.7], vec![0.3, 0.7], vec![-1.0, 2.0]], vec![0; 3]).unwrap();
        let g0 = placement_logprob_grad(&p, &q, &[], 0).unwrap();
        let g1 = placement_logprob_grad(&p, &q, &[], 1).unwrap();
        assert!(g0.iter().all(|v| v.is_finite()));
        for (a, b) in g0.iter().zip(&g1) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn check_finite_differences(eps: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_query(seed + 100, 4, 3);
        let mut p = MixturePolicy::new(ScoreNetworkPolicy::new(3, &mut rng), eps).unwrap();
        let prefix = [2];
        let doc = 0;
        let g = placement_logprob_grad(&p, &q, &prefix, doc).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (i, &gi) in g.iter().enumerate() {
            let orig = p.network().params()[i];
            p.network_mut().params_mut()[i] = orig + h;
            let up = placement_prob(&p, &q, &prefix, doc).unwrap().ln();
            p.network_mut().params_mut()[i] = orig - h;
            let down = placement_prob(&p, &q, &prefix, doc).unwrap().ln();
            p.network_mut().params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - gi).abs() / fd.abs().max(gi.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn log_placement_gradient_matches_finite_differences() {
        check_finite_differences(0.0, 7);
        check_finite_differences(0.1, 8);
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = ScoreNetworkPolicy::new(5, &mut rng);
        let back = ScoreNetworkPolicy::from_flat(&p.to_flat()).unwrap();
        assert_eq!(back, p);
        let mut blocks = p.network.to_blocks();
        blocks.pop();
        assert!(ScoreNetwork::from_blocks(&blocks).is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = ScoreNetworkPolicy::new(5, &mut rng);
        assert!(p.bind(&Query::one_hot(1, 3)).is_err());
    }
}
