use rand::Rng;

use super::{check_candidates, check_clicks};
use crate::error::{Error, Result};
use crate::model::{DocId, Ranking};
use crate::policy::{draw, ENUMERATION_CAP};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiConfig {
    pub tau: f64,
}

impl Default for PiConfig {
    fn default() -> Self {
        PiConfig { tau: 4.0 }
    }
}

impl PiConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Per-ranker rank^(−τ) weights, indexed by document.
struct Softmaxes {
    w1: Vec<f64>,
    w2: Vec<f64>,
}

impl Softmaxes {
    fn new(r1: &Ranking, r2: &Ranking, config: &PiConfig) -> Result<Self> {
        config.validate()?;
        check_candidates(r1, r2)?;
        let space = r1.docs().iter().max().map_or(0, |m| m + 1);
        let weights = |r: &Ranking| {
            let mut w = vec![0.0; space];
            for (i, &d) in r.docs().iter().enumerate() {
                w[d] = ((i + 1) as f64).powf(-config.tau);
            }
            w
        };
        Ok(Softmaxes {
            w1: weights(r1),
            w2: weights(r2),
        })
    }

    fn space(&self) -> usize {
        self.w1.len()
    }

    /// Probability each ranker places `doc` next, given what is placed.
    fn placement(&self, placed: &[bool], doc: DocId) -> (f64, f64) {
        let mut z1 = 0.0;
        let mut z2 = 0.0;
        for ((&p, w1), w2) in placed.iter().zip(&self.w1).zip(&self.w2) {
            if !p {
                z1 += w1;
                z2 += w2;
            }
        }
        (self.w1[doc] / z1, self.w2[doc] / z2)
    }

    fn mixed(&self, placed: &[bool], out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.space(), 0.0);
        for d in 0..self.space() {
            if !placed[d] && (self.w1[d] > 0.0 || self.w2[d] > 0.0) {
                let (a, b) = self.placement(placed, d);
                out[d] = 0.5 * (a + b);
            }
        }
    }

    /// Per-position (P(from ranker 1), P(position)) along `displayed`.
    fn walk(&self, displayed: &Ranking) -> Result<Vec<(f64, f64)>> {
        let mut placed = vec![false; self.space()];
        let mut out = Vec::with_capacity(displayed.len());
        for &d in displayed.docs() {
            if d >= self.space() || self.w1[d] == 0.0 {
                return Err(Error::invalid(format!("document {d} is not a candidate")));
            }
            let (a, b) = self.placement(&placed, d);
            out.push((a / (a + b), 0.5 * (a + b)));
            placed[d] = true;
        }
        Ok(out)
    }
}

/// Probabilistic interleaving of the first `len` positions: each position
/// picks a ranker by a fair coin, then a document from that ranker's
/// rank^(−τ) distribution over unplaced documents.
pub fn pi_interleave<R: Rng + ?Sized>(
    r1: &Ranking,
    r2: &Ranking,
    config: &PiConfig,
    len: usize,
    rng: &mut R,
) -> Result<Ranking> {
    let s = Softmaxes::new(r1, r2, config)?;
    let len = len.min(r1.len());
    let mut placed = vec![true; s.space()];
    r1.docs().iter().for_each(|&d| placed[d] = false);
    let mut docs = Vec::with_capacity(len);
    let mut probs = vec![0.0; s.space()];
    while docs.len() < len {
        let w = if rng.random::<bool>() { &s.w1 } else { &s.w2 };
        let z: f64 = (0..s.space()).filter(|&d| !placed[d]).map(|d| w[d]).sum();
        for d in 0..s.space() {
            probs[d] = if placed[d] { 0.0 } else { w[d] / z };
        }
        let d = draw(&probs, &placed, rng);
        placed[d] = true;
        docs.push(d);
    }
    Ok(Ranking::from_vec_unchecked(docs))
}

/// Probability that PI displays exactly `displayed` in its top positions.
pub fn pi_interleaving_prob(displayed: &Ranking, r1: &Ranking, r2: &Ranking, config: &PiConfig) -> Result<f64> {
    let s = Softmaxes::new(r1, r2, config)?;
    Ok(s.walk(displayed)?.iter().map(|(_, p)| p).product())
}

/// Posterior probability that each displayed position was contributed by
/// ranker one. Positions are independent given the displayed ranking.
pub fn pi_posteriors(displayed: &Ranking, r1: &Ranking, r2: &Ranking, config: &PiConfig) -> Result<Vec<f64>> {
    let s = Softmaxes::new(r1, r2, config)?;
    Ok(s.walk(displayed)?.into_iter().map(|(post, _)| post).collect())
}

/// Expected sign of (clicks credited to ranker one − clicks credited to
/// ranker two) over the assignment posterior.
pub fn pi_expected_outcome(
    displayed: &Ranking,
    clicks: &[bool],
    r1: &Ranking,
    r2: &Ranking,
    config: &PiConfig,
) -> Result<f64> {
    check_clicks(displayed.len(), clicks)?;
    let post = pi_posteriors(displayed, r1, r2, config)?;
    let clicked: Vec<f64> = post.iter().zip(clicks).filter(|(_, &c)| c).map(|(p, _)| *p).collect();
    let m = clicked.len();
    // dist[j] = P(difference = j − m)
    let mut dist = vec![0.0; 2 * m + 1];
    dist[m] = 1.0;
    for p in clicked {
        let mut next = vec![0.0; 2 * m + 1];
        for (j, &w) in dist.iter().enumerate().filter(|(_, w)| **w != 0.0) {
            next[j + 1] += w * p;
            next[j - 1] += w * (1.0 - p);
        }
        dist = next;
    }
    let win: f64 = dist[m + 1..].iter().sum();
    let lose: f64 = dist[..m].iter().sum();
    Ok(win - lose)
}

/// Every PI display of length `len` with its probability.
pub fn pi_enumerate(r1: &Ranking, r2: &Ranking, config: &PiConfig, len: usize) -> Result<Vec<(Ranking, f64)>> {
    let s = Softmaxes::new(r1, r2, config)?;
    let len = len.min(r1.len());
    let mut placed = vec![true; s.space()];
    r1.docs().iter().for_each(|&d| placed[d] = false);
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(len);
    fn go(
        s: &Softmaxes,
        len: usize,
        placed: &mut [bool],
        prefix: &mut Vec<DocId>,
        p: f64,
        out: &mut Vec<(Ranking, f64)>,
    ) -> Result<()> {
        if prefix.len() == len {
            if out.len() == ENUMERATION_CAP {
                return Err(Error::EnumerationCap(format!(
                    "more than {ENUMERATION_CAP} probabilistic interleavings"
                )));
            }
            out.push((Ranking::from_vec_unchecked(prefix.clone()), p));
            return Ok(());
        }
        let mut probs = Vec::new();
        s.mixed(placed, &mut probs);
        for d in 0..probs.len() {
            if !placed[d] && probs[d] > 0.0 {
                placed[d] = true;
                prefix.push(d);
                go(s, len, placed, prefix, p * probs[d], out)?;
                prefix.pop();
                placed[d] = false;
            }
        }
        Ok(())
    }
    go(&s, len, &mut placed, &mut prefix, 1.0, &mut out)?;
    Ok(out)
}
