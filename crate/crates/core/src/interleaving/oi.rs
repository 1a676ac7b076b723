use rand::Rng;

use super::{check_candidates, check_clicks};
use crate::error::{Error, Result};
use crate::model::{DocId, Ranking};

/// Most allowed interleavings an optimized-interleaving plan will hold.
pub const OI_CAP: usize = 100_000;

/// Credits this close to zero count as zero.
const CREDIT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct OiPlan {
    /// Displays of length `min(k, n)` consistent with every pairwise
    /// preference both rankers share.
    pub allowed: Vec<Ranking>,
    pub probs: Vec<f64>,
    /// Per-document click credit: rank under ranker two minus rank under
    /// ranker one. Non-candidates get 0.
    pub credits: Vec<f64>,
}

impl OiPlan {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &Ranking {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (r, p) in self.allowed.iter().zip(&self.probs) {
            acc += p;
            if u < acc {
                return r;
            }
        }
        let last = self.probs.iter().rposition(|p| *p > 0.0).unwrap_or(0);
        &self.allowed[last]
    }

    /// Credit of the clicked documents in `displayed`, which must come from
    /// this plan's allowed set.
    pub fn clicked_credit(&self, displayed: &[DocId], clicks: &[bool]) -> f64 {
        displayed
            .iter()
            .zip(clicks)
            .filter(|(_, &c)| c)
            .map(|(&d, _)| self.credits[d])
            .sum()
    }

    /// Expected credit of one display under the examination weights `theta`
    /// when every document is equally attractive, up to that common factor.
    pub fn display_credit(&self, ranking: &Ranking, theta: &[f64]) -> f64 {
        ranking
            .docs()
            .iter()
            .enumerate()
            .map(|(i, &d)| theta.get(i).copied().unwrap_or(0.0) * self.credits[d])
            .sum()
    }
}

/// Builds the allowed set and picks the maximum-entropy distribution over it
/// whose expected credit is zero when clicks carry no relevance signal.
pub fn oi_plan(r1: &Ranking, r2: &Ranking, theta: &[f64]) -> Result<OiPlan> {
    check_candidates(r1, r2)?;
    if theta.is_empty() {
        return Err(Error::invalid("theta must cover at least one rank"));
    }
    let n = r1.len();
    let space = r1.docs().iter().max().map_or(0, |m| m + 1);
    let mut pos1 = vec![0usize; space];
    let mut pos2 = vec![0usize; space];
    r1.docs().iter().enumerate().for_each(|(i, &d)| pos1[d] = i);
    r2.docs().iter().enumerate().for_each(|(i, &d)| pos2[d] = i);
    let mut credits = vec![0.0; space];
    for &d in r1.docs() {
        credits[d] = pos2[d] as f64 - pos1[d] as f64;
    }
    // must_precede[e] lists documents both rankers put above e
    let must_precede: Vec<Vec<DocId>> = (0..space)
        .map(|e| {
            r1.docs()
                .iter()
                .copied()
                .filter(|&d| d != e && pos1[d] < pos1[e] && pos2[d] < pos2[e])
                .collect()
        })
        .collect();
    let len = theta.len().min(n);
    let mut allowed = Vec::new();
    let mut placed = vec![false; space];
    let mut prefix = Vec::with_capacity(len);
    extend(r1.docs(), &must_precede, len, &mut placed, &mut prefix, &mut allowed)?;

    let plan = OiPlan {
        allowed,
        probs: Vec::new(),
        credits,
    };
    let a: Vec<f64> = plan.allowed.iter().map(|r| plan.display_credit(r, theta)).collect();
    let probs = max_entropy_zero_mean(&a)?;
    Ok(OiPlan { probs, ..plan })
}

fn extend(
    candidates: &[DocId],
    must_precede: &[Vec<DocId>],
    len: usize,
    placed: &mut [bool],
    prefix: &mut Vec<DocId>,
    out: &mut Vec<Ranking>,
) -> Result<()> {
    if prefix.len() == len {
        if out.len() == OI_CAP {
            return Err(Error::EnumerationCap(format!(
                "more than {OI_CAP} allowed interleavings"
            )));
        }
        out.push(Ranking::from_vec_unchecked(prefix.clone()));
        return Ok(());
    }
    for &d in candidates {
        if !placed[d] && must_precede[d].iter().all(|&p| placed[p]) {
            placed[d] = true;
            prefix.push(d);
            extend(candidates, must_precede, len, placed, prefix, out)?;
            prefix.pop();
            placed[d] = false;
        }
    }
    Ok(())
}

/// p_i ∝ exp(η a_i) with Σ p_i a_i = 0.
fn max_entropy_zero_mean(a: &[f64]) -> Result<Vec<f64>> {
    let n = a.len();
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let zero = |x: f64| x.abs() <= CREDIT_TOL * scale.max(1.0);
    let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if a.iter().all(|&x| zero(x)) {
        return Ok(vec![1.0 / n as f64; n]);
    }
    if (lo > 0.0 && !zero(lo)) || (hi < 0.0 && !zero(hi)) {
        return Err(Error::Infeasible(format!(
            "every allowed interleaving has expected credit of one sign (range {lo:.6} to {hi:.6})"
        )));
    }
    if zero(lo) || zero(hi) {
        // only the zero-credit displays can carry mass
        let m = a.iter().filter(|&&x| zero(x)).count() as f64;
        return Ok(a.iter().map(|&x| if zero(x) { 1.0 / m } else { 0.0 }).collect());
    }
    let weights = |eta: f64| -> Vec<f64> {
        let top = a.iter().map(|x| eta * x).fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = a.iter().map(|x| (eta * x - top).exp()).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|v| v / z).collect()
    };
    let mean = |eta: f64| -> f64 { weights(eta).iter().zip(a).map(|(p, x)| p * x).sum() };
    let (mut l, mut h) = (-1.0 / scale, 1.0 / scale);
    while mean(l) > 0.0 {
        l *= 2.0;
    }
    while mean(h) < 0.0 {
        h *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (l + h);
        if mid <= l || mid >= h {
            break;
        }
        if mean(mid) < 0.0 {
            l = mid;
        } else {
            h = mid;
        }
    }
    let pl = weights(l);
    let ph = weights(h);
    let (ml, mh) = (mean(l), mean(h));
    // interpolate between the bracketing distributions to cancel the last
    // rounding residue exactly
    let t = if mh - ml > 0.0 { -ml / (mh - ml) } else { 0.5 };
    Ok(pl.iter().zip(&ph).map(|(a, b)| (1.0 - t) * a + t * b).collect())
}

/// Sum of credits of the clicked documents.
pub fn oi_outcome(plan: &OiPlan, displayed: &Ranking, clicks: &[bool]) -> Result<f64> {
    check_clicks(displayed.len(), clicks)?;
    if !plan.allowed.contains(displayed) {
        return Err(Error::invalid("displayed ranking is not an allowed interleaving"));
    }
    Ok(plan.clicked_credit(displayed.docs(), clicks))
}
