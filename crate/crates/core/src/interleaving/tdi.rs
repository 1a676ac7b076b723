use rand::Rng;

use super::{check_candidates, check_clicks};
use crate::error::Result;
use crate::estimators::Arm;
use crate::model::{DocId, Ranking};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TdiResult {
    pub ranking: Ranking,
    /// Which ranker contributed the document at each position.
    pub owners: Vec<Arm>,
}

struct Draft<'a> {
    r1: &'a [DocId],
    r2: &'a [DocId],
    placed: Vec<bool>,
    docs: Vec<DocId>,
    owners: Vec<Arm>,
}

impl Draft<'_> {
    fn pick(&mut self, arm: Arm) {
        let source = match arm {
            Arm::One => self.r1,
            Arm::Two => self.r2,
        };
        let d = *source
            .iter()
            .find(|&&d| !self.placed[d])
            .expect("unplaced document remains");
        self.placed[d] = true;
        self.docs.push(d);
        self.owners.push(arm);
    }

    /// One draft round; `one_first` says which ranker picks first.
    fn round(&mut self, one_first: bool, len: usize) {
        let (a, b) = if one_first {
            (Arm::One, Arm::Two)
        } else {
            (Arm::Two, Arm::One)
        };
        self.pick(a);
        if self.docs.len() < len {
            self.pick(b);
        }
    }

    fn finish(self) -> TdiResult {
        TdiResult {
            ranking: Ranking::from_vec_unchecked(self.docs),
            owners: self.owners,
        }
    }
}

fn draft<'a>(r1: &'a Ranking, r2: &'a Ranking, len: usize) -> Result<(Draft<'a>, usize)> {
    check_candidates(r1, r2)?;
    let n = r1.len();
    let space = r1.docs().iter().max().map_or(0, |m| m + 1);
    let d = Draft {
        r1: r1.docs(),
        r2: r2.docs(),
        placed: vec![false; space],
        docs: Vec::with_capacity(len),
        owners: Vec::with_capacity(len),
    };
    Ok((d, len.min(n)))
}

/// Team-draft interleaving of the first `len` positions: each round a fair
/// coin decides which ranker adds its best unplaced document first.
pub fn tdi_interleave<R: Rng + ?Sized>(r1: &Ranking, r2: &Ranking, len: usize, rng: &mut R) -> Result<TdiResult> {
    let (mut d, len) = draft(r1, r2, len)?;
    while d.docs.len() < len {
        let coin = rng.random::<bool>();
        d.round(coin, len);
    }
    Ok(d.finish())
}

/// Every interleaving/assignment outcome with its probability.
pub fn tdi_enumerate(r1: &Ranking, r2: &Ranking, len: usize) -> Result<Vec<(TdiResult, f64)>> {
    let (d, len) = draft(r1, r2, len)?;
    let rounds = len.div_ceil(2);
    let p = 0.5f64.powi(rounds as i32);
    let mut out = Vec::with_capacity(1 << rounds);
    for flips in 0u64..1 << rounds {
        let mut d = Draft {
            r1: d.r1,
            r2: d.r2,
            placed: d.placed.clone(),
            docs: Vec::with_capacity(len),
            owners: Vec::with_capacity(len),
        };
        for i in 0..rounds {
            d.round(flips >> i & 1 == 1, len);
        }
        out.push((d.finish(), p));
    }
    Ok(out)
}

/// +1 if ranker one's documents got more clicks, −1 if ranker two's did, 0 on ties.
pub fn tdi_outcome(result: &TdiResult, clicks: &[bool]) -> Result<i8> {
    check_clicks(result.owners.len(), clicks)?;
    let diff: i64 = result
        .owners
        .iter()
        .zip(clicks)
        .filter(|(_, &c)| c)
        .map(|(o, _)| if *o == Arm::One { 1 } else { -1 })
        .sum();
    Ok(diff.signum() as i8)
}
