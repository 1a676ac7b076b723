//! Expectation-maximization for the position-based click model.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::flat::{self, Block};
use crate::model::{ClickModel, DocId, InteractionLog, Query};

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop once the log-likelihood improves by less than this.
    pub tol: f64,
    /// Starting examination per rank; ranks past its end start at 1/r.
    pub theta_init: Vec<f64>,
    pub zeta_init: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 50,
            tol: 1e-4,
            theta_init: Vec::new(),
            zeta_init: 0.5,
        }
    }
}

impl EmConfig {
    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v <= 1.0;
        if !ok(self.zeta_init) || !self.theta_init.iter().all(|&t| ok(t)) {
            return Err(Error::invalid("EM starting values must lie in (0, 1]"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("EM needs at least one iteration"));
        }
        Ok(())
    }

    fn theta_start(&self, rank: usize) -> f64 {
        self.theta_init.get(rank).copied().unwrap_or(1.0 / (rank + 1) as f64)
    }
}

/// Click and view counts of one (rank, query, document) cell.
#[derive(Debug, Clone, Copy)]
struct Cell {
    rank: usize,
    pair: usize,
    clicks: f64,
    skips: f64,
}

/// A log reduced to counts per (rank, query, document).
#[derive(Debug, Clone)]
pub struct Impressions {
    cells: Vec<Cell>,
    pairs: Vec<(u64, DocId)>,
    num_ranks: usize,
}

impl Impressions {
    pub fn from_log(log: &InteractionLog) -> Self {
        let mut pair_ix: HashMap<(u64, DocId), usize> = HashMap::new();
        let mut pairs = Vec::new();
        let mut cell_ix: HashMap<(usize, usize), usize> = HashMap::new();
        let mut cells: Vec<Cell> = Vec::new();
        let mut num_ranks = 0;
        for rec in log.iter() {
            num_ranks = num_ranks.max(rec.ranking.len());
            for (rank, (&d, &c)) in rec.ranking.docs().iter().zip(&rec.clicks).enumerate() {
                let pair = *pair_ix.entry((rec.query_id, d)).or_insert_with(|| {
                    pairs.push((rec.query_id, d));
                    pairs.len() - 1
                });
                let i = *cell_ix.entry((rank, pair)).or_insert_with(|| {
                    cells.push(Cell {
                        rank,
                        pair,
                        clicks: 0.0,
                        skips: 0.0,
                    });
                    cells.len() - 1
                });
                if c {
                    cells[i].clicks += 1.0;
                } else {
                    cells[i].skips += 1.0;
                }
            }
        }
        Impressions {
            cells,
            pairs,
            num_ranks,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Current parameters of a fit in index form.
#[derive(Debug, Clone, PartialEq)]
pub struct EmState {
    pub theta: Vec<f64>,
    pub zeta: Vec<f64>,
}

impl EmState {
    fn loglik(&self, imp: &Impressions) -> f64 {
        imp.cells
            .iter()
            .map(|c| {
                let p = self.theta[c.rank] * self.zeta[c.pair];
                let mut ll = 0.0;
                if c.clicks > 0.0 {
                    ll += c.clicks * p.ln();
                }
                if c.skips > 0.0 {
                    ll += c.skips * (1.0 - p).ln();
                }
                ll
            })
            .sum()
    }
}

/// One E-step followed by one M-step.
pub fn em_step(imp: &Impressions, state: &EmState) -> EmState {
    let mut exam = vec![(0.0, 0.0); state.theta.len()];
    let mut rel = vec![(0.0, 0.0); state.zeta.len()];
    for c in &imp.cells {
        let (t, z) = (state.theta[c.rank], state.zeta[c.pair]);
        let denom = 1.0 - t * z;
        let (pe, pr) = if denom > 0.0 {
            (t * (1.0 - z) / denom, (1.0 - t) * z / denom)
        } else {
            (1.0, 1.0)
        };
        let n = c.clicks + c.skips;
        exam[c.rank].0 += c.clicks + c.skips * pe;
        exam[c.rank].1 += n;
        rel[c.pair].0 += c.clicks + c.skips * pr;
        rel[c.pair].1 += n;
    }
    let ratio = |(s, n): (f64, f64), old: f64| if n > 0.0 { (s / n).clamp(0.0, 1.0) } else { old };
    EmState {
        theta: exam.into_iter().zip(&state.theta).map(|(a, &o)| ratio(a, o)).collect(),
        zeta: rel.into_iter().zip(&state.zeta).map(|(a, &o)| ratio(a, o)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    /// Examination per zero-based rank; `None` where the log has no impressions.
    pub theta: Vec<Option<f64>>,
    pub zeta: BTreeMap<(u64, DocId), f64>,
    pub loglik_trace: Vec<f64>,
    pub zeta_init: f64,
}

impl EmFit {
    /// θ̂ with absent ranks filled from the rank above (rank 1 from 1).
    pub fn theta_filled(&self) -> Vec<f64> {
        let mut prev = 1.0;
        self.theta
            .iter()
            .map(|t| {
                prev = t.unwrap_or(prev);
                prev
            })
            .collect()
    }

    pub fn zeta(&self, query: u64, doc: DocId) -> f64 {
        self.zeta.get(&(query, doc)).copied().unwrap_or(self.zeta_init)
    }

    /// A click model over `queries` with the estimated parameters, unseen
    /// documents at the initial attraction and `display_length` ranks.
    pub fn click_model(&self, queries: &[Query], display_length: usize) -> Result<ClickModel> {
        let mut theta = self.theta_filled();
        let last = theta.last().copied().unwrap_or(1.0);
        theta.resize(display_length.max(1), last);
        let zeta = queries
            .iter()
            .map(|q| (q.id, (0..q.num_docs()).map(|d| self.zeta(q.id, d)).collect()))
            .collect();
        ClickModel::new(theta, zeta)
    }

    pub fn to_flat(&self) -> String {
        let theta: Vec<f64> = self.theta.iter().map(|t| t.unwrap_or(f64::NAN)).collect();
        let mut blocks = vec![
            Block::new("theta", 0, 1, theta.len(), theta),
            Block::new("zeta_init", 0, 1, 1, vec![self.zeta_init]),
        ];
        let mut by_query: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for (&(q, d), &z) in &self.zeta {
            by_query.entry(q).or_default().extend([d as f64, z]);
        }
        for (q, data) in by_query {
            blocks.push(Block::new("zeta", q, data.len() / 2, 2, data));
        }
        flat::write_blocks(&blocks)
    }

    /// Restores the parameters; the likelihood trace is not stored.
    pub fn from_flat(text: &str) -> Result<Self> {
        let mut fit = EmFit {
            theta: Vec::new(),
            zeta: BTreeMap::new(),
            loglik_trace: Vec::new(),
            zeta_init: 0.5,
        };
        for b in flat::read_blocks(text)? {
            match b.name.as_str() {
                "theta" => fit.theta = b.data.iter().map(|t| (!t.is_nan()).then_some(*t)).collect(),
                "zeta_init" => fit.zeta_init = b.data.first().copied().unwrap_or(0.5),
                "zeta" => {
                    for row in b.data.chunks(2) {
                        fit.zeta.insert((b.index, row[0] as DocId), row[1]);
                    }
                }
                other => return Err(Error::invalid(format!("unexpected block `{other}`"))),
            }
        }
        Ok(fit)
    }
}

pub fn em_fit(log: &InteractionLog, config: &EmConfig) -> Result<EmFit> {
    config.validate()?;
    let imp = Impressions::from_log(log);
    if imp.is_empty() {
        return Err(Error::invalid("cannot fit a click model to an empty log"));
    }
    let mut state = EmState {
        theta: (0..imp.num_ranks).map(|r| config.theta_start(r)).collect(),
        zeta: vec![config.zeta_init; imp.pairs.len()],
    };
    let mut trace = vec![state.loglik(&imp)];
    for _ in 0..config.max_iters {
        state = em_step(&imp, &state);
        let ll = state.loglik(&imp);
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(ll);
        if (ll - prev).abs() < config.tol {
            break;
        }
    }
    let mut seen = vec![false; imp.num_ranks];
    imp.cells.iter().for_each(|c| seen[c.rank] = true);
    let anchor = if seen.first() == Some(&true) && state.theta[0] > 0.0 {
        state.theta[0]
    } else {
        1.0
    };
    Ok(EmFit {
        theta: state
            .theta
            .iter()
            .zip(&seen)
            .map(|(t, &s)| s.then_some(t / anchor))
            .collect(),
        zeta: imp
            .pairs
            .iter()
            .zip(&state.zeta)
            .map(|(&p, &z)| (p, z * anchor))
            .collect(),
        loglik_trace: trace,
        zeta_init: config.zeta_init,
    })
}

/// Log-likelihood of `log` under examination `theta` (zero-based ranks) and
/// attraction `zeta(query, doc)`. A click on a zero-probability position
/// gives negative infinity.
pub fn em_loglik<F: Fn(u64, DocId) -> f64>(log: &InteractionLog, theta: &[f64], zeta: F) -> f64 {
    let mut ll = 0.0;
    for rec in log.iter() {
        for (rank, (&d, &c)) in rec.ranking.docs().iter().zip(&rec.clicks).enumerate() {
            let p = theta.get(rank).copied().unwrap_or(0.0) * zeta(rec.query_id, d);
            ll += if c { p.ln() } else { (1.0 - p).ln() };
        }
    }
    ll
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clicks::sample_clicks;
    use crate::model::{InteractionRecord, Ranking};
    use crate::policy::{sample_ranking, UniformPolicy};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(q: u64, docs: Vec<DocId>, clicks: Vec<bool>) -> InteractionRecord {
        InteractionRecord::new(q, Ranking::new(docs).unwrap(), clicks).unwrap()
    }

    /// Uniformly shuffled displays of 5 out of 6 documents per query.
    fn simulated(records: usize, seed: u64) -> (InteractionLog, ClickModel, Vec<Query>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let queries: Vec<Query> = (0..20).map(|i| Query::one_hot(i, 6)).collect();
        let zeta = queries
            .iter()
            .map(|q| (q.id, (0..6).map(|_| rng.random_range(0.1..0.9)).collect()))
            .collect();
        let theta = (1..=5).map(|r| 1.0 / r as f64).collect();
        let model = ClickModel::new(theta, zeta).unwrap();
        let log = (0..records)
            .map(|i| {
                let q = &queries[i % queries.len()];
                let r = sample_ranking(&UniformPolicy, q, 5, &mut rng).unwrap();
                let c = sample_clicks(&r, q, &model, &mut rng).unwrap();
                InteractionRecord::new(q.id, r, c).unwrap()
            })
            .collect();
        (log, model, queries)
    }

    #[test]
    fn single_clicked_impression() {
        let log: InteractionLog = [rec(1, vec![0], vec![true])].into_iter().collect();
        let fit = em_fit(&log, &EmConfig::default()).unwrap();
        assert_eq!(fit.theta, vec![Some(1.0)]);
        assert!((fit.zeta(1, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_clicks_shrink_attraction() {
        let log: InteractionLog = (0..10).map(|_| rec(1, vec![0, 1, 2], vec![false; 3])).collect();
        let imp = Impressions::from_log(&log);
        let mut state = EmState {
            theta: vec![1.0, 0.5, 1.0 / 3.0],
            zeta: vec![0.5; 3],
        };
        for _ in 0..10 {
            let next = em_step(&imp, &state);
            // the rank-1 document is examined with certainty, so it drops to 0 at once
            assert!(next.zeta.iter().zip(&state.zeta).all(|(a, b)| a < b || *b == 0.0));
            state = next;
        }
        let fit = em_fit(&log, &EmConfig::default()).unwrap();
        assert!(fit.zeta.values().all(|&z| z <= 0.5));
    }

    #[test]
    fn trace_is_monotone_and_parameters_stay_in_range() {
        let (log, _, _) = simulated(4_000, 2);
        let imp = Impressions::from_log(&log);
        let mut state = EmState {
            theta: (1..=5).map(|r| 1.0 / r as f64).collect(),
            zeta: vec![0.5; imp.pairs.len()],
        };
        let mut ll = state.loglik(&imp);
        for _ in 0..30 {
            state = em_step(&imp, &state);
            let next = state.loglik(&imp);
            assert!(next >= ll - 1e-10);
            ll = next;
            assert!(state.theta.iter().chain(&state.zeta).all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn anchoring_preserves_products() {
        let (log, _, _) = simulated(2_000, 3);
        let cfg = EmConfig {
            max_iters: 5,
            tol: 0.0,
            ..Default::default()
        };
        let fit = em_fit(&log, &cfg).unwrap();
        let imp = Impressions::from_log(&log);
        let mut state = EmState {
            theta: (1..=5).map(|r| 1.0 / r as f64).collect(),
            zeta: vec![0.5; imp.pairs.len()],
        };
        for _ in 0..5 {
            state = em_step(&imp, &state);
        }
        assert_eq!(fit.theta[0], Some(1.0));
        for (i, &(q, d)) in imp.pairs.iter().enumerate() {
            for r in 0..5 {
                let before = state.theta[r] * state.zeta[i];
                let after = fit.theta[r].unwrap() * fit.zeta(q, d);
                assert!((before - after).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn recovers_examination() {
        let (log, _, _) = simulated(20_000, 5);
        let fit = em_fit(&log, &EmConfig::default()).unwrap();
        for (r, t) in fit.theta_filled().iter().enumerate() {
            assert!((t - 1.0 / (r + 1) as f64).abs() < 0.05, "rank {r}: {t}");
        }
    }

    #[test]
    fn absent_ranks_are_reported() {
        let log: InteractionLog = [rec(1, vec![0], vec![true])].into_iter().collect();
        let fit = em_fit(&log, &EmConfig::default()).unwrap();
        let q = Query::one_hot(1, 3);
        let m = fit.click_model(&[q], 3).unwrap();
        assert_eq!(m.theta(), &[1.0, 1.0, 1.0]);
        assert_eq!(m.zeta(1, 2).unwrap(), 0.5);
        assert!(em_fit(&InteractionLog::new(), &EmConfig::default()).is_err());
    }

    #[test]
    fn loglik_examples() {
        assert_eq!(em_loglik(&InteractionLog::new(), &[1.0], |_, _| 0.5), 0.0);
        let one: InteractionLog = [rec(1, vec![0], vec![true])].into_iter().collect();
        assert!((em_loglik(&one, &[1.0], |_, _| 0.5) - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(em_loglik(&one, &[1.0], |_, _| 0.0), f64::NEG_INFINITY);
        let (log, model, _) = simulated(5_000, 6);
        let truth = em_loglik(&log, model.theta(), |q, d| model.zeta(q, d).unwrap());
        let off = em_loglik(&log, model.theta(), |q, d| (model.zeta(q, d).unwrap() + 0.1).min(1.0));
        assert!(truth > off);
    }

    #[test]
    fn flat_round_trip() {
        let (log, _, _) = simulated(500, 7);
        let fit = em_fit(&log, &EmConfig::default()).unwrap();
        let back = EmFit::from_flat(&fit.to_flat()).unwrap();
        assert_eq!(back.theta, fit.theta);
        assert_eq!(back.zeta, fit.zeta);
    }
}
