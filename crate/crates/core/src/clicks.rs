//! Position-based click simulation.

use std::collections::BTreeMap;

use rand::Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{ClickModel, Query, Ranking};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    /// Examination at one-based rank r is r^(-bias_exponent).
    pub bias_exponent: f64,
    pub zeta_slope: f64,
    pub zeta_intercept: f64,
    pub display_length: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            bias_exponent: 1.0,
            zeta_slope: 0.225,
            zeta_intercept: 0.1,
            display_length: 5,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.display_length == 0 {
            return Err(Error::invalid("display length must be at least 1"));
        }
        if !(self.bias_exponent.is_finite() && self.bias_exponent >= 0.0) {
            return Err(Error::invalid("bias exponent must be finite and non-negative"));
        }
        if !self.zeta_slope.is_finite() || !self.zeta_intercept.is_finite() {
            return Err(Error::invalid("attraction map must be finite"));
        }
        Ok(())
    }

    pub fn theta(&self) -> Vec<f64> {
        (1..=self.display_length)
            .map(|r| (r as f64).powf(-self.bias_exponent))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedModel {
    pub model: ClickModel,
    /// Set when some attraction fell outside [0, 1] and was clamped.
    pub clamped: bool,
}

pub fn build_click_model(dataset: &Dataset, config: &SimulationConfig) -> Result<SimulatedModel> {
    config.validate()?;
    let mut clamped = false;
    let zeta: BTreeMap<u64, Vec<f64>> = dataset
        .queries
        .iter()
        .map(|q| {
            let z = q
                .labels
                .iter()
                .map(|&l| {
                    let raw = config.zeta_slope * l as f64 + config.zeta_intercept;
                    let z = raw.clamp(0.0, 1.0);
                    clamped |= z != raw;
                    z
                })
                .collect();
            (q.id, z)
        })
        .collect();
    Ok(SimulatedModel {
        model: ClickModel::new(config.theta(), zeta)?,
        clamped,
    })
}

/// Click probability at every position of a displayed ranking.
pub fn click_probs(ranking: &Ranking, query: &Query, model: &ClickModel) -> Result<Vec<f64>> {
    ranking.validate_for(query)?;
    let zeta = model.zeta_for(query.id)?;
    Ok(ranking
        .docs()
        .iter()
        .enumerate()
        .map(|(r, &d)| model.theta_at(r) * zeta[d])
        .collect())
}

/// Independent clicks per position; nothing past the display length is clicked.
pub fn sample_clicks<R: Rng + ?Sized>(
    ranking: &Ranking,
    query: &Query,
    model: &ClickModel,
    rng: &mut R,
) -> Result<Vec<bool>> {
    Ok(click_probs(ranking, query, model)?
        .into_iter()
        .map(|p| p > 0.0 && rng.random::<f64>() < p)
        .collect())
}

pub fn click_pattern_prob(pattern: &[bool], ranking: &Ranking, query: &Query, model: &ClickModel) -> Result<f64> {
    if pattern.len() != ranking.len() {
        return Err(Error::invalid(format!(
            "click pattern has {} entries for a ranking of length {}",
            pattern.len(),
            ranking.len()
        )));
    }
    Ok(click_probs(ranking, query, model)?
        .iter()
        .zip(pattern)
        .map(|(p, &c)| if c { *p } else { 1.0 - p })
        .product())
}

/// Every click pattern with nonzero probability on `ranking`, skipping
/// positions that can never be clicked.
pub fn enumerate_click_patterns(ranking: &Ranking, query: &Query, model: &ClickModel) -> Result<Vec<(Vec<bool>, f64)>> {
    let probs = click_probs(ranking, query, model)?;
    let mut out = vec![(Vec::with_capacity(probs.len()), 1.0)];
    for p in probs {
        let mut next = Vec::with_capacity(out.len() * 2);
        for (pattern, w) in out {
            if p < 1.0 {
                let mut a = pattern.clone();
                a.push(false);
                next.push((a, w * (1.0 - p)));
            }
            if p > 0.0 {
                let mut b = pattern;
                b.push(true);
                next.push((b, w * p));
            }
        }
        out = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Three documents A, B, C with θ = (1, 0.9, 0.8) and ζ = (0.1, 0, 1).
    fn tdi_fixture() -> (Query, ClickModel) {
        let q = Query::one_hot(1, 3);
        let m = ClickModel::new(vec![1.0, 0.9, 0.8], BTreeMap::from([(1, vec![0.1, 0.0, 1.0])])).unwrap();
        (q, m)
    }

    #[test]
    fn default_parameters() {
        let q = Query::new(1, vec![vec![0.0]; 5], vec![0, 1, 2, 3, 4]).unwrap();
        let d = Dataset::new(vec![q]).unwrap();
        let cfg = SimulationConfig {
            display_length: 4,
            ..Default::default()
        };
        let sim = build_click_model(&d, &cfg).unwrap();
        assert_eq!(sim.model.theta_at(0), 1.0);
        assert_eq!(sim.model.theta_at(3), 0.25);
        assert_eq!(sim.model.zeta(1, 4).unwrap(), 1.0);
        assert_eq!(sim.model.zeta(1, 0).unwrap(), 0.1);
        assert!(!sim.clamped);
        let cfg = SimulationConfig {
            display_length: 2,
            ..Default::default()
        };
        assert_eq!(build_click_model(&d, &cfg).unwrap().model.theta_at(2), 0.0);
        let cfg = SimulationConfig {
            zeta_slope: 0.3,
            ..Default::default()
        };
        let sim = build_click_model(&d, &cfg).unwrap();
        assert!(sim.clamped);
        assert_eq!(sim.model.zeta(1, 4).unwrap(), 1.0);
    }

    #[test]
    fn certain_and_impossible_clicks() {
        let q = Query::one_hot(1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let none = ClickModel::new(vec![1.0, 1.0], BTreeMap::from([(1, vec![0.0, 0.0])])).unwrap();
        let r = Ranking::new(vec![1, 0]).unwrap();
        assert_eq!(sample_clicks(&r, &q, &none, &mut rng).unwrap(), vec![false, false]);
        assert_eq!(click_pattern_prob(&[false, false], &r, &q, &none).unwrap(), 1.0);
        let sure = ClickModel::new(vec![1.0], BTreeMap::from([(1, vec![1.0, 1.0])])).unwrap();
        for _ in 0..100 {
            assert_eq!(sample_clicks(&r, &q, &sure, &mut rng).unwrap(), vec![true, false]);
        }
    }

    #[test]
    fn pattern_probability_by_hand() {
        let (q, m) = tdi_fixture();
        let r = Ranking::new(vec![0, 1, 2]).unwrap();
        let p = click_pattern_prob(&[false, false, true], &r, &q, &m).unwrap();
        assert!((p - 0.72).abs() < 1e-12);
        assert!(click_pattern_prob(&[true], &r, &q, &m).is_err());
    }

    #[test]
    fn sampled_click_rate() {
        let (q, m) = tdi_fixture();
        let r = Ranking::new(vec![0, 1, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| sample_clicks(&r, &q, &m, &mut rng).unwrap()[2])
            .count();
        assert!((hits as f64 / n as f64 - 0.8).abs() < 0.01);
    }

    #[test]
    fn enumerated_patterns_normalize() {
        let (q, m) = tdi_fixture();
        let r = Ranking::new(vec![2, 0, 1]).unwrap();
        let pats = enumerate_click_patterns(&r, &q, &m).unwrap();
        let total: f64 = pats.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (pat, p) in &pats {
            assert!((click_pattern_prob(pat, &r, &q, &m).unwrap() - p).abs() < 1e-15);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn all_patterns_sum_to_one(
                theta in proptest::collection::vec(0.0f64..=1.0, 1..5),
                zeta in proptest::collection::vec(0.0f64..=1.0, 5),
            ) {
                let q = Query::one_hot(3, 5);
                let m = ClickModel::new(theta, BTreeMap::from([(3, zeta)])).unwrap();
                let r = Ranking::new(vec![4, 2, 0, 1, 3]).unwrap();
                let mut total = 0.0;
                for mask in 0u32..32 {
                    let pat: Vec<bool> = (0..5).map(|i| mask >> i & 1 == 1).collect();
                    total += click_pattern_prob(&pat, &r, &q, &m).unwrap();
                }
                prop_assert!((total - 1.0).abs() < 1e-12);
            }

            #[test]
            fn nothing_clicked_past_display(seed in 0u64..1000, k in 1usize..4) {
                let q = Query::one_hot(1, 5);
                let m = ClickModel::new(vec![1.0; k], BTreeMap::from([(1, vec![1.0; 5])])).unwrap();
                let r = Ranking::new(vec![0, 1, 2, 3, 4]).unwrap();
                let c = sample_clicks(&r, &q, &m, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                prop_assert!(c[k..].iter().all(|&x| !x));
            }
        }
    }
}
