//! Brute-force and closed-form expectations for small instances, used to
//! check every estimator and interleaving method exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{ab_estimate, ips_estimate, Arm, ExposureTable};
use crate::interleaving::{
    oi_outcome, oi_plan, pi_enumerate, pi_expected_outcome, tdi_enumerate, tdi_outcome, PiConfig,
};
use crate::model::{ClickModel, DocId, InteractionRecord, Query, Ranking};
use crate::policy::{enumerate_rankings, Policy};

pub const MAX_ORACLE_DOCS: usize = 5;

/// Document ids of the three-document construction.
pub const DOC_A: DocId = 0;
pub const DOC_B: DocId = 1;
pub const DOC_C: DocId = 2;

/// One query, explicit click parameters, two deterministic rankers.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallInstance {
    pub query: Query,
    /// Examination per displayed rank; its length is the display length.
    pub theta: Vec<f64>,
    pub zeta: Vec<f64>,
    pub ranker1: Ranking,
    pub ranker2: Ranking,
}

impl SmallInstance {
    pub fn new(theta: Vec<f64>, zeta: Vec<f64>, ranker1: Ranking, ranker2: Ranking) -> Result<Self> {
        let n = zeta.len();
        if n == 0 || n > MAX_ORACLE_DOCS {
            return Err(Error::invalid(format!(
                "oracle instances hold 1 to {MAX_ORACLE_DOCS} documents, got {n}"
            )));
        }
        if theta.is_empty() || theta.len() > MAX_ORACLE_DOCS {
            return Err(Error::invalid(format!(
                "display length {} outside 1..={MAX_ORACLE_DOCS}",
                theta.len()
            )));
        }
        for r in [&ranker1, &ranker2] {
            let mut seen = vec![false; n];
            for &d in r.docs() {
                if d >= n {
                    return Err(Error::invalid(format!("ranker places unknown document {d}")));
                }
                seen[d] = true;
            }
            if seen.iter().any(|s| !s) {
                return Err(Error::invalid("each ranker must order every document"));
            }
        }
        let query = Query::one_hot(1, n);
        // validates the probabilities
        ClickModel::new(theta.clone(), BTreeMap::from([(query.id, zeta.clone())]))?;
        Ok(SmallInstance {
            query,
            theta,
            zeta,
            ranker1,
            ranker2,
        })
    }

    /// The three-document shape: ranker one shows A, B, C; ranker two shows
    /// B, C, A; B is never attractive.
    pub fn three_doc(theta: [f64; 3], zeta_a: f64, zeta_c: f64) -> Result<Self> {
        SmallInstance::new(
            theta.to_vec(),
            vec![zeta_a, 0.0, zeta_c],
            Ranking::new(vec![DOC_A, DOC_B, DOC_C])?,
            Ranking::new(vec![DOC_B, DOC_C, DOC_A])?,
        )
    }

    pub fn num_docs(&self) -> usize {
        self.zeta.len()
    }

    pub fn display_length(&self) -> usize {
        self.theta.len().min(self.num_docs())
    }

    pub fn click_model(&self) -> ClickModel {
        ClickModel::new(self.theta.clone(), BTreeMap::from([(self.query.id, self.zeta.clone())]))
            .expect("validated on construction")
    }

    fn ctr(&self, ranking: &Ranking) -> f64 {
        ranking
            .docs()
            .iter()
            .zip(&self.theta)
            .map(|(&d, t)| t * self.zeta[d])
            .sum()
    }

    /// True CTR difference of the two rankers.
    pub fn delta(&self) -> f64 {
        self.ctr(&self.ranker1) - self.ctr(&self.ranker2)
    }

    fn shown(&self, ranker: &Ranking) -> Ranking {
        ranker.truncated(self.display_length())
    }

    /// Every click pattern on `ranking` with nonzero probability.
    fn patterns(&self, ranking: &Ranking) -> Vec<(Vec<bool>, f64)> {
        let len = ranking.len();
        (0..1u32 << len)
            .filter_map(|bits| {
                let mut p = 1.0;
                let clicks: Vec<bool> = (0..len).map(|i| bits >> i & 1 == 1).collect();
                for (i, (&d, &c)) in ranking.docs().iter().zip(&clicks).enumerate() {
                    let q = self.theta[i] * self.zeta[d];
                    p *= if c { q } else { 1.0 - q };
                }
                (p > 0.0).then_some((clicks, p))
            })
            .collect()
    }

    fn expect_clicks<F>(&self, ranking: &Ranking, mut f: F) -> Result<f64>
    where
        F: FnMut(&[bool]) -> Result<f64>,
    {
        let mut total = 0.0;
        for (clicks, p) in self.patterns(ranking) {
            total += p * f(&clicks)?;
        }
        Ok(total)
    }
}

#[derive(Clone, Copy)]
pub enum OracleMethod<'a> {
    /// A/B test assigning ranker one with this probability.
    Ab(f64),
    Tdi,
    Pi(PiConfig),
    Oi,
    /// IPS with data logged by the given policy.
    Ips(&'a dyn Policy),
}

impl OracleMethod<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            OracleMethod::Ab(_) => "ab",
            OracleMethod::Tdi => "tdi",
            OracleMethod::Pi(_) => "pi",
            OracleMethod::Oi => "oi",
            OracleMethod::Ips(_) => "ips",
        }
    }
}

/// Exact expectation of one interaction's estimate, over every random
/// choice the method makes and every click pattern.
pub fn enum_expected_outcome(method: OracleMethod<'_>, instance: &SmallInstance) -> Result<f64> {
    let len = instance.display_length();
    let (r1, r2) = (&instance.ranker1, &instance.ranker2);
    let record = |ranking: &Ranking, clicks: &[bool]| {
        InteractionRecord::new(instance.query.id, ranking.clone(), clicks.to_vec())
    };
    match method {
        OracleMethod::Ab(prob_1) => {
            let mut total = 0.0;
            for (arm, ranker, p) in [(Arm::One, r1, prob_1), (Arm::Two, r2, 1.0 - prob_1)] {
                let shown = instance.shown(ranker);
                total += p * instance.expect_clicks(&shown, |c| ab_estimate(&record(&shown, c)?, arm, prob_1))?;
            }
            Ok(total)
        }
        OracleMethod::Tdi => {
            let mut total = 0.0;
            for (result, p) in tdi_enumerate(r1, r2, len)? {
                total += p * instance.expect_clicks(&result.ranking, |c| Ok(f64::from(tdi_outcome(&result, c)?)))?;
            }
            Ok(total)
        }
        OracleMethod::Pi(config) => {
            let mut total = 0.0;
            for (shown, p) in pi_enumerate(r1, r2, &config, len)? {
                total += p * instance.expect_clicks(&shown, |c| pi_expected_outcome(&shown, c, r1, r2, &config))?;
            }
            Ok(total)
        }
        OracleMethod::Oi => {
            let plan = oi_plan(r1, r2, &instance.theta)?;
            let mut total = 0.0;
            for (shown, p) in plan.allowed.iter().zip(&plan.probs) {
                if *p > 0.0 {
                    total += p * instance.expect_clicks(shown, |c| oi_outcome(&plan, shown, c))?;
                }
            }
            Ok(total)
        }
        OracleMethod::Ips(logging) => {
            let n = instance.num_docs();
            let rankings = enumerate_rankings(logging, &instance.query, len)?;
            let mut rho = vec![0.0; n];
            for (ranking, p) in &rankings {
                for (&d, t) in ranking.docs().iter().zip(&instance.theta) {
                    rho[d] += p * t;
                }
            }
            let mut lambda = vec![0.0; n];
            for (&d, t) in instance.shown(r1).docs().iter().zip(&instance.theta) {
                lambda[d] += t;
            }
            for (&d, t) in instance.shown(r2).docs().iter().zip(&instance.theta) {
                lambda[d] -= t;
            }
            let table = ExposureTable::new(instance.query.id, rho, lambda)?;
            let mut total = 0.0;
            for (ranking, p) in &rankings {
                total += p * instance.expect_clicks(ranking, |c| ips_estimate(&record(ranking, c)?, &table))?;
            }
            Ok(total)
        }
    }
}

fn check_three_doc_shape(instance: &SmallInstance) -> Result<(f64, f64, f64, f64, f64)> {
    let ok = instance.num_docs() == 3
        && instance.theta.len() == 3
        && instance.zeta[DOC_B] == 0.0
        && instance.ranker1.docs() == [DOC_A, DOC_B, DOC_C]
        && instance.ranker2.docs() == [DOC_B, DOC_C, DOC_A];
    if !ok {
        return Err(Error::invalid("closed forms need the three-document shape"));
    }
    let t = &instance.theta;
    Ok((t[0], t[1], t[2], instance.zeta[DOC_A], instance.zeta[DOC_C]))
}

/// Team-draft expected outcome on the three-document shape, written out by
/// hand over its four coin-flip branches.
pub fn tdi_closed_form(instance: &SmallInstance) -> Result<f64> {
    let (t1, t2, t3, za, zc) = check_three_doc_shape(instance)?;
    Ok(0.25 * (t1 * za + t1 * za * (1.0 - t3 * zc) + t2 * za + t2 * za * (1.0 - t3 * zc)))
}

/// Optimized-interleaving expected credit on the three-document shape under
/// its uniform plan.
pub fn oi_closed_form(instance: &SmallInstance) -> Result<f64> {
    let (t1, t2, t3, za, zc) = check_three_doc_shape(instance)?;
    Ok((2.0 * (t1 + t2 + t3) * za - (t2 + 2.0 * t3) * zc) / 3.0)
}

/// Parameter grid over the three-document shape with θ₁ = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrid {
    pub theta2: Vec<f64>,
    pub theta3: Vec<f64>,
    pub zeta_a: Vec<f64>,
    pub zeta_c: Vec<f64>,
}

impl Default for ParamGrid {
    fn default() -> Self {
        let thetas: Vec<f64> = (1..=20).map(|i| i as f64 / 20.0).collect();
        let zetas: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        ParamGrid {
            theta2: thetas.clone(),
            theta3: thetas,
            zeta_a: zetas.clone(),
            zeta_c: zetas,
        }
    }
}

impl ParamGrid {
    /// Grid points in a fixed order, keeping only monotone θ.
    pub fn instances(&self) -> Result<Vec<SmallInstance>> {
        let mut out = Vec::new();
        for &t2 in &self.theta2 {
            for &t3 in self.theta3.iter().filter(|&&t3| t3 <= t2) {
                for &za in &self.zeta_a {
                    for &zc in &self.zeta_c {
                        out.push(SmallInstance::three_doc([1.0, t2, t3], za, zc)?);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Tolerance below which a delta or an expected outcome counts as zero.
pub const SIGN_TOL: f64 = 1e-12;

fn sign(x: f64) -> i8 {
    if x > SIGN_TOL {
        1
    } else if x < -SIGN_TOL {
        -1
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignFlip {
    pub instance: SmallInstance,
    pub delta: f64,
    pub expected: f64,
}

/// Grid points where the method's expected outcome disagrees in sign with a
/// nonzero true difference, in grid order.
pub fn find_sign_flip(method: OracleMethod<'_>, grid: &ParamGrid) -> Result<Vec<SignFlip>> {
    let found: Vec<Option<SignFlip>> = grid
        .instances()?
        .into_par_iter()
        .map(|instance| {
            let delta = instance.delta();
            if sign(delta) == 0 {
                return Ok(None);
            }
            let expected = enum_expected_outcome(method, &instance)?;
            Ok((sign(expected) != sign(delta)).then_some(SignFlip {
                instance,
                delta,
                expected,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(found.into_iter().flatten().collect())
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(";")
}

/// `method,theta,zeta,delta,expected` with `;`-separated vectors.
pub fn sign_flips_csv(method: &str, flips: &[SignFlip]) -> String {
    let mut out = String::from("method,theta,zeta,delta,expected\n");
    for f in flips {
        let _ = writeln!(
            out,
            "{method},{},{},{:.6e},{:.6e}",
            join(&f.instance.theta),
            join(&f.instance.zeta),
            f.delta,
            f.expected
        );
    }
    out
}
