use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::BufReader;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{DatasetSource, ExperimentConfig, MethodKind};
use crate::clicks::{build_click_model, sample_clicks};
use crate::dataset::{generate_synthetic, parse_letor, train_linear_ranker, Dataset, LinearRanker};
use crate::em::em_fit;
use crate::error::{Error, Result};
use crate::estimators::{ab_estimate, exposure, ips_estimate, metrics, Arm, EstimateSeries, ExposureTable, Metrics};
use crate::interleaving::{oi_plan, pi_expected_outcome, pi_interleave, tdi_interleave, tdi_outcome, PiConfig};
use crate::logopt::{optimize_logging_policy, train_logging_policy, VarianceContext};
use crate::model::{ClickModel, InteractionLog, InteractionRecord, Mode, Query, QueryDistribution, Ranking};
use crate::oracles::SmallInstance;
use crate::policy::{
    is_enumerable, sample_ranking, DeterministicPolicy, MixturePolicy, ScoreNetworkPolicy, UniformPolicy,
};

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub pair: usize,
    pub method: MethodKind,
    pub queries: u64,
    /// Absent on error rows.
    pub metrics: Option<Metrics>,
    pub true_delta: f64,
    pub delta_hat: Option<f64>,
    pub wall_clock: f64,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }
}

/// Random stream for one (pair, cell) of an experiment; cell 0 trains the
/// rankers, methods use their own codes.
pub fn cell_stream(seed: u64, pair: usize, cell: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + pair as u64 * 16 + cell);
    rng
}

fn dataset_stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dataset, true click model and ranker source shared by every pair.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    /// Queries with at least two documents.
    pub dataset: Dataset,
    pub truth: ClickModel,
}

/// Two deterministic rankers and their displays per query.
#[derive(Debug, Clone)]
pub struct PairSetup {
    pub index: usize,
    pub ranker1: DeterministicPolicy,
    pub ranker2: DeterministicPolicy,
    /// Complete orderings per query, in dataset order.
    pub full1: Vec<Ranking>,
    pub full2: Vec<Ranking>,
    /// Displayed top-k per query.
    pub shown1: Vec<Ranking>,
    pub shown2: Vec<Ranking>,
    /// Exact CTR difference under the uniform query distribution.
    pub true_delta: f64,
}

impl Experiment {
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (dataset, truth) = match &config.dataset {
            DatasetSource::Synthetic {
                queries,
                docs_per_query,
                feature_dim,
            } => {
                let data = generate_synthetic(
                    *queries,
                    *docs_per_query,
                    *feature_dim,
                    &mut dataset_stream(config.seed),
                )?;
                let truth = build_click_model(&data, &config.simulation)?.model;
                (data, truth)
            }
            DatasetSource::File(path) => {
                let data = parse_letor(BufReader::new(fs::File::open(path)?))?;
                let truth = build_click_model(&data, &config.simulation)?.model;
                (data, truth)
            }
            DatasetSource::Fixture => {
                let q = Query::one_hot(1, 3);
                let truth = ClickModel::new(vec![1.0, 0.9, 0.8], BTreeMap::from([(1, vec![0.1, 0.0, 1.0])]))?;
                (Dataset::new(vec![q])?, truth)
            }
        };
        let dataset = dataset.comparable()?;
        Ok(Experiment { config, dataset, truth })
    }

    pub fn display_length(&self) -> usize {
        self.truth.display_length()
    }

    pub fn queries(&self) -> &[Query] {
        &self.dataset.queries
    }

    fn rankers(&self, pair: usize) -> Result<(DeterministicPolicy, DeterministicPolicy)> {
        if self.config.dataset == DatasetSource::Fixture {
            return Ok((
                DeterministicPolicy::fixed([(1, vec![0, 1, 2])]),
                DeterministicPolicy::fixed([(1, vec![1, 2, 0])]),
            ));
        }
        if let Some(dir) = &self.config.rankers_dir {
            let load = |side: usize| -> Result<DeterministicPolicy> {
                let path = dir.join(format!("pair_{pair}_{side}.txt"));
                let text = fs::read_to_string(&path)?;
                Ok(DeterministicPolicy::linear(LinearRanker::from_weights_file(&text)?))
            };
            return Ok((load(1)?, load(2)?));
        }
        let (a, b) = self.train_rankers(pair)?;
        Ok((DeterministicPolicy::linear(a), DeterministicPolicy::linear(b)))
    }

    /// The two linear rankers of `pair`, trained on its own stream.
    pub fn train_rankers(&self, pair: usize) -> Result<(LinearRanker, LinearRanker)> {
        let mut rng = cell_stream(self.config.seed, pair, 0);
        let a = train_linear_ranker(
            &self.dataset,
            self.config.train_queries,
            self.config.feature_fraction,
            &mut rng,
        )?;
        let b = train_linear_ranker(
            &self.dataset,
            self.config.train_queries,
            self.config.feature_fraction,
            &mut rng,
        )?;
        Ok((a, b))
    }

    pub fn pair(&self, index: usize) -> Result<PairSetup> {
        let (ranker1, ranker2) = self.rankers(index)?;
        let k = self.display_length();
        let orders = |r: &DeterministicPolicy| -> Result<Vec<Ranking>> {
            self.queries().iter().map(|q| Ranking::new(r.order_for(q)?)).collect()
        };
        let full1 = orders(&ranker1)?;
        let full2 = orders(&ranker2)?;
        let shown1: Vec<Ranking> = full1.iter().map(|r| r.truncated(k)).collect();
        let shown2: Vec<Ranking> = full2.iter().map(|r| r.truncated(k)).collect();
        let theta = self.truth.theta();
        let mut total = 0.0;
        for (q, (a, b)) in self.queries().iter().zip(shown1.iter().zip(&shown2)) {
            let z = self.truth.zeta_for(q.id)?;
            let ctr = |r: &Ranking| r.docs().iter().zip(theta).map(|(&d, t)| t * z[d]).sum::<f64>();
            total += ctr(a) - ctr(b);
        }
        Ok(PairSetup {
            index,
            ranker1,
            ranker2,
            full1,
            full2,
            shown1,
            shown2,
            true_delta: total / self.queries().len() as f64,
        })
    }

    /// The pair restated as one oracle instance per query, for queries small
    /// enough to enumerate.
    pub fn oracle_instances(&self, pair: &PairSetup) -> Result<Vec<SmallInstance>> {
        self.queries()
            .iter()
            .enumerate()
            .map(|(i, q)| {
                SmallInstance::new(
                    self.truth.theta().to_vec(),
                    self.truth.zeta_for(q.id)?.to_vec(),
                    pair.full1[i].clone(),
                    pair.full2[i].clone(),
                )
            })
            .collect()
    }

    fn exposure_difference(&self, pair: &PairSetup, qi: usize, theta: &[f64]) -> Vec<f64> {
        let mut lambda = vec![0.0; self.queries()[qi].num_docs()];
        for (&d, t) in pair.shown1[qi].docs().iter().zip(theta) {
            lambda[d] += t;
        }
        for (&d, t) in pair.shown2[qi].docs().iter().zip(theta) {
            lambda[d] -= t;
        }
        lambda
    }
}

/// Runs every (pair, method) cell. Rows come out in pair order, then in
/// the configured method order, then by checkpoint, whatever the thread count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let exp = Experiment::prepare(config.clone())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker threads: {e}")))?;
    let per_pair: Vec<Vec<ResultRow>> =
        pool.install(|| (0..config.pairs).into_par_iter().map(|p| run_pair(&exp, p)).collect());
    Ok(per_pair.into_iter().flatten().collect())
}

fn error_row(pair: usize, method: MethodKind, true_delta: f64, e: &Error) -> ResultRow {
    ResultRow {
        pair,
        method,
        queries: 0,
        metrics: None,
        true_delta,
        delta_hat: None,
        wall_clock: 0.0,
        error: Some(e.to_string()),
    }
}

pub fn run_pair(exp: &Experiment, index: usize) -> Vec<ResultRow> {
    let setup = match exp.pair(index) {
        Ok(s) => s,
        Err(e) => {
            return exp
                .config
                .methods
                .iter()
                .map(|&m| error_row(index, m, f64::NAN, &e))
                .collect()
        }
    };
    let mut rows = Vec::new();
    for &method in &exp.config.methods {
        let mut rng = cell_stream(exp.config.seed, index, method.code());
        match run_cell(exp, &setup, method, &mut rng) {
            Ok(r) => rows.extend(r),
            Err(e) => rows.push(error_row(index, method, setup.true_delta, &e)),
        }
    }
    rows
}

/// Emits rows at checkpoints while a method streams estimates.
struct Checkpoints<'a> {
    exp: &'a Experiment,
    setup: &'a PairSetup,
    method: MethodKind,
    next: usize,
    start: Instant,
    rows: Vec<ResultRow>,
}

impl<'a> Checkpoints<'a> {
    fn new(exp: &'a Experiment, setup: &'a PairSetup, method: MethodKind) -> Self {
        Checkpoints {
            exp,
            setup,
            method,
            next: 0,
            start: Instant::now(),
            rows: Vec::new(),
        }
    }

    fn due(&self, queries: u64) -> bool {
        self.exp.config.checkpoints.get(self.next) == Some(&queries)
    }

    fn emit(&mut self, queries: u64, series: &EstimateSeries) -> Result<()> {
        let m = metrics(series, self.setup.true_delta)?;
        self.rows.push(ResultRow {
            pair: self.setup.index,
            method: self.method,
            queries,
            metrics: Some(m),
            true_delta: self.setup.true_delta,
            delta_hat: Some(series.mean()),
            wall_clock: if self.exp.config.timing {
                self.start.elapsed().as_secs_f64()
            } else {
                0.0
            },
            error: None,
        });
        self.next += 1;
        Ok(())
    }
}

/// A logging policy used to collect data for IPS.
enum Logger {
    Uniform,
    Ab(f64),
    Trained(MixturePolicy<ScoreNetworkPolicy>),
}

impl Logger {
    fn sample(&self, exp: &Experiment, setup: &PairSetup, qi: usize, rng: &mut ChaCha8Rng) -> Result<Ranking> {
        let k = exp.display_length();
        let q = &exp.queries()[qi];
        match self {
            Logger::Uniform => sample_ranking(&UniformPolicy, q, k, rng),
            Logger::Ab(p) => Ok(if rng.random::<f64>() < *p {
                setup.shown1[qi].clone()
            } else {
                setup.shown2[qi].clone()
            }),
            Logger::Trained(policy) => sample_ranking(policy, q, k, rng),
        }
    }

    /// Examination propensity of every document under `theta`.
    fn rho(
        &self,
        exp: &Experiment,
        setup: &PairSetup,
        qi: usize,
        theta: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        let q = &exp.queries()[qi];
        let n = q.num_docs();
        let mut rho = vec![0.0; n];
        match self {
            Logger::Uniform => {
                let total: f64 = theta.iter().take(n).sum();
                rho.iter_mut().for_each(|r| *r = total / n as f64);
            }
            Logger::Ab(p) => {
                for (&d, t) in setup.shown1[qi].docs().iter().zip(theta) {
                    rho[d] += p * t;
                }
                for (&d, t) in setup.shown2[qi].docs().iter().zip(theta) {
                    rho[d] += (1.0 - p) * t;
                }
            }
            Logger::Trained(policy) => {
                let mode = if is_enumerable(n, theta.len()) {
                    Mode::Exact
                } else {
                    Mode::MonteCarlo {
                        samples: exp.config.exposure_samples,
                    }
                };
                rho = exposure(policy, q, theta, mode, rng)?.0;
            }
        }
        Ok(rho)
    }
}

fn run_cell(exp: &Experiment, setup: &PairSetup, method: MethodKind, rng: &mut ChaCha8Rng) -> Result<Vec<ResultRow>> {
    let cfg = &exp.config;
    let k = exp.display_length();
    let truth = &exp.truth;
    let queries = exp.queries();
    match method {
        MethodKind::Ab => {
            let p = cfg.ab_prob;
            stream(exp, setup, method, rng, |rng, qi| {
                let (arm, shown) = if rng.random::<f64>() < p {
                    (Arm::One, &setup.shown1[qi])
                } else {
                    (Arm::Two, &setup.shown2[qi])
                };
                let q = &queries[qi];
                let clicks = sample_clicks(shown, q, truth, rng)?;
                ab_estimate(&InteractionRecord::new(q.id, shown.clone(), clicks)?, arm, p)
            })
        }
        MethodKind::Tdi => stream(exp, setup, method, rng, |rng, qi| {
            let result = tdi_interleave(&setup.full1[qi], &setup.full2[qi], k, rng)?;
            let clicks = sample_clicks(&result.ranking, &queries[qi], truth, rng)?;
            Ok(f64::from(tdi_outcome(&result, &clicks)?))
        }),
        MethodKind::Pi => {
            let pc = PiConfig { tau: cfg.pi_tau };
            stream(exp, setup, method, rng, |rng, qi| {
                let (r1, r2) = (&setup.full1[qi], &setup.full2[qi]);
                let shown = pi_interleave(r1, r2, &pc, k, rng)?;
                let clicks = sample_clicks(&shown, &queries[qi], truth, rng)?;
                pi_expected_outcome(&shown, &clicks, r1, r2, &pc)
            })
        }
        MethodKind::Oi => {
            let plans = setup
                .full1
                .iter()
                .zip(&setup.full2)
                .map(|(a, b)| oi_plan(a, b, truth.theta()))
                .collect::<Result<Vec<_>>>()?;
            stream(exp, setup, method, rng, |rng, qi| {
                let plan = &plans[qi];
                let shown = plan.sample(rng);
                let clicks = sample_clicks(shown, &queries[qi], truth, rng)?;
                Ok(plan.clicked_credit(shown.docs(), &clicks))
            })
        }
        MethodKind::IpsUniform => ips_fixed(exp, setup, method, Logger::Uniform, rng),
        MethodKind::IpsAb => ips_fixed(exp, setup, method, Logger::Ab(cfg.ab_prob), rng),
        MethodKind::IpsOracleLogopt => {
            let lambda: BTreeMap<u64, Vec<f64>> = queries
                .iter()
                .enumerate()
                .map(|(qi, q)| (q.id, exp.exposure_difference(setup, qi, truth.theta())))
                .collect();
            let ctx =
                VarianceContext::new(setup.true_delta, truth.clone(), lambda)?.with_samples(cfg.gradient_samples)?;
            let dist = QueryDistribution::uniform(queries.to_vec())?;
            let trained = train_logging_policy(&dist, &ctx, &cfg.optimizer, rng)?;
            ips_fixed(exp, setup, method, Logger::Trained(trained.policy), rng)
        }
        MethodKind::IpsLogopt => ips_logopt(exp, setup, rng),
    }
}

/// Draws `budget` queries uniformly and feeds each to `step`.
fn stream<F>(
    exp: &Experiment,
    setup: &PairSetup,
    method: MethodKind,
    rng: &mut ChaCha8Rng,
    mut step: F,
) -> Result<Vec<ResultRow>>
where
    F: FnMut(&mut ChaCha8Rng, usize) -> Result<f64>,
{
    let nq = exp.queries().len();
    let mut cp = Checkpoints::new(exp, setup, method);
    let mut series = EstimateSeries::new();
    for i in 1..=exp.config.budget {
        let qi = rng.random_range(0..nq);
        series.push(step(rng, qi)?);
        if cp.due(i) {
            cp.emit(i, &series)?;
        }
    }
    Ok(cp.rows)
}

/// IPS with a logging policy fixed for the whole run and the true examination.
fn ips_fixed(
    exp: &Experiment,
    setup: &PairSetup,
    method: MethodKind,
    logger: Logger,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ResultRow>> {
    let theta = exp.truth.theta();
    let tables = (0..exp.queries().len())
        .map(|qi| {
            let rho = logger.rho(exp, setup, qi, theta, rng)?;
            ExposureTable::new(exp.queries()[qi].id, rho, exp.exposure_difference(setup, qi, theta))
        })
        .collect::<Result<Vec<_>>>()?;
    let truth = &exp.truth;
    stream(exp, setup, method, rng, |rng, qi| {
        let q = &exp.queries()[qi];
        let shown = logger.sample(exp, setup, qi, rng)?;
        let clicks = sample_clicks(&shown, q, truth, rng)?;
        ips_estimate(&InteractionRecord::new(q.id, shown, clicks)?, &tables[qi])
    })
}

/// LogOpt run online: uniform logging until the first update point, then a
/// policy re-optimized from the whole log at every update point. Estimates
/// use the latest fitted examination; each record is weighted by the
/// propensity of the policy that logged it.
fn ips_logopt(exp: &Experiment, setup: &PairSetup, rng: &mut ChaCha8Rng) -> Result<Vec<ResultRow>> {
    let cfg = &exp.config;
    let queries = exp.queries();
    let k = exp.display_length();
    let index: HashMap<u64, usize> = queries.iter().enumerate().map(|(i, q)| (q.id, i)).collect();
    let updates: Vec<u64> = cfg
        .optimizer
        .update_schedule
        .iter()
        .copied()
        .filter(|&s| s < cfg.budget)
        .collect();
    let mut loggers = vec![Logger::Uniform];
    let mut epoch_of = Vec::with_capacity(cfg.budget as usize);
    let mut log = InteractionLog::new();
    let mut fit = None;
    let mut cp = Checkpoints::new(exp, setup, MethodKind::IpsLogopt);
    for i in 1..=cfg.budget {
        let qi = rng.random_range(0..queries.len());
        let q = &queries[qi];
        let shown = loggers.last().expect("uniform first").sample(exp, setup, qi, rng)?;
        let clicks = sample_clicks(&shown, q, &exp.truth, rng)?;
        log.push(InteractionRecord::new(q.id, shown, clicks)?);
        epoch_of.push(loggers.len() - 1);
        if updates.contains(&i) {
            let out = optimize_logging_policy(
                &log,
                queries,
                &setup.ranker1,
                &setup.ranker2,
                &cfg.optimizer,
                &cfg.em,
                cfg.gradient_samples,
                rng,
            )?;
            fit = Some(out.fit);
            loggers.push(Logger::Trained(out.policy));
        }
        if cp.due(i) {
            let current = match &fit {
                Some(f) => f.clone(),
                None => em_fit(&log, &cfg.em)?,
            };
            let theta = current.click_model(queries, k)?.theta().to_vec();
            let mut tables: HashMap<(usize, usize), ExposureTable> = HashMap::new();
            let mut series = EstimateSeries::new();
            for (rec, &epoch) in log.iter().zip(&epoch_of) {
                let qi = index[&rec.query_id];
                let table = match tables.entry((epoch, qi)) {
                    Entry::Occupied(e) => e.into_mut(),
                    Entry::Vacant(e) => {
                        let rho = loggers[epoch].rho(exp, setup, qi, &theta, rng)?;
                        e.insert(ExposureTable::new(
                            rec.query_id,
                            rho,
                            exp.exposure_difference(setup, qi, &theta),
                        )?)
                    }
                };
                series.push(ips_estimate(rec, table)?);
            }
            cp.emit(i, &series)?;
        }
    }
    Ok(cp.rows)
}
