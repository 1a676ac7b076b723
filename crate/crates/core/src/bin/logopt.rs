use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use logopt_core::dataset::{parse_letor, write_letor, LinearRanker};
use logopt_core::harness::{
    curves_svg, parse_results_csv, results_csv, run_experiment, summarize, summary_csv, Experiment, ExperimentConfig,
};
use logopt_core::interleaving::{pi_enumerate, pi_posteriors, PiConfig};
use logopt_core::logopt::{optimize_logging_policy, write_trace_csv};
use logopt_core::model::InteractionLog;
use logopt_core::oracles::{
    enum_expected_outcome, find_sign_flip, oi_closed_form, sign_flips_csv, tdi_closed_form, OracleMethod, ParamGrid,
    SmallInstance,
};
use logopt_core::policy::DeterministicPolicy;
use logopt_core::Result;

/// Compare rankers from simulated clicks and design logging policies for
/// counterfactual evaluation.
#[derive(Parser)]
#[command(name = "logopt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Line-oriented `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured method on every ranker pair.
    Compare(Common),
    /// Fit the click model to an interaction log and train a logging policy.
    Logopt {
        #[command(flatten)]
        common: Common,
        /// Interaction log, one `qid<TAB>docs<TAB>clicks` record per line.
        #[arg(long)]
        log: PathBuf,
        /// Query features in LETOR format.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        ranker1: PathBuf,
        #[arg(long)]
        ranker2: PathBuf,
    },
    /// Evaluate the three-document fixtures and grid-search for sign flips.
    Oracle(Common),
    /// Write the configured dataset and trained ranker pairs.
    GenRankers(Common),
    /// Summarize an existing results file.
    Summarize {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::parse(&fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    for s in &common.set {
        config.set_pair(s)?;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(threads) = common.threads {
        config.threads = threads;
    }
    config.validate()?;
    Ok(config)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn compare(common: &Common) -> Result<()> {
    let config = load_config(common)?;
    let rows = run_experiment(&config)?;
    write(&common.out, "config.txt", &config.to_text())?;
    write(&common.out, "results.csv", &results_csv(&rows))?;
    let summary = summarize(&rows)?;
    write(&common.out, "summary.csv", &summary_csv(&summary))?;
    write(&common.out, "curves.svg", &curves_svg(&summary))?;
    let errors = rows.iter().filter(|r| r.is_error()).count();
    println!(
        "{} rows ({errors} errors) written to {}",
        rows.len(),
        common.out.display()
    );
    Ok(())
}

fn logopt(common: &Common, log: &Path, dataset: &Path, r1: &Path, r2: &Path) -> Result<()> {
    let config = load_config(common)?;
    let log = InteractionLog::parse(BufReader::new(fs::File::open(log)?))?;
    let data = parse_letor(BufReader::new(fs::File::open(dataset)?))?;
    let ranker = |p: &Path| -> Result<DeterministicPolicy> {
        Ok(DeterministicPolicy::linear(LinearRanker::from_weights_file(
            &fs::read_to_string(p)?,
        )?))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let out = optimize_logging_policy(
        &log,
        &data.queries,
        &ranker(r1)?,
        &ranker(r2)?,
        &config.optimizer,
        &config.em,
        config.gradient_samples,
        &mut rng,
    )?;
    write(&common.out, "policy.txt", &out.policy.base.to_flat())?;
    write(&common.out, "fit.txt", &out.fit.to_flat())?;
    write(&common.out, "trace.csv", &write_trace_csv(&out.trace))?;
    println!(
        "estimated delta {:.6}, epsilon {}, {} steps; written to {}",
        out.context.delta,
        out.policy.epsilon(),
        out.trace.len(),
        common.out.display()
    );
    Ok(())
}

fn report_instance(name: &str, inst: &SmallInstance) -> Result<()> {
    println!(
        "{name}: theta {:?}, zeta {:?}, delta {:+.6}",
        inst.theta,
        inst.zeta,
        inst.delta()
    );
    for method in [
        OracleMethod::Tdi,
        OracleMethod::Pi(PiConfig::default()),
        OracleMethod::Oi,
    ] {
        println!(
            "  {:>4} expected outcome {:+.6}",
            method.name(),
            enum_expected_outcome(method, inst)?
        );
    }
    Ok(())
}

fn oracle(common: &Common) -> Result<()> {
    let config = load_config(common)?;
    let tdi_fix = SmallInstance::three_doc([1.0, 0.9, 0.8], 0.1, 1.0)?;
    report_instance("tdi fixture", &tdi_fix)?;
    println!("  tdi closed form {:+.6}", tdi_closed_form(&tdi_fix)?);

    let pi_fix = SmallInstance::three_doc([1.0, 0.9, 0.3], 0.5, 1.0)?;
    report_instance("pi fixture", &pi_fix)?;
    let pc = PiConfig { tau: config.pi_tau };
    for (r, p) in pi_enumerate(&pi_fix.ranker1, &pi_fix.ranker2, &pc, 3)? {
        let post = pi_posteriors(&r, &pi_fix.ranker1, &pi_fix.ranker2, &pc)?;
        let names: String = r.docs().iter().map(|&d| (b'A' + d as u8) as char).collect();
        println!(
            "  {names} prob {p:.4} posteriors {:?}",
            post.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>()
        );
    }

    for (name, inst) in [
        ("oi no flip", SmallInstance::three_doc([1.0, 0.9, 0.9], 0.5, 1.0)?),
        ("oi flip", SmallInstance::three_doc([1.0, 0.31, 0.3], 0.1, 1.0)?),
    ] {
        report_instance(name, &inst)?;
        println!("  oi closed form {:+.6}", oi_closed_form(&inst)?);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| logopt_core::Error::InvalidInput(e.to_string()))?;
    let grid = ParamGrid::default();
    for method in [OracleMethod::Tdi, OracleMethod::Pi(pc), OracleMethod::Oi] {
        let flips = pool.install(|| find_sign_flip(method, &grid))?;
        let name = method.name();
        write(
            &common.out,
            &format!("sign_flips_{name}.csv"),
            &sign_flips_csv(name, &flips),
        )?;
        println!("{name}: {} sign flips on the grid", flips.len());
    }
    Ok(())
}

fn gen_rankers(common: &Common) -> Result<()> {
    let config = load_config(common)?;
    let exp = Experiment::prepare(config.clone())?;
    write(&common.out, "dataset.txt", &write_letor(&exp.dataset))?;
    for pair in 0..config.pairs {
        let (a, b) = exp.train_rankers(pair)?;
        write(&common.out, &format!("pair_{pair}_1.txt"), &a.to_weights_file())?;
        write(&common.out, &format!("pair_{pair}_2.txt"), &b.to_weights_file())?;
    }
    println!("{} ranker pairs written to {}", config.pairs, common.out.display());
    Ok(())
}

fn summarize_file(results: &Path, out: &Path) -> Result<()> {
    let rows = parse_results_csv(&fs::read_to_string(results)?)?;
    let summary = summarize(&rows)?;
    write(out, "summary.csv", &summary_csv(&summary))?;
    write(out, "curves.svg", &curves_svg(&summary))?;
    print!("{}", summary_csv(&summary));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Compare(c) => compare(c),
        Command::Logopt {
            common,
            log,
            dataset,
            ranker1,
            ranker2,
        } => logopt(common, log, dataset, ranker1, ranker2),
        Command::Oracle(c) => oracle(c),
        Command::GenRankers(c) => gen_rankers(c),
        Command::Summarize { results, out } => summarize_file(results, out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
