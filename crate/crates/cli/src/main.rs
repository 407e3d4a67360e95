use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use linfsr::adversarial::{build_indistinguishable_pair, build_metric_impossibility_pair, first_outside, select_correlated_support};
use linfsr::harness::{self, ExperimentConfig};
use linfsr::io as formats;
use linfsr::linops::{norm_inf, xt_mul};
use linfsr::model::{build_instance, random_sparse_signal, sample_ensemble, Dims, Ensemble, ModelKind, NoiseVector};
use linfsr::ripcert::{certify_l2_rip, certify_linf_rip, certify_pi, CertMode};
use linfsr::seed;

#[derive(Parser)]
#[command(name = "linfsr", version, about = "Sup-norm sparse recovery experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a recovery instance and write it with its matrix file.
    Gen(GenArgs),
    /// Run an experiment config and write one CSV row per trial.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify a property of a matrix file and print the certificate JSON.
    Certify {
        #[arg(long, value_enum)]
        kind: CertKind,
        /// epsilon for the RIP kinds, alpha for pairwise incoherence
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 2)]
        s: usize,
        /// Sample this many random subsets instead of certifying exactly.
        #[arg(long)]
        sampled: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        matrix: PathBuf,
    },
    /// Build an indistinguishable pair sharing one design and observation.
    Adversarial(AdversarialArgs),
    /// Expand a config's sweep into explicit grid points.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize trial CSV files.
    Report {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CertKind {
    LinfRip,
    L2Rip,
    Pi,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Oblivious,
    Adaptive,
    PartiallyAdaptive,
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value = "gaussian")]
    ensemble: Ensemble,
    #[arg(long, default_value_t = 0.01)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    magnitude: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "oblivious")]
    model: Model,
    #[arg(long, default_value = "instance")]
    name: String,
    /// Also write the matrix as CSV next to the instance.
    #[arg(long)]
    csv: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(clap::Args)]
struct AdversarialArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value = "gaussian")]
    ensemble: Ensemble,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10.0)]
    magnitude: f64,
    /// Build the metric-impossibility pair on this column instead.
    #[arg(long)]
    metric_column: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

type Res<T> = Result<T, Box<dyn std::error::Error>>;

fn with_path<T, E: std::fmt::Display>(p: &std::path::Path, r: Result<T, E>) -> Res<T> {
    r.map_err(|e| format!("{}: {e}", p.display()).into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    ExitCode::from(cli_main(std::env::args_os()))
}

fn cli_main<I: IntoIterator<Item = OsString>>(args: I) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code() as u8;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Res<()> {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Run { config, out } => run(config, out),
        Command::Certify {
            kind,
            eps,
            s,
            sampled,
            seed,
            matrix,
        } => certify(kind, eps, s, sampled, seed, matrix),
        Command::Adversarial(a) => adversarial(a),
        Command::Sweep { config, out } => {
            let cfg = ExperimentConfig::from_json(&with_path(&config, fs::read_to_string(&config))?)?;
            let text = cfg.expand().to_json()?;
            match out {
                Some(p) => fs::write(p, text + "\n")?,
                None => println!("{text}"),
            }
            Ok(())
        }
        Command::Report { results, json } => report(results, json),
    }
}

fn gen(a: GenArgs) -> Res<()> {
    let x = sample_ensemble(Dims::new(a.n, a.d, a.k)?, a.ensemble, seed::derive(a.seed, &[0]))?;
    let truth = random_sparse_signal(a.d, a.k, a.magnitude, seed::derive(a.seed, &[1]))?;
    let noise = NoiseVector::gaussian(a.n, a.sigma, seed::derive(a.seed, &[2]))?;
    let model = match a.model {
        Model::Oblivious => ModelKind::Oblivious,
        Model::Adaptive => ModelKind::Adaptive,
        Model::PartiallyAdaptive => ModelKind::PartiallyAdaptive,
    };
    let inst = build_instance(x, truth, noise, model)?;
    let path = formats::save_instance(&a.out_dir, &a.name, &inst)?;
    if a.csv {
        let f = File::create(a.out_dir.join(format!("{}.csv", a.name)))?;
        formats::write_matrix_csv(inst.x.matrix(), BufWriter::new(f))?;
    }
    println!("{}", path.display());
    Ok(())
}

fn run(config: PathBuf, out: Option<PathBuf>) -> Res<()> {
    let cfg = ExperimentConfig::from_json(&with_path(&config, fs::read_to_string(&config))?)?;
    let out = out
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .ok_or("no output path: pass --out or set `output` in the config")?;
    let res = harness::run_experiment(&cfg)?;
    let mut w = BufWriter::new(File::create(&out)?);
    harness::write_records(&res.records, &mut w)?;
    w.flush()?;
    print!("{}", harness::render_table(&harness::summarize(&res.records)));
    Ok(())
}

fn certify(kind: CertKind, eps: f64, s: usize, sampled: Option<usize>, seed: u64, matrix: PathBuf) -> Res<()> {
    let x = with_path(&matrix, formats::read_matrix(&matrix))?;
    let mode = match sampled {
        Some(trials) => CertMode::Sampled { trials, seed },
        None => CertMode::Exact,
    };
    let cert = match kind {
        CertKind::LinfRip => certify_linf_rip(&x, eps, s, mode)?,
        CertKind::L2Rip => certify_l2_rip(&x, eps, s, mode)?,
        CertKind::Pi => certify_pi(&x, eps)?,
    };
    println!("{}", cert.to_json()?);
    Ok(())
}

fn adversarial(a: AdversarialArgs) -> Res<()> {
    let x = sample_ensemble(Dims::new(a.n, a.d, a.k)?, a.ensemble, seed::derive(a.seed, &[0]))?;
    let m = x.matrix();
    let pair = match a.metric_column {
        Some(i) => build_metric_impossibility_pair(m, i)?,
        None => {
            let s = select_correlated_support(m, (a.k / 2).max(1), 0)?;
            let t = first_outside(a.d, &s, a.k.saturating_sub(s.len()).max(1))?;
            build_indistinguishable_pair(m, &s, &t, a.magnitude)?.0
        }
    };
    let (i1, i2) = pair.instances(&x);
    let p1 = formats::save_instance(&a.out_dir, "pair_1", &i1)?;
    let p2 = formats::save_instance(&a.out_dir, "pair_2", &i2)?;
    let summary = json!({
        "instances": [p1, p2],
        "separation": pair.separation(),
        "observation_gap": pair.observation_gap(m),
        "metric_1": norm_inf(&xt_mul(m, pair.xi1.values())),
        "metric_2": norm_inf(&xt_mul(m, pair.xi2.values())),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn report(results: Vec<PathBuf>, as_json: bool) -> Res<()> {
    let mut records = Vec::new();
    for p in &results {
        records.extend(with_path(p, File::open(p).map_err(Into::into).and_then(harness::read_records))?);
    }
    let groups = harness::summarize(&records);
    let stdout = io::stdout();
    let mut out = stdout.lock();
    if as_json {
        writeln!(out, "{}", serde_json::to_string_pretty(&groups)?)?;
    } else {
        write!(out, "{}", harness::render_table(&groups))?;
    }
    Ok(())
}
