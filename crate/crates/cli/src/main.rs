use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use truncreg::experiment::{
    fit_rate, median_errors, run_experiment, run_relu, write_results, ExperimentPlan, Method, ReluPlan, ResultRow,
};
use truncreg::{
    check_assumptions, estimate, generate, ols, Dataset, DVector, Error, GeneratorConfig, SgdConfig, TruncationSet,
};

#[derive(Parser)]
#[command(name = "truncreg", version, about = "Linear regression from truncated samples")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a truncated dataset from a generator config and write it as CSV.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Number of accepted samples.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a dataset CSV and print (or write) the estimate as JSON.
    Estimate {
        /// Dataset CSV with columns x1..xk,y.
        #[arg(long)]
        data: PathBuf,
        /// Truncation set JSON.
        #[arg(long)]
        set: PathBuf,
        /// Estimator config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Independent runs with seeds seed, seed+1, ...; w_hat is their coordinatewise median.
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment plan (the built-in truncated plan when no config is given) and write the results CSV.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the estimator base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the plan's output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Noisy-ReLU learning end to end; prints median errors per n.
    ReluDemo {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Optional results CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report the thickness and survival conditions for a dataset.
    CheckAssumptions {
        #[arg(long)]
        data: PathBuf,
        /// Truncation set JSON; the whole real line when omitted.
        #[arg(long)]
        set: Option<PathBuf>,
        /// Reference coefficients for the survival check, comma separated; OLS when omitted.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        w: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Generate { config, n, seed, out } => {
            let cfg: GeneratorConfig = serde_json::from_str(&std::fs::read_to_string(&config)?)?;
            let spec = cfg.build()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = generate(&spec, n, &mut rng)?;
            data.save(&out)?;
            eprintln!("wrote {} samples (k={}) to {}", data.n(), data.k(), out.display());
            Ok(())
        }
        Command::Estimate { data, set, config, seed, repeats, out } => {
            if repeats == 0 {
                return Err(Error::InvalidParameter("repeats must be at least 1".into()));
            }
            let data = Dataset::load(&data)?;
            let set = TruncationSet::from_json_file(&set)?;
            let mut cfg = SgdConfig::from_json_file(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let base = cfg.seed;
            let mut runs = Vec::with_capacity(repeats);
            for r in 0..repeats {
                cfg.seed = base.wrapping_add(r as u64);
                runs.push(estimate(&data, &set, &cfg)?);
            }
            let k = data.k();
            let w_hat: Vec<f64> = (0..k)
                .map(|c| {
                    let mut col: Vec<f64> = runs.iter().map(|r| r.w_hat[c]).collect();
                    truncreg::experiment::median(&mut col)
                })
                .collect();
            let doc = json!({ "k": k, "n": data.n(), "w_hat": w_hat, "runs": runs });
            emit(&serde_json::to_string_pretty(&doc)?, out.as_deref())
        }
        Command::Experiment { config, seed, out } => {
            let mut plan = match config {
                Some(p) => ExperimentPlan::from_json_file(p)?,
                None => ExperimentPlan::truncated_default(),
            };
            if let Some(s) = seed {
                plan.sgd.seed = s;
            }
            let path = match out {
                Some(p) => p,
                None if !plan.output_path.is_empty() => PathBuf::from(&plan.output_path),
                None => return Err(Error::InvalidParameter("no output path: pass --out or set output_path".into())),
            };
            let rows = run_experiment(&plan)?;
            write_results(&rows, BufWriter::new(File::create(&path)?))?;
            summarize(&rows, &plan.methods);
            eprintln!("wrote {} rows to {}", rows.len(), path.display());
            Ok(())
        }
        Command::ReluDemo { config, seed, out } => {
            let mut plan = match config {
                Some(p) => ReluPlan::from_json_file(p)?,
                None => ReluPlan::default_plan(),
            };
            if let Some(s) = seed {
                plan.sgd.seed = s;
            }
            let rows = run_relu(&plan)?;
            if let Some(path) = out {
                write_results(&rows, BufWriter::new(File::create(&path)?))?;
            }
            summarize(&rows, &plan.methods);
            Ok(())
        }
        Command::CheckAssumptions { data, set, w, out } => {
            let data = Dataset::load(&data)?;
            let set = match set {
                Some(p) => TruncationSet::from_json_file(p)?,
                None => TruncationSet::real_line(),
            };
            let w_ref = match w {
                Some(v) => DVector::from_vec(v),
                None => ols(&data)?,
            };
            let report = check_assumptions(&data, &w_ref, &set)?;
            emit(&serde_json::to_string_pretty(&report)?, out.as_deref())
        }
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Error> {
    match out {
        Some(p) => std::fs::write(p, format!("{text}\n"))?,
        None => writeln!(io::stdout(), "{text}")?,
    }
    Ok(())
}

fn summarize(rows: &[ResultRow], methods: &[Method]) {
    for &m in methods {
        let medians = median_errors(rows, m);
        let line: Vec<String> = medians.iter().map(|(n, e)| format!("{n}:{e:.4}")).collect();
        match fit_rate(rows, m) {
            Ok(slope) => println!("{} median error {} slope {slope:.3}", m.as_str(), line.join(" ")),
            Err(_) => println!("{} median error {}", m.as_str(), line.join(" ")),
        }
    }
}
