use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use opax::experiment::{evaluate_dataset, Baseline};
use opax_cli::{config, output, plan_jobs, plot, run_jobs, Overrides};

#[derive(Parser)]
#[command(name = "opax", version, about = "Optimistic active exploration of unknown dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run active exploration; writes <out>/<baseline>/seed_<n>/{metrics.csv,run.json,dataset.csv}.
    Explore(ExploreArgs),
    /// Refit the model on a stored dataset and evaluate it; writes eval.csv.
    Eval(EvalArgs),
    /// Plot one metric from metrics files as SVG.
    Plot(PlotArgs),
    /// Run the built-in property suite; exits nonzero on any failure.
    Selftest,
    /// Print the reference configuration with every key and default.
    ReferenceConfig,
}

#[derive(Args)]
struct ExploreArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Run only this seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated: opax, mean_ae, pets_ae, random. Defaults to the configured explorer.
    #[arg(long, value_delimiter = ',')]
    baseline: Vec<Baseline>,
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run directory; eval.csv is written here.
    #[arg(long)]
    out: PathBuf,
    /// Dataset to evaluate; defaults to <out>/dataset.csv.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Seed of the evaluation set and downstream rollouts; defaults to the first configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PlotArgs {
    /// Column to plot, e.g. max_epistemic.
    #[arg(long)]
    metric: String,
    #[arg(long)]
    out: PathBuf,
    /// Logarithmic y axis.
    #[arg(long)]
    log: bool,
    /// metrics.csv files laid out as <baseline>/seed_<n>/metrics.csv.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("OPAX_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().with_context(|| format!("OPAX_THREADS={v:?} is not a thread count"))?;
    if n == 0 {
        bail!("OPAX_THREADS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("building the worker pool")?;
    Ok(())
}

fn explore(a: ExploreArgs) -> Result<()> {
    let cfg = config::parse_config(&a.config)?;
    let ov = Overrides { seed: a.seed, episodes: a.episodes, baselines: a.baseline };
    let jobs = plan_jobs(&cfg, &ov)?;
    for (dir, h) in run_jobs(&jobs, &a.out)? {
        let last = h.episodes.last().expect("runs have at least one episode");
        eprintln!(
            "{}: {} episodes, max epistemic {:.4}, mean {:.4}",
            dir.display(),
            h.episodes.len(),
            last.max_epistemic,
            last.mean_epistemic
        );
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let cfg = config::parse_config(&a.config)?;
    let data_path = a.data.unwrap_or_else(|| a.out.join("dataset.csv"));
    let data = output::read_dataset(&cfg.env, &data_path)?;
    let seed = a.seed.unwrap_or(cfg.seeds[0]);
    let report = evaluate_dataset(&cfg, &data, seed)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let labels: Vec<String> = cfg.downstream.iter().map(|d| d.label()).collect();
    let path = a.out.join("eval.csv");
    output::write_eval(&report, &labels, &path)?;
    eprintln!("{}: {} transitions, max epistemic {:.4}", path.display(), report.dataset_size, report.max_epistemic);
    Ok(())
}

fn selftest() -> bool {
    let mut ok = true;
    for c in opax::selftest::run_all() {
        println!("{c}");
        ok &= c.passed;
    }
    ok
}

fn run(cli: Cli) -> Result<bool> {
    init_threads()?;
    match cli.command {
        Command::Explore(a) => explore(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Plot(a) => plot::emit_plot(&a.inputs, &a.metric, &a.out, a.log)?,
        Command::Selftest => return Ok(selftest()),
        Command::ReferenceConfig => print!("{}", config::reference_config()),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
