//! `realdet`: generate synthetic scenes, run active-learning experiments and
//! compare their results.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use realdet_core::harness::{build_report, display_label, write_report, write_run, Regime};
use realdet_core::ingest::write_dataset;
use realdet_core::selection::validate_pairing;
use realdet_core::synthgen::generate_dataset;
use realdet_core::{run_experiment_with, Approach, DatasetSource, ExperimentConfig, MethodKind, PreparedData};

#[derive(Debug, Parser)]
#[command(name = "realdet", version, about = "Region-level active learning experiments for object detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write it as ground-truth JSON.
    Synth(SynthArgs),
    /// Run an experiment and write its reports.
    Run(RunArgs),
    /// Combine run directories into comparison tables.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RegimeArg {
    XviewLike,
    CocoLike,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::XviewLike => Regime::XviewLike,
            RegimeArg::CocoLike => Regime::CocoLike,
        }
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Experiment config with a synthetic dataset; overrides --regime.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "xview-like")]
    regime: RegimeArg,
    /// Dataset seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_images: Option<usize>,
    /// Output ground-truth JSON file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config (TOML). Without one, the --regime preset is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "xview-like")]
    regime: RegimeArg,
    /// Seeds to run, repeated or comma separated. Replaces the config's list.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// image, object or real.
    #[arg(long)]
    approach: Option<Approach>,
    /// maxent, modelrand, random or dmal.
    #[arg(long)]
    method: Option<MethodKind>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Budget per active split.
    #[arg(long)]
    budget: Option<u64>,
    /// Number of active splits.
    #[arg(long)]
    splits: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved config and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Directories written by `run`.
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    /// Where to write the comparison files. The table is printed either way.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut config = ExperimentConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?;
    config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(config)
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => match read_config(path)?.dataset {
            DatasetSource::Synthetic(cfg) => cfg,
            DatasetSource::Files(_) => bail!("{} does not describe a synthetic dataset", path.display()),
        },
        None => Regime::from(args.regime).synth(args.seed.unwrap_or(7)),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.n_images {
        cfg.n_images = n;
    }
    let dataset = generate_dataset(&cfg)?;
    write_dataset(&dataset, &args.out)?;
    println!(
        "wrote {} images, {} annotations, {} categories to {}",
        dataset.images().len(),
        dataset.annotations().len(),
        dataset.num_categories(),
        args.out.display()
    );
    Ok(())
}

fn resolve_run_config(args: &RunArgs) -> Result<ExperimentConfig> {
    // Reject a bad pairing from the flags alone before touching any file.
    if let (Some(a), Some(m)) = (args.approach, args.method) {
        validate_pairing(a, m)?;
    }
    let mut config = match &args.config {
        Some(path) => read_config(path)?,
        None => Regime::from(args.regime).experiment(Approach::Real, MethodKind::MaxEnt, (0..5).collect()),
    };
    if !args.seed.is_empty() {
        config.seeds = args.seed.clone();
    }
    if let Some(a) = args.approach {
        config.approach = a;
    }
    if let Some(m) = args.method {
        config.method = m;
    }
    if let Some(v) = args.alpha {
        config.alpha = v;
    }
    if let Some(v) = args.beta {
        config.beta = v;
    }
    if let Some(v) = args.budget {
        config.budget = v;
    }
    if let Some(v) = args.splits {
        config.n_splits = v;
    }
    if let Some(out) = &args.out {
        config.output_dir = Some(out.clone());
    }
    config.validate()?;
    Ok(config)
}

fn run(args: RunArgs) -> Result<()> {
    let config = resolve_run_config(&args)?;
    if args.dry_run {
        print!("{}", config.to_toml());
        return Ok(());
    }
    let Some(out) = config.output_dir.clone() else {
        bail!("no output directory: pass --out or set output_dir in the config");
    };
    let data = PreparedData::load(&config.dataset)?;
    let result = run_experiment_with(&config, &data)?;
    write_run(&result, &data, &out)?;

    println!("{}", display_label(config.approach, config.method));
    println!("{:>6} {:>6} {:>10} {:>10} {:>10} {:>6}", "seed", "split", "labeled%", "bottom%", "rare%", "bg");
    for run in &result.runs {
        for r in run.reports() {
            println!(
                "{:>6} {:>6} {:>10.2} {:>10.2} {:>10.2} {:>6}",
                r.seed, r.split, r.total_labeled_pct, r.groups.bottom.labeled_pct, r.rare_labeled_pct, r.background_queries
            );
        }
    }
    println!("reports written to {}", out.display());
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let report = build_report(&args.dirs)?;
    print!("{}", report.markdown());
    if let Some(out) = &args.out {
        let written = write_report(&report, out)?;
        eprintln!("wrote {} files to {}", written.len(), out.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("realdet: {e:#}");
            ExitCode::FAILURE
        }
    }
}
