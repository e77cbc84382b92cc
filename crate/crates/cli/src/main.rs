use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use uad_core::config::PipelineConfig;
use uad_core::eval::{fold_size_ranges, format_results_csv};
use uad_core::pipeline::{phantom_gen, Method, Pipeline, Stage};
use uad_core::UadError;

#[derive(Parser, Debug)]
#[command(name = "uad", version, about = "Unsupervised anomaly detection pipeline for multi-channel volumes")]
struct Cli {
    /// JSON configuration; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Restricts per-fold commands to one fold.
    #[arg(long, global = true)]
    fold: Option<usize>,
    /// Suppresses progress messages.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Writes a synthetic cohort, metadata and atlas to the data directory.
    PhantomGen,
    /// Draws the stratified folds.
    Folds,
    /// Fits intensity normalization and trains the auto-encoder.
    SaeTrain,
    /// Encodes the training patches.
    Features,
    FitOcsvm,
    FitMmst,
    /// Writes anomaly maps for the train controls and test subjects.
    Score {
        #[arg(value_enum)]
        method: MethodArg,
    },
    /// Pooled abnormality threshold over the train-control maps.
    Threshold {
        #[arg(value_enum)]
        method: Option<MethodArg>,
    },
    /// Per-region abnormal percentages of the test subjects.
    Aggregate {
        #[arg(value_enum)]
        method: Option<MethodArg>,
    },
    /// Best g-mean per method and region.
    Evaluate,
    /// Folds plus every per-fold stage, merged into results.csv.
    RunAll {
        /// Runs only this stage.
        #[arg(long)]
        stage: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Recon,
    Ocsvm,
    Mmst,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Recon => Method::Recon,
            MethodArg::Ocsvm => Method::Ocsvm,
            MethodArg::Mmst => Method::Mmst,
        }
    }
}

fn methods(m: Option<MethodArg>) -> Vec<Method> {
    m.map_or_else(|| Method::ALL.to_vec(), |m| vec![m.into()])
}

fn resolve_config(cli: &Cli) -> uad_core::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_threads() -> uad_core::Result<()> {
    let Ok(v) = std::env::var("UAD_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n >= 1).ok_or_else(|| UadError::Config {
        field: "UAD_THREADS".into(),
        reason: format!("{v:?} is not a positive integer"),
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| UadError::InvalidParameter(e.to_string()))
}

/// Folds a per-fold command applies to.
fn target_folds(p: &Pipeline, fold: Option<usize>) -> uad_core::Result<Vec<usize>> {
    if let Some(k) = fold {
        p.load_fold(k)?;
        return Ok(vec![k]);
    }
    let mut k = 0;
    while p.load_fold(k).is_ok() {
        k += 1;
    }
    if k == 0 {
        p.load_fold(0)?;
    }
    Ok((0..k).collect())
}

fn run(cli: &Cli) -> uad_core::Result<()> {
    init_threads()?;
    let cfg = resolve_config(cli)?;
    println!("seed: {}", cfg.seed);
    println!("config: {}", serde_json::to_string(&cfg)?);
    if let Command::PhantomGen = cli.command {
        let meta = phantom_gen(&cfg)?;
        println!("wrote {} subjects to {}", meta.len(), cfg.paths.data_dir.display());
        return Ok(());
    }
    let mut p = Pipeline::new(cfg)?;
    p.verbose = !cli.quiet;
    let per_fold = |f: &dyn Fn(usize) -> uad_core::Result<()>| -> uad_core::Result<()> {
        for k in target_folds(&p, cli.fold)? {
            f(k)?;
        }
        Ok(())
    };
    match &cli.command {
        Command::PhantomGen => unreachable!(),
        Command::Folds => {
            p.write_config()?;
            let folds = p.folds()?;
            let r = fold_size_ranges(&folds);
            println!(
                "{} folds: train controls {:?}, test controls {:?}, train patients {:?}, test patients {:?}",
                folds.len(),
                r.train_controls,
                r.test_controls,
                r.train_patients,
                r.test_patients
            );
        }
        Command::SaeTrain => per_fold(&|k| p.run_stage(k, Stage::SaeTrain))?,
        Command::Features => per_fold(&|k| p.run_stage(k, Stage::Features))?,
        Command::FitOcsvm => per_fold(&|k| p.run_stage(k, Stage::FitOcsvm))?,
        Command::FitMmst => per_fold(&|k| p.run_stage(k, Stage::FitMmst))?,
        Command::Score { method } => per_fold(&|k| p.score(k, (*method).into()))?,
        Command::Threshold { method } => per_fold(&|k| {
            for m in methods(*method) {
                println!("fold {k} {m}: threshold {}", p.threshold(k, m)?);
            }
            Ok(())
        })?,
        Command::Aggregate { method } => per_fold(&|k| methods(*method).into_iter().try_for_each(|m| p.aggregate(k, m)))?,
        Command::Evaluate => per_fold(&|k| {
            print!("{}", format_results_csv(&p.evaluate(k)?));
            Ok(())
        })?,
        Command::RunAll { stage } => {
            let stage = stage.as_deref().map(str::parse::<Stage>).transpose()?;
            let rows = p.run_all(cli.fold, stage)?;
            println!("{} result rows written to {}", rows.len(), p.results_path().display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
