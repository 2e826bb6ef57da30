use std::path::PathBuf;
use std::process::ExitCode;

use anatomy_prior::phantom::{generate_phantom_cohort, write_cohort, PhantomConfig};
use anatomy_prior::pipeline::{ground_query, ingest_case, Pipeline, PipelineConfig};
use anatomy_prior::Error;
use clap::{Parser, Subcommand, ValueEnum};

/// Environment variable bounding the worker pool.
const WORKERS_ENV: &str = "ANATOMY_PRIOR_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "anatomy-prior", version, about = "Skeleton-conditioned organ priors and probe targeting")]
struct Cli {
    /// JSON pipeline configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Cohort root directory.
    #[arg(long, global = true)]
    cohort: Option<PathBuf>,
    /// Output root directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Split {
    Train,
    Test,
    All,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract skin and organ meshes from a label volume into a case directory.
    Ingest {
        #[arg(long)]
        case: String,
        /// Volume header JSON (raw voxels next to it).
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        rig: PathBuf,
    },
    /// Unpose organs and express them in each case's anatomical frame.
    Canonicalize {
        #[arg(long, value_enum, default_value = "train")]
        split: Split,
    },
    /// Deform templates onto canonical organs.
    Register {
        #[arg(long, value_enum, default_value = "train")]
        split: Split,
        #[arg(long)]
        iteration_scale: Option<f64>,
    },
    /// Decompose registered organs into displacement, rotation and log-scale.
    Decompose,
    /// Fit placement and scale priors plus the mean-only baseline.
    FitPriors {
        #[arg(long)]
        ridge: Option<f64>,
    },
    /// Predict organ meshes for cases.
    Instantiate {
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Rank skin contacts and write the control state for one organ.
    InitTargets {
        #[arg(long)]
        case: String,
        #[arg(long)]
        organ: String,
        /// Candidate radius in cm.
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Retrieve semantic units for a query and aggregate a grounded target.
    Ground {
        #[arg(long)]
        query: String,
        #[command(flatten)]
        index: IndexArgs,
    },
    /// Generate a synthetic cohort.
    Phantom {
        /// Cohort size.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Score held-out instances against their organ meshes.
    Eval,
    /// Offline chain from canonicalization to evaluation.
    RunAll,
    /// Query to grounded organ to contacts for one case.
    Online {
        #[arg(long)]
        case: String,
        #[arg(long)]
        query: String,
        #[command(flatten)]
        index: IndexArgs,
    },
}

#[derive(clap::Args, Debug)]
struct IndexArgs {
    /// Number of units retrieved.
    #[arg(long)]
    k: Option<usize>,
    /// Semantic units (JSON lines).
    #[arg(long)]
    units: Option<PathBuf>,
    /// Organ and location whitelist JSON.
    #[arg(long)]
    ontology: Option<PathBuf>,
}

/// Maps failures to exit codes: 2 usage, 3 data or schema, 4 numerical.
fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::InvalidConfig(_) => 2,
        Error::Divergence { .. }
        | Error::SingularFit { .. }
        | Error::DegenerateAlignment(_)
        | Error::DegenerateFrame(_)
        | Error::DegenerateSpread { .. }
        | Error::NonPositiveScale(_)
        | Error::SingularTransform(_)
        | Error::ZeroLengthRay
        | Error::ProjectionMiss
        | Error::EmptyCandidates { .. } => 4,
        _ => 3,
    }
}

fn effective_config(cli: &Cli) -> Result<(PipelineConfig, Vec<String>), Error> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let mut overrides = Vec::new();
    if let Some(c) = &cli.cohort {
        cfg.paths.cohort = c.clone();
        overrides.push("paths.cohort".to_string());
    }
    if let Some(o) = &cli.output {
        cfg.paths.output = o.clone();
        overrides.push("paths.output".into());
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
        overrides.push("seed".into());
    }
    match &cli.command {
        Command::Register {
            iteration_scale: Some(x), ..
        } => {
            cfg.registration.iteration_scale = *x;
            overrides.push("registration.iteration_scale".into());
        }
        Command::FitPriors { ridge: Some(r) } => {
            cfg.prior.ridge_lambda = *r;
            overrides.push("prior.ridge_lambda".into());
        }
        Command::InitTargets { radius, k, .. } => {
            if let Some(r) = radius {
                cfg.initialization.targeting.radius = *r;
                overrides.push("initialization.radius".into());
            }
            if let Some(k) = k {
                cfg.initialization.targeting.k_cand = *k;
                overrides.push("initialization.k_cand".into());
            }
        }
        Command::Ground { index, .. } | Command::Online { index, .. } => {
            let IndexArgs { k, units, ontology } = index;
            if let Some(k) = k {
                cfg.grounding.k = *k;
                overrides.push("grounding.k".into());
            }
            if let Some(u) = units {
                cfg.grounding.units = Some(u.clone());
                overrides.push("grounding.units".into());
            }
            if let Some(o) = ontology {
                cfg.grounding.ontology = Some(o.clone());
                overrides.push("grounding.ontology".into());
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok((cfg, overrides))
}

fn split_cases(p: &Pipeline, split: Split) -> Vec<String> {
    let (train, test) = p.split();
    match split {
        Split::Train => train,
        Split::Test => test,
        Split::All => p.manifest.cases.clone(),
    }
}

fn print_json<S: serde::Serialize>(value: &S) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    let (cfg, overrides) = effective_config(cli)?;
    eprintln!("effective configuration (flag > config file > default):");
    eprintln!("{}", serde_json::to_string_pretty(&cfg)?);
    if !overrides.is_empty() {
        eprintln!("set by flags: {}", overrides.join(", "));
    }
    eprintln!("seed: {}", cfg.seed);

    match &cli.command {
        Command::Phantom { n } => {
            let mut pc = cfg.phantom.clone().unwrap_or_else(|| PhantomConfig::new(n.unwrap_or(40), cfg.seed));
            if let Some(n) = n {
                pc.cohort_size = *n;
            }
            if cli.seed.is_some() {
                pc.seed = cfg.seed;
            }
            let cohort = generate_phantom_cohort::<f64>(&pc)?;
            write_cohort(&cohort, &cfg.paths.cohort)?;
            println!("wrote {} cases to {}", cohort.cases.len(), cfg.paths.cohort.display());
        }
        Command::Ingest { case, volume, rig } => {
            ingest_case(
                &cfg.paths.cohort,
                case,
                volume,
                rig,
                &cfg.ingestion,
                &cfg.canonicalization.frame_cues,
            )?;
            println!("ingested {case} into {}", cfg.paths.cohort.display());
        }
        Command::Ground { query, .. } => {
            print_json(&ground_query(&cfg.grounding, query, cfg.grounding.k)?)?;
        }
        cmd => {
            let p = Pipeline::open(cfg)?;
            match cmd {
                Command::Canonicalize { split } => p.canonicalize(&split_cases(&p, *split))?,
                Command::Register { split, .. } => p.register(&split_cases(&p, *split))?,
                Command::Decompose => p.decompose(&p.split().0)?,
                Command::FitPriors { .. } => p.fit_priors()?,
                Command::Instantiate { split } => p.instantiate(&split_cases(&p, *split))?,
                Command::InitTargets { case, organ, .. } => print_json(&p.init_targets(case, organ)?)?,
                Command::Eval => print!("{}", p.evaluate(&p.split().1)?.to_csv()),
                Command::RunAll => print!("{}", p.run_all()?.to_csv()),
                Command::Online { case, query, .. } => print_json(&p.run_online(case, query)?)?,
                Command::Phantom { .. } | Command::Ingest { .. } | Command::Ground { .. } => unreachable!(),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_env("RUST_LOG").init();

    if let Ok(v) = std::env::var(WORKERS_ENV) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("could not size worker pool: {e}");
                }
            }
            _ => {
                eprintln!("error: {WORKERS_ENV} must be a positive integer, got `{v}`");
                return ExitCode::from(2);
            }
        }
    }

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
