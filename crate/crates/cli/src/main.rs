use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use cortexfit::featurestore::{read_feature_set, read_response_store, write_feature_set};
use cortexfit::harness::{
    compare_families, model_scores, run, write_run, ComparisonSpec, ConnectivitySettings, Mode, ResultBundle,
    RunConfig,
};
use cortexfit::report::{emit_comparison, emit_report, ReportFormat};
use cortexfit::Error;

/// Layer-weighted voxel encoding with connectivity refinement.
#[derive(Parser, Debug)]
#[command(name = "cortexfit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a feature set or response store; average raw frames when
    /// `--out` is given.
    Ingest(IngestArgs),
    /// Apply the seeded sparse random projection to a feature set.
    Project(ProjectArgs),
    /// Cross-validated encoder fits against measured responses.
    Fit(RunArgs),
    /// Encoder fits followed by connectivity refinement.
    Connectivity(RunArgs),
    /// Encoder fits against another network's features.
    Simulate(RunArgs),
    /// Welch tests between groups of source models.
    Compare(CompareArgs),
    /// Tables and figures from a result bundle.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long, conflicts_with = "responses", required_unless_present = "responses")]
    features: Option<PathBuf>,
    #[arg(long)]
    responses: Option<PathBuf>,
    /// Write the averaged feature set here.
    #[arg(long, requires = "features")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ProjectArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dimension per layer (default: min(dim, 4096)).
    #[arg(long)]
    out_dim: Option<usize>,
    /// Sparsity parameter s (default: sqrt(dim)).
    #[arg(long)]
    density: Option<f64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON or TOML run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    responses: Option<PathBuf>,
    /// Target network features (simulate).
    #[arg(long)]
    target_features: Option<PathBuf>,
    /// Regions, or target blocks when simulating.
    #[arg(long, value_delimiter = ',')]
    regions: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    subjects: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    /// Penalty grid as `BETA1S/BETA2S`, e.g. `0.1,1,10/1,10,100`.
    #[arg(long)]
    grid: Option<String>,
    /// Refinement strategy (repeatable): none, intra, inter, full, random,
    /// identity.
    #[arg(long)]
    variant: Vec<String>,
    /// Regions to refine (default: all).
    #[arg(long, value_delimiter = ',')]
    targets: Vec<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    save_models: bool,
    #[arg(long)]
    no_projection: bool,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// JSON or TOML comparison spec (`groups`, optional `axis`).
    #[arg(long)]
    spec: PathBuf,
    /// Result bundles, one per source model.
    #[arg(long, num_args = 1.., required = true)]
    bundles: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "csv,json,svg")]
    formats: Vec<String>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "csv,json,svg")]
    formats: Vec<String>,
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn input(msg: impl Into<String>) -> Failure {
    Failure::Input(msg.into())
}

/// Reads JSON, or TOML when the extension is `.toml`.
fn load<T: serde::de::DeserializeOwned>(path: &Path) -> Outcome<T> {
    let text = std::fs::read_to_string(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if is_toml {
        toml::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))
    } else {
        serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))
    }
}

fn parse_list(s: &str) -> Outcome<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| input(format!("`{v}` is not a number"))))
        .collect()
}

fn parse_grid(s: &str) -> Outcome<(Vec<f64>, Vec<f64>)> {
    let (a, b) = s
        .split_once('/')
        .ok_or_else(|| input(format!("grid `{s}` must look like `0.1,1,10/1,10,100`")))?;
    Ok((parse_list(a)?, parse_list(b)?))
}

fn parse_formats(names: &[String]) -> Outcome<Vec<ReportFormat>> {
    names
        .iter()
        .map(|n| match n.trim() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(input(format!("unknown report format `{other}`"))),
        })
        .collect()
}

fn build_config(args: &RunArgs, mode: Mode, refine: bool) -> Outcome<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => load::<RunConfig>(p)?,
        None => RunConfig::default(),
    };
    cfg.mode = mode;
    if let Some(p) = &args.features {
        cfg.features = Some(p.clone());
    }
    if let Some(p) = &args.responses {
        cfg.responses = Some(p.clone());
    }
    if let Some(p) = &args.target_features {
        cfg.target_features = Some(p.clone());
    }
    if !args.regions.is_empty() {
        cfg.regions = args.regions.clone();
    }
    if !args.subjects.is_empty() {
        cfg.subjects = args.subjects.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(k) = args.folds {
        cfg.folds = k;
    }
    if let Some(g) = &args.grid {
        let (b1, b2) = parse_grid(g)?;
        cfg.grid.beta1 = b1;
        cfg.grid.beta2 = b2;
    }
    if let Some(p) = args.parallelism {
        cfg.parallelism = p;
    }
    if let Some(o) = &args.out {
        cfg.output = Some(o.clone());
    }
    cfg.save_models |= args.save_models;
    if args.no_projection {
        cfg.projection.enabled = false;
    }
    if refine {
        let settings = cfg.connectivity.get_or_insert_with(ConnectivitySettings::default);
        if !args.variant.is_empty() {
            settings.strategies = args.variant.clone();
        }
        if !args.targets.is_empty() {
            settings.targets = args.targets.clone();
        }
    } else if !args.variant.is_empty() {
        return Err(input("--variant applies to the connectivity subcommand"));
    } else if mode == Mode::Real {
        cfg.connectivity = None;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_command(args: &RunArgs, mode: Mode, refine: bool) -> Outcome {
    let cfg = build_config(args, mode, refine)?;
    let out_dir = cfg.output.clone().ok_or_else(|| input("--out (or `output` in the config) is required"))?;
    let output = run(&cfg)?;
    write_run(&output, &out_dir, cfg.save_models)?;
    let b = &output.bundle;
    let regions: BTreeMap<&String, f64> = b.aggregates.iter().map(|(k, v)| (k, v.mean)).collect();
    let refined: BTreeMap<&String, BTreeMap<&String, f64>> = b
        .refinements
        .iter()
        .map(|r| (&r.strategy, r.aggregates.iter().map(|(k, v)| (k, v.mean)).collect()))
        .collect();
    println!(
        "{}",
        json!({
            "bundle": out_dir.join("bundle.json"),
            "scores": regions,
            "refined": refined,
        })
    );
    Ok(())
}

fn ingest(args: &IngestArgs) -> Outcome {
    if let Some(dir) = &args.features {
        let set = read_feature_set(dir)?;
        if let Some(out) = &args.out {
            write_feature_set(&set, out)?;
        }
        let layers: Vec<_> = set
            .manifest
            .layers
            .iter()
            .map(|l| json!({"name": l.name, "dim": l.dim}))
            .collect();
        println!(
            "{}",
            json!({"model": set.manifest.model_name, "videos": set.num_videos(), "layers": layers})
        );
    } else if let Some(dir) = &args.responses {
        let subjects = read_response_store(dir)?;
        let summary: Vec<_> = subjects
            .iter()
            .map(|s| {
                let regions: BTreeMap<&str, usize> =
                    s.regions.iter().map(|r| (r.name.as_str(), r.data.cols())).collect();
                json!({"subject": s.subject, "videos": s.video_ids.len(), "regions": regions})
            })
            .collect();
        println!("{}", json!({"subjects": summary}));
    }
    Ok(())
}

fn project(args: &ProjectArgs) -> Outcome {
    let set = read_feature_set(&args.features)?;
    let projected = set.project(args.seed, args.out_dim, args.density)?;
    write_feature_set(&projected, &args.out)?;
    let dims: BTreeMap<&str, usize> = projected.manifest.layers.iter().map(|l| (l.name.as_str(), l.dim)).collect();
    println!("{}", json!({"out": args.out, "dims": dims}));
    Ok(())
}

fn compare(args: &CompareArgs) -> Outcome {
    let spec: ComparisonSpec = load(&args.spec)?;
    let formats = parse_formats(&args.formats)?;
    let bundles = args
        .bundles
        .iter()
        .map(|p| ResultBundle::read(p))
        .collect::<Result<Vec<_>, _>>()?;
    let table = compare_families(&spec, &model_scores(&bundles)?)?;
    let files = emit_comparison(&table, &args.out, &formats)?;
    println!("{}", json!({"written": files}));
    Ok(())
}

fn report(args: &ReportArgs) -> Outcome {
    let formats = parse_formats(&args.formats)?;
    let bundle = ResultBundle::read(&args.bundle)?;
    let files = emit_report(&bundle, &args.out, &formats)?;
    println!("{}", json!({"written": files}));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Project(a) => project(a),
        Command::Fit(a) => run_command(a, Mode::Real, false),
        Command::Connectivity(a) => run_command(a, Mode::Real, true),
        Command::Simulate(a) => run_command(a, Mode::Simulated, false),
        Command::Compare(a) => compare(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}
