use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use triad_core::bath::{check_rescaling, estimate_m, BathOptions};
use triad_core::experiment::{
    compute_stats, read_trajectories, reproduce, simulate_to_dir, write_atomic, write_stats, ExperimentConfig,
    FigureId, ReproduceOptions, Scale, StatsRequest,
};
use triad_core::{builtin_paper_model, Error, TriadCoefficients};

const EXIT_VALIDATION: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "triad", version, about = "Stochastic mode reduction for a slow-fast triad model")]
struct Cli {
    /// JSON configuration (an experiment config for simulate/stats, bath
    /// options for estimate-m).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use the reference run lengths and ε values instead of desk presets.
    #[arg(long, global = true)]
    paper_scale: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the energy-conservation constraints of a coefficient set.
    Validate(ValidateArgs),
    /// Estimate the bath constant M from a microcanonical run.
    EstimateM(EstimateArgs),
    /// Run an ensemble and write trajectories, statistics and a manifest.
    Simulate,
    /// Produce the CSV bundle behind a figure or table.
    Reproduce(ReproduceArgs),
    /// Recompute statistics from the trajectories of a simulate directory.
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// Coefficient JSON file (built-in table when omitted).
    coefficients: Option<PathBuf>,
    #[arg(long, default_value_t = 5e-4)]
    tol: f64,
    /// Validate the exactly conservative projection instead.
    #[arg(long)]
    project: bool,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[arg(long)]
    coefficients: Option<PathBuf>,
    /// Energy shell of the run (default n).
    #[arg(long)]
    e_level: Option<f64>,
    /// Two or more energy shells: also write the rescaling report.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    levels: Option<Vec<f64>>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    n_runs: Option<usize>,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    /// fig1, cfx_full, cfe_full, pdf_E, cf_compare, kurt_compare or ct_table.
    #[arg(long)]
    figure: String,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    ensemble: Option<usize>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    epsilons: Option<Vec<f64>>,
    /// Bath constant of the reduced model.
    #[arg(long)]
    m: Option<f64>,
    #[arg(long)]
    reduced_dt: Option<f64>,
}

#[derive(Args, Debug)]
struct StatsArgs {
    /// Directory holding traj_*.csv.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
}

/// Error carrying the process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<Error>() {
            Some(e) if e.is_numerical() => EXIT_NUMERICAL,
            _ => EXIT_USAGE,
        };
        Self { code, error }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::new(e).into()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> Result<u8, Failure> {
    match &cli.command {
        Command::Validate(a) => validate(a),
        Command::EstimateM(a) => estimate(cli, a),
        Command::Simulate => simulate(cli),
        Command::Reproduce(a) => reproduce_cmd(cli, a),
        Command::Stats(a) => stats(cli, a),
    }
}

fn load_coefficients(path: Option<&Path>) -> Result<TriadCoefficients, Failure> {
    Ok(match path {
        Some(p) => TriadCoefficients::from_json_file(p)?,
        None => builtin_paper_model(),
    })
}

fn out_dir(cli: &Cli, fallback: &str) -> Result<PathBuf, Failure> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(fallback));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn validate(a: &ValidateArgs) -> Result<u8, Failure> {
    let mut c = load_coefficients(a.coefficients.as_deref())?;
    if a.project {
        c = c.projected();
    }
    let report = match c.validate(a.tol) {
        Ok(r) => r,
        Err(e @ Error::Structure { .. }) => {
            eprintln!("error: {e}");
            return Ok(EXIT_VALIDATION);
        }
        Err(e) => return Err(e.into()),
    };
    print!("{}", pretty(&report));
    if report.pass {
        eprintln!("pass: max |residual| = {:.3e} <= {:.1e}", report.max_abs_residual, a.tol);
        Ok(0)
    } else {
        for f in report.failures() {
            eprintln!("fail: {} residual {:.3e}", f.triad, f.residual);
        }
        Ok(EXIT_VALIDATION)
    }
}

fn estimate(cli: &Cli, a: &EstimateArgs) -> Result<u8, Failure> {
    let c = load_coefficients(a.coefficients.as_deref())?.projected();
    let mut opts = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<BathOptions>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => BathOptions::default(),
    };
    if let Some(s) = cli.seed {
        opts.seed = s;
    }
    if let Some(e) = a.e_level {
        opts.e_level = Some(e);
    }
    if let Some(t) = a.t_final {
        opts.t_final = t;
    }
    if let Some(dt) = a.dt {
        opts.dt = dt;
    }
    if let Some(r) = a.n_runs {
        opts.n_runs = r;
    }
    let dir = out_dir(cli, "bath")?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build()
        .context("thread pool")?;
    pool.install(|| -> Result<u8, Failure> {
        let s = estimate_m(&c.xyy, &c.yyy, c.n, &opts)?;
        std::fs::write(dir.join("bath_stats.csv"), s.curve_csv()).context("writing bath_stats.csv")?;
        write_atomic(&dir.join("bath_summary.json"), pretty(&s.summary_json()).as_bytes())?;
        write_atomic(&dir.join("compatibility.json"), pretty(&s.compatibility).as_bytes())?;
        for w in &s.warnings {
            eprintln!("warning: {w}");
        }
        println!("M = {:.6} ± {:.6} (E = {}, tau_max = {})", s.m, s.stderr_m, s.e_level, s.tau_max);
        let mut code = 0;
        if let Some(levels) = &a.levels {
            let r = check_rescaling(&c.xyy, &c.yyy, c.n, levels, &opts)?;
            write_atomic(&dir.join("rescaling.json"), pretty(&r).as_bytes())?;
            for p in &r.pairs {
                println!(
                    "Q({})/Q({}) = {:.4} (expected {:.4}), z = {:.2}",
                    p.e_high, p.e_low, p.raw_ratio, p.expected_ratio, p.z_score
                );
            }
            if !r.pass {
                code = EXIT_VALIDATION;
            }
        }
        let manifest = serde_json::json!({
            "command": "estimate-m",
            "options": opts,
            "levels": a.levels,
            "code_version": env!("CARGO_PKG_VERSION"),
            "M": s.m,
            "m_provenance": "estimated",
        });
        write_atomic(&dir.join("manifest.json"), pretty(&manifest).as_bytes())?;
        Ok(code)
    })
}

fn simulate(cli: &Cli) -> Result<u8, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("simulate needs --config <experiment.json>"))?;
    let mut config = ExperimentConfig::from_json_file(path)?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if cli.paper_scale {
        let preset = match config.model {
            triad_core::ModelKind::Reduced => ExperimentConfig::reduced_preset(Scale::Paper),
            _ => ExperimentConfig::full_preset(config.epsilon, Scale::Paper),
        };
        config.t_final = preset.t_final;
        config.ensemble = preset.ensemble;
    }
    let dir = match (&cli.out, &config.out_dir) {
        (Some(d), _) | (None, Some(d)) => d.clone(),
        (None, None) => PathBuf::from("out"),
    };
    let (run, bundle) = simulate_to_dir(&config, cli.jobs, &dir)?;
    for r in run.records.iter().filter(|r| r.aborted.is_some()) {
        eprintln!("warning: trajectory {} aborted: {}", r.index, r.aborted.as_deref().unwrap_or(""));
    }
    for v in &bundle.variables {
        println!("{}: mean {:.4}, var {:.4}, CT {:.4}", v.name, v.mean, v.variance, v.ct.value);
    }
    Ok(0)
}

fn reproduce_cmd(cli: &Cli, a: &ReproduceArgs) -> Result<u8, Failure> {
    let figure = FigureId::parse(&a.figure).ok_or_else(|| {
        let known: Vec<&str> = FigureId::ALL.iter().map(FigureId::name).collect();
        anyhow::anyhow!("unknown figure '{}'; expected one of {}", a.figure, known.join(", "))
    })?;
    let mut opts = ReproduceOptions {
        scale: if cli.paper_scale { Scale::Paper } else { Scale::Desk },
        seed: cli.seed.unwrap_or(0),
        jobs: cli.jobs,
        t_final: a.t_final,
        ensemble: a.ensemble,
        epsilons: a.epsilons.clone(),
        reduced_dt: a.reduced_dt,
        ..Default::default()
    };
    if let Some(m) = a.m {
        opts.m = m;
    }
    let dir = out_dir(cli, figure.name())?;
    for f in reproduce(figure, &opts, &dir)? {
        println!("{}", dir.join(f).display());
    }
    Ok(0)
}

fn stats(cli: &Cli, a: &StatsArgs) -> Result<u8, Failure> {
    let req = match &cli.config {
        Some(p) => ExperimentConfig::from_json_file(p)?.stats,
        None => StatsRequest::default(),
    };
    let series = read_trajectories(&a.input)?;
    let bundle = compute_stats(&series, &req, a.gamma)?;
    let dir = cli.out.clone().unwrap_or_else(|| a.input.clone());
    let extra = serde_json::json!({ "source": a.input, "trajectories": series.len() });
    for f in write_stats(&dir, &bundle, extra)? {
        println!("{}", dir.join(f).display());
    }
    Ok(0)
}
