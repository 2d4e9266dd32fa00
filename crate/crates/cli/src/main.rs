use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use scate::sim::{obstacle_position, EpisodeLog};
use scate::{run_episode, verify, Error, PlanningMode, Scenario};

const EXIT_NAVIGATION: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(name = "scate", version, about = "Closed-loop factor-graph planning episodes for a planar spacecraft")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write its logs.
    Run(RunArgs),
    /// Paired reactive/predictive episodes over consecutive seeds.
    Sweep(SweepArgs),
    /// Jacobian, solver, hinge, discretization and gain self-checks.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario's planning mode.
    #[arg(long)]
    mode: Option<Mode>,
    /// Override the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Directory for the report; printed only when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Reactive,
    Predictive,
}

impl From<Mode> for PlanningMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Reactive => PlanningMode::Reactive,
            Mode::Predictive => PlanningMode::Predictive,
        }
    }
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

fn config(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: e.to_string(),
    }
}

fn internal(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_INTERNAL,
        message: e.to_string(),
    }
}

fn classify(e: Error) -> Failure {
    match e {
        Error::Scenario(_)
        | Error::TomlParse(_)
        | Error::InvalidModel(_)
        | Error::NotHurwitz { .. }
        | Error::NotPositiveDefinite => config(e),
        _ => internal(e),
    }
}

fn load(path: &Path, mode: Option<Mode>, seed: Option<u64>) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
    let mut scenario = Scenario::from_toml(&text).map_err(|e| config(format!("{}: {e}", path.display())))?;
    if let Some(m) = mode {
        scenario.mode = m.into();
    }
    if let Some(s) = seed {
        scenario.seed = s;
    }
    scenario.validate().map_err(classify)?;
    Ok(scenario)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let file = File::create(path).map_err(internal)?;
    serde_json::to_writer_pretty(BufWriter::new(file), value).map_err(internal)
}

fn write_outputs(dir: &Path, scenario: &Scenario, log: &EpisodeLog) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(internal)?;
    log.write_csv(BufWriter::new(File::create(dir.join("episode.csv")).map_err(internal)?))
        .map_err(internal)?;
    write_json(&dir.join("steps.json"), &log.sidecar())?;
    write_json(&dir.join("plans.json"), &log.plans)?;
    let field = scenario
        .field_config()
        .build(scenario.obstacle.as_ref().map(|s| obstacle_position(s, 0.0)));
    field
        .write_csv(BufWriter::new(File::create(dir.join("sdf.csv")).map_err(internal)?))
        .map_err(internal)?;
    field
        .write_binary(BufWriter::new(File::create(dir.join("sdf.bin")).map_err(internal)?))
        .map_err(internal)?;
    Ok(())
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let scenario = load(&args.scenario, args.mode, args.seed)?;
    let log = run_episode(&scenario).map_err(classify)?;
    write_outputs(&args.out, &scenario, &log)?;
    let m = &log.summary;
    println!("scenario        {} ({}, seed {})", scenario.name, scenario.mode, scenario.seed);
    println!("goal error      {:.4} m, {:.3} deg", m.goal_position_error, m.goal_attitude_error_deg);
    println!("min clearance   {:.4} m", m.min_clearance);
    println!("tracking rmse   {:.4} m", m.tracking_rmse);
    println!("planner steps   {} ({} flagged)", m.planner_steps, m.flagged_steps);
    println!("median step     {:.2} ms", log.median_step_ms());
    println!("outputs         {}", args.out.display());
    if let Some(reason) = &log.aborted {
        return Err(Failure {
            code: EXIT_NAVIGATION,
            message: format!("episode aborted: {reason}"),
        });
    }
    if !m.success() {
        let why = if m.collision_free { "goal not reached" } else { "collision" };
        return Err(Failure {
            code: EXIT_NAVIGATION,
            message: format!("navigation failed: {why}"),
        });
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), Failure> {
    let base = load(&args.scenario, None, None)?;
    if base.obstacle.is_none() {
        return Err(config("sweep needs a scenario with an obstacle script"));
    }
    fs::create_dir_all(&args.out).map_err(internal)?;
    let mut rows = vec!["seed,mode,tracking_rmse,min_clearance,goal_position_error,median_step_ms,success".to_string()];
    let mut all_ok = true;
    let mut wins = 0;
    println!(
        "{:>6} {:>12} {:>12} {:>12} {:>12} {:>10} {:>10}",
        "seed", "rmse react", "rmse pred", "clear react", "clear pred", "ms react", "ms pred"
    );
    for seed in args.seed..args.seed + args.seeds {
        let mut pair = Vec::new();
        for mode in [PlanningMode::Reactive, PlanningMode::Predictive] {
            let mut s = base.clone();
            s.mode = mode;
            s.seed = seed;
            let log = run_episode(&s).map_err(classify)?;
            let m = &log.summary;
            all_ok &= m.success() && log.aborted.is_none();
            rows.push(format!(
                "{seed},{mode},{},{},{},{},{}",
                m.tracking_rmse,
                m.min_clearance,
                m.goal_position_error,
                log.median_step_ms(),
                m.success()
            ));
            pair.push(log);
        }
        let (r, p) = (&pair[0], &pair[1]);
        wins += usize::from(p.summary.tracking_rmse < r.summary.tracking_rmse);
        println!(
            "{seed:>6} {:>12.4} {:>12.4} {:>12.3} {:>12.3} {:>10.2} {:>10.2}",
            r.summary.tracking_rmse,
            p.summary.tracking_rmse,
            r.summary.min_clearance,
            p.summary.min_clearance,
            r.median_step_ms(),
            p.median_step_ms()
        );
    }
    println!("predictive tracks tighter in {wins}/{} seeds", args.seeds);
    fs::write(args.out.join("sweep.csv"), rows.join("\n") + "\n").map_err(internal)?;
    if all_ok {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_NAVIGATION,
            message: "at least one episode failed to navigate".into(),
        })
    }
}

fn verify_cmd(args: VerifyArgs) -> Result<(), Failure> {
    let report = verify::run_all();
    let table = report.table();
    print!("{table}");
    if let Some(dir) = args.out {
        fs::create_dir_all(&dir).map_err(internal)?;
        fs::write(dir.join("verify.txt"), &table).map_err(internal)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_NAVIGATION,
            message: format!("{} checks failed", report.failures().count()),
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Verify(a) => verify_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
