use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use disclinations::flow::{IntegratorSettings, Termination};
use disclinations::glide::GlideSet;
use disclinations::model::FrankAngle;
use disclinations::pairlab;
use disclinations::scenarios::{self, Mode, Scenario, ScenarioError};
use disclinations::verify;

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_SELFCHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "discsim", version, about = "Dissipative dynamics of wedge disclinations in the unit disk")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run built-in benchmarks or TOML scenario files and write CSV traces.
    Run(RunArgs),
    /// List the built-in benchmarks.
    List,
    /// Run the oracle suite; exits with status 3 if any check fails.
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Integrate the symmetric dipole separation and print T,delta rows.
    Dipole {
        #[arg(long)]
        delta0: f64,
        #[arg(long)]
        s: f64,
        #[arg(long, default_value_t = 1.0)]
        t_end: f64,
        #[arg(long, default_value_t = 0.01)]
        sample_interval: f64,
    },
    /// Print the unstable dipole equilibrium separation.
    Equilibrium,
}

#[derive(Args)]
struct RunArgs {
    /// Built-in names (see `list`) or paths to TOML scenario files.
    #[arg(required = true)]
    targets: Vec<String>,
    /// Output CSV file for a single target, otherwise a directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    abs_tol: Option<f64>,
    /// Critical collision distance.
    #[arg(long)]
    eps_c: Option<f64>,
    #[arg(long)]
    sample_interval: Option<f64>,
    /// Restrict motion to a glide set (`axes` or `hex`).
    #[arg(long)]
    glide_set: Option<String>,
    /// Recorded in the trace header.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run the targets concurrently.
    #[arg(long)]
    parallel: bool,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        let code = match e {
            ScenarioError::Parse(_) | ScenarioError::Validation(_) => EXIT_VALIDATION,
            ScenarioError::Runtime(_) | ScenarioError::Output(_) => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn load_target(target: &str) -> Result<Scenario, Failure> {
    if let Some(sc) = scenarios::builtin(target) {
        return Ok(sc);
    }
    let path = Path::new(target);
    if !path.exists() {
        return Err(Failure::validation(format!(
            "{target:?} is neither a built-in scenario nor an existing file"
        )));
    }
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::validation(format!("cannot read {target}: {e}")))?;
    Ok(scenarios::parse_config(&text)?)
}

fn apply_overrides(sc: &mut Scenario, args: &RunArgs) -> Result<(), Failure> {
    let s: &mut IntegratorSettings = &mut sc.settings;
    if let Some(v) = args.t_end {
        s.t_end = v;
    }
    if let Some(v) = args.rel_tol {
        s.rel_tol = v;
    }
    if let Some(v) = args.abs_tol {
        s.abs_tol = v;
    }
    if let Some(v) = args.eps_c {
        s.collision_distance = v;
    }
    if let Some(v) = args.sample_interval {
        s.sample_interval = v;
    }
    if let Some(name) = &args.glide_set {
        let gs = GlideSet::named(name).map_err(|e| Failure::validation(e.to_string()))?;
        sc.mode = Mode::Glide;
        sc.glide_set = Some(gs);
    }
    sc.validate()?;
    Ok(())
}

fn output_path(out: &Path, name: &str, single: bool) -> PathBuf {
    if single && !out.is_dir() && out.extension().is_some() {
        out.to_path_buf()
    } else {
        out.join(format!("{name}.csv"))
    }
}

fn run_one(sc: &Scenario, path: &Path, seed: u64) -> Result<String, Failure> {
    let file = scenarios::run_scenario(sc, path, seed)?;
    let mut msg = format!(
        "{}: {} rows, {} events -> {}",
        sc.name,
        file.rows.len(),
        file.events.len(),
        path.display()
    );
    if file.header.termination == Termination::StepCollapse {
        msg.push_str(" (ended early: step size collapsed)");
    }
    Ok(msg)
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let mut jobs = Vec::new();
    for target in &args.targets {
        let mut sc = load_target(target)?;
        apply_overrides(&mut sc, args)?;
        let path = output_path(&args.out, &sc.name, args.targets.len() == 1);
        jobs.push((sc, path));
    }
    let results: Vec<Result<String, Failure>> = if args.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|(sc, path)| scope.spawn(move || run_one(sc, path, args.seed)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("scenario thread panicked"))
                .collect()
        })
    } else {
        jobs.iter()
            .map(|(sc, path)| run_one(sc, path, args.seed))
            .collect()
    };
    let mut code = None;
    let mut failed = 0;
    for r in results {
        match r {
            Ok(msg) => println!("{msg}"),
            Err(f) => {
                eprintln!("error: {}", f.message);
                code.get_or_insert(f.code);
                failed += 1;
            }
        }
    }
    match code {
        None => Ok(()),
        Some(code) => Err(Failure {
            code,
            message: format!("{failed} of {} scenarios failed", jobs.len()),
        }),
    }
}

fn cmd_list() {
    let mut out = io::stdout().lock();
    for sc in scenarios::builtin_scenarios() {
        let _ = writeln!(
            out,
            "{:<18} mode={} t_end={} N={}",
            sc.name,
            sc.mode.as_str(),
            sc.settings.t_end,
            sc.disclinations.len()
        );
        for (k, d) in sc.disclinations.items().iter().enumerate() {
            let _ = writeln!(
                out,
                "    D{}: s={:+} at ({:.6}, {:.6})",
                k + 1,
                d.s(),
                d.pos.x,
                d.pos.y
            );
        }
    }
}

fn cmd_selfcheck(seed: u64) -> Result<(), Failure> {
    let reports = verify::run_invariant_suite(seed);
    let mut failed = 0;
    for r in &reports {
        println!(
            "{:<26} {}  max abs {:.3e}  max rel {:.3e}",
            r.name,
            if r.pass { "pass" } else { "FAIL" },
            r.max_abs_error,
            r.max_rel_error
        );
        if !r.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Failure {
            code: EXIT_SELFCHECK,
            message: format!("{failed} of {} checks failed", reports.len()),
        });
    }
    println!("all {} checks passed (seed {seed})", reports.len());
    Ok(())
}

fn cmd_dipole(delta0: f64, s: f64, t_end: f64, sample_interval: f64) -> Result<(), Failure> {
    let s = FrankAngle::new(s).map_err(|e| Failure::validation(e.to_string()))?;
    let settings = IntegratorSettings {
        t_end,
        sample_interval,
        ..Default::default()
    };
    let tr = pairlab::simulate_dipole_with(delta0, s, &settings).map_err(|e| match e {
        pairlab::PairError::Flow(_) | pairlab::PairError::InvalidSeparation(_) => {
            Failure::validation(e.to_string())
        }
        other => Failure {
            code: EXIT_RUNTIME,
            message: other.to_string(),
        },
    })?;
    let mut out = io::stdout().lock();
    let _ = writeln!(out, "T,delta");
    for (t, d) in tr.times.iter().zip(&tr.deltas) {
        let _ = writeln!(out, "{t:e},{d:e}");
    }
    if tr.termination == Termination::StepCollapse {
        eprintln!("note: separation reached the coincidence guard before t_end");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::List => {
            cmd_list();
            Ok(())
        }
        Command::Selfcheck { seed } => cmd_selfcheck(seed),
        Command::Dipole {
            delta0,
            s,
            t_end,
            sample_interval,
        } => cmd_dipole(delta0, s, t_end, sample_interval),
        Command::Equilibrium => {
            let s = FrankAngle::new(1.0).expect("nonzero");
            println!("{:.12}", pairlab::find_dipole_equilibrium(s));
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
