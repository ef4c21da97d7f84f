use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use sncert_core::cone::{inner_decomposition, DecompositionBudget, SeesawOptions};
use sncert_core::game::{self, GameInstance, GameOptions};
use sncert_core::linalg::{eigh, CMatrix};
use sncert_core::objects::{BipartiteState, ChoiMatrix, DistributedMeasurement, Ensemble, TeleportationInstrument};
use sncert_core::robustness::{self, RobustnessOptions};
use sncert_core::sdp::SolverSettings;
use sncert_core::Error;

const EXIT_VALIDATION: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_ASSERTION: u8 = 4;

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    Rke,
    Rkdm,
    Rsc,
    Game,
    VerifyTheorem2,
    VerifyTheorem5,
    Decompose,
    Choi,
}

/// Schmidt-number robustness of states, distributed measurements and
/// teleportation instruments.
#[derive(Parser, Debug)]
#[command(name = "sncert", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Bipartite state (JSON).
    #[arg(long)]
    state: Option<PathBuf>,
    /// Distributed measurement (JSON).
    #[arg(long)]
    measurement: Option<PathBuf>,
    /// Teleportation instrument (JSON).
    #[arg(long)]
    instrument: Option<PathBuf>,
    /// Labeled ensemble for the discrimination game (JSON).
    #[arg(long)]
    ensemble: Option<PathBuf>,
    /// Schmidt-number threshold.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Solver feasibility and gap tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Restarts for see-saw searches.
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Embed the conic program in the report.
    #[arg(long)]
    dump_problem: bool,
}

#[derive(Serialize)]
struct RunConfig<'a> {
    command: Command,
    state: Option<&'a Path>,
    measurement: Option<&'a Path>,
    instrument: Option<&'a Path>,
    ensemble: Option<&'a Path>,
    k: usize,
    tol: Option<f64>,
    restarts: Option<usize>,
    seed: u64,
    dump_problem: bool,
}

enum Failure {
    Validation(String),
    Solver(String),
    Assertion(Value, String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Solver(_) | Error::Numerical(_) | Error::DecompositionFailed { .. } => Failure::Solver(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

fn read_input<T: DeserializeOwned>(flag: &str, path: Option<&Path>) -> Result<T, Failure> {
    let path = path.ok_or_else(|| Failure::Validation(format!("--{flag} is required for this command")))?;
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Validation(format!("--{flag} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("--{flag} {}: {e}", path.display())))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

impl Cli {
    fn solver(&self) -> SolverSettings {
        match self.tol {
            Some(t) => SolverSettings::with_tol(t),
            None => SolverSettings::default(),
        }
    }

    fn robustness_options(&self) -> RobustnessOptions {
        let mut o = RobustnessOptions { solver: self.solver(), seed: self.seed, ..Default::default() };
        if let Some(r) = self.restarts {
            o.seesaw = SeesawOptions { restarts: r.max(1), ..o.seesaw };
            o.validation_restarts = (2 * r).max(1);
        }
        o
    }

    fn game_options(&self) -> GameOptions {
        let mut o = GameOptions { solver: self.solver(), seed: self.seed, ..Default::default() };
        if let Some(r) = self.restarts {
            o.restarts = r.max(1);
        }
        o
    }

    fn config(&self) -> RunConfig<'_> {
        RunConfig {
            command: self.command,
            state: self.state.as_deref(),
            measurement: self.measurement.as_deref(),
            instrument: self.instrument.as_deref(),
            ensemble: self.ensemble.as_deref(),
            k: self.k,
            tol: self.tol,
            restarts: self.restarts,
            seed: self.seed,
            dump_problem: self.dump_problem,
        }
    }
}

/// Runs the command; returns the result object and, for `--dump-problem`,
/// the conic program.
fn execute(cli: &Cli) -> Result<(Value, Option<Value>), Failure> {
    let ro = cli.robustness_options();
    match cli.command {
        Command::Rke => {
            let rho: BipartiteState = read_input("state", cli.state.as_deref())?;
            let problem = cli
                .dump_problem
                .then(|| robustness::state_problem(rho.matrix(), rho.d_a(), rho.d_b(), cli.k).map(|p| to_value(&p.0.conic_form())))
                .transpose()?;
            Ok((to_value(&robustness::r_ke(&rho, cli.k, &ro)?), problem))
        }
        Command::Rkdm => {
            let m: DistributedMeasurement = read_input("measurement", cli.measurement.as_deref())?;
            m.validate()?;
            let problem = cli
                .dump_problem
                .then(|| robustness::dm_problem(&m, cli.k).map(|p| to_value(&p.0.conic_form())))
                .transpose()?;
            Ok((to_value(&robustness::r_kdm(&m, cli.k, &ro)?), problem))
        }
        Command::Rsc => {
            let inst: TeleportationInstrument = read_input("instrument", cli.instrument.as_deref())?;
            inst.validate()?;
            let problem = cli
                .dump_problem
                .then(|| robustness::instrument_problem(&inst, cli.k).map(|p| to_value(&p.0.conic_form())))
                .transpose()?;
            Ok((to_value(&robustness::r_sc(&inst, cli.k, &ro)?), problem))
        }
        Command::Game => {
            let ens: Ensemble = read_input("ensemble", cli.ensemble.as_deref())?;
            let rho: BipartiteState = read_input("state", cli.state.as_deref())?;
            let g = GameInstance::new(ens, rho, cli.k)?;
            Ok((to_value(&game::evaluate(&g, None, &cli.game_options())?), None))
        }
        Command::VerifyTheorem2 => {
            let rho: BipartiteState = read_input("state", cli.state.as_deref())?;
            let rec = robustness::verify_theorem2(&rho, cli.k, &ro)?;
            let v = to_value(&rec);
            if rec.passed == Some(false) {
                return Err(Failure::Assertion(
                    v,
                    format!("robustness values differ by {:.3e} in exact mode", rec.max_deviation),
                ));
            }
            Ok((v, None))
        }
        Command::VerifyTheorem5 => {
            let rho: BipartiteState = read_input("state", cli.state.as_deref())?;
            let rec = game::verify_theorem5(&rho, cli.k, 32, &ro, &cli.game_options())?;
            let label = cli.state.as_deref().map(|p| p.display().to_string()).unwrap_or_default();
            println!("{:<24} {:>12} {:>27} {:>6}", "instance", "r_ke", "ratio bracket", "result");
            println!(
                "{:<24} {:>12.8} {:>27} {:>6}",
                label,
                rec.r_ke.lower,
                format!("[{:.8}, {:.8}]", rec.ratio.lower, rec.ratio.upper),
                match rec.passed {
                    Some(true) => "pass",
                    Some(false) => "FAIL",
                    None => "n/a",
                }
            );
            let v = to_value(&rec);
            if rec.passed == Some(false) {
                return Err(Failure::Assertion(v, "advantage ratio does not match 1 + R_ke".into()));
            }
            Ok((v, None))
        }
        Command::Decompose => {
            let rho: BipartiteState = read_input("state", cli.state.as_deref())?;
            let dec = inner_decomposition(&rho, cli.k, &DecompositionBudget::default(), cli.seed)?;
            Ok((to_value(&dec), None))
        }
        Command::Choi => choi_command(cli).map(|v| (v, None)),
    }
}

/// Reports an instrument's aggregate channel, or reads a state as a Choi
/// matrix and returns Kraus operators for it.
fn choi_command(cli: &Cli) -> Result<Value, Failure> {
    if cli.instrument.is_some() {
        let inst: TeleportationInstrument = read_input("instrument", cli.instrument.as_deref())?;
        inst.validate()?;
        let agg = inst.aggregate();
        let elements: Vec<Value> = inst
            .choi_list
            .iter()
            .map(|j| json!({ "trace": j.matrix().trace().re, "rank": rank(j.matrix()) }))
            .collect();
        return Ok(json!({
            "d_in": inst.d_in(),
            "d_out": inst.d_out(),
            "aggregate": to_value(&agg),
            "trace_preservation_deviation": agg.trace_preservation_deviation(),
            "elements": elements,
        }));
    }
    let rho: BipartiteState = read_input("state", cli.state.as_deref())?;
    let (d_in, d_out) = (rho.d_a(), rho.d_b());
    let choi = ChoiMatrix::from_matrix(rho.matrix().clone(), d_in, d_out)?;
    let (vals, vecs) = eigh(choi.matrix());
    let kraus: Vec<CMatrix> = vals
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 1e-12)
        .map(|(i, &v)| {
            let s = (v * d_in as f64).sqrt();
            // Eigenvector of J on V ⊗ out reshaped to K[o, i] = √(d λ) ψ[i, o].
            CMatrix::from_fn(d_out, d_in, |o, a| vecs[(a * d_out + o, i)] * s)
        })
        .collect();
    #[derive(Serialize)]
    struct KrausOut {
        #[serde(with = "sncert_core::serde_complex::matrix_list")]
        kraus: Vec<CMatrix>,
    }
    Ok(json!({
        "d_in": d_in,
        "d_out": d_out,
        "trace_preservation_deviation": choi.trace_preservation_deviation(),
        "kraus": to_value(&KrausOut { kraus })["kraus"],
    }))
}

fn rank(m: &CMatrix) -> usize {
    let (vals, _) = eigh(m);
    let top = vals.iter().cloned().fold(0.0, f64::max);
    vals.iter().filter(|&&v| v > 1e-10 * top.max(1e-300)).count()
}

fn emit(cli: &Cli, result: Value, problem: Option<Value>) -> std::io::Result<()> {
    let mut report = json!({
        "tool": "sncert",
        "version": sncert_core::VERSION,
        "config": to_value(&cli.config()),
        "result": result,
    });
    if let Some(p) = problem {
        report["problem"] = p;
    }
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    match &cli.out {
        Some(path) => fs::write(path, text),
        None if matches!(cli.command, Command::VerifyTheorem5) => Ok(()),
        None => std::io::stdout().write_all(text.as_bytes()),
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("SNCERT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
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
    configure_threads();
    let (result, problem, code) = match execute(&cli) {
        Ok((v, p)) => (v, p, 0),
        Err(Failure::Assertion(v, msg)) => {
            eprintln!("sncert: assertion failed: {msg}");
            (v, None, EXIT_ASSERTION)
        }
        Err(Failure::Validation(msg)) => {
            eprintln!("sncert: invalid input: {msg}");
            return ExitCode::from(EXIT_VALIDATION);
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("sncert: solver failure: {msg}");
            return ExitCode::from(EXIT_SOLVER);
        }
    };
    if let Err(e) = emit(&cli, result, problem) {
        eprintln!("sncert: cannot write report: {e}");
        return ExitCode::from(EXIT_VALIDATION);
    }
    ExitCode::from(code)
}
