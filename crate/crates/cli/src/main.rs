use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gridftc::observability::{kalman_rank, structurally_observable, CostReport, ZeroPattern};
use gridftc::observer::InteractionBounds;
use gridftc::power::{linearize, LinearizedPlant, PlantModel};
use gridftc::reconfig::{faulty_output_matrix, rftc_select, FaultEvent, FaultKind, PlanMode, ReconfigPlan, SelectionConfig, SubsystemId};
use gridftc::sim::{active_at_diagnosis, diagnosis_inputs, run_scenario, Scenario};

mod plotdata;

/// Fraction of the post-fault peak the trailing deviation must fall under
/// for a fault to count as recovered.
const RECOVERY_FRACTION: f64 = 0.05;

/// Fault-tolerant control simulator for multi-machine power systems.
///
/// Exit status: 0 on success, 2 on invalid input (unparsable or failing
/// validation, missing file, unknown column), 3 when a diagnosed fault has
/// no admissible reconfiguration plan.
#[derive(Debug, Parser)]
#[command(name = "gridftc", version)]
struct Cli {
    /// Relative singular-value threshold for rank decisions.
    #[arg(long, global = true, value_name = "TOL")]
    tol: Option<f64>,
    /// Seed for measurement noise; overrides the scenario's.
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,
    /// Output directory for run and plotdata files.
    #[arg(long, global = true, env = "GRIDFTC_OUT", value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate a scenario and its plant.
    Validate { scenario: PathBuf },
    /// Simulate a scenario; writes the trajectory CSV, event log and report.
    Run {
        scenario: PathBuf,
        /// Log diagnoses but never switch observers.
        #[arg(long)]
        no_reconfig: bool,
    },
    /// Observability verdicts and, for a fault, the candidate cost table.
    Analyze {
        plant: PathBuf,
        /// Faulty subsystem id (1-based). Without it, only nominal
        /// observability is reported.
        #[arg(long, value_name = "ID")]
        subsystem: Option<usize>,
        #[arg(long, value_enum, default_value_t = Kind::TotalLoss)]
        kind: Kind,
        /// Output scale for `--kind gain`.
        #[arg(long, default_value_t = 0.5)]
        factor: f64,
        #[arg(long, default_value_t = 100.0)]
        alpha: f64,
        #[arg(long, default_value_t = 50.0)]
        xi: f64,
        /// Cost ceiling above which candidates are rejected.
        #[arg(long)]
        j_max: Option<f64>,
    },
    /// The plan chosen at each diagnosis of a scenario, without simulating.
    Plan { scenario: PathBuf },
    /// Extract series from a trajectory CSV, one `t,value` file per selector.
    ///
    /// A selector is a column name such as `sub5_x1`, `err:subN` for the
    /// infinity norm of `x - xhat` on subsystem N, or `err` for all of them.
    Plotdata {
        csv: PathBuf,
        #[arg(required = true)]
        select: Vec<String>,
        /// Keep every STRIDE-th row, starting with the first.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Gain,
    Stuck,
    TotalLoss,
}

/// Terminal outcomes other than plain success.
#[derive(Debug)]
enum Failure {
    Input(String),
    Unrecoverable(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(m) => write!(f, "error: {m}"),
            Failure::Unrecoverable(m) => write!(f, "unrecoverable: {m}"),
        }
    }
}

impl From<gridftc::Error> for Failure {
    fn from(e: gridftc::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

fn io_err(path: &Path, e: impl fmt::Display) -> Failure {
    Failure::Input(format!("{}: {e}", path.display()))
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.exit_code() == 0 { 0 } else { 2 });
        }
    };
    match std::panic::catch_unwind(|| dispatch(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(f)) => {
            eprintln!("{f}");
            ExitCode::from(match f {
                Failure::Input(_) => 2,
                Failure::Unrecoverable(_) => 3,
            })
        }
        Err(_) => ExitCode::from(2),
    }
}

fn dispatch(cli: &Cli) -> Outcome {
    if let Some(t) = cli.tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Failure::Input("invalid parameter `--tol`: must be finite and > 0".into()));
        }
    }
    match &cli.command {
        Command::Validate { scenario } => {
            let (scn, plant) = load_scenario(cli, scenario)?;
            println!("{}: valid, {} machines, {} steps, {} faults", scenario_id(&scn, scenario), plant.n(), scn.steps(), scn.faults.len());
            Ok(())
        }
        Command::Run { scenario, no_reconfig } => cmd_run(cli, scenario, *no_reconfig),
        Command::Analyze { plant, subsystem, kind, factor, alpha, xi, j_max } => {
            let fault = subsystem.map(|s| (s, *kind, *factor));
            let cfg = SelectionConfig { alpha: *alpha, xi: *xi, j_max: *j_max, tol: tolerances(cli, Default::default()), excluded: Vec::new() };
            cmd_analyze(plant, fault, &cfg)
        }
        Command::Plan { scenario } => cmd_plan(cli, scenario),
        Command::Plotdata { csv, select, stride } => {
            let written = plotdata::extract(csv, select, *stride, &out_dir(cli)?)?;
            for p in written {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn tolerances(cli: &Cli, base: gridftc::observability::Tolerances) -> gridftc::observability::Tolerances {
    match cli.tol {
        Some(rank) => gridftc::observability::Tolerances { rank, ..base },
        None => base,
    }
}

fn load_scenario(cli: &Cli, path: &Path) -> Result<(Scenario, PlantModel), Failure> {
    let (mut scn, plant) = Scenario::load(path)?;
    scn.tol = tolerances(cli, scn.tol);
    if let Some(seed) = cli.seed {
        scn.seed = seed;
    }
    scn.validate(&plant)?;
    Ok((scn, plant))
}

fn scenario_id(scn: &Scenario, path: &Path) -> String {
    if scn.name.is_empty() {
        path.file_stem().map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned())
    } else {
        scn.name.clone()
    }
}

fn out_dir(cli: &Cli) -> Result<PathBuf, Failure> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

fn write_file(path: &Path, write: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<(), String>) -> Outcome {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write(&mut w).map_err(|e| io_err(path, e))?;
    std::io::Write::flush(&mut w).map_err(|e| io_err(path, e))
}

#[derive(Debug, Serialize)]
struct EventSummary {
    t: f64,
    label: String,
    detail: String,
}

#[derive(Debug, Serialize)]
struct FaultVerdict {
    fault_index: usize,
    subsystem: SubsystemId,
    t_fault: f64,
    /// `recovered`, `not-recovered`, `unrecoverable` or `diverged`.
    verdict: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<PlanMode>,
    peak: f64,
    tail_max: f64,
}

#[derive(Debug, Serialize)]
struct OutputFiles {
    csv: PathBuf,
    events: PathBuf,
    report: PathBuf,
}

#[derive(Debug, Serialize)]
struct RunReport {
    scenario: String,
    wall_time_s: f64,
    rows: usize,
    diverged: bool,
    events: Vec<EventSummary>,
    verdicts: Vec<FaultVerdict>,
    interaction: InteractionBounds,
    outputs: OutputFiles,
}

fn cmd_run(cli: &Cli, path: &Path, no_reconfig: bool) -> Outcome {
    let (mut scn, plant) = load_scenario(cli, path)?;
    if no_reconfig {
        scn.reconfiguration = false;
    }
    let id = scenario_id(&scn, path);
    let dir = out_dir(cli)?;
    let named = |given: &Option<String>, suffix: &str| dir.join(given.clone().unwrap_or_else(|| format!("{id}{suffix}")));
    let outputs = OutputFiles {
        csv: named(&scn.output.csv, ".csv"),
        events: named(&scn.output.events, ".events.json"),
        report: named(&scn.output.report, ".report.json"),
    };

    let started = Instant::now();
    let log = run_scenario(&scn, &plant)?;
    let wall_time_s = started.elapsed().as_secs_f64();

    write_file(&outputs.csv, |w| log.write_csv(w).map_err(|e| e.to_string()))?;
    write_file(&outputs.events, |w| log.write_events(w).map_err(|e| e.to_string()))?;

    let verdicts = log
        .recovery(&scn.faults, scn.recovery_window, RECOVERY_FRACTION)?
        .into_iter()
        .map(|v| {
            let f = &scn.faults[v.fault_index];
            let verdict = if v.mode == Some(PlanMode::Unrecoverable) {
                "unrecoverable"
            } else if v.diverged {
                "diverged"
            } else if v.recovered {
                "recovered"
            } else {
                "not-recovered"
            };
            FaultVerdict { fault_index: v.fault_index, subsystem: f.subsystem, t_fault: f.t_fault, verdict, mode: v.mode, peak: v.peak, tail_max: v.tail_max }
        })
        .collect::<Vec<_>>();
    let report = RunReport {
        scenario: id.clone(),
        wall_time_s,
        rows: log.rows(),
        diverged: log.diverged,
        events: log.events.iter().map(|e| EventSummary { t: e.t, label: e.label(), detail: e.detail.clone() }).collect(),
        verdicts,
        interaction: log.interaction.clone(),
        outputs,
    };
    write_file(&report.outputs.report, |w| {
        serde_json::to_writer_pretty(&mut *w, &report).map_err(|e| e.to_string())?;
        std::io::Write::write_all(w, b"\n").map_err(|e| e.to_string())
    })?;

    for e in &report.events {
        println!("{:>10.3}  {}", e.t, e.label);
    }
    for v in &report.verdicts {
        println!("fault {} on {}: {}", v.fault_index, v.subsystem, v.verdict);
    }
    println!("report: {}", report.outputs.report.display());

    let stuck: Vec<String> = report.verdicts.iter().filter(|v| v.verdict == "unrecoverable").map(|v| format!("fault {} on subsystem {}", v.fault_index, v.subsystem)).collect();
    if stuck.is_empty() {
        Ok(())
    } else {
        Err(Failure::Unrecoverable(format!("{id}: {}", stuck.join(", "))))
    }
}

#[derive(Debug, Serialize)]
struct ObservabilityVerdict {
    subsystem: SubsystemId,
    kalman_rank: usize,
    observable: bool,
    structural: bool,
}

/// Verdicts for one subsystem's own pair with `faults` applied to its output.
fn verdict(lin: &LinearizedPlant, id: SubsystemId, faults: &[&FaultEvent], tol: f64) -> Result<ObservabilityVerdict, Failure> {
    let a = lin.a_dyn(id.index());
    let c = faulty_output_matrix(&lin.c_dyn(id.index()), faults);
    let (kalman_rank, observable) = kalman_rank(&a, &c, tol)?;
    let structural = structurally_observable(&ZeroPattern::of(&a, &c));
    Ok(ObservabilityVerdict { subsystem: id, kalman_rank, observable, structural })
}

#[derive(Debug, Serialize)]
struct CandidateRow<'a> {
    #[serde(flatten)]
    report: &'a CostReport,
    chosen: bool,
}

#[derive(Debug, Serialize)]
struct FaultAnalysis<'a> {
    fault: &'a FaultEvent,
    degraded: ObservabilityVerdict,
    candidates: Vec<CandidateRow<'a>>,
    plan: &'a ReconfigPlan,
}

#[derive(Debug, Serialize)]
struct Analysis<'a> {
    plant: &'a Path,
    subsystems: usize,
    nominal: Vec<ObservabilityVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fault: Option<FaultAnalysis<'a>>,
}

fn candidate_rows(plan: &ReconfigPlan) -> Vec<CandidateRow<'_>> {
    let mut chosen: Vec<usize> = plan.augment_set.iter().map(|s| s.0).collect();
    chosen.sort_unstable();
    plan.candidates
        .iter()
        .map(|c| {
            let mut ids = c.candidate.clone();
            ids.sort_unstable();
            CandidateRow { report: c, chosen: plan.mode == PlanMode::Augmentation && ids == chosen }
        })
        .collect()
}

fn cmd_analyze(path: &Path, fault: Option<(usize, Kind, f64)>, cfg: &SelectionConfig) -> Outcome {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let plant = PlantModel::from_json(&text).map_err(|e| io_err(path, e))?;
    let lin = linearize(&plant.operating_point, &plant.generators, &plant.network)?;
    let tol = cfg.tol.rank;
    let nominal = (0..lin.n())
        .map(|i| verdict(&lin, SubsystemId::from_index(i), &[], tol))
        .collect::<Result<Vec<_>, _>>()?;
    let Some((sub, kind, factor)) = fault else {
        return print_json(&Analysis { plant: path, subsystems: lin.n(), nominal, fault: None });
    };
    let id = SubsystemId(sub).check(lin.n())?;
    let kind = match kind {
        Kind::Gain => FaultKind::Gain { factor },
        Kind::Stuck => FaultKind::Stuck,
        Kind::TotalLoss => FaultKind::TotalLoss,
    };
    let event = FaultEvent { t_fault: 0.0, subsystem: id, sensor_row: 0, kind, fdi_delay: 0.0 };
    event.validate(0, lin.n(), 1)?;
    let c_if = faulty_output_matrix(&lin.c_dyn(id.index()), &[&event]);
    let plan = rftc_select(id, &c_if, &lin, cfg)?;
    let degraded = verdict(&lin, id, &[&event], tol)?;
    let analysis = Analysis {
        plant: path,
        subsystems: lin.n(),
        nominal,
        fault: Some(FaultAnalysis { fault: &event, degraded, candidates: candidate_rows(&plan), plan: &plan }),
    };
    print_json(&analysis)?;
    unrecoverable_if(&[&plan])
}

#[derive(Debug, Serialize)]
struct PlanEntry {
    fault_index: usize,
    subsystem: SubsystemId,
    t_diagnosed: f64,
    excluded: Vec<SubsystemId>,
    plan: ReconfigPlan,
}

fn cmd_plan(cli: &Cli, path: &Path) -> Outcome {
    let (scn, plant) = load_scenario(cli, path)?;
    let lin = linearize(&plant.operating_point, &plant.generators, &plant.network)?;
    let mut entries = Vec::with_capacity(scn.faults.len());
    for (k, f) in scn.faults.iter().enumerate() {
        let (c_if, cfg) = diagnosis_inputs(&scn, &lin, k, &active_at_diagnosis(&scn, k));
        let plan = rftc_select(f.subsystem, &c_if, &lin, &cfg)?;
        entries.push(PlanEntry { fault_index: k, subsystem: f.subsystem, t_diagnosed: f.t_diagnosed(), excluded: cfg.excluded, plan });
    }
    print_json(&entries)?;
    unrecoverable_if(&entries.iter().map(|e| &e.plan).collect::<Vec<_>>())
}

fn unrecoverable_if(plans: &[&ReconfigPlan]) -> Outcome {
    let bad: Vec<String> = plans.iter().filter(|p| p.mode == PlanMode::Unrecoverable).map(|p| format!("subsystem {}", p.faulty)).collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Failure::Unrecoverable(format!("no admissible plan for {}", bad.join(", "))))
    }
}

fn print_json<T: Serialize>(value: &T) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Input(e.to_string()))?;
    println!("{text}");
    Ok(())
}
