use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use aleph_ipomdp::domain::{EngineConfig, MatrixId};
use aleph_ipomdp::harness::{
    self, compare, export, export_summary, parse_float_list, parse_seed_list, run_plan, summarize,
    ExperimentPlan, Format, Pairing, DEFAULT_DELTAS, DEFAULT_OMEGAS, DEFAULT_SEEDS,
};
use aleph_ipomdp::iug::{IugSetup, SenderAgent, SenderType};
use aleph_ipomdp::zerosum::{ColumnAgent, RowAgent, RowType, ZeroSumSetup};
use aleph_ipomdp::{Error, Result};

/// Theory-of-mind deception experiments with the ℵ-mechanism.
#[derive(Parser)]
#[command(name = "aleph", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Play one cell over the seeds and write full traces.
    Run(Opts),
    /// Sweep δ × ω over the seeds and write per-cell summaries.
    Grid(Opts),
    /// Like `run` with the ℵ-mechanism forced off.
    Baseline(Opts),
    /// Paired ℵ-off vs ℵ-on summaries for every cell.
    Compare(Opts),
}

#[derive(Clone, Copy, ValueEnum)]
enum Game {
    Iug,
    Rowcol,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum RowTypeArg {
    /// Draw from the prior.
    Prior,
    Uninformed,
    Informed,
}

#[derive(Args)]
struct Opts {
    /// JSON experiment plan; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    game: Option<Game>,
    /// Sender (IUG) or row player (rowcol) depth: -1 or 1.
    #[arg(long, allow_hyphen_values = true)]
    sender_dom: Option<i8>,
    /// Receiver (IUG) or column player (rowcol) depth: 0, or 2 for rowcol.
    #[arg(long)]
    receiver_dom: Option<u8>,
    /// Sender threshold ψ: 0.1, 0.5, or `random` for a DoM(-1) random sender.
    #[arg(long)]
    threshold: Option<String>,
    /// Payoff matrix, 1 or 2; drawn uniformly when absent.
    #[arg(long)]
    matrix: Option<u8>,
    /// DoM(-1) row player's informedness.
    #[arg(long, value_enum)]
    row_type: Option<RowTypeArg>,
    /// The ℵ-unaware DoM(1) sender: its receiver model omits the mechanism.
    #[arg(long)]
    unaware_sender: bool,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// δ values, comma separated.
    #[arg(long)]
    delta: Option<String>,
    /// ω values, comma separated.
    #[arg(long)]
    omega: Option<String>,
    /// ℵ sample count N.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    planner_iterations: Option<usize>,
    /// Seeds: `0..50`, `1,2,3`, or a mix. Defaults to `0..50`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long, value_enum)]
    aleph: Option<Switch>,
    /// Output directory.
    #[arg(long, env = "ALEPH_OUT_DIR", default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Run seeds one at a time instead of in parallel.
    #[arg(long)]
    sequential: bool,
}

fn pairing_from_flags(o: &Opts) -> Result<Option<Pairing>> {
    let touched = o.game.is_some()
        || o.sender_dom.is_some()
        || o.receiver_dom.is_some()
        || o.threshold.is_some()
        || o.matrix.is_some()
        || o.row_type.is_some()
        || o.unaware_sender;
    if !touched {
        return Ok(None);
    }
    let matrix = o
        .matrix
        .map(MatrixId::from_number)
        .transpose()?;
    Ok(Some(match o.game.unwrap_or(Game::Iug) {
        Game::Iug => {
            if o.receiver_dom.unwrap_or(0) != 0 {
                return Err(Error::config("the IUG receiver is DoM(0)"));
            }
            let threshold = o.threshold.as_deref().unwrap_or("0.1");
            let sender = match (o.sender_dom.unwrap_or(1), threshold) {
                (-1, "random") => SenderAgent::DomM1 { ty: Some(SenderType::Random) },
                (-1, "any") => SenderAgent::DomM1 { ty: None },
                (-1, psi) => SenderAgent::DomM1 { ty: Some(SenderType::from_psi(parse_psi(psi)?)?) },
                (1, psi) => SenderAgent::Dom1 { psi: parse_psi(psi)? },
                (d, _) => return Err(Error::config(format!("IUG sender depth must be -1 or 1, got {d}"))),
            };
            Pairing::Iug(IugSetup {
                sender,
                sender_models_aleph: !o.unaware_sender,
            })
        }
        Game::Rowcol => {
            let row = match o.sender_dom.unwrap_or(1) {
                -1 => RowAgent::DomM1 {
                    theta: match (o.row_type.unwrap_or(RowTypeArg::Prior), matrix) {
                        (RowTypeArg::Prior, _) => None,
                        (RowTypeArg::Uninformed, _) => Some(RowType::Uninformed),
                        (RowTypeArg::Informed, Some(m)) => Some(RowType::Informed(m)),
                        (RowTypeArg::Informed, None) => {
                            return Err(Error::config("an informed row type needs --matrix"))
                        }
                    },
                },
                1 => RowAgent::Dom1,
                d => return Err(Error::config(format!("row depth must be -1 or 1, got {d}"))),
            };
            let column = match o.receiver_dom.unwrap_or(0) {
                0 => ColumnAgent::Dom0,
                2 => ColumnAgent::Dom2,
                d => return Err(Error::config(format!("column depth must be 0 or 2, got {d}"))),
            };
            Pairing::Rowcol(ZeroSumSetup { row, column, matrix })
        }
    }))
}

fn parse_psi(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::config(format!("threshold {s:?} is not 0.1, 0.5 or random")))
}

fn build_plan(o: &Opts, grid_defaults: bool) -> Result<ExperimentPlan> {
    let mut plan = match &o.config {
        Some(path) => ExperimentPlan::load(path)?,
        None => ExperimentPlan::new(
            Pairing::Iug(IugSetup::new(SenderAgent::Dom1 { psi: 0.1 })),
            (0..DEFAULT_SEEDS).collect(),
            EngineConfig::default(),
        ),
    };
    let from_file = o.config.is_some();
    if let Some(p) = pairing_from_flags(o)? {
        plan.pairing = p;
    }
    let c = &mut plan.config;
    if let Some(v) = o.trials {
        c.horizon = v;
    }
    if let Some(v) = o.temperature {
        c.temperature = v;
    }
    if let Some(v) = o.gamma {
        c.discount = v;
    }
    if let Some(v) = o.samples {
        c.mechanism_samples = v;
    }
    if let Some(v) = o.planner_iterations {
        c.planner_iterations = v;
    }
    if let Some(a) = o.aleph {
        c.aleph_enabled = a == Switch::On;
    }
    if let Some(s) = &o.seeds {
        plan.seeds = parse_seed_list(s)?;
    }
    match &o.delta {
        Some(d) => plan.deltas = parse_float_list(d)?,
        None if grid_defaults && !from_file => plan.deltas = DEFAULT_DELTAS.to_vec(),
        None => {}
    }
    match &o.omega {
        Some(w) => plan.omegas = parse_float_list(w)?,
        None if grid_defaults && !from_file => plan.omegas = DEFAULT_OMEGAS.to_vec(),
        None => {}
    }
    if let Some(&d) = plan.deltas.first() {
        plan.config.delta = d;
    }
    if let Some(&w) = plan.omegas.first() {
        plan.config.omega = w;
    }
    plan.out = Some(o.out.clone());
    plan.validate()?;
    Ok(plan)
}

fn format_of(f: FormatArg) -> Format {
    match f {
        FormatArg::Csv => Format::Csv,
        FormatArg::Json => Format::Json,
    }
}

fn trace_path(out: &Path, f: FormatArg) -> PathBuf {
    out.join(match f {
        FormatArg::Csv => "trace.csv",
        FormatArg::Json => "trace.json",
    })
}

fn write_grid_csv(cells: &[harness::CellSummary], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record([
        "delta",
        "omega",
        "episodes",
        "reward_a",
        "reward_b",
        "abs_difference",
        "ratio_a_to_b",
        "trigger_rate",
        "trigger_trial",
    ])?;
    for c in cells {
        let s = &c.summary;
        w.write_record([
            harness::fmt_num(c.delta),
            harness::fmt_num(c.omega),
            s.episodes.to_string(),
            harness::fmt_num(s.reward_a.mean),
            harness::fmt_num(s.reward_b.mean),
            harness::fmt_num(s.abs_difference.mean),
            harness::fmt_num(s.ratio_a_to_b),
            harness::fmt_num(s.trigger_rate),
            harness::fmt_num(s.trigger_trial.mean),
        ])?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_owned(), source })
}

fn print_cells(cells: &[harness::CellSummary]) {
    for c in cells {
        let s = &c.summary;
        println!(
            "delta={} omega={} episodes={} reward_a={:.4} reward_b={:.4} ratio={:.4} trigger_rate={:.3}",
            c.delta, c.omega, s.episodes, s.reward_a.mean, s.reward_b.mean, s.ratio_a_to_b, s.trigger_rate
        );
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(o) => run_cmd(&o, false),
        Command::Baseline(o) => run_cmd(&o, true),
        Command::Grid(o) => {
            let plan = build_plan(&o, true)?;
            let runs = run_plan(&plan, !o.sequential)?;
            let cells = summarize(&runs)?;
            export(&plan, &runs, format_of(o.format), &trace_path(&o.out, o.format))?;
            export_summary(&plan, &cells, &o.out.join("summary.json"))?;
            write_grid_csv(&cells, &o.out.join("grid.csv"))?;
            print_cells(&cells);
            Ok(())
        }
        Command::Compare(o) => {
            let plan = build_plan(&o, false)?;
            let rows = compare(&plan, !o.sequential)?;
            export_summary(&plan, &rows, &o.out.join("compare.json"))?;
            for r in &rows {
                println!(
                    "delta={} omega={} ratio_off={:.4} ratio_on={:.4} reduction={:.1}%",
                    r.delta,
                    r.omega,
                    r.baseline.ratio_a_to_b,
                    r.aleph.ratio_a_to_b,
                    100.0 * r.ratio_reduction
                );
            }
            Ok(())
        }
    }
}

fn run_cmd(o: &Opts, baseline: bool) -> Result<()> {
    let mut plan = build_plan(o, false)?;
    if baseline {
        plan.config.aleph_enabled = false;
    }
    let runs = run_plan(&plan, !o.sequential)?;
    let cells = summarize(&runs)?;
    export(&plan, &runs, format_of(o.format), &trace_path(&o.out, o.format))?;
    export_summary(&plan, &cells, &o.out.join("summary.json"))?;
    print_cells(&cells);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
