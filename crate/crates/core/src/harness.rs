//! Experiment plans, δ×ω grids over seeds, and trace export.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{EngineConfig, GameAction};
use crate::error::{Error, Result};
use crate::iug::{self, IugSetup, ReceiverTables};
use crate::metrics::{reward_summaries, EpisodeTrace, RewardSummary};
use crate::zerosum::{self, ZeroSumModel, ZeroSumSetup};

pub const ENGINE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Grid defaults used when a plan leaves the lists empty.
pub const DEFAULT_DELTAS: [f64; 5] = [0.01, 0.05, 0.1, 0.2, 0.3];
pub const DEFAULT_OMEGAS: [f64; 5] = [0.01, 0.05, 0.1, 0.2, 0.3];
pub const DEFAULT_SEEDS: u64 = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "game", rename_all = "snake_case")]
pub enum Pairing {
    Iug(IugSetup),
    Rowcol(ZeroSumSetup),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub pairing: Pairing,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub deltas: Vec<f64>,
    #[serde(default)]
    pub omegas: Vec<f64>,
    #[serde(default)]
    pub config: EngineConfig,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub delta: f64,
    pub omega: f64,
}

impl ExperimentPlan {
    pub fn new(pairing: Pairing, seeds: Vec<u64>, config: EngineConfig) -> Self {
        ExperimentPlan {
            pairing,
            seeds,
            deltas: vec![config.delta],
            omegas: vec![config.omega],
            config,
            out: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: ExperimentPlan = serde_json::from_str(text).map_err(|source| Error::Json {
            path: PathBuf::from("<plan>"),
            source,
        })?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        let plan: ExperimentPlan = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_owned(),
            source,
        })?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seed list is empty"));
        }
        for cell in self.cells() {
            self.cell_config(cell).validate()?;
        }
        if let Pairing::Iug(IugSetup { sender: iug::SenderAgent::Dom1 { psi }, .. }) = self.pairing {
            iug::SenderType::from_psi(psi)?;
            if self.config.planner_iterations == 0 {
                return Err(Error::ZeroBudget);
            }
        }
        Ok(())
    }

    /// δ × ω, sorted, with the config's own values standing in for empty lists.
    pub fn cells(&self) -> Vec<Cell> {
        let sorted = |v: &[f64], fallback: f64| -> Vec<f64> {
            let mut v = if v.is_empty() { vec![fallback] } else { v.to_vec() };
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let deltas = sorted(&self.deltas, self.config.delta);
        let omegas = sorted(&self.omegas, self.config.omega);
        deltas
            .iter()
            .flat_map(|&delta| omegas.iter().map(move |&omega| Cell { delta, omega }))
            .collect()
    }

    pub fn cell_config(&self, cell: Cell) -> EngineConfig {
        EngineConfig {
            delta: cell.delta,
            omega: cell.omega,
            ..self.config.clone()
        }
    }

    fn sorted_seeds(&self) -> Vec<u64> {
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Game-specific tables built once per plan and shared across workers.
enum Prepared {
    Iug(Arc<ReceiverTables>),
    Rowcol(ZeroSumModel),
}

impl Prepared {
    fn new(plan: &ExperimentPlan) -> Result<Self> {
        let c = &plan.config;
        Ok(match plan.pairing {
            Pairing::Iug(_) => Prepared::Iug(ReceiverTables::new(c.horizon, c.temperature, c.discount)),
            Pairing::Rowcol(_) => Prepared::Rowcol(ZeroSumModel::new(c)?),
        })
    }

    fn run(&self, pairing: &Pairing, config: &EngineConfig, seed: u64) -> Result<EpisodeTrace> {
        match (self, pairing) {
            (Prepared::Iug(t), Pairing::Iug(s)) => iug::run_episode(t, config, s, seed),
            (Prepared::Rowcol(m), Pairing::Rowcol(s)) => zerosum::run_episode(m, config, s, seed),
            _ => unreachable!("prepared tables match the pairing"),
        }
    }
}

/// One cell of a plan run over the plan's seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CellRun {
    pub cell: Cell,
    pub traces: Vec<EpisodeTrace>,
}

/// Play a single episode of one cell.
pub fn run_episode(plan: &ExperimentPlan, cell: Cell, seed: u64) -> Result<EpisodeTrace> {
    plan.validate()?;
    Prepared::new(plan)?.run(&plan.pairing, &plan.cell_config(cell), seed)
}

/// Run every (cell, seed). Output order is (δ, ω, seed) regardless of
/// `parallel`.
pub fn run_plan(plan: &ExperimentPlan, parallel: bool) -> Result<Vec<CellRun>> {
    plan.validate()?;
    let prepared = Prepared::new(plan)?;
    let cells = plan.cells();
    let seeds = plan.sorted_seeds();
    let tasks: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let configs: Vec<EngineConfig> = cells.iter().map(|&c| plan.cell_config(c)).collect();
    let run = |&(c, seed): &(usize, u64)| prepared.run(&plan.pairing, &configs[c], seed);
    let traces: Vec<EpisodeTrace> = if parallel {
        tasks.par_iter().map(run).collect::<Result<_>>()?
    } else {
        tasks.iter().map(run).collect::<Result<_>>()?
    };
    let mut it = traces.into_iter();
    Ok(cells
        .into_iter()
        .map(|cell| CellRun {
            cell,
            traces: it.by_ref().take(seeds.len()).collect(),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub delta: f64,
    pub omega: f64,
    pub summary: RewardSummary,
}

pub fn summarize(runs: &[CellRun]) -> Result<Vec<CellSummary>> {
    runs.iter()
        .map(|r| {
            Ok(CellSummary {
                delta: r.cell.delta,
                omega: r.cell.omega,
                summary: reward_summaries(&r.traces)?,
            })
        })
        .collect()
}

/// Paired ℵ-off vs ℵ-on summaries of the same cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub delta: f64,
    pub omega: f64,
    pub baseline: RewardSummary,
    pub aleph: RewardSummary,
    /// 1 − ratio_on / ratio_off for the A-to-B cumulative reward ratio.
    pub ratio_reduction: f64,
    pub reward_a_change: f64,
    pub reward_b_change: f64,
}

pub fn compare(plan: &ExperimentPlan, parallel: bool) -> Result<Vec<Comparison>> {
    let mut off = plan.clone();
    off.config.aleph_enabled = false;
    off.deltas = vec![plan.config.delta];
    off.omegas = vec![plan.config.omega];
    let base = summarize(&run_plan(&off, parallel)?)?.remove(0).summary;
    let mut on = plan.clone();
    on.config.aleph_enabled = true;
    Ok(summarize(&run_plan(&on, parallel)?)?
        .into_iter()
        .map(|c| Comparison {
            delta: c.delta,
            omega: c.omega,
            ratio_reduction: 1.0 - c.summary.ratio_a_to_b / base.ratio_a_to_b,
            reward_a_change: c.summary.reward_a.mean - base.reward_a.mean,
            reward_b_change: c.summary.reward_b.mean - base.reward_b.mean,
            baseline: base.clone(),
            aleph: c.summary,
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Nine significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.8e}")
}

fn action_label(a: GameAction) -> String {
    match a {
        GameAction::Offer(o) => format!("{:.1}", o.value()),
        other => char::from(other.to_byte()).to_string(),
    }
}

/// One CSV row per (cell, seed, trial), columns in `TrialLogRow` order.
pub fn write_csv<W: Write>(runs: &[CellRun], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let labels = runs
        .iter()
        .flat_map(|r| r.traces.first())
        .map(|t| t.type_labels.clone())
        .next()
        .unwrap_or_default();
    let mut header: Vec<String> = [
        "seed", "delta", "omega", "trial", "action_a", "action_b", "reward_a", "reward_b",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(labels.iter().map(|l| format!("belief_{l}")));
    header.extend(labels.iter().map(|l| format!("flag_{l}")));
    header.extend(["triggered", "expected_reward", "regret"].map(String::from));
    w.write_record(&header)?;

    for run in runs {
        for tr in &run.traces {
            for (t, rec) in tr.trials.iter().zip(tr.history.records()) {
                let mut row = vec![
                    tr.seed.to_string(),
                    fmt_num(run.cell.delta),
                    fmt_num(run.cell.omega),
                    t.trial.to_string(),
                    action_label(rec.action_a),
                    action_label(rec.action_b),
                    fmt_num(t.reward_a),
                    fmt_num(t.reward_b),
                ];
                row.extend(t.belief.iter().map(|&b| fmt_num(b)));
                row.extend((0..labels.len()).map(|i| {
                    t.flags.get(i).map_or_else(String::new, |&f| u8::from(f).to_string())
                }));
                row.push(u8::from(t.triggered).to_string());
                row.push(fmt_num(t.expected_reward));
                row.push(fmt_num(tr.victim_reward(t) - t.expected_reward));
                w.write_record(&row)?;
            }
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: PathBuf::from("<csv>"),
        source,
    })?;
    Ok(())
}

#[derive(Serialize)]
struct TraceDocument<'a> {
    engine_version: &'a str,
    plan: &'a ExperimentPlan,
    cells: Vec<TraceCell<'a>>,
}

#[derive(Serialize)]
struct TraceCell<'a> {
    delta: f64,
    omega: f64,
    traces: &'a [EpisodeTrace],
}

#[derive(Serialize)]
struct SummaryDocument<'a, S: Serialize> {
    engine_version: &'a str,
    plan: &'a ExperimentPlan,
    cells: &'a [S],
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_owned(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T, path: &Path) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Write full traces. Re-exporting the same runs gives identical bytes.
pub fn export(plan: &ExperimentPlan, runs: &[CellRun], format: Format, path: &Path) -> Result<()> {
    let bytes = match format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_csv(runs, &mut buf)?;
            buf
        }
        Format::Json => {
            let doc = TraceDocument {
                engine_version: ENGINE_VERSION,
                plan,
                cells: runs
                    .iter()
                    .map(|r| TraceCell {
                        delta: r.cell.delta,
                        omega: r.cell.omega,
                        traces: &r.traces,
                    })
                    .collect(),
            };
            to_json(&doc, path)?
        }
    };
    write_file(path, &bytes)
}

/// Write per-cell aggregates with the plan echoed and the engine version.
pub fn export_summary<S: Serialize>(plan: &ExperimentPlan, cells: &[S], path: &Path) -> Result<()> {
    let doc = SummaryDocument {
        engine_version: ENGINE_VERSION,
        plan,
        cells,
    };
    write_file(path, &to_json(&doc, path)?)
}

// ---------------------------------------------------------------------------
// List parsing
// ---------------------------------------------------------------------------

/// `"0..50"`, `"1,2,5"`, `"0..3,10"`. Ranges are half-open.
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim) {
        if part.is_empty() {
            return Err(Error::config(format!("empty entry in seed list {s:?}")));
        }
        let num = |x: &str| {
            x.trim()
                .parse::<u64>()
                .map_err(|_| Error::config(format!("bad seed {x:?}")))
        };
        if let Some((a, b)) = part.split_once("..") {
            let (a, b) = (num(a)?, num(b)?);
            if b <= a {
                return Err(Error::config(format!("empty seed range {part:?}")));
            }
            if b - a > 1_000_000 {
                return Err(Error::config(format!("seed range {part:?} too long")));
            }
            out.extend(a..b);
        } else {
            out.push(num(part)?);
        }
    }
    Ok(out)
}

/// Comma-separated finite reals.
pub fn parse_float_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            let v: f64 = x
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("bad number {x:?}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::config(format!("non-finite number {x:?}")))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iug::SenderAgent;
    use crate::zerosum::{ColumnAgent, RowAgent};

    fn iug_plan(seeds: Vec<u64>) -> ExperimentPlan {
        let c = EngineConfig {
            planner_iterations: 200,
            mechanism_samples: 30,
            aleph_enabled: true,
            ..EngineConfig::default()
        };
        ExperimentPlan::new(
            Pairing::Iug(IugSetup::new(SenderAgent::DomM1 { ty: None })),
            seeds,
            c,
        )
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seed_list("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seed_list("4, 1,0..2").unwrap(), vec![4, 1, 0, 1]);
        assert!(parse_seed_list("").is_err());
        assert!(parse_seed_list("3..3").is_err());
        assert!(parse_seed_list("x").is_err());
        assert!(parse_seed_list("0..99999999999").is_err());
    }

    #[test]
    fn float_lists() {
        assert_eq!(parse_float_list("0.1, 0.3").unwrap(), vec![0.1, 0.3]);
        assert!(parse_float_list("nan").is_err());
        assert!(parse_float_list("0.1,").is_err());
    }

    #[test]
    fn plan_json_round_trip() {
        let mut plan = iug_plan(vec![1, 2]);
        plan.deltas = vec![0.3, 0.1];
        let text = serde_json::to_string(&plan).unwrap();
        assert_eq!(ExperimentPlan::from_json(&text).unwrap(), plan);
        let cells = plan.cells();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].delta, 0.1);

        let rowcol = r#"{"pairing":{"game":"rowcol","row":{"kind":"dom1"},"column":"dom2","matrix":null},"seeds":[0]}"#;
        assert!(ExperimentPlan::from_json(rowcol).is_ok());
        let bad = r#"{"pairing":{"game":"rowcol","row":{"kind":"dom1"},"column":"dom2","matrix":null},"seeds":[]}"#;
        assert!(ExperimentPlan::from_json(bad).unwrap_err().is_config());
        let unknown = r#"{"pairing":{"game":"iug","sender":{"kind":"dom1","psi":0.1},"sender_models_aleph":true},"seeds":[0],"config":{"bogus":1}}"#;
        assert!(ExperimentPlan::from_json(unknown).unwrap_err().is_config());
    }

    #[test]
    fn aleph_without_samples_fails_before_running() {
        let mut plan = iug_plan(vec![0]);
        plan.config.mechanism_samples = 0;
        assert!(run_plan(&plan, false).unwrap_err().is_config());
    }

    #[test]
    fn parallel_matches_sequential() {
        let mut plan = iug_plan((0..4).collect());
        plan.deltas = vec![0.1, 0.3];
        let a = run_plan(&plan, false).unwrap();
        let b = run_plan(&plan, true).unwrap();
        assert_eq!(a, b);
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        write_csv(&a, &mut ca).unwrap();
        write_csv(&b, &mut cb).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn single_cell_grid_is_mean_of_episodes() {
        let plan = iug_plan(vec![3, 5]);
        let runs = run_plan(&plan, false).unwrap();
        let s = &summarize(&runs).unwrap()[0].summary;
        let cell = plan.cells()[0];
        let per_ep: Vec<f64> = [3, 5]
            .iter()
            .map(|&seed| {
                let tr = run_episode(&plan, cell, seed).unwrap();
                tr.cumulative_b() / tr.trials.len() as f64
            })
            .collect();
        assert!((s.reward_b.mean - (per_ep[0] + per_ep[1]) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let plan = ExperimentPlan::new(
            Pairing::Rowcol(ZeroSumSetup {
                row: RowAgent::Dom1,
                column: ColumnAgent::Dom0,
                matrix: None,
            }),
            vec![0],
            EngineConfig::default(),
        );
        let runs = run_plan(&plan, false).unwrap();
        let mut buf = Vec::new();
        write_csv(&runs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(!text.contains('\r'));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 12);
        assert!(lines[0].starts_with("seed,delta,omega,trial,action_a,action_b,reward_a,reward_b,belief_"));
        assert!(lines[0].ends_with("triggered,expected_reward,regret"));
        assert_eq!(lines[1].split(',').count(), lines[0].split(',').count());
        assert_eq!(fmt_num(0.1), "1.00000000e-1");
    }

    #[test]
    fn export_is_idempotent() {
        let plan = iug_plan(vec![0]);
        let runs = run_plan(&plan, false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for format in [Format::Csv, Format::Json] {
            let p = dir.path().join(format!("t.{format:?}"));
            export(&plan, &runs, format, &p).unwrap();
            let first = fs::read(&p).unwrap();
            export(&plan, &runs, format, &p).unwrap();
            assert_eq!(first, fs::read(&p).unwrap());
        }
        let s = dir.path().join("summary.json");
        export_summary(&plan, &summarize(&runs).unwrap(), &s).unwrap();
        let doc: serde_json::Value = serde_json::from_slice(&fs::read(&s).unwrap()).unwrap();
        assert_eq!(doc["engine_version"], ENGINE_VERSION);
        assert!(doc["plan"]["config"]["horizon"].is_number());
    }

    #[test]
    fn unwritable_path_reports_it() {
        let plan = iug_plan(vec![0]);
        let runs = run_plan(&plan, false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let err = export(&plan, &runs, Format::Csv, &blocker.join("x.csv")).unwrap_err();
        assert!(err.to_string().contains("file"));
    }
}
