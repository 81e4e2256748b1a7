//! Iterated Bayesian row/column zero-sum game.
//!
//! The row player may know which of two payoff matrices is in force; the
//! column player does not and infers it from the row's moves. Rewards are
//! hidden until the end of the episode, so inference runs on actions alone.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::aleph::{delta_schedule, minmax_row, typical, AlephFlags};
use crate::domain::{
    argmax, bayes_update, sample_index, softmax_into, BeliefVector, Column, DeltaMode,
    EngineConfig, GameAction, History, MatrixId, PolicyDistribution, RandomSource, Row,
    TrialRecord,
};
use crate::error::{Error, Result};
use crate::metrics::{EpisodeTrace, TrialTrace};
use crate::planning::{MemoExpectimax, Simulator};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PayoffMatrix {
    pub id: Option<MatrixId>,
    entries: [[f64; 3]; 2],
}

const G1: [[f64; 3]; 2] = [[4.0, 0.0, 2.0], [4.0, 0.0, -2.0]];
const G2: [[f64; 3]; 2] = [[0.0, 4.0, -2.0], [0.0, 4.0, 2.0]];

impl PayoffMatrix {
    pub fn new(id: MatrixId) -> Self {
        let entries = match id {
            MatrixId::G1 => G1,
            MatrixId::G2 => G2,
        };
        PayoffMatrix {
            id: Some(id),
            entries,
        }
    }

    pub fn from_entries(entries: [[f64; 3]; 2]) -> Self {
        PayoffMatrix { id: None, entries }
    }

    /// Entry-wise mean of G¹ and G²: what an agent ignorant of the matrix expects.
    pub fn averaged() -> Self {
        let mut e = [[0.0; 3]; 2];
        for (r, row) in e.iter_mut().enumerate() {
            for (c, x) in row.iter_mut().enumerate() {
                *x = 0.5 * (G1[r][c] + G2[r][c]);
            }
        }
        PayoffMatrix::from_entries(e)
    }

    pub fn row(&self, row: Row) -> [f64; 3] {
        self.entries[row.index()]
    }

    pub fn get(&self, row: Row, column: Column) -> f64 {
        self.entries[row.index()][column.index()]
    }

    /// `(row reward, column reward)`.
    pub fn payoff(&self, row: Row, column: Column) -> (f64, f64) {
        let g = self.get(row, column);
        (g, -g)
    }
}

/// Row-player types as the column player models them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowType {
    Uninformed,
    Informed(MatrixId),
}

pub static ROW_TYPES: [RowType; 3] = [
    RowType::Uninformed,
    RowType::Informed(MatrixId::G1),
    RowType::Informed(MatrixId::G2),
];

impl RowType {
    pub fn index(self) -> usize {
        match self {
            RowType::Uninformed => 0,
            RowType::Informed(MatrixId::G1) => 1,
            RowType::Informed(MatrixId::G2) => 2,
        }
    }

    /// The matrix this type's rewards are drawn from, in expectation.
    pub fn expected_matrix(self) -> PayoffMatrix {
        match self {
            RowType::Uninformed => PayoffMatrix::averaged(),
            RowType::Informed(id) => PayoffMatrix::new(id),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RowType::Uninformed => "theta0",
            RowType::Informed(MatrixId::G1) => "theta1",
            RowType::Informed(MatrixId::G2) => "theta2",
        }
    }
}

/// `P(θ=0) = 1/2, P(θ=1) = P(θ=2) = 1/4`, or a flat third each.
pub fn row_prior(flat: bool) -> BeliefVector<RowType> {
    if flat {
        BeliefVector::uniform(&ROW_TYPES)
    } else {
        BeliefVector::new(&ROW_TYPES, &[0.5, 0.25, 0.25]).expect("static prior")
    }
}

/// DoM(−1) row: uniform if uninformed, otherwise softmax over the row means
/// of its matrix (it assumes a uniform column player).
pub fn dom_m1_row_probs(theta: RowType, temperature: f64) -> [f64; 2] {
    match theta {
        RowType::Uninformed => [0.5, 0.5],
        RowType::Informed(id) => {
            let m = PayoffMatrix::new(id);
            let q: Vec<f64> = Row::ALL
                .iter()
                .map(|&r| m.row(r).iter().sum::<f64>() / 3.0)
                .collect();
            let mut p = [0.0; 2];
            softmax_into(&q, temperature, &mut p);
            p
        }
    }
}

pub fn dom_m1_row_policy(theta: RowType, temperature: f64) -> PolicyDistribution<Row> {
    let p = dom_m1_row_probs(theta, temperature);
    PolicyDistribution::new(Row::ALL.to_vec(), p.to_vec()).expect("softmax output")
}

pub fn dom0_column_update(
    belief: &BeliefVector<RowType>,
    row: Row,
    temperature: f64,
) -> Result<BeliefVector<RowType>> {
    let lik: Vec<f64> = ROW_TYPES
        .iter()
        .map(|&th| dom_m1_row_probs(th, temperature)[row.index()])
        .collect();
    bayes_update(belief, &lik)
}

/// Myopic column values: expected column reward over the believed row types
/// and their DoM(−1) policies.
pub fn dom0_column_q(belief: &BeliefVector<RowType>, temperature: f64) -> [f64; 3] {
    let mut q = [0.0; 3];
    for (theta, b) in belief.iter() {
        if b == 0.0 {
            continue;
        }
        let m = theta.expected_matrix();
        let p = dom_m1_row_probs(theta, temperature);
        for col in Column::ALL {
            for row in Row::ALL {
                q[col.index()] -= b * p[row.index()] * m.get(row, col);
            }
        }
    }
    q
}

pub fn column_policy_from_q(q: &[f64; 3], temperature: f64) -> [f64; 3] {
    let mut p = [0.0; 3];
    softmax_into(q, temperature, &mut p);
    p
}

pub fn dom0_column_policy(belief: &BeliefVector<RowType>, temperature: f64) -> PolicyDistribution<Column> {
    let p = column_policy_from_q(&dom0_column_q(belief, temperature), temperature);
    PolicyDistribution::new(Column::ALL.to_vec(), p.to_vec()).expect("softmax output")
}

pub fn dom0_column_act(
    belief: &BeliefVector<RowType>,
    temperature: f64,
    rng: &mut RandomSource,
) -> Column {
    dom0_column_policy(belief, temperature).sample(rng)
}

// ---------------------------------------------------------------------------
// Shared model: DoM(0) beliefs by row counts, DoM(1) Q tables.
// ---------------------------------------------------------------------------

/// Everything an episode needs that depends only on (T, 𝒯, γ, prior).
///
/// The DoM(0) posterior depends on the row history only through the counts
/// of T and B, so beliefs, column policies and DoM(1) values are tabulated
/// on `(t, n_T, n_B)`.
#[derive(Clone, Debug)]
pub struct ZeroSumModel {
    pub horizon: usize,
    pub temperature: f64,
    pub gamma: f64,
    pub flat_prior: bool,
    beliefs: Vec<BeliefVector<RowType>>,
    column: Vec<[f64; 3]>,
    dom1_q: [HashMap<(usize, usize, usize), [f64; 2]>; 2],
}

impl ZeroSumModel {
    pub fn new(config: &EngineConfig) -> Result<Self> {
        config.validate()?;
        let h = config.horizon;
        let mut model = ZeroSumModel {
            horizon: h,
            temperature: config.temperature,
            gamma: config.discount,
            flat_prior: config.flat_row_prior,
            beliefs: Vec::with_capacity((h + 1) * (h + 1)),
            column: Vec::with_capacity((h + 1) * (h + 1)),
            dom1_q: [HashMap::new(), HashMap::new()],
        };
        for n_t in 0..=h {
            for n_b in 0..=h {
                let mut b = row_prior(config.flat_row_prior);
                for _ in 0..n_t {
                    b = dom0_column_update(&b, Row::T, config.temperature)?;
                }
                for _ in 0..n_b {
                    b = dom0_column_update(&b, Row::B, config.temperature)?;
                }
                let q = dom0_column_q(&b, config.temperature);
                model.beliefs.push(b);
                model.column.push(column_policy_from_q(&q, config.temperature));
            }
        }
        for id in MatrixId::ALL {
            let sim = Dom1RowSim { model: &model, truth: PayoffMatrix::new(id) };
            let mut memo = MemoExpectimax::new();
            let mut table = HashMap::new();
            for t in 1..=h {
                for n_t in 0..t {
                    let n_b = t - 1 - n_t;
                    let s = CountState { t, n_t, n_b };
                    let q = memo.q_values(&sim, &s, h - t, config.discount);
                    table.insert((t, n_t, n_b), [q[0].1, q[1].1]);
                }
            }
            model.dom1_q[id as usize] = table;
        }
        Ok(model)
    }

    fn idx(&self, n_t: usize, n_b: usize) -> usize {
        n_t * (self.horizon + 1) + n_b
    }

    /// DoM(0) column belief after seeing `n_t` T's and `n_b` B's.
    pub fn column_belief(&self, n_t: usize, n_b: usize) -> BeliefVector<RowType> {
        self.beliefs[self.idx(n_t, n_b)]
    }

    pub fn column_probs(&self, n_t: usize, n_b: usize) -> [f64; 3] {
        self.column[self.idx(n_t, n_b)]
    }

    /// DoM(1) row Q-values at trial `t` given the counts of its earlier moves.
    pub fn dom1_q(&self, truth: MatrixId, t: usize, n_t: usize, n_b: usize) -> [f64; 2] {
        self.dom1_q[truth as usize][&(t, n_t, n_b)]
    }

    pub fn dom1_probs(&self, truth: MatrixId, t: usize, n_t: usize, n_b: usize) -> [f64; 2] {
        let mut p = [0.0; 2];
        softmax_into(&self.dom1_q(truth, t, n_t, n_b), self.temperature, &mut p);
        p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CountState {
    /// Trial about to be played, 1-based.
    pub t: usize,
    pub n_t: usize,
    pub n_b: usize,
}

/// The DoM(1) row player's model of the game: a DoM(0) column whose belief
/// follows the row's own moves, acting simultaneously each trial.
pub struct Dom1RowSim<'a> {
    pub model: &'a ZeroSumModel,
    pub truth: PayoffMatrix,
}

impl Simulator for Dom1RowSim<'_> {
    type State = CountState;
    type Action = Row;
    type Outcome = Column;

    fn actions(&self, s: &CountState) -> Vec<Row> {
        if s.t > self.model.horizon {
            vec![]
        } else {
            Row::ALL.to_vec()
        }
    }

    fn outcomes(&self, s: &CountState, _a: Row) -> Vec<(Column, f64)> {
        let p = self.model.column_probs(s.n_t, s.n_b);
        Column::ALL.iter().copied().zip(p).collect()
    }

    fn reward(&self, _s: &CountState, a: Row, o: Column) -> f64 {
        self.truth.get(a, o)
    }

    fn next(&self, s: &CountState, a: Row, _o: Column) -> CountState {
        CountState {
            t: s.t + 1,
            n_t: s.n_t + usize::from(a == Row::T),
            n_b: s.n_b + usize::from(a == Row::B),
        }
    }
}

// ---------------------------------------------------------------------------
// DoM(2) column
// ---------------------------------------------------------------------------

/// Row models held by the DoM(2) column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowModel {
    Dom1(MatrixId),
    Uninformed,
}

pub static ROW_MODELS: [RowModel; 3] = [
    RowModel::Dom1(MatrixId::G1),
    RowModel::Dom1(MatrixId::G2),
    RowModel::Uninformed,
];

impl RowModel {
    pub fn label(self) -> &'static str {
        match self {
            RowModel::Dom1(MatrixId::G1) => "dom1_g1",
            RowModel::Dom1(MatrixId::G2) => "dom1_g2",
            RowModel::Uninformed => "uninformed",
        }
    }
}

pub fn dom2_prior(flat: bool) -> BeliefVector<RowModel> {
    if flat {
        BeliefVector::uniform(&ROW_MODELS)
    } else {
        BeliefVector::new(&ROW_MODELS, &[0.25, 0.25, 0.5]).expect("static prior")
    }
}

/// Row-move probabilities each DoM(2) hypothesis predicts at `(t, n_T, n_B)`.
pub fn dom2_row_predictions(model: &ZeroSumModel, s: CountState) -> [[f64; 2]; 3] {
    [
        model.dom1_probs(MatrixId::G1, s.t, s.n_t, s.n_b),
        model.dom1_probs(MatrixId::G2, s.t, s.n_t, s.n_b),
        [0.5, 0.5],
    ]
}

pub fn dom2_update(
    model: &ZeroSumModel,
    belief: &BeliefVector<RowModel>,
    s: CountState,
    row: Row,
) -> Result<BeliefVector<RowModel>> {
    let pred = dom2_row_predictions(model, s);
    let lik: Vec<f64> = pred.iter().map(|p| p[row.index()]).collect();
    bayes_update(belief, &lik)
}

pub fn dom2_column_q(model: &ZeroSumModel, belief: &BeliefVector<RowModel>, s: CountState) -> [f64; 3] {
    let pred = dom2_row_predictions(model, s);
    let mut q = [0.0; 3];
    for (i, (h, b)) in belief.iter().enumerate() {
        let m = match h {
            RowModel::Dom1(id) => PayoffMatrix::new(id),
            RowModel::Uninformed => PayoffMatrix::averaged(),
        };
        for col in Column::ALL {
            for row in Row::ALL {
                q[col.index()] -= b * pred[i][row.index()] * m.get(row, col);
            }
        }
    }
    q
}

pub fn dom2_column_act(
    model: &ZeroSumModel,
    belief: &BeliefVector<RowModel>,
    s: CountState,
    rng: &mut RandomSource,
) -> Column {
    let p = column_policy_from_q(&dom2_column_q(model, belief, s), model.temperature);
    Column::ALL[sample_index(&p, rng.uniform())]
}

// ---------------------------------------------------------------------------
// DoM(1) row
// ---------------------------------------------------------------------------

/// DoM(1) row action; Q-values come from the tabulated expectimax.
pub fn dom1_row_act(model: &ZeroSumModel, truth: MatrixId, s: CountState, rng: &mut RandomSource) -> Row {
    let p = model.dom1_probs(truth, s.t, s.n_t, s.n_b);
    Row::ALL[sample_index(&p, rng.uniform())]
}

/// ℵ-mechanism for the DoM(1) row: δ-typicality of the column's moves
/// against its DoM(0) model. Rewards stay masked, so Z² never fires.
#[derive(Clone, Debug)]
pub struct RowAleph {
    pub flags: AlephFlags,
    delta: f64,
    mode: DeltaMode,
    horizon: usize,
    fbar_sum: [f64; 3],
    counts: [usize; 3],
}

impl RowAleph {
    pub fn new(config: &EngineConfig) -> Self {
        RowAleph {
            flags: AlephFlags::all_ones(1),
            delta: config.delta,
            mode: config.delta_mode,
            horizon: config.horizon,
            fbar_sum: [0.0; 3],
            counts: [0; 3],
        }
    }

    /// Fold in trial `t`: the DoM(0) model predicted `predicted`, the column
    /// actually played `observed`.
    pub fn observe(&mut self, t: usize, predicted: &[f64; 3], observed: Column) -> Result<()> {
        for (s, p) in self.fbar_sum.iter_mut().zip(predicted) {
            *s += p;
        }
        self.counts[observed.index()] += 1;
        let delta = match self.mode {
            DeltaMode::Constant => self.delta,
            DeltaMode::Schedule => delta_schedule(t, self.horizon),
        };
        let fbar: Vec<f64> = self.fbar_sum.iter().map(|s| s / t as f64).collect();
        let z1 = [typical(&self.counts, &fbar, t, delta)];
        self.flags = self.flags.combine(&z1, &[true])?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RowAgent {
    /// DoM(−1); `theta = None` draws the type from the prior.
    DomM1 { theta: Option<RowType> },
    Dom1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnAgent {
    Dom0,
    Dom2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroSumSetup {
    pub row: RowAgent,
    pub column: ColumnAgent,
    /// `None` draws the matrix uniformly.
    pub matrix: Option<MatrixId>,
}

/// Play one episode. Nature draws first, from the `nature` sub-stream: the
/// DoM(−1) type (if not fixed), then the matrix (if not implied or fixed).
pub fn run_episode(
    model: &ZeroSumModel,
    config: &EngineConfig,
    setup: &ZeroSumSetup,
    seed: u64,
) -> Result<EpisodeTrace> {
    config.validate()?;
    if model.horizon != config.horizon || model.temperature != config.temperature {
        return Err(Error::config("zero-sum model built for a different configuration"));
    }
    let root = RandomSource::new(seed);
    let mut nature = root.derive("nature");
    let mut row_rng = root.derive("row");
    let mut col_rng = root.derive("column");

    let theta = match setup.row {
        RowAgent::DomM1 { theta: Some(th) } => Some(th),
        RowAgent::DomM1 { theta: None } => {
            let prior = row_prior(config.flat_row_prior);
            Some(ROW_TYPES[sample_index(prior.masses(), nature.uniform())])
        }
        RowAgent::Dom1 => None,
    };
    let truth = match (theta, setup.matrix) {
        (Some(RowType::Informed(id)), _) => id,
        (_, Some(id)) => id,
        (_, None) => MatrixId::ALL[nature.below(2)],
    };
    let matrix = PayoffMatrix::new(truth);
    let true_type = match theta {
        Some(th) => th,
        None => RowType::Informed(truth),
    };
    let aleph_on = config.aleph_enabled && setup.row == RowAgent::Dom1;
    let row_is_victim = setup.row == RowAgent::Dom1 && setup.column == ColumnAgent::Dom2;

    let mut history = History::new();
    let mut trials = Vec::with_capacity(config.horizon);
    let mut s = CountState { t: 1, n_t: 0, n_b: 0 };
    let mut dom2_belief = dom2_prior(config.flat_row_prior);
    let mut aleph = RowAleph::new(config);
    let oob = minmax_row(&matrix);

    for t in 1..=config.horizon {
        s.t = t;
        let col_belief = model.column_belief(s.n_t, s.n_b);
        let col_probs = model.column_probs(s.n_t, s.n_b);
        let triggered = aleph_on && aleph.flags.triggered();

        let row_probs = match (setup.row, theta) {
            (RowAgent::DomM1 { .. }, Some(th)) => dom_m1_row_probs(th, config.temperature),
            _ if triggered => {
                let mut p = [0.0; 2];
                p[oob.index()] = 1.0;
                p
            }
            _ => model.dom1_probs(truth, t, s.n_t, s.n_b),
        };
        let row = Row::ALL[sample_index(&row_probs, row_rng.uniform())];

        let column = match setup.column {
            ColumnAgent::Dom0 => Column::ALL[sample_index(&col_probs, col_rng.uniform())],
            ColumnAgent::Dom2 => dom2_column_act(model, &dom2_belief, s, &mut col_rng),
        };
        let (r_row, r_col) = matrix.payoff(row, column);

        if setup.column == ColumnAgent::Dom2 {
            dom2_belief = dom2_update(model, &dom2_belief, s, row)?;
        }
        if aleph_on && !aleph.flags.triggered() {
            aleph.observe(t, &col_probs, column)?;
        }

        let next = CountState {
            t: t + 1,
            n_t: s.n_t + usize::from(row == Row::T),
            n_b: s.n_b + usize::from(row == Row::B),
        };
        let post = model.column_belief(next.n_t, next.n_b);

        // Victim-side expectations under the victim's own model.
        let (victim_belief, flags, expected, expected_other) = if row_is_victim {
            let mut e = 0.0;
            for r in Row::ALL {
                for c in Column::ALL {
                    e += row_probs[r.index()] * col_probs[c.index()] * matrix.get(r, c);
                }
            }
            let flags = if aleph_on { aleph.flags.as_slice().to_vec() } else { vec![true] };
            (post.masses().to_vec(), flags, e, -e)
        } else {
            let q = dom0_column_q(&col_belief, config.temperature);
            let e: f64 = q.iter().zip(col_probs).map(|(q, p)| q * p).sum();
            (post.masses().to_vec(), Vec::new(), e, -e)
        };

        history.push(TrialRecord {
            trial: t,
            action_a: GameAction::Row(row),
            action_b: GameAction::Column(column),
            reward_a: Some(r_row),
            reward_b: Some(r_col),
            reward_visible: t == config.horizon,
        })?;
        trials.push(TrialTrace {
            trial: t,
            belief: victim_belief,
            flags,
            triggered: aleph_on && aleph.flags.triggered(),
            reward_a: r_row,
            reward_b: r_col,
            expected_reward: expected,
            expected_deceiver_reward: expected_other,
        });
        s = next;
    }
    history.reveal_rewards();

    Ok(EpisodeTrace {
        seed,
        history,
        trials,
        type_labels: ROW_TYPES.iter().map(|t| t.label().to_string()).collect(),
        true_type: Some(true_type.index()),
        victim_is_a: row_is_victim,
    })
}

/// Index of the most likely row type (lowest index on ties).
pub fn column_map_estimate(belief: &BeliefVector<RowType>) -> RowType {
    ROW_TYPES[argmax(belief.masses())]
}
