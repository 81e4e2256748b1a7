//! Shared vocabulary: actions, histories, agent specifications, beliefs,
//! policies, seeded randomness and engine configuration, plus the three
//! numerical primitives everything else is built from (softmax, Bayes, returns).

use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when asserting that a distribution has unit mass.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Likelihoods below this are treated as this value before the zero check.
pub const LIKELIHOOD_FLOOR: f64 = 1e-300;

/// Largest opponent-type set used by either game.
pub const MAX_TYPES: usize = 4;

// ---------------------------------------------------------------------------
// Actions
// ---------------------------------------------------------------------------

/// An offer of `index / 10` of the endowment. Stored as an index so that
/// equality never drifts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Offer(u8);

impl Offer {
    pub const COUNT: usize = 11;

    pub fn new(index: u8) -> Result<Self> {
        if index as usize >= Self::COUNT {
            return Err(Error::InvalidOffer(index));
        }
        Ok(Offer(index))
    }

    /// # Panics
    /// If `index > 10`. Use [`Offer::new`] for untrusted input.
    pub const fn from_index(index: u8) -> Self {
        assert!(index <= 10, "offer index out of range");
        Offer(index)
    }

    pub const fn index(self) -> u8 {
        self.0
    }

    /// Fraction of the endowment handed to the receiver.
    pub fn value(self) -> f64 {
        f64::from(self.0) / 10.0
    }

    pub fn all() -> impl Iterator<Item = Offer> {
        (0..Self::COUNT as u8).map(Offer)
    }
}

impl TryFrom<u8> for Offer {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        Offer::new(v)
    }
}

impl From<Offer> for u8 {
    fn from(o: Offer) -> u8 {
        o.0
    }
}

impl fmt::Display for Offer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}", self.value())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Row {
    T,
    B,
}

impl Row {
    pub const ALL: [Row; 2] = [Row::T, Row::B];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Column {
    L,
    M,
    R,
}

impl Column {
    pub const ALL: [Column; 3] = [Column::L, Column::M, Column::R];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Which family of [`GameAction`] a byte should decode to. The single-byte
/// encodings overlap (`R` is both "reject" and "right column").
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    Offer,
    Response,
    Row,
    Column,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GameAction {
    Offer(Offer),
    Response { accept: bool },
    Row(Row),
    Column(Column),
}

impl GameAction {
    pub fn kind(self) -> ActionKind {
        match self {
            GameAction::Offer(_) => ActionKind::Offer,
            GameAction::Response { .. } => ActionKind::Response,
            GameAction::Row(_) => ActionKind::Row,
            GameAction::Column(_) => ActionKind::Column,
        }
    }

    /// One byte per action: offers `'0'..=':'`, responses `A`/`R`, rows `T`/`B`,
    /// columns `L`/`M`/`R`.
    pub fn to_byte(self) -> u8 {
        match self {
            GameAction::Offer(o) => b'0' + o.index(),
            GameAction::Response { accept: true } => b'A',
            GameAction::Response { accept: false } => b'R',
            GameAction::Row(Row::T) => b'T',
            GameAction::Row(Row::B) => b'B',
            GameAction::Column(Column::L) => b'L',
            GameAction::Column(Column::M) => b'M',
            GameAction::Column(Column::R) => b'R',
        }
    }

    pub fn from_byte(kind: ActionKind, byte: u8) -> Result<Self> {
        let action = match (kind, byte) {
            (ActionKind::Offer, b'0'..=b':') => GameAction::Offer(Offer(byte - b'0')),
            (ActionKind::Response, b'A') => GameAction::Response { accept: true },
            (ActionKind::Response, b'R') => GameAction::Response { accept: false },
            (ActionKind::Row, b'T') => GameAction::Row(Row::T),
            (ActionKind::Row, b'B') => GameAction::Row(Row::B),
            (ActionKind::Column, b'L') => GameAction::Column(Column::L),
            (ActionKind::Column, b'M') => GameAction::Column(Column::M),
            (ActionKind::Column, b'R') => GameAction::Column(Column::R),
            _ => return Err(Error::InvalidActionByte(byte)),
        };
        Ok(action)
    }

    pub fn as_offer(self) -> Option<Offer> {
        match self {
            GameAction::Offer(o) => Some(o),
            _ => None,
        }
    }

    pub fn as_accept(self) -> Option<bool> {
        match self {
            GameAction::Response { accept } => Some(accept),
            _ => None,
        }
    }

    pub fn as_row(self) -> Option<Row> {
        match self {
            GameAction::Row(r) => Some(r),
            _ => None,
        }
    }

    pub fn as_column(self) -> Option<Column> {
        match self {
            GameAction::Column(c) => Some(c),
            _ => None,
        }
    }
}

impl fmt::Display for GameAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GameAction::Offer(o) => write!(f, "{o}"),
            GameAction::Response { accept: true } => f.write_str("accept"),
            GameAction::Response { accept: false } => f.write_str("reject"),
            GameAction::Row(r) => write!(f, "{r:?}"),
            GameAction::Column(c) => write!(f, "{c:?}"),
        }
    }
}

/// Encode a sequence of same-kind actions, one byte each.
pub fn encode_actions(actions: &[GameAction]) -> Vec<u8> {
    actions.iter().map(|a| a.to_byte()).collect()
}

pub fn decode_actions(kind: ActionKind, bytes: &[u8]) -> Result<Vec<GameAction>> {
    bytes.iter().map(|&b| GameAction::from_byte(kind, b)).collect()
}

// ---------------------------------------------------------------------------
// History
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub action_a: GameAction,
    pub action_b: GameAction,
    pub reward_a: Option<f64>,
    pub reward_b: Option<f64>,
    pub reward_visible: bool,
}

impl TrialRecord {
    /// Rewards as an agent may observe them: `None` while masked.
    pub fn visible_rewards(&self) -> Option<(f64, f64)> {
        if !self.reward_visible {
            return None;
        }
        Some((self.reward_a?, self.reward_b?))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    records: Vec<TrialRecord>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a record; its trial index must be the next one.
    pub fn push(&mut self, record: TrialRecord) -> Result<()> {
        let expected = self.records.len() + 1;
        if record.trial != expected {
            return Err(Error::config(format!(
                "trial {} appended where {} was expected",
                record.trial, expected
            )));
        }
        if let Some(first) = self.records.first() {
            if first.action_a.kind() != record.action_a.kind()
                || first.action_b.kind() != record.action_b.kind()
            {
                return Err(Error::config("action kinds mixed within one history"));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TrialRecord> {
        self.records.last()
    }

    pub fn actions_a(&self) -> impl Iterator<Item = GameAction> + '_ {
        self.records.iter().map(|r| r.action_a)
    }

    pub fn actions_b(&self) -> impl Iterator<Item = GameAction> + '_ {
        self.records.iter().map(|r| r.action_b)
    }

    /// Reveal every stored reward (used once an episode has ended).
    pub fn reveal_rewards(&mut self) {
        for r in &mut self.records {
            r.reward_visible = true;
        }
    }
}

// ---------------------------------------------------------------------------
// Agents
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Sender,
    Receiver,
    Row,
    Column,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MatrixId {
    G1,
    G2,
}

impl MatrixId {
    pub const ALL: [MatrixId; 2] = [MatrixId::G1, MatrixId::G2];

    pub fn number(self) -> u8 {
        match self {
            MatrixId::G1 => 1,
            MatrixId::G2 => 2,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(MatrixId::G1),
            2 => Ok(MatrixId::G2),
            _ => Err(Error::config(format!("matrix id must be 1 or 2, got {n}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Persona {
    RandomSender,
    ThresholdSender { psi: f64 },
    InformedRow { matrix: MatrixId },
    UninformedRow,
    Planner,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub dom_level: i8,
    pub role: Role,
    pub persona: Persona,
}

/// Thresholds the receiver's type set knows about.
pub const THRESHOLDS: [f64; 2] = [0.1, 0.5];

impl AgentSpec {
    pub fn new(dom_level: i8, role: Role, persona: Persona) -> Result<Self> {
        let spec = AgentSpec {
            dom_level,
            role,
            persona,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1..=2).contains(&self.dom_level) {
            return Err(Error::config(format!(
                "DoM level {} outside -1..=2",
                self.dom_level
            )));
        }
        let persona_ok = match (self.dom_level, self.persona) {
            (-1, Persona::RandomSender) => self.role == Role::Sender,
            (-1, Persona::ThresholdSender { psi }) => {
                self.role == Role::Sender && THRESHOLDS.contains(&psi)
            }
            (-1, Persona::InformedRow { .. } | Persona::UninformedRow) => self.role == Role::Row,
            (-1, Persona::Planner) => false,
            (_, Persona::Planner) => true,
            _ => false,
        };
        if !persona_ok {
            return Err(Error::config(format!(
                "persona {:?} is not valid for DoM({}) {:?}",
                self.persona, self.dom_level, self.role
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Beliefs and policies
// ---------------------------------------------------------------------------

/// Probability mass over a fixed, ordered set of opponent types.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeliefVector<T: 'static> {
    support: &'static [T],
    mass: [f64; MAX_TYPES],
}

impl<T: 'static + Copy + PartialEq + fmt::Debug> BeliefVector<T> {
    pub fn new(support: &'static [T], mass: &[f64]) -> Result<Self> {
        if support.is_empty() || support.len() > MAX_TYPES {
            return Err(Error::config("belief support must hold 1..=4 types"));
        }
        if mass.len() != support.len() {
            return Err(Error::SupportMismatch {
                expected: support.len(),
                got: mass.len(),
            });
        }
        check_distribution(mass)?;
        let mut m = [0.0; MAX_TYPES];
        m[..mass.len()].copy_from_slice(mass);
        Ok(BeliefVector { support, mass: m })
    }

    pub fn uniform(support: &'static [T]) -> Self {
        let n = support.len();
        assert!((1..=MAX_TYPES).contains(&n));
        let mut m = [0.0; MAX_TYPES];
        m[..n].fill(1.0 / n as f64);
        BeliefVector { support, mass: m }
    }

    pub fn point(support: &'static [T], index: usize) -> Self {
        assert!(index < support.len());
        let mut m = [0.0; MAX_TYPES];
        m[index] = 1.0;
        BeliefVector { support, mass: m }
    }

    pub fn support(&self) -> &'static [T] {
        self.support
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass[..self.support.len()]
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn prob(&self, t: T) -> f64 {
        self.support
            .iter()
            .position(|&s| s == t)
            .map_or(0.0, |i| self.mass[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (T, f64)> + '_ {
        self.support.iter().copied().zip(self.mass.iter().copied())
    }

    /// Index of the most probable type (lowest index on ties).
    pub fn argmax(&self) -> usize {
        argmax(self.masses())
    }
}

/// `posterior ∝ prior · likelihood`. Likelihoods are floored at
/// [`LIKELIHOOD_FLOOR`] before the zero check, so only an all-zero (or
/// non-finite) vector is an impossible observation.
pub fn bayes_update<T>(prior: &BeliefVector<T>, likelihoods: &[f64]) -> Result<BeliefVector<T>>
where
    T: 'static + Copy + PartialEq + fmt::Debug,
{
    let n = prior.len();
    if likelihoods.len() != n {
        return Err(Error::SupportMismatch {
            expected: n,
            got: likelihoods.len(),
        });
    }
    if likelihoods.iter().all(|&l| l <= 0.0) || likelihoods.iter().any(|l| !l.is_finite()) {
        return Err(Error::ImpossibleObservation);
    }
    let mut post = [0.0; MAX_TYPES];
    let mut total = 0.0;
    for i in 0..n {
        let l = if likelihoods[i] > 0.0 {
            likelihoods[i].max(LIKELIHOOD_FLOOR)
        } else {
            0.0
        };
        post[i] = prior.mass[i] * l;
        total += post[i];
    }
    if !(total > 0.0) {
        return Err(Error::ImpossibleObservation);
    }
    for p in &mut post[..n] {
        *p /= total;
    }
    debug_assert!(check_distribution(&post[..n]).is_ok());
    Ok(BeliefVector {
        support: prior.support,
        mass: post,
    })
}

/// Distribution over the legal actions of the acting role.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyDistribution<A> {
    actions: Vec<A>,
    probs: Vec<f64>,
}

impl<A: Copy + PartialEq + fmt::Debug> PolicyDistribution<A> {
    pub fn new(actions: Vec<A>, probs: Vec<f64>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::NoLegalActions);
        }
        if actions.len() != probs.len() {
            return Err(Error::SupportMismatch {
                expected: actions.len(),
                got: probs.len(),
            });
        }
        check_distribution(&probs)?;
        Ok(PolicyDistribution { actions, probs })
    }

    pub fn uniform(actions: Vec<A>) -> Result<Self> {
        let n = actions.len();
        if n == 0 {
            return Err(Error::NoLegalActions);
        }
        Ok(PolicyDistribution {
            actions,
            probs: vec![1.0 / n as f64; n],
        })
    }

    pub fn degenerate(action: A) -> Self {
        PolicyDistribution {
            actions: vec![action],
            probs: vec![1.0],
        }
    }

    pub fn actions(&self) -> &[A] {
        &self.actions
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, a: A) -> f64 {
        self.actions
            .iter()
            .position(|&x| x == a)
            .map_or(0.0, |i| self.probs[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (A, f64)> + '_ {
        self.actions.iter().copied().zip(self.probs.iter().copied())
    }

    /// Most probable action, lowest index on ties.
    pub fn mode(&self) -> A {
        self.actions[argmax(&self.probs)]
    }

    pub fn sample(&self, rng: &mut RandomSource) -> A {
        self.actions[sample_index(&self.probs, rng.uniform())]
    }
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::config("distribution has a negative or non-finite entry"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::config(format!(
            "distribution sums to {total}, not 1"
        )));
    }
    Ok(())
}

/// Index of the largest element, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from `probs` with a uniform `u ∈ [0, 1)`.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave `acc` a hair below 1; fall back to the last
    // action that carries mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// `out[i] ∝ exp(q[i] / temperature)`, stabilised by subtracting the max.
/// Inputs are assumed validated (finite, non-empty, temperature > 0).
pub fn softmax_into(q: &[f64], temperature: f64, out: &mut [f64]) {
    debug_assert_eq!(q.len(), out.len());
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(q) {
        *o = ((v - max) / temperature).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Probability of the first of two actions under a two-way softmax.
pub fn softmax2(q0: f64, q1: f64, temperature: f64) -> f64 {
    let d = (q1 - q0) / temperature;
    if d > 0.0 {
        let e = (-d).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + d.exp())
    }
}

pub fn softmax_policy<A: Copy + PartialEq + fmt::Debug>(
    qvalues: &[(A, f64)],
    temperature: f64,
) -> Result<PolicyDistribution<A>> {
    if qvalues.is_empty() {
        return Err(Error::NoLegalActions);
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::BadTemperature(temperature));
    }
    if let Some((index, &(_, value))) = qvalues.iter().enumerate().find(|(_, (_, q))| !q.is_finite()) {
        return Err(Error::NonFiniteQ { index, value });
    }
    let q: Vec<f64> = qvalues.iter().map(|&(_, q)| q).collect();
    let mut probs = vec![0.0; q.len()];
    softmax_into(&q, temperature, &mut probs);
    Ok(PolicyDistribution {
        actions: qvalues.iter().map(|&(a, _)| a).collect(),
        probs,
    })
}

/// `Σ_t r_t · γ^t`, with the first reward undiscounted.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut weight = 1.0;
    for &r in rewards {
        total += r * weight;
        weight *= gamma;
    }
    total
}

// ---------------------------------------------------------------------------
// Randomness
// ---------------------------------------------------------------------------

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Deterministic, splittable random stream.
///
/// [`RandomSource::derive`] depends only on this source's seed and the label,
/// never on how many draws have been taken, so components own independent
/// sub-streams and adding one never perturbs another.
#[derive(Clone, Debug)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn derive(&self, label: &str) -> RandomSource {
        RandomSource::new(splitmix64(self.seed ^ splitmix64(fnv1a(label))))
    }

    pub fn derive_indexed(&self, label: &str, index: u64) -> RandomSource {
        RandomSource::new(splitmix64(
            self.seed ^ splitmix64(fnv1a(label) ^ splitmix64(index)),
        ))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// How Z¹ δ-typicality picks its tolerance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaMode {
    /// Use `EngineConfig::delta` at every trial.
    Constant,
    /// `δ(t) = max((T − t)/t, 0.5)`.
    Schedule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub horizon: usize,
    pub temperature: f64,
    pub discount: f64,
    pub delta: f64,
    pub omega: f64,
    pub mechanism_samples: usize,
    pub planner_iterations: usize,
    pub aleph_enabled: bool,
    /// UCT exploration constant; `None` means 2 × the game's reward range.
    pub exploration: Option<f64>,
    /// δ-typicality tolerance mode (zero-sum game).
    pub delta_mode: DeltaMode,
    /// Z² affirms only inside `[q_ω, q_{1−ω}]` when true, only above `q_ω` otherwise.
    pub z2_two_sided: bool,
    /// Z² pairs sampled opponent actions with the realised own action instead of
    /// a policy-sampled response.
    pub z2_realized_own_action: bool,
    /// Zero-sum: use the flat 1/3 prior over row types instead of (1/2, 1/4, 1/4).
    pub flat_row_prior: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            horizon: 12,
            temperature: 0.1,
            discount: 0.99,
            delta: 0.1,
            omega: 0.3,
            mechanism_samples: 100,
            planner_iterations: 10_000,
            aleph_enabled: false,
            exploration: None,
            delta_mode: DeltaMode::Schedule,
            z2_two_sided: true,
            z2_realized_own_action: false,
            flat_row_prior: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::config("horizon must be at least 1"));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::BadTemperature(self.temperature));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::config(format!(
                "discount {} outside [0, 1]",
                self.discount
            )));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(Error::config(format!("delta {} must be >= 0", self.delta)));
        }
        if !(0.0..0.5).contains(&self.omega) {
            return Err(Error::config(format!(
                "omega {} outside [0, 0.5)",
                self.omega
            )));
        }
        if self.aleph_enabled && self.mechanism_samples < 1 {
            return Err(Error::config(
                "aleph mechanism enabled with zero mechanism samples",
            ));
        }
        if let Some(c) = self.exploration {
            if !(c >= 0.0) || !c.is_finite() {
                return Err(Error::config(format!("exploration constant {c} invalid")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[derive(Clone, Copy, Debug, PartialEq)]
    enum Three {
        A,
        B,
        C,
    }
    static THREE: [Three; 3] = [Three::A, Three::B, Three::C];

    #[test]
    fn softmax_informed_row_hand_value() {
        let pol = softmax_policy(&[(Row::T, 2.0), (Row::B, 2.0 / 3.0)], 0.1).unwrap();
        let expected = 1.0 / (1.0 + (-40.0f64 / 3.0).exp());
        assert!((pol.prob(Row::T) - expected).abs() < 1e-15);
        assert!((pol.prob(Row::T) - 0.999_998_4).abs() < 1e-7);
        assert_eq!(pol.mode(), Row::T);
    }

    #[test]
    fn softmax_equal_q_is_uniform() {
        for temp in [0.01, 0.1, 1.0, 50.0] {
            let pol = softmax_policy(&[('x', 5.0), ('y', 5.0), ('z', 5.0)], temp).unwrap();
            for p in pol.probs() {
                assert!((p - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_errors() {
        assert!(matches!(
            softmax_policy::<char>(&[], 0.1),
            Err(Error::NoLegalActions)
        ));
        assert!(matches!(
            softmax_policy(&[('a', f64::NAN)], 0.1),
            Err(Error::NonFiniteQ { .. })
        ));
        assert!(matches!(
            softmax_policy(&[('a', 1.0)], 0.0),
            Err(Error::BadTemperature(_))
        ));
    }

    #[test]
    fn softmax_survives_large_q() {
        let pol = softmax_policy(&[(0, 1e3), (1, -1e3), (2, 999.9)], 0.1).unwrap();
        assert!(pol.probs().iter().all(|p| p.is_finite()));
        assert_eq!(pol.mode(), 0);
    }

    #[test]
    fn bayes_identity_and_absorbing() {
        let prior = BeliefVector::new(&THREE, &[0.2, 0.3, 0.5]).unwrap();
        let post = bayes_update(&prior, &[0.4, 0.4, 0.4]).unwrap();
        for (a, b) in post.masses().iter().zip(prior.masses()) {
            assert!((a - b).abs() < 1e-15);
        }
        let point = BeliefVector::point(&THREE, 0);
        let post = bayes_update(&point, &[0.1, 0.9, 0.5]).unwrap();
        assert_eq!(post.masses(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn bayes_impossible_observation() {
        let prior = BeliefVector::uniform(&THREE);
        assert!(matches!(
            bayes_update(&prior, &[0.0, 0.0, 0.0]),
            Err(Error::ImpossibleObservation)
        ));
        // Prior mass only where the likelihood vanishes.
        let point = BeliefVector::point(&THREE, 2);
        assert!(matches!(
            bayes_update(&point, &[0.5, 0.5, 0.0]),
            Err(Error::ImpossibleObservation)
        ));
        assert!(matches!(
            bayes_update(&prior, &[0.5, 0.5]),
            Err(Error::SupportMismatch { .. })
        ));
    }

    #[test]
    fn bayes_floor_keeps_underflowed_types_alive() {
        let prior = BeliefVector::point(&THREE, 1);
        let post = bayes_update(&prior, &[0.0, 1e-320, 0.0]).unwrap();
        assert_eq!(post.prob(Three::B), 1.0);
    }

    #[test]
    fn discounted_return_examples() {
        assert_eq!(discounted_return(&[1.0, 1.0, 1.0], 0.0), 1.0);
        assert!((discounted_return(&[1.0, 1.0], 0.99) - 1.99).abs() < 1e-15);
        assert_eq!(discounted_return(&[], 0.7), 0.0);
    }

    #[test]
    fn action_bytes_round_trip_and_reject_garbage() {
        for o in Offer::all() {
            let a = GameAction::Offer(o);
            assert_eq!(GameAction::from_byte(ActionKind::Offer, a.to_byte()).unwrap(), a);
        }
        assert_eq!(GameAction::Offer(Offer::from_index(10)).to_byte(), b':');
        assert!(GameAction::from_byte(ActionKind::Row, b'L').is_err());
        assert!(GameAction::from_byte(ActionKind::Offer, b';').is_err());
        assert_eq!(
            GameAction::from_byte(ActionKind::Column, b'R').unwrap(),
            GameAction::Column(Column::R)
        );
        assert_eq!(
            GameAction::from_byte(ActionKind::Response, b'R').unwrap(),
            GameAction::Response { accept: false }
        );
    }

    #[test]
    fn history_rejects_gaps_and_mixed_kinds() {
        let rec = |trial, a| TrialRecord {
            trial,
            action_a: a,
            action_b: GameAction::Response { accept: true },
            reward_a: Some(0.0),
            reward_b: Some(0.0),
            reward_visible: true,
        };
        let mut h = History::new();
        h.push(rec(1, GameAction::Offer(Offer::from_index(3)))).unwrap();
        assert!(h.push(rec(3, GameAction::Offer(Offer::from_index(3)))).is_err());
        assert!(h.push(rec(2, GameAction::Row(Row::T))).is_err());
        h.push(rec(2, GameAction::Offer(Offer::from_index(1)))).unwrap();
        assert_eq!(h.len(), 2);
    }

    #[test]
    fn agent_spec_validation() {
        assert!(AgentSpec::new(-1, Role::Sender, Persona::ThresholdSender { psi: 0.1 }).is_ok());
        assert!(AgentSpec::new(-1, Role::Sender, Persona::ThresholdSender { psi: 0.3 }).is_err());
        assert!(AgentSpec::new(-1, Role::Sender, Persona::Planner).is_err());
        assert!(AgentSpec::new(1, Role::Sender, Persona::RandomSender).is_err());
        assert!(AgentSpec::new(2, Role::Column, Persona::Planner).is_ok());
        assert!(AgentSpec::new(3, Role::Column, Persona::Planner).is_err());
    }

    #[test]
    fn derived_streams_are_independent_of_consumption() {
        let root = RandomSource::new(7);
        let mut a = root.derive("sender");
        let before: Vec<f64> = (0..5).map(|_| a.uniform()).collect();
        let mut other = root.derive("receiver");
        for _ in 0..100 {
            other.uniform();
        }
        let mut a2 = root.derive("sender");
        let after: Vec<f64> = (0..5).map(|_| a2.uniform()).collect();
        assert_eq!(before, after);
        assert_ne!(root.derive("sender").seed(), root.derive("receiver").seed());
    }

    #[test]
    fn config_validation() {
        assert!(EngineConfig::default().validate().is_ok());
        let mut c = EngineConfig::default();
        c.aleph_enabled = true;
        c.mechanism_samples = 0;
        assert!(c.validate().is_err());
        let mut c = EngineConfig::default();
        c.omega = 0.5;
        assert!(c.validate().is_err());
        let mut c = EngineConfig::default();
        c.horizon = 0;
        assert!(c.validate().is_err());
    }

    fn arb_q() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, 1..12)
    }

    proptest! {
        #[test]
        fn softmax_is_normalised_and_shift_invariant(q in arb_q(), shift in -100.0f64..100.0, temp in 0.05f64..5.0) {
            let qa: Vec<(usize, f64)> = q.iter().copied().enumerate().collect();
            let qb: Vec<(usize, f64)> = q.iter().map(|v| v + shift).enumerate().collect();
            let pa = softmax_policy(&qa, temp).unwrap();
            let pb = softmax_policy(&qb, temp).unwrap();
            let total: f64 = pa.probs().iter().sum();
            prop_assert!((total - 1.0).abs() < MASS_TOLERANCE);
            for (x, y) in pa.probs().iter().zip(pb.probs()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            prop_assert_eq!(pa.mode(), argmax(&q));
        }

        #[test]
        fn sequential_bayes_equals_batch(
            prior in prop::collection::vec(0.01f64..1.0, 3),
            steps in prop::collection::vec(prop::collection::vec(0.001f64..1.0, 3), 1..8),
        ) {
            let total: f64 = prior.iter().sum();
            let prior: Vec<f64> = prior.iter().map(|p| p / total).collect();
            let start = BeliefVector::new(&THREE, &prior).unwrap();
            let mut seq = start;
            let mut product = [1.0f64; 3];
            for lik in &steps {
                seq = bayes_update(&seq, lik).unwrap();
                for i in 0..3 { product[i] *= lik[i]; }
            }
            let batch = bayes_update(&start, &product).unwrap();
            for (a, b) in seq.masses().iter().zip(batch.masses()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            let s: f64 = seq.masses().iter().sum();
            prop_assert!((s - 1.0).abs() < MASS_TOLERANCE);
        }
    }
}
