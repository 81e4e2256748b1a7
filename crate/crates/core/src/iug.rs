//! Iterated ultimatum game: DoM(−1) senders, the DoM(0) receiver with its
//! optional ℵ-mechanism, and the DoM(1) sender that plans against an exact
//! copy of that receiver.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::aleph::{
    in_band, quantile_band, AlephFlags, GzipMeter, SampledRewardSet, SampledTrajectorySet,
    GZIP_WARMUP,
};
use crate::domain::{
    bayes_update, sample_index, softmax2, softmax_into, BeliefVector, EngineConfig, GameAction,
    History, Offer, PolicyDistribution, RandomSource, TrialRecord,
};
use crate::error::{Error, Result};
use crate::metrics::{EpisodeTrace, TrialTrace};
use crate::planning::{ipomcp, SearchConfig, Simulator};

const OFFERS: usize = Offer::COUNT;

// ---------------------------------------------------------------------------
// Sender types, bounds and DoM(−1) policies
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SenderType {
    Random,
    Threshold01,
    Threshold05,
}

/// The receiver's type set, in fixed order.
pub static SENDER_TYPES: [SenderType; 3] = [
    SenderType::Random,
    SenderType::Threshold01,
    SenderType::Threshold05,
];

impl SenderType {
    pub fn from_psi(psi: f64) -> Result<Self> {
        if psi == 0.1 {
            Ok(SenderType::Threshold01)
        } else if psi == 0.5 {
            Ok(SenderType::Threshold05)
        } else {
            Err(Error::config(format!("threshold must be 0.1 or 0.5, got {psi}")))
        }
    }

    pub fn psi(self) -> Option<f64> {
        match self {
            SenderType::Random => None,
            SenderType::Threshold01 => Some(0.1),
            SenderType::Threshold05 => Some(0.5),
        }
    }

    /// Highest offer index with non-negative utility.
    pub fn cap(self) -> u8 {
        match self {
            SenderType::Random => 10,
            SenderType::Threshold01 => 9,
            SenderType::Threshold05 => 5,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            SenderType::Random => "random",
            SenderType::Threshold01 => "psi0.1",
            SenderType::Threshold05 => "psi0.5",
        }
    }
}

/// Lower and upper bound on the viable offer set, as offer indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SenderBounds {
    pub lower: u8,
    pub upper: u8,
}

impl SenderBounds {
    pub const INITIAL: SenderBounds = SenderBounds { lower: 0, upper: 10 };

    /// Reject raises the lower bound to the offer, accept lowers the upper.
    pub fn update(self, offer: Offer, accept: bool) -> SenderBounds {
        if accept {
            SenderBounds { upper: offer.index(), ..self }
        } else {
            SenderBounds { lower: offer.index(), ..self }
        }
    }

    /// `L > U`, reachable only under a deceiver.
    pub fn is_inverted(self) -> bool {
        self.lower > self.upper
    }

    pub fn lower_value(self) -> f64 {
        f64::from(self.lower) / 10.0
    }

    pub fn upper_value(self) -> f64 {
        f64::from(self.upper) / 10.0
    }

    pub fn from_history(records: &[TrialRecord]) -> SenderBounds {
        records.iter().fold(SenderBounds::INITIAL, |b, r| {
            match (r.action_a.as_offer(), r.action_b.as_accept()) {
                (Some(o), Some(acc)) => b.update(o, acc),
                _ => b,
            }
        })
    }
}

/// Everything a DoM(−1) sender's next offer depends on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SenderView {
    pub bounds: SenderBounds,
    pub last: Option<Offer>,
}

impl SenderView {
    pub const INITIAL: SenderView = SenderView {
        bounds: SenderBounds::INITIAL,
        last: None,
    };

    pub fn advance(self, offer: Offer, accept: bool) -> SenderView {
        SenderView {
            bounds: self.bounds.update(offer, accept),
            last: Some(offer),
        }
    }

    fn key(self) -> usize {
        let last = self.last.map_or(0, |o| o.index() as usize);
        (self.bounds.lower as usize * OFFERS + self.bounds.upper as usize) * OFFERS + last
    }

    fn from_key(k: usize) -> SenderView {
        let last = (k % OFFERS) as u8;
        let upper = ((k / OFFERS) % OFFERS) as u8;
        let lower = (k / (OFFERS * OFFERS)) as u8;
        SenderView {
            bounds: SenderBounds { lower, upper },
            last: Some(Offer::from_index(last)),
        }
    }
}

const VIEWS: usize = OFFERS * OFFERS * OFFERS;

/// Accept → (1 − a, a); reject → (0, 0).
pub fn iug_reward(offer: Offer, accept: bool) -> (f64, f64) {
    if accept {
        (1.0 - offer.value(), offer.value())
    } else {
        (0.0, 0.0)
    }
}

/// `(1 − a − ψ)` if accepted, else 0.
pub fn threshold_utility(offer: Offer, accept: bool, psi: f64) -> f64 {
    if accept {
        1.0 - offer.value() - psi
    } else {
        0.0
    }
}

/// Offer distribution of a DoM(−1) sender. Threshold senders softmax their
/// immediate utility over offers in `(L, min(U, 1 − ψ)]`; with that set empty
/// they repeat the last offer.
pub fn dom_m1_probs(ty: SenderType, view: SenderView, temperature: f64) -> [f64; OFFERS] {
    let mut p = [0.0; OFFERS];
    let Some(psi) = ty.psi() else {
        p.fill(1.0 / OFFERS as f64);
        return p;
    };
    let lo = view.bounds.lower as usize + 1;
    let hi = view.bounds.upper.min(ty.cap()) as usize;
    if lo > hi {
        let repeat = view.last.map_or(ty.cap(), Offer::index);
        p[repeat as usize] = 1.0;
        return p;
    }
    let q: Vec<f64> = (lo..=hi)
        .map(|i| 1.0 - i as f64 / 10.0 - psi)
        .collect();
    softmax_into(&q, temperature, &mut p[lo..=hi]);
    p
}

pub fn dom_m1_sender_policy(
    ty: SenderType,
    view: SenderView,
    temperature: f64,
) -> PolicyDistribution<Offer> {
    let p = dom_m1_probs(ty, view, temperature);
    PolicyDistribution::new(Offer::all().collect(), p.to_vec()).expect("normalised")
}

/// `P(offer | type, view)`.
pub fn dom0_likelihood(offer: Offer, ty: SenderType, view: SenderView, temperature: f64) -> f64 {
    dom_m1_probs(ty, view, temperature)[offer.index() as usize]
}

// ---------------------------------------------------------------------------
// Receiver value tables
// ---------------------------------------------------------------------------

/// Type-conditioned receiver Q-values for every `(t, view, offer)`, from
/// backward induction over the full horizon. Shared read-only across
/// episodes with the same `(T, 𝒯, γ)`.
#[derive(Debug)]
pub struct ReceiverTables {
    pub horizon: usize,
    pub temperature: f64,
    pub gamma: f64,
    policy: Vec<[f64; OFFERS]>,
    q: Vec<[f64; 2]>,
}

impl ReceiverTables {
    pub fn new(horizon: usize, temperature: f64, gamma: f64) -> Arc<Self> {
        let types = SENDER_TYPES.len();
        let mut policy = vec![[0.0; OFFERS]; types * (VIEWS + 1)];
        for (ti, &ty) in SENDER_TYPES.iter().enumerate() {
            for k in 0..VIEWS {
                policy[ti * (VIEWS + 1) + k] = dom_m1_probs(ty, SenderView::from_key(k), temperature);
            }
            policy[ti * (VIEWS + 1) + VIEWS] = dom_m1_probs(ty, SenderView::INITIAL, temperature);
        }
        let mut tables = ReceiverTables {
            horizon,
            temperature,
            gamma,
            policy,
            q: vec![[0.0; 2]; types * horizon * VIEWS * OFFERS],
        };
        let mut value_next = vec![0.0; VIEWS * OFFERS];
        let mut value_now = vec![0.0; VIEWS * OFFERS];
        for ti in 0..types {
            for t in (1..=horizon).rev() {
                // W(view') = Σ_o' π(o' | view') V_{t+1}(view', o')
                let w: Vec<f64> = if t < horizon {
                    (0..VIEWS)
                        .map(|k| {
                            let p = &tables.policy[ti * (VIEWS + 1) + k];
                            (0..OFFERS).map(|o| p[o] * value_next[k * OFFERS + o]).sum()
                        })
                        .collect()
                } else {
                    Vec::new()
                };
                for k in 0..VIEWS {
                    let view = SenderView::from_key(k);
                    for o in 0..OFFERS {
                        let offer = Offer::from_index(o as u8);
                        let mut q = [0.0; 2];
                        for (slot, accept) in [(0, true), (1, false)] {
                            let r = if accept { offer.value() } else { 0.0 };
                            q[slot] = if t < horizon {
                                r + gamma * w[view.advance(offer, accept).key()]
                            } else {
                                r
                            };
                        }
                        value_now[k * OFFERS + o] = q[0].max(q[1]);
                        let idx = tables.index(ti, t, k, o);
                        tables.q[idx] = q;
                    }
                }
                std::mem::swap(&mut value_now, &mut value_next);
            }
        }
        Arc::new(tables)
    }

    fn index(&self, ti: usize, t: usize, view_key: usize, offer: usize) -> usize {
        ((ti * self.horizon + (t - 1)) * VIEWS + view_key) * OFFERS + offer
    }

    fn view_key(view: SenderView) -> usize {
        // The initial view's key collides with (0, 10, last = 0), which has
        // the same bounds; only the repeat fallback reads `last` and it never
        // fires on a non-empty interval, so the collision is harmless.
        view.key()
    }

    /// DoM(−1) offer distribution, tabulated.
    pub fn policy(&self, ty: SenderType, view: SenderView) -> &[f64; OFFERS] {
        let ti = ty.index();
        match view.last {
            None => &self.policy[ti * (VIEWS + 1) + VIEWS],
            Some(_) => &self.policy[ti * (VIEWS + 1) + view.key()],
        }
    }

    /// `[Q(accept), Q(reject)]` for a receiver certain of `ty`.
    pub fn q(&self, ty: SenderType, t: usize, view: SenderView, offer: Offer) -> [f64; 2] {
        self.q[self.index(ty.index(), t, Self::view_key(view), offer.index() as usize)]
    }
}

/// The receiver's model of the future, conditioned on one sender type. Used
/// to check the tables against the generic planner.
pub struct TypedReceiverSim {
    pub ty: SenderType,
    pub horizon: usize,
    pub temperature: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ReceiverNode {
    pub t: usize,
    pub view: SenderView,
    pub offer: Offer,
}

impl Simulator for TypedReceiverSim {
    type State = ReceiverNode;
    type Action = bool;
    type Outcome = Option<Offer>;

    fn actions(&self, s: &ReceiverNode) -> Vec<bool> {
        if s.t > self.horizon {
            vec![]
        } else {
            vec![true, false]
        }
    }

    fn outcomes(&self, s: &ReceiverNode, accept: bool) -> Vec<(Option<Offer>, f64)> {
        if s.t == self.horizon {
            return vec![(None, 1.0)];
        }
        let view = s.view.advance(s.offer, accept);
        let p = dom_m1_probs(self.ty, view, self.temperature);
        Offer::all().map(|o| (Some(o), p[o.index() as usize])).collect()
    }

    fn reward(&self, s: &ReceiverNode, accept: bool, _o: Option<Offer>) -> f64 {
        iug_reward(s.offer, accept).1
    }

    fn next(&self, s: &ReceiverNode, accept: bool, o: Option<Offer>) -> ReceiverNode {
        ReceiverNode {
            t: s.t + 1,
            view: s.view.advance(s.offer, accept),
            offer: o.unwrap_or(s.offer),
        }
    }
}

// ---------------------------------------------------------------------------
// ℵ-mechanism, IUG flavour
// ---------------------------------------------------------------------------

/// Per-sample state of the sampled threshold-sender trajectories after a
/// given prefix of actual receiver responses.
#[derive(Debug)]
struct ThresholdSamples {
    views: Vec<SenderView>,
    /// Offer index sampled for the current trial, per sample.
    offers: Vec<u8>,
    /// Encoded sequences, `t` bytes per sample.
    bytes: Vec<u8>,
    /// Band of gzip lengths at this trial (valid from the warm-up on).
    band: (usize, usize),
}

/// Sampled trajectories and counterfactual draws for one episode.
///
/// All randomness is drawn up front from a dedicated sub-stream, so the
/// receiver and the sender's nested copy of it (built from the same seed)
/// see identical samples. Threshold-type samples depend on the actual
/// receiver responses and are built lazily per response prefix.
#[derive(Debug)]
pub struct IugAlephModel {
    pub samples: usize,
    pub horizon: usize,
    pub delta: f64,
    pub omega: f64,
    pub two_sided: bool,
    pub realized_own_action: bool,
    temperature: f64,
    random_offers: Vec<u8>,
    random_bands: Vec<(usize, usize)>,
    u_threshold: Vec<f64>,
    u_accept: Vec<f64>,
    cache: RefCell<HashMap<(usize, usize, u32), Rc<ThresholdSamples>>>,
    meter: RefCell<GzipMeter>,
}

impl IugAlephModel {
    pub fn new(config: &EngineConfig, rng: &RandomSource) -> Result<Self> {
        let n = config.mechanism_samples;
        if n < 2 {
            return Err(Error::SampleSizeTooSmall(n));
        }
        let h = config.horizon;
        let mut r_offer = rng.derive("offers");
        let mut r_thresh = rng.derive("threshold");
        let mut r_acc = rng.derive("accept");
        let random_offers: Vec<u8> = (0..n * h).map(|_| r_offer.below(OFFERS) as u8).collect();
        let u_threshold: Vec<f64> = (0..2 * n * h).map(|_| r_thresh.uniform()).collect();
        let u_accept: Vec<f64> = (0..3 * n * h).map(|_| r_acc.uniform()).collect();

        let mut meter = GzipMeter::new();
        let mut random_bands = vec![(0, usize::MAX); h + 1];
        let mut lens = vec![0usize; n];
        let mut buf = Vec::with_capacity(h);
        for t in GZIP_WARMUP.min(h + 1)..=h {
            for (s, len) in lens.iter_mut().enumerate() {
                buf.clear();
                buf.extend(random_offers[s * h..s * h + t].iter().map(|&o| b'0' + o));
                *len = meter.compressed_len(&buf);
            }
            random_bands[t] = quantile_band(&mut lens, config.delta);
        }

        Ok(IugAlephModel {
            samples: n,
            horizon: h,
            delta: config.delta,
            omega: config.omega,
            two_sided: config.z2_two_sided,
            realized_own_action: config.z2_realized_own_action,
            temperature: config.temperature,
            random_offers,
            random_bands,
            u_threshold,
            u_accept,
            cache: RefCell::new(HashMap::new()),
            meter: RefCell::new(meter),
        })
    }

    fn random_offer(&self, sample: usize, t: usize) -> u8 {
        self.random_offers[sample * self.horizon + t - 1]
    }

    fn threshold(&self, ti: usize, t: usize, responses: u32) -> Rc<ThresholdSamples> {
        let prefix = responses & ((1u32 << (t - 1)) - 1);
        let key = (ti, t, prefix);
        if let Some(e) = self.cache.borrow().get(&key) {
            return Rc::clone(e);
        }
        let n = self.samples;
        let ty = SENDER_TYPES[ti];
        let (views, prev_bytes): (Vec<SenderView>, Option<Rc<ThresholdSamples>>) = if t == 1 {
            (vec![SenderView::INITIAL; n], None)
        } else {
            let parent = self.threshold(ti, t - 1, prefix);
            let accept = prefix >> (t - 2) & 1 == 1;
            let views = parent
                .views
                .iter()
                .zip(&parent.offers)
                .map(|(v, &o)| v.advance(Offer::from_index(o), accept))
                .collect();
            (views, Some(parent))
        };
        let u_base = (ti - 1) * n * self.horizon;
        let offers: Vec<u8> = views
            .iter()
            .enumerate()
            .map(|(s, &v)| {
                let p = dom_m1_probs(ty, v, self.temperature);
                let u = self.u_threshold[u_base + s * self.horizon + t - 1];
                sample_index(&p, u) as u8
            })
            .collect();
        let mut bytes = Vec::with_capacity(n * t);
        for s in 0..n {
            if let Some(prev) = &prev_bytes {
                bytes.extend_from_slice(&prev.bytes[s * (t - 1)..(s + 1) * (t - 1)]);
            }
            bytes.push(b'0' + offers[s]);
        }
        let band = if t >= GZIP_WARMUP {
            let mut meter = self.meter.borrow_mut();
            let mut lens: Vec<usize> = bytes.chunks(t).map(|c| meter.compressed_len(c)).collect();
            quantile_band(&mut lens, self.delta)
        } else {
            (0, usize::MAX)
        };
        let entry = Rc::new(ThresholdSamples {
            views,
            offers,
            bytes,
            band,
        });
        self.cache.borrow_mut().insert(key, Rc::clone(&entry));
        entry
    }

    /// Offer each sample of type `ti` makes at trial `t`, given the actual
    /// responses so far (bit `i` = response at trial `i + 1`).
    pub fn sampled_offers(&self, ti: usize, t: usize, responses: u32) -> Vec<u8> {
        if ti == 0 {
            (0..self.samples).map(|s| self.random_offer(s, t)).collect()
        } else {
            self.threshold(ti, t, responses).offers.clone()
        }
    }

    /// The sampled trajectories of every type up to trial `t`, as the generic
    /// mechanism consumes them.
    pub fn trajectory_set(&self, t: usize, responses: u32) -> SampledTrajectorySet {
        let n = self.samples;
        let mut per_type = Vec::with_capacity(3);
        per_type.push(
            (0..n)
                .map(|s| (1..=t).map(|k| b'0' + self.random_offer(s, k)).collect())
                .collect(),
        );
        for ti in 1..3 {
            let e = self.threshold(ti, t, responses);
            per_type.push(e.bytes.chunks(t).map(<[u8]>::to_vec).collect());
        }
        SampledTrajectorySet::from_sequences(per_type)
    }

    fn z1(&self, t: usize, responses: u32, observed: &[u8]) -> [bool; 3] {
        if t < GZIP_WARMUP {
            return [true; 3];
        }
        let len = self.meter.borrow_mut().compressed_len(observed);
        let inside = |(lo, hi): (usize, usize)| lo <= len && len <= hi;
        [
            inside(self.random_bands[t]),
            inside(self.threshold(1, t, responses).band),
            inside(self.threshold(2, t, responses).band),
        ]
    }
}

// ---------------------------------------------------------------------------
// DoM(0) receiver
// ---------------------------------------------------------------------------

/// Complete internal state of a DoM(0) receiver. A pure function of the
/// public history, the common-knowledge priors and the ℵ sample stream.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceiverState {
    /// Trial about to be played, 1-based.
    pub t: usize,
    pub belief: BeliefVector<SenderType>,
    pub view: SenderView,
    pub flags: AlephFlags,
    pub cumulative: f64,
    /// Encoded offers seen so far.
    pub offers: Vec<u8>,
    /// Bit `i` holds the response at trial `i + 1`.
    pub responses: u32,
    /// Running counterfactual reward per (type, sample); empty without ℵ.
    pub sampled: Vec<f64>,
}

impl ReceiverState {
    pub fn triggered(&self) -> bool {
        self.flags.triggered()
    }

    pub fn reward_set(&self, samples: usize) -> SampledRewardSet {
        let mut set = SampledRewardSet::new(3, samples);
        for ti in 0..3 {
            set.accumulate(ti, &self.sampled[ti * samples..(ti + 1) * samples]);
        }
        set
    }
}

/// DoM(0) receiver policy machinery.
#[derive(Clone, Debug)]
pub struct Receiver {
    pub tables: Arc<ReceiverTables>,
    pub aleph: Option<Rc<IugAlephModel>>,
}

impl Receiver {
    pub fn new(tables: Arc<ReceiverTables>, aleph: Option<Rc<IugAlephModel>>) -> Self {
        Receiver { tables, aleph }
    }

    pub fn horizon(&self) -> usize {
        self.tables.horizon
    }

    pub fn initial_state(&self) -> ReceiverState {
        let sampled = self
            .aleph
            .as_ref()
            .map_or_else(Vec::new, |a| vec![0.0; 3 * a.samples]);
        ReceiverState {
            t: 1,
            belief: BeliefVector::uniform(&SENDER_TYPES),
            view: SenderView::INITIAL,
            flags: AlephFlags::all_ones(3),
            cumulative: 0.0,
            offers: Vec::with_capacity(self.horizon()),
            responses: 0,
            sampled,
        }
    }

    pub fn likelihoods(&self, view: SenderView, offer: Offer) -> [f64; 3] {
        let o = offer.index() as usize;
        SENDER_TYPES.map(|ty| self.tables.policy(ty, view)[o])
    }

    pub fn posterior(&self, s: &ReceiverState, offer: Offer) -> Result<BeliefVector<SenderType>> {
        bayes_update(&s.belief, &self.likelihoods(s.view, offer))
    }

    /// Belief-weighted `[Q(accept), Q(reject)]` for `offer` at `s`.
    pub fn q_values(&self, s: &ReceiverState, posterior: &BeliefVector<SenderType>, offer: Offer) -> [f64; 2] {
        let mut q = [0.0; 2];
        for (ty, b) in posterior.iter() {
            if b == 0.0 {
                continue;
            }
            let qt = self.tables.q(ty, s.t, s.view, offer);
            q[0] += b * qt[0];
            q[1] += b * qt[1];
        }
        q
    }

    /// Acceptance probability of the base (unaugmented) policy.
    pub fn base_accept_prob(&self, s: &ReceiverState, offer: Offer) -> Result<f64> {
        let post = self.posterior(s, offer)?;
        let q = self.q_values(s, &post, offer);
        Ok(softmax2(q[0], q[1], self.tables.temperature))
    }

    /// Acceptance probability under the ℵ-policy: Grim trigger once every
    /// type is denied.
    pub fn accept_prob(&self, s: &ReceiverState, offer: Offer) -> Result<f64> {
        if s.t > self.horizon() {
            return Err(Error::HorizonExhausted { trial: s.t, horizon: self.horizon() });
        }
        if self.aleph.is_some() && s.triggered() {
            return Ok(0.0);
        }
        self.base_accept_prob(s, offer)
    }

    pub fn response_policy(&self, s: &ReceiverState, offer: Offer) -> Result<PolicyDistribution<bool>> {
        let p = self.accept_prob(s, offer)?;
        PolicyDistribution::new(vec![true, false], vec![p, 1.0 - p])
    }

    pub fn act(&self, s: &ReceiverState, offer: Offer, rng: &mut RandomSource) -> Result<bool> {
        let p = self.accept_prob(s, offer)?;
        Ok(rng.uniform() < p)
    }

    /// Fold one completed trial into the receiver's state, including the
    /// end-of-trial ℵ update.
    pub fn advance(&self, s: &ReceiverState, offer: Offer, accept: bool) -> Result<ReceiverState> {
        let t = s.t;
        let mut next = s.clone();
        next.belief = self.posterior(s, offer)?;
        next.view = s.view.advance(offer, accept);
        next.cumulative += iug_reward(offer, accept).1;
        next.offers.push(GameAction::Offer(offer).to_byte());
        if accept {
            next.responses |= 1 << (t - 1);
        }
        next.t = t + 1;

        if let Some(model) = &self.aleph {
            if !s.flags.triggered() {
                self.aleph_update(model, s, &mut next, accept)?;
            }
        }
        Ok(next)
    }

    fn aleph_update(
        &self,
        model: &IugAlephModel,
        s: &ReceiverState,
        next: &mut ReceiverState,
        accept: bool,
    ) -> Result<()> {
        let t = s.t;
        let n = model.samples;
        let p_acc: [f64; OFFERS] = if model.realized_own_action {
            [if accept { 1.0 } else { 0.0 }; OFFERS]
        } else {
            let mut p = [0.0; OFFERS];
            for (o, slot) in p.iter_mut().enumerate() {
                *slot = self.base_accept_prob(s, Offer::from_index(o as u8))?;
            }
            p
        };
        let mut z2 = [true; 3];
        let mut scratch = Vec::with_capacity(n);
        for (ti, flag) in z2.iter_mut().enumerate() {
            let offers = model.sampled_offers(ti, t, s.responses);
            let u = &model.u_accept[(ti * n) * model.horizon..];
            let cum = &mut next.sampled[ti * n..(ti + 1) * n];
            for (k, (c, &o)) in cum.iter_mut().zip(&offers).enumerate() {
                if u[k * model.horizon + t - 1] < p_acc[o as usize] {
                    *c += f64::from(o) / 10.0;
                }
            }
            scratch.clear();
            scratch.extend_from_slice(cum);
            *flag = in_band(&mut scratch, next.cumulative, model.omega, model.two_sided);
        }
        let z1 = model.z1(t, s.responses, &next.offers);
        next.flags = s.flags.combine(&z1, &z2)?;
        Ok(())
    }

    /// Per-type expected (receiver, sender) payoff of the coming trial,
    /// under the receiver's own response policy.
    pub fn expected_payoffs(&self, s: &ReceiverState) -> Result<[(f64, f64); 3]> {
        let mut accept = [0.0; OFFERS];
        for (o, slot) in accept.iter_mut().enumerate() {
            *slot = self.accept_prob(s, Offer::from_index(o as u8))?;
        }
        Ok(SENDER_TYPES.map(|ty| {
            let pi = self.tables.policy(ty, s.view);
            let mut recv = 0.0;
            let mut send = 0.0;
            for o in 0..OFFERS {
                let a = o as f64 / 10.0;
                recv += pi[o] * accept[o] * a;
                send += pi[o] * accept[o] * (1.0 - a);
            }
            (recv, send)
        }))
    }
}

// ---------------------------------------------------------------------------
// DoM(1) sender
// ---------------------------------------------------------------------------

/// The DoM(1) sender's world: an exact copy of the receiver, rewarding the
/// sender with its threshold utility.
pub struct SenderSim<'a> {
    pub receiver: &'a Receiver,
    pub psi: f64,
}

impl Simulator for SenderSim<'_> {
    type State = ReceiverState;
    type Action = Offer;
    type Outcome = bool;

    fn actions(&self, s: &ReceiverState) -> Vec<Offer> {
        if s.t > self.receiver.horizon() {
            vec![]
        } else {
            Offer::all().collect()
        }
    }

    fn outcomes(&self, s: &ReceiverState, offer: Offer) -> Vec<(bool, f64)> {
        let p = self
            .receiver
            .accept_prob(s, offer)
            .expect("random sender keeps every observation possible");
        vec![(true, p), (false, 1.0 - p)]
    }

    fn reward(&self, _s: &ReceiverState, offer: Offer, accept: bool) -> f64 {
        threshold_utility(offer, accept, self.psi)
    }

    fn next(&self, s: &ReceiverState, offer: Offer, accept: bool) -> ReceiverState {
        self.receiver
            .advance(s, offer, accept)
            .expect("random sender keeps every observation possible")
    }
}

/// Root Q-values of the DoM(1) sender's search at the nested state `s`.
pub fn dom1_sender_q(
    receiver: &Receiver,
    s: &ReceiverState,
    psi: f64,
    config: &EngineConfig,
    rng: &mut RandomSource,
) -> Result<Vec<(Offer, f64)>> {
    let sim = SenderSim { receiver, psi };
    let search = SearchConfig {
        iterations: config.planner_iterations,
        exploration: config.exploration.unwrap_or(2.0),
        gamma: config.discount,
        max_depth: receiver.horizon() + 1 - s.t,
    };
    Ok(ipomcp(&sim, s.clone(), search, rng)?
        .into_iter()
        .map(|v| (v.action, v.q))
        .collect())
}

pub fn dom1_sender_act(
    receiver: &Receiver,
    s: &ReceiverState,
    psi: f64,
    config: &EngineConfig,
    rng: &mut RandomSource,
) -> Result<Offer> {
    let q = dom1_sender_q(receiver, s, psi, config, rng)?;
    let policy = crate::domain::softmax_policy(&q, config.temperature)?;
    Ok(policy.sample(rng))
}

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SenderAgent {
    /// DoM(−1); `ty = None` draws the type uniformly.
    DomM1 { ty: Option<SenderType> },
    Dom1 { psi: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IugSetup {
    pub sender: SenderAgent,
    /// Whether a DoM(1) sender's nested receiver includes the ℵ-mechanism
    /// (only matters when the receiver runs it).
    pub sender_models_aleph: bool,
}

impl IugSetup {
    pub fn new(sender: SenderAgent) -> Self {
        IugSetup { sender, sender_models_aleph: true }
    }
}

/// One IUG episode, stepped a trial at a time.
pub struct IugEpisode<'c> {
    config: &'c EngineConfig,
    seed: u64,
    sender_type: SenderType,
    dom1_psi: Option<f64>,
    receiver: Receiver,
    state: ReceiverState,
    sender_model: Option<(Receiver, ReceiverState)>,
    sender_view: SenderView,
    sender_rng: RandomSource,
    receiver_rng: RandomSource,
    history: History,
}

impl<'c> IugEpisode<'c> {
    pub fn new(
        tables: Arc<ReceiverTables>,
        config: &'c EngineConfig,
        setup: &IugSetup,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if tables.horizon != config.horizon
            || tables.temperature != config.temperature
            || tables.gamma != config.discount
        {
            return Err(Error::config("receiver tables built for a different configuration"));
        }
        let root = RandomSource::new(seed);
        let mut nature = root.derive("nature");
        let (sender_type, dom1_psi) = match setup.sender {
            SenderAgent::DomM1 { ty: Some(ty) } => (ty, None),
            SenderAgent::DomM1 { ty: None } => (SENDER_TYPES[nature.below(3)], None),
            SenderAgent::Dom1 { psi } => {
                if config.planner_iterations == 0 {
                    return Err(Error::ZeroBudget);
                }
                (SenderType::from_psi(psi)?, Some(psi))
            }
        };
        let aleph_rng = root.derive("receiver/aleph");
        let aleph = if config.aleph_enabled {
            Some(Rc::new(IugAlephModel::new(config, &aleph_rng)?))
        } else {
            None
        };
        let receiver = Receiver::new(Arc::clone(&tables), aleph);
        let state = receiver.initial_state();
        let sender_model = dom1_psi.map(|_| -> Result<(Receiver, ReceiverState)> {
            let nested_aleph = if config.aleph_enabled && setup.sender_models_aleph {
                Some(Rc::new(IugAlephModel::new(config, &aleph_rng)?))
            } else {
                None
            };
            let r = Receiver::new(Arc::clone(&tables), nested_aleph);
            let s = r.initial_state();
            Ok((r, s))
        });
        let sender_model = sender_model.transpose()?;
        Ok(IugEpisode {
            config,
            seed,
            sender_type,
            dom1_psi,
            receiver,
            state,
            sender_model,
            sender_view: SenderView::INITIAL,
            sender_rng: root.derive("sender"),
            receiver_rng: root.derive("receiver"),
            history: History::new(),
        })
    }

    pub fn receiver_state(&self) -> &ReceiverState {
        &self.state
    }

    /// The DoM(1) sender's reconstruction of the receiver.
    pub fn sender_model_state(&self) -> Option<&ReceiverState> {
        self.sender_model.as_ref().map(|(_, s)| s)
    }

    pub fn sender_type(&self) -> SenderType {
        self.sender_type
    }

    pub fn is_done(&self) -> bool {
        self.history.len() >= self.config.horizon
    }

    pub fn step(&mut self) -> Result<TrialTrace> {
        let t = self.history.len() + 1;
        if t > self.config.horizon {
            return Err(Error::HorizonExhausted { trial: t, horizon: self.config.horizon });
        }
        let offer = match (&self.sender_model, self.dom1_psi) {
            (Some((model, nested)), Some(psi)) => {
                let mut plan_rng = self.sender_rng.derive_indexed("plan", t as u64);
                dom1_sender_act(model, nested, psi, self.config, &mut plan_rng)?
            }
            _ => {
                let p = dom_m1_probs(self.sender_type, self.sender_view, self.config.temperature);
                Offer::from_index(sample_index(&p, self.sender_rng.uniform()) as u8)
            }
        };

        let expected = self.receiver.expected_payoffs(&self.state)?;
        let prior = self.state.belief;
        let exp_recv: f64 = prior.masses().iter().zip(&expected).map(|(b, e)| b * e.0).sum();
        let exp_send: f64 = prior.masses().iter().zip(&expected).map(|(b, e)| b * e.1).sum();

        let accept = self.receiver.act(&self.state, offer, &mut self.receiver_rng)?;
        let (r_send, r_recv) = iug_reward(offer, accept);
        self.state = self.receiver.advance(&self.state, offer, accept)?;
        if let Some((model, nested)) = &mut self.sender_model {
            *nested = model.advance(nested, offer, accept)?;
        }
        self.sender_view = self.sender_view.advance(offer, accept);

        self.history.push(TrialRecord {
            trial: t,
            action_a: GameAction::Offer(offer),
            action_b: GameAction::Response { accept },
            reward_a: Some(r_send),
            reward_b: Some(r_recv),
            reward_visible: true,
        })?;
        Ok(TrialTrace {
            trial: t,
            belief: self.state.belief.masses().to_vec(),
            flags: if self.receiver.aleph.is_some() {
                self.state.flags.as_slice().to_vec()
            } else {
                Vec::new()
            },
            triggered: self.receiver.aleph.is_some() && self.state.triggered(),
            reward_a: r_send,
            reward_b: r_recv,
            expected_reward: exp_recv,
            expected_deceiver_reward: exp_send,
        })
    }

    pub fn finish(self, trials: Vec<TrialTrace>) -> EpisodeTrace {
        EpisodeTrace {
            seed: self.seed,
            history: self.history,
            trials,
            type_labels: SENDER_TYPES.iter().map(|t| t.label().to_string()).collect(),
            true_type: Some(self.sender_type.index()),
            victim_is_a: false,
        }
    }
}

pub fn run_episode(
    tables: &Arc<ReceiverTables>,
    config: &EngineConfig,
    setup: &IugSetup,
    seed: u64,
) -> Result<EpisodeTrace> {
    let mut ep = IugEpisode::new(Arc::clone(tables), config, setup, seed)?;
    let mut trials = Vec::with_capacity(config.horizon);
    while !ep.is_done() {
        trials.push(ep.step()?);
    }
    Ok(ep.finish(trials))
}
