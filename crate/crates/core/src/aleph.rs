//! The ℵ-mechanism and ℵ-policy.
//!
//! Z¹ asks whether the opponent's behaviour is typical of each modelled type
//! (frequency typicality, or a compression-ratio band for history-dependent
//! models). Z² asks whether the victim's own cumulative reward sits inside
//! the band of rewards it would have earned against each type. Flags combine
//! by recursive conjunction, so a denied type stays denied.

use flate2::{Compress, Compression, FlushCompress};

use crate::domain::{PolicyDistribution, RandomSource, Row, MAX_TYPES};
use crate::error::{Error, Result};
use crate::zerosum::PayoffMatrix;

/// Gzip header (10 bytes) plus CRC32 and ISIZE trailer (8 bytes).
const GZIP_OVERHEAD: usize = 18;

/// Z¹-gzip affirms everything before this trial.
pub const GZIP_WARMUP: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AlephFlags {
    flags: [bool; MAX_TYPES],
    len: u8,
    trial: usize,
}

impl AlephFlags {
    pub fn all_ones(len: usize) -> Self {
        assert!((1..=MAX_TYPES).contains(&len));
        let mut flags = [false; MAX_TYPES];
        flags[..len].fill(true);
        AlephFlags {
            flags,
            len: len as u8,
            trial: 0,
        }
    }

    pub fn from_slice(flags: &[bool], trial: usize) -> Result<Self> {
        if flags.is_empty() || flags.len() > MAX_TYPES {
            return Err(Error::config("flag vector must hold 1..=4 entries"));
        }
        let mut f = [false; MAX_TYPES];
        f[..flags.len()].copy_from_slice(flags);
        Ok(AlephFlags {
            flags: f,
            len: flags.len() as u8,
            trial,
        })
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.flags[..self.len as usize]
    }

    pub fn trial(&self) -> usize {
        self.trial
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// At least one modelled type still explains the opponent.
    pub fn any(&self) -> bool {
        self.as_slice().iter().any(|&f| f)
    }

    /// Every modelled type has been denied.
    pub fn triggered(&self) -> bool {
        !self.any()
    }

    /// `f^t = f^{t−1} ∧ z1 ∧ z2`.
    pub fn combine(&self, z1: &[bool], z2: &[bool]) -> Result<AlephFlags> {
        let n = self.len();
        if z1.len() != n {
            return Err(Error::LengthMismatch(n, z1.len()));
        }
        if z2.len() != n {
            return Err(Error::LengthMismatch(n, z2.len()));
        }
        let mut next = *self;
        for i in 0..n {
            next.flags[i] = self.flags[i] && z1[i] && z2[i];
        }
        next.trial = self.trial + 1;
        Ok(next)
    }

    pub fn is_below_or_equal(&self, prev: &AlephFlags) -> bool {
        self.len == prev.len
            && self
                .as_slice()
                .iter()
                .zip(prev.as_slice())
                .all(|(&now, &before)| !now || before)
    }
}

/// `δ(t) = max((T − t)/t, 0.5)`.
pub fn delta_schedule(t: usize, horizon: usize) -> f64 {
    assert!(t >= 1 && t <= horizon, "trial {t} outside 1..={horizon}");
    ((horizon - t) as f64 / t as f64).max(0.5)
}

/// Nearest-rank index of the `p`-quantile in a sorted sample of size `n`:
/// `ceil(p·n) − 1`, so `p = 0` is the minimum and `p = 1` the maximum.
pub fn nearest_rank(p: f64, n: usize) -> usize {
    assert!(n > 0);
    let k = (p * n as f64).ceil() as isize - 1;
    k.clamp(0, n as isize - 1) as usize
}

/// `(q_p, q_{1−p})` of `values`, reordering `values` in place.
pub fn quantile_band<T: Copy + PartialOrd>(values: &mut [T], p: f64) -> (T, T) {
    let n = values.len();
    let lo = nearest_rank(p, n);
    let hi = nearest_rank(1.0 - p, n);
    let cmp = |a: &T, b: &T| a.partial_cmp(b).expect("NaN in quantile input");
    let (_, &mut q_lo, _) = values.select_nth_unstable_by(lo, cmp);
    let (_, &mut q_hi, _) = values.select_nth_unstable_by(hi, cmp);
    (q_lo, q_hi)
}

// ---------------------------------------------------------------------------
// Compression
// ---------------------------------------------------------------------------

/// Gzip-length oracle with a reusable DEFLATE state. Produces the same length
/// as a gzip stream at maximum compression with an empty header.
pub struct GzipMeter {
    compress: Compress,
    out: Vec<u8>,
}

impl std::fmt::Debug for GzipMeter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GzipMeter").finish_non_exhaustive()
    }
}

impl Default for GzipMeter {
    fn default() -> Self {
        Self::new()
    }
}

impl GzipMeter {
    pub fn new() -> Self {
        GzipMeter {
            compress: Compress::new(Compression::best(), false),
            out: Vec::with_capacity(256),
        }
    }

    pub fn compressed_len(&mut self, data: &[u8]) -> usize {
        self.compress.reset();
        self.out.clear();
        self.out.reserve(data.len() + 64);
        loop {
            let consumed = self.compress.total_in() as usize;
            let status = self
                .compress
                .compress_vec(&data[consumed..], &mut self.out, FlushCompress::Finish)
                .expect("in-memory deflate cannot fail");
            if status == flate2::Status::StreamEnd {
                break;
            }
            self.out.reserve(64);
        }
        self.out.len() + GZIP_OVERHEAD
    }

    /// `compressed_length / raw_length`.
    pub fn ratio(&mut self, data: &[u8]) -> f64 {
        assert!(!data.is_empty());
        self.compressed_len(data) as f64 / data.len() as f64
    }
}

/// N sampled action sequences per type, grown one action per trial.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampledTrajectorySet {
    per_type: Vec<Vec<Vec<u8>>>,
}

impl SampledTrajectorySet {
    pub fn new(types: usize, samples: usize) -> Self {
        SampledTrajectorySet {
            per_type: vec![vec![Vec::new(); samples]; types],
        }
    }

    pub fn from_sequences(per_type: Vec<Vec<Vec<u8>>>) -> Self {
        SampledTrajectorySet { per_type }
    }

    pub fn types(&self) -> usize {
        self.per_type.len()
    }

    pub fn samples(&self) -> usize {
        self.per_type.first().map_or(0, Vec::len)
    }

    /// Append one encoded action to every sequence of `type_index`.
    pub fn extend(&mut self, type_index: usize, actions: &[u8]) {
        let seqs = &mut self.per_type[type_index];
        assert_eq!(seqs.len(), actions.len());
        for (s, &a) in seqs.iter_mut().zip(actions) {
            s.push(a);
        }
    }

    pub fn sequences(&self, type_index: usize) -> &[Vec<u8>] {
        &self.per_type[type_index]
    }
}

/// Z¹ by compression typicality: affirm type θ iff the observed sequence's
/// compression ratio lies in `[q_δ, q_{1−δ}]` of θ's sampled ratios.
pub fn z1_gzip(
    observed: &[u8],
    samples: &SampledTrajectorySet,
    delta: f64,
    meter: &mut GzipMeter,
) -> Result<Vec<bool>> {
    if samples.samples() < 2 {
        return Err(Error::SampleSizeTooSmall(samples.samples()));
    }
    if observed.len() < GZIP_WARMUP {
        return Ok(vec![true; samples.types()]);
    }
    let c_obs = meter.ratio(observed);
    let mut ratios = Vec::with_capacity(samples.samples());
    Ok((0..samples.types())
        .map(|k| {
            ratios.clear();
            ratios.extend(samples.sequences(k).iter().map(|s| meter.ratio(s)));
            let (lo, hi) = quantile_band(&mut ratios, delta);
            lo <= c_obs && c_obs <= hi
        })
        .collect())
}

/// Z¹ by δ-strong typicality against the time-averaged model frequency.
///
/// `observed[τ]` is the opponent's action index at trial τ+1 and
/// `model[k][τ]` the distribution type k assigned to that trial.
pub fn z1_delta(observed: &[usize], model: &[Vec<Vec<f64>>], delta: f64) -> Vec<bool> {
    let t = observed.len();
    if t == 0 {
        return vec![true; model.len()];
    }
    model
        .iter()
        .map(|per_trial| {
            assert!(per_trial.len() >= t);
            let k = per_trial[0].len();
            let mut fbar = vec![0.0; k];
            for dist in &per_trial[..t] {
                for (f, p) in fbar.iter_mut().zip(dist) {
                    *f += p / t as f64;
                }
            }
            let mut counts = vec![0usize; k];
            for &a in observed {
                counts[a] += 1;
            }
            typical(&counts, &fbar, t, delta)
        })
        .collect()
}

/// `|F̂(a) − F̄(a)| ≤ δ·F̄(a)` for every action; an observed action with
/// `F̄ = 0` is never typical.
pub fn typical(counts: &[usize], fbar: &[f64], t: usize, delta: f64) -> bool {
    counts.iter().zip(fbar).all(|(&c, &f)| {
        let fhat = c as f64 / t as f64;
        if f <= 0.0 {
            return c == 0;
        }
        (fhat - f).abs() <= delta * f
    })
}

/// Per-type cumulative counterfactual rewards, one running sum per sample.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampledRewardSet {
    cumulative: Vec<Vec<f64>>,
}

impl SampledRewardSet {
    pub fn new(types: usize, samples: usize) -> Self {
        SampledRewardSet {
            cumulative: vec![vec![0.0; samples]; types],
        }
    }

    /// Add one trial's sampled rewards for `type_index`.
    pub fn accumulate(&mut self, type_index: usize, rewards: &[f64]) {
        let c = &mut self.cumulative[type_index];
        assert_eq!(c.len(), rewards.len());
        for (s, r) in c.iter_mut().zip(rewards) {
            *s += r;
        }
    }

    pub fn cumulative(&self, type_index: usize) -> &[f64] {
        &self.cumulative[type_index]
    }

    pub fn types(&self) -> usize {
        self.cumulative.len()
    }
}

/// Z²: affirm type θ iff the observed cumulative reward falls inside θ's
/// `[q_ω, q_{1−ω}]` band (only above `q_ω` when `two_sided` is false).
/// `None` means rewards are still masked, which affirms every type.
pub fn z2_reward(
    observed_cumulative: Option<f64>,
    set: &SampledRewardSet,
    omega: f64,
    two_sided: bool,
) -> Result<Vec<bool>> {
    let Some(obs) = observed_cumulative else {
        return Ok(vec![true; set.types().max(1)]);
    };
    if set.types() == 0 || set.cumulative.iter().any(Vec::is_empty) {
        return Err(Error::EmptyRewardSet);
    }
    let mut scratch = Vec::new();
    Ok(set
        .cumulative
        .iter()
        .map(|c| {
            scratch.clear();
            scratch.extend_from_slice(c);
            in_band(&mut scratch, obs, omega, two_sided)
        })
        .collect())
}

/// Band test on a scratch sample (reordered in place).
pub fn in_band(samples: &mut [f64], observed: f64, p: f64, two_sided: bool) -> bool {
    let (lo, hi) = quantile_band(samples, p);
    // Sums of tenths carry rounding noise; compare with a small slack.
    const EPS: f64 = 1e-9;
    observed >= lo - EPS && (!two_sided || observed <= hi + EPS)
}

/// Base policy while any type is affirmed, the out-of-belief policy otherwise.
pub fn aleph_policy<A: Copy + PartialEq + std::fmt::Debug>(
    flags: &AlephFlags,
    base: &PolicyDistribution<A>,
    oob: &PolicyDistribution<A>,
    rng: &mut RandomSource,
) -> A {
    if flags.any() {
        base.sample(rng)
    } else {
        oob.sample(rng)
    }
}

/// Row maximising the worst-case payoff, lowest index on ties.
pub fn minmax_row(matrix: &PayoffMatrix) -> Row {
    let mut best = Row::T;
    let mut best_min = f64::NEG_INFINITY;
    for row in Row::ALL {
        let worst = matrix.row(row).iter().copied().fold(f64::INFINITY, f64::min);
        if worst > best_min {
            best_min = worst;
            best = row;
        }
    }
    best
}
