//! Deception measurements over episode traces.

use serde::{Deserialize, Serialize};

use crate::domain::{History, PolicyDistribution};
use crate::error::{Error, Result};

/// Additive smoothing applied before a KL divergence.
pub const KL_EPSILON: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialTrace {
    pub trial: usize,
    /// The victim's belief after observing this trial's opponent action.
    pub belief: Vec<f64>,
    /// The victim's ℵ flags after this trial's update (empty when ℵ is off).
    pub flags: Vec<bool>,
    pub triggered: bool,
    pub reward_a: f64,
    pub reward_b: f64,
    /// Victim's belief-expected reward for this trial, E(r̂ᵗ).
    pub expected_reward: f64,
    /// What the victim's beliefs say the opponent should earn this trial.
    pub expected_deceiver_reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub history: History,
    pub trials: Vec<TrialTrace>,
    pub type_labels: Vec<String>,
    /// Index of the deceiver's true type in `type_labels`, when it has one.
    pub true_type: Option<usize>,
    /// Whether player A (sender, row) is the victim tracked in `trials`.
    pub victim_is_a: bool,
}

impl EpisodeTrace {
    pub fn rewards_a(&self) -> impl Iterator<Item = f64> + '_ {
        self.trials.iter().map(|t| t.reward_a)
    }

    pub fn rewards_b(&self) -> impl Iterator<Item = f64> + '_ {
        self.trials.iter().map(|t| t.reward_b)
    }

    pub fn victim_reward(&self, t: &TrialTrace) -> f64 {
        if self.victim_is_a {
            t.reward_a
        } else {
            t.reward_b
        }
    }

    pub fn deceiver_reward(&self, t: &TrialTrace) -> f64 {
        if self.victim_is_a {
            t.reward_b
        } else {
            t.reward_a
        }
    }

    pub fn cumulative_a(&self) -> f64 {
        self.rewards_a().sum()
    }

    pub fn cumulative_b(&self) -> f64 {
        self.rewards_b().sum()
    }

    /// First trial after which every type was denied.
    pub fn trigger_trial(&self) -> Option<usize> {
        self.trials.iter().find(|t| t.triggered).map(|t| t.trial)
    }

    /// Σ (rᵗ − E(r̂ᵗ)) for the victim.
    pub fn cumulative_regret(&self) -> f64 {
        self.trials
            .iter()
            .map(|t| regret_estimate(self.victim_reward(t), t.expected_reward))
            .sum()
    }
}

/// True iff some other type is at least as probable as the true one.
pub fn false_belief_indicator(belief: &[f64], true_type: usize) -> bool {
    assert!(true_type < belief.len(), "true type outside belief support");
    let p_true = belief[true_type];
    belief
        .iter()
        .enumerate()
        .any(|(i, &p)| i != true_type && p >= p_true)
}

/// `E_{a_opp}[E_{a_own | a_opp}[u]]`, exact over both action sets.
pub fn expected_reward_per_type<O, A>(
    opponent: &PolicyDistribution<O>,
    own: impl Fn(O) -> PolicyDistribution<A>,
    utility: impl Fn(O, A) -> f64,
) -> f64
where
    O: Copy + PartialEq + std::fmt::Debug,
    A: Copy + PartialEq + std::fmt::Debug,
{
    opponent
        .iter()
        .filter(|&(_, p)| p > 0.0)
        .map(|(o, p)| {
            let inner: f64 = own(o).iter().map(|(a, q)| q * utility(o, a)).sum();
            p * inner
        })
        .sum()
}

/// Belief-weighted mean of per-type values.
pub fn expected_reward(belief: &[f64], per_type: &[f64]) -> Result<f64> {
    if belief.len() != per_type.len() {
        return Err(Error::SupportMismatch {
            expected: belief.len(),
            got: per_type.len(),
        });
    }
    Ok(belief.iter().zip(per_type).map(|(b, v)| b * v).sum())
}

/// `r − E(r̂)`; negative means the victim did worse than it expected.
pub fn regret_estimate(observed: f64, expected: f64) -> f64 {
    observed - expected
}

/// `KL(empirical ‖ expected)` after additive ε-smoothing of both.
pub fn kl_expected_vs_observed(expected: &[f64], empirical: &[f64]) -> Result<f64> {
    if expected.len() != empirical.len() || expected.is_empty() {
        return Err(Error::SupportMismatch {
            expected: expected.len(),
            got: empirical.len(),
        });
    }
    let p = smooth(empirical);
    let q = smooth(expected);
    Ok(p.iter()
        .zip(&q)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum::<f64>()
        .max(0.0))
}

fn smooth(p: &[f64]) -> Vec<f64> {
    let total: f64 = p.iter().map(|x| x + KL_EPSILON).sum();
    p.iter().map(|x| (x + KL_EPSILON) / total).collect()
}

/// Empirical frequency of action indices `0..k`.
pub fn empirical_policy(actions: &[usize], k: usize) -> Vec<f64> {
    let mut f = vec![0.0; k];
    for &a in actions {
        f[a] += 1.0;
    }
    let n = actions.len().max(1) as f64;
    f.iter_mut().for_each(|x| *x /= n);
    f
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single value.
    pub sd: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        if n == 0 {
            return Stat { mean: f64::NAN, sd: f64::NAN, n: 0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Stat { mean, sd, n }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSummary {
    pub episodes: usize,
    /// Per-episode mean reward per trial, player A.
    pub reward_a: Stat,
    pub reward_b: Stat,
    /// Per-episode mean |r_a − r_b| per trial.
    pub abs_difference: Stat,
    /// Per-episode mean (r_a − r_b) per trial.
    pub difference: Stat,
    /// Σ cumulative A / Σ cumulative B over all episodes.
    pub ratio_a_to_b: f64,
    /// Realised deceiver reward over the victim's expectation of it, minus one.
    pub deceiver_excess: f64,
    pub false_belief_rate: Option<f64>,
    pub trigger_rate: f64,
    pub trigger_trial: Stat,
    pub cumulative_regret: Stat,
}

pub fn reward_summaries(traces: &[EpisodeTrace]) -> Result<RewardSummary> {
    if traces.is_empty() {
        return Err(Error::EmptyInput);
    }
    let per_trial = |f: &dyn Fn(&EpisodeTrace) -> f64| -> Stat {
        Stat::of(&traces.iter().map(f).collect::<Vec<_>>())
    };
    let mean_over = |tr: &EpisodeTrace, g: &dyn Fn(&TrialTrace) -> f64| -> f64 {
        tr.trials.iter().map(g).sum::<f64>() / tr.trials.len().max(1) as f64
    };
    let sum_a: f64 = traces.iter().map(EpisodeTrace::cumulative_a).sum();
    let sum_b: f64 = traces.iter().map(EpisodeTrace::cumulative_b).sum();

    let mut realised = 0.0;
    let mut expected = 0.0;
    let mut fb = 0usize;
    let mut fb_total = 0usize;
    for tr in traces {
        for t in &tr.trials {
            realised += tr.deceiver_reward(t);
            expected += t.expected_deceiver_reward;
            if let Some(tt) = tr.true_type {
                if tt < t.belief.len() && t.belief.len() > 1 {
                    fb_total += 1;
                    fb += usize::from(false_belief_indicator(&t.belief, tt));
                }
            }
        }
    }
    let triggers: Vec<f64> = traces
        .iter()
        .filter_map(|t| t.trigger_trial().map(|x| x as f64))
        .collect();

    Ok(RewardSummary {
        episodes: traces.len(),
        reward_a: per_trial(&|tr| mean_over(tr, &|t| t.reward_a)),
        reward_b: per_trial(&|tr| mean_over(tr, &|t| t.reward_b)),
        abs_difference: per_trial(&|tr| mean_over(tr, &|t| (t.reward_a - t.reward_b).abs())),
        difference: per_trial(&|tr| mean_over(tr, &|t| t.reward_a - t.reward_b)),
        ratio_a_to_b: sum_a / sum_b,
        deceiver_excess: realised / expected - 1.0,
        false_belief_rate: (fb_total > 0).then(|| fb as f64 / fb_total as f64),
        trigger_rate: triggers.len() as f64 / traces.len() as f64,
        trigger_trial: Stat::of(&triggers),
        cumulative_regret: per_trial(&|tr| tr.cumulative_regret()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn false_belief_examples() {
        assert!(false_belief_indicator(&[0.95, 0.03, 0.02], 1));
        assert!(!false_belief_indicator(&[0.0, 1.0, 0.0], 1));
        assert!(false_belief_indicator(&[0.5, 0.5, 0.0], 1));
    }

    #[test]
    fn expected_reward_examples() {
        assert_eq!(expected_reward(&[0.0, 1.0], &[0.7, 0.25]).unwrap(), 0.25);
        assert!((expected_reward(&[0.5, 0.5], &[0.2, 0.4]).unwrap() - 0.3).abs() < 1e-15);
        assert!(expected_reward(&[1.0], &[1.0, 2.0]).is_err());
        assert_eq!(regret_estimate(0.4, 0.4), 0.0);
    }

    #[test]
    fn per_type_expectation_accept_all_vs_uniform() {
        let opp = PolicyDistribution::uniform((0..11u8).collect()).unwrap();
        let accept_all = |_o: u8| PolicyDistribution::degenerate(true);
        let u = |o: u8, acc: bool| if acc { f64::from(o) / 10.0 } else { 0.0 };
        assert!((expected_reward_per_type(&opp, accept_all, u) - 0.5).abs() < 1e-12);
        let reject_all = |_o: u8| PolicyDistribution::degenerate(false);
        assert_eq!(expected_reward_per_type(&opp, reject_all, u), 0.0);
    }

    #[test]
    fn kl_examples() {
        let u = vec![1.0 / 11.0; 11];
        assert!(kl_expected_vs_observed(&u, &u).unwrap().abs() < 1e-15);
        let mut point = vec![0.0; 11];
        point[4] = 1.0;
        // Frozen from a 50-digit evaluation of the smoothed formula.
        let kl = kl_expected_vs_observed(&u, &point).unwrap();
        assert!((kl - KL_UNIFORM_VS_POINT).abs() < 1e-12, "{kl}");
    }

    const KL_UNIFORM_VS_POINT: f64 = 2.319_618_979_687_430;

    #[test]
    fn summaries_reject_empty_input() {
        assert!(matches!(reward_summaries(&[]), Err(Error::EmptyInput)));
    }

    fn dist(v: &[f64]) -> Vec<f64> {
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    }

    proptest! {
        #[test]
        fn kl_nonnegative_and_zero_on_equal(a in prop::collection::vec(0.001f64..1.0, 2..12), b in prop::collection::vec(0.001f64..1.0, 2..12)) {
            let n = a.len().min(b.len());
            let p = dist(&a[..n]);
            let q = dist(&b[..n]);
            prop_assert!(kl_expected_vs_observed(&p, &q).unwrap() >= 0.0);
            prop_assert!(kl_expected_vs_observed(&p, &p).unwrap().abs() < 1e-12);
        }

        #[test]
        fn expected_reward_is_linear(w in 0.0f64..1.0, v in prop::collection::vec(-5.0f64..5.0, 3), a in prop::collection::vec(0.01f64..1.0, 3), b in prop::collection::vec(0.01f64..1.0, 3)) {
            let ba = dist(&a);
            let bb = dist(&b);
            let mix: Vec<f64> = ba.iter().zip(&bb).map(|(x, y)| w * x + (1.0 - w) * y).collect();
            let lhs = expected_reward(&mix, &v).unwrap();
            let rhs = w * expected_reward(&ba, &v).unwrap() + (1.0 - w) * expected_reward(&bb, &v).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
