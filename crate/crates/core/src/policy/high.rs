//! Clause selection: option states, option probabilities and the
//! discounted high-level reward.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::lstm::LstmState;
use crate::numeric::ops;

use super::low::LowTrajectory;
use super::{LogisticPolicy, PolicyGradient};

static DEGENERATE_COSINE: AtomicU64 = AtomicU64::new(0);

/// Number of cosine rewards computed against a zero-norm vector so far.
pub fn degenerate_cosine_count() -> u64 {
    DEGENERATE_COSINE.load(Ordering::Relaxed)
}

/// `s_i = h_{i-1} ++ c_{i-1} ++ v_i ++ v_a`
pub fn high_state(prev: &LstmState, clause: &[f64], aspect: &[f64]) -> Result<Vec<f64>> {
    let d = prev.hidden.len();
    for (name, part) in [("cell", &prev.cell[..]), ("clause", clause), ("aspect", aspect)] {
        if part.len() != d {
            return Err(Error::shape(
                "high_state",
                format!("hidden {d}"),
                format!("{name} {}", part.len()),
            ));
        }
    }
    Ok(ops::concat(&[&prev.hidden, &prev.cell, clause, aspect]))
}

pub fn option_prob(state: &[f64], policy: &LogisticPolicy) -> Result<f64> {
    if state.len() % 4 != 0 {
        return Err(Error::shape(
            "option_prob",
            "state of width 4d",
            format!("width {}", state.len()),
        ));
    }
    policy.prob(state)
}

/// `ln max(cos(v_a, h), eps)`; a zero-norm input counts as degenerate and
/// yields `ln eps`.
pub fn cosine_reward(aspect: &[f64], hidden: &[f64], eps: f64) -> f64 {
    match ops::cosine(aspect, hidden) {
        Some(c) => c.max(eps).ln(),
        None => {
            DEGENERATE_COSINE.fetch_add(1, Ordering::Relaxed);
            eps.ln()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HighStep {
    pub state: Vec<f64>,
    pub option: bool,
    /// Probability of selecting under the policy that produced the step.
    pub prob: f64,
    /// `ln cos(v_a, h_t)` with the post-step hidden state.
    pub cos_log: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HighTrajectory {
    pub n_clauses: usize,
    pub steps: Vec<HighStep>,
    /// Word-level trajectory for each selected clause.
    pub low: Vec<Option<LowTrajectory>>,
}

impl HighTrajectory {
    pub fn new(n_clauses: usize) -> Self {
        HighTrajectory {
            n_clauses,
            steps: Vec::with_capacity(n_clauses),
            low: Vec::with_capacity(n_clauses),
        }
    }

    pub fn options(&self) -> Vec<bool> {
        self.steps.iter().map(|s| s.option).collect()
    }

    pub fn selected(&self) -> usize {
        self.steps.iter().filter(|s| s.option).count()
    }

    pub fn is_complete(&self) -> bool {
        self.steps.len() == self.n_clauses && self.low.len() == self.n_clauses
    }

    /// Summed word reward per clause, zero for discarded clauses.
    pub fn clause_rewards(&self) -> Result<Vec<f64>> {
        if !self.is_complete() {
            return Err(Error::State(format!(
                "trajectory has {} of {} steps",
                self.steps.len(),
                self.n_clauses
            )));
        }
        self.steps
            .iter()
            .zip(&self.low)
            .map(|(step, low)| match (step.option, low) {
                (false, _) => Ok(0.0),
                (true, Some(l)) => l.total_reward(),
                (true, None) => Err(Error::State(
                    "selected clause has no word-level trajectory".into(),
                )),
            })
            .collect()
    }
}

/// Return from clause `i` onward by direct summation (0-based `i`).
pub fn high_reward(i: usize, traj: &HighTrajectory, final_prob: f64, cfg: &Config) -> Result<f64> {
    let clause = traj.clause_rewards()?;
    if i >= traj.n_clauses {
        return Err(Error::domain(format!(
            "step {i} outside trajectory of {}",
            traj.n_clauses
        )));
    }
    let mut cos_sum = 0.0;
    let mut low_sum = 0.0;
    for t in i..traj.n_clauses {
        let disc = cfg.gamma.powi((t - i) as i32);
        cos_sum += disc * traj.steps[t].cos_log;
        low_sum += disc * clause[t];
    }
    let delay = final_prob.max(cfg.prob_floor).ln();
    Ok(cfg.lambda1 * cos_sum + cfg.lambda2 * low_sum + cfg.lambda3 * delay)
}

/// Every clause return via the backward recurrence on the two discounted sums.
pub fn high_rewards(traj: &HighTrajectory, final_prob: f64, cfg: &Config) -> Result<Vec<f64>> {
    let clause = traj.clause_rewards()?;
    let delay = cfg.lambda3 * final_prob.max(cfg.prob_floor).ln();
    let mut out = vec![0.0; traj.n_clauses];
    let mut acc = 0.0;
    for t in (0..traj.n_clauses).rev() {
        acc = cfg.lambda1 * traj.steps[t].cos_log + cfg.lambda2 * clause[t] + cfg.gamma * acc;
        out[t] = acc + delay;
    }
    Ok(out)
}

/// `sum_i (r_i - b) grad log pi(o_i | s_i)`.
pub fn policy_gradient_high(
    traj: &HighTrajectory,
    rewards: &[f64],
    baseline: f64,
    policy: &LogisticPolicy,
) -> Result<PolicyGradient> {
    if rewards.len() != traj.steps.len() {
        return Err(Error::shape(
            "policy_gradient_high",
            format!("{} steps", traj.steps.len()),
            format!("{} rewards", rewards.len()),
        ));
    }
    let mut grad = PolicyGradient::zeros(policy.dim());
    for (step, r) in traj.steps.iter().zip(rewards) {
        let adv = r - baseline;
        if adv == 0.0 {
            continue;
        }
        let score = policy.score(&step.state, step.option, step.prob);
        ops::axpy(adv, &score.weight, &mut grad.weight);
        grad.bias += adv * score.bias;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::low::{LowStep, LowTrajectory};
    use crate::policy::sample_choice;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn step(option: bool, cos_log: f64) -> HighStep {
        HighStep {
            state: vec![0.0; 4],
            option,
            prob: 0.5,
            cos_log,
        }
    }

    fn low_with(reward: f64, n: usize) -> LowTrajectory {
        let mut l = LowTrajectory {
            steps: (0..n)
                .map(|_| LowStep {
                    state: vec![],
                    action: true,
                    prob: 0.5,
                })
                .collect(),
            reward: None,
        };
        l.set_reward(reward);
        l
    }

    #[test]
    fn state_concatenation_order() {
        let prev = LstmState {
            hidden: vec![1.0, 2.0],
            cell: vec![3.0, 4.0],
        };
        let s = high_state(&prev, &[5.0, 6.0], &[7.0, 8.0]).unwrap();
        assert_eq!(s, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(high_state(&LstmState::zeros(3), &[0.0; 3], &[0.0; 3]).unwrap(), vec![0.0; 12]);
        assert!(high_state(&prev, &[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn state_slices_recover_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut v = || (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let prev = LstmState { hidden: v(), cell: v() };
        let (clause, aspect) = (v(), v());
        let s = high_state(&prev, &clause, &aspect).unwrap();
        assert_eq!(&s[0..5], &prev.hidden[..]);
        assert_eq!(&s[5..10], &prev.cell[..]);
        assert_eq!(&s[10..15], &clause[..]);
        assert_eq!(&s[15..20], &aspect[..]);
    }

    #[test]
    fn option_prob_checks_width() {
        let p = LogisticPolicy::zeros(8);
        assert_eq!(option_prob(&[0.0; 8], &p).unwrap(), 0.5);
        assert!(option_prob(&[0.0; 6], &p).is_err());
    }

    #[test]
    fn empirical_option_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = 0.7;
        let hits = (0..10_000).filter(|_| sample_choice(p, &mut rng)).count();
        let freq = hits as f64 / 10_000.0;
        let sigma = (p * (1.0 - p) / 10_000.0).sqrt();
        assert!((freq - p).abs() <= 3.0 * sigma, "{freq}");
    }

    #[test]
    fn cosine_reward_cases() {
        let a = [0.3, -1.2, 2.0];
        assert!(cosine_reward(&a, &a, 1e-4).abs() < 1e-15);
        let before = degenerate_cosine_count();
        assert_eq!(cosine_reward(&a, &[0.0; 3], 1e-4), 1e-4f64.ln());
        assert!(degenerate_cosine_count() > before);
        assert_eq!(cosine_reward(&[1.0, 0.0], &[0.0, 1.0], 1e-4), 1e-4f64.ln());
        let b = [0.5, -0.1, 1.0];
        let c = (0.3 * 0.5 + 1.2 * 0.1 + 2.0) / ((0.09f64 + 1.44 + 4.0).sqrt() * (0.25f64 + 0.01 + 1.0).sqrt());
        assert!((cosine_reward(&a, &b, 1e-4) - c.ln()).abs() < 1e-12);
        let scaled: Vec<f64> = b.iter().map(|x| x * 7.5).collect();
        assert!((cosine_reward(&a, &scaled, 1e-4) - cosine_reward(&a, &b, 1e-4)).abs() < 1e-12);
    }

    #[test]
    fn delay_term_isolated() {
        let cfg = Config {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 1.0,
            ..Config::default()
        };
        let mut t = HighTrajectory::new(1);
        t.steps.push(step(false, -3.0));
        t.low.push(None);
        let r = high_reward(0, &t, (-2.0f64).exp(), &cfg).unwrap();
        assert!((r + 2.0).abs() < 1e-12);
    }

    #[test]
    fn discount_arithmetic() {
        let cfg = Config {
            gamma: 0.8,
            lambda1: 1.0,
            lambda2: 0.0,
            lambda3: 0.0,
            ..Config::default()
        };
        let mut t = HighTrajectory::new(2);
        t.steps.push(step(false, 0.0));
        t.steps.push(step(false, -1.0));
        t.low.extend([None, None]);
        assert!((high_reward(0, &t, 0.5, &cfg).unwrap() + 0.8).abs() < 1e-12);
    }

    #[test]
    fn incomplete_trajectory_is_a_state_error() {
        let mut t = HighTrajectory::new(3);
        t.steps.push(step(true, 0.0));
        t.low.push(None);
        assert!(matches!(high_reward(0, &t, 0.5, &Config::default()), Err(Error::State(_))));
        let mut t = HighTrajectory::new(1);
        t.steps.push(step(true, 0.0));
        t.low.push(None);
        assert!(matches!(high_reward(0, &t, 0.5, &Config::default()), Err(Error::State(_))));
    }

    #[test]
    fn summation_matches_recurrence_and_oracle() {
        let cfg = Config::default();
        assert_eq!((cfg.lambda1, cfg.lambda2, cfg.lambda3, cfg.gamma), (0.25, 0.25, 0.5, 0.8));
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let mut t = HighTrajectory::new(3);
            let mut cos = vec![];
            let mut low = vec![];
            for _ in 0..3 {
                let sel = rng.gen_bool(0.6);
                let c = rng.gen_range(-5.0..0.0);
                cos.push(c);
                t.steps.push(step(sel, c));
                if sel {
                    let k = rng.gen_range(1..6);
                    let r = rng.gen_range(-2.0..0.0);
                    low.push(k as f64 * r);
                    t.low.push(Some(low_with(r, k)));
                } else {
                    low.push(0.0);
                    t.low.push(None);
                }
            }
            let p: f64 = rng.gen_range(0.01..1.0);
            let rec = high_rewards(&t, p, &cfg).unwrap();
            for i in 0..3 {
                let mut oracle = 0.0;
                for tt in i..3 {
                    let g = 0.8f64.powi((tt - i) as i32);
                    oracle += 0.25 * g * cos[tt] + 0.25 * g * low[tt];
                }
                oracle += 0.5 * p.ln();
                let direct = high_reward(i, &t, p, &cfg).unwrap();
                assert!((direct - oracle).abs() < 1e-12);
                assert!((rec[i] - oracle).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_advantage_gives_zero_gradient() {
        let policy = LogisticPolicy::zeros(4);
        let mut t = HighTrajectory::new(2);
        t.steps.push(HighStep { state: vec![1.0, 2.0, 3.0, 4.0], option: true, prob: 0.5, cos_log: 0.0 });
        t.steps.push(HighStep { state: vec![1.0, 0.0, 3.0, 4.0], option: false, prob: 0.5, cos_log: 0.0 });
        let g = policy_gradient_high(&t, &[0.7, 0.7], 0.7, &policy).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn saturated_selection_has_vanishing_score() {
        let mut policy = LogisticPolicy::zeros(4);
        policy.bias = 40.0;
        let s = vec![0.1, 0.2, 0.3, 0.4];
        let prob = policy.prob(&s).unwrap();
        let mut t = HighTrajectory::new(1);
        t.steps.push(HighStep { state: s, option: true, prob, cos_log: 0.0 });
        let g = policy_gradient_high(&t, &[1.0], 0.0, &policy).unwrap();
        assert!(g.norm() < 1e-15);
    }

    #[test]
    fn single_step_gradient_matches_finite_difference() {
        // E[(R - b) log pi] differentiated numerically for one logistic step
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let policy = LogisticPolicy::uniform(4, 1.0, &mut rng);
        let s: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (reward, baseline) = (1.7, 0.4);
        for option in [true, false] {
            let prob = policy.prob(&s).unwrap();
            let mut t = HighTrajectory::new(1);
            t.steps.push(HighStep { state: s.clone(), option, prob, cos_log: 0.0 });
            let g = policy_gradient_high(&t, &[reward], baseline, &policy).unwrap();
            let f = |p: &LogisticPolicy| {
                (reward - baseline) * super::super::choice_prob(p.prob(&s).unwrap(), option).ln()
            };
            let h = 1e-6;
            for k in 0..4 {
                let mut up = policy.clone();
                let mut dn = policy.clone();
                up.weight[k] += h;
                dn.weight[k] -= h;
                let fd = (f(&up) - f(&dn)) / (2.0 * h);
                assert!(((fd - g.weight[k]) / g.weight[k]).abs() < 1e-5);
            }
        }
    }
}
