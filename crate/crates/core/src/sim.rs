//! Sampling paths through an MDP.
//!
//! Action draws always go through [`sample_categorical`] on the policy's
//! action distribution, so two policies with the same distributions consume
//! rng streams identically; runs that should coincide do coincide.

use crate::mdp::{LayeredMdp, StateId, Trajectory};
use crate::policy::{sample_categorical, TabularPolicy};
use crate::rng::Rng;
use crate::Result;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

/// Simulates one episode, drawing realized costs.
pub fn rollout<P: TabularPolicy>(mdp: &LayeredMdp, policy: &P, rng: &mut Rng) -> Result<Trajectory> {
    let h = mdp.horizon();
    let mut probs = vec![0.0; mdp.actions()];
    let mut states = Vec::with_capacity(h);
    let mut actions = Vec::with_capacity(h);
    let mut costs = Vec::with_capacity(h);
    let mut s = sample_categorical(mdp.rho(), rng);
    for t in 0..h {
        let sid = mdp.layer_offset(t) + s;
        policy.probs_into(sid, &mut probs)?;
        let a = sample_categorical(&probs, rng);
        states.push(sid);
        actions.push(a);
        costs.push(mdp.draw_cost(sid, a, rng));
        if t + 1 < h {
            s = sample_categorical(mdp.transition_row(sid, a), rng);
        }
    }
    Ok(Trajectory { states, actions, costs })
}

/// Walks the chain to layer `t` and returns the state reached. Does not draw
/// costs.
fn state_at_layer<P: TabularPolicy>(
    mdp: &LayeredMdp,
    policy: &P,
    t: usize,
    rng: &mut Rng,
) -> Result<StateId> {
    let mut probs = vec![0.0; mdp.actions()];
    let mut s = sample_categorical(mdp.rho(), rng);
    for layer in 0..t {
        let sid = mdp.layer_offset(layer) + s;
        policy.probs_into(sid, &mut probs)?;
        let a = sample_categorical(&probs, rng);
        s = sample_categorical(mdp.transition_row(sid, a), rng);
    }
    Ok(mdp.layer_offset(t) + s)
}

/// How states are drawn from a policy's visitation distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMode {
    /// One state per episode at a uniformly random layer: exactly i.i.d.
    /// draws from the visitation distribution.
    ExactIid,
    /// Consecutive states sliced from whole episodes, the shortcut practical
    /// implementations take. Draws are identically distributed but
    /// correlated within an episode.
    TrajectorySlice,
}

/// Draws `k` states from the visitation distribution of `policy`.
pub fn sample_visitation_states<P: TabularPolicy>(
    mdp: &LayeredMdp,
    policy: &P,
    k: usize,
    mode: SampleMode,
    rng: &mut Rng,
) -> Result<Vec<StateId>> {
    let h = mdp.horizon();
    let mut out = Vec::with_capacity(k);
    match mode {
        SampleMode::ExactIid => {
            for _ in 0..k {
                let t = rng.gen_range(0..h);
                out.push(state_at_layer(mdp, policy, t, rng)?);
            }
        }
        SampleMode::TrajectorySlice => {
            while out.len() < k {
                let mut probs = vec![0.0; mdp.actions()];
                let mut s = sample_categorical(mdp.rho(), rng);
                for t in 0..h {
                    let sid = mdp.layer_offset(t) + s;
                    out.push(sid);
                    if out.len() == k || t + 1 == h {
                        break;
                    }
                    policy.probs_into(sid, &mut probs)?;
                    let a = sample_categorical(&probs, rng);
                    s = sample_categorical(mdp.transition_row(sid, a), rng);
                }
            }
        }
    }
    Ok(out)
}

/// Monte Carlo estimate of `J(policy)`: mean total realized cost and its
/// standard error over `n` episodes.
pub fn mc_expected_cost<P: TabularPolicy>(
    mdp: &LayeredMdp,
    policy: &P,
    n: usize,
    rng: &mut Rng,
) -> Result<(f64, f64)> {
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n {
        let c = rollout(mdp, policy, rng)?.total_cost();
        sum += c;
        sumsq += c * c;
    }
    let mean = sum / n as f64;
    let var = (sumsq / n as f64 - mean * mean).max(0.0);
    Ok((mean, (var / n as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::forward_visitation;
    use crate::policy::{DeterministicPolicy, StochasticPolicy};
    use crate::rng::stream;

    #[test]
    fn rollout_shape_and_layer_order() {
        let mdp = LayeredMdp::random_dense(&[2, 3, 2], 2, 5);
        let pi = StochasticPolicy::random(mdp.state_count(), 2, &mut stream(0, "t", 0));
        let mut rng = stream(1, "t", 0);
        for _ in 0..100 {
            let traj = rollout(&mdp, &pi, &mut rng).unwrap();
            assert_eq!(traj.states.len(), 3);
            for (t, &s) in traj.states.iter().enumerate() {
                assert_eq!(mdp.layer_of(s), t);
            }
        }
    }

    #[test]
    fn rollout_transition_frequencies_match_row() {
        // Frequencies of layer-1 states must match P(.|s0, a) within 3 sigma.
        let mdp = LayeredMdp::random_dense(&[1, 3], 2, 6);
        let pi = DeterministicPolicy::new(2, vec![1, 0, 0, 0]).unwrap();
        let mut rng = stream(2, "t", 0);
        let n = 50_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let traj = rollout(&mdp, &pi, &mut rng).unwrap();
            counts[traj.states[1] - 1] += 1;
        }
        let row = mdp.transition_row(0, 1);
        for j in 0..3 {
            let f = counts[j] as f64 / n as f64;
            let se = (row[j] * (1.0 - row[j]) / n as f64).sqrt();
            assert!((f - row[j]).abs() <= 3.0 * se + 1e-9, "state {j}: {f} vs {}", row[j]);
        }
    }

    #[test]
    fn exact_iid_matches_forward_visitation() {
        let mdp = LayeredMdp::random_dense(&[2, 3, 2], 2, 7);
        let pi = StochasticPolicy::random(mdp.state_count(), 2, &mut stream(3, "t", 0));
        let d = forward_visitation(&mdp, &pi).unwrap();
        let mut rng = stream(4, "t", 0);
        let n = 60_000;
        let states = sample_visitation_states(&mdp, &pi, n, SampleMode::ExactIid, &mut rng).unwrap();
        let mut counts = vec![0usize; mdp.state_count()];
        for s in states {
            counts[s] += 1;
        }
        for s in 0..mdp.state_count() {
            let f = counts[s] as f64 / n as f64;
            let se = (d.d[s] * (1.0 - d.d[s]) / n as f64).sqrt();
            assert!((f - d.d[s]).abs() <= 3.5 * se + 1e-9, "state {s}: {f} vs {}", d.d[s]);
        }
    }

    #[test]
    fn trajectory_slice_marginals_match_visitation() {
        // Slices are correlated but identically distributed when k is a
        // multiple of H.
        let mdp = LayeredMdp::random_dense(&[2, 2, 2], 2, 8);
        let pi = StochasticPolicy::random(mdp.state_count(), 2, &mut stream(5, "t", 0));
        let d = forward_visitation(&mdp, &pi).unwrap();
        let mut rng = stream(6, "t", 0);
        let n = 60_000; // 20k episodes of length 3
        let states =
            sample_visitation_states(&mdp, &pi, n, SampleMode::TrajectorySlice, &mut rng).unwrap();
        let mut counts = vec![0usize; mdp.state_count()];
        for s in states {
            counts[s] += 1;
        }
        for s in 0..mdp.state_count() {
            let f = counts[s] as f64 / n as f64;
            // Correlated draws: allow a wider band than iid 3 sigma.
            assert!((f - d.d[s]).abs() <= 0.02, "state {s}: {f} vs {}", d.d[s]);
        }
    }

    #[test]
    fn trajectory_slice_returns_exactly_k() {
        let mdp = LayeredMdp::random_dense(&[1, 2, 2], 2, 9);
        let pi = DeterministicPolicy::new(2, vec![0; 5]).unwrap();
        let mut rng = stream(7, "t", 0);
        for k in [1, 2, 3, 4, 7] {
            let states =
                sample_visitation_states(&mdp, &pi, k, SampleMode::TrajectorySlice, &mut rng)
                    .unwrap();
            assert_eq!(states.len(), k);
            assert_eq!(mdp.layer_of(states[0]), 0);
        }
    }

    #[test]
    fn undefined_policy_state_surfaces_in_rollout() {
        let mdp = LayeredMdp::random_dense(&[1, 2], 2, 10);
        let pi = DeterministicPolicy::new(2, vec![0]).unwrap(); // covers layer 0 only
        let mut rng = stream(8, "t", 0);
        let err = rollout(&mdp, &pi, &mut rng).unwrap_err();
        assert!(matches!(err, crate::Error::PolicyUndefined { state } if state >= 1));
    }
}
