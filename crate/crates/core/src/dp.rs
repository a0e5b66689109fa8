//! Exact dynamic programming on layered MDPs.
//!
//! Everything here works on mean costs and full distributions; no sampling.
//! `backward_dp` and `forward_visitation` are the ground truth the rest of
//! the crate is checked against.

use crate::error::Error;
use crate::mdp::LayeredMdp;
use crate::policy::{DeterministicPolicy, TabularPolicy};
use crate::Result;

/// Tolerance for the Bellman identities.
pub const VALUE_TOL: f64 = 1e-10;
/// Tolerance for visitation mass checks.
pub const MASS_TOL: f64 = 1e-12;
/// Tolerance for the performance-difference identity.
pub const PDL_TOL: f64 = 1e-9;

/// State and state-action values of a fixed policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    pub v: Vec<f64>,
    pub q: Vec<Vec<f64>>,
}

impl ValueTables {
    /// Re-checks the Bellman identities and value bounds against the MDP and
    /// the policy the tables were computed for.
    pub fn validate<P: TabularPolicy>(&self, mdp: &LayeredMdp, policy: &P) -> Result<()> {
        let h = mdp.horizon();
        let mut probs = vec![0.0; mdp.actions()];
        for s in 0..mdp.state_count() {
            let t = mdp.layer_of(s);
            let remaining = (h - t) as f64;
            if !(-VALUE_TOL..=remaining + VALUE_TOL).contains(&self.v[s]) {
                return Err(Error::InvalidMdp(format!(
                    "V({s}) = {} outside [0, {remaining}]",
                    self.v[s]
                )));
            }
            policy.probs_into(s, &mut probs)?;
            let mixed: f64 = (0..mdp.actions()).map(|a| probs[a] * self.q[s][a]).sum();
            if (mixed - self.v[s]).abs() > VALUE_TOL {
                return Err(Error::InvalidMdp(format!("V({s}) does not mix Q by the policy")));
            }
            let next_off = if t + 1 < h { mdp.layer_offset(t + 1) } else { 0 };
            for a in 0..mdp.actions() {
                let cont: f64 = mdp
                    .transition_row(s, a)
                    .iter()
                    .enumerate()
                    .map(|(j, &p)| p * self.v[next_off + j])
                    .sum();
                if (mdp.cost(s, a) + cont - self.q[s][a]).abs() > VALUE_TOL {
                    return Err(Error::InvalidMdp(format!("Q({s},{a}) violates Bellman identity")));
                }
            }
        }
        Ok(())
    }
}

/// Computes `V` and `Q` of `policy` by backward induction. On the last layer
/// `Q(s, a)` is the mean cost alone.
pub fn backward_dp<P: TabularPolicy>(mdp: &LayeredMdp, policy: &P) -> Result<ValueTables> {
    let states = mdp.state_count();
    let actions = mdp.actions();
    let mut v = vec![0.0; states];
    let mut q = vec![vec![0.0; actions]; states];
    let mut probs = vec![0.0; actions];
    for t in (0..mdp.horizon()).rev() {
        let next_off = if t + 1 < mdp.horizon() { mdp.layer_offset(t + 1) } else { 0 };
        for s in mdp.layer_states(t) {
            for a in 0..actions {
                let cont: f64 = mdp
                    .transition_row(s, a)
                    .iter()
                    .enumerate()
                    .map(|(j, &p)| p * v[next_off + j])
                    .sum();
                q[s][a] = mdp.cost(s, a) + cont;
            }
            policy.probs_into(s, &mut probs)?;
            v[s] = (0..actions).map(|a| probs[a] * q[s][a]).sum();
        }
    }
    Ok(ValueTables { v, q })
}

/// Expected total cost `J(policy)` from the initial distribution.
pub fn expected_cost<P: TabularPolicy>(mdp: &LayeredMdp, policy: &P) -> Result<f64> {
    let tables = backward_dp(mdp, policy)?;
    Ok(mdp.rho().iter().zip(mdp.layer_states(0)).map(|(&p, s)| p * tables.v[s]).sum())
}

/// State visitation distribution: `d(s) = (1/H) * sum_t P(s_t = s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitationDistribution {
    pub d: Vec<f64>,
}

impl VisitationDistribution {
    /// Total mass must be one and each layer must carry `1/H`.
    pub fn validate(&self, mdp: &LayeredMdp) -> Result<()> {
        let total: f64 = self.d.iter().sum();
        if (total - 1.0).abs() > MASS_TOL * mdp.horizon() as f64 {
            return Err(Error::InvalidMdp(format!("visitation mass {total} != 1")));
        }
        let share = 1.0 / mdp.horizon() as f64;
        for t in 0..mdp.horizon() {
            let mass: f64 = mdp.layer_states(t).map(|s| self.d[s]).sum();
            if (mass - share).abs() > MASS_TOL {
                return Err(Error::InvalidMdp(format!("layer {t} carries mass {mass}")));
            }
        }
        Ok(())
    }
}

/// Exact visitation of `policy` by a forward pass over layers.
pub fn forward_visitation<P: TabularPolicy>(
    mdp: &LayeredMdp,
    policy: &P,
) -> Result<VisitationDistribution> {
    let h = mdp.horizon() as f64;
    let mut d = vec![0.0; mdp.state_count()];
    let mut cur: Vec<f64> = mdp.rho().to_vec();
    let mut probs = vec![0.0; mdp.actions()];
    for t in 0..mdp.horizon() {
        let off = mdp.layer_offset(t);
        for (j, &p) in cur.iter().enumerate() {
            d[off + j] = p / h;
        }
        if t + 1 == mdp.horizon() {
            break;
        }
        let mut next = vec![0.0; mdp.layer_sizes()[t + 1]];
        for (j, &p) in cur.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let s = off + j;
            policy.probs_into(s, &mut probs)?;
            for a in 0..mdp.actions() {
                let pa = probs[a];
                if pa == 0.0 {
                    continue;
                }
                for (k, &pt) in mdp.transition_row(s, a).iter().enumerate() {
                    next[k] += p * pa * pt;
                }
            }
        }
        cur = next;
    }
    Ok(VisitationDistribution { d })
}

/// Both sides of the performance-difference identity
/// `J(pi) - J(pi_ref) = H * E_{s ~ d_pi, a ~ pi(.|s)} [Q_ref(s, a) - V_ref(s)]`.
#[derive(Debug, Clone, Copy)]
pub struct PerformanceDifference {
    pub lhs: f64,
    pub rhs: f64,
}

impl PerformanceDifference {
    pub fn gap(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

pub fn performance_difference<P: TabularPolicy, R: TabularPolicy>(
    mdp: &LayeredMdp,
    policy: &P,
    reference: &R,
) -> Result<PerformanceDifference> {
    let lhs = expected_cost(mdp, policy)? - expected_cost(mdp, reference)?;
    let ref_tables = backward_dp(mdp, reference)?;
    let d = forward_visitation(mdp, policy)?;
    let mut probs = vec![0.0; mdp.actions()];
    let mut adv = 0.0;
    for s in 0..mdp.state_count() {
        if d.d[s] == 0.0 {
            continue;
        }
        policy.probs_into(s, &mut probs)?;
        let q = &ref_tables.q[s];
        let ev: f64 = (0..mdp.actions()).map(|a| probs[a] * q[a]).sum();
        adv += d.d[s] * (ev - ref_tables.v[s]);
    }
    let rhs = mdp.horizon() as f64 * adv;
    Ok(PerformanceDifference { lhs, rhs })
}

/// Cost-optimal deterministic policy, ties broken toward the lowest action.
pub fn optimal_policy(mdp: &LayeredMdp) -> DeterministicPolicy {
    let states = mdp.state_count();
    let actions = mdp.actions();
    let mut v = vec![0.0; states];
    let mut table = vec![0usize; states];
    for t in (0..mdp.horizon()).rev() {
        let next_off = if t + 1 < mdp.horizon() { mdp.layer_offset(t + 1) } else { 0 };
        for s in mdp.layer_states(t) {
            let mut best = f64::INFINITY;
            let mut best_a = 0;
            for a in 0..actions {
                let cont: f64 = mdp
                    .transition_row(s, a)
                    .iter()
                    .enumerate()
                    .map(|(j, &p)| p * v[next_off + j])
                    .sum();
                let q = mdp.cost(s, a) + cont;
                if q < best {
                    best = q;
                    best_a = a;
                }
            }
            v[s] = best;
            table[s] = best_a;
        }
    }
    DeterministicPolicy::new(actions, table).expect("actions in range by construction")
}
