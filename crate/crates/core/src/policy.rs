//! Tabular policies, finite policy classes, and voting ensembles.
//!
//! A policy class is an ordered list of deterministic tables; the order is
//! load-bearing because the empirical risk minimizer breaks ties toward the
//! lowest index, and ensembles refer to members by index. The tabular expert
//! is just a deterministic policy. Continuous (linear) policies live in
//! [`crate::linear`].

use crate::error::Error;
use crate::mdp::{ActionId, StateId};
use crate::rng::Rng;
use crate::Result;
use rand::seq::SliceRandom;
use rand::Rng as _;
use std::sync::Arc;

/// Samples an index from a probability vector with a single uniform draw.
/// Always consumes exactly one draw, also for one-hot rows, so rollouts of
/// deterministic and mixed policies advance their streams identically.
pub fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1 // guard against accumulated rounding
}

/// Anything that assigns an action distribution to every state it covers.
pub trait TabularPolicy {
    fn actions(&self) -> usize;

    /// Writes the action distribution at `s` into `out` (length `actions()`).
    fn probs_into(&self, s: StateId, out: &mut [f64]) -> Result<()>;

    fn probs(&self, s: StateId) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.actions()];
        self.probs_into(s, &mut out)?;
        Ok(out)
    }

    /// Draws an action at `s`.
    fn act(&self, s: StateId, rng: &mut Rng) -> Result<ActionId> {
        Ok(sample_categorical(&self.probs(s)?, rng))
    }
}

impl<T: TabularPolicy + ?Sized> TabularPolicy for &T {
    fn actions(&self) -> usize {
        (**self).actions()
    }
    fn probs_into(&self, s: StateId, out: &mut [f64]) -> Result<()> {
        (**self).probs_into(s, out)
    }
    fn act(&self, s: StateId, rng: &mut Rng) -> Result<ActionId> {
        (**self).act(s, rng)
    }
}

/// A full action table over `0..states`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeterministicPolicy {
    actions: usize,
    table: Vec<ActionId>,
}

impl DeterministicPolicy {
    pub fn new(actions: usize, table: Vec<ActionId>) -> Result<Self> {
        if let Some(&a) = table.iter().find(|&&a| a >= actions) {
            return Err(Error::InvalidConfig(format!("table entry {a} >= action count {actions}")));
        }
        Ok(Self { actions, table })
    }

    pub fn action(&self, s: StateId) -> Result<ActionId> {
        self.table.get(s).copied().ok_or(Error::PolicyUndefined { state: s })
    }

    pub fn table(&self) -> &[ActionId] {
        &self.table
    }

    pub fn states(&self) -> usize {
        self.table.len()
    }

    /// Copy with the action at `k` distinct random states replaced by a
    /// different random action.
    pub fn corrupted(&self, k: usize, rng: &mut Rng) -> Self {
        let mut states: Vec<usize> = (0..self.table.len()).collect();
        states.shuffle(rng);
        let mut table = self.table.clone();
        for &s in states.iter().take(k.min(table.len())) {
            if self.actions < 2 {
                break;
            }
            let shift = rng.gen_range(1..self.actions);
            table[s] = (table[s] + shift) % self.actions;
        }
        Self { actions: self.actions, table }
    }
}

impl TabularPolicy for DeterministicPolicy {
    fn actions(&self) -> usize {
        self.actions
    }

    fn probs_into(&self, s: StateId, out: &mut [f64]) -> Result<()> {
        let a = self.action(s)?;
        out.fill(0.0);
        out[a] = 1.0;
        Ok(())
    }

    fn act(&self, s: StateId, _rng: &mut Rng) -> Result<ActionId> {
        self.action(s)
    }
}

/// A per-state action distribution table.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticPolicy {
    actions: usize,
    table: Vec<Vec<f64>>,
}

impl StochasticPolicy {
    pub fn new(actions: usize, table: Vec<Vec<f64>>) -> Result<Self> {
        for (s, row) in table.iter().enumerate() {
            if row.len() != actions {
                return Err(Error::DimensionMismatch(format!("row {s} has arity {}", row.len())));
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!("row {s} is not a distribution")));
            }
        }
        Ok(Self { actions, table })
    }

    pub fn random(states: usize, actions: usize, rng: &mut Rng) -> Self {
        let table = (0..states)
            .map(|_| {
                let mut row: Vec<f64> =
                    (0..actions).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
                let sum: f64 = row.iter().sum();
                for p in &mut row {
                    *p /= sum;
                }
                row
            })
            .collect();
        Self { actions, table }
    }
}

impl TabularPolicy for StochasticPolicy {
    fn actions(&self) -> usize {
        self.actions
    }

    fn probs_into(&self, s: StateId, out: &mut [f64]) -> Result<()> {
        let row = self.table.get(s).ok_or(Error::PolicyUndefined { state: s })?;
        out.copy_from_slice(row);
        Ok(())
    }
}

/// Ordered, finite class of deterministic policies. Index order is the
/// tie-break authority for empirical risk minimization and is preserved by
/// serialization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinitePolicyClass {
    members: Vec<DeterministicPolicy>,
}

impl FinitePolicyClass {
    pub fn new(members: Vec<DeterministicPolicy>) -> Result<Self> {
        let first = members.first().ok_or_else(|| {
            Error::InvalidConfig("policy class needs at least one member".into())
        })?;
        let (actions, states) = (first.actions(), first.states());
        if members.iter().any(|m| m.actions() != actions || m.states() != states) {
            return Err(Error::InvalidConfig("class members must share shape".into()));
        }
        Ok(Self { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn get(&self, i: usize) -> &DeterministicPolicy {
        &self.members[i]
    }

    pub fn members(&self) -> &[DeterministicPolicy] {
        &self.members
    }

    pub fn actions(&self) -> usize {
        self.members[0].actions()
    }

    pub fn states(&self) -> usize {
        self.members[0].states()
    }

    /// `h(s)` for member `h = i`.
    pub fn action(&self, i: usize, s: StateId) -> Result<ActionId> {
        self.members[i].action(s)
    }

    /// One constant policy per action.
    pub fn all_constant(states: usize, actions: usize) -> Self {
        let members = (0..actions)
            .map(|a| DeterministicPolicy::new(actions, vec![a; states]).unwrap())
            .collect();
        Self { members }
    }

    /// `size` uniformly random tables.
    pub fn random_tables(states: usize, actions: usize, size: usize, rng: &mut Rng) -> Self {
        let members = (0..size)
            .map(|_| {
                let table = (0..states).map(|_| rng.gen_range(0..actions)).collect();
                DeterministicPolicy::new(actions, table).unwrap()
            })
            .collect();
        Self { members }
    }

    /// `size` copies of the expert, each with `k` corrupted states. With
    /// `k >= 1` the class is nonrealizable unless a corruption happens to
    /// cancel.
    pub fn expert_corruptions(
        expert: &DeterministicPolicy,
        k: usize,
        size: usize,
        rng: &mut Rng,
    ) -> Self {
        let members = (0..size).map(|_| expert.corrupted(k, rng)).collect();
        Self { members }
    }

    pub fn push(&mut self, member: DeterministicPolicy) -> Result<()> {
        if member.actions() != self.actions() || member.states() != self.states() {
            return Err(Error::InvalidConfig("member shape differs from class".into()));
        }
        self.members.push(member);
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("policy-class v1\n");
        out.push_str(&format!("actions {}\n", self.actions()));
        out.push_str(&format!("states {}\n", self.states()));
        for m in &self.members {
            let row: Vec<String> = m.table().iter().map(|a| a.to_string()).collect();
            out.push_str(&format!("member {}\n", row.join(" ")));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == "policy-class v1" => {}
            _ => {
                return Err(Error::Parse { line: 1, msg: "expected header 'policy-class v1'".into() })
            }
        }
        let mut actions = None;
        let mut states = None;
        let mut members = Vec::new();
        for (i, raw) in lines {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let ln = i + 1;
            let mut parts = line.split_whitespace();
            match parts.next().unwrap() {
                "actions" => actions = parts.next().and_then(|t| t.parse().ok()),
                "states" => states = parts.next().and_then(|t| t.parse().ok()),
                "member" => {
                    let table: Vec<usize> = parts
                        .map(|t| t.parse().map_err(|_| Error::Parse { line: ln, msg: "bad action id".into() }))
                        .collect::<Result<_>>()?;
                    let a = actions
                        .ok_or(Error::Parse { line: ln, msg: "member before actions".into() })?;
                    if Some(table.len()) != states {
                        return Err(Error::Parse { line: ln, msg: "member arity mismatch".into() });
                    }
                    members.push(DeterministicPolicy::new(a, table)?);
                }
                other => {
                    return Err(Error::Parse { line: ln, msg: format!("unknown directive '{other}'") })
                }
            }
        }
        Self::new(members)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// How an ensemble weights its class.
#[derive(Debug, Clone, PartialEq)]
pub enum EnsembleWeights {
    /// Uniform over a member list (repeats allowed); voting is exact
    /// integer counting.
    Members(Vec<usize>),
    /// Explicit point on the simplex over the whole class.
    Simplex(Vec<f64>),
}

/// Mixture of class members: `pi(a|s) = sum_h w_h [h(s) = a]`.
#[derive(Debug, Clone)]
pub struct EnsemblePolicy {
    class: Arc<FinitePolicyClass>,
    weights: EnsembleWeights,
}

impl EnsemblePolicy {
    pub fn from_members(class: Arc<FinitePolicyClass>, members: Vec<usize>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidConfig("ensemble needs at least one member".into()));
        }
        if let Some(&i) = members.iter().find(|&&i| i >= class.len()) {
            return Err(Error::InvalidConfig(format!("member index {i} out of class range")));
        }
        Ok(Self { class, weights: EnsembleWeights::Members(members) })
    }

    pub fn from_weights(class: Arc<FinitePolicyClass>, w: Vec<f64>) -> Result<Self> {
        if w.len() != class.len() {
            return Err(Error::DimensionMismatch("weight vector must cover the class".into()));
        }
        let sum: f64 = w.iter().sum();
        if w.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("weights must lie on the simplex".into()));
        }
        Ok(Self { class, weights: EnsembleWeights::Simplex(w) })
    }

    pub fn class(&self) -> &Arc<FinitePolicyClass> {
        &self.class
    }

    pub fn weights(&self) -> &EnsembleWeights {
        &self.weights
    }

    /// Exact vote counts at `s` for member-list ensembles.
    pub fn vote_counts(&self, s: StateId) -> Result<Vec<u32>> {
        match &self.weights {
            EnsembleWeights::Members(ms) => {
                let mut counts = vec![0u32; self.class.actions()];
                for &i in ms {
                    counts[self.class.action(i, s)?] += 1;
                }
                Ok(counts)
            }
            EnsembleWeights::Simplex(_) => {
                Err(Error::Unsupported("vote counts need a member-list ensemble".into()))
            }
        }
    }

    /// The vote distribution `pi(.|s)`.
    pub fn vote_distribution(&self, s: StateId) -> Result<Vec<f64>> {
        self.probs(s)
    }
}

impl TabularPolicy for EnsemblePolicy {
    fn actions(&self) -> usize {
        self.class.actions()
    }

    fn probs_into(&self, s: StateId, out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        match &self.weights {
            EnsembleWeights::Members(ms) => {
                let e = ms.len() as f64;
                for &i in ms {
                    out[self.class.action(i, s)?] += 1.0 / e;
                }
            }
            EnsembleWeights::Simplex(w) => {
                for (i, &wi) in w.iter().enumerate() {
                    if wi > 0.0 {
                        out[self.class.action(i, s)?] += wi;
                    }
                }
            }
        }
        Ok(())
    }

    /// Samples a member by weight, then plays its action.
    fn act(&self, s: StateId, rng: &mut Rng) -> Result<ActionId> {
        let member = match &self.weights {
            EnsembleWeights::Members(ms) => ms[rng.gen_range(0..ms.len())],
            EnsembleWeights::Simplex(w) => sample_categorical(w, rng),
        };
        self.class.action(member, s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn fixed_class() -> Arc<FinitePolicyClass> {
        let h0 = DeterministicPolicy::new(3, vec![0, 1, 2]).unwrap();
        let h1 = DeterministicPolicy::new(3, vec![1, 1, 0]).unwrap();
        let h2 = DeterministicPolicy::new(3, vec![0, 2, 2]).unwrap();
        Arc::new(FinitePolicyClass::new(vec![h0, h1, h2]).unwrap())
    }

    #[test]
    fn deterministic_act_ignores_rng() {
        let p = DeterministicPolicy::new(2, vec![1, 0]).unwrap();
        let mut rng = stream(0, "t", 0);
        for _ in 0..5 {
            assert_eq!(p.act(0, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn undefined_state_names_the_state() {
        let p = DeterministicPolicy::new(2, vec![1, 0]).unwrap();
        match p.action(7) {
            Err(Error::PolicyUndefined { state }) => assert_eq!(state, 7),
            other => panic!("expected undefined-state error, got {other:?}"),
        }
    }

    #[test]
    fn vote_counts_sum_to_ensemble_size() {
        let class = fixed_class();
        let ens = EnsemblePolicy::from_members(class, vec![0, 1, 1, 2, 0]).unwrap();
        for s in 0..3 {
            let counts = ens.vote_counts(s).unwrap();
            assert_eq!(counts.iter().sum::<u32>(), 5);
        }
    }

    #[test]
    fn vote_distribution_is_permutation_invariant() {
        let class = fixed_class();
        let a = EnsemblePolicy::from_members(class.clone(), vec![0, 1, 2, 1]).unwrap();
        let b = EnsemblePolicy::from_members(class, vec![1, 2, 1, 0]).unwrap();
        for s in 0..3 {
            assert_eq!(a.vote_distribution(s).unwrap(), b.vote_distribution(s).unwrap());
        }
    }

    #[test]
    fn single_member_ensemble_matches_member() {
        let class = fixed_class();
        let ens = EnsemblePolicy::from_members(class.clone(), vec![1]).unwrap();
        let mut rng = stream(1, "t", 0);
        for s in 0..3 {
            assert_eq!(ens.act(s, &mut rng).unwrap(), class.action(1, s).unwrap());
        }
    }

    #[test]
    fn degenerate_weight_vector_plays_one_member() {
        let class = fixed_class();
        let ens = EnsemblePolicy::from_weights(class.clone(), vec![0.0, 1.0, 0.0]).unwrap();
        let mut rng = stream(2, "t", 0);
        for _ in 0..10 {
            assert_eq!(ens.act(0, &mut rng).unwrap(), class.action(1, 0).unwrap());
        }
    }

    #[test]
    fn two_member_vote_frequencies() {
        // Members disagree at state 0: actions 0 and 1. Empirical act()
        // frequencies must approach (1/2, 1/2).
        let class = fixed_class();
        let ens = EnsemblePolicy::from_members(class, vec![0, 1]).unwrap();
        let mut rng = stream(3, "t", 0);
        let n = 10_000;
        let mut hits = [0u32; 3];
        for _ in 0..n {
            hits[ens.act(0, &mut rng).unwrap()] += 1;
        }
        let f0 = hits[0] as f64 / n as f64;
        assert!((f0 - 0.5).abs() < 0.01, "f0 = {f0}");
        assert_eq!(hits[2], 0);
    }

    #[test]
    fn weights_off_simplex_are_rejected() {
        let class = fixed_class();
        assert!(EnsemblePolicy::from_weights(class.clone(), vec![0.5, 0.2, 0.2]).is_err());
        assert!(EnsemblePolicy::from_weights(class, vec![1.2, -0.2, 0.0]).is_err());
    }

    #[test]
    fn corruption_changes_exactly_k_states() {
        let expert = DeterministicPolicy::new(4, vec![0, 1, 2, 3, 0, 1]).unwrap();
        let mut rng = stream(4, "t", 0);
        for k in 0..=6 {
            let c = expert.corrupted(k, &mut rng);
            let diff = c.table().iter().zip(expert.table()).filter(|(a, b)| a != b).count();
            assert_eq!(diff, k.min(6));
        }
    }

    #[test]
    fn class_round_trip_preserves_order() {
        let mut rng = stream(5, "t", 0);
        let class = FinitePolicyClass::random_tables(6, 3, 9, &mut rng);
        let back = FinitePolicyClass::from_text(&class.to_text()).unwrap();
        assert_eq!(class, back);
    }

    #[test]
    fn all_constant_class() {
        let class = FinitePolicyClass::all_constant(4, 3);
        assert_eq!(class.len(), 3);
        for a in 0..3 {
            for s in 0..4 {
                assert_eq!(class.action(a, s).unwrap(), a);
            }
        }
    }

    #[test]
    fn categorical_sampler_hits_support_only() {
        let mut rng = stream(6, "t", 0);
        let probs = [0.0, 0.3, 0.7, 0.0];
        for _ in 0..1000 {
            let i = sample_categorical(&probs, &mut rng);
            assert!(i == 1 || i == 2);
        }
    }
}
