//! Layered episodic MDPs with exact tabular dynamics.
//!
//! States are global ids `0..S`, contiguous in layer order. Transitions out
//! of a state at layer `t` are stored as dense probability rows over the
//! states of layer `t+1`, so "support lies on the next layer" holds by
//! construction. Costs are means in `[0, 1]`; realized costs may add
//! mean-preserving noise, but every analysis quantity uses the means.

use crate::error::Error;
use crate::rng::Rng;
use crate::Result;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub type StateId = usize;
pub type ActionId = usize;

/// Probability rows must sum to one within this slack.
pub const PROB_TOL: f64 = 1e-12;

/// Realized-cost noise. `Bernoulli` draws a cost in `{0, 1}` with the mean
/// equal to the stored cost, which keeps realizations bounded without
/// biasing Monte Carlo estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostNoise {
    None,
    Bernoulli,
}

/// Finite-horizon MDP whose state space is partitioned into `horizon` layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredMdp {
    layer_sizes: Vec<usize>,
    actions: usize,
    /// Initial distribution over the states of layer 0.
    rho: Vec<f64>,
    /// `transitions[s][a][j]` is the probability of moving to the `j`-th
    /// state of the next layer. Empty for states on the last layer.
    transitions: Vec<Vec<Vec<f64>>>,
    /// Mean cost of `(s, a)`, in `[0, 1]`.
    costs: Vec<Vec<f64>>,
    noise: CostNoise,
}

fn check_prob_row(row: &[f64], what: &str) -> Result<()> {
    let mut sum = 0.0;
    for &p in row {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidMdp(format!("{what}: entry {p} is not a probability")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidMdp(format!("{what}: row sums to {sum}, expected 1")));
    }
    Ok(())
}

impl LayeredMdp {
    pub fn new(
        layer_sizes: Vec<usize>,
        actions: usize,
        rho: Vec<f64>,
        transitions: Vec<Vec<Vec<f64>>>,
        costs: Vec<Vec<f64>>,
        noise: CostNoise,
    ) -> Result<Self> {
        if layer_sizes.is_empty() || layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::InvalidMdp("every layer needs at least one state".into()));
        }
        if actions == 0 {
            return Err(Error::InvalidMdp("need at least one action".into()));
        }
        let states: usize = layer_sizes.iter().sum();
        if rho.len() != layer_sizes[0] {
            return Err(Error::InvalidMdp(format!(
                "rho has {} entries, layer 0 has {} states",
                rho.len(),
                layer_sizes[0]
            )));
        }
        check_prob_row(&rho, "rho")?;
        if transitions.len() != states || costs.len() != states {
            return Err(Error::InvalidMdp("transition/cost tables must cover every state".into()));
        }
        let mdp = Self { layer_sizes, actions, rho, transitions, costs, noise };
        for s in 0..states {
            let t = mdp.layer_of(s);
            let terminal = t + 1 == mdp.horizon();
            if mdp.costs[s].len() != actions {
                return Err(Error::InvalidMdp(format!("state {s}: cost row has wrong arity")));
            }
            for a in 0..actions {
                let c = mdp.costs[s][a];
                if !(0.0..=1.0).contains(&c) {
                    return Err(Error::InvalidMdp(format!("cost({s},{a}) = {c} outside [0,1]")));
                }
            }
            if terminal {
                if !mdp.transitions[s].is_empty() {
                    return Err(Error::InvalidMdp(format!("terminal state {s} has transitions")));
                }
                continue;
            }
            if mdp.transitions[s].len() != actions {
                return Err(Error::InvalidMdp(format!("state {s}: expected {actions} transition rows")));
            }
            let next = mdp.layer_sizes[t + 1];
            for a in 0..actions {
                let row = &mdp.transitions[s][a];
                if row.len() != next {
                    return Err(Error::InvalidMdp(format!(
                        "P(.|{s},{a}) has {} entries, next layer has {next} states",
                        row.len()
                    )));
                }
                check_prob_row(row, &format!("P(.|{s},{a})"))?;
            }
        }
        Ok(mdp)
    }

    pub fn horizon(&self) -> usize {
        self.layer_sizes.len()
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn state_count(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    /// First global id of layer `t`.
    pub fn layer_offset(&self, t: usize) -> usize {
        self.layer_sizes[..t].iter().sum()
    }

    /// Global ids of layer `t`.
    pub fn layer_states(&self, t: usize) -> std::ops::Range<usize> {
        let off = self.layer_offset(t);
        off..off + self.layer_sizes[t]
    }

    pub fn layer_of(&self, s: StateId) -> usize {
        let mut acc = 0;
        for (t, &n) in self.layer_sizes.iter().enumerate() {
            acc += n;
            if s < acc {
                return t;
            }
        }
        panic!("state {s} out of range");
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// Mean cost of `(s, a)`.
    pub fn cost(&self, s: StateId, a: ActionId) -> f64 {
        self.costs[s][a]
    }

    /// Transition row of `(s, a)` over next-layer states. Empty on the last
    /// layer.
    pub fn transition_row(&self, s: StateId, a: ActionId) -> &[f64] {
        if self.transitions[s].is_empty() {
            &[]
        } else {
            &self.transitions[s][a]
        }
    }

    pub fn noise(&self) -> CostNoise {
        self.noise
    }

    pub fn set_noise(&mut self, noise: CostNoise) {
        self.noise = noise;
    }

    /// Realized cost of `(s, a)` under the configured noise model.
    pub fn draw_cost(&self, s: StateId, a: ActionId, rng: &mut Rng) -> f64 {
        let mean = self.costs[s][a];
        match self.noise {
            CostNoise::None => mean,
            CostNoise::Bernoulli => {
                if rng.gen::<f64>() < mean {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// States that no policy can reach, following the union of action
    /// supports forward from the initial distribution.
    pub fn unreachable_states(&self) -> Vec<StateId> {
        let mut reach = vec![false; self.state_count()];
        for (j, &p) in self.rho.iter().enumerate() {
            if p > 0.0 {
                reach[j] = true;
            }
        }
        for t in 0..self.horizon() - 1 {
            let next_off = self.layer_offset(t + 1);
            for s in self.layer_states(t) {
                if !reach[s] {
                    continue;
                }
                for a in 0..self.actions {
                    for (j, &p) in self.transitions[s][a].iter().enumerate() {
                        if p > 0.0 {
                            reach[next_off + j] = true;
                        }
                    }
                }
            }
        }
        (0..self.state_count()).filter(|&s| !reach[s]).collect()
    }

    /// Dense random instance: every transition probability is strictly
    /// positive, so every state is reachable under every policy.
    pub fn random_dense(layer_sizes: &[usize], actions: usize, seed: u64) -> Self {
        let mut rng = crate::rng::stream(seed, "mdp", 0);
        let states: usize = layer_sizes.iter().sum();
        let horizon = layer_sizes.len();
        let positive_row = |n: usize, rng: &mut Rng| -> Vec<f64> {
            // Normalized Exp(1) draws: a Dirichlet(1,..,1) row, never zero.
            let mut row: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
            let sum: f64 = row.iter().sum();
            for p in &mut row {
                *p /= sum;
            }
            row
        };
        let rho = positive_row(layer_sizes[0], &mut rng);
        let mut transitions = Vec::with_capacity(states);
        let mut costs = Vec::with_capacity(states);
        let mut s = 0;
        for (t, &n) in layer_sizes.iter().enumerate() {
            for _ in 0..n {
                if t + 1 < horizon {
                    transitions.push(
                        (0..actions).map(|_| positive_row(layer_sizes[t + 1], &mut rng)).collect(),
                    );
                } else {
                    transitions.push(Vec::new());
                }
                costs.push((0..actions).map(|_| rng.gen::<f64>()).collect());
                s += 1;
            }
        }
        debug_assert_eq!(s, states);
        Self::new(layer_sizes.to_vec(), actions, rho, transitions, costs, CostNoise::None)
            .expect("random instance is valid by construction")
    }

    /// Single-path chain: one state per layer, every action moves forward.
    pub fn chain(horizon: usize, actions: usize, cost: f64) -> Result<Self> {
        let layer_sizes = vec![1usize; horizon];
        let transitions = (0..horizon)
            .map(|t| {
                if t + 1 < horizon {
                    vec![vec![1.0]; actions]
                } else {
                    Vec::new()
                }
            })
            .collect();
        let costs = vec![vec![cost; actions]; horizon];
        Self::new(layer_sizes, actions, vec![1.0], transitions, costs, CostNoise::None)
    }
}

/// One episode: `states[t]`, `actions[t]`, and the realized `costs[t]` for
/// `t = 0..H`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<StateId>,
    pub actions: Vec<ActionId>,
    pub costs: Vec<f64>,
}

impl Trajectory {
    pub fn total_cost(&self) -> f64 {
        self.costs.iter().sum()
    }

    /// The `(state, action, cost)` triple at layer `t`.
    pub fn at(&self, t: usize) -> (StateId, ActionId, f64) {
        (self.states[t], self.actions[t], self.costs[t])
    }
}

// --- text serialization ---------------------------------------------------
//
// Line-oriented document. Floats print in Rust's shortest round-trip form,
// so save/load is lossless.

fn fmt_row(row: &[f64]) -> String {
    row.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(" ")
}

impl LayeredMdp {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("layered-mdp v1\n");
        out.push_str(&format!("horizon {}\n", self.horizon()));
        out.push_str(&format!("actions {}\n", self.actions));
        out.push_str(&format!(
            "layers {}\n",
            self.layer_sizes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" ")
        ));
        out.push_str(&format!(
            "noise {}\n",
            match self.noise {
                CostNoise::None => "none",
                CostNoise::Bernoulli => "bernoulli",
            }
        ));
        out.push_str(&format!("rho {}\n", fmt_row(&self.rho)));
        for s in 0..self.state_count() {
            out.push_str(&format!("c {s} {}\n", fmt_row(&self.costs[s])));
            for (a, row) in self.transitions[s].iter().enumerate() {
                out.push_str(&format!("p {s} {a} {}\n", fmt_row(row)));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let parse_err = |line: usize, msg: &str| Error::Parse { line, msg: msg.to_string() };
        let mut horizon = None;
        let mut actions = None;
        let mut layers: Option<Vec<usize>> = None;
        let mut noise = CostNoise::None;
        let mut rho: Option<Vec<f64>> = None;
        let mut costs: Vec<Option<Vec<f64>>> = Vec::new();
        let mut trans: Vec<Vec<Option<Vec<f64>>>> = Vec::new();

        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == "layered-mdp v1" => {}
            _ => return Err(parse_err(1, "expected header 'layered-mdp v1'")),
        }
        for (i, raw) in lines {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let ln = i + 1;
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap();
            let rest: Vec<&str> = parts.collect();
            let floats = |tokens: &[&str]| -> Result<Vec<f64>> {
                tokens
                    .iter()
                    .map(|t| t.parse::<f64>().map_err(|_| parse_err(ln, "bad float")))
                    .collect()
            };
            match key {
                "horizon" => {
                    horizon = Some(
                        rest.first()
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| parse_err(ln, "bad horizon"))?,
                    )
                }
                "actions" => {
                    let a: usize = rest
                        .first()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| parse_err(ln, "bad action count"))?;
                    actions = Some(a);
                }
                "layers" => {
                    let sizes: Vec<usize> = rest
                        .iter()
                        .map(|t| t.parse().map_err(|_| parse_err(ln, "bad layer size")))
                        .collect::<Result<_>>()?;
                    let states: usize = sizes.iter().sum();
                    costs = vec![None; states];
                    trans = vec![Vec::new(); states];
                    layers = Some(sizes);
                }
                "noise" => {
                    noise = match rest.first() {
                        Some(&"none") => CostNoise::None,
                        Some(&"bernoulli") => CostNoise::Bernoulli,
                        _ => return Err(parse_err(ln, "unknown noise kind")),
                    }
                }
                "rho" => rho = Some(floats(&rest)?),
                "c" => {
                    let s: usize = rest
                        .first()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| parse_err(ln, "bad state id"))?;
                    if s >= costs.len() {
                        return Err(parse_err(ln, "cost row before layers or out of range"));
                    }
                    costs[s] = Some(floats(&rest[1..])?);
                }
                "p" => {
                    if rest.len() < 2 {
                        return Err(parse_err(ln, "transition row needs state and action"));
                    }
                    let s: usize =
                        rest[0].parse().map_err(|_| parse_err(ln, "bad state id"))?;
                    let a: usize =
                        rest[1].parse().map_err(|_| parse_err(ln, "bad action id"))?;
                    if s >= trans.len() {
                        return Err(parse_err(ln, "transition row before layers or out of range"));
                    }
                    if trans[s].len() <= a {
                        trans[s].resize(a + 1, None);
                    }
                    trans[s][a] = Some(floats(&rest[2..])?);
                }
                other => return Err(parse_err(ln, &format!("unknown directive '{other}'"))),
            }
        }
        let layers = layers.ok_or_else(|| parse_err(0, "missing layers"))?;
        let actions = actions.ok_or_else(|| parse_err(0, "missing actions"))?;
        if horizon != Some(layers.len()) {
            return Err(Error::InvalidMdp("horizon does not match layer count".into()));
        }
        let rho = rho.ok_or_else(|| parse_err(0, "missing rho"))?;
        let costs: Vec<Vec<f64>> = costs
            .into_iter()
            .enumerate()
            .map(|(s, c)| c.ok_or_else(|| Error::InvalidMdp(format!("missing cost row for state {s}"))))
            .collect::<Result<_>>()?;
        let transitions: Vec<Vec<Vec<f64>>> = trans
            .into_iter()
            .enumerate()
            .map(|(s, rows)| {
                rows.into_iter()
                    .enumerate()
                    .map(|(a, r)| {
                        r.ok_or_else(|| Error::InvalidMdp(format!("missing P(.|{s},{a})")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Self::new(layers, actions, rho, transitions, costs, noise)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_row_sum() {
        let err = LayeredMdp::new(
            vec![1, 1],
            2,
            vec![1.0],
            vec![vec![vec![0.6], vec![1.0]], Vec::new()],
            vec![vec![0.0, 0.0]; 2],
            CostNoise::None,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("P(.|0,0)"), "error names the row: {msg}");
        assert!(msg.contains("0.6"), "error names the sum: {msg}");
    }

    #[test]
    fn rejects_cost_outside_unit_interval() {
        let err = LayeredMdp::new(
            vec![1],
            1,
            vec![1.0],
            vec![Vec::new()],
            vec![vec![1.5]],
            CostNoise::None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("cost(0,0)"));
    }

    #[test]
    fn rho_tolerance_is_tight() {
        let build = |p: f64| {
            LayeredMdp::new(
                vec![2],
                1,
                vec![p, 1.0 - p + 5e-12],
                vec![Vec::new(), Vec::new()],
                vec![vec![0.0], vec![0.0]],
                CostNoise::None,
            )
        };
        assert!(build(0.5).is_err()); // off by 5e-12 > 1e-12
    }

    #[test]
    fn layer_bookkeeping() {
        let mdp = LayeredMdp::random_dense(&[2, 3, 1], 2, 9);
        assert_eq!(mdp.state_count(), 6);
        assert_eq!(mdp.layer_of(0), 0);
        assert_eq!(mdp.layer_of(4), 1);
        assert_eq!(mdp.layer_of(5), 2);
        assert_eq!(mdp.layer_states(1), 2..5);
        assert!(mdp.transition_row(5, 0).is_empty());
        assert!(mdp.unreachable_states().is_empty());
    }

    #[test]
    fn text_round_trip_is_lossless() {
        let mdp = LayeredMdp::random_dense(&[3, 4, 2], 3, 1234);
        let text = mdp.to_text();
        let back = LayeredMdp::from_text(&text).unwrap();
        assert_eq!(mdp, back);
        assert_eq!(text, back.to_text());
    }

    #[test]
    fn text_rejects_unknown_directive() {
        let text = "layered-mdp v1\nhorizon 1\nactions 1\nlayers 1\nrho 1\nc 0 0\nbogus 3\n";
        assert!(LayeredMdp::from_text(text).is_err());
    }

    #[test]
    fn unreachable_states_are_reported() {
        // Layer 1 has a state no action can reach.
        let mdp = LayeredMdp::new(
            vec![1, 2],
            2,
            vec![1.0],
            vec![vec![vec![1.0, 0.0], vec![1.0, 0.0]], Vec::new(), Vec::new()],
            vec![vec![0.0, 0.0]; 3],
            CostNoise::None,
        )
        .unwrap();
        assert_eq!(mdp.unreachable_states(), vec![2]);
    }

    #[test]
    fn bernoulli_noise_preserves_mean() {
        let mut mdp = LayeredMdp::chain(1, 1, 0.3).unwrap();
        mdp.set_noise(CostNoise::Bernoulli);
        let mut rng = crate::rng::stream(5, "test", 0);
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| mdp.draw_cost(0, 0, &mut rng)).sum::<f64>() / n as f64;
        // 3 standard errors of a Bernoulli(0.3) mean.
        assert!((mean - 0.3).abs() < 3.0 * (0.3f64 * 0.7 / n as f64).sqrt());
    }
}
