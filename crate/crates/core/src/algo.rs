//! Interactive imitation learners.
//!
//! All four algorithms share one round loop: train (an ensemble of) policies
//! on the data gathered so far, roll the current policy out, query the expert
//! on the visited states, and aggregate. They differ only in how members are
//! trained: the plain empirical risk minimizer (behavior cloning and DAgger),
//! the minimizer on data plus a fresh random perturbation set per member
//! (MFTPL-P), or the minimizer on a bootstrap resample per member
//! (Bootstrap-DAgger).
//!
//! Randomness is budgeted per purpose: round `n`'s data collection uses the
//! stream `("collect", n)` and member `e`'s training uses `("member", n, e)`,
//! both derived from the run seed. Two configurations whose training steps
//! coincide therefore produce byte-identical histories, and members may be
//! trained in any order.

use crate::error::Error;
use crate::linear::{LinearEnv, LinearExpert, LinearPolicy};
use crate::mdp::{ActionId, LayeredMdp, StateId};
use crate::oracle::{class_error_counts, ols_fit, LossSpec, TabularDataset, VectorDataset};
use crate::perturb::{draw_box_perturbation, draw_perturbation, BoxCovering, CoveringDistribution, PerturbationSet, SizeMode};
use crate::policy::{DeterministicPolicy, EnsemblePolicy, FinitePolicyClass, TabularPolicy};
use crate::rng::{self, Rng};
use crate::sim::{sample_visitation_states, SampleMode};
use crate::Result;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgoKind {
    // Serialized form matches the short display name used in CSV output.
    #[serde(rename = "bc", alias = "behavior-cloning")]
    BehaviorCloning,
    Dagger,
    MftplP,
    BootstrapDagger,
}

impl AlgoKind {
    pub fn name(&self) -> &'static str {
        match self {
            AlgoKind::BehaviorCloning => "bc",
            AlgoKind::Dagger => "dagger",
            AlgoKind::MftplP => "mftpl-p",
            AlgoKind::BootstrapDagger => "bootstrap-dagger",
        }
    }
}

/// Round-loop configuration shared by every algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    pub algo: AlgoKind,
    /// Interaction rounds `N`.
    pub rounds: usize,
    /// Expert queries per round `K`.
    pub samples_per_round: usize,
    /// Ensemble size `E`.
    pub ensemble_size: usize,
    /// Perturbation-set size law; present exactly when `algo` is MFTPL-P.
    pub perturbation: Option<SizeMode>,
    pub loss: LossSpec,
    /// Confidence parameter carried into reports; the loop itself never
    /// branches on it.
    pub delta: f64,
    pub seed: u64,
    pub sample_mode: SampleMode,
    /// Keep each member's perturbation set in the history so the follow-the-
    /// perturbed-leader view of the update can be re-verified later.
    pub record_perturbations: bool,
}

impl AlgoConfig {
    pub fn new(algo: AlgoKind, rounds: usize, samples_per_round: usize, seed: u64) -> Self {
        Self {
            algo,
            rounds,
            samples_per_round,
            ensemble_size: 1,
            perturbation: None,
            loss: LossSpec::ZeroOne,
            delta: 0.1,
            seed,
            sample_mode: SampleMode::ExactIid,
            record_perturbations: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.samples_per_round == 0 || self.ensemble_size == 0 {
            return Err(Error::InvalidConfig("rounds, samples, and ensemble must be >= 1".into()));
        }
        if !(0.0 < self.delta && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!("delta {} outside (0, 1)", self.delta)));
        }
        match (self.algo, &self.perturbation) {
            (AlgoKind::MftplP, Some(SizeMode::Poisson(l))) if !l.is_finite() || *l < 0.0 => {
                Err(Error::InvalidConfig(format!("poisson rate {l}")))
            }
            (AlgoKind::MftplP, None) => {
                Err(Error::InvalidConfig("mftpl-p needs a perturbation size mode".into()))
            }
            (AlgoKind::MftplP, _) => Ok(()),
            (_, Some(_)) => {
                Err(Error::InvalidConfig("perturbation is mftpl-p only".into()))
            }
            (_, None) => {
                if matches!(self.algo, AlgoKind::BehaviorCloning | AlgoKind::Dagger)
                    && self.ensemble_size != 1
                {
                    return Err(Error::InvalidConfig(
                        "bc and dagger train a single policy per round".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// One round of a tabular run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round number `n`.
    pub round: usize,
    /// Class indices of the ensemble played this round (trained on the data
    /// of rounds `1..n-1`).
    pub members: Vec<usize>,
    /// Expert-labeled pairs collected this round.
    pub collected: Vec<(StateId, ActionId)>,
    /// `|D|` after aggregation.
    pub dataset_size: usize,
    /// Cumulative expert queries, `n * K`.
    pub expert_queries: usize,
    /// Per-member perturbation sets, when recorded.
    pub perturbations: Option<Vec<PerturbationSet>>,
    /// Wall time of the round. Measured, not replayed: excluded from
    /// serialization so that stored histories stay byte-identical across
    /// repeats.
    #[serde(skip)]
    pub wall_nanos: u64,
}

// Wall time is measurement, not content: equality compares replayable state.
impl PartialEq for RoundRecord {
    fn eq(&self, other: &Self) -> bool {
        self.round == other.round
            && self.members == other.members
            && self.collected == other.collected
            && self.dataset_size == other.dataset_size
            && self.expert_queries == other.expert_queries
            && self.perturbations == other.perturbations
    }
}

/// Complete record of one tabular run; everything needed to re-evaluate or
/// re-verify the run offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub config: AlgoConfig,
    pub rounds: Vec<RoundRecord>,
    /// Ensemble trained on all `N` rounds of data; the policy returned under
    /// the final-round convention.
    pub final_members: Vec<usize>,
}

impl RunHistory {
    /// Ensemble played at 1-based round `n`.
    pub fn ensemble_at(&self, class: &Arc<FinitePolicyClass>, n: usize) -> Result<EnsemblePolicy> {
        let rec = self
            .rounds
            .get(n.checked_sub(1).ok_or_else(|| Error::InvalidConfig("rounds are 1-based".into()))?)
            .ok_or_else(|| Error::InvalidConfig(format!("round {n} out of range")))?;
        EnsemblePolicy::from_members(class.clone(), rec.members.clone())
    }

    /// Members of the policy trained on the data of rounds `1..=n`: what the
    /// run would return if round `n` were the last.
    pub fn returned_members_after(&self, n: usize) -> Result<&[usize]> {
        if n == 0 || n > self.rounds.len() {
            return Err(Error::InvalidConfig(format!("round {n} out of range")));
        }
        if n == self.rounds.len() {
            Ok(&self.final_members)
        } else {
            Ok(&self.rounds[n].members)
        }
    }

    /// Replays the aggregate dataset as of the start of 1-based round `n`.
    pub fn dataset_before(&self, n: usize) -> TabularDataset {
        let mut data = TabularDataset::new();
        for rec in self.rounds.iter().take(n.saturating_sub(1)) {
            for &(s, a) in &rec.collected {
                data.push(s, a);
            }
        }
        data
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("history serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::Parse { line: 0, msg: format!("history: {e}") })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn argmin_u64(xs: &[u64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x < xs[best] {
            best = i;
        }
    }
    best
}

/// Trains the members for round `n` (1-based; `rounds + 1` trains the final
/// policy). `err_d` holds each member's disagreement count on the aggregate
/// dataset.
#[allow(clippy::too_many_arguments)]
fn train_members(
    config: &AlgoConfig,
    class: &FinitePolicyClass,
    d0: Option<&CoveringDistribution>,
    data: &TabularDataset,
    err_d: &[u64],
    n: usize,
) -> Result<(Vec<usize>, Option<Vec<PerturbationSet>>)> {
    match config.algo {
        AlgoKind::BehaviorCloning | AlgoKind::Dagger => Ok((vec![argmin_u64(err_d)], None)),
        AlgoKind::MftplP => {
            let mode = config.perturbation.expect("validated");
            let d0 = d0.ok_or_else(|| {
                Error::InvalidConfig("mftpl-p needs a covering distribution".into())
            })?;
            let mut members = Vec::with_capacity(config.ensemble_size);
            let mut sets = Vec::with_capacity(config.ensemble_size);
            for e in 0..config.ensemble_size {
                let mut rng_m = rng::stream2(config.seed, "member", n as u64, e as u64);
                let set = draw_perturbation(d0, class.actions(), mode, &mut rng_m)?;
                let err_q = set.error_counts(class)?;
                let total: Vec<u64> =
                    err_d.iter().zip(&err_q).map(|(&d, &q)| d + q).collect();
                members.push(argmin_u64(&total));
                if config.record_perturbations {
                    sets.push(set);
                }
            }
            Ok((members, config.record_perturbations.then_some(sets)))
        }
        AlgoKind::BootstrapDagger => {
            let mut members = Vec::with_capacity(config.ensemble_size);
            for e in 0..config.ensemble_size {
                let mut rng_m = rng::stream2(config.seed, "member", n as u64, e as u64);
                let resampled = data.bootstrap_resample(&mut rng_m);
                let counts = class_error_counts(&resampled, class)?;
                members.push(argmin_u64(&counts));
            }
            Ok((members, None))
        }
    }
}

/// Runs one tabular interactive imitation learning loop.
///
/// Behavior cloning rolls the expert out to collect states; the interactive
/// algorithms roll out the current ensemble (actions sampled from its vote
/// distribution). Every collected state is labeled by the expert, so all
/// algorithms spend exactly `n * K` expert queries through round `n`.
pub fn run_tabular(
    mdp: &LayeredMdp,
    expert: &DeterministicPolicy,
    class: &Arc<FinitePolicyClass>,
    d0: Option<&CoveringDistribution>,
    config: &AlgoConfig,
) -> Result<RunHistory> {
    config.validate()?;
    let states = mdp.state_count();
    if expert.states() < states {
        return Err(Error::PolicyUndefined { state: expert.states() });
    }
    if class.states() < states {
        return Err(Error::PolicyUndefined { state: class.states() });
    }
    if class.actions() != mdp.actions() || expert.actions() != mdp.actions() {
        return Err(Error::DimensionMismatch("action counts must match the mdp".into()));
    }

    let k = config.samples_per_round;
    let mut data = TabularDataset::new();
    let mut err_d = vec![0u64; class.len()];
    let mut rounds = Vec::with_capacity(config.rounds);

    for n in 1..=config.rounds {
        let start = Instant::now();
        let (members, perturbations) = train_members(config, class, d0, &data, &err_d, n)?;
        let ensemble = EnsemblePolicy::from_members(class.clone(), members.clone())?;

        let mut rng_c = rng::stream(config.seed, "collect", n as u64);
        let visited = if config.algo == AlgoKind::BehaviorCloning {
            sample_visitation_states(mdp, expert, k, config.sample_mode, &mut rng_c)?
        } else {
            sample_visitation_states(mdp, &ensemble, k, config.sample_mode, &mut rng_c)?
        };
        let mut collected = Vec::with_capacity(k);
        for s in visited {
            let label = expert.action(s)?;
            collected.push((s, label));
            data.push(s, label);
            for (i, err) in err_d.iter_mut().enumerate() {
                if class.action(i, s)? != label {
                    *err += 1;
                }
            }
        }

        rounds.push(RoundRecord {
            round: n,
            members,
            collected,
            dataset_size: data.len(),
            expert_queries: n * k,
            perturbations,
            wall_nanos: start.elapsed().as_nanos() as u64,
        });
    }

    let (final_members, _) = train_members(config, class, d0, &data, &err_d, config.rounds + 1)?;
    Ok(RunHistory { config: config.clone(), rounds, final_members })
}

pub fn run_bc(
    mdp: &LayeredMdp,
    expert: &DeterministicPolicy,
    class: &Arc<FinitePolicyClass>,
    config: &AlgoConfig,
) -> Result<RunHistory> {
    expect_kind(config, AlgoKind::BehaviorCloning)?;
    run_tabular(mdp, expert, class, None, config)
}

pub fn run_dagger(
    mdp: &LayeredMdp,
    expert: &DeterministicPolicy,
    class: &Arc<FinitePolicyClass>,
    config: &AlgoConfig,
) -> Result<RunHistory> {
    expect_kind(config, AlgoKind::Dagger)?;
    run_tabular(mdp, expert, class, None, config)
}

pub fn run_mftpl_p(
    mdp: &LayeredMdp,
    expert: &DeterministicPolicy,
    class: &Arc<FinitePolicyClass>,
    d0: &CoveringDistribution,
    config: &AlgoConfig,
) -> Result<RunHistory> {
    expect_kind(config, AlgoKind::MftplP)?;
    run_tabular(mdp, expert, class, Some(d0), config)
}

pub fn run_bootstrap_dagger(
    mdp: &LayeredMdp,
    expert: &DeterministicPolicy,
    class: &Arc<FinitePolicyClass>,
    config: &AlgoConfig,
) -> Result<RunHistory> {
    expect_kind(config, AlgoKind::BootstrapDagger)?;
    run_tabular(mdp, expert, class, None, config)
}

fn expect_kind(config: &AlgoConfig, kind: AlgoKind) -> Result<()> {
    if config.algo != kind {
        return Err(Error::InvalidConfig(format!(
            "config names {}, runner expects {}",
            config.algo.name(),
            kind.name()
        )));
    }
    Ok(())
}

/// How a run's policies are folded into the one policy it returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregateMode {
    /// The round ensemble of a uniformly random round: the mixture the
    /// regret reduction speaks about.
    UniformRound,
    /// The ensemble trained on all collected data.
    FinalRound,
}

/// Returns the run's output policy under `mode`.
pub fn aggregate_policies(
    class: &Arc<FinitePolicyClass>,
    history: &RunHistory,
    mode: AggregateMode,
    rng: &mut Rng,
) -> Result<EnsemblePolicy> {
    match mode {
        AggregateMode::UniformRound => {
            use rand::Rng as _;
            let n = history.rounds.len();
            if n == 0 {
                return Err(Error::InvalidConfig("history has no rounds".into()));
            }
            let pick = rng.gen_range(0..n);
            EnsemblePolicy::from_members(class.clone(), history.rounds[pick].members.clone())
        }
        AggregateMode::FinalRound => {
            EnsemblePolicy::from_members(class.clone(), history.final_members.clone())
        }
    }
}

// --- continuous stack -------------------------------------------------------

/// One round of a linear run: members are weight matrices, stored row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearRoundRecord {
    pub round: usize,
    pub members: Vec<Vec<f64>>,
    pub dataset_size: usize,
    pub expert_queries: usize,
    #[serde(skip)]
    pub wall_nanos: u64,
}

impl PartialEq for LinearRoundRecord {
    fn eq(&self, other: &Self) -> bool {
        self.round == other.round
            && self.members == other.members
            && self.dataset_size == other.dataset_size
            && self.expert_queries == other.expert_queries
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRunHistory {
    pub config: AlgoConfig,
    pub state_dim: usize,
    pub action_dim: usize,
    pub rounds: Vec<LinearRoundRecord>,
    pub final_members: Vec<Vec<f64>>,
    /// Everything the expert labeled, in collection order, kept for
    /// empirical-loss analysis.
    pub collected: Vec<(Vec<f64>, Vec<f64>)>,
}

impl LinearRunHistory {
    pub fn members_at(&self, n: usize) -> Result<Vec<LinearPolicy>> {
        let rec = self
            .rounds
            .get(n.checked_sub(1).ok_or_else(|| Error::InvalidConfig("rounds are 1-based".into()))?)
            .ok_or_else(|| Error::InvalidConfig(format!("round {n} out of range")))?;
        rec.members.iter().map(|w| self.policy_from(w)).collect()
    }

    pub fn returned_members_after(&self, n: usize) -> Result<Vec<LinearPolicy>> {
        if n == 0 || n > self.rounds.len() {
            return Err(Error::InvalidConfig(format!("round {n} out of range")));
        }
        let raw =
            if n == self.rounds.len() { &self.final_members } else { &self.rounds[n].members };
        raw.iter().map(|w| self.policy_from(w)).collect()
    }

    fn policy_from(&self, row_major: &[f64]) -> Result<LinearPolicy> {
        let rows: Vec<Vec<f64>> = row_major
            .chunks(self.state_dim)
            .map(|c| c.to_vec())
            .collect();
        LinearPolicy::from_rows(&rows)
    }
}

fn fit_linear_members(
    config: &AlgoConfig,
    env: &LinearEnv,
    d0: Option<&BoxCovering>,
    data: &VectorDataset,
    n: usize,
) -> Result<Vec<LinearPolicy>> {
    let (p, q) = (env.state_dim(), env.action_dim());
    match config.algo {
        AlgoKind::BehaviorCloning | AlgoKind::Dagger => Ok(vec![ols_fit(data, p, q)?]),
        AlgoKind::MftplP => {
            let mode = config.perturbation.expect("validated");
            let d0 = d0.ok_or_else(|| {
                Error::InvalidConfig("mftpl-p needs a covering distribution".into())
            })?;
            (0..config.ensemble_size)
                .map(|e| {
                    let mut rng_m = rng::stream2(config.seed, "member", n as u64, e as u64);
                    let mut train = data.clone();
                    train.extend_from(draw_box_perturbation(d0, q, mode, &mut rng_m)?);
                    ols_fit(&train, p, q)
                })
                .collect()
        }
        AlgoKind::BootstrapDagger => (0..config.ensemble_size)
            .map(|e| {
                let mut rng_m = rng::stream2(config.seed, "member", n as u64, e as u64);
                ols_fit(&data.bootstrap_resample(&mut rng_m), p, q)
            })
            .collect(),
    }
}

/// The same round loop over the continuous stack: least-squares policies,
/// states collected by rolling out the bagged ensemble mean, labels from the
/// expert's annotation (which may carry Gaussian noise).
pub fn run_linear(
    env: &LinearEnv,
    expert: &LinearExpert,
    d0: Option<&BoxCovering>,
    config: &AlgoConfig,
) -> Result<LinearRunHistory> {
    config.validate()?;
    let k = config.samples_per_round;
    let mut data = VectorDataset::new();
    let mut rounds = Vec::with_capacity(config.rounds);
    let mut collected_all = Vec::new();

    for n in 1..=config.rounds {
        let start = Instant::now();
        let members = fit_linear_members(config, env, d0, &data, n)?;
        let bagged = crate::linear::BaggedLinearPolicy { members: members.clone() };

        let mut rng_c = rng::stream(config.seed, "collect", n as u64);
        let exact_iid = config.sample_mode == SampleMode::ExactIid;
        let visited = if config.algo == AlgoKind::BehaviorCloning {
            env.visitation_states(expert, k, exact_iid, &mut rng_c)?
        } else {
            env.visitation_states(&bagged, k, exact_iid, &mut rng_c)?
        };
        for x in visited {
            let y = expert.annotate(&x, &mut rng_c)?;
            collected_all.push((x.clone(), y.clone()));
            data.push(x, y);
        }

        rounds.push(LinearRoundRecord {
            round: n,
            members: members.iter().map(|m| m.weights_row_major()).collect(),
            dataset_size: data.len(),
            expert_queries: n * k,
            wall_nanos: start.elapsed().as_nanos() as u64,
        });
    }

    let final_members = fit_linear_members(config, env, d0, &data, config.rounds + 1)?
        .iter()
        .map(|m| m.weights_row_major())
        .collect();
    Ok(LinearRunHistory {
        config: config.clone(),
        state_dim: env.state_dim(),
        action_dim: env.action_dim(),
        rounds,
        final_members,
        collected: collected_all,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn setup(seed: u64) -> (LayeredMdp, DeterministicPolicy, Arc<FinitePolicyClass>) {
        let mdp = LayeredMdp::random_dense(&[3, 3, 3], 2, seed);
        let expert = crate::dp::optimal_policy(&mdp);
        let mut rng = stream(seed, "class", 0);
        let class = Arc::new(FinitePolicyClass::random_tables(9, 2, 8, &mut rng));
        (mdp, expert, class)
    }

    fn dagger_config(seed: u64) -> AlgoConfig {
        AlgoConfig::new(AlgoKind::Dagger, 12, 4, seed)
    }

    #[test]
    fn query_budget_is_n_times_k() {
        let (mdp, expert, class) = setup(1);
        for algo in [AlgoKind::BehaviorCloning, AlgoKind::Dagger, AlgoKind::BootstrapDagger] {
            let mut config = AlgoConfig::new(algo, 7, 3, 5);
            if algo == AlgoKind::BootstrapDagger {
                config.ensemble_size = 4;
            }
            let hist = run_tabular(&mdp, &expert, &class, None, &config).unwrap();
            for (i, rec) in hist.rounds.iter().enumerate() {
                assert_eq!(rec.expert_queries, (i + 1) * 3);
                assert_eq!(rec.collected.len(), 3);
                assert_eq!(rec.dataset_size, (i + 1) * 3);
            }
        }
    }

    #[test]
    fn histories_are_seed_deterministic() {
        let (mdp, expert, class) = setup(2);
        let config = dagger_config(7);
        let a = run_tabular(&mdp, &expert, &class, None, &config).unwrap();
        let b = run_tabular(&mdp, &expert, &class, None, &config).unwrap();
        assert_eq!(a, b);
        let c = run_tabular(&mdp, &expert, &class, None, &dagger_config(8)).unwrap();
        assert_ne!(
            a.rounds.iter().map(|r| &r.collected).collect::<Vec<_>>(),
            c.rounds.iter().map(|r| &r.collected).collect::<Vec<_>>()
        );
    }

    #[test]
    fn first_round_policy_is_the_empty_oracle_output() {
        let (mdp, expert, class) = setup(3);
        let hist = run_tabular(&mdp, &expert, &class, None, &dagger_config(1)).unwrap();
        assert_eq!(hist.rounds[0].members, vec![0]);
    }

    #[test]
    fn dataset_before_replays_prefixes() {
        let (mdp, expert, class) = setup(4);
        let hist = run_tabular(&mdp, &expert, &class, None, &dagger_config(2)).unwrap();
        assert_eq!(hist.dataset_before(1).len(), 0);
        let d3 = hist.dataset_before(3);
        assert_eq!(d3.len(), 8);
        assert_eq!(
            d3.pairs()[4..8],
            hist.rounds[1].collected[..],
            "round 2's pairs sit after round 1's"
        );
    }

    #[test]
    fn mftpl_with_zero_rate_and_one_member_is_dagger() {
        let (mdp, expert, class) = setup(5);
        let d0 = CoveringDistribution::uniform(mdp.state_count());
        let seed = 33;
        let dagger = run_tabular(
            &mdp,
            &expert,
            &class,
            None,
            &AlgoConfig::new(AlgoKind::Dagger, 20, 3, seed),
        )
        .unwrap();
        let mut config = AlgoConfig::new(AlgoKind::MftplP, 20, 3, seed);
        config.perturbation = Some(SizeMode::Poisson(0.0));
        let mftpl = run_tabular(&mdp, &expert, &class, Some(&d0), &config).unwrap();
        for (a, b) in dagger.rounds.iter().zip(&mftpl.rounds) {
            assert_eq!(a.members, b.members);
            assert_eq!(a.collected, b.collected);
        }
        assert_eq!(dagger.final_members, mftpl.final_members);
    }

    #[test]
    fn bootstrap_dagger_on_singleton_data_matches_dagger() {
        // A size-1 dataset resamples to itself, so the round-2 policies agree.
        let (mdp, expert, class) = setup(6);
        let seed = 9;
        let dagger = run_tabular(
            &mdp,
            &expert,
            &class,
            None,
            &AlgoConfig::new(AlgoKind::Dagger, 2, 1, seed),
        )
        .unwrap();
        let bd = run_tabular(
            &mdp,
            &expert,
            &class,
            None,
            &AlgoConfig::new(AlgoKind::BootstrapDagger, 2, 1, seed),
        )
        .unwrap();
        assert_eq!(dagger.rounds[1].members, bd.rounds[1].members);
    }

    #[test]
    fn member_streams_are_execution_order_free() {
        // Re-drawing member e's perturbation in isolation reproduces the set
        // recorded by the full loop.
        let (mdp, expert, class) = setup(7);
        let d0 = CoveringDistribution::uniform(mdp.state_count());
        let mut config = AlgoConfig::new(AlgoKind::MftplP, 3, 2, 11);
        config.ensemble_size = 5;
        config.perturbation = Some(SizeMode::Poisson(8.0));
        config.record_perturbations = true;
        let hist = run_tabular(&mdp, &expert, &class, Some(&d0), &config).unwrap();
        for rec in &hist.rounds {
            let sets = rec.perturbations.as_ref().unwrap();
            for e in [4usize, 2, 0, 3, 1] {
                let mut rng_m = rng::stream2(11, "member", rec.round as u64, e as u64);
                let redraw =
                    draw_perturbation(&d0, 2, SizeMode::Poisson(8.0), &mut rng_m).unwrap();
                assert_eq!(redraw, sets[e]);
            }
        }
    }

    #[test]
    fn history_json_round_trips() {
        let (mdp, expert, class) = setup(8);
        let hist = run_tabular(&mdp, &expert, &class, None, &dagger_config(3)).unwrap();
        let back = RunHistory::from_json(&hist.to_json()).unwrap();
        // Wall time is measured, not stored; compare everything else.
        assert_eq!(back.config, hist.config);
        assert_eq!(back.final_members, hist.final_members);
        for (a, b) in back.rounds.iter().zip(&hist.rounds) {
            assert_eq!(a.members, b.members);
            assert_eq!(a.collected, b.collected);
            assert_eq!(a.dataset_size, b.dataset_size);
        }
    }

    #[test]
    fn aggregate_single_round_returns_that_round() {
        let (mdp, expert, class) = setup(9);
        let hist =
            run_tabular(&mdp, &expert, &class, None, &AlgoConfig::new(AlgoKind::Dagger, 1, 2, 4))
                .unwrap();
        let mut rng = stream(0, "agg", 0);
        let pi = aggregate_policies(&class, &hist, AggregateMode::UniformRound, &mut rng).unwrap();
        for s in 0..mdp.state_count() {
            assert_eq!(
                pi.vote_distribution(s).unwrap(),
                hist.ensemble_at(&class, 1).unwrap().vote_distribution(s).unwrap()
            );
        }
    }

    #[test]
    fn aggregate_round_draw_is_uniform() {
        let (mdp, expert, class) = setup(10);
        let hist =
            run_tabular(&mdp, &expert, &class, None, &AlgoConfig::new(AlgoKind::Dagger, 4, 2, 4))
                .unwrap();
        // Tag rounds by their member lists via a draw census.
        let mut rng = stream(1, "agg", 0);
        let mut counts = [0usize; 4];
        let trials = 10_000;
        for _ in 0..trials {
            use rand::Rng as _;
            let pick = rng.gen_range(0..hist.rounds.len());
            counts[pick] += 1;
        }
        for c in counts {
            let f = c as f64 / trials as f64;
            assert!((f - 0.25).abs() < 0.015, "frequency {f}");
        }
    }

    #[test]
    fn config_validation_rejects_misuse() {
        let mut c = AlgoConfig::new(AlgoKind::Dagger, 5, 2, 0);
        c.perturbation = Some(SizeMode::Fixed(3));
        assert!(c.validate().is_err());
        let mut c = AlgoConfig::new(AlgoKind::MftplP, 5, 2, 0);
        assert!(c.validate().is_err()); // missing perturbation
        c.perturbation = Some(SizeMode::Poisson(-1.0));
        assert!(c.validate().is_err());
        let mut c = AlgoConfig::new(AlgoKind::BehaviorCloning, 5, 2, 0);
        c.ensemble_size = 3;
        assert!(c.validate().is_err());
        let c = AlgoConfig::new(AlgoKind::Dagger, 0, 2, 0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn linear_runs_are_deterministic_and_shrink_cost() {
        let (env, expert) = LinearEnv::tracking(2, 8);
        let mut config = AlgoConfig::new(AlgoKind::Dagger, 10, 20, 5);
        config.loss = LossSpec::ClippedMse;
        let a = run_linear(&env, &expert, None, &config).unwrap();
        let b = run_linear(&env, &expert, None, &config).unwrap();
        assert_eq!(a, b);

        // Policies trained on data should track better than round 1's zero map.
        let mut rng = stream(2, "lin", 0);
        let first = crate::linear::BaggedLinearPolicy { members: a.members_at(1).unwrap() };
        let last = crate::linear::BaggedLinearPolicy {
            members: a.returned_members_after(10).unwrap(),
        };
        let (j_first, _) = env.mc_cost(&first, 800, &mut rng).unwrap();
        let (j_last, _) = env.mc_cost(&last, 800, &mut rng).unwrap();
        assert!(j_last < j_first, "trained {j_last} vs zero-map {j_first}");
    }

    #[test]
    fn linear_mftpl_and_bootstrap_train_full_ensembles() {
        let (env, expert) = LinearEnv::tracking(2, 6);
        let d0 = BoxCovering { dim: 2, low: -2.0, high: 2.0 };
        let mut config = AlgoConfig::new(AlgoKind::MftplP, 4, 10, 6);
        config.ensemble_size = 5;
        config.perturbation = Some(SizeMode::Fixed(7));
        config.loss = LossSpec::ClippedMse;
        let hist = run_linear(&env, &expert, Some(&d0), &config).unwrap();
        assert!(hist.rounds.iter().all(|r| r.members.len() == 5));

        let mut config = AlgoConfig::new(AlgoKind::BootstrapDagger, 4, 10, 6);
        config.ensemble_size = 3;
        config.loss = LossSpec::ClippedMse;
        let hist = run_linear(&env, &expert, None, &config).unwrap();
        assert!(hist.rounds.iter().all(|r| r.members.len() == 3));
    }
}
