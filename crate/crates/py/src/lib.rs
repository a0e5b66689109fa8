//! Python bindings for the imitation-learning testbed.
//!
//! Exposes the tabular environments, policy classes, algorithm runners, and
//! the analysis entry points. Heavy lifting stays in the core crate; these
//! wrappers only translate types and map errors onto `ValueError`.

use imil::algo::{run_tabular, AlgoConfig, AlgoKind, RunHistory};
use imil::analysis::{
    self, estimation_gap as core_estimation_gap, ledger_from_history, LossBasis,
};
use imil::dp;
use imil::harness::{self, ExperimentConfig};
use imil::mdp::LayeredMdp;
use imil::perturb::{self, CoveringDistribution, SizeMode};
use imil::policy::{DeterministicPolicy, EnsemblePolicy, FinitePolicyClass};
use imil::rng::stream;
use imil::verify;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use std::sync::Arc;

fn err(e: imil::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Layered episodic environment with per-state costs in [0, 1].
#[pyclass(frozen)]
struct Mdp {
    inner: LayeredMdp,
}

#[pymethods]
impl Mdp {
    /// Dense random environment: every transition row is a random simplex
    /// point, every cost uniform in [0, 1].
    #[staticmethod]
    fn random(layers: Vec<usize>, actions: usize, seed: u64) -> Self {
        Self { inner: LayeredMdp::random_dense(&layers, actions, seed) }
    }

    /// Single-state-per-layer chain with a constant off-expert cost.
    #[staticmethod]
    fn chain(horizon: usize, actions: usize, cost: f64) -> PyResult<Self> {
        Ok(Self { inner: LayeredMdp::chain(horizon, actions, cost).map_err(err)? })
    }

    fn state_count(&self) -> usize {
        self.inner.state_count()
    }

    fn actions(&self) -> usize {
        self.inner.actions()
    }

    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    /// Cost-minimizing deterministic policy, by backward induction.
    fn optimal_policy(&self) -> Policy {
        Policy { inner: dp::optimal_policy(&self.inner) }
    }

    /// Exact expected episode cost of a deterministic policy.
    fn expected_cost(&self, policy: &Policy) -> PyResult<f64> {
        dp::expected_cost(&self.inner, &policy.inner).map_err(err)
    }

    /// Exact expected episode cost of a uniform vote over class members.
    fn expected_vote_cost(&self, class: &PolicyClass, members: Vec<usize>) -> PyResult<f64> {
        let vote = EnsemblePolicy::from_members(class.inner.clone(), members).map_err(err)?;
        dp::expected_cost(&self.inner, &vote).map_err(err)
    }

    /// Time-averaged state visitation probabilities of a policy.
    fn visitation(&self, policy: &Policy) -> PyResult<Vec<f64>> {
        Ok(dp::forward_visitation(&self.inner, &policy.inner).map_err(err)?.d)
    }

    /// Worst one-step deviation cost against this expert, with the state
    /// and action that attain it.
    fn recoverability(&self, expert: &Policy) -> PyResult<(f64, Option<(usize, usize)>)> {
        let rep = analysis::mu_recoverability(&self.inner, &expert.inner).map_err(err)?;
        Ok((rep.mu, rep.witness))
    }
}

/// Deterministic state-to-action table.
#[pyclass(frozen)]
#[derive(Clone)]
struct Policy {
    inner: DeterministicPolicy,
}

#[pymethods]
impl Policy {
    #[new]
    fn new(actions: usize, table: Vec<usize>) -> PyResult<Self> {
        Ok(Self { inner: DeterministicPolicy::new(actions, table).map_err(err)? })
    }

    fn action(&self, state: usize) -> PyResult<usize> {
        self.inner.action(state).map_err(err)
    }

    fn table(&self) -> Vec<usize> {
        self.inner.table().to_vec()
    }
}

/// Finite set of deterministic policies the learner selects from.
#[pyclass(frozen)]
struct PolicyClass {
    inner: Arc<FinitePolicyClass>,
}

#[pymethods]
impl PolicyClass {
    #[new]
    fn new(members: Vec<Policy>) -> PyResult<Self> {
        let members = members.into_iter().map(|p| p.inner).collect();
        Ok(Self { inner: Arc::new(FinitePolicyClass::new(members).map_err(err)?) })
    }

    /// Class of uniformly random action tables.
    #[staticmethod]
    fn random_tables(states: usize, actions: usize, size: usize, seed: u64) -> Self {
        let mut rng = stream(seed, "class", 0);
        Self { inner: Arc::new(FinitePolicyClass::random_tables(states, actions, size, &mut rng)) }
    }

    fn get(&self, i: usize) -> PyResult<Policy> {
        if i >= self.inner.len() {
            return Err(PyValueError::new_err(format!("member {i} of {}", self.inner.len())));
        }
        Ok(Policy { inner: self.inner.get(i).clone() })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// State distribution used to seed perturbation sets.
#[pyclass(frozen)]
struct Covering {
    inner: CoveringDistribution,
}

#[pymethods]
impl Covering {
    #[staticmethod]
    fn uniform(states: usize) -> Self {
        Self { inner: CoveringDistribution::uniform(states) }
    }

    /// Uniform mixture of the class members' visitation distributions.
    #[staticmethod]
    fn visitation_mixture(mdp: &Mdp, class: &PolicyClass) -> PyResult<Self> {
        let inner =
            CoveringDistribution::mixture_of_visitations(&mdp.inner, &class.inner).map_err(err)?;
        Ok(Self { inner })
    }

    fn pmf(&self) -> Vec<f64> {
        self.inner.pmf().to_vec()
    }
}

/// Full record of one interactive training run.
#[pyclass(frozen)]
struct RunResult {
    inner: RunHistory,
}

#[pymethods]
impl RunResult {
    fn rounds(&self) -> usize {
        self.inner.rounds.len()
    }

    /// Member indices trained for round `n` (1-based).
    fn members(&self, n: usize) -> PyResult<Vec<usize>> {
        self.inner
            .rounds
            .get(n.checked_sub(1).ok_or_else(|| PyValueError::new_err("rounds are 1-based"))?)
            .map(|r| r.members.clone())
            .ok_or_else(|| PyValueError::new_err(format!("round {n} of {}", self.inner.rounds.len())))
    }

    /// Ensemble the run returns after all rounds.
    fn final_members(&self) -> Vec<usize> {
        self.inner.final_members.clone()
    }

    /// States and expert labels collected in round `n` (1-based).
    fn collected(&self, n: usize) -> PyResult<Vec<(usize, usize)>> {
        self.inner
            .rounds
            .get(n.checked_sub(1).ok_or_else(|| PyValueError::new_err("rounds are 1-based"))?)
            .map(|r| r.collected.clone())
            .ok_or_else(|| PyValueError::new_err(format!("round {n} of {}", self.inner.rounds.len())))
    }

    fn expert_queries(&self) -> usize {
        self.inner.rounds.last().map_or(0, |r| r.expert_queries)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: RunHistory::from_json(text).map_err(err)? })
    }
}

/// Per-round regret accounting for a finished run.
#[pyclass(frozen)]
struct Ledger {
    #[pyo3(get)]
    basis: String,
    #[pyo3(get)]
    final_regret: f64,
    #[pyo3(get)]
    final_avg_regret: f64,
    /// `(round, played_loss, cumulative_regret, average_regret)` per round.
    #[pyo3(get)]
    rows: Vec<(usize, f64, f64, f64)>,
}

/// Outcome of the performance-vs-regret inequality on one run.
#[pyclass(frozen)]
struct ReductionReport {
    #[pyo3(get)]
    holds: bool,
    #[pyo3(get)]
    avg_policy_gap: f64,
    #[pyo3(get)]
    bound: f64,
    #[pyo3(get)]
    mu: f64,
    #[pyo3(get)]
    class_term: f64,
    #[pyo3(get)]
    regret_term: f64,
}

/// Trains a policy interactively against the expert and records every
/// round. `algo` is one of `bc`, `dagger`, `mftpl-p`, `bootstrap-dagger`.
/// Perturbed ensembles need `poisson` (or `fixed`) and a covering `d0`.
#[pyfunction]
#[pyo3(signature = (mdp, expert, class, algo="dagger", rounds=20, samples_per_round=10,
    ensemble_size=1, poisson=None, fixed=None, d0=None, seed=0, record_perturbations=false))]
#[allow(clippy::too_many_arguments)]
fn run(
    mdp: &Mdp,
    expert: &Policy,
    class: &PolicyClass,
    algo: &str,
    rounds: usize,
    samples_per_round: usize,
    ensemble_size: usize,
    poisson: Option<f64>,
    fixed: Option<usize>,
    d0: Option<&Covering>,
    seed: u64,
    record_perturbations: bool,
) -> PyResult<RunResult> {
    let kind = match algo {
        "bc" | "behavior-cloning" => AlgoKind::BehaviorCloning,
        "dagger" => AlgoKind::Dagger,
        "mftpl-p" => AlgoKind::MftplP,
        "bootstrap-dagger" => AlgoKind::BootstrapDagger,
        other => return Err(PyValueError::new_err(format!("unknown algorithm {other:?}"))),
    };
    let mut config = AlgoConfig::new(kind, rounds, samples_per_round, seed);
    config.ensemble_size = ensemble_size;
    config.record_perturbations = record_perturbations;
    config.perturbation = match (poisson, fixed) {
        (Some(rate), None) => Some(SizeMode::Poisson(rate)),
        (None, Some(n)) => Some(SizeMode::Fixed(n)),
        (None, None) => None,
        (Some(_), Some(_)) => {
            return Err(PyValueError::new_err("pass poisson or fixed, not both"))
        }
    };
    let history = run_tabular(
        &mdp.inner,
        &expert.inner,
        &class.inner,
        d0.map(|c| &c.inner),
        &config,
    )
    .map_err(err)?;
    Ok(RunResult { inner: history })
}

/// Regret of a finished run against the best fixed class member in
/// hindsight. `basis` is `exact` or `empirical`.
#[pyfunction]
#[pyo3(signature = (mdp, expert, class, result, basis="exact"))]
fn regret_ledger(
    mdp: &Mdp,
    expert: &Policy,
    class: &PolicyClass,
    result: &RunResult,
    basis: &str,
) -> PyResult<Ledger> {
    let basis = match basis {
        "exact" => LossBasis::Exact,
        "empirical" => LossBasis::Empirical,
        other => return Err(PyValueError::new_err(format!("unknown basis {other:?}"))),
    };
    let ledger =
        ledger_from_history(&mdp.inner, &expert.inner, &class.inner, &result.inner, basis)
            .map_err(err)?;
    Ok(Ledger {
        basis: format!("{:?}", ledger.basis).to_lowercase(),
        final_regret: ledger.final_regret(),
        final_avg_regret: ledger.final_avg_regret(),
        rows: ledger
            .rows
            .iter()
            .map(|r| (r.round, r.played_loss, r.regret, r.avg_regret))
            .collect(),
    })
}

/// `mu * horizon * regret / rounds`: the estimation term the regret
/// contributes to the performance gap.
#[pyfunction]
fn estimation_gap(mu: f64, horizon: usize, regret: f64, rounds: usize) -> f64 {
    core_estimation_gap(mu, horizon, regret, rounds)
}

/// Checks the performance-vs-regret inequality on a finished run.
#[pyfunction]
#[pyo3(signature = (mdp, expert, class, result, tol=1e-9))]
fn reduction_check(
    mdp: &Mdp,
    expert: &Policy,
    class: &PolicyClass,
    result: &RunResult,
    tol: f64,
) -> PyResult<ReductionReport> {
    let check =
        analysis::reduction_bound_check(&mdp.inner, &expert.inner, &class.inner, &result.inner, tol)
            .map_err(err)?;
    Ok(ReductionReport {
        holds: check.holds,
        avg_policy_gap: check.avg_policy_gap,
        bound: check.bound,
        mu: check.mu,
        class_term: check.class_term,
        regret_term: check.regret_term,
    })
}

/// The fork environment where data-driven selection prefers the worse
/// member. Returns `(mdp, expert, class, mu)`.
#[pyfunction]
fn selection_trap(horizon: usize) -> PyResult<(Mdp, Policy, PolicyClass, f64)> {
    let trap = analysis::selection_trap(horizon).map_err(err)?;
    Ok((
        Mdp { inner: trap.mdp },
        Policy { inner: trap.expert },
        PolicyClass { inner: trap.class },
        trap.mu,
    ))
}

/// Empirical lower bound on the covering smoothness ratio `1 / sigma`.
#[pyfunction]
#[pyo3(signature = (mdp, class, d0, mixture_samples=64, seed=0))]
fn smoothness(
    mdp: &Mdp,
    class: &PolicyClass,
    d0: &Covering,
    mixture_samples: usize,
    seed: u64,
) -> PyResult<(f64, bool)> {
    let mut rng = stream(seed, "smoothness", 0);
    let rep =
        perturb::smoothness_estimate(&mdp.inner, &class.inner, &d0.inner, mixture_samples, &mut rng)
            .map_err(err)?;
    Ok((rep.inv_sigma, rep.infinite))
}

/// Runs one named verification suite; returns `(passed, detail_lines)`.
#[pyfunction]
fn verify_suite(name: &str) -> PyResult<(bool, Vec<String>)> {
    let report = verify::run_suite(name).map_err(err)?;
    Ok((report.passed, report.details))
}

/// Names of all verification suites, in report order.
#[pyfunction]
fn suite_names() -> Vec<&'static str> {
    verify::SUITES.to_vec()
}

/// Runs a full experiment config (TOML text) and returns
/// `(results_csv, summary_json, failure_messages)`. `seeds` overrides the
/// config's seed list when given.
#[pyfunction]
#[pyo3(signature = (toml_text, seeds=None))]
fn run_experiment(toml_text: &str, seeds: Option<Vec<u64>>) -> PyResult<(String, String, Vec<String>)> {
    let config = ExperimentConfig::from_toml(toml_text).map_err(err)?;
    let seeds = seeds.unwrap_or_else(|| config.seeds.clone());
    let output = harness::run_sweep(&config, &seeds).map_err(err)?;
    let mut csv = Vec::new();
    harness::write_results_csv(&mut csv, &output.rows).map_err(err)?;
    let mut summary = Vec::new();
    harness::write_summary_json(&mut summary, &output.summaries).map_err(err)?;
    let failures = output
        .failures
        .iter()
        .map(|f| format!("{} seed {}: {}", f.algo, f.seed, f.message))
        .collect();
    Ok((
        String::from_utf8(csv).expect("csv is utf-8"),
        String::from_utf8(summary).expect("json is utf-8"),
        failures,
    ))
}

#[pymodule]
fn imil_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Mdp>()?;
    m.add_class::<Policy>()?;
    m.add_class::<PolicyClass>()?;
    m.add_class::<Covering>()?;
    m.add_class::<RunResult>()?;
    m.add_class::<Ledger>()?;
    m.add_class::<ReductionReport>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(regret_ledger, m)?)?;
    m.add_function(wrap_pyfunction!(estimation_gap, m)?)?;
    m.add_function(wrap_pyfunction!(reduction_check, m)?)?;
    m.add_function(wrap_pyfunction!(selection_trap, m)?)?;
    m.add_function(wrap_pyfunction!(smoothness, m)?)?;
    m.add_function(wrap_pyfunction!(verify_suite, m)?)?;
    m.add_function(wrap_pyfunction!(suite_names, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
