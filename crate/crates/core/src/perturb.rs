//! Covering distributions and random perturbation sets.
//!
//! A perturbation set is a multiset of (state, uniformly random action)
//! pairs whose size is Poisson or fixed. Poisson sets are drawn cell by cell
//! (independent Poissons with mean `lambda * p(s) / A`), which by
//! superposition is distributed exactly as "draw `X ~ Poi(lambda)`, then `X`
//! i.i.d. pairs", but costs `O(S * A)` instead of `O(lambda)`.

use crate::dp::forward_visitation;
use crate::error::Error;
use crate::mdp::{ActionId, LayeredMdp, StateId};
use crate::policy::{sample_categorical, EnsemblePolicy, FinitePolicyClass};
use crate::rng::Rng;
use crate::Result;
use rand::Rng as _;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Where covering mass comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoveringKind {
    UniformStates,
    ExactMixture,
    StatePool,
}

/// A distribution over states with an exact pmf.
#[derive(Debug, Clone, PartialEq)]
pub struct CoveringDistribution {
    kind: CoveringKind,
    pmf: Vec<f64>,
}

impl CoveringDistribution {
    pub fn uniform(states: usize) -> Self {
        Self { kind: CoveringKind::UniformStates, pmf: vec![1.0 / states as f64; states] }
    }

    pub fn exact_mixture(pmf: Vec<f64>) -> Result<Self> {
        let sum: f64 = pmf.iter().sum();
        if pmf.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("covering pmf is not a distribution".into()));
        }
        Ok(Self { kind: CoveringKind::ExactMixture, pmf })
    }

    /// Uniform mixture of the visitation distributions of every class
    /// member; the natural covering when the class is known.
    pub fn mixture_of_visitations(mdp: &LayeredMdp, class: &FinitePolicyClass) -> Result<Self> {
        let mut pmf = vec![0.0; mdp.state_count()];
        for h in class.members() {
            let d = forward_visitation(mdp, h)?;
            for (acc, v) in pmf.iter_mut().zip(d.d) {
                *acc += v / class.len() as f64;
            }
        }
        Ok(Self { kind: CoveringKind::ExactMixture, pmf })
    }

    /// Empirical pool of states; the pmf is each state's multiplicity.
    pub fn state_pool(pool: &[StateId], state_count: usize) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::InvalidConfig("state pool is empty".into()));
        }
        let mut pmf = vec![0.0; state_count];
        for &s in pool {
            if s >= state_count {
                return Err(Error::InvalidConfig(format!("pool state {s} out of range")));
            }
            pmf[s] += 1.0 / pool.len() as f64;
        }
        Ok(Self { kind: CoveringKind::StatePool, pmf })
    }

    pub fn kind(&self) -> CoveringKind {
        self.kind
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn sample_state(&self, rng: &mut Rng) -> StateId {
        sample_categorical(&self.pmf, rng)
    }
}

/// Size law of a perturbation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizeMode {
    Poisson(f64),
    Fixed(usize),
}

/// Draws from `Poi(lambda)`. `lambda = 0` deterministically yields 0.
pub fn draw_poisson(lambda: f64, rng: &mut Rng) -> Result<usize> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidConfig(format!("poisson rate {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(0);
    }
    let draw: f64 = Poisson::new(lambda)
        .map_err(|e| Error::InvalidConfig(format!("poisson rate {lambda}: {e}")))?
        .sample(rng);
    Ok(draw as usize)
}

/// Multiset of (state, action) pairs stored as cell counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSet {
    /// `(state, action, count)`, sorted by state then action; zero counts
    /// omitted.
    pub cells: Vec<(StateId, ActionId, u32)>,
    pub total: usize,
}

impl PerturbationSet {
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Expands the multiset to explicit pairs.
    pub fn pairs(&self) -> Vec<(StateId, ActionId)> {
        let mut out = Vec::with_capacity(self.total);
        for &(s, a, c) in &self.cells {
            for _ in 0..c {
                out.push((s, a));
            }
        }
        out
    }

    /// Disagreement counts of each class member with the random labels.
    pub fn error_counts(&self, class: &FinitePolicyClass) -> Result<Vec<u64>> {
        let mut counts = vec![0u64; class.len()];
        for &(s, a, c) in &self.cells {
            for (i, acc) in counts.iter_mut().enumerate() {
                if class.action(i, s)? != a {
                    *acc += c as u64;
                }
            }
        }
        Ok(counts)
    }
}

/// Draws a perturbation set: states from `d0`, labels uniform over actions,
/// size by `mode`.
pub fn draw_perturbation(
    d0: &CoveringDistribution,
    actions: usize,
    mode: SizeMode,
    rng: &mut Rng,
) -> Result<PerturbationSet> {
    let mut cells = Vec::new();
    let mut total = 0usize;
    match mode {
        SizeMode::Poisson(lambda) => {
            if !lambda.is_finite() || lambda < 0.0 {
                return Err(Error::InvalidConfig(format!("poisson rate {lambda}")));
            }
            for (s, &p) in d0.pmf().iter().enumerate() {
                let mean = lambda * p / actions as f64;
                if mean == 0.0 {
                    continue;
                }
                let poi = Poisson::new(mean)
                    .map_err(|e| Error::InvalidConfig(format!("poisson rate {mean}: {e}")))?;
                for a in 0..actions {
                    let c = poi.sample(rng) as u64;
                    if c > 0 {
                        cells.push((s, a, c as u32));
                        total += c as usize;
                    }
                }
            }
        }
        SizeMode::Fixed(x) => {
            let mut dense = vec![0u32; d0.pmf().len() * actions];
            for _ in 0..x {
                let s = d0.sample_state(rng);
                let a = rng.gen_range(0..actions);
                dense[s * actions + a] += 1;
            }
            for s in 0..d0.pmf().len() {
                for a in 0..actions {
                    let c = dense[s * actions + a];
                    if c > 0 {
                        cells.push((s, a, c));
                        total += c as usize;
                    }
                }
            }
        }
    }
    Ok(PerturbationSet { cells, total })
}

/// Monte Carlo check of the perturbation bias bound.
#[derive(Debug, Clone, Copy)]
pub struct BiasReport {
    /// Mean over trials of `max_h (X (A-1)/A - err_h(Q)) / K`.
    pub empirical_mean: f64,
    pub std_error: f64,
    /// `sqrt(lambda * ln B / (2 K^2))`.
    pub bound: f64,
    pub trials: usize,
}

impl BiasReport {
    /// Empirical mean below the bound plus `z` standard errors.
    pub fn holds(&self, z: f64) -> bool {
        self.empirical_mean <= self.bound + z * self.std_error
    }
}

/// Estimates the expected optimism a Poisson perturbation set can inject,
/// and compares it against its closed-form bound. The maximized quantity is
/// the negated perturbation cost `max_h (-g~[h])`, whose expectation the
/// bound controls for any class and covering distribution.
pub fn bias_bound_check(
    d0: &CoveringDistribution,
    class: &FinitePolicyClass,
    lambda: f64,
    k: usize,
    trials: usize,
    rng: &mut Rng,
) -> Result<BiasReport> {
    if k == 0 || trials == 0 {
        return Err(Error::InvalidConfig("bias check needs k >= 1 and trials >= 1".into()));
    }
    let a = class.actions() as f64;
    let kf = k as f64;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..trials {
        let set = draw_perturbation(d0, class.actions(), SizeMode::Poisson(lambda), rng)?;
        let errs = set.error_counts(class)?;
        let centered = set.total as f64 * (a - 1.0) / a;
        let best = errs
            .iter()
            .map(|&e| (centered - e as f64) / kf)
            .fold(f64::NEG_INFINITY, f64::max);
        sum += best;
        sumsq += best * best;
    }
    let mean = sum / trials as f64;
    let var = (sumsq / trials as f64 - mean * mean).max(0.0);
    let bound = (lambda * (class.len() as f64).ln() / (2.0 * kf * kf)).sqrt();
    Ok(BiasReport {
        empirical_mean: mean,
        std_error: (var / trials as f64).sqrt(),
        bound,
        trials,
    })
}

/// Covering distribution for the continuous stack: states uniform over a
/// box, labels uniform over `[-1, 1]^action_dim`. Sampler only; there is no
/// pmf to certify smoothness against.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxCovering {
    pub dim: usize,
    pub low: f64,
    pub high: f64,
}

impl BoxCovering {
    pub fn sample_state(&self, rng: &mut Rng) -> Vec<f64> {
        (0..self.dim).map(|_| rng.gen_range(self.low..self.high)).collect()
    }
}

/// Perturbation examples for least-squares training: `mode`-many states from
/// the box with uniform random labels.
pub fn draw_box_perturbation(
    d0: &BoxCovering,
    action_dim: usize,
    mode: SizeMode,
    rng: &mut Rng,
) -> Result<crate::oracle::VectorDataset> {
    let x = match mode {
        SizeMode::Poisson(lambda) => draw_poisson(lambda, rng)?,
        SizeMode::Fixed(x) => x,
    };
    let mut out = crate::oracle::VectorDataset::new();
    for _ in 0..x {
        let s = d0.sample_state(rng);
        let y: Vec<f64> = (0..action_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        out.push(s, y);
    }
    Ok(out)
}

/// Which policy realized the worst visitation ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SmoothnessWitness {
    Member(usize),
    MixtureSample(usize),
}

/// Empirical lower bound on the inverse smoothness `1/sigma`: the largest
/// visitation ratio `d_pi(s) / d0(s)` seen over the class vertices and a
/// sample of mixtures. The true worst case over all mixtures can be larger.
#[derive(Debug, Clone)]
pub struct SmoothnessReport {
    pub inv_sigma: f64,
    /// Some visited state has zero covering mass; `inv_sigma` is infinite.
    pub infinite: bool,
    pub witness: Option<(SmoothnessWitness, StateId)>,
    pub mixture_samples: usize,
}

pub fn smoothness_estimate(
    mdp: &LayeredMdp,
    class: &Arc<FinitePolicyClass>,
    d0: &CoveringDistribution,
    mixture_samples: usize,
    rng: &mut Rng,
) -> Result<SmoothnessReport> {
    if d0.pmf().len() != mdp.state_count() {
        return Err(Error::DimensionMismatch("covering pmf does not match state space".into()));
    }
    let mut report = SmoothnessReport {
        inv_sigma: 0.0,
        infinite: false,
        witness: None,
        mixture_samples,
    };
    let consider = |d: &[f64], who: SmoothnessWitness, report: &mut SmoothnessReport| {
        for (s, (&dp, &p0)) in d.iter().zip(d0.pmf()).enumerate() {
            if dp == 0.0 {
                continue;
            }
            if p0 == 0.0 {
                report.infinite = true;
                report.inv_sigma = f64::INFINITY;
                report.witness = Some((who, s));
                return;
            }
            let ratio = dp / p0;
            if ratio > report.inv_sigma {
                report.inv_sigma = ratio;
                report.witness = Some((who, s));
            }
        }
    };
    for i in 0..class.len() {
        let d = forward_visitation(mdp, class.get(i))?;
        consider(&d.d, SmoothnessWitness::Member(i), &mut report);
        if report.infinite {
            return Ok(report);
        }
    }
    for m in 0..mixture_samples {
        // Uniform mixture weights: normalized Exp(1) draws.
        let mut w: Vec<f64> = (0..class.len()).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let sum: f64 = w.iter().sum();
        for v in &mut w {
            *v /= sum;
        }
        let pi = EnsemblePolicy::from_weights(class.clone(), w)?;
        let d = forward_visitation(mdp, &pi)?;
        consider(&d.d, SmoothnessWitness::MixtureSample(m), &mut report);
        if report.infinite {
            return Ok(report);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::CostNoise;
    use crate::policy::DeterministicPolicy;
    use crate::rng::stream;

    #[test]
    fn poisson_moments() {
        let mut rng = stream(1, "poi", 0);
        let n = 100_000;
        let lambda = 15.0;
        let draws: Vec<f64> =
            (0..n).map(|_| draw_poisson(lambda, &mut rng).unwrap() as f64).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let se_mean = (lambda / n as f64).sqrt();
        assert!((mean - lambda).abs() < 3.0 * se_mean, "mean {mean}");
        assert!((var - lambda).abs() < 0.5, "var {var}");
        assert_eq!(draw_poisson(0.0, &mut rng).unwrap(), 0);
    }

    #[test]
    fn perturbation_total_is_poisson_lambda() {
        // Superposition: cell-wise draws must still give a Poi(lambda) total.
        let d0 = CoveringDistribution::exact_mixture(vec![0.5, 0.3, 0.2]).unwrap();
        let mut rng = stream(2, "per", 0);
        let n = 40_000;
        let lambda = 6.0;
        let totals: Vec<f64> = (0..n)
            .map(|_| {
                draw_perturbation(&d0, 2, SizeMode::Poisson(lambda), &mut rng).unwrap().total as f64
            })
            .collect();
        let mean = totals.iter().sum::<f64>() / n as f64;
        let var = totals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!((mean - lambda).abs() < 3.0 * (lambda / n as f64).sqrt(), "mean {mean}");
        assert!((var - lambda).abs() < 0.3, "var {var}");
    }

    #[test]
    fn fixed_mode_draws_exactly_x() {
        let d0 = CoveringDistribution::uniform(4);
        let mut rng = stream(3, "per", 0);
        for x in [0, 1, 7, 100] {
            let set = draw_perturbation(&d0, 3, SizeMode::Fixed(x), &mut rng).unwrap();
            assert_eq!(set.total, x);
            assert_eq!(set.pairs().len(), x);
        }
    }

    #[test]
    fn labels_are_uniform_and_independent_of_states() {
        // Chi-square contingency test, df = (S-1)(A-1) = 8; the 0.999
        // quantile is 26.124. Also check the marginal label frequencies.
        let d0 = CoveringDistribution::exact_mixture(vec![0.4, 0.3, 0.15, 0.1, 0.05]).unwrap();
        let mut rng = stream(4, "per", 0);
        let set = draw_perturbation(&d0, 3, SizeMode::Fixed(60_000), &mut rng).unwrap();
        let mut table = [[0.0f64; 3]; 5];
        for (s, a) in set.pairs() {
            table[s][a] += 1.0;
        }
        let n = 60_000.0;
        let row: Vec<f64> = (0..5).map(|s| table[s].iter().sum()).collect();
        let col: Vec<f64> = (0..3).map(|a| (0..5).map(|s| table[s][a]).sum()).collect();
        let mut chi2 = 0.0;
        for s in 0..5 {
            for a in 0..3 {
                let expect = row[s] * col[a] / n;
                chi2 += (table[s][a] - expect) * (table[s][a] - expect) / expect;
            }
        }
        assert!(chi2 < 26.124, "chi2 = {chi2}");
        for a in 0..3 {
            let f = col[a] / n;
            assert!((f - 1.0 / 3.0).abs() < 0.01, "label {a}: {f}");
        }
    }

    #[test]
    fn label_mismatch_rate_is_a_minus_one_over_a() {
        // E[ [h(s) != a~] ] = (A-1)/A for any fixed h under uniform labels.
        let d0 = CoveringDistribution::uniform(6);
        let mut rng = stream(5, "per", 0);
        let class = FinitePolicyClass::random_tables(6, 4, 10, &mut rng);
        let set = draw_perturbation(&d0, 4, SizeMode::Fixed(100_000), &mut rng).unwrap();
        let errs = set.error_counts(&class).unwrap();
        for (i, &e) in errs.iter().enumerate() {
            let rate = e as f64 / set.total as f64;
            assert!((rate - 0.75).abs() < 0.01, "member {i}: {rate}");
        }
    }

    #[test]
    fn bias_bound_holds_on_small_case() {
        let d0 = CoveringDistribution::uniform(8);
        let mut rng = stream(6, "per", 0);
        let class = FinitePolicyClass::random_tables(8, 2, 16, &mut rng);
        let report = bias_bound_check(&d0, &class, 32.0, 1, 500, &mut rng).unwrap();
        assert!(report.holds(3.0), "mean {} vs bound {}", report.empirical_mean, report.bound);
        assert!(report.empirical_mean > 0.0, "max over members should be optimistic");
    }

    #[test]
    fn smoothness_ratio_on_uniform_covering() {
        // Deterministic policy visits one state per layer (3 of 6 states);
        // with a uniform covering the worst ratio is S/H = 2.
        let mdp = LayeredMdp::new(
            vec![2, 2, 2],
            2,
            vec![1.0, 0.0],
            vec![
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                Vec::new(),
                Vec::new(),
            ],
            vec![vec![0.0, 0.0]; 6],
            CostNoise::None,
        )
        .unwrap();
        let member = DeterministicPolicy::new(2, vec![0; 6]).unwrap();
        let class = Arc::new(FinitePolicyClass::new(vec![member]).unwrap());
        let d0 = CoveringDistribution::uniform(6);
        let mut rng = stream(7, "per", 0);
        let rep = smoothness_estimate(&mdp, &class, &d0, 5, &mut rng).unwrap();
        assert!(!rep.infinite);
        assert!((rep.inv_sigma - 2.0).abs() < 1e-12, "inv_sigma {}", rep.inv_sigma);
    }

    #[test]
    fn smoothness_flags_uncovered_states() {
        let mdp = LayeredMdp::chain(2, 1, 0.0).unwrap();
        let member = DeterministicPolicy::new(1, vec![0, 0]).unwrap();
        let class = Arc::new(FinitePolicyClass::new(vec![member]).unwrap());
        let d0 = CoveringDistribution::exact_mixture(vec![1.0, 0.0]).unwrap();
        let mut rng = stream(8, "per", 0);
        let rep = smoothness_estimate(&mdp, &class, &d0, 0, &mut rng).unwrap();
        assert!(rep.infinite);
        assert_eq!(rep.witness, Some((SmoothnessWitness::Member(0), 1)));
    }

    #[test]
    fn state_pool_pmf_uses_multiplicities() {
        let d0 = CoveringDistribution::state_pool(&[0, 0, 1, 2], 4).unwrap();
        assert_eq!(d0.pmf(), &[0.5, 0.25, 0.25, 0.0]);
    }
}
