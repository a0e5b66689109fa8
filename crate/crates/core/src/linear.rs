//! Linear policies and a clipped linear tracking environment.
//!
//! This is the desk-scale stand-in for continuous-control benchmarks: states
//! evolve as `x' = A x + B u + noise` inside a clip box, actions live in
//! `[-1, 1]` per coordinate, and the per-step cost is the squared tracking
//! error mapped into `[0, 1]`. Everything analytic stays over in the tabular
//! stack; this environment is simulation-only.

use crate::error::Error;
use crate::rng::Rng;
use crate::Result;
use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;

fn clip_unit(v: &mut [f64]) {
    for x in v {
        *x = x.clamp(-1.0, 1.0);
    }
}

/// Maps states to actions by `clip(W x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    w: DMatrix<f64>, // action_dim x state_dim
}

impl LinearPolicy {
    pub fn zeros(state_dim: usize, action_dim: usize) -> Result<Self> {
        Ok(Self { w: DMatrix::zeros(action_dim, state_dim) })
    }

    pub fn from_matrix(w: DMatrix<f64>) -> Result<Self> {
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("non-finite policy weights".into()));
        }
        Ok(Self { w })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let action_dim = rows.len();
        let state_dim = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != state_dim) {
            return Err(Error::DimensionMismatch("ragged weight rows".into()));
        }
        Self::from_matrix(DMatrix::from_fn(action_dim, state_dim, |i, j| rows[i][j]))
    }

    pub fn state_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn action_dim(&self) -> usize {
        self.w.nrows()
    }

    /// `W x` without clipping; what least squares fits against.
    pub fn raw_output(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.w.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "state dim {} != {}",
                x.len(),
                self.w.ncols()
            )));
        }
        let mut out = vec![0.0; self.w.nrows()];
        for i in 0..self.w.nrows() {
            out[i] = (0..self.w.ncols()).map(|j| self.w[(i, j)] * x[j]).sum();
        }
        Ok(out)
    }

    pub fn weights_row_major(&self) -> Vec<f64> {
        (0..self.w.nrows()).flat_map(|i| (0..self.w.ncols()).map(move |j| self.w[(i, j)])).collect()
    }
}

/// Continuous policies: state vector in, action in `[-1, 1]^q` out.
pub trait ContinuousPolicy {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn action(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl ContinuousPolicy for LinearPolicy {
    fn state_dim(&self) -> usize {
        self.w.ncols()
    }
    fn action_dim(&self) -> usize {
        self.w.nrows()
    }
    fn action(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.raw_output(x)?;
        clip_unit(&mut out);
        Ok(out)
    }
}

impl<T: ContinuousPolicy + ?Sized> ContinuousPolicy for &T {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn action_dim(&self) -> usize {
        (**self).action_dim()
    }
    fn action(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).action(x)
    }
}

/// Coordinate-wise mean of the members' clipped actions (bagging).
pub fn ensemble_mean(members: &[LinearPolicy], x: &[f64]) -> Result<Vec<f64>> {
    let first = members
        .first()
        .ok_or_else(|| Error::InvalidConfig("ensemble needs at least one member".into()))?;
    let mut mean = vec![0.0; first.action_dim()];
    for m in members {
        let a = m.action(x)?;
        for (acc, v) in mean.iter_mut().zip(a) {
            *acc += v;
        }
    }
    let e = members.len() as f64;
    for v in &mut mean {
        *v /= e;
    }
    Ok(mean)
}

/// Ensemble evaluated by its mean action.
#[derive(Debug, Clone)]
pub struct BaggedLinearPolicy {
    pub members: Vec<LinearPolicy>,
}

impl ContinuousPolicy for BaggedLinearPolicy {
    fn state_dim(&self) -> usize {
        self.members[0].state_dim()
    }
    fn action_dim(&self) -> usize {
        self.members[0].action_dim()
    }
    fn action(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensemble_mean(&self.members, x)
    }
}

/// Expert for the continuous stack: executes its clipped linear map, and
/// labels queries with optional Gaussian annotation noise drawn fresh per
/// query. Noise never affects the executed action.
#[derive(Debug, Clone)]
pub struct LinearExpert {
    pub policy: LinearPolicy,
    pub annotation_noise: f64,
}

impl LinearExpert {
    pub fn annotate(&self, x: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        let mut y = self.policy.raw_output(x)?;
        if self.annotation_noise > 0.0 {
            for v in &mut y {
                let z: f64 = rng.sample(StandardNormal);
                *v += self.annotation_noise * z;
            }
        }
        Ok(y)
    }
}

impl ContinuousPolicy for LinearExpert {
    fn state_dim(&self) -> usize {
        self.policy.state_dim()
    }
    fn action_dim(&self) -> usize {
        self.policy.action_dim()
    }
    fn action(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.policy.action(x)
    }
}

/// Clipped linear dynamics with tracking cost.
#[derive(Debug, Clone)]
pub struct LinearEnv {
    pub horizon: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Std-dev of the per-coordinate process noise.
    pub process_noise: f64,
    /// Std-dev of the initial state.
    pub init_scale: f64,
    /// States are clipped to `[-state_clip, state_clip]` per coordinate.
    pub state_clip: f64,
    /// `cost = min(1, ||x||^2 / (d * cost_scale^2))`.
    pub cost_scale: f64,
}

impl LinearEnv {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Mildly unstable rotation dynamics with `B = I`; the expert gain
    /// `-0.85 A` keeps tracking error small, so imitating it is worthwhile.
    pub fn tracking(state_dim: usize, horizon: usize) -> (Self, LinearExpert) {
        let mut a = DMatrix::zeros(state_dim, state_dim);
        for i in 0..state_dim {
            a[(i, i)] = 1.02;
        }
        for i in 0..state_dim.saturating_sub(1) {
            a[(i, i + 1)] = 0.1;
            a[(i + 1, i)] = -0.1;
        }
        let env = Self {
            horizon,
            b: DMatrix::identity(state_dim, state_dim),
            a: a.clone(),
            process_noise: 0.02,
            init_scale: 0.3,
            state_clip: 2.0,
            cost_scale: 0.5,
        };
        let expert = LinearExpert {
            policy: LinearPolicy::from_matrix(-0.85 * a).unwrap(),
            annotation_noise: 0.0,
        };
        (env, expert)
    }

    pub fn cost(&self, x: &[f64]) -> f64 {
        let sq: f64 = x.iter().map(|v| v * v).sum();
        (sq / (self.state_dim() as f64 * self.cost_scale * self.cost_scale)).min(1.0)
    }

    pub fn initial_state(&self, rng: &mut Rng) -> Vec<f64> {
        let mut x: Vec<f64> = (0..self.state_dim())
            .map(|_| self.init_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        for v in &mut x {
            *v = v.clamp(-self.state_clip, self.state_clip);
        }
        x
    }

    pub fn step(&self, x: &[f64], u: &[f64], rng: &mut Rng) -> Vec<f64> {
        let d = self.state_dim();
        let mut next = vec![0.0; d];
        for i in 0..d {
            let mut v: f64 = (0..d).map(|j| self.a[(i, j)] * x[j]).sum();
            v += (0..self.action_dim()).map(|j| self.b[(i, j)] * u[j]).sum::<f64>();
            if self.process_noise > 0.0 {
                v += self.process_noise * rng.sample::<f64, _>(StandardNormal);
            }
            next[i] = v.clamp(-self.state_clip, self.state_clip);
        }
        next
    }

    /// One episode; returns visited states and the total cost.
    pub fn rollout<P: ContinuousPolicy>(
        &self,
        policy: &P,
        rng: &mut Rng,
    ) -> Result<(Vec<Vec<f64>>, f64)> {
        let mut x = self.initial_state(rng);
        let mut states = Vec::with_capacity(self.horizon);
        let mut total = 0.0;
        for t in 0..self.horizon {
            total += self.cost(&x);
            states.push(x.clone());
            if t + 1 < self.horizon {
                let u = policy.action(&x)?;
                x = self.step(&x, &u, rng);
            }
        }
        Ok((states, total))
    }

    /// Mean episode cost and its standard error over `n` episodes.
    pub fn mc_cost<P: ContinuousPolicy>(
        &self,
        policy: &P,
        n: usize,
        rng: &mut Rng,
    ) -> Result<(f64, f64)> {
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let (_, c) = self.rollout(policy, rng)?;
            sum += c;
            sumsq += c * c;
        }
        let mean = sum / n as f64;
        let var = (sumsq / n as f64 - mean * mean).max(0.0);
        Ok((mean, (var / n as f64).sqrt()))
    }

    /// Draws `k` states from the policy's visitation distribution, one per
    /// episode at a uniform layer (`exact_iid`) or sliced from episodes.
    pub fn visitation_states<P: ContinuousPolicy>(
        &self,
        policy: &P,
        k: usize,
        exact_iid: bool,
        rng: &mut Rng,
    ) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(k);
        if exact_iid {
            for _ in 0..k {
                let t = rng.gen_range(0..self.horizon);
                let mut x = self.initial_state(rng);
                for _ in 0..t {
                    let u = policy.action(&x)?;
                    x = self.step(&x, &u, rng);
                }
                out.push(x);
            }
        } else {
            while out.len() < k {
                let (states, _) = self.rollout(policy, rng)?;
                for x in states {
                    out.push(x);
                    if out.len() == k {
                        break;
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn actions_are_clipped() {
        let p = LinearPolicy::from_rows(&[vec![10.0, 0.0], vec![0.0, -10.0]]).unwrap();
        let a = p.action(&[1.0, 1.0]).unwrap();
        assert_eq!(a, vec![1.0, -1.0]);
    }

    #[test]
    fn ensemble_mean_averages_clipped_outputs() {
        let p1 = LinearPolicy::from_rows(&[vec![10.0]]).unwrap(); // clips to 1
        let p2 = LinearPolicy::from_rows(&[vec![-0.5]]).unwrap();
        let mean = ensemble_mean(&[p1, p2], &[1.0]).unwrap();
        assert!((mean[0] - 0.25).abs() < 1e-15); // (1 + -0.5) / 2
    }

    #[test]
    fn expert_outperforms_zero_policy() {
        let (env, expert) = LinearEnv::tracking(2, 10);
        let zero = LinearPolicy::zeros(2, 2).unwrap();
        let mut rng = stream(1, "lin", 0);
        let (j_exp, _) = env.mc_cost(&expert, 2000, &mut rng).unwrap();
        let (j_zero, _) = env.mc_cost(&zero, 2000, &mut rng).unwrap();
        assert!(j_exp < j_zero, "expert {j_exp} vs zero {j_zero}");
    }

    #[test]
    fn costs_stay_in_unit_interval() {
        let (env, expert) = LinearEnv::tracking(3, 8);
        let mut rng = stream(2, "lin", 0);
        for _ in 0..200 {
            let (states, total) = env.rollout(&expert, &mut rng).unwrap();
            assert!(total >= 0.0 && total <= env.horizon as f64);
            for x in states {
                for v in x {
                    assert!(v.abs() <= env.state_clip);
                }
            }
        }
    }

    #[test]
    fn annotation_noise_is_unbiased() {
        let expert = LinearExpert {
            policy: LinearPolicy::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap(),
            annotation_noise: 0.3,
        };
        let x = [0.4, -0.8];
        let clean = expert.policy.raw_output(&x).unwrap();
        let mut rng = stream(3, "lin", 0);
        let n = 50_000;
        let mut mean = [0.0f64; 2];
        for _ in 0..n {
            let y = expert.annotate(&x, &mut rng).unwrap();
            mean[0] += y[0];
            mean[1] += y[1];
        }
        for j in 0..2 {
            mean[j] /= n as f64;
            let se = 0.3 / (n as f64).sqrt();
            assert!((mean[j] - clean[j]).abs() < 4.0 * se, "coord {j}");
        }
    }

    #[test]
    fn visitation_sampler_returns_k_states() {
        let (env, expert) = LinearEnv::tracking(2, 6);
        let mut rng = stream(4, "lin", 0);
        for exact in [true, false] {
            let states = env.visitation_states(&expert, 13, exact, &mut rng).unwrap();
            assert_eq!(states.len(), 13);
        }
    }
}
