//! Exact reference quantities on enumerable models: stationary laws, value
//! functions, the linear critic fixed point and the expected actor update.

use nalgebra::{Complex, DMatrix, DVector};

use crate::envs::{ExactModel, Jommdp};
use crate::error::{Error, Result};
use crate::funcapprox::{Approximator as _, FeatureMap, SoftmaxPolicy};

/// Residual tolerance of the stationary law.
pub const STATIONARY_TOL: f64 = 1e-12;
/// Residual tolerance of the critic fixed point.
pub const FIXED_POINT_TOL: f64 = 1e-10;

fn check_stochastic(p: &DMatrix<f64>) -> Result<()> {
    if !p.is_square() || p.nrows() == 0 {
        return Err(Error::arg("transition matrix must be square and non-empty"));
    }
    for (r, row) in p.row_iter().enumerate() {
        if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || (row.sum() - 1.0).abs() > 1e-10 {
            return Err(Error::Model(format!("row {r} is not a probability vector")));
        }
    }
    Ok(())
}

fn stationary_residual(p: &DMatrix<f64>, d: &DVector<f64>) -> f64 {
    (p.tr_mul(d) - d).amax()
}

/// The unique `d` with `d P = d`, `Σ d = 1`.
///
/// Solved directly from the null space of `Pᵀ - I`; power iteration takes
/// over if the direct solution misses the residual tolerance.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_stochastic(p)?;
    let n = p.nrows();
    let mut m = p.transpose() - DMatrix::identity(n, n);
    let sv = m.clone().svd(false, false).singular_values;
    let nullity = sv.iter().filter(|&&x| x <= 1e-10 * n as f64).count();
    if nullity > 1 {
        return Err(Error::Model(format!(
            "reducible chain: unit eigenvalue with multiplicity {nullity}"
        )));
    }
    m.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    if let Some(d) = m.lu().solve(&rhs) {
        let d = d.map(|x| if x < 0.0 && x > -1e-15 { 0.0 } else { x });
        if d.iter().all(|&x| x >= 0.0) && stationary_residual(p, &d) <= STATIONARY_TOL {
            return Ok(d);
        }
    }
    power_iteration(p, STATIONARY_TOL, 1_000_000)
}

pub fn power_iteration(p: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<DVector<f64>> {
    check_stochastic(p)?;
    let n = p.nrows();
    let mut d = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..max_iter {
        let mut next = p.tr_mul(&d);
        next /= next.sum();
        let change = (&next - &d).amax();
        d = next;
        if change <= tol * 0.1 && stationary_residual(p, &d) <= tol {
            return Ok(d);
        }
    }
    Err(Error::Model("power iteration did not converge".into()))
}

/// `Φ` over global states: row `s` is `φ(s^agent)` for a local map, or
/// `φ(s)` when `agent` is `None`.
pub fn feature_matrix(model: &ExactModel, agent: Option<usize>, features: &FeatureMap) -> Result<DMatrix<f64>> {
    let ns = model.n_states();
    let mut phi = DMatrix::zeros(ns, features.dim());
    for s in 0..ns {
        let idx = match agent {
            Some(i) => model.states.decode(s)[i],
            None => s,
        };
        for (k, x) in features.eval(idx)?.iter().enumerate() {
            phi[(s, k)] = *x;
        }
    }
    Ok(phi)
}

fn rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let tol = sv.amax() * 1e-10 * m.nrows().max(m.ncols()) as f64;
    sv.iter().filter(|&&x| x > tol).count()
}

/// Solves `Φᵀ D (γP - I) Φ v = -Φᵀ D r` for the linear critic's limit.
pub fn critic_fixed_point(model: &ExactModel, phi: &DMatrix<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
    let ns = model.n_states();
    if phi.nrows() != ns || r.len() != ns {
        return Err(Error::arg("feature matrix or reward vector has the wrong size"));
    }
    if rank(phi) < phi.ncols() {
        return Err(Error::Rank("feature matrix lacks full column rank".into()));
    }
    let dmat = DMatrix::from_diagonal(&model.d);
    let a = phi.transpose() * &dmat * (model.gamma * &model.p - DMatrix::identity(ns, ns)) * phi;
    let b = -(phi.transpose() * &dmat * r);
    if rank(&a) < a.ncols() {
        return Err(Error::Rank("critic system is singular".into()));
    }
    let v = a
        .clone()
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Rank("critic system is singular".into()))?;
    let resid = (&a * &v - &b).amax();
    if resid > FIXED_POINT_TOL * b.amax().max(1.0) {
        return Err(Error::Rank(format!("fixed point residual {resid:e}")));
    }
    Ok(v)
}

/// `(I - γP)⁻¹ r`.
pub fn true_values(model: &ExactModel, r: &DVector<f64>) -> Result<DVector<f64>> {
    let ns = model.n_states();
    (DMatrix::identity(ns, ns) - model.gamma * &model.p)
        .lu()
        .solve(r)
        .ok_or_else(|| Error::Numeric("I - γP is singular".into()))
}

pub fn value_iteration(model: &ExactModel, r: &DVector<f64>, tol: f64) -> DVector<f64> {
    let mut v = DVector::zeros(model.n_states());
    loop {
        let next = r + model.gamma * &model.p * &v;
        let change = (&next - &v).amax();
        v = next;
        if change <= tol * (1.0 - model.gamma) {
            return v;
        }
    }
}

/// Eigenvalues of `D (γP - I)`.
pub fn critic_eigenvalues(model: &ExactModel) -> Vec<Complex<f64>> {
    let ns = model.n_states();
    let m = DMatrix::from_diagonal(&model.d) * (model.gamma * &model.p - DMatrix::identity(ns, ns));
    m.complex_eigenvalues().iter().copied().collect()
}

/// Critic values per global state, one vector per agent, from fixed points
/// on the given features (`None` agent: global-state features).
pub fn critic_values(model: &ExactModel, local: bool, features: &[FeatureMap]) -> Result<Vec<DVector<f64>>> {
    features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let phi = feature_matrix(model, local.then_some(i), f)?;
            let v = critic_fixed_point(model, &phi, &model.r_hat[i])?;
            Ok(phi * v)
        })
        .collect()
}

/// True private values per global state, one vector per agent.
pub fn private_true_values(model: &ExactModel) -> Result<Vec<DVector<f64>>> {
    model.r_hat.iter().map(|r| true_values(model, r)).collect()
}

fn check_policies<E: Jommdp + ?Sized>(env: &E, policies: &[SoftmaxPolicy], model: &ExactModel) -> Result<()> {
    if policies.len() != env.n_agents() {
        return Err(Error::arg("one policy per agent"));
    }
    if model.n_states() != model.states.len() {
        return Err(Error::arg("model does not match its state space"));
    }
    Ok(())
}

/// `E_{d, π, P}[ f(s, a, s') · ∇_{θ^i} log π^i(a^i | s^i) ]` for every agent.
pub fn expected_score_product<E: Jommdp + ?Sized>(
    env: &E,
    policies: &[SoftmaxPolicy],
    model: &ExactModel,
    f: impl Fn(usize, usize, usize, &[f64]) -> f64,
) -> Result<Vec<Vec<f64>>> {
    check_policies(env, policies, model)?;
    let ns = model.n_states();
    let na = model.actions.len();
    let mut grads: Vec<Vec<f64>> = policies.iter().map(|p| vec![0.0; p.params().len()]).collect();
    for si in 0..ns {
        let s = model.states.decode(si);
        for ai in 0..na {
            let w = model.d[si] * model.pi[(si, ai)];
            if w == 0.0 {
                continue;
            }
            let a = model.actions.decode(ai);
            let mut g = 0.0;
            for sj in 0..ns {
                let s2 = model.states.decode(sj);
                let q = env.transition_prob(&s, &a, &s2)?;
                if q == 0.0 {
                    continue;
                }
                let r = env.rewards(&s, &a, &s2)?;
                g += q * f(si, ai, sj, &r);
            }
            if g == 0.0 {
                continue;
            }
            for (i, p) in policies.iter().enumerate() {
                for (acc, x) in grads[i].iter_mut().zip(p.score(s[i], a[i])?) {
                    *acc += w * g * x;
                }
            }
        }
    }
    Ok(grads)
}

/// Team-average TD error of a transition under per-agent value tables.
pub fn team_td(gamma: f64, values: &[DVector<f64>], s: usize, s_next: usize, r: &[f64]) -> f64 {
    let n = values.len() as f64;
    values
        .iter()
        .zip(r)
        .map(|(v, ri)| ri + gamma * v[s_next] - v[s])
        .sum::<f64>()
        / n
}

/// Expected actor update direction `E[δ · ∇ log π^i]` with `δ` the team
/// average TD error under the given value tables (global-state indexed).
/// With the true values this is the policy gradient of the team objective
/// in its stationary-distribution form.
pub fn exact_policy_gradient<E: Jommdp + ?Sized>(
    env: &E,
    policies: &[SoftmaxPolicy],
    model: &ExactModel,
    values: &[DVector<f64>],
) -> Result<Vec<Vec<f64>>> {
    if values.len() != env.n_agents() {
        return Err(Error::arg("one value table per agent"));
    }
    expected_score_product(env, policies, model, |s, _, s2, r| team_td(model.gamma, values, s, s2, r))
}

/// The two pieces by which approximate critics shift the expected actor
/// update away from the exact gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasTerms {
    /// From `γ (V^j(s'; v) - V^j_π(s'))`.
    pub next_state: Vec<Vec<f64>>,
    /// From `V^j_π(s) - V^j(s; v)`.
    pub current_state: Vec<Vec<f64>>,
}

impl BiasTerms {
    pub fn total(&self) -> Vec<Vec<f64>> {
        self.next_state
            .iter()
            .zip(&self.current_state)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect()
    }
}

pub fn bias_terms<E: Jommdp + ?Sized>(
    env: &E,
    policies: &[SoftmaxPolicy],
    model: &ExactModel,
    critic: &[DVector<f64>],
    truth: &[DVector<f64>],
) -> Result<BiasTerms> {
    let n = env.n_agents() as f64;
    let g = model.gamma;
    let next_state = expected_score_product(env, policies, model, |_, _, s2, _| {
        critic.iter().zip(truth).map(|(v, t)| g * (v[s2] - t[s2])).sum::<f64>() / n
    })?;
    let current_state = expected_score_product(env, policies, model, |s, _, _, _| {
        critic.iter().zip(truth).map(|(v, t)| t[s] - v[s]).sum::<f64>() / n
    })?;
    Ok(BiasTerms {
        next_state,
        current_state,
    })
}

/// The objective whose gradient at the current policy equals the expected
/// actor update: state law and TD advantages frozen at the current policy,
/// only the action probabilities vary.
#[derive(Debug, Clone)]
pub struct FrozenSurrogate {
    d: DVector<f64>,
    /// `adv[(s, a)] = E_{s'}[δ(s, a, s')]`.
    adv: DMatrix<f64>,
    model_states: crate::envs::Radix,
    model_actions: crate::envs::Radix,
}

impl FrozenSurrogate {
    pub fn new<E: Jommdp + ?Sized>(env: &E, model: &ExactModel, values: &[DVector<f64>]) -> Result<Self> {
        let ns = model.n_states();
        let na = model.actions.len();
        let mut adv = DMatrix::zeros(ns, na);
        for si in 0..ns {
            let s = model.states.decode(si);
            for ai in 0..na {
                let a = model.actions.decode(ai);
                for sj in 0..ns {
                    let s2 = model.states.decode(sj);
                    let q = env.transition_prob(&s, &a, &s2)?;
                    if q > 0.0 {
                        let r = env.rewards(&s, &a, &s2)?;
                        adv[(si, ai)] += q * team_td(model.gamma, values, si, sj, &r);
                    }
                }
            }
        }
        Ok(FrozenSurrogate {
            d: model.d.clone(),
            adv,
            model_states: model.states.clone(),
            model_actions: model.actions.clone(),
        })
    }

    /// `Σ_s d(s) Σ_a π'(a | s) adv(s, a)` under the candidate policies.
    pub fn value(&self, policies: &[SoftmaxPolicy]) -> Result<f64> {
        let mut total = 0.0;
        for si in 0..self.d.len() {
            let s = self.model_states.decode(si);
            let probs: Vec<Vec<f64>> = policies
                .iter()
                .zip(&s)
                .map(|(p, &x)| p.probs(x))
                .collect::<Result<_>>()?;
            for ai in 0..self.adv.ncols() {
                let a = self.model_actions.decode(ai);
                let pa: f64 = a.iter().enumerate().map(|(i, &x)| probs[i][x]).product();
                total += self.d[si] * pa * self.adv[(si, ai)];
            }
        }
        Ok(total)
    }
}

/// `Σ_s d(s) V̄(s)`: the stationary average of the team-average value.
pub fn team_objective(model: &ExactModel) -> Result<f64> {
    Ok(model.d.dot(&true_values(model, &model.r_bar)?))
}

/// Team-average values of every deterministic joint policy over global
/// states, as `(policy, values)` with `policy[s]` the joint action index.
pub fn deterministic_policy_values<E: Jommdp + ?Sized>(env: &E, capacity: usize) -> Result<Vec<(Vec<usize>, DVector<f64>)>> {
    let n = env.n_agents();
    let states = crate::envs::Radix::new((0..n).map(|i| env.n_local_states(i)).collect());
    let actions = crate::envs::Radix::new((0..n).map(|i| env.n_local_actions(i)).collect());
    let (ns, na) = (states.len(), actions.len());
    let count = (na as f64).powi(ns as i32);
    if count > capacity as f64 {
        return Err(Error::Capacity(format!("{count} deterministic policies")));
    }
    let mut out = Vec::new();
    for k in 0..count as usize {
        let choice = crate::envs::Radix::new(vec![na; ns]).decode(k);
        let mut p = DMatrix::zeros(ns, ns);
        let mut r = DVector::zeros(ns);
        for si in 0..ns {
            let s = states.decode(si);
            let a = actions.decode(choice[si]);
            for sj in 0..ns {
                let s2 = states.decode(sj);
                let q = env.transition_prob(&s, &a, &s2)?;
                p[(si, sj)] += q;
                r[si] += q * env.rewards(&s, &a, &s2)?.iter().sum::<f64>() / n as f64;
            }
        }
        let v = (DMatrix::identity(ns, ns) - env.gamma() * p)
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::Numeric("singular evaluation system".into()))?;
        out.push((choice, v));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{enumerate, CoupledLine, DEFAULT_CAPACITY};

    fn micro_uniform() -> (CoupledLine, Vec<SoftmaxPolicy>, ExactModel) {
        let env = CoupledLine::micro();
        let pols = vec![SoftmaxPolicy::tabular(2, 2).unwrap(); 2];
        let m = enumerate(&env, &pols, DEFAULT_CAPACITY).unwrap();
        (env, pols, m)
    }

    #[test]
    fn two_state_chain_and_reducible_chain() {
        let p = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.3, 0.7]);
        let d = stationary_distribution(&p).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-15 && (d[1] - 0.5).abs() < 1e-15);
        assert!(matches!(
            stationary_distribution(&DMatrix::identity(3, 3)),
            Err(Error::Model(_))
        ));
    }

    #[test]
    fn fixed_point_tabular_cases() {
        let (_, _, mut m) = micro_uniform();
        let phi = DMatrix::identity(4, 4);
        let v = critic_fixed_point(&m, &phi, &m.r_hat[0]).unwrap();
        let t = true_values(&m, &m.r_hat[0]).unwrap();
        let vi = value_iteration(&m, &m.r_hat[0], 1e-13);
        assert!((&v - &t).amax() < 1e-10 && (&t - &vi).amax() < 1e-10);

        m.gamma = 0.0;
        let v0 = critic_fixed_point(&m, &phi, &m.r_hat[0]).unwrap();
        assert!((&v0 - &m.r_hat[0]).amax() < 1e-14);

        let dup = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(matches!(critic_fixed_point(&m, &dup, &m.r_hat[0]), Err(Error::Rank(_))));
    }

    #[test]
    fn critic_matrix_is_stable() {
        let (_, _, m) = micro_uniform();
        assert!(critic_eigenvalues(&m).iter().all(|z| z.re <= -1e-6));
    }

    #[test]
    fn global_critics_carry_no_bias() {
        let (env, pols, m) = micro_uniform();
        let truth = private_true_values(&m).unwrap();
        let feats = vec![FeatureMap::tabular(4); 2];
        let critic = critic_values(&m, false, &feats).unwrap();
        let b = bias_terms(&env, &pols, &m, &critic, &truth).unwrap();
        assert!(b.total().iter().flatten().all(|x| x.abs() <= 1e-10));
    }

    #[test]
    fn all_ones_is_optimal_on_micro() {
        let env = CoupledLine::micro();
        let all = deterministic_policy_values(&env, DEFAULT_CAPACITY).unwrap();
        let ones = vec![3; 4];
        let best = &all.iter().find(|(p, _)| *p == ones).unwrap().1;
        for (p, v) in &all {
            assert!(v.iter().zip(best.iter()).all(|(a, b)| *a <= b + 1e-12), "{p:?}");
        }
    }

    #[test]
    fn surrogate_gradient_matches_expected_update() {
        let (env, mut pols, _) = micro_uniform();
        pols[0].set_params(&[0.3, -0.2, 0.1, 0.4]).unwrap();
        pols[1].set_params(&[-0.5, 0.2, 0.0, 0.7]).unwrap();
        let m = enumerate(&env, &pols, DEFAULT_CAPACITY).unwrap();
        let truth = private_true_values(&m).unwrap();
        let g = exact_policy_gradient(&env, &pols, &m, &truth).unwrap();
        let sur = FrozenSurrogate::new(&env, &m, &truth).unwrap();
        for i in 0..2 {
            let fd = crate::funcapprox::central_difference(pols[i].params(), 1e-5, |x| {
                let mut q = pols.clone();
                q[i].set_params(x).unwrap();
                sur.value(&q).unwrap()
            });
            assert!(crate::funcapprox::max_relative_error(&g[i], &fd) <= 1e-4, "{:?} {fd:?}", g[i]);
        }
    }
}
