//! Finite-MDP representation and exact solvers.
//!
//! This module is the ground-truth oracle for everything else in the crate:
//! policy evaluation is done by solving the dense linear system
//! `(I - gamma * P_pi) Q = r` of size |S||A|, and occupancy measures by the
//! adjoint system `d = (1 - gamma) * mu + gamma * P_pi^T d`. Both the true
//! environment and learned models share [`TabularMdp`].
//!
//! Sizes are capped at |S||A| <= 10_000: the point of the crate is exact
//! verification at desk scale, not scalability.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::{CoreError, Result};

/// Tolerance under which probability rows are silently renormalized; larger
/// deviations are rejected so data bugs are not hidden.
const ROW_SUM_TOL: f64 = 1e-9;

/// Hard cap on the state-action space for dense solves.
pub const MAX_STATE_ACTIONS: usize = 10_000;

fn validate_simplex_row(row: &mut [f64], context: &str) -> Result<()> {
    let mut sum = 0.0;
    for (i, p) in row.iter().enumerate() {
        if !p.is_finite() || *p < 0.0 {
            return Err(CoreError::InvalidDistribution {
                context: context.to_string(),
                detail: format!("entry {i} is {p}"),
            });
        }
        sum += *p;
    }
    if (sum - 1.0).abs() >= ROW_SUM_TOL {
        return Err(CoreError::InvalidDistribution {
            context: context.to_string(),
            detail: format!("row sums to {sum}, deviation exceeds {ROW_SUM_TOL}"),
        });
    }
    // Rows already within ulps of one are left untouched so that text
    // round-trips stay bit-exact.
    if (sum - 1.0).abs() > 1e-13 {
        for p in row.iter_mut() {
            *p /= sum;
        }
    }
    Ok(())
}

// ── Domain types ─────────────────────────────────────────────────────────

/// A finite MDP `(S, A, T, r, mu, gamma)` with dense transition tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// `T[s][a][s']`, row-major.
    transition: Vec<f64>,
    /// `r[s][a]`.
    reward: Vec<f64>,
    /// Initial state distribution `mu[s]`.
    initial_dist: Vec<f64>,
    gamma: f64,
}

impl TabularMdp {
    /// Build and validate an MDP. Probability rows within `1e-9` of summing
    /// to one are renormalized; anything worse is an error.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        mut transition: Vec<f64>,
        reward: Vec<f64>,
        mut initial_dist: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(CoreError::ShapeMismatch("empty state or action space".into()));
        }
        if n_states * n_actions > MAX_STATE_ACTIONS {
            return Err(CoreError::ShapeMismatch(format!(
                "|S||A| = {} exceeds cap {MAX_STATE_ACTIONS}",
                n_states * n_actions
            )));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(CoreError::ShapeMismatch("transition tensor size".into()));
        }
        if reward.len() != n_states * n_actions {
            return Err(CoreError::ShapeMismatch("reward matrix size".into()));
        }
        if initial_dist.len() != n_states {
            return Err(CoreError::ShapeMismatch("initial distribution size".into()));
        }
        if !(gamma >= 0.0 && gamma < 1.0) {
            return Err(CoreError::Degenerate(format!("gamma = {gamma} not in [0,1)")));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(CoreError::Degenerate("non-finite reward".into()));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let base = (s * n_actions + a) * n_states;
                validate_simplex_row(
                    &mut transition[base..base + n_states],
                    &format!("T[{s}][{a}]"),
                )?;
            }
        }
        validate_simplex_row(&mut initial_dist, "mu")?;
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            initial_dist,
            gamma,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `T(s' | s, a)`.
    pub fn t(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + s_next]
    }

    /// Transition row `T(. | s, a)`.
    pub fn t_row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.transition[base..base + self.n_states]
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn reward(&self) -> &[f64] {
        &self.reward
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Replace the reward matrix, keeping dynamics. Used by reward-penalty
    /// baselines and by calibration checks that evaluate virtual dynamics
    /// under a shared reward.
    pub fn with_reward(&self, reward: Vec<f64>) -> Result<Self> {
        if reward.len() != self.n_states * self.n_actions {
            return Err(CoreError::ShapeMismatch("reward matrix size".into()));
        }
        let mut out = self.clone();
        out.reward = reward;
        Ok(out)
    }

    /// State-action transition matrix `P_pi[(s,a),(s',a')] = T(s'|s,a) pi(a'|s')`.
    fn transition_matrix(&self, policy: &PolicyTable) -> DMatrix<f64> {
        let n = self.n_states * self.n_actions;
        let mut p = DMatrix::zeros(n, n);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = s * self.n_actions + a;
                for s2 in 0..self.n_states {
                    let t = self.t(s, a, s2);
                    if t == 0.0 {
                        continue;
                    }
                    for a2 in 0..self.n_actions {
                        p[(row, s2 * self.n_actions + a2)] = t * policy.p(s2, a2);
                    }
                }
            }
        }
        p
    }

    fn check_policy_shape(&self, policy: &PolicyTable) -> Result<()> {
        if policy.n_states() != self.n_states || policy.n_actions() != self.n_actions {
            return Err(CoreError::ShapeMismatch("policy shape vs MDP".into()));
        }
        Ok(())
    }
}

/// A stochastic tabular policy `pi(a|s)`; also used for the behavior policy
/// and the f-interpolated policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl PolicyTable {
    pub fn new(n_states: usize, n_actions: usize, mut probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(CoreError::ShapeMismatch("policy matrix size".into()));
        }
        for s in 0..n_states {
            validate_simplex_row(
                &mut probs[s * n_actions..(s + 1) * n_actions],
                &format!("pi[{s}]"),
            )?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Deterministic policy from an action per state.
    pub fn deterministic(n_states: usize, n_actions: usize, actions: &[usize]) -> Result<Self> {
        if actions.len() != n_states {
            return Err(CoreError::ShapeMismatch("one action per state required".into()));
        }
        let mut probs = vec![0.0; n_states * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(CoreError::InvalidRecord(format!("action {a} out of range")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// `pi(a|s)`.
    pub fn p(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Entrywise mixture `w * self + (1 - w) * other`, row-stochastic by
    /// construction.
    pub fn mix(&self, other: &PolicyTable, w: f64) -> Result<PolicyTable> {
        if self.n_states != other.n_states || self.n_actions != other.n_actions {
            return Err(CoreError::ShapeMismatch("policy mixture shapes".into()));
        }
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| w * a + (1.0 - w) * b)
            .collect();
        PolicyTable::new(self.n_states, self.n_actions, probs)
    }

    pub fn max_abs_diff(&self, other: &PolicyTable) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Action-value table `Q[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn new(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(CoreError::ShapeMismatch("Q table size".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `V[s] = sum_a pi(a|s) Q[s][a]`.
    pub fn state_values(&self, policy: &PolicyTable) -> Vec<f64> {
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| policy.p(s, a) * self.get(s, a))
                    .sum()
            })
            .collect()
    }

    /// Expectation of the table under `mu(s) pi(a|s)`.
    pub fn expectation_under(&self, mu: &[f64], policy: &PolicyTable) -> f64 {
        let mut acc = 0.0;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                acc += mu[s] * policy.p(s, a) * self.get(s, a);
            }
        }
        acc
    }
}

/// Normalized discounted state-action visitation mass.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyVector {
    n_states: usize,
    n_actions: usize,
    mass: Vec<f64>,
}

impl OccupancyVector {
    pub fn new(n_states: usize, n_actions: usize, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != n_states * n_actions {
            return Err(CoreError::ShapeMismatch("occupancy size".into()));
        }
        let sum: f64 = mass.iter().sum();
        if mass.iter().any(|m| !m.is_finite() || *m < 0.0) || (sum - 1.0).abs() >= 1e-10 {
            return Err(CoreError::InvalidDistribution {
                context: "occupancy".into(),
                detail: format!("mass sums to {sum}"),
            });
        }
        Ok(Self {
            n_states,
            n_actions,
            mass,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.mass[s * self.n_actions + a]
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn state_marginal(&self) -> Vec<f64> {
        (0..self.n_states)
            .map(|s| self.mass[s * self.n_actions..(s + 1) * self.n_actions].iter().sum())
            .collect()
    }

    /// `sum_{s,a} w(s,a) q(s,a)`.
    pub fn expectation(&self, q: &QTable) -> f64 {
        self.mass.iter().zip(q.values()).map(|(w, v)| w * v).sum()
    }

    pub fn total_variation(&self, other: &OccupancyVector) -> f64 {
        0.5 * self
            .mass
            .iter()
            .zip(&other.mass)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Concentration constants used by the bound checkers.
#[derive(Debug, Clone, Copy)]
pub struct BoundConstants {
    /// Reward bound `R_max`.
    pub r_max: f64,
    /// Reward concentration constant `C_{r,delta}`.
    pub c_r_delta: f64,
    /// Dynamics concentration constant `C_{T,delta}`.
    pub c_t_delta: f64,
    /// Bellman-backup concentration constant `C_{r,T,delta}`.
    pub c_rt_delta: f64,
    /// Variance floor constant: `Var >= 1 / kappa_var`.
    pub kappa_var: f64,
    /// Accumulation constant in the pointwise bound slack terms.
    pub c_s: f64,
    /// Failure probability.
    pub delta: f64,
}

impl BoundConstants {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            self.r_max,
            self.c_r_delta,
            self.c_t_delta,
            self.c_rt_delta,
        ];
        if nonneg.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CoreError::Degenerate("negative bound constant".into()));
        }
        if !(self.kappa_var > 0.0) || !(self.c_s > 0.0) {
            return Err(CoreError::Degenerate("kappa_var and c_s must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(CoreError::Degenerate("delta must lie in (0,1)".into()));
        }
        Ok(())
    }
}

// ── Exact evaluation ─────────────────────────────────────────────────────

/// Exact `Q^pi`: unique fixed point of the Bellman expectation operator,
/// obtained by the dense solve `(I - gamma P_pi) Q = r`.
pub fn exact_q(mdp: &TabularMdp, policy: &PolicyTable) -> Result<QTable> {
    mdp.check_policy_shape(policy)?;
    let n = mdp.n_states * mdp.n_actions;
    let mut a = mdp.transition_matrix(policy);
    a *= -mdp.gamma;
    for i in 0..n {
        a[(i, i)] += 1.0;
    }
    let b = DVector::from_column_slice(&mdp.reward);
    let lu = a.lu();
    let q = lu
        .solve(&b)
        .ok_or_else(|| CoreError::Singular("(I - gamma P_pi)".into()))?;
    QTable::new(mdp.n_states, mdp.n_actions, q.data.into())
}

/// Exact `V^pi[s] = <pi(.|s), Q^pi(s,.)>`.
pub fn exact_v(mdp: &TabularMdp, policy: &PolicyTable) -> Result<Vec<f64>> {
    Ok(exact_q(mdp, policy)?.state_values(policy))
}

/// One application of the Bellman expectation operator:
/// `(T_pi Q)(s,a) = r(s,a) + gamma E_{s'~T, a'~pi}[Q(s',a')]`.
pub fn bellman_expectation(mdp: &TabularMdp, policy: &PolicyTable, q: &QTable) -> Result<QTable> {
    mdp.check_policy_shape(policy)?;
    if q.n_states != mdp.n_states || q.n_actions != mdp.n_actions {
        return Err(CoreError::ShapeMismatch("Q shape vs MDP".into()));
    }
    let v: Vec<f64> = q.state_values(policy);
    let mut out = QTable::zeros(mdp.n_states, mdp.n_actions);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let next: f64 = mdp
                .t_row(s, a)
                .iter()
                .zip(&v)
                .map(|(t, val)| t * val)
                .sum();
            out.set(s, a, mdp.r(s, a) + mdp.gamma * next);
        }
    }
    Ok(out)
}

/// Normalized discounted visitation `d_pi(s,a) = d_pi(s) pi(a|s)`, solved from
/// `d = (1 - gamma) mu_pi + gamma P_pi^T d`.
pub fn occupancy(mdp: &TabularMdp, policy: &PolicyTable) -> Result<OccupancyVector> {
    mdp.check_policy_shape(policy)?;
    let n = mdp.n_states * mdp.n_actions;
    let mut a = mdp.transition_matrix(policy).transpose();
    a *= -mdp.gamma;
    for i in 0..n {
        a[(i, i)] += 1.0;
    }
    let mut nu0 = vec![0.0; n];
    for s in 0..mdp.n_states {
        for act in 0..mdp.n_actions {
            nu0[s * mdp.n_actions + act] =
                (1.0 - mdp.gamma) * mdp.initial_dist[s] * policy.p(s, act);
        }
    }
    let b = DVector::from_column_slice(&nu0);
    let d = a
        .lu()
        .solve(&b)
        .ok_or_else(|| CoreError::Singular("(I - gamma P_pi^T)".into()))?;
    // The solve can leave ~1e-15 negatives; scrub before the simplex check.
    let mut mass: Vec<f64> = d.data.into();
    for m in &mut mass {
        if *m < 0.0 && *m > -1e-12 {
            *m = 0.0;
        }
    }
    let total: f64 = mass.iter().sum();
    for m in &mut mass {
        *m /= total;
    }
    OccupancyVector::new(mdp.n_states, mdp.n_actions, mass)
}

/// Expected discounted return `J(M, pi)`, computed as `E_{s~mu}[V(s)]`.
///
/// Equals `(1/(1-gamma)) E_{d_pi}[r]` up to solver tolerance; the occupancy
/// route is exposed through [`occupancy`] and cross-checked in tests.
pub fn policy_return(mdp: &TabularMdp, policy: &PolicyTable) -> Result<f64> {
    let v = exact_v(mdp, policy)?;
    Ok(mdp
        .initial_dist
        .iter()
        .zip(&v)
        .map(|(m, val)| m * val)
        .sum())
}

// ── Text serialization ───────────────────────────────────────────────────

/// Render an MDP in the line-oriented text format:
/// a `mdp <n_states> <n_actions> <gamma>` header, then `r s a value`,
/// `t s a s' prob` and `mu s prob` lines. Entries that are exactly zero are
/// omitted and default to zero on load. Values round-trip bit-exactly.
pub fn mdp_to_string(mdp: &TabularMdp) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "mdp {} {} {}", mdp.n_states, mdp.n_actions, mdp.gamma);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let r = mdp.r(s, a);
            if r != 0.0 {
                let _ = writeln!(out, "r {s} {a} {r}");
            }
        }
    }
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            for s2 in 0..mdp.n_states {
                let t = mdp.t(s, a, s2);
                if t != 0.0 {
                    let _ = writeln!(out, "t {s} {a} {s2} {t}");
                }
            }
        }
    }
    for (s, m) in mdp.initial_dist.iter().enumerate() {
        if *m != 0.0 {
            let _ = writeln!(out, "mu {s} {m}");
        }
    }
    out
}

/// Parse the text format produced by [`mdp_to_string`].
pub fn mdp_from_str(text: &str) -> Result<TabularMdp> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((i, l)) => {
                let l = l.trim();
                if l.is_empty() || l.starts_with('#') {
                    continue;
                }
                break (i, l);
            }
            None => {
                return Err(CoreError::Parse {
                    line: 0,
                    detail: "missing mdp header".into(),
                })
            }
        }
    };
    let parts: Vec<&str> = header.1.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "mdp" {
        return Err(CoreError::Parse {
            line: header.0 + 1,
            detail: "expected `mdp <n_states> <n_actions> <gamma>`".into(),
        });
    }
    let parse_usize = |tok: &str, line: usize| {
        tok.parse::<usize>().map_err(|_| CoreError::Parse {
            line: line + 1,
            detail: format!("bad integer `{tok}`"),
        })
    };
    let parse_f64 = |tok: &str, line: usize| {
        tok.parse::<f64>().map_err(|_| CoreError::Parse {
            line: line + 1,
            detail: format!("bad number `{tok}`"),
        })
    };
    let n_states = parse_usize(parts[1], header.0)?;
    let n_actions = parse_usize(parts[2], header.0)?;
    let gamma = parse_f64(parts[3], header.0)?;

    let mut transition = vec![0.0; n_states * n_actions * n_states];
    let mut reward = vec![0.0; n_states * n_actions];
    let mut initial = vec![0.0; n_states];

    let check = |idx: usize, bound: usize, what: &str, line: usize| {
        if idx >= bound {
            Err(CoreError::Parse {
                line: line + 1,
                detail: format!("{what} index {idx} out of range"),
            })
        } else {
            Ok(())
        }
    };

    for (i, raw) in lines {
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks[0] {
            "r" if toks.len() == 4 => {
                let s = parse_usize(toks[1], i)?;
                let a = parse_usize(toks[2], i)?;
                check(s, n_states, "state", i)?;
                check(a, n_actions, "action", i)?;
                reward[s * n_actions + a] = parse_f64(toks[3], i)?;
            }
            "t" if toks.len() == 5 => {
                let s = parse_usize(toks[1], i)?;
                let a = parse_usize(toks[2], i)?;
                let s2 = parse_usize(toks[3], i)?;
                check(s, n_states, "state", i)?;
                check(a, n_actions, "action", i)?;
                check(s2, n_states, "next state", i)?;
                transition[(s * n_actions + a) * n_states + s2] = parse_f64(toks[4], i)?;
            }
            "mu" if toks.len() == 3 => {
                let s = parse_usize(toks[1], i)?;
                check(s, n_states, "state", i)?;
                initial[s] = parse_f64(toks[2], i)?;
            }
            _ => {
                return Err(CoreError::Parse {
                    line: i + 1,
                    detail: format!("unrecognized line `{l}`"),
                })
            }
        }
    }
    TabularMdp::new(n_states, n_actions, transition, reward, initial, gamma)
}

pub fn save_mdp(mdp: &TabularMdp, path: &Path) -> Result<()> {
    std::fs::write(path, mdp_to_string(mdp))?;
    Ok(())
}

pub fn load_mdp(path: &Path) -> Result<TabularMdp> {
    mdp_from_str(&std::fs::read_to_string(path)?)
}
