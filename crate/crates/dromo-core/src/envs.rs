//! Built-in benchmark environments.
//!
//! Small controllable MDPs that make the theorem checkers meaningful:
//! `chain{N}` (1-D chain with a goal reward), `gridworld{N}` (N x N, four
//! actions, slip probability 0.1) and `random{S}x{A}` (seeded Dirichlet
//! transitions). Environment names are parsed by [`builtin`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::mdp::{PolicyTable, TabularMdp};
use crate::sample::dirichlet_flat;
use crate::{CoreError, Result};

/// 1-D chain with `n` states and two actions (left, right). Moves are
/// deterministic and clamp at the ends; standing on the last state yields
/// reward 1. Start state is 0, gamma 0.9.
pub fn chain(n: usize) -> Result<TabularMdp> {
    if n < 2 {
        return Err(CoreError::Degenerate("chain needs at least 2 states".into()));
    }
    let n_actions = 2;
    let mut t = vec![0.0; n * n_actions * n];
    let mut r = vec![0.0; n * n_actions];
    for s in 0..n {
        let left = s.saturating_sub(1);
        let right = (s + 1).min(n - 1);
        t[(s * n_actions) * n + left] = 1.0;
        t[(s * n_actions + 1) * n + right] = 1.0;
        if s == n - 1 {
            r[s * n_actions] = 1.0;
            r[s * n_actions + 1] = 1.0;
        }
    }
    let mut mu = vec![0.0; n];
    mu[0] = 1.0;
    TabularMdp::new(n, n_actions, t, r, mu, 0.9)
}

/// N x N gridworld with four actions (up, down, left, right), slip
/// probability 0.1 (spread over the three unintended directions), reward 1
/// on the bottom-right goal cell, start at the top-left, gamma 0.95.
pub fn gridworld(n: usize) -> Result<TabularMdp> {
    if n < 2 {
        return Err(CoreError::Degenerate("gridworld needs n >= 2".into()));
    }
    let n_states = n * n;
    let n_actions = 4;
    if n_states * n_actions > crate::mdp::MAX_STATE_ACTIONS {
        return Err(CoreError::ShapeMismatch("gridworld too large".into()));
    }
    let step = |s: usize, dir: usize| -> usize {
        let (row, col) = (s / n, s % n);
        let (nr, nc) = match dir {
            0 => (row.saturating_sub(1), col),
            1 => ((row + 1).min(n - 1), col),
            2 => (row, col.saturating_sub(1)),
            _ => (row, (col + 1).min(n - 1)),
        };
        nr * n + nc
    };
    let slip = 0.1;
    let mut t = vec![0.0; n_states * n_actions * n_states];
    let mut r = vec![0.0; n_states * n_actions];
    let goal = n_states - 1;
    for s in 0..n_states {
        for a in 0..n_actions {
            let base = (s * n_actions + a) * n_states;
            for dir in 0..4 {
                let p = if dir == a { 1.0 - slip } else { slip / 3.0 };
                t[base + step(s, dir)] += p;
            }
            if s == goal {
                r[s * n_actions + a] = 1.0;
            }
        }
    }
    let mut mu = vec![0.0; n_states];
    mu[0] = 1.0;
    TabularMdp::new(n_states, n_actions, t, r, mu, 0.95)
}

/// Random MDP with Dirichlet(1) transition rows, rewards uniform in [-1, 1]
/// and a Dirichlet(1) initial distribution.
pub fn random_mdp(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TabularMdp> {
    random_mdp_with_rewards(n_states, n_actions, gamma, -1.0, 1.0, rng)
}

/// Random MDP with rewards drawn uniformly from `[r_lo, r_hi]`.
pub fn random_mdp_with_rewards(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    r_lo: f64,
    r_hi: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TabularMdp> {
    let mut t = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        t.extend(dirichlet_flat(rng, n_states));
    }
    let r: Vec<f64> = (0..n_states * n_actions)
        .map(|_| rng.gen_range(r_lo..r_hi))
        .collect();
    let mu = dirichlet_flat(rng, n_states);
    TabularMdp::new(n_states, n_actions, t, r, mu, gamma)
}

/// Random policy with Dirichlet(1) rows.
pub fn random_policy(
    n_states: usize,
    n_actions: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PolicyTable> {
    let mut p = Vec::with_capacity(n_states * n_actions);
    for _ in 0..n_states {
        p.extend(dirichlet_flat(rng, n_actions));
    }
    PolicyTable::new(n_states, n_actions, p)
}

/// Parse a builtin environment name: `chain{N}`, `gridworld{N}` or
/// `random{S}x{A}` (the latter is seeded by the caller's RNG).
pub fn builtin(name: &str, rng: &mut ChaCha8Rng) -> Result<TabularMdp> {
    if let Some(n) = name.strip_prefix("chain") {
        let n: usize = n.parse().map_err(|_| bad_env(name))?;
        return chain(n);
    }
    if let Some(n) = name.strip_prefix("gridworld") {
        let n: usize = n.parse().map_err(|_| bad_env(name))?;
        return gridworld(n);
    }
    if let Some(rest) = name.strip_prefix("random") {
        let (s, a) = rest.split_once('x').ok_or_else(|| bad_env(name))?;
        let s: usize = s.parse().map_err(|_| bad_env(name))?;
        let a: usize = a.parse().map_err(|_| bad_env(name))?;
        return random_mdp(s, a, 0.9, rng);
    }
    Err(bad_env(name))
}

fn bad_env(name: &str) -> CoreError {
    CoreError::InvalidRecord(format!(
        "unknown environment `{name}` (expected chain{{N}}, gridworld{{N}} or random{{S}}x{{A}})"
    ))
}
