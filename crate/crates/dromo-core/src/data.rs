//! Offline datasets: generation, loading, empirical MDP and behavior-policy
//! estimation, and the per-pair concentration bounds.
//!
//! A dataset is a flat list of `(s, a, s', r)` records. Rollout generation
//! restarts from the initial distribution either on a fixed episode length
//! (default 100) or geometrically with rate `1 - gamma`; the geometric mode
//! makes the empirical state-action frequencies converge to the discounted
//! occupancy measure exactly, which is what the oracle cross-checks use.

use std::fmt::Write as _;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::mdp::{BoundConstants, PolicyTable, TabularMdp};
use crate::sample::categorical;
use crate::{CoreError, Result};

/// One offline transition record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub r: f64,
}

/// Offline dataset of transitions with the shape of its source MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_states: usize,
    n_actions: usize,
    transitions: Vec<Transition>,
}

impl Dataset {
    pub fn new(n_states: usize, n_actions: usize, transitions: Vec<Transition>) -> Result<Self> {
        if transitions.is_empty() {
            return Err(CoreError::Degenerate("empty dataset".into()));
        }
        for (i, t) in transitions.iter().enumerate() {
            if t.s >= n_states || t.s_next >= n_states || t.a >= n_actions {
                return Err(CoreError::InvalidRecord(format!(
                    "record {i}: ({}, {}, {}) out of range for {n_states}x{n_actions}",
                    t.s, t.a, t.s_next
                )));
            }
            if !t.r.is_finite() {
                return Err(CoreError::InvalidRecord(format!("record {i}: non-finite reward")));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            transitions,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn counts(&self) -> CountTable {
        let mut n_sa = vec![0u64; self.n_states * self.n_actions];
        for t in &self.transitions {
            n_sa[t.s * self.n_actions + t.a] += 1;
        }
        CountTable::from_sa_counts(self.n_states, self.n_actions, n_sa)
    }

    /// Empirical state-action frequency table, normalized to sum to one.
    pub fn empirical_sa_frequencies(&self) -> Vec<f64> {
        let mut f = vec![0.0; self.n_states * self.n_actions];
        for t in &self.transitions {
            f[t.s * self.n_actions + t.a] += 1.0;
        }
        let total = self.transitions.len() as f64;
        for v in &mut f {
            *v /= total;
        }
        f
    }

    /// Sorted list of distinct states appearing as `s` in the records.
    pub fn distinct_states(&self) -> Vec<usize> {
        let mut seen = vec![false; self.n_states];
        for t in &self.transitions {
            seen[t.s] = true;
        }
        (0..self.n_states).filter(|&s| seen[s]).collect()
    }
}

/// Visit counts `|D(s,a)|`, `|D(s)|` and `|D|`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTable {
    n_states: usize,
    n_actions: usize,
    n_sa: Vec<u64>,
    n_s: Vec<u64>,
    n_total: u64,
}

impl CountTable {
    pub fn from_sa_counts(n_states: usize, n_actions: usize, n_sa: Vec<u64>) -> Self {
        let n_s: Vec<u64> = (0..n_states)
            .map(|s| n_sa[s * n_actions..(s + 1) * n_actions].iter().sum())
            .collect();
        let n_total = n_s.iter().sum();
        Self {
            n_states,
            n_actions,
            n_sa,
            n_s,
            n_total,
        }
    }

    pub fn n_sa(&self, s: usize, a: usize) -> u64 {
        self.n_sa[s * self.n_actions + a]
    }

    pub fn n_s(&self, s: usize) -> u64 {
        self.n_s[s]
    }

    pub fn n_total(&self) -> u64 {
        self.n_total
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Fraction of `(s,a)` pairs with at least one visit.
    pub fn coverage(&self) -> f64 {
        let visited = self.n_sa.iter().filter(|&&c| c > 0).count();
        visited as f64 / self.n_sa.len() as f64
    }
}

/// Episode restart semantics for rollout generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpisodeMode {
    /// Restart from the initial distribution every `len` steps.
    Fixed { len: usize },
    /// Restart with probability `1 - gamma` after each step, so the
    /// state-action marginal of the stream is the discounted occupancy.
    Geometric,
}

impl Default for EpisodeMode {
    fn default() -> Self {
        EpisodeMode::Fixed { len: 100 }
    }
}

/// Roll out `behavior` on `mdp` for `n_transitions` steps, restarting from
/// the initial distribution according to `mode`. Deterministic per RNG state.
pub fn generate_dataset_with_mode(
    mdp: &TabularMdp,
    behavior: &PolicyTable,
    n_transitions: usize,
    mode: EpisodeMode,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset> {
    if n_transitions == 0 {
        return Err(CoreError::Degenerate("n_transitions must be >= 1".into()));
    }
    if behavior.n_states() != mdp.n_states() || behavior.n_actions() != mdp.n_actions() {
        return Err(CoreError::ShapeMismatch("behavior policy vs MDP".into()));
    }
    let mut out = Vec::with_capacity(n_transitions);
    let mut s = categorical(rng, mdp.initial_dist());
    let mut steps_in_episode = 0usize;
    while out.len() < n_transitions {
        let a = categorical(rng, behavior.row(s));
        let s_next = categorical(rng, mdp.t_row(s, a));
        out.push(Transition {
            s,
            a,
            s_next,
            r: mdp.r(s, a),
        });
        steps_in_episode += 1;
        let restart = match mode {
            EpisodeMode::Fixed { len } => steps_in_episode >= len,
            EpisodeMode::Geometric => rand::Rng::gen::<f64>(rng) >= mdp.gamma(),
        };
        if restart {
            s = categorical(rng, mdp.initial_dist());
            steps_in_episode = 0;
        } else {
            s = s_next;
        }
    }
    Dataset::new(mdp.n_states(), mdp.n_actions(), out)
}

/// [`generate_dataset_with_mode`] with the default fixed episode length 100.
pub fn generate_dataset(
    mdp: &TabularMdp,
    behavior: &PolicyTable,
    n_transitions: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset> {
    generate_dataset_with_mode(mdp, behavior, n_transitions, EpisodeMode::default(), rng)
}

/// The MDP induced by the dataset: transition rows
/// `(count + smoothing) / (row total + smoothing * n_states)`, rewards as
/// sample means. Unvisited `(s,a)` rows fall back to uniform transitions and
/// reward 0; pessimism is the critic's job, not the data layer's.
pub fn empirical_mdp(dataset: &Dataset, gamma: f64, smoothing: f64) -> Result<TabularMdp> {
    let (ns, na) = (dataset.n_states(), dataset.n_actions());
    let mut counts = vec![0.0f64; ns * na * ns];
    let mut r_sum = vec![0.0f64; ns * na];
    let mut n_sa = vec![0.0f64; ns * na];
    for t in dataset.transitions() {
        counts[(t.s * na + t.a) * ns + t.s_next] += 1.0;
        r_sum[t.s * na + t.a] += t.r;
        n_sa[t.s * na + t.a] += 1.0;
    }
    let mut transition = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na];
    for sa in 0..ns * na {
        let total = n_sa[sa];
        if total > 0.0 {
            reward[sa] = r_sum[sa] / total;
        }
        let denom = total + smoothing * ns as f64;
        for s2 in 0..ns {
            transition[sa * ns + s2] = if denom > 0.0 {
                (counts[sa * ns + s2] + smoothing) / denom
            } else {
                1.0 / ns as f64
            };
        }
    }
    // Initial distribution: empirical start-state frequencies are not
    // recoverable from flat transitions, so use the state marginal of visits.
    let mut mu = vec![0.0; ns];
    for t in dataset.transitions() {
        mu[t.s] += 1.0;
    }
    let total: f64 = mu.iter().sum();
    for m in &mut mu {
        *m /= total;
    }
    TabularMdp::new(ns, na, transition, reward, mu, gamma)
}

/// Maximum-likelihood behavior policy `pi_beta(a|s) = |D(s,a)| / |D(s)|`,
/// uniform on unvisited states.
pub fn behavior_mle(dataset: &Dataset) -> Result<PolicyTable> {
    let (ns, na) = (dataset.n_states(), dataset.n_actions());
    let counts = dataset.counts();
    let mut probs = vec![0.0; ns * na];
    for s in 0..ns {
        let n_s = counts.n_s(s);
        for a in 0..na {
            probs[s * na + a] = if n_s > 0 {
                counts.n_sa(s, a) as f64 / n_s as f64
            } else {
                1.0 / na as f64
            };
        }
    }
    PolicyTable::new(ns, na, probs)
}

/// Bellman-backup deviation bound `C_{r,T,delta} / sqrt(max(1, |D(s,a)|))`
/// per pair. The denominator clamp keeps the bound finite and maximally
/// pessimistic off-support.
pub fn sampling_error_bound(counts: &CountTable, constants: &BoundConstants) -> Vec<f64> {
    let mut out = vec![0.0; counts.n_states * counts.n_actions];
    for s in 0..counts.n_states {
        for a in 0..counts.n_actions {
            let n = counts.n_sa(s, a).max(1) as f64;
            out[s * counts.n_actions + a] = constants.c_rt_delta / n.sqrt();
        }
    }
    out
}

// ── Text format ──────────────────────────────────────────────────────────

/// Render a dataset as one `s a s_next r` record per line.
pub fn dataset_to_string(dataset: &Dataset) -> String {
    let mut out = String::new();
    for t in dataset.transitions() {
        let _ = writeln!(out, "{} {} {} {}", t.s, t.a, t.s_next, t.r);
    }
    out
}

/// Parse the record-per-line format; `#` starts a comment. Ids are validated
/// against the supplied shape.
pub fn dataset_from_str(text: &str, n_states: usize, n_actions: usize) -> Result<Dataset> {
    let mut transitions = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(CoreError::Parse {
                line: i + 1,
                detail: "expected `s a s_next r`".into(),
            });
        }
        let parse_id = |tok: &str| {
            tok.parse::<usize>().map_err(|_| CoreError::Parse {
                line: i + 1,
                detail: format!("bad id `{tok}`"),
            })
        };
        let t = Transition {
            s: parse_id(toks[0])?,
            a: parse_id(toks[1])?,
            s_next: parse_id(toks[2])?,
            r: toks[3].parse::<f64>().map_err(|_| CoreError::Parse {
                line: i + 1,
                detail: format!("bad reward `{}`", toks[3]),
            })?,
        };
        transitions.push(t);
    }
    Dataset::new(n_states, n_actions, transitions)
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_string(dataset))?;
    Ok(())
}

pub fn load_dataset(path: &Path, n_states: usize, n_actions: usize) -> Result<Dataset> {
    dataset_from_str(&std::fs::read_to_string(path)?, n_states, n_actions)
}
