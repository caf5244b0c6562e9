//! Learned dynamics model and model-quality diagnostics.
//!
//! The model is the empirical MDP wrapped together with its visit counts.
//! Diagnostics cover per-row total variation against a reference MDP,
//! per-row categorical entropy (the uncertainty measure used by the reward
//! penalty baseline), and the binned l1 calibration error together with the
//! value-gap bound check it implies: evaluating a policy under calibrated
//! virtual dynamics cannot move the value by more than
//! `gamma * R_max / (1 - gamma)` times the calibration error.

use std::fmt::Write as _;

use crate::data::{empirical_mdp, Dataset};
use crate::mdp::{self, OccupancyVector, PolicyTable, TabularMdp};
use crate::{CoreError, Result};

/// Default number of uniform probability bins for the calibration error.
pub const DEFAULT_CALIBRATION_BINS: usize = 20;

/// A learned tabular dynamics model plus the counts it was fitted from.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedModel {
    mdp_hat: TabularMdp,
    source_counts: crate::data::CountTable,
}

impl LearnedModel {
    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp_hat
    }

    pub fn counts(&self) -> &crate::data::CountTable {
        &self.source_counts
    }

    pub fn n_states(&self) -> usize {
        self.mdp_hat.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.mdp_hat.n_actions()
    }

    /// Wrap an externally constructed MDP as a "learned" model. Checkers use
    /// this to study hand-perturbed dynamics; counts are synthesized as if
    /// every pair had been visited `per_pair` times.
    pub fn from_mdp(mdp_hat: TabularMdp, per_pair: u64) -> Self {
        let n = mdp_hat.n_states() * mdp_hat.n_actions();
        let source_counts = crate::data::CountTable::from_sa_counts(
            mdp_hat.n_states(),
            mdp_hat.n_actions(),
            vec![per_pair; n],
        );
        Self {
            mdp_hat,
            source_counts,
        }
    }
}

/// Fit the dynamics model by maximum likelihood (empirical MDP) and keep the
/// visit counts alongside it. Deterministic in the dataset.
pub fn fit_model(dataset: &Dataset, gamma: f64, smoothing: f64) -> Result<LearnedModel> {
    let mdp_hat = empirical_mdp(dataset, gamma, smoothing)?;
    Ok(LearnedModel {
        mdp_hat,
        source_counts: dataset.counts(),
    })
}

/// Per-pair total variation `0.5 * sum_{s'} |That - T|`.
pub fn tv_distance(model: &LearnedModel, truth: &TabularMdp) -> Result<Vec<f64>> {
    tv_distance_mdps(model.mdp(), truth)
}

/// Total variation rows between two MDPs of equal shape.
pub fn tv_distance_mdps(a: &TabularMdp, b: &TabularMdp) -> Result<Vec<f64>> {
    if a.n_states() != b.n_states() || a.n_actions() != b.n_actions() {
        return Err(CoreError::ShapeMismatch("tv_distance shapes".into()));
    }
    let (ns, na) = (a.n_states(), a.n_actions());
    let mut out = vec![0.0; ns * na];
    for s in 0..ns {
        for aa in 0..na {
            out[s * na + aa] = 0.5
                * a.t_row(s, aa)
                    .iter()
                    .zip(b.t_row(s, aa))
                    .map(|(x, y)| (x - y).abs())
                    .sum::<f64>();
        }
    }
    Ok(out)
}

/// Shannon entropy (nats) of each transition row; zero for deterministic
/// rows, `ln k` for uniform rows over `k` states.
pub fn uncertainty(model: &LearnedModel) -> Vec<f64> {
    let m = model.mdp();
    let (ns, na) = (m.n_states(), m.n_actions());
    let mut out = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            out[s * na + a] = m
                .t_row(s, a)
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| -p * p.ln())
                .sum();
        }
    }
    out
}

/// Binned l1 calibration error of the model as a predictor of the next
/// state when `(s,a)` is drawn from `visit_dist` and the true next state
/// from `truth`.
///
/// For each next state `y` and probability bin, the in-bin visit-weighted
/// predicted probability is compared against the in-bin visit-weighted true
/// conditional frequency; the absolute gaps are summed with the bin visit
/// weights. A perfectly calibrated model scores zero regardless of binning.
pub fn l1_calibration_error(
    model: &LearnedModel,
    truth: &TabularMdp,
    visit_dist: &OccupancyVector,
    bins: usize,
) -> Result<f64> {
    let m = model.mdp();
    if m.n_states() != truth.n_states() || m.n_actions() != truth.n_actions() {
        return Err(CoreError::ShapeMismatch("calibration shapes".into()));
    }
    if visit_dist.n_states() != m.n_states() || visit_dist.n_actions() != m.n_actions() {
        return Err(CoreError::ShapeMismatch("visit distribution shape".into()));
    }
    if bins == 0 {
        return Err(CoreError::Degenerate("need at least one bin".into()));
    }
    let (ns, na) = (m.n_states(), m.n_actions());
    let mut total = 0.0;
    // scratch per (y, bin): visit weight, weighted prediction, weighted truth
    let mut w = vec![0.0; bins];
    let mut wp = vec![0.0; bins];
    let mut wt = vec![0.0; bins];
    for y in 0..ns {
        w.iter_mut().for_each(|v| *v = 0.0);
        wp.iter_mut().for_each(|v| *v = 0.0);
        wt.iter_mut().for_each(|v| *v = 0.0);
        for s in 0..ns {
            for a in 0..na {
                let weight = visit_dist.get(s, a);
                if weight == 0.0 {
                    continue;
                }
                let pred = m.t(s, a, y);
                let bin = ((pred * bins as f64) as usize).min(bins - 1);
                w[bin] += weight;
                wp[bin] += weight * pred;
                wt[bin] += weight * truth.t(s, a, y);
            }
        }
        for b in 0..bins {
            if w[b] > 0.0 {
                total += (wt[b] - wp[b]).abs();
            }
        }
    }
    Ok(total)
}

/// Result of the calibration value-gap check.
#[derive(Debug, Clone)]
pub struct CalibrationGapReport {
    /// `|J_model - J_truth|` with the truth's reward shared by both MDPs.
    pub value_gap: f64,
    /// `gamma * R_max / (1 - gamma) * CE` plus the binning slack.
    pub bound: f64,
    pub calibration_error: f64,
    pub binning_slack: f64,
    pub holds: bool,
}

/// Evaluate the policy exactly under the true dynamics and under the model
/// dynamics (sharing the truth's reward, as the bound compares virtual
/// dynamics only) and check the value gap against the calibration bound.
///
/// The binning slack `gamma * R_max/(1-gamma) * 1/(2 bins)` absorbs the
/// discretization of the continuous calibration integral.
pub fn calibration_value_gap_check(
    model: &LearnedModel,
    truth: &TabularMdp,
    policy: &PolicyTable,
    visit_dist: &OccupancyVector,
    bins: usize,
    r_max: f64,
) -> Result<CalibrationGapReport> {
    let ce = l1_calibration_error(model, truth, visit_dist, bins)?;
    let virtual_mdp = model.mdp().with_reward(truth.reward().to_vec())?;
    let j_truth = mdp::policy_return(truth, policy)?;
    let j_model = mdp::policy_return(&virtual_mdp, policy)?;
    let gamma = truth.gamma();
    let scale = gamma * r_max / (1.0 - gamma);
    let slack = scale * (1.0 / (2.0 * bins as f64));
    let bound = scale * ce + slack;
    let value_gap = (j_model - j_truth).abs();
    Ok(CalibrationGapReport {
        value_gap,
        bound,
        calibration_error: ce,
        binning_slack: slack,
        holds: value_gap <= bound,
    })
}

/// Model diagnostics as CSV with columns `s,a,tv,entropy,count`.
pub fn diagnostics_csv(model: &LearnedModel, truth: &TabularMdp) -> Result<String> {
    let tv = tv_distance(model, truth)?;
    let ent = uncertainty(model);
    let (ns, na) = (model.n_states(), model.n_actions());
    let mut out = String::from("s,a,tv,entropy,count\n");
    for s in 0..ns {
        for a in 0..na {
            let _ = writeln!(
                out,
                "{s},{a},{},{},{}",
                tv[s * na + a],
                ent[s * na + a],
                model.counts().n_sa(s, a)
            );
        }
    }
    Ok(out)
}
