//! COMBO and MOPO baselines sharing the critic's world plumbing.
//!
//! COMBO is the exact alpha = 0 slice of the robust critic: its update is
//! `Q <- backup - beta (rho - d)/d_f` with no variance shrinkage. MOPO
//! instead penalizes the model reward by the per-row transition entropy
//! `r_bar = r_hat - lambda u(s,a)` and evaluates the policy on the
//! penalized MDP; the temperature `lambda` can be adapted by dual descent
//! on `J(alpha) = E[alpha log T_hat(s'|s,a) + alpha delta_T]`, which drives
//! the visitation-weighted cross-entropy toward the budget `delta_T` when
//! the constraint binds and drives alpha to zero when it is slack.

use crate::critic::{critic_update, CriticConfig, InterpolatedWorld};
use crate::data::Dataset;
use crate::mdp::{OccupancyVector, PolicyTable, QTable, TabularMdp};
use crate::model::{uncertainty, LearnedModel};
use crate::{CoreError, Result};

/// MOPO configuration.
#[derive(Debug, Clone, Copy)]
pub struct MopoConfig {
    /// Initial reward-penalty temperature.
    pub lambda_pen: f64,
    /// Entropy budget `delta_T` for automatic temperature control.
    pub delta_t: f64,
    /// Dual step size.
    pub eta_alpha: f64,
    /// Adapt the temperature by dual descent.
    pub auto_temp: bool,
    /// Dual iteration cap.
    pub max_dual_steps: usize,
}

impl Default for MopoConfig {
    fn default() -> Self {
        Self {
            lambda_pen: 1.0,
            delta_t: 0.5,
            eta_alpha: 0.01,
            auto_temp: false,
            max_dual_steps: 1000,
        }
    }
}

impl MopoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_alpha > 0.0) {
            return Err(CoreError::Degenerate("eta_alpha must be positive".into()));
        }
        if self.lambda_pen < 0.0 {
            return Err(CoreError::Degenerate("lambda_pen must be >= 0".into()));
        }
        Ok(())
    }
}

/// COMBO critic update: the alpha = 0 case of the robust update,
/// `Q(s,a) = backup(s,a) - beta (rho-d)/d_f (s,a)`.
pub fn combo_critic_update(
    q_prev: &QTable,
    world: &InterpolatedWorld,
    cfg: &CriticConfig,
    model: &LearnedModel,
    empirical: &TabularMdp,
    policy: &PolicyTable,
) -> Result<QTable> {
    let combo_cfg = CriticConfig {
        alpha: 0.0,
        ..*cfg
    };
    critic_update(q_prev, world, &combo_cfg, model, empirical, policy)
}

/// The penalized MDP `M_bar`: model dynamics unchanged, rewards lowered by
/// `lambda` times the per-row transition entropy.
pub fn mopo_penalized_mdp(model: &LearnedModel, lambda: f64) -> Result<TabularMdp> {
    if lambda < 0.0 {
        return Err(CoreError::Degenerate("lambda must be >= 0".into()));
    }
    let u = uncertainty(model);
    let reward: Vec<f64> = model
        .mdp()
        .reward()
        .iter()
        .zip(&u)
        .map(|(r, ent)| r - lambda * ent)
        .collect();
    model.mdp().with_reward(reward)
}

/// Visitation-weighted expected log-likelihood `E[log T_hat(s'|s,a)]` over
/// the observed transitions, with each record weighted by the visit mass of
/// its `(s,a)` pair (clamped to the dataset support).
pub fn visit_weighted_log_likelihood(
    model: &LearnedModel,
    visit: &OccupancyVector,
    samples: &Dataset,
) -> Result<f64> {
    if visit.n_states() != model.n_states() || visit.n_actions() != model.n_actions() {
        return Err(CoreError::ShapeMismatch("visit distribution shape".into()));
    }
    // Per-record weights must not double-count multiplicities unevenly:
    // average log-likelihood within each (s,a) cell first.
    let (ns, na) = (model.n_states(), model.n_actions());
    let mut cell_sum = vec![0.0; ns * na];
    let mut cell_count = vec![0u64; ns * na];
    for t in samples.transitions() {
        let p = model.mdp().t(t.s, t.a, t.s_next).max(1e-300);
        cell_sum[t.s * na + t.a] += p.ln();
        cell_count[t.s * na + t.a] += 1;
    }
    let mut num = 0.0;
    let mut denom = 0.0;
    for s in 0..ns {
        for a in 0..na {
            let idx = s * na + a;
            if cell_count[idx] == 0 {
                continue;
            }
            let w = visit.get(s, a);
            if w == 0.0 {
                continue;
            }
            num += w * cell_sum[idx] / cell_count[idx] as f64;
            denom += w;
        }
    }
    if denom == 0.0 {
        return Err(CoreError::Degenerate(
            "visit distribution puts no mass on the dataset support".into(),
        ));
    }
    Ok(num / denom)
}

/// One projected dual step of the temperature:
/// `alpha <- max(0, alpha - eta (E[log T_hat] + delta_T))`.
///
/// When the model is confident (`E[-log T_hat] < delta_T`) the gradient is
/// positive and alpha decays toward zero; when the constraint is violated
/// alpha grows.
pub fn mopo_temperature_step(
    alpha_t: f64,
    model: &LearnedModel,
    visit: &OccupancyVector,
    truth_samples: &Dataset,
    cfg: &MopoConfig,
) -> Result<f64> {
    cfg.validate()?;
    if alpha_t < 0.0 {
        return Err(CoreError::Degenerate("alpha_t must be >= 0".into()));
    }
    let loglik = visit_weighted_log_likelihood(model, visit, truth_samples)?;
    Ok((alpha_t - cfg.eta_alpha * (loglik + cfg.delta_t)).max(0.0))
}

/// Per-iteration record of the coupled temperature/policy iteration.
#[derive(Debug, Clone, Copy)]
pub struct TemperatureTrace {
    pub iter: usize,
    pub alpha_t: f64,
    /// `E[-log T_hat]` under the current policy's model visitation.
    pub cross_entropy: f64,
}

/// Outcome of [`run_mopo_temperature`].
#[derive(Debug, Clone)]
pub struct TemperatureRun {
    pub alpha_t: f64,
    pub cross_entropy: f64,
    pub policy: PolicyTable,
    pub trace: Vec<TemperatureTrace>,
}

/// Run the coupled dual iteration: penalize rewards with the current
/// temperature, respond with a soft-greedy policy on the penalized model,
/// recompute the model visitation, and take one projected dual step. With a
/// binding budget the iteration settles at `E[-log T_hat] = delta_T`; with
/// a slack budget alpha decays to zero.
pub fn run_mopo_temperature(
    model: &LearnedModel,
    truth_samples: &Dataset,
    cfg: &MopoConfig,
    entropy_weight: f64,
) -> Result<TemperatureRun> {
    cfg.validate()?;
    let mut alpha_t = cfg.lambda_pen;
    let mut trace = Vec::with_capacity(cfg.max_dual_steps);
    let mut policy = PolicyTable::uniform(model.n_states(), model.n_actions());
    let mut cross_entropy = f64::NAN;
    for iter in 0..cfg.max_dual_steps {
        let penalized = mopo_penalized_mdp(model, alpha_t)?;
        let q = crate::mdp::exact_q(&penalized, &policy)?;
        policy = crate::train::actor_update(&q, entropy_weight)?;
        let visit = crate::mdp::occupancy(model.mdp(), &policy)?;
        cross_entropy = -visit_weighted_log_likelihood(model, &visit, truth_samples)?;
        trace.push(TemperatureTrace {
            iter,
            alpha_t,
            cross_entropy,
        });
        let next = (alpha_t - cfg.eta_alpha * (cfg.delta_t - cross_entropy)).max(0.0);
        if (next - alpha_t).abs() < 1e-12 && iter > 10 {
            alpha_t = next;
            break;
        }
        alpha_t = next;
    }
    Ok(TemperatureRun {
        alpha_t,
        cross_entropy,
        policy,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critic::build_world;
    use crate::data::{behavior_mle, generate_dataset_with_mode, EpisodeMode, Transition};
    use crate::envs;
    use crate::mdp::exact_q;
    use crate::model::fit_model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn combo_equals_robust_update_at_alpha_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = envs::random_mdp_with_rewards(4, 2, 0.9, 0.0, 1.0, &mut rng).unwrap();
        let behavior = envs::random_policy(4, 2, &mut rng).unwrap();
        let ds =
            generate_dataset_with_mode(&truth, &behavior, 3000, EpisodeMode::Geometric, &mut rng)
                .unwrap();
        let model = fit_model(&ds, truth.gamma(), 1e-3).unwrap();
        let policy = envs::random_policy(4, 2, &mut rng).unwrap();
        let bh = behavior_mle(&ds).unwrap();
        let world = build_world(&model, &ds, &policy, &bh, 0.5).unwrap();
        let cfg = CriticConfig {
            alpha: 0.7, // ignored by the combo path
            beta: 0.4,
            f: 0.5,
            ..Default::default()
        };
        let mut q = QTable::zeros(4, 2);
        for v in q.values_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let combo =
            combo_critic_update(&q, &world, &cfg, &model, model.mdp(), &policy).unwrap();
        let robust = critic_update(
            &q,
            &world,
            &CriticConfig { alpha: 0.0, ..cfg },
            &model,
            model.mdp(),
            &policy,
        )
        .unwrap();
        assert_eq!(combo.values(), robust.values());

        // beta = 0 reduces to pure fitted evaluation (the plain backup).
        let plain = combo_critic_update(
            &q,
            &world,
            &CriticConfig {
                alpha: 0.0,
                beta: 0.0,
                f: 0.5,
                ..Default::default()
            },
            &model,
            model.mdp(),
            &policy,
        )
        .unwrap();
        let backup =
            crate::critic::mixed_backup(&q, model.mdp(), model.mdp(), &policy, 0.5).unwrap();
        assert!(plain.max_abs_diff(&backup) < 1e-12);
    }

    #[test]
    fn combo_matches_objective_minimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = envs::random_mdp_with_rewards(3, 2, 0.9, 0.0, 1.0, &mut rng).unwrap();
        let behavior = envs::random_policy(3, 2, &mut rng).unwrap();
        let ds =
            generate_dataset_with_mode(&truth, &behavior, 3000, EpisodeMode::Geometric, &mut rng)
                .unwrap();
        let model = fit_model(&ds, truth.gamma(), 1e-3).unwrap();
        let policy = envs::random_policy(3, 2, &mut rng).unwrap();
        let bh = behavior_mle(&ds).unwrap();
        let world = build_world(&model, &ds, &policy, &bh, 0.5).unwrap();
        let cfg = CriticConfig {
            alpha: 0.0,
            beta: 0.6,
            f: 0.5,
            ..Default::default()
        };
        let mut q = QTable::zeros(3, 2);
        for v in q.values_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let combo =
            combo_critic_update(&q, &world, &cfg, &model, model.mdp(), &policy).unwrap();
        let backup =
            crate::critic::mixed_backup(&q, model.mdp(), model.mdp(), &policy, 0.5).unwrap();
        let oracle = crate::critic::minimize_objective_coordinate_descent(
            &world, &cfg, &backup, &q, 200, 1e-10,
        );
        assert!(combo.max_abs_diff(&oracle) < 1e-6);
    }

    #[test]
    fn penalized_mdp_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = envs::random_mdp(3, 2, 0.9, &mut rng).unwrap();
        let model = LearnedModel::from_mdp(m.clone(), 1);
        // lambda = 0 leaves the model untouched.
        let same = mopo_penalized_mdp(&model, 0.0).unwrap();
        assert_eq!(&same, model.mdp());

        // deterministic rows carry zero penalty
        let det = TabularMdp::new(
            2,
            1,
            vec![0.0, 1.0, 1.0, 0.0],
            vec![0.3, -0.2],
            vec![0.5, 0.5],
            0.9,
        )
        .unwrap();
        let det_model = LearnedModel::from_mdp(det.clone(), 1);
        let pen = mopo_penalized_mdp(&det_model, 2.5).unwrap();
        assert_eq!(pen.reward(), det.reward());

        // uniform rows over k states lose lambda * ln k
        let k = 3;
        let uni = TabularMdp::new(
            k,
            1,
            vec![1.0 / k as f64; k * k],
            vec![1.0; k],
            vec![1.0 / k as f64; k],
            0.9,
        )
        .unwrap();
        let uni_model = LearnedModel::from_mdp(uni, 1);
        let pen = mopo_penalized_mdp(&uni_model, 1.0).unwrap();
        for s in 0..k {
            assert!((pen.r(s, 0) - (1.0 - (k as f64).ln())).abs() < 1e-12);
        }
    }

    /// Two-state chain with one zero-entropy action and one max-entropy
    /// action; the dataset enumerates the exact transitions so record
    /// weighting reproduces model expectations exactly.
    fn tunable_entropy_fixture() -> (LearnedModel, Dataset) {
        let ns = 2;
        let na = 2;
        // action 0: deterministic self-loop; action 1: uniform over both.
        let mut t = vec![0.0; ns * na * ns];
        let mut r = vec![0.0; ns * na];
        for s in 0..ns {
            t[(s * na) * ns + s] = 1.0;
            for s2 in 0..ns {
                t[(s * na + 1) * ns + s2] = 0.5;
            }
            r[s * na] = 0.0;
            r[s * na + 1] = 0.3;
        }
        let mdp = TabularMdp::new(ns, na, t, r, vec![0.5, 0.5], 0.9).unwrap();
        let model = LearnedModel::from_mdp(mdp, 100);
        let mut records = Vec::new();
        for s in 0..ns {
            records.push(Transition { s, a: 0, s_next: s, r: 0.0 });
            for s2 in 0..ns {
                records.push(Transition { s, a: 1, s_next: s2, r: 0.3 });
            }
        }
        let ds = Dataset::new(ns, na, records).unwrap();
        (model, ds)
    }

    #[test]
    fn temperature_step_directions() {
        let (model, ds) = tunable_entropy_fixture();
        let visit = OccupancyVector::new(2, 2, vec![0.25; 4]).unwrap();
        // E[-log T_hat] = 0.5 * ln 2 under the uniform visit distribution.
        let ce = -visit_weighted_log_likelihood(&model, &visit, &ds).unwrap();
        assert!((ce - 0.5 * 2.0f64.ln()).abs() < 1e-12);

        // Slack budget: alpha decreases toward zero.
        let slack = MopoConfig {
            delta_t: 1.0,
            eta_alpha: 0.1,
            ..Default::default()
        };
        let a1 = mopo_temperature_step(0.5, &model, &visit, &ds, &slack).unwrap();
        assert!(a1 < 0.5);

        // Violated budget: alpha increases.
        let tight = MopoConfig {
            delta_t: 0.1,
            eta_alpha: 0.1,
            ..Default::default()
        };
        let a2 = mopo_temperature_step(0.5, &model, &visit, &ds, &tight).unwrap();
        assert!(a2 > 0.5);

        // Projection at zero.
        let a3 = mopo_temperature_step(0.0, &model, &visit, &ds, &slack).unwrap();
        assert_eq!(a3, 0.0);
    }

    #[test]
    fn temperature_converges_on_tunable_chain() {
        let (model, ds) = tunable_entropy_fixture();
        // Budget inside the achievable range (0, ln 2): the dual settles at
        // E[-log T_hat] = delta_T.
        let cfg = MopoConfig {
            lambda_pen: 0.0,
            delta_t: 0.35,
            eta_alpha: 0.05,
            auto_temp: true,
            max_dual_steps: 4000,
        };
        let run = run_mopo_temperature(&model, &ds, &cfg, 0.2).unwrap();
        assert!(run.alpha_t > 0.0, "alpha collapsed: {}", run.alpha_t);
        assert!(
            (run.cross_entropy - cfg.delta_t).abs() <= 1e-3,
            "cross entropy {} vs budget {}",
            run.cross_entropy,
            cfg.delta_t
        );

        // Slack budget: alpha goes to zero.
        let slack = MopoConfig {
            lambda_pen: 0.3,
            delta_t: 2.0,
            ..cfg
        };
        let run2 = run_mopo_temperature(&model, &ds, &slack, 0.2).unwrap();
        assert_eq!(run2.alpha_t, 0.0);
    }

    #[test]
    fn penalty_lowers_model_return_for_every_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = envs::random_mdp(4, 2, 0.9, &mut rng).unwrap();
        let model = LearnedModel::from_mdp(m, 1);
        let pen = mopo_penalized_mdp(&model, 1.5).unwrap();
        for _ in 0..20 {
            let pi = envs::random_policy(4, 2, &mut rng).unwrap();
            let j_pen = crate::mdp::policy_return(&pen, &pi).unwrap();
            let j_model = crate::mdp::policy_return(model.mdp(), &pi).unwrap();
            assert!(j_pen <= j_model + 1e-12);
        }
        // Q-values drop pointwise as well: entropy penalties are nonnegative.
        let pi = envs::random_policy(4, 2, &mut rng).unwrap();
        let q_pen = exact_q(&pen, &pi).unwrap();
        let q_model = exact_q(model.mdp(), &pi).unwrap();
        for (a, b) in q_pen.values().iter().zip(q_model.values()) {
            assert!(a <= b + 1e-12);
        }
    }
}
