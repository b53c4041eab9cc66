//! The Stackelberg round loop: rules are published, agents best-respond,
//! each decision maker selects over the round cohort, agents comply with at
//! most one positive decision, and outcomes realise only for enrolled
//! agents.
//!
//! Determinism contract: a round's log is a pure function of (run seed,
//! round index). Rounds are therefore embarrassingly parallel and every
//! aggregate is computed in round order.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::agents;
use crate::error::{Error, Result};
use crate::model::{AgentRecord, Config, EnvironmentSpec, PopulationSpec, RoundLog, SelectionMode};
use crate::numerics::{dot, Vector};
use crate::protocol::DeploymentSchedule;
use crate::seeding;
use crate::selection;

#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    /// Log counterfactual outcomes for every agent and environment. The
    /// noise draws happen regardless so logs are identical either way;
    /// only the bookkeeping differs. Estimators never read these.
    pub oracle_outcomes: bool,
}

/// Simulates one round for the whole cohort.
pub fn run_round(
    population: &PopulationSpec,
    envs: &[EnvironmentSpec],
    thetas: &[Vector],
    round: usize,
    run_seed: u64,
    opts: SimOptions,
) -> Result<RoundLog> {
    let n = envs.len();
    let m = population.num_covariates();
    if thetas.len() != n {
        return Err(Error::Dimension(format!(
            "{} deployed rules for {n} environments",
            thetas.len()
        )));
    }
    for theta in thetas {
        if theta.len() != m {
            return Err(Error::Dimension(format!(
                "rule dimension {} does not match covariate count {m}",
                theta.len()
            )));
        }
    }
    let gammas: Vec<f64> = envs.iter().map(|e| e.gamma).collect();
    let effort = population.effort()?;
    let scales = population.pooled_baseline_std();
    let shared_action = agents::best_response(thetas, &gammas, &effort)?;
    let count = population.agents_per_round;
    let round_rng = seeding::round_rng(run_seed, round);

    let mut rngs = Vec::with_capacity(count);
    let mut records: Vec<AgentRecord> = Vec::with_capacity(count);
    for a_idx in 0..count {
        let mut rng = seeding::agent_rng(&round_rng, a_idx);
        // group draw via the cumulative mixture
        let u: f64 = rng.random();
        let mut group = population.group_probs.len() - 1;
        let mut acc = 0.0;
        for (g, p) in population.group_probs.iter().enumerate() {
            acc += p;
            if u < acc {
                group = g;
                break;
            }
        }
        let baseline = agents::sample_baseline(group, population, &mut rng);
        let (action, covariates) = if population.alpha2 == 0.0 {
            let x = agents::realize_covariates(
                &baseline,
                &shared_action,
                &effort,
                population.alpha1,
                &scales,
            )?;
            (shared_action.clone(), x)
        } else {
            let own_effort =
                agents::perturb_effort(&effort, population.alpha2, group, &mut rng)?;
            let action = agents::best_response(thetas, &gammas, &own_effort)?;
            let x = agents::realize_covariates(
                &baseline,
                &action,
                &own_effort,
                population.alpha1,
                &scales,
            )?;
            (action, x)
        };
        let predictions: Vector = thetas.iter().map(|t| dot(&covariates, t)).collect();
        records.push(AgentRecord {
            group,
            baseline,
            action,
            covariates,
            predictions,
            selected: vec![false; n],
            compliance: 0,
            outcome: None,
            oracle_outcomes: None,
        });
        rngs.push(rng);
    }

    // cohort-level selection per environment
    for (i, env) in envs.iter().enumerate() {
        match env.selection_mode {
            SelectionMode::TopRho => {
                let scores: Vec<f64> = records.iter().map(|r| r.predictions[i]).collect();
                let flags = selection::top_rho_select(&scores, env.rho)?;
                for (rec, w) in records.iter_mut().zip(flags) {
                    rec.selected[i] = w;
                }
            }
            SelectionMode::RankingCdf => {
                let scores: Vec<f64> = records.iter().map(|r| r.predictions[i]).collect();
                for (a_idx, rec) in records.iter_mut().enumerate() {
                    let p = selection::ranking_prob(rec.predictions[i], &scores)?;
                    let u: f64 = rngs[a_idx].random();
                    rec.selected[i] = u < p;
                }
            }
        }
    }

    // compliance and outcomes; outcome noise is drawn for every environment
    // so the stream layout does not depend on selection or the oracle flag
    let mut fallbacks = 0usize;
    for (a_idx, rec) in records.iter_mut().enumerate() {
        let rng = &mut rngs[a_idx];
        let (z, fallback) = selection::sample_compliance(&rec.selected, &gammas, rng)?;
        if fallback {
            fallbacks += 1;
        }
        rec.compliance = z;
        let mut outcomes = Vec::with_capacity(n);
        for i in 0..n {
            let noise_mean = population.noise_means[rec.group][i];
            let noise_std = population.noise_stds[rec.group][i];
            let o = if noise_std > 0.0 {
                Normal::new(noise_mean, noise_std)
                    .expect("validated std")
                    .sample(rng)
            } else {
                noise_mean
            };
            outcomes.push(dot(&rec.covariates, &envs[i].theta_star) + o);
        }
        if z > 0 {
            rec.outcome = Some(outcomes[z - 1]);
        }
        if opts.oracle_outcomes {
            rec.oracle_outcomes = Some(outcomes);
        }
    }
    if fallbacks > 0 {
        eprintln!(
            "round {round}: uniform compliance fallback used for {fallbacks} agents (all admitting preferences zero)"
        );
    }
    Ok(RoundLog {
        round,
        thetas: thetas.to_vec(),
        batch_label: None,
        agents: records,
    })
}

/// Runs every round of a deployment schedule. Rounds are independent and
/// seeded from (run seed, round index).
pub fn run_experiment(
    config: &Config,
    schedule: &DeploymentSchedule,
    run_seed: u64,
    opts: SimOptions,
) -> Result<Vec<RoundLog>> {
    let thetas: Vec<Vec<Vector>> = (0..schedule.rounds)
        .map(|t| schedule.thetas_for_round(t))
        .collect();
    let mut logs = (0..schedule.rounds)
        .into_par_iter()
        .map(|t| {
            run_round(
                &config.population,
                &config.environments,
                &thetas[t],
                t,
                run_seed,
                opts,
            )
        })
        .collect::<Result<Vec<RoundLog>>>()?;
    for log in logs.iter_mut() {
        log.batch_label = schedule.coalition_label(log.round);
    }
    Ok(logs)
}

/// Runs `rounds` rounds under a fixed deployment, used by evaluation phases.
pub fn run_fixed_thetas(
    config: &Config,
    thetas: &[Vector],
    rounds: usize,
    run_seed: u64,
    opts: SimOptions,
) -> Result<Vec<RoundLog>> {
    (0..rounds)
        .into_par_iter()
        .map(|t| {
            run_round(
                &config.population,
                &config.environments,
                thetas,
                t,
                run_seed,
                opts,
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasuredUtility {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

/// Sample mean and standard error of realised outcomes over agents enrolled
/// in environment `env` (0-based).
pub fn measured_utility(logs: &[RoundLog], env: usize) -> Result<MeasuredUtility> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for log in logs {
        for rec in &log.agents {
            if rec.compliance == env + 1 {
                sum += rec.outcome.ok_or_else(|| {
                    Error::Estimation("complied agent without outcome".into())
                })?;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::InsufficientData(format!(
            "no complied agents in environment {env}"
        )));
    }
    let mean = sum / count as f64;
    let mut ss = 0.0;
    for log in logs {
        for rec in &log.agents {
            if rec.compliance == env + 1 {
                let d = rec.outcome.unwrap() - mean;
                ss += d * d;
            }
        }
    }
    let stderr = if count > 1 {
        (ss / (count - 1) as f64).sqrt() / (count as f64).sqrt()
    } else {
        0.0
    };
    Ok(MeasuredUtility {
        mean,
        stderr,
        count,
    })
}

/// Splits the measured utility into conditional base performance and
/// conditional performance improvement using the simulator's ground truth:
/// the improvement of a complied agent is (x - b)^T theta_star and the base
/// part is the remainder, so the two add back to the realised outcome
/// exactly.
pub fn measured_cbp_cpi(logs: &[RoundLog], env: usize, theta_star: &[f64]) -> Result<(f64, f64)> {
    let mut cbp_sum = 0.0;
    let mut cpi_sum = 0.0;
    let mut count = 0usize;
    for log in logs {
        for rec in &log.agents {
            if rec.compliance == env + 1 {
                let y = rec.outcome.ok_or_else(|| {
                    Error::Estimation("complied agent without outcome".into())
                })?;
                let improvement: f64 = rec
                    .covariates
                    .iter()
                    .zip(&rec.baseline)
                    .zip(theta_star)
                    .map(|((x, b), t)| (x - b) * t)
                    .sum();
                cpi_sum += improvement;
                cbp_sum += y - improvement;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::InsufficientData(format!(
            "no complied agents in environment {env}"
        )));
    }
    Ok((cbp_sum / count as f64, cpi_sum / count as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SelectionMode;
    use approx::assert_abs_diff_eq;

    fn base_config() -> Config {
        let mut c = Config::synthetic_admissions(1);
        c.population.agents_per_round = 400;
        c
    }

    #[test]
    fn zero_incentive_keeps_baselines() {
        let mut config = base_config();
        config.environments[0].gamma = 0.0;
        let log = run_round(
            &config.population,
            &config.environments,
            &[vec![1.0, 1.0]],
            0,
            7,
            SimOptions::default(),
        )
        .unwrap();
        for rec in &log.agents {
            assert_eq!(rec.action, vec![0.0, 0.0]);
            assert_eq!(rec.covariates, rec.baseline);
        }
    }

    #[test]
    fn noiseless_outcomes_are_exact_predictions_of_truth() {
        let mut config = base_config();
        config.population.noise_stds = vec![vec![0.0], vec![0.0]];
        config.population.noise_means = vec![vec![0.0], vec![0.0]];
        let log = run_round(
            &config.population,
            &config.environments,
            &[vec![0.3, 0.8]],
            1,
            7,
            SimOptions::default(),
        )
        .unwrap();
        for rec in log.agents.iter().filter(|r| r.compliance == 1) {
            let expected = dot(&rec.covariates, &config.environments[0].theta_star);
            assert_abs_diff_eq!(rec.outcome.unwrap(), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn rho_one_single_dm_enrols_everyone() {
        let mut config = base_config();
        config.environments[0].rho = 1.0;
        let log = run_round(
            &config.population,
            &config.environments,
            &[vec![0.0, 0.5]],
            0,
            11,
            SimOptions::default(),
        )
        .unwrap();
        assert!(log
            .agents
            .iter()
            .all(|r| r.compliance == 1 && r.outcome.is_some()));
    }

    #[test]
    fn outcome_present_iff_complied() {
        let config = base_config();
        let logs = run_fixed_thetas(&config, &[vec![0.0, 0.5]], 5, 3, SimOptions::default())
            .unwrap();
        for log in &logs {
            for rec in &log.agents {
                assert_eq!(rec.outcome.is_some(), rec.compliance > 0);
                if rec.compliance > 0 {
                    assert!(rec.selected[rec.compliance - 1]);
                }
            }
        }
    }

    #[test]
    fn identical_seeds_identical_logs() {
        let config = base_config();
        let a = run_fixed_thetas(&config, &[vec![0.1, 0.6]], 4, 99, SimOptions::default())
            .unwrap();
        let b = run_fixed_thetas(&config, &[vec![0.1, 0.6]], 4, 99, SimOptions::default())
            .unwrap();
        assert_eq!(a, b);
        // oracle bookkeeping does not disturb the observed log
        let c = run_fixed_thetas(
            &config,
            &[vec![0.1, 0.6]],
            4,
            99,
            SimOptions {
                oracle_outcomes: true,
            },
        )
        .unwrap();
        for (x, y) in a.iter().zip(&c) {
            for (ra, rc) in x.agents.iter().zip(&y.agents) {
                assert_eq!(ra.outcome, rc.outcome);
                assert_eq!(ra.compliance, rc.compliance);
                assert!(rc.oracle_outcomes.is_some());
            }
        }
    }

    #[test]
    fn empty_horizon_gives_empty_logs() {
        let config = base_config();
        let logs =
            run_fixed_thetas(&config, &[vec![0.0, 0.5]], 0, 1, SimOptions::default()).unwrap();
        assert!(logs.is_empty());
    }

    #[test]
    fn measured_utility_of_constant_outcomes() {
        let mut config = base_config();
        config.population.noise_stds = vec![vec![0.0], vec![0.0]];
        config.population.noise_means = vec![vec![1.0], vec![1.0]];
        config.population.baseline_stds = vec![vec![1e-12, 1e-12], vec![1e-12, 1e-12]];
        config.population.baseline_means = vec![vec![800.0, 2.0], vec![800.0, 2.0]];
        config.environments[0].gamma = 0.0;
        config.environments[0].rho = 1.0;
        let logs =
            run_fixed_thetas(&config, &[vec![0.0, 0.5]], 2, 5, SimOptions::default()).unwrap();
        let u = measured_utility(&logs, 0).unwrap();
        assert_abs_diff_eq!(u.mean, 2.0, epsilon = 1e-6);
        assert!(u.stderr < 1e-9);
    }

    #[test]
    fn cbp_plus_cpi_is_measured_utility() {
        let config = base_config();
        let logs = run_fixed_thetas(&config, &[vec![0.2, 0.7]], 3, 21, SimOptions::default())
            .unwrap();
        let u = measured_utility(&logs, 0).unwrap();
        let (cbp, cpi) = measured_cbp_cpi(&logs, 0, &config.environments[0].theta_star).unwrap();
        assert_abs_diff_eq!(cbp + cpi, u.mean, epsilon = 1e-12);
    }

    #[test]
    fn zero_action_makes_cpi_zero() {
        let mut config = base_config();
        config.environments[0].gamma = 0.0;
        let logs = run_fixed_thetas(&config, &[vec![0.2, 0.7]], 2, 22, SimOptions::default())
            .unwrap();
        let (_, cpi) = measured_cbp_cpi(&logs, 0, &config.environments[0].theta_star).unwrap();
        assert_abs_diff_eq!(cpi, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn homogeneous_cpi_matches_closed_form() {
        let config = base_config();
        let theta = vec![0.1, 0.6];
        let logs = run_fixed_thetas(&config, &[theta.clone()], 2, 23, SimOptions::default())
            .unwrap();
        let (_, cpi) = measured_cbp_cpi(&logs, 0, &config.environments[0].theta_star).unwrap();
        // with a common conversion matrix the improvement is constant across
        // agents: gamma theta^T E E^T theta_star
        let effort = config.population.effort().unwrap();
        let ee_t = effort.matmul(&effort.transpose()).unwrap();
        let expected = config.environments[0].gamma
            * dot(
                &theta,
                &ee_t.mul_vec(&config.environments[0].theta_star).unwrap(),
            );
        assert_abs_diff_eq!(cpi, expected, epsilon = 1e-9);
    }

    #[test]
    fn marginal_equals_conditional_when_selection_vacuous() {
        let mut config = base_config();
        config.population.agents_per_round = 2000;
        config.environments[0].rho = 1.0;
        let theta = vec![0.0, 0.5];
        let logs =
            run_fixed_thetas(&config, &[theta.clone()], 10, 31, SimOptions::default()).unwrap();
        let u = measured_utility(&logs, 0).unwrap();
        // closed-form marginal mean: E[y] = 0.5 (E[b_gpa] + gamma theta_gpa) + E[o]
        let marginal = 0.5 * (2.0 + theta[1]) + 1.0;
        assert!(
            (u.mean - marginal).abs() < 4.0 * u.stderr,
            "mean {} vs marginal {marginal} (se {})",
            u.mean,
            u.stderr
        );
    }

    #[test]
    fn selection_bias_exists_at_half_fraction() {
        let mut config = base_config();
        config.population.agents_per_round = 2000;
        let logs = run_fixed_thetas(
            &config,
            &[vec![0.0, 0.5]],
            10,
            47,
            SimOptions {
                oracle_outcomes: true,
            },
        )
        .unwrap();
        let mut sel = Vec::new();
        let mut all = Vec::new();
        for log in &logs {
            for rec in &log.agents {
                let y = rec.oracle_outcomes.as_ref().unwrap()[0];
                all.push(y);
                if rec.selected[0] {
                    sel.push(y);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let stderr = |v: &[f64]| {
            let mu = mean(v);
            let var = v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (v.len() - 1) as f64;
            (var / v.len() as f64).sqrt()
        };
        let gap = mean(&sel) - mean(&all);
        let se = (stderr(&sel).powi(2) + stderr(&all).powi(2)).sqrt();
        assert!(gap > 5.0 * se, "gap {gap} vs 5 se {}", 5.0 * se);
    }

    #[test]
    fn ranking_cdf_mode_admits_stochastically() {
        let mut config = base_config();
        config.environments[0].selection_mode = SelectionMode::RankingCdf;
        config.population.agents_per_round = 2000;
        let log = run_round(
            &config.population,
            &config.environments,
            &[vec![0.0, 0.5]],
            0,
            13,
            SimOptions::default(),
        )
        .unwrap();
        let admitted = log.agents.iter().filter(|r| r.selected[0]).count() as f64;
        // mean admission probability is about 1/2 under the cohort CDF
        let frac = admitted / 2000.0;
        assert!((frac - 0.5).abs() < 0.05, "admitted fraction {frac}");
    }
}
