//! Causal-parameter and nuisance estimation from (biased) observational
//! logs: mean-shift regression over protocol batches, naive OLS on enrolled
//! agents, the two-stage baseline with a cohort-mean first stage, and the
//! rule-response regression that recovers the un-normalised optimal
//! direction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Estimate, RoundLog};
use crate::numerics::{norm2, ols_fit, ols_residual_norm, sub, Matrix, Vector};

/// A pair of rounds over which a scaled deployment is assumed; indices into
/// the log slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundPair {
    pub first: usize,
    pub second: usize,
}

/// Clamp covariates to display ranges when the normalisation flag is on.
fn clipped(x: &[f64], clip: Option<&[(f64, f64)]>) -> Vector {
    match clip {
        Some(ranges) => x
            .iter()
            .zip(ranges)
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect(),
        None => x.to_vec(),
    }
}

struct CellMeans {
    x: Vector,
    y: f64,
    count: usize,
}

fn complied_cell(log: &RoundLog, env: usize, clip: Option<&[(f64, f64)]>) -> Option<CellMeans> {
    let m = log.agents.first()?.covariates.len();
    let mut x = vec![0.0; m];
    let mut y = 0.0;
    let mut count = 0usize;
    for rec in &log.agents {
        if rec.compliance == env + 1 {
            let cx = clipped(&rec.covariates, clip);
            for j in 0..m {
                x[j] += cx[j];
            }
            y += rec.outcome?;
            count += 1;
        }
    }
    if count == 0 {
        return None;
    }
    for v in x.iter_mut() {
        *v /= count as f64;
    }
    Some(CellMeans {
        x,
        y: y / count as f64,
        count,
    })
}

/// The stacked per-batch difference rows feeding the mean-shift regression.
pub struct BatchDeltas {
    pub rows: Vec<Vector>,
    pub ys: Vec<f64>,
    pub sample_size: usize,
    pub dropped: usize,
}

/// Computes per-batch complied-cohort mean differences, dropping batches
/// whose complied cell is below `min_cell` on either side.
pub fn mslr_batch_deltas(
    logs: &[RoundLog],
    env: usize,
    pairs: &[RoundPair],
    min_cell: usize,
    clip: Option<&[(f64, f64)]>,
) -> Result<BatchDeltas> {
    if logs.is_empty() {
        return Err(Error::InsufficientData("no logged rounds".into()));
    }
    let mut rows: Vec<Vector> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut sample_size = 0usize;
    let mut dropped = 0usize;
    for pair in pairs {
        if pair.first >= logs.len() || pair.second >= logs.len() {
            continue;
        }
        let first = complied_cell(&logs[pair.first], env, clip);
        let second = complied_cell(&logs[pair.second], env, clip);
        match (first, second) {
            (Some(a), Some(b)) if a.count >= min_cell && b.count >= min_cell => {
                rows.push(sub(&b.x, &a.x));
                ys.push(b.y - a.y);
                sample_size += a.count + b.count;
            }
            _ => dropped += 1,
        }
    }
    Ok(BatchDeltas {
        rows,
        ys,
        sample_size,
        dropped,
    })
}

/// Mean-shift regression: per batch, difference the complied-cohort outcome
/// and covariate means across the paired rounds, then regress the stacked
/// outcome differences on the covariate differences without an intercept
/// (differencing cancels the constant).
pub fn mslr_fit(
    logs: &[RoundLog],
    env: usize,
    pairs: &[RoundPair],
    min_cell: usize,
    clip: Option<&[(f64, f64)]>,
) -> Result<Estimate> {
    let m = logs
        .first()
        .and_then(|l| l.agents.first())
        .map(|a| a.covariates.len())
        .ok_or_else(|| Error::InsufficientData("no logged rounds".into()))?;
    let deltas = mslr_batch_deltas(logs, env, pairs, min_cell, clip)?;
    if deltas.dropped > 0 {
        eprintln!(
            "mslr: dropped {} batches with complied cells below {min_cell}",
            deltas.dropped
        );
    }
    if deltas.rows.len() < m {
        return Err(Error::InsufficientData(format!(
            "mean-shift regression needs at least {m} usable batches, got {}",
            deltas.rows.len()
        )));
    }
    let design = Matrix::from_rows(&deltas.rows)?;
    let targets = Matrix::new(deltas.ys.len(), 1, deltas.ys.clone())?;
    let coef = ols_fit(&design, &targets, false)?;
    let coefficients: Vector = (0..m).map(|j| coef.get(j, 0)).collect();
    let residual_norm = ols_residual_norm(&design, &targets, &coef, false);
    Ok(Estimate {
        coefficients,
        intercept: None,
        sample_size: deltas.sample_size,
        batch_count: Some(deltas.rows.len()),
        residual_norm,
    })
}

/// All (covariates, outcome) pairs of agents enrolled in `env`.
pub fn complied_observations(
    logs: &[RoundLog],
    env: usize,
    clip: Option<&[(f64, f64)]>,
) -> (Vec<Vector>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for log in logs {
        for rec in &log.agents {
            if rec.compliance == env + 1 {
                if let Some(y) = rec.outcome {
                    xs.push(clipped(&rec.covariates, clip));
                    ys.push(y);
                }
            }
        }
    }
    (xs, ys)
}

/// Ordinary regression of realised outcomes on covariates over enrolled
/// agents only, with intercept. Biased under confounding or selection; kept
/// as the baseline it is.
pub fn naive_ols_fit(
    logs: &[RoundLog],
    env: usize,
    clip: Option<&[(f64, f64)]>,
) -> Result<Estimate> {
    let (xs, ys) = complied_observations(logs, env, clip);
    if xs.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no complied observations in environment {env}"
        )));
    }
    let m = xs[0].len();
    if xs.len() < m + 1 {
        return Err(Error::InsufficientData(format!(
            "need at least {} complied observations, got {}",
            m + 1,
            xs.len()
        )));
    }
    let design = Matrix::from_rows(&xs)?;
    let targets = Matrix::new(ys.len(), 1, ys.clone())?;
    let coef = ols_fit(&design, &targets, true)?;
    let coefficients: Vector = (0..m).map(|j| coef.get(j, 0)).collect();
    Ok(Estimate {
        coefficients,
        intercept: Some(coef.get(m, 0)),
        sample_size: xs.len(),
        batch_count: None,
        residual_norm: ols_residual_norm(&design, &targets, &coef, true),
    })
}

/// First-stage estimate of the incentive response: the matrix mapping the
/// preference-weighted deployed rule to the cohort-mean covariates, plus
/// the mean baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaEstimate {
    pub omega: Matrix,
    pub baseline_mean: Vector,
    pub rounds_used: usize,
}

/// Regresses per-round cohort-mean covariates on the preference-weighted
/// deployed rule with an intercept block. Cohort means over all agents make
/// the conditional expectation well estimated at the usual cohort sizes.
pub fn omega_fit(
    logs: &[RoundLog],
    gammas: &[f64],
    clip: Option<&[(f64, f64)]>,
) -> Result<OmegaEstimate> {
    if logs.is_empty() {
        return Err(Error::InsufficientData("no logged rounds".into()));
    }
    let m = logs[0]
        .agents
        .first()
        .map(|a| a.covariates.len())
        .ok_or_else(|| Error::InsufficientData("empty round cohort".into()))?;
    let mut us: Vec<Vector> = Vec::with_capacity(logs.len());
    let mut xbars: Vec<Vector> = Vec::with_capacity(logs.len());
    for log in logs {
        if log.thetas.len() != gammas.len() {
            return Err(Error::Dimension(format!(
                "round {} logs {} rules but {} preferences given",
                log.round,
                log.thetas.len(),
                gammas.len()
            )));
        }
        let mut u = vec![0.0; m];
        for (theta, gamma) in log.thetas.iter().zip(gammas) {
            for j in 0..m {
                u[j] += gamma * theta[j];
            }
        }
        let mut xbar = vec![0.0; m];
        for rec in &log.agents {
            let cx = clipped(&rec.covariates, clip);
            for j in 0..m {
                xbar[j] += cx[j];
            }
        }
        for v in xbar.iter_mut() {
            *v /= log.agents.len() as f64;
        }
        us.push(u);
        xbars.push(xbar);
    }
    if us.iter().all(|u| norm2(u) < 1e-12) {
        return Err(Error::Singular(
            "no incentive signal: preference-weighted rules are zero in every round".into(),
        ));
    }
    let design = Matrix::from_rows(&us)?;
    let targets = Matrix::from_rows(&xbars)?;
    let coef = ols_fit(&design, &targets, true).map_err(|e| match e {
        Error::Singular(msg) => Error::Singular(format!(
            "deployed incentive directions do not span the coefficient space: {msg}"
        )),
        other => other,
    })?;
    // regression coefficients are the transpose of the response matrix
    let mut omega = Matrix::zeros(m, m);
    for j in 0..m {
        for k in 0..m {
            omega.set(j, k, coef.get(k, j));
        }
    }
    let baseline_mean: Vector = (0..m).map(|j| coef.get(m, j)).collect();
    Ok(OmegaEstimate {
        omega,
        baseline_mean,
        rounds_used: logs.len(),
    })
}

/// Second-stage observations of the two-stage baseline: every enrolled
/// agent's realised outcome against its round's predicted cohort-mean
/// covariates from the first stage.
pub fn two_sls_stage2_observations(
    logs: &[RoundLog],
    env: usize,
    gammas: &[f64],
    clip: Option<&[(f64, f64)]>,
) -> Result<(Vec<Vector>, Vec<f64>)> {
    let stage1 = omega_fit(logs, gammas, clip)?;
    let m = stage1.baseline_mean.len();
    let mut xs: Vec<Vector> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for log in logs {
        let mut u = vec![0.0; m];
        for (theta, gamma) in log.thetas.iter().zip(gammas) {
            for j in 0..m {
                u[j] += gamma * theta[j];
            }
        }
        let mut xhat = stage1.omega.mul_vec(&u)?;
        for j in 0..m {
            xhat[j] += stage1.baseline_mean[j];
        }
        for rec in &log.agents {
            if rec.compliance == env + 1 {
                if let Some(y) = rec.outcome {
                    xs.push(xhat.clone());
                    ys.push(y);
                }
            }
        }
    }
    Ok((xs, ys))
}

/// Two-stage baseline: stage one predicts per-round cohort-mean covariates
/// from the deployed rules, stage two regresses realised outcomes of
/// enrolled agents on those predictions with an intercept. Selection-blind
/// by construction.
pub fn two_sls_fit(
    logs: &[RoundLog],
    env: usize,
    gammas: &[f64],
    clip: Option<&[(f64, f64)]>,
) -> Result<Estimate> {
    let rounds_used = logs.len();
    let (xs, ys) = two_sls_stage2_observations(logs, env, gammas, clip)?;
    let m = xs.first().map(|x| x.len()).unwrap_or(0);
    if xs.len() < m + 1 || m == 0 {
        return Err(Error::InsufficientData(format!(
            "need at least {} complied observations for the second stage, got {}",
            m + 1,
            xs.len()
        )));
    }
    let design = Matrix::from_rows(&xs)?;
    let targets = Matrix::new(ys.len(), 1, ys.clone())?;
    let coef = ols_fit(&design, &targets, true)?;
    let coefficients: Vector = (0..m).map(|j| coef.get(j, 0)).collect();
    Ok(Estimate {
        coefficients,
        intercept: Some(coef.get(m, 0)),
        sample_size: xs.len(),
        batch_count: Some(rounds_used),
        residual_norm: ols_residual_norm(&design, &targets, &coef, true),
    })
}

/// One observation for the rule-response regression: the DM's own deployed
/// rule, the rival rules in force, and the measured utility.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaSample {
    pub theta: Vector,
    pub rivals: Vec<Vector>,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KappaEstimate {
    /// Un-normalised optimal direction estimate.
    pub kappa: Vector,
    /// Intercept absorbing the rival-dependent offset.
    pub zeta: f64,
    pub sample_size: usize,
    pub residual_norm: f64,
}

/// Regresses measured utility on the DM's own rule with an intercept. The
/// regression conditions on fixed rival rules, so samples with varying
/// rivals are rejected.
pub fn kappa_fit(samples: &[KappaSample]) -> Result<KappaEstimate> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InsufficientData("no utility samples".into()))?;
    let m = first.theta.len();
    if samples.len() < m + 1 {
        return Err(Error::InsufficientData(format!(
            "need at least {} utility samples for {} coefficients plus intercept, got {}",
            m + 1,
            m,
            samples.len()
        )));
    }
    for s in samples {
        if s.rivals.len() != first.rivals.len() {
            return Err(Error::InvalidArgument(
                "rival rule count varies across samples".into(),
            ));
        }
        for (a, b) in s.rivals.iter().zip(&first.rivals) {
            let scale = norm2(b).max(1e-300);
            if norm2(&sub(a, b)) > 1e-9 * scale {
                return Err(Error::InvalidArgument(
                    "rival rules vary across samples; the regression conditions on a fixed rival profile".into(),
                ));
            }
        }
    }
    let xs: Vec<Vector> = samples.iter().map(|s| s.theta.clone()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.q).collect();
    let design = Matrix::from_rows(&xs)?;
    let targets = Matrix::new(ys.len(), 1, ys.clone())?;
    let coef = ols_fit(&design, &targets, true)?;
    Ok(KappaEstimate {
        kappa: (0..m).map(|j| coef.get(j, 0)).collect(),
        zeta: coef.get(m, 0),
        sample_size: samples.len(),
        residual_norm: ols_residual_norm(&design, &targets, &coef, true),
    })
}

/// Classical OLS standard errors from the residual variance and the normal
/// equations, one entry per coefficient (intercept last when present).
pub fn analytic_ols_stderr(rows: &[Vector], ys: &[f64], with_intercept: bool) -> Result<Vector> {
    if rows.is_empty() || rows.len() != ys.len() {
        return Err(Error::InsufficientData("empty regression input".into()));
    }
    let m = rows[0].len();
    let p = m + usize::from(with_intercept);
    if rows.len() <= p {
        return Err(Error::InsufficientData(
            "no residual degrees of freedom".into(),
        ));
    }
    let design = Matrix::from_rows(rows)?;
    let targets = Matrix::new(ys.len(), 1, ys.to_vec())?;
    let coef = ols_fit(&design, &targets, with_intercept)?;
    let rss = ols_residual_norm(&design, &targets, &coef, with_intercept).powi(2);
    let sigma2 = rss / (rows.len() - p) as f64;
    // diagonal of sigma^2 (X'X)^{-1} via one solve per unit vector
    let mut xtx = Matrix::zeros(p, p);
    let mut xrow = vec![0.0; p];
    for r in rows {
        xrow[..m].copy_from_slice(r);
        if with_intercept {
            xrow[m] = 1.0;
        }
        for i in 0..p {
            for j in 0..p {
                let v = xtx.get(i, j) + xrow[i] * xrow[j];
                xtx.set(i, j, v);
            }
        }
    }
    let mut out = vec![0.0; p];
    for j in 0..p {
        let mut e = vec![0.0; p];
        e[j] = 1.0;
        let col = crate::numerics::solve_linear(&xtx, &e)?;
        out[j] = (sigma2 * col[j]).max(0.0).sqrt();
    }
    Ok(out)
}

/// Nonparametric bootstrap standard errors for a least-squares coefficient
/// vector, resampling whole rows (batches for the mean-shift regression,
/// observations otherwise).
pub fn bootstrap_stderr(
    rows: &[Vector],
    ys: &[f64],
    with_intercept: bool,
    resamples: usize,
    seed: u64,
) -> Result<Vector> {
    if rows.len() != ys.len() || rows.is_empty() {
        return Err(Error::InsufficientData("empty bootstrap input".into()));
    }
    let n = rows.len();
    let m = rows[0].len();
    let p = m + usize::from(with_intercept);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws: Vec<Vector> = Vec::with_capacity(resamples);
    let mut xs = Vec::with_capacity(n);
    let mut ts = Vec::with_capacity(n);
    for _ in 0..resamples {
        xs.clear();
        ts.clear();
        for _ in 0..n {
            let idx = rng.random_range(0..n);
            xs.push(rows[idx].clone());
            ts.push(ys[idx]);
        }
        let design = Matrix::from_rows(&xs)?;
        let targets = Matrix::new(n, 1, ts.clone())?;
        if let Ok(coef) = ols_fit(&design, &targets, with_intercept) {
            draws.push((0..p).map(|j| coef.get(j, 0)).collect());
        }
    }
    if draws.len() < resamples / 2 {
        return Err(Error::Estimation(
            "too many degenerate bootstrap resamples".into(),
        ));
    }
    let k = draws.len() as f64;
    let mut stderr = vec![0.0; p];
    for j in 0..p {
        let mean: f64 = draws.iter().map(|d| d[j]).sum::<f64>() / k;
        let var: f64 = draws.iter().map(|d| (d[j] - mean).powi(2)).sum::<f64>() / (k - 1.0);
        stderr[j] = var.sqrt();
    }
    Ok(stderr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Config;
    use crate::numerics::dot;
    use crate::protocol::{self, build_schedule};
    use crate::simulator::{self, SimOptions};
    use approx::assert_abs_diff_eq;

    fn coalition_pairs(schedule: &protocol::DeploymentSchedule) -> Vec<RoundPair> {
        schedule
            .coalition
            .iter()
            .map(|b| RoundPair {
                first: b.first,
                second: b.second,
            })
            .collect()
    }

    fn noiseless_config(rounds: usize, agents: usize) -> Config {
        let mut c = Config::synthetic_admissions(1);
        c.population.agents_per_round = agents;
        c.population.noise_means = vec![vec![0.0], vec![0.0]];
        c.population.noise_stds = vec![vec![0.0], vec![0.0]];
        c.schedule.rounds = rounds;
        c
    }

    #[test]
    fn mslr_exact_on_noiseless_logs() {
        let config = noiseless_config(40, 300);
        let schedule = build_schedule(&config.schedule, 5).unwrap();
        let logs = simulator::run_experiment(&config, &schedule, 5, SimOptions::default()).unwrap();
        let pairs = coalition_pairs(&schedule);
        assert_eq!(pairs.len(), 20);
        let est = mslr_fit(&logs, 0, &pairs, 5, None).unwrap();
        let err = norm2(&sub(&est.coefficients, &config.environments[0].theta_star));
        assert!(err < 1e-6, "error {err}");
        assert_eq!(est.batch_count, Some(20));
    }

    #[test]
    fn mslr_null_effect_estimates_near_zero() {
        let mut config = Config::synthetic_admissions(1);
        config.population.agents_per_round = 500;
        config.environments[0].theta_star = vec![0.0, 0.0];
        config.schedule.rounds = 60;
        let schedule = build_schedule(&config.schedule, 9).unwrap();
        let logs = simulator::run_experiment(&config, &schedule, 9, SimOptions::default()).unwrap();
        let est = mslr_fit(&logs, 0, &coalition_pairs(&schedule), 5, None).unwrap();
        assert!(norm2(&est.coefficients) < 0.05, "{:?}", est.coefficients);
    }

    #[test]
    fn mslr_without_pairs_errors_out() {
        let config = noiseless_config(10, 100);
        let schedule = build_schedule(&config.schedule, 2).unwrap();
        let logs = simulator::run_experiment(&config, &schedule, 2, SimOptions::default()).unwrap();
        assert!(matches!(
            mslr_fit(&logs, 0, &[], 5, None),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn mslr_delta_statistics_insensitive_to_scale_choice() {
        // the endogenous part of each batch equation, delta ybar minus
        // delta xbar' theta_star, keeps its distribution whether the second
        // round is an exact copy (k = 1) or a scaled release (k in [0.5, 2])
        let residuals = |scale_min: f64, scale_max: f64, seed0: u64| -> Vec<f64> {
            let mut out = Vec::new();
            for seed in 0..8u64 {
                let mut config = Config::synthetic_admissions(1);
                config.population.agents_per_round = 400;
                config.schedule.rounds = 48;
                config.schedule.scale_min = scale_min;
                config.schedule.scale_max = scale_max;
                let schedule = build_schedule(&config.schedule, seed0 + seed).unwrap();
                let logs = simulator::run_experiment(
                    &config,
                    &schedule,
                    seed0 + 100 + seed,
                    SimOptions::default(),
                )
                .unwrap();
                let theta_star = &config.environments[0].theta_star;
                for pair in coalition_pairs(&schedule) {
                    let a = complied_cell(&logs[pair.first], 0, None).unwrap();
                    let b = complied_cell(&logs[pair.second], 0, None).unwrap();
                    out.push(b.y - a.y - dot(&sub(&b.x, &a.x), theta_star));
                }
            }
            out
        };
        let fixed = residuals(1.0, 1.0, 100);
        let scaled = residuals(0.5, 2.0, 300);
        let ks = crate::numerics::two_sample_ks(&fixed, &scaled).unwrap();
        let (n1, n2) = (fixed.len() as f64, scaled.len() as f64);
        let crit = 1.62762 * ((n1 + n2) / (n1 * n2)).sqrt();
        assert!(ks < crit, "ks {ks} crit {crit}");
    }

    #[test]
    fn ols_consistent_without_confounding_or_selection() {
        let mut config = Config::synthetic_admissions(1);
        config.population.agents_per_round = 800;
        config.population.noise_means = vec![vec![1.0], vec![1.0]];
        config.environments[0].rho = 1.0;
        config.schedule.rounds = 10;
        let schedule = build_schedule(&config.schedule, 3).unwrap();
        let logs = simulator::run_experiment(&config, &schedule, 3, SimOptions::default()).unwrap();
        let est = naive_ols_fit(&logs, 0, None).unwrap();
        let err = norm2(&sub(&est.coefficients, &config.environments[0].theta_star));
        assert!(err < 0.02, "error {err}");
        assert_abs_diff_eq!(est.intercept.unwrap(), 1.0, epsilon = 0.05);
    }

    #[test]
    fn ols_biased_under_confounding_even_without_selection() {
        let mut config = Config::synthetic_admissions(1);
        config.population.agents_per_round = 800;
        config.environments[0].rho = 1.0;
        config.schedule.rounds = 20;
        let schedule = build_schedule(&config.schedule, 4).unwrap();
        let logs = simulator::run_experiment(&config, &schedule, 4, SimOptions::default()).unwrap();
        let est = naive_ols_fit(&logs, 0, None).unwrap();
        let err = norm2(&sub(&est.coefficients, &config.environments[0].theta_star));
        assert!(err > 0.05, "expected visible confounding bias, got {err}");
    }

    #[test]
    fn omega_recovers_effort_outer_product() {
        let mut config = Config::synthetic_admissions(1);
        config.population.agents_per_round = 600;
        config.schedule.rounds = 40;
        let schedule = build_schedule(&config.schedule, 6).unwrap();
        let logs = simulator::run_experiment(&config, &schedule, 6, SimOptions::default()).unwrap();
        let est = omega_fit(&logs, &config.gammas(), None).unwrap();
        assert!((est.omega.get(0, 0) - 100.0).abs() < 3.0, "{:?}", est.omega);
        assert!((est.omega.get(1, 1) - 1.0).abs() < 0.15);
        assert!(est.omega.get(0, 1).abs() < 2.0);
        assert!(est.omega.get(1, 0).abs() < 0.15);
        // mean baseline of the half-half mixture
        assert!((est.baseline_mean[0] - 900.0).abs() < 15.0);
        assert!((est.baseline_mean[1] - 2.0).abs() < 0.2);
    }

    #[test]
    fn omega_requires_incentive_signal() {
        let mut config = Config::synthetic_admissions(1);
        config.population.agents_per_round = 200;
        config.environments[0].gamma = 0.0;
        config.schedule.rounds = 10;
        let schedule = build_schedule(&config.schedule, 7).unwrap();
        let logs = simulator::run_experiment(&config, &schedule, 7, SimOptions::default()).unwrap();
        assert!(matches!(
            omega_fit(&logs, &config.gammas(), None),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn two_sls_exact_on_noiseless_unselected_logs() {
        let mut config = noiseless_config(30, 400);
        config.environments[0].rho = 1.0;
        let schedule = build_schedule(&config.schedule, 8).unwrap();
        let logs = simulator::run_experiment(&config, &schedule, 8, SimOptions::default()).unwrap();
        let est = two_sls_fit(&logs, 0, &config.gammas(), None).unwrap();
        let err = norm2(&sub(&est.coefficients, &config.environments[0].theta_star));
        assert!(err < 1e-6, "error {err}");
    }

    #[test]
    fn two_sls_consistent_under_confounding_without_selection() {
        let mut config = Config::synthetic_admissions(1);
        config.population.agents_per_round = 1000;
        config.environments[0].rho = 1.0;
        config.schedule.rounds = 60;
        let schedule = build_schedule(&config.schedule, 10).unwrap();
        let logs =
            simulator::run_experiment(&config, &schedule, 10, SimOptions::default()).unwrap();
        let est = two_sls_fit(&logs, 0, &config.gammas(), None).unwrap();
        let err = norm2(&sub(&est.coefficients, &config.environments[0].theta_star));
        assert!(err < 0.05, "error {err}");
    }

    #[test]
    fn kappa_recovers_synthetic_linear_utility() {
        let kappa = vec![0.3, 0.7];
        let zeta = 0.2;
        let thetas = [
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
            vec![2.0, -1.0],
        ];
        let samples: Vec<KappaSample> = thetas
            .iter()
            .map(|t| KappaSample {
                theta: t.clone(),
                rivals: vec![vec![0.5, 0.5]],
                q: dot(&kappa, t) + zeta,
            })
            .collect();
        let est = kappa_fit(&samples).unwrap();
        assert_abs_diff_eq!(est.kappa[0], 0.3, epsilon = 1e-9);
        assert_abs_diff_eq!(est.kappa[1], 0.7, epsilon = 1e-9);
        assert_abs_diff_eq!(est.zeta, 0.2, epsilon = 1e-9);
    }

    #[test]
    fn kappa_needs_enough_samples_and_fixed_rivals() {
        let mk = |theta: Vec<f64>, rival: Vec<f64>| KappaSample {
            theta,
            rivals: vec![rival],
            q: 1.0,
        };
        let short = vec![
            mk(vec![1.0, 0.0], vec![0.0, 1.0]),
            mk(vec![0.0, 1.0], vec![0.0, 1.0]),
        ];
        assert!(matches!(
            kappa_fit(&short),
            Err(Error::InsufficientData(_))
        ));
        let varying = vec![
            mk(vec![1.0, 0.0], vec![0.0, 1.0]),
            mk(vec![0.0, 1.0], vec![0.0, 2.0]),
            mk(vec![1.0, 1.0], vec![0.0, 1.0]),
        ];
        assert!(matches!(
            kappa_fit(&varying),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn kappa_direction_matches_base_slope_plus_incentive_term() {
        // the per-round utility splits into base and improvement parts, and
        // the improvement part is exactly linear in the deployed rule, so
        // the utility regression equals the base regression shifted by
        // gamma E E^T theta_star
        let mut config = Config::synthetic_admissions(1);
        config.population.agents_per_round = 400;
        config.schedule.rounds = 120;
        let schedule = build_schedule(&config.schedule, 12).unwrap();
        let logs =
            simulator::run_experiment(&config, &schedule, 12, SimOptions::default()).unwrap();
        let mut q_samples = Vec::new();
        let mut cbp_rows = Vec::new();
        let mut cbp_ys = Vec::new();
        for log in &logs {
            let u = simulator::measured_utility(std::slice::from_ref(log), 0).unwrap();
            q_samples.push(KappaSample {
                theta: log.thetas[0].clone(),
                rivals: vec![],
                q: u.mean,
            });
            let (cbp, _) =
                simulator::measured_cbp_cpi(std::slice::from_ref(log), 0, &config.environments[0].theta_star)
                    .unwrap();
            cbp_rows.push(log.thetas[0].clone());
            cbp_ys.push(cbp);
        }
        let est = kappa_fit(&q_samples).unwrap();
        let design = Matrix::from_rows(&cbp_rows).unwrap();
        let targets = Matrix::new(cbp_ys.len(), 1, cbp_ys.clone()).unwrap();
        let alpha_fit = ols_fit(&design, &targets, true).unwrap();
        let effort = config.population.effort().unwrap();
        let ee_t = effort.matmul(&effort.transpose()).unwrap();
        let incentive = ee_t
            .mul_vec(&config.environments[0].theta_star)
            .unwrap();
        let expected: Vector = (0..2)
            .map(|j| alpha_fit.get(j, 0) + config.environments[0].gamma * incentive[j])
            .collect();
        let cosine = crate::numerics::cosine(&est.kappa, &expected).unwrap();
        // identical designs make the two fits add exactly; 10 degrees is a
        // loose ceiling on top of float error
        assert!(cosine > (10f64.to_radians()).cos(), "cosine {cosine}");
        assert!(cosine > 1.0 - 1e-9);
    }

    #[test]
    fn bootstrap_stderr_shrinks_with_sample_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let gen = |n: usize, rng: &mut ChaCha8Rng| {
            let rows: Vec<Vector> = (0..n)
                .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                .collect();
            let ys: Vec<f64> = rows
                .iter()
                .map(|r| r[0] * 2.0 - r[1] + 0.1 * rng.random_range(-1.0..1.0f64))
                .collect();
            (rows, ys)
        };
        let (rows_s, ys_s) = gen(30, &mut rng);
        let (rows_l, ys_l) = gen(480, &mut rng);
        let se_small = bootstrap_stderr(&rows_s, &ys_s, false, 200, 1).unwrap();
        let se_large = bootstrap_stderr(&rows_l, &ys_l, false, 200, 1).unwrap();
        assert!(se_large[0] < se_small[0]);
        assert!(se_large[1] < se_small[1]);
    }
}
