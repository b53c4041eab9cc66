//! Regulator-facing computations: the closed-form optimal selection
//! direction, rescaling for fair comparisons, the regulation alignment
//! check, incentive-gap terms and the Gaussian bound on admission-chance
//! reduction, with a Monte Carlo validator for the bound.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::agents::best_response;
use crate::error::{Error, Result};
use crate::numerics::{add, cosine, dot, norm2, scale, std_normal_cdf, sub, Matrix, Vector};

/// Closed-form optimal selection direction: the unit vector along
/// alpha + gamma E E^T theta_star.
pub fn theta_ao_closed_form(
    alpha: &[f64],
    gamma: f64,
    effort: &Matrix,
    theta_star: &[f64],
) -> Result<Vector> {
    let ee_t = effort.matmul(&effort.transpose())?;
    let incentive = ee_t.mul_vec(theta_star)?;
    if alpha.len() != incentive.len() {
        return Err(Error::Dimension(format!(
            "alpha has length {} but the incentive term has length {}",
            alpha.len(),
            incentive.len()
        )));
    }
    let raw = add(alpha, &scale(&incentive, gamma));
    let n = norm2(&raw);
    if n <= 0.0 {
        return Err(Error::InvalidArgument(
            "degenerate direction: alpha + gamma E E^T theta_star is zero".into(),
        ));
    }
    Ok(scale(&raw, 1.0 / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RescaleMode {
    /// Scale to the target norm exactly (optimal-direction vectors).
    ExactNorm,
    /// Scale down only when the norm exceeds the target (regression
    /// estimates, which scaling up would not improve).
    DownOnly,
}

pub fn rescale_theta(theta: &[f64], tau: f64, mode: RescaleMode) -> Result<Vector> {
    if tau <= 0.0 {
        return Err(Error::InvalidArgument("target norm must be positive".into()));
    }
    let n = norm2(theta);
    if n == 0.0 {
        return Err(Error::InvalidArgument("cannot rescale a zero vector".into()));
    }
    Ok(match mode {
        RescaleMode::ExactNorm => scale(theta, tau / n),
        RescaleMode::DownOnly => {
            if n > tau {
                scale(theta, tau / n)
            } else {
                theta.to_vec()
            }
        }
    })
}

/// Alignment between a deployed rule and the improvement direction
/// E E^T theta_star; passing requires strictly positive cosine.
pub fn regulation_check(theta: &[f64], effort: &Matrix, theta_star: &[f64]) -> Result<(f64, bool)> {
    let ee_t = effort.matmul(&effort.transpose())?;
    let improvement = ee_t.mul_vec(theta_star)?;
    let c = cosine(theta, &improvement)?;
    Ok((c, c > 0.0))
}

/// Incentive gap for a single decision maker:
/// gamma (theta_ao^T E E^T theta_ao - theta_star^T E E^T theta_star).
pub fn lambda_single(
    theta_ao: &[f64],
    theta_star: &[f64],
    effort: &Matrix,
    gamma: f64,
) -> Result<f64> {
    let ee_t = effort.matmul(&effort.transpose())?;
    let a = dot(theta_ao, &ee_t.mul_vec(theta_ao)?);
    let s = dot(theta_star, &ee_t.mul_vec(theta_star)?);
    Ok(gamma * (a - s))
}

/// Incentive gap under rivals: the best-response improvement difference
/// between deploying theta_ao_i and theta_star_i while rival rules stay
/// fixed.
pub fn lambda_multi(
    rival_thetas: &[Vector],
    rival_gammas: &[f64],
    gamma_i: f64,
    theta_ao_i: &[f64],
    theta_star_i: &[f64],
    effort: &Matrix,
) -> Result<f64> {
    if rival_thetas.len() != rival_gammas.len() {
        return Err(Error::Dimension("rival rules vs preferences".into()));
    }
    let mut thetas_ao: Vec<Vector> = rival_thetas.to_vec();
    thetas_ao.push(theta_ao_i.to_vec());
    let mut thetas_star: Vec<Vector> = rival_thetas.to_vec();
    thetas_star.push(theta_star_i.to_vec());
    let mut gammas = rival_gammas.to_vec();
    gammas.push(gamma_i);
    let a_ao = best_response(&thetas_ao, &gammas, effort)?;
    let a_star = best_response(&thetas_star, &gammas, effort)?;
    let lift_ao = dot(&effort.mul_vec(&a_ao)?, theta_ao_i);
    let lift_star = dot(&effort.mul_vec(&a_star)?, theta_star_i);
    Ok(lift_ao - lift_star)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundValue {
    pub probability: f64,
    /// Set when theta_ao equals theta_star and no reduction is possible.
    pub degenerate: bool,
}

/// Gaussian upper bound on the probability that switching from the causal
/// rule to the optimal rule reduces an agent's admission chance by more
/// than `m_threshold`.
pub fn reduction_bound(
    m_threshold: f64,
    lipschitz_l: f64,
    lambda: f64,
    sigma: f64,
    theta_ao: &[f64],
    theta_star: &[f64],
) -> Result<BoundValue> {
    if m_threshold <= 0.0 || lipschitz_l <= 0.0 || sigma <= 0.0 {
        return Err(Error::InvalidArgument(
            "threshold, Lipschitz constant and sigma must be positive".into(),
        ));
    }
    let gap = norm2(&sub(theta_ao, theta_star));
    if gap < 1e-12 {
        return Ok(BoundValue {
            probability: 0.0,
            degenerate: true,
        });
    }
    let arg = (-m_threshold / lipschitz_l - lambda) / (sigma * gap);
    Ok(BoundValue {
        probability: std_normal_cdf(arg),
        degenerate: false,
    })
}

/// True when replacing theta_star_i by theta_ao_i cannot lower any rival's
/// predicted score of the agent: for every rival rule,
/// gamma_i (theta_ao_i - theta_star_i)^T E E^T theta_j >= 0.
pub fn improved_chance_check(
    rival_thetas: &[Vector],
    gamma_i: f64,
    theta_ao_i: &[f64],
    theta_star_i: &[f64],
    effort: &Matrix,
) -> Result<bool> {
    let ee_t = effort.matmul(&effort.transpose())?;
    let diff = sub(theta_ao_i, theta_star_i);
    let mapped = ee_t.mul_vec(&diff)?;
    for theta_j in rival_thetas {
        if gamma_i * dot(&mapped, theta_j) < -1e-12 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Parameters of the Monte Carlo validation of the reduction bound. The
/// reference selection function is the clamp delta(yhat) = min(max(L (yhat
/// - c), 0), 1) with c fixed at the analytic median prediction under
/// `theta_a`, increasing and Lipschitz with constant exactly L.
#[derive(Debug, Clone)]
pub struct ReductionProbe {
    pub theta_a: Vector,
    pub theta_b: Vector,
    pub gamma: f64,
    pub sigma: f64,
    pub lipschitz_l: f64,
    pub m_threshold: f64,
    pub n_samples: usize,
}

/// Monte Carlo estimate of p(xi(theta_a) - xi(theta_b) > M) over baselines
/// drawn from N(0, sigma^2 I). Returns the estimate and its standard error.
pub fn empirical_reduction_probability(
    probe: &ReductionProbe,
    effort: &Matrix,
    seed: u64,
) -> Result<(f64, f64)> {
    if probe.n_samples < 100 {
        return Err(Error::InvalidArgument(
            "need at least 100 Monte Carlo samples".into(),
        ));
    }
    if probe.theta_a.len() != probe.theta_b.len() {
        return Err(Error::Dimension("rule dimensions differ".into()));
    }
    let ee_t = effort.matmul(&effort.transpose())?;
    let lift = |theta: &Vector| -> Result<f64> {
        Ok(probe.gamma * dot(theta, &ee_t.mul_vec(theta)?))
    };
    let lift_a = lift(&probe.theta_a)?;
    let lift_b = lift(&probe.theta_b)?;
    // median of yhat under theta_a: the baseline term is symmetric around 0
    let center = lift_a;
    let delta = |yhat: f64| (probe.lipschitz_l * (yhat - center)).clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, probe.sigma).expect("positive sigma");
    let mut hits = 0usize;
    let m = probe.theta_a.len();
    let mut b = vec![0.0; m];
    for _ in 0..probe.n_samples {
        for v in b.iter_mut() {
            *v = normal.sample(&mut rng);
        }
        let xi_a = delta(dot(&b, &probe.theta_a) + lift_a);
        let xi_b = delta(dot(&b, &probe.theta_b) + lift_b);
        if xi_a - xi_b > probe.m_threshold {
            hits += 1;
        }
    }
    let p = hits as f64 / probe.n_samples as f64;
    let se = (p * (1.0 - p) / probe.n_samples as f64).sqrt();
    Ok((p, se))
}

/// Deterministic quasi-uniform grid of unit directions, golden-angle
/// placement on the circle and the matching lattice on the sphere. Only
/// the dimensions used by the grid-argmax oracles are supported.
pub fn unit_sphere_grid(m: usize, count: usize) -> Result<Vec<Vector>> {
    if count == 0 {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    match m {
        2 => Ok((0..count)
            .map(|k| {
                let angle = std::f64::consts::TAU * (k as f64 * (golden - 1.0)).fract();
                vec![angle.cos(), angle.sin()]
            })
            .collect()),
        3 => Ok((0..count)
            .map(|k| {
                let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let angle = std::f64::consts::TAU * (k as f64 * (golden - 1.0)).fract();
                vec![r * angle.cos(), r * angle.sin(), z]
            })
            .collect()),
        _ => Err(Error::InvalidArgument(format!(
            "direction grids are provided for 2 or 3 coordinates, not {m}"
        ))),
    }
}

/// Per-environment welfare summary serialised to a report file.
#[derive(Debug, Clone, Serialize)]
pub struct WelfareReport {
    pub environment: usize,
    pub theta_ao: Vector,
    pub cosine_alignment: f64,
    pub regulation_pass: bool,
    pub lambda: f64,
    pub bound_curve: Vec<(f64, f64)>,
    pub improved_chance_ok: bool,
}

impl WelfareReport {
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }
}
