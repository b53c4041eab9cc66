//! Agent-side behaviour: baseline sampling, the closed-form best response,
//! covariate realisation and the two sensitivity transforms.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::PopulationSpec;
use crate::numerics::{dot, Matrix, Vector};

/// Relative size of the effort-matrix perturbation at full strength.
const PERTURB_REL_STD: f64 = 0.2;
/// Absolute floor for the perturbation standard deviation.
const PERTURB_STD_FLOOR: f64 = 0.1;
/// Per-group multipliers on the perturbation scale; disadvantaged agents
/// convert effort less consistently. A stated modelling choice, the source
/// setup only fixes the distribution family.
const PERTURB_GROUP_SCALE: [f64; 2] = [1.5, 0.75];

/// Utility-maximising action against the published rules:
/// effort^T (sum_i gamma_i theta_i).
pub fn best_response(thetas: &[Vector], gammas: &[f64], effort: &Matrix) -> Result<Vector> {
    if thetas.len() != gammas.len() || thetas.is_empty() {
        return Err(Error::Dimension(format!(
            "{} rules vs {} preferences",
            thetas.len(),
            gammas.len()
        )));
    }
    let m = effort.rows();
    let mut weighted = vec![0.0; m];
    for (theta, gamma) in thetas.iter().zip(gammas) {
        if theta.len() != m {
            return Err(Error::Dimension(format!(
                "rule dimension {} does not match effort rows {m}",
                theta.len()
            )));
        }
        for j in 0..m {
            weighted[j] += gamma * theta[j];
        }
    }
    effort.tr_mul_vec(&weighted)
}

/// Agent payoff: sum_i gamma_i (b + E a)^T theta_i - ||a||^2 / 2.
pub fn agent_utility(
    action: &[f64],
    thetas: &[Vector],
    gammas: &[f64],
    baseline: &[f64],
    effort: &Matrix,
) -> Result<f64> {
    if thetas.len() != gammas.len() {
        return Err(Error::Dimension("rules vs preferences".into()));
    }
    if baseline.len() != effort.rows() || action.len() != effort.cols() {
        return Err(Error::Dimension(
            "baseline or action does not match effort shape".into(),
        ));
    }
    let improvement = effort.mul_vec(action)?;
    let mut payoff = 0.0;
    for (theta, gamma) in thetas.iter().zip(gammas) {
        if theta.len() != baseline.len() {
            return Err(Error::Dimension("rule dimension".into()));
        }
        let mut pred = 0.0;
        for j in 0..baseline.len() {
            pred += (baseline[j] + improvement[j]) * theta[j];
        }
        payoff += gamma * pred;
    }
    Ok(payoff - 0.5 * dot(action, action))
}

/// Independent normal draws per coordinate with the group's parameters.
pub fn sample_baseline(group: usize, population: &PopulationSpec, rng: &mut impl Rng) -> Vector {
    let means = &population.baseline_means[group];
    let stds = &population.baseline_stds[group];
    means
        .iter()
        .zip(stds)
        .map(|(mu, sd)| Normal::new(*mu, *sd).expect("validated std").sample(rng))
        .collect()
}

/// Blends the common conversion matrix with a per-agent perturbed draw:
/// (1 - alpha2) E + alpha2 E_rand, where E_rand is entrywise normal around E
/// with a group-dependent scale.
pub fn perturb_effort(
    effort: &Matrix,
    alpha2: f64,
    group: usize,
    rng: &mut impl Rng,
) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&alpha2) {
        return Err(Error::InvalidArgument("alpha2 must lie in [0, 1]".into()));
    }
    if alpha2 == 0.0 {
        return Ok(effort.clone());
    }
    let scale = PERTURB_GROUP_SCALE[group.min(PERTURB_GROUP_SCALE.len() - 1)];
    let mut out = Matrix::zeros(effort.rows(), effort.cols());
    for i in 0..effort.rows() {
        for j in 0..effort.cols() {
            let e = effort.get(i, j);
            let sd = (PERTURB_REL_STD * e.abs()).max(PERTURB_STD_FLOOR) * scale;
            let drawn = Normal::new(e, sd).expect("positive std").sample(rng);
            out.set(i, j, (1.0 - alpha2) * e + alpha2 * drawn);
        }
    }
    Ok(out)
}

fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Covariate realisation. The linear part is b + E a; alpha1 blends it with
/// a scaled logistic squashing, coordinatewise, with scale `scales` (the
/// pooled baseline standard deviation per coordinate).
pub fn realize_covariates(
    baseline: &[f64],
    action: &[f64],
    effort: &Matrix,
    alpha1: f64,
    scales: &[f64],
) -> Result<Vector> {
    if !(0.0..=1.0).contains(&alpha1) {
        return Err(Error::InvalidArgument("alpha1 must lie in [0, 1]".into()));
    }
    if baseline.len() != effort.rows() || scales.len() != effort.rows() {
        return Err(Error::Dimension("baseline/scales vs effort rows".into()));
    }
    let improvement = effort.mul_vec(action)?;
    let mut out = Vec::with_capacity(baseline.len());
    for j in 0..baseline.len() {
        let linear = baseline[j] + improvement[j];
        if alpha1 == 0.0 {
            out.push(linear);
        } else {
            let s = scales[j].max(f64::MIN_POSITIVE);
            out.push((1.0 - alpha1) * linear + alpha1 * s * logistic(linear / s));
        }
    }
    Ok(out)
}
