//! Decision-maker-side selection rules and agent compliance.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::empirical_cdf;

/// Probability of admission under the ranking rule: the cohort CDF of the
/// score at this agent's score (weak inequality).
pub fn ranking_prob(score: f64, population_scores: &[f64]) -> Result<f64> {
    empirical_cdf(population_scores, score)
}

/// Deterministic top-fraction selection: an agent is admitted when the
/// strict-less cohort CDF of its score reaches 1 - rho. Equal scores get
/// equal flags, so a fully tied cohort below the threshold selects nobody
/// while rho = 1 selects everyone.
pub fn top_rho_select(scores: &[f64], rho: f64) -> Result<Vec<bool>> {
    if scores.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "selection fraction must lie in (0, 1], got {rho}"
        )));
    }
    let n = scores.len();
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let threshold = (1.0 - rho) * n as f64;
    let flags = scores
        .iter()
        .map(|&s| {
            let below = sorted.partition_point(|&v| v < s);
            // epsilon absorbs float roundoff when (1 - rho) n is integral
            below as f64 + 1e-9 >= threshold
        })
        .collect();
    Ok(flags)
}

/// Picks which positive decision the agent follows: 0 when nobody admitted
/// it, otherwise environment i (1-based) with probability proportional to
/// the preference weights over admitting environments. Returns the drawn
/// compliance and whether the degenerate all-zero-preference fallback
/// (uniform over admitters) was used.
pub fn sample_compliance(
    selected: &[bool],
    gammas: &[f64],
    rng: &mut impl Rng,
) -> Result<(usize, bool)> {
    if selected.len() != gammas.len() {
        return Err(Error::Dimension(format!(
            "{} selection flags vs {} preferences",
            selected.len(),
            gammas.len()
        )));
    }
    let admitters: Vec<usize> = (0..selected.len()).filter(|&i| selected[i]).collect();
    if admitters.is_empty() {
        return Ok((0, false));
    }
    if admitters.len() == 1 {
        return Ok((admitters[0] + 1, false));
    }
    let total: f64 = admitters.iter().map(|&i| gammas[i]).sum();
    let u: f64 = rng.random();
    if total <= 0.0 {
        let idx = ((u * admitters.len() as f64) as usize).min(admitters.len() - 1);
        return Ok((admitters[idx] + 1, true));
    }
    let mut acc = 0.0;
    for &i in &admitters {
        acc += gammas[i] / total;
        if u < acc {
            return Ok((i + 1, false));
        }
    }
    Ok((admitters[admitters.len() - 1] + 1, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ranking_prob_extremes() {
        let pop = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(ranking_prob(4.0, &pop).unwrap(), 1.0);
        assert_eq!(ranking_prob(0.5, &pop).unwrap(), 0.0);
        assert!(ranking_prob(1.0, &[]).is_err());
    }

    #[test]
    fn ranking_prob_median_order_statistics() {
        let pop: Vec<f64> = (0..1001).map(|i| i as f64).collect();
        let p = ranking_prob(500.0, &pop).unwrap();
        assert!((p - 0.5).abs() <= 1.0 / 1001.0);
    }

    #[test]
    fn top_rho_one_selects_everyone() {
        let flags = top_rho_select(&[5.0, 1.0, 3.0], 1.0).unwrap();
        assert_eq!(flags, vec![true, true, true]);
    }

    #[test]
    fn top_rho_half_takes_upper_half() {
        let flags = top_rho_select(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap();
        assert_eq!(flags, vec![false, false, true, true]);
    }

    #[test]
    fn top_rho_degenerate_ties_select_nobody() {
        let flags = top_rho_select(&[2.0, 2.0, 2.0, 2.0], 0.5).unwrap();
        assert_eq!(flags, vec![false; 4]);
    }

    #[test]
    fn top_rho_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let n = rng.random_range(2..40);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let rho = rng.random_range(0.05..1.0);
            let k = rng.random_range(0.01..50.0);
            let scaled: Vec<f64> = scores.iter().map(|s| s * k).collect();
            assert_eq!(
                top_rho_select(&scores, rho).unwrap(),
                top_rho_select(&scaled, rho).unwrap()
            );
            let q = scores[0];
            let p1 = ranking_prob(q, &scores).unwrap();
            let p2 = ranking_prob(q * k, &scaled).unwrap();
            assert_eq!(p1, p2);
        }
    }

    #[test]
    fn top_rho_selected_fraction_near_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let n = rng.random_range(10..500);
            let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let rho = rng.random_range(0.05..1.0f64);
            let count = top_rho_select(&scores, rho)
                .unwrap()
                .iter()
                .filter(|w| **w)
                .count() as f64;
            let target = (rho * n as f64).ceil();
            assert!((count - target).abs() <= 1.0, "count {count} target {target}");
        }
    }

    #[test]
    fn compliance_none_and_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            sample_compliance(&[false, false], &[1.0, 1.0], &mut rng).unwrap(),
            (0, false)
        );
        assert_eq!(
            sample_compliance(&[false, true], &[1.0, 1.0], &mut rng).unwrap(),
            (2, false)
        );
    }

    #[test]
    fn compliance_frequencies_match_preferences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100_000;
        let mut first = 0usize;
        for _ in 0..n {
            let (z, fallback) = sample_compliance(&[true, true], &[1.0, 1.0], &mut rng).unwrap();
            assert!(!fallback);
            if z == 1 {
                first += 1;
            }
        }
        let p = first as f64 / n as f64;
        let sigma = (0.25f64 / n as f64).sqrt();
        assert!((p - 0.5).abs() < 3.0 * sigma, "p = {p}");
    }

    #[test]
    fn compliance_zero_preferences_fall_back_to_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut counts = [0usize; 2];
        for _ in 0..10_000 {
            let (z, fallback) = sample_compliance(&[true, true], &[0.0, 0.0], &mut rng).unwrap();
            assert!(fallback);
            counts[z - 1] += 1;
        }
        assert!(counts[0] > 4_500 && counts[1] > 4_500);
    }
}
