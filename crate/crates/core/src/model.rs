//! Domain types shared across the toolkit, configuration loading and
//! validation, and the columnar round-log persistence format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

/// Number of private agent types (disadvantaged, advantaged). The type is a
/// free index everywhere; widening it is mechanical.
pub const GROUP_COUNT: usize = 2;

/// Group mixture, baseline and noise distributions, effort conversion and
/// the two sensitivity knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    /// Mixture probabilities over private types.
    pub group_probs: Vec<f64>,
    /// Per-group, per-coordinate baseline means.
    pub baseline_means: Vec<Vec<f64>>,
    /// Per-group, per-coordinate baseline standard deviations.
    pub baseline_stds: Vec<Vec<f64>>,
    /// Per-group, per-environment outcome-noise means.
    pub noise_means: Vec<Vec<f64>>,
    /// Per-group, per-environment outcome-noise standard deviations.
    pub noise_stds: Vec<Vec<f64>>,
    /// Effort conversion matrix rows (covariates x actions).
    pub effort_matrix: Vec<Vec<f64>>,
    /// Linearity knob: 0 keeps covariates linear in baseline plus effort,
    /// 1 applies a scaled logistic squashing coordinatewise.
    #[serde(default)]
    pub alpha1: f64,
    /// Effort-homogeneity knob: 0 gives every agent the same conversion
    /// matrix, 1 draws a fully perturbed matrix per agent.
    #[serde(default)]
    pub alpha2: f64,
    pub agents_per_round: usize,
    /// Optional per-coordinate display ranges used only when exporting
    /// clipped reports; never applied inside the causal pipeline.
    #[serde(default)]
    pub display_ranges: Option<Vec<(f64, f64)>>,
}

impl PopulationSpec {
    pub fn num_covariates(&self) -> usize {
        self.effort_matrix.len()
    }

    pub fn num_actions(&self) -> usize {
        self.effort_matrix.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn effort(&self) -> Result<Matrix> {
        Matrix::from_rows(&self.effort_matrix)
    }

    /// Group-unconditional baseline standard deviation per coordinate,
    /// used as the logistic squashing scale.
    pub fn pooled_baseline_std(&self) -> Vec<f64> {
        let m = self.num_covariates();
        let mut out = Vec::with_capacity(m);
        for j in 0..m {
            let mean: f64 = self
                .group_probs
                .iter()
                .zip(&self.baseline_means)
                .map(|(p, mu)| p * mu[j])
                .sum();
            let second: f64 = self
                .group_probs
                .iter()
                .zip(self.baseline_means.iter().zip(&self.baseline_stds))
                .map(|(p, (mu, sd))| p * (sd[j] * sd[j] + mu[j] * mu[j]))
                .sum();
            out.push((second - mean * mean).max(0.0).sqrt());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionMode {
    /// Stochastic admission with probability equal to the cohort score CDF.
    RankingCdf,
    /// Deterministic admission of the top fraction by score rank.
    TopRho,
}

/// One decision maker: true causal coefficients, agent preference weight,
/// and the selection rule it deploys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub theta_star: Vector,
    pub gamma: f64,
    pub selection_mode: SelectionMode,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    /// Batches laid out by the interleaving formula; the experimental default.
    Interleaved,
    /// Block layout: even blocks sample fresh, odd blocks scale the round
    /// eta steps back.
    Block,
}

/// How deployment parameter vectors are generated across rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub mode: ScheduleMode,
    pub rounds: usize,
    /// Scaled-duplicate interval per decision maker.
    pub eta: Vec<usize>,
    /// Uniform range for the positive batch scales.
    pub scale_min: f64,
    pub scale_max: f64,
    /// Fresh-draw sampler mean per decision maker.
    pub theta_means: Vec<Vector>,
    /// Fresh-draw sampler standard deviation per decision maker.
    pub theta_stds: Vec<Vector>,
    /// Synchronous deployments force identical eta and batch placement for
    /// coalition members.
    pub synchronous: bool,
}

fn default_min_cell() -> usize {
    5
}

fn default_bootstrap() -> usize {
    200
}

fn default_eval_rounds() -> usize {
    50
}

fn default_replicates() -> usize {
    20
}

fn default_t_grid() -> Vec<usize> {
    vec![20, 40, 60, 80, 100]
}

fn default_rho_grid() -> Vec<f64> {
    vec![0.25, 0.5, 0.75, 1.0]
}

fn default_alpha_grid() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}

fn default_lipschitz() -> f64 {
    1.0
}

fn default_sigma() -> f64 {
    1.0
}

fn default_m_grid() -> Vec<f64> {
    vec![0.01, 0.05, 0.1, 0.2, 0.5]
}

/// Harness parameters: replicate counts, grids, estimator cell thresholds
/// and welfare-bound constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_eval_rounds")]
    pub eval_rounds: usize,
    #[serde(default = "default_t_grid")]
    pub t_grid: Vec<usize>,
    #[serde(default = "default_rho_grid")]
    pub rho_grid: Vec<f64>,
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Vec<f64>,
    /// Estimation consumes raw covariates unless this flag opts into the
    /// clipped display normalisation.
    #[serde(default)]
    pub use_normalized_covariates: bool,
    /// Log counterfactual outcomes for every agent; read only by tests.
    #[serde(default)]
    pub oracle_outcomes: bool,
    /// Batches with fewer complied agents on either side are dropped.
    #[serde(default = "default_min_cell")]
    pub min_cell: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap_resamples: usize,
    /// Lipschitz constant of the regulator's reference selection function.
    #[serde(default = "default_lipschitz")]
    pub lipschitz_l: f64,
    /// Baseline scale for the reduction-bound check.
    #[serde(default = "default_sigma")]
    pub bound_sigma: f64,
    /// Reduction thresholds evaluated in welfare reports.
    #[serde(default = "default_m_grid")]
    pub m_grid: Vec<f64>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            replicates: default_replicates(),
            eval_rounds: default_eval_rounds(),
            t_grid: default_t_grid(),
            rho_grid: default_rho_grid(),
            alpha_grid: default_alpha_grid(),
            use_normalized_covariates: false,
            oracle_outcomes: false,
            min_cell: default_min_cell(),
            bootstrap_resamples: default_bootstrap(),
            lipschitz_l: default_lipschitz(),
            bound_sigma: default_sigma(),
            m_grid: default_m_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub population: PopulationSpec,
    pub environments: Vec<EnvironmentSpec>,
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub experiment: ExperimentSpec,
}

impl Config {
    /// Synthetic college-admissions setup with the standard two-group
    /// mixture, for `n` decision makers.
    pub fn synthetic_admissions(n: usize) -> Config {
        let theta_stars: Vec<Vector> = match n {
            1 => vec![vec![0.0, 0.5]],
            2 => vec![vec![0.0, 0.5], vec![0.0, 0.6]],
            _ => (0..n)
                .map(|i| vec![0.0, 0.45 + 0.05 * i as f64])
                .collect(),
        };
        let environments = theta_stars
            .into_iter()
            .map(|theta_star| EnvironmentSpec {
                theta_star,
                gamma: 1.0 / n as f64,
                selection_mode: SelectionMode::TopRho,
                rho: 0.5,
            })
            .collect();
        Config {
            population: PopulationSpec {
                group_probs: vec![0.5, 0.5],
                baseline_means: vec![vec![800.0, 1.8], vec![1000.0, 2.2]],
                baseline_stds: vec![vec![200.0, 0.5], vec![200.0, 0.5]],
                noise_means: vec![vec![0.5; n], vec![1.5; n]],
                noise_stds: vec![vec![0.2; n], vec![0.2; n]],
                effort_matrix: vec![vec![10.0, 0.0], vec![0.0, 1.0]],
                alpha1: 0.0,
                alpha2: 0.0,
                agents_per_round: 1000,
                display_ranges: Some(vec![(400.0, 1600.0), (0.0, 4.0)]),
            },
            environments,
            schedule: ScheduleSpec {
                mode: ScheduleMode::Interleaved,
                rounds: 100,
                eta: vec![2; n],
                scale_min: 0.5,
                scale_max: 2.0,
                theta_means: (0..n).map(|i| vec![1.0, 1.0 + i as f64]).collect(),
                theta_stds: vec![vec![10f64.sqrt(), 1.0]; n],
                synchronous: true,
            },
            experiment: ExperimentSpec::default(),
        }
    }

    pub fn num_dms(&self) -> usize {
        self.environments.len()
    }

    pub fn gammas(&self) -> Vec<f64> {
        self.environments.iter().map(|e| e.gamma).collect()
    }

    pub fn validate(&self) -> Result<()> {
        validate_config(&self.population, &self.environments)?;
        let n = self.environments.len();
        let m = self.population.num_covariates();
        let s = &self.schedule;
        if s.rounds == 0 {
            return Err(Error::invalid_config("schedule.rounds", "must be positive"));
        }
        if s.eta.len() != n || s.theta_means.len() != n || s.theta_stds.len() != n {
            return Err(Error::invalid_config(
                "schedule",
                format!("eta, theta_means and theta_stds must have one entry per environment ({n})"),
            ));
        }
        for (i, eta) in s.eta.iter().enumerate() {
            if *eta == 0 {
                return Err(Error::invalid_config(
                    format!("schedule.eta[{i}]"),
                    "must be a positive integer",
                ));
            }
        }
        for (i, (mu, sd)) in s.theta_means.iter().zip(&s.theta_stds).enumerate() {
            if mu.len() != m || sd.len() != m {
                return Err(Error::invalid_config(
                    format!("schedule.theta_means[{i}]"),
                    format!("sampler dimension must equal covariate count {m}"),
                ));
            }
            if sd.iter().any(|v| *v <= 0.0) {
                return Err(Error::invalid_config(
                    format!("schedule.theta_stds[{i}]"),
                    "standard deviations must be positive",
                ));
            }
        }
        if !(s.scale_min > 0.0 && s.scale_max >= s.scale_min) {
            return Err(Error::invalid_config(
                "schedule.scale_min",
                "need 0 < scale_min <= scale_max",
            ));
        }
        if self.experiment.min_cell == 0 {
            return Err(Error::invalid_config("experiment.min_cell", "must be >= 1"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Config> {
        let config: Config = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Config::from_toml_str(&text)
    }
}

fn check_finite(field: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid_config(field, "entries must be finite"));
    }
    Ok(())
}

/// Checks every invariant on the population and environment specifications,
/// including cross-field dimension consistency.
pub fn validate_config(population: &PopulationSpec, envs: &[EnvironmentSpec]) -> Result<()> {
    let p = population;
    let groups = p.group_probs.len();
    if groups == 0 {
        return Err(Error::invalid_config(
            "population.group_probs",
            "at least one group required",
        ));
    }
    check_finite("population.group_probs", &p.group_probs)?;
    if p.group_probs.iter().any(|v| *v < 0.0) {
        return Err(Error::invalid_config(
            "population.group_probs",
            "probabilities must be nonnegative",
        ));
    }
    let total: f64 = p.group_probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid_config(
            "population.group_probs",
            format!("probabilities must sum to 1, got {total}"),
        ));
    }
    let m = p.num_covariates();
    let d = p.num_actions();
    if m == 0 || d == 0 {
        return Err(Error::invalid_config(
            "population.effort_matrix",
            "must be a nonempty matrix",
        ));
    }
    for (i, row) in p.effort_matrix.iter().enumerate() {
        if row.len() != d {
            return Err(Error::invalid_config(
                format!("population.effort_matrix[{i}]"),
                format!("expected {d} columns, got {}", row.len()),
            ));
        }
        check_finite(&format!("population.effort_matrix[{i}]"), row)?;
    }
    let n = envs.len();
    if n == 0 {
        return Err(Error::invalid_config(
            "environments",
            "at least one decision maker required",
        ));
    }
    let per_group = |field: &str, rows: &[Vec<f64>], width: usize| -> Result<()> {
        if rows.len() != groups {
            return Err(Error::invalid_config(
                field,
                format!("expected {groups} group rows, got {}", rows.len()),
            ));
        }
        for (g, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::invalid_config(
                    format!("{field}[{g}]"),
                    format!("expected {width} entries, got {}", row.len()),
                ));
            }
            check_finite(&format!("{field}[{g}]"), row)?;
        }
        Ok(())
    };
    per_group("population.baseline_means", &p.baseline_means, m)?;
    per_group("population.baseline_stds", &p.baseline_stds, m)?;
    per_group("population.noise_means", &p.noise_means, n)?;
    per_group("population.noise_stds", &p.noise_stds, n)?;
    for (g, row) in p.baseline_stds.iter().enumerate() {
        if row.iter().any(|v| *v <= 0.0) {
            return Err(Error::invalid_config(
                format!("population.baseline_stds[{g}]"),
                "standard deviations must be positive",
            ));
        }
    }
    for (g, row) in p.noise_stds.iter().enumerate() {
        if row.iter().any(|v| *v < 0.0) {
            return Err(Error::invalid_config(
                format!("population.noise_stds[{g}]"),
                "standard deviations must be nonnegative",
            ));
        }
    }
    if !(0.0..=1.0).contains(&p.alpha1) {
        return Err(Error::invalid_config(
            "population.alpha1",
            "must lie in [0, 1]",
        ));
    }
    if !(0.0..=1.0).contains(&p.alpha2) {
        return Err(Error::invalid_config(
            "population.alpha2",
            "must lie in [0, 1]",
        ));
    }
    if p.agents_per_round == 0 {
        return Err(Error::invalid_config(
            "population.agents_per_round",
            "must be at least 1",
        ));
    }
    if let Some(ranges) = &p.display_ranges {
        if ranges.len() != m {
            return Err(Error::invalid_config(
                "population.display_ranges",
                format!("expected {m} coordinate ranges"),
            ));
        }
        for (j, (lo, hi)) in ranges.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid_config(
                    format!("population.display_ranges[{j}]"),
                    "range must be finite with lo < hi",
                ));
            }
        }
    }
    for (i, env) in envs.iter().enumerate() {
        if env.theta_star.len() != m {
            return Err(Error::invalid_config(
                format!("environments[{i}].theta_star"),
                format!(
                    "dimension {} does not match effort matrix rows {m}",
                    env.theta_star.len()
                ),
            ));
        }
        check_finite(&format!("environments[{i}].theta_star"), &env.theta_star)?;
        if !(env.gamma.is_finite() && env.gamma >= 0.0) {
            return Err(Error::invalid_config(
                format!("environments[{i}].gamma"),
                format!("preference must be nonnegative, got {}", env.gamma),
            ));
        }
        if !(env.rho > 0.0 && env.rho <= 1.0) {
            return Err(Error::invalid_config(
                format!("environments[{i}].rho"),
                format!("selection fraction must lie in (0, 1], got {}", env.rho),
            ));
        }
    }
    Ok(())
}

/// One simulated agent: everything the simulator generated for it plus the
/// observed pieces (per-DM predictions, selection statuses, compliance and
/// the single realised outcome).
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRecord {
    pub group: usize,
    pub baseline: Vector,
    pub action: Vector,
    pub covariates: Vector,
    pub predictions: Vector,
    pub selected: Vec<bool>,
    /// 0 means no compliance; i in 1..=n names the environment enrolled in.
    pub compliance: usize,
    /// Present exactly when compliance > 0.
    pub outcome: Option<f64>,
    /// Counterfactual outcomes for every environment, logged only when the
    /// oracle flag is set. Estimators never read this.
    pub oracle_outcomes: Option<Vector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    pub thetas: Vec<Vector>,
    pub batch_label: Option<u32>,
    pub agents: Vec<AgentRecord>,
}

/// Estimated coefficient vector with fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub coefficients: Vector,
    pub intercept: Option<f64>,
    pub sample_size: usize,
    pub batch_count: Option<usize>,
    pub residual_norm: f64,
}

fn fmt_f64(v: f64) -> String {
    // shortest representation that round-trips, keeps CSV logs lossless
    format!("{v}")
}

/// Writes round logs in the columnar schema
/// `round,agent,group,b_*,a_*,x_*,yhat_*,w_*,z,y`.
/// Covariate columns are clipped to the display ranges only when `clip` is
/// set; estimation pipelines always consume raw values.
pub fn write_round_logs_csv(
    logs: &[RoundLog],
    population: &PopulationSpec,
    clip: bool,
    out: &mut impl std::io::Write,
) -> Result<()> {
    let m = population.num_covariates();
    let d = population.num_actions();
    let n = logs
        .first()
        .map(|l| l.thetas.len())
        .unwrap_or_else(|| population.noise_means.first().map(|r| r.len()).unwrap_or(0));
    let mut header = String::from("round,agent,group");
    for j in 0..m {
        header.push_str(&format!(",b_{}", j + 1));
    }
    for j in 0..d {
        header.push_str(&format!(",a_{}", j + 1));
    }
    for j in 0..m {
        header.push_str(&format!(",x_{}", j + 1));
    }
    for i in 0..n {
        header.push_str(&format!(",yhat_{}", i + 1));
    }
    for i in 0..n {
        header.push_str(&format!(",w_{}", i + 1));
    }
    header.push_str(",z,y");
    writeln!(out, "{header}")?;
    let ranges = population.display_ranges.as_deref();
    for log in logs {
        for (a_idx, agent) in log.agents.iter().enumerate() {
            let mut row = format!("{},{},{}", log.round, a_idx, agent.group);
            for v in &agent.baseline {
                row.push(',');
                row.push_str(&fmt_f64(*v));
            }
            for v in &agent.action {
                row.push(',');
                row.push_str(&fmt_f64(*v));
            }
            for (j, v) in agent.covariates.iter().enumerate() {
                let shown = match (clip, ranges) {
                    (true, Some(r)) => v.clamp(r[j].0, r[j].1),
                    _ => *v,
                };
                row.push(',');
                row.push_str(&fmt_f64(shown));
            }
            for v in &agent.predictions {
                row.push(',');
                row.push_str(&fmt_f64(*v));
            }
            for w in &agent.selected {
                row.push(',');
                row.push_str(if *w { "1" } else { "0" });
            }
            row.push_str(&format!(",{}", agent.compliance));
            row.push(',');
            if let Some(y) = agent.outcome {
                row.push_str(&fmt_f64(y));
            }
            writeln!(out, "{row}")?;
        }
    }
    Ok(())
}

/// Reads logs written by [`write_round_logs_csv`]. Deployment vectors are
/// not part of the log schema; they travel with the schedule export.
pub fn read_round_logs_csv(text: &str) -> Result<Vec<RoundLog>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::EmptyInput("round log csv".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let count_prefix = |p: &str| cols.iter().filter(|c| c.starts_with(p)).count();
    let m = count_prefix("b_");
    let d = count_prefix("a_");
    let n = count_prefix("yhat_");
    let expected = 3 + m + d + m + n + n + 2;
    if cols.len() != expected || m == 0 {
        return Err(Error::SchemaMismatch {
            path: "round log csv".into(),
            missing: vec!["b_*/a_*/x_*/yhat_*/w_*/z/y".into()],
        });
    }
    let mut logs: Vec<RoundLog> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected {
            return Err(Error::Parse(format!(
                "line {}: expected {} fields, got {}",
                lineno + 2,
                expected,
                fields.len()
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))
        };
        let parse_u = |s: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))
        };
        let round = parse_u(fields[0])?;
        let group = parse_u(fields[2])?;
        let mut at = 3;
        let take = |len: usize, at: &mut usize| -> Result<Vector> {
            let mut v = Vec::with_capacity(len);
            for k in 0..len {
                v.push(parse_f(fields[*at + k])?);
            }
            *at += len;
            Ok(v)
        };
        let baseline = take(m, &mut at)?;
        let action = take(d, &mut at)?;
        let covariates = take(m, &mut at)?;
        let predictions = take(n, &mut at)?;
        let mut selected = Vec::with_capacity(n);
        for k in 0..n {
            selected.push(fields[at + k] == "1");
        }
        at += n;
        let compliance = parse_u(fields[at])?;
        let outcome = if fields[at + 1].is_empty() {
            None
        } else {
            Some(parse_f(fields[at + 1])?)
        };
        if logs.last().map(|l| l.round) != Some(round) {
            logs.push(RoundLog {
                round,
                thetas: Vec::new(),
                batch_label: None,
                agents: Vec::new(),
            });
        }
        logs.last_mut().unwrap().agents.push(AgentRecord {
            group,
            baseline,
            action,
            covariates,
            predictions,
            selected,
            compliance,
            outcome,
            oracle_outcomes: None,
        });
    }
    Ok(logs)
}
