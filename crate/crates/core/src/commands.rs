//! Experiment harness behind the CLI: reproduces the reference tables and
//! figures, persists results as CSV plus SVG, and stamps every run with a
//! manifest. Each command is a pure function of (config, seed, flags);
//! results are byte-identical across re-runs and thread counts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::chart::{self, BarGroup, LineSeries};
use crate::error::{Error, Result};
use crate::estimators::{self, KappaEstimate, KappaSample, RoundPair};
use crate::model::{Config, Estimate, RoundLog, ScheduleSpec};
use crate::numerics::{norm2, sub, Vector};
use crate::protocol::{self, DeploymentSchedule};
use crate::seeding::{
    self, TAG_BOOTSTRAP, TAG_ESTIMATION, TAG_EVAL, TAG_KAPPA, TAG_REPLICATE, TAG_SCHEDULE,
};
use crate::simulator::{self, SimOptions};
use crate::welfare::{self, RescaleMode, WelfareReport};

pub const CANDIDATE_LABELS: [&str; 3] = ["theta_ao", "theta_ols", "theta_star"];

#[derive(Debug, Clone)]
pub struct CommandOpts {
    pub config: Config,
    pub config_sha256: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// 0 lets the global pool decide; results do not depend on this.
    pub threads: usize,
    pub replicates: Option<usize>,
    pub t_grid: Option<Vec<usize>>,
    pub rho_grid: Option<Vec<f64>>,
    pub alpha_grid: Option<Vec<f64>>,
}

impl CommandOpts {
    pub fn new(config: Config, seed: u64, out_dir: PathBuf) -> Result<Self> {
        let text = config.to_toml_string()?;
        Ok(CommandOpts {
            config,
            config_sha256: sha256_hex(text.as_bytes()),
            seed,
            out_dir,
            threads: 1,
            replicates: None,
            t_grid: None,
            rho_grid: None,
            alpha_grid: None,
        })
    }

    pub fn from_config_file(path: &Path, seed: u64, out_dir: PathBuf) -> Result<Self> {
        let bytes = fs::read(path)?;
        let config = Config::from_toml_str(
            std::str::from_utf8(&bytes).map_err(|e| Error::Parse(e.to_string()))?,
        )?;
        Ok(CommandOpts {
            config,
            config_sha256: sha256_hex(&bytes),
            seed,
            out_dir,
            threads: 1,
            replicates: None,
            t_grid: None,
            rho_grid: None,
            alpha_grid: None,
        })
    }

    fn replicates(&self) -> usize {
        self.replicates.unwrap_or(self.config.experiment.replicates)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs `f` inside a dedicated rayon pool when a thread count is pinned.
pub fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    if threads == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
            .install(f)
    }
}

pub mod stats {
    /// One-sided exact binomial tail P(X >= k) under a fair coin.
    pub fn sign_test_p_greater(successes: usize, trials: usize) -> f64 {
        if trials == 0 {
            return 1.0;
        }
        let mut pmf = 0.5f64.powi(trials as i32);
        let mut tail = 0.0;
        for j in 0..=trials {
            if j >= successes {
                tail += pmf;
            }
            // advance C(n, j) / 2^n to j + 1
            pmf *= (trials - j) as f64 / (j + 1) as f64;
        }
        tail.min(1.0)
    }

    pub fn mean(xs: &[f64]) -> f64 {
        xs.iter().sum::<f64>() / xs.len() as f64
    }

    pub fn sample_sd(xs: &[f64]) -> f64 {
        if xs.len() < 2 {
            return 0.0;
        }
        let mu = mean(xs);
        (xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
    }

    pub fn stderr(xs: &[f64]) -> f64 {
        sample_sd(xs) / (xs.len() as f64).sqrt()
    }

    /// Norm of the replicate-mean estimation error with a delta-method
    /// standard error (gradient of the norm at the mean against the
    /// covariance of the mean).
    pub fn norm_of_mean_error(estimates: &[Vec<f64>], truth: &[f64]) -> (f64, f64) {
        let r = estimates.len() as f64;
        let m = truth.len();
        let mut mean_vec = vec![0.0; m];
        for e in estimates {
            for j in 0..m {
                mean_vec[j] += e[j] / r;
            }
        }
        let bias: Vec<f64> = (0..m).map(|j| mean_vec[j] - truth[j]).collect();
        let norm = bias.iter().map(|b| b * b).sum::<f64>().sqrt();
        if estimates.len() < 2 {
            return (norm, 0.0);
        }
        // covariance of the replicate mean
        let mut cov = vec![vec![0.0; m]; m];
        for e in estimates {
            for j in 0..m {
                for k in 0..m {
                    cov[j][k] += (e[j] - mean_vec[j]) * (e[k] - mean_vec[k]);
                }
            }
        }
        for row in cov.iter_mut() {
            for v in row.iter_mut() {
                *v /= (r - 1.0) * r;
            }
        }
        let se = if norm > 1e-300 {
            let u: Vec<f64> = bias.iter().map(|b| b / norm).collect();
            let mut q = 0.0;
            for j in 0..m {
                for k in 0..m {
                    q += u[j] * cov[j][k] * u[k];
                }
            }
            q.max(0.0).sqrt()
        } else {
            let tr: f64 = (0..m).map(|j| cov[j][j]).sum();
            (tr / m as f64).sqrt()
        };
        (norm, se)
    }
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, content)?;
    Ok(())
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut out = String::with_capacity(header.len() + rows.iter().map(|r| r.len() + 1).sum::<usize>() + 1);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    write_text(path, &out)
}

fn f(v: f64) -> String {
    format!("{v}")
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_sha256: &'a str,
    seed: u64,
    crate_version: &'a str,
    outputs: Vec<String>,
}

fn write_manifest(opts: &CommandOpts, command: &str, outputs: &[&str]) -> Result<()> {
    let manifest = Manifest {
        command,
        config_sha256: &opts.config_sha256,
        seed: opts.seed,
        crate_version: env!("CARGO_PKG_VERSION"),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    write_text(&opts.out_dir.join("manifest.json"), &(text + "\n"))
}

fn clip_ranges(config: &Config) -> Option<Vec<(f64, f64)>> {
    if config.experiment.use_normalized_covariates {
        config.population.display_ranges.clone()
    } else {
        None
    }
}

/// Round pairs a decision maker may difference over: the coalition pairs
/// when it belongs to a (nonempty) coalition, otherwise its own scaled
/// batches, which are protocol-valid only if everyone else cooperates.
pub fn pairs_for_env(schedule: &DeploymentSchedule, env: usize) -> Vec<RoundPair> {
    if schedule.members.contains(&env) && !schedule.coalition.is_empty() {
        schedule
            .coalition
            .iter()
            .map(|b| RoundPair {
                first: b.first,
                second: b.second,
            })
            .collect()
    } else {
        schedule.dms[env]
            .batches
            .iter()
            .map(|b| RoundPair {
                first: b.first,
                second: b.second,
            })
            .collect()
    }
}

/// Everything estimated for one environment from an estimation run.
#[derive(Debug, Clone)]
pub struct EnvFits {
    pub mslr: Estimate,
    pub mslr_stderr: Vector,
    pub ols: Estimate,
    pub ols_stderr: Vector,
    pub two_sls: Estimate,
    pub two_sls_stderr: Vector,
    pub kappa: KappaEstimate,
    /// Deployment candidates after the fairness rescaling.
    pub theta_ao: Vector,
    pub theta_ols: Vector,
    pub theta_star_hat: Vector,
}

#[derive(Debug, Clone)]
pub struct EstimationOutcome {
    pub per_env: Vec<EnvFits>,
    pub omega: estimators::OmegaEstimate,
}

fn run_theta_sequence(
    config: &Config,
    thetas_per_round: &[Vec<Vector>],
    run_seed: u64,
) -> Result<Vec<RoundLog>> {
    use rayon::prelude::*;
    (0..thetas_per_round.len())
        .into_par_iter()
        .map(|t| {
            simulator::run_round(
                &config.population,
                &config.environments,
                &thetas_per_round[t],
                t,
                run_seed,
                SimOptions::default(),
            )
        })
        .collect()
}

/// Utility samples for the rule-response regression. With a single DM they
/// come straight from the estimation run; with rivals a dedicated run pins
/// every rival rule at its sampler mean while the DM's own rule varies.
fn kappa_samples_for_env(
    config: &Config,
    logs: &[RoundLog],
    env: usize,
    rep_seed: u64,
) -> Result<Vec<KappaSample>> {
    let n = config.num_dms();
    if n == 1 {
        let mut samples = Vec::new();
        for log in logs {
            if let Ok(u) = simulator::measured_utility(std::slice::from_ref(log), env) {
                samples.push(KappaSample {
                    theta: log.thetas[env].clone(),
                    rivals: vec![],
                    q: u.mean,
                });
            }
        }
        return Ok(samples);
    }
    let kappa_seed = seeding::derive(rep_seed, TAG_KAPPA, env as u64);
    let rounds = config.schedule.rounds;
    let rivals: Vec<(usize, Vector)> = (0..n)
        .filter(|j| *j != env)
        .map(|j| (j, config.schedule.theta_means[j].clone()))
        .collect();
    let sampler = protocol::ThetaSampler {
        mean: config.schedule.theta_means[env].clone(),
        std: config.schedule.theta_stds[env].clone(),
    };
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(kappa_seed);
    let mut thetas_per_round = Vec::with_capacity(rounds);
    let mut own = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let theta_own = sampler.sample(&mut rng);
        let mut row: Vec<Vector> = vec![Vec::new(); n];
        for (j, theta) in &rivals {
            row[*j] = theta.clone();
        }
        row[env] = theta_own.clone();
        own.push(theta_own);
        thetas_per_round.push(row);
    }
    let klogs = run_theta_sequence(config, &thetas_per_round, kappa_seed)?;
    let rival_rules: Vec<Vector> = rivals.into_iter().map(|(_, t)| t).collect();
    let mut samples = Vec::new();
    for (t, log) in klogs.iter().enumerate() {
        if let Ok(u) = simulator::measured_utility(std::slice::from_ref(log), env) {
            samples.push(KappaSample {
                theta: own[t].clone(),
                rivals: rival_rules.clone(),
                q: u.mean,
            });
        }
    }
    Ok(samples)
}

/// One full estimation phase: simulate the configured schedule, then fit
/// every estimator and build the rescaled deployment candidates.
pub fn estimate_candidates(config: &Config, rep_seed: u64) -> Result<EstimationOutcome> {
    let schedule = protocol::build_schedule(
        &config.schedule,
        seeding::derive(rep_seed, TAG_SCHEDULE, 0),
    )?;
    let logs = simulator::run_experiment(
        config,
        &schedule,
        seeding::derive(rep_seed, TAG_ESTIMATION, 0),
        SimOptions::default(),
    )?;
    estimate_from_logs(config, &schedule, &logs, rep_seed)
}

pub fn estimate_from_logs(
    config: &Config,
    schedule: &DeploymentSchedule,
    logs: &[RoundLog],
    rep_seed: u64,
) -> Result<EstimationOutcome> {
    let clip = clip_ranges(config);
    let clip_ref = clip.as_deref();
    let gammas = config.gammas();
    let min_cell = config.experiment.min_cell;
    let omega = estimators::omega_fit(logs, &gammas, clip_ref)?;
    let mut per_env = Vec::with_capacity(config.num_dms());
    for env in 0..config.num_dms() {
        let pairs = pairs_for_env(schedule, env);
        let mslr = estimators::mslr_fit(logs, env, &pairs, min_cell, clip_ref)?;
        let deltas = estimators::mslr_batch_deltas(logs, env, &pairs, min_cell, clip_ref)?;
        let mslr_stderr = estimators::bootstrap_stderr(
            &deltas.rows,
            &deltas.ys,
            false,
            config.experiment.bootstrap_resamples,
            seeding::derive(rep_seed, TAG_BOOTSTRAP, env as u64),
        )?;
        let ols = estimators::naive_ols_fit(logs, env, clip_ref)?;
        let (obs_x, obs_y) = estimators::complied_observations(logs, env, clip_ref);
        let ols_stderr = estimators::analytic_ols_stderr(&obs_x, &obs_y, true)?;
        let two_sls = estimators::two_sls_fit(logs, env, &gammas, clip_ref)?;
        let (stage2_x, stage2_y) = estimators::two_sls_stage2_observations(logs, env, &gammas, clip_ref)?;
        let two_sls_stderr = estimators::analytic_ols_stderr(&stage2_x, &stage2_y, true)?;
        let samples = kappa_samples_for_env(config, logs, env, rep_seed)?;
        let kappa = estimators::kappa_fit(&samples)?;
        let tau = norm2(&mslr.coefficients);
        let theta_ao = welfare::rescale_theta(&kappa.kappa, tau, RescaleMode::ExactNorm)?;
        let theta_ols = welfare::rescale_theta(&ols.coefficients, tau, RescaleMode::DownOnly)?;
        per_env.push(EnvFits {
            theta_star_hat: mslr.coefficients.clone(),
            mslr,
            mslr_stderr,
            ols,
            ols_stderr,
            two_sls,
            two_sls_stderr,
            kappa,
            theta_ao,
            theta_ols,
        });
    }
    Ok(EstimationOutcome { per_env, omega })
}

fn estimate_rows_for_csv(
    command: &str,
    replicate: usize,
    outcome: &EstimationOutcome,
    rows: &mut Vec<String>,
) {
    for (env, fits) in outcome.per_env.iter().enumerate() {
        let mut push = |method: &str, est: &Estimate, se: &Vector| {
            for (coord, c) in est.coefficients.iter().enumerate() {
                rows.push(format!(
                    "{},{},{},{},{},{},{},{},{}",
                    command,
                    replicate,
                    method,
                    env,
                    coord + 1,
                    f(*c),
                    f(se.get(coord).copied().unwrap_or(f64::NAN)),
                    est.sample_size,
                    est.batch_count.map(|b| b.to_string()).unwrap_or_default()
                ));
            }
        };
        push("mslr", &fits.mslr, &fits.mslr_stderr);
        push("ols", &fits.ols, &fits.ols_stderr);
        push("2sls", &fits.two_sls, &fits.two_sls_stderr);
    }
}

const ESTIMATES_HEADER: &str =
    "command,replicate,method,env,coord,coefficient,stderr,sample_size,batch_count";

#[derive(Debug, Clone)]
pub struct CandidateUtility {
    pub label: String,
    pub mean: f64,
    pub stderr: f64,
    pub n_complied: usize,
}

#[derive(Debug, Clone)]
pub struct Table1Result {
    pub rows: Vec<CandidateUtility>,
    /// Per replicate measured utilities in candidate order.
    pub per_replicate: Vec<[f64; 3]>,
}

/// Single-DM utility comparison across the three deployment candidates.
pub fn cmd_table1(opts: &CommandOpts) -> Result<Table1Result> {
    let config = &opts.config;
    if config.num_dms() != 1 {
        return Err(Error::InvalidArgument(
            "table1 expects a single decision maker".into(),
        ));
    }
    with_pool(opts.threads, || cmd_table1_inner(opts, config))
}

fn cmd_table1_inner(opts: &CommandOpts, config: &Config) -> Result<Table1Result> {
    let reps = opts.replicates();
    let eval_rounds = config.experiment.eval_rounds;
    let mut per_replicate: Vec<[f64; 3]> = Vec::with_capacity(reps);
    let mut complied = [0usize; 3];
    let mut estimate_rows = Vec::new();
    for rep in 0..reps {
        eprintln!("table1: replicate {}/{}", rep + 1, reps);
        let rep_seed = seeding::derive(opts.seed, TAG_REPLICATE, rep as u64);
        let outcome = estimate_candidates(config, rep_seed)?;
        estimate_rows_for_csv("table1", rep, &outcome, &mut estimate_rows);
        let fits = &outcome.per_env[0];
        let candidates = [&fits.theta_ao, &fits.theta_ols, &fits.theta_star_hat];
        // common random numbers: one evaluation seed per replicate
        let eval_seed = seeding::derive(rep_seed, TAG_EVAL, 0);
        let mut qs = [0.0f64; 3];
        for (c, theta) in candidates.iter().enumerate() {
            let logs = simulator::run_fixed_thetas(
                config,
                std::slice::from_ref(*theta),
                eval_rounds,
                eval_seed,
                SimOptions::default(),
            )?;
            let u = simulator::measured_utility(&logs, 0)?;
            qs[c] = u.mean;
            complied[c] += u.count;
        }
        per_replicate.push(qs);
    }
    let mut rows = Vec::with_capacity(3);
    let mut csv_rows = Vec::with_capacity(3);
    for (c, label) in CANDIDATE_LABELS.iter().enumerate() {
        let vals: Vec<f64> = per_replicate.iter().map(|r| r[c]).collect();
        let mean = stats::mean(&vals);
        let stderr = stats::stderr(&vals);
        csv_rows.push(format!(
            "{label},{},{},{}",
            f(mean),
            f(stderr),
            complied[c]
        ));
        rows.push(CandidateUtility {
            label: label.to_string(),
            mean,
            stderr,
            n_complied: complied[c],
        });
    }
    write_csv(&opts.out_dir.join("table1.csv"), "candidate,utility,stderr,n_complied", &csv_rows)?;
    write_csv(&opts.out_dir.join("estimates.csv"), ESTIMATES_HEADER, &estimate_rows)?;
    let svg = chart::bar_chart(
        "Measured utility by deployed rule",
        "utility",
        &["utility".to_string()],
        &rows
            .iter()
            .map(|r| BarGroup {
                label: r.label.clone(),
                values: vec![r.mean],
                errs: vec![r.stderr],
            })
            .collect::<Vec<_>>(),
    )?;
    write_text(&opts.out_dir.join("table1.svg"), &svg)?;
    write_manifest(opts, "table1", &["table1.csv", "table1.svg", "estimates.csv"])?;
    Ok(Table1Result {
        rows,
        per_replicate,
    })
}

#[derive(Debug, Clone)]
pub struct Table2Cell {
    pub dm2: String,
    pub dm1: String,
    pub q1: f64,
    pub stderr: f64,
    pub n_complied: usize,
}

#[derive(Debug, Clone)]
pub struct Table2Result {
    pub cells: Vec<Table2Cell>,
    /// Indexed [dm2 candidate][dm1 candidate] per replicate.
    pub per_replicate: Vec<[[f64; 3]; 3]>,
}

/// Two-DM grid: the first DM's measured utility for every candidate pair.
pub fn cmd_table2(opts: &CommandOpts) -> Result<Table2Result> {
    let config = &opts.config;
    if config.num_dms() != 2 {
        return Err(Error::InvalidArgument(
            "table2 expects exactly two decision makers".into(),
        ));
    }
    with_pool(opts.threads, || cmd_table2_inner(opts, config))
}

fn cmd_table2_inner(opts: &CommandOpts, config: &Config) -> Result<Table2Result> {
    let reps = opts.replicates();
    let eval_rounds = config.experiment.eval_rounds;
    let mut per_replicate: Vec<[[f64; 3]; 3]> = Vec::with_capacity(reps);
    let mut complied = [[0usize; 3]; 3];
    let mut estimate_rows = Vec::new();
    for rep in 0..reps {
        eprintln!("table2: replicate {}/{}", rep + 1, reps);
        let rep_seed = seeding::derive(opts.seed, TAG_REPLICATE, rep as u64);
        let outcome = estimate_candidates(config, rep_seed)?;
        estimate_rows_for_csv("table2", rep, &outcome, &mut estimate_rows);
        let cand = |env: usize, c: usize| -> &Vector {
            let fits = &outcome.per_env[env];
            match c {
                0 => &fits.theta_ao,
                1 => &fits.theta_ols,
                _ => &fits.theta_star_hat,
            }
        };
        let eval_seed = seeding::derive(rep_seed, TAG_EVAL, 0);
        let mut grid = [[0.0f64; 3]; 3];
        for c2 in 0..3 {
            for c1 in 0..3 {
                let profile = vec![cand(0, c1).clone(), cand(1, c2).clone()];
                let logs = simulator::run_fixed_thetas(
                    config,
                    &profile,
                    eval_rounds,
                    eval_seed,
                    SimOptions::default(),
                )?;
                let u = simulator::measured_utility(&logs, 0)?;
                grid[c2][c1] = u.mean;
                complied[c2][c1] += u.count;
            }
        }
        per_replicate.push(grid);
    }
    let mut cells = Vec::with_capacity(9);
    let mut csv_rows = Vec::with_capacity(9);
    for (c2, dm2_label) in CANDIDATE_LABELS.iter().enumerate() {
        for (c1, dm1_label) in CANDIDATE_LABELS.iter().enumerate() {
            let vals: Vec<f64> = per_replicate.iter().map(|r| r[c2][c1]).collect();
            let mean = stats::mean(&vals);
            let stderr = stats::stderr(&vals);
            csv_rows.push(format!(
                "{dm2_label},{dm1_label},{},{},{}",
                f(mean),
                f(stderr),
                complied[c2][c1]
            ));
            cells.push(Table2Cell {
                dm2: dm2_label.to_string(),
                dm1: dm1_label.to_string(),
                q1: mean,
                stderr,
                n_complied: complied[c2][c1],
            });
        }
    }
    write_csv(
        &opts.out_dir.join("table2.csv"),
        "dm2_candidate,dm1_candidate,q1,stderr,n_complied",
        &csv_rows,
    )?;
    write_csv(&opts.out_dir.join("estimates.csv"), ESTIMATES_HEADER, &estimate_rows)?;
    let groups: Vec<BarGroup> = (0..3)
        .map(|c2| BarGroup {
            label: format!("dm2={}", CANDIDATE_LABELS[c2]),
            values: (0..3).map(|c1| cells[c2 * 3 + c1].q1).collect(),
            errs: (0..3).map(|c1| cells[c2 * 3 + c1].stderr).collect(),
        })
        .collect();
    let svg = chart::bar_chart(
        "First DM utility across candidate pairs",
        "utility of DM 1",
        &CANDIDATE_LABELS
            .iter()
            .map(|l| format!("dm1={l}"))
            .collect::<Vec<_>>(),
        &groups,
    )?;
    write_text(&opts.out_dir.join("table2.svg"), &svg)?;
    write_manifest(opts, "table2", &["table2.csv", "table2.svg", "estimates.csv"])?;
    Ok(Table2Result {
        cells,
        per_replicate,
    })
}

#[derive(Debug, Clone)]
pub struct ErrorRecord {
    pub method: String,
    pub mode: String,
    pub env: usize,
    pub rounds: usize,
    pub error_mean: f64,
    pub error_stderr: f64,
}

#[derive(Debug, Clone)]
pub struct ErrorDetail {
    pub method: String,
    pub mode: String,
    pub env: usize,
    pub rounds: usize,
    pub replicate: usize,
    pub error: f64,
}

#[derive(Debug, Clone)]
pub struct BiasRecord {
    pub method: String,
    pub mode: String,
    pub env: usize,
    pub rounds: usize,
    pub coord: usize,
    pub mean: f64,
    pub stderr: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone)]
pub struct EstimationErrorResult {
    pub records: Vec<ErrorRecord>,
    pub detail: Vec<ErrorDetail>,
    pub bias: Vec<BiasRecord>,
}

struct ModeSpec {
    name: &'static str,
    spec: ScheduleSpec,
}

fn estimation_modes(config: &Config, t_max: usize) -> Vec<ModeSpec> {
    let mut base = config.schedule.clone();
    base.rounds = t_max;
    if config.num_dms() == 1 {
        return vec![ModeSpec {
            name: "single",
            spec: base,
        }];
    }
    let mut sync = base.clone();
    let eta0 = sync.eta[0];
    sync.eta = vec![eta0; config.num_dms()];
    sync.synchronous = true;
    let mut async_spec = base;
    async_spec.synchronous = false;
    vec![
        ModeSpec {
            name: "sync",
            spec: sync,
        },
        ModeSpec {
            name: "async",
            spec: async_spec,
        },
    ]
}

/// Estimation error against rounds for every method; with several DMs the
/// synchronous and asynchronous deployment arms run side by side.
pub fn cmd_estimation_error(opts: &CommandOpts) -> Result<EstimationErrorResult> {
    let config = &opts.config;
    with_pool(opts.threads, || cmd_estimation_error_inner(opts, config))
}

fn cmd_estimation_error_inner(opts: &CommandOpts, config: &Config) -> Result<EstimationErrorResult> {
    let mut t_grid = opts
        .t_grid
        .clone()
        .unwrap_or_else(|| config.experiment.t_grid.clone());
    t_grid.sort_unstable();
    t_grid.dedup();
    let t_max = *t_grid
        .last()
        .ok_or_else(|| Error::InvalidArgument("empty rounds grid".into()))?;
    let reps = opts.replicates();
    if reps < 2 {
        eprintln!("estimation-error: confidence intervals are degenerate with fewer than 2 replicates");
    }
    let clip = clip_ranges(config);
    let clip_ref = clip.as_deref();
    let gammas = config.gammas();
    let modes = estimation_modes(config, t_max);
    let methods = ["mslr", "ols", "2sls"];
    let n = config.num_dms();
    // estimates[mode][method][env][t_idx][rep] -> coefficient vector
    let mut collected: Vec<Vec<Vec<Vec<Vec<Vector>>>>> =
        vec![vec![vec![vec![Vec::new(); t_grid.len()]; n]; methods.len()]; modes.len()];
    for (mode_idx, mode) in modes.iter().enumerate() {
        for rep in 0..reps {
            eprintln!(
                "estimation-error[{}]: replicate {}/{}",
                mode.name,
                rep + 1,
                reps
            );
            let rep_seed = seeding::derive(opts.seed, TAG_REPLICATE, rep as u64);
            let schedule = protocol::build_schedule(
                &mode.spec,
                seeding::derive(rep_seed, TAG_SCHEDULE, 1 + mode_idx as u64),
            )?;
            let logs = simulator::run_experiment(
                config,
                &schedule,
                seeding::derive(rep_seed, TAG_ESTIMATION, 1 + mode_idx as u64),
                SimOptions::default(),
            )?;
            for env in 0..n {
                let pairs = pairs_for_env(&schedule, env);
                for (t_idx, &t) in t_grid.iter().enumerate() {
                    let prefix = &logs[..t.min(logs.len())];
                    let pairs_t: Vec<RoundPair> =
                        pairs.iter().copied().filter(|p| p.second < t).collect();
                    let mslr = estimators::mslr_fit(
                        prefix,
                        env,
                        &pairs_t,
                        config.experiment.min_cell,
                        clip_ref,
                    )?;
                    let ols = estimators::naive_ols_fit(prefix, env, clip_ref)?;
                    let two = estimators::two_sls_fit(prefix, env, &gammas, clip_ref)?;
                    collected[mode_idx][0][env][t_idx].push(mslr.coefficients);
                    collected[mode_idx][1][env][t_idx].push(ols.coefficients);
                    collected[mode_idx][2][env][t_idx].push(two.coefficients);
                }
            }
        }
    }
    let mut records = Vec::new();
    let mut detail = Vec::new();
    let mut bias = Vec::new();
    let mut csv_rows = Vec::new();
    let mut detail_rows = Vec::new();
    for (mode_idx, mode) in modes.iter().enumerate() {
        for (m_idx, method) in methods.iter().enumerate() {
            for env in 0..n {
                let truth = &config.environments[env].theta_star;
                for (t_idx, &t) in t_grid.iter().enumerate() {
                    let ests = &collected[mode_idx][m_idx][env][t_idx];
                    let errors: Vec<f64> = ests
                        .iter()
                        .map(|e| norm2(&sub(e, truth)))
                        .collect();
                    let error_mean = stats::mean(&errors);
                    let error_stderr = stats::stderr(&errors);
                    records.push(ErrorRecord {
                        method: method.to_string(),
                        mode: mode.name.to_string(),
                        env,
                        rounds: t,
                        error_mean,
                        error_stderr,
                    });
                    csv_rows.push(format!(
                        "{method},{},{env},{t},error_norm,{},{},{},{}",
                        mode.name,
                        f(error_mean),
                        f(error_stderr),
                        f(error_mean - 1.96 * error_stderr),
                        f(error_mean + 1.96 * error_stderr),
                    ));
                    for (rep, err) in errors.iter().enumerate() {
                        detail.push(ErrorDetail {
                            method: method.to_string(),
                            mode: mode.name.to_string(),
                            env,
                            rounds: t,
                            replicate: rep,
                            error: *err,
                        });
                        detail_rows.push(format!(
                            "{method},{},{env},{t},{rep},{}",
                            mode.name,
                            f(*err)
                        ));
                    }
                    for coord in 0..truth.len() {
                        let devs: Vec<f64> =
                            ests.iter().map(|e| e[coord] - truth[coord]).collect();
                        let mean = stats::mean(&devs);
                        let se = stats::stderr(&devs);
                        let (lo, hi) = (mean - 1.96 * se, mean + 1.96 * se);
                        bias.push(BiasRecord {
                            method: method.to_string(),
                            mode: mode.name.to_string(),
                            env,
                            rounds: t,
                            coord: coord + 1,
                            mean,
                            stderr: se,
                            lo,
                            hi,
                        });
                        csv_rows.push(format!(
                            "{method},{},{env},{t},bias_{},{},{},{},{}",
                            mode.name,
                            coord + 1,
                            f(mean),
                            f(se),
                            f(lo),
                            f(hi),
                        ));
                    }
                }
            }
        }
    }
    write_csv(
        &opts.out_dir.join("estimation_error.csv"),
        "method,mode,env,rounds,metric,value,stderr,lo,hi",
        &csv_rows,
    )?;
    write_csv(
        &opts.out_dir.join("estimation_error_detail.csv"),
        "method,mode,env,rounds,replicate,error",
        &detail_rows,
    )?;
    let mut series = Vec::new();
    for rec_method in &["mslr", "ols", "2sls"] {
        for mode in &modes {
            for env in 0..n {
                let pts: Vec<(f64, f64)> = records
                    .iter()
                    .filter(|r| r.method == *rec_method && r.mode == mode.name && r.env == env)
                    .map(|r| (r.rounds as f64, r.error_mean.max(1e-12)))
                    .collect();
                let errs: Vec<f64> = records
                    .iter()
                    .filter(|r| r.method == *rec_method && r.mode == mode.name && r.env == env)
                    .map(|r| r.error_stderr)
                    .collect();
                if !pts.is_empty() {
                    series.push(LineSeries {
                        label: if n == 1 {
                            rec_method.to_string()
                        } else {
                            format!("{rec_method}/{}/dm{}", mode.name, env + 1)
                        },
                        points: pts,
                        err: errs,
                    });
                }
            }
        }
    }
    let svg = chart::line_chart(
        "Estimation error against rounds",
        "rounds",
        "mean coefficient error",
        &series,
        true,
    )?;
    write_text(&opts.out_dir.join("estimation_error.svg"), &svg)?;
    write_manifest(
        opts,
        "estimation-error",
        &[
            "estimation_error.csv",
            "estimation_error_detail.csv",
            "estimation_error.svg",
        ],
    )?;
    Ok(EstimationErrorResult {
        records,
        detail,
        bias,
    })
}

#[derive(Debug, Clone)]
pub struct RhoRecord {
    pub method: String,
    pub env: usize,
    pub rho: f64,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone)]
pub struct RhoSweepResult {
    pub records: Vec<RhoRecord>,
}

/// Estimation error against the selection fraction for a single DM. The
/// headline metric is the norm of the replicate-mean estimate minus the
/// truth (empirical bias); the mean per-replicate error norm is reported
/// alongside.
pub fn cmd_rho_sweep(opts: &CommandOpts) -> Result<RhoSweepResult> {
    let config = &opts.config;
    if config.num_dms() != 1 {
        return Err(Error::InvalidArgument(
            "rho-sweep expects a single decision maker".into(),
        ));
    }
    with_pool(opts.threads, || cmd_rho_sweep_inner(opts, config))
}

fn cmd_rho_sweep_inner(opts: &CommandOpts, config: &Config) -> Result<RhoSweepResult> {
    let mut grid = opts
        .rho_grid
        .clone()
        .unwrap_or_else(|| config.experiment.rho_grid.clone());
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    if grid.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
        return Err(Error::InvalidArgument(
            "selection fractions must lie in (0, 1]".into(),
        ));
    }
    let reps = opts.replicates();
    let clip = clip_ranges(config);
    let clip_ref = clip.as_deref();
    let gammas = config.gammas();
    let methods = ["mslr", "ols", "2sls"];
    // estimates[rho][method][rep]
    let mut collected: Vec<Vec<Vec<Vector>>> = vec![vec![Vec::new(); methods.len()]; grid.len()];
    for rep in 0..reps {
        eprintln!("rho-sweep: replicate {}/{}", rep + 1, reps);
        // common random numbers across the grid: the draws align, only the
        // selection threshold moves
        let rep_seed = seeding::derive(opts.seed, TAG_REPLICATE, rep as u64);
        for (g_idx, rho) in grid.iter().enumerate() {
            let mut cfg = config.clone();
            cfg.environments[0].rho = *rho;
            let schedule = protocol::build_schedule(
                &cfg.schedule,
                seeding::derive(rep_seed, TAG_SCHEDULE, 0),
            )?;
            let logs = simulator::run_experiment(
                &cfg,
                &schedule,
                seeding::derive(rep_seed, TAG_ESTIMATION, 0),
                SimOptions::default(),
            )?;
            let pairs = pairs_for_env(&schedule, 0);
            let mslr =
                estimators::mslr_fit(&logs, 0, &pairs, cfg.experiment.min_cell, clip_ref)?;
            let ols = estimators::naive_ols_fit(&logs, 0, clip_ref)?;
            let two = estimators::two_sls_fit(&logs, 0, &gammas, clip_ref)?;
            collected[g_idx][0].push(mslr.coefficients);
            collected[g_idx][1].push(ols.coefficients);
            collected[g_idx][2].push(two.coefficients);
        }
    }
    let truth = &config.environments[0].theta_star;
    let mut records = Vec::new();
    let mut csv_rows = Vec::new();
    for (m_idx, method) in methods.iter().enumerate() {
        for (g_idx, rho) in grid.iter().enumerate() {
            let ests = &collected[g_idx][m_idx];
            let (bias_norm, bias_se) = stats::norm_of_mean_error(ests, truth);
            let errors: Vec<f64> = ests.iter().map(|e| norm2(&sub(e, truth))).collect();
            let error_mean = stats::mean(&errors);
            let error_se = stats::stderr(&errors);
            for (metric, value, se) in [
                ("bias_norm", bias_norm, bias_se),
                ("error_mean", error_mean, error_se),
            ] {
                records.push(RhoRecord {
                    method: method.to_string(),
                    env: 0,
                    rho: *rho,
                    metric: metric.to_string(),
                    value,
                    stderr: se,
                });
                csv_rows.push(format!(
                    "{method},0,{},{metric},{},{}",
                    f(*rho),
                    f(value),
                    f(se)
                ));
            }
        }
    }
    write_csv(
        &opts.out_dir.join("rho_sweep.csv"),
        "method,env,rho,metric,value,stderr",
        &csv_rows,
    )?;
    let series: Vec<LineSeries> = methods
        .iter()
        .map(|method| {
            let pts: Vec<(f64, f64)> = records
                .iter()
                .filter(|r| r.method == *method && r.metric == "bias_norm")
                .map(|r| (r.rho, r.value.max(1e-12)))
                .collect();
            let errs: Vec<f64> = records
                .iter()
                .filter(|r| r.method == *method && r.metric == "bias_norm")
                .map(|r| r.stderr)
                .collect();
            LineSeries {
                label: method.to_string(),
                points: pts,
                err: errs,
            }
        })
        .collect();
    let svg = chart::line_chart(
        "Estimation bias against selection fraction",
        "selection fraction",
        "bias of coefficient estimate",
        &series,
        true,
    )?;
    write_text(&opts.out_dir.join("rho_sweep.svg"), &svg)?;
    write_manifest(opts, "rho-sweep", &["rho_sweep.csv", "rho_sweep.svg"])?;
    Ok(RhoSweepResult { records })
}

#[derive(Debug, Clone)]
pub struct CoalitionBar {
    pub scenario: String,
    pub dm: usize,
    pub error_mean: f64,
    pub error_stderr: f64,
}

#[derive(Debug, Clone)]
pub struct CoalitionDetail {
    pub scenario: String,
    pub dm: usize,
    pub replicate: usize,
    pub error: f64,
}

#[derive(Debug, Clone)]
pub struct CoalitionResult {
    pub bars: Vec<CoalitionBar>,
    pub detail: Vec<CoalitionDetail>,
}

/// Three-DM comparison of converged estimation errors when only two DMs
/// synchronise their scaled releases (partial) against all three (full).
pub fn cmd_coalition(opts: &CommandOpts) -> Result<CoalitionResult> {
    let config = &opts.config;
    if config.num_dms() != 3 {
        return Err(Error::InvalidArgument(
            "coalition expects exactly three decision makers".into(),
        ));
    }
    let eta = &config.schedule.eta;
    if !(eta[0] == eta[1] && eta[2] != eta[0]) {
        return Err(Error::InvalidArgument(
            "coalition needs schedule.eta = [e, e, e'] with e' != e: the first two DMs cooperate, the third deploys at its own spacing".into(),
        ));
    }
    with_pool(opts.threads, || cmd_coalition_inner(opts, config))
}

fn cmd_coalition_inner(opts: &CommandOpts, config: &Config) -> Result<CoalitionResult> {
    let reps = opts.replicates();
    let clip = clip_ranges(config);
    let clip_ref = clip.as_deref();
    let mut partial_spec = config.schedule.clone();
    partial_spec.synchronous = true;
    let mut full_spec = config.schedule.clone();
    full_spec.eta = vec![config.schedule.eta[0]; 3];
    full_spec.synchronous = true;
    let scenarios: [(&str, &ScheduleSpec, Vec<usize>); 2] = [
        ("partial", &partial_spec, vec![0, 1]),
        ("full", &full_spec, vec![]),
    ];
    let mut errors: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); 3]; 2];
    for rep in 0..reps {
        eprintln!("coalition: replicate {}/{}", rep + 1, reps);
        let rep_seed = seeding::derive(opts.seed, TAG_REPLICATE, rep as u64);
        for (s_idx, (name, spec, members)) in scenarios.iter().enumerate() {
            let schedule = protocol::build_schedule_with_members(
                spec,
                seeding::derive(rep_seed, TAG_SCHEDULE, s_idx as u64),
                members,
            )?;
            let logs = simulator::run_experiment(
                config,
                &schedule,
                seeding::derive(rep_seed, TAG_ESTIMATION, s_idx as u64),
                SimOptions::default(),
            )?;
            for dm in 0..3 {
                let pairs = pairs_for_env(&schedule, dm);
                let est = estimators::mslr_fit(
                    &logs,
                    dm,
                    &pairs,
                    config.experiment.min_cell,
                    clip_ref,
                )
                .map_err(|e| {
                    Error::Estimation(format!("{name} scenario, dm {}: {e}", dm + 1))
                })?;
                errors[s_idx][dm].push(norm2(&sub(
                    &est.coefficients,
                    &config.environments[dm].theta_star,
                )));
            }
        }
    }
    let mut bars = Vec::new();
    let mut detail = Vec::new();
    let mut csv_rows = Vec::new();
    let mut detail_rows = Vec::new();
    for (s_idx, (name, _, _)) in scenarios.iter().enumerate() {
        for dm in 0..3 {
            let vals = &errors[s_idx][dm];
            let mean = stats::mean(vals);
            let se = stats::stderr(vals);
            bars.push(CoalitionBar {
                scenario: name.to_string(),
                dm,
                error_mean: mean,
                error_stderr: se,
            });
            csv_rows.push(format!("{name},{dm},{},{}", f(mean), f(se)));
            for (rep, err) in vals.iter().enumerate() {
                detail.push(CoalitionDetail {
                    scenario: name.to_string(),
                    dm,
                    replicate: rep,
                    error: *err,
                });
                detail_rows.push(format!("{name},{dm},{rep},{}", f(*err)));
            }
        }
    }
    write_csv(
        &opts.out_dir.join("coalition.csv"),
        "scenario,dm,error_mean,error_stderr",
        &csv_rows,
    )?;
    write_csv(
        &opts.out_dir.join("coalition_detail.csv"),
        "scenario,dm,replicate,error",
        &detail_rows,
    )?;
    let dm_names = ["A", "B", "C"];
    let groups: Vec<BarGroup> = (0..3)
        .map(|dm| BarGroup {
            label: format!("DM {}", dm_names[dm]),
            values: vec![bars[dm].error_mean, bars[3 + dm].error_mean],
            errs: vec![bars[dm].error_stderr, bars[3 + dm].error_stderr],
        })
        .collect();
    let svg = chart::bar_chart(
        "Converged estimation error by cooperation scenario",
        "mean coefficient error",
        &["partial (A+B)".to_string(), "full (A+B+C)".to_string()],
        &groups,
    )?;
    write_text(&opts.out_dir.join("coalition.svg"), &svg)?;
    write_manifest(
        opts,
        "coalition",
        &["coalition.csv", "coalition_detail.csv", "coalition.svg"],
    )?;
    Ok(CoalitionResult { bars, detail })
}

#[derive(Debug, Clone)]
pub struct SensitivityRecord {
    pub knob: String,
    pub alpha: f64,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone)]
pub struct SensitivityResult {
    pub records: Vec<SensitivityRecord>,
}

/// Sweeps the two robustness knobs (covariate nonlinearity, effort
/// heterogeneity) and reports utility gaps and estimation errors.
pub fn cmd_sensitivity(opts: &CommandOpts) -> Result<SensitivityResult> {
    let config = &opts.config;
    if config.num_dms() != 1 {
        return Err(Error::InvalidArgument(
            "sensitivity expects a single decision maker".into(),
        ));
    }
    with_pool(opts.threads, || cmd_sensitivity_inner(opts, config))
}

fn cmd_sensitivity_inner(opts: &CommandOpts, config: &Config) -> Result<SensitivityResult> {
    let mut grid = opts
        .alpha_grid
        .clone()
        .unwrap_or_else(|| config.experiment.alpha_grid.clone());
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    if grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::InvalidArgument("knob values must lie in [0, 1]".into()));
    }
    let reps = opts.replicates();
    let eval_rounds = config.experiment.eval_rounds;
    let knobs = ["alpha1", "alpha2"];
    let metrics = [
        "gap_ao_ols",
        "gap_ao_star",
        "err_mslr",
        "err_ols",
        "err_2sls",
    ];
    // values[knob][alpha][metric][rep]
    let mut values: Vec<Vec<Vec<Vec<f64>>>> =
        vec![vec![vec![Vec::new(); metrics.len()]; grid.len()]; knobs.len()];
    for rep in 0..reps {
        eprintln!("sensitivity: replicate {}/{}", rep + 1, reps);
        let rep_seed = seeding::derive(opts.seed, TAG_REPLICATE, rep as u64);
        for (k_idx, knob) in knobs.iter().enumerate() {
            for (a_idx, alpha) in grid.iter().enumerate() {
                let mut cfg = config.clone();
                match *knob {
                    "alpha1" => cfg.population.alpha1 = *alpha,
                    _ => cfg.population.alpha2 = *alpha,
                }
                let outcome = estimate_candidates(&cfg, rep_seed)?;
                let fits = &outcome.per_env[0];
                let truth = &cfg.environments[0].theta_star;
                let eval_seed = seeding::derive(rep_seed, TAG_EVAL, 0);
                let mut qs = [0.0f64; 3];
                for (c, theta) in [&fits.theta_ao, &fits.theta_ols, &fits.theta_star_hat]
                    .iter()
                    .enumerate()
                {
                    let logs = simulator::run_fixed_thetas(
                        &cfg,
                        std::slice::from_ref(*theta),
                        eval_rounds,
                        eval_seed,
                        SimOptions::default(),
                    )?;
                    qs[c] = simulator::measured_utility(&logs, 0)?.mean;
                }
                values[k_idx][a_idx][0].push(qs[0] - qs[1]);
                values[k_idx][a_idx][1].push(qs[0] - qs[2]);
                values[k_idx][a_idx][2].push(norm2(&sub(&fits.mslr.coefficients, truth)));
                values[k_idx][a_idx][3].push(norm2(&sub(&fits.ols.coefficients, truth)));
                values[k_idx][a_idx][4].push(norm2(&sub(&fits.two_sls.coefficients, truth)));
            }
        }
    }
    let mut records = Vec::new();
    let mut csv_rows = Vec::new();
    for (k_idx, knob) in knobs.iter().enumerate() {
        for (a_idx, alpha) in grid.iter().enumerate() {
            for (m_idx, metric) in metrics.iter().enumerate() {
                let vals = &values[k_idx][a_idx][m_idx];
                let mean = stats::mean(vals);
                let se = stats::stderr(vals);
                records.push(SensitivityRecord {
                    knob: knob.to_string(),
                    alpha: *alpha,
                    metric: metric.to_string(),
                    value: mean,
                    stderr: se,
                });
                csv_rows.push(format!("{knob},{},{metric},{},{}", f(*alpha), f(mean), f(se)));
            }
        }
    }
    write_csv(
        &opts.out_dir.join("sensitivity.csv"),
        "knob,alpha,metric,value,stderr",
        &csv_rows,
    )?;
    let mut series = Vec::new();
    for knob in &knobs {
        for metric in &["gap_ao_ols", "gap_ao_star"] {
            let pts: Vec<(f64, f64)> = records
                .iter()
                .filter(|r| r.knob == *knob && r.metric == *metric)
                .map(|r| (r.alpha, r.value))
                .collect();
            let errs: Vec<f64> = records
                .iter()
                .filter(|r| r.knob == *knob && r.metric == *metric)
                .map(|r| r.stderr)
                .collect();
            series.push(LineSeries {
                label: format!("{knob}:{metric}"),
                points: pts,
                err: errs,
            });
        }
    }
    let svg = chart::line_chart(
        "Utility gap of the optimal rule as knobs break assumptions",
        "knob value",
        "utility gap",
        &series,
        false,
    )?;
    write_text(&opts.out_dir.join("sensitivity.svg"), &svg)?;
    write_manifest(opts, "sensitivity", &["sensitivity.csv", "sensitivity.svg"])?;
    Ok(SensitivityResult { records })
}

#[derive(Debug, Clone)]
pub struct WelfareResult {
    pub reports: Vec<WelfareReport>,
}

/// Builds the per-environment welfare reports from one estimation phase and
/// prints a pass/fail regulation summary.
pub fn cmd_welfare(opts: &CommandOpts) -> Result<WelfareResult> {
    let config = &opts.config;
    with_pool(opts.threads, || cmd_welfare_inner(opts, config))
}

fn cmd_welfare_inner(opts: &CommandOpts, config: &Config) -> Result<WelfareResult> {
    let rep_seed = seeding::derive(opts.seed, TAG_REPLICATE, 0);
    let outcome = estimate_candidates(config, rep_seed)?;
    let effort = config.population.effort()?;
    let exp = &config.experiment;
    let n = config.num_dms();
    let mut reports = Vec::new();
    let mut csv_rows = Vec::new();
    let mut outputs: Vec<String> = Vec::new();
    for env in 0..n {
        let fits = &outcome.per_env[env];
        let theta_star_hat = &fits.mslr.coefficients;
        let theta_ao_unit = welfare::rescale_theta(&fits.kappa.kappa, 1.0, RescaleMode::ExactNorm)?;
        let (cosine, pass) = welfare::regulation_check(&theta_ao_unit, &effort, theta_star_hat)?;
        let gamma_i = config.environments[env].gamma;
        let rival_aos: Vec<Vector> = (0..n)
            .filter(|j| *j != env)
            .map(|j| {
                welfare::rescale_theta(
                    &outcome.per_env[j].kappa.kappa,
                    1.0,
                    RescaleMode::ExactNorm,
                )
            })
            .collect::<Result<_>>()?;
        let rival_stars: Vec<Vector> = (0..n)
            .filter(|j| *j != env)
            .map(|j| outcome.per_env[j].mslr.coefficients.clone())
            .collect();
        let rival_gammas: Vec<f64> = (0..n)
            .filter(|j| *j != env)
            .map(|j| config.environments[j].gamma)
            .collect();
        let lambda = if n == 1 {
            welfare::lambda_single(&theta_ao_unit, theta_star_hat, &effort, gamma_i)?
        } else {
            welfare::lambda_multi(
                &rival_aos,
                &rival_gammas,
                gamma_i,
                &theta_ao_unit,
                theta_star_hat,
                &effort,
            )?
        };
        let mut bound_curve = Vec::new();
        for m in &exp.m_grid {
            let b = welfare::reduction_bound(
                *m,
                exp.lipschitz_l,
                lambda,
                exp.bound_sigma,
                &theta_ao_unit,
                theta_star_hat,
            )?;
            bound_curve.push((*m, b.probability));
        }
        let improved_chance_ok = if n == 1 {
            true
        } else {
            let mut all_rivals = rival_aos.clone();
            all_rivals.extend(rival_stars.iter().cloned());
            welfare::improved_chance_check(
                &all_rivals,
                gamma_i,
                &theta_ao_unit,
                theta_star_hat,
                &effort,
            )?
        };
        let report = WelfareReport {
            environment: env + 1,
            theta_ao: theta_ao_unit,
            cosine_alignment: cosine,
            regulation_pass: pass,
            lambda,
            bound_curve,
            improved_chance_ok,
        };
        let file = format!("welfare_env{}.toml", env + 1);
        write_text(&opts.out_dir.join(&file), &report.to_toml_string()?)?;
        outputs.push(file);
        println!(
            "env {}: regulation {} (cos = {:.4}), lambda = {:.4}, improved chance {}",
            env + 1,
            if pass { "PASS" } else { "FAIL" },
            cosine,
            lambda,
            if report.improved_chance_ok { "ok" } else { "violated" }
        );
        csv_rows.push(format!(
            "{},{},{},{},{}",
            env + 1,
            f(cosine),
            pass,
            f(lambda),
            report.improved_chance_ok
        ));
        reports.push(report);
    }
    write_csv(
        &opts.out_dir.join("welfare.csv"),
        "env,cosine,regulation_pass,lambda,improved_chance_ok",
        &csv_rows,
    )?;
    let series: Vec<LineSeries> = reports
        .iter()
        .map(|r| LineSeries {
            label: format!("env {}", r.environment),
            points: r.bound_curve.clone(),
            err: vec![],
        })
        .collect();
    let svg = chart::line_chart(
        "Admission-chance reduction bound",
        "reduction threshold",
        "probability bound",
        &series,
        false,
    )?;
    write_text(&opts.out_dir.join("welfare.svg"), &svg)?;
    outputs.push("welfare.csv".into());
    outputs.push("welfare.svg".into());
    let output_refs: Vec<&str> = outputs.iter().map(|s| s.as_str()).collect();
    write_manifest(opts, "welfare", &output_refs)?;
    Ok(WelfareResult { reports })
}

/// Simulates the configured schedule once and persists the round logs and
/// the schedule for audit.
pub fn cmd_simulate(opts: &CommandOpts) -> Result<usize> {
    let config = &opts.config;
    with_pool(opts.threads, || {
        let schedule = protocol::build_schedule(
            &config.schedule,
            seeding::derive(opts.seed, TAG_SCHEDULE, 0),
        )?;
        eprintln!("simulate: {} rounds", schedule.rounds);
        let logs = simulator::run_experiment(
            config,
            &schedule,
            seeding::derive(opts.seed, TAG_ESTIMATION, 0),
            SimOptions {
                oracle_outcomes: false,
            },
        )?;
        let mut buf = Vec::new();
        crate::model::write_round_logs_csv(&logs, &config.population, false, &mut buf)?;
        write_text(
            &opts.out_dir.join("rounds.csv"),
            std::str::from_utf8(&buf).expect("csv is utf8"),
        )?;
        let mut sbuf = Vec::new();
        protocol::write_schedule_csv(&schedule, &mut sbuf)?;
        write_text(
            &opts.out_dir.join("schedule.csv"),
            std::str::from_utf8(&sbuf).expect("csv is utf8"),
        )?;
        write_manifest(opts, "simulate", &["rounds.csv", "schedule.csv"])?;
        Ok(logs.len())
    })
}

/// Renders a recognised results CSV into an SVG chart.
pub fn cmd_plot(input: &Path, output: &Path) -> Result<()> {
    let text = fs::read_to_string(input)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::EmptyInput(format!("{}", input.display())))?;
    let rows: Vec<Vec<String>> = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(|s| s.to_string()).collect())
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{} has a header but no data rows",
            input.display()
        )));
    }
    let parse = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| Error::Parse(format!("{s}: {e}")))
    };
    let svg = match header {
        "candidate,utility,stderr,n_complied" => {
            let groups: Vec<BarGroup> = rows
                .iter()
                .map(|r| {
                    Ok(BarGroup {
                        label: r[0].clone(),
                        values: vec![parse(&r[1])?],
                        errs: vec![parse(&r[2])?],
                    })
                })
                .collect::<Result<_>>()?;
            chart::bar_chart(
                "Measured utility by deployed rule",
                "utility",
                &["utility".to_string()],
                &groups,
            )?
        }
        "dm2_candidate,dm1_candidate,q1,stderr,n_complied" => {
            let mut dm2_labels: Vec<String> = Vec::new();
            for r in &rows {
                if !dm2_labels.contains(&r[0]) {
                    dm2_labels.push(r[0].clone());
                }
            }
            let mut dm1_labels: Vec<String> = Vec::new();
            for r in &rows {
                if !dm1_labels.contains(&r[1]) {
                    dm1_labels.push(r[1].clone());
                }
            }
            let mut groups = Vec::new();
            for d2 in &dm2_labels {
                let mut values = Vec::new();
                let mut errs = Vec::new();
                for d1 in &dm1_labels {
                    let row = rows
                        .iter()
                        .find(|r| &r[0] == d2 && &r[1] == d1)
                        .ok_or_else(|| Error::Parse(format!("missing cell {d2}/{d1}")))?;
                    values.push(parse(&row[2])?);
                    errs.push(parse(&row[3])?);
                }
                groups.push(BarGroup {
                    label: format!("dm2={d2}"),
                    values,
                    errs,
                });
            }
            chart::bar_chart(
                "First DM utility across candidate pairs",
                "utility of DM 1",
                &dm1_labels.iter().map(|l| format!("dm1={l}")).collect::<Vec<_>>(),
                &groups,
            )?
        }
        "method,mode,env,rounds,metric,value,stderr,lo,hi" => {
            let mut keys: Vec<(String, String, String)> = Vec::new();
            for r in &rows {
                if r[4] == "error_norm" {
                    let key = (r[0].clone(), r[1].clone(), r[2].clone());
                    if !keys.contains(&key) {
                        keys.push(key);
                    }
                }
            }
            let mut series = Vec::new();
            for (method, mode, env) in keys {
                let mut pts = Vec::new();
                let mut errs = Vec::new();
                for r in &rows {
                    if r[0] == method && r[1] == mode && r[2] == env && r[4] == "error_norm" {
                        pts.push((parse(&r[3])?, parse(&r[5])?.max(1e-12)));
                        errs.push(parse(&r[6])?);
                    }
                }
                series.push(LineSeries {
                    label: format!("{method}/{mode}/dm{env}"),
                    points: pts,
                    err: errs,
                });
            }
            chart::line_chart(
                "Estimation error against rounds",
                "rounds",
                "mean coefficient error",
                &series,
                true,
            )?
        }
        "method,env,rho,metric,value,stderr" => {
            let mut methods: Vec<String> = Vec::new();
            for r in &rows {
                if r[3] == "bias_norm" && !methods.contains(&r[0]) {
                    methods.push(r[0].clone());
                }
            }
            let mut series = Vec::new();
            for method in methods {
                let mut pts = Vec::new();
                let mut errs = Vec::new();
                for r in &rows {
                    if r[0] == method && r[3] == "bias_norm" {
                        pts.push((parse(&r[2])?, parse(&r[4])?.max(1e-12)));
                        errs.push(parse(&r[5])?);
                    }
                }
                series.push(LineSeries {
                    label: method,
                    points: pts,
                    err: errs,
                });
            }
            chart::line_chart(
                "Estimation bias against selection fraction",
                "selection fraction",
                "bias of coefficient estimate",
                &series,
                true,
            )?
        }
        "scenario,dm,error_mean,error_stderr" => {
            let mut scenarios: Vec<String> = Vec::new();
            for r in &rows {
                if !scenarios.contains(&r[0]) {
                    scenarios.push(r[0].clone());
                }
            }
            let mut dms: Vec<String> = Vec::new();
            for r in &rows {
                if !dms.contains(&r[1]) {
                    dms.push(r[1].clone());
                }
            }
            let mut groups = Vec::new();
            for dm in &dms {
                let mut values = Vec::new();
                let mut errs = Vec::new();
                for scenario in &scenarios {
                    let row = rows
                        .iter()
                        .find(|r| &r[0] == scenario && &r[1] == dm)
                        .ok_or_else(|| Error::Parse(format!("missing bar {scenario}/{dm}")))?;
                    values.push(parse(&row[2])?);
                    errs.push(parse(&row[3])?);
                }
                groups.push(BarGroup {
                    label: format!("DM {dm}"),
                    values,
                    errs,
                });
            }
            chart::bar_chart(
                "Converged estimation error by cooperation scenario",
                "mean coefficient error",
                &scenarios,
                &groups,
            )?
        }
        "knob,alpha,metric,value,stderr" => {
            let mut keys: Vec<(String, String)> = Vec::new();
            for r in &rows {
                if r[2].starts_with("gap_") {
                    let key = (r[0].clone(), r[2].clone());
                    if !keys.contains(&key) {
                        keys.push(key);
                    }
                }
            }
            let mut series = Vec::new();
            for (knob, metric) in keys {
                let mut pts = Vec::new();
                let mut errs = Vec::new();
                for r in &rows {
                    if r[0] == knob && r[2] == metric {
                        pts.push((parse(&r[1])?, parse(&r[3])?));
                        errs.push(parse(&r[4])?);
                    }
                }
                series.push(LineSeries {
                    label: format!("{knob}:{metric}"),
                    points: pts,
                    err: errs,
                });
            }
            chart::line_chart(
                "Utility gap of the optimal rule as knobs break assumptions",
                "knob value",
                "utility gap",
                &series,
                false,
            )?
        }
        other => {
            return Err(Error::SchemaMismatch {
                path: input.display().to_string(),
                missing: vec![format!(
                    "unrecognised header '{other}'; known schemas: table1, table2, estimation_error, rho_sweep, coalition, sensitivity"
                )],
            })
        }
    };
    write_text(output, &svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Config;

    fn tiny_config(n: usize) -> Config {
        let mut c = Config::synthetic_admissions(n);
        c.population.agents_per_round = 150;
        c.schedule.rounds = 24;
        c.experiment.replicates = 2;
        c.experiment.eval_rounds = 4;
        c.experiment.t_grid = vec![12, 24];
        c.experiment.rho_grid = vec![0.5, 1.0];
        c.experiment.alpha_grid = vec![0.0, 1.0];
        c.experiment.bootstrap_resamples = 50;
        c
    }

    fn opts_in(dir: &Path, config: Config) -> CommandOpts {
        let mut opts = CommandOpts::new(config, 7, dir.to_path_buf()).unwrap();
        opts.threads = 1;
        opts
    }

    #[test]
    fn table1_smoke_and_determinism() {
        let dir = std::env::temp_dir().join("ss_test_table1_a");
        let _ = fs::remove_dir_all(&dir);
        let r1 = cmd_table1(&opts_in(&dir, tiny_config(1))).unwrap();
        let csv1 = fs::read(dir.join("table1.csv")).unwrap();
        assert_eq!(r1.rows.len(), 3);
        let dir2 = std::env::temp_dir().join("ss_test_table1_b");
        let _ = fs::remove_dir_all(&dir2);
        let mut opts2 = opts_in(&dir2, tiny_config(1));
        opts2.threads = 2;
        let _ = cmd_table1(&opts2).unwrap();
        let csv2 = fs::read(dir2.join("table1.csv")).unwrap();
        // identical bytes under a different thread count
        assert_eq!(csv1, csv2);
        assert!(dir.join("manifest.json").exists());
        assert!(dir.join("table1.svg").exists());
    }

    #[test]
    fn table1_rejects_multi_dm_configs() {
        let dir = std::env::temp_dir().join("ss_test_table1_n2");
        assert!(cmd_table1(&opts_in(&dir, tiny_config(2))).is_err());
    }

    #[test]
    fn plot_reports_schema_errors() {
        let dir = std::env::temp_dir().join("ss_test_plot");
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        let bad = dir.join("bad.csv");
        fs::write(&bad, "a,b,c\n1,2,3\n").unwrap();
        match cmd_plot(&bad, &dir.join("bad.svg")) {
            Err(Error::SchemaMismatch { .. }) => {}
            other => panic!("expected schema mismatch, got {other:?}"),
        }
        let empty = dir.join("empty.csv");
        fs::write(&empty, "candidate,utility,stderr,n_complied\n").unwrap();
        match cmd_plot(&empty, &dir.join("empty.svg")) {
            Err(Error::EmptyInput(_)) => {}
            other => panic!("expected empty-input error, got {other:?}"),
        }
    }

    #[test]
    fn plot_renders_known_schemas() {
        let dir = std::env::temp_dir().join("ss_test_plot_ok");
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        let t1 = dir.join("table1.csv");
        fs::write(
            &t1,
            "candidate,utility,stderr,n_complied\ntheta_ao,2.53,0.006,1000\ntheta_ols,2.511,0.006,1000\n",
        )
        .unwrap();
        cmd_plot(&t1, &dir.join("t1.svg")).unwrap();
        assert!(fs::read_to_string(dir.join("t1.svg")).unwrap().contains("<svg"));
        let ee = dir.join("ee.csv");
        fs::write(
            &ee,
            "method,mode,env,rounds,metric,value,stderr,lo,hi\nmslr,single,0,20,error_norm,0.1,0.01,0.08,0.12\nmslr,single,0,100,error_norm,0.02,0.005,0.01,0.03\n",
        )
        .unwrap();
        cmd_plot(&ee, &dir.join("ee.svg")).unwrap();
    }

    #[test]
    fn sign_test_tail_values() {
        // exact binomial tails
        assert!((stats::sign_test_p_greater(15, 20) - 0.020694732666015625).abs() < 1e-12);
        assert!((stats::sign_test_p_greater(0, 20) - 1.0).abs() < 1e-12);
        assert!(stats::sign_test_p_greater(20, 20) > 0.0);
    }

    #[test]
    fn norm_of_mean_error_delta_method() {
        let ests = vec![vec![1.0, 0.0], vec![1.2, 0.0], vec![0.8, 0.0]];
        let (norm, se) = stats::norm_of_mean_error(&ests, &[0.0, 0.0]);
        assert!((norm - 1.0).abs() < 1e-12);
        // sd of first coordinate is 0.2, so the mean's se is 0.2/sqrt(3)
        assert!((se - 0.2 / 3f64.sqrt()).abs() < 1e-9);
    }
}
