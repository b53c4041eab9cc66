//! Deployment schedulers for decision parameters, including the cooperative
//! paired releases of positively scaled rules.
//!
//! Two pairing layouts are implemented. The interleaved layout places batch
//! k (1-based rounds) at
//!
//!   t_first  = k + floor((k - 1) / eta) * eta
//!   t_second = t_first + eta
//!
//! and is the experimental default. The block layout walks rounds t and
//! samples fresh when floor(t / (eta + 1)) is even, otherwise it scales the
//! rule from round t - eta; for eta > 1 this pairs scaled rounds with
//! scaled rounds, which is why the two layouts disagree and are kept
//! distinct.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{ScheduleMode, ScheduleSpec};
use crate::numerics::Vector;
use crate::seeding::{self, TAG_SCHEDULE};

/// Relative tolerance of the componentwise scaling test.
pub const COOPERATIVE_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    First,
    Second,
}

/// One scaled pair of rounds (0-based indices) for a single decision maker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Batch {
    pub id: u32,
    pub first: usize,
    pub second: usize,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmSchedule {
    pub eta: usize,
    pub thetas: Vec<Vector>,
    pub batches: Vec<Batch>,
}

impl DmSchedule {
    pub fn rounds(&self) -> usize {
        self.thetas.len()
    }

    pub fn batch_role(&self, round: usize) -> Option<(u32, Role)> {
        for b in &self.batches {
            if b.first == round {
                return Some((b.id, Role::First));
            }
            if b.second == round {
                return Some((b.id, Role::Second));
            }
        }
        None
    }
}

/// A round pair on which every coalition member deploys a positively scaled
/// copy of its first-round rule.
#[derive(Debug, Clone, PartialEq)]
pub struct CoalitionBatch {
    pub id: u32,
    pub first: usize,
    pub second: usize,
    /// Recovered scale per coalition member, index-aligned with `members`.
    pub scales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeploymentSchedule {
    pub rounds: usize,
    pub dms: Vec<DmSchedule>,
    /// Decision makers participating in the coalition.
    pub members: Vec<usize>,
    pub coalition: Vec<CoalitionBatch>,
}

impl DeploymentSchedule {
    pub fn thetas_for_round(&self, round: usize) -> Vec<Vector> {
        self.dms.iter().map(|dm| dm.thetas[round].clone()).collect()
    }

    /// Coalition batch id covering a round, if any.
    pub fn coalition_label(&self, round: usize) -> Option<u32> {
        self.coalition
            .iter()
            .find(|b| b.first == round || b.second == round)
            .map(|b| b.id)
    }
}

/// Fresh-rule sampler: independent normal per coordinate.
#[derive(Debug, Clone)]
pub struct ThetaSampler {
    pub mean: Vector,
    pub std: Vector,
}

impl ThetaSampler {
    pub fn sample(&self, rng: &mut impl Rng) -> Vector {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(mu, sd)| Normal::new(*mu, *sd).expect("positive std").sample(rng))
            .collect()
    }
}

/// Batch-scale sampler: uniform on [min, max], strictly positive.
#[derive(Debug, Clone, Copy)]
pub struct ScaleSampler {
    pub min: f64,
    pub max: f64,
}

impl ScaleSampler {
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..self.max)
        }
    }
}

/// Interleaved pairing. Every complete batch occupies its formula slots;
/// rounds beyond the last complete batch are sampled fresh without a label.
pub fn schedule_interleaved(
    rounds: usize,
    eta: usize,
    sampler: &ThetaSampler,
    scale_sampler: &ScaleSampler,
    rng: &mut impl Rng,
) -> Result<DmSchedule> {
    if rounds < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 rounds, got {rounds}"
        )));
    }
    if eta == 0 {
        return Err(Error::InvalidArgument("eta must be positive".into()));
    }
    let mut thetas: Vec<Option<Vector>> = vec![None; rounds];
    let mut batches = Vec::new();
    let mut k: usize = 1;
    loop {
        let t_first = k + ((k - 1) / eta) * eta; // 1-based
        let t_second = t_first + eta;
        if t_second > rounds {
            break;
        }
        let fresh = sampler.sample(rng);
        let scale = scale_sampler.sample(rng);
        let scaled = crate::numerics::scale(&fresh, scale);
        thetas[t_first - 1] = Some(fresh);
        thetas[t_second - 1] = Some(scaled);
        batches.push(Batch {
            id: k as u32,
            first: t_first - 1,
            second: t_second - 1,
            scale,
        });
        k += 1;
    }
    for slot in thetas.iter_mut() {
        if slot.is_none() {
            *slot = Some(sampler.sample(rng));
        }
    }
    Ok(DmSchedule {
        eta,
        thetas: thetas.into_iter().map(|t| t.unwrap()).collect(),
        batches,
    })
}

/// Block pairing: even blocks sample fresh, odd blocks scale the rule from
/// eta rounds earlier. Pairs whose target precedes round 1 are skipped with
/// a warning on standard error.
pub fn schedule_block(
    rounds: usize,
    eta: usize,
    sampler: &ThetaSampler,
    scale_sampler: &ScaleSampler,
    rng: &mut impl Rng,
) -> Result<DmSchedule> {
    if rounds < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 rounds, got {rounds}"
        )));
    }
    if eta == 0 {
        return Err(Error::InvalidArgument("eta must be positive".into()));
    }
    let mut thetas: Vec<Vector> = Vec::with_capacity(rounds);
    let mut batches = Vec::new();
    let mut next_id = 1u32;
    for t in 1..=rounds {
        let block_index = t / (eta + 1);
        if block_index % 2 == 0 {
            thetas.push(sampler.sample(rng));
        } else if t <= eta {
            eprintln!("schedule_block: round {t} has no pairing target, sampling fresh");
            thetas.push(sampler.sample(rng));
        } else {
            let scale = scale_sampler.sample(rng);
            let scaled = crate::numerics::scale(&thetas[t - eta - 1], scale);
            thetas.push(scaled);
            batches.push(Batch {
                id: next_id,
                first: t - eta - 1,
                second: t - 1,
                scale,
            });
            next_id += 1;
        }
    }
    Ok(DmSchedule { eta, thetas, batches })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComposeMode {
    Synchronous,
    Asynchronous,
}

/// Joins per-DM schedules into a deployment schedule. In synchronous mode
/// the coalition members must share eta and batch placement, and every
/// shared batch is coalition-labelled. In asynchronous mode each DM keeps
/// its own spacing and only placement-coinciding pairs (possibly none) are
/// labelled.
pub fn compose_multi_dm(
    dms: Vec<DmSchedule>,
    mode: ComposeMode,
    members: &[usize],
) -> Result<DeploymentSchedule> {
    if dms.is_empty() {
        return Err(Error::InvalidArgument("no schedules given".into()));
    }
    let rounds = dms[0].rounds();
    if dms.iter().any(|dm| dm.rounds() != rounds) {
        return Err(Error::Dimension(
            "all schedules must span the same number of rounds".into(),
        ));
    }
    let members: Vec<usize> = if members.is_empty() {
        (0..dms.len()).collect()
    } else {
        let mut ms = members.to_vec();
        ms.sort_unstable();
        ms.dedup();
        if ms.iter().any(|&i| i >= dms.len()) {
            return Err(Error::InvalidArgument("coalition member out of range".into()));
        }
        ms
    };
    if mode == ComposeMode::Synchronous {
        let eta0 = dms[members[0]].eta;
        if members.iter().any(|&i| dms[i].eta != eta0) {
            return Err(Error::InvalidArgument(
                "synchronous composition requires identical eta across coalition members".into(),
            ));
        }
        let placement: Vec<(usize, usize)> = dms[members[0]]
            .batches
            .iter()
            .map(|b| (b.first, b.second))
            .collect();
        for &i in &members {
            let other: Vec<(usize, usize)> =
                dms[i].batches.iter().map(|b| (b.first, b.second)).collect();
            if other != placement {
                return Err(Error::InvalidArgument(
                    "synchronous composition requires identical batch placement".into(),
                ));
            }
        }
    }
    // coalition pairs: placements shared by every member
    let mut coalition = Vec::new();
    let mut id = 1u32;
    for b in &dms[members[0]].batches {
        let mut scales = vec![b.scale];
        let mut shared = true;
        for &i in members.iter().skip(1) {
            match dms[i]
                .batches
                .iter()
                .find(|ob| ob.first == b.first && ob.second == b.second)
            {
                Some(ob) => scales.push(ob.scale),
                None => {
                    shared = false;
                    break;
                }
            }
        }
        if shared {
            coalition.push(CoalitionBatch {
                id,
                first: b.first,
                second: b.second,
                scales,
            });
            id += 1;
        }
    }
    Ok(DeploymentSchedule {
        rounds,
        dms,
        members,
        coalition,
    })
}

/// Componentwise ratio test: do all DMs deploy a positively scaled copy of
/// their round `t_prime` rule at round `t`? Returns the overall verdict and
/// the recovered per-DM scale.
pub fn verify_cooperative(
    schedule: &DeploymentSchedule,
    t: usize,
    t_prime: usize,
) -> Result<(bool, Vec<f64>)> {
    if t >= schedule.rounds || t_prime >= schedule.rounds {
        return Err(Error::InvalidArgument("round outside schedule".into()));
    }
    let mut all_ok = true;
    let mut scales = Vec::with_capacity(schedule.dms.len());
    for dm in &schedule.dms {
        let a = &dm.thetas[t];
        let b = &dm.thetas[t_prime];
        let (j_ref, b_max) = b
            .iter()
            .enumerate()
            .map(|(j, v)| (j, v.abs()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        if b_max == 0.0 {
            return Err(Error::InvalidArgument(
                "scaling ratio undefined for a zero rule vector".into(),
            ));
        }
        let k = a[j_ref] / b[j_ref];
        let scale_ref = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1e-300);
        let consistent = a
            .iter()
            .zip(b)
            .all(|(av, bv)| (av - k * bv).abs() <= COOPERATIVE_RTOL * scale_ref);
        if !(consistent && k > 0.0) {
            all_ok = false;
        }
        scales.push(k);
    }
    Ok((all_ok, scales))
}

/// Builds the full deployment schedule described by a config section.
pub fn build_schedule(spec: &ScheduleSpec, seed: u64) -> Result<DeploymentSchedule> {
    build_schedule_with_members(spec, seed, &[])
}

/// Same as [`build_schedule`], restricting the coalition to `members`
/// (empty means every decision maker participates).
pub fn build_schedule_with_members(
    spec: &ScheduleSpec,
    seed: u64,
    members: &[usize],
) -> Result<DeploymentSchedule> {
    let n = spec.eta.len();
    if members.iter().any(|&i| i >= n) {
        return Err(Error::InvalidArgument("coalition member out of range".into()));
    }
    let mut dms = Vec::with_capacity(n);
    for i in 0..n {
        let sampler = ThetaSampler {
            mean: spec.theta_means[i].clone(),
            std: spec.theta_stds[i].clone(),
        };
        let scales = ScaleSampler {
            min: spec.scale_min,
            max: spec.scale_max,
        };
        let mut rng =
            rand_chacha::ChaCha8Rng::seed_from_u64(seeding::derive(seed, TAG_SCHEDULE, i as u64));
        use rand::SeedableRng;
        let dm = match spec.mode {
            ScheduleMode::Interleaved => {
                schedule_interleaved(spec.rounds, spec.eta[i], &sampler, &scales, &mut rng)?
            }
            ScheduleMode::Block => {
                schedule_block(spec.rounds, spec.eta[i], &sampler, &scales, &mut rng)?
            }
        };
        dms.push(dm);
    }
    // synchronous composition is only meaningful when coalition spacings
    // agree; with heterogeneous eta the schedule is asynchronous
    let coalition: Vec<usize> = if members.is_empty() {
        (0..n).collect()
    } else {
        members.to_vec()
    };
    let etas_match = coalition.windows(2).all(|w| spec.eta[w[0]] == spec.eta[w[1]]);
    let mode = if spec.synchronous && etas_match {
        ComposeMode::Synchronous
    } else {
        ComposeMode::Asynchronous
    };
    compose_multi_dm(dms, mode, members)
}

/// Audit export: one row per (round, dm) with the deployed vector and batch
/// membership.
pub fn write_schedule_csv(
    schedule: &DeploymentSchedule,
    out: &mut impl std::io::Write,
) -> Result<()> {
    let m = schedule
        .dms
        .first()
        .and_then(|dm| dm.thetas.first())
        .map(|t| t.len())
        .unwrap_or(0);
    let mut header = String::from("round,dm");
    for j in 0..m {
        header.push_str(&format!(",theta_{}", j + 1));
    }
    header.push_str(",batch,role,k");
    writeln!(out, "{header}")?;
    for round in 0..schedule.rounds {
        for (i, dm) in schedule.dms.iter().enumerate() {
            let mut row = format!("{round},{i}");
            for v in &dm.thetas[round] {
                row.push(',');
                row.push_str(&format!("{v}"));
            }
            match dm.batch_role(round) {
                Some((id, role)) => {
                    let scale = dm
                        .batches
                        .iter()
                        .find(|b| b.id == id)
                        .map(|b| b.scale)
                        .unwrap_or(f64::NAN);
                    row.push_str(&format!(
                        ",{},{},{}",
                        id,
                        match role {
                            Role::First => "first",
                            Role::Second => "second",
                        },
                        scale
                    ));
                }
                None => row.push_str(",,,"),
            }
            writeln!(out, "{row}")?;
        }
    }
    Ok(())
}

/// Rebuilds a schedule from its CSV export. Coalition labels are
/// reconstructed for the full member set.
pub fn read_schedule_csv(text: &str) -> Result<DeploymentSchedule> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::EmptyInput("schedule csv".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let m = cols.iter().filter(|c| c.starts_with("theta_")).count();
    if m == 0 || cols.len() != m + 5 {
        return Err(Error::SchemaMismatch {
            path: "schedule csv".into(),
            missing: vec!["round,dm,theta_*,batch,role,k".into()],
        });
    }
    struct Row {
        round: usize,
        dm: usize,
        theta: Vector,
        batch: Option<(u32, Role, f64)>,
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != m + 5 {
            return Err(Error::Parse("schedule row width".into()));
        }
        let round: usize = f[0].parse().map_err(|_| Error::Parse("round".into()))?;
        let dm: usize = f[1].parse().map_err(|_| Error::Parse("dm".into()))?;
        let mut theta = Vec::with_capacity(m);
        for j in 0..m {
            theta.push(
                f[2 + j]
                    .parse::<f64>()
                    .map_err(|_| Error::Parse("theta".into()))?,
            );
        }
        let batch = if f[m + 2].is_empty() {
            None
        } else {
            let id: u32 = f[m + 2].parse().map_err(|_| Error::Parse("batch".into()))?;
            let role = match f[m + 3] {
                "first" => Role::First,
                "second" => Role::Second,
                other => return Err(Error::Parse(format!("role {other}"))),
            };
            let k: f64 = f[m + 4].parse().map_err(|_| Error::Parse("k".into()))?;
            Some((id, role, k))
        };
        rows.push(Row {
            round,
            dm,
            theta,
            batch,
        });
    }
    let rounds = rows.iter().map(|r| r.round + 1).max().unwrap_or(0);
    let n = rows.iter().map(|r| r.dm + 1).max().unwrap_or(0);
    if rounds == 0 || n == 0 {
        return Err(Error::EmptyInput("schedule csv".into()));
    }
    let mut dms: Vec<DmSchedule> = (0..n)
        .map(|_| DmSchedule {
            eta: 0,
            thetas: vec![Vec::new(); rounds],
            batches: Vec::new(),
        })
        .collect();
    let mut halves: Vec<std::collections::BTreeMap<u32, (Option<usize>, Option<usize>, f64)>> =
        vec![std::collections::BTreeMap::new(); n];
    for row in rows {
        dms[row.dm].thetas[row.round] = row.theta;
        if let Some((id, role, k)) = row.batch {
            let entry = halves[row.dm].entry(id).or_insert((None, None, k));
            match role {
                Role::First => entry.0 = Some(row.round),
                Role::Second => entry.1 = Some(row.round),
            }
            entry.2 = k;
        }
    }
    for (dm, found) in dms.iter_mut().zip(halves) {
        for (id, (first, second, k)) in found {
            if let (Some(first), Some(second)) = (first, second) {
                dm.batches.push(Batch {
                    id,
                    first,
                    second,
                    scale: k,
                });
                dm.eta = second - first;
            }
        }
        dm.batches.sort_by_key(|b| b.id);
    }
    compose_multi_dm(dms, ComposeMode::Asynchronous, &[])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sampler() -> ThetaSampler {
        ThetaSampler {
            mean: vec![1.0, 1.0],
            std: vec![10f64.sqrt(), 1.0],
        }
    }

    fn scales() -> ScaleSampler {
        ScaleSampler { min: 0.5, max: 2.0 }
    }

    #[test]
    fn interleaved_eta_one_pairs_adjacent_rounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dm = schedule_interleaved(6, 1, &sampler(), &scales(), &mut rng).unwrap();
        let placement: Vec<(usize, usize)> =
            dm.batches.iter().map(|b| (b.first + 1, b.second + 1)).collect();
        assert_eq!(placement, vec![(1, 2), (3, 4), (5, 6)]);
    }

    #[test]
    fn interleaved_eta_two_formula_placement() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dm = schedule_interleaved(8, 2, &sampler(), &scales(), &mut rng).unwrap();
        let placement: Vec<(usize, usize)> =
            dm.batches.iter().map(|b| (b.first + 1, b.second + 1)).collect();
        assert_eq!(placement, vec![(1, 3), (2, 4), (5, 7), (6, 8)]);
        // all 8 rounds are covered by a complete batch
        assert_eq!(dm.batches.len(), 4);
    }

    #[test]
    fn interleaved_batches_disjoint_prefix_complete() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(rounds, eta) in &[(10usize, 1usize), (12, 2), (14, 3), (9, 2)] {
            let dm = schedule_interleaved(rounds, eta, &sampler(), &scales(), &mut rng).unwrap();
            let mut seen = vec![0usize; rounds];
            for b in &dm.batches {
                seen[b.first] += 1;
                seen[b.second] += 1;
                assert!(b.scale > 0.0);
            }
            assert!(seen.iter().all(|&c| c <= 1));
            // rounds used by batches form a prefix of the round range
            let last_used = seen.iter().rposition(|&c| c == 1);
            if let Some(last) = last_used {
                assert!(seen[..=last].iter().filter(|&&c| c == 0).count() == 0);
            }
        }
    }

    #[test]
    fn block_layout_traces_reference_branching() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dm = schedule_block(6, 2, &sampler(), &scales(), &mut rng).unwrap();
        // rounds 3,4,5 (1-based) scale rounds 1,2,3
        let placement: Vec<(usize, usize)> =
            dm.batches.iter().map(|b| (b.first + 1, b.second + 1)).collect();
        assert_eq!(placement, vec![(1, 3), (2, 4), (3, 5)]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dm = schedule_block(2, 1, &sampler(), &scales(), &mut rng).unwrap();
        let placement: Vec<(usize, usize)> =
            dm.batches.iter().map(|b| (b.first + 1, b.second + 1)).collect();
        assert_eq!(placement, vec![(1, 2)]);
    }

    #[test]
    fn block_layout_small_horizon_has_one_usable_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dm = schedule_block(3, 2, &sampler(), &scales(), &mut rng).unwrap();
        assert_eq!(dm.batches.len(), 1);
    }

    #[test]
    fn scheduled_batches_verify_cooperative() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = schedule_interleaved(12, 2, &sampler(), &scales(), &mut rng).unwrap();
            let b = schedule_interleaved(12, 2, &sampler(), &scales(), &mut rng).unwrap();
            let joint = compose_multi_dm(vec![a, b], ComposeMode::Synchronous, &[]).unwrap();
            assert!(!joint.coalition.is_empty());
            for batch in &joint.coalition {
                let (ok, ks) = verify_cooperative(&joint, batch.second, batch.first).unwrap();
                assert!(ok);
                for (k, expected) in ks.iter().zip(&batch.scales) {
                    assert!((k - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn verify_cooperative_examples() {
        let theta = vec![1.0, 2.0];
        let a = DmSchedule {
            eta: 1,
            thetas: vec![theta.clone(), crate::numerics::scale(&theta, 2.0)],
            batches: vec![],
        };
        let joint = compose_multi_dm(vec![a], ComposeMode::Asynchronous, &[]).unwrap();
        // theta_{t'} = 2 theta_t recovers k = 0.5 at (t, t')
        let (ok, ks) = verify_cooperative(&joint, 0, 1).unwrap();
        assert!(ok);
        assert!((ks[0] - 0.5).abs() < 1e-12);

        let b = DmSchedule {
            eta: 1,
            thetas: vec![theta.clone(), crate::numerics::scale(&theta, -1.0)],
            batches: vec![],
        };
        let joint = compose_multi_dm(vec![b], ComposeMode::Asynchronous, &[]).unwrap();
        let (ok, ks) = verify_cooperative(&joint, 1, 0).unwrap();
        assert!(!ok);
        assert!(ks[0] < 0.0);

        let mut bent = theta.clone();
        bent[0] *= 1.0 + 1e-6;
        let c = DmSchedule {
            eta: 1,
            thetas: vec![theta.clone(), bent],
            batches: vec![],
        };
        let joint = compose_multi_dm(vec![c], ComposeMode::Asynchronous, &[]).unwrap();
        let (ok, _) = verify_cooperative(&joint, 1, 0).unwrap();
        assert!(!ok);

        let z = DmSchedule {
            eta: 1,
            thetas: vec![vec![0.0, 0.0], theta],
            batches: vec![],
        };
        let joint = compose_multi_dm(vec![z], ComposeMode::Asynchronous, &[]).unwrap();
        assert!(verify_cooperative(&joint, 1, 0).is_err());
    }

    #[test]
    fn synchronous_compose_requires_matching_eta() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = schedule_interleaved(12, 2, &sampler(), &scales(), &mut rng).unwrap();
        let b = schedule_interleaved(12, 3, &sampler(), &scales(), &mut rng).unwrap();
        assert!(compose_multi_dm(vec![a, b], ComposeMode::Synchronous, &[]).is_err());
    }

    #[test]
    fn asynchronous_mismatched_eta_has_no_coalition_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = schedule_interleaved(12, 2, &sampler(), &scales(), &mut rng).unwrap();
        let b = schedule_interleaved(12, 3, &sampler(), &scales(), &mut rng).unwrap();
        let joint = compose_multi_dm(vec![a, b], ComposeMode::Asynchronous, &[]).unwrap();
        assert!(joint.coalition.is_empty());
    }

    #[test]
    fn single_dm_batches_are_trivially_cooperative() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = schedule_interleaved(12, 2, &sampler(), &scales(), &mut rng).unwrap();
        let n_batches = a.batches.len();
        let joint = compose_multi_dm(vec![a], ComposeMode::Synchronous, &[]).unwrap();
        assert_eq!(joint.coalition.len(), n_batches);
    }

    #[test]
    fn delta_design_spans_full_rank_across_seeds() {
        // with at least m batches the stacked scaled-minus-fresh directions
        // span R^m for a full-support sampler
        use crate::numerics::{ols_fit, Matrix};
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let dm = schedule_interleaved(8, 2, &sampler(), &scales(), &mut rng).unwrap();
            let rows: Vec<Vec<f64>> = dm
                .batches
                .iter()
                .map(|b| crate::numerics::sub(&dm.thetas[b.second], &dm.thetas[b.first]))
                .collect();
            let design = Matrix::from_rows(&rows).unwrap();
            let targets = Matrix::zeros(rows.len(), 1);
            assert!(ols_fit(&design, &targets, false).is_ok(), "seed {seed}");
        }
    }

    #[test]
    fn schedule_csv_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = schedule_interleaved(9, 2, &sampler(), &scales(), &mut rng).unwrap();
        let b = schedule_interleaved(9, 2, &sampler(), &scales(), &mut rng).unwrap();
        let joint = compose_multi_dm(vec![a, b], ComposeMode::Synchronous, &[]).unwrap();
        let mut buf = Vec::new();
        write_schedule_csv(&joint, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let back = read_schedule_csv(&text).unwrap();
        assert_eq!(back.rounds, joint.rounds);
        for (dm_a, dm_b) in joint.dms.iter().zip(&back.dms) {
            assert_eq!(dm_a.thetas, dm_b.thetas);
            assert_eq!(dm_a.batches, dm_b.batches);
        }
    }
}
