//! Per-arrival instruction counts (theta) from kernel traces.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Label, RngStream, TraceRecord};
use crate::network::{build_archetype, ArchetypeKind, QueueClass};
use crate::sim::{run_simulation, RunConfig, DEFAULT_RUN_LENGTH, DEFAULT_WARMUP};
use crate::timing::{mean, sample_sd};

pub const DEFAULT_N_SAMPLE: usize = 100;
pub const DEFAULT_TRIM: usize = 10;
const SAMPLING_STREAM: u64 = u64::MAX;

/// Instruction tally of one completed entity. `stages[i]` counts the records
/// of its i-th subsystem visit, from enter-queue through release.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityTally {
    pub entity_id: u64,
    pub total: u64,
    pub stages: Vec<u64>,
}

/// Completed entities in creation order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrivalInstructionCounts {
    pub entities: Vec<EntityTally>,
}

impl ArrivalInstructionCounts {
    pub fn from_trace(trace: &[TraceRecord]) -> Self {
        struct Acc {
            tally: EntityTally,
            open: bool,
            done: bool,
        }
        let mut by_id: BTreeMap<u64, Acc> = BTreeMap::new();
        for r in trace {
            let acc = by_id.entry(r.entity_id).or_insert_with(|| Acc {
                tally: EntityTally { entity_id: r.entity_id, total: 0, stages: vec![] },
                open: false,
                done: false,
            });
            acc.tally.total += 1;
            match r.label {
                Label::EnterQueue => {
                    acc.tally.stages.push(1);
                    acc.open = true;
                }
                Label::End => acc.done = true,
                _ if acc.open => {
                    *acc.tally.stages.last_mut().expect("open stage") += 1;
                    if r.label == Label::Release {
                        acc.open = false;
                    }
                }
                _ => {}
            }
        }
        let entities = by_id.into_values().filter(|a| a.done).map(|a| a.tally).collect();
        Self { entities }
    }

    /// Synthetic population with the given totals and no stage detail.
    pub fn from_totals(totals: &[u64]) -> Self {
        let entities = totals
            .iter()
            .enumerate()
            .map(|(i, &t)| EntityTally { entity_id: i as u64, total: t, stages: vec![] })
            .collect();
        Self { entities }
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

/// Integer sum of sampled counts, so identities like `+2 per arrival` stay exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub sum: u64,
    pub n: usize,
}

impl InstructionSample {
    pub fn mean(&self) -> f64 {
        self.sum as f64 / self.n as f64
    }
}

/// Drops `trim` entities at each end and draws `n_sample` positions without replacement.
pub fn sample_positions<R: Rng + ?Sized>(len: usize, n_sample: usize, trim: usize, rng: &mut R) -> Result<Vec<usize>> {
    let needed = 2 * trim + n_sample;
    if len <= needed {
        return Err(Error::InsufficientTrace { needed, available: len });
    }
    let pool = len - 2 * trim;
    let mut pos: Vec<usize> = index::sample(rng, pool, n_sample).into_iter().map(|i| i + trim).collect();
    pos.sort_unstable();
    Ok(pos)
}

pub fn sample_totals<R: Rng + ?Sized>(
    counts: &ArrivalInstructionCounts,
    n_sample: usize,
    trim: usize,
    rng: &mut R,
) -> Result<InstructionSample> {
    let pos = sample_positions(counts.len(), n_sample, trim, rng)?;
    let sum = pos.iter().map(|&i| counts.entities[i].total).sum();
    Ok(InstructionSample { sum, n: pos.len() })
}

/// Mean instructions per arrival over a trimmed random sample.
pub fn count_instructions<R: Rng + ?Sized>(
    counts: &ArrivalInstructionCounts,
    n_sample: usize,
    trim: usize,
    rng: &mut R,
) -> Result<f64> {
    Ok(sample_totals(counts, n_sample, trim, rng)?.mean())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaConfig {
    pub r: usize,
    pub n_sample: usize,
    pub trim: usize,
    pub warmup: f64,
    pub run_length: f64,
    pub seed: u64,
}

impl Default for ThetaConfig {
    fn default() -> Self {
        Self {
            r: 10,
            n_sample: DEFAULT_N_SAMPLE,
            trim: DEFAULT_TRIM,
            warmup: DEFAULT_WARMUP,
            run_length: DEFAULT_RUN_LENGTH,
            seed: 1,
        }
    }
}

impl ThetaConfig {
    pub fn replication_seed(&self, j: usize) -> u64 {
        self.seed.wrapping_add(j as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub theta: f64,
    pub rho: f64,
    pub n_sampled: usize,
    pub r: usize,
    pub sd: f64,
    pub replications: Vec<f64>,
}

impl ThetaEstimate {
    fn from_samples(rho: f64, samples: &[InstructionSample]) -> Self {
        let reps: Vec<f64> = samples.iter().map(|s| s.mean()).collect();
        Self {
            theta: mean(&reps),
            rho,
            n_sampled: samples.first().map(|s| s.n).unwrap_or(0),
            r: reps.len(),
            sd: sample_sd(&reps),
            replications: reps,
        }
    }
}

/// One traced replication: sampled totals plus the same entities' per-stage sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaRun {
    pub total: InstructionSample,
    pub stages: Vec<InstructionSample>,
}

pub fn theta_run(kind: ArchetypeKind, class: QueueClass, rho: f64, seed: u64, cfg: &ThetaConfig) -> Result<ThetaRun> {
    let spec = build_archetype(kind, class, rho)?;
    let res = run_simulation(&spec, &RunConfig::new(cfg.warmup, cfg.run_length, seed).traced())?;
    let counts = ArrivalInstructionCounts::from_trace(res.trace.as_deref().unwrap_or(&[]));
    let mut rng = RngStream::new(seed, SAMPLING_STREAM);
    let pos = sample_positions(counts.len(), cfg.n_sample, cfg.trim, &mut rng)?;
    let n_stages = pos.iter().map(|&i| counts.entities[i].stages.len()).min().unwrap_or(0);
    let total = InstructionSample { sum: pos.iter().map(|&i| counts.entities[i].total).sum(), n: pos.len() };
    let stages = (0..n_stages)
        .map(|s| InstructionSample { sum: pos.iter().map(|&i| counts.entities[i].stages[s]).sum(), n: pos.len() })
        .collect();
    Ok(ThetaRun { total, stages })
}

fn check_kind(kind: ArchetypeKind) -> Result<()> {
    if kind == ArchetypeKind::SubsystemOnly {
        return Err(Error::UnsupportedArchetype("ss theta comes from subsystem-level counting".into()));
    }
    Ok(())
}

/// Mean and sd of theta over `cfg.r` traced replications with seeds `seed, seed+1, ...`.
pub fn theta_replicated(kind: ArchetypeKind, class: QueueClass, rho: f64, cfg: &ThetaConfig) -> Result<ThetaEstimate> {
    check_kind(kind)?;
    let runs: Vec<InstructionSample> = (0..cfg.r)
        .map(|j| theta_run(kind, class, rho, cfg.replication_seed(j), cfg).map(|t| t.total))
        .collect::<Result<_>>()?;
    Ok(ThetaEstimate::from_samples(rho, &runs))
}

/// Theta of the 2s archetype together with the subsystem-level theta of its second stage.
pub fn theta_two_stage_with_ss(class: QueueClass, rho: f64, cfg: &ThetaConfig) -> Result<(ThetaEstimate, ThetaEstimate)> {
    let mut totals = Vec::with_capacity(cfg.r);
    let mut second = Vec::with_capacity(cfg.r);
    for j in 0..cfg.r {
        let run = theta_run(ArchetypeKind::TwoStage, class, rho, cfg.replication_seed(j), cfg)?;
        let s2 = *run.stages.get(1).ok_or_else(|| Error::Config("2s trace lacks a second stage".into()))?;
        totals.push(run.total);
        second.push(s2);
    }
    Ok((ThetaEstimate::from_samples(rho, &totals), ThetaEstimate::from_samples(rho, &second)))
}

/// theta_2s - theta_1s at a common occupancy.
pub fn theta_ss(theta_2s: &ThetaEstimate, theta_1s: &ThetaEstimate) -> Result<f64> {
    if (theta_2s.rho - theta_1s.rho).abs() > 0.005 {
        return Err(Error::MismatchedOccupancy { a: theta_2s.rho, b: theta_1s.rho });
    }
    Ok(theta_2s.theta - theta_1s.theta)
}

pub fn write_theta_csv<W: Write>(rows: &[ThetaEstimate], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rho", "theta", "sd", "r"])?;
    for t in rows {
        w.write_record([t.rho.to_string(), t.theta.to_string(), t.sd.to_string(), t.r.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(theta: f64, rho: f64) -> ThetaEstimate {
        ThetaEstimate { theta, rho, n_sampled: 100, r: 1, sd: 0.0, replications: vec![theta] }
    }

    #[test]
    fn constant_counts_give_constant_theta() {
        let c = ArrivalInstructionCounts::from_totals(&[15; 500]);
        let mut rng = RngStream::new(1, 0);
        assert_eq!(count_instructions(&c, 100, 10, &mut rng).unwrap(), 15.0);
    }

    #[test]
    fn full_sample_equals_trimmed_mean() {
        // counts = departure index on 200 entities; sampling all 180 interior ones.
        let totals: Vec<u64> = (0..200).collect();
        let c = ArrivalInstructionCounts::from_totals(&totals);
        let mut rng = RngStream::new(9, 0);
        let theta = count_instructions(&c, 179, 10, &mut rng).unwrap();
        let pos = sample_positions(200, 179, 10, &mut RngStream::new(9, 0)).unwrap();
        let oracle = pos.iter().map(|&i| i as f64).sum::<f64>() / 179.0;
        assert_eq!(theta, oracle);
        assert!(pos.iter().all(|&i| (10..190).contains(&i)));
        // Exhaustive: every interior index but one is present.
        let sum: usize = pos.iter().sum();
        let missing = (10..190).sum::<usize>() - sum;
        assert!((10..190).contains(&missing));
    }

    #[test]
    fn short_trace_is_rejected() {
        let c = ArrivalInstructionCounts::from_totals(&[12; 50]);
        let mut rng = RngStream::new(1, 0);
        assert!(matches!(
            count_instructions(&c, 100, 10, &mut rng),
            Err(Error::InsufficientTrace { needed: 120, available: 50 })
        ));
        let c = ArrivalInstructionCounts::from_totals(&[12; 120]);
        assert!(count_instructions(&c, 100, 10, &mut rng).is_err());
    }

    #[test]
    fn tally_splits_stages_and_drops_incomplete() {
        use Label::*;
        let mk = |id, label| TraceRecord { sim_time: 0.0, entity_id: id, label };
        let trace = vec![
            mk(0, Current), mk(0, Create), mk(0, EnterQueue), mk(0, Request), mk(0, LeaveQueue),
            mk(0, ClaimAndHold), mk(1, Create), mk(0, Current), mk(0, Release), mk(0, EnterQueue),
            mk(0, Request), mk(0, WaitPassive), mk(0, RequestHonoured), mk(0, LeaveQueue),
            mk(0, ClaimAndHold), mk(0, Current), mk(0, Release), mk(0, End),
        ];
        let c = ArrivalInstructionCounts::from_trace(&trace);
        assert_eq!(c.len(), 1);
        assert_eq!(c.entities[0].total, 17);
        assert_eq!(c.entities[0].stages, vec![6, 8]);
    }

    #[test]
    fn theta_ss_subtracts() {
        assert!((theta_ss(&est(33.5, 0.5), &est(13.2, 0.5)).unwrap() - 20.3).abs() < 1e-12);
        assert!(matches!(theta_ss(&est(33.5, 0.5), &est(13.2, 0.6)), Err(Error::MismatchedOccupancy { .. })));
    }

    #[test]
    fn published_fits_disagree_on_ss_scale() {
        // 2s - 1s of the published mm lines at x = 0.5 vs the directly fitted ss line.
        let two: f64 = 1.97 * 0.5 + 33.02;
        let one: f64 = 0.99 * 0.5 + 13.00;
        assert!((two - 34.005).abs() < 1e-12 && (one - 13.495).abs() < 1e-12);
        assert!((theta_ss(&est(two, 0.5), &est(one, 0.5)).unwrap() - 20.51).abs() < 1e-9);
        assert!(((0.97 * 0.5 + 9.02) - 9.505f64).abs() < 1e-12);
    }

    fn short_cfg(r: usize) -> ThetaConfig {
        ThetaConfig { r, warmup: 2000.0, run_length: 5000.0, seed: 17, ..Default::default() }
    }

    #[test]
    fn single_replication_has_zero_sd() {
        let t = theta_replicated(ArchetypeKind::OneStage, QueueClass::Mm, 0.5, &short_cfg(1)).unwrap();
        assert_eq!(t.sd, 0.0);
        assert_eq!(t.r, 1);
        assert_eq!(t.n_sampled, 100);
    }

    #[test]
    fn simplified_adds_exactly_two() {
        let cfg = short_cfg(3);
        for rho in [0.3, 0.7, 0.9] {
            for class in QueueClass::ALL {
                for j in 0..cfg.r {
                    let seed = cfg.replication_seed(j);
                    let one = theta_run(ArchetypeKind::OneStage, class, rho, seed, &cfg).unwrap().total;
                    let ms = theta_run(ArchetypeKind::Simplified, class, rho, seed, &cfg).unwrap().total;
                    assert_eq!(ms.sum, one.sum + 2 * one.n as u64, "{class} rho={rho}");
                }
            }
        }
    }

    #[test]
    fn theta_grows_with_occupancy() {
        let cfg = ThetaConfig { r: 3, warmup: 5000.0, run_length: DEFAULT_RUN_LENGTH, seed: 5, ..Default::default() };
        let lo = theta_replicated(ArchetypeKind::TwoStage, QueueClass::Mm, 0.3, &cfg).unwrap();
        let hi = theta_replicated(ArchetypeKind::TwoStage, QueueClass::Mm, 0.9, &cfg).unwrap();
        assert!(hi.theta > lo.theta, "{} vs {}", hi.theta, lo.theta);
    }

    #[test]
    fn stage_theta_equals_two_stage_minus_one_stage() {
        let cfg = short_cfg(2);
        let (two, ss) = theta_two_stage_with_ss(QueueClass::Mg, 0.8, &cfg).unwrap();
        let one = theta_replicated(ArchetypeKind::OneStage, QueueClass::Mg, 0.8, &cfg).unwrap();
        assert!((theta_ss(&two, &one).unwrap() - ss.theta).abs() < 1e-9);
        assert!(ss.theta >= 6.0);
    }
}
