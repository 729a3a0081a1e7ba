//! Validation experiments, the server-count scaling study and waiting-time curves.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationProfile;
use crate::dist::DistributionSpec;
use crate::error::{Error, Result};
use crate::kernel::RngStream;
use crate::network::{build_archetype, ArchetypeKind, GeneratorSpec, NetworkSpec, QueueClass, RoutingEdge, SubsystemSpec, GENERATOR, SINK};
use crate::predict::{metrics, predict_rs, MetricsReport, ParentObservation};
use crate::sim::{group_key, run_simulation, RunConfig, SimulationResult, DEFAULT_RUN_LENGTH, DEFAULT_WARMUP};
use crate::simplify::{apply_simplification, collect_los, fit_los, FittedLos, SimplificationOp, DEFAULT_KDE_BANDWIDTH};
use crate::timing::{self, TimingClock};

pub const CSV_SCHEMA_VERSION: u32 = 1;
const DRAW_STREAM: u64 = u64::MAX - 1;
const PILOT_SEED_OFFSET: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n_draws: usize,
    pub rho_lo: f64,
    pub rho_hi: f64,
    pub reps: usize,
    pub seed: u64,
    pub warmup: f64,
    pub run_length: f64,
    pub instruction_cost: u32,
    pub clock: TimingClock,
    /// Replication CV bound on parent and simplified runtimes; None disables the guard.
    pub cv_max: Option<f64>,
    pub kde_bandwidth: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_draws: 20,
            rho_lo: 0.20,
            rho_hi: 0.93,
            reps: 30,
            seed: 1,
            warmup: DEFAULT_WARMUP,
            run_length: DEFAULT_RUN_LENGTH,
            instruction_cost: crate::kernel::DEFAULT_INSTRUCTION_COST,
            clock: TimingClock::default(),
            cv_max: None,
            kde_bandwidth: DEFAULT_KDE_BANDWIDTH,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(crate::calibration::GRID_MIN - 1e-9 <= self.rho_lo && self.rho_lo <= self.rho_hi && self.rho_hi <= crate::calibration::GRID_MAX + 1e-9) {
            return Err(Error::Config(format!("occupancy range [{}, {}] must lie within [0.20, 0.93]", self.rho_lo, self.rho_hi)));
        }
        if self.reps == 0 || self.n_draws == 0 {
            return Err(Error::Config("reps and draw count must be positive".into()));
        }
        Ok(())
    }

    /// Sorted target occupancies drawn uniformly from the configured range.
    pub fn draws(&self) -> Vec<f64> {
        let mut rng = RngStream::new(self.seed, DRAW_STREAM);
        let mut v: Vec<f64> = (0..self.n_draws).map(|_| rng.random_range(self.rho_lo..=self.rho_hi)).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    fn run_config(&self, seed: u64) -> RunConfig {
        RunConfig::new(self.warmup, self.run_length, seed).with_cost(self.instruction_cost).timed()
    }
}

/// Two-stage parents of the first validation experiment; `rho` targets stage 2.
pub fn validation1_parent(class: QueueClass, rho: f64) -> Result<NetworkSpec> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::OccupancyOutOfRange(rho));
    }
    Ok(match class {
        QueueClass::Mm => return build_archetype(ArchetypeKind::TwoStage, QueueClass::Mm, rho),
        QueueClass::Mg => NetworkSpec::tandem(
            DistributionSpec::exponential(6.0 / rho),
            vec![
                SubsystemSpec::single("s1", DistributionSpec::exponential(1.0)),
                SubsystemSpec::single("s2", DistributionSpec::Uniform { lo: 3.0, hi: 9.0 }),
            ],
        ),
        QueueClass::Gg => {
            let m = 2.0 / rho;
            NetworkSpec::tandem(
                DistributionSpec::Uniform { lo: 0.5 * m, hi: 1.5 * m },
                vec![
                    SubsystemSpec::single("s1", DistributionSpec::exponential(2.0)),
                    SubsystemSpec::single("s2", DistributionSpec::bounded_normal(2.0, 0.2, 0.01)),
                ],
            )
        }
    })
}

pub const BRANCH_TO_S3: f64 = 0.4;

/// Branching parent of the second validation experiment:
/// s1 -> s2 -> {s3 40%, s4 60%} -> sink, with `rho` targeting s4.
pub fn validation2_parent(class: QueueClass, rho: f64) -> Result<NetworkSpec> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::OccupancyOutOfRange(rho));
    }
    let m = 6.0 * (1.0 - BRANCH_TO_S3) / rho;
    let exp = DistributionSpec::exponential;
    let s3_mg = DistributionSpec::bounded_normal(6.0, 2.0, 0.01);
    let s4_mg = DistributionSpec::Gamma { shape: 9.0, scale: 2.0 / 3.0 };
    let (ia, s) = match class {
        QueueClass::Mm => (exp(m), [exp(2.0), exp(2.0), exp(6.0), exp(6.0)]),
        QueueClass::Mg => (exp(m), [exp(2.0), exp(2.0), s3_mg, s4_mg]),
        QueueClass::Gg => {
            let g = DistributionSpec::Gamma { shape: 11.11, scale: 0.18 };
            (DistributionSpec::bounded_normal(m, 1.5, 0.01), [g.clone(), g, s3_mg, s4_mg])
        }
    };
    let [a, b, c, d] = s;
    Ok(NetworkSpec {
        generator: GeneratorSpec { interarrival: ia },
        subsystems: vec![
            SubsystemSpec::single("s1", a),
            SubsystemSpec::single("s2", b),
            SubsystemSpec::single("s3", c),
            SubsystemSpec::single("s4", d),
        ],
        holds: vec![],
        routing: vec![
            RoutingEdge::new(GENERATOR, "s1", 1.0),
            RoutingEdge::new("s1", "s2", 1.0),
            RoutingEdge::new("s2", "s3", BRANCH_TO_S3),
            RoutingEdge::new("s2", "s4", 1.0 - BRANCH_TO_S3),
            RoutingEdge::new("s3", SINK, 1.0),
            RoutingEdge::new("s4", SINK, 1.0),
        ],
    })
}

/// Queue class each subsystem of the second experiment is priced with.
pub fn validation2_classes(class: QueueClass) -> [QueueClass; 4] {
    match class {
        QueueClass::Mm => [QueueClass::Mm; 4],
        QueueClass::Mg => [QueueClass::Mm, QueueClass::Mm, QueueClass::Mg, QueueClass::Mg],
        QueueClass::Gg => [QueueClass::Gg; 4],
    }
}

pub fn validation2_op(scenario: u8) -> Result<SimplificationOp> {
    match scenario {
        1 => Ok(SimplificationOp::abstract_each(["s3", "s4"])),
        2 => Ok(SimplificationOp::abstract_jointly(["s2", "s3", "s4"])),
        other => Err(Error::Config(format!("scenario must be 1 or 2, got {other}"))),
    }
}

/// Fits an LOS model for every K1 member and the K2 group from one untimed
/// run of `parent`, then builds the simplified network.
pub fn build_simplified(
    parent: &NetworkSpec,
    op: &SimplificationOp,
    warmup: f64,
    run_length: f64,
    seed: u64,
    bandwidth: f64,
) -> Result<(NetworkSpec, BTreeMap<String, FittedLos>)> {
    let mut groups: Vec<Vec<String>> = op.k1.iter().map(|id| vec![id.clone()]).collect();
    if !op.k2.is_empty() {
        groups.push(op.k2.clone());
    }
    let sets = collect_los(parent, &groups, warmup, run_length, seed)?;
    let mut fitted = BTreeMap::new();
    for g in &groups {
        let key = group_key(g);
        fitted.insert(key.clone(), fit_los(&sets[&key].samples, bandwidth)?);
    }
    let spec = apply_simplification(parent, op, &fitted)?;
    Ok((spec, fitted))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub rho_target: f64,
    pub rho: BTreeMap<String, f64>,
    pub n: BTreeMap<String, f64>,
    pub n_total: f64,
    pub i_bar: f64,
    /// Mean parent runtime, seconds.
    pub t_parent: f64,
    pub t_simplified: f64,
    pub predicted: f64,
    pub actual: f64,
    pub error: f64,
    pub pe: f64,
    pub ape: f64,
    pub cv_parent: f64,
    pub cv_simplified: f64,
    pub los_models: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub experiment: String,
    pub class: QueueClass,
    pub seed: u64,
    pub rows: Vec<ValidationRow>,
    pub metrics: Option<MetricsReport>,
}

struct Timed {
    t_parent: Vec<f64>,
    t_simplified: Vec<f64>,
    parent_runs: Vec<SimulationResult>,
}

fn timed_pairs(parent: &NetworkSpec, simplified: &NetworkSpec, cfg: &ExperimentConfig) -> Result<Timed> {
    timing::remeasure(|_| {
        run_simulation(parent, &cfg.run_config(cfg.seed))?;
        let mut out = Timed { t_parent: vec![], t_simplified: vec![], parent_runs: vec![] };
        for j in 0..cfg.reps {
            let seed = cfg.seed.wrapping_add(j as u64);
            let a = run_simulation(parent, &cfg.run_config(seed))?;
            let b = run_simulation(simplified, &cfg.run_config(seed))?;
            out.t_parent.push(cfg.clock.pick(&a).unwrap_or(0.0));
            out.t_simplified.push(cfg.clock.pick(&b).unwrap_or(0.0));
            out.parent_runs.push(a);
        }
        if let Some(max) = cfg.cv_max {
            timing::check_cv(&out.t_parent, max)?;
            timing::check_cv(&out.t_simplified, max)?;
        }
        Ok(out)
    })
}

fn mean_over<F: Fn(&SimulationResult) -> f64>(runs: &[SimulationResult], f: F) -> f64 {
    runs.iter().map(f).sum::<f64>() / runs.len() as f64
}

fn observe(runs: &[SimulationResult], classes: &[(String, QueueClass)]) -> ParentObservation {
    let mut obs = ParentObservation {
        run_length: runs.first().map(|r| r.run_length),
        replications: Some(runs.len()),
        ..Default::default()
    };
    for (id, class) in classes {
        let rho = mean_over(runs, |r| r.occupancy.get(id).copied().unwrap_or(0.0));
        let n = mean_over(runs, |r| r.arrivals.get(id).copied().unwrap_or(0) as f64);
        obs.insert(id.clone(), *class, rho, n);
    }
    obs
}

fn run_validation_point(
    profile: &CalibrationProfile,
    parent: &NetworkSpec,
    op: &SimplificationOp,
    classes: &[(String, QueueClass)],
    rho_target: f64,
    cfg: &ExperimentConfig,
) -> Result<ValidationRow> {
    let pilot_len = cfg.run_length * 4.0;
    let (simplified, fitted) =
        build_simplified(parent, op, cfg.warmup, pilot_len, cfg.seed.wrapping_add(PILOT_SEED_OFFSET), cfg.kde_bandwidth)?;
    let timed = timed_pairs(parent, &simplified, cfg)?;
    let mut obs = observe(&timed.parent_runs, classes);
    if !op.k2.is_empty() {
        obs.n_sim2 = Some(obs.subsystems[&op.k2[0]].arrivals);
    }
    let report = predict_rs(profile, &obs, op)?;
    let t_parent = timing::mean(&timed.t_parent);
    let t_simplified = timing::mean(&timed.t_simplified);
    let actual = t_parent - t_simplified;
    let predicted = report.total_phi;
    let pe = if actual != 0.0 { (actual - predicted) / actual * 100.0 } else { f64::NAN };
    Ok(ValidationRow {
        rho_target,
        rho: obs.subsystems.iter().map(|(k, s)| (k.clone(), s.rho)).collect(),
        n: obs.subsystems.iter().map(|(k, s)| (k.clone(), s.arrivals)).collect(),
        n_total: mean_over(&timed.parent_runs, |r| r.total_arrivals as f64),
        i_bar: report.total_i_bar,
        t_parent,
        t_simplified,
        predicted,
        actual,
        error: actual - predicted,
        pe,
        ape: pe.abs(),
        cv_parent: timing::cv(&timed.t_parent),
        cv_simplified: timing::cv(&timed.t_simplified),
        los_models: fitted.iter().map(|(k, f)| format!("{k}: {}", f.describe())).collect::<Vec<_>>().join("; "),
    })
}

fn finish(experiment: String, class: QueueClass, cfg: &ExperimentConfig, rows: Vec<ValidationRow>) -> ValidationReport {
    let o: Vec<f64> = rows.iter().map(|r| r.actual).collect();
    let p: Vec<f64> = rows.iter().map(|r| r.predicted).collect();
    ValidationReport { experiment, class, seed: cfg.seed, metrics: metrics(&o, &p).ok(), rows }
}

/// Two-stage parents with the second stage abstracted, op = ({s2}, {}, {}).
pub fn validate1(
    profile: &CalibrationProfile,
    class: QueueClass,
    cfg: &ExperimentConfig,
    log: &mut dyn FnMut(String),
) -> Result<ValidationReport> {
    cfg.validate()?;
    profile.class(class)?;
    let op = SimplificationOp::abstract_each(["s2"]);
    let classes = vec![("s1".to_string(), class), ("s2".to_string(), class)];
    let mut rows = Vec::new();
    for rho in cfg.draws() {
        let parent = validation1_parent(class, rho)?;
        let row = run_validation_point(profile, &parent, &op, &classes, rho, cfg)?;
        log(format!("validate1 {class} rho={rho:.4} predicted={:.4} actual={:.4} ape={:.2}%", row.predicted, row.actual, row.ape));
        rows.push(row);
    }
    Ok(finish("validate1".into(), class, cfg, rows))
}

/// Branching four-subsystem parent; scenario 1 abstracts s3 and s4 each,
/// scenario 2 abstracts s2..s4 jointly.
pub fn validate2(
    profile: &CalibrationProfile,
    class: QueueClass,
    scenario: u8,
    cfg: &ExperimentConfig,
    log: &mut dyn FnMut(String),
) -> Result<ValidationReport> {
    cfg.validate()?;
    let op = validation2_op(scenario)?;
    let cls = validation2_classes(class);
    for c in cls {
        profile.class(c)?;
    }
    let classes: Vec<(String, QueueClass)> = (1..=4).map(|i| format!("s{i}")).zip(cls).collect();
    let mut rows = Vec::new();
    for rho in cfg.draws() {
        let parent = validation2_parent(class, rho)?;
        let row = run_validation_point(profile, &parent, &op, &classes, rho, cfg)?;
        log(format!(
            "validate2 {class} scenario {scenario} rho={rho:.4} predicted={:.4} actual={:.4} ape={:.2}%",
            row.predicted, row.actual, row.ape
        ));
        rows.push(row);
    }
    Ok(finish(format!("validate2-scenario{scenario}"), class, cfg, rows))
}

/// First line of every CSV this module writes.
pub fn schema_line(kind: &str, seed: u64, profile: Option<&CalibrationProfile>) -> String {
    let fp = profile.map(|p| format!("{}@{}", p.fingerprint.hostname, p.fingerprint.timestamp)).unwrap_or_else(|| "none".into());
    format!("# schema={kind}/{CSV_SCHEMA_VERSION} seed={seed} profile={fp}\n")
}

/// Timing columns (t_*, actual, error, pe, ape, cv_*) vary between reruns;
/// every other column is a function of the seed.
pub fn write_validation_csv<W: Write>(report: &ValidationReport, profile: Option<&CalibrationProfile>, mut out: W) -> Result<()> {
    out.write_all(schema_line("validation", report.seed, profile).as_bytes())?;
    let ids: Vec<String> = report.rows.first().map(|r| r.rho.keys().cloned().collect()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["rho_target".to_string()];
    header.extend(ids.iter().map(|i| format!("rho_{i}")));
    header.extend(ids.iter().map(|i| format!("n_{i}")));
    header.extend(
        ["n_total", "i_bar", "t_parent", "t_simplified", "predicted_rs", "actual_rs", "error", "pe", "ape", "cv_parent", "cv_simplified", "los_models"]
            .map(String::from),
    );
    w.write_record(&header)?;
    for r in &report.rows {
        let mut rec = vec![r.rho_target.to_string()];
        rec.extend(ids.iter().map(|i| r.rho.get(i).copied().unwrap_or(f64::NAN).to_string()));
        rec.extend(ids.iter().map(|i| r.n.get(i).copied().unwrap_or(f64::NAN).to_string()));
        rec.extend(
            [r.n_total, r.i_bar, r.t_parent, r.t_simplified, r.predicted, r.actual, r.error, r.pe, r.ape, r.cv_parent, r.cv_simplified]
                .map(|v| v.to_string()),
        );
        rec.push(r.los_models.clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_csv<W: Write>(report: &ValidationReport, mut out: W) -> Result<()> {
    out.write_all(schema_line("metrics", report.seed, None).as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["experiment", "class", "n", "mape", "mpe", "rmse", "rmse_root_sum", "r_squared"])?;
    let m = report.metrics;
    let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    w.write_record([
        report.experiment.clone(),
        report.class.to_string(),
        report.rows.len().to_string(),
        f(m.map(|m| m.mape)),
        f(m.map(|m| m.mpe)),
        f(m.map(|m| m.rmse)),
        f(m.map(|m| m.rmse_root_sum)),
        f(m.map(|m| m.r_squared)),
    ])?;
    w.flush()?;
    Ok(())
}

pub const DEFAULT_SERVER_COUNTS: [u32; 6] = [25, 50, 100, 200, 500, 1000];
pub const SCALING_RHO: f64 = 0.7;

/// Single-stage n-server system at occupancy `rho` with one arrival per minute
/// on average; service means grow with n.
pub fn scaling_spec(class: QueueClass, n_servers: u32, rho: f64) -> Result<NetworkSpec> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::OccupancyOutOfRange(rho));
    }
    let mean = n_servers as f64 * rho;
    let service = match class {
        QueueClass::Mm => DistributionSpec::exponential(mean),
        QueueClass::Mg => DistributionSpec::bounded_normal(mean, 0.1 * mean, 0.01),
        QueueClass::Gg => return Err(Error::Config("the scaling study covers mm and mg only".into())),
    };
    Ok(NetworkSpec::tandem(
        DistributionSpec::exponential(1.0),
        vec![SubsystemSpec { n_servers, ..SubsystemSpec::single("s1", service) }],
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRep {
    pub n_servers: u32,
    pub rep: usize,
    pub seed: u64,
    pub runtime: f64,
    pub wall: f64,
    pub occupancy: f64,
    pub arrivals: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSummary {
    pub n_servers: u32,
    pub mean_runtime: f64,
    pub sd_runtime: f64,
    pub reps: usize,
}

/// Replications cycle through the server counts so drift in machine speed
/// spreads evenly across them.
pub fn scaling_experiment(
    class: QueueClass,
    server_counts: &[u32],
    cfg: &ExperimentConfig,
    log: &mut dyn FnMut(String),
) -> Result<(Vec<ScalingRep>, Vec<ScalingSummary>)> {
    let specs: Vec<NetworkSpec> = server_counts.iter().map(|&n| scaling_spec(class, n, SCALING_RHO)).collect::<Result<_>>()?;
    let mut reps = Vec::new();
    for j in 0..cfg.reps {
        let seed = cfg.seed.wrapping_add(j as u64);
        for (spec, &n) in specs.iter().zip(server_counts) {
            let res = run_simulation(spec, &cfg.run_config(seed))?;
            reps.push(ScalingRep {
                n_servers: n,
                rep: j,
                seed,
                runtime: cfg.clock.pick(&res).unwrap_or(0.0),
                wall: res.wall_runtime.unwrap_or(0.0),
                occupancy: res.occupancy["s1"],
                arrivals: res.total_arrivals,
            });
        }
        log(format!("scaling {class} replication {}/{}", j + 1, cfg.reps));
    }
    let mut summary = Vec::new();
    for &n in server_counts {
        let ts: Vec<f64> = reps.iter().filter(|r| r.n_servers == n).map(|r| r.runtime).collect();
        if let Some(max) = cfg.cv_max {
            timing::check_cv(&ts, max)?;
        }
        summary.push(ScalingSummary { n_servers: n, mean_runtime: timing::mean(&ts), sd_runtime: timing::sample_sd(&ts), reps: ts.len() });
    }
    Ok((reps, summary))
}

pub fn write_scaling_csv<W: Write>(reps: &[ScalingRep], summary: &[ScalingSummary], seed: u64, mut reps_out: W, mut summary_out: W) -> Result<()> {
    reps_out.write_all(schema_line("scaling_reps", seed, None).as_bytes())?;
    let mut w = csv::Writer::from_writer(reps_out);
    w.write_record(["n_servers", "rep", "seed", "runtime", "wall", "occupancy", "arrivals"])?;
    for r in reps {
        w.write_record([
            r.n_servers.to_string(),
            r.rep.to_string(),
            r.seed.to_string(),
            r.runtime.to_string(),
            r.wall.to_string(),
            r.occupancy.to_string(),
            r.arrivals.to_string(),
        ])?;
    }
    w.flush()?;
    summary_out.write_all(schema_line("scaling_summary", seed, None).as_bytes())?;
    let mut w = csv::Writer::from_writer(summary_out);
    w.write_record(["n_servers", "mean_runtime", "sd_runtime", "reps"])?;
    for s in summary {
        w.write_record([s.n_servers.to_string(), s.mean_runtime.to_string(), s.sd_runtime.to_string(), s.reps.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaitRow {
    pub class: QueueClass,
    pub rho: f64,
    /// Mean queue wait at the second stage, minutes.
    pub mean_wait: f64,
    /// Measured second-stage occupancy.
    pub occupancy: f64,
}

/// Mean second-stage queue wait of the 2s archetype, averaged over `reps` untimed runs.
pub fn waiting_curve(classes: &[QueueClass], rhos: &[f64], reps: usize, warmup: f64, run_length: f64, seed: u64) -> Result<Vec<WaitRow>> {
    let mut rows = Vec::new();
    for &class in classes {
        for &rho in rhos {
            if !(rho > 0.0 && rho <= crate::calibration::GRID_MAX + 1e-9) {
                return Err(Error::OccupancyOutOfRange(rho));
            }
            let spec = build_archetype(ArchetypeKind::TwoStage, class, rho)?;
            let (mut w, mut o) = (0.0, 0.0);
            for j in 0..reps.max(1) {
                let res = run_simulation(&spec, &RunConfig::new(warmup, run_length, seed.wrapping_add(j as u64)))?;
                w += res.mean_queue_wait["s2"];
                o += res.occupancy["s2"];
            }
            let k = reps.max(1) as f64;
            rows.push(WaitRow { class, rho, mean_wait: w / k, occupancy: o / k });
        }
    }
    Ok(rows)
}

pub fn write_wait_csv<W: Write>(rows: &[WaitRow], seed: u64, mut out: W) -> Result<()> {
    out.write_all(schema_line("waitcurve", seed, None).as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["class", "rho", "mean_wait", "occupancy"])?;
    for r in rows {
        w.write_record([r.class.to_string(), r.rho.to_string(), r.mean_wait.to_string(), r.occupancy.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_sorted_in_range_and_seeded() {
        let cfg = ExperimentConfig { n_draws: 20, seed: 5, ..Default::default() };
        let a = cfg.draws();
        assert_eq!(a.len(), 20);
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        assert!(a.iter().all(|&r| (0.2..=0.93).contains(&r)));
        assert_eq!(a, cfg.draws());
        assert_ne!(a, ExperimentConfig { seed: 6, ..cfg }.draws());
    }

    #[test]
    fn validation2_occupancies_follow_split() {
        let spec = validation2_parent(QueueClass::Mg, 0.6).unwrap();
        spec.validate().unwrap();
        let res = run_simulation(&spec, &RunConfig::new(5.0 * 1440.0, 60.0 * 1440.0, 3)).unwrap();
        assert!((res.occupancy["s4"] - 0.6).abs() < 0.03, "{:?}", res.occupancy);
        assert!((res.occupancy["s3"] - 0.4).abs() < 0.03);
        assert!((res.occupancy["s1"] - 0.6 / 1.8).abs() < 0.03);
        let ratio = res.arrivals["s4"] as f64 / res.arrivals["s3"] as f64;
        assert!((ratio - 1.5).abs() < 0.05);
    }

    #[test]
    fn validation_parents_hit_target() {
        for class in QueueClass::ALL {
            let spec = validation1_parent(class, 0.7).unwrap();
            let res = run_simulation(&spec, &RunConfig::new(5.0 * 1440.0, 60.0 * 1440.0, 4)).unwrap();
            assert!((res.occupancy["s2"] - 0.7).abs() < 0.03, "{class}: {:?}", res.occupancy);
        }
    }

    #[test]
    fn scaling_spec_shape() {
        let s = scaling_spec(QueueClass::Mm, 50, 0.7).unwrap();
        assert_eq!(s.subsystems[0].n_servers, 50);
        assert_eq!(s.subsystems[0].service, DistributionSpec::exponential(35.0));
        assert!(scaling_spec(QueueClass::Gg, 50, 0.7).is_err());
        let res = run_simulation(&s, &RunConfig::new(5.0 * 1440.0, 20.0 * 1440.0, 1)).unwrap();
        assert!((res.occupancy["s1"] - 0.7).abs() < 0.03);
    }

    #[test]
    fn wait_curve_mm_matches_formula() {
        let rows = waiting_curve(&[QueueClass::Mm], &[0.05, 0.8], 5, 10.0 * 1440.0, 100.0 * 1440.0, 2).unwrap();
        assert!(rows[0].mean_wait < 0.1);
        assert!((rows[1].mean_wait - 4.0).abs() / 4.0 < 0.05, "{}", rows[1].mean_wait);
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_wait_csv(&rows, 2, &mut a).unwrap();
        write_wait_csv(&waiting_curve(&[QueueClass::Mm], &[0.05, 0.8], 5, 10.0 * 1440.0, 100.0 * 1440.0, 2).unwrap(), 2, &mut b).unwrap();
        assert_eq!(a, b);
        assert!(String::from_utf8(a).unwrap().starts_with("# schema=waitcurve/1 seed=2"));
    }

    #[test]
    fn scenario_ops() {
        assert_eq!(validation2_op(1).unwrap().k1, vec!["s3", "s4"]);
        assert_eq!(validation2_op(2).unwrap().k2, vec!["s2", "s3", "s4"]);
        assert!(validation2_op(3).is_err());
    }
}
