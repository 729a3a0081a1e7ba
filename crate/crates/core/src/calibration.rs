//! Stage 1 (theta vs occupancy) and Stage 2 (runtime savings vs instruction
//! reduction) calibration, and the persistent profile.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{build_archetype, ArchetypeKind, QueueClass};
use crate::regression::{fit_polynomial, RegressionModel, XUnits, YUnits};
use crate::sim::{run_simulation, RunConfig, DEFAULT_RUN_LENGTH, DEFAULT_WARMUP};
use crate::simplify::{apply_simplification, collect_los, fit_los, FittedLos, SimplificationOp, DEFAULT_KDE_BANDWIDTH};
use crate::timing::{self, TimingClock};
use crate::trace_metrics::{theta_replicated, theta_two_stage_with_ss, ThetaConfig, DEFAULT_N_SAMPLE, DEFAULT_TRIM};

pub const SCHEMA_VERSION: u32 = 1;
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Instruction reductions enter the runtime model in units of 10^4.
pub const INSTRUCTION_UNIT: f64 = 1e4;
pub const GRID_MIN: f64 = 0.20;
pub const GRID_MAX: f64 = 0.93;
/// G/G theta models are fitted on occupancies above this level only.
pub const GG_FLAT_UNTIL: f64 = 0.50;
pub const MIN_RS_POINTS: usize = 10;
/// Instructions saved per arrival by an LOS hold relative to its own cost.
pub const HOLD_INSTRUCTIONS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Self { lo: GRID_MIN, hi: GRID_MAX, step: 0.01 }
    }
}

impl Grid {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        let g = Self { lo, hi, step };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let eps = 1e-9;
        if !(self.step > 0.0) || self.lo > self.hi || self.lo < GRID_MIN - eps || self.hi > GRID_MAX + eps {
            return Err(Error::Config(format!(
                "grid [{}, {}] step {} must lie within [{GRID_MIN}, {GRID_MAX}] with a positive step",
                self.lo, self.hi, self.step
            )));
        }
        Ok(())
    }

    /// Grid points rounded to 1e-9 so that 0.2 + 3*0.01 prints as 0.23.
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| ((self.lo + i as f64 * self.step) * 1e9).round() / 1e9).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub grid: Grid,
    /// Traced replications per grid point (Stage 1).
    pub r_theta: usize,
    /// Timed replication pairs per grid point (Stage 2).
    pub r_timing: usize,
    pub seed: u64,
    pub warmup: f64,
    pub run_length: f64,
    pub n_sample: usize,
    pub trim: usize,
    pub instruction_cost: u32,
    pub clock: TimingClock,
    pub cv_max: f64,
    pub kde_bandwidth: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            grid: Grid::default(),
            r_theta: 10,
            r_timing: 10,
            seed: 1,
            warmup: DEFAULT_WARMUP,
            run_length: DEFAULT_RUN_LENGTH,
            n_sample: DEFAULT_N_SAMPLE,
            trim: DEFAULT_TRIM,
            instruction_cost: crate::kernel::DEFAULT_INSTRUCTION_COST,
            clock: TimingClock::default(),
            cv_max: timing::cv_max_from_env(),
            kde_bandwidth: DEFAULT_KDE_BANDWIDTH,
        }
    }
}

impl CalibrationConfig {
    pub fn theta_config(&self) -> ThetaConfig {
        ThetaConfig {
            r: self.r_theta,
            n_sample: self.n_sample,
            trim: self.trim,
            warmup: self.warmup,
            run_length: self.run_length,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Row {
    pub rho: f64,
    pub theta_2s: f64,
    pub theta_1s: f64,
    pub theta_ss: f64,
    pub theta_ms: f64,
    pub sd_2s: f64,
    pub sd_1s: f64,
}

/// Theta columns over the grid. theta_ss counts only second-stage
/// instructions of the 2s trace; theta_ms is theta_1s plus the hold's two.
pub fn collect_stage1(class: QueueClass, cfg: &CalibrationConfig, log: &mut dyn FnMut(String)) -> Result<Vec<Stage1Row>> {
    cfg.grid.validate()?;
    let tc = cfg.theta_config();
    let mut rows = Vec::new();
    for rho in cfg.grid.points() {
        let (t2, ss) = theta_two_stage_with_ss(class, rho, &tc)?;
        let t1 = theta_replicated(ArchetypeKind::OneStage, class, rho, &tc)?;
        log(format!("stage1 {class} rho={rho:.2} theta_2s={:.3} theta_1s={:.3} theta_ss={:.3}", t2.theta, t1.theta, ss.theta));
        rows.push(Stage1Row {
            rho,
            theta_2s: t2.theta,
            theta_1s: t1.theta,
            theta_ss: ss.theta,
            theta_ms: t1.theta + HOLD_INSTRUCTIONS,
            sd_2s: t2.sd,
            sd_1s: t1.sd,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaModels {
    pub theta_2s: RegressionModel,
    pub theta_1s: RegressionModel,
    pub theta_ss: RegressionModel,
    pub theta_ms: RegressionModel,
}

/// Polynomial degrees of (2s, 1s, ss) theta models and of the runtime model.
pub fn degrees(class: QueueClass) -> ([usize; 3], usize) {
    match class {
        QueueClass::Mm => ([1, 1, 1], 1),
        QueueClass::Mg => ([2, 1, 2], 2),
        QueueClass::Gg => ([2, 2, 2], 1),
    }
}

pub fn fit_theta_models(rows: &[Stage1Row], class: QueueClass) -> Result<ThetaModels> {
    let used: Vec<&Stage1Row> = match class {
        QueueClass::Gg => rows.iter().filter(|r| r.rho > GG_FLAT_UNTIL + 1e-9).collect(),
        _ => rows.iter().collect(),
    };
    let xs: Vec<f64> = used.iter().map(|r| r.rho).collect();
    let ([d2, d1, dss], _) = degrees(class);
    let fit = |ys: Vec<f64>, d: usize| -> Result<RegressionModel> {
        let mut m = fit_polynomial(&xs, &ys, d, XUnits::OccupancyFraction, YUnits::InstructionsPerArrival)?;
        if class == QueueClass::Gg {
            m.fit_domain[0] = GG_FLAT_UNTIL;
        }
        Ok(m)
    };
    let theta_2s = fit(used.iter().map(|r| r.theta_2s).collect(), d2)?;
    let theta_1s = fit(used.iter().map(|r| r.theta_1s).collect(), d1)?;
    let theta_ss = fit(used.iter().map(|r| r.theta_ss).collect(), dss)?;
    let theta_ms = theta_1s.shifted(HOLD_INSTRUCTIONS);
    Ok(ThetaModels { theta_2s, theta_1s, theta_ss, theta_ms })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Row {
    pub rho: f64,
    pub n_2s: f64,
    pub n_ms: f64,
    /// Seconds on the selected clock.
    pub t_2s: f64,
    pub t_ms: f64,
    pub cv_2s: f64,
    pub cv_ms: f64,
    pub wall_2s: f64,
    pub wall_ms: f64,
    /// Raw instruction counts.
    pub i_2s: f64,
    pub i_ms: f64,
    pub i_bar: f64,
    pub phi: f64,
    pub los_model: String,
}

/// The ms counterpart of the 2s archetype at `rho`, with the second stage
/// replaced by an LOS fitted to a pilot run of the parent.
pub fn simplified_two_stage(class: QueueClass, rho: f64, cfg: &CalibrationConfig, seed: u64) -> Result<(crate::network::NetworkSpec, FittedLos)> {
    let parent = build_archetype(ArchetypeKind::TwoStage, class, rho)?;
    let pilot_len = cfg.run_length.max(DEFAULT_RUN_LENGTH) * 4.0;
    let sets = collect_los(&parent, &[vec!["s2".to_string()]], cfg.warmup, pilot_len, seed)?;
    let fitted = fit_los(&sets["s2"].samples, cfg.kde_bandwidth)?;
    let los = BTreeMap::from([("s2".to_string(), fitted.clone())]);
    Ok((apply_simplification(&parent, &SimplificationOp::abstract_each(["s2"]), &los)?, fitted))
}

/// Timed, untraced 2s and ms replications at each grid point. Pairs share a
/// seed and alternate 2s/ms; one discarded run precedes them. A set that
/// fails the CV guard is measured again, up to [`timing::TIMING_ATTEMPTS`] times.
pub fn collect_stage2(
    class: QueueClass,
    models: &ThetaModels,
    cfg: &CalibrationConfig,
    log: &mut dyn FnMut(String),
) -> Result<Vec<Stage2Row>> {
    cfg.grid.validate()?;
    let mut rows = Vec::new();
    for rho in cfg.grid.points() {
        let parent = build_archetype(ArchetypeKind::TwoStage, class, rho)?;
        let pilot_seed = cfg.seed.wrapping_add(1 << 20);
        let (ms, fitted) = simplified_two_stage(class, rho, cfg, pilot_seed)?;
        let base = |seed: u64| RunConfig::new(cfg.warmup, cfg.run_length, seed).with_cost(cfg.instruction_cost).timed();
        let measure = |attempt: usize| -> Result<_> {
            if attempt > 0 {
                log(format!("stage2 {class} rho={rho:.2}: unstable timing, remeasuring (attempt {})", attempt + 1));
            }
            run_simulation(&parent, &base(cfg.seed))?;
            let (mut t2, mut tm, mut w2, mut wm, mut n2, mut nm) = (vec![], vec![], vec![], vec![], vec![], vec![]);
            for j in 0..cfg.r_timing {
                let seed = cfg.seed.wrapping_add(j as u64);
                let a = run_simulation(&parent, &base(seed))?;
                let b = run_simulation(&ms, &base(seed))?;
                t2.push(cfg.clock.pick(&a).unwrap_or(0.0));
                tm.push(cfg.clock.pick(&b).unwrap_or(0.0));
                w2.push(a.wall_runtime.unwrap_or(0.0));
                wm.push(b.wall_runtime.unwrap_or(0.0));
                n2.push(a.total_arrivals as f64);
                nm.push(b.total_arrivals as f64);
            }
            let cv_2s = timing::check_cv(&t2, cfg.cv_max)?;
            let cv_ms = timing::check_cv(&tm, cfg.cv_max)?;
            Ok((t2, tm, w2, wm, n2, nm, cv_2s, cv_ms))
        };
        let (t2, tm, w2, wm, n2, nm, cv_2s, cv_ms) = timing::remeasure(measure)?;
        let (n_2s, n_ms) = (timing::mean(&n2), timing::mean(&nm));
        let i_2s = models.theta_2s.eval(rho) * n_2s;
        let i_ms = models.theta_ms.eval(rho) * n_ms;
        let row = Stage2Row {
            rho,
            n_2s,
            n_ms,
            t_2s: timing::mean(&t2),
            t_ms: timing::mean(&tm),
            cv_2s,
            cv_ms,
            wall_2s: timing::mean(&w2),
            wall_ms: timing::mean(&wm),
            i_2s,
            i_ms,
            i_bar: i_2s - i_ms,
            phi: timing::mean(&t2) - timing::mean(&tm),
            los_model: fitted.describe(),
        };
        log(format!(
            "stage2 {class} rho={rho:.2} I_bar={:.0} phi={:.4}s (t_2s={:.4}, t_ms={:.4}, cv {:.3}/{:.3})",
            row.i_bar, row.phi, row.t_2s, row.t_ms, cv_2s, cv_ms
        ));
        rows.push(row);
    }
    Ok(rows)
}

/// phi = g(I_bar / 10^4).
pub fn fit_rs_model(rows: &[Stage2Row], class: QueueClass) -> Result<RegressionModel> {
    if rows.len() < MIN_RS_POINTS {
        return Err(Error::TooFewPoints { needed: MIN_RS_POINTS, got: rows.len() });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.i_bar / INSTRUCTION_UNIT).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.phi).collect();
    fit_polynomial(&xs, &ys, degrees(class).1, XUnits::InstructionsE4, YUnits::Seconds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub theta_2s: RegressionModel,
    pub theta_1s: RegressionModel,
    pub theta_ss: RegressionModel,
    pub theta_ms: RegressionModel,
    pub rs_model: RegressionModel,
}

impl ClassProfile {
    pub fn new(models: ThetaModels, rs_model: RegressionModel) -> Self {
        Self { theta_2s: models.theta_2s, theta_1s: models.theta_1s, theta_ss: models.theta_ss, theta_ms: models.theta_ms, rs_model }
    }

    pub fn models(&self) -> [(&'static str, &RegressionModel); 5] {
        [
            ("theta_2s", &self.theta_2s),
            ("theta_1s", &self.theta_1s),
            ("theta_ss", &self.theta_ss),
            ("theta_ms", &self.theta_ms),
            ("rs", &self.rs_model),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub hostname: String,
    pub timestamp: String,
    pub engine_version: String,
}

impl Fingerprint {
    pub fn current() -> Self {
        Self {
            hostname: hostname(),
            timestamp: humantime::format_rfc3339_seconds(std::time::SystemTime::now()).to_string(),
            engine_version: ENGINE_VERSION.to_string(),
        }
    }
}

#[cfg(unix)]
fn hostname() -> String {
    let mut buf = [0u8; 256];
    // SAFETY: the buffer is writable for its full length.
    let rc = unsafe { libc::gethostname(buf.as_mut_ptr().cast(), buf.len()) };
    if rc != 0 {
        return "unknown".into();
    }
    let end = buf.iter().position(|&b| b == 0).unwrap_or(buf.len());
    String::from_utf8_lossy(&buf[..end]).into_owned()
}

#[cfg(not(unix))]
fn hostname() -> String {
    std::env::var("COMPUTERNAME").unwrap_or_else(|_| "unknown".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub schema_version: u32,
    pub fingerprint: Fingerprint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<CalibrationConfig>,
    pub classes: BTreeMap<QueueClass, ClassProfile>,
}

impl CalibrationProfile {
    pub fn new(config: Option<CalibrationConfig>) -> Self {
        Self { schema_version: SCHEMA_VERSION, fingerprint: Fingerprint::current(), config, classes: BTreeMap::new() }
    }

    pub fn class(&self, class: QueueClass) -> Result<&ClassProfile> {
        self.classes.get(&class).ok_or(Error::MissingClass(class))
    }

    /// theta_ms must equal theta_1s with the constant raised by two.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::ProfileSchema(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        for (class, p) in &self.classes {
            let a = &p.theta_ms.coeffs;
            let b = &p.theta_1s.coeffs;
            let ok = a.len() == b.len()
                && a.iter().zip(b).enumerate().all(|(i, (x, y))| {
                    let want = if i == 0 { y + HOLD_INSTRUCTIONS } else { *y };
                    (x - want).abs() <= 1e-9 * (1.0 + want.abs())
                });
            if !ok {
                return Err(Error::ProfileCorrupt(format!("{class}: theta_ms is not theta_1s + {HOLD_INSTRUCTIONS}")));
            }
            for (name, m) in p.models() {
                if m.coeffs.is_empty() || m.coeffs.len() != m.degree + 1 || m.coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(Error::ProfileCorrupt(format!("{class}.{name}: malformed coefficients")));
                }
            }
            if p.rs_model.x_units != XUnits::InstructionsE4 || p.rs_model.y_units != YUnits::Seconds {
                return Err(Error::ProfileCorrupt(format!("{class}.rs: wrong units")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(s).map_err(|e| Error::ProfileSchema(e.to_string()))?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => return Err(Error::ProfileSchema(format!("schema_version {v} is not supported"))),
            None => return Err(Error::ProfileSchema("missing field `schema_version`".into())),
        }
        let profile: Self = serde_json::from_value(value).map_err(|e| Error::ProfileSchema(e.to_string()))?;
        profile.validate()?;
        Ok(profile)
    }
}

pub fn save_profile(profile: &CalibrationProfile, path: &Path) -> Result<()> {
    profile.validate()?;
    std::fs::write(path, profile.to_json()?)?;
    Ok(())
}

pub fn load_profile(path: &Path) -> Result<CalibrationProfile> {
    CalibrationProfile::from_json(&std::fs::read_to_string(path)?)
}

/// Everything measured for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCalibration {
    pub class: QueueClass,
    pub stage1: Vec<Stage1Row>,
    pub stage2: Vec<Stage2Row>,
    pub profile: ClassProfile,
}

pub fn calibrate_class(class: QueueClass, cfg: &CalibrationConfig, log: &mut dyn FnMut(String)) -> Result<ClassCalibration> {
    let stage1 = collect_stage1(class, cfg, log)?;
    let models = fit_theta_models(&stage1, class)?;
    let stage2 = collect_stage2(class, &models, cfg, log)?;
    let rs = fit_rs_model(&stage2, class)?;
    Ok(ClassCalibration { class, stage1, stage2, profile: ClassProfile::new(models, rs) })
}

/// One CSV row per grid point with both stages' columns.
pub fn write_dataset_csv<W: Write>(stage1: &[Stage1Row], stage2: &[Stage2Row], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "rho", "theta_2s", "theta_1s", "theta_ss", "theta_ms", "n_2s", "n_ms", "t_2s", "t_ms", "i_bar", "phi", "cv_2s",
        "cv_ms", "wall_2s", "wall_ms", "los_model",
    ])?;
    for s1 in stage1 {
        let s2 = stage2.iter().find(|r| (r.rho - s1.rho).abs() < 1e-9);
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            s1.rho.to_string(),
            s1.theta_2s.to_string(),
            s1.theta_1s.to_string(),
            s1.theta_ss.to_string(),
            s1.theta_ms.to_string(),
            f(s2.map(|r| r.n_2s)),
            f(s2.map(|r| r.n_ms)),
            f(s2.map(|r| r.t_2s)),
            f(s2.map(|r| r.t_ms)),
            f(s2.map(|r| r.i_bar)),
            f(s2.map(|r| r.phi)),
            f(s2.map(|r| r.cv_2s)),
            f(s2.map(|r| r.cv_ms)),
            f(s2.map(|r| r.wall_2s)),
            f(s2.map(|r| r.wall_ms)),
            s2.map(|r| r.los_model.clone()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(c0: f64, c1: f64) -> RegressionModel {
        RegressionModel::from_coeffs(vec![c0, c1], [0.2, 0.93], XUnits::OccupancyFraction, YUnits::InstructionsPerArrival)
    }

    fn toy_profile() -> CalibrationProfile {
        let mut p = CalibrationProfile::new(None);
        let models = ThetaModels { theta_2s: line(33.02, 1.97), theta_1s: line(13.0, 0.99), theta_ss: line(9.02, 0.97), theta_ms: line(15.0, 0.99) };
        let rs = RegressionModel::from_coeffs(vec![-0.05, 0.04], [0.0, 100.0], XUnits::InstructionsE4, YUnits::Seconds);
        p.classes.insert(QueueClass::Mm, ClassProfile::new(models, rs));
        p
    }

    #[test]
    fn grid_points() {
        let g = Grid::default();
        let pts = g.points();
        assert_eq!(pts.len(), 74);
        assert_eq!(pts[0], 0.2);
        assert_eq!(pts[73], 0.93);
        assert_eq!(Grid::new(0.2, 0.9, 0.05).unwrap().points().len(), 15);
        assert!(Grid::new(0.1, 0.9, 0.05).is_err());
        assert!(Grid::new(0.2, 0.95, 0.05).is_err());
    }

    #[test]
    fn profile_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let p = toy_profile();
        save_profile(&p, &path).unwrap();
        let q = load_profile(&path).unwrap();
        assert_eq!(q.to_json().unwrap(), p.to_json().unwrap());
        assert_eq!(q.fingerprint, p.fingerprint);
        assert!(matches!(q.class(QueueClass::Gg), Err(Error::MissingClass(QueueClass::Gg))));
    }

    #[test]
    fn broken_identity_is_corrupt() {
        let mut p = toy_profile();
        p.classes.get_mut(&QueueClass::Mm).unwrap().theta_ms = line(15.5, 0.99);
        let json = serde_json::to_string(&p).unwrap();
        assert!(matches!(CalibrationProfile::from_json(&json), Err(Error::ProfileCorrupt(_))));
    }

    #[test]
    fn schema_errors() {
        assert!(matches!(CalibrationProfile::from_json("{}"), Err(Error::ProfileSchema(_))));
        assert!(matches!(CalibrationProfile::from_json("not json"), Err(Error::ProfileSchema(_))));
        let mut v: serde_json::Value = serde_json::to_value(toy_profile()).unwrap();
        v["classes"]["mm"].as_object_mut().unwrap().remove("rs_model");
        match CalibrationProfile::from_json(&v.to_string()) {
            Err(Error::ProfileSchema(msg)) => assert!(msg.contains("rs_model"), "{msg}"),
            other => panic!("{other:?}"),
        }
        v["schema_version"] = 99.into();
        assert!(matches!(CalibrationProfile::from_json(&v.to_string()), Err(Error::ProfileSchema(_))));
    }

    #[test]
    fn theta_fits_follow_class_forms() {
        let rows: Vec<Stage1Row> = Grid::default()
            .points()
            .into_iter()
            .map(|x| Stage1Row {
                rho: x,
                theta_2s: 5.90 * x * x - 4.85 * x + 22.96,
                theta_1s: 3.61 * x * x - 3.40 * x + 13.79,
                theta_ss: 2.48 * x * x - 1.76 * x + 9.29,
                theta_ms: 3.61 * x * x - 3.40 * x + 15.79,
                sd_2s: 0.0,
                sd_1s: 0.0,
            })
            .collect();
        let m = fit_theta_models(&rows, QueueClass::Gg).unwrap();
        assert_eq!(m.theta_2s.fit_domain, [0.5, 0.93]);
        assert!((m.theta_2s.coeffs[2] - 5.90).abs() < 1e-8);
        assert!((m.theta_ms.intercept() - 15.79).abs() < 1e-8);
        // Below the fitted range the model holds its value at 0.50.
        assert_eq!(m.theta_2s.eval(0.3), m.theta_2s.eval(0.5));
        let mm = fit_theta_models(&rows, QueueClass::Mm).unwrap();
        assert_eq!(mm.theta_2s.degree, 1);
        assert_eq!(mm.theta_2s.fit_domain, [0.2, 0.93]);
    }

    #[test]
    fn rs_fit_needs_ten_points() {
        let row = |x: f64| Stage2Row {
            rho: 0.5,
            n_2s: 0.0,
            n_ms: 0.0,
            t_2s: 0.0,
            t_ms: 0.0,
            cv_2s: 0.0,
            cv_ms: 0.0,
            wall_2s: 0.0,
            wall_ms: 0.0,
            i_2s: 0.0,
            i_ms: 0.0,
            i_bar: x * 1e4,
            phi: 0.04 * x - 0.05,
            los_model: String::new(),
        };
        let rows: Vec<Stage2Row> = (0..9).map(|i| row(10.0 + i as f64)).collect();
        assert!(matches!(fit_rs_model(&rows, QueueClass::Mm), Err(Error::TooFewPoints { needed: 10, got: 9 })));
        let rows: Vec<Stage2Row> = (0..12).map(|i| row(10.0 + i as f64)).collect();
        let m = fit_rs_model(&rows, QueueClass::Mm).unwrap();
        assert!((m.coeffs[1] - 0.04).abs() < 1e-10 && (m.coeffs[0] + 0.05).abs() < 1e-10);
        assert_eq!(m.x_units, XUnits::InstructionsE4);
    }

    #[test]
    fn small_calibration_end_to_end() {
        let cfg = CalibrationConfig {
            grid: Grid::new(0.3, 0.85, 0.05).unwrap(),
            r_theta: 2,
            r_timing: 2,
            warmup: 2.0 * 1440.0,
            run_length: 2.0 * 1440.0,
            cv_max: f64::INFINITY,
            ..Default::default()
        };
        let cal = calibrate_class(QueueClass::Mm, &cfg, &mut |_| {}).unwrap();
        assert_eq!(cal.stage1.len(), 12);
        assert!(cal.stage1.iter().all(|r| r.theta_ms == r.theta_1s + 2.0));
        assert!(cal.stage2.iter().all(|r| r.i_bar > 0.0));
        let mut p = CalibrationProfile::new(Some(cfg));
        p.classes.insert(QueueClass::Mm, cal.profile);
        p.validate().unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&cal.stage1, &cal.stage2, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 13);
    }
}
