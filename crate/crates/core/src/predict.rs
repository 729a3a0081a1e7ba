//! Runtime-savings prediction for a simplification operation, and error metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationProfile, Fingerprint, HOLD_INSTRUCTIONS, INSTRUCTION_UNIT};
use crate::error::{Error, Result};
use crate::network::{QueueClass, SubsystemSpec};
use crate::simplify::SimplificationOp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemObservation {
    pub queue_class: QueueClass,
    pub rho: f64,
    pub arrivals: f64,
    /// Measured theta_ss; when absent it comes from the class model at `rho`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_ss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParentObservation {
    pub subsystems: BTreeMap<String, SubsystemObservation>,
    /// Arrivals to the K2 group.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_sim2: Option<f64>,
    /// Arrivals to the K3 group.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_sim3: Option<f64>,
    /// Projected occupancy of the K3 replacement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_sim: Option<f64>,
    /// Class whose theta_ss model prices the replacement; defaults to the first K3 member's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_class: Option<QueueClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
}

impl ParentObservation {
    pub fn insert(&mut self, id: impl Into<String>, queue_class: QueueClass, rho: f64, arrivals: f64) -> &mut Self {
        self.subsystems.insert(id.into(), SubsystemObservation { queue_class, rho, arrivals, theta_ss: None });
        self
    }

    /// Every arrival count multiplied by `k` (a run `k` times as long).
    pub fn scaled(&self, k: f64) -> Self {
        let mut o = self.clone();
        o.subsystems.values_mut().for_each(|s| s.arrivals *= k);
        o.n_sim2 = o.n_sim2.map(|n| n * k);
        o.n_sim3 = o.n_sim3.map(|n| n * k);
        o.run_length = o.run_length.map(|t| t * k);
        o
    }
}

/// Occupancy estimate for a K3 replacement: offered load over its capacity.
pub fn project_replacement_occupancy(n_sim3: f64, run_length: f64, replacement: &SubsystemSpec) -> f64 {
    let lambda = n_sim3 / run_length;
    lambda * replacement.service.mean() / replacement.n_servers as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "flag", rename_all = "snake_case")]
pub enum PredictionFlag {
    /// Reduction under 10^4 instructions, or a negative model value floored at zero.
    NearZeroReduction { group: u8 },
    /// Occupancy outside a theta model's fit domain; the model was clamped.
    OccupancyClamped { subsystem: String, rho: f64 },
    /// rho_sim was projected rather than supplied.
    ProjectedOccupancy { rho_sim: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassContribution {
    pub i_bar: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPrediction {
    pub group: u8,
    pub members: Vec<String>,
    pub i_bar: f64,
    pub phi: f64,
    pub by_class: BTreeMap<QueueClass, ClassContribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub groups: Vec<GroupPrediction>,
    pub total_phi: f64,
    pub total_i_bar: f64,
    pub theta_ss: BTreeMap<String, f64>,
    pub flags: Vec<PredictionFlag>,
    pub fingerprint: Fingerprint,
}

impl PredictionReport {
    pub fn group(&self, j: u8) -> &GroupPrediction {
        &self.groups[(j - 1) as usize]
    }

    pub fn summary(&self) -> String {
        let mut s = format!("predicted runtime saving: {:.4} s (instruction reduction {:.0})\n", self.total_phi, self.total_i_bar);
        for g in &self.groups {
            if !g.members.is_empty() {
                s += &format!("  K{} {:?}: I_bar={:.0} phi={:.4} s\n", g.group, g.members, g.i_bar, g.phi);
            }
        }
        for f in &self.flags {
            s += &format!("  note: {f:?}\n");
        }
        s
    }
}

fn check_rho(id: &str, rho: f64) -> Result<()> {
    if rho > 0.0 && rho < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidOperation(format!("occupancy of `{id}` is {rho}, outside (0, 1)")))
    }
}

/// Predicted runtime saving phi = phi_1 + phi_2 + phi_3 for `op` applied to
/// the observed parent.
pub fn predict_rs(profile: &CalibrationProfile, obs: &ParentObservation, op: &SimplificationOp) -> Result<PredictionReport> {
    op.validate(obs.subsystems.len())?;
    let mut flags = Vec::new();
    let mut theta_used = BTreeMap::new();

    let mut theta_of = |id: &str, flags: &mut Vec<PredictionFlag>| -> Result<(QueueClass, f64, f64)> {
        let s = obs
            .subsystems
            .get(id)
            .ok_or_else(|| Error::InvalidOperation(format!("no observation for subsystem `{id}`")))?;
        check_rho(id, s.rho)?;
        let theta = match s.theta_ss {
            Some(t) => t,
            None => {
                let e = profile.class(s.queue_class)?.theta_ss.evaluate(s.rho);
                if e.clamped {
                    flags.push(PredictionFlag::OccupancyClamped { subsystem: id.to_string(), rho: s.rho });
                }
                e.value
            }
        };
        theta_used.insert(id.to_string(), theta);
        Ok((s.queue_class, theta, s.arrivals))
    };

    let mut groups = Vec::with_capacity(3);
    for (j, members) in [(1u8, &op.k1), (2, &op.k2), (3, &op.k3)] {
        let mut by_class: BTreeMap<QueueClass, f64> = BTreeMap::new();
        for id in members.iter() {
            let (class, theta, n) = theta_of(id, &mut flags)?;
            *by_class.entry(class).or_default() += theta * n;
            if j == 1 {
                *by_class.entry(class).or_default() -= HOLD_INSTRUCTIONS * n;
            }
        }
        if j == 2 && !members.is_empty() {
            let n = obs.n_sim2.ok_or_else(|| Error::InvalidOperation("K2 is nonempty but n_sim2 is missing".into()))?;
            let entry = obs.subsystems[&members[0]].queue_class;
            *by_class.entry(entry).or_default() -= HOLD_INSTRUCTIONS * n;
        }
        if j == 3 && !members.is_empty() {
            let n = obs.n_sim3.ok_or_else(|| Error::InvalidOperation("K3 is nonempty but n_sim3 is missing".into()))?;
            let class = obs.sim_class.unwrap_or(obs.subsystems[&members[0]].queue_class);
            let rho_sim = match (obs.rho_sim, &op.replacement, obs.run_length) {
                (Some(r), _, _) => r,
                (None, Some(rep), Some(t)) => {
                    let r = project_replacement_occupancy(n, t, rep);
                    flags.push(PredictionFlag::ProjectedOccupancy { rho_sim: r });
                    r
                }
                _ => return Err(Error::InvalidOperation("K3 needs rho_sim, or run_length to project it".into())),
            };
            check_rho("replacement", rho_sim)?;
            let e = profile.class(class)?.theta_ss.evaluate(rho_sim);
            if e.clamped {
                flags.push(PredictionFlag::OccupancyClamped { subsystem: "replacement".into(), rho: rho_sim });
            }
            *by_class.entry(class).or_default() -= e.value * n;
        }

        let mut g = GroupPrediction { group: j, members: members.clone(), i_bar: 0.0, phi: 0.0, by_class: BTreeMap::new() };
        if !members.is_empty() {
            let mut near_zero = false;
            for (class, i_bar) in by_class {
                let raw = profile.class(class)?.rs_model.eval(i_bar / INSTRUCTION_UNIT);
                near_zero |= raw < 0.0;
                let phi = raw.max(0.0);
                g.i_bar += i_bar;
                g.phi += phi;
                g.by_class.insert(class, ClassContribution { i_bar, phi });
            }
            if near_zero || g.i_bar < INSTRUCTION_UNIT {
                flags.push(PredictionFlag::NearZeroReduction { group: j });
            }
        }
        groups.push(g);
    }
    Ok(PredictionReport {
        total_phi: groups.iter().map(|g| g.phi).sum(),
        total_i_bar: groups.iter().map(|g| g.i_bar).sum(),
        groups,
        theta_ss: theta_used,
        flags,
        fingerprint: profile.fingerprint.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Percent.
    pub mape: f64,
    /// Percent, sign convention observed - predicted.
    pub mpe: f64,
    /// Root mean squared error, seconds.
    pub rmse: f64,
    /// sqrt(sum of squared errors), without the 1/N.
    pub rmse_root_sum: f64,
    pub r_squared: f64,
    pub n: usize,
}

fn check_pair(o: &[f64], p: &[f64]) -> Result<()> {
    if o.len() != p.len() {
        return Err(Error::Config(format!("{} observed vs {} predicted values", o.len(), p.len())));
    }
    if o.is_empty() {
        return Err(Error::Config("no observations".into()));
    }
    Ok(())
}

fn percent_errors(o: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    check_pair(o, p)?;
    o.iter()
        .zip(p)
        .enumerate()
        .map(|(i, (o, p))| if *o == 0.0 { Err(Error::ZeroObservation(i)) } else { Ok((o - p) / o * 100.0) })
        .collect()
}

pub fn mape(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    let e = percent_errors(observed, predicted)?;
    Ok(e.iter().map(|x| x.abs()).sum::<f64>() / e.len() as f64)
}

pub fn mpe(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    let e = percent_errors(observed, predicted)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

fn sse(o: &[f64], p: &[f64]) -> f64 {
    o.iter().zip(p).map(|(o, p)| (o - p).powi(2)).sum()
}

pub fn rmse(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(observed, predicted)?;
    Ok((sse(observed, predicted) / observed.len() as f64).sqrt())
}

pub fn rmse_root_sum(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(observed, predicted)?;
    Ok(sse(observed, predicted).sqrt())
}

/// 1 - SS_res / SS_tot with the observations as ground truth.
pub fn r_squared(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(observed, predicted)?;
    if observed.len() < 2 {
        return Err(Error::DegenerateVariance);
    }
    let m = observed.iter().sum::<f64>() / observed.len() as f64;
    let ss_tot: f64 = observed.iter().map(|o| (o - m).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok(1.0 - sse(observed, predicted) / ss_tot)
}

pub fn metrics(observed: &[f64], predicted: &[f64]) -> Result<MetricsReport> {
    Ok(MetricsReport {
        mape: mape(observed, predicted)?,
        mpe: mpe(observed, predicted)?,
        rmse: rmse(observed, predicted)?,
        rmse_root_sum: rmse_root_sum(observed, predicted)?,
        r_squared: r_squared(observed, predicted)?,
        n: observed.len(),
    })
}
