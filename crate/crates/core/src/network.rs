//! Declarative queueing networks and the calibration archetypes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dist::DistributionSpec;
use crate::error::{Error, Result};

pub const GENERATOR: &str = "generator";
pub const SINK: &str = "sink";

/// Queue class of a subsystem: M/M, M/G or G/G.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueueClass {
    Mm,
    Mg,
    Gg,
}

impl QueueClass {
    pub const ALL: [QueueClass; 3] = [QueueClass::Mm, QueueClass::Mg, QueueClass::Gg];

    pub fn as_str(self) -> &'static str {
        match self {
            QueueClass::Mm => "mm",
            QueueClass::Mg => "mg",
            QueueClass::Gg => "gg",
        }
    }
}

impl fmt::Display for QueueClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueueClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mm" => Ok(QueueClass::Mm),
            "mg" => Ok(QueueClass::Mg),
            "gg" => Ok(QueueClass::Gg),
            other => Err(Error::Config(format!("unknown queue class `{other}` (expected mm, mg or gg)"))),
        }
    }
}

/// System archetypes used during calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchetypeKind {
    #[serde(rename = "2s")]
    TwoStage,
    #[serde(rename = "1s")]
    OneStage,
    #[serde(rename = "ss")]
    SubsystemOnly,
    #[serde(rename = "ms")]
    Simplified,
}

impl ArchetypeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArchetypeKind::TwoStage => "2s",
            ArchetypeKind::OneStage => "1s",
            ArchetypeKind::SubsystemOnly => "ss",
            ArchetypeKind::Simplified => "ms",
        }
    }
}

impl fmt::Display for ArchetypeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discipline {
    #[default]
    Fifo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemSpec {
    pub id: String,
    pub n_servers: u32,
    pub service: DistributionSpec,
    #[serde(default)]
    pub discipline: Discipline,
}

impl SubsystemSpec {
    pub fn single(id: impl Into<String>, service: DistributionSpec) -> Self {
        Self { id: id.into(), n_servers: 1, service, discipline: Discipline::Fifo }
    }
}

/// A pure delay standing in for one or more removed subsystems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosHold {
    pub id: String,
    pub replaces: Vec<String>,
    pub los: DistributionSpec,
}

impl LosHold {
    pub fn id_for(members: &[String]) -> String {
        format!("h:{}", members.join("+"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingEdge {
    pub from: String,
    pub to: String,
    pub probability: f64,
}

impl RoutingEdge {
    pub fn new(from: impl Into<String>, to: impl Into<String>, probability: f64) -> Self {
        Self { from: from.into(), to: to.into(), probability }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub interarrival: DistributionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub generator: GeneratorSpec,
    pub subsystems: Vec<SubsystemSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub holds: Vec<LosHold>,
    pub routing: Vec<RoutingEdge>,
}

impl NetworkSpec {
    /// Serial line generator -> stages[0] -> ... -> sink.
    pub fn tandem(interarrival: DistributionSpec, stages: Vec<SubsystemSpec>) -> Self {
        let mut routing = Vec::with_capacity(stages.len() + 1);
        let mut prev = GENERATOR.to_string();
        for s in &stages {
            routing.push(RoutingEdge::new(prev.clone(), s.id.clone(), 1.0));
            prev = s.id.clone();
        }
        routing.push(RoutingEdge::new(prev, SINK, 1.0));
        Self { generator: GeneratorSpec { interarrival }, subsystems: stages, holds: vec![], routing }
    }

    pub fn subsystem(&self, id: &str) -> Option<&SubsystemSpec> {
        self.subsystems.iter().find(|s| s.id == id)
    }

    pub fn subsystem_ids(&self) -> Vec<String> {
        self.subsystems.iter().map(|s| s.id.clone()).collect()
    }

    pub fn successors(&self, node: &str) -> Vec<&RoutingEdge> {
        self.routing.iter().filter(|e| e.from == node).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.interarrival.validate()?;
        let mut names = BTreeSet::new();
        for s in &self.subsystems {
            if s.n_servers == 0 {
                return Err(Error::Config(format!("subsystem `{}` has zero servers", s.id)));
            }
            s.service.validate()?;
            if !names.insert(s.id.as_str()) {
                return Err(Error::Config(format!("duplicate node id `{}`", s.id)));
            }
        }
        let live: BTreeSet<&str> = names.clone();
        let mut replaced = BTreeSet::new();
        for h in &self.holds {
            h.los.validate()?;
            if !names.insert(h.id.as_str()) {
                return Err(Error::Config(format!("duplicate node id `{}`", h.id)));
            }
            for r in &h.replaces {
                if live.contains(r.as_str()) {
                    return Err(Error::Config(format!("hold `{}` replaces live subsystem `{r}`", h.id)));
                }
                if !replaced.insert(r.as_str()) {
                    return Err(Error::Config(format!("subsystem `{r}` replaced by two holds")));
                }
            }
        }
        for reserved in [GENERATOR, SINK] {
            if names.contains(reserved) {
                return Err(Error::Config(format!("`{reserved}` is a reserved node id")));
            }
        }
        if self.subsystems.is_empty() && self.holds.is_empty() {
            return Err(Error::Config("network has no nodes".into()));
        }

        let mut out_sum: BTreeMap<&str, f64> = BTreeMap::new();
        for e in &self.routing {
            if e.from != GENERATOR && !names.contains(e.from.as_str()) {
                return Err(Error::Config(format!("routing source `{}` does not exist", e.from)));
            }
            if e.to != SINK && !names.contains(e.to.as_str()) {
                return Err(Error::Config(format!("routing target `{}` does not exist", e.to)));
            }
            if !(0.0..=1.0).contains(&e.probability) {
                return Err(Error::Config(format!(
                    "edge {} -> {} has probability {}",
                    e.from, e.to, e.probability
                )));
            }
            *out_sum.entry(e.from.as_str()).or_default() += e.probability;
        }
        for node in std::iter::once(GENERATOR).chain(names.iter().copied()) {
            let total = out_sum.get(node).copied().unwrap_or(0.0);
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("outgoing probabilities of `{node}` sum to {total}")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: NetworkSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho < 1.0 {
        Ok(())
    } else {
        Err(Error::OccupancyOutOfRange(rho))
    }
}

/// Mean interarrival time that loads `n_servers` servers to occupancy `rho`.
pub fn interarrival_for_occupancy(rho: f64, mean_service_time: f64, n_servers: u32) -> Result<f64> {
    check_rho(rho)?;
    Ok(mean_service_time / (rho * n_servers as f64))
}

/// Closed-form arrival count over `run_length` at occupancy `rho`.
pub fn expected_arrivals(rho: f64, service_rate: f64, run_length: f64) -> u64 {
    (rho * service_rate * run_length).round() as u64
}

struct ClassParams {
    s1: DistributionSpec,
    s2: DistributionSpec,
    /// Mean service time of the second (or sole) stage, used for occupancy targeting.
    target_mean: f64,
}

fn class_params(class: QueueClass) -> ClassParams {
    match class {
        QueueClass::Mm => ClassParams {
            s1: DistributionSpec::exponential(1.0),
            s2: DistributionSpec::exponential(1.0),
            target_mean: 1.0,
        },
        QueueClass::Mg => ClassParams {
            s1: DistributionSpec::exponential(2.0),
            s2: DistributionSpec::bounded_normal(2.0, 0.2, 0.01),
            target_mean: 2.0,
        },
        QueueClass::Gg => ClassParams {
            s1: DistributionSpec::Gamma { shape: 11.11, scale: 0.45 },
            s2: DistributionSpec::Gamma { shape: 11.11, scale: 0.45 },
            target_mean: 5.0,
        },
    }
}

fn class_interarrival(class: QueueClass, mean: f64) -> DistributionSpec {
    match class {
        QueueClass::Mm | QueueClass::Mg => DistributionSpec::exponential(mean),
        QueueClass::Gg => DistributionSpec::bounded_normal(mean, 1.5, 0.01),
    }
}

/// Queueing-formula mean sojourn at stage 2 of the 2s archetype. Exact for
/// mm and mg (stage-2 input is Poisson); Kingman's approximation for gg.
pub fn stage2_mean_sojourn(class: QueueClass, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    let p = class_params(class);
    let es = p.target_mean;
    Ok(match class {
        QueueClass::Mm => es / (1.0 - rho),
        QueueClass::Mg => {
            let lambda = rho / es;
            let es2 = 0.2f64.powi(2) + es * es;
            es + lambda * es2 / (2.0 * (1.0 - rho))
        }
        QueueClass::Gg => {
            let ca2 = (1.5 * rho / es).powi(2);
            let cs2 = (1.5 / es).powi(2);
            es + 0.5 * (ca2 + cs2) * rho / (1.0 - rho) * es
        }
    })
}

/// Calibration archetype with interarrival tuned so the second-stage (or sole)
/// server runs at `rho`. The ms variant uses an exponential LOS hold with the
/// queueing-formula mean; callers with a fitted LOS should build it through
/// the simplify module instead.
pub fn build_archetype(kind: ArchetypeKind, class: QueueClass, rho: f64) -> Result<NetworkSpec> {
    check_rho(rho)?;
    let p = class_params(class);
    let ia = class_interarrival(class, interarrival_for_occupancy(rho, p.target_mean, 1)?);
    match kind {
        ArchetypeKind::TwoStage => Ok(NetworkSpec::tandem(
            ia,
            vec![SubsystemSpec::single("s1", p.s1), SubsystemSpec::single("s2", p.s2)],
        )),
        // Every class uses a first stage with the same mean as the target stage.
        ArchetypeKind::OneStage => Ok(NetworkSpec::tandem(ia, vec![SubsystemSpec::single("s1", p.s1)])),
        ArchetypeKind::Simplified => {
            let members = vec!["s2".to_string()];
            let hold_id = LosHold::id_for(&members);
            let los = DistributionSpec::exponential(stage2_mean_sojourn(class, rho)?);
            Ok(NetworkSpec {
                generator: GeneratorSpec { interarrival: ia },
                subsystems: vec![SubsystemSpec::single("s1", p.s1)],
                holds: vec![LosHold { id: hold_id.clone(), replaces: members, los }],
                routing: vec![
                    RoutingEdge::new(GENERATOR, "s1", 1.0),
                    RoutingEdge::new("s1", hold_id.clone(), 1.0),
                    RoutingEdge::new(hold_id, SINK, 1.0),
                ],
            })
        }
        ArchetypeKind::SubsystemOnly => Err(Error::UnsupportedArchetype(
            "ss is derived from 2s and 1s runs and cannot be simulated on its own".into(),
        )),
    }
}
