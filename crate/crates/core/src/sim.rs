//! Executes a [`NetworkSpec`] on the event kernel and gathers window statistics.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dist::Sampler;
use crate::error::{Error, Result};
use crate::kernel::{Entity, Event, Kernel, Label, Process, RngStream, SimTime, TraceRecord, DEFAULT_INSTRUCTION_COST};
use crate::network::{NetworkSpec, GENERATOR, SINK};
use crate::timing;

pub const MINUTES_PER_DAY: f64 = 1440.0;
pub const DEFAULT_WARMUP: f64 = 200.0 * MINUTES_PER_DAY;
pub const DEFAULT_RUN_LENGTH: f64 = 10.0 * MINUTES_PER_DAY;
/// Key of the whole-system LOS sample set.
pub const SYSTEM_LOS: &str = "system";

const GENERATOR_STREAM: u64 = 0;
const SERVICE_STREAM_BASE: u64 = 1;
const HOLD_STREAM_BASE: u64 = 1 << 32;
const ROUTING_STREAM_BASE: u64 = 1 << 33;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub warmup: f64,
    pub run_length: f64,
    pub seed: u64,
    pub trace: bool,
    pub timed: bool,
    #[serde(default = "default_cost")]
    /// Digest rounds per instruction executed after warm-up, see [`Kernel::with_cost`].
    pub instruction_cost: u32,
    /// Keep per-node and whole-system LOS samples.
    pub collect_los: bool,
    /// Node groups whose joint LOS is sampled (entry to the group until it leaves it).
    pub los_groups: Vec<Vec<String>>,
}

impl RunConfig {
    pub fn new(warmup: f64, run_length: f64, seed: u64) -> Self {
        Self {
            warmup,
            run_length,
            seed,
            trace: false,
            timed: false,
            instruction_cost: DEFAULT_INSTRUCTION_COST,
            collect_los: false,
            los_groups: vec![],
        }
    }

    pub fn with_cost(mut self, instruction_cost: u32) -> Self {
        self.instruction_cost = instruction_cost;
        self
    }

    pub fn traced(mut self) -> Self {
        self.trace = true;
        self
    }

    pub fn timed(mut self) -> Self {
        self.timed = true;
        self
    }

    pub fn with_los(mut self) -> Self {
        self.collect_los = true;
        self
    }

    pub fn with_groups(mut self, groups: Vec<Vec<String>>) -> Self {
        self.collect_los = true;
        self.los_groups = groups;
        self
    }
}

fn default_cost() -> u32 {
    DEFAULT_INSTRUCTION_COST
}

pub fn group_key(members: &[String]) -> String {
    members.join("+")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub seed: u64,
    pub warmup: f64,
    pub run_length: f64,
    /// Busy-server time / (servers x window) per subsystem.
    pub occupancy: BTreeMap<String, f64>,
    /// Arrivals inside the window, per subsystem and hold.
    pub arrivals: BTreeMap<String, u64>,
    /// Entities created inside the window.
    pub total_arrivals: u64,
    pub mean_queue_wait: BTreeMap<String, f64>,
    /// LOS mean over window departures whose node arrival was inside the window.
    pub mean_los: BTreeMap<String, f64>,
    /// Time-average number present in each node over the window.
    pub mean_in_node: BTreeMap<String, f64>,
    /// Per-node samples plus group keys and [`SYSTEM_LOS`]; empty unless requested.
    pub los_samples: BTreeMap<String, Vec<f64>>,
    /// Wall seconds spent simulating the window, for timed runs.
    pub wall_runtime: Option<f64>,
    /// Thread CPU seconds for the same span, where the platform provides it.
    pub cpu_runtime: Option<f64>,
    #[serde(skip)]
    pub trace: Option<Vec<TraceRecord>>,
    pub events_executed: u64,
    pub instructions_executed: u64,
    pub execution_digest: u64,
    pub created: u64,
    pub departed: u64,
    pub in_system_at_end: u64,
}

impl SimulationResult {
    pub const CSV_HEADER: [&'static str; 7] =
        ["node", "occupancy", "arrivals", "mean_queue_wait", "mean_los", "mean_in_node", "los_samples"];

    /// One row per node.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for (node, arrivals) in &self.arrivals {
            let opt = |m: &BTreeMap<String, f64>| m.get(node).map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                node.clone(),
                opt(&self.occupancy),
                arrivals.to_string(),
                opt(&self.mean_queue_wait),
                opt(&self.mean_los),
                opt(&self.mean_in_node),
                self.los_samples.get(node).map(|s| s.len()).unwrap_or(0).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Scalar sidecar for [`write_csv`](Self::write_csv).
    pub fn scalars_json(&self) -> Result<String> {
        let v = serde_json::json!({
            "seed": self.seed,
            "warmup": self.warmup,
            "run_length": self.run_length,
            "total_arrivals": self.total_arrivals,
            "wall_runtime": self.wall_runtime,
            "cpu_runtime": self.cpu_runtime,
            "events_executed": self.events_executed,
            "instructions_executed": self.instructions_executed,
            "execution_digest": format!("{:016x}", self.execution_digest),
            "created": self.created,
            "departed": self.departed,
            "in_system_at_end": self.in_system_at_end,
        });
        Ok(serde_json::to_string_pretty(&v)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ev {
    Generate,
    Start,
    ServiceDone,
    Resume,
    HoldDone,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Dest {
    Node(usize),
    Sink,
}

struct Route {
    /// (cumulative probability, destination)
    edges: Vec<(f64, Dest)>,
    rng: RngStream,
}

impl Route {
    fn pick(&mut self) -> Dest {
        if self.edges.len() == 1 {
            return self.edges[0].1;
        }
        let u: f64 = rand::Rng::random(&mut self.rng);
        for &(cum, d) in &self.edges {
            if u < cum {
                return d;
            }
        }
        self.edges[self.edges.len() - 1].1
    }
}

#[derive(Default)]
struct NodeStats {
    arrivals: u64,
    last_t: SimTime,
    present: u64,
    busy: u64,
    present_area: f64,
    busy_area: f64,
    wait_sum: f64,
    wait_n: u64,
    los_sum: f64,
    los_n: u64,
    los: Vec<f64>,
}

enum NodeKind {
    Station { servers: Vec<bool>, queue: VecDeque<usize>, service: Sampler, rng: RngStream },
    Hold { los: Sampler, rng: RngStream },
}

struct Node {
    id: String,
    kind: NodeKind,
    route: Route,
    stats: NodeStats,
    groups: Vec<usize>,
}

struct Ent {
    core: Entity,
    node: usize,
    server: usize,
    arrived_at: SimTime,
    group_entry: Vec<f64>,
}

struct Model {
    nodes: Vec<Node>,
    gen_route: Route,
    interarrival: Sampler,
    gen_rng: RngStream,
    slab: Vec<Ent>,
    free: Vec<usize>,
    next_id: u64,
    w0: SimTime,
    w1: SimTime,
    tracing: bool,
    generator_on: bool,
    collect_los: bool,
    n_groups: usize,
    group_los: Vec<Vec<f64>>,
    system_los: Vec<f64>,
    created_in_window: u64,
    created: u64,
    departed: u64,
    traced_alive: u64,
}

const GENERATOR_TARGET: usize = usize::MAX;

impl Model {
    fn build(spec: &NetworkSpec, cfg: &RunConfig) -> Result<Self> {
        spec.validate()?;
        let seed = cfg.seed;
        let mut index = BTreeMap::new();
        let mut nodes = Vec::new();
        for (i, s) in spec.subsystems.iter().enumerate() {
            index.insert(s.id.clone(), nodes.len());
            nodes.push(Node {
                id: s.id.clone(),
                kind: NodeKind::Station {
                    servers: vec![false; s.n_servers as usize],
                    queue: VecDeque::new(),
                    service: s.service.sampler()?,
                    rng: RngStream::new(seed, SERVICE_STREAM_BASE + i as u64),
                },
                route: Route { edges: vec![], rng: RngStream::new(seed, ROUTING_STREAM_BASE + 1 + i as u64) },
                stats: NodeStats::default(),
                groups: vec![],
            });
        }
        for (j, h) in spec.holds.iter().enumerate() {
            let k = nodes.len();
            index.insert(h.id.clone(), k);
            nodes.push(Node {
                id: h.id.clone(),
                kind: NodeKind::Hold { los: h.los.sampler()?, rng: RngStream::new(seed, HOLD_STREAM_BASE + j as u64) },
                route: Route { edges: vec![], rng: RngStream::new(seed, ROUTING_STREAM_BASE + 1 + k as u64) },
                stats: NodeStats::default(),
                groups: vec![],
            });
        }
        let mut gen_route = Route { edges: vec![], rng: RngStream::new(seed, ROUTING_STREAM_BASE) };
        for e in spec.routing.iter().filter(|e| e.probability > 0.0) {
            let dest = if e.to == SINK { Dest::Sink } else { Dest::Node(index[&e.to]) };
            let route = if e.from == GENERATOR { &mut gen_route } else { &mut nodes[index[&e.from]].route };
            let cum = route.edges.last().map(|x| x.0).unwrap_or(0.0) + e.probability;
            route.edges.push((cum, dest));
        }
        for route in std::iter::once(&mut gen_route).chain(nodes.iter_mut().map(|n| &mut n.route)) {
            if let Some(last) = route.edges.last_mut() {
                last.0 = 1.0;
            }
        }
        for (g, members) in cfg.los_groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::Config("empty LOS group".into()));
            }
            for m in members {
                let k = *index.get(m).ok_or_else(|| Error::Config(format!("LOS group member `{m}` does not exist")))?;
                nodes[k].groups.push(g);
            }
        }
        Ok(Self {
            nodes,
            gen_route,
            interarrival: spec.generator.interarrival.sampler()?,
            gen_rng: RngStream::new(seed, GENERATOR_STREAM),
            slab: Vec::new(),
            free: Vec::new(),
            next_id: 0,
            w0: cfg.warmup,
            w1: cfg.warmup + cfg.run_length,
            tracing: cfg.trace,
            generator_on: true,
            collect_los: cfg.collect_los,
            n_groups: cfg.los_groups.len(),
            group_los: vec![Vec::new(); cfg.los_groups.len()],
            system_los: Vec::new(),
            created_in_window: 0,
            created: 0,
            departed: 0,
            traced_alive: 0,
        })
    }

    #[inline]
    fn in_window(&self, t: SimTime) -> bool {
        t >= self.w0 && t <= self.w1
    }

    /// Adds the elapsed area since the node's last change, clipped to the window.
    #[inline]
    fn accumulate(&mut self, k: usize, now: SimTime) {
        let (w0, w1) = (self.w0, self.w1);
        let st = &mut self.nodes[k].stats;
        let a = st.last_t.max(w0);
        let b = now.min(w1);
        if b > a {
            st.present_area += st.present as f64 * (b - a);
            st.busy_area += st.busy as f64 * (b - a);
        }
        st.last_t = now;
    }

    fn alloc(&mut self, now: SimTime) -> usize {
        let traced = self.tracing && self.in_window(now);
        let core = Entity::new(self.next_id, now, traced);
        self.next_id += 1;
        let ent = Ent { core, node: usize::MAX, server: 0, arrived_at: now, group_entry: vec![f64::NAN; self.n_groups] };
        match self.free.pop() {
            Some(slot) => {
                self.slab[slot] = ent;
                slot
            }
            None => {
                self.slab.push(ent);
                self.slab.len() - 1
            }
        }
    }

    fn generate(&mut self, k: &mut Kernel<Ev>) -> Result<()> {
        if !self.generator_on {
            return Ok(());
        }
        let now = k.now();
        let slot = self.alloc(now);
        self.created += 1;
        if self.in_window(now) {
            self.created_in_window += 1;
        }
        if self.slab[slot].core.traced {
            self.traced_alive += 1;
        }
        let e = &mut self.slab[slot].core;
        for label in [Label::Current, Label::Create, Label::Activate, Label::ScheduleHold] {
            k.emit(e, label);
        }
        let gap = self.interarrival.sample_duration(&mut self.gen_rng);
        k.schedule_in(gap, GENERATOR_TARGET, Ev::Generate)?;
        k.schedule(now, slot, Ev::Start)?;
        Ok(())
    }

    fn forward(&mut self, k: &mut Kernel<Ev>, slot: usize, dest: Dest) -> Result<()> {
        match dest {
            Dest::Sink => self.depart(k, slot),
            Dest::Node(n) => self.enter(k, slot, n),
        }
    }

    fn enter(&mut self, k: &mut Kernel<Ev>, slot: usize, n: usize) -> Result<()> {
        let now = k.now();
        self.accumulate(n, now);
        let in_window = self.in_window(now);
        {
            let ent = &mut self.slab[slot];
            ent.node = n;
            ent.arrived_at = now;
            for &g in &self.nodes[n].groups {
                if ent.group_entry[g].is_nan() {
                    ent.group_entry[g] = now;
                }
            }
        }
        let node = &mut self.nodes[n];
        node.stats.present += 1;
        if in_window {
            node.stats.arrivals += 1;
        }
        let ent = &mut self.slab[slot];
        match &mut node.kind {
            NodeKind::Hold { los, rng } => {
                k.emit(&mut ent.core, Label::ScheduleHold);
                let d = los.sample_duration(rng);
                k.schedule_in(d, slot, Ev::HoldDone)?;
            }
            NodeKind::Station { servers, queue, service, rng } => {
                k.emit(&mut ent.core, Label::EnterQueue);
                k.emit(&mut ent.core, Label::Request);
                let free = if queue.is_empty() { servers.iter().position(|b| !*b) } else { None };
                match free {
                    Some(s) => {
                        servers[s] = true;
                        node.stats.busy += 1;
                        ent.server = s;
                        k.emit(&mut ent.core, Label::LeaveQueue);
                        k.emit(&mut ent.core, Label::ClaimAndHold);
                        if in_window {
                            node.stats.wait_n += 1;
                        }
                        let d = service.sample_duration(rng);
                        k.schedule_in(d, slot, Ev::ServiceDone)?;
                    }
                    None => {
                        queue.push_back(slot);
                        k.emit(&mut ent.core, Label::WaitPassive);
                    }
                }
            }
        }
        Ok(())
    }

    /// Shared exit bookkeeping for stations and holds; then routes onward.
    fn leave(&mut self, k: &mut Kernel<Ev>, slot: usize) -> Result<()> {
        let now = k.now();
        let n = self.slab[slot].node;
        let arrived = self.slab[slot].arrived_at;
        let window_sample = arrived >= self.w0 && now <= self.w1;
        let st = &mut self.nodes[n].stats;
        st.present -= 1;
        if window_sample {
            st.los_sum += now - arrived;
            st.los_n += 1;
            if self.collect_los {
                st.los.push(now - arrived);
            }
        }
        let dest = self.nodes[n].route.pick();
        if self.n_groups > 0 {
            let next_groups: &[usize] = match dest {
                Dest::Node(m) => &self.nodes[m].groups,
                Dest::Sink => &[],
            };
            for &g in &self.nodes[n].groups {
                if next_groups.contains(&g) {
                    continue;
                }
                let entry = std::mem::replace(&mut self.slab[slot].group_entry[g], f64::NAN);
                if entry >= self.w0 && now <= self.w1 {
                    self.group_los[g].push(now - entry);
                }
            }
        }
        self.forward(k, slot, dest)
    }

    fn service_done(&mut self, k: &mut Kernel<Ev>, slot: usize) -> Result<()> {
        let now = k.now();
        let n = self.slab[slot].node;
        self.accumulate(n, now);
        let in_window = self.in_window(now);
        let server = self.slab[slot].server;
        k.emit(&mut self.slab[slot].core, Label::Current);
        k.emit(&mut self.slab[slot].core, Label::Release);
        let node = &mut self.nodes[n];
        if let NodeKind::Station { servers, queue, .. } = &mut node.kind {
            match queue.pop_front() {
                Some(next) => {
                    // Server passes straight to the head of the queue.
                    let waiter = &mut self.slab[next];
                    waiter.server = server;
                    if in_window {
                        node.stats.wait_sum += now - waiter.arrived_at;
                        node.stats.wait_n += 1;
                    }
                    k.schedule(now, next, Ev::Resume)?;
                }
                None => {
                    servers[server] = false;
                    node.stats.busy -= 1;
                }
            }
        }
        self.leave(k, slot)
    }

    fn resume(&mut self, k: &mut Kernel<Ev>, slot: usize) -> Result<()> {
        let n = self.slab[slot].node;
        let ent = &mut self.slab[slot];
        k.emit(&mut ent.core, Label::RequestHonoured);
        k.emit(&mut ent.core, Label::LeaveQueue);
        k.emit(&mut ent.core, Label::ClaimAndHold);
        if let NodeKind::Station { service, rng, .. } = &mut self.nodes[n].kind {
            let d = service.sample_duration(rng);
            k.schedule_in(d, slot, Ev::ServiceDone)?;
        }
        Ok(())
    }

    fn hold_done(&mut self, k: &mut Kernel<Ev>, slot: usize) -> Result<()> {
        let n = self.slab[slot].node;
        self.accumulate(n, k.now());
        k.emit(&mut self.slab[slot].core, Label::Current);
        self.leave(k, slot)
    }

    fn depart(&mut self, k: &mut Kernel<Ev>, slot: usize) -> Result<()> {
        let now = k.now();
        let ent = &mut self.slab[slot];
        k.emit(&mut ent.core, Label::End);
        ent.core.departed_at = Some(now);
        if ent.core.traced {
            self.traced_alive -= 1;
        }
        if self.collect_los && ent.core.created_at >= self.w0 && now <= self.w1 {
            self.system_los.push(now - ent.core.created_at);
        }
        self.departed += 1;
        self.free.push(slot);
        Ok(())
    }
}

impl Process<Ev> for Model {
    fn handle(&mut self, k: &mut Kernel<Ev>, ev: Event<Ev>) -> Result<()> {
        match ev.kind {
            Ev::Generate => self.generate(k),
            Ev::Start => {
                let e = &mut self.slab[ev.target].core;
                k.emit(e, Label::Current);
                let dest = self.gen_route.pick();
                self.forward(k, ev.target, dest)
            }
            Ev::ServiceDone => self.service_done(k, ev.target),
            Ev::Resume => self.resume(k, ev.target),
            Ev::HoldDone => self.hold_done(k, ev.target),
        }
    }
}

/// Runs `spec` for `warmup + run_length` minutes. Statistics cover only the
/// window after warm-up. Traced runs record instructions for entities created
/// inside the window and keep simulating past the window (generator stopped)
/// until every traced entity has departed.
pub fn run_simulation(spec: &NetworkSpec, cfg: &RunConfig) -> Result<SimulationResult> {
    if cfg.trace && cfg.timed {
        return Err(Error::MutuallyExclusiveFlags);
    }
    if !(cfg.warmup >= 0.0 && cfg.warmup.is_finite()) || !(cfg.run_length > 0.0 && cfg.run_length.is_finite()) {
        return Err(Error::Config(format!(
            "warmup must be >= 0 and run_length > 0 (got {}, {})",
            cfg.warmup, cfg.run_length
        )));
    }
    let _guard = cfg.timed.then(timing::lock);
    let mut model = Model::build(spec, cfg)?;
    // Warm-up is never measured, so it runs at the minimum instruction cost.
    let mut kernel: Kernel<Ev> = Kernel::with_cost(cfg.trace, 1);
    kernel.schedule(0.0, GENERATOR_TARGET, Ev::Generate)?;

    kernel.run_until(model.w0, &mut model)?;
    kernel.set_instruction_cost(cfg.instruction_cost);
    let c0 = timing::thread_cpu_time();
    let t0 = Instant::now();
    kernel.run_until(model.w1, &mut model)?;
    let wall = t0.elapsed().as_secs_f64();
    let cpu = timing::thread_cpu_time().zip(c0).map(|(b, a)| b - a);

    let w1 = model.w1;
    for k in 0..model.nodes.len() {
        model.accumulate(k, w1);
    }
    let in_system_at_end = model.created - model.departed;
    if cfg.trace {
        model.generator_on = false;
        while model.traced_alive > 0 {
            if !kernel.step(&mut model)? {
                break;
            }
        }
    }

    let mut res = SimulationResult {
        seed: cfg.seed,
        warmup: cfg.warmup,
        run_length: cfg.run_length,
        occupancy: BTreeMap::new(),
        arrivals: BTreeMap::new(),
        total_arrivals: model.created_in_window,
        mean_queue_wait: BTreeMap::new(),
        mean_los: BTreeMap::new(),
        mean_in_node: BTreeMap::new(),
        los_samples: BTreeMap::new(),
        wall_runtime: cfg.timed.then_some(wall),
        cpu_runtime: if cfg.timed { cpu } else { None },
        events_executed: kernel.executed(),
        instructions_executed: kernel.instructions(),
        execution_digest: kernel.digest(),
        trace: kernel.take_trace(),
        created: model.created,
        departed: model.departed,
        in_system_at_end,
    };
    let span = cfg.run_length;
    for node in &mut model.nodes {
        let st = &mut node.stats;
        res.arrivals.insert(node.id.clone(), st.arrivals);
        res.mean_in_node.insert(node.id.clone(), st.present_area / span);
        if st.los_n > 0 {
            res.mean_los.insert(node.id.clone(), st.los_sum / st.los_n as f64);
        }
        if let NodeKind::Station { servers, .. } = &node.kind {
            res.occupancy.insert(node.id.clone(), st.busy_area / (servers.len() as f64 * span));
            let w = if st.wait_n > 0 { st.wait_sum / st.wait_n as f64 } else { 0.0 };
            res.mean_queue_wait.insert(node.id.clone(), w);
        }
        if cfg.collect_los {
            res.los_samples.insert(node.id.clone(), std::mem::take(&mut st.los));
        }
    }
    if cfg.collect_los {
        for (g, members) in cfg.los_groups.iter().enumerate() {
            res.los_samples.insert(group_key(members), std::mem::take(&mut model.group_los[g]));
        }
        res.los_samples.insert(SYSTEM_LOS.to_string(), std::mem::take(&mut model.system_los));
    }
    Ok(res)
}
