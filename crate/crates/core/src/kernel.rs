//! Process-oriented event kernel: clock, event list, entity bookkeeping,
//! seeded random streams and the per-entity instruction trace.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simulated minutes.
pub type SimTime = f64;

/// Closed instruction vocabulary. One trace record is one instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Create,
    Activate,
    Current,
    EnterQueue,
    Request,
    WaitPassive,
    RequestHonoured,
    LeaveQueue,
    ClaimAndHold,
    Release,
    ScheduleHold,
    End,
}

impl Label {
    pub const ALL: [Label; 12] = [
        Label::Create,
        Label::Activate,
        Label::Current,
        Label::EnterQueue,
        Label::Request,
        Label::WaitPassive,
        Label::RequestHonoured,
        Label::LeaveQueue,
        Label::ClaimAndHold,
        Label::Release,
        Label::ScheduleHold,
        Label::End,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Create => "create",
            Label::Activate => "activate",
            Label::Current => "current",
            Label::EnterQueue => "enter-queue",
            Label::Request => "request",
            Label::WaitPassive => "wait-passive",
            Label::RequestHonoured => "request-honoured",
            Label::LeaveQueue => "leave-queue",
            Label::ClaimAndHold => "claim-and-hold",
            Label::Release => "release",
            Label::ScheduleHold => "schedule-hold",
            Label::End => "end",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Label::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown trace label `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub sim_time: SimTime,
    pub entity_id: u64,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimClock {
    now: SimTime,
}

impl SimClock {
    pub fn now(&self) -> SimTime {
        self.now
    }
}

/// A pending action. `target` is interpreted by the process that owns the
/// kernel (an entity slot or a generator index).
#[derive(Debug, Clone)]
pub struct Event<K> {
    pub fire_time: SimTime,
    pub seq: u64,
    pub target: usize,
    pub kind: K,
}

impl<K> PartialEq for Event<K> {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq && self.fire_time.total_cmp(&other.fire_time) == Ordering::Equal
    }
}

impl<K> Eq for Event<K> {}

impl<K> Ord for Event<K> {
    // Reversed so the max-heap pops the smallest (fire_time, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_time
            .total_cmp(&self.fire_time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl<K> PartialOrd for Event<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Pending events ordered by (fire_time, seq); FIFO among equal times.
#[derive(Debug)]
pub struct EventList<K> {
    heap: BinaryHeap<Event<K>>,
    next_seq: u64,
}

impl<K> Default for EventList<K> {
    fn default() -> Self {
        Self { heap: BinaryHeap::new(), next_seq: 0 }
    }
}

impl<K> EventList<K> {
    pub fn push(&mut self, fire_time: SimTime, target: usize, kind: K) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { fire_time, seq, target, kind });
        seq
    }

    pub fn pop(&mut self) -> Option<Event<K>> {
        self.heap.pop()
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.fire_time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// Bookkeeping shared by every simulated entity.
#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub id: u64,
    pub created_at: SimTime,
    pub departed_at: Option<SimTime>,
    pub instruction_count: u64,
    pub traced: bool,
}

impl Entity {
    pub fn new(id: u64, created_at: SimTime, traced: bool) -> Self {
        Self { id, created_at, departed_at: None, instruction_count: 0, traced }
    }
}

/// Something that reacts to events popped by the kernel.
pub trait Process<K> {
    fn handle(&mut self, kernel: &mut Kernel<K>, event: Event<K>) -> Result<()>;
}

/// Work rounds charged per executed instruction by default.
pub const DEFAULT_INSTRUCTION_COST: u32 = 64;

#[derive(Debug)]
pub struct Kernel<K> {
    clock: SimClock,
    events: EventList<K>,
    trace: Option<Vec<TraceRecord>>,
    executed: u64,
    instructions: u64,
    instruction_cost: u32,
    digest: u64,
}

impl<K> Kernel<K> {
    pub fn new(tracing: bool) -> Self {
        Self::with_cost(tracing, DEFAULT_INSTRUCTION_COST)
    }

    /// `instruction_cost` is the number of digest rounds each instruction
    /// executes; it sets how much of a run's time goes into instruction
    /// execution as opposed to event-list and sampling overhead.
    pub fn with_cost(tracing: bool, instruction_cost: u32) -> Self {
        Self {
            clock: SimClock::default(),
            events: EventList::default(),
            trace: tracing.then(Vec::new),
            executed: 0,
            instructions: 0,
            instruction_cost,
            digest: 0x243F_6A88_85A3_08D3,
        }
    }

    pub fn set_instruction_cost(&mut self, instruction_cost: u32) {
        self.instruction_cost = instruction_cost;
    }

    /// Instructions executed so far, traced or not.
    pub fn instructions(&self) -> u64 {
        self.instructions
    }

    /// Fingerprint of the executed instruction stream (label, entity, time).
    pub fn digest(&self) -> u64 {
        self.digest
    }

    pub fn now(&self) -> SimTime {
        self.clock.now
    }

    pub fn tracing(&self) -> bool {
        self.trace.is_some()
    }

    pub fn executed(&self) -> u64 {
        self.executed
    }

    pub fn pending(&self) -> usize {
        self.events.len()
    }

    pub fn schedule(&mut self, fire_time: SimTime, target: usize, kind: K) -> Result<u64> {
        if !(fire_time >= self.clock.now) {
            return Err(Error::SchedulingInPast { now: self.clock.now, fire_time });
        }
        Ok(self.events.push(fire_time, target, kind))
    }

    pub fn schedule_in(&mut self, delay: f64, target: usize, kind: K) -> Result<u64> {
        self.schedule(self.clock.now + delay, target, kind)
    }

    /// Executes every event with fire_time <= t_end, then parks the clock at t_end.
    pub fn run_until<P: Process<K>>(&mut self, t_end: SimTime, process: &mut P) -> Result<()> {
        if t_end < self.clock.now {
            return Err(Error::SchedulingInPast { now: self.clock.now, fire_time: t_end });
        }
        while let Some(t) = self.events.peek_time() {
            if t > t_end {
                break;
            }
            self.step(process)?;
        }
        self.clock.now = t_end;
        Ok(())
    }

    /// Executes the next event regardless of its time. Returns false when idle.
    pub fn step<P: Process<K>>(&mut self, process: &mut P) -> Result<bool> {
        match self.events.pop() {
            Some(ev) => {
                self.clock.now = ev.fire_time;
                self.executed += 1;
                process.handle(self, ev)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    /// Executes one instruction for `entity`. The record is kept, and the
    /// entity's count bumped, only when both the run and the entity are traced.
    #[inline]
    pub fn emit(&mut self, entity: &mut Entity, label: Label) {
        self.instructions += 1;
        let mut h = self.digest ^ entity.id.rotate_left(8) ^ (label as u64) ^ self.clock.now.to_bits();
        for _ in 0..self.instruction_cost.max(1) {
            h = mix(h);
        }
        self.digest = h;
        if !entity.traced {
            return;
        }
        if let Some(buf) = self.trace.as_mut() {
            entity.instruction_count += 1;
            buf.push(TraceRecord { sim_time: self.clock.now, entity_id: entity.id, label });
        }
    }

    pub fn take_trace(&mut self) -> Option<Vec<TraceRecord>> {
        self.trace.take()
    }
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent, reproducible random stream keyed by (seed, stream_id).
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

pub const TRACE_HEADER: &str = "sim_time\tentity_id\tlabel";

/// Writes records as `sim_time<TAB>entity_id<TAB>label`, one per line.
pub fn write_trace<W: Write>(records: &[TraceRecord], mut out: W) -> Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in records {
        writeln!(out, "{}\t{}\t{}", r.sim_time, r.entity_id, r.label)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.is_empty() || (lineno == 0 && line == TRACE_HEADER) {
            continue;
        }
        let mut parts = line.split('\t');
        let bad = || Error::Config(format!("malformed trace line {}: `{line}`", lineno + 1));
        let sim_time = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let entity_id = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let label = parts.next().ok_or_else(bad)?.parse()?;
        if parts.next().is_some() {
            return Err(bad());
        }
        out.push(TraceRecord { sim_time, entity_id, label });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Recorder {
        fired: Vec<(f64, usize)>,
    }

    impl Process<()> for Recorder {
        fn handle(&mut self, k: &mut Kernel<()>, ev: Event<()>) -> Result<()> {
            self.fired.push((k.now(), ev.target));
            Ok(())
        }
    }

    #[test]
    fn earlier_event_runs_first() {
        let mut k = Kernel::new(false);
        let mut p = Recorder { fired: vec![] };
        k.schedule(0.1, 1, ()).unwrap();
        k.schedule(0.0, 0, ()).unwrap();
        k.run_until(1.0, &mut p).unwrap();
        assert_eq!(p.fired, vec![(0.0, 0), (0.1, 1)]);
    }

    #[test]
    fn equal_times_fire_in_insertion_order() {
        let mut k = Kernel::new(false);
        let mut p = Recorder { fired: vec![] };
        for target in 0..5 {
            k.schedule(3.0, target, ()).unwrap();
        }
        k.run_until(3.0, &mut p).unwrap();
        let order: Vec<usize> = p.fired.iter().map(|f| f.1).collect();
        assert_eq!(order, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn past_scheduling_is_rejected() {
        let mut k: Kernel<()> = Kernel::new(false);
        let mut p = Recorder { fired: vec![] };
        k.run_until(5.0, &mut p).unwrap();
        let err = k.schedule(4.0, 0, ()).unwrap_err();
        assert!(matches!(err, Error::SchedulingInPast { .. }));
    }

    #[test]
    fn empty_run_advances_clock() {
        let mut k: Kernel<()> = Kernel::new(true);
        let mut p = Recorder { fired: vec![] };
        k.run_until(10.0, &mut p).unwrap();
        assert_eq!(k.now(), 10.0);
        assert!(k.take_trace().unwrap().is_empty());
    }

    #[test]
    fn single_event_then_clock_parks_at_end() {
        let mut k = Kernel::new(false);
        let mut p = Recorder { fired: vec![] };
        k.schedule(5.0, 7, ()).unwrap();
        k.run_until(10.0, &mut p).unwrap();
        assert_eq!(p.fired, vec![(5.0, 7)]);
        assert_eq!(k.now(), 10.0);
    }

    #[test]
    fn emit_counts_only_when_traced() {
        let mut k: Kernel<()> = Kernel::new(false);
        let mut e = Entity::new(1, 0.0, true);
        k.emit(&mut e, Label::Create);
        assert_eq!(e.instruction_count, 0);

        let mut k: Kernel<()> = Kernel::new(true);
        k.emit(&mut e, Label::Create);
        k.emit(&mut e, Label::Activate);
        let mut untraced = Entity::new(2, 0.0, false);
        k.emit(&mut untraced, Label::Create);
        assert_eq!(e.instruction_count, 2);
        assert_eq!(untraced.instruction_count, 0);
        assert_eq!(k.instructions(), 3);
        assert_eq!(k.take_trace().unwrap().len(), 2);
    }

    #[test]
    fn digest_depends_on_stream_not_cost_bookkeeping() {
        let run = |cost, labels: &[Label]| {
            let mut k: Kernel<()> = Kernel::with_cost(false, cost);
            let mut e = Entity::new(1, 0.0, false);
            for &l in labels {
                k.emit(&mut e, l);
            }
            k.digest()
        };
        let a = [Label::Create, Label::Activate];
        let b = [Label::Activate, Label::Create];
        assert_eq!(run(8, &a), run(8, &a));
        assert_ne!(run(8, &a), run(8, &b));
        assert_ne!(run(8, &a), run(9, &a));
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = RngStream::new(42, 3);
        let mut b = RngStream::new(42, 3);
        let mut c = RngStream::new(42, 4);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn trace_roundtrip() {
        let recs = vec![
            TraceRecord { sim_time: 0.0, entity_id: 1, label: Label::Create },
            TraceRecord { sim_time: 1.25, entity_id: 1, label: Label::RequestHonoured },
            TraceRecord { sim_time: 1.0 / 3.0, entity_id: 2, label: Label::End },
        ];
        let mut buf = Vec::new();
        write_trace(&recs, &mut buf).unwrap();
        let back = read_trace(buf.as_slice()).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn label_names_roundtrip() {
        for l in Label::ALL {
            assert_eq!(l.as_str().parse::<Label>().unwrap(), l);
        }
        assert!("teleport".parse::<Label>().is_err());
    }
}
