//! Deterministic discrete-event network simulator.
//!
//! Virtual time only: every delay comes from the latency model and the
//! per-node service accounting, so a run is a pure function of the node
//! set, the actor logic and the seed. Events are processed in
//! `(fire_time, sequence)` order with a unique sequence tiebreaker, each
//! node has an independent ChaCha stream derived from the master seed, and
//! all state lives in ordered containers.
//!
//! Two occupancy clocks make contention visible: `busy_until` serializes
//! message handling at the receiver, and `tx_free` serializes transmission
//! at the sender. Service work declared by an actor via [`Ctx::work`]
//! extends its busy window and delays its own sends.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::clustering::haversine_m;
use crate::error::Error;

/// Simulation clock in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub u64);

/// Span of simulated time in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimDuration(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, other: SimTime) -> SimDuration {
        SimDuration(self.0.saturating_sub(other.0))
    }
}

impl SimDuration {
    pub const ZERO: SimDuration = SimDuration(0);

    pub fn from_micros(us: u64) -> SimDuration {
        SimDuration(us)
    }

    pub fn from_secs_f64(s: f64) -> SimDuration {
        SimDuration((s * 1e6).round() as u64)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }
}

impl std::ops::Add<SimDuration> for SimTime {
    type Output = SimTime;
    fn add(self, d: SimDuration) -> SimTime {
        SimTime(self.0 + d.0)
    }
}

impl std::ops::Add for SimDuration {
    type Output = SimDuration;
    fn add(self, d: SimDuration) -> SimDuration {
        SimDuration(self.0 + d.0)
    }
}

pub type NodeId = u32;

/// Anything the simulator can carry between nodes.
pub trait Message: Clone {
    /// Encoded size in bytes, used by the bandwidth term.
    fn wire_size(&self) -> usize;
    /// Short type label for the trace.
    fn kind(&self) -> &'static str;
}

/// Protocol logic attached to one node.
pub trait Actor {
    type Msg: Message;

    /// Handle a delivery. `from` is `None` for self-scheduled timers and
    /// externally injected events.
    fn on_event(&mut self, ctx: &mut Ctx<'_, Self::Msg>, from: Option<NodeId>, msg: Self::Msg);
}

/// Per-node failure behavior. Byzantine nodes run altered actor logic
/// (the transport itself stays faithful); crash silences a node entirely
/// from the given instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaultClass {
    Honest,
    Crash { at: SimTime },
    Byzantine,
}

impl FaultClass {
    fn crashed_at(&self, t: SimTime) -> bool {
        matches!(self, FaultClass::Crash { at } if *at <= t)
    }
}

/// Transport timing parameters. All latencies are strictly positive.
#[derive(Debug, Clone)]
pub struct LatencyModel {
    /// Fixed per-message overhead, microseconds.
    pub base_us: u64,
    /// Propagation delay per kilometer of great-circle distance.
    pub prop_us_per_km: f64,
    /// Transmit occupancy per payload byte at the sender.
    pub per_byte_us: f64,
    /// Per-message handling cost divided by the receiver capability.
    pub service_base_us: f64,
    /// Uniform jitter bound, microseconds (0 disables the draw entirely).
    pub jitter_max_us: u64,
}

impl LatencyModel {
    pub fn validate(&self) -> Result<(), Error> {
        if self.prop_us_per_km < 0.0 || self.per_byte_us < 0.0 || self.service_base_us < 0.0 {
            return Err(Error::Config("latency coefficients must be >= 0".into()));
        }
        Ok(())
    }

    fn tx_us(&self, size: usize) -> u64 {
        self.base_us.max(1) + (self.per_byte_us * size as f64).round() as u64
    }

    fn prop_us(&self, dist_km: f64) -> u64 {
        (self.prop_us_per_km * dist_km).round() as u64
    }

    fn service_us(&self, capability: f64) -> u64 {
        if capability <= 0.0 {
            return self.service_base_us.round() as u64;
        }
        (self.service_base_us / capability).round() as u64
    }
}

/// One delivered message, as exported in the trace CSV.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub fire_time: SimTime,
    pub src: NodeId,
    pub dst: NodeId,
    pub msg_type: &'static str,
    pub size: usize,
}

/// Full delivery trace of a run. Per-kind counters are always maintained;
/// the full per-message record list can be switched off for large runs.
#[derive(Debug, Default)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub kind_counts: std::collections::BTreeMap<&'static str, u64>,
    /// Set when the run hit `max_time` with events still pending.
    pub truncated: bool,
    pub end_time: SimTime,
}

impl Trace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fire_time,src,dst,msg_type,size\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.fire_time.0, r.src, r.dst, r.msg_type, r.size
            ));
        }
        s
    }

    pub fn count_kind(&self, kind: &str) -> u64 {
        self.kind_counts.get(kind).copied().unwrap_or(0)
    }

    pub fn total_messages(&self) -> u64 {
        self.kind_counts.values().sum()
    }
}

struct QueuedEvent<M> {
    fire: SimTime,
    seq: u64,
    dst: NodeId,
    src: Option<NodeId>,
    msg: M,
    /// Timers and injected events bypass the trace.
    internal: bool,
}

impl<M> PartialEq for QueuedEvent<M> {
    fn eq(&self, other: &Self) -> bool {
        (self.fire, self.seq) == (other.fire, other.seq)
    }
}
impl<M> Eq for QueuedEvent<M> {}
impl<M> PartialOrd for QueuedEvent<M> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<M> Ord for QueuedEvent<M> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.fire, self.seq).cmp(&(other.fire, other.seq))
    }
}

struct NodeSlot {
    lat: f64,
    lon: f64,
    capability: f64,
    fault: FaultClass,
    busy_until: SimTime,
    tx_free: SimTime,
    rng: ChaCha20Rng,
}

/// Effects an actor can produce while handling one event.
pub struct Ctx<'a, M> {
    now: SimTime,
    arrival: SimTime,
    node: NodeId,
    worked: SimDuration,
    sends: Vec<(NodeId, M)>,
    timers: Vec<(SimDuration, M)>,
    rng: &'a mut ChaCha20Rng,
}

impl<'a, M> Ctx<'a, M> {
    /// Virtual instant processing of the current event began.
    pub fn now(&self) -> SimTime {
        self.now
    }

    /// When the event was delivered, before any queueing behind earlier
    /// work at this node. End-to-end latency measurements want this.
    pub fn arrival(&self) -> SimTime {
        self.arrival
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    /// Consume service time (crypto, reconstruction, verification).
    pub fn work(&mut self, d: SimDuration) {
        self.worked = self.worked + d;
    }

    /// Queue a message; it departs once this node finishes processing and
    /// its transmitter is free.
    pub fn send(&mut self, to: NodeId, msg: M) {
        self.sends.push((to, msg));
    }

    /// Deliver `msg` back to this node after `delay` (not traced).
    pub fn set_timer(&mut self, delay: SimDuration, msg: M) {
        self.timers.push((delay, msg));
    }

    /// Node-local deterministic randomness.
    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        self.rng
    }
}

/// The event loop. `A` supplies per-node protocol behavior.
pub struct Simulator<A: Actor> {
    nodes: Vec<NodeSlot>,
    actors: Vec<Option<A>>,
    queue: BinaryHeap<Reverse<QueuedEvent<A::Msg>>>,
    latency: LatencyModel,
    link_drop_rate: f64,
    master_seed: u64,
    now: SimTime,
    next_seq: u64,
    record_trace: bool,
    trace: Vec<TraceRecord>,
    kind_counts: std::collections::BTreeMap<&'static str, u64>,
}

fn mix_seed(master: u64, node: u64) -> u64 {
    // splitmix64 over the pair, so per-node streams are independent.
    let mut z = master ^ node.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl<A: Actor> Simulator<A> {
    pub fn new(latency: LatencyModel, link_drop_rate: f64, master_seed: u64) -> Simulator<A> {
        Simulator {
            nodes: Vec::new(),
            actors: Vec::new(),
            queue: BinaryHeap::new(),
            latency,
            link_drop_rate,
            master_seed,
            now: SimTime::ZERO,
            next_seq: 0,
            record_trace: true,
            trace: Vec::new(),
            kind_counts: std::collections::BTreeMap::new(),
        }
    }

    /// Per-message trace records cost memory on multi-million-message
    /// runs; kind counters stay on either way.
    pub fn set_record_trace(&mut self, on: bool) {
        self.record_trace = on;
    }

    /// Register a node; ids are assigned densely in registration order.
    pub fn add_node(&mut self, lat: f64, lon: f64, capability: f64, fault: FaultClass, actor: A) -> NodeId {
        let id = self.nodes.len() as NodeId;
        self.nodes.push(NodeSlot {
            lat,
            lon,
            capability,
            fault,
            busy_until: SimTime::ZERO,
            tx_free: SimTime::ZERO,
            rng: ChaCha20Rng::seed_from_u64(mix_seed(self.master_seed, u64::from(id))),
        });
        self.actors.push(Some(actor));
        id
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn actor(&self, id: NodeId) -> &A {
        self.actors[id as usize].as_ref().expect("actor in place")
    }

    pub fn actor_mut(&mut self, id: NodeId) -> &mut A {
        self.actors[id as usize].as_mut().expect("actor in place")
    }

    pub fn actors(&self) -> impl Iterator<Item = (NodeId, &A)> {
        self.actors
            .iter()
            .enumerate()
            .map(|(i, a)| (i as NodeId, a.as_ref().expect("actor in place")))
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Inject an event from outside the network (not traced).
    pub fn schedule_external(&mut self, at: SimTime, dst: NodeId, msg: A::Msg) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(QueuedEvent { fire: at, seq, dst, src: None, msg, internal: true }));
    }

    fn distance_km(&self, a: NodeId, b: NodeId) -> f64 {
        let (na, nb) = (&self.nodes[a as usize], &self.nodes[b as usize]);
        haversine_m(na.lat, na.lon, nb.lat, nb.lon) / 1000.0
    }

    /// Drain the queue in deterministic order.
    ///
    /// Returns the delivery trace; `truncated` is set if `max_time` cut the
    /// run short with events still pending.
    pub fn run_until_quiescent(&mut self, max_time: SimTime) -> Trace {
        while let Some(Reverse(ev)) = self.queue.pop() {
            if ev.fire > max_time {
                self.queue.push(Reverse(ev));
                return Trace {
                    records: std::mem::take(&mut self.trace),
                    kind_counts: std::mem::take(&mut self.kind_counts),
                    truncated: true,
                    end_time: self.now,
                };
            }
            debug_assert!(ev.fire >= self.now, "clock moved backwards");
            self.now = ev.fire;
            let dst = ev.dst as usize;

            if self.nodes[dst].fault.crashed_at(ev.fire) {
                continue;
            }
            if !ev.internal {
                *self.kind_counts.entry(ev.msg.kind()).or_insert(0) += 1;
                if self.record_trace {
                    self.trace.push(TraceRecord {
                        fire_time: ev.fire,
                        src: ev.src.expect("traced events carry a source"),
                        dst: ev.dst,
                        msg_type: ev.msg.kind(),
                        size: ev.msg.wire_size(),
                    });
                }
            }

            // Queue behind whatever this node is still processing, then add
            // the per-message handling cost for network deliveries.
            let start = self.nodes[dst].busy_until.max(ev.fire);
            let mut worked = SimDuration::ZERO;
            if !ev.internal {
                worked = worked + SimDuration(self.latency.service_us(self.nodes[dst].capability));
            }

            let mut actor = self.actors[dst].take().expect("actor in place");
            let (sends, timers, total_worked) = {
                let slot = &mut self.nodes[dst];
                let mut ctx = Ctx {
                    now: start,
                    arrival: ev.fire,
                    node: ev.dst,
                    worked,
                    sends: Vec::new(),
                    timers: Vec::new(),
                    rng: &mut slot.rng,
                };
                actor.on_event(&mut ctx, ev.src, ev.msg);
                (ctx.sends, ctx.timers, ctx.worked)
            };
            self.actors[dst] = Some(actor);

            let finish = start + total_worked;
            self.nodes[dst].busy_until = finish;

            for (to, msg) in sends {
                self.dispatch_send(ev.dst, to, msg, finish);
            }
            for (delay, msg) in timers {
                let seq = self.next_seq;
                self.next_seq += 1;
                self.queue.push(Reverse(QueuedEvent {
                    fire: finish + delay,
                    seq,
                    dst: ev.dst,
                    src: None,
                    msg,
                    internal: true,
                }));
            }
        }
        Trace {
            records: std::mem::take(&mut self.trace),
            kind_counts: std::mem::take(&mut self.kind_counts),
            truncated: false,
            end_time: self.now,
        }
    }

    fn dispatch_send(&mut self, from: NodeId, to: NodeId, msg: A::Msg, ready: SimTime) {
        if to as usize >= self.nodes.len() {
            panic!("send to unknown node {to}");
        }
        let slot = &mut self.nodes[from as usize];
        if slot.fault.crashed_at(ready) {
            return;
        }
        if self.link_drop_rate > 0.0 {
            use rand::Rng;
            if slot.rng.gen::<f64>() < self.link_drop_rate {
                return;
            }
        }
        let size = msg.wire_size();
        let depart = slot.tx_free.max(ready) + SimDuration(self.latency.tx_us(size));
        slot.tx_free = depart;
        let jitter = if self.latency.jitter_max_us > 0 {
            use rand::Rng;
            SimDuration(slot.rng.gen_range(0..=self.latency.jitter_max_us))
        } else {
            SimDuration::ZERO
        };
        let arrival = depart + SimDuration(self.latency.prop_us(self.distance_km(from, to))) + jitter;
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(QueuedEvent {
            fire: arrival,
            seq,
            dst: to,
            src: Some(from),
            msg,
            internal: false,
        }));
    }
}
