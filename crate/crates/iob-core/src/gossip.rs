//! Inter-cluster block dissemination between leader nodes.
//!
//! After a block commits inside its origin cluster, the origin leader
//! probes the other leaders within `eps3` meters with acknowledgment
//! pings, measures the round-trip deltas, and weights each candidate by
//! how much shorter than average its distance and ping are:
//!
//! ```text
//! s_i = (l_mean / l_i + lambda_mean / lambda_i) / 2,   w_i = s_i / sum(s)
//! ```
//!
//! Forwarding picks `fanout` relays by weighted sampling without
//! replacement, each receiver stores the block through its own cluster
//! consensus and relays onward, and duplicates are dropped on digest.
//! Leaders with no candidate inside `eps3` fall back to the single
//! globally nearest leader so an isolated cluster still gets pushed to.

use std::collections::BTreeMap;

use rand::{Rng, RngCore};

use crate::clustering::haversine_m;
use crate::consensus::BlockProposal;
use crate::sim::{NodeId, SimDuration, SimTime};

/// One leader per cluster, as published by the clustering step.
#[derive(Debug, Clone)]
pub struct LeaderInfo {
    pub node: NodeId,
    pub cluster: u32,
    pub lat: f64,
    pub lon: f64,
    pub capability: f64,
}

/// Snapshot of every cluster's current leader.
#[derive(Debug, Clone, Default)]
pub struct LeaderDirectory {
    /// Sorted by node id; one entry per cluster.
    pub leaders: Vec<LeaderInfo>,
}

impl LeaderDirectory {
    pub fn new(mut leaders: Vec<LeaderInfo>) -> LeaderDirectory {
        leaders.sort_by_key(|l| l.node);
        let mut seen = std::collections::BTreeSet::new();
        for l in &leaders {
            assert!(seen.insert(l.cluster), "one leader per cluster");
        }
        LeaderDirectory { leaders }
    }

    pub fn len(&self) -> usize {
        self.leaders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaders.is_empty()
    }

    pub fn get(&self, node: NodeId) -> Option<&LeaderInfo> {
        self.leaders.iter().find(|l| l.node == node)
    }

    /// Peer leaders within `eps3` meters of `from`; when none qualify,
    /// the single globally nearest peer.
    pub fn candidates_within(&self, from: NodeId, eps3_m: f64) -> Vec<NodeId> {
        let Some(origin) = self.get(from) else { return Vec::new() };
        let mut near = Vec::new();
        let mut nearest: Option<(f64, NodeId)> = None;
        for l in &self.leaders {
            if l.node == from {
                continue;
            }
            let d = haversine_m(origin.lat, origin.lon, l.lat, l.lon);
            if d <= eps3_m {
                near.push(l.node);
            }
            match nearest {
                Some((best, _)) if best <= d => {}
                _ => nearest = Some((d, l.node)),
            }
        }
        if near.is_empty() {
            return nearest.map(|(_, id)| vec![id]).unwrap_or_default();
        }
        near
    }
}

/// Normalized relay weights for one dissemination step.
#[derive(Debug, Clone)]
pub struct RelayWeights {
    /// `(candidate, distance_m, ping, weight)`, weights summing to 1.
    pub entries: Vec<(NodeId, f64, SimDuration, f64)>,
}

impl RelayWeights {
    pub fn weight_of(&self, node: NodeId) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == node).map(|e| e.3)
    }
}

/// Weight formula over measured distances and ping deltas: the arithmetic
/// mean of the inverse distance ratio and inverse ping ratio, normalized.
/// Shorter distance and smaller ping always mean a weight at least as
/// large.
pub fn relay_weights(candidates: &[(NodeId, f64, SimDuration)]) -> RelayWeights {
    assert!(!candidates.is_empty(), "no candidates to weight");
    let n = candidates.len() as f64;
    // Guard against zero distances/pings from co-located leaders.
    let dist = |d: f64| d.max(1e-3);
    let ping = |p: SimDuration| (p.0 as f64).max(1.0);
    let l_mean: f64 = candidates.iter().map(|c| dist(c.1)).sum::<f64>() / n;
    let p_mean: f64 = candidates.iter().map(|c| ping(c.2)).sum::<f64>() / n;
    let scores: Vec<f64> = candidates
        .iter()
        .map(|c| (l_mean / dist(c.1) + p_mean / ping(c.2)) / 2.0)
        .collect();
    let total: f64 = scores.iter().sum();
    RelayWeights {
        entries: candidates
            .iter()
            .zip(scores)
            .map(|(c, s)| (c.0, c.1, c.2, s / total))
            .collect(),
    }
}

/// Weighted sampling without replacement of `min(fanout, k)` relays.
/// Deterministic under a seeded RNG.
pub fn select_relays<R: RngCore>(
    weights: &RelayWeights,
    fanout: usize,
    rng: &mut R,
) -> Vec<NodeId> {
    let mut pool: Vec<(NodeId, f64)> =
        weights.entries.iter().map(|e| (e.0, e.3)).collect();
    let picks = fanout.min(pool.len());
    let mut chosen = Vec::with_capacity(picks);
    for _ in 0..picks {
        let total: f64 = pool.iter().map(|p| p.1).sum();
        let mut roll = rng.gen::<f64>() * total;
        let mut idx = pool.len() - 1;
        for (i, p) in pool.iter().enumerate() {
            if roll < p.1 {
                idx = i;
                break;
            }
            roll -= p.1;
        }
        chosen.push(pool.remove(idx).0);
    }
    chosen
}

/// Gossip protocol parameters.
#[derive(Debug, Clone)]
pub struct GossipParams {
    pub eps3_m: f64,
    pub fanout: usize,
    /// Forward-depth bound and per-leader round budget: a leader relays a
    /// block for up to `ttl` rounds and stamps forwards with depth+1,
    /// dropping the block once depth reaches `ttl`.
    pub ttl: u32,
    /// How long a prober waits for stragglers before weighting whoever
    /// acknowledged.
    pub probe_timeout: SimDuration,
    /// Pause between a leader's forwarding rounds.
    pub round_interval: SimDuration,
}

impl Default for GossipParams {
    fn default() -> Self {
        GossipParams {
            eps3_m: 90_000.0,
            fanout: 3,
            ttl: 10,
            probe_timeout: SimDuration::from_micros(50_000),
            round_interval: SimDuration::from_micros(10_000),
        }
    }
}

/// Delivery record for one leader.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Receipt {
    pub receipt_time: SimTime,
    pub hops: u32,
}

/// Outcome of one block's spread: receipt times and hop counts per leader,
/// plus whoever never heard of it.
#[derive(Debug, Clone, Default)]
pub struct PropagationReport {
    pub receipts: BTreeMap<NodeId, Receipt>,
    pub uninformed: Vec<NodeId>,
}

impl PropagationReport {
    pub fn coverage(&self, directory_len: usize) -> f64 {
        if directory_len == 0 {
            return 1.0;
        }
        self.receipts.len() as f64 / directory_len as f64
    }

    pub fn max_hops(&self) -> u32 {
        self.receipts.values().map(|r| r.hops).max().unwrap_or(0)
    }

    /// CSV export: `leader_id,cluster_id,receipt_time,hops`.
    pub fn to_csv(&self, directory: &LeaderDirectory) -> String {
        let mut s = String::from("leader_id,cluster_id,receipt_time,hops\n");
        for (node, r) in &self.receipts {
            let cluster = directory.get(*node).map(|l| l.cluster).unwrap_or(u32::MAX);
            s.push_str(&format!("{},{},{},{}\n", node, cluster, r.receipt_time.0, r.hops));
        }
        s
    }
}

/// Messages of the gossip layer.
#[derive(Debug, Clone)]
pub enum GossipMsg {
    /// Block push: the block itself plus origin and hop count.
    NewBlock { block: BlockProposal, origin: NodeId, hops: u32 },
    /// Acknowledgment ping for relay weighting.
    Probe { digest: [u8; 32] },
    /// Ack carries whether the responder already holds the block, which
    /// is what lets relaying stop once every neighbor is informed.
    ProbeAck { digest: [u8; 32], has_block: bool },
    /// Fires when the prober stops waiting for acks.
    ProbeTimeout { digest: [u8; 32] },
    /// Fires when the next forwarding round is due.
    RoundTimer { digest: [u8; 32] },
}

impl GossipMsg {
    pub fn kind(&self) -> &'static str {
        match self {
            GossipMsg::NewBlock { .. } => "GOSSIP_BLOCK",
            GossipMsg::Probe { .. } => "GOSSIP_PROBE",
            GossipMsg::ProbeAck { .. } => "GOSSIP_ACK",
            GossipMsg::ProbeTimeout { .. } => "GOSSIP_PROBE_TIMEOUT",
            GossipMsg::RoundTimer { .. } => "GOSSIP_ROUND_TIMER",
        }
    }

    pub fn wire_size(&self) -> usize {
        match self {
            GossipMsg::NewBlock { block, .. } => 4 + 4 + block.wire_size(),
            GossipMsg::Probe { .. } => 32,
            GossipMsg::ProbeAck { .. } => 33,
            GossipMsg::ProbeTimeout { .. } | GossipMsg::RoundTimer { .. } => 0,
        }
    }
}

/// Effect sink for the leader state machine.
pub trait GossipEnv {
    fn now(&self) -> SimTime;
    fn send(&mut self, to: NodeId, msg: GossipMsg);
    fn set_timer(&mut self, delay: SimDuration, msg: GossipMsg);
    fn rng(&mut self) -> &mut rand_chacha::ChaCha20Rng;
    /// Hook: the block reached this leader; store it through cluster
    /// consensus. Returns immediately, storage runs asynchronously.
    fn deliver_to_cluster(&mut self, block: &BlockProposal, origin: NodeId);
}

#[derive(Debug, Clone)]
struct Spread {
    block: BlockProposal,
    /// Depth at which this leader first received the block.
    receipt_hops: u32,
    rounds_done: u32,
    probe: Option<ProbeRound>,
}

#[derive(Debug, Clone)]
struct ProbeRound {
    sent_at: BTreeMap<NodeId, SimTime>,
    acked: BTreeMap<NodeId, (SimDuration, bool)>,
    expected: usize,
    done: bool,
}

/// Per-leader gossip state machine. An informed leader relays in rounds:
/// probe the candidates, weight the responders, push to `fanout` of them,
/// then go again after `round_interval`, up to `ttl` rounds. Push-only;
/// duplicate deliveries change nothing and trigger nothing.
#[derive(Debug, Clone)]
pub struct Leader {
    pub id: NodeId,
    pub directory: LeaderDirectory,
    pub params: GossipParams,
    /// Digest → receipt, also acts as the duplicate filter.
    pub seen: BTreeMap<[u8; 32], Receipt>,
    spreads: BTreeMap<[u8; 32], Spread>,
}

impl Leader {
    pub fn new(id: NodeId, directory: LeaderDirectory, params: GossipParams) -> Leader {
        Leader { id, directory, params, seen: BTreeMap::new(), spreads: BTreeMap::new() }
    }

    /// Called by the origin leader once its own cluster committed the
    /// block, and by receiving leaders through `on_msg`.
    pub fn disseminate<E: GossipEnv>(&mut self, env: &mut E, block: &BlockProposal) {
        let digest = block.digest();
        if self.seen.contains_key(&digest) {
            return;
        }
        self.seen.insert(digest, Receipt { receipt_time: env.now(), hops: 0 });
        self.spreads.insert(
            digest,
            Spread { block: block.clone(), receipt_hops: 0, rounds_done: 0, probe: None },
        );
        self.start_round(env, digest);
    }

    pub fn on_msg<E: GossipEnv>(&mut self, env: &mut E, from: Option<NodeId>, msg: GossipMsg) {
        match msg {
            GossipMsg::NewBlock { block, origin, hops } => {
                let digest = block.digest();
                if self.seen.contains_key(&digest) {
                    return; // idempotent on re-delivery
                }
                self.seen.insert(digest, Receipt { receipt_time: env.now(), hops });
                env.deliver_to_cluster(&block, origin);
                if hops < self.params.ttl {
                    self.spreads.insert(
                        digest,
                        Spread { block, receipt_hops: hops, rounds_done: 0, probe: None },
                    );
                    self.start_round(env, digest);
                }
            }
            GossipMsg::Probe { digest } => {
                if let Some(from) = from {
                    let has_block = self.seen.contains_key(&digest);
                    env.send(from, GossipMsg::ProbeAck { digest, has_block });
                }
            }
            GossipMsg::ProbeAck { digest, has_block } => {
                let now = env.now();
                let finished = {
                    let Some(spread) = self.spreads.get_mut(&digest) else { return };
                    let Some(round) = spread.probe.as_mut() else { return };
                    if round.done {
                        return;
                    }
                    if let Some(from) = from {
                        if let Some(sent) = round.sent_at.get(&from) {
                            round.acked.insert(from, (now.saturating_sub(*sent), has_block));
                        }
                    }
                    round.acked.len() >= round.expected
                };
                if finished {
                    self.finish_probe(env, digest);
                }
            }
            GossipMsg::ProbeTimeout { digest } => {
                let pending = self
                    .spreads
                    .get(&digest)
                    .and_then(|s| s.probe.as_ref())
                    .map(|r| !r.done && !r.acked.is_empty())
                    .unwrap_or(false);
                if pending {
                    self.finish_probe(env, digest);
                }
            }
            GossipMsg::RoundTimer { digest } => self.start_round(env, digest),
        }
    }

    /// Begin one forwarding round: measure the candidates afresh.
    fn start_round<E: GossipEnv>(&mut self, env: &mut E, digest: [u8; 32]) {
        let candidates = self.directory.candidates_within(self.id, self.params.eps3_m);
        let Some(spread) = self.spreads.get_mut(&digest) else { return };
        if spread.rounds_done >= self.params.ttl || candidates.is_empty() {
            return;
        }
        spread.rounds_done += 1;
        let mut sent_at = BTreeMap::new();
        for c in &candidates {
            env.send(*c, GossipMsg::Probe { digest });
            sent_at.insert(*c, env.now());
        }
        spread.probe = Some(ProbeRound {
            expected: sent_at.len(),
            sent_at,
            acked: BTreeMap::new(),
            done: false,
        });
        env.set_timer(self.params.probe_timeout, GossipMsg::ProbeTimeout { digest });
    }

    fn finish_probe<E: GossipEnv>(&mut self, env: &mut E, digest: [u8; 32]) {
        let (candidates, block, hops, more_rounds) = {
            let spread = self.spreads.get_mut(&digest).expect("active spread");
            let round = spread.probe.as_mut().expect("probe round");
            round.done = true;
            // Weight only the responders still missing the block.
            let candidates: Vec<(NodeId, f64, SimDuration)> = round
                .acked
                .iter()
                .filter(|(_, (_, has_block))| !has_block)
                .map(|(id, (ping, _))| {
                    let me = self.directory.get(self.id).expect("own entry");
                    let them = self.directory.get(*id).expect("candidate entry");
                    (*id, haversine_m(me.lat, me.lon, them.lat, them.lon), *ping)
                })
                .collect();
            let all_have_it =
                round.acked.len() == round.expected && candidates.is_empty();
            (
                candidates,
                spread.block.clone(),
                spread.receipt_hops,
                spread.rounds_done < self.params.ttl && !all_have_it,
            )
        };
        if !candidates.is_empty() {
            let weights = relay_weights(&candidates);
            let relays = select_relays(&weights, self.params.fanout, env.rng());
            for to in relays {
                env.send(
                    to,
                    GossipMsg::NewBlock { block: block.clone(), origin: self.id, hops: hops + 1 },
                );
            }
        }
        if more_rounds {
            env.set_timer(self.params.round_interval, GossipMsg::RoundTimer { digest });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn us(v: u64) -> SimDuration {
        SimDuration::from_micros(v)
    }

    #[test]
    fn single_candidate_takes_full_weight() {
        let w = relay_weights(&[(5, 1234.0, us(77))]);
        assert_eq!(w.entries.len(), 1);
        assert!((w.entries[0].3 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_candidates_split_evenly() {
        let w = relay_weights(&[(1, 500.0, us(10)), (2, 500.0, us(10))]);
        assert!((w.weight_of(1).unwrap() - 0.5).abs() < 1e-12);
        assert!((w.weight_of(2).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn worked_weight_example() {
        // l = (100, 300), lambda = (2, 6): means 200 and 4;
        // s = ((2+2)/2, (2/3+2/3)/2) = (2, 2/3) -> w = (0.75, 0.25).
        let w = relay_weights(&[(1, 100.0, us(2)), (2, 300.0, us(6))]);
        assert!((w.weight_of(1).unwrap() - 0.75).abs() < 1e-12);
        assert!((w.weight_of(2).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn weights_normalize_and_respect_dominance() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        use rand::Rng;
        for _ in 0..200 {
            let n = rng.gen_range(1..12);
            let cands: Vec<(NodeId, f64, SimDuration)> = (0..n)
                .map(|i| {
                    (
                        i as NodeId,
                        rng.gen_range(10.0..100_000.0),
                        us(rng.gen_range(1..1_000_000)),
                    )
                })
                .collect();
            let w = relay_weights(&cands);
            let total: f64 = w.entries.iter().map(|e| e.3).sum();
            assert!((total - 1.0).abs() < 1e-12);
            // Dominance: closer and faster never weighs less.
            for a in &w.entries {
                for b in &w.entries {
                    if a.1 <= b.1 && a.2 <= b.2 {
                        assert!(a.3 >= b.3 - 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn fanout_at_least_k_selects_everyone() {
        let w = relay_weights(&[(1, 100.0, us(5)), (2, 200.0, us(5)), (3, 300.0, us(5))]);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut picked = select_relays(&w, 10, &mut rng);
        picked.sort_unstable();
        assert_eq!(picked, vec![1, 2, 3]);
    }

    #[test]
    fn selection_frequency_tracks_weights() {
        let w = relay_weights(&[(1, 100.0, us(2)), (2, 300.0, us(6))]); // 0.75 / 0.25
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let hits = (0..10_000)
            .filter(|_| select_relays(&w, 1, &mut rng) == vec![1])
            .count();
        let freq = hits as f64 / 10_000.0;
        assert!((freq - 0.75).abs() < 0.02, "freq {freq}");
    }

    #[test]
    fn equal_weights_select_uniformly() {
        let w = relay_weights(&[
            (1, 500.0, us(10)),
            (2, 500.0, us(10)),
            (3, 500.0, us(10)),
        ]);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let mut counts = BTreeMap::new();
        for _ in 0..9_000 {
            *counts.entry(select_relays(&w, 1, &mut rng)[0]).or_insert(0usize) += 1;
        }
        for (_, c) in counts {
            assert!((c as f64 - 3000.0).abs() < 300.0, "count {c}");
        }
    }

    #[test]
    fn selection_is_deterministic_under_seed() {
        let w = relay_weights(&[(1, 100.0, us(2)), (2, 300.0, us(6)), (3, 200.0, us(4))]);
        let a = select_relays(&w, 2, &mut ChaCha20Rng::seed_from_u64(9));
        let b = select_relays(&w, 2, &mut ChaCha20Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    struct MockEnv {
        now: SimTime,
        sent: Vec<(NodeId, GossipMsg)>,
        timers: Vec<(SimDuration, GossipMsg)>,
        rng: rand_chacha::ChaCha20Rng,
        delivered: Vec<[u8; 32]>,
    }

    impl MockEnv {
        fn new(seed: u64) -> MockEnv {
            MockEnv {
                now: SimTime(0),
                sent: Vec::new(),
                timers: Vec::new(),
                rng: ChaCha20Rng::seed_from_u64(seed),
                delivered: Vec::new(),
            }
        }
    }

    impl GossipEnv for MockEnv {
        fn now(&self) -> SimTime {
            self.now
        }
        fn send(&mut self, to: NodeId, msg: GossipMsg) {
            self.sent.push((to, msg));
        }
        fn set_timer(&mut self, delay: SimDuration, msg: GossipMsg) {
            self.timers.push((delay, msg));
        }
        fn rng(&mut self) -> &mut rand_chacha::ChaCha20Rng {
            &mut self.rng
        }
        fn deliver_to_cluster(&mut self, block: &crate::consensus::BlockProposal, _origin: NodeId) {
            self.delivered.push(block.digest());
        }
    }

    fn three_leader_directory() -> LeaderDirectory {
        LeaderDirectory::new(vec![
            LeaderInfo { node: 1, cluster: 0, lat: 40.0, lon: 116.0, capability: 5.0 },
            LeaderInfo { node: 2, cluster: 1, lat: 40.1, lon: 116.0, capability: 5.0 },
            LeaderInfo { node: 3, cluster: 2, lat: 40.2, lon: 116.0, capability: 5.0 },
        ])
    }

    #[test]
    fn redelivery_of_seen_digest_changes_nothing() {
        let dir = three_leader_directory();
        let mut leader = Leader::new(2, dir, GossipParams::default());
        let block = crate::consensus::BlockProposal::new(
            b"dup".to_vec(),
            [9; 32],
            SimTime(4),
        );
        let mut env = MockEnv::new(1);
        leader.on_msg(
            &mut env,
            Some(1),
            GossipMsg::NewBlock { block: block.clone(), origin: 1, hops: 1 },
        );
        assert_eq!(env.delivered.len(), 1);
        let seen_after_first = leader.seen.clone();
        let sends_after_first = env.sent.len();
        let timers_after_first = env.timers.len();

        // Second delivery of the same digest: no state change, no sends,
        // no new cluster delivery, no timers.
        leader.on_msg(
            &mut env,
            Some(3),
            GossipMsg::NewBlock { block: block.clone(), origin: 3, hops: 4 },
        );
        assert_eq!(leader.seen, seen_after_first);
        assert_eq!(env.sent.len(), sends_after_first);
        assert_eq!(env.timers.len(), timers_after_first);
        assert_eq!(env.delivered.len(), 1);
    }

    #[test]
    fn receipt_keeps_first_hop_count() {
        let dir = three_leader_directory();
        let mut leader = Leader::new(3, dir, GossipParams::default());
        let block =
            crate::consensus::BlockProposal::new(b"hop".to_vec(), [7; 32], SimTime(9));
        let digest = block.digest();
        let mut env = MockEnv::new(2);
        env.now = SimTime(500);
        leader.on_msg(&mut env, Some(1), GossipMsg::NewBlock { block, origin: 1, hops: 2 });
        let receipt = leader.seen[&digest];
        assert_eq!(receipt.hops, 2);
        assert_eq!(receipt.receipt_time, SimTime(500));
    }

    #[test]
    fn candidates_fall_back_to_global_nearest() {
        let dir = LeaderDirectory::new(vec![
            LeaderInfo { node: 1, cluster: 0, lat: 40.0, lon: 116.0, capability: 5.0 },
            LeaderInfo { node: 2, cluster: 1, lat: 40.9, lon: 116.0, capability: 5.0 },
            LeaderInfo { node: 3, cluster: 2, lat: 41.0, lon: 117.5, capability: 5.0 },
        ]);
        // ~100km to node 2: outside a 10km eps3, so fall back to nearest.
        assert_eq!(dir.candidates_within(1, 10_000.0), vec![2]);
        // Wide eps3 finds both peers.
        let mut both = dir.candidates_within(1, 500_000.0);
        both.sort_unstable();
        assert_eq!(both, vec![2, 3]);
    }
}
