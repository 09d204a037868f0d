//! Intra-cluster PBFT over behavior blocks, plus roster bookkeeping.
//!
//! Replicas are event-driven state machines: the simulator (or any other
//! scheduler) feeds messages through [`Replica::handle`] and collects the
//! outgoing effects through a [`PbftEnv`]. One proposal is processed at a
//! time per cluster; a round runs pre-prepare → prepare → commit with
//! `2f+1` quorums (own vote included), `f = (n-1)/3`, and every replica
//! replies to the proposing client after executing.
//!
//! The client picks the round's leader (a nearby node) and names it in the
//! request, which pins the rotation origin; view `v` of the round is led by
//! the roster member `v` positions after that origin. A replica that knows
//! of a pending request and sees no commit before its timeout broadcasts
//! VIEW_CHANGE for the next view; the next leader collects `2f+1` of them
//! and installs the view with a NEW_VIEW carrying those proofs and the
//! request itself. Clients re-broadcast their request to the whole roster
//! when replies do not arrive in time, which is what lets backups start
//! timers when the leader itself is the silent one.
//!
//! Signatures are the simulator's lightweight per-node MAC: SHA-256 over
//! the registered node key and the fixed-order signed bytes. Real
//! signatures are a backend swap, not a protocol change.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::clustering::haversine_m;
use crate::error::Error;
use crate::sim::{NodeId, SimDuration, SimTime};
use crate::wire::{PbftPhase, PbftWire};

const MAC_TAG: &[u8] = b"iob.mac.v1";
const BLOCK_TAG: &[u8] = b"iob.block.v1";

/// Nearby-leader choice pool: the client picks uniformly among this many
/// nearest roster nodes.
pub const LEADER_POOL: usize = 3;

/// MAC over the fixed-order signed bytes with the sender's registered key.
pub fn mac_sign(key: &[u8; 32], bytes: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(MAC_TAG);
    h.update(key);
    h.update(bytes);
    h.finalize().into()
}

pub fn mac_verify(key: &[u8; 32], bytes: &[u8], sig: &[u8; 32]) -> bool {
    mac_sign(key, bytes) == *sig
}

/// A behavior-data block proposed by a client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockProposal {
    pub payload: Vec<u8>,
    pub client_pubkey: [u8; 32],
    pub timestamp: SimTime,
    pub client_signature: [u8; 32],
}

impl BlockProposal {
    pub fn new(payload: Vec<u8>, client_key: [u8; 32], timestamp: SimTime) -> BlockProposal {
        let digest = Self::digest_of(&payload, timestamp, &client_key);
        let client_signature = mac_sign(&client_key, &digest);
        BlockProposal { payload, client_pubkey: client_key, timestamp, client_signature }
    }

    /// `H(payload || timestamp || client_pubkey)`.
    pub fn digest_of(payload: &[u8], timestamp: SimTime, client_pubkey: &[u8; 32]) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(BLOCK_TAG);
        h.update(payload);
        h.update(timestamp.0.to_le_bytes());
        h.update(client_pubkey);
        h.finalize().into()
    }

    pub fn digest(&self) -> [u8; 32] {
        Self::digest_of(&self.payload, self.timestamp, &self.client_pubkey)
    }

    pub fn verify(&self) -> bool {
        mac_verify(&self.client_pubkey, &self.digest(), &self.client_signature)
    }

    pub fn wire_size(&self) -> usize {
        self.payload.len() + 32 + 8 + 32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeStatus {
    Active,
    Suspect,
}

/// Roster entry: what every cluster member knows about every other.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RosterEntry {
    pub node: NodeId,
    pub key: [u8; 32],
    pub lat_microdeg: i64,
    pub lon_microdeg: i64,
    pub status: NodeStatus,
    pub role: crate::clustering::Role,
}

impl RosterEntry {
    pub fn lat(&self) -> f64 {
        self.lat_microdeg as f64 / 1e6
    }

    pub fn lon(&self) -> f64 {
        self.lon_microdeg as f64 / 1e6
    }
}

/// Shared view of one cluster's membership. Positions are stored in
/// microdegrees so rosters compare exactly. The member list sits behind an
/// `Arc`: a two-thousand-replica roster is built once and shared, not
/// copied into every replica.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterRoster {
    pub cluster_id: u32,
    pub version: u64,
    /// Sorted by node id.
    pub members: Arc<Vec<RosterEntry>>,
}

impl ClusterRoster {
    pub fn new(cluster_id: u32, mut members: Vec<RosterEntry>) -> ClusterRoster {
        members.sort_by_key(|m| m.node);
        ClusterRoster { cluster_id, version: 1, members: Arc::new(members) }
    }

    /// Copy-on-write access for roster edits (consistency checks, status
    /// changes).
    pub fn members_mut(&mut self) -> &mut Vec<RosterEntry> {
        Arc::make_mut(&mut self.members)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Tolerated Byzantine faults for this size.
    pub fn f(&self) -> usize {
        (self.members.len().saturating_sub(1)) / 3
    }

    pub fn quorum(&self) -> usize {
        2 * self.f() + 1
    }

    pub fn index_of(&self, node: NodeId) -> Option<usize> {
        // Members are sorted by node id.
        self.members.binary_search_by_key(&node, |m| m.node).ok()
    }

    pub fn key_of(&self, node: NodeId) -> Option<&[u8; 32]> {
        self.index_of(node).map(|i| &self.members[i].key)
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.index_of(node).is_some()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.members.iter().map(|m| m.node)
    }

    pub fn ca_nodes(&self) -> impl Iterator<Item = &RosterEntry> {
        self.members.iter().filter(|m| m.role == crate::clustering::Role::Ca)
    }

    /// The member holding the relay-leader role (exactly one after
    /// [`assign_roles`]).
    pub fn designated_leader(&self) -> Option<NodeId> {
        self.members
            .iter()
            .find(|m| m.role == crate::clustering::Role::Leader)
            .map(|m| m.node)
    }

    fn member_at(&self, idx: usize) -> NodeId {
        self.members[idx % self.members.len()].node
    }
}

/// Role assignment inside a fresh cluster: the highest-capability member
/// becomes the relay leader (ties to the lowest node id), the next
/// `ceil(ca_fraction * n)` members by capability (capped at `ca_max`) take
/// CA duty, the rest are secondaries. CA nodes still run consensus like
/// everyone else; a singleton cluster's one node carries every duty.
pub fn assign_roles(
    members: &mut [RosterEntry],
    capabilities: &BTreeMap<NodeId, f64>,
    ca_fraction: f64,
    ca_max: usize,
) {
    if members.is_empty() {
        return;
    }
    let mut order: Vec<(NodeId, f64)> = members
        .iter()
        .map(|m| (m.node, *capabilities.get(&m.node).unwrap_or(&1.0)))
        .collect();
    // Descending capability, ascending id on ties.
    order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let leader = order[0].0;
    if members.len() == 1 {
        members[0].role = crate::clustering::Role::Leader;
        return;
    }
    let ca_count = ((members.len() as f64 * ca_fraction).ceil() as usize)
        .clamp(1, ca_max.max(1))
        .min(members.len() - 1);
    let ca_set: BTreeSet<NodeId> =
        order.iter().skip(1).take(ca_count).map(|(id, _)| *id).collect();
    for m in members.iter_mut() {
        m.role = if m.node == leader {
            crate::clustering::Role::Leader
        } else if ca_set.contains(&m.node) {
            crate::clustering::Role::Ca
        } else {
            crate::clustering::Role::Secondary
        };
    }
}

/// Client-side leader pick: uniform over the `LEADER_POOL` nearest roster
/// members. Deterministic under a seeded RNG.
pub fn select_leader<R: RngCore>(
    user_lat: f64,
    user_lon: f64,
    roster: &ClusterRoster,
    rng: &mut R,
) -> NodeId {
    assert!(!roster.is_empty(), "cannot select a leader from an empty roster");
    let mut by_dist: Vec<(u64, NodeId)> = roster
        .members
        .iter()
        .map(|m| {
            let d = haversine_m(user_lat, user_lon, m.lat(), m.lon());
            (d.round() as u64, m.node)
        })
        .collect();
    by_dist.sort_unstable();
    let pool = by_dist.len().min(LEADER_POOL);
    by_dist[rng.gen_range(0..pool)].1
}

/// Exact protocol message total for one fault-free round at `n` replicas:
/// `n-1` pre-prepares, `n(n-1)` prepares, `n(n-1)` commits, `n` replies.
pub fn message_count(n: u64) -> u64 {
    if n == 0 {
        return 0;
    }
    (n - 1) + 2 * n * (n - 1) + n
}

/// Majority roster synchronization: adopt the roster version agreed by a
/// strict majority of CA copies. No majority leaves the local roster in
/// place and the caller schedules a retry.
pub fn consistency_check(
    local: &ClusterRoster,
    ca_copies: &[&ClusterRoster],
) -> Result<ClusterRoster, Error> {
    if ca_copies.is_empty() {
        return Err(Error::Sim("no CA copies available".into()));
    }
    for candidate in ca_copies {
        let votes = ca_copies.iter().filter(|c| **c == *candidate).count();
        if votes * 2 > ca_copies.len() {
            return Ok((*candidate).clone());
        }
    }
    let _ = local;
    Err(Error::Sim("no CA majority".into()))
}

/// Messages exchanged by the consensus layer.
#[derive(Debug, Clone)]
pub enum PbftNetMsg {
    /// Client → chosen leader (and, after a client timeout, the whole
    /// roster). `leader_hint` pins the round's rotation origin.
    Request { proposal: BlockProposal, leader_hint: NodeId },
    /// Leader's proposal envelope plus the block itself. Carries the
    /// client id so every replica can address its reply.
    PrePrepare { wire: PbftWire, request: BlockProposal, client: NodeId },
    /// Prepare/commit/reply/view-change envelope.
    Msg(PbftWire),
    /// New leader's view installation: 2f+1 view-change proofs + request.
    NewView { wire: PbftWire, proofs: Vec<PbftWire>, request: BlockProposal, client: NodeId },
}

impl PbftNetMsg {
    pub fn kind(&self) -> &'static str {
        match self {
            PbftNetMsg::Request { .. } => "REQUEST",
            PbftNetMsg::PrePrepare { .. } => "PRE_PREPARE",
            PbftNetMsg::Msg(w) => w.phase.name(),
            PbftNetMsg::NewView { .. } => "NEW_VIEW",
        }
    }

    pub fn wire_size(&self) -> usize {
        match self {
            PbftNetMsg::Request { proposal, .. } => proposal.wire_size() + 4,
            PbftNetMsg::PrePrepare { request, .. } => PbftWire::ENCODED_LEN + request.wire_size(),
            PbftNetMsg::Msg(_) => PbftWire::ENCODED_LEN,
            PbftNetMsg::NewView { proofs, request, .. } => {
                PbftWire::ENCODED_LEN * (1 + proofs.len()) + request.wire_size()
            }
        }
    }
}

/// Timer token delivered back to the issuing state machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PbftTimer {
    pub generation: u64,
}

/// Effect sink a state machine writes into while handling one event.
pub trait PbftEnv {
    fn now(&self) -> SimTime;
    fn send(&mut self, to: NodeId, msg: PbftNetMsg);
    fn set_timer(&mut self, delay: SimDuration, timer: PbftTimer);
    fn work(&mut self, d: SimDuration);
    fn rng(&mut self) -> &mut ChaCha20Rng;
}

#[derive(Debug, Clone)]
pub struct ReplicaConfig {
    /// Commit timeout before a view change fires; doubles per fired
    /// timeout within a round.
    pub view_timeout: SimDuration,
    /// Injected service cost of producing one MAC.
    pub sign_cost: SimDuration,
    /// Injected service cost of checking one MAC.
    pub verify_cost: SimDuration,
}

impl Default for ReplicaConfig {
    fn default() -> Self {
        ReplicaConfig {
            view_timeout: SimDuration::from_micros(2_000_000),
            sign_cost: SimDuration::ZERO,
            verify_cost: SimDuration::ZERO,
        }
    }
}

/// One block as appended to a replica's chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommittedBlock {
    pub seq: u64,
    pub digest: [u8; 32],
    pub view: u64,
    pub commit_time: SimTime,
}

/// Chain export: `seq,digest,view,commit_time`.
pub fn chain_to_csv(chain: &[CommittedBlock]) -> String {
    let mut s = String::from("seq,digest,view,commit_time\n");
    for b in chain {
        s.push_str(&format!(
            "{},{},{},{}\n",
            b.seq,
            hex::encode(b.digest),
            b.view,
            b.commit_time.0
        ));
    }
    s
}

/// One vote per roster member, tallied per digest. The voted bitmap keeps
/// equivocating senders from being counted twice while per-digest counts
/// stay O(1) in memory per digest.
#[derive(Debug, Clone, Default)]
struct VoteTally {
    voted: Vec<u64>,
    counts: BTreeMap<[u8; 32], usize>,
}

impl VoteTally {
    fn record(&mut self, member_idx: usize, digest: [u8; 32]) {
        let (word, bit) = (member_idx / 64, member_idx % 64);
        if self.voted.len() <= word {
            self.voted.resize(word + 1, 0);
        }
        if self.voted[word] & (1 << bit) != 0 {
            return;
        }
        self.voted[word] |= 1 << bit;
        *self.counts.entry(digest).or_insert(0) += 1;
    }

    fn count(&self, digest: &[u8; 32]) -> usize {
        self.counts.get(digest).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
struct PendingRound {
    request: BlockProposal,
    digest: [u8; 32],
    seq: u64,
    client: Option<NodeId>,
    /// Roster index of the view-0 leader (rotation origin).
    leader0: usize,
}

/// PBFT replica state machine.
#[derive(Debug, Clone)]
pub struct Replica {
    pub id: NodeId,
    pub roster: ClusterRoster,
    pub config: ReplicaConfig,
    key: [u8; 32],
    pub view: u64,
    pub chain: Vec<CommittedBlock>,
    pending: Option<PendingRound>,
    /// Accepted pre-prepare digest per (view, seq); first valid one wins.
    accepted: BTreeMap<(u64, u64), [u8; 32]>,
    /// Vote logs: (phase, view, seq) → one-vote-per-sender tally.
    log: BTreeMap<(u8, u64, u64), VoteTally>,
    /// View-change wires per target view, kept as NEW_VIEW proofs.
    view_changes: BTreeMap<u64, BTreeMap<NodeId, PbftWire>>,
    sent_prepare: BTreeSet<(u64, u64)>,
    sent_commit: BTreeSet<(u64, u64)>,
    executed_seq: BTreeSet<u64>,
    /// Pre-prepares for sequence numbers past the round in flight; drained
    /// as rounds execute.
    stashed: BTreeMap<u64, (PbftWire, BlockProposal, NodeId)>,
    /// Senders dropped for invalid signatures.
    pub flagged: BTreeSet<NodeId>,
    timer_generation: u64,
    timeouts_fired: u64,
    /// Highest view this replica has demanded; successive timeouts
    /// escalate past unresponsive next leaders.
    highest_vc_target: u64,
    /// Observability for the safety harness.
    pub view_changes_sent: u64,
}

impl Replica {
    pub fn new(id: NodeId, key: [u8; 32], roster: ClusterRoster, config: ReplicaConfig) -> Replica {
        Replica {
            id,
            roster,
            config,
            key,
            view: 0,
            chain: Vec::new(),
            pending: None,
            accepted: BTreeMap::new(),
            log: BTreeMap::new(),
            view_changes: BTreeMap::new(),
            sent_prepare: BTreeSet::new(),
            sent_commit: BTreeSet::new(),
            executed_seq: BTreeSet::new(),
            stashed: BTreeMap::new(),
            flagged: BTreeSet::new(),
            timer_generation: 0,
            timeouts_fired: 0,
            highest_vc_target: 0,
            view_changes_sent: 0,
        }
    }

    pub fn chain(&self) -> &[CommittedBlock] {
        &self.chain
    }

    /// True when no round is in flight (the next proposal can start).
    pub fn is_idle(&self) -> bool {
        self.pending.is_none()
    }

    fn leader_for(&self, leader0: usize, view: u64) -> NodeId {
        let n = self.roster.len() as u64;
        self.roster.member_at(((leader0 as u64 + view) % n) as usize)
    }

    fn next_seq(&self) -> u64 {
        self.chain.last().map(|b| b.seq).unwrap_or(0) + 1
    }

    fn make_wire(&self, phase: PbftPhase, view: u64, seq: u64, digest: [u8; 32]) -> PbftWire {
        let mut wire = PbftWire { phase, view, seq, digest, sender: self.id, sig: [0; 32] };
        wire.sig = mac_sign(&self.key, &wire.signed_bytes());
        wire
    }

    fn check_wire<E: PbftEnv>(&mut self, env: &mut E, wire: &PbftWire) -> bool {
        env.work(self.config.verify_cost);
        let Some(key) = self.roster.key_of(wire.sender) else {
            return false;
        };
        if !mac_verify(key, &wire.signed_bytes(), &wire.sig) {
            self.flagged.insert(wire.sender);
            return false;
        }
        !self.flagged.contains(&wire.sender)
    }

    fn broadcast<E: PbftEnv>(&mut self, env: &mut E, msg: PbftNetMsg) {
        env.work(self.config.sign_cost);
        let peers: Vec<NodeId> = self.roster.node_ids().filter(|id| *id != self.id).collect();
        for to in peers {
            env.send(to, msg.clone());
        }
    }

    fn arm_timer<E: PbftEnv>(&mut self, env: &mut E) {
        if self.timeouts_fired >= 10 {
            // Given up on timers for this round; only messages can still
            // move this replica forward.
            return;
        }
        self.timer_generation += 1;
        let factor = 1u64 << self.timeouts_fired.min(4);
        env.set_timer(
            SimDuration(self.config.view_timeout.0 * factor),
            PbftTimer { generation: self.timer_generation },
        );
    }

    fn disarm_timer(&mut self) {
        self.timer_generation += 1;
    }

    /// Entry point for every consensus-layer network event.
    pub fn handle<E: PbftEnv>(&mut self, env: &mut E, from: Option<NodeId>, msg: PbftNetMsg) {
        match msg {
            PbftNetMsg::Request { proposal, leader_hint } => {
                self.on_request(env, from, proposal, leader_hint)
            }
            PbftNetMsg::PrePrepare { wire, request, client } => {
                self.on_pre_prepare(env, wire, request, client)
            }
            PbftNetMsg::Msg(wire) => match wire.phase {
                PbftPhase::Prepare | PbftPhase::Commit => self.on_vote(env, wire),
                PbftPhase::ViewChange => self.on_view_change(env, wire),
                PbftPhase::PrePrepare | PbftPhase::Reply | PbftPhase::NewView => {}
            },
            PbftNetMsg::NewView { wire, proofs, request, client } => {
                self.on_new_view(env, wire, proofs, request, client)
            }
        }
    }

    pub fn on_timer<E: PbftEnv>(&mut self, env: &mut E, timer: PbftTimer) {
        if timer.generation != self.timer_generation {
            return;
        }
        let Some(p) = self.pending.as_ref() else { return };
        if self.executed_seq.contains(&p.seq) {
            return;
        }
        // A replica cut off from quorum gives up eventually instead of
        // ringing forever.
        if self.timeouts_fired >= 10 {
            return;
        }
        // Commit did not arrive in time: demand a view past anything
        // already tried.
        self.timeouts_fired += 1;
        let target = self.view.max(self.highest_vc_target) + 1;
        self.start_view_change(env, target);
    }

    fn start_view_change<E: PbftEnv>(&mut self, env: &mut E, target: u64) {
        let Some(p) = self.pending.as_ref() else { return };
        self.highest_vc_target = self.highest_vc_target.max(target);
        let (digest, seq) = (p.digest, p.seq);
        let wire = self.make_wire(PbftPhase::ViewChange, target, seq, digest);
        self.view_changes.entry(target).or_default().insert(self.id, wire.clone());
        self.view_changes_sent += 1;
        self.broadcast(env, PbftNetMsg::Msg(wire));
        self.arm_timer(env);
        self.maybe_install_view(env, target);
    }

    fn on_request<E: PbftEnv>(
        &mut self,
        env: &mut E,
        from: Option<NodeId>,
        proposal: BlockProposal,
        leader_hint: NodeId,
    ) {
        env.work(self.config.verify_cost);
        if !proposal.verify() {
            return;
        }
        let Some(leader0) = self.roster.index_of(leader_hint) else {
            return;
        };
        let digest = proposal.digest();
        if self.chain.iter().any(|b| b.digest == digest) {
            return;
        }
        match &self.pending {
            Some(p) if p.digest != digest => return, // one round at a time
            Some(_) => {
                // Client re-broadcast of the round in flight: make sure a
                // timer is armed so a silent leader gets voted out.
                self.arm_timer(env);
            }
            None => {
                // Fresh round: views restart at the client's chosen leader.
                self.view = 0;
                self.timeouts_fired = 0;
                self.pending = Some(PendingRound {
                    digest,
                    seq: self.next_seq(),
                    client: from,
                    leader0,
                    request: proposal,
                });
                if self.leader_for(leader0, 0) == self.id {
                    self.propose(env);
                } else {
                    self.arm_timer(env);
                }
            }
        }
    }

    fn propose<E: PbftEnv>(&mut self, env: &mut E) {
        let (digest, seq, request, client) = {
            let p = self.pending.as_ref().expect("pending round");
            (p.digest, p.seq, p.request.clone(), p.client.unwrap_or(self.id))
        };
        let wire = self.make_wire(PbftPhase::PrePrepare, self.view, seq, digest);
        self.accepted.insert((self.view, seq), digest);
        self.broadcast(env, PbftNetMsg::PrePrepare { wire, request, client });
        self.send_prepare(env, seq, digest);
        self.arm_timer(env);
    }

    fn on_pre_prepare<E: PbftEnv>(
        &mut self,
        env: &mut E,
        wire: PbftWire,
        request: BlockProposal,
        client: NodeId,
    ) {
        if !self.check_wire(env, &wire) {
            return;
        }
        env.work(self.config.verify_cost);
        if !request.verify() || request.digest() != wire.digest {
            return;
        }
        if self.executed_seq.contains(&wire.seq) || self.chain.iter().any(|b| b.digest == wire.digest)
        {
            return;
        }
        match &self.pending {
            Some(p) => {
                if wire.seq > p.seq && wire.view == 0 {
                    // A later round arrived early; hold it until this one
                    // executes.
                    if self.stashed.len() < 64 {
                        self.stashed.insert(wire.seq, (wire, request, client));
                    }
                    return;
                }
                if wire.view != self.view
                    || p.digest != wire.digest
                    || self.leader_for(p.leader0, wire.view) != wire.sender
                {
                    return;
                }
            }
            None => {
                // First contact with this round. The sender claims to lead
                // `wire.view`; recover the rotation origin from that claim.
                // Quorum intersection protects safety if the claim is false.
                if wire.view != 0 {
                    return;
                }
                self.view = 0;
                self.timeouts_fired = 0;
                let Some(sender_idx) = self.roster.index_of(wire.sender) else {
                    return;
                };
                self.pending = Some(PendingRound {
                    digest: wire.digest,
                    seq: wire.seq,
                    client: Some(client),
                    leader0: sender_idx,
                    request,
                });
            }
        }
        // First valid pre-prepare per (view, seq) wins; an equivocating
        // second one is ignored.
        if let Some(existing) = self.accepted.get(&(wire.view, wire.seq)) {
            if *existing != wire.digest {
                return;
            }
        }
        self.accepted.insert((wire.view, wire.seq), wire.digest);
        if let Some(p) = self.pending.as_mut() {
            p.seq = wire.seq;
        }
        self.send_prepare(env, wire.seq, wire.digest);
        self.arm_timer(env);
        self.try_advance(env, wire.view, wire.seq);
    }

    fn send_prepare<E: PbftEnv>(&mut self, env: &mut E, seq: u64, digest: [u8; 32]) {
        if !self.sent_prepare.insert((self.view, seq)) {
            return;
        }
        let wire = self.make_wire(PbftPhase::Prepare, self.view, seq, digest);
        let own_idx = self.roster.index_of(self.id).expect("replica in roster");
        self.log
            .entry((PbftPhase::Prepare as u8, self.view, seq))
            .or_default()
            .record(own_idx, digest);
        self.broadcast(env, PbftNetMsg::Msg(wire));
        self.try_advance(env, self.view, seq);
    }

    fn on_vote<E: PbftEnv>(&mut self, env: &mut E, wire: PbftWire) {
        if !self.check_wire(env, &wire) {
            return;
        }
        if wire.view != self.view {
            return;
        }
        // First vote per sender per (phase, view, seq) counts.
        let Some(idx) = self.roster.index_of(wire.sender) else { return };
        self.log
            .entry((wire.phase as u8, wire.view, wire.seq))
            .or_default()
            .record(idx, wire.digest);
        self.try_advance(env, wire.view, wire.seq);
    }

    fn votes_for(&self, phase: PbftPhase, view: u64, seq: u64, digest: &[u8; 32]) -> usize {
        self.log
            .get(&(phase as u8, view, seq))
            .map(|m| m.count(digest))
            .unwrap_or(0)
    }

    fn try_advance<E: PbftEnv>(&mut self, env: &mut E, view: u64, seq: u64) {
        if view != self.view {
            return;
        }
        let Some(digest) = self.accepted.get(&(view, seq)).copied() else {
            return;
        };
        let quorum = self.roster.quorum();
        if self.votes_for(PbftPhase::Prepare, view, seq, &digest) >= quorum
            && self.sent_prepare.contains(&(view, seq))
            && !self.sent_commit.contains(&(view, seq))
        {
            self.sent_commit.insert((view, seq));
            let wire = self.make_wire(PbftPhase::Commit, view, seq, digest);
            let own_idx = self.roster.index_of(self.id).expect("replica in roster");
            self.log
                .entry((PbftPhase::Commit as u8, view, seq))
                .or_default()
                .record(own_idx, digest);
            self.broadcast(env, PbftNetMsg::Msg(wire));
        }
        if self.votes_for(PbftPhase::Commit, view, seq, &digest) >= quorum
            && self.sent_commit.contains(&(view, seq))
            && !self.executed_seq.contains(&seq)
        {
            self.execute(env, view, seq, digest);
        }
    }

    fn execute<E: PbftEnv>(&mut self, env: &mut E, view: u64, seq: u64, digest: [u8; 32]) {
        self.executed_seq.insert(seq);
        self.chain.push(CommittedBlock { seq, digest, view, commit_time: env.now() });
        let client = self.pending.as_ref().and_then(|p| p.client);
        env.work(self.config.sign_cost);
        if let Some(client) = client {
            let wire = self.make_wire(PbftPhase::Reply, view, seq, digest);
            env.send(client, PbftNetMsg::Msg(wire));
        }
        // Round boundary: reset per-round view state.
        self.pending = None;
        self.view = 0;
        self.timeouts_fired = 0;
        self.highest_vc_target = 0;
        self.view_changes.clear();
        self.disarm_timer();
        // A stashed pre-prepare for the next round can go through now.
        if let Some((wire, request, client)) = self.stashed.remove(&self.next_seq()) {
            self.on_pre_prepare(env, wire, request, client);
        }
    }

    fn on_view_change<E: PbftEnv>(&mut self, env: &mut E, wire: PbftWire) {
        if !self.check_wire(env, &wire) {
            return;
        }
        let target = wire.view;
        if target <= self.view {
            return;
        }
        if let Some(p) = &self.pending {
            if wire.seq != p.seq {
                return;
            }
        }
        self.view_changes.entry(target).or_default().insert(wire.sender, wire);
        // Join once f+1 peers demand a change, even without a local
        // timeout; keeps slow-but-honest replicas from being left behind.
        let f = self.roster.f();
        if let Some(p) = &self.pending {
            let seq = p.seq;
            let join: Option<u64> = self
                .view_changes
                .iter()
                .filter(|(v, senders)| {
                    **v > self.view
                        && senders.values().filter(|w| w.seq == seq).count() >= f + 1
                })
                .map(|(v, _)| *v)
                .next();
            if let Some(v) = join {
                let already = self
                    .view_changes
                    .get(&v)
                    .map(|m| m.contains_key(&self.id))
                    .unwrap_or(false);
                if !already {
                    self.start_view_change(env, v);
                    return;
                }
            }
        }
        self.maybe_install_view(env, target);
    }

    fn maybe_install_view<E: PbftEnv>(&mut self, env: &mut E, target: u64) {
        if target <= self.view {
            return;
        }
        let Some(p) = self.pending.as_ref() else { return };
        let (digest, seq, leader0) = (p.digest, p.seq, p.leader0);
        if self.leader_for(leader0, target) != self.id {
            return;
        }
        let quorum = self.roster.quorum();
        let Some(votes) = self.view_changes.get(&target) else { return };
        // Only votes that name this leader's pending digest count: a round
        // split across digests by an equivocating leader must not be
        // re-proposed from the minority side.
        let proofs: Vec<PbftWire> = votes
            .values()
            .filter(|v| v.seq == seq && v.digest == digest)
            .cloned()
            .collect();
        if proofs.len() < quorum {
            return;
        }
        // This replica leads the target view: install and re-propose.
        let (request, client) = {
            let p = self.pending.as_ref().unwrap();
            (p.request.clone(), p.client.unwrap_or(self.id))
        };
        self.view = target;
        let wire = self.make_wire(PbftPhase::NewView, target, seq, digest);
        self.accepted.insert((target, seq), digest);
        self.broadcast(env, PbftNetMsg::NewView { wire, proofs, request, client });
        self.send_prepare(env, seq, digest);
        self.arm_timer(env);
        self.try_advance(env, target, seq);
    }

    fn on_new_view<E: PbftEnv>(
        &mut self,
        env: &mut E,
        wire: PbftWire,
        proofs: Vec<PbftWire>,
        request: BlockProposal,
        client: NodeId,
    ) {
        if !self.check_wire(env, &wire) {
            return;
        }
        let target = wire.view;
        if target <= self.view {
            return;
        }
        // Validate 2f+1 distinct signed view-change proofs for this view
        // and sequence.
        env.work(SimDuration(self.config.verify_cost.0 * proofs.len() as u64));
        let mut seen = BTreeSet::new();
        let mut valid = 0usize;
        for proof in &proofs {
            if proof.phase != PbftPhase::ViewChange
                || proof.view != target
                || proof.seq != wire.seq
                || proof.digest != wire.digest
            {
                continue;
            }
            let Some(key) = self.roster.key_of(proof.sender) else { continue };
            if mac_verify(key, &proof.signed_bytes(), &proof.sig) && seen.insert(proof.sender) {
                valid += 1;
            }
        }
        if valid < self.roster.quorum() {
            return;
        }
        env.work(self.config.verify_cost);
        if !request.verify() || request.digest() != wire.digest {
            return;
        }
        if self.executed_seq.contains(&wire.seq) {
            return;
        }
        match &self.pending {
            Some(p) => {
                if self.leader_for(p.leader0, target) != wire.sender {
                    return;
                }
                if p.digest != wire.digest {
                    // The new leader re-proposes the quorum-backed request;
                    // a minority digest cannot have committed, so adopt it.
                    let leader0 = p.leader0;
                    let client_prev = p.client;
                    self.pending = Some(PendingRound {
                        digest: wire.digest,
                        seq: wire.seq,
                        client: client_prev.or(Some(client)),
                        leader0,
                        request: request.clone(),
                    });
                }
            }
            None => {
                // Missed the whole round so far; adopt the new leader's
                // claim of the rotation origin.
                let Some(sender_idx) = self.roster.index_of(wire.sender) else { return };
                let n = self.roster.len();
                let leader0 = (sender_idx + n - (target as usize % n)) % n;
                self.pending = Some(PendingRound {
                    digest: wire.digest,
                    seq: wire.seq,
                    client: Some(client),
                    leader0,
                    request,
                });
            }
        }
        self.view = target;
        self.accepted.insert((target, wire.seq), wire.digest);
        self.send_prepare(env, wire.seq, wire.digest);
        self.arm_timer(env);
        self.try_advance(env, target, wire.seq);
    }
}

/// Client side of one consensus round: submit, await f+1 matching replies,
/// re-broadcast the request on timeout.
#[derive(Debug, Clone)]
pub struct Client {
    pub id: NodeId,
    pub roster: ClusterRoster,
    pub proposal: BlockProposal,
    pub leader: NodeId,
    pub timeout: SimDuration,
    replies: BTreeMap<[u8; 32], BTreeSet<NodeId>>,
    pub completed_at: Option<SimTime>,
    rebroadcasts: u32,
    timer_generation: u64,
}

/// How many times a client re-broadcasts before giving up.
const CLIENT_MAX_REBROADCASTS: u32 = 3;

impl Client {
    pub fn new(
        id: NodeId,
        roster: ClusterRoster,
        proposal: BlockProposal,
        leader: NodeId,
        timeout: SimDuration,
    ) -> Client {
        Client {
            id,
            roster,
            proposal,
            leader,
            timeout,
            replies: BTreeMap::new(),
            completed_at: None,
            rebroadcasts: 0,
            timer_generation: 0,
        }
    }

    /// Kick off the round.
    pub fn start<E: PbftEnv>(&mut self, env: &mut E) {
        env.send(
            self.leader,
            PbftNetMsg::Request { proposal: self.proposal.clone(), leader_hint: self.leader },
        );
        self.timer_generation += 1;
        env.set_timer(self.timeout, PbftTimer { generation: self.timer_generation });
    }

    pub fn on_reply<E: PbftEnv>(&mut self, env: &mut E, wire: PbftWire) {
        let _ = env;
        if wire.phase != PbftPhase::Reply || self.completed_at.is_some() {
            return;
        }
        let Some(key) = self.roster.key_of(wire.sender) else { return };
        if !mac_verify(key, &wire.signed_bytes(), &wire.sig) {
            return;
        }
        if wire.digest != self.proposal.digest() {
            return;
        }
        let voters = self.replies.entry(wire.digest).or_default();
        voters.insert(wire.sender);
        if voters.len() >= self.roster.f() + 1 {
            self.completed_at = Some(env.now());
        }
    }

    pub fn on_timer<E: PbftEnv>(&mut self, env: &mut E, timer: PbftTimer) {
        if timer.generation != self.timer_generation || self.completed_at.is_some() {
            return;
        }
        if self.rebroadcasts >= CLIENT_MAX_REBROADCASTS {
            return;
        }
        self.rebroadcasts += 1;
        // The leader may be gone: let the whole roster know the request.
        let peers: Vec<NodeId> = self.roster.node_ids().collect();
        for to in peers {
            env.send(
                to,
                PbftNetMsg::Request { proposal: self.proposal.clone(), leader_hint: self.leader },
            );
        }
        self.timer_generation += 1;
        env.set_timer(
            SimDuration(self.timeout.0 * (1 << self.rebroadcasts.min(6))),
            PbftTimer { generation: self.timer_generation },
        );
    }
}

/// Byzantine behaviors used by the fault-injection sweeps. They wrap the
/// outgoing side of an honest replica, which keeps the transport faithful.
#[derive(Debug, Clone)]
pub enum ByzStrategy {
    /// Receives everything, sends nothing.
    Silent,
    /// As leader, sends an alternative self-signed block to the roster
    /// members whose index bit is set in `mask`, and votes for whichever
    /// digest each peer was shown.
    Equivocate { mask: u32, alt: BlockProposal },
    /// Flips the digest in every outgoing vote.
    CorruptDigest,
    /// Emits garbage signatures on every consensus message.
    BadSignature,
}

/// Applies a [`ByzStrategy`] to a replica's outgoing messages.
pub struct ByzEnv<'a, E: PbftEnv> {
    pub inner: &'a mut E,
    pub strategy: &'a ByzStrategy,
    pub roster: &'a ClusterRoster,
    pub key: [u8; 32],
    pub self_id: NodeId,
}

impl<'a, E: PbftEnv> ByzEnv<'a, E> {
    fn transform(&mut self, to: NodeId, msg: PbftNetMsg) -> Option<PbftNetMsg> {
        match self.strategy {
            ByzStrategy::Silent => None,
            ByzStrategy::BadSignature => Some(match msg {
                PbftNetMsg::PrePrepare { mut wire, request, client } => {
                    wire.sig = [0xEE; 32];
                    PbftNetMsg::PrePrepare { wire, request, client }
                }
                PbftNetMsg::Msg(mut wire) => {
                    wire.sig = [0xEE; 32];
                    PbftNetMsg::Msg(wire)
                }
                other => other,
            }),
            ByzStrategy::CorruptDigest => Some(match msg {
                PbftNetMsg::Msg(mut wire)
                    if matches!(wire.phase, PbftPhase::Prepare | PbftPhase::Commit) =>
                {
                    for b in wire.digest.iter_mut() {
                        *b ^= 0xFF;
                    }
                    wire.sig = mac_sign(&self.key, &wire.signed_bytes());
                    PbftNetMsg::Msg(wire)
                }
                other => other,
            }),
            ByzStrategy::Equivocate { mask, alt } => {
                let idx = self.roster.index_of(to).unwrap_or(0);
                let split = (mask >> idx) & 1 == 1;
                if !split {
                    return Some(msg);
                }
                Some(match msg {
                    PbftNetMsg::PrePrepare { wire, client, .. } => {
                        let mut w = wire;
                        w.digest = alt.digest();
                        w.sig = mac_sign(&self.key, &w.signed_bytes());
                        PbftNetMsg::PrePrepare { wire: w, request: alt.clone(), client }
                    }
                    PbftNetMsg::Msg(mut wire)
                        if matches!(wire.phase, PbftPhase::Prepare | PbftPhase::Commit) =>
                    {
                        wire.digest = alt.digest();
                        wire.sig = mac_sign(&self.key, &wire.signed_bytes());
                        PbftNetMsg::Msg(wire)
                    }
                    other => other,
                })
            }
        }
    }
}

impl<'a, E: PbftEnv> PbftEnv for ByzEnv<'a, E> {
    fn now(&self) -> SimTime {
        self.inner.now()
    }

    fn send(&mut self, to: NodeId, msg: PbftNetMsg) {
        if let Some(m) = self.transform(to, msg) {
            self.inner.send(to, m);
        }
    }

    fn set_timer(&mut self, delay: SimDuration, timer: PbftTimer) {
        self.inner.set_timer(delay, timer);
    }

    fn work(&mut self, d: SimDuration) {
        self.inner.work(d);
    }

    fn rng(&mut self) -> &mut ChaCha20Rng {
        self.inner.rng()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn roster_of(n: usize) -> ClusterRoster {
        let mut members = Vec::new();
        for i in 0..n {
            let mut key = [0u8; 32];
            key[0] = i as u8;
            key[1] = 0xA5;
            members.push(RosterEntry {
                node: i as NodeId,
                key,
                lat_microdeg: 40_000_000 + (i as i64) * 1000,
                lon_microdeg: 116_000_000,
                status: NodeStatus::Active,
                role: crate::clustering::Role::Unassigned,
            });
        }
        ClusterRoster::new(0, members)
    }

    #[test]
    fn message_count_formula() {
        assert_eq!(message_count(1), 1);
        assert_eq!(message_count(4), 31);
        // 60% reduction: 40 vs 100 nodes.
        let ratio = message_count(40) as f64 / message_count(100) as f64;
        assert!((ratio - 0.16).abs() < 0.01, "ratio {ratio}");
    }

    #[test]
    fn block_proposal_digest_and_signature() {
        let b = BlockProposal::new(b"observed behavior".to_vec(), [7; 32], SimTime(99));
        assert!(b.verify());
        let mut tampered = b.clone();
        tampered.payload.push(0);
        assert!(!tampered.verify());
        assert_eq!(
            b.digest(),
            BlockProposal::digest_of(&b.payload, b.timestamp, &b.client_pubkey)
        );
    }

    #[test]
    fn mac_round_trip() {
        let key = [3u8; 32];
        let sig = mac_sign(&key, b"bytes");
        assert!(mac_verify(&key, b"bytes", &sig));
        assert!(!mac_verify(&key, b"other", &sig));
        assert!(!mac_verify(&[4u8; 32], b"bytes", &sig));
    }

    #[test]
    fn select_leader_is_uniform_over_nearest_pool() {
        let roster = roster_of(10);
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        // Nearest three are nodes 0, 1, 2 (latitudes increase with id).
        let mut counts = BTreeMap::new();
        for _ in 0..10_000 {
            let id = select_leader(40.0, 116.0, &roster, &mut rng);
            *counts.entry(id).or_insert(0usize) += 1;
        }
        assert_eq!(counts.keys().copied().collect::<Vec<_>>(), vec![0, 1, 2]);
        // Chi-square against uniform(3), 2 dof: 99.9th percentile ~ 13.8.
        let expected = 10_000.0 / 3.0;
        let chi2: f64 =
            counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 13.8, "chi2 {chi2}");
    }

    #[test]
    fn select_leader_singleton() {
        let roster = roster_of(1);
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(2);
        assert_eq!(select_leader(0.0, 0.0, &roster, &mut rng), 0);
    }

    #[test]
    fn nearest_node_chosen_with_one_third_probability() {
        // One node a meter away, the rest ~100km out: still a uniform pick
        // among the pool of three.
        let mut members = Vec::new();
        for i in 0..5 {
            let mut key = [0u8; 32];
            key[0] = i as u8;
            members.push(RosterEntry {
                node: i,
                key,
                lat_microdeg: if i == 0 { 40_000_009 } else { 41_000_000 + i as i64 },
                lon_microdeg: 116_000_000,
                status: NodeStatus::Active,
                role: crate::clustering::Role::Unassigned,
            });
        }
        let roster = ClusterRoster::new(0, members);
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        let hits = (0..30_000)
            .filter(|_| select_leader(40.0, 116.0, &roster, &mut rng) == 0)
            .count();
        let freq = hits as f64 / 30_000.0;
        assert!((freq - 1.0 / 3.0).abs() < 0.02, "freq {freq}");
    }

    #[test]
    fn consistency_check_majority_rules() {
        let r1 = roster_of(4);
        let mut stale = r1.clone();
        stale.members_mut()[2].status = NodeStatus::Suspect;
        stale.version = 0;

        // Identical rosters: no-op (majority equals local).
        assert_eq!(consistency_check(&r1, &[&r1, &r1, &r1]).unwrap(), r1);
        // One stale copy against three agreeing CA copies.
        assert_eq!(consistency_check(&stale, &[&r1, &r1, &r1]).unwrap(), r1);
        // 2-2 split: no majority.
        assert!(consistency_check(&stale, &[&r1, &r1, &stale, &stale]).is_err());
        assert!(consistency_check(&r1, &[]).is_err());
    }

    #[test]
    fn roles_cover_leader_ca_secondary() {
        let roster = roster_of(12);
        let mut members = (*roster.members).clone();
        let caps: BTreeMap<NodeId, f64> =
            (0..12).map(|i| (i as NodeId, 1.0 + i as f64)).collect();
        assign_roles(&mut members, &caps, 0.25, 16);
        let leader: Vec<_> =
            members.iter().filter(|m| m.role == crate::clustering::Role::Leader).collect();
        assert_eq!(leader.len(), 1);
        assert_eq!(leader[0].node, 11); // highest capability
        let ca = members.iter().filter(|m| m.role == crate::clustering::Role::Ca).count();
        assert_eq!(ca, 3); // ceil(12 * 0.25)
    }

    #[test]
    fn ca_count_respects_cap() {
        let roster = roster_of(100);
        let mut members = (*roster.members).clone();
        let caps: BTreeMap<NodeId, f64> = (0..100).map(|i| (i as NodeId, 1.0)).collect();
        assign_roles(&mut members, &caps, 0.25, 16);
        let ca = members.iter().filter(|m| m.role == crate::clustering::Role::Ca).count();
        assert_eq!(ca, 16);
    }

    #[test]
    fn singleton_cluster_leader_takes_all_roles() {
        let roster = roster_of(1);
        let mut members = (*roster.members).clone();
        let caps: BTreeMap<NodeId, f64> = BTreeMap::from([(0, 5.0)]);
        assign_roles(&mut members, &caps, 0.25, 16);
        assert_eq!(members[0].role, crate::clustering::Role::Leader);
    }
}
