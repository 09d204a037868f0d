//! Composite simulation world: one actor type carrying every protocol
//! role a node can hold, plus the payload enum that moves between them.
//!
//! Payloads are reference-counted so a broadcast of one logical message to
//! two thousand peers clones a pointer, not the body. Each experiment
//! gives a node only the roles it needs: consensus replica, gossip leader,
//! authentication verifier, access verifier, or the user agent driving the
//! run. Cross-layer reactions (a committed verdict block updating the CA
//! registry, a committed behavior block triggering dissemination) happen
//! here, where the actor can see its own chain grow.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::consensus::{
    BlockProposal, ByzEnv, ByzStrategy, Client, PbftNetMsg, PbftTimer, Replica,
};
use crate::fss::{self, AccessControlList, AccessOutcome, DpfKey, PointFunction, SharingMode};
use crate::gossip::{GossipMsg, Leader};
use crate::group::{Group, GroupElement};
use crate::harness::config::CryptoCostModel;
use crate::shamir::Share;
use crate::sim::{Actor, Ctx, Message, NodeId, SimDuration, SimTime};
use crate::wire::{self, PbftPhase};
use crate::zkp::{self, CaRegistry, Credential, SessionToken};

/// Per-node MAC key derivation, fixed by the run seed.
pub fn node_key(seed: u64, node: NodeId) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"iob.node.key.v1");
    h.update(seed.to_le_bytes());
    h.update(node.to_le_bytes());
    h.finalize().into()
}

/// Messages the composite world moves around.
#[derive(Debug)]
pub enum PayloadKind {
    Pbft(PbftNetMsg),
    ReplicaTimer(PbftTimer),
    ClientTimer(PbftTimer),
    Gossip(GossipMsg),
    Auth(AuthMsg),
    Access(AccessMsg),
    Start(StartEvent),
}

#[derive(Debug)]
pub enum AuthMsg {
    /// User → verifier: the verifier's slice.
    Request(wire::AuthRequest),
    /// Verifier → verifier: slice rebroadcast for reconstruction.
    Echo(wire::AuthRequest),
    /// Coordinator → user.
    Result(wire::AuthResult),
    Token(wire::TokenMsg),
}

#[derive(Debug)]
pub enum AccessMsg {
    /// User → verifier: function-key vector plus proof share.
    Request(wire::AccessRequest),
    /// Verifier → verifier: local verification result.
    Tau { request_id: u64, server: u32, tau: GroupElement },
    /// Coordinator → user.
    Result(wire::AccessResult),
    /// The retrieved item; wire weight only.
    Item { request_id: u64, size: usize },
}

#[derive(Debug, Clone, Copy)]
pub enum StartEvent {
    ProposeBlock,
    StartAuth,
    StartAccess,
}

/// Reference-counted payload: clone-cheap for broadcasts.
#[derive(Clone, Debug)]
pub struct Payload(pub Arc<PayloadKind>);

impl Payload {
    pub fn new(kind: PayloadKind) -> Payload {
        Payload(Arc::new(kind))
    }
}

impl Message for Payload {
    fn wire_size(&self) -> usize {
        match &*self.0 {
            PayloadKind::Pbft(m) => m.wire_size(),
            PayloadKind::Gossip(m) => m.wire_size(),
            PayloadKind::Auth(m) => match m {
                // Wire framing: type, version, fields as in the format doc.
                AuthMsg::Request(r) | AuthMsg::Echo(r) => {
                    wire::AuthRequest::encoded_len(&guess_group(r))
                }
                AuthMsg::Result(_) => 3,
                AuthMsg::Token(_) => 42,
            },
            PayloadKind::Access(m) => match m {
                AccessMsg::Request(r) => {
                    // 2 header + 8 id + 4 count + scalars.
                    2 + 8 + 4 + (r.key_shares.len() + 1) * (2 + scalar_len(r))
                }
                AccessMsg::Tau { .. } => 8 + 4 + 40,
                AccessMsg::Result(_) => 11,
                AccessMsg::Item { size, .. } => 8 + size,
            },
            PayloadKind::ReplicaTimer(_) | PayloadKind::ClientTimer(_) => 0,
            PayloadKind::Start(_) => 0,
        }
    }

    fn kind(&self) -> &'static str {
        match &*self.0 {
            PayloadKind::Pbft(m) => m.kind(),
            PayloadKind::Gossip(m) => m.kind(),
            PayloadKind::Auth(m) => match m {
                AuthMsg::Request(_) => "AUTH_REQUEST",
                AuthMsg::Echo(_) => "AUTH_SHARE",
                AuthMsg::Result(_) => "AUTH_RESULT",
                AuthMsg::Token(_) => "TOKEN",
            },
            PayloadKind::Access(m) => match m {
                AccessMsg::Request(_) => "ACCESS_REQUEST",
                AccessMsg::Tau { .. } => "ACCESS_TAU",
                AccessMsg::Result(_) => "ACCESS_RESULT",
                AccessMsg::Item { .. } => "ACCESS_ITEM",
            },
            PayloadKind::ReplicaTimer(_) => "REPLICA_TIMER",
            PayloadKind::ClientTimer(_) => "CLIENT_TIMER",
            PayloadKind::Start(_) => "START",
        }
    }
}

fn guess_group(r: &wire::AuthRequest) -> Group {
    match r.pu {
        GroupElement::Prod(_) => Group::new(crate::group::Backend::Prod),
        GroupElement::Test467(_) => Group::new(crate::group::Backend::Test467),
    }
}

fn scalar_len(r: &wire::AccessRequest) -> usize {
    match r.proof_share {
        crate::group::Scalar::Prod(_) => 32,
        crate::group::Scalar::Test467(_) => 8,
    }
}

/// Adapter: a consensus state machine writing into the simulator context.
struct PbftCtx<'a, 'b> {
    ctx: &'a mut Ctx<'b, Payload>,
    client_timer: bool,
}

impl crate::consensus::PbftEnv for PbftCtx<'_, '_> {
    fn now(&self) -> SimTime {
        self.ctx.now()
    }

    fn send(&mut self, to: NodeId, msg: PbftNetMsg) {
        self.ctx.send(to, Payload::new(PayloadKind::Pbft(msg)));
    }

    fn set_timer(&mut self, delay: SimDuration, timer: PbftTimer) {
        let kind = if self.client_timer {
            PayloadKind::ClientTimer(timer)
        } else {
            PayloadKind::ReplicaTimer(timer)
        };
        self.ctx.set_timer(delay, Payload::new(kind));
    }

    fn work(&mut self, d: SimDuration) {
        self.ctx.work(d);
    }

    fn rng(&mut self) -> &mut rand_chacha::ChaCha20Rng {
        self.ctx.rng()
    }
}

/// Adapter for the gossip layer; cluster deliveries are buffered so the
/// caller can feed them to the local replica after the borrow ends.
struct GossipCtx<'a, 'b> {
    ctx: &'a mut Ctx<'b, Payload>,
    cluster_deliveries: Vec<BlockProposal>,
}

impl crate::gossip::GossipEnv for GossipCtx<'_, '_> {
    fn now(&self) -> SimTime {
        self.ctx.now()
    }

    fn send(&mut self, to: NodeId, msg: GossipMsg) {
        self.ctx.send(to, Payload::new(PayloadKind::Gossip(msg)));
    }

    fn set_timer(&mut self, delay: SimDuration, msg: GossipMsg) {
        self.ctx.set_timer(delay, Payload::new(PayloadKind::Gossip(msg)));
    }

    fn rng(&mut self) -> &mut rand_chacha::ChaCha20Rng {
        self.ctx.rng()
    }

    fn deliver_to_cluster(&mut self, block: &BlockProposal, _origin: NodeId) {
        self.cluster_deliveries.push(block.clone());
    }
}

/// Block payload tags: verdict blocks drive the CA registry, data blocks
/// are opaque behavior bytes.
pub const BLOCK_TAG_VERDICT: u8 = 0x01;
pub const BLOCK_TAG_DATA: u8 = 0x02;

pub fn encode_verdict_payload(group: &Group, pu: &GroupElement, accept: bool) -> Vec<u8> {
    let mut out = vec![BLOCK_TAG_VERDICT];
    let pu_bytes = group.element_to_bytes(pu);
    out.push(pu_bytes.len() as u8);
    out.extend_from_slice(&pu_bytes);
    out.push(u8::from(accept));
    out
}

pub fn decode_verdict_payload(group: &Group, payload: &[u8]) -> Option<(GroupElement, bool)> {
    if payload.first() != Some(&BLOCK_TAG_VERDICT) || payload.len() < 3 {
        return None;
    }
    let len = payload[1] as usize;
    if payload.len() != 2 + len + 1 {
        return None;
    }
    let pu = group.element_from_bytes(&payload[2..2 + len]).ok()?;
    Some((pu, payload[2 + len] == 1))
}

pub fn encode_data_payload(bytes: &[u8]) -> Vec<u8> {
    let mut out = vec![BLOCK_TAG_DATA];
    out.extend_from_slice(bytes);
    out
}

/// State of one authentication round at a verifier (keyed by pu).
#[derive(Debug, Default)]
struct AuthRound {
    commitment: Option<GroupElement>,
    c_shares: BTreeMap<u32, Share>,
    r_shares: BTreeMap<u32, Share>,
    client: Option<NodeId>,
    decided: bool,
    result_ready: Option<(SessionToken, bool)>,
    result_sent: bool,
}

/// Authentication-verifier role: collects slices, reconstructs, verifies,
/// and (as coordinator) runs the verdict consensus and answers the user.
#[derive(Debug)]
pub struct AuthVerifier {
    /// Capability-ranked; the first member coordinates.
    pub verifier_set: Vec<NodeId>,
    pub threshold: u32,
    pub registry: CaRegistry,
    pub token_validity: SimDuration,
    rounds: BTreeMap<Vec<u8>, AuthRound>,
}

impl AuthVerifier {
    pub fn new(verifier_set: Vec<NodeId>, threshold: u32, token_validity: SimDuration) -> Self {
        AuthVerifier {
            verifier_set,
            threshold,
            registry: CaRegistry::new(),
            token_validity,
            rounds: BTreeMap::new(),
        }
    }

    fn coordinator(&self) -> NodeId {
        self.verifier_set[0]
    }
}

/// Access-verifier role.
#[derive(Debug)]
pub struct AccessVerifier {
    pub acl: AccessControlList,
    /// Capability-ranked; the first member coordinates.
    pub verifier_set: Vec<NodeId>,
    /// This node's 1-based share index.
    pub server_index: u32,
    pub item_size: usize,
    taus: BTreeMap<u64, BTreeMap<u32, GroupElement>>,
    clients: BTreeMap<u64, NodeId>,
    pub decisions: BTreeMap<u64, AccessOutcome>,
    replied: BTreeSet<u64>,
}

impl AccessVerifier {
    pub fn new(
        acl: AccessControlList,
        verifier_set: Vec<NodeId>,
        server_index: u32,
        item_size: usize,
    ) -> Self {
        AccessVerifier {
            acl,
            verifier_set,
            server_index,
            item_size,
            taus: BTreeMap::new(),
            clients: BTreeMap::new(),
            decisions: BTreeMap::new(),
            replied: BTreeSet::new(),
        }
    }

    fn coordinator(&self) -> NodeId {
        self.verifier_set[0]
    }
}

/// What the user agent is in the world to do.
#[derive(Debug)]
pub enum UserTask {
    /// Drive one consensus round through a chosen leader.
    Propose { client: Box<Client> },
    /// Authenticate against the verifier set.
    Auth { credential: Box<Credential>, verifiers: Vec<NodeId>, threshold: u32 },
    /// Run one private access round.
    Access { access_key: fss::AccessKey, domain: u32, verifiers: Vec<NodeId> },
}

/// The measuring end of every experiment.
#[derive(Debug)]
pub struct UserAgent {
    pub task: UserTask,
    pub started_at: Option<SimTime>,
    pub completed_at: Option<SimTime>,
    pub accepted: Option<bool>,
    pub token: Option<SessionToken>,
}

impl UserAgent {
    pub fn new(task: UserTask) -> UserAgent {
        UserAgent { task, started_at: None, completed_at: None, accepted: None, token: None }
    }
}

/// One node of the simulated network, holding whichever roles the
/// experiment assigned it.
pub struct NodeActor {
    pub id: NodeId,
    pub group: Group,
    pub costs: CryptoCostModel,
    pub own_key: [u8; 32],
    pub replica: Option<Replica>,
    pub byz: Option<ByzStrategy>,
    pub leader: Option<Leader>,
    pub auth: Option<AuthVerifier>,
    pub access: Option<AccessVerifier>,
    pub user: Option<UserAgent>,
    /// Full proposals seen in flight, keyed by digest, so committed
    /// digests can be interpreted and re-disseminated.
    blocks: BTreeMap<[u8; 32], BlockProposal>,
    chain_seen: usize,
    /// Proposals this node wants to lead, one consensus round at a time.
    propose_queue: VecDeque<BlockProposal>,
}

impl NodeActor {
    pub fn new(id: NodeId, group: Group, costs: CryptoCostModel, own_key: [u8; 32]) -> NodeActor {
        NodeActor {
            id,
            group,
            costs,
            own_key,
            replica: None,
            byz: None,
            leader: None,
            auth: None,
            access: None,
            user: None,
            blocks: BTreeMap::new(),
            chain_seen: 0,
            propose_queue: VecDeque::new(),
        }
    }

    /// Lead a round for `proposal` once the replica is free.
    fn enqueue_own_proposal(&mut self, ctx: &mut Ctx<'_, Payload>, proposal: BlockProposal) {
        self.propose_queue.push_back(proposal);
        self.try_propose_next(ctx);
    }

    fn try_propose_next(&mut self, ctx: &mut Ctx<'_, Payload>) {
        let idle = self.replica.as_ref().map(|r| r.is_idle()).unwrap_or(false);
        if !idle {
            return;
        }
        let Some(proposal) = self.propose_queue.pop_front() else { return };
        let hint = self.id;
        self.run_replica(ctx, None, PbftNetMsg::Request { proposal, leader_hint: hint });
    }

    fn stash_block(&mut self, request: &BlockProposal) {
        self.blocks.entry(request.digest()).or_insert_with(|| request.clone());
    }

    fn run_replica(&mut self, ctx: &mut Ctx<'_, Payload>, from: Option<NodeId>, msg: PbftNetMsg) {
        match &msg {
            PbftNetMsg::Request { proposal, .. } => self.stash_block(proposal),
            PbftNetMsg::PrePrepare { request, .. } => self.stash_block(request),
            PbftNetMsg::NewView { request, .. } => self.stash_block(request),
            PbftNetMsg::Msg(_) => {}
        }
        {
            let Some(replica) = self.replica.as_mut() else { return };
            let mut env = PbftCtx { ctx, client_timer: false };
            if let Some(strategy) = &self.byz {
                let roster = replica.roster.clone();
                let mut byz_env = ByzEnv {
                    inner: &mut env,
                    strategy,
                    roster: &roster,
                    key: self.own_key,
                    self_id: self.id,
                };
                replica.handle(&mut byz_env, from, msg);
            } else {
                replica.handle(&mut env, from, msg);
            }
        }
        self.after_replica(ctx);
    }

    fn run_replica_timer(&mut self, ctx: &mut Ctx<'_, Payload>, timer: PbftTimer) {
        {
            let Some(replica) = self.replica.as_mut() else { return };
            let mut env = PbftCtx { ctx, client_timer: false };
            if let Some(strategy) = &self.byz {
                let roster = replica.roster.clone();
                let mut byz_env = ByzEnv {
                    inner: &mut env,
                    strategy,
                    roster: &roster,
                    key: self.own_key,
                    self_id: self.id,
                };
                replica.on_timer(&mut byz_env, timer);
            } else {
                replica.on_timer(&mut env, timer);
            }
        }
        self.after_replica(ctx);
    }

    /// React to freshly committed blocks.
    fn after_replica(&mut self, ctx: &mut Ctx<'_, Payload>) {
        let fresh: Vec<[u8; 32]> = {
            let Some(replica) = self.replica.as_ref() else { return };
            if replica.chain.len() <= self.chain_seen {
                return;
            }
            let fresh = replica.chain[self.chain_seen..].iter().map(|b| b.digest).collect();
            self.chain_seen = replica.chain.len();
            fresh
        };
        for digest in fresh {
            let Some(proposal) = self.blocks.get(&digest).cloned() else { continue };
            match proposal.payload.first() {
                Some(&BLOCK_TAG_VERDICT) => self.on_verdict_committed(ctx, &proposal),
                Some(&BLOCK_TAG_DATA) => self.maybe_disseminate(ctx, &proposal),
                _ => {}
            }
        }
        self.try_propose_next(ctx);
    }

    fn maybe_disseminate(&mut self, ctx: &mut Ctx<'_, Payload>, proposal: &BlockProposal) {
        let deliveries = {
            let Some(leader) = self.leader.as_mut() else { return };
            let mut env = GossipCtx { ctx, cluster_deliveries: Vec::new() };
            leader.disseminate(&mut env, proposal);
            env.cluster_deliveries
        };
        self.handle_cluster_deliveries(ctx, deliveries);
    }

    fn handle_cluster_deliveries(
        &mut self,
        ctx: &mut Ctx<'_, Payload>,
        deliveries: Vec<BlockProposal>,
    ) {
        for block in deliveries {
            self.enqueue_own_proposal(ctx, block);
        }
    }

    fn on_verdict_committed(&mut self, ctx: &mut Ctx<'_, Payload>, proposal: &BlockProposal) {
        let Some((pu, accept)) = decode_verdict_payload(&self.group, &proposal.payload) else {
            return;
        };
        let group = self.group;
        let own = self.id;
        let Some(auth) = self.auth.as_mut() else { return };
        // The token timestamp is the verdict block's timestamp, so every
        // CA node derives an identical registry entry.
        let token = zkp::issue_token(&group, &pu, proposal.timestamp, auth.token_validity);
        if accept {
            auth.registry.insert_verified(&group, &pu, &token);
        }
        let is_coordinator = auth.coordinator() == own;
        let round = auth.rounds.entry(group.element_to_bytes(&pu)).or_default();
        round.result_ready = Some((token, accept));
        if is_coordinator && !round.result_sent {
            if let Some(client) = round.client {
                send_auth_result(ctx, client, round);
            }
        }
    }

    fn on_auth(&mut self, ctx: &mut Ctx<'_, Payload>, from: Option<NodeId>, msg: &AuthMsg) {
        match msg {
            AuthMsg::Request(req) => {
                if self.auth.is_none() {
                    return;
                }
                // Rebroadcast the slice so every verifier can reconstruct.
                let peers: Vec<NodeId> = self
                    .auth
                    .as_ref()
                    .unwrap()
                    .verifier_set
                    .iter()
                    .copied()
                    .filter(|p| *p != self.id)
                    .collect();
                for p in peers {
                    ctx.send(p, Payload::new(PayloadKind::Auth(AuthMsg::Echo(req.clone()))));
                }
                self.auth_store(ctx, from, req);
            }
            AuthMsg::Echo(req) => self.auth_store(ctx, None, req),
            AuthMsg::Result(r) => {
                if let Some(user) = self.user.as_mut() {
                    user.accepted = Some(r.accept);
                }
            }
            AuthMsg::Token(t) => {
                if let Some(user) = self.user.as_mut() {
                    user.token = Some(SessionToken {
                        digest: t.digest,
                        timestamp: t.timestamp,
                        validity_window: SimDuration::ZERO,
                    });
                    user.completed_at = Some(ctx.arrival());
                }
            }
        }
    }

    /// Record a slice; decide once the threshold is met.
    fn auth_store(
        &mut self,
        ctx: &mut Ctx<'_, Payload>,
        client: Option<NodeId>,
        req: &wire::AuthRequest,
    ) {
        let group = self.group;
        let own = self.id;
        let costs = self.costs.clone();
        let (decided_now, coordinator) = {
            let Some(auth) = self.auth.as_mut() else { return };
            let t = auth.threshold;
            let coordinator = auth.coordinator();
            let round = auth.rounds.entry(group.element_to_bytes(&req.pu)).or_default();
            if round.commitment.is_none() {
                round.commitment = Some(req.commitment);
            }
            if client.is_some() {
                round.client = client;
                if coordinator == own && round.result_ready.is_some() && !round.result_sent {
                    send_auth_result(ctx, client.unwrap(), round);
                }
            }
            if round.commitment != Some(req.commitment) {
                return; // slice from a different transcript
            }
            // The node reconstructs from slices 1..=t (the slices of the
            // t most capable verifiers); later indices change nothing.
            if round.decided || req.share_index == 0 || req.share_index > t {
                return;
            }
            round
                .c_shares
                .insert(req.share_index, Share { index: req.share_index, value: req.c_share });
            round
                .r_shares
                .insert(req.share_index, Share { index: req.share_index, value: req.r_share });
            if (round.c_shares.len() as u32) < t || (round.r_shares.len() as u32) < t {
                (false, coordinator)
            } else {
                round.decided = true;
                (true, coordinator)
            }
        };
        if !decided_now {
            return;
        }
        // Reconstruct challenge and response, then verify.
        let (pu, commitment, c_shares, r_shares, t) = {
            let auth = self.auth.as_ref().unwrap();
            let round = &auth.rounds[&group.element_to_bytes(&req.pu)];
            (
                req.pu,
                round.commitment.unwrap(),
                round.c_shares.values().copied().collect::<Vec<_>>(),
                round.r_shares.values().copied().collect::<Vec<_>>(),
                auth.threshold,
            )
        };
        ctx.work(costs.recon_cost(u64::from(t)));
        ctx.work(costs.recon_cost(u64::from(t)));
        ctx.work(costs.verify_cost());
        let outcome = zkp::ca_verify(&group, &pu, &commitment, &c_shares, &r_shares, t);
        let verdict = outcome == zkp::VerifyOutcome::Accept;
        if coordinator == own {
            // Agree on the verdict across the verifier set before issuing.
            let payload = encode_verdict_payload(&group, &pu, verdict);
            let proposal = BlockProposal::new(payload, self.own_key, ctx.now());
            self.enqueue_own_proposal(ctx, proposal);
        }
    }

    fn on_access(&mut self, ctx: &mut Ctx<'_, Payload>, from: Option<NodeId>, msg: &AccessMsg) {
        match msg {
            AccessMsg::Request(req) => {
                let group = self.group;
                let costs = self.costs.clone();
                let Some(access) = self.access.as_mut() else { return };
                let domain = access.acl.domain();
                if req.key_shares.len() as u32 != domain {
                    return;
                }
                ctx.work(costs.local_verify_cost(u64::from(domain)));
                let key = DpfKey { server: access.server_index, shares: req.key_shares.clone() };
                let Ok(tau) = fss::local_verify(&group, &access.acl, &key, &req.proof_share)
                else {
                    return;
                };
                if let Some(client) = from {
                    access.clients.insert(req.request_id, client);
                }
                access
                    .taus
                    .entry(req.request_id)
                    .or_default()
                    .insert(access.server_index, tau);
                let peers: Vec<NodeId> = access
                    .verifier_set
                    .iter()
                    .copied()
                    .filter(|p| *p != self.id)
                    .collect();
                let server = access.server_index;
                for p in peers {
                    ctx.send(
                        p,
                        Payload::new(PayloadKind::Access(AccessMsg::Tau {
                            request_id: req.request_id,
                            server,
                            tau,
                        })),
                    );
                }
                self.try_decide_access(ctx, req.request_id);
            }
            AccessMsg::Tau { request_id, server, tau } => {
                let Some(access) = self.access.as_mut() else { return };
                access.taus.entry(*request_id).or_default().insert(*server, *tau);
                self.try_decide_access(ctx, *request_id);
            }
            AccessMsg::Result(r) => {
                if let Some(user) = self.user.as_mut() {
                    user.accepted = Some(r.accept);
                }
            }
            AccessMsg::Item { .. } => {
                if let Some(user) = self.user.as_mut() {
                    user.completed_at = Some(ctx.arrival());
                }
            }
        }
    }

    fn try_decide_access(&mut self, ctx: &mut Ctx<'_, Payload>, request_id: u64) {
        let group = self.group;
        let costs = self.costs.clone();
        let own = self.id;
        let Some(access) = self.access.as_mut() else { return };
        let s = access.verifier_set.len() as u32;
        if access.decisions.contains_key(&request_id) {
            return;
        }
        let Some(taus) = access.taus.get(&request_id) else { return };
        if (taus.len() as u32) < s {
            return;
        }
        let ordered: Vec<GroupElement> = taus.values().copied().collect();
        ctx.work(SimDuration(costs.combine_us * u64::from(s)));
        let outcome = fss::check_access(&group, &ordered, s);
        access.decisions.insert(request_id, outcome);
        if access.coordinator() == own && !access.replied.contains(&request_id) {
            if let Some(client) = access.clients.get(&request_id).copied() {
                access.replied.insert(request_id);
                let accept = outcome == AccessOutcome::Accept;
                ctx.send(
                    client,
                    Payload::new(PayloadKind::Access(AccessMsg::Result(wire::AccessResult {
                        request_id,
                        accept,
                    }))),
                );
                if accept {
                    let size = access.item_size;
                    ctx.send(
                        client,
                        Payload::new(PayloadKind::Access(AccessMsg::Item { request_id, size })),
                    );
                }
            }
        }
    }

    fn on_start(&mut self, ctx: &mut Ctx<'_, Payload>, ev: StartEvent) {
        let group = self.group;
        let costs = self.costs.clone();
        let own_key = self.own_key;
        let own = self.id;
        let Some(user) = self.user.as_mut() else { return };
        user.started_at = Some(ctx.now());
        match (&mut user.task, ev) {
            (UserTask::Propose { client }, StartEvent::ProposeBlock) => {
                let mut env = PbftCtx { ctx, client_timer: true };
                client.start(&mut env);
            }
            (UserTask::Auth { credential, verifiers, threshold }, StartEvent::StartAuth) => {
                let q = verifiers.len() as u32;
                let t = *threshold;
                ctx.work(costs.prove_cost());
                ctx.work(costs.share_gen_cost(u64::from(q), u64::from(t)));
                ctx.work(costs.share_gen_cost(u64::from(q), u64::from(t)));
                let proof = zkp::prove(&group, credential, ctx.rng());
                let bundle = zkp::share_proof(&group, &proof, q, t, ctx.rng())
                    .expect("share parameters validated at build time");
                for (i, v) in verifiers.iter().enumerate() {
                    let req = wire::AuthRequest {
                        commitment: bundle.commitment,
                        share_index: bundle.c_shares[i].index,
                        c_share: bundle.c_shares[i].value,
                        r_share: bundle.r_shares[i].value,
                        pu: credential.pu,
                    };
                    ctx.send(*v, Payload::new(PayloadKind::Auth(AuthMsg::Request(req))));
                }
            }
            (UserTask::Access { access_key, domain, verifiers }, StartEvent::StartAccess) => {
                let s = verifiers.len() as u32;
                let n = *domain;
                // Ceremony, function-key and proof sharing service time.
                ctx.work(SimDuration(u64::from(n) * costs.scalar_mul_us));
                ctx.work(costs.dpf_gen_cost(u64::from(n), u64::from(s)));
                ctx.work(costs.share_gen_cost(u64::from(s), 1));
                let point = PointFunction::unit(&group, n, access_key.category)
                    .expect("category validated at build time");
                let keys = fss::dpf_gen(&group, &point, s, SharingMode::Additive, ctx.rng())
                    .expect("server count validated at build time");
                let proofs = fss::share_proof_additive(&group, access_key, s, ctx.rng());
                for ((v, key), pi) in verifiers.iter().zip(&keys).zip(&proofs) {
                    let req = wire::AccessRequest {
                        request_id: u64::from(own),
                        key_shares: key.shares.clone(),
                        proof_share: *pi,
                    };
                    ctx.send(*v, Payload::new(PayloadKind::Access(AccessMsg::Request(req))));
                }
            }
            _ => {
                let _ = own_key;
            }
        }
    }
}

fn send_auth_result(ctx: &mut Ctx<'_, Payload>, client: NodeId, round: &mut AuthRound) {
    let Some((token, accept)) = round.result_ready.clone() else { return };
    ctx.send(client, Payload::new(PayloadKind::Auth(AuthMsg::Result(wire::AuthResult { accept }))));
    ctx.send(
        client,
        Payload::new(PayloadKind::Auth(AuthMsg::Token(wire::TokenMsg {
            digest: token.digest,
            timestamp: token.timestamp,
        }))),
    );
    round.result_sent = true;
}

impl Actor for NodeActor {
    type Msg = Payload;

    fn on_event(&mut self, ctx: &mut Ctx<'_, Payload>, from: Option<NodeId>, msg: Payload) {
        match &*msg.0 {
            PayloadKind::Pbft(m) => {
                // Replies address the proposing client, not replicas.
                if let PbftNetMsg::Msg(w) = m {
                    if w.phase == PbftPhase::Reply {
                        if let Some(user) = self.user.as_mut() {
                            if let UserTask::Propose { client } = &mut user.task {
                                let mut env = PbftCtx { ctx, client_timer: true };
                                client.on_reply(&mut env, w.clone());
                                if user.completed_at.is_none() {
                                    user.completed_at = client.completed_at;
                                }
                            }
                        }
                        return;
                    }
                }
                self.run_replica(ctx, from, m.clone());
            }
            PayloadKind::ReplicaTimer(t) => self.run_replica_timer(ctx, *t),
            PayloadKind::ClientTimer(t) => {
                if let Some(user) = self.user.as_mut() {
                    if let UserTask::Propose { client } = &mut user.task {
                        let mut env = PbftCtx { ctx, client_timer: true };
                        client.on_timer(&mut env, *t);
                    }
                }
            }
            PayloadKind::Gossip(g) => {
                let deliveries = {
                    let Some(leader) = self.leader.as_mut() else { return };
                    let mut env = GossipCtx { ctx, cluster_deliveries: Vec::new() };
                    leader.on_msg(&mut env, from, g.clone());
                    env.cluster_deliveries
                };
                self.handle_cluster_deliveries(ctx, deliveries);
            }
            PayloadKind::Auth(a) => self.on_auth(ctx, from, a),
            PayloadKind::Access(a) => self.on_access(ctx, from, a),
            PayloadKind::Start(s) => self.on_start(ctx, *s),
        }
    }
}
