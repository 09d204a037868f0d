//! Experiment drivers: build a world from the configuration, run it, and
//! emit metrics rows stamped with the config hash and seed.
//!
//! Every run seeds its own ChaCha streams from the config seed and a
//! static tag, so a metrics file is a pure function of (config, seed).
//! A protocol assertion pass runs at the end of each simulation: cluster
//! chains must agree, users must end up authenticated or authorized, and
//! a truncated run is an error rather than a number.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::clustering::{self, ClusterAssignment, Label, NodeRecord, Role};
use crate::consensus::{
    assign_roles, select_leader, BlockProposal, Client, ClusterRoster, NodeStatus, Replica,
    ReplicaConfig, RosterEntry,
};
use crate::error::Error;
use crate::fss;
use crate::gossip::{Leader, LeaderDirectory, LeaderInfo};
use crate::group::Group;
use crate::harness::config::Config;
use crate::harness::ingest;
use crate::harness::synth;
use crate::harness::world::{
    encode_data_payload, node_key, AccessVerifier, AuthVerifier, NodeActor, Payload, PayloadKind,
    StartEvent, UserAgent, UserTask,
};
use crate::sim::{FaultClass, NodeId, SimDuration, SimTime, Simulator};
use crate::zkp::Credential;

/// Derive an independent seed for one named run.
pub fn run_seed(base: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(b"iob.run.seed");
    h.update(base.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Load the configured dataset, or synthesize one inside the bbox.
pub fn load_nodes(cfg: &Config) -> Result<Vec<NodeRecord>, Error> {
    match &cfg.dataset_path {
        Some(path) => {
            let file = std::fs::File::open(std::path::Path::new(path))?;
            let reader = std::io::BufReader::new(file);
            use std::io::BufRead;
            let report = ingest::ingest_lines_mode(
                reader.lines().map_while(Result::ok),
                &cfg.bbox,
                cfg.capability_min,
                cfg.capability_max,
                cfg.capability_mode,
                cfg.seed,
            )?;
            Ok(report.nodes)
        }
        None => {
            let rows = synth::generate_checkins(cfg.synthetic_count, &cfg.bbox, cfg.seed);
            let report = ingest::ingest_lines_mode(
                rows.into_iter(),
                &cfg.bbox,
                cfg.capability_min,
                cfg.capability_max,
                cfg.capability_mode,
                cfg.seed,
            )?;
            Ok(report.nodes)
        }
    }
}

/// Deterministic sample of `n` records.
pub fn sample_nodes(all: &[NodeRecord], n: usize, seed: u64) -> Result<Vec<NodeRecord>, Error> {
    if n > all.len() {
        return Err(Error::Experiment(format!(
            "need {n} nodes but the dataset holds {}",
            all.len()
        )));
    }
    let mut idx: Vec<usize> = (0..all.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for i in (1..idx.len()).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    Ok(idx[..n].iter().map(|&i| all[i].clone()).collect())
}

/// The clustered (or flat) system layout over a sampled node set.
pub struct SystemBuild {
    /// One entry per sampled record, in order; sim node id = index.
    pub records: Vec<NodeRecord>,
    /// Cluster membership (indices into `records`), dense ids.
    pub clusters: Vec<Vec<usize>>,
    pub cluster_of: Vec<u32>,
    pub rosters: Vec<ClusterRoster>,
    pub directory: LeaderDirectory,
    /// DBSCAN view before singleton promotion (empty for flat builds).
    pub dbscan: Option<ClusterAssignment>,
    pub single_cluster: bool,
}

impl SystemBuild {
    /// Largest cluster's share of all nodes.
    pub fn max_cluster_frac(&self) -> f64 {
        let max = self.clusters.iter().map(Vec::len).max().unwrap_or(0);
        max as f64 / self.records.len().max(1) as f64
    }
}

/// Group the sampled records into rosters: DBSCAN clusters plus singleton
/// clusters for noise when `clustered`, or one flat roster otherwise.
pub fn build_system(cfg: &Config, records: Vec<NodeRecord>, clustered: bool) -> Result<SystemBuild, Error> {
    let n = records.len();
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut dbscan = None;
    if clustered {
        let params = cfg.dbscan_params()?;
        let assignment = clustering::cluster(&records, &params);
        clusters = vec![Vec::new(); assignment.cluster_count as usize];
        let mut noise: Vec<usize> = Vec::new();
        for (i, label) in assignment.labels.iter().enumerate() {
            match label {
                Label::Cluster(c) => clusters[*c as usize].push(i),
                Label::Noise => noise.push(i),
            }
        }
        // Noise nodes still participate: each becomes its own cluster.
        noise.sort_by_key(|&i| records[i].id);
        for i in noise {
            clusters.push(vec![i]);
        }
        dbscan = Some(assignment);
    } else {
        clusters.push((0..n).collect());
    }

    let mut cluster_of = vec![0u32; n];
    for (c, members) in clusters.iter().enumerate() {
        for &i in members {
            cluster_of[i] = c as u32;
        }
    }

    let mut rosters = Vec::with_capacity(clusters.len());
    let mut leaders = Vec::new();
    for (c, members) in clusters.iter().enumerate() {
        let mut entries: Vec<RosterEntry> = members
            .iter()
            .map(|&i| RosterEntry {
                node: i as NodeId,
                key: node_key(cfg.seed, i as NodeId),
                lat_microdeg: (records[i].lat * 1e6).round() as i64,
                lon_microdeg: (records[i].lon * 1e6).round() as i64,
                status: NodeStatus::Active,
                role: Role::Unassigned,
            })
            .collect();
        let caps = members
            .iter()
            .map(|&i| (i as NodeId, records[i].capability))
            .collect();
        assign_roles(&mut entries, &caps, cfg.ca_fraction, cfg.ca_max);
        let roster = ClusterRoster::new(c as u32, entries);
        if let Some(leader) = roster.designated_leader() {
            let rec = &records[leader as usize];
            leaders.push(LeaderInfo {
                node: leader,
                cluster: c as u32,
                lat: rec.lat,
                lon: rec.lon,
                capability: rec.capability,
            });
        }
        rosters.push(roster);
    }

    Ok(SystemBuild {
        single_cluster: clusters.len() == 1,
        directory: LeaderDirectory::new(leaders),
        records,
        clusters,
        cluster_of,
        rosters,
        dbscan,
    })
}

fn make_sim(cfg: &Config, build: &SystemBuild, seed: u64, trace: bool) -> Simulator<NodeActor> {
    let group = Group::new(cfg.backend);
    let mut sim: Simulator<NodeActor> = Simulator::new(cfg.latency_model(), cfg.link_drop_rate, seed);
    sim.set_record_trace(trace);
    for (i, rec) in build.records.iter().enumerate() {
        let id = i as NodeId;
        let actor = NodeActor::new(id, group, cfg.costs.clone(), node_key(cfg.seed, id));
        sim.add_node(rec.lat, rec.lon, rec.capability, FaultClass::Honest, actor);
    }
    sim
}

fn replica_config(cfg: &Config) -> ReplicaConfig {
    ReplicaConfig {
        view_timeout: SimDuration(cfg.view_timeout_us),
        sign_cost: SimDuration(cfg.costs.mac_us),
        verify_cost: SimDuration(cfg.costs.mac_us),
    }
}

/// Descending capability, node id breaking ties.
fn rank_by_capability(records: &[NodeRecord], mut set: Vec<NodeId>) -> Vec<NodeId> {
    set.sort_by(|a, b| {
        let (ca, cb) = (records[*a as usize].capability, records[*b as usize].capability);
        cb.partial_cmp(&ca).unwrap().then(a.cmp(b))
    });
    set
}

/// An all-node pseudo-roster used only for nearby-leader selection.
fn selection_roster(records: &[NodeRecord]) -> ClusterRoster {
    let entries: Vec<RosterEntry> = records
        .iter()
        .enumerate()
        .map(|(i, r)| RosterEntry {
            node: i as NodeId,
            key: [0; 32],
            lat_microdeg: (r.lat * 1e6).round() as i64,
            lon_microdeg: (r.lon * 1e6).round() as i64,
            status: NodeStatus::Active,
            role: Role::Unassigned,
        })
        .collect();
    ClusterRoster::new(u32::MAX, entries)
}

/// Proposing users stand next to some piece of infrastructure: a random
/// sampled node plus a ~200 m offset.
fn user_position_near_node(
    cfg: &Config,
    records: &[NodeRecord],
    rng: &mut ChaCha20Rng,
) -> (f64, f64) {
    let anchor = &records[rng.gen_range(0..records.len())];
    let lat = (anchor.lat + rng.gen_range(-0.002..0.002)).clamp(cfg.bbox.0, cfg.bbox.1);
    let lon = (anchor.lon + rng.gen_range(-0.002..0.002)).clamp(cfg.bbox.2, cfg.bbox.3);
    (lat, lon)
}

/// Authentication and access users are pinned to the box center, which
/// always falls inside the dominant cluster: latency comparisons across
/// node counts then measure the protocol, not placement luck.
fn user_position_center(cfg: &Config) -> (f64, f64) {
    ((cfg.bbox.0 + cfg.bbox.1) / 2.0, (cfg.bbox.2 + cfg.bbox.3) / 2.0)
}

const RUN_CAP: SimTime = SimTime(3_600_000_000); // one simulated hour

/// Outcome of one consensus round.
pub struct ConsensusRound {
    pub completion_s: f64,
    pub total_msgs: u64,
    pub phase_msgs: u64,
}

/// Run one behavior-block round over the given layout and report the
/// proposer-request to last-member-commit span.
pub fn run_consensus_round(
    cfg: &Config,
    build: &SystemBuild,
    clustered: bool,
    tag: &str,
) -> Result<ConsensusRound, Error> {
    let seed = run_seed(cfg.seed, tag);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut sim = make_sim(cfg, build, seed, false);

    // Protocol roles.
    let rcfg = replica_config(cfg);
    for (c, roster) in build.rosters.iter().enumerate() {
        for &i in &build.clusters[c] {
            let id = i as NodeId;
            let actor = sim.actor_mut(id);
            actor.replica =
                Some(Replica::new(id, node_key(cfg.seed, id), roster.clone(), rcfg.clone()));
        }
    }
    if clustered {
        for info in &build.directory.leaders {
            let actor = sim.actor_mut(info.node);
            actor.leader =
                Some(Leader::new(info.node, build.directory.clone(), cfg.gossip_params()));
        }
    }

    // The proposing user.
    let (ulat, ulon) = user_position_near_node(cfg, &build.records, &mut rng);
    let user_id = sim.add_node(
        ulat,
        ulon,
        5.0,
        FaultClass::Honest,
        NodeActor::new(
            build.records.len() as NodeId,
            Group::new(cfg.backend),
            cfg.costs.clone(),
            node_key(cfg.seed, build.records.len() as NodeId),
        ),
    );
    let chosen = select_leader(ulat, ulon, &selection_roster(&build.records), &mut rng);
    let origin_roster = build.rosters[build.cluster_of[chosen as usize] as usize].clone();

    let mut payload = vec![0u8; 256];
    rng.fill(payload.as_mut_slice());
    let proposal =
        BlockProposal::new(encode_data_payload(&payload), node_key(cfg.seed, user_id), SimTime::ZERO);
    let digest = proposal.digest();
    let client = Client::new(
        user_id,
        origin_roster,
        proposal,
        chosen,
        SimDuration(cfg.view_timeout_us * 2),
    );
    sim.actor_mut(user_id).user =
        Some(UserAgent::new(UserTask::Propose { client: Box::new(client) }));
    sim.schedule_external(SimTime::ZERO, user_id, Payload::new(PayloadKind::Start(StartEvent::ProposeBlock)));

    let trace = sim.run_until_quiescent(RUN_CAP);
    if trace.truncated {
        return Err(Error::Experiment(format!("{tag}: run truncated")));
    }

    // Every node of every cluster must have stored the block.
    let mut last_commit = SimTime::ZERO;
    for (id, actor) in sim.actors() {
        let Some(replica) = actor.replica.as_ref() else { continue };
        match replica.chain.iter().find(|b| b.digest == digest) {
            Some(b) => last_commit = last_commit.max(b.commit_time),
            None => {
                return Err(Error::Experiment(format!(
                    "{tag}: node {id} never committed the block"
                )))
            }
        }
    }
    assert_cluster_chains_agree(&sim, build)?;

    let phase_msgs = trace.count_kind("PRE_PREPARE")
        + trace.count_kind("PREPARE")
        + trace.count_kind("COMMIT")
        + trace.count_kind("REPLY");
    Ok(ConsensusRound {
        completion_s: last_commit.as_secs_f64(),
        total_msgs: trace.total_messages(),
        phase_msgs,
    })
}

/// Per-cluster chain equality after quiescence.
fn assert_cluster_chains_agree(
    sim: &Simulator<NodeActor>,
    build: &SystemBuild,
) -> Result<(), Error> {
    for members in &build.clusters {
        let mut reference: Option<Vec<[u8; 32]>> = None;
        for &i in members {
            let actor = sim.actor(i as NodeId);
            let Some(replica) = actor.replica.as_ref() else { continue };
            let digests: Vec<[u8; 32]> = replica.chain.iter().map(|b| b.digest).collect();
            match &reference {
                None => reference = Some(digests),
                Some(r) => {
                    if *r != digests {
                        return Err(Error::Experiment(
                            "cluster members disagree on the chain".into(),
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}

pub struct ConsensusRow {
    pub n: usize,
    pub clustered: bool,
    pub time_s: f64,
    pub msg_count: u64,
    pub max_cluster_frac: f64,
    pub single_cluster: bool,
}

pub struct ExpOutput<Row> {
    pub rows: Vec<Row>,
    pub csv: String,
    pub meta: String,
}

fn meta_header(cfg: &Config, name: &str) -> String {
    let mut s = String::new();
    s.push_str(&format!("experiment={name}\n"));
    s.push_str(&format!("config_hash={}\n", cfg.hash()));
    s.push_str(&cfg.canonical_string());
    s
}

/// Flat versus clustered consensus timing across node counts.
pub fn exp_consensus(cfg: &Config) -> Result<ExpOutput<ConsensusRow>, Error> {
    let all = load_nodes(cfg)?;
    let hash = cfg.hash();
    let mut rows = Vec::new();
    let mut meta = meta_header(cfg, "consensus");
    for &n in &cfg.consensus_node_counts {
        let records = sample_nodes(&all, n, run_seed(cfg.seed, &format!("sample/{n}")))?;
        let flat = build_system(cfg, records.clone(), false)?;
        let clustered = build_system(cfg, records, true)?;
        if clustered.single_cluster {
            meta.push_str(&format!("warn.single_cluster_at_n={n}\n"));
        }
        meta.push_str(&format!(
            "n={n} clusters={} max_cluster_frac={:.4} noise={}\n",
            clustered.clusters.len(),
            clustered.max_cluster_frac(),
            clustered.dbscan.as_ref().map(|a| a.noise_count()).unwrap_or(0),
        ));
        for (build, is_clustered) in [(&flat, false), (&clustered, true)] {
            let mut total_time = 0.0;
            let mut total_msgs = 0u64;
            for p in 0..cfg.proposals_per_count {
                let tag = format!("consensus/{n}/{}/{p}", if is_clustered { "c" } else { "f" });
                let round = run_consensus_round(cfg, build, is_clustered, &tag)?;
                total_time += round.completion_s;
                total_msgs += round.total_msgs;
            }
            let k = cfg.proposals_per_count.max(1) as f64;
            rows.push(ConsensusRow {
                n,
                clustered: is_clustered,
                time_s: total_time / k,
                msg_count: (total_msgs as f64 / k).round() as u64,
                max_cluster_frac: clustered.max_cluster_frac(),
                single_cluster: clustered.single_cluster,
            });
        }
    }
    let mut csv = String::from("n,mode,time,msg_count,config_hash,seed\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{:.6},{},{},{}\n",
            r.n,
            if r.clustered { "clustered" } else { "flat" },
            r.time_s,
            r.msg_count,
            hash,
            cfg.seed
        ));
    }
    Ok(ExpOutput { rows, csv, meta })
}

/// One authentication wave: `users` concurrent requests in the given mode.
/// Returns per-user completion seconds.
pub fn run_auth_wave(
    cfg: &Config,
    build: &SystemBuild,
    clustered: bool,
    users: usize,
    tag: &str,
) -> Result<Vec<f64>, Error> {
    let seed = run_seed(cfg.seed, tag);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let group = Group::new(cfg.backend);
    let mut sim = make_sim(cfg, build, seed, false);
    let rcfg = replica_config(cfg);
    let selection = selection_roster(&build.records);
    let token_validity = SimDuration(cfg.token_validity_us);

    let mut user_ids = Vec::new();
    for _ in 0..users {
        let (ulat, ulon) = user_position_center(cfg);
        // The verifier set: CA nodes of the nearest node's cluster, or the
        // whole network when running unclustered.
        let verifier_set: Vec<NodeId> = if clustered {
            let nearest = select_leader(ulat, ulon, &selection, &mut rng);
            let roster = &build.rosters[build.cluster_of[nearest as usize] as usize];
            let cas: Vec<NodeId> = roster.ca_nodes().map(|e| e.node).collect();
            if cas.is_empty() {
                roster.node_ids().collect()
            } else {
                cas
            }
        } else {
            (0..build.records.len() as NodeId).collect()
        };
        // The most capable verifier fronts the set: it coordinates the
        // verdict round and answers the user.
        let verifier_set = rank_by_capability(&build.records, verifier_set);
        let q = verifier_set.len() as u32;
        let t = cfg.threshold_for(q);

        // The verdict consensus runs among the verifiers themselves.
        let verdict_roster = ClusterRoster::new(
            u32::MAX - 1,
            verifier_set
                .iter()
                .map(|&v| RosterEntry {
                    node: v,
                    key: node_key(cfg.seed, v),
                    lat_microdeg: (build.records[v as usize].lat * 1e6).round() as i64,
                    lon_microdeg: (build.records[v as usize].lon * 1e6).round() as i64,
                    status: NodeStatus::Active,
                    role: Role::Ca,
                })
                .collect(),
        );
        for &v in &verifier_set {
            let actor = sim.actor_mut(v);
            if actor.auth.is_none() {
                actor.auth = Some(AuthVerifier::new(verifier_set.clone(), t, token_validity));
                actor.replica = Some(Replica::new(
                    v,
                    node_key(cfg.seed, v),
                    verdict_roster.clone(),
                    rcfg.clone(),
                ));
            }
        }

        let credential = Credential::generate(&group, &mut rng);
        let user_idx = sim.node_count() as NodeId;
        let user_id = sim.add_node(
            ulat,
            ulon,
            5.0,
            FaultClass::Honest,
            NodeActor::new(user_idx, group, cfg.costs.clone(), node_key(cfg.seed, user_idx)),
        );
        sim.actor_mut(user_id).user = Some(UserAgent::new(UserTask::Auth {
            credential: Box::new(credential),
            verifiers: verifier_set,
            threshold: t,
        }));
        sim.schedule_external(
            SimTime::ZERO,
            user_id,
            Payload::new(PayloadKind::Start(StartEvent::StartAuth)),
        );
        user_ids.push(user_id);
    }

    let trace = sim.run_until_quiescent(RUN_CAP);
    if trace.truncated {
        return Err(Error::Experiment(format!("{tag}: run truncated")));
    }
    let mut times = Vec::with_capacity(users);
    for id in user_ids {
        let user = sim.actor(id).user.as_ref().expect("user agent");
        if user.accepted != Some(true) {
            return Err(Error::Experiment(format!("{tag}: user {id} not authenticated")));
        }
        let (Some(s), Some(e)) = (user.started_at, user.completed_at) else {
            return Err(Error::Experiment(format!("{tag}: user {id} never finished")));
        };
        times.push(e.saturating_sub(s).as_secs_f64());
    }
    Ok(times)
}

pub struct AuthRow {
    pub n: usize,
    pub clustered: bool,
    pub time_s: f64,
}

/// Authentication latency with and without clustering across node counts.
pub fn exp_auth(cfg: &Config) -> Result<ExpOutput<AuthRow>, Error> {
    let all = load_nodes(cfg)?;
    let hash = cfg.hash();
    let mut rows = Vec::new();
    let mut meta = meta_header(cfg, "auth");
    for &n in &cfg.auth_node_counts {
        let records = sample_nodes(&all, n, run_seed(cfg.seed, &format!("sample/{n}")))?;
        for clustered in [false, true] {
            let build = build_system(cfg, records.clone(), clustered)?;
            // Tag shape matches the multiuser experiment, so its one-user
            // wave replays the identical run.
            let tag = format!("auth/{n}/{}/u1", if clustered { "c" } else { "f" });
            let times = run_auth_wave(cfg, &build, clustered, 1, &tag)?;
            rows.push(AuthRow { n, clustered, time_s: times[0] });
            if clustered {
                meta.push_str(&format!(
                    "n={n} clusters={} max_cluster_frac={:.4}\n",
                    build.clusters.len(),
                    build.max_cluster_frac()
                ));
            }
        }
    }
    let mut csv = String::from("n,mode,time,config_hash,seed\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{:.6},{},{}\n",
            r.n,
            if r.clustered { "clustered" } else { "unclustered" },
            r.time_s,
            hash,
            cfg.seed
        ));
    }
    Ok(ExpOutput { rows, csv, meta })
}

pub struct MultiuserRow {
    pub users: usize,
    pub mean_s: f64,
    pub p95_s: f64,
}

/// Concurrent authentication waves at the configured node count.
pub fn exp_auth_multiuser(cfg: &Config) -> Result<ExpOutput<MultiuserRow>, Error> {
    let all = load_nodes(cfg)?;
    let hash = cfg.hash();
    let n = cfg.multiuser_node_count;
    let records = sample_nodes(&all, n, run_seed(cfg.seed, &format!("sample/{n}")))?;
    let build = build_system(cfg, records, true)?;
    let mut rows = Vec::new();
    let meta = meta_header(cfg, "auth-multiuser");
    for &users in &cfg.user_counts {
        if users == 0 {
            continue;
        }
        let tag = format!("auth/{n}/c/u{users}");
        let mut times = run_auth_wave(cfg, &build, true, users, &tag)?;
        debug_assert!(!times.is_empty());
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        let p95 = times[((times.len() as f64 * 0.95).ceil() as usize - 1).min(times.len() - 1)];
        rows.push(MultiuserRow { users, mean_s: mean, p95_s: p95 });
    }
    let mut csv = String::from("users,mean_time,p95_time,config_hash,seed\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{:.6},{:.6},{},{}\n",
            r.users, r.mean_s, r.p95_s, hash, cfg.seed
        ));
    }
    Ok(ExpOutput { rows, csv, meta })
}

pub struct AccessRow {
    pub domain: u32,
    pub item_size: usize,
    pub overhead_s: f64,
}

/// One access-control round against the CA set of the user's cluster.
pub fn run_access_round(
    cfg: &Config,
    build: &SystemBuild,
    domain: u32,
    item_size: usize,
    tag: &str,
) -> Result<f64, Error> {
    let seed = run_seed(cfg.seed, tag);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let group = Group::new(cfg.backend);
    let mut sim = make_sim(cfg, build, seed, false);

    let (ulat, ulon) = user_position_center(cfg);
    let nearest = select_leader(ulat, ulon, &selection_roster(&build.records), &mut rng);
    let roster = &build.rosters[build.cluster_of[nearest as usize] as usize];
    let mut verifier_set: Vec<NodeId> = roster.ca_nodes().map(|e| e.node).collect();
    if verifier_set.is_empty() {
        verifier_set = roster.node_ids().collect();
    }
    let verifier_set = rank_by_capability(&build.records, verifier_set);

    // Trusted ceremony: keys for every category, one handed to the user.
    let ceremony = fss::ceremony(&group, fss::default_labels(domain), &mut rng);
    let category = rng.gen_range(1..=domain);
    let access_key = fss::AccessKey {
        category,
        secret: ceremony.secrets[(category - 1) as usize],
    };
    for (j, &v) in verifier_set.iter().enumerate() {
        sim.actor_mut(v).access = Some(AccessVerifier::new(
            ceremony.acl.clone(),
            verifier_set.clone(),
            (j + 1) as u32,
            item_size,
        ));
    }

    let user_idx = sim.node_count() as NodeId;
    let user_id = sim.add_node(
        ulat,
        ulon,
        5.0,
        FaultClass::Honest,
        NodeActor::new(user_idx, group, cfg.costs.clone(), node_key(cfg.seed, user_idx)),
    );
    sim.actor_mut(user_id).user = Some(UserAgent::new(UserTask::Access {
        access_key,
        domain,
        verifiers: verifier_set,
    }));
    sim.schedule_external(
        SimTime::ZERO,
        user_id,
        Payload::new(PayloadKind::Start(StartEvent::StartAccess)),
    );

    let trace = sim.run_until_quiescent(RUN_CAP);
    if trace.truncated {
        return Err(Error::Experiment(format!("{tag}: run truncated")));
    }
    let user = sim.actor(user_id).user.as_ref().expect("user agent");
    if user.accepted != Some(true) {
        return Err(Error::Experiment(format!("{tag}: access denied to the key holder")));
    }
    let (Some(s), Some(e)) = (user.started_at, user.completed_at) else {
        return Err(Error::Experiment(format!("{tag}: access round never finished")));
    };
    Ok(e.saturating_sub(s).as_secs_f64())
}

/// Access-control overhead across database sizes and item sizes.
pub fn exp_access(cfg: &Config) -> Result<ExpOutput<AccessRow>, Error> {
    let all = load_nodes(cfg)?;
    let hash = cfg.hash();
    let n = cfg.access_node_count;
    let records = sample_nodes(&all, n, run_seed(cfg.seed, &format!("sample/{n}")))?;
    let build = build_system(cfg, records, true)?;
    let mut rows = Vec::new();
    let meta = meta_header(cfg, "access");
    for &domain in &cfg.db_sizes {
        for &item_size in &cfg.item_sizes {
            // The seed tag excludes the item size, so the 512B and 1024B
            // runs replay identical randomness and differ only in the
            // transported payload.
            let tag = format!("access/{domain}");
            let overhead = run_access_round(cfg, &build, domain, item_size, &tag)?;
            rows.push(AccessRow { domain, item_size, overhead_s: overhead });
        }
    }
    let mut csv = String::from("N,item_size,overhead,config_hash,seed\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{:.6},{},{}\n",
            r.domain, r.item_size, r.overhead_s, hash, cfg.seed
        ));
    }
    Ok(ExpOutput { rows, csv, meta })
}

/// The analytic transport delta between two item sizes: one extra
/// transmission of the difference on the item leg.
pub fn analytic_item_delta_s(cfg: &Config, small: usize, large: usize) -> f64 {
    let tx = |size: usize| (cfg.per_byte_us * (8 + size) as f64).round();
    (tx(large) - tx(small)) / 1e6
}
