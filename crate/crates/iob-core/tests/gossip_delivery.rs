//! Inter-cluster dissemination coverage: 23 leaders, fanout 3, across
//! seeds, with and without crash faults, plus delivery-shape properties.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use iob_core::clustering::Role;
use iob_core::consensus::{
    BlockProposal, Client, ClusterRoster, NodeStatus, Replica, ReplicaConfig, RosterEntry,
};
use iob_core::gossip::{GossipParams, Leader, LeaderDirectory, LeaderInfo};
use iob_core::group::{Backend, Group};
use iob_core::harness::config::CryptoCostModel;
use iob_core::harness::world::{
    encode_data_payload, node_key, NodeActor, Payload, PayloadKind, StartEvent, UserAgent,
    UserTask,
};
use iob_core::sim::{FaultClass, LatencyModel, NodeId, SimDuration, SimTime, Simulator};

fn costs() -> CryptoCostModel {
    CryptoCostModel {
        scalar_mul_us: 0,
        combine_us: 0,
        hash_us: 0,
        mac_us: 1,
        share_ns_per_term: 0,
        recon_ns_per_term: 0,
        dpf_ns_per_term: 0,
    }
}

/// 23 leaders on a compact ring + center layout, all within eps3 of each
/// other, each fronting a singleton cluster.
fn leader_positions() -> Vec<(f64, f64)> {
    let mut pos = vec![(40.2, 116.4)];
    for ring in 0..2 {
        let count = 11;
        let radius = 0.15 + 0.1 * ring as f64;
        for k in 0..count {
            let angle = (k as f64 + 0.5 * ring as f64) / count as f64 * std::f64::consts::TAU;
            pos.push((40.2 + radius * angle.sin(), 116.4 + radius * angle.cos()));
        }
    }
    assert_eq!(pos.len(), 23);
    pos
}

struct RunResult {
    informed: usize,
    total_alive: usize,
    max_hops: u32,
    all_alive_informed: bool,
}

fn run_spread(seed: u64, crash_rate: f64, fanout: usize, ttl: u32) -> RunResult {
    let group = Group::new(Backend::Test467);
    let latency = LatencyModel {
        base_us: 50,
        prop_us_per_km: 5.0,
        per_byte_us: 0.05,
        service_base_us: 300.0,
        jitter_max_us: 60,
    };
    let positions = leader_positions();
    let mut crash_rng = ChaCha20Rng::seed_from_u64(seed ^ 0xC4A5_4C0D);
    let directory = LeaderDirectory::new(
        positions
            .iter()
            .enumerate()
            .map(|(i, (lat, lon))| LeaderInfo {
                node: i as NodeId,
                cluster: i as u32,
                lat: *lat,
                lon: *lon,
                capability: 5.0,
            })
            .collect(),
    );
    let params = GossipParams {
        eps3_m: 100_000.0,
        fanout,
        ttl,
        probe_timeout: SimDuration::from_micros(50_000),
        round_interval: SimDuration::from_micros(10_000),
    };

    let mut sim: Simulator<NodeActor> = Simulator::new(latency, 0.0, seed);
    let mut alive = vec![true; positions.len()];
    for (i, (lat, lon)) in positions.iter().enumerate() {
        let id = i as NodeId;
        let crashed = i != 0 && crash_rng.gen::<f64>() < crash_rate;
        alive[i] = !crashed;
        let fault = if crashed { FaultClass::Crash { at: SimTime::ZERO } } else { FaultClass::Honest };
        let roster = ClusterRoster::new(
            i as u32,
            vec![RosterEntry {
                node: id,
                key: node_key(seed, id),
                lat_microdeg: (lat * 1e6) as i64,
                lon_microdeg: (lon * 1e6) as i64,
                status: NodeStatus::Active,
                role: Role::Leader,
            }],
        );
        let mut actor = NodeActor::new(id, group, costs(), node_key(seed, id));
        actor.replica = Some(Replica::new(id, node_key(seed, id), roster, ReplicaConfig {
            view_timeout: SimDuration::from_micros(10_000_000),
            sign_cost: SimDuration::ZERO,
            verify_cost: SimDuration::ZERO,
        }));
        actor.leader = Some(Leader::new(id, directory.clone(), params.clone()));
        sim.add_node(*lat, *lon, 5.0, fault, actor);
    }

    // A client proposes through leader 0; its singleton commit starts the
    // spread.
    let client_id = positions.len() as NodeId;
    let origin_roster = ClusterRoster::new(
        0,
        vec![RosterEntry {
            node: 0,
            key: node_key(seed, 0),
            lat_microdeg: (positions[0].0 * 1e6) as i64,
            lon_microdeg: (positions[0].1 * 1e6) as i64,
            status: NodeStatus::Active,
            role: Role::Leader,
        }],
    );
    let proposal = BlockProposal::new(
        encode_data_payload(b"spread me"),
        node_key(seed, client_id),
        SimTime::ZERO,
    );
    let digest = proposal.digest();
    let client =
        Client::new(client_id, origin_roster, proposal, 0, SimDuration::from_micros(10_000_000));
    let mut actor = NodeActor::new(client_id, group, costs(), node_key(seed, client_id));
    actor.user = Some(UserAgent::new(UserTask::Propose { client: Box::new(client) }));
    sim.add_node(40.2, 116.4, 5.0, FaultClass::Honest, actor);
    sim.schedule_external(
        SimTime::ZERO,
        client_id,
        Payload::new(PayloadKind::Start(StartEvent::ProposeBlock)),
    );

    let trace = sim.run_until_quiescent(SimTime(600_000_000));
    assert!(!trace.truncated);

    let mut informed = 0;
    let mut max_hops = 0;
    let mut total_alive = 0;
    let mut all_alive_informed = true;
    for (id, actor) in sim.actors() {
        if id as usize >= positions.len() {
            continue;
        }
        if !alive[id as usize] {
            continue;
        }
        total_alive += 1;
        let leader = actor.leader.as_ref().expect("leader role");
        match leader.seen.get(&digest) {
            Some(receipt) => {
                informed += 1;
                max_hops = max_hops.max(receipt.hops);
            }
            None => all_alive_informed = false,
        }
    }
    RunResult { informed, total_alive, max_hops, all_alive_informed }
}

#[test]
fn single_cluster_is_trivially_complete() {
    // One leader, nobody to probe: the origin holds the block at hop 0.
    let r = run_spread_single();
    assert!(r);
}

fn run_spread_single() -> bool {
    let group = Group::new(Backend::Test467);
    let latency = LatencyModel {
        base_us: 50,
        prop_us_per_km: 5.0,
        per_byte_us: 0.05,
        service_base_us: 300.0,
        jitter_max_us: 0,
    };
    let mut sim: Simulator<NodeActor> = Simulator::new(latency, 0.0, 3);
    let directory = LeaderDirectory::new(vec![LeaderInfo {
        node: 0,
        cluster: 0,
        lat: 40.0,
        lon: 116.0,
        capability: 5.0,
    }]);
    let roster = ClusterRoster::new(
        0,
        vec![RosterEntry {
            node: 0,
            key: node_key(3, 0),
            lat_microdeg: 40_000_000,
            lon_microdeg: 116_000_000,
            status: NodeStatus::Active,
            role: Role::Leader,
        }],
    );
    let mut actor = NodeActor::new(0, group, costs(), node_key(3, 0));
    actor.replica = Some(Replica::new(0, node_key(3, 0), roster.clone(), ReplicaConfig::default()));
    actor.leader = Some(Leader::new(0, directory, GossipParams::default()));
    sim.add_node(40.0, 116.0, 5.0, FaultClass::Honest, actor);
    let proposal =
        BlockProposal::new(encode_data_payload(b"solo"), node_key(3, 1), SimTime::ZERO);
    let digest = proposal.digest();
    let client = Client::new(1, roster, proposal, 0, SimDuration::from_micros(1_000_000));
    let mut user = NodeActor::new(1, group, costs(), node_key(3, 1));
    user.user = Some(UserAgent::new(UserTask::Propose { client: Box::new(client) }));
    sim.add_node(40.0, 116.0, 5.0, FaultClass::Honest, user);
    sim.schedule_external(SimTime::ZERO, 1, Payload::new(PayloadKind::Start(StartEvent::ProposeBlock)));
    let trace = sim.run_until_quiescent(SimTime(600_000_000));
    assert!(!trace.truncated);
    let leader = sim.actor(0).leader.as_ref().unwrap();
    leader.seen.get(&digest).map(|r| r.hops == 0).unwrap_or(false)
}

#[test]
fn fault_free_spread_covers_all_leaders_over_100_seeds() {
    let budget = (3f64.ln().recip() * 23f64.ln()).ceil() as u32 + 2;
    for seed in 0..100 {
        let r = run_spread(seed, 0.0, 3, 10);
        assert_eq!(r.informed, 23, "seed {seed}: {} of 23 informed", r.informed);
        assert!(
            r.max_hops <= budget,
            "seed {seed}: max hops {} over budget {budget}",
            r.max_hops
        );
    }
}

#[test]
fn crash_faults_still_reach_survivors() {
    let mut informed_total = 0usize;
    let mut alive_total = 0usize;
    let mut complete_runs = 0usize;
    for seed in 0..100 {
        let r = run_spread(seed, 0.10, 3, 10);
        informed_total += r.informed;
        alive_total += r.total_alive;
        if r.all_alive_informed {
            complete_runs += 1;
        }
    }
    let coverage = informed_total as f64 / alive_total as f64;
    assert!(coverage >= 0.99, "survivor coverage {coverage}");
    assert!(complete_runs >= 90, "only {complete_runs} complete runs");
}
