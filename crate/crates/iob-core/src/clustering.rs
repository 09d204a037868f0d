//! Dual-metric density clustering of edge-server nodes.
//!
//! Nodes cluster when they are close both geographically (within `eps1`
//! meters) and in communication capability (within `eps2`). A node is a
//! core when its dual neighborhood holds at least `minpts` nodes; clusters
//! are the connected components of cores plus their border nodes.
//!
//! The classical algorithm leaves border assignment dependent on visit
//! order. Here the whole labeling is canonical: components are numbered by
//! their smallest member node id and border nodes attach to the lowest
//! cluster id that can reach them, so the partition is a pure function of
//! the node set and parameters, independent of input order.

use std::collections::BTreeMap;

use crate::error::Error;

/// Mean-earth-radius sphere used for geographic distances.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Leader,
    Secondary,
    Ca,
    Unassigned,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Leader => "leader",
            Role::Secondary => "secondary",
            Role::Ca => "ca",
            Role::Unassigned => "unassigned",
        }
    }
}

/// One simulated edge server.
#[derive(Debug, Clone)]
pub struct NodeRecord {
    pub id: u64,
    pub lat: f64,
    pub lon: f64,
    /// Abstract communication-capability units, >= 0.
    pub capability: f64,
    pub role: Role,
}

impl NodeRecord {
    pub fn new(id: u64, lat: f64, lon: f64, capability: f64) -> Result<NodeRecord, Error> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::Config(format!(
                "node {id}: lat/lon ({lat}, {lon}) out of range"
            )));
        }
        if !capability.is_finite() || capability < 0.0 {
            return Err(Error::Config(format!("node {id}: capability must be >= 0")));
        }
        Ok(NodeRecord { id, lat, lon, capability, role: Role::Unassigned })
    }
}

/// Geographic distance mode. Haversine is the default; the planar mode is
/// an equirectangular approximation kept for sensitivity runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeoMetric {
    Haversine,
    PlanarEuclid,
}

impl GeoMetric {
    pub fn parse(s: &str) -> Result<GeoMetric, Error> {
        match s {
            "haversine" => Ok(GeoMetric::Haversine),
            "planar" => Ok(GeoMetric::PlanarEuclid),
            other => Err(Error::Config(format!("unknown geo.metric `{other}`"))),
        }
    }
}

/// Great-circle distance in meters.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = (lat2 - lat1).to_radians();
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

/// Equirectangular planar approximation in meters.
pub fn planar_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let mean_lat = ((lat1 + lat2) / 2.0).to_radians();
    let dx = (lon2 - lon1).to_radians() * mean_lat.cos() * EARTH_RADIUS_M;
    let dy = (lat2 - lat1).to_radians() * EARTH_RADIUS_M;
    (dx * dx + dy * dy).sqrt()
}

pub fn geo_distance_m(metric: GeoMetric, a: &NodeRecord, b: &NodeRecord) -> f64 {
    match metric {
        GeoMetric::Haversine => haversine_m(a.lat, a.lon, b.lat, b.lon),
        GeoMetric::PlanarEuclid => planar_m(a.lat, a.lon, b.lat, b.lon),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DbscanParams {
    /// Spatial radius in meters.
    pub eps1_m: f64,
    /// Capability-distance radius.
    pub eps2: f64,
    /// Minimum dual-neighborhood size (self included) for a core node.
    pub minpts: usize,
    pub metric: GeoMetric,
}

impl DbscanParams {
    pub fn new(eps1_m: f64, eps2: f64, minpts: usize, metric: GeoMetric) -> Result<Self, Error> {
        if eps1_m <= 0.0 || eps2 <= 0.0 {
            return Err(Error::Config("eps1 and eps2 must be positive".into()));
        }
        if minpts == 0 {
            return Err(Error::Config("minpts must be at least 1".into()));
        }
        Ok(DbscanParams { eps1_m, eps2, minpts, metric })
    }
}

/// Cluster label of one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Cluster(u32),
    Noise,
}

impl Label {
    /// Noise encodes as -1 in CSV exports.
    pub fn csv_value(self) -> i64 {
        match self {
            Label::Cluster(c) => i64::from(c),
            Label::Noise => -1,
        }
    }
}

/// Result of a clustering pass: one label per input node, in input order.
#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    pub labels: Vec<Label>,
    pub cluster_count: u32,
}

impl ClusterAssignment {
    pub fn label_by_id(&self, nodes: &[NodeRecord]) -> BTreeMap<u64, Label> {
        nodes.iter().zip(&self.labels).map(|(n, l)| (n.id, *l)).collect()
    }

    /// Member indices per cluster id.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cluster_count as usize];
        for (i, l) in self.labels.iter().enumerate() {
            if let Label::Cluster(c) = l {
                out[*c as usize].push(i);
            }
        }
        out
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| **l == Label::Noise).count()
    }

    pub fn max_cluster_size(&self) -> usize {
        self.members().iter().map(Vec::len).max().unwrap_or(0)
    }

    /// CSV export, `node_id,cluster_id,role`, rows in input order.
    pub fn to_csv(&self, nodes: &[NodeRecord]) -> String {
        let mut s = String::from("node_id,cluster_id,role\n");
        for (n, l) in nodes.iter().zip(&self.labels) {
            s.push_str(&format!("{},{},{}\n", n.id, l.csv_value(), n.role.as_str()));
        }
        s
    }
}

/// Indices of all nodes within both radii of `node`, including itself.
pub fn dual_neighborhood(
    node_idx: usize,
    nodes: &[NodeRecord],
    params: &DbscanParams,
) -> Vec<usize> {
    let n = &nodes[node_idx];
    nodes
        .iter()
        .enumerate()
        .filter(|(_, m)| {
            (n.capability - m.capability).abs() <= params.eps2
                && geo_distance_m(params.metric, n, m) <= params.eps1_m
        })
        .map(|(j, _)| j)
        .collect()
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Dual-metric DBSCAN over the node set.
pub fn cluster(nodes: &[NodeRecord], params: &DbscanParams) -> ClusterAssignment {
    let n = nodes.len();
    if n == 0 {
        return ClusterAssignment { labels: Vec::new(), cluster_count: 0 };
    }

    let neighborhoods: Vec<Vec<usize>> =
        (0..n).map(|i| dual_neighborhood(i, nodes, params)).collect();
    let is_core: Vec<bool> = neighborhoods.iter().map(|nb| nb.len() >= params.minpts).collect();

    // Density-connect the cores.
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        if !is_core[i] {
            continue;
        }
        for &j in &neighborhoods[i] {
            if is_core[j] {
                uf.union(i, j);
            }
        }
    }

    // Number components by their smallest member node id, which makes the
    // labeling independent of input order.
    let mut comp_min_id: BTreeMap<usize, u64> = BTreeMap::new();
    for i in 0..n {
        if is_core[i] {
            let root = uf.find(i);
            let e = comp_min_id.entry(root).or_insert(nodes[i].id);
            *e = (*e).min(nodes[i].id);
        }
    }
    let mut roots: Vec<(u64, usize)> = comp_min_id.iter().map(|(r, id)| (*id, *r)).collect();
    roots.sort_unstable();
    let cluster_of_root: BTreeMap<usize, u32> =
        roots.iter().enumerate().map(|(c, (_, r))| (*r, c as u32)).collect();

    let mut labels = vec![Label::Noise; n];
    for i in 0..n {
        if is_core[i] {
            labels[i] = Label::Cluster(cluster_of_root[&uf.find(i)]);
        }
    }
    // Border nodes attach to the lowest cluster id among reachable cores.
    for i in 0..n {
        if is_core[i] {
            continue;
        }
        let mut best: Option<u32> = None;
        for &j in &neighborhoods[i] {
            if is_core[j] {
                let c = cluster_of_root[&uf.find(j)];
                best = Some(best.map_or(c, |b: u32| b.min(c)));
            }
        }
        if let Some(c) = best {
            labels[i] = Label::Cluster(c);
        }
    }

    ClusterAssignment { labels, cluster_count: roots.len() as u32 }
}
