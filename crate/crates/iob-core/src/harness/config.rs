//! Run configuration: a flat `key = value` text format with defaults.
//!
//! Unknown keys are rejected so typos fail loudly. The canonical string
//! (sorted `key=value` lines) feeds a SHA-256 config hash that is stamped
//! on every metrics row, making outputs attributable to an exact
//! configuration and seed.
//!
//! ```text
//! # exp/consensus.cfg
//! crypto.backend = test467
//! sim.seed = 42
//! exp.node_counts = 25,50,75,100,125
//! ```
//!
//! Crypto service times are part of the config rather than re-measured at
//! run time, so identical (config, seed) pairs replay identically; the
//! `iob calibrate` subcommand measures them on the host and prints the
//! lines to paste here.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::clustering::{DbscanParams, GeoMetric};
use crate::error::Error;
use crate::gossip::GossipParams;
use crate::group::Backend;
use crate::harness::ingest::CapabilityMode;
use crate::sim::{LatencyModel, SimDuration};

/// Injected service times for cryptographic work, in microseconds or
/// nanoseconds per term as named. Defaults were measured once on a
/// commodity x86-64 host with `iob calibrate` and then pinned.
#[derive(Debug, Clone)]
pub struct CryptoCostModel {
    pub scalar_mul_us: u64,
    pub combine_us: u64,
    pub hash_us: u64,
    pub mac_us: u64,
    /// Polynomial-evaluation term cost; share generation is q*t terms.
    pub share_ns_per_term: u64,
    /// Lagrange term cost; reconstruction is t^2 terms.
    pub recon_ns_per_term: u64,
    /// Vector-share term cost; key generation is N*s terms.
    pub dpf_ns_per_term: u64,
}

impl CryptoCostModel {
    pub fn share_gen_cost(&self, q: u64, t: u64) -> SimDuration {
        SimDuration(q * t * self.share_ns_per_term / 1000)
    }

    pub fn recon_cost(&self, t: u64) -> SimDuration {
        SimDuration(t * t * self.recon_ns_per_term / 1000)
    }

    pub fn dpf_gen_cost(&self, domain: u64, servers: u64) -> SimDuration {
        SimDuration(domain * servers * self.dpf_ns_per_term / 1000)
    }

    /// `local_verify` is one exponentiation per list entry plus the proof
    /// term.
    pub fn local_verify_cost(&self, domain: u64) -> SimDuration {
        SimDuration((domain + 1) * self.scalar_mul_us + domain * self.combine_us)
    }

    pub fn prove_cost(&self) -> SimDuration {
        SimDuration(self.scalar_mul_us + self.hash_us)
    }

    pub fn verify_cost(&self) -> SimDuration {
        SimDuration(2 * self.scalar_mul_us + self.combine_us + self.hash_us)
    }
}

/// Everything an experiment run needs, with defaults for each key.
#[derive(Debug, Clone)]
pub struct Config {
    pub backend: Backend,
    pub seed: u64,

    pub base_latency_us: u64,
    pub prop_us_per_km: f64,
    pub per_byte_us: f64,
    pub service_base_us: f64,
    pub jitter_max_us: u64,
    pub link_drop_rate: f64,

    pub eps1_m: f64,
    pub eps2: f64,
    pub minpts: usize,
    pub metric: GeoMetric,

    pub eps3_m: f64,
    pub fanout: usize,
    pub ttl: u32,
    pub probe_timeout_us: u64,

    pub gossip_round_interval_us: u64,

    pub token_validity_us: u64,
    pub ca_fraction: f64,
    pub ca_max: usize,
    /// Secret-recovery threshold divisor: t = ceil(q / divisor).
    pub threshold_divisor: u32,
    pub view_timeout_us: u64,

    pub costs: CryptoCostModel,

    pub consensus_node_counts: Vec<usize>,
    pub auth_node_counts: Vec<usize>,
    pub user_counts: Vec<usize>,
    pub multiuser_node_count: usize,
    pub access_node_count: usize,
    pub db_sizes: Vec<u32>,
    pub item_sizes: Vec<usize>,
    pub proposals_per_count: usize,

    pub dataset_path: Option<String>,
    pub synthetic_count: usize,
    pub capability_min: f64,
    pub capability_max: f64,
    pub capability_mode: CapabilityMode,
    /// lat_min, lat_max, lon_min, lon_max.
    pub bbox: (f64, f64, f64, f64),
}

impl Default for Config {
    fn default() -> Config {
        Config {
            backend: Backend::Prod,
            seed: 42,
            base_latency_us: 50,
            prop_us_per_km: 5.0,
            per_byte_us: 0.08,
            service_base_us: 2000.0,
            jitter_max_us: 100,
            link_drop_rate: 0.0,
            eps1_m: 30_000.0,
            eps2: 3.5,
            minpts: 3,
            metric: GeoMetric::Haversine,
            eps3_m: 90_000.0,
            fanout: 3,
            ttl: 10,
            probe_timeout_us: 50_000,
            gossip_round_interval_us: 10_000,
            token_validity_us: 86_400_000_000,
            ca_fraction: 0.25,
            ca_max: 16,
            threshold_divisor: 4,
            view_timeout_us: 60_000_000,
            costs: CryptoCostModel {
                scalar_mul_us: 80,
                combine_us: 5,
                hash_us: 1,
                mac_us: 2,
                share_ns_per_term: 50,
                recon_ns_per_term: 50,
                dpf_ns_per_term: 50,
            },
            consensus_node_counts: vec![25, 50, 75, 100, 125],
            auth_node_counts: vec![100, 500, 1000, 2000],
            user_counts: vec![1, 2, 4, 8, 16, 32],
            multiuser_node_count: 500,
            access_node_count: 100,
            db_sizes: vec![8, 16, 32, 64, 128, 256, 512, 1024],
            item_sizes: vec![512, 1024],
            proposals_per_count: 3,
            dataset_path: None,
            synthetic_count: 6000,
            capability_min: 1.0,
            capability_max: 10.0,
            capability_mode: CapabilityMode::Uniform,
            bbox: (39.433333, 41.05, 115.416666, 117.50),
        }
    }
}

fn parse_list_usize(v: &str) -> Result<Vec<usize>, Error> {
    v.split(',')
        .map(|x| {
            x.trim()
                .parse::<usize>()
                .map_err(|e| Error::Config(format!("bad list entry `{x}`: {e}")))
        })
        .collect()
}

fn parse_list_u32(v: &str) -> Result<Vec<u32>, Error> {
    v.split(',')
        .map(|x| {
            x.trim()
                .parse::<u32>()
                .map_err(|e| Error::Config(format!("bad list entry `{x}`: {e}")))
        })
        .collect()
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Config, Error> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_overrides(&text)
    }

    /// Parse `key = value` lines over the defaults. `#` starts a comment.
    pub fn from_str_overrides(text: &str) -> Result<Config, Error> {
        let mut cfg = Config::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected `key = value`", lineno + 1)));
            };
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Error> {
        let bad = |e: std::num::ParseIntError| Error::Config(format!("{key}: {e}"));
        let badf = |e: std::num::ParseFloatError| Error::Config(format!("{key}: {e}"));
        match key {
            "crypto.backend" => self.backend = Backend::parse(value)?,
            "sim.seed" => self.seed = value.parse().map_err(bad)?,
            "sim.base_latency_us" => self.base_latency_us = value.parse().map_err(bad)?,
            "sim.prop_us_per_km" => self.prop_us_per_km = value.parse().map_err(badf)?,
            "sim.per_byte_us" => self.per_byte_us = value.parse().map_err(badf)?,
            "sim.service_base_us" => self.service_base_us = value.parse().map_err(badf)?,
            "sim.jitter_max_us" => self.jitter_max_us = value.parse().map_err(bad)?,
            "sim.link_drop_rate" => self.link_drop_rate = value.parse().map_err(badf)?,
            "dbscan.eps1_m" => self.eps1_m = value.parse().map_err(badf)?,
            "dbscan.eps2" => self.eps2 = value.parse().map_err(badf)?,
            "dbscan.minpts" => self.minpts = value.parse().map_err(bad)?,
            "geo.metric" => self.metric = GeoMetric::parse(value)?,
            "gossip.eps3_m" => self.eps3_m = value.parse().map_err(badf)?,
            "gossip.fanout" => self.fanout = value.parse().map_err(bad)?,
            "gossip.ttl" => self.ttl = value.parse().map_err(bad)?,
            "gossip.probe_timeout_us" => self.probe_timeout_us = value.parse().map_err(bad)?,
            "gossip.round_interval_us" => {
                self.gossip_round_interval_us = value.parse().map_err(bad)?
            }
            "auth.token_validity_us" => self.token_validity_us = value.parse().map_err(bad)?,
            "auth.ca_fraction" => self.ca_fraction = value.parse().map_err(badf)?,
            "auth.ca_max" => self.ca_max = value.parse().map_err(bad)?,
            "auth.threshold_divisor" => self.threshold_divisor = value.parse().map_err(bad)?,
            "consensus.view_timeout_us" => self.view_timeout_us = value.parse().map_err(bad)?,
            "cost.scalar_mul_us" => self.costs.scalar_mul_us = value.parse().map_err(bad)?,
            "cost.combine_us" => self.costs.combine_us = value.parse().map_err(bad)?,
            "cost.hash_us" => self.costs.hash_us = value.parse().map_err(bad)?,
            "cost.mac_us" => self.costs.mac_us = value.parse().map_err(bad)?,
            "cost.share_ns_per_term" => {
                self.costs.share_ns_per_term = value.parse().map_err(bad)?
            }
            "cost.recon_ns_per_term" => {
                self.costs.recon_ns_per_term = value.parse().map_err(bad)?
            }
            "cost.dpf_ns_per_term" => self.costs.dpf_ns_per_term = value.parse().map_err(bad)?,
            "exp.consensus_node_counts" => self.consensus_node_counts = parse_list_usize(value)?,
            "exp.auth_node_counts" => self.auth_node_counts = parse_list_usize(value)?,
            "exp.user_counts" => self.user_counts = parse_list_usize(value)?,
            "exp.multiuser_node_count" => {
                self.multiuser_node_count = value.parse().map_err(bad)?
            }
            "exp.access_node_count" => self.access_node_count = value.parse().map_err(bad)?,
            "exp.db_sizes" => self.db_sizes = parse_list_u32(value)?,
            "exp.item_sizes" => self.item_sizes = parse_list_usize(value)?,
            "exp.proposals_per_count" => {
                self.proposals_per_count = value.parse().map_err(bad)?
            }
            "dataset.path" => self.dataset_path = Some(value.to_string()),
            "dataset.synthetic_count" => self.synthetic_count = value.parse().map_err(bad)?,
            "dataset.capability_min" => self.capability_min = value.parse().map_err(badf)?,
            "dataset.capability_max" => self.capability_max = value.parse().map_err(badf)?,
            "dataset.capability_mode" => self.capability_mode = CapabilityMode::parse(value)?,
            "bbox" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|x| x.trim().parse::<f64>().map_err(badf))
                    .collect::<Result<_, _>>()?;
                if parts.len() != 4 {
                    return Err(Error::Config("bbox needs lat1,lat2,lon1,lon2".into()));
                }
                self.bbox = (parts[0], parts[1], parts[2], parts[3]);
            }
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn dbscan_params(&self) -> Result<DbscanParams, Error> {
        DbscanParams::new(self.eps1_m, self.eps2, self.minpts, self.metric)
    }

    pub fn latency_model(&self) -> LatencyModel {
        LatencyModel {
            base_us: self.base_latency_us,
            prop_us_per_km: self.prop_us_per_km,
            per_byte_us: self.per_byte_us,
            service_base_us: self.service_base_us,
            jitter_max_us: self.jitter_max_us,
        }
    }

    pub fn gossip_params(&self) -> GossipParams {
        GossipParams {
            eps3_m: self.eps3_m,
            fanout: self.fanout,
            ttl: self.ttl,
            probe_timeout: SimDuration(self.probe_timeout_us),
            round_interval: SimDuration(self.gossip_round_interval_us),
        }
    }

    pub fn threshold_for(&self, q: u32) -> u32 {
        q.div_ceil(self.threshold_divisor).max(1)
    }

    /// Sorted `key=value` lines; the basis of the config hash and the run
    /// metadata dump.
    pub fn canonical_string(&self) -> String {
        let mut kv: BTreeMap<&'static str, String> = BTreeMap::new();
        kv.insert("crypto.backend", self.backend.name().to_string());
        kv.insert("sim.seed", self.seed.to_string());
        kv.insert("sim.base_latency_us", self.base_latency_us.to_string());
        kv.insert("sim.prop_us_per_km", format!("{}", self.prop_us_per_km));
        kv.insert("sim.per_byte_us", format!("{}", self.per_byte_us));
        kv.insert("sim.service_base_us", format!("{}", self.service_base_us));
        kv.insert("sim.jitter_max_us", self.jitter_max_us.to_string());
        kv.insert("sim.link_drop_rate", format!("{}", self.link_drop_rate));
        kv.insert("dbscan.eps1_m", format!("{}", self.eps1_m));
        kv.insert("dbscan.eps2", format!("{}", self.eps2));
        kv.insert("dbscan.minpts", self.minpts.to_string());
        kv.insert(
            "geo.metric",
            match self.metric {
                GeoMetric::Haversine => "haversine".into(),
                GeoMetric::PlanarEuclid => "planar".into(),
            },
        );
        kv.insert("gossip.eps3_m", format!("{}", self.eps3_m));
        kv.insert("gossip.fanout", self.fanout.to_string());
        kv.insert("gossip.ttl", self.ttl.to_string());
        kv.insert("gossip.probe_timeout_us", self.probe_timeout_us.to_string());
        kv.insert("gossip.round_interval_us", self.gossip_round_interval_us.to_string());
        kv.insert("auth.token_validity_us", self.token_validity_us.to_string());
        kv.insert("auth.ca_fraction", format!("{}", self.ca_fraction));
        kv.insert("auth.ca_max", self.ca_max.to_string());
        kv.insert("auth.threshold_divisor", self.threshold_divisor.to_string());
        kv.insert("consensus.view_timeout_us", self.view_timeout_us.to_string());
        kv.insert("cost.scalar_mul_us", self.costs.scalar_mul_us.to_string());
        kv.insert("cost.combine_us", self.costs.combine_us.to_string());
        kv.insert("cost.hash_us", self.costs.hash_us.to_string());
        kv.insert("cost.mac_us", self.costs.mac_us.to_string());
        kv.insert("cost.share_ns_per_term", self.costs.share_ns_per_term.to_string());
        kv.insert("cost.recon_ns_per_term", self.costs.recon_ns_per_term.to_string());
        kv.insert("cost.dpf_ns_per_term", self.costs.dpf_ns_per_term.to_string());
        kv.insert(
            "exp.consensus_node_counts",
            self.consensus_node_counts.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
        );
        kv.insert(
            "exp.auth_node_counts",
            self.auth_node_counts.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
        );
        kv.insert(
            "exp.user_counts",
            self.user_counts.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
        );
        kv.insert("exp.multiuser_node_count", self.multiuser_node_count.to_string());
        kv.insert("exp.access_node_count", self.access_node_count.to_string());
        kv.insert(
            "exp.db_sizes",
            self.db_sizes.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
        );
        kv.insert(
            "exp.item_sizes",
            self.item_sizes.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
        );
        kv.insert("exp.proposals_per_count", self.proposals_per_count.to_string());
        kv.insert("dataset.path", self.dataset_path.clone().unwrap_or_else(|| "-".into()));
        kv.insert("dataset.synthetic_count", self.synthetic_count.to_string());
        kv.insert("dataset.capability_min", format!("{}", self.capability_min));
        kv.insert("dataset.capability_max", format!("{}", self.capability_max));
        kv.insert("dataset.capability_mode", self.capability_mode.name().to_string());
        kv.insert(
            "bbox",
            format!("{},{},{},{}", self.bbox.0, self.bbox.1, self.bbox.2, self.bbox.3),
        );
        let mut out = String::new();
        for (k, v) in kv {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// First 16 hex chars of the canonical-config SHA-256.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.canonical_string().as_bytes());
        hex::encode(h.finalize())[..16].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_canonical_string() {
        let cfg = Config::default();
        let text = cfg
            .canonical_string()
            .lines()
            .filter(|l| !l.starts_with("dataset.path=-"))
            .collect::<Vec<_>>()
            .join("\n");
        let reparsed = Config::from_str_overrides(&text)
            .unwrap_or_else(|e| panic!("canonical string must reparse: {e}"));
        assert_eq!(cfg.hash(), reparsed.hash());
    }

    #[test]
    fn overrides_apply_and_unknown_keys_fail() {
        let cfg = Config::from_str_overrides(
            "crypto.backend = test467\nsim.seed = 7\nexp.db_sizes = 8,16\n# comment\n",
        )
        .unwrap();
        assert_eq!(cfg.backend, Backend::Test467);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.db_sizes, vec![8, 16]);
        assert!(Config::from_str_overrides("no.such.key = 1\n").is_err());
        assert!(Config::from_str_overrides("sim.seed off\n").is_err());
    }

    #[test]
    fn hash_is_sensitive_to_field_changes() {
        let base = Config::default().hash();
        let mut cfg = Config::default();
        cfg.set("sim.seed", "43").unwrap();
        assert_ne!(cfg.hash(), base);
        let mut cfg = Config::default();
        cfg.set("dbscan.eps2", "2.75").unwrap();
        assert_ne!(cfg.hash(), base);
    }

    #[test]
    fn threshold_follows_quarter_rule() {
        let cfg = Config::default();
        assert_eq!(cfg.threshold_for(1), 1);
        assert_eq!(cfg.threshold_for(8), 2);
        assert_eq!(cfg.threshold_for(100), 25);
        assert_eq!(cfg.threshold_for(2000), 500);
    }
}
