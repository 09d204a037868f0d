//! Check-in dataset ingestion.
//!
//! Input rows are tab-separated `user_id, checkin_time, lat, lon,
//! location_id` (the Gowalla layout). Rows outside the bounding box are
//! dropped, surviving locations are deduplicated on `location_id` keeping
//! the first occurrence, and each location becomes a node with a seeded
//! synthetic communication capability, since check-in data has no such
//! dimension.

use std::io::BufRead;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::clustering::NodeRecord;
use crate::error::Error;

/// How synthetic communication capabilities are assigned to locations.
///
/// `Uniform` draws i.i.d. from `[min, max)`. `Spatial` evaluates a smooth
/// positional field (high near the box center, low toward the edges) plus
/// a small seeded jitter, so nearby infrastructure has similar capability,
/// which is what makes capability-aware clustering meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapabilityMode {
    Uniform,
    Spatial,
}

impl CapabilityMode {
    pub fn parse(s: &str) -> Result<CapabilityMode, Error> {
        match s {
            "uniform" => Ok(CapabilityMode::Uniform),
            "spatial" => Ok(CapabilityMode::Spatial),
            other => Err(Error::Config(format!("unknown capability mode `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CapabilityMode::Uniform => "uniform",
            CapabilityMode::Spatial => "spatial",
        }
    }
}

/// Smooth capability field over the unit square: a centered bump in
/// [0, 1], highest mid-box.
fn capability_field(lat01: f64, lon01: f64) -> f64 {
    let d2 = (lat01 - 0.5).powi(2) + (lon01 - 0.5).powi(2);
    0.10 + 0.90 * (-d2 / 0.09).exp()
}

#[derive(Debug, Clone)]
pub struct GowallaCheckin {
    pub user_id: u64,
    pub checkin_time: String,
    pub lat: f64,
    pub lon: f64,
    pub location_id: u64,
}

/// lat_min, lat_max, lon_min, lon_max.
pub type Bbox = (f64, f64, f64, f64);

pub fn bbox_contains(bbox: &Bbox, lat: f64, lon: f64) -> bool {
    lat >= bbox.0 && lat <= bbox.1 && lon >= bbox.2 && lon <= bbox.3
}

fn parse_row(line: &str) -> Option<GowallaCheckin> {
    let mut fields = line.split('\t');
    let user_id = fields.next()?.trim().parse().ok()?;
    let checkin_time = fields.next()?.trim().to_string();
    let lat: f64 = fields.next()?.trim().parse().ok()?;
    let lon: f64 = fields.next()?.trim().parse().ok()?;
    let location_id = fields.next()?.trim().parse().ok()?;
    if fields.next().is_some() || checkin_time.is_empty() {
        return None;
    }
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return None;
    }
    Some(GowallaCheckin { user_id, checkin_time, lat, lon, location_id })
}

/// Outcome of an ingest pass.
#[derive(Debug)]
pub struct IngestReport {
    pub nodes: Vec<NodeRecord>,
    pub rows_read: u64,
    pub rows_malformed: u64,
    pub rows_outside_bbox: u64,
    pub rows_duplicate: u64,
}

/// Stream a check-in file into deduplicated nodes inside `bbox`.
///
/// Capabilities are drawn uniformly from `[cap_min, cap_max)` in file
/// order under the given seed, so the same file and seed always produce
/// the same node set. Malformed rows are skipped and counted; an empty
/// result is an error.
pub fn ingest(
    path: &Path,
    bbox: &Bbox,
    cap_min: f64,
    cap_max: f64,
    seed: u64,
) -> Result<IngestReport, Error> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    ingest_lines(reader.lines().map_while(Result::ok), bbox, cap_min, cap_max, seed)
}

pub fn ingest_lines<I: Iterator<Item = String>>(
    lines: I,
    bbox: &Bbox,
    cap_min: f64,
    cap_max: f64,
    seed: u64,
) -> Result<IngestReport, Error> {
    ingest_lines_mode(lines, bbox, cap_min, cap_max, CapabilityMode::Uniform, seed)
}

pub fn ingest_lines_mode<I: Iterator<Item = String>>(
    lines: I,
    bbox: &Bbox,
    cap_min: f64,
    cap_max: f64,
    mode: CapabilityMode,
    seed: u64,
) -> Result<IngestReport, Error> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut seen = std::collections::BTreeSet::new();
    let mut report = IngestReport {
        nodes: Vec::new(),
        rows_read: 0,
        rows_malformed: 0,
        rows_outside_bbox: 0,
        rows_duplicate: 0,
    };
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        report.rows_read += 1;
        let Some(row) = parse_row(&line) else {
            report.rows_malformed += 1;
            continue;
        };
        if !bbox_contains(bbox, row.lat, row.lon) {
            report.rows_outside_bbox += 1;
            continue;
        }
        if !seen.insert(row.location_id) {
            report.rows_duplicate += 1;
            continue;
        }
        let capability = match mode {
            CapabilityMode::Uniform => rng.gen_range(cap_min..cap_max),
            CapabilityMode::Spatial => {
                let lat01 = (row.lat - bbox.0) / (bbox.1 - bbox.0).max(1e-12);
                let lon01 = (row.lon - bbox.2) / (bbox.3 - bbox.2).max(1e-12);
                let u = capability_field(lat01, lon01);
                let jitter = rng.gen_range(-0.5..0.5);
                (cap_min + (cap_max - cap_min) * u + jitter).clamp(cap_min, cap_max)
            }
        };
        report.nodes.push(
            NodeRecord::new(row.location_id, row.lat, row.lon, capability)
                .expect("row validated above"),
        );
    }
    if report.nodes.is_empty() {
        return Err(Error::Ingest("no nodes inside the bounding box".into()));
    }
    Ok(report)
}

/// Node-set CSV: `node_id,lat,lon,capability`.
pub fn nodes_to_csv(nodes: &[NodeRecord]) -> String {
    let mut s = String::from("node_id,lat,lon,capability\n");
    for n in nodes {
        s.push_str(&format!("{},{},{},{}\n", n.id, n.lat, n.lon, n.capability));
    }
    s
}

pub fn nodes_from_csv(text: &str) -> Result<Vec<NodeRecord>, Error> {
    let mut lines = text.lines();
    match lines.next() {
        Some("node_id,lat,lon,capability") => {}
        other => {
            return Err(Error::Ingest(format!("unexpected node CSV header {other:?}")));
        }
    }
    let mut nodes = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::Ingest(format!("row {}: expected 4 columns", i + 2)));
        }
        let id = parts[0].parse().map_err(|e| Error::Ingest(format!("row {}: {e}", i + 2)))?;
        let lat = parts[1].parse().map_err(|e| Error::Ingest(format!("row {}: {e}", i + 2)))?;
        let lon = parts[2].parse().map_err(|e| Error::Ingest(format!("row {}: {e}", i + 2)))?;
        let cap = parts[3].parse().map_err(|e| Error::Ingest(format!("row {}: {e}", i + 2)))?;
        nodes.push(NodeRecord::new(id, lat, lon, cap)?);
    }
    Ok(nodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BEIJING: Bbox = (39.433333, 41.05, 115.416666, 117.50);

    fn row(user: u64, lat: f64, lon: f64, loc: u64) -> String {
        format!("{user}\t2010-10-19T23:55:27Z\t{lat}\t{lon}\t{loc}")
    }

    #[test]
    fn empty_input_is_an_error() {
        let r = ingest_lines(std::iter::empty(), &BEIJING, 1.0, 10.0, 1);
        assert!(r.is_err());
    }

    #[test]
    fn rows_outside_bbox_are_excluded() {
        let lines = vec![row(1, 40.0, 116.0, 100), row(2, 30.0, 116.0, 101)];
        let r = ingest_lines(lines.into_iter(), &BEIJING, 1.0, 10.0, 1).unwrap();
        assert_eq!(r.nodes.len(), 1);
        assert_eq!(r.rows_outside_bbox, 1);
        assert_eq!(r.nodes[0].id, 100);
    }

    #[test]
    fn duplicates_keep_first_occurrence() {
        let lines = vec![
            row(1, 40.0, 116.0, 100),
            row(2, 40.5, 116.5, 100),
            row(3, 40.5, 116.5, 101),
        ];
        let r = ingest_lines(lines.into_iter(), &BEIJING, 1.0, 10.0, 1).unwrap();
        assert_eq!(r.nodes.len(), 2);
        assert_eq!(r.rows_duplicate, 1);
        assert!((r.nodes[0].lat - 40.0).abs() < 1e-9);
    }

    #[test]
    fn malformed_rows_are_counted_and_skipped() {
        let lines = vec![
            "not a row".to_string(),
            "1\t2010\tnot_a_lat\t116.0\t100".to_string(),
            row(1, 40.0, 116.0, 100),
            "1\t2010\t40.0\t116.0\t100\textra".to_string(),
        ];
        let r = ingest_lines(lines.into_iter(), &BEIJING, 1.0, 10.0, 1).unwrap();
        assert_eq!(r.rows_malformed, 3);
        assert_eq!(r.nodes.len(), 1);
    }

    #[test]
    fn capabilities_are_seeded_and_in_range() {
        let lines: Vec<String> = (0..50).map(|i| row(i, 40.0, 116.0, 100 + i)).collect();
        let a = ingest_lines(lines.clone().into_iter(), &BEIJING, 1.0, 10.0, 7).unwrap();
        let b = ingest_lines(lines.into_iter(), &BEIJING, 1.0, 10.0, 7).unwrap();
        for (x, y) in a.nodes.iter().zip(&b.nodes) {
            assert_eq!(x.capability, y.capability);
            assert!((1.0..10.0).contains(&x.capability));
        }
    }

    #[test]
    fn node_csv_round_trip() {
        let lines = vec![row(1, 40.0, 116.0, 100), row(2, 39.9, 116.2, 101)];
        let r = ingest_lines(lines.into_iter(), &BEIJING, 1.0, 10.0, 1).unwrap();
        let csv = nodes_to_csv(&r.nodes);
        let back = nodes_from_csv(&csv).unwrap();
        assert_eq!(back.len(), r.nodes.len());
        for (x, y) in back.iter().zip(&r.nodes) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.capability, y.capability);
        }
        assert!(nodes_from_csv("bogus\n1,2,3,4\n").is_err());
    }

    /// Real-dataset pin: only runs when GOWALLA_PATH points at the full
    /// check-in file; the Beijing box then yields exactly 5,349 nodes.
    #[test]
    fn full_dataset_beijing_node_count() {
        let Ok(path) = std::env::var("GOWALLA_PATH") else {
            return;
        };
        let r = ingest(Path::new(&path), &BEIJING, 1.0, 10.0, 42).unwrap();
        assert_eq!(r.nodes.len(), 5349);
    }
}
