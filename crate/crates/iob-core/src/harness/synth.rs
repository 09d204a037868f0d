//! Synthetic check-in generator for dataset-free runs.
//!
//! Emits rows in the same tab-separated layout the ingester reads. The
//! spatial structure is a truncated-Gaussian blob mixture inside the
//! bounding box: one dominant blob holding a bit over half the mass (so
//! clustering produces one major cluster) and a chain of smaller blobs
//! spaced closely enough that cluster leaders can always reach a peer
//! within the relay radius.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::ingest::Bbox;

/// Relative mass and center (as bbox fractions) of each blob: a 3x3 grid
/// with the dominant blob in the middle. Grid spacing (~55 km in the
/// default Beijing box) keeps adjacent blobs inside the relay radius while
/// the tight blob radius keeps them far beyond the clustering radius.
const BLOBS: &[(f64, f64, f64)] = &[
    (0.53, 0.50, 0.50),
    (0.09, 0.19, 0.19),
    (0.07, 0.19, 0.50),
    (0.06, 0.19, 0.81),
    (0.06, 0.50, 0.19),
    (0.06, 0.50, 0.81),
    (0.05, 0.81, 0.19),
    (0.04, 0.81, 0.50),
    (0.04, 0.81, 0.81),
];

/// Blob radius as a fraction of the box extent (~2 km).
const BLOB_SIGMA: f64 = 0.012;

/// Approximate standard normal via the sum of 12 uniforms.
fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    (0..12).map(|_| rng.gen::<f64>()).sum::<f64>() - 6.0
}

/// Generate `count` check-in rows inside `bbox` under `seed`.
pub fn generate_checkins(count: usize, bbox: &Bbox, seed: u64) -> Vec<String> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5EED_CAFE);
    let (lat_min, lat_max, lon_min, lon_max) = *bbox;
    let lat_span = lat_max - lat_min;
    let lon_span = lon_max - lon_min;
    let mut rows = Vec::with_capacity(count);
    for i in 0..count {
        let roll: f64 = rng.gen();
        let mut acc = 0.0;
        let mut blob = BLOBS[BLOBS.len() - 1];
        for b in BLOBS {
            acc += b.0;
            if roll < acc {
                blob = *b;
                break;
            }
        }
        // Truncate by clamping into the box; the tails this bends are far
        // below the clustering radius.
        let lat = (lat_min + blob.1 * lat_span + gaussian(&mut rng) * BLOB_SIGMA * lat_span)
            .clamp(lat_min, lat_max);
        let lon = (lon_min + blob.2 * lon_span + gaussian(&mut rng) * BLOB_SIGMA * lon_span)
            .clamp(lon_min, lon_max);
        let user = rng.gen_range(0..10_000u64);
        let day = 1 + (i % 28);
        rows.push(format!(
            "{user}\t2010-07-{day:02}T12:00:00Z\t{lat:.6}\t{lon:.6}\t{id}",
            id = 1_000_000 + i as u64
        ));
    }
    rows
}
