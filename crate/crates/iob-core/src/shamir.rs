//! Shamir secret sharing over the scalar field of the active group backend.
//!
//! Used in two places: splitting the identity-proof challenge/response
//! pair across CA nodes, and the threshold variant of the access-control
//! proof shares. Shares are evaluations of a random degree `t-1`
//! polynomial with the secret at x = 0, so any `t` shares reconstruct and
//! any `t-1` reveal nothing.

use rand::RngCore;

use crate::error::Error;
use crate::group::{Group, Scalar};

/// One share: the evaluation point index (x = index, never zero) and value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Share {
    pub index: u32,
    pub value: Scalar,
}

/// Split `secret` into `q` shares with reconstruction threshold `t`.
///
/// Rejects `t == 0` and `t > q`. Share indices are 1..=q. For the test467
/// backend `q` must stay below the group order so indices remain distinct
/// field points.
pub fn share<R: RngCore>(
    group: &Group,
    secret: &Scalar,
    q: u32,
    t: u32,
    rng: &mut R,
) -> Result<Vec<Share>, Error> {
    if t == 0 {
        return Err(Error::Sharing("threshold must be at least 1".into()));
    }
    if t > q {
        return Err(Error::Sharing(format!("threshold {t} exceeds share count {q}")));
    }
    if group.backend() == crate::group::Backend::Test467 && u64::from(q) >= crate::group::TEST467_ORDER {
        return Err(Error::Sharing(format!(
            "share count {q} exceeds the test backend field"
        )));
    }
    // coefficients[0] = secret, rest uniform random.
    let mut coeffs = Vec::with_capacity(t as usize);
    coeffs.push(*secret);
    for _ in 1..t {
        coeffs.push(group.random_scalar_any(rng));
    }
    let shares = (1..=q)
        .map(|index| Share {
            index,
            value: eval_poly(group, &coeffs, index),
        })
        .collect();
    Ok(shares)
}

/// Horner evaluation of the sharing polynomial at x = index.
fn eval_poly(group: &Group, coeffs: &[Scalar], index: u32) -> Scalar {
    let x = group.scalar_from_u64(u64::from(index));
    let mut acc = group.scalar_zero();
    for c in coeffs.iter().rev() {
        acc = group.scalar_add(&group.scalar_mul_scalar(&acc, &x), c);
    }
    acc
}

/// Reconstruct the secret from at least `t` shares by Lagrange
/// interpolation at zero, using exactly the first `t` (after dropping
/// duplicates and zero indices).
///
/// When more than `t` shares are supplied the remainder must be consistent
/// with the interpolated polynomial; any inconsistent share makes the whole
/// set suspect and reconstruction fails rather than silently out-voting it.
pub fn reconstruct(group: &Group, shares: &[Share], t: u32) -> Result<Scalar, Error> {
    let usable = well_formed(shares);
    if (usable.len() as u32) < t {
        return Err(Error::Sharing(format!(
            "need {t} shares, have {} usable",
            usable.len()
        )));
    }
    let head = &usable[..t as usize];
    let secret = interpolate_at_zero(group, head);
    if usable.len() as u32 > t {
        // Re-derive the full polynomial through the first t points and
        // check every extra share lies on it.
        for extra in &usable[t as usize..] {
            let expected = interpolate_at(group, head, extra.index);
            if expected != extra.value {
                return Err(Error::Sharing(format!(
                    "share {} inconsistent with reconstruction",
                    extra.index
                )));
            }
        }
    }
    Ok(secret)
}

/// Drop structurally malformed shares: zero or duplicate indices.
fn well_formed(shares: &[Share]) -> Vec<Share> {
    let mut seen = std::collections::BTreeSet::new();
    shares
        .iter()
        .filter(|s| s.index != 0 && seen.insert(s.index))
        .copied()
        .collect()
}

/// Lagrange interpolation at x = 0.
pub fn interpolate_at_zero(group: &Group, shares: &[Share]) -> Scalar {
    interpolate_at(group, shares, 0)
}

/// Lagrange interpolation of the polynomial through `shares` at x = at.
///
/// Shares with consecutive indices (the common case: a reconstructing node
/// waits for slices 1..=t) take an O(t) path: denominators become shifted
/// factorials inverted in one batch, numerators prefix/suffix products.
/// Arbitrary index sets fall back to the quadratic formula.
fn interpolate_at(group: &Group, shares: &[Share], at: u32) -> Scalar {
    if let Some(s) = shares.iter().find(|s| s.index == at) {
        return s.value;
    }
    let consecutive = shares.windows(2).all(|w| w[1].index == w[0].index + 1);
    if consecutive && shares.len() > 2 {
        return interpolate_consecutive(group, shares, at);
    }
    let x0 = group.scalar_from_u64(u64::from(at));
    let mut acc = group.scalar_zero();
    for (i, si) in shares.iter().enumerate() {
        let xi = group.scalar_from_u64(u64::from(si.index));
        let mut num = group.scalar_one();
        let mut den = group.scalar_one();
        for (j, sj) in shares.iter().enumerate() {
            if i == j {
                continue;
            }
            let xj = group.scalar_from_u64(u64::from(sj.index));
            num = group.scalar_mul_scalar(&num, &group.scalar_sub(&x0, &xj));
            den = group.scalar_mul_scalar(&den, &group.scalar_sub(&xi, &xj));
        }
        let coeff = group
            .scalar_mul_scalar(&num, &group.scalar_invert(&den).expect("distinct points"));
        acc = group.scalar_add(&acc, &group.scalar_mul_scalar(&si.value, &coeff));
    }
    acc
}

/// O(t) interpolation over consecutive indices a..a+t:
/// den_i = (-1)^(last-x_i) * (x_i-a)! * (last-x_i)!.
fn interpolate_consecutive(group: &Group, shares: &[Share], at: u32) -> Scalar {
    let t = shares.len();
    let x0 = group.scalar_from_u64(u64::from(at));
    // fact[k] = k!, inv_fact via one inversion unwound downward.
    let mut fact = Vec::with_capacity(t);
    fact.push(group.scalar_one());
    for k in 1..t {
        let prev = fact[k - 1];
        fact.push(group.scalar_mul_scalar(&prev, &group.scalar_from_u64(k as u64)));
    }
    let mut inv_fact = vec![group.scalar_one(); t];
    inv_fact[t - 1] = group.scalar_invert(&fact[t - 1]).expect("factorial is nonzero");
    for k in (1..t).rev() {
        let next = inv_fact[k];
        inv_fact[k - 1] = group.scalar_mul_scalar(&next, &group.scalar_from_u64(k as u64));
    }
    // prefix[i] = prod_{j<i} (at - x_j), suffix[i] = prod_{j>i} (at - x_j).
    let terms: Vec<Scalar> = shares
        .iter()
        .map(|s| group.scalar_sub(&x0, &group.scalar_from_u64(u64::from(s.index))))
        .collect();
    let mut prefix = vec![group.scalar_one(); t];
    for i in 1..t {
        let p = prefix[i - 1];
        prefix[i] = group.scalar_mul_scalar(&p, &terms[i - 1]);
    }
    let mut suffix = vec![group.scalar_one(); t];
    for i in (0..t - 1).rev() {
        let sfx = suffix[i + 1];
        suffix[i] = group.scalar_mul_scalar(&sfx, &terms[i + 1]);
    }
    let mut acc = group.scalar_zero();
    for (i, si) in shares.iter().enumerate() {
        let num = group.scalar_mul_scalar(&prefix[i], &suffix[i]);
        let den_inv = group.scalar_mul_scalar(&inv_fact[i], &inv_fact[t - 1 - i]);
        let mut coeff = group.scalar_mul_scalar(&num, &den_inv);
        if (t - 1 - i) % 2 == 1 {
            coeff = group.scalar_neg(&coeff);
        }
        acc = group.scalar_add(&acc, &group.scalar_mul_scalar(&si.value, &coeff));
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{Backend, TEST467_ORDER};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn t467() -> Group {
        Group::new(Backend::Test467)
    }

    /// Independent reconstruction oracle: direct two-point line formula,
    /// plain u64 arithmetic, no library code.
    fn line_secret_oracle(x1: u64, y1: u64, x2: u64, y2: u64) -> u64 {
        let p = TEST467_ORDER;
        // f(0) = (y1*x2 - y2*x1) / (x2 - x1) mod p
        let num = (y1 * x2 % p + p - y2 * x1 % p) % p;
        let den = (x2 + p - x1) % p;
        let mut inv = 1u64;
        let mut b = den % p;
        let mut e = p - 2;
        while e > 0 {
            if e & 1 == 1 {
                inv = inv * b % p;
            }
            b = b * b % p;
            e >>= 1;
        }
        num * inv % p
    }

    #[test]
    fn degree_zero_single_share_is_the_secret() {
        let g = t467();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let secret = g.scalar_from_u64(42);
        let shares = share(&g, &secret, 1, 1, &mut rng).unwrap();
        assert_eq!(shares[0].value, secret);
        assert_eq!(reconstruct(&g, &shares, 1).unwrap(), secret);
    }

    #[test]
    fn two_of_three_reconstruct_against_line_oracle() {
        let g = t467();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let secret = g.scalar_from_u64(100);
        let shares = share(&g, &secret, 3, 2, &mut rng).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                if a == b {
                    continue;
                }
                let pair = [shares[a], shares[b]];
                assert_eq!(reconstruct(&g, &pair, 2).unwrap(), secret);
                let (x1, y1) = match pair[0] {
                    Share { index, value: Scalar::Test467(v) } => (u64::from(index), v),
                    _ => unreachable!(),
                };
                let (x2, y2) = match pair[1] {
                    Share { index, value: Scalar::Test467(v) } => (u64::from(index), v),
                    _ => unreachable!(),
                };
                assert_eq!(line_secret_oracle(x1, y1, x2, y2), 100);
            }
        }
    }

    #[test]
    fn below_threshold_every_candidate_secret_remains_feasible() {
        // With t-1 shares, every candidate secret admits exactly one
        // polynomial of degree <= t-1 through the known share and
        // (0, candidate): the sharing is information-theoretically hiding.
        let g = t467();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let secret = g.scalar_from_u64(77);
        let shares = share(&g, &secret, 3, 2, &mut rng).unwrap();
        let known = shares[1];
        let x = g.scalar_from_u64(u64::from(known.index));
        let mut feasible = 0;
        for candidate in 0..TEST467_ORDER {
            let cand = g.scalar_from_u64(candidate);
            // Unique line f(z) = cand + slope * z through (0, cand) and the
            // known share; it exists for every candidate.
            let slope = g.scalar_mul_scalar(
                &g.scalar_sub(&known.value, &cand),
                &g.scalar_invert(&x).unwrap(),
            );
            let at_share = g.scalar_add(&cand, &g.scalar_mul_scalar(&slope, &x));
            assert_eq!(at_share, known.value);
            feasible += 1;
        }
        assert_eq!(feasible, TEST467_ORDER);
    }

    #[test]
    fn rejects_bad_thresholds() {
        let g = t467();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let secret = g.scalar_from_u64(5);
        assert!(share(&g, &secret, 3, 0, &mut rng).is_err());
        assert!(share(&g, &secret, 3, 4, &mut rng).is_err());
        assert!(share(&g, &secret, 300, 3, &mut rng).is_err());
    }

    #[test]
    fn insufficient_shares_is_an_error_not_a_wrong_answer() {
        let g = t467();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let secret = g.scalar_from_u64(9);
        let shares = share(&g, &secret, 4, 3, &mut rng).unwrap();
        assert!(reconstruct(&g, &shares[..2], 3).is_err());
    }

    #[test]
    fn tampered_extra_share_fails_consistency() {
        let g = t467();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let secret = g.scalar_from_u64(9);
        let mut shares = share(&g, &secret, 4, 2, &mut rng).unwrap();
        shares[3].value = g.scalar_add(&shares[3].value, &g.scalar_one());
        assert!(reconstruct(&g, &shares, 2).is_err());
    }

    #[test]
    fn malformed_shares_excluded_then_proceed() {
        let g = t467();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let secret = g.scalar_from_u64(123);
        let mut shares = share(&g, &secret, 3, 2, &mut rng).unwrap();
        // Duplicate and zero-index shares are dropped, the remaining three
        // still reconstruct.
        shares.push(Share { index: 0, value: g.scalar_from_u64(1) });
        shares.push(Share { index: 1, value: g.scalar_from_u64(200) });
        assert_eq!(reconstruct(&g, &shares, 2).unwrap(), secret);
    }

    #[test]
    fn consecutive_fast_path_matches_general_formula() {
        for g in [t467(), Group::new(Backend::Prod)] {
            let mut rng = ChaCha20Rng::seed_from_u64(20);
            for t in [3u32, 5, 9, 17] {
                let secret = g.random_scalar(&mut rng);
                let shares = share(&g, &secret, t + 4, t, &mut rng).unwrap();
                // Consecutive prefix exercises the factorial path;
                // a gapped subset exercises the quadratic one.
                let consec = &shares[..t as usize];
                assert_eq!(reconstruct(&g, consec, t).unwrap(), secret);
                let mut gapped: Vec<Share> = shares.iter().step_by(2).copied().collect();
                gapped.truncate(t as usize);
                if gapped.len() == t as usize {
                    assert_eq!(reconstruct(&g, &gapped, t).unwrap(), secret);
                }
            }
        }
    }

    #[test]
    fn fast_path_handles_offset_runs_and_query_points() {
        let g = t467();
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let secret = g.scalar_from_u64(191);
        let shares = share(&g, &secret, 12, 5, &mut rng).unwrap();
        // Run starting at index 4, still consecutive.
        assert_eq!(reconstruct(&g, &shares[3..8], 5).unwrap(), secret);
        // Interpolating at a point inside the run returns that share.
        assert_eq!(interpolate_at_zero(&g, &shares[..5]), secret);
    }

    #[test]
    fn prod_backend_round_trip() {
        let g = Group::new(Backend::Prod);
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let secret = g.random_scalar(&mut rng);
        let shares = share(&g, &secret, 7, 3, &mut rng).unwrap();
        assert_eq!(reconstruct(&g, &shares[2..5], 3).unwrap(), secret);
    }
}
