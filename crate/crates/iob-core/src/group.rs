//! Prime-order group abstraction with two interchangeable backends.
//!
//! All higher layers (identity proofs, secret sharing exponent algebra,
//! access-control verification keys) are written against this module and
//! never touch curve or modular arithmetic directly. Two backends sit
//! behind the same interface:
//!
//! * `prod` — the ristretto255 prime-order group (order ~2^252), wrapping
//!   `curve25519-dalek`. Suitable for realistic benchmarking.
//! * `test467` — the order-233 multiplicative subgroup of the integers
//!   mod 467, generated by 4. Small enough for exhaustive oracles.
//!
//! Group notation is abstract: `combine` is the group law and `scalar_mul`
//! is repeated application, so the same code reads as point addition on
//! the curve backend and as modular multiplication on the test backend.

use curve25519_dalek::constants::RISTRETTO_BASEPOINT_POINT;
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar as DalekScalar;
use curve25519_dalek::traits::Identity;
use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::error::Error;

/// Subgroup order of the test backend: (467 - 1) / 2.
pub const TEST467_ORDER: u64 = 233;
/// Field modulus of the test backend.
pub const TEST467_MODULUS: u64 = 467;
/// Generator of the order-233 subgroup mod 467.
pub const TEST467_GENERATOR: u64 = 4;

/// Domain-separation tag prefixed to every hash-to-scalar transcript.
const HASH_TO_SCALAR_TAG: &[u8] = b"iob.h2s.v1";

/// Backend selector, config key `crypto.backend`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// ristretto255, order ~2^252.
    Prod,
    /// Subgroup of order 233 in Z_467^*.
    Test467,
}

impl Backend {
    pub fn parse(s: &str) -> Result<Backend, Error> {
        match s {
            "prod" => Ok(Backend::Prod),
            "test467" => Ok(Backend::Test467),
            other => Err(Error::Config(format!("unknown crypto.backend `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Backend::Prod => "prod",
            Backend::Test467 => "test467",
        }
    }
}

/// A scalar reduced mod the group order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scalar {
    Prod(DalekScalar),
    Test467(u64),
}

/// An element of the prime-order group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupElement {
    Prod(CompressedRistretto),
    Test467(u64),
}

/// Group parameters: generator, order, and a backend description.
#[derive(Debug, Clone)]
pub struct GroupParams {
    pub backend: Backend,
    pub description: &'static str,
}

/// Handle for all group and scalar operations of one backend.
///
/// Operations are pure; the handle carries no mutable state and is `Copy`,
/// so it can be passed around freely, including across threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Group {
    backend: Backend,
}

fn mod_mul_467(a: u64, b: u64) -> u64 {
    (a * b) % TEST467_MODULUS
}

fn mod_pow_467(mut base: u64, mut exp: u64) -> u64 {
    let mut acc = 1u64;
    base %= TEST467_MODULUS;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mod_mul_467(acc, base);
        }
        base = mod_mul_467(base, base);
        exp >>= 1;
    }
    acc
}

/// Modular inverse mod a prime via Fermat.
fn mod_inv_prime(a: u64, p: u64) -> u64 {
    debug_assert!(a % p != 0, "zero has no inverse");
    let mut acc = 1u64;
    let mut base = a % p;
    let mut exp = p - 2;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * base % p;
        }
        base = base * base % p;
        exp >>= 1;
    }
    acc
}

impl Group {
    pub fn new(backend: Backend) -> Group {
        Group { backend }
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn params(&self) -> GroupParams {
        GroupParams {
            backend: self.backend,
            description: match self.backend {
                Backend::Prod => "ristretto255",
                Backend::Test467 => "order-233 subgroup of Z_467^*",
            },
        }
    }

    pub fn generator(&self) -> GroupElement {
        match self.backend {
            Backend::Prod => GroupElement::Prod(RISTRETTO_BASEPOINT_POINT.compress()),
            Backend::Test467 => GroupElement::Test467(TEST467_GENERATOR),
        }
    }

    pub fn identity(&self) -> GroupElement {
        match self.backend {
            Backend::Prod => GroupElement::Prod(RistrettoPoint::identity().compress()),
            Backend::Test467 => GroupElement::Test467(1),
        }
    }

    /// Group order as a decimal string (the test backend order fits in u64,
    /// the ristretto255 order does not).
    pub fn order_string(&self) -> String {
        match self.backend {
            Backend::Prod => {
                "7237005577332262213973186563042994240857116359379907606001950938285454250989"
                    .to_string()
            }
            Backend::Test467 => TEST467_ORDER.to_string(),
        }
    }

    fn expect_prod(e: &GroupElement) -> RistrettoPoint {
        match e {
            GroupElement::Prod(c) => c.decompress().expect("invalid ristretto encoding"),
            GroupElement::Test467(_) => panic!("backend mismatch: test467 element in prod group"),
        }
    }

    fn expect_467(e: &GroupElement) -> u64 {
        match e {
            GroupElement::Test467(v) => *v,
            GroupElement::Prod(_) => panic!("backend mismatch: prod element in test467 group"),
        }
    }

    fn expect_prod_scalar(s: &Scalar) -> DalekScalar {
        match s {
            Scalar::Prod(v) => *v,
            Scalar::Test467(_) => panic!("backend mismatch: test467 scalar in prod group"),
        }
    }

    fn expect_467_scalar(s: &Scalar) -> u64 {
        match s {
            Scalar::Test467(v) => *v,
            Scalar::Prod(_) => panic!("backend mismatch: prod scalar in test467 group"),
        }
    }

    /// `base` combined with itself `k` times under the group law.
    pub fn scalar_mul(&self, base: &GroupElement, k: &Scalar) -> GroupElement {
        match self.backend {
            Backend::Prod => {
                let p = Self::expect_prod(base) * Self::expect_prod_scalar(k);
                GroupElement::Prod(p.compress())
            }
            Backend::Test467 => {
                GroupElement::Test467(mod_pow_467(Self::expect_467(base), Self::expect_467_scalar(k)))
            }
        }
    }

    /// The group law. Associative and commutative.
    pub fn combine(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        match self.backend {
            Backend::Prod => {
                GroupElement::Prod((Self::expect_prod(a) + Self::expect_prod(b)).compress())
            }
            Backend::Test467 => {
                GroupElement::Test467(mod_mul_467(Self::expect_467(a), Self::expect_467(b)))
            }
        }
    }

    /// Inverse under the group law.
    pub fn invert_element(&self, a: &GroupElement) -> GroupElement {
        match self.backend {
            Backend::Prod => GroupElement::Prod((-Self::expect_prod(a)).compress()),
            Backend::Test467 => {
                GroupElement::Test467(mod_inv_prime(Self::expect_467(a), TEST467_MODULUS))
            }
        }
    }

    /// Subgroup membership check.
    pub fn is_member(&self, a: &GroupElement) -> bool {
        match (self.backend, a) {
            (Backend::Prod, GroupElement::Prod(c)) => c.decompress().is_some(),
            (Backend::Test467, GroupElement::Test467(v)) => {
                *v > 0 && *v < TEST467_MODULUS && mod_pow_467(*v, TEST467_ORDER) == 1
            }
            _ => false,
        }
    }

    /// Deterministic hash of an arbitrary transcript to a scalar in [0, n-1].
    ///
    /// Reduce-mod-n of a 256-bit SHA-256 digest under a fixed protocol tag.
    /// The reduction bias is negligible for the prod backend and accepted
    /// for the 233-element test backend.
    pub fn hash_to_scalar(&self, transcript: &[u8]) -> Scalar {
        let mut h = Sha256::new();
        h.update(HASH_TO_SCALAR_TAG);
        h.update([match self.backend {
            Backend::Prod => 1u8,
            Backend::Test467 => 2u8,
        }]);
        h.update(transcript);
        let digest: [u8; 32] = h.finalize().into();
        match self.backend {
            Backend::Prod => Scalar::Prod(DalekScalar::from_bytes_mod_order(digest)),
            Backend::Test467 => {
                // Fold the 256-bit digest into Z_233: Horner over the bytes.
                let mut acc = 0u64;
                for byte in digest {
                    acc = (acc * 256 + byte as u64) % TEST467_ORDER;
                }
                Scalar::Test467(acc)
            }
        }
    }

    /// Uniform scalar in [1, n-1]. Deterministic under a seeded RNG.
    pub fn random_scalar<R: RngCore>(&self, rng: &mut R) -> Scalar {
        match self.backend {
            Backend::Prod => loop {
                let mut bytes = [0u8; 32];
                rng.fill_bytes(&mut bytes);
                let s = DalekScalar::from_bytes_mod_order(bytes);
                if s != DalekScalar::ZERO {
                    return Scalar::Prod(s);
                }
            },
            Backend::Test467 => {
                // Rejection sampling for an unbiased draw from [1, 232].
                loop {
                    let v = rng.next_u64() >> 32;
                    let limit = (1u64 << 32) - ((1u64 << 32) % (TEST467_ORDER - 1));
                    if v < limit {
                        return Scalar::Test467(1 + v % (TEST467_ORDER - 1));
                    }
                }
            }
        }
    }

    /// Uniform scalar in [0, n-1] (used for share vectors where zero is legal).
    pub fn random_scalar_any<R: RngCore>(&self, rng: &mut R) -> Scalar {
        match self.backend {
            Backend::Prod => {
                let mut bytes = [0u8; 32];
                rng.fill_bytes(&mut bytes);
                Scalar::Prod(DalekScalar::from_bytes_mod_order(bytes))
            }
            Backend::Test467 => loop {
                let v = rng.next_u64() >> 32;
                let limit = (1u64 << 32) - ((1u64 << 32) % TEST467_ORDER);
                if v < limit {
                    return Scalar::Test467(v % TEST467_ORDER);
                }
            },
        }
    }

    pub fn scalar_zero(&self) -> Scalar {
        match self.backend {
            Backend::Prod => Scalar::Prod(DalekScalar::ZERO),
            Backend::Test467 => Scalar::Test467(0),
        }
    }

    pub fn scalar_one(&self) -> Scalar {
        match self.backend {
            Backend::Prod => Scalar::Prod(DalekScalar::ONE),
            Backend::Test467 => Scalar::Test467(1),
        }
    }

    /// Scalar from a small integer, reduced mod n.
    pub fn scalar_from_u64(&self, v: u64) -> Scalar {
        match self.backend {
            Backend::Prod => Scalar::Prod(DalekScalar::from(v)),
            Backend::Test467 => Scalar::Test467(v % TEST467_ORDER),
        }
    }

    pub fn scalar_add(&self, a: &Scalar, b: &Scalar) -> Scalar {
        match self.backend {
            Backend::Prod => {
                Scalar::Prod(Self::expect_prod_scalar(a) + Self::expect_prod_scalar(b))
            }
            Backend::Test467 => Scalar::Test467(
                (Self::expect_467_scalar(a) + Self::expect_467_scalar(b)) % TEST467_ORDER,
            ),
        }
    }

    pub fn scalar_sub(&self, a: &Scalar, b: &Scalar) -> Scalar {
        match self.backend {
            Backend::Prod => {
                Scalar::Prod(Self::expect_prod_scalar(a) - Self::expect_prod_scalar(b))
            }
            Backend::Test467 => {
                let (a, b) = (Self::expect_467_scalar(a), Self::expect_467_scalar(b));
                Scalar::Test467((a + TEST467_ORDER - b) % TEST467_ORDER)
            }
        }
    }

    pub fn scalar_mul_scalar(&self, a: &Scalar, b: &Scalar) -> Scalar {
        match self.backend {
            Backend::Prod => {
                Scalar::Prod(Self::expect_prod_scalar(a) * Self::expect_prod_scalar(b))
            }
            Backend::Test467 => Scalar::Test467(
                Self::expect_467_scalar(a) * Self::expect_467_scalar(b) % TEST467_ORDER,
            ),
        }
    }

    pub fn scalar_neg(&self, a: &Scalar) -> Scalar {
        self.scalar_sub(&self.scalar_zero(), a)
    }

    /// Multiplicative inverse mod n. `None` for zero.
    pub fn scalar_invert(&self, a: &Scalar) -> Option<Scalar> {
        match self.backend {
            Backend::Prod => {
                let s = Self::expect_prod_scalar(a);
                if s == DalekScalar::ZERO {
                    None
                } else {
                    Some(Scalar::Prod(s.invert()))
                }
            }
            Backend::Test467 => {
                let v = Self::expect_467_scalar(a);
                if v == 0 {
                    None
                } else {
                    Some(Scalar::Test467(mod_inv_prime(v, TEST467_ORDER)))
                }
            }
        }
    }

    pub fn scalar_is_zero(&self, a: &Scalar) -> bool {
        *a == self.scalar_zero()
    }

    /// Canonical fixed-width encoding of a scalar: 32 bytes for prod,
    /// 8 bytes little-endian for test467.
    pub fn scalar_to_bytes(&self, s: &Scalar) -> Vec<u8> {
        match s {
            Scalar::Prod(v) => v.to_bytes().to_vec(),
            Scalar::Test467(v) => v.to_le_bytes().to_vec(),
        }
    }

    pub fn scalar_from_bytes(&self, bytes: &[u8]) -> Result<Scalar, Error> {
        match self.backend {
            Backend::Prod => {
                let arr: [u8; 32] = bytes
                    .try_into()
                    .map_err(|_| Error::Wire("scalar must be 32 bytes".into()))?;
                Option::<DalekScalar>::from(DalekScalar::from_canonical_bytes(arr))
                    .map(Scalar::Prod)
                    .ok_or_else(|| Error::Wire("non-canonical scalar encoding".into()))
            }
            Backend::Test467 => {
                let arr: [u8; 8] = bytes
                    .try_into()
                    .map_err(|_| Error::Wire("scalar must be 8 bytes".into()))?;
                let v = u64::from_le_bytes(arr);
                if v < TEST467_ORDER {
                    Ok(Scalar::Test467(v))
                } else {
                    Err(Error::Wire("scalar out of range".into()))
                }
            }
        }
    }

    /// Canonical fixed-width encoding of an element: 32 bytes for prod,
    /// 8 bytes little-endian for test467.
    pub fn element_to_bytes(&self, e: &GroupElement) -> Vec<u8> {
        match e {
            GroupElement::Prod(c) => c.to_bytes().to_vec(),
            GroupElement::Test467(v) => v.to_le_bytes().to_vec(),
        }
    }

    pub fn element_from_bytes(&self, bytes: &[u8]) -> Result<GroupElement, Error> {
        match self.backend {
            Backend::Prod => {
                let arr: [u8; 32] = bytes
                    .try_into()
                    .map_err(|_| Error::Wire("element must be 32 bytes".into()))?;
                let c = CompressedRistretto(arr);
                if c.decompress().is_some() {
                    Ok(GroupElement::Prod(c))
                } else {
                    Err(Error::Wire("invalid element encoding".into()))
                }
            }
            Backend::Test467 => {
                let arr: [u8; 8] = bytes
                    .try_into()
                    .map_err(|_| Error::Wire("element must be 8 bytes".into()))?;
                let e = GroupElement::Test467(u64::from_le_bytes(arr));
                if self.is_member(&e) {
                    Ok(e)
                } else {
                    Err(Error::Wire("element not in subgroup".into()))
                }
            }
        }
    }

    pub fn element_byte_len(&self) -> usize {
        match self.backend {
            Backend::Prod => 32,
            Backend::Test467 => 8,
        }
    }

    pub fn scalar_byte_len(&self) -> usize {
        match self.backend {
            Backend::Prod => 32,
            Backend::Test467 => 8,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::collections::HashSet;

    /// Brute-force square-and-multiply oracle, independent of the backend path.
    fn naive_mod_pow(base: u64, exp: u64, modulus: u64) -> u64 {
        let mut acc = 1u128;
        for _ in 0..exp {
            acc = acc * base as u128 % modulus as u128;
        }
        acc as u64
    }

    fn t467() -> Group {
        Group::new(Backend::Test467)
    }

    fn prod() -> Group {
        Group::new(Backend::Prod)
    }

    #[test]
    fn scalar_mul_zero_and_one() {
        for g in [t467(), prod()] {
            let gen = g.generator();
            assert_eq!(g.scalar_mul(&gen, &g.scalar_zero()), g.identity());
            assert_eq!(g.scalar_mul(&gen, &g.scalar_one()), gen);
        }
    }

    #[test]
    fn scalar_mul_matches_naive_exponentiation() {
        let g = t467();
        // 4^5 mod 467 = 90
        let got = g.scalar_mul(&g.generator(), &g.scalar_from_u64(5));
        assert_eq!(got, GroupElement::Test467(90));
        assert_eq!(naive_mod_pow(4, 5, TEST467_MODULUS), 90);
    }

    #[test]
    fn backend_agrees_with_oracle_on_random_pairs() {
        let g = t467();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let k = g.random_scalar(&mut rng);
            let b = g.scalar_mul(&g.generator(), &g.random_scalar(&mut rng));
            let base = match b {
                GroupElement::Test467(v) => v,
                _ => unreachable!(),
            };
            let exp = match k {
                Scalar::Test467(v) => v,
                _ => unreachable!(),
            };
            assert_eq!(
                g.scalar_mul(&b, &k),
                GroupElement::Test467(naive_mod_pow(base, exp, TEST467_MODULUS))
            );
        }
    }

    #[test]
    fn combine_identity_and_inverse() {
        for g in [t467(), prod()] {
            let mut rng = ChaCha20Rng::seed_from_u64(11);
            let x = g.scalar_mul(&g.generator(), &g.random_scalar(&mut rng));
            assert_eq!(g.combine(&x, &g.identity()), x);
            assert_eq!(g.combine(&x, &g.invert_element(&x)), g.identity());
        }
    }

    #[test]
    fn combine_small_values() {
        let g = t467();
        let four = GroupElement::Test467(4);
        assert_eq!(g.combine(&four, &four), GroupElement::Test467(16));
    }

    #[test]
    fn generator_is_member_of_order_n() {
        let g = t467();
        assert!(g.is_member(&g.generator()));
        assert_ne!(g.generator(), g.identity());
        // g^n == identity
        assert_eq!(
            g.scalar_mul(&g.generator(), &Scalar::Test467(0)),
            g.identity()
        );
        assert_eq!(mod_pow_467(TEST467_GENERATOR, TEST467_ORDER), 1);
    }

    #[test]
    fn hash_to_scalar_deterministic_and_in_range() {
        for g in [t467(), prod()] {
            let a = g.hash_to_scalar(b"transcript");
            let b = g.hash_to_scalar(b"transcript");
            assert_eq!(a, b);
            let _ = g.hash_to_scalar(b"");
        }
        if let Scalar::Test467(v) = t467().hash_to_scalar(b"") {
            assert!(v < TEST467_ORDER);
        }
    }

    #[test]
    fn hash_to_scalar_one_byte_sensitivity() {
        let g = prod();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut collisions = 0;
        for _ in 0..10_000 {
            let mut buf = [0u8; 16];
            rng.fill_bytes(&mut buf);
            let mut tweaked = buf;
            let idx = (rng.next_u64() % 16) as usize;
            tweaked[idx] ^= 1 << (rng.next_u64() % 8);
            if g.hash_to_scalar(&buf) == g.hash_to_scalar(&tweaked) {
                collisions += 1;
            }
        }
        assert_eq!(collisions, 0);
    }

    #[test]
    fn random_scalar_range_and_determinism() {
        let g = t467();
        let mut a = ChaCha20Rng::seed_from_u64(99);
        let mut b = ChaCha20Rng::seed_from_u64(99);
        assert_eq!(g.random_scalar(&mut a), g.random_scalar(&mut b));

        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            match g.random_scalar(&mut rng) {
                Scalar::Test467(v) => assert!((1..TEST467_ORDER).contains(&v)),
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn random_scalar_hits_every_residue_class() {
        // Coupon collector: 10^4 draws vastly exceed 232 * ln 232 ~ 1265.
        let g = t467();
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let mut seen = HashSet::new();
        for _ in 0..10_000 {
            if let Scalar::Test467(v) = g.random_scalar(&mut rng) {
                seen.insert(v);
            }
        }
        assert_eq!(seen.len(), (TEST467_ORDER - 1) as usize);
    }

    #[test]
    fn exponent_laws_hold() {
        for g in [t467(), prod()] {
            let mut rng = ChaCha20Rng::seed_from_u64(17);
            let gen = g.generator();
            for _ in 0..50 {
                let a = g.random_scalar(&mut rng);
                let b = g.random_scalar(&mut rng);
                // g^(a+b) == g^a * g^b
                assert_eq!(
                    g.scalar_mul(&gen, &g.scalar_add(&a, &b)),
                    g.combine(&g.scalar_mul(&gen, &a), &g.scalar_mul(&gen, &b))
                );
                // (g^a)^b == g^(ab)
                assert_eq!(
                    g.scalar_mul(&g.scalar_mul(&gen, &a), &b),
                    g.scalar_mul(&gen, &g.scalar_mul_scalar(&a, &b))
                );
            }
        }
    }

    #[test]
    fn scalar_field_arithmetic() {
        let g = t467();
        let a = g.scalar_from_u64(200);
        let b = g.scalar_from_u64(100);
        assert_eq!(g.scalar_add(&a, &b), g.scalar_from_u64(67)); // 300 mod 233
        assert_eq!(g.scalar_sub(&b, &a), g.scalar_from_u64(133)); // -100 mod 233
        let inv = g.scalar_invert(&a).unwrap();
        assert_eq!(g.scalar_mul_scalar(&a, &inv), g.scalar_one());
        assert!(g.scalar_invert(&g.scalar_zero()).is_none());
    }

    #[test]
    fn element_round_trip() {
        for g in [t467(), prod()] {
            let mut rng = ChaCha20Rng::seed_from_u64(23);
            let e = g.scalar_mul(&g.generator(), &g.random_scalar(&mut rng));
            let bytes = g.element_to_bytes(&e);
            assert_eq!(bytes.len(), g.element_byte_len());
            assert_eq!(g.element_from_bytes(&bytes).unwrap(), e);

            let s = g.random_scalar(&mut rng);
            let sb = g.scalar_to_bytes(&s);
            assert_eq!(g.scalar_from_bytes(&sb).unwrap(), s);
        }
    }

    #[test]
    fn element_from_bytes_rejects_non_members() {
        let g = t467();
        // 2 generates the full order-466 group, not the order-233 subgroup.
        assert!(g.element_from_bytes(&2u64.to_le_bytes()).is_err());
        assert!(g.element_from_bytes(&0u64.to_le_bytes()).is_err());
        assert!(g.element_from_bytes(&500u64.to_le_bytes()).is_err());
    }
}
