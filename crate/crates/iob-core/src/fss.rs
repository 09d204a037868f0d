//! Private access control over behavior-category databases.
//!
//! Every category `i` of the database owns a key pair: an access key
//! `∂_i` (held by authorized users) and a verification key `vk_i = g^∂_i`
//! published in the access-control list. A user proving permission for
//! category `k` secret-shares the point function `P_k` (value `m = 1` at
//! `k`, zero elsewhere) across the verifying nodes together with additive
//! shares of the proof `π = -∂_k`. Each node folds its function-key share
//! against the list,
//!
//! ```text
//! τ_j = Π_i vk_i^{key_j[i]} · g^{π_j}
//! ```
//!
//! and the product of all `τ_j` collapses to `g^{∂_k - ∂_k} = g^0` exactly
//! when the targeted category matches the access key. No single node can
//! tell which category was asked: its inputs are uniform shares.
//!
//! The point-function shares are full-domain vectors rather than a
//! compressed tree construction: verification evaluates every input
//! `1..N` anyway, category counts stay small, and plain additive vectors
//! make the share-uniformity privacy argument exact. A threshold mode
//! Shamir-shares both the vectors and the proof so any `t` of `s` nodes
//! can finish; the additive mode (the default) requires all `s`.

use rand::RngCore;

use crate::error::Error;
use crate::group::{Group, GroupElement, Scalar};
use crate::shamir::{self, Share};

/// `P_i(x) = value` when `x == index`, else 0. Indices are 1-based.
#[derive(Debug, Clone)]
pub struct PointFunction {
    pub domain: u32,
    pub index: u32,
    pub value: Scalar,
}

impl PointFunction {
    pub fn new(group: &Group, domain: u32, index: u32, value: Scalar) -> Result<Self, Error> {
        if index == 0 || index > domain {
            return Err(Error::Access(format!("index {index} outside domain 1..={domain}")));
        }
        let _ = group;
        Ok(PointFunction { domain, index, value })
    }

    /// Unit point function, the access-control default (`m = 1`).
    pub fn unit(group: &Group, domain: u32, index: u32) -> Result<Self, Error> {
        Self::new(group, domain, index, group.scalar_one())
    }

    pub fn eval(&self, group: &Group, x: u32) -> Scalar {
        if x == self.index {
            self.value
        } else {
            group.scalar_zero()
        }
    }
}

/// How the point function and proof are split across nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SharingMode {
    /// All `s` shares required; information-theoretic uniformity.
    Additive,
    /// Shamir over every coordinate: any `t` of `s` nodes suffice.
    Threshold { t: u32 },
}

/// One node's function-key share: a vector over the scalar field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DpfKey {
    /// 1-based node index (doubles as the Shamir evaluation point).
    pub server: u32,
    pub shares: Vec<Scalar>,
}

impl DpfKey {
    pub fn domain(&self) -> u32 {
        self.shares.len() as u32
    }
}

/// Generate one key per node whose evaluations sum (or interpolate) to the
/// point function at every input.
///
/// Additive mode: the first `s-1` vectors are uniform, the last is the
/// point function minus their sum. `s = 1` is allowed for degenerate test
/// setups only.
pub fn dpf_gen<R: RngCore>(
    group: &Group,
    point: &PointFunction,
    s: u32,
    mode: SharingMode,
    rng: &mut R,
) -> Result<Vec<DpfKey>, Error> {
    if s == 0 {
        return Err(Error::Access("need at least one server".into()));
    }
    let n = point.domain as usize;
    match mode {
        SharingMode::Additive => {
            let mut keys: Vec<DpfKey> = (1..s)
                .map(|server| DpfKey {
                    server,
                    shares: (0..n).map(|_| group.random_scalar_any(rng)).collect(),
                })
                .collect();
            let mut last = Vec::with_capacity(n);
            for x in 1..=point.domain {
                let mut acc = point.eval(group, x);
                for key in &keys {
                    acc = group.scalar_sub(&acc, &key.shares[(x - 1) as usize]);
                }
                last.push(acc);
            }
            keys.push(DpfKey { server: s, shares: last });
            Ok(keys)
        }
        SharingMode::Threshold { t } => {
            if t == 0 || t > s {
                return Err(Error::Access(format!("threshold {t} invalid for {s} servers")));
            }
            let mut keys: Vec<DpfKey> = (1..=s)
                .map(|server| DpfKey { server, shares: Vec::with_capacity(n) })
                .collect();
            for x in 1..=point.domain {
                let coord = shamir::share(group, &point.eval(group, x), s, t, rng)?;
                for (key, share) in keys.iter_mut().zip(coord) {
                    debug_assert_eq!(key.server, share.index);
                    key.shares.push(share.value);
                }
            }
            Ok(keys)
        }
    }
}

/// The key's share at input `x` (1-based).
pub fn dpf_eval(key: &DpfKey, x: u32) -> Result<Scalar, Error> {
    if x == 0 || x > key.domain() {
        return Err(Error::Access(format!("input {x} outside domain 1..={}", key.domain())));
    }
    Ok(key.shares[(x - 1) as usize])
}

/// Category labels and verification keys, stored by every verifying node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessControlList {
    pub labels: Vec<String>,
    pub verification_keys: Vec<GroupElement>,
}

impl AccessControlList {
    pub fn domain(&self) -> u32 {
        self.verification_keys.len() as u32
    }

    /// CSV export: `category_index,label,vk_hex`.
    pub fn to_csv(&self, group: &Group) -> String {
        let mut s = String::from("category_index,label,vk_hex\n");
        for (i, (label, vk)) in self.labels.iter().zip(&self.verification_keys).enumerate() {
            s.push_str(&format!("{},{},{}\n", i + 1, label, hex::encode(group.element_to_bytes(vk))));
        }
        s
    }
}

/// The user-held secret for one category.
#[derive(Debug, Clone)]
pub struct AccessKey {
    pub category: u32,
    pub secret: Scalar,
}

/// Output of the trusted key ceremony: every category secret plus the
/// public list. Production hands each user only their `AccessKey`; the
/// full secret vector stays with the ceremony.
#[derive(Debug, Clone)]
pub struct KeyCeremony {
    pub secrets: Vec<Scalar>,
    pub acl: AccessControlList,
}

/// Sample `∂_1..∂_N` and publish `vk_i = g^{∂_i}`.
pub fn ceremony<R: RngCore>(
    group: &Group,
    labels: Vec<String>,
    rng: &mut R,
) -> KeyCeremony {
    let secrets: Vec<Scalar> = labels.iter().map(|_| group.random_scalar(rng)).collect();
    let generator = group.generator();
    let verification_keys =
        secrets.iter().map(|s| group.scalar_mul(&generator, s)).collect();
    KeyCeremony { secrets, acl: AccessControlList { labels, verification_keys } }
}

/// Default labels when the caller has none: `category-1..N`.
pub fn default_labels(n: u32) -> Vec<String> {
    (1..=n).map(|i| format!("category-{i}")).collect()
}

/// Ceremony then extraction of one category's access key.
pub fn keygen<R: RngCore>(
    group: &Group,
    domain: u32,
    category: u32,
    rng: &mut R,
) -> Result<(AccessKey, AccessControlList), Error> {
    if category == 0 || category > domain {
        return Err(Error::Access(format!("category {category} outside 1..={domain}")));
    }
    let ceremony = ceremony(group, default_labels(domain), rng);
    let secret = ceremony.secrets[(category - 1) as usize];
    Ok((AccessKey { category, secret }, ceremony.acl))
}

/// Additive sharing of the proof `π = -∂_k` across `s` nodes.
pub fn share_proof_additive<R: RngCore>(
    group: &Group,
    access: &AccessKey,
    s: u32,
    rng: &mut R,
) -> Vec<Scalar> {
    let pi = group.scalar_neg(&access.secret);
    let mut shares: Vec<Scalar> =
        (1..s).map(|_| group.random_scalar_any(rng)).collect();
    let sum = shares
        .iter()
        .fold(group.scalar_zero(), |acc, x| group.scalar_add(&acc, x));
    shares.push(group.scalar_sub(&pi, &sum));
    shares
}

/// Shamir sharing of the proof for the threshold mode.
pub fn share_proof_threshold<R: RngCore>(
    group: &Group,
    access: &AccessKey,
    s: u32,
    t: u32,
    rng: &mut R,
) -> Result<Vec<Share>, Error> {
    let pi = group.scalar_neg(&access.secret);
    shamir::share(group, &pi, s, t, rng)
}

/// One node's local verification:
/// `τ_j = Π_i vk_i^{key_j[i]} · g^{π_j}`.
pub fn local_verify(
    group: &Group,
    acl: &AccessControlList,
    key: &DpfKey,
    proof_share: &Scalar,
) -> Result<GroupElement, Error> {
    if key.domain() != acl.domain() {
        return Err(Error::Access(format!(
            "key domain {} does not match list size {}",
            key.domain(),
            acl.domain()
        )));
    }
    let mut tau = group.scalar_mul(&group.generator(), proof_share);
    for (vk, share) in acl.verification_keys.iter().zip(&key.shares) {
        tau = group.combine(&tau, &group.scalar_mul(vk, share));
    }
    Ok(tau)
}

/// Joint decision over the gathered local results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessOutcome {
    Accept,
    Reject,
    /// Not enough local results gathered.
    Indeterminate,
}

/// Additive mode: every node's τ must be present; accept iff they multiply
/// to the identity.
pub fn check_access(group: &Group, taus: &[GroupElement], expected: u32) -> AccessOutcome {
    if (taus.len() as u32) < expected {
        return AccessOutcome::Indeterminate;
    }
    let product = taus
        .iter()
        .fold(group.identity(), |acc, t| group.combine(&acc, t));
    if product == group.identity() {
        AccessOutcome::Accept
    } else {
        AccessOutcome::Reject
    }
}

/// Threshold mode: any `t` results finish the check, combined with the
/// Lagrange coefficients of their node indices in the exponent.
pub fn check_access_threshold(
    group: &Group,
    taus: &[(u32, GroupElement)],
    t: u32,
) -> AccessOutcome {
    let mut seen = std::collections::BTreeSet::new();
    let usable: Vec<(u32, GroupElement)> = taus
        .iter()
        .filter(|(idx, _)| *idx != 0 && seen.insert(*idx))
        .copied()
        .collect();
    if (usable.len() as u32) < t {
        return AccessOutcome::Indeterminate;
    }
    let head = &usable[..t as usize];
    let mut product = group.identity();
    for (i, (xi, tau)) in head.iter().enumerate() {
        let mut num = group.scalar_one();
        let mut den = group.scalar_one();
        let xi_s = group.scalar_from_u64(u64::from(*xi));
        for (j, (xj, _)) in head.iter().enumerate() {
            if i == j {
                continue;
            }
            let xj_s = group.scalar_from_u64(u64::from(*xj));
            num = group.scalar_mul_scalar(&num, &group.scalar_neg(&xj_s));
            den = group.scalar_mul_scalar(&den, &group.scalar_sub(&xi_s, &xj_s));
        }
        let coeff =
            group.scalar_mul_scalar(&num, &group.scalar_invert(&den).expect("distinct points"));
        product = group.combine(&product, &group.scalar_mul(tau, &coeff));
    }
    if product == group.identity() {
        AccessOutcome::Accept
    } else {
        AccessOutcome::Reject
    }
}
