//! Binary wire formats, version 1.
//!
//! Every message is `[type: u8][version: u8 = 1][body]`. Integers are
//! little-endian. Scalars and group elements use the backend's canonical
//! fixed-width encoding prefixed by a `u16` length; raw byte strings are
//! `u16`-length-prefixed. Field order is fixed and part of the format:
//! digests are recomputed from decoded fields, so encodings must be
//! bit-exact.
//!
//! | type | message        | body, in order                                         |
//! |------|----------------|--------------------------------------------------------|
//! | 0x01 | AUTH_REQUEST   | V, share_index: u32, c_share, r_share, pu              |
//! | 0x02 | AUTH_RESULT    | accept: u8                                             |
//! | 0x03 | TOKEN          | digest: 32B, timestamp: u64                            |
//! | 0x04 | XDOMAIN_REQUEST| digest: 32B, pu                                        |
//! | 0x05 | PBFT           | phase: u8, view: u64, seq: u64, digest: 32B,           |
//! |      |                | sender: u32, sig (len-prefixed)                        |
//! | 0x06 | ACCESS_REQUEST | request_id: u64, key_count: u32, key scalars...,       |
//! |      |                | proof_share                                            |
//! | 0x07 | ACCESS_RESULT  | request_id: u64, accept: u8                            |

use crate::error::Error;
use crate::group::{Group, GroupElement, Scalar};
use crate::sim::SimTime;

pub const FORMAT_VERSION: u8 = 1;

pub const MSG_AUTH_REQUEST: u8 = 0x01;
pub const MSG_AUTH_RESULT: u8 = 0x02;
pub const MSG_TOKEN: u8 = 0x03;
pub const MSG_XDOMAIN_REQUEST: u8 = 0x04;
pub const MSG_PBFT: u8 = 0x05;
pub const MSG_ACCESS_REQUEST: u8 = 0x06;
pub const MSG_ACCESS_RESULT: u8 = 0x07;

/// One CA node's slice of a proof, as sent by the prover.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthRequest {
    pub commitment: GroupElement,
    pub share_index: u32,
    pub c_share: Scalar,
    pub r_share: Scalar,
    pub pu: GroupElement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuthResult {
    pub accept: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenMsg {
    pub digest: [u8; 32],
    pub timestamp: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XDomainRequest {
    pub digest: [u8; 32],
    pub pu: GroupElement,
}

/// Consensus protocol phases on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbftPhase {
    PrePrepare = 1,
    Prepare = 2,
    Commit = 3,
    Reply = 4,
    ViewChange = 5,
    NewView = 6,
}

impl PbftPhase {
    pub fn from_u8(v: u8) -> Result<PbftPhase, Error> {
        Ok(match v {
            1 => PbftPhase::PrePrepare,
            2 => PbftPhase::Prepare,
            3 => PbftPhase::Commit,
            4 => PbftPhase::Reply,
            5 => PbftPhase::ViewChange,
            6 => PbftPhase::NewView,
            other => return Err(Error::Wire(format!("unknown pbft phase {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            PbftPhase::PrePrepare => "PRE_PREPARE",
            PbftPhase::Prepare => "PREPARE",
            PbftPhase::Commit => "COMMIT",
            PbftPhase::Reply => "REPLY",
            PbftPhase::ViewChange => "VIEW_CHANGE",
            PbftPhase::NewView => "NEW_VIEW",
        }
    }
}

/// Fixed-order consensus message envelope.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PbftWire {
    pub phase: PbftPhase,
    pub view: u64,
    pub seq: u64,
    pub digest: [u8; 32],
    pub sender: u32,
    pub sig: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessRequest {
    pub request_id: u64,
    pub key_shares: Vec<Scalar>,
    pub proof_share: Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessResult {
    pub request_id: u64,
    pub accept: bool,
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    debug_assert!(bytes.len() <= u16::MAX as usize);
    out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
    out.extend_from_slice(bytes);
}

fn put_element(out: &mut Vec<u8>, group: &Group, e: &GroupElement) {
    put_bytes(out, &group.element_to_bytes(e));
}

fn put_scalar(out: &mut Vec<u8>, group: &Group, s: &Scalar) {
    put_bytes(out, &group.scalar_to_bytes(s));
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Reader<'a> {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], Error> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Wire("message truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, Error> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, Error> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, Error> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, Error> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8], Error> {
        let len = self.u16()? as usize;
        self.take(len)
    }

    fn digest32(&mut self) -> Result<[u8; 32], Error> {
        Ok(self.take(32)?.try_into().unwrap())
    }

    fn element(&mut self, group: &Group) -> Result<GroupElement, Error> {
        let b = self.bytes()?;
        group.element_from_bytes(b)
    }

    fn scalar(&mut self, group: &Group) -> Result<Scalar, Error> {
        let b = self.bytes()?;
        group.scalar_from_bytes(b)
    }

    fn finish(&self) -> Result<(), Error> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(Error::Wire("trailing bytes".into()))
        }
    }
}

fn header(msg_type: u8) -> Vec<u8> {
    vec![msg_type, FORMAT_VERSION]
}

fn check_header(r: &mut Reader<'_>, expected: u8) -> Result<(), Error> {
    let t = r.u8()?;
    if t != expected {
        return Err(Error::Wire(format!("expected type {expected:#04x}, got {t:#04x}")));
    }
    let v = r.u8()?;
    if v != FORMAT_VERSION {
        return Err(Error::Wire(format!("unsupported format version {v}")));
    }
    Ok(())
}

impl AuthRequest {
    pub fn encode(&self, group: &Group) -> Vec<u8> {
        let mut out = header(MSG_AUTH_REQUEST);
        put_element(&mut out, group, &self.commitment);
        out.extend_from_slice(&self.share_index.to_le_bytes());
        put_scalar(&mut out, group, &self.c_share);
        put_scalar(&mut out, group, &self.r_share);
        put_element(&mut out, group, &self.pu);
        out
    }

    pub fn decode(group: &Group, buf: &[u8]) -> Result<AuthRequest, Error> {
        let mut r = Reader::new(buf);
        check_header(&mut r, MSG_AUTH_REQUEST)?;
        let msg = AuthRequest {
            commitment: r.element(group)?,
            share_index: r.u32()?,
            c_share: r.scalar(group)?,
            r_share: r.scalar(group)?,
            pu: r.element(group)?,
        };
        r.finish()?;
        Ok(msg)
    }

    pub fn encoded_len(group: &Group) -> usize {
        2 + 2 * (2 + group.element_byte_len()) + 4 + 2 * (2 + group.scalar_byte_len())
    }
}

impl AuthResult {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = header(MSG_AUTH_RESULT);
        out.push(u8::from(self.accept));
        out
    }

    pub fn decode(buf: &[u8]) -> Result<AuthResult, Error> {
        let mut r = Reader::new(buf);
        check_header(&mut r, MSG_AUTH_RESULT)?;
        let accept = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(Error::Wire(format!("bad accept flag {other}"))),
        };
        r.finish()?;
        Ok(AuthResult { accept })
    }
}

impl TokenMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = header(MSG_TOKEN);
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&self.timestamp.0.to_le_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<TokenMsg, Error> {
        let mut r = Reader::new(buf);
        check_header(&mut r, MSG_TOKEN)?;
        let msg = TokenMsg { digest: r.digest32()?, timestamp: SimTime(r.u64()?) };
        r.finish()?;
        Ok(msg)
    }
}

impl XDomainRequest {
    pub fn encode(&self, group: &Group) -> Vec<u8> {
        let mut out = header(MSG_XDOMAIN_REQUEST);
        out.extend_from_slice(&self.digest);
        put_element(&mut out, group, &self.pu);
        out
    }

    pub fn decode(group: &Group, buf: &[u8]) -> Result<XDomainRequest, Error> {
        let mut r = Reader::new(buf);
        check_header(&mut r, MSG_XDOMAIN_REQUEST)?;
        let msg = XDomainRequest { digest: r.digest32()?, pu: r.element(group)? };
        r.finish()?;
        Ok(msg)
    }
}

impl PbftWire {
    /// The byte string covered by the signature: everything but the sig.
    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 + 1 + 8 + 8 + 32 + 4);
        out.push(MSG_PBFT);
        out.push(FORMAT_VERSION);
        out.push(self.phase as u8);
        out.extend_from_slice(&self.view.to_le_bytes());
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&self.sender.to_le_bytes());
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.signed_bytes();
        put_bytes(&mut out, &self.sig);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<PbftWire, Error> {
        let mut r = Reader::new(buf);
        check_header(&mut r, MSG_PBFT)?;
        let phase = PbftPhase::from_u8(r.u8()?)?;
        let view = r.u64()?;
        let seq = r.u64()?;
        let digest = r.digest32()?;
        let sender = r.u32()?;
        let sig_bytes = r.bytes()?;
        let sig: [u8; 32] = sig_bytes
            .try_into()
            .map_err(|_| Error::Wire("signature must be 32 bytes".into()))?;
        r.finish()?;
        Ok(PbftWire { phase, view, seq, digest, sender, sig })
    }

    pub const ENCODED_LEN: usize = 2 + 1 + 8 + 8 + 32 + 4 + 2 + 32;
}

impl AccessRequest {
    pub fn encode(&self, group: &Group) -> Vec<u8> {
        let mut out = header(MSG_ACCESS_REQUEST);
        out.extend_from_slice(&self.request_id.to_le_bytes());
        out.extend_from_slice(&(self.key_shares.len() as u32).to_le_bytes());
        for s in &self.key_shares {
            put_scalar(&mut out, group, s);
        }
        put_scalar(&mut out, group, &self.proof_share);
        out
    }

    pub fn decode(group: &Group, buf: &[u8]) -> Result<AccessRequest, Error> {
        let mut r = Reader::new(buf);
        check_header(&mut r, MSG_ACCESS_REQUEST)?;
        let request_id = r.u64()?;
        let count = r.u32()? as usize;
        let mut key_shares = Vec::with_capacity(count);
        for _ in 0..count {
            key_shares.push(r.scalar(group)?);
        }
        let proof_share = r.scalar(group)?;
        r.finish()?;
        Ok(AccessRequest { request_id, key_shares, proof_share })
    }

    pub fn encoded_len(group: &Group, key_count: usize) -> usize {
        2 + 8 + 4 + (key_count + 1) * (2 + group.scalar_byte_len())
    }
}

impl AccessResult {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = header(MSG_ACCESS_RESULT);
        out.extend_from_slice(&self.request_id.to_le_bytes());
        out.push(u8::from(self.accept));
        out
    }

    pub fn decode(buf: &[u8]) -> Result<AccessResult, Error> {
        let mut r = Reader::new(buf);
        check_header(&mut r, MSG_ACCESS_RESULT)?;
        let request_id = r.u64()?;
        let accept = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(Error::Wire(format!("bad accept flag {other}"))),
        };
        r.finish()?;
        Ok(AccessResult { request_id, accept })
    }
}
