// SPDX-License-Identifier: Apache-2.0

//! A small TLS 1.3 stand-in: full and resumed handshakes with the real
//! round-trip structure, AES-128-GCM records and session tickets that can
//! carry a Fast Open cookie.
//!
//! Record framing on the wire:
//!
//! ```text
//! len u16 ‖ tag u8 ‖ body[len]
//! tag 1 = handshake (cleartext), 2 = ticket (sealed), 3 = application (sealed)
//! ```
//!
//! Sealed bodies are AES-128-GCM with `tag ‖ len` as associated data.
//!
//! Key exchange is idealised. Each side draws a 128-bit secret and publishes
//! its encryption under a simulation-wide [`KeyAgreement`] key that only
//! endpoints hold, so the shares on the wire are independent of the derived
//! traffic keys from an observer's point of view.

mod cache;
mod handshake;

pub use cache::{FopCacheEntry, TlsCache};
pub use handshake::{ClientEvents, ServerContext, ServerEvents, TicketStore, TlsClient, TlsServer};

use aes::cipher::generic_array::GenericArray;
use aes::cipher::{BlockDecrypt, BlockEncrypt, KeyInit};
use aes::Aes128;
use aes_gcm::aead::AeadInPlace;
use aes_gcm::Aes128Gcm;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::cookie::FastOpenCookie;
use crate::names::HostName;
use crate::sim::SimTime;

pub const TAG_HANDSHAKE: u8 = 1;
pub const TAG_TICKET: u8 = 2;
pub const TAG_APP: u8 = 3;

const GCM_TAG_LEN: usize = 16;

#[derive(Clone, Debug, thiserror::Error, PartialEq, Eq)]
pub enum TlsError {
    #[error("server authenticated as {got}, expected {expected}")]
    HostnameMismatch { expected: HostName, got: String },
    #[error("record failed authentication")]
    BadRecordMac,
    #[error("malformed record or message")]
    Malformed,
    #[error("unexpected message in state {0}")]
    Unexpected(&'static str),
}

/// Resumption ticket as held by the client.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionTicket {
    pub ticket_id: [u8; 16],
    pub resumption_secret: [u8; 16],
    pub embedded_cookie: Option<FastOpenCookie>,
    pub issued_at: SimTime,
    /// Start of the full handshake this ticket descends from. Resumed
    /// sessions pass it on unchanged.
    pub origin: SimTime,
}

impl SessionTicket {
    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 16 + 17 + 16);
        out.extend_from_slice(&self.ticket_id);
        out.extend_from_slice(&self.resumption_secret);
        match &self.embedded_cookie {
            Some(c) => {
                out.push(1);
                out.extend_from_slice(c.as_bytes());
            }
            None => out.push(0),
        }
        out.extend_from_slice(&self.issued_at.as_ms().to_be_bytes());
        out.extend_from_slice(&self.origin.as_ms().to_be_bytes());
        out
    }

    fn decode(b: &[u8]) -> Result<Self, TlsError> {
        let take16 = |at: usize| -> Result<[u8; 16], TlsError> {
            b.get(at..at + 16)
                .and_then(|s| s.try_into().ok())
                .ok_or(TlsError::Malformed)
        };
        let ticket_id = take16(0)?;
        let resumption_secret = take16(16)?;
        let (embedded_cookie, rest) = match b.get(32) {
            Some(1) => (Some(FastOpenCookie::from_array(take16(33)?)), 49),
            Some(0) => (None, 33),
            _ => return Err(TlsError::Malformed),
        };
        let times = b.get(rest..).filter(|t| t.len() == 16).ok_or(TlsError::Malformed)?;
        let issued_at = SimTime::from_ms(u64::from_be_bytes(times[..8].try_into().unwrap()));
        let origin = SimTime::from_ms(u64::from_be_bytes(times[8..].try_into().unwrap()));
        Ok(SessionTicket {
            ticket_id,
            resumption_secret,
            embedded_cookie,
            issued_at,
            origin,
        })
    }
}

pub(crate) fn kdf(label: &str, parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    for p in parts {
        h.update((p.len() as u16).to_be_bytes());
        h.update(p);
    }
    h.finalize().into()
}

/// Ideal key-agreement functionality shared by all endpoints of a
/// simulation and by nobody else.
#[derive(Clone)]
pub struct KeyAgreement {
    cipher: Aes128,
}

impl KeyAgreement {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let key: [u8; 16] = rng.random();
        KeyAgreement {
            cipher: Aes128::new(&GenericArray::from(key)),
        }
    }

    pub fn share_for(&self, secret: &[u8; 16]) -> [u8; 16] {
        let mut b = GenericArray::from(*secret);
        self.cipher.encrypt_block(&mut b);
        b.into()
    }

    pub fn secret_of(&self, share: &[u8; 16]) -> [u8; 16] {
        let mut b = GenericArray::from(*share);
        self.cipher.decrypt_block(&mut b);
        b.into()
    }
}

/// One direction of record protection.
pub struct RecordKey {
    aead: Aes128Gcm,
    iv: [u8; 12],
    seq: u64,
}

impl RecordKey {
    pub fn from_secret(secret: &[u8; 32]) -> Self {
        let aead = Aes128Gcm::new(GenericArray::from_slice(&secret[..16]));
        let iv: [u8; 12] = secret[16..28].try_into().unwrap();
        RecordKey { aead, iv, seq: 0 }
    }

    fn nonce(&mut self) -> [u8; 12] {
        let mut n = self.iv;
        for (b, s) in n[4..].iter_mut().zip(self.seq.to_be_bytes()) {
            *b ^= s;
        }
        self.seq += 1;
        n
    }

    pub fn sequence(&self) -> u64 {
        self.seq
    }

    /// Seals `plaintext` into a framed record.
    pub fn seal(&mut self, tag: u8, plaintext: &[u8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(3 + plaintext.len() + GCM_TAG_LEN);
        self.seal_into(tag, plaintext, &mut out);
        out
    }

    /// Appends the sealed record for `plaintext` to `out`.
    pub fn seal_into(&mut self, tag: u8, plaintext: &[u8], out: &mut Vec<u8>) {
        let len = (plaintext.len() + GCM_TAG_LEN) as u16;
        let mut aad = [0u8; 3];
        aad[0] = tag;
        aad[1..].copy_from_slice(&len.to_be_bytes());
        let nonce = self.nonce();
        out.reserve(3 + len as usize);
        out.extend_from_slice(&len.to_be_bytes());
        out.push(tag);
        let start = out.len();
        out.extend_from_slice(plaintext);
        let gcm_tag = self
            .aead
            .encrypt_in_place_detached(GenericArray::from_slice(&nonce), &aad, &mut out[start..])
            .expect("in-memory AES-GCM cannot fail");
        out.extend_from_slice(&gcm_tag);
    }

    /// Opens one framed record produced by [`RecordKey::seal`].
    pub fn open(&mut self, record: &[u8]) -> Result<Vec<u8>, TlsError> {
        let (frames, _) = split_records(record)?;
        let [frame] = frames.as_slice() else {
            return Err(TlsError::Malformed);
        };
        self.open_frame(frame)
    }

    fn open_frame(&mut self, frame: &Frame<'_>) -> Result<Vec<u8>, TlsError> {
        let mut aad = [0u8; 3];
        aad[0] = frame.tag;
        aad[1..].copy_from_slice(&(frame.body.len() as u16).to_be_bytes());
        let nonce = self.nonce();
        let split = frame
            .body
            .len()
            .checked_sub(GCM_TAG_LEN)
            .ok_or(TlsError::BadRecordMac)?;
        let (ct, gcm_tag) = frame.body.split_at(split);
        let mut plain = ct.to_vec();
        self.aead
            .decrypt_in_place_detached(
                GenericArray::from_slice(&nonce),
                &aad,
                &mut plain,
                GenericArray::from_slice(gcm_tag),
            )
            .map_err(|_| TlsError::BadRecordMac)?;
        Ok(plain)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Frame<'a> {
    pub tag: u8,
    pub body: &'a [u8],
}

/// Splits a byte stream into complete frames. Returns the frames and the
/// number of bytes consumed; a trailing partial frame is left unconsumed.
pub fn split_records(bytes: &[u8]) -> Result<(Vec<Frame<'_>>, usize), TlsError> {
    let mut frames = Vec::new();
    let mut at = 0;
    while bytes.len() - at >= 3 {
        let len = u16::from_be_bytes([bytes[at], bytes[at + 1]]) as usize;
        let tag = bytes[at + 2];
        if !(TAG_HANDSHAKE..=TAG_APP).contains(&tag) {
            return Err(TlsError::Malformed);
        }
        if bytes.len() - at - 3 < len {
            break;
        }
        frames.push(Frame {
            tag,
            body: &bytes[at + 3..at + 3 + len],
        });
        at += 3 + len;
    }
    Ok((frames, at))
}

pub(crate) fn plain_record(tag: u8, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(3 + body.len());
    out.extend_from_slice(&(body.len() as u16).to_be_bytes());
    out.push(tag);
    out.extend_from_slice(body);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn key() -> (RecordKey, RecordKey) {
        let s = kdf("test", &[b"secret"]);
        (RecordKey::from_secret(&s), RecordKey::from_secret(&s))
    }

    #[test]
    fn seal_open_round_trip() {
        let (mut tx, mut rx) = key();
        let rec = tx.seal(TAG_APP, b"GET /");
        assert_eq!(rx.open(&rec).unwrap(), b"GET /");
    }

    #[test]
    fn bit_flip_fails_authentication() {
        let (mut tx, mut rx) = key();
        let mut rec = tx.seal(TAG_APP, b"GET /");
        let last = rec.len() - 1;
        rec[last] ^= 1;
        assert_eq!(rx.open(&rec), Err(TlsError::BadRecordMac));
    }

    #[test]
    fn tag_is_authenticated() {
        let (mut tx, mut rx) = key();
        let mut rec = tx.seal(TAG_APP, b"x");
        rec[2] = TAG_TICKET;
        assert_eq!(rx.open(&rec), Err(TlsError::BadRecordMac));
    }

    #[test]
    fn equal_plaintexts_seal_differently() {
        let (mut tx, _) = key();
        let a = tx.seal(TAG_APP, b"same");
        let b = tx.seal(TAG_APP, b"same");
        assert_ne!(a, b);
        assert_eq!(tx.sequence(), 2);
    }

    #[test]
    fn plaintext_absent_from_record() {
        let (mut tx, _) = key();
        let secret = [0x42u8; 16];
        let rec = tx.seal(TAG_TICKET, &secret);
        assert!(!rec.windows(16).any(|w| w == secret));
    }

    #[test]
    fn key_agreement_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ka = KeyAgreement::new(&mut rng);
        let s: [u8; 16] = rng.random();
        let share = ka.share_for(&s);
        assert_ne!(share, s);
        assert_eq!(ka.secret_of(&share), s);
    }

    #[test]
    fn framing_leaves_partial_tail() {
        let mut bytes = plain_record(TAG_HANDSHAKE, b"abc");
        bytes.extend_from_slice(&[0, 9, TAG_APP, 1]);
        let (frames, used) = split_records(&bytes).unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(used, 6);
        assert_eq!(split_records(&[0, 0, 9]), Err(TlsError::Malformed));
    }

    #[test]
    fn ticket_encoding_round_trips() {
        let t = SessionTicket {
            ticket_id: [1; 16],
            resumption_secret: [2; 16],
            embedded_cookie: Some(FastOpenCookie::from_array([3; 16])),
            issued_at: SimTime::from_ms(10),
            origin: SimTime::from_ms(5),
        };
        assert_eq!(SessionTicket::decode(&t.encode()).unwrap(), t);
        let plain = SessionTicket { embedded_cookie: None, ..t };
        assert_eq!(SessionTicket::decode(&plain.encode()).unwrap(), plain);
        assert_eq!(SessionTicket::decode(&[0; 5]), Err(TlsError::Malformed));
    }
}
