// SPDX-License-Identifier: Apache-2.0

//! Stateless Fast Open cookies.
//!
//! A cookie is one AES-128 block: `E_k(digest(client_ip) ‖ nonce)` where the
//! digest is a keyed 64-bit PRF of the full address and the nonce is fresh
//! per issuance. Validation decrypts and compares the digest, so a random
//! 16-byte string passes with probability 2^-64.

use std::fmt;
use std::net::IpAddr;

use aes::cipher::generic_array::GenericArray;
use aes::cipher::{BlockDecrypt, BlockEncrypt, KeyInit};
use aes::Aes128;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const COOKIE_LEN: usize = 16;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FastOpenCookie([u8; COOKIE_LEN]);

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("fast open cookies are {COOKIE_LEN} bytes, got {0}")]
pub struct CookieLengthError(pub usize);

impl FastOpenCookie {
    pub const fn from_array(bytes: [u8; COOKIE_LEN]) -> Self {
        FastOpenCookie(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CookieLengthError> {
        bytes
            .try_into()
            .map(FastOpenCookie)
            .map_err(|_| CookieLengthError(bytes.len()))
    }

    pub fn as_bytes(&self) -> &[u8; COOKIE_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl Serialize for FastOpenCookie {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for FastOpenCookie {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = hex::decode(&text).map_err(serde::de::Error::custom)?;
        FastOpenCookie::from_slice(&bytes).map_err(serde::de::Error::custom)
    }
}

impl fmt::Debug for FastOpenCookie {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FastOpenCookie({})", self.to_hex())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CookieVerdict {
    Accept,
    Reject,
}

/// Secret shared by every address of one server pool.
#[derive(Clone)]
pub struct ServerCookieKey {
    key_id: u32,
    cipher: Aes128,
    digest_v4: Aes128,
    digest_v6: Aes128,
}

impl fmt::Debug for ServerCookieKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ServerCookieKey")
            .field("key_id", &self.key_id)
            .finish_non_exhaustive()
    }
}

fn subkey(cipher: &Aes128, label: u8) -> Aes128 {
    let mut block = GenericArray::from([label; 16]);
    cipher.encrypt_block(&mut block);
    Aes128::new(&block)
}

impl ServerCookieKey {
    pub fn from_material(material: [u8; 16], key_id: u32) -> Self {
        let cipher = Aes128::new(&GenericArray::from(material));
        let digest_v4 = subkey(&cipher, 0x04);
        let digest_v6 = subkey(&cipher, 0x06);
        ServerCookieKey {
            key_id,
            cipher,
            digest_v4,
            digest_v6,
        }
    }

    pub fn generate<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::from_material(rng.random(), 0)
    }

    pub fn key_id(&self) -> u32 {
        self.key_id
    }

    /// Fresh material, next key id. Cookies minted under `self` no longer
    /// validate under the result.
    pub fn rotate<R: Rng + ?Sized>(&self, rng: &mut R) -> Self {
        Self::from_material(rng.random(), self.key_id.wrapping_add(1))
    }

    fn ip_digest(&self, ip: IpAddr) -> [u8; 8] {
        let (cipher, block) = match ip {
            IpAddr::V4(v4) => {
                let mut b = [0u8; 16];
                b[12..].copy_from_slice(&v4.octets());
                (&self.digest_v4, b)
            }
            IpAddr::V6(v6) => (&self.digest_v6, v6.octets()),
        };
        let mut block = GenericArray::from(block);
        cipher.encrypt_block(&mut block);
        block[..8].try_into().unwrap()
    }

    pub fn mint<R: Rng + ?Sized>(&self, client_ip: IpAddr, rng: &mut R) -> FastOpenCookie {
        let mut plain = [0u8; 16];
        plain[..8].copy_from_slice(&self.ip_digest(client_ip));
        plain[8..].copy_from_slice(&rng.random::<u64>().to_be_bytes());
        let mut block = GenericArray::from(plain);
        self.cipher.encrypt_block(&mut block);
        FastOpenCookie(block.into())
    }

    /// Checks a cookie as it arrived on the wire. Anything that is not
    /// exactly one block is rejected.
    pub fn validate(&self, cookie: &[u8], claimed_ip: IpAddr) -> CookieVerdict {
        let Ok(bytes) = <[u8; COOKIE_LEN]>::try_from(cookie) else {
            return CookieVerdict::Reject;
        };
        let mut block = GenericArray::from(bytes);
        self.cipher.decrypt_block(&mut block);
        if block[..8] == self.ip_digest(claimed_ip) {
            CookieVerdict::Accept
        } else {
            CookieVerdict::Reject
        }
    }

    pub fn validate_cookie(&self, cookie: &FastOpenCookie, claimed_ip: IpAddr) -> CookieVerdict {
        self.validate(cookie.as_bytes(), claimed_ip)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    fn v4(last: u8) -> IpAddr {
        IpAddr::from([198, 51, 100, last])
    }

    #[test]
    fn round_trip_and_binding() {
        let mut rng = rng();
        let key = ServerCookieKey::generate(&mut rng);
        let a = key.mint(v4(1), &mut rng);
        assert_eq!(key.validate_cookie(&a, v4(1)), CookieVerdict::Accept);
        assert_eq!(key.validate_cookie(&a, v4(2)), CookieVerdict::Reject);
    }

    #[test]
    fn fresh_bytes_per_issuance() {
        let mut rng = rng();
        let key = ServerCookieKey::generate(&mut rng);
        assert_ne!(key.mint(v4(1), &mut rng), key.mint(v4(1), &mut rng));
    }

    #[test]
    fn wrong_length_rejected() {
        let mut rng = rng();
        let key = ServerCookieKey::generate(&mut rng);
        let c = key.mint(v4(1), &mut rng);
        assert_eq!(key.validate(&c.as_bytes()[..15], v4(1)), CookieVerdict::Reject);
        assert_eq!(FastOpenCookie::from_slice(&[0; 8]), Err(CookieLengthError(8)));
    }

    #[test]
    fn rotation_invalidates_old_cookies() {
        let mut rng = rng();
        let k1 = ServerCookieKey::generate(&mut rng);
        let k2 = k1.rotate(&mut rng);
        assert_eq!(k2.key_id(), k1.key_id() + 1);
        let c = k1.mint(v4(1), &mut rng);
        assert_eq!(k2.validate_cookie(&c, v4(1)), CookieVerdict::Reject);
        assert_eq!(k2.mint(v4(1), &mut rng).as_bytes().len(), COOKIE_LEN);
    }

    #[test]
    fn shared_key_validates_across_pool_members() {
        let mut rng = rng();
        let material: [u8; 16] = rand::Rng::random(&mut rng);
        let member_a = ServerCookieKey::from_material(material, 3);
        let member_b = ServerCookieKey::from_material(material, 3);
        let c = member_a.mint(v4(9), &mut rng);
        assert_eq!(member_b.validate_cookie(&c, v4(9)), CookieVerdict::Accept);
    }

    #[test]
    fn v4_and_v6_with_same_tail_are_distinct() {
        let mut rng = rng();
        let key = ServerCookieKey::generate(&mut rng);
        let mapped: IpAddr = "::c633:6401".parse().unwrap();
        let c = key.mint(v4(1), &mut rng);
        assert_eq!(key.validate_cookie(&c, mapped), CookieVerdict::Reject);
    }

    #[test]
    fn debug_does_not_print_material() {
        let key = ServerCookieKey::from_material([0x5a; 16], 1);
        let s = format!("{key:?}");
        assert!(!s.contains("5a"));
    }
}
