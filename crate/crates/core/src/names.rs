// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A DNS-style hostname, stored lowercase.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct HostName(String);

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("invalid hostname {0:?}")]
pub struct InvalidHostName(pub String);

impl HostName {
    pub fn new(name: &str) -> Result<Self, InvalidHostName> {
        let valid = !name.is_empty()
            && name.len() <= 253
            && name.split('.').all(|label| {
                !label.is_empty()
                    && label.len() <= 63
                    && label
                        .bytes()
                        .all(|b| b.is_ascii_alphanumeric() || b == b'-')
            });
        if !valid {
            return Err(InvalidHostName(name.to_string()));
        }
        Ok(HostName(name.to_ascii_lowercase()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for HostName {
    type Error = InvalidHostName;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        HostName::new(&s)
    }
}

impl From<HostName> for String {
    fn from(h: HostName) -> String {
        h.0
    }
}

impl fmt::Display for HostName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Opaque 128-bit label an application attaches to cached cookies. Only
/// equality is meaningful.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContextId(u128);

impl ContextId {
    pub const fn from_raw(raw: u128) -> Self {
        ContextId(raw)
    }

    /// Stable identifier for a human-readable label such as
    /// `"first-party:news.example"`.
    pub fn from_label(label: &str) -> Self {
        let digest = Sha256::digest(label.as_bytes());
        ContextId(u128::from_be_bytes(digest[..16].try_into().unwrap()))
    }

    pub fn raw(self) -> u128 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hostnames_normalise_and_validate() {
        assert_eq!(HostName::new("Example.ORG").unwrap().as_str(), "example.org");
        assert!(HostName::new("").is_err());
        assert!(HostName::new("a..b").is_err());
        assert!(HostName::new("bad_name.org").is_err());
    }

    #[test]
    fn context_labels() {
        assert_eq!(ContextId::from_label("a"), ContextId::from_label("a"));
        assert_ne!(ContextId::from_label("a"), ContextId::from_label("b"));
    }
}
