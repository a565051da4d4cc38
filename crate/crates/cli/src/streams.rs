//! Named random number streams.
//!
//! Every source of randomness in a run is a ChaCha20 generator seeded by
//! hashing the master seed together with a stream name ("simulate",
//! "chain-0", "augmentation-0", ...). Streams are therefore independent of
//! each other and of the order in which the program happens to draw from
//! them: adding a chain or reordering work never disturbs the numbers any
//! other stream produces.

use sha2::{Digest, Sha256};

pub fn derive_seed(master: u64, name: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update([0u8]);
    hasher.update(name.as_bytes());
    hasher.finalize().into()
}

pub fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
