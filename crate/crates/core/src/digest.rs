use sha2::{Digest, Sha256};

/// First eight bytes (big-endian) of the SHA-256 of `bytes`.
pub fn digest64(bytes: &[u8]) -> u64 {
    let hash = Sha256::digest(bytes);
    u64::from_be_bytes(hash[..8].try_into().expect("sha256 is 32 bytes"))
}

pub fn hex64(v: u64) -> String {
    format!("{v:016x}")
}

/// Seed for sub-task `index` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut bytes = Vec::with_capacity(label.len() + 16);
    bytes.extend_from_slice(&seed.to_be_bytes());
    bytes.extend_from_slice(label.as_bytes());
    bytes.extend_from_slice(&index.to_be_bytes());
    digest64(&bytes)
}
