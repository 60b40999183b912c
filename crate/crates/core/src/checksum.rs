use sha2::{Digest, Sha256};

/// 64-bit payload checksum used by every binary file format in the crate:
/// the first eight bytes of the SHA-256 digest, read little-endian.
pub(crate) fn checksum64(payload: &[u8]) -> u64 {
    let digest = Sha256::digest(payload);
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}
