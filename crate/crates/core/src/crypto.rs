//! Hash layer: block headers, merkle roots, double SHA-256 block hashes,
//! toy-difficulty proof of work and whole-chain verification.
//!
//! Every unit commits to two hash pointers: `parent_hash` (the EOG parent,
//! or the previous unit inside an expanded group) and `prev_hash` (the AOG
//! referent, all-zero when the unit has no AOG edge). Deleting a block that
//! a live block still points at therefore shows up as a `MissingReferent`
//! failure in [`verify_chain`].

use std::fmt;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chain::{BlockId, ChainState};

pub const HASH_LEN: usize = 32;

/// Serialized header length: three hashes, `u64` timestamp, `u32` difficulty, `u64` nonce.
pub const HEADER_LEN: usize = 3 * HASH_LEN + 8 + 4 + 8;

/// A 32-byte SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct BlockHash(pub [u8; HASH_LEN]);

impl BlockHash {
    pub const ZERO: BlockHash = BlockHash([0; HASH_LEN]);

    pub fn as_bytes(&self) -> &[u8; HASH_LEN] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0; HASH_LEN]
    }

    /// Number of leading zero bits, big-endian bit order over the byte array.
    pub fn leading_zero_bits(&self) -> u32 {
        let mut bits = 0;
        for byte in self.0 {
            if byte == 0 {
                bits += 8;
            } else {
                bits += byte.leading_zeros();
                break;
            }
        }
        bits
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for BlockHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlockHash({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for BlockHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub fn sha256(data: &[u8]) -> [u8; HASH_LEN] {
    Sha256::digest(data).into()
}

pub fn double_sha256(data: &[u8]) -> BlockHash {
    BlockHash(sha256(&sha256(data)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct BlockHeader {
    pub prev_hash: BlockHash,
    pub parent_hash: BlockHash,
    pub merkle_root: BlockHash,
    /// Simulation time in milliseconds.
    pub timestamp: u64,
    /// Required number of leading zero bits.
    pub difficulty_bits: u32,
    pub nonce: u64,
}

impl BlockHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..32].copy_from_slice(&self.prev_hash.0);
        out[32..64].copy_from_slice(&self.parent_hash.0);
        out[64..96].copy_from_slice(&self.merkle_root.0);
        out[96..104].copy_from_slice(&self.timestamp.to_le_bytes());
        out[104..108].copy_from_slice(&self.difficulty_bits.to_le_bytes());
        out[108..116].copy_from_slice(&self.nonce.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8; HEADER_LEN]) -> Self {
        let hash_at = |at: usize| {
            let mut h = [0u8; HASH_LEN];
            h.copy_from_slice(&bytes[at..at + HASH_LEN]);
            BlockHash(h)
        };
        BlockHeader {
            prev_hash: hash_at(0),
            parent_hash: hash_at(32),
            merkle_root: hash_at(64),
            timestamp: u64::from_le_bytes(bytes[96..104].try_into().unwrap()),
            difficulty_bits: u32::from_le_bytes(bytes[104..108].try_into().unwrap()),
            nonce: u64::from_le_bytes(bytes[108..116].try_into().unwrap()),
        }
    }

    pub fn block_hash(&self) -> BlockHash {
        double_sha256(&self.to_bytes())
    }
}

/// Quantizes simulation time to the header's millisecond timestamp.
pub fn timestamp_ms(time: f64) -> u64 {
    if time.is_finite() && time > 0.0 {
        (time * 1000.0).round() as u64
    } else {
        0
    }
}

/// Hash of the fixed all-zero genesis header.
pub fn genesis_hash() -> BlockHash {
    BlockHeader::default().block_hash()
}

/// Merkle root over the payloads: SHA-256 leaves, SHA-256 of concatenated
/// pairs, last node duplicated on odd levels. An empty list gives the zero root.
pub fn merkle_root<T: AsRef<[u8]>>(payloads: &[T]) -> BlockHash {
    if payloads.is_empty() {
        return BlockHash::ZERO;
    }
    let mut level: Vec<[u8; HASH_LEN]> = payloads.iter().map(|p| sha256(p.as_ref())).collect();
    let mut buf = [0u8; 2 * HASH_LEN];
    while level.len() > 1 {
        if level.len() % 2 == 1 {
            level.push(*level.last().unwrap());
        }
        level = level
            .chunks_exact(2)
            .map(|pair| {
                buf[..HASH_LEN].copy_from_slice(&pair[0]);
                buf[HASH_LEN..].copy_from_slice(&pair[1]);
                sha256(&buf)
            })
            .collect();
    }
    BlockHash(level[0])
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MineError {
    #[error("difficulty {0} exceeds 256 bits")]
    DifficultyTooHigh(u32),
    #[error("nonce space exhausted at difficulty {0}")]
    NonceSpaceExhausted(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Solved {
    pub header: BlockHeader,
    pub hash: BlockHash,
    pub trials: u64,
}

/// Finds the smallest nonce, counting up from zero, whose block hash has at
/// least `difficulty` leading zero bits. The header's `difficulty_bits` is
/// set to `difficulty` before searching so the hash commits to it.
pub fn mine(template: &BlockHeader, difficulty: u32) -> Result<Solved, MineError> {
    if difficulty > 256 {
        return Err(MineError::DifficultyTooHigh(difficulty));
    }
    let mut header = *template;
    header.difficulty_bits = difficulty;
    let mut bytes = header.to_bytes();
    let mut nonce: u64 = 0;
    loop {
        bytes[108..116].copy_from_slice(&nonce.to_le_bytes());
        let hash = double_sha256(&bytes);
        if hash.leading_zero_bits() >= difficulty {
            header.nonce = nonce;
            return Ok(Solved {
                header,
                hash,
                trials: nonce + 1,
            });
        }
        nonce = nonce
            .checked_add(1)
            .ok_or(MineError::NonceSpaceExhausted(difficulty))?;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum FailureKind {
    HashMismatch,
    MissingReferent,
    PowUnsatisfied,
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureKind::HashMismatch => "hash-mismatch",
            FailureKind::MissingReferent => "missing-referent",
            FailureKind::PowUnsatisfied => "pow-unsatisfied",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VerificationReport {
    pub checked: usize,
    pub failures: Vec<(BlockId, FailureKind)>,
}

impl VerificationReport {
    pub fn is_valid(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Verifies every alive unit of the chain.
///
/// All alive units are hash- and PoW-checked against their stored header.
/// Hash pointers are checked only for units that have not yet expired: a
/// retained unit may legitimately outlive its own referents.
pub fn verify_chain(state: &ChainState) -> VerificationReport {
    let mut report = VerificationReport::default();
    let now = state.clock();
    for unit in state.units() {
        report.checked += 1;
        let recomputed = unit.header.block_hash();
        if recomputed != unit.hash {
            report.failures.push((unit.id, FailureKind::HashMismatch));
            continue;
        }
        if recomputed.leading_zero_bits() < unit.header.difficulty_bits {
            report.failures.push((unit.id, FailureKind::PowUnsatisfied));
            continue;
        }
        if unit.id.is_genesis() || unit.expiration <= now {
            continue;
        }
        let parent_ok = state
            .unit(unit.eog_parent)
            .is_some_and(|p| p.hash == unit.header.parent_hash);
        let prev_ok = match unit.aog_prev {
            Some(prev) => state
                .unit(prev)
                .is_some_and(|p| p.hash == unit.header.prev_hash),
            None => unit.header.prev_hash.is_zero(),
        };
        if !parent_ok || !prev_ok {
            report
                .failures
                .push((unit.id, FailureKind::MissingReferent));
        }
    }
    report.failures.sort();
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_merkle_is_zero() {
        assert_eq!(merkle_root::<&[u8]>(&[]), BlockHash::ZERO);
    }

    #[test]
    fn single_leaf_merkle_is_leaf_hash() {
        assert_eq!(merkle_root(&[b"x"]).0, sha256(b"x"));
    }

    #[test]
    fn three_leaf_merkle_golden() {
        // Computed with an independent hashlib script.
        let root = merkle_root(&[&b"alpha"[..], b"bravo", b"charlie"]);
        assert_eq!(
            root.to_hex(),
            "1991c77344d15bc994c6590c328f069c1deb7a09f61aa622c81d5ed0665d1632"
        );
    }

    #[test]
    fn header_round_trips_through_bytes() {
        let h = BlockHeader {
            prev_hash: BlockHash([7; 32]),
            parent_hash: BlockHash([9; 32]),
            merkle_root: BlockHash([1; 32]),
            timestamp: 42,
            difficulty_bits: 3,
            nonce: u64::MAX - 1,
        };
        assert_eq!(BlockHeader::from_bytes(&h.to_bytes()), h);
    }

    #[test]
    fn difficulty_zero_accepts_first_nonce() {
        let s = mine(&BlockHeader::default(), 0).unwrap();
        assert_eq!(s.header.nonce, 0);
        assert_eq!(s.trials, 1);
    }

    #[test]
    fn mine_golden_difficulty_four() {
        let s = mine(&BlockHeader::default(), 4).unwrap();
        assert_eq!(s.header.nonce, 24);
        assert_eq!(s.trials, 25);
        assert_eq!(
            s.hash.to_hex(),
            "03aa7df20d9a019c4aca1f7502b43116dc05a4eaa45688e2457058dfe281d2f9"
        );
    }

    #[test]
    fn genesis_hash_golden() {
        assert_eq!(
            genesis_hash().to_hex(),
            "96f130fbae7e368de8527d7dd4a98cf2f675f247a376ea347d71fcf889d045f8"
        );
    }

    #[test]
    fn leading_zero_bits_counts_across_bytes() {
        let mut h = [0u8; 32];
        h[1] = 0b0001_0000;
        assert_eq!(BlockHash(h).leading_zero_bits(), 11);
        assert_eq!(BlockHash::ZERO.leading_zero_bits(), 256);
    }

    #[test]
    fn rejects_impossible_difficulty() {
        assert_eq!(
            mine(&BlockHeader::default(), 300),
            Err(MineError::DifficultyTooHigh(300))
        );
    }
}
