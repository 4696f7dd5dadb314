use litichain::crypto::{mine, BlockHeader, HEADER_LEN};
use litichain::BlockHash;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn golden() -> (Vec<u8>, String) {
    let text = include_str!("fixtures/header_golden.hex");
    let mut lines = text.lines();
    let header = hex::decode(lines.next().unwrap()).unwrap();
    (header, lines.next().unwrap().to_string())
}

#[test]
fn header_bytes_match_fixture() {
    let (bytes, hash) = golden();
    assert_eq!(bytes.len(), HEADER_LEN);
    let mut hashes = [[0u8; 32]; 3];
    for (i, h) in hashes.iter_mut().enumerate() {
        for (j, b) in h.iter_mut().enumerate() {
            *b = (32 * i + j) as u8;
        }
    }
    let header = BlockHeader {
        prev_hash: BlockHash(hashes[0]),
        parent_hash: BlockHash(hashes[1]),
        merkle_root: BlockHash(hashes[2]),
        timestamp: 1_234_567,
        difficulty_bits: 8,
        nonce: 0xdead_beef,
    };
    assert_eq!(header.to_bytes().to_vec(), bytes);
    assert_eq!(header.block_hash().to_hex(), hash);
    let arr: [u8; HEADER_LEN] = bytes.try_into().unwrap();
    assert_eq!(BlockHeader::from_bytes(&arr), header);
}

#[test]
fn mean_trials_at_difficulty_eight() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 1000;
    let mut total = 0u64;
    for _ in 0..n {
        let template = BlockHeader {
            merkle_root: BlockHash(rng.random()),
            timestamp: rng.random(),
            ..BlockHeader::default()
        };
        let solved = mine(&template, 8).unwrap();
        assert!(solved.hash.leading_zero_bits() >= 8);
        assert_eq!(solved.header.block_hash(), solved.hash);
        total += solved.trials;
    }
    let mean = total as f64 / n as f64;
    assert!((mean - 256.0).abs() <= 0.2 * 256.0, "mean trials {mean}");
}

#[test]
fn mining_is_deterministic() {
    let template = BlockHeader {
        timestamp: 99,
        ..BlockHeader::default()
    };
    assert_eq!(mine(&template, 10).unwrap(), mine(&template, 10).unwrap());
}
