//! Public-seed sampling.
//!
//! Each candidate integer is the first eight bytes (big-endian) of
//! `SHA-256(seed || 0x00 || round_id || 0x00 || counter)` where `counter`
//! is the decimal text of a per-call counter starting at 0. Values at or
//! above the largest multiple of `N` below 2^64 are rejected, the rest map
//! to `1 + value mod N`. Sampling without replacement skips indices drawn
//! earlier in this call or listed in `already_drawn`.

use std::collections::BTreeSet;

use sha2::{Digest, Sha256};

use crate::error::{AuditError, Result};

/// Uniform 64-bit value for one counter position.
pub fn hash_counter(seed: &str, round_id: &str, counter: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.as_bytes());
    h.update([0u8]);
    h.update(round_id.as_bytes());
    h.update([0u8]);
    h.update(counter.to_string().as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(bytes)
}

/// Draws `count` indices in `1..=population`, in draw order.
pub fn draw_indices(
    seed: &str,
    round_id: &str,
    population: u64,
    count: u64,
    replacement: bool,
    already_drawn: &BTreeSet<u64>,
) -> Result<Vec<u64>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if population == 0 {
        return Err(AuditError::InvalidArgument("cannot sample from an empty population".into()));
    }
    let mut taken: BTreeSet<u64> = already_drawn.clone();
    if !replacement {
        let remaining = population.saturating_sub(taken.len() as u64);
        if remaining == 0 {
            return Err(AuditError::Exhausted(population));
        }
        if count > remaining {
            return Err(AuditError::InvalidArgument(format!(
                "cannot draw {count} more cards without replacement; {remaining} remain"
            )));
        }
    }
    let zone = (u64::MAX as u128 + 1) / population as u128 * population as u128;
    let mut out = Vec::with_capacity(count as usize);
    let mut counter = 0u64;
    while (out.len() as u64) < count {
        let r = hash_counter(seed, round_id, counter);
        counter += 1;
        if r as u128 >= zone {
            continue;
        }
        let index = r % population + 1;
        if !replacement && !taken.insert(index) {
            continue;
        }
        out.push(index);
    }
    Ok(out)
}
