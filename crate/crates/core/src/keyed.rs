//! Seed-keyed orderings that do not depend on any RNG implementation.
//!
//! Each id gets a SHA-256 rank over `(domain, seed, id)` and ids are sorted
//! by that rank. The result depends only on the seed and the id strings, so
//! it is stable across platforms, crate upgrades and input order.

use sha2::{Digest, Sha256};

fn rank(domain: &str, seed: u64, id: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update((domain.len() as u64).to_le_bytes());
    hasher.update(domain.as_bytes());
    hasher.update(seed.to_le_bytes());
    hasher.update(id.as_bytes());
    hasher.finalize().into()
}

/// Returns `ids` reordered by their keyed rank. Ties (identical ids) keep
/// input order.
pub(crate) fn permute<'a, I>(domain: &str, seed: u64, ids: I) -> Vec<&'a str>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut ranked: Vec<([u8; 32], &'a str)> = ids.into_iter().map(|id| (rank(domain, seed, id), id)).collect();
    ranked.sort_by_key(|a| a.0);
    ranked.into_iter().map(|(_, id)| id).collect()
}
