//! Seeded index shuffling shared by tuning and cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic permutation of `0..n`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Derives a child seed from a base seed and a task key (splitmix64 over
/// the key's bytes).
pub fn derive_seed(base: u64, key: &str) -> u64 {
    let mut state = base ^ 0x9e37_79b9_7f4a_7c15;
    for chunk in key.as_bytes().chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        state ^= u64::from_le_bytes(word);
        state = splitmix(state);
    }
    splitmix(state ^ key.len() as u64)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Splits `items` into (kept, held out) with `round(len * fraction)` held
/// out (at least one, and at least one kept when `len >= 2`). Both parts are
/// returned in ascending order.
pub fn holdout(items: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n = items.len();
    let mut k = ((n as f64) * fraction).round() as usize;
    k = k.clamp(usize::from(n >= 2), n.saturating_sub(1));
    let perm = permutation(n, seed);
    let mut held: Vec<usize> = perm[..k].iter().map(|&i| items[i]).collect();
    let mut kept: Vec<usize> = perm[k..].iter().map(|&i| items[i]).collect();
    held.sort_unstable();
    kept.sort_unstable();
    (kept, held)
}

/// Partitions `items` into `k` near-equal chunks after a seeded shuffle.
pub fn partition(items: &[usize], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let n = items.len();
    let perm = permutation(n, seed);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = n / k + usize::from(f < n % k);
        let mut part: Vec<usize> = perm[start..start + size].iter().map(|&i| items[i]).collect();
        part.sort_unstable();
        out.push(part);
        start += size;
    }
    out
}
