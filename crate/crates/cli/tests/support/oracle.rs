//! Brute-force eviction reference. Works from slot metadata alone: slots are
//! ranked by original position and every rule is applied by full sorts and
//! filters, independent of the library's index arithmetic.

use kvsift::kvcache::{CacheBudget, PolicyKind, SlotMeta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Indices into `slots` that should survive, ascending. Assumes the store is
/// over capacity.
pub fn survivors(kind: PolicyKind, slots: &[SlotMeta], scores: &[f64], b: &CacheBudget, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..slots.len()).collect();
    order.sort_by_key(|&i| slots[i].original_position);
    let sinks: Vec<usize> = if kind == PolicyKind::Window { vec![] } else { order[..b.n_sink].to_vec() };
    let rest: Vec<usize> = order[sinks.len()..].to_vec();
    let pool = b.capacity - sinks.len();
    let newest = |n: usize| rest[rest.len() - n..].to_vec();

    let mut keep: Vec<usize> = match kind {
        PolicyKind::Window => newest(b.capacity),
        PolicyKind::SinkRecent => newest(b.n_recent),
        PolicyKind::SinkRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut keyed: Vec<(u64, usize)> = rest.iter().map(|&i| (rng.random::<u64>(), i)).collect();
            keyed.sort();
            keyed.into_iter().take(pool).map(|(_, i)| i).collect()
        }
        PolicyKind::SinkInterval => {
            let stride = slots.len() / b.capacity;
            let mut picked: Vec<usize> =
                rest.iter().enumerate().filter(|(r, _)| r % stride == 0).map(|(_, &i)| i).take(pool).collect();
            let pad: Vec<usize> =
                rest.iter().rev().filter(|i| !picked.contains(i)).take(pool - picked.len()).copied().collect();
            picked.extend(pad);
            picked
        }
        PolicyKind::SinkEntropy => {
            let recent = newest(b.n_recent);
            let mut candidates: Vec<usize> = rest.iter().filter(|i| !recent.contains(i)).copied().collect();
            candidates.sort_by(|&x, &y| scores[y].total_cmp(&scores[x]).then(x.cmp(&y)));
            candidates.truncate(b.n_entropy);
            candidates.into_iter().chain(recent).collect()
        }
    };
    keep.extend(sinks);
    keep.sort_by_key(|&i| slots[i].original_position);
    keep
}
