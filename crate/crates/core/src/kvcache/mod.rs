//! KV-cache store, eviction policies and the parallel entropy cache.
//!
//! Eviction is always an explicit call: [`KvCacheStore::append`] never
//! drops slots. [`evict`] asks a strategy for survivors and compacts the
//! store and the entropy cache together.

mod budget;
mod entropy_cache;
mod policy;
mod snapshot;
mod store;
mod topk;

pub use budget::{CacheBudget, DEFAULT_SINK};
pub use entropy_cache::{validate_eta, EntropyCache};
pub use policy::{EvictionPolicy, EvictionStrategy, PolicyKind, PolicyRegistry};
pub use snapshot::{read_snapshot, write_snapshot, Snapshot, SnapshotHeader, SnapshotSlot};
pub use store::{KvCacheStore, SlotMeta};
pub use topk::top_k_indices;

use crate::error::Result;

/// Evicts down to `budget.capacity` if the store is over it and returns the
/// retained (pre-compaction) slot indices. Within capacity this is a no-op
/// that returns every index.
pub fn evict(
    store: &mut KvCacheStore,
    entropy_cache: &mut EntropyCache,
    strategy: &mut dyn EvictionStrategy,
    budget: &CacheBudget,
) -> Result<Vec<usize>> {
    budget.validate()?;
    if store.len() <= budget.capacity {
        return Ok((0..store.len()).collect());
    }
    let keep = strategy.select(store.slots(), entropy_cache.scores(), budget)?;
    debug_assert_eq!(keep.len(), budget.capacity);
    store.retain(entropy_cache, &keep)?;
    Ok(keep)
}
