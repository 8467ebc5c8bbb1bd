//! JSON-lines cache dump: one header line, then one line per slot.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{CacheBudget, EntropyCache, EvictionPolicy, KvCacheStore, SlotMeta};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub policy: EvictionPolicy,
    pub budget: CacheBudget,
    pub slots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSlot {
    #[serde(flatten)]
    pub meta: SlotMeta,
    /// Current (decayed) score from the entropy cache.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub header: SnapshotHeader,
    pub slots: Vec<SnapshotSlot>,
}

pub fn write_snapshot(
    mut out: impl Write,
    store: &KvCacheStore,
    entropy_cache: &EntropyCache,
    policy: &EvictionPolicy,
    budget: &CacheBudget,
) -> Result<()> {
    let header = SnapshotHeader {
        policy: *policy,
        budget: *budget,
        slots: store.len(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for (meta, &score) in store.slots().iter().zip(entropy_cache.scores()) {
        serde_json::to_writer(&mut out, &SnapshotSlot { meta: *meta, score })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_snapshot(input: impl BufRead) -> Result<Snapshot> {
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::input("empty snapshot"))??;
    let header: SnapshotHeader = serde_json::from_str(&first)?;
    let slots = lines
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect::<Result<Vec<SnapshotSlot>>>()?;
    if slots.len() != header.slots {
        return Err(Error::input(format!(
            "snapshot header announces {} slots, found {}",
            header.slots,
            slots.len()
        )));
    }
    Ok(Snapshot { header, slots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kvcache::PolicyKind;

    #[test]
    fn dump_and_reload() {
        let mut store = KvCacheStore::new(1, 1, 2);
        let mut e = EntropyCache::new();
        for i in 0..3u64 {
            let v = vec![vec![0.0; 2]];
            store
                .append(&mut e, &v, &v, SlotMeta::new(i * 3, 0.25 * i as f64, 1))
                .unwrap();
        }
        e.decay(0.5).unwrap();
        let policy = EvictionPolicy::new(PolicyKind::SinkEntropy);
        let budget = CacheBudget::entropy(8, 4).unwrap();
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &store, &e, &policy, &budget).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text
            .lines()
            .nth(2)
            .unwrap()
            .contains("\"original_position\":3"));
        let snap = read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(snap.header.policy, policy);
        assert_eq!(snap.slots[2].score, 0.25);
        assert_eq!(snap.slots[2].meta.entropy, 0.5);
    }
}
