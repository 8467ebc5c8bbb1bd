use serde::{Deserialize, Serialize};

use super::PolicyKind;
use crate::error::{Error, Result};

/// Attention-sink slots kept by every sink-bearing policy.
pub const DEFAULT_SINK: usize = 4;

/// How the cache capacity is split between sink, entropy-selected and
/// recent slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheBudget {
    pub n_sink: usize,
    pub n_entropy: usize,
    pub n_recent: usize,
    pub capacity: usize,
}

impl CacheBudget {
    pub fn new(n_sink: usize, n_entropy: usize, n_recent: usize, capacity: usize) -> Result<Self> {
        let b = Self {
            n_sink,
            n_entropy,
            n_recent,
            capacity,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sink + self.n_entropy + self.n_recent != self.capacity {
            return Err(Error::config(format!(
                "budget split {}+{}+{} does not equal capacity {}",
                self.n_sink, self.n_entropy, self.n_recent, self.capacity
            )));
        }
        if self.capacity == 0 {
            return Err(Error::config("capacity must be positive"));
        }
        Ok(())
    }

    /// Sink plus recent slots only.
    pub fn recent(capacity: usize, n_sink: usize) -> Result<Self> {
        Self::new(n_sink, 0, capacity.saturating_sub(n_sink), capacity)
    }

    /// Sink plus entropy-selected slots only.
    pub fn entropy(capacity: usize, n_sink: usize) -> Result<Self> {
        Self::new(n_sink, capacity.saturating_sub(n_sink), 0, capacity)
    }

    /// The split used for each policy in the benchmark tables: the stream
    /// policy spends everything on recent slots, the sampling policies on
    /// selected slots, and the sliding window keeps no sinks.
    pub fn for_policy(kind: PolicyKind, capacity: usize, n_sink: usize) -> Result<Self> {
        match kind {
            PolicyKind::Window => Self::recent(capacity, 0),
            PolicyKind::SinkRecent => Self::recent(capacity, n_sink),
            PolicyKind::SinkRandom | PolicyKind::SinkInterval | PolicyKind::SinkEntropy => {
                Self::entropy(capacity, n_sink)
            }
        }
    }

    /// Non-sink slots available to a policy.
    pub fn pool(&self) -> usize {
        self.capacity - self.n_sink
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_splits() {
        let b = CacheBudget::for_policy(PolicyKind::SinkEntropy, 512, 4).unwrap();
        assert_eq!((b.n_sink, b.n_entropy, b.n_recent), (4, 508, 0));
        let b = CacheBudget::for_policy(PolicyKind::SinkRecent, 1024, 4).unwrap();
        assert_eq!((b.n_entropy, b.n_recent), (0, 1020));
        assert_eq!(
            CacheBudget::for_policy(PolicyKind::Window, 64, 4)
                .unwrap()
                .n_sink,
            0
        );
    }

    #[test]
    fn rejects_inconsistent_split() {
        assert!(CacheBudget::new(4, 500, 0, 512).is_err());
        assert!(CacheBudget::new(0, 0, 0, 0).is_err());
    }
}
