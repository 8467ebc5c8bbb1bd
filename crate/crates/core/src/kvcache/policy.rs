//! Eviction strategies and the name-keyed registry that builds them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{top_k_indices, CacheBudget, SlotMeta};
use crate::error::{Error, Result};

/// The policy families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Most recent slots only.
    Window,
    /// Sink slots plus the most recent slots.
    SinkRecent,
    /// Sink slots plus a uniform sample of the history.
    SinkRandom,
    /// Sink slots plus a fixed-stride sample of the history.
    SinkInterval,
    /// Sink slots plus the highest decayed-entropy slots (and optional recent).
    SinkEntropy,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Window,
        PolicyKind::SinkRecent,
        PolicyKind::SinkRandom,
        PolicyKind::SinkInterval,
        PolicyKind::SinkEntropy,
    ];

    /// Canonical registry name.
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Window => "window",
            PolicyKind::SinkRecent => "stream",
            PolicyKind::SinkRandom => "random",
            PolicyKind::SinkInterval => "interval",
            PolicyKind::SinkEntropy => "sirllm",
        }
    }

    pub fn keeps_sinks(self) -> bool {
        self != PolicyKind::Window
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyRegistry::builtin().resolve(s)
    }
}

/// A policy selection: which strategy, and the seed for strategies that
/// sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvictionPolicy {
    pub kind: PolicyKind,
    #[serde(default)]
    pub rng_seed: u64,
}

impl EvictionPolicy {
    pub fn new(kind: PolicyKind) -> Self {
        Self { kind, rng_seed: 0 }
    }

    pub fn with_seed(kind: PolicyKind, rng_seed: u64) -> Self {
        Self { kind, rng_seed }
    }

    pub fn build(&self) -> Box<dyn EvictionStrategy> {
        PolicyRegistry::builtin().build(*self)
    }
}

/// Chooses which slots survive an eviction.
///
/// `select` is only called when the store holds more than `budget.capacity`
/// slots; it returns exactly `capacity` ascending slot indices. Strategies may
/// carry state across calls (the random sampler advances its generator).
pub trait EvictionStrategy: Send {
    fn kind(&self) -> PolicyKind;

    fn select(
        &mut self,
        slots: &[SlotMeta],
        scores: &[f64],
        budget: &CacheBudget,
    ) -> Result<Vec<usize>>;
}

type Factory = fn(u64) -> Box<dyn EvictionStrategy>;

/// Name-to-strategy table. Aliases resolve to the same kind.
pub struct PolicyRegistry {
    names: BTreeMap<String, PolicyKind>,
    factories: BTreeMap<PolicyKind, Factory>,
}

impl PolicyRegistry {
    pub fn empty() -> Self {
        Self {
            names: BTreeMap::new(),
            factories: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(PolicyKind::Window, &["window", "sliding"], |_| {
            Box::new(Window)
        });
        r.register(PolicyKind::SinkRecent, &["stream", "sink_recent"], |_| {
            Box::new(SinkRecent)
        });
        r.register(PolicyKind::SinkRandom, &["random", "sink_random"], |seed| {
            Box::new(SinkRandom::new(seed))
        });
        r.register(
            PolicyKind::SinkInterval,
            &["interval", "sink_interval"],
            |_| Box::new(SinkInterval),
        );
        r.register(
            PolicyKind::SinkEntropy,
            &["sirllm", "entropy", "sink_entropy"],
            |_| Box::new(SinkEntropy),
        );
        r
    }

    pub fn register(&mut self, kind: PolicyKind, names: &[&str], factory: Factory) {
        for n in names {
            self.names.insert(n.to_string(), kind);
        }
        self.factories.insert(kind, factory);
    }

    pub fn resolve(&self, name: &str) -> Result<PolicyKind> {
        self.names
            .get(&name.trim().to_ascii_lowercase())
            .copied()
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown policy {name:?}; valid names: {}",
                    self.canonical_names().join(", ")
                ))
            })
    }

    pub fn canonical_names(&self) -> Vec<&'static str> {
        self.factories.keys().map(|k| k.name()).collect()
    }

    pub fn build(&self, policy: EvictionPolicy) -> Box<dyn EvictionStrategy> {
        let factory = self
            .factories
            .get(&policy.kind)
            .expect("every kind is registered");
        factory(policy.rng_seed)
    }
}

fn check_budget(slots: usize, budget: &CacheBudget) -> Result<()> {
    budget.validate()?;
    if budget.n_sink > budget.capacity {
        return Err(Error::config(format!(
            "capacity {} smaller than sink size {}",
            budget.capacity, budget.n_sink
        )));
    }
    if slots <= budget.capacity {
        return Err(Error::contract("select called on a store within capacity"));
    }
    Ok(())
}

struct Window;

impl EvictionStrategy for Window {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Window
    }

    fn select(
        &mut self,
        slots: &[SlotMeta],
        _: &[f64],
        budget: &CacheBudget,
    ) -> Result<Vec<usize>> {
        check_budget(slots.len(), budget)?;
        Ok((slots.len() - budget.capacity..slots.len()).collect())
    }
}

struct SinkRecent;

impl EvictionStrategy for SinkRecent {
    fn kind(&self) -> PolicyKind {
        PolicyKind::SinkRecent
    }

    fn select(
        &mut self,
        slots: &[SlotMeta],
        _: &[f64],
        budget: &CacheBudget,
    ) -> Result<Vec<usize>> {
        check_budget(slots.len(), budget)?;
        let l = slots.len();
        Ok((0..budget.n_sink).chain(l - budget.pool()..l).collect())
    }
}

/// Uniform sample without replacement: one random key per non-sink slot,
/// drawn in slot order, and the `pool` smallest keys survive.
struct SinkRandom {
    rng: ChaCha8Rng,
}

impl SinkRandom {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl EvictionStrategy for SinkRandom {
    fn kind(&self) -> PolicyKind {
        PolicyKind::SinkRandom
    }

    fn select(
        &mut self,
        slots: &[SlotMeta],
        _: &[f64],
        budget: &CacheBudget,
    ) -> Result<Vec<usize>> {
        check_budget(slots.len(), budget)?;
        let mut keyed: Vec<(u64, usize)> = (budget.n_sink..slots.len())
            .map(|i| (self.rng.random::<u64>(), i))
            .collect();
        let pool = budget.pool();
        if pool < keyed.len() && pool > 0 {
            keyed.select_nth_unstable(pool - 1);
        }
        keyed.truncate(pool);
        let mut out: Vec<usize> = (0..budget.n_sink)
            .chain(keyed.into_iter().map(|(_, i)| i))
            .collect();
        out.sort_unstable();
        Ok(out)
    }
}

/// Every `⌊history / capacity⌋`-th slot from the oldest non-sink slot; if
/// that runs off the end before the pool is full, the most recent unused
/// slots pad the remainder. With this stride the walk always reaches the
/// pool size, so the pad only guards the arithmetic.
struct SinkInterval;

impl EvictionStrategy for SinkInterval {
    fn kind(&self) -> PolicyKind {
        PolicyKind::SinkInterval
    }

    fn select(
        &mut self,
        slots: &[SlotMeta],
        _: &[f64],
        budget: &CacheBudget,
    ) -> Result<Vec<usize>> {
        check_budget(slots.len(), budget)?;
        let l = slots.len();
        let stride = l / budget.capacity;
        let pool = budget.pool();
        let mut taken = vec![false; l];
        let mut picked: Vec<usize> = (budget.n_sink..l).step_by(stride).take(pool).collect();
        picked.iter().for_each(|&i| taken[i] = true);
        let mut back = l;
        while picked.len() < pool {
            back -= 1;
            if !taken[back] {
                taken[back] = true;
                picked.push(back);
            }
        }
        let mut out: Vec<usize> = (0..budget.n_sink).chain(picked).collect();
        out.sort_unstable();
        Ok(out)
    }
}

/// Sink slots, the `n_recent` newest slots, and the `n_entropy` highest
/// scores among the rest. Sink scores are never consulted.
struct SinkEntropy;

impl EvictionStrategy for SinkEntropy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::SinkEntropy
    }

    fn select(
        &mut self,
        slots: &[SlotMeta],
        scores: &[f64],
        budget: &CacheBudget,
    ) -> Result<Vec<usize>> {
        check_budget(slots.len(), budget)?;
        if scores.len() != slots.len() {
            return Err(Error::contract(
                "entropy cache length differs from slot count",
            ));
        }
        let l = slots.len();
        let recent_start = l - budget.n_recent;
        let protected: Vec<usize> = (0..budget.n_sink).chain(recent_start..l).collect();
        let chosen = top_k_indices(scores, budget.n_entropy, &protected)?;
        let mut out: Vec<usize> = protected.into_iter().chain(chosen).collect();
        out.sort_unstable();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slots(n: usize) -> Vec<SlotMeta> {
        (0..n).map(|i| SlotMeta::new(i as u64, 0.0, 0)).collect()
    }

    #[test]
    fn registry_resolves_aliases_and_lists_names() {
        let r = PolicyRegistry::builtin();
        assert_eq!(r.resolve("SirLLM").unwrap(), PolicyKind::SinkEntropy);
        assert_eq!(r.resolve("stream").unwrap(), PolicyKind::SinkRecent);
        let err = r.resolve("lru").unwrap_err().to_string();
        assert!(
            err.contains("window, stream, random, interval, sirllm"),
            "{err}"
        );
        for kind in PolicyKind::ALL {
            assert_eq!(EvictionPolicy::new(kind).build().kind(), kind);
            assert_eq!(kind.name().parse::<PolicyKind>().unwrap(), kind);
        }
    }

    #[test]
    fn window_ignores_sinks() {
        let b = CacheBudget::recent(4, 0).unwrap();
        assert_eq!(
            Window.select(&slots(10), &[0.0; 10], &b).unwrap(),
            vec![6, 7, 8, 9]
        );
    }

    #[test]
    fn stream_keeps_sink_and_tail() {
        let b = CacheBudget::recent(5, 2).unwrap();
        assert_eq!(
            SinkRecent.select(&slots(10), &[0.0; 10], &b).unwrap(),
            vec![0, 1, 7, 8, 9]
        );
    }

    #[test]
    fn interval_strides_then_pads() {
        // 20 slots, capacity 6: stride 3 from slot 2 -> 2, 5, 8, 11
        let b = CacheBudget::entropy(6, 2).unwrap();
        assert_eq!(
            SinkInterval.select(&slots(20), &[0.0; 20], &b).unwrap(),
            vec![0, 1, 2, 5, 8, 11]
        );
        // 11 slots, capacity 5: stride 2 from slot 3 -> 3, 5; pad is not needed
        let b = CacheBudget::entropy(5, 3).unwrap();
        assert_eq!(
            SinkInterval.select(&slots(11), &[0.0; 11], &b).unwrap(),
            vec![0, 1, 2, 3, 5]
        );
        // 9 slots, capacity 8: stride 1 from slot 4 -> 4..7
        let b = CacheBudget::entropy(8, 4).unwrap();
        assert_eq!(
            SinkInterval.select(&slots(9), &[0.0; 9], &b).unwrap(),
            vec![0, 1, 2, 3, 4, 5, 6, 7]
        );
        // 10 slots, capacity 4, 1 sink: stride 2 from slot 1 -> 1, 3, 5
        let b = CacheBudget::entropy(4, 1).unwrap();
        assert_eq!(
            SinkInterval.select(&slots(10), &[0.0; 10], &b).unwrap(),
            vec![0, 1, 3, 5]
        );
    }

    #[test]
    fn entropy_keeps_top_scores() {
        let b = CacheBudget::new(1, 2, 1, 4).unwrap();
        let scores = [9.0, 0.1, 5.0, 0.2, 4.0, 0.0, 7.0];
        assert_eq!(
            SinkEntropy.select(&slots(7), &scores, &b).unwrap(),
            vec![0, 2, 4, 6]
        );
    }

    #[test]
    fn entropy_ties_fall_to_earliest() {
        let b = CacheBudget::new(2, 3, 1, 6).unwrap();
        assert_eq!(
            SinkEntropy.select(&slots(12), &[1.0; 12], &b).unwrap(),
            vec![0, 1, 2, 3, 4, 11]
        );
    }

    #[test]
    fn random_is_seeded() {
        let b = CacheBudget::entropy(8, 2).unwrap();
        let a = SinkRandom::new(5)
            .select(&slots(50), &[0.0; 50], &b)
            .unwrap();
        let c = SinkRandom::new(5)
            .select(&slots(50), &[0.0; 50], &b)
            .unwrap();
        assert_eq!(a, c);
        assert_eq!(&a[..2], &[0, 1]);
        assert_eq!(a.len(), 8);
    }

    #[test]
    fn rejects_bad_budget() {
        let bad = CacheBudget {
            n_sink: 8,
            n_entropy: 0,
            n_recent: 0,
            capacity: 4,
        };
        assert!(matches!(
            SinkRecent.select(&slots(10), &[0.0; 10], &bad),
            Err(Error::Config(_))
        ));
    }
}
