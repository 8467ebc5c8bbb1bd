use kvsift::kvcache::{
    evict, read_snapshot, top_k_indices, write_snapshot, CacheBudget, EntropyCache, EvictionPolicy, KvCacheStore,
    PolicyKind, SlotMeta,
};
use kvsift::Error;
use proptest::prelude::*;

fn store_with(scores: &[f64]) -> (KvCacheStore, EntropyCache) {
    let mut store = KvCacheStore::new(2, 2, 2);
    let mut e = EntropyCache::new();
    for (i, &s) in scores.iter().enumerate() {
        let kv = vec![vec![i as f32; 4]; 2];
        store.append(&mut e, &kv, &kv, SlotMeta::new(i as u64 * 2, s, 0)).unwrap();
    }
    (store, e)
}

/// Reference Top-k: full stable sort by descending score.
fn sorted_top_k(scores: &[f64], k: usize, protected: &[usize]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|i| !protected.contains(i)).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

#[test]
fn append_never_evicts() {
    let (store, e) = store_with(&vec![1.0; 600]);
    assert_eq!(store.len(), 600);
    assert_eq!(e.len(), 600);
}

#[test]
fn forced_token_entropy_is_copied() {
    let (_, e) = store_with(&[0.3, 0.0]);
    assert_eq!(e.scores().last(), Some(&0.0));
}

#[test]
fn top_k_examples() {
    assert_eq!(top_k_indices(&[0.1, 2.3, 0.7, 1.5], 2, &[]).unwrap(), vec![1, 3]);
    assert_eq!(top_k_indices(&[1.0, 1.0, 0.5], 1, &[]).unwrap(), vec![0]);
    assert!(matches!(top_k_indices(&[1.0, 2.0], 2, &[0]), Err(Error::Contract(_))));
}

#[test]
fn decay_examples() {
    let mut e = EntropyCache::from_scores(vec![2.0]);
    for _ in 0..3 {
        e.decay(0.7).unwrap();
    }
    assert!((e.scores()[0] - 0.686).abs() < 1e-9);
    let before = e.clone();
    e.decay(1.0).unwrap();
    assert_eq!(e, before);
    assert!(matches!(e.decay(0.0), Err(Error::Config(_))));
    assert!(matches!(e.decay(1.5), Err(Error::Config(_))));
}

#[test]
fn evict_rejects_capacity_below_sink() {
    let (mut store, mut e) = store_with(&[1.0; 10]);
    let bad = CacheBudget { n_sink: 6, n_entropy: 0, n_recent: 0, capacity: 4 };
    let mut s = EvictionPolicy::new(PolicyKind::SinkRecent).build();
    assert!(matches!(evict(&mut store, &mut e, s.as_mut(), &bad), Err(Error::Config(_))));
}

#[test]
fn all_equal_entropies_keep_earliest_candidates() {
    let (mut store, mut e) = store_with(&[1.5; 40]);
    let b = CacheBudget::new(4, 10, 6, 20).unwrap();
    let mut s = EvictionPolicy::new(PolicyKind::SinkEntropy).build();
    let keep = evict(&mut store, &mut e, s.as_mut(), &b).unwrap();
    let expect: Vec<usize> = (0..14).chain(34..40).collect();
    assert_eq!(keep, expect);
}

#[test]
fn snapshot_round_trips_through_jsonl() {
    let (mut store, mut e) = store_with(&[0.5, 2.0, 1.0, 3.0, 0.1]);
    e.decay(0.5).unwrap();
    let policy = EvictionPolicy::with_seed(PolicyKind::SinkRandom, 9);
    let budget = CacheBudget::entropy(4, 1).unwrap();
    let mut buf = Vec::new();
    write_snapshot(&mut buf, &store, &e, &policy, &budget).unwrap();
    let snap = read_snapshot(buf.as_slice()).unwrap();
    assert_eq!(snap.header.policy, policy);
    assert_eq!(snap.slots.len(), 5);
    assert_eq!(snap.slots[3].score, 1.5);
    let mut s = policy.build();
    evict(&mut store, &mut e, s.as_mut(), &budget).unwrap();
    assert_eq!(store.len(), 4);
}

proptest! {
    #[test]
    fn top_k_matches_sort_reference(
        scores in prop::collection::vec(0.0f64..5.0, 1..1000),
        frac in 0.0f64..=1.0,
        coarse in any::<bool>(),
    ) {
        // Coarse scores collide often, which exercises the tie rule.
        let scores: Vec<f64> = if coarse { scores.iter().map(|s| s.floor()).collect() } else { scores };
        let protected: Vec<usize> = (0..scores.len()).step_by(7).collect();
        let k = ((scores.len() - protected.len()) as f64 * frac) as usize;
        prop_assert_eq!(top_k_indices(&scores, k, &protected).unwrap(), sorted_top_k(&scores, k, &protected));
    }

    #[test]
    fn top_k_is_scale_invariant(scores in prop::collection::vec(0.0f64..5.0, 1..300), c in 0.01f64..100.0, k in 0usize..300) {
        let k = k.min(scores.len());
        let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
        prop_assert_eq!(top_k_indices(&scaled, k, &[]).unwrap(), top_k_indices(&scores, k, &[]).unwrap());
    }

    #[test]
    fn decay_commutes(scores in prop::collection::vec(0.0f64..20.0, 0..200), a in 0.01f64..=1.0, b in 0.01f64..=1.0) {
        let mut twice = EntropyCache::from_scores(scores.clone());
        twice.decay(a).unwrap();
        twice.decay(b).unwrap();
        let mut once = EntropyCache::from_scores(scores);
        once.decay(a * b).unwrap();
        for (x, y) in twice.scores().iter().zip(once.scores()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn every_policy_honors_budget_order_and_sinks(
        k in 0usize..5,
        scores in prop::collection::vec(0.0f64..8.0, 2..400),
        cap_frac in 0.0f64..1.0,
        sink in 0usize..6,
        seed in any::<u64>(),
    ) {
        let kind = PolicyKind::ALL[k];
        let capacity = 1 + ((scores.len() - 1) as f64 * cap_frac) as usize;
        let capacity = capacity.min(scores.len() - 1).max(1);
        let budget = CacheBudget::for_policy(kind, capacity, sink.min(capacity)).unwrap();
        let (mut store, mut e) = store_with(&scores);
        let before: Vec<u64> = store.slots().iter().map(|s| s.original_position).collect();
        let mut s = EvictionPolicy::with_seed(kind, seed).build();
        let keep = evict(&mut store, &mut e, s.as_mut(), &budget).unwrap();
        prop_assert_eq!(keep.len(), capacity);
        prop_assert_eq!(store.len(), capacity);
        prop_assert_eq!(e.len(), capacity);
        prop_assert!(keep.windows(2).all(|w| w[0] < w[1]));
        let after: Vec<u64> = store.slots().iter().map(|s| s.original_position).collect();
        let expect: Vec<u64> = keep.iter().map(|&i| before[i]).collect();
        prop_assert_eq!(&after, &expect);
        if kind.keeps_sinks() {
            prop_assert_eq!(&keep[..budget.n_sink], &(0..budget.n_sink).collect::<Vec<_>>()[..]);
        }
        store.check_invariants(&e).unwrap();
    }
}
