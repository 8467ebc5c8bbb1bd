use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Indices of the `k` highest scores outside `protected`, ascending.
///
/// Ties go to the smaller index. `protected` may be unsorted.
pub fn top_k_indices(scores: &[f64], k: usize, protected: &[usize]) -> Result<Vec<usize>> {
    let mut blocked = vec![false; scores.len()];
    for &p in protected {
        if p < scores.len() {
            blocked[p] = true;
        }
    }
    let mut candidates: Vec<usize> = (0..scores.len()).filter(|&i| !blocked[i]).collect();
    if k > candidates.len() {
        return Err(Error::contract(format!(
            "cannot select {k} of {} unprotected scores",
            candidates.len()
        )));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let rank =
        |a: &usize, b: &usize| -> Ordering { scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)) };
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, rank);
        candidates.truncate(k);
    }
    candidates.sort_unstable();
    Ok(candidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn by_full_sort(scores: &[f64], k: usize, protected: &[usize]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..scores.len())
            .filter(|i| !protected.contains(i))
            .collect();
        idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        let mut out = idx[..k].to_vec();
        out.sort();
        out
    }

    #[test]
    fn picks_highest() {
        assert_eq!(
            top_k_indices(&[0.1, 2.3, 0.7, 1.5], 2, &[]).unwrap(),
            vec![1, 3]
        );
    }

    #[test]
    fn ties_prefer_smaller_index() {
        assert_eq!(top_k_indices(&[1.0, 1.0, 0.5], 1, &[]).unwrap(), vec![0]);
        assert_eq!(
            top_k_indices(&[1.0, 1.0, 1.0, 1.0], 2, &[0]).unwrap(),
            vec![1, 2]
        );
    }

    #[test]
    fn respects_protection_and_bounds() {
        assert_eq!(top_k_indices(&[9.0, 1.0, 2.0], 1, &[0]).unwrap(), vec![2]);
        assert!(matches!(
            top_k_indices(&[1.0, 2.0], 2, &[1]),
            Err(Error::Contract(_))
        ));
        assert!(top_k_indices(&[1.0], 0, &[]).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn matches_full_sort(
            scores in proptest::collection::vec(0.0f64..10.0, 1..1000),
            k_frac in 0.0f64..1.0,
            n_protected in 0usize..8,
        ) {
            let protected: Vec<usize> = (0..n_protected.min(scores.len())).collect();
            let k = ((scores.len() - protected.len()) as f64 * k_frac) as usize;
            prop_assert_eq!(top_k_indices(&scores, k, &protected).unwrap(), by_full_sort(&scores, k, &protected));
        }

        #[test]
        fn invariant_under_positive_scaling(
            scores in proptest::collection::vec(0.0f64..10.0, 1..300),
            k_frac in 0.0f64..1.0,
            c in 1e-3f64..1e3,
        ) {
            let k = (scores.len() as f64 * k_frac) as usize;
            let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
            prop_assert_eq!(top_k_indices(&scaled, k, &[]).unwrap(), top_k_indices(&scores, k, &[]).unwrap());
        }
    }
}
