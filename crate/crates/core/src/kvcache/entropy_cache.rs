use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decayed entropy score for every retained slot, kept parallel to the store.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EntropyCache {
    scores: Vec<f64>,
}

impl EntropyCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_scores(scores: Vec<f64>) -> Self {
        Self { scores }
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub(crate) fn push(&mut self, score: f64) {
        self.scores.push(score);
    }

    pub(crate) fn clear(&mut self) {
        self.scores.clear();
    }

    pub(crate) fn retain_indices(&mut self, keep: &[usize]) {
        for (dst, &src) in keep.iter().enumerate() {
            self.scores[dst] = self.scores[src];
        }
        self.scores.truncate(keep.len());
    }

    /// Multiplies every score by `eta`, which must lie in `(0, 1]`.
    pub fn decay(&mut self, eta: f64) -> Result<()> {
        validate_eta(eta)?;
        if eta != 1.0 {
            self.scores.iter_mut().for_each(|s| *s *= eta);
        }
        Ok(())
    }

    /// Stable digest of the exact score bits.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for s in &self.scores {
            h.update(s.to_bits().to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }
}

pub fn validate_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta <= 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("decay ratio {eta} outside (0, 1]")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_decay_is_identity() {
        let mut e = EntropyCache::from_scores(vec![0.3, 2.0, 0.0]);
        e.decay(1.0).unwrap();
        assert_eq!(e.scores(), &[0.3, 2.0, 0.0]);
    }

    #[test]
    fn repeated_decay_is_geometric() {
        let mut e = EntropyCache::from_scores(vec![2.0]);
        for _ in 0..3 {
            e.decay(0.7).unwrap();
        }
        assert!((e.scores()[0] - 0.686).abs() < 1e-9);
    }

    #[test]
    fn rejects_out_of_range_eta() {
        let mut e = EntropyCache::from_scores(vec![1.0]);
        for eta in [0.0, -0.5, 1.0001, f64::NAN] {
            assert!(matches!(e.decay(eta), Err(Error::Config(_))), "{eta}");
        }
        assert_eq!(e.scores(), &[1.0]);
    }

    #[test]
    fn digest_tracks_bits() {
        let a = EntropyCache::from_scores(vec![1.0, 2.0]);
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.decay(0.5).unwrap();
        assert_ne!(a.digest(), b.digest());
    }
}
