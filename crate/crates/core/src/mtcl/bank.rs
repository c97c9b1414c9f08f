//! Per-trajectory center vectors updated by momentum from selected samples.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vector::{cosine_similarity, l2_normalize, norm, Embedding};

/// Which of a trajectory's batch vectors refreshes its center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateStrategy {
    /// Minimum cosine similarity to the center.
    #[default]
    Hard,
    /// Maximum cosine similarity to the center.
    Easy,
    /// Uniform pick from the seeded sampler.
    Random,
    /// Normalized componentwise mean.
    Average,
}

impl UpdateStrategy {
    pub const ALL: [UpdateStrategy; 4] = [
        UpdateStrategy::Hard,
        UpdateStrategy::Easy,
        UpdateStrategy::Random,
        UpdateStrategy::Average,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            UpdateStrategy::Hard => "hard",
            UpdateStrategy::Easy => "easy",
            UpdateStrategy::Random => "random",
            UpdateStrategy::Average => "average",
        }
    }
}

impl fmt::Display for UpdateStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UpdateStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(UpdateStrategy::Hard),
            "easy" => Ok(UpdateStrategy::Easy),
            "random" => Ok(UpdateStrategy::Random),
            "average" => Ok(UpdateStrategy::Average),
            other => Err(Error::InvalidConfig(format!("unknown update strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryCenterBank<T> {
    dim: usize,
    centers: Vec<T>,
    update_counts: Vec<u32>,
    /// Re-normalize centers after every momentum update.
    pub normalize: bool,
}

impl<T: Scalar> TrajectoryCenterBank<T> {
    /// `n` zero centers of dimension `dim`.
    pub fn new(n: usize, dim: usize) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(Error::InvalidConfig(
                "memory bank needs at least one trajectory and one dimension".into(),
            ));
        }
        Ok(Self {
            dim,
            centers: vec![T::zero(); n * dim],
            update_counts: vec![0; n],
            normalize: true,
        })
    }

    pub fn len(&self) -> usize {
        self.update_counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.update_counts.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn center(&self, l: usize) -> Result<&[T]> {
        self.check(l)?;
        Ok(&self.centers[l * self.dim..(l + 1) * self.dim])
    }

    pub fn update_count(&self, l: usize) -> Result<u32> {
        self.check(l)?;
        Ok(self.update_counts[l])
    }

    pub fn update_counts(&self) -> &[u32] {
        &self.update_counts
    }

    /// True when the center is still (numerically) zero.
    pub fn is_zero(&self, l: usize) -> Result<bool> {
        Ok(norm(self.center(l)?) < T::norm_eps())
    }

    pub fn is_all_zero(&self) -> bool {
        self.centers.iter().all(|&v| v == T::zero())
    }

    fn check(&self, l: usize) -> Result<()> {
        if l >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: l,
                len: self.len(),
            });
        }
        Ok(())
    }

    /// `c_l ← α c_l + (1 − α) p`, then optionally ℓ2-normalized.
    pub fn update_center(&mut self, l: usize, p: &[T], alpha: T) -> Result<()> {
        self.check(l)?;
        if p.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: p.len(),
            });
        }
        let c = &mut self.centers[l * self.dim..(l + 1) * self.dim];
        for (ci, &pi) in c.iter_mut().zip(p) {
            *ci = alpha * *ci + (T::one() - alpha) * pi;
        }
        if self.normalize {
            let n = l2_normalize(c);
            c.copy_from_slice(&n.vector);
        }
        self.update_counts[l] += 1;
        Ok(())
    }
}

/// Picks the vector used to refresh a center. A zero center takes the first candidate.
pub fn select_update_sample<T: Scalar, R: Rng>(
    candidates: &[Embedding<T>],
    center: &[T],
    strategy: UpdateStrategy,
    rng: &mut R,
) -> Result<Embedding<T>> {
    let first = candidates
        .first()
        .ok_or(Error::Empty("update candidates"))?;
    if norm(center) < T::norm_eps() {
        return Ok(first.clone());
    }
    let pick_by = |better: fn(T, T) -> bool| -> Result<Embedding<T>> {
        let mut best = 0usize;
        let mut best_sim = cosine_similarity(&candidates[0], center)?;
        for (i, cand) in candidates.iter().enumerate().skip(1) {
            let s = cosine_similarity(cand, center)?;
            if better(s, best_sim) {
                best = i;
                best_sim = s;
            }
        }
        Ok(candidates[best].clone())
    };
    match strategy {
        UpdateStrategy::Hard => pick_by(|s, best| s < best),
        UpdateStrategy::Easy => pick_by(|s, best| s > best),
        UpdateStrategy::Random => Ok(candidates[rng.random_range(0..candidates.len())].clone()),
        UpdateStrategy::Average => {
            let dim = first.dim();
            let mut mean = vec![T::zero(); dim];
            for c in candidates {
                if c.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: c.dim(),
                    });
                }
                mean.iter_mut().zip(c.iter()).for_each(|(m, &v)| *m += v);
            }
            Ok(l2_normalize(&mean).vector)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn e(v: &[f64]) -> Embedding<f64> {
        Embedding(v.to_vec())
    }

    #[test]
    fn init_is_all_zero() {
        let bank = TrajectoryCenterBank::<f64>::new(3, 4).unwrap();
        assert_eq!(bank.len(), 3);
        assert!(bank.is_all_zero());
        assert_eq!(bank.update_counts(), &[0, 0, 0]);
        assert_eq!(bank, TrajectoryCenterBank::new(3, 4).unwrap());
        assert!(TrajectoryCenterBank::<f64>::new(0, 4).is_err());
    }

    #[test]
    fn momentum_examples() {
        let mut bank = TrajectoryCenterBank::<f64>::new(1, 2).unwrap();
        bank.update_center(0, &[1.0, 0.0], 0.0).unwrap();
        assert_eq!(bank.center(0).unwrap(), &[1.0, 0.0]);

        bank.update_center(0, &[0.0, 1.0], 0.2).unwrap();
        let c = bank.center(0).unwrap();
        let n = (0.2f64 * 0.2 + 0.8 * 0.8).sqrt();
        assert_relative_eq!(c[0], 0.2 / n, epsilon = 1e-15);
        assert_relative_eq!(c[0], 0.2425, epsilon = 1e-4);
        assert_relative_eq!(c[1], 0.9701, epsilon = 1e-4);

        let before = bank.center(0).unwrap().to_vec();
        bank.update_center(0, &[0.0, -1.0], 1.0).unwrap();
        for (a, b) in bank.center(0).unwrap().iter().zip(&before) {
            assert_relative_eq!(*a, *b, epsilon = 1e-15);
        }

        bank.update_center(0, &[0.6, -0.8], 0.0).unwrap();
        assert_relative_eq!(bank.center(0).unwrap()[0], 0.6, epsilon = 1e-15);
        assert_eq!(bank.update_count(0).unwrap(), 4);
        assert!(bank.update_center(5, &[1.0, 0.0], 0.2).is_err());
    }

    #[test]
    fn raw_momentum_without_normalization() {
        let mut bank = TrajectoryCenterBank::<f64>::new(1, 2).unwrap();
        bank.normalize = false;
        bank.update_center(0, &[1.0, 0.0], 0.0).unwrap();
        bank.update_center(0, &[0.0, 1.0], 0.2).unwrap();
        assert_relative_eq!(bank.center(0).unwrap()[0], 0.2, epsilon = 1e-15);
        assert_relative_eq!(bank.center(0).unwrap()[1], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn selection_strategies() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let center = [1.0, 0.0];
        let s09 = e(&[0.9, (1.0f64 - 0.81).sqrt()]);
        let s01 = e(&[0.1, (1.0f64 - 0.01).sqrt()]);
        let cands = vec![s09.clone(), s01.clone()];
        assert_eq!(select_update_sample(&cands, &center, UpdateStrategy::Hard, &mut rng).unwrap(), s01);
        assert_eq!(select_update_sample(&cands, &center, UpdateStrategy::Easy, &mut rng).unwrap(), s09);
        let avg = select_update_sample(&cands, &center, UpdateStrategy::Average, &mut rng).unwrap();
        assert!((avg.norm() - 1.0).abs() < 1e-12);
        let r = select_update_sample(&cands, &center, UpdateStrategy::Random, &mut rng).unwrap();
        assert!(r == s09 || r == s01);

        for s in UpdateStrategy::ALL {
            assert_eq!(select_update_sample(&[s01.clone()], &center, s, &mut rng).unwrap(), s01);
            // Zero center bootstraps from the first candidate.
            assert_eq!(select_update_sample(&cands, &[0.0, 0.0], s, &mut rng).unwrap(), s09);
        }
        assert!(select_update_sample::<f64, _>(&[], &center, UpdateStrategy::Hard, &mut rng).is_err());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in UpdateStrategy::ALL {
            assert_eq!(s.as_str().parse::<UpdateStrategy>().unwrap(), s);
        }
        assert!("hardest".parse::<UpdateStrategy>().is_err());
    }
}
