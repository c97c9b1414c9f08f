//! Keypoint offset regression and box clipping.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::scalar::Scalar;

/// Fixed sampling locations the learned offsets are added to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingPattern {
    /// Center first, then square rings of unit spacing (the 3×3 block for 9 points).
    #[default]
    Grid,
    /// Every keypoint starts at the center.
    Zero,
}

impl SamplingPattern {
    pub fn points<T: Scalar>(self, n_k: usize) -> Vec<[T; 2]> {
        match self {
            SamplingPattern::Zero => vec![[T::zero(); 2]; n_k],
            SamplingPattern::Grid => {
                let mut pts = Vec::with_capacity(n_k);
                let mut ring = 0i64;
                while pts.len() < n_k {
                    for dy in -ring..=ring {
                        for dx in -ring..=ring {
                            if dx.abs().max(dy.abs()) == ring && pts.len() < n_k {
                                pts.push([T::lit(dx as f64), T::lit(dy as f64)]);
                            }
                        }
                    }
                    ring += 1;
                }
                pts
            }
        }
    }
}

/// Linear map from the center feature to `N_k` 2-D offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetHead<T> {
    n_k: usize,
    channels: usize,
    /// `(2·N_k) × C`, row-major; rows `2i, 2i+1` give `(dx, dy)` of keypoint `i`.
    pub weight: Vec<T>,
    pattern: Vec<[T; 2]>,
}

impl<T: Scalar> OffsetHead<T> {
    pub fn zeros(n_k: usize, channels: usize, pattern: SamplingPattern) -> Result<Self> {
        if n_k == 0 {
            return Err(Error::InvalidConfig("keypoint count must be at least 1".into()));
        }
        Ok(Self {
            n_k,
            channels,
            weight: vec![T::zero(); 2 * n_k * channels],
            pattern: pattern.points(n_k),
        })
    }

    pub fn from_weight(
        n_k: usize,
        channels: usize,
        weight: Vec<T>,
        pattern: SamplingPattern,
    ) -> Result<Self> {
        let mut head = Self::zeros(n_k, channels, pattern)?;
        if weight.len() != head.weight.len() {
            return Err(Error::DimensionMismatch {
                expected: head.weight.len(),
                got: weight.len(),
            });
        }
        head.weight = weight;
        Ok(head)
    }

    /// Small Gaussian initialization so initial keypoints stay near the pattern.
    pub fn random<R: Rng>(
        n_k: usize,
        channels: usize,
        pattern: SamplingPattern,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut head = Self::zeros(n_k, channels, pattern)?;
        let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for w in head.weight.iter_mut() {
            *w = T::lit(normal.sample(rng));
        }
        Ok(head)
    }

    #[inline]
    pub fn n_k(&self) -> usize {
        self.n_k
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pattern(&self) -> &[[T; 2]] {
        &self.pattern
    }

    /// Pattern plus `W·r`, one `(dx, dy)` per keypoint.
    pub fn regress_offsets(&self, r: &[T]) -> Result<Vec<[T; 2]>> {
        if r.len() != self.channels {
            return Err(Error::DimensionMismatch {
                expected: self.channels,
                got: r.len(),
            });
        }
        let row = |k: usize| -> T {
            let w = &self.weight[k * self.channels..(k + 1) * self.channels];
            w.iter().zip(r).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
        };
        Ok((0..self.n_k)
            .map(|i| {
                let p = self.pattern[i];
                [p[0] + row(2 * i), p[1] + row(2 * i + 1)]
            })
            .collect())
    }
}

/// A keypoint after clipping, with per-axis flags recording whether the clamp was active.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint<T> {
    pub x: T,
    pub y: T,
    pub clamped: [bool; 2],
}

/// Clamp `center + offset` componentwise into the closed box.
pub fn clip_keypoints<T: Scalar>(
    center: [T; 2],
    offsets: &[[T; 2]],
    region: &BoundingBox<T>,
) -> Vec<Keypoint<T>> {
    let lo = [region.left, region.top];
    let hi = [region.right(), region.bottom()];
    offsets
        .iter()
        .map(|o| {
            let mut out = [T::zero(); 2];
            let mut clamped = [false; 2];
            for a in 0..2 {
                let v = center[a] + o[a];
                out[a] = if v < lo[a] {
                    clamped[a] = true;
                    lo[a]
                } else if v > hi[a] {
                    clamped[a] = true;
                    hi[a]
                } else {
                    v
                };
            }
            Keypoint {
                x: out[0],
                y: out[1],
                clamped,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_pattern_layout() {
        let p: Vec<[f64; 2]> = SamplingPattern::Grid.points(9);
        assert_eq!(p[0], [0.0, 0.0]);
        assert_eq!(p.len(), 9);
        for dx in -1..=1 {
            for dy in -1..=1 {
                assert!(p.contains(&[dx as f64, dy as f64]));
            }
        }
        assert_eq!(SamplingPattern::Grid.points::<f64>(10)[9], [-2.0, -2.0]);
    }

    #[test]
    fn zero_weight_gives_pattern() {
        let head = OffsetHead::<f64>::zeros(9, 4, SamplingPattern::Grid).unwrap();
        let offs = head.regress_offsets(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(offs, SamplingPattern::Grid.points::<f64>(9));
        assert!(head.regress_offsets(&[1.0]).is_err());
        assert!(OffsetHead::<f64>::zeros(0, 4, SamplingPattern::Grid).is_err());
    }

    #[test]
    fn single_channel_multiply() {
        let head = OffsetHead::from_weight(1, 1, vec![0.5, -0.5], SamplingPattern::Zero).unwrap();
        assert_eq!(head.regress_offsets(&[1.0]).unwrap(), vec![[0.5, -0.5]]);
    }

    #[test]
    fn regression_is_linear() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let head = OffsetHead::<f64>::random(4, 3, SamplingPattern::Grid, 0.5, &mut rng).unwrap();
        let r = [0.25, -1.5, 0.75];
        let r2: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        let pat = head.pattern().to_vec();
        let a = head.regress_offsets(&r).unwrap();
        let b = head.regress_offsets(&r2).unwrap();
        for i in 0..4 {
            for k in 0..2 {
                assert!(((b[i][k] - pat[i][k]) - 2.0 * (a[i][k] - pat[i][k])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clip_examples() {
        let region = BoundingBox::new(0.0, 0.0, 8.0, 8.0);
        let k = clip_keypoints([5.0, 5.0], &[[1.0, -2.0]], &region);
        assert_eq!((k[0].x, k[0].y, k[0].clamped), (6.0, 3.0, [false, false]));
        let k = clip_keypoints([5.0, 5.0], &[[10.0, 0.0]], &region);
        assert_eq!((k[0].x, k[0].y, k[0].clamped), (8.0, 5.0, [true, false]));
        let k = clip_keypoints([5.0, 5.0], &[[-100.0, -100.0]], &region);
        assert_eq!((k[0].x, k[0].y), (0.0, 0.0));
    }

    proptest! {
        #[test]
        fn keypoints_stay_in_box(
            l in -20.0..20.0f64, t in -20.0..20.0f64, w in 0.0..15.0f64, h in 0.0..15.0f64,
            fx in 0.0..1.0f64, fy in 0.0..1.0f64,
            offs in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 1..12),
        ) {
            let b = BoundingBox::new(l, t, w, h);
            let center = [l + fx * w, t + fy * h];
            let offs: Vec<[f64; 2]> = offs.into_iter().map(|(a, b)| [a, b]).collect();
            for k in clip_keypoints(center, &offs, &b) {
                prop_assert!(k.x >= b.left && k.x <= b.right());
                prop_assert!(k.y >= b.top && k.y <= b.bottom());
            }
        }
    }
}
