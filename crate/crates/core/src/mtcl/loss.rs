//! Trajectory-level InfoNCE and the uncertainty-weighted total loss.

use crate::error::{Error, Result};
use crate::mtcl::bank::TrajectoryCenterBank;
use crate::scalar::Scalar;
use crate::vector::{dot, l2_normalize, l2_normalize_backward, Embedding};

/// InfoNCE against the bank with similarities scaled by `1/τ` inside the exponent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoNce<T> {
    pub tau: T,
    /// Leave never-updated centers (other than the positive) out of the denominator.
    pub exclude_zero_centers: bool,
}

impl<T: Scalar> InfoNce<T> {
    pub fn new(tau: T) -> Result<Self> {
        if !(tau > T::zero()) {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        Ok(Self {
            tau,
            exclude_zero_centers: true,
        })
    }

    /// Loss and `dL/dv` for a unit vector `v` whose positive center is `l`.
    pub fn loss_and_grad(
        &self,
        v: &[T],
        bank: &TrajectoryCenterBank<T>,
        l: usize,
    ) -> Result<(T, Vec<T>)> {
        bank.center(l)?;
        if v.len() != bank.dim() {
            return Err(Error::DimensionMismatch {
                expected: bank.dim(),
                got: v.len(),
            });
        }
        let mut active = Vec::with_capacity(bank.len());
        for i in 0..bank.len() {
            if i == l || !self.exclude_zero_centers || !bank.is_zero(i)? {
                let logit = dot(v, bank.center(i)?) / self.tau;
                active.push((i, logit));
            }
        }
        let max = active
            .iter()
            .fold(T::neg_infinity(), |m, &(_, z)| m.max(z));
        let sum_exp: T = active.iter().map(|&(_, z)| (z - max).exp()).sum();
        let lse = max + sum_exp.ln();
        let positive = active
            .iter()
            .find(|&&(i, _)| i == l)
            .map(|&(_, z)| z)
            .expect("positive center is always active");
        let loss = (lse - positive).max(T::zero());

        // dL/dv = (Σ softmaxᵢ cᵢ − c_l) / τ
        let mut grad = vec![T::zero(); v.len()];
        for &(i, z) in &active {
            let p = (z - lse).exp();
            let w = if i == l { p - T::one() } else { p };
            for (g, &c) in grad.iter_mut().zip(bank.center(i)?) {
                *g += w * c;
            }
        }
        grad.iter_mut().for_each(|g| *g = *g / self.tau);
        Ok((loss, grad))
    }

    pub fn loss(&self, v: &[T], bank: &TrajectoryCenterBank<T>, l: usize) -> Result<T> {
        Ok(self.loss_and_grad(v, bank, l)?.0)
    }
}

/// InfoNCE with default center exclusion.
pub fn info_nce<T: Scalar>(
    v: &[T],
    bank: &TrajectoryCenterBank<T>,
    l: usize,
    tau: T,
) -> Result<T> {
    InfoNce::new(tau)?.loss(v, bank, l)
}

/// One appearance vector tagged with its trajectory (bank index).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledView<T> {
    pub label: usize,
    pub view: Embedding<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TclOutput<T> {
    pub loss: T,
    /// `dL_tcl / d view` for each raw (unnormalized) view, in input order.
    pub grads: Vec<Vec<T>>,
}

/// Mean InfoNCE over all views. Views are ℓ2-normalized first; gradients flow
/// through that normalization. Centers are constants.
pub fn tcl_loss<T: Scalar>(
    views: &[LabeledView<T>],
    bank: &TrajectoryCenterBank<T>,
    nce: &InfoNce<T>,
) -> Result<TclOutput<T>> {
    if views.is_empty() {
        return Err(Error::Empty("views"));
    }
    let scale = T::one() / T::lit(views.len() as f64);
    let mut total = T::zero();
    let mut grads = Vec::with_capacity(views.len());
    for lv in views {
        let n = l2_normalize(&lv.view);
        let (loss, g_unit) = nce.loss_and_grad(&n.vector, bank, lv.label)?;
        total += loss;
        let g_scaled: Vec<T> = g_unit.iter().map(|&g| g * scale).collect();
        grads.push(l2_normalize_backward(&lv.view, &g_scaled));
    }
    Ok(TclOutput {
        loss: total * scale,
        grads,
    })
}

/// Learnable log-variance weights balancing detection and embedding losses.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UncertaintyWeights<T> {
    pub eta1: T,
    pub eta2: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TotalLoss<T> {
    pub value: T,
    pub d_eta1: T,
    pub d_eta2: T,
    pub d_det: T,
    pub d_tcl: T,
}

/// `½ (e^{−η1} L_det + e^{−η2} L_tcl + η1 + η2)` and its partials.
pub fn total_loss<T: Scalar>(l_det: T, l_tcl: T, w: &UncertaintyWeights<T>) -> TotalLoss<T> {
    let h = T::half();
    let a = (-w.eta1).exp();
    let b = (-w.eta2).exp();
    TotalLoss {
        value: h * (a * l_det + b * l_tcl + w.eta1 + w.eta2),
        d_eta1: h * (T::one() - a * l_det),
        d_eta2: h * (T::one() - b * l_tcl),
        d_det: h * a,
        d_tcl: h * b,
    }
}

/// Detection-loss stand-in: a constant with zero gradient.
pub trait DetectionLoss<T> {
    fn value(&self, frame_indices: &[usize]) -> T;
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConstantDetectionLoss<T>(pub T);

impl<T: Scalar> DetectionLoss<T> for ConstantDetectionLoss<T> {
    fn value(&self, _frame_indices: &[usize]) -> T {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::within_tolerance;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bank_from(centers: &[&[f64]]) -> TrajectoryCenterBank<f64> {
        let mut b = TrajectoryCenterBank::new(centers.len(), centers[0].len()).unwrap();
        for (i, c) in centers.iter().enumerate() {
            if c.iter().any(|&x| x != 0.0) {
                b.update_center(i, c, 0.0).unwrap();
            }
        }
        b
    }

    #[test]
    fn single_center_loss_is_zero() {
        let bank = bank_from(&[&[0.6, 0.8]]);
        assert_eq!(info_nce(&[0.6, 0.8], &bank, 0, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn two_orthogonal_centers() {
        let bank = bank_from(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let l1 = info_nce(&[1.0, 0.0], &bank, 0, 1.0).unwrap();
        assert!((l1 - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        assert_relative_eq!(l1, 0.313262, epsilon = 1e-6);
        let l2 = info_nce(&[1.0, 0.0], &bank, 0, 0.05).unwrap();
        assert_relative_eq!(l2, (-20.0f64).exp().ln_1p(), max_relative = 1e-6);
        assert_relative_eq!(l2, 2.06e-9, max_relative = 1e-2);
    }

    #[test]
    fn zero_centers_excluded_unless_positive() {
        let bank = bank_from(&[&[1.0, 0.0], &[0.0, 0.0], &[0.0, 1.0]]);
        let with = info_nce(&[1.0, 0.0], &bank, 0, 1.0).unwrap();
        assert!((with - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        let mut nce = InfoNce::new(1.0).unwrap();
        nce.exclude_zero_centers = false;
        let without = nce.loss(&[1.0, 0.0], &bank, 0).unwrap();
        assert!((without - (1.0 + 2.0 * (-1.0f64).exp()).ln()).abs() < 1e-12);
        // The positive itself may be zero.
        let l = info_nce(&[1.0, 0.0], &bank, 1, 1.0).unwrap();
        assert!((l - ((0.0f64).exp() + 1.0f64.exp() + 0.0f64.exp()).ln()).abs() < 1e-12);
        assert!(info_nce(&[1.0, 0.0], &bank, 3, 1.0).is_err());
        assert!(InfoNce::new(0.0).is_err());
    }

    #[test]
    fn tcl_examples() {
        let bank = bank_from(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let nce = InfoNce::new(0.5).unwrap();
        let v = LabeledView {
            label: 1,
            view: Embedding(vec![0.3, 0.7]),
        };
        let one = tcl_loss(&[v.clone()], &bank, &nce).unwrap();
        let direct = nce.loss(&l2_normalize(&v.view).vector, &bank, 1).unwrap();
        assert_eq!(one.loss, direct);
        let w = LabeledView {
            label: 0,
            view: Embedding(vec![-0.2, 0.9]),
        };
        let a = tcl_loss(&[v.clone(), w.clone()], &bank, &nce).unwrap();
        let b = tcl_loss(&[v.clone(), w.clone(), v, w], &bank, &nce).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-15);
        assert!(tcl_loss(&[], &bank, &nce).is_err());
    }

    #[test]
    fn tcl_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dim = 5;
        let mut bank = TrajectoryCenterBank::<f64>::new(4, dim).unwrap();
        for i in 0..3 {
            let c: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            bank.update_center(i, &c, 0.0).unwrap();
        }
        let nce = InfoNce::new(0.3).unwrap();
        let views: Vec<LabeledView<f64>> = (0..6)
            .map(|k| LabeledView {
                label: k % 4,
                view: Embedding((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()),
            })
            .collect();
        let out = tcl_loss(&views, &bank, &nce).unwrap();
        let h = 1e-6;
        for k in 0..views.len() {
            for d in 0..dim {
                let mut p = views.clone();
                p[k].view[d] += h;
                let mut m = views.clone();
                m[k].view[d] -= h;
                let fd = (tcl_loss(&p, &bank, &nce).unwrap().loss - tcl_loss(&m, &bank, &nce).unwrap().loss) / (2.0 * h);
                assert!(within_tolerance(out.grads[k][d], fd), "{} vs {fd}", out.grads[k][d]);
            }
        }
    }

    #[test]
    fn total_loss_examples() {
        let zero = UncertaintyWeights::default();
        assert_eq!(total_loss(1.5, 2.5, &zero).value, 2.0);
        assert_eq!(total_loss(0.0, 0.0, &zero).value, 0.0);
        assert_eq!(total_loss(2.0, 0.3, &zero).d_eta1, -0.5);
    }

    #[test]
    fn total_loss_partials_match_finite_differences() {
        let w = UncertaintyWeights { eta1: 0.3, eta2: -0.7 };
        let (ld, lt) = (1.3, 0.45);
        let t = total_loss(ld, lt, &w);
        let h = 1e-6;
        let f = |ld: f64, lt: f64, e1: f64, e2: f64| total_loss(ld, lt, &UncertaintyWeights { eta1: e1, eta2: e2 }).value;
        assert!(within_tolerance(t.d_eta1, (f(ld, lt, 0.3 + h, -0.7) - f(ld, lt, 0.3 - h, -0.7)) / (2.0 * h)));
        assert!(within_tolerance(t.d_eta2, (f(ld, lt, 0.3, -0.7 + h) - f(ld, lt, 0.3, -0.7 - h)) / (2.0 * h)));
        assert!(within_tolerance(t.d_det, (f(ld + h, lt, 0.3, -0.7) - f(ld - h, lt, 0.3, -0.7)) / (2.0 * h)));
        assert!(within_tolerance(t.d_tcl, (f(ld, lt + h, 0.3, -0.7) - f(ld, lt - h, 0.3, -0.7)) / (2.0 * h)));
    }

    fn unit(v: Vec<f64>) -> Vec<f64> {
        l2_normalize(&v).vector.0
    }

    proptest! {
        #[test]
        fn info_nce_nonnegative_and_permutation_invariant(
            raw in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 3), 2..6),
            q in prop::collection::vec(-1.0..1.0f64, 3),
            tau in 0.05..1.0f64,
            seed in 0u64..100,
        ) {
            prop_assume!(raw.iter().all(|c| crate::vector::norm(c) > 1e-3));
            prop_assume!(crate::vector::norm(&q) > 1e-3);
            let v = unit(q);
            let mut bank = TrajectoryCenterBank::new(raw.len(), 3).unwrap();
            for (i, c) in raw.iter().enumerate() {
                bank.update_center(i, c, 0.0).unwrap();
            }
            let base = info_nce(&v, &bank, 0, tau).unwrap();
            prop_assert!(base >= 0.0);
            // Shuffle negatives (indices 1..).
            let mut order: Vec<usize> = (1..raw.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..order.len()).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let mut shuffled = TrajectoryCenterBank::new(raw.len(), 3).unwrap();
            shuffled.update_center(0, &raw[0], 0.0).unwrap();
            for (slot, &src) in order.iter().enumerate() {
                shuffled.update_center(slot + 1, &raw[src], 0.0).unwrap();
            }
            let perm = info_nce(&v, &shuffled, 0, tau).unwrap();
            prop_assert!((base - perm).abs() < 1e-12);
        }
    }
}
