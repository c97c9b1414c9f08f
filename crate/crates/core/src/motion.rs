//! Constant-velocity Kalman filter over `(cx, cy, aspect, height)` and
//! Mahalanobis gating of association costs.

use crate::assignment::CostMatrix;
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Detection};
use crate::scalar::Scalar;

/// 0.95 quantile of the chi-square distribution with 4 degrees of freedom.
pub const CHI2_95_4DOF: f64 = 9.4877;

type Vec4<T> = [T; 4];
type Vec8<T> = [T; 8];
type Mat4<T> = [[T; 4]; 4];
type Mat8<T> = [[T; 8]; 8];

/// Mean `(cx, cy, aspect, height, vcx, vcy, vaspect, vheight)` and covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState<T> {
    pub mean: Vec8<T>,
    pub covariance: Mat8<T>,
}

impl<T: Scalar> KalmanState<T> {
    /// Box implied by the position part of the mean.
    pub fn to_box(&self) -> BoundingBox<T> {
        let [cx, cy, a, h, ..] = self.mean;
        let w = a * h;
        BoundingBox::from_center(cx, cy, w, h)
    }

    pub fn trace(&self) -> T {
        (0..8).map(|i| self.covariance[i][i]).sum()
    }
}

/// Convert a box to the `(cx, cy, w/h, h)` measurement space.
pub fn measurement<T: Scalar>(b: &BoundingBox<T>) -> Vec4<T> {
    let (cx, cy) = b.center();
    let a = if b.height > T::zero() {
        b.width / b.height
    } else {
        T::zero()
    };
    [cx, cy, a, b.height]
}

/// Filter with noise standard deviations proportional to box height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanFilter<T> {
    pub std_weight_position: T,
    pub std_weight_velocity: T,
}

impl<T: Scalar> Default for KalmanFilter<T> {
    fn default() -> Self {
        Self {
            std_weight_position: T::lit(1.0 / 20.0),
            std_weight_velocity: T::lit(1.0 / 160.0),
        }
    }
}

impl<T: Scalar> KalmanFilter<T> {
    pub fn initiate(&self, b: &BoundingBox<T>) -> Result<KalmanState<T>> {
        if !(b.area() > T::zero()) {
            return Err(Error::DegenerateBox);
        }
        let z = measurement(b);
        let h = z[3];
        let (wp, wv) = (self.std_weight_position, self.std_weight_velocity);
        let two = T::two();
        let ten = T::lit(10.0);
        let std = [
            two * wp * h,
            two * wp * h,
            T::lit(1e-2),
            two * wp * h,
            ten * wv * h,
            ten * wv * h,
            T::lit(1e-5),
            ten * wv * h,
        ];
        let mut mean = [T::zero(); 8];
        mean[..4].copy_from_slice(&z);
        Ok(KalmanState {
            mean,
            covariance: diag8(&std),
        })
    }

    pub fn predict(&self, s: &KalmanState<T>) -> KalmanState<T> {
        let h = s.mean[3].abs();
        let (wp, wv) = (self.std_weight_position, self.std_weight_velocity);
        let std = [
            wp * h,
            wp * h,
            T::lit(1e-2),
            wp * h,
            wv * h,
            wv * h,
            T::lit(1e-5),
            wv * h,
        ];
        let mut mean = s.mean;
        for i in 0..4 {
            mean[i] += s.mean[i + 4];
        }
        // F P Fᵀ with F = [[I, I], [0, I]].
        let p = &s.covariance;
        let mut fp = *p;
        for i in 0..4 {
            for j in 0..8 {
                fp[i][j] = p[i][j] + p[i + 4][j];
            }
        }
        let mut cov = fp;
        for i in 0..8 {
            for j in 0..4 {
                cov[i][j] = fp[i][j] + fp[i][j + 4];
            }
        }
        for (i, sd) in std.iter().enumerate() {
            cov[i][i] += *sd * *sd;
        }
        KalmanState {
            mean,
            covariance: symmetrize(cov),
        }
    }

    /// Measurement-space mean and innovation covariance.
    pub fn project(&self, s: &KalmanState<T>) -> (Vec4<T>, Mat4<T>) {
        let h = s.mean[3].abs();
        let wp = self.std_weight_position;
        let std = [wp * h, wp * h, T::lit(1e-1), wp * h];
        let mut cov = [[T::zero(); 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                cov[i][j] = s.covariance[i][j];
            }
            cov[i][i] += std[i] * std[i];
        }
        let mut mean = [T::zero(); 4];
        mean.copy_from_slice(&s.mean[..4]);
        (mean, cov)
    }

    pub fn update(&self, s: &KalmanState<T>, b: &BoundingBox<T>) -> Result<KalmanState<T>> {
        let (proj_mean, proj_cov) = self.project(s);
        let chol = cholesky4(&proj_cov)?;
        let z = measurement(b);
        let mut innovation = [T::zero(); 4];
        for i in 0..4 {
            innovation[i] = z[i] - proj_mean[i];
        }
        // K = P Hᵀ S⁻¹; row i of K solves S kᵢ = (P Hᵀ)ᵢ since S is symmetric.
        let mut gain = [[T::zero(); 4]; 8];
        for (i, row) in gain.iter_mut().enumerate() {
            let pht = [
                s.covariance[i][0],
                s.covariance[i][1],
                s.covariance[i][2],
                s.covariance[i][3],
            ];
            *row = cholesky_solve4(&chol, &pht);
        }
        let mut mean = s.mean;
        for i in 0..8 {
            for j in 0..4 {
                mean[i] += gain[i][j] * innovation[j];
            }
        }
        // P - K S Kᵀ
        let mut ks = [[T::zero(); 4]; 8];
        for i in 0..8 {
            for j in 0..4 {
                ks[i][j] = (0..4).map(|k| gain[i][k] * proj_cov[k][j]).sum();
            }
        }
        let mut cov = s.covariance;
        for i in 0..8 {
            for j in 0..8 {
                let kskt: T = (0..4).map(|k| ks[i][k] * gain[j][k]).sum();
                cov[i][j] -= kskt;
            }
        }
        Ok(KalmanState {
            mean,
            covariance: symmetrize(cov),
        })
    }

    /// Squared Mahalanobis distance between the projected state and a box.
    pub fn gating_distance(&self, s: &KalmanState<T>, b: &BoundingBox<T>) -> Result<T> {
        let (mean, cov) = self.project(s);
        let chol = cholesky4(&cov)?;
        let z = measurement(b);
        let d = [z[0] - mean[0], z[1] - mean[1], z[2] - mean[2], z[3] - mean[3]];
        let y = forward_sub4(&chol, &d);
        Ok(y.iter().map(|&v| v * v).sum())
    }

    /// Forbid entries whose detection lies outside the trajectory's gate.
    /// Rows are detections, columns are trajectory states.
    pub fn gate_cost_matrix(
        &self,
        costs: &CostMatrix<T>,
        states: &[KalmanState<T>],
        dets: &[Detection<T>],
        gate: T,
    ) -> Result<CostMatrix<T>> {
        if costs.rows() != dets.len() {
            return Err(Error::DimensionMismatch {
                expected: dets.len(),
                got: costs.rows(),
            });
        }
        if costs.cols() != states.len() {
            return Err(Error::DimensionMismatch {
                expected: states.len(),
                got: costs.cols(),
            });
        }
        let mut out = costs.clone();
        if gate == T::infinity() {
            return Ok(out);
        }
        for (c, s) in states.iter().enumerate() {
            let (mean, cov) = self.project(s);
            let chol = cholesky4(&cov)?;
            for (r, det) in dets.iter().enumerate() {
                let z = measurement(&det.bbox);
                let d = [z[0] - mean[0], z[1] - mean[1], z[2] - mean[2], z[3] - mean[3]];
                let y = forward_sub4(&chol, &d);
                let dist: T = y.iter().map(|&v| v * v).sum();
                if dist > gate {
                    out.set(r, c, T::infinity());
                }
            }
        }
        Ok(out)
    }
}

fn diag8<T: Scalar>(std: &Vec8<T>) -> Mat8<T> {
    let mut m = [[T::zero(); 8]; 8];
    for i in 0..8 {
        m[i][i] = std[i] * std[i];
    }
    m
}

fn symmetrize<T: Scalar>(mut m: Mat8<T>) -> Mat8<T> {
    for i in 0..8 {
        for j in (i + 1)..8 {
            let v = (m[i][j] + m[j][i]) * T::half();
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

/// Lower-triangular `L` with `L Lᵀ = a`.
fn cholesky4<T: Scalar>(a: &Mat4<T>) -> Result<Mat4<T>> {
    let mut l = [[T::zero(); 4]; 4];
    for i in 0..4 {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(sum > T::zero()) {
                    return Err(Error::SingularCovariance);
                }
                l[i][i] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Ok(l)
}

fn forward_sub4<T: Scalar>(l: &Mat4<T>, b: &Vec4<T>) -> Vec4<T> {
    let mut y = [T::zero(); 4];
    for i in 0..4 {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    y
}

fn cholesky_solve4<T: Scalar>(l: &Mat4<T>, b: &Vec4<T>) -> Vec4<T> {
    let y = forward_sub4(l, b);
    let mut x = [T::zero(); 4];
    for i in (0..4).rev() {
        let mut s = y[i];
        for k in (i + 1)..4 {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::Embedding;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn kf() -> KalmanFilter<f64> {
        KalmanFilter::default()
    }

    fn det(b: BoundingBox<f64>) -> Detection<f64> {
        Detection::new(1, b, 1.0, Embedding(vec![1.0]))
    }

    #[test]
    fn initiate_sets_position_and_zero_velocity() {
        let s = kf().initiate(&BoundingBox::new(0.0, 0.0, 10.0, 20.0)).unwrap();
        assert_eq!(&s.mean[..4], &[5.0, 10.0, 0.5, 20.0]);
        assert!(s.mean[4..].iter().all(|&v| v == 0.0));
        let again = kf().initiate(&BoundingBox::new(0.0, 0.0, 10.0, 20.0)).unwrap();
        assert_eq!(s, again);
        assert_eq!(
            kf().initiate(&BoundingBox::new(0.0, 0.0, 0.0, 20.0)),
            Err(Error::DegenerateBox)
        );
    }

    #[test]
    fn predict_constant_velocity() {
        let mut s = kf().initiate(&BoundingBox::new(0.0, 0.0, 10.0, 20.0)).unwrap();
        let p = kf().predict(&s);
        assert_eq!(&p.mean[..4], &s.mean[..4]);
        assert!(p.trace() > s.trace());
        s.mean[4] = 1.0;
        let p = kf().predict(&s);
        assert_eq!(p.mean[0], s.mean[0] + 1.0);
        assert_eq!(p.mean[1], s.mean[1]);
    }

    #[test]
    fn update_with_predicted_measurement_keeps_mean() {
        let s = kf().predict(&kf().initiate(&BoundingBox::new(3.0, 4.0, 10.0, 20.0)).unwrap());
        let u = kf().update(&s, &s.to_box()).unwrap();
        for i in 0..4 {
            assert_relative_eq!(u.mean[i], s.mean[i], epsilon = 1e-12);
        }
        assert!(u.trace() <= s.trace());
    }

    #[test]
    fn repeated_measurements_converge() {
        let filter = kf();
        let target = BoundingBox::new(50.0, 40.0, 10.0, 20.0);
        let mut s = filter.initiate(&BoundingBox::new(0.0, 0.0, 10.0, 20.0)).unwrap();
        let dist = |s: &KalmanState<f64>| {
            let z = measurement(&target);
            ((s.mean[0] - z[0]).powi(2) + (s.mean[1] - z[1]).powi(2)).sqrt()
        };
        // The velocity state may overshoot, but never beyond the starting error.
        let start = dist(&s);
        for _ in 0..50 {
            s = filter.update(&filter.predict(&s), &target).unwrap();
            assert!(dist(&s) <= start);
        }
        assert!(dist(&s) < 1.0, "{}", dist(&s));
    }

    #[test]
    fn covariance_stays_symmetric() {
        let filter = kf();
        let mut s = filter.initiate(&BoundingBox::new(0.0, 0.0, 12.0, 30.0)).unwrap();
        for k in 0..20 {
            s = filter.predict(&s);
            s = filter
                .update(&s, &BoundingBox::new(k as f64 * 1.5, 0.3 * k as f64, 12.0, 30.0))
                .unwrap();
            for i in 0..8 {
                assert!(s.covariance[i][i] >= 0.0);
                for j in 0..8 {
                    assert!((s.covariance[i][j] - s.covariance[j][i]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn gating() {
        let filter = kf();
        let s = filter.initiate(&BoundingBox::new(0.0, 0.0, 10.0, 20.0)).unwrap();
        let near = det(s.to_box());
        let far = det(BoundingBox::new(500.0, 500.0, 10.0, 20.0));
        let costs = CostMatrix::from_rows(&[vec![0.2], vec![0.4]]).unwrap();
        let dets = [near, far];
        let open = filter.gate_cost_matrix(&costs, &[s], &dets, f64::INFINITY).unwrap();
        assert_eq!(open, costs);
        let gated = filter
            .gate_cost_matrix(&costs, &[s], &dets, CHI2_95_4DOF)
            .unwrap();
        assert_eq!(gated.get(0, 0), 0.2);
        assert_eq!(gated.get(1, 0), f64::INFINITY);
        // Analytic: position std is 2·h/20 = 2 at init plus measurement h/20 = 1,
        // so a 10 px shift in cx gives d² = 100 / 5 = 20 > 9.4877.
        let shifted = det(s.to_box().translated(10.0, 0.0));
        let d = filter.gating_distance(&s, &shifted.bbox).unwrap();
        assert_relative_eq!(d, 20.0, epsilon = 1e-9);
        let g = filter
            .gate_cost_matrix(&CostMatrix::from_rows(&[vec![0.1]]).unwrap(), &[s], &[shifted], CHI2_95_4DOF)
            .unwrap();
        assert_eq!(g.get(0, 0), f64::INFINITY);
        assert!(filter.gate_cost_matrix(&costs, &[s, s], &dets, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn gating_only_forbids(cost in 0.0..1.0f64, dx in -80.0..80.0f64, dy in -80.0..80.0f64) {
            let filter = kf();
            let s = filter.initiate(&BoundingBox::new(100.0, 100.0, 10.0, 20.0)).unwrap();
            let d = det(BoundingBox::new(100.0 + dx, 100.0 + dy, 10.0, 20.0));
            let m = CostMatrix::from_rows(&[vec![cost]]).unwrap();
            let g = filter.gate_cost_matrix(&m, &[s], &[d], CHI2_95_4DOF).unwrap();
            prop_assert!(g.get(0, 0) == cost || g.get(0, 0) == f64::INFINITY);
        }

        #[test]
        fn noiseless_tracking_contracts(vx in -5.0..5.0f64, vy in -5.0..5.0f64) {
            let filter = kf();
            let truth = |k: usize| BoundingBox::new(20.0 + vx * k as f64, 30.0 + vy * k as f64, 10.0, 25.0);
            let mut s = filter.initiate(&truth(0)).unwrap();
            let mut errors = Vec::new();
            for k in 1..=50 {
                let predicted = filter.predict(&s);
                let z = measurement(&truth(k));
                errors.push(((predicted.mean[0] - z[0]).powi(2) + (predicted.mean[1] - z[1]).powi(2)).sqrt());
                s = filter.update(&predicted, &truth(k)).unwrap();
            }
            // Prediction error shrinks once the velocity is picked up.
            prop_assert!(errors[49] <= errors[0] + 1e-9);
            prop_assert!(errors[49] < 1e-2 + 1e-3 * (vx.abs() + vy.abs()));
        }
    }
}
