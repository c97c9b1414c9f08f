use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Bias-corrected Adam over a fixed list of parameter slices.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    step: i32,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(learning_rate: T, shapes: &[usize]) -> Self {
        Self {
            learning_rate,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            epsilon: T::lit(1e-8),
            step: 0,
            first_moment: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, params: Vec<&mut [T]>, grads: Vec<&[T]>) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.first_moment.len(),
                got: params.len().min(grads.len()),
            });
        }
        for ((p, g), m) in params.iter().zip(&grads).zip(&self.first_moment) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::DimensionMismatch {
                    expected: m.len(),
                    got: if p.len() != m.len() { p.len() } else { g.len() },
                });
            }
        }
        self.step += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.step);
        let c2 = one - self.beta2.powi(self.step);
        for (slot, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let m = &mut self.first_moment[slot];
            let v = &mut self.second_moment[slot];
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (one - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (one - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
