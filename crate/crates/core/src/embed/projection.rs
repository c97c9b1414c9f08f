//! Four-layer projection head: FC → ReLU → FC → ReLU → FC → ℓ2 → FC.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vector::{dot, l2_normalize, l2_normalize_backward, Embedding};

/// Affine layer `y = W x + b` with `W` stored `out × in`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    /// He-normal weights, zero bias.
    pub fn random<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let std = (2.0 / in_dim.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let weight = (0..in_dim * out_dim)
            .map(|_| T::lit(normal.sample(rng)))
            .collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        (0..self.out_dim)
            .map(|o| dot(&self.weight[o * self.in_dim..(o + 1) * self.in_dim], x) + self.bias[o])
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward_into(&self, x: &[T], grad_out: &[T], grad: &mut Linear<T>) -> Vec<T> {
        let mut gx = vec![T::zero(); self.in_dim];
        for (o, &g) in grad_out.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            grad.bias[o] += g;
            let row = o * self.in_dim;
            for i in 0..self.in_dim {
                grad.weight[row + i] += g * x[i];
                gx[i] += g * self.weight[row + i];
            }
        }
        gx
    }
}

/// Layer widths `C_in → H1 → H2 → D_pre → D_out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjectionDims {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub pre: usize,
    pub output: usize,
}

impl Default for ProjectionDims {
    fn default() -> Self {
        Self {
            input: 16,
            hidden1: 64,
            hidden2: 64,
            pre: 32,
            output: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead<T> {
    pub layers: [Linear<T>; 4],
}

/// Intermediate activations of one forward pass, kept for backward.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionTrace<T> {
    pub input: Vec<T>,
    pub pre1: Vec<T>,
    pub hidden1: Vec<T>,
    pub pre2: Vec<T>,
    pub hidden2: Vec<T>,
    pub pre3: Vec<T>,
    /// ℓ2-normalized output of the third layer.
    pub normalized: Vec<T>,
    pub degenerate: bool,
    pub output: Vec<T>,
}

fn relu<T: Scalar>(v: &[T]) -> Vec<T> {
    v.iter().map(|&x| x.max(T::zero())).collect()
}

impl<T: Scalar> ProjectionHead<T> {
    pub fn zeros(d: ProjectionDims) -> Self {
        Self {
            layers: [
                Linear::zeros(d.input, d.hidden1),
                Linear::zeros(d.hidden1, d.hidden2),
                Linear::zeros(d.hidden2, d.pre),
                Linear::zeros(d.pre, d.output),
            ],
        }
    }

    pub fn random<R: Rng>(d: ProjectionDims, rng: &mut R) -> Self {
        Self {
            layers: [
                Linear::random(d.input, d.hidden1, rng),
                Linear::random(d.hidden1, d.hidden2, rng),
                Linear::random(d.hidden2, d.pre, rng),
                Linear::random(d.pre, d.output, rng),
            ],
        }
    }

    pub fn dims(&self) -> ProjectionDims {
        ProjectionDims {
            input: self.layers[0].in_dim,
            hidden1: self.layers[0].out_dim,
            hidden2: self.layers[1].out_dim,
            pre: self.layers[2].out_dim,
            output: self.layers[3].out_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[3].out_dim
    }

    pub fn forward_trace(&self, v: &[T]) -> Result<ProjectionTrace<T>> {
        if v.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: v.len(),
            });
        }
        let pre1 = self.layers[0].forward(v);
        let hidden1 = relu(&pre1);
        let pre2 = self.layers[1].forward(&hidden1);
        let hidden2 = relu(&pre2);
        let pre3 = self.layers[2].forward(&hidden2);
        let n = l2_normalize(&pre3);
        let output = self.layers[3].forward(&n.vector);
        Ok(ProjectionTrace {
            input: v.to_vec(),
            pre1,
            hidden1,
            pre2,
            hidden2,
            pre3,
            normalized: n.vector.0,
            degenerate: n.degenerate,
            output,
        })
    }

    /// The appearance vector for one sampled feature.
    pub fn project(&self, v: &[T]) -> Result<Embedding<T>> {
        Ok(Embedding(self.forward_trace(v)?.output))
    }

    /// Accumulates parameter gradients into `grad`; returns `dL/d input`.
    pub fn backward(
        &self,
        trace: &ProjectionTrace<T>,
        grad_out: &[T],
        grad: &mut ProjectionHead<T>,
    ) -> Vec<T> {
        let [g0, g1, g2, g3] = &mut grad.layers;
        let g_norm = self.layers[3].backward_into(&trace.normalized, grad_out, g3);
        let g_pre3 = l2_normalize_backward(&trace.pre3, &g_norm);
        let g_h2 = self.layers[2].backward_into(&trace.hidden2, &g_pre3, g2);
        let g_pre2: Vec<T> = g_h2
            .iter()
            .zip(&trace.pre2)
            .map(|(&g, &a)| if a > T::zero() { g } else { T::zero() })
            .collect();
        let g_h1 = self.layers[1].backward_into(&trace.hidden1, &g_pre2, g1);
        let g_pre1: Vec<T> = g_h1
            .iter()
            .zip(&trace.pre1)
            .map(|(&g, &a)| if a > T::zero() { g } else { T::zero() })
            .collect();
        self.layers[0].backward_into(&trace.input, &g_pre1, g0)
    }

    /// Every parameter slice in a fixed order: `(W1, b1, W2, b2, W3, b3, W4, b4)`.
    pub fn parameters(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::norm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_dims() -> ProjectionDims {
        ProjectionDims {
            input: 3,
            hidden1: 5,
            hidden2: 4,
            pre: 3,
            output: 2,
        }
    }

    #[test]
    fn normalization_stage_has_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = ProjectionHead::<f64>::random(ProjectionDims::default(), &mut rng);
        for k in 0..10 {
            let v: Vec<f64> = (0..16).map(|i| ((i * 7 + k) % 5) as f64 - 1.7).collect();
            let t = head.forward_trace(&v).unwrap();
            if !t.degenerate {
                assert!((norm(&t.normalized) - 1.0).abs() < 1e-12);
            }
            assert!(t.output.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn zero_input_zero_bias_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let head = ProjectionHead::<f64>::random(small_dims(), &mut rng);
        let t = head.forward_trace(&[0.0, 0.0, 0.0]).unwrap();
        assert!(t.degenerate);
        assert!(t.normalized.iter().all(|&x| x == 0.0));
        assert!(head.project(&[0.0; 2]).is_err());
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut head = ProjectionHead::<f64>::random(small_dims(), &mut rng);
        for l in head.layers.iter_mut() {
            for b in l.bias.iter_mut() {
                *b = rng.random_range(-0.3..0.3);
            }
        }
        let x = [0.7, -0.4, 1.3];
        let up = [0.9, -0.35];
        let loss = |h: &ProjectionHead<f64>| dot(&h.project(&x).unwrap(), &up);

        let trace = head.forward_trace(&x).unwrap();
        let mut grad = ProjectionHead::zeros(small_dims());
        head.backward(&trace, &up, &mut grad);
        let analytic: Vec<f64> = grad.parameters().concat();

        let step = 1e-5;
        let n_params = analytic.len();
        for idx in 0..n_params {
            let perturb = |h: &mut ProjectionHead<f64>, d: f64| {
                let mut k = idx;
                for p in h.parameters_mut() {
                    if k < p.len() {
                        p[k] += d;
                        return;
                    }
                    k -= p.len();
                }
            };
            let mut plus = head.clone();
            perturb(&mut plus, step);
            let mut minus = head.clone();
            perturb(&mut minus, -step);
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * step);
            assert!(
                crate::gradcheck::within_tolerance(analytic[idx], fd),
                "param {idx}: fd {fd} vs {}",
                analytic[idx]
            );
        }
    }
}
