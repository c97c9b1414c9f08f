//! Identity-classification baseline: a linear classifier over normalized views
//! trained with softmax cross-entropy, in place of the contrastive objective.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embed::{backward_views, forward_views, EmbeddingModel, Linear};
use crate::error::{Error, Result};
use crate::mtcl::adam::Adam;
use crate::mtcl::train::{batch_windows, initial_model, FrameSource, TrainConfig};
use crate::scalar::Scalar;
use crate::vector::{l2_normalize, l2_normalize_backward};

#[derive(Debug, Clone)]
pub struct BaselineOutput<T> {
    pub model: EmbeddingModel<T>,
    pub classifier: Linear<T>,
    /// Mean cross-entropy per iteration.
    pub history: Vec<T>,
}

/// Softmax cross-entropy of `logits` against `label` and its gradient.
pub fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> (T, Vec<T>) {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    let loss = sum.ln() + m - logits[label];
    let mut grad: Vec<T> = exps.iter().map(|&e| e / sum).collect();
    grad[label] -= T::one();
    (loss, grad)
}

pub fn train_baseline<T: Scalar, S: FrameSource<T> + ?Sized>(
    source: &S,
    cfg: &TrainConfig,
) -> Result<BaselineOutput<T>> {
    cfg.validate()?;
    let n_traj = source.num_trajectories();
    if n_traj == 0 {
        return Err(Error::Empty("trajectories"));
    }
    let mut model: EmbeddingModel<T> = initial_model(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut classifier = Linear::random(cfg.dims.output, n_traj, &mut rng);
    let mut shapes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
    shapes.extend([classifier.weight.len(), classifier.bias.len()]);
    let mut adam = Adam::new(T::lit(cfg.learning_rate), &shapes);
    let windows = batch_windows(source.num_frames(), cfg.batch_size);
    let mut history = Vec::new();

    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut rng);
        for &w in &order {
            let mut grads = model.zeros_like();
            let mut g_cls = Linear::zeros(cfg.dims.output, n_traj);
            let mut loss = T::zero();
            let mut count = 0usize;
            let mut pending = Vec::new();
            for fi in windows[w].clone() {
                let frame = source.frame(fi)?;
                for &(label, ref bbox) in &frame.targets {
                    let Ok((views, tape)) = forward_views(&frame.map, bbox, &model) else {
                        continue;
                    };
                    let mut upstream = Vec::with_capacity(views.len());
                    for v in &views {
                        let u = l2_normalize(v).vector;
                        let logits = classifier.forward(&u);
                        let (l, g_logits) = cross_entropy(&logits, label);
                        loss += l;
                        count += 1;
                        let g_u = classifier.backward_into(&u, &g_logits, &mut g_cls);
                        upstream.push(l2_normalize_backward(v, &g_u));
                    }
                    pending.push((upstream, tape));
                }
                for (upstream, mut tape) in pending.drain(..) {
                    grads.add_assign(&backward_views(&frame.map, &mut tape, &upstream, &model)?);
                }
            }
            if count == 0 {
                continue;
            }
            let scale = T::one() / T::lit(count as f64);
            let mut gs: Vec<Vec<T>> = grads.slices().iter().map(|s| s.to_vec()).collect();
            gs.push(g_cls.weight.clone());
            gs.push(g_cls.bias.clone());
            for g in &mut gs {
                g.iter_mut().for_each(|x| *x *= scale);
            }
            let mut params = model.parameters_mut();
            params.push(&mut classifier.weight);
            params.push(&mut classifier.bias);
            adam.step(params, gs.iter().map(|g| g.as_slice()).collect())?;
            history.push(loss * scale);
        }
    }
    Ok(BaselineOutput {
        model,
        classifier,
        history,
    })
}
