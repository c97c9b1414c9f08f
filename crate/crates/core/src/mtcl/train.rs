//! Epoch loop: bank reset per epoch, multi-view forward, contrastive loss,
//! Adam step, then center refresh from the batch's vectors.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embed::{
    backward_views, forward_views, EmbeddingModel, FeatureMap, Gradients, ProjectionDims,
    SamplingPattern,
};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::mtcl::adam::Adam;
use crate::mtcl::bank::{select_update_sample, TrajectoryCenterBank, UpdateStrategy};
use crate::mtcl::loss::{
    tcl_loss, total_loss, ConstantDetectionLoss, DetectionLoss, InfoNce, LabeledView,
    UncertaintyWeights,
};
use crate::scalar::Scalar;
use crate::vector::{l2_normalize, Embedding};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Momentum of the center update.
    pub alpha: f64,
    /// InfoNCE temperature.
    pub tau: f64,
    pub n_k: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Consecutive frames per batch.
    pub batch_size: usize,
    pub strategy: UpdateStrategy,
    pub seed: u64,
    pub dims: ProjectionDims,
    pub pattern: SamplingPattern,
    pub offset_init_std: f64,
    pub normalize_centers: bool,
    pub exclude_zero_centers: bool,
    /// Value returned by the detection-loss stub.
    pub detection_loss: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            tau: 0.05,
            n_k: 9,
            learning_rate: 1e-4,
            epochs: 10,
            batch_size: 8,
            strategy: UpdateStrategy::Hard,
            seed: 0,
            dims: ProjectionDims::default(),
            pattern: SamplingPattern::Grid,
            offset_init_std: 0.01,
            normalize_centers: true,
            exclude_zero_centers: true,
            detection_loss: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.n_k == 0 {
            return bad("n_k must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0) {
            return bad("learning_rate must be non-negative");
        }
        Ok(())
    }
}

/// One frame of training data: a feature map and labeled target boxes on its grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingFrame<T> {
    pub map: FeatureMap<T>,
    /// `(trajectory index, box in feature-map coordinates)`.
    pub targets: Vec<(usize, BoundingBox<T>)>,
}

/// Random-access provider of training frames.
pub trait FrameSource<T: Clone> {
    fn num_frames(&self) -> usize;
    fn num_trajectories(&self) -> usize;
    fn frame(&self, index: usize) -> Result<std::borrow::Cow<'_, TrainingFrame<T>>>;
}

/// In-memory frames with trajectory indices `0..n_trajectories`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet<T> {
    pub frames: Vec<TrainingFrame<T>>,
    pub n_trajectories: usize,
}

impl<T: Scalar> FrameSet<T> {
    pub fn new(frames: Vec<TrainingFrame<T>>) -> Self {
        let n = frames
            .iter()
            .flat_map(|f| f.targets.iter().map(|t| t.0 + 1))
            .max()
            .unwrap_or(0);
        Self {
            frames,
            n_trajectories: n,
        }
    }
}

impl<T: Scalar> FrameSource<T> for FrameSet<T> {
    fn num_frames(&self) -> usize {
        self.frames.len()
    }

    fn num_trajectories(&self) -> usize {
        self.n_trajectories
    }

    fn frame(&self, index: usize) -> Result<std::borrow::Cow<'_, TrainingFrame<T>>> {
        self.frames
            .get(index)
            .map(std::borrow::Cow::Borrowed)
            .ok_or(Error::IndexOutOfRange {
                index,
                len: self.frames.len(),
            })
    }
}

/// One row of the loss history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord<T> {
    pub epoch: usize,
    pub iteration: usize,
    pub l_tcl: T,
    pub l_det: T,
    pub l_total: T,
    pub eta1: T,
    pub eta2: T,
}

#[derive(Debug, Clone)]
pub struct TrainOutput<T> {
    pub model: EmbeddingModel<T>,
    pub weights: UncertaintyWeights<T>,
    pub history: Vec<LossRecord<T>>,
    /// Bank as it stood at the end of the last epoch.
    pub bank: TrajectoryCenterBank<T>,
}

impl<T: Scalar> TrainOutput<T> {
    pub fn epoch_mean_tcl(&self, epoch: usize) -> Option<T> {
        let rows: Vec<T> = self
            .history
            .iter()
            .filter(|r| r.epoch == epoch)
            .map(|r| r.l_tcl)
            .collect();
        if rows.is_empty() {
            None
        } else {
            Some(rows.iter().copied().sum::<T>() / T::lit(rows.len() as f64))
        }
    }
}

/// Initial parameters for a config; training with zero epochs returns exactly these.
pub fn initial_model<T: Scalar>(cfg: &TrainConfig) -> Result<EmbeddingModel<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    EmbeddingModel::random(cfg.n_k, cfg.dims, cfg.pattern, cfg.offset_init_std, &mut rng)
}

/// Contiguous frame windows of `batch_size`.
pub fn batch_windows(n_frames: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    (0..n_frames)
        .step_by(batch_size.max(1))
        .map(|s| s..(s + batch_size).min(n_frames))
        .collect()
}

pub fn train<T: Scalar, S: FrameSource<T> + ?Sized>(
    source: &S,
    cfg: &TrainConfig,
) -> Result<TrainOutput<T>> {
    train_with(source, cfg, &ConstantDetectionLoss(T::lit(cfg.detection_loss)), |_| {})
}

/// Training with a custom detection-loss stub and a hook called after every center refresh.
pub fn train_with<T: Scalar, S: FrameSource<T> + ?Sized>(
    source: &S,
    cfg: &TrainConfig,
    det_loss: &dyn DetectionLoss<T>,
    mut on_bank_update: impl FnMut(&TrajectoryCenterBank<T>),
) -> Result<TrainOutput<T>> {
    cfg.validate()?;
    let n_traj = source.num_trajectories();
    if n_traj == 0 {
        return Err(Error::Empty("trajectories"));
    }
    let mut model: EmbeddingModel<T> = initial_model(cfg)?;
    // Separate stream for batch order and random selection so the initial model stays fixed.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut weights = UncertaintyWeights::<T>::default();
    let mut shapes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
    shapes.push(2);
    let mut adam = Adam::new(T::lit(cfg.learning_rate), &shapes);
    let mut nce = InfoNce::new(T::lit(cfg.tau))?;
    nce.exclude_zero_centers = cfg.exclude_zero_centers;
    let alpha = T::lit(cfg.alpha);

    let mut bank = TrajectoryCenterBank::new(n_traj, cfg.dims.output)?;
    let mut history = Vec::new();
    let windows = batch_windows(source.num_frames(), cfg.batch_size);

    for epoch in 0..cfg.epochs {
        bank = TrajectoryCenterBank::new(n_traj, cfg.dims.output)?;
        bank.normalize = cfg.normalize_centers;
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut rng);

        for (iteration, &w) in order.iter().enumerate() {
            let frame_ids: Vec<usize> = windows[w].clone().collect();
            let frames = frame_ids
                .iter()
                .map(|&i| source.frame(i))
                .collect::<Result<Vec<_>>>()?;

            let mut views = Vec::new();
            let mut tapes = Vec::new();
            for (fi, frame) in frames.iter().enumerate() {
                for &(label, ref bbox) in &frame.targets {
                    if label >= n_traj {
                        return Err(Error::IndexOutOfRange {
                            index: label,
                            len: n_traj,
                        });
                    }
                    let Ok((vs, tape)) = forward_views(&frame.map, bbox, &model) else {
                        continue;
                    };
                    tapes.push((fi, views.len(), tape));
                    views.extend(vs.into_iter().map(|view| LabeledView { label, view }));
                }
            }

            let l_det = det_loss.value(&frame_ids);
            let (l_tcl, view_grads) = if views.is_empty() {
                (T::zero(), Vec::new())
            } else {
                let out = tcl_loss(&views, &bank, &nce)?;
                (out.loss, out.grads)
            };
            let total = total_loss(l_det, l_tcl, &weights);
            history.push(LossRecord {
                epoch,
                iteration,
                l_tcl,
                l_det,
                l_total: total.value,
                eta1: weights.eta1,
                eta2: weights.eta2,
            });

            let mut grads: Gradients<T> = model.zeros_like();
            for (fi, start, mut tape) in tapes {
                let upstream: Vec<Vec<T>> = view_grads[start..start + cfg.n_k]
                    .iter()
                    .map(|g| g.iter().map(|&x| x * total.d_tcl).collect())
                    .collect();
                let g = backward_views(&frames[fi].map, &mut tape, &upstream, &model)?;
                grads.add_assign(&g);
            }
            let eta_grad = [total.d_eta1, total.d_eta2];
            {
                let mut eta = [weights.eta1, weights.eta2];
                let mut params = model.parameters_mut();
                params.push(&mut eta);
                let mut gs = grads.slices();
                gs.push(&eta_grad);
                adam.step(params, gs)?;
                weights = UncertaintyWeights {
                    eta1: eta[0],
                    eta2: eta[1],
                };
            }

            refresh_centers(&mut bank, &views, cfg.strategy, alpha, &mut rng)?;
            on_bank_update(&bank);
        }
    }

    Ok(TrainOutput {
        model,
        weights,
        history,
        bank,
    })
}

/// Per trajectory present in the batch (ascending index), pick a sample and apply the momentum update.
pub fn refresh_centers<T: Scalar, R: rand::Rng>(
    bank: &mut TrajectoryCenterBank<T>,
    views: &[LabeledView<T>],
    strategy: UpdateStrategy,
    alpha: T,
    rng: &mut R,
) -> Result<()> {
    let mut by_label: Vec<Vec<Embedding<T>>> = vec![Vec::new(); bank.len()];
    for lv in views {
        by_label[lv.label].push(l2_normalize(&lv.view).vector);
    }
    for (label, candidates) in by_label.iter().enumerate() {
        if candidates.is_empty() {
            continue;
        }
        let center = bank.center(label)?.to_vec();
        let p = select_update_sample(candidates, &center, strategy, rng)?;
        bank.update_center(label, &p, alpha)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Five identities with distinct constant signatures on a small grid.
    pub(crate) fn separable_frames(seed: u64, n_frames: usize) -> FrameSet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = 4;
        let sigs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let frames = (0..n_frames)
            .map(|t| {
                let mut map = FeatureMap::from_fn(12, 30, c, |_, _, _| rng.random_range(-0.1..0.1));
                let mut targets = Vec::new();
                for (id, sig) in sigs.iter().enumerate() {
                    let x0 = (id * 6 + t % 2) as f64;
                    let b = BoundingBox::new(x0, 2.0, 4.0, 6.0);
                    for y in 2..=8 {
                        for x in (x0 as usize)..=(x0 as usize + 4).min(29) {
                            for (k, v) in map.cell_mut(x, y).iter_mut().enumerate() {
                                *v = sig[k] + rng.random_range(-0.2..0.2);
                            }
                        }
                    }
                    targets.push((id, b));
                }
                TrainingFrame { map, targets }
            })
            .collect();
        FrameSet::new(frames)
    }

    fn small_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            n_k: 4,
            dims: ProjectionDims {
                input: 4,
                hidden1: 16,
                hidden2: 16,
                pre: 8,
                output: 8,
            },
            epochs: 4,
            batch_size: 4,
            learning_rate: 3e-3,
            tau: 0.2,
            seed,
            offset_init_std: 0.05,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_leave_parameters_unchanged() {
        let data = separable_frames(0, 8);
        let cfg = TrainConfig {
            epochs: 0,
            ..small_cfg(3)
        };
        let out = train(&data, &cfg).unwrap();
        assert_eq!(out.model, initial_model::<f64>(&cfg).unwrap());
        assert!(out.history.is_empty());
    }

    #[test]
    fn history_rows_and_determinism() {
        let data = separable_frames(1, 10);
        let cfg = TrainConfig {
            epochs: 2,
            ..small_cfg(5)
        };
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        assert_eq!(a.history.len(), 2 * batch_windows(10, 4).len());
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn loss_decreases_on_separable_data() {
        let mut wins = 0;
        for seed in 0..10 {
            let data = separable_frames(100 + seed, 16);
            let cfg = small_cfg(seed);
            let out = train(&data, &cfg).unwrap();
            let first = out.epoch_mean_tcl(0).unwrap();
            let last = out.epoch_mean_tcl(cfg.epochs - 1).unwrap();
            if last < first {
                wins += 1;
            }
        }
        assert!(wins >= 9, "loss fell in only {wins}/10 seeds");
    }

    #[test]
    fn bank_resets_each_epoch() {
        let data = separable_frames(2, 8);
        let cfg = TrainConfig {
            epochs: 3,
            ..small_cfg(1)
        };
        let mut counts_seen = Vec::new();
        train_with(&data, &cfg, &ConstantDetectionLoss(0.0), |bank| {
            counts_seen.push(bank.update_counts().iter().copied().max().unwrap());
        })
        .unwrap();
        // Two batches per epoch: counts go 1, 2 then restart at 1.
        assert_eq!(counts_seen, vec![1, 2, 1, 2, 1, 2]);
    }

    #[test]
    fn centers_ignore_the_optimizer() {
        // With a zero learning rate the centers follow the same momentum path.
        let data = separable_frames(3, 8);
        let frozen = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            ..small_cfg(2)
        };
        let a = train(&data, &frozen).unwrap();
        let b = train(&data, &frozen).unwrap();
        assert_eq!(a.bank, b.bank);
        assert_eq!(a.model, initial_model::<f64>(&frozen).unwrap());
    }

    #[test]
    fn detection_stub_drives_eta1() {
        let data = separable_frames(4, 8);
        let cfg = TrainConfig {
            epochs: 2,
            detection_loss: 5.0,
            learning_rate: 1e-2,
            ..small_cfg(0)
        };
        let out = train(&data, &cfg).unwrap();
        assert!(out.history.iter().all(|r| r.l_det == 5.0));
        // ∂L/∂η1 = ½(1 − 5e^{−η1}) < 0 near zero, so η1 rises.
        assert!(out.weights.eta1 > 0.0);
    }

    #[test]
    fn rejects_bad_config() {
        let data = separable_frames(0, 4);
        let cfg = TrainConfig {
            tau: 0.0,
            ..small_cfg(0)
        };
        assert!(train(&data, &cfg).is_err());
    }
}
