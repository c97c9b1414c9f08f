//! Learnable view sampling end to end: center lookup, offset regression,
//! clipping, bilinear sampling and projection, with the matching backward pass.

use rand::Rng;

use crate::embed::feature_map::{FeatureMap, Stencil};
use crate::embed::offsets::{clip_keypoints, Keypoint, OffsetHead, SamplingPattern};
use crate::embed::projection::{ProjectionDims, ProjectionHead, ProjectionTrace};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::scalar::Scalar;
use crate::vector::{l2_normalize, Embedding};

/// Offset head plus projection head: every trainable parameter of the embedding branch.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel<T> {
    pub offsets: OffsetHead<T>,
    pub projection: ProjectionHead<T>,
}

impl<T: Scalar> EmbeddingModel<T> {
    pub fn random<R: Rng>(
        n_k: usize,
        dims: ProjectionDims,
        pattern: SamplingPattern,
        offset_init_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let offsets = OffsetHead::random(n_k, dims.input, pattern, offset_init_std, rng)?;
        let projection = ProjectionHead::random(dims, rng);
        Ok(Self {
            offsets,
            projection,
        })
    }

    pub fn zeros_like(&self) -> Gradients<T> {
        Gradients {
            offsets: vec![T::zero(); self.offsets.weight.len()],
            projection: ProjectionHead::zeros(self.projection.dims()),
        }
    }

    /// `(offset W, W1, b1, …, W4, b4)`.
    pub fn parameters(&self) -> Vec<&[T]> {
        let mut out = vec![self.offsets.weight.as_slice()];
        out.extend(self.projection.parameters());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = vec![self.offsets.weight.as_mut_slice()];
        out.extend(self.projection.parameters_mut());
        out
    }

    pub fn parameter_names() -> [&'static str; 9] {
        [
            "offset.weight",
            "fc1.weight",
            "fc1.bias",
            "fc2.weight",
            "fc2.bias",
            "fc3.weight",
            "fc3.bias",
            "fc4.weight",
            "fc4.bias",
        ]
    }
}

/// Gradient buffers shaped like [`EmbeddingModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub offsets: Vec<T>,
    pub projection: ProjectionHead<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out = vec![self.offsets.as_slice()];
        out.extend(self.projection.parameters());
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = vec![self.offsets.as_mut_slice()];
        out.extend(self.projection.parameters_mut());
        out
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|&v| v == T::zero()))
    }
}

/// Forward record of one target, consumed by [`backward_views`].
#[derive(Debug, Clone)]
pub struct ViewsTape<T> {
    center_feature: Vec<T>,
    keypoints: Vec<Keypoint<T>>,
    stencils: Vec<Stencil<T>>,
    traces: Vec<ProjectionTrace<T>>,
    map_dims: (usize, usize, usize),
    consumed: bool,
}

impl<T: Scalar> ViewsTape<T> {
    pub fn keypoints(&self) -> &[Keypoint<T>] {
        &self.keypoints
    }

    pub fn center_feature(&self) -> &[T] {
        &self.center_feature
    }

    /// Post-normalization activations of the third layer, one per view.
    pub fn traces(&self) -> &[ProjectionTrace<T>] {
        &self.traces
    }
}

/// `box ∩ [0, W-1] × [0, H-1]`, the region keypoints are clipped to.
fn sampling_region<T: Scalar>(f: &FeatureMap<T>, b: &BoundingBox<T>) -> Result<BoundingBox<T>> {
    let max_x = T::lit((f.width().max(1) - 1) as f64);
    let max_y = T::lit((f.height().max(1) - 1) as f64);
    let l = b.left.max(T::zero());
    let t = b.top.max(T::zero());
    let r = b.right().min(max_x);
    let btm = b.bottom().min(max_y);
    if f.width() == 0 || f.height() == 0 || r < l || btm < t {
        let (cx, cy) = b.center();
        return Err(Error::OutOfBounds {
            x: cx.as_f64(),
            y: cy.as_f64(),
            width: f.width(),
            height: f.height(),
        });
    }
    Ok(BoundingBox::new(l, t, r - l, btm - t))
}

/// Integer grid cell nearest the box center, kept inside the sampling region.
fn center_cell<T: Scalar>(region: &BoundingBox<T>, b: &BoundingBox<T>) -> (usize, usize) {
    let (cx, cy) = b.center();
    let pick = |c: T, lo: T, hi: T| -> usize {
        let mut v = c.round();
        if v < lo {
            v = lo.ceil();
        }
        if v > hi {
            v = hi.floor();
        }
        // A region narrower than one cell may contain no integer; fall back to its floor.
        if v < lo {
            v = lo.floor();
        }
        v.max(T::zero()).to_usize().unwrap_or(0)
    };
    (
        pick(cx, region.left, region.right()),
        pick(cy, region.top, region.bottom()),
    )
}

/// Produces `N_k` appearance vectors for the target in `bbox` (feature-map coordinates).
pub fn forward_views<T: Scalar>(
    f: &FeatureMap<T>,
    bbox: &BoundingBox<T>,
    model: &EmbeddingModel<T>,
) -> Result<(Vec<Embedding<T>>, ViewsTape<T>)> {
    if f.channels() != model.offsets.channels() {
        return Err(Error::DimensionMismatch {
            expected: model.offsets.channels(),
            got: f.channels(),
        });
    }
    let region = sampling_region(f, bbox)?;
    let (zx, zy) = center_cell(&region, bbox);
    let r = f.sample_center_feature(zx, zy)?;
    let offsets = model.offsets.regress_offsets(&r)?;

    // Clip relative to the integer center so that integer translations are exact.
    let base = [T::lit(zx as f64), T::lit(zy as f64)];
    let rel_region = BoundingBox::new(
        region.left - base[0],
        region.top - base[1],
        region.width,
        region.height,
    );
    let rel = clip_keypoints([T::zero(); 2], &offsets, &rel_region);

    let mut views = Vec::with_capacity(rel.len());
    let mut stencils = Vec::with_capacity(rel.len());
    let mut traces = Vec::with_capacity(rel.len());
    let mut keypoints = Vec::with_capacity(rel.len());
    for k in rel {
        let stencil = f.stencil_from((zx, zy), (k.x, k.y))?;
        let sampled = f.interpolate(&stencil);
        let trace = model.projection.forward_trace(&sampled)?;
        views.push(Embedding(trace.output.clone()));
        stencils.push(stencil);
        traces.push(trace);
        keypoints.push(Keypoint {
            x: base[0] + k.x,
            y: base[1] + k.y,
            clamped: k.clamped,
        });
    }
    Ok((
        views,
        ViewsTape {
            center_feature: r,
            keypoints,
            stencils,
            traces,
            map_dims: (f.height(), f.width(), f.channels()),
            consumed: false,
        },
    ))
}

/// Back-propagates `dL/d view_i` into parameter gradients. A tape can be used once.
pub fn backward_views<T: Scalar>(
    f: &FeatureMap<T>,
    tape: &mut ViewsTape<T>,
    upstream: &[Vec<T>],
    model: &EmbeddingModel<T>,
) -> Result<Gradients<T>> {
    if tape.consumed {
        return Err(Error::TapeConsumed);
    }
    if tape.map_dims != (f.height(), f.width(), f.channels())
        || upstream.len() != tape.traces.len()
        || tape.traces.len() != model.offsets.n_k()
    {
        return Err(Error::TapeMismatch);
    }
    tape.consumed = true;

    let mut grads = model.zeros_like();
    let c = model.offsets.channels();
    for (i, up) in upstream.iter().enumerate() {
        if up.len() != model.projection.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.projection.output_dim(),
                got: up.len(),
            });
        }
        let g_sample = model
            .projection
            .backward(&tape.traces[i], up, &mut grads.projection);
        let (gx, gy) = f.interpolate_coord_grad(&tape.stencils[i], &g_sample);
        let kp = &tape.keypoints[i];
        let g_off = [
            if kp.clamped[0] { T::zero() } else { gx },
            if kp.clamped[1] { T::zero() } else { gy },
        ];
        for (axis, &g) in g_off.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            let row = (2 * i + axis) * c;
            for (w, &r) in grads.offsets[row..row + c].iter_mut().zip(&tape.center_feature) {
                *w += g * r;
            }
        }
    }
    Ok(grads)
}

/// Inference embedding: the ℓ2-normalized concatenation of the normalized views.
pub fn embed_target<T: Scalar>(
    f: &FeatureMap<T>,
    bbox: &BoundingBox<T>,
    model: &EmbeddingModel<T>,
) -> Result<Embedding<T>> {
    let (views, _) = forward_views(f, bbox, model)?;
    let concat: Vec<T> = views
        .iter()
        .flat_map(|v| l2_normalize(v).vector.0)
        .collect();
    Ok(l2_normalize(&concat).vector)
}
