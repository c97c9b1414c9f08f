//! Axis-aligned boxes in MOTChallenge `(left, top, width, height)` layout.

use crate::scalar::Scalar;
use crate::vector::Embedding;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoundingBox<T> {
    pub left: T,
    pub top: T,
    pub width: T,
    pub height: T,
}

impl<T: Scalar> BoundingBox<T> {
    /// Negative extents are clamped to zero.
    pub fn new(left: T, top: T, width: T, height: T) -> Self {
        Self {
            left,
            top,
            width: width.max(T::zero()),
            height: height.max(T::zero()),
        }
    }

    pub fn from_center(cx: T, cy: T, width: T, height: T) -> Self {
        Self::new(cx - width * T::half(), cy - height * T::half(), width, height)
    }

    #[inline]
    pub fn right(&self) -> T {
        self.left + self.width
    }

    #[inline]
    pub fn bottom(&self) -> T {
        self.top + self.height
    }

    #[inline]
    pub fn area(&self) -> T {
        self.width * self.height
    }

    #[inline]
    pub fn center(&self) -> (T, T) {
        (
            self.left + self.width * T::half(),
            self.top + self.height * T::half(),
        )
    }

    /// Intersection with `other`, or `None` when they do not overlap.
    pub fn intersection(&self, other: &Self) -> Option<Self> {
        let l = self.left.max(other.left);
        let t = self.top.max(other.top);
        let r = self.right().min(other.right());
        let b = self.bottom().min(other.bottom());
        if r > l && b > t {
            Some(Self::new(l, t, r - l, b - t))
        } else {
            None
        }
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self::new(
            self.left * factor,
            self.top * factor,
            self.width * factor,
            self.height * factor,
        )
    }

    pub fn translated(&self, dx: T, dy: T) -> Self {
        Self::new(self.left + dx, self.top + dy, self.width, self.height)
    }

    pub fn cast<U: Scalar>(&self) -> BoundingBox<U> {
        BoundingBox::new(
            U::lit(self.left.as_f64()),
            U::lit(self.top.as_f64()),
            U::lit(self.width.as_f64()),
            U::lit(self.height.as_f64()),
        )
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou<T: Scalar>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> T {
    let inter = a.intersection(b).map_or(T::zero(), |i| i.area());
    let union = a.area() + b.area() - inter;
    if union <= T::zero() {
        T::zero()
    } else {
        inter / union
    }
}

/// One detected target in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection<T> {
    pub frame: u32,
    pub bbox: BoundingBox<T>,
    pub confidence: T,
    pub embedding: Embedding<T>,
    /// Ground-truth identity; only the simulator fills this in.
    pub gt_identity: Option<u32>,
}

impl<T: Scalar> Detection<T> {
    pub fn new(frame: u32, bbox: BoundingBox<T>, confidence: T, embedding: Embedding<T>) -> Self {
        Self {
            frame,
            bbox,
            confidence: confidence.max(T::zero()).min(T::one()),
            embedding,
            gt_identity: None,
        }
    }

    pub fn with_identity(mut self, id: u32) -> Self {
        self.gt_identity = Some(id);
        self
    }
}
