use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `height × width × channels` grid, channel-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![T::zero(); height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch {
                expected: height * width * channels,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("feature map contains non-finite values".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Channel vector at integer cell `(x, y)`. Panics when out of range.
    #[inline]
    pub fn cell(&self, x: usize, y: usize) -> &[T] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    #[inline]
    pub fn cell_mut(&mut self, x: usize, y: usize) -> &mut [T] {
        let start = (y * self.width + x) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    /// Exact lookup of the vector stored at grid coordinate `(x, y)`.
    pub fn sample_center_feature(&self, x: usize, y: usize) -> Result<Vec<T>> {
        if x >= self.width || y >= self.height {
            return Err(self.out_of_bounds(T::lit(x as f64), T::lit(y as f64)));
        }
        Ok(self.cell(x, y).to_vec())
    }

    /// Bilinear interpolation at continuous `(x, y)` in `[0, W-1] × [0, H-1]`.
    pub fn bilinear_sample(&self, x: T, y: T) -> Result<Vec<T>> {
        let stencil = self.stencil(x, y)?;
        Ok(self.interpolate(&stencil))
    }

    fn out_of_bounds(&self, x: T, y: T) -> Error {
        Error::OutOfBounds {
            x: x.as_f64(),
            y: y.as_f64(),
            width: self.width,
            height: self.height,
        }
    }

    pub(crate) fn stencil(&self, x: T, y: T) -> Result<Stencil<T>> {
        let max_x = T::lit(self.width.saturating_sub(1) as f64);
        let max_y = T::lit(self.height.saturating_sub(1) as f64);
        if self.width == 0
            || self.height == 0
            || !(x >= T::zero() && x <= max_x && y >= T::zero() && y <= max_y)
        {
            return Err(self.out_of_bounds(x, y));
        }
        let (x0, wx) = split_axis(x, self.width);
        let (y0, wy) = split_axis(y, self.height);
        Ok(Stencil { x0, y0, wx, wy })
    }

    /// Same as [`stencil`](Self::stencil) for a coordinate given as integer base plus offset.
    pub(crate) fn stencil_from(&self, base: (usize, usize), rel: (T, T)) -> Result<Stencil<T>> {
        let fx = rel.0.floor();
        let fy = rel.1.floor();
        let ix = base.0 as i64 + fx.to_i64().unwrap_or(i64::MIN / 2);
        let iy = base.1 as i64 + fy.to_i64().unwrap_or(i64::MIN / 2);
        let mut wx = rel.0 - fx;
        let mut wy = rel.1 - fy;
        let bad = |i: i64, w: T, n: usize| i < 0 || i as usize >= n || (i as usize == n - 1 && w > T::zero());
        if self.width == 0 || self.height == 0 || bad(ix, wx, self.width) || bad(iy, wy, self.height) {
            return Err(self.out_of_bounds(
                T::lit(base.0 as f64) + rel.0,
                T::lit(base.1 as f64) + rel.1,
            ));
        }
        let mut x0 = ix as usize;
        let mut y0 = iy as usize;
        if x0 == self.width - 1 && self.width > 1 {
            x0 -= 1;
            wx = T::one();
        }
        if y0 == self.height - 1 && self.height > 1 {
            y0 -= 1;
            wy = T::one();
        }
        Ok(Stencil { x0, y0, wx, wy })
    }

    pub(crate) fn interpolate(&self, s: &Stencil<T>) -> Vec<T> {
        let x1 = (s.x0 + 1).min(self.width - 1);
        let y1 = (s.y0 + 1).min(self.height - 1);
        let (a, b, c, d) = (
            self.cell(s.x0, s.y0),
            self.cell(x1, s.y0),
            self.cell(s.x0, y1),
            self.cell(x1, y1),
        );
        let one = T::one();
        (0..self.channels)
            .map(|k| {
                let top = a[k] * (one - s.wx) + b[k] * s.wx;
                let bot = c[k] * (one - s.wx) + d[k] * s.wx;
                top * (one - s.wy) + bot * s.wy
            })
            .collect()
    }

    /// Vector-Jacobian product of the interpolation w.r.t. `(x, y)`.
    pub(crate) fn interpolate_coord_grad(&self, s: &Stencil<T>, upstream: &[T]) -> (T, T) {
        let x1 = (s.x0 + 1).min(self.width - 1);
        let y1 = (s.y0 + 1).min(self.height - 1);
        let (a, b, c, d) = (
            self.cell(s.x0, s.y0),
            self.cell(x1, s.y0),
            self.cell(s.x0, y1),
            self.cell(x1, y1),
        );
        let one = T::one();
        let mut gx = T::zero();
        let mut gy = T::zero();
        for k in 0..self.channels {
            let ddx = (b[k] - a[k]) * (one - s.wy) + (d[k] - c[k]) * s.wy;
            let ddy = (c[k] - a[k]) * (one - s.wx) + (d[k] - b[k]) * s.wx;
            gx += upstream[k] * ddx;
            gy += upstream[k] * ddy;
        }
        (gx, gy)
    }
}

/// Lower-left cell and fractional weights of a bilinear lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Stencil<T> {
    pub x0: usize,
    pub y0: usize,
    pub wx: T,
    pub wy: T,
}

fn split_axis<T: Scalar>(v: T, n: usize) -> (usize, T) {
    let f = v.floor();
    let mut i = f.to_usize().unwrap_or(0);
    let mut w = v - f;
    if i >= n - 1 && n > 1 {
        i = n - 2;
        w = T::one();
    } else if n == 1 {
        i = 0;
        w = T::zero();
    }
    (i, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn crafted() -> FeatureMap<f64> {
        FeatureMap::from_fn(3, 3, 2, |y, x, c| (10 * y + x) as f64 + 0.5 * c as f64)
    }

    #[test]
    fn center_feature_lookup() {
        let m = FeatureMap::from_fn(4, 5, 3, |_, _, c| c as f64 + 1.0);
        assert_eq!(m.sample_center_feature(2, 3).unwrap(), vec![1.0, 2.0, 3.0]);
        let one = FeatureMap::from_vec(1, 1, 2, vec![7.0, -1.0]).unwrap();
        assert_eq!(one.sample_center_feature(0, 0).unwrap(), vec![7.0, -1.0]);
        assert_eq!(crafted().sample_center_feature(1, 2).unwrap(), vec![21.0, 21.5]);
        assert!(matches!(crafted().sample_center_feature(3, 0), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn bilinear_examples() {
        let m = crafted();
        assert_eq!(m.bilinear_sample(1.0, 2.0).unwrap(), vec![21.0, 21.5]);
        assert_eq!(m.bilinear_sample(2.0, 2.0).unwrap(), vec![22.0, 22.5]);
        // Midpoint between (0,0) and (1,0).
        assert_eq!(m.bilinear_sample(0.5, 0.0).unwrap(), vec![0.5, 1.0]);
        let c = FeatureMap::from_fn(4, 4, 2, |_, _, _| 3.25);
        assert_eq!(c.bilinear_sample(1.37, 2.91).unwrap(), vec![3.25, 3.25]);
        assert!(m.bilinear_sample(2.01, 0.0).is_err());
        assert!(m.bilinear_sample(-0.01, 0.0).is_err());
    }

    #[test]
    fn stencil_from_matches_absolute() {
        let m = crafted();
        for &(bx, by, rx, ry) in &[(1usize, 1usize, 0.25, -0.5), (0, 0, 2.0, 2.0), (2, 1, -1.75, 0.0)] {
            let a = m.interpolate(&m.stencil_from((bx, by), (rx, ry)).unwrap());
            let b = m.bilinear_sample(bx as f64 + rx, by as f64 + ry).unwrap();
            assert_eq!(a, b);
        }
        assert!(m.stencil_from((2, 2), (0.5, 0.0)).is_err());
    }

    #[test]
    fn coordinate_gradient_matches_finite_differences() {
        let m = FeatureMap::from_fn(5, 6, 3, |y, x, c| ((x * 7 + y * 3 + c * 5) % 11) as f64 * 0.3);
        let up = [0.4, -1.1, 0.7];
        let (x, y) = (2.3, 1.6);
        let (gx, gy) = m.interpolate_coord_grad(&m.stencil(x, y).unwrap(), &up);
        let f = |x: f64, y: f64| -> f64 {
            m.bilinear_sample(x, y).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        assert!((gx - (f(x + h, y) - f(x - h, y)) / (2.0 * h)).abs() < 1e-7);
        assert!((gy - (f(x, y + h) - f(x, y - h)) / (2.0 * h)).abs() < 1e-7);
    }
}
