//! Dense channel-major 3D tensors (`c × h × w`), the storage type for
//! images, latents, raymaps and network activations.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![S::zero(); c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data length mismatch");
        Tensor { c, h, w, data }
    }

    pub fn full(c: usize, h: usize, w: usize, value: S) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![value; c * h * w],
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.h + y) * self.w + x
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> S {
        self.data[self.idx(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: S) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }

    #[inline]
    pub fn add_at(&mut self, c: usize, y: usize, x: usize, v: S) {
        let i = self.idx(c, y, x);
        self.data[i] += v;
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[S] {
        let start = c * self.h * self.w;
        &self.data[start..start + self.h * self.w]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [S] {
        let start = c * self.h * self.w;
        let len = self.h * self.w;
        &mut self.data[start..start + len]
    }

    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn fill(&mut self, v: S) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map<F: Fn(S) -> S>(&self, f: F) -> Self {
        Tensor {
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scaled(&self, s: S) -> Self {
        self.map(|x| x * s)
    }

    /// `self += alpha * other`, elementwise.
    pub fn add_scaled(&mut self, other: &Tensor<S>, alpha: S) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += alpha * *b;
        }
    }

    pub fn add(&self, other: &Tensor<S>) -> Self {
        assert_eq!(self.shape(), other.shape());
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a + b)
            .collect();
        Tensor {
            c: self.c,
            h: self.h,
            w: self.w,
            data,
        }
    }

    pub fn sub(&self, other: &Tensor<S>) -> Self {
        assert_eq!(self.shape(), other.shape());
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a - b)
            .collect();
        Tensor {
            c: self.c,
            h: self.h,
            w: self.w,
            data,
        }
    }

    /// `alpha * self + beta * other`, elementwise.
    pub fn lin_comb(&self, alpha: S, other: &Tensor<S>, beta: S) -> Self {
        assert_eq!(self.shape(), other.shape());
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| alpha * a + beta * b)
            .collect();
        Tensor {
            c: self.c,
            h: self.h,
            w: self.w,
            data,
        }
    }

    pub fn mse(&self, other: &Tensor<S>) -> S {
        assert_eq!(self.shape(), other.shape());
        let sum: S = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        sum / S::of_usize(self.data.len())
    }

    pub fn max_abs_diff(&self, other: &Tensor<S>) -> S {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| (a - b).abs())
            .fold(S::zero(), |m, d| m.max(d))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor<S>]) -> Self {
        assert!(!parts.is_empty());
        let (h, w) = (parts[0].h, parts[0].w);
        let mut data = Vec::new();
        let mut c = 0;
        for p in parts {
            assert_eq!((p.h, p.w), (h, w), "spatial shape mismatch in concat");
            data.extend_from_slice(&p.data);
            c += p.c;
        }
        Tensor { c, h, w, data }
    }

    /// Extracts channels `[start, start+count)` into a new tensor.
    pub fn slice_channels(&self, start: usize, count: usize) -> Self {
        assert!(start + count <= self.c);
        let plane = self.h * self.w;
        Tensor {
            c: count,
            h: self.h,
            w: self.w,
            data: self.data[start * plane..(start + count) * plane].to_vec(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.lossy_f64()).collect()
    }

    pub fn from_f64_vec(c: usize, h: usize, w: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), c * h * w);
        Tensor {
            c,
            h,
            w,
            data: data.iter().map(|&v| S::of(v)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_channel_major() {
        let mut t = Tensor::<f64>::zeros(2, 3, 4);
        t.set(1, 2, 3, 5.0);
        assert_eq!(t.as_slice()[(1 * 3 + 2) * 4 + 3], 5.0);
        assert_eq!(t.at(1, 2, 3), 5.0);
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let a = Tensor::<f32>::full(2, 2, 2, 1.0);
        let b = Tensor::<f32>::full(3, 2, 2, 2.0);
        let cat = Tensor::concat_channels(&[&a, &b]);
        assert_eq!(cat.shape(), (5, 2, 2));
        assert_eq!(cat.slice_channels(0, 2), a);
        assert_eq!(cat.slice_channels(2, 3), b);
    }

    #[test]
    fn mse_of_constant_offset() {
        let a = Tensor::<f64>::zeros(1, 4, 4);
        let b = Tensor::<f64>::full(1, 4, 4, 0.5);
        assert!((a.mse(&b) - 0.25).abs() < 1e-15);
    }
}
