//! Minimal double-precision building blocks: flat parameter storage with a paired
//! gradient buffer, dense layers addressed by offset, and Adam.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Flat parameter vector plus a same-length gradient accumulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub values: Vec<f64>,
    #[serde(skip)]
    pub grads: Vec<f64>,
}

impl ParamSet {
    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len], grads: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.grads.resize(self.values.len(), 0.0);
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// `y = W x + b` with `W` stored row-major (`out x inp`) at `offset`, followed by `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub offset: usize,
    pub inp: usize,
    pub out: usize,
}

impl Dense {
    /// Reserves space for a layer at the end of a layout of length `*cursor`.
    pub fn alloc(cursor: &mut usize, inp: usize, out: usize) -> Self {
        let layer = Self { offset: *cursor, inp, out };
        *cursor += layer.size();
        layer
    }

    pub fn size(&self) -> usize {
        self.out * (self.inp + 1)
    }

    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.out * self.inp
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.out * self.inp;
        start..start + self.out
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, values: &mut [f64], rng: &mut R) {
        let limit = (6.0 / (self.inp + self.out) as f64).sqrt();
        for w in &mut values[self.weight_range()] {
            *w = rng.random_range(-limit..limit);
        }
        values[self.bias_range()].fill(0.0);
    }

    pub fn forward(&self, params: &[f64], x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inp);
        debug_assert_eq!(y.len(), self.out);
        let w = &params[self.weight_range()];
        let b = &params[self.bias_range()];
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &w[o * self.inp..(o + 1) * self.inp];
            *yo = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients for upstream `dy`; adds `W^T dy` into `dx` when given.
    pub fn backward(&self, params: &[f64], grads: &mut [f64], x: &[f64], dy: &[f64], dx: Option<&mut [f64]>) {
        let (wr, br) = (self.weight_range(), self.bias_range());
        {
            let gw = &mut grads[wr.clone()];
            for (o, &d) in dy.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (g, xi) in gw[o * self.inp..(o + 1) * self.inp].iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
        }
        for (g, d) in grads[br].iter_mut().zip(dy) {
            *g += d;
        }
        if let Some(dx) = dx {
            let w = &params[wr];
            for (o, &d) in dy.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (dxi, wi) in dx.iter_mut().zip(&w[o * self.inp..(o + 1) * self.inp]) {
                    *dxi += d * wi;
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn tanh_inplace(v: &mut [f64]) {
    for x in v {
        *x = x.tanh();
    }
}

/// Multiplies `d` by `1 - y^2` where `y = tanh(.)`.
pub fn tanh_backward(y: &[f64], d: &mut [f64]) {
    for (di, yi) in d.iter_mut().zip(y) {
        *di *= 1.0 - yi * yi;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.values.len() {
            let g = params.grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params.values[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_forward_backward_by_hand() {
        let mut cursor = 0;
        let layer = Dense::alloc(&mut cursor, 2, 1);
        assert_eq!(cursor, 3);
        let params = vec![2.0, -1.0, 0.5];
        let mut y = [0.0];
        layer.forward(&params, &[3.0, 4.0], &mut y);
        assert_eq!(y[0], 2.5);
        let mut grads = vec![0.0; 3];
        let mut dx = [0.0, 0.0];
        layer.backward(&params, &mut grads, &[3.0, 4.0], &[1.0], Some(&mut dx));
        assert_eq!(grads, vec![3.0, 4.0, 1.0]);
        assert_eq!(dx, [2.0, -1.0]);
    }

    #[test]
    fn adam_ignores_zero_gradient() {
        let mut p = ParamSet { values: vec![1.0, -2.0], grads: vec![0.0, 0.0] };
        let mut opt = Adam::new(0.1, 2);
        opt.step(&mut p);
        assert_eq!(p.values, vec![1.0, -2.0]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
