//! Dense affine layers with hand-written backward passes.

use rand::Rng;

/// `y = W x + b` with `W` stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    inputs: usize,
    outputs: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weight: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    /// Weights and biases drawn uniformly from `[-1/sqrt(inputs), 1/sqrt(inputs)]`.
    pub fn uniform<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut layer = Self::zeros(inputs, outputs);
        for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
            *w = rng.gen_range(-bound..=bound);
        }
        layer
    }

    pub fn from_parts(inputs: usize, outputs: usize, weight: Vec<f64>, bias: Vec<f64>) -> Option<Self> {
        (weight.len() == inputs * outputs && bias.len() == outputs).then_some(Self { inputs, outputs, weight, bias })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight_mut(&mut self) -> &mut [f64] {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        debug_assert_eq!(out.len(), self.outputs);
        for (o, (row, b)) in out.iter_mut().zip(self.weight.chunks_exact(self.inputs).zip(&self.bias)) {
            *o = b + dot(row, x);
        }
    }

    /// Accumulates `W^T g` into `grad_in`.
    pub fn backward_input(&self, grad_out: &[f64], grad_in: &mut [f64]) {
        for (row, g) in self.weight.chunks_exact(self.inputs).zip(grad_out) {
            if *g != 0.0 {
                for (gi, w) in grad_in.iter_mut().zip(row) {
                    *gi += g * w;
                }
            }
        }
    }

    /// Accumulates the parameter gradient of this layer (evaluated at input `x`) into `self`.
    pub fn accumulate(&mut self, x: &[f64], grad_out: &[f64]) {
        for ((row, b), g) in self.weight.chunks_exact_mut(self.inputs).zip(&mut self.bias).zip(grad_out) {
            if *g != 0.0 {
                *b += g;
                for (w, xi) in row.iter_mut().zip(x) {
                    *w += g * xi;
                }
            }
        }
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &Linear) {
        debug_assert_eq!((self.inputs, self.outputs), (other.inputs, other.outputs));
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += scale * b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += scale * b;
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Parameters in order: weights row-major, then bias.
    pub fn parameters(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(&self.bias)
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_and_backward_small() {
        let layer = Linear::from_parts(2, 2, vec![1.0, 2.0, 3.0, 4.0], vec![0.5, -0.5]).unwrap();
        let mut out = [0.0; 2];
        layer.forward(&[1.0, -1.0], &mut out);
        assert_eq!(out, [-0.5, -1.5]);

        let mut gin = [0.0; 2];
        layer.backward_input(&[1.0, 1.0], &mut gin);
        assert_eq!(gin, [4.0, 6.0]);

        let mut grad = Linear::zeros(2, 2);
        grad.accumulate(&[1.0, -1.0], &[2.0, 0.0]);
        assert_eq!(grad.weight(), [2.0, -2.0, 0.0, 0.0]);
        assert_eq!(grad.bias(), [2.0, 0.0]);
    }
}
