use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Fully connected network with tanh hidden layers and a linear output layer.
///
/// Parameter layout, layer by layer: weights row-major `(out, in)`, then biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    /// `layers[0]` is the input, `layers[l]` the post-activation of layer `l`.
    layers: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.layers.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "network needs at least two nonzero layer sizes, got {sizes:?}"
            )));
        }
        Ok(Self { sizes })
    }

    /// `[input, 10, 10, 10, output]`.
    pub fn three_by_ten(input: usize, output: usize) -> Self {
        Self {
            sizes: vec![input, 10, 10, 10, output],
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    /// Uniform Xavier weights in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(&self, rng: &mut Rng) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for w in self.sizes.windows(2) {
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            p.extend((0..w[0] * w[1]).map(|_| rng.random_range(-bound..=bound)));
            p.extend(std::iter::repeat_n(0.0, w[1]));
        }
        p
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Vec<f64> {
        let mut cache = MlpCache::default();
        self.forward_cached(params, input, &mut cache);
        cache.layers.pop().unwrap_or_default()
    }

    pub fn forward_cached(&self, params: &[f64], input: &[f64], cache: &mut MlpCache) {
        debug_assert_eq!(params.len(), self.n_params());
        debug_assert_eq!(input.len(), self.input_dim());
        let n_layers = self.sizes.len() - 1;
        cache.layers.resize(self.sizes.len(), Vec::new());
        cache.layers[0].clear();
        cache.layers[0].extend_from_slice(input);
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, rest) = params[off..].split_at(n_in * n_out);
            let b = &rest[..n_out];
            off += n_out * (n_in + 1);
            let (prev, next) = cache.layers.split_at_mut(l + 1);
            let x = &prev[l];
            let y = &mut next[0];
            y.clear();
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let z = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                y.push(if l + 1 < n_layers { z.tanh() } else { z });
            }
        }
    }

    /// Reverse pass: `grad_params += J_params' grad_out`; returns `J_input' grad_out`.
    pub fn backward(&self, params: &[f64], cache: &MlpCache, grad_out: &[f64], grad_params: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad_params.len(), self.n_params());
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[1] * (w[0] + 1);
        }
        // delta holds d loss / d pre-activation of the current layer
        let mut delta: Vec<f64> = grad_out.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 < n_layers {
                for (d, y) in delta.iter_mut().zip(&cache.layers[l + 1]) {
                    *d *= 1.0 - y * y;
                }
            }
            let o = offsets[l];
            let x = &cache.layers[l];
            let w = &params[o..o + n_in * n_out];
            {
                let (gw, gb) = grad_params[o..o + n_out * (n_in + 1)].split_at_mut(n_in * n_out);
                for (j, d) in delta.iter().enumerate() {
                    gb[j] += d;
                    for (g, xi) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            let mut prev = vec![0.0; n_in];
            for (j, d) in delta.iter().enumerate() {
                for (p, wi) in prev.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                    *p += d * wi;
                }
            }
            delta = prev;
        }
        delta
    }
}
