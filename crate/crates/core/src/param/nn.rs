//! Neural-network parametrisations with time input.

use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpCache};
use super::{Actor, ActorCoefficients, Critic, CriticPoint, LqShell};
use crate::rng::Rng;

/// Slice of a flat parameter vector owned by one network.
#[derive(Debug, Clone, PartialEq)]
struct Block {
    net: Mlp,
    offset: usize,
}

impl Block {
    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.net.n_params()
    }

    fn forward(&self, params: &[f64], input: &[f64]) -> Vec<f64> {
        self.net.forward(&params[self.range()], input)
    }

    fn backprop(&self, params: &[f64], input: &[f64], grad_out: &[f64], out: &mut [f64]) {
        let mut cache = MlpCache::default();
        let p = &params[self.range()];
        self.net.forward_cached(p, input, &mut cache);
        self.net.backward(p, &cache, grad_out, &mut out[self.range()]);
    }
}

fn layout(nets: Vec<Mlp>, rng: &mut Rng) -> (Vec<Block>, Vec<f64>) {
    let mut blocks = Vec::with_capacity(nets.len());
    let mut params = Vec::new();
    for net in nets {
        let offset = params.len();
        params.extend(net.init(rng));
        blocks.push(Block { net, offset });
    }
    (blocks, params)
}

/// Symmetric part of a row-major square matrix.
fn symmetrise(a: &[f64], d: usize) -> Vec<f64> {
    let mut s = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            s[i * d + j] = 0.5 * (a[i * d + j] + a[j * d + i]);
        }
    }
    s
}

/// LQ-form critic whose `K(t)` and `R(t)` (and, unless centred, `Lambda(t)`, `Y(t)`)
/// are separate `[1, 10, 10, 10, out]` tanh networks of time.
///
/// Layout: `K` net, `R` net, then the `Lambda` and `Y` nets when present.
/// The `K` and `Lambda` outputs are symmetrised.
#[derive(Debug, Clone, PartialEq)]
pub struct NnShellCritic {
    dim: usize,
    blocks: Vec<Block>,
    params: Vec<f64>,
}

impl NnShellCritic {
    pub fn new(dim: usize, centred: bool, rng: &mut Rng) -> Self {
        let mut nets = vec![Mlp::three_by_ten(1, dim * dim), Mlp::three_by_ten(1, 1)];
        if !centred {
            nets.push(Mlp::three_by_ten(1, dim * dim));
            nets.push(Mlp::three_by_ten(1, dim));
        }
        let (blocks, params) = layout(nets, rng);
        Self { dim, blocks, params }
    }

    pub fn is_centred(&self) -> bool {
        self.blocks.len() == 2
    }
}

impl Critic for NnShellCritic {
    fn kind(&self) -> &'static str {
        "mlp"
    }
    fn state_dim(&self) -> usize {
        self.dim
    }
    fn params(&self) -> &[f64] {
        &self.params
    }
    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
    fn box_clone(&self) -> Box<dyn Critic> {
        Box::new(self.clone())
    }

    fn shell(&self, t: f64, _lambda: f64) -> Option<LqShell> {
        let d = self.dim;
        let input = [t];
        let mut s = LqShell::zeros(d);
        s.k = symmetrise(&self.blocks[0].forward(&self.params, &input), d);
        s.r = self.blocks[1].forward(&self.params, &input)[0];
        if !self.is_centred() {
            s.lambda = symmetrise(&self.blocks[2].forward(&self.params, &input), d);
            s.y = self.blocks[3].forward(&self.params, &input);
        }
        Some(s)
    }

    fn shell_backprop(&self, t: f64, _lambda: f64, cot: &LqShell, out: &mut [f64]) {
        let d = self.dim;
        let input = [t];
        // the symmetrisation is self-adjoint
        self.blocks[0].backprop(&self.params, &input, &symmetrise(&cot.k, d), out);
        self.blocks[1].backprop(&self.params, &input, &[cot.r], out);
        if !self.is_centred() {
            self.blocks[2].backprop(&self.params, &input, &symmetrise(&cot.lambda, d), out);
            self.blocks[3].backprop(&self.params, &input, &cot.y, out);
        }
    }
}

/// How an [`NnActor`] produces the constant part `phi3` of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phi3Mode {
    /// `phi3 = 0`.
    Zero,
    /// A time-independent parameter vector.
    Constant,
    /// A network of time.
    Network,
}

/// Gaussian actor whose feedback gains are `[1, 10, 10, 10, m d]` tanh networks of time.
///
/// Centred actors use one gain `G(t)` with `phi1 = G`, `phi2 = -G`; otherwise
/// `phi2` has its own network. Layout: `phi1` net, optional `phi2` net, then the
/// `phi3` parameters or net.
#[derive(Debug, Clone, PartialEq)]
pub struct NnActor {
    state_dim: usize,
    action_dim: usize,
    phi1: Block,
    phi2: Option<Block>,
    phi3: Phi3Mode,
    phi3_block: Option<Block>,
    phi3_offset: usize,
    variance_factor: f64,
    params: Vec<f64>,
}

impl NnActor {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        centred: bool,
        phi3: Phi3Mode,
        variance_factor: f64,
        rng: &mut Rng,
    ) -> Self {
        let md = state_dim * action_dim;
        let mut nets = vec![Mlp::three_by_ten(1, md)];
        if !centred {
            nets.push(Mlp::three_by_ten(1, md));
        }
        if phi3 == Phi3Mode::Network {
            nets.push(Mlp::three_by_ten(1, action_dim));
        }
        let (mut blocks, mut params) = layout(nets, rng);
        let phi3_block = (phi3 == Phi3Mode::Network).then(|| blocks.pop().unwrap());
        let phi3_offset = params.len();
        if phi3 == Phi3Mode::Constant {
            params.extend(std::iter::repeat_n(0.0, action_dim));
        }
        let phi2 = (!centred).then(|| blocks.pop().unwrap());
        let phi1 = blocks.pop().unwrap();
        Self {
            state_dim,
            action_dim,
            phi1,
            phi2,
            phi3,
            phi3_block,
            phi3_offset,
            variance_factor,
            params,
        }
    }
}

impl Actor for NnActor {
    fn kind(&self) -> &'static str {
        "mlp"
    }
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn action_dim(&self) -> usize {
        self.action_dim
    }
    fn params(&self) -> &[f64] {
        &self.params
    }
    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
    fn box_clone(&self) -> Box<dyn Actor> {
        Box::new(self.clone())
    }
    fn variance_factor(&self) -> f64 {
        self.variance_factor
    }

    fn coefficients(&self, t: f64) -> ActorCoefficients {
        let input = [t];
        let phi1 = self.phi1.forward(&self.params, &input);
        let phi2 = match &self.phi2 {
            Some(b) => b.forward(&self.params, &input),
            None => phi1.iter().map(|v| -v).collect(),
        };
        let phi3 = match self.phi3 {
            Phi3Mode::Zero => vec![0.0; self.action_dim],
            Phi3Mode::Constant => self.params[self.phi3_offset..self.phi3_offset + self.action_dim].to_vec(),
            Phi3Mode::Network => self.phi3_block.as_ref().unwrap().forward(&self.params, &input),
        };
        ActorCoefficients {
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            phi1,
            phi2,
            phi3,
        }
    }

    fn backprop(&self, t: f64, cot: &ActorCoefficients, out: &mut [f64]) {
        let input = [t];
        match &self.phi2 {
            Some(b) => {
                self.phi1.backprop(&self.params, &input, &cot.phi1, out);
                b.backprop(&self.params, &input, &cot.phi2, out);
            }
            None => {
                let g: Vec<f64> = cot.phi1.iter().zip(&cot.phi2).map(|(a, b)| a - b).collect();
                self.phi1.backprop(&self.params, &input, &g, out);
            }
        }
        match self.phi3 {
            Phi3Mode::Zero => {}
            Phi3Mode::Constant => {
                for (o, g) in out[self.phi3_offset..].iter_mut().zip(&cot.phi3) {
                    *o += g;
                }
            }
            Phi3Mode::Network => {
                self.phi3_block
                    .as_ref()
                    .unwrap()
                    .backprop(&self.params, &input, &cot.phi3, out);
            }
        }
    }
}

/// Unstructured critic: one `[1 + 2d, 10, 10, 10, 1]` network of `(t, x, mubar)`.
/// Has no LQ form, so it cannot be combined with the mean-field correction.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeMlpCritic {
    dim: usize,
    net: Mlp,
    params: Vec<f64>,
}

impl FreeMlpCritic {
    pub fn new(dim: usize, rng: &mut Rng) -> Self {
        let net = Mlp::three_by_ten(1 + 2 * dim, 1);
        let params = net.init(rng);
        Self { dim, net, params }
    }

    fn input(t: f64, x: &[f64], mu_bar: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + x.len() + mu_bar.len());
        v.push(t);
        v.extend_from_slice(x);
        v.extend_from_slice(mu_bar);
        v
    }
}

impl Critic for FreeMlpCritic {
    fn kind(&self) -> &'static str {
        "free_mlp"
    }
    fn state_dim(&self) -> usize {
        self.dim
    }
    fn params(&self) -> &[f64] {
        &self.params
    }
    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
    fn box_clone(&self) -> Box<dyn Critic> {
        Box::new(self.clone())
    }

    fn shell(&self, _t: f64, _lambda: f64) -> Option<LqShell> {
        None
    }

    fn value(&self, t: f64, x: &[f64], mu_bar: &[f64], _lambda: f64) -> f64 {
        self.net.forward(&self.params, &Self::input(t, x, mu_bar))[0]
    }

    fn accumulate_grad(&self, t: f64, _lambda: f64, points: &[CriticPoint<'_>], out: &mut [f64]) {
        let mut cache = MlpCache::default();
        for p in points {
            self.net.forward_cached(&self.params, &Self::input(t, p.x, p.mu_bar), &mut cache);
            self.net.backward(&self.params, &cache, &[p.weight], out);
        }
    }
}
