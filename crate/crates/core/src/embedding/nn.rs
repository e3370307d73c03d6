//! Minimal dense network with hand-written backpropagation and an Adam optimiser.
//!
//! Parameters live in one flat buffer so that optimisers and finite-difference
//! checks can treat every network uniformly. Layer `l` stores its weight
//! matrix (row-major, `out x in`) followed by its bias vector.

use rand::Rng;

/// Fully connected network with ReLU on hidden layers and a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded by a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    /// `inputs[l]` is the input to layer `l`; the last entry is the raw output.
    inputs: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().expect("tape has at least the input")
    }
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need at least an input and an output layer");
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Mlp { sizes: sizes.to_vec(), params: vec![0.0; n] }
    }

    /// He-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.gen_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        net
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// `(weights, biases)` of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (w, b) = self.layer_range(l);
        (&self.params[w.clone()], &self.params[b])
    }

    fn layer_range(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let mut offset = 0;
        for w in self.sizes.windows(2).take(l) {
            offset += w[0] * w[1] + w[1];
        }
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        let w_end = offset + fan_in * fan_out;
        (offset..w_end, w_end..w_end + fan_out)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_tape(x).inputs.pop().unwrap()
    }

    pub fn forward_tape(&self, x: &[f64]) -> Tape {
        debug_assert_eq!(x.len(), self.n_inputs());
        let mut inputs = Vec::with_capacity(self.sizes.len());
        inputs.push(x.to_vec());
        for l in 0..self.n_layers() {
            let out = self.apply_layer(l, inputs.last().unwrap());
            inputs.push(out);
        }
        Tape { inputs }
    }

    /// Layer `l` on `input`, including the ReLU unless it is the output layer.
    pub fn apply_layer(&self, l: usize, input: &[f64]) -> Vec<f64> {
        let (w, b) = self.layer(l);
        let mut out = b.to_vec();
        self.finish_layer(l, w, input, &mut out);
        out
    }

    /// Adds `W_l * input` to the pre-activation `out`, then activates it.
    pub(crate) fn finish_layer(&self, l: usize, w: &[f64], input: &[f64], out: &mut [f64]) {
        let fan_in = self.sizes[l];
        let hidden = l + 1 != self.n_layers();
        for (o, row) in out.iter_mut().zip(w.chunks_exact(fan_in)) {
            *o += dot(row, input);
            if hidden && *o < 0.0 {
                *o = 0.0;
            }
        }
    }

    /// Runs layers `start..` on `x`.
    pub fn forward_from(&self, start: usize, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in start..self.n_layers() {
            h = self.apply_layer(l, &h);
        }
        h
    }

    /// Accumulates `d loss / d params` into `grad` and returns `d loss / d input`.
    pub fn backward(&self, tape: &Tape, d_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.params.len());
        let mut delta = d_out.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (w_range, b_range) = self.layer_range(l);
            let fan_in = self.sizes[l];
            let input = &tape.inputs[l];
            for (g, d) in grad[b_range].iter_mut().zip(&delta) {
                *g += d;
            }
            let w = &self.params[w_range.clone()];
            let gw = &mut grad[w_range];
            let mut d_input = vec![0.0; fan_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let grow = &mut gw[o * fan_in..(o + 1) * fan_in];
                for i in 0..fan_in {
                    grow[i] += d * input[i];
                    d_input[i] += d * row[i];
                }
            }
            if l > 0 {
                // input of layer l is the ReLU output of layer l-1
                for (di, &a) in d_input.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *di = 0.0;
                    }
                }
            }
            delta = d_input;
        }
        delta
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Network whose two raw outputs are squashed to `(tanh, sigmoid)`, i.e. an
/// accuracy-change estimate in `(-1, 1)` and a reduction-rate estimate in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoHeadRegressor {
    pub net: Mlp,
}

impl TwoHeadRegressor {
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert_eq!(*sizes.last().unwrap(), 2);
        TwoHeadRegressor { net: Mlp::new(sizes, rng) }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        assert_eq!(*sizes.last().unwrap(), 2);
        TwoHeadRegressor { net: Mlp::zeros(sizes) }
    }

    pub fn squash(raw: &[f64]) -> (f64, f64) {
        (raw[0].tanh(), sigmoid(raw[1]))
    }

    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        Self::squash(&self.net.forward(x))
    }

    /// Squared error `(ar_hat - ar)^2 + (pr_hat - pr)^2` of one sample. Gradients
    /// scaled by `weight` are accumulated into `grad`; returns `(loss, d loss / d x * weight)`.
    pub fn loss_grad(&self, x: &[f64], target: (f64, f64), weight: f64, grad: &mut [f64]) -> (f64, Vec<f64>) {
        let tape = self.net.forward_tape(x);
        let (a, p) = Self::squash(tape.output());
        let (ea, ep) = (a - target.0, p - target.1);
        let loss = ea * ea + ep * ep;
        let d_out = [weight * 2.0 * ea * (1.0 - a * a), weight * 2.0 * ep * p * (1.0 - p)];
        let d_x = self.net.backward(&tape, &d_out, grad);
        (loss, d_x)
    }

    pub fn loss(&self, x: &[f64], target: (f64, f64)) -> f64 {
        let (a, p) = self.predict(x);
        (a - target.0).powi(2) + (p - target.1).powi(2)
    }
}

/// Adam moments for one parameter block, with its own step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
