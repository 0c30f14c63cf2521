use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::NnError;

/// What is applied to the last linear layer's output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    Identity,
    Sigmoid,
    /// Two outputs `(mu, log_sigma)` with `log_sigma` clamped to `[min, max]`.
    GaussianPair { log_sigma_min: f64, log_sigma_max: f64 },
}

impl Head {
    pub const fn gaussian() -> Self {
        Head::GaussianPair {
            log_sigma_min: -20.0,
            log_sigma_max: 2.0,
        }
    }
}

/// Dense ReLU network with flat parameter storage.
///
/// Layer `l` maps `sizes[l]` inputs to `sizes[l + 1]` outputs; its weights are
/// stored row-major (`out × in`) followed by the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    head: Head,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

/// Activations recorded by a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    sizes: Vec<usize>,
    /// `inputs[l]` is the input vector of layer `l` (post-ReLU for l > 0).
    inputs: Vec<Vec<f64>>,
    /// Last layer's linear output, before the head.
    logits: Vec<f64>,
    output: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

fn layer_offsets(sizes: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(sizes.len());
    let mut acc = 0;
    offsets.push(0);
    for w in sizes.windows(2) {
        acc += w[0] * w[1] + w[1];
        offsets.push(acc);
    }
    offsets
}

impl Mlp {
    /// All-zero network.
    pub fn zeros(sizes: &[usize], head: Head) -> Result<Self, NnError> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(NnError::Topology(format!(
                "need at least two positive layer sizes, got {sizes:?}"
            )));
        }
        let out = *sizes.last().unwrap();
        match head {
            Head::Sigmoid | Head::Identity => {}
            Head::GaussianPair {
                log_sigma_min,
                log_sigma_max,
            } => {
                if out != 2 {
                    return Err(NnError::Topology(format!(
                        "gaussian head needs 2 outputs, got {out}"
                    )));
                }
                if !(log_sigma_min < log_sigma_max) {
                    return Err(NnError::Topology("empty log_sigma range".into()));
                }
            }
        }
        let offsets = layer_offsets(sizes);
        Ok(Self {
            sizes: sizes.to_vec(),
            head,
            params: vec![0.0; *offsets.last().unwrap()],
            offsets,
        })
    }

    /// He-uniform weights (`±sqrt(6 / fan_in)`), zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], head: Head, rng: &mut R) -> Result<Self, NnError> {
        let mut net = Self::zeros(sizes, head)?;
        for l in 0..net.num_layers() {
            let fan_in = net.sizes[l];
            let limit = (6.0 / fan_in as f64).sqrt();
            let (w, _) = net.layer_mut(l);
            for v in w.iter_mut() {
                *v = rng.gen_range(-limit..limit);
            }
        }
        Ok(net)
    }

    /// Rebuilds a network from raw parameters.
    pub fn from_params(sizes: &[usize], head: Head, params: Vec<f64>) -> Result<Self, NnError> {
        let mut net = Self::zeros(sizes, head)?;
        if params.len() != net.params.len() {
            return Err(NnError::Shape {
                expected: net.params.len(),
                got: params.len(),
            });
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn same_topology(&self, other: &Mlp) -> bool {
        self.sizes == other.sizes && self.head == other.head
    }

    /// `(weights, bias)` of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let block = &self.params[self.offsets[l]..self.offsets[l + 1]];
        block.split_at(n_in * n_out)
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let block = &mut self.params[self.offsets[l]..self.offsets[l + 1]];
        block.split_at_mut(n_in * n_out)
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::Shape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let mut tape = Tape::default();
        self.forward_tape_into(x, &mut tape)?;
        Ok(tape.output)
    }

    pub fn forward_tape(&self, x: &[f64]) -> Result<Tape, NnError> {
        let mut tape = Tape::default();
        self.forward_tape_into(x, &mut tape)?;
        Ok(tape)
    }

    /// Forward pass reusing `tape`'s buffers.
    pub fn forward_tape_into(&self, x: &[f64], tape: &mut Tape) -> Result<(), NnError> {
        self.check_input(x)?;
        let n_layers = self.num_layers();
        if tape.sizes != self.sizes {
            tape.sizes = self.sizes.clone();
            tape.inputs = self.sizes[..n_layers].iter().map(|&n| vec![0.0; n]).collect();
            tape.logits = vec![0.0; self.output_dim()];
            tape.output = vec![0.0; self.output_dim()];
        }
        tape.inputs[0].copy_from_slice(x);
        for l in 0..n_layers {
            let (w, b) = self.layer(l);
            let n_in = self.sizes[l];
            let last = l + 1 == n_layers;
            let (done, rest) = tape.inputs.split_at_mut(l + 1);
            let input = &done[l];
            let out: &mut [f64] = if last { &mut tape.logits } else { &mut rest[0] };
            for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(n_in).zip(b)) {
                let z = bias + dot(row, input);
                *o = if last || z > 0.0 { z } else { 0.0 };
            }
        }
        apply_head(self.head, &tape.logits, &mut tape.output);
        Ok(())
    }

    /// Reverse pass for a scalar loss whose gradient w.r.t. the network output
    /// is `upstream`. Parameter gradients are accumulated into `grads` when
    /// given; the gradient w.r.t. the input is returned.
    pub fn backward(
        &self,
        tape: &Tape,
        upstream: &[f64],
        grads: Option<&mut [f64]>,
    ) -> Result<Vec<f64>, NnError> {
        if tape.sizes != self.sizes {
            return Err(NnError::TapeMismatch);
        }
        if upstream.len() != self.output_dim() {
            return Err(NnError::Shape {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let mut grads = grads;
        if let Some(g) = grads.as_deref() {
            if g.len() != self.params.len() {
                return Err(NnError::Shape {
                    expected: self.params.len(),
                    got: g.len(),
                });
            }
        }
        let mut delta = head_backward(self.head, &tape.logits, &tape.output, upstream);
        for l in (0..self.num_layers()).rev() {
            let (w, _) = self.layer(l);
            let n_in = self.sizes[l];
            let input = &tape.inputs[l];
            if let Some(g) = grads.as_deref_mut() {
                let block = &mut g[self.offsets[l]..self.offsets[l + 1]];
                let (gw, gb) = block.split_at_mut(n_in * delta.len());
                for ((grow, gbias), &d) in gw.chunks_exact_mut(n_in).zip(gb.iter_mut()).zip(&delta) {
                    if d != 0.0 {
                        for (gv, &a) in grow.iter_mut().zip(input) {
                            *gv += d * a;
                        }
                        *gbias += d;
                    }
                }
            }
            let mut prev = vec![0.0; n_in];
            for (row, &d) in w.chunks_exact(n_in).zip(&delta) {
                if d != 0.0 {
                    for (p, &wv) in prev.iter_mut().zip(row) {
                        *p += d * wv;
                    }
                }
            }
            if l > 0 {
                // ReLU: inputs of layer l are the post-activation values of layer l-1.
                for (p, &a) in prev.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        Ok(delta)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
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

fn apply_head(head: Head, logits: &[f64], out: &mut [f64]) {
    match head {
        Head::Identity => out.copy_from_slice(logits),
        Head::Sigmoid => {
            for (o, &z) in out.iter_mut().zip(logits) {
                *o = sigmoid(z);
            }
        }
        Head::GaussianPair {
            log_sigma_min,
            log_sigma_max,
        } => {
            out[0] = logits[0];
            out[1] = logits[1].clamp(log_sigma_min, log_sigma_max);
        }
    }
}

fn head_backward(head: Head, logits: &[f64], out: &[f64], upstream: &[f64]) -> Vec<f64> {
    match head {
        Head::Identity => upstream.to_vec(),
        Head::Sigmoid => upstream
            .iter()
            .zip(out)
            .map(|(u, y)| u * y * (1.0 - y))
            .collect(),
        Head::GaussianPair {
            log_sigma_min,
            log_sigma_max,
        } => {
            let inside = logits[1] > log_sigma_min && logits[1] < log_sigma_max;
            vec![upstream[0], if inside { upstream[1] } else { 0.0 }]
        }
    }
}
