//! Fixed-architecture multi-headed ReLU network with reverse-mode gradients.
//!
//! Layout: a shared trunk of ReLU dense layers, then one head per strategy.
//! Each head is a ReLU dense layer followed by a single linear output unit.
//! With skip connections enabled, both head layers additionally see the raw
//! input row (`[trunk_out, x]` into the hidden layer, `[head_hidden, x]` into
//! the output unit).

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of a surrogate network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub trunk_widths: Vec<usize>,
    pub head_width: usize,
    /// One head per strategy.
    pub num_heads: usize,
    pub skip_connections: bool,
    pub includes_parameter_input: bool,
}

impl NetworkSpec {
    /// Variable-parameter model: `r256;r128;r64;HSr32;HSlin` with the
    /// parameter as an extra input.
    pub fn vpl(num_strategies: usize) -> Self {
        NetworkSpec {
            trunk_widths: vec![256, 128, 64],
            head_width: 32,
            num_heads: num_strategies,
            skip_connections: true,
            includes_parameter_input: true,
        }
    }

    /// Fixed-parameter baseline: `r128;r64;r32;Hr16;Hlin`, mixture input only.
    pub fn fpl(num_strategies: usize) -> Self {
        NetworkSpec {
            trunk_widths: vec![128, 64, 32],
            head_width: 16,
            num_heads: num_strategies,
            skip_connections: false,
            includes_parameter_input: false,
        }
    }

    pub fn input_width(&self) -> usize {
        self.num_heads + self.includes_parameter_input as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.head_width == 0 || self.trunk_widths.contains(&0) {
            return Err(Error::InvalidConfig(format!("network spec has a zero-width layer: {self:?}")));
        }
        Ok(())
    }

    fn trunk_out_width(&self) -> usize {
        self.trunk_widths.last().copied().unwrap_or_else(|| self.input_width())
    }
}

/// Dense layer `y = x W + b` with `W` of shape `(in, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn he_normal<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
        Dense { w: Array2::from_shape_simple_fn((fan_in, fan_out), || normal.sample(rng)), b: Array1::zeros(fan_out) }
    }

    fn zeros_like(&self) -> Self {
        Dense { w: Array2::zeros(self.w.raw_dim()), b: Array1::zeros(self.b.raw_dim()) }
    }

    fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    pub fn num_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub hidden: Dense,
    pub out: Dense,
}

/// Network weights. Gradients and optimizer moments reuse this type.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub trunk: Vec<Dense>,
    pub heads: Vec<Head>,
    skip: bool,
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache {
    /// `acts[0]` is the input, `acts[i + 1]` the output of trunk layer `i`.
    acts: Vec<Array2<f64>>,
    head_in: Vec<Array2<f64>>,
    head_hidden: Vec<Array2<f64>>,
    out_in: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

fn relu(mut a: Array2<f64>) -> Array2<f64> {
    a.mapv_inplace(|x| x.max(0.0));
    a
}

fn relu_mask(grad: &mut Array2<f64>, post_activation: &Array2<f64>) {
    Zip::from(grad).and(post_activation).for_each(|g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
}

fn with_skip(a: &Array2<f64>, x: &ArrayView2<f64>, skip: bool) -> Array2<f64> {
    if skip {
        concatenate(Axis(1), &[a.view(), x.view()]).expect("row counts match")
    } else {
        a.clone()
    }
}

impl Network {
    pub fn init<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Self {
        let d_in = spec.input_width();
        let mut trunk = Vec::with_capacity(spec.trunk_widths.len());
        let mut width = d_in;
        for &w in &spec.trunk_widths {
            trunk.push(Dense::he_normal(width, w, rng));
            width = w;
        }
        let skip_extra = if spec.skip_connections { d_in } else { 0 };
        let heads = (0..spec.num_heads)
            .map(|_| Head {
                hidden: Dense::he_normal(spec.trunk_out_width() + skip_extra, spec.head_width, rng),
                out: Dense::he_normal(spec.head_width + skip_extra, 1, rng),
            })
            .collect();
        Network { trunk, heads, skip: spec.skip_connections }
    }

    pub fn zeros_like(&self) -> Self {
        Network {
            trunk: self.trunk.iter().map(Dense::zeros_like).collect(),
            heads: self.heads.iter().map(|h| Head { hidden: h.hidden.zeros_like(), out: h.out.zeros_like() }).collect(),
            skip: self.skip,
        }
    }

    /// Layers in canonical order: trunk, then per head (hidden, out).
    pub fn layers(&self) -> Vec<&Dense> {
        let mut v: Vec<&Dense> = self.trunk.iter().collect();
        for h in &self.heads {
            v.push(&h.hidden);
            v.push(&h.out);
        }
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense> {
        let mut v: Vec<&mut Dense> = self.trunk.iter_mut().collect();
        for h in &mut self.heads {
            v.push(&mut h.hidden);
            v.push(&mut h.out);
        }
        v
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|l| l.num_params()).sum()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut t = x.to_owned();
        for layer in &self.trunk {
            t = relu(layer.apply(&t.view()));
        }
        let mut out = Array2::zeros((x.nrows(), self.heads.len()));
        for (j, head) in self.heads.iter().enumerate() {
            let hin = with_skip(&t, &x, self.skip);
            let hidden = relu(head.hidden.apply(&hin.view()));
            let oin = with_skip(&hidden, &x, self.skip);
            out.column_mut(j).assign(&head.out.apply(&oin.view()).column(0));
        }
        out
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> ForwardCache {
        let mut acts = Vec::with_capacity(self.trunk.len() + 1);
        acts.push(x.to_owned());
        for layer in &self.trunk {
            let next = relu(layer.apply(&acts.last().expect("input present").view()));
            acts.push(next);
        }
        let t = acts.last().expect("input present");
        let n = self.heads.len();
        let (mut head_in, mut head_hidden, mut out_in) =
            (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        let mut output = Array2::zeros((x.nrows(), n));
        for (j, head) in self.heads.iter().enumerate() {
            let hin = with_skip(t, &x, self.skip);
            let hidden = relu(head.hidden.apply(&hin.view()));
            let oin = with_skip(&hidden, &x, self.skip);
            output.column_mut(j).assign(&head.out.apply(&oin.view()).column(0));
            head_in.push(hin);
            head_hidden.push(hidden);
            out_in.push(oin);
        }
        ForwardCache { acts, head_in, head_hidden, out_in, output }
    }

    /// Parameter gradients given `d_out = dL/d(output)` of shape `(B, heads)`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Array2<f64>) -> Network {
        let mut grads = self.zeros_like();
        let t = cache.acts.last().expect("input present");
        let t_width = t.ncols();
        let mut d_t = Array2::<f64>::zeros(t.raw_dim());
        for (j, head) in self.heads.iter().enumerate() {
            let g = d_out.slice(s![.., j..j + 1]);
            let gh = &mut grads.heads[j];
            gh.out.w = cache.out_in[j].t().dot(&g);
            gh.out.b = g.sum_axis(Axis(0));

            let d_out_in = g.dot(&head.out.w.t());
            let hw = head.hidden.b.len();
            let mut d_hidden = d_out_in.slice(s![.., ..hw]).to_owned();
            relu_mask(&mut d_hidden, &cache.head_hidden[j]);
            gh.hidden.w = cache.head_in[j].t().dot(&d_hidden);
            gh.hidden.b = d_hidden.sum_axis(Axis(0));

            let d_head_in = d_hidden.dot(&head.hidden.w.t());
            d_t += &d_head_in.slice(s![.., ..t_width]);
        }
        let mut d = d_t;
        for i in (0..self.trunk.len()).rev() {
            relu_mask(&mut d, &cache.acts[i + 1]);
            grads.trunk[i].w = cache.acts[i].t().dot(&d);
            grads.trunk[i].b = d.sum_axis(Axis(0));
            if i > 0 {
                d = d.dot(&self.trunk[i].w.t());
            }
        }
        grads
    }

    /// Mean squared error over all heads and rows, and its parameter gradients.
    pub fn mse_and_grad(&self, x: ArrayView2<f64>, targets: ArrayView2<f64>) -> (f64, Network) {
        let cache = self.forward_cached(x);
        let diff = &cache.output - &targets;
        let n = diff.len() as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
        let d_out = diff * (2.0 / n);
        (loss, self.backward(&cache, &d_out))
    }

    pub fn mse(&self, x: ArrayView2<f64>, targets: ArrayView2<f64>) -> f64 {
        let diff = self.forward(x) - targets;
        diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64
    }

    pub(crate) fn from_parts(trunk: Vec<Dense>, heads: Vec<Head>, skip: bool) -> Self {
        Network { trunk, heads, skip }
    }
}

/// Adam optimizer state for one network.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Network,
    v: Network,
}

impl Adam {
    pub fn new(net: &Network, learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { learning_rate, beta1, beta2, eps, step: 0, m: net.zeros_like(), v: net.zeros_like() }
    }

    pub fn step(&mut self, net: &mut Network, grads: &Network) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = self.learning_rate;
        let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((p, g), m), v) in
            net.layers_mut().into_iter().zip(grads.layers()).zip(self.m.layers_mut()).zip(self.v.layers_mut())
        {
            Zip::from(&mut p.w).and(&g.w).and(&mut m.w).and(&mut v.w).for_each(update);
            Zip::from(&mut p.b).and(&g.b).and(&mut m.b).and(&mut v.b).for_each(update);
        }
    }
}
