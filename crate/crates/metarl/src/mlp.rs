//! Plain fully connected networks with manual backprop, and Adam.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Identity => {}
        }
    }

    /// Multiplies `grad` by the derivative, given the activation output.
    fn backprop(self, out: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Relu => grad.zip_mut_with(out, |g, o| {
                if *o <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Tanh => grad.zip_mut_with(out, |g, o| *g *= 1.0 - o * o),
            Activation::Identity => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `in × out`, so a batch forward pass is `x · w + b`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub act: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Per-layer activations kept for the backward pass.
pub struct Cache {
    inputs: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            w: net.layers.iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
            b: net.layers.iter().map(|l| Array1::zeros(l.b.len())).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Grads, scale: f64) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            a.scaled_add(scale, b);
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            a.scaled_add(scale, b);
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.w.iter().zip(&self.b) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

impl Mlp {
    /// Hidden layers use `hidden`, the last layer `output`. Weights are
    /// uniform in ±√(6/fan_in); the last layer is shrunk to ±3e-3 so a
    /// bounded output starts unsaturated.
    pub fn new(widths: &[usize], hidden: Activation, output: Activation, rng: &mut ChaCha8Rng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (widths[i], widths[i + 1]);
                let last = i + 1 == n;
                let bound = if last { 3e-3 } else { (6.0 / fan_in as f64).sqrt() };
                let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound));
                let b = if last {
                    Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..bound))
                } else {
                    Array1::zeros(fan_out)
                };
                Layer { w, b, act: if last { output } else { hidden } }
            })
            .collect();
        Self { layers }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].w.nrows()];
        w.extend(self.layers.iter().map(|l| l.w.ncols()));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.ncols())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for layer in &self.layers {
            let mut z = h.dot(&layer.w) + &layer.b;
            layer.act.apply(&mut z);
            h = z;
        }
        h
    }

    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        self.forward(view).into_raw_vec_and_offset().0
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, Cache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for layer in &self.layers {
            let mut z = h.dot(&layer.w) + &layer.b;
            layer.act.apply(&mut z);
            inputs.push(h);
            outputs.push(z.clone());
            h = z;
        }
        (h, Cache { inputs, outputs })
    }

    /// Gradients of a scalar loss given `dL/d(output)`; also returns `dL/d(input)`.
    pub fn backward(&self, cache: &Cache, dout: Array2<f64>) -> (Grads, Array2<f64>) {
        let n = self.layers.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut grad = dout;
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            layer.act.backprop(&cache.outputs[i], &mut grad);
            gw.push(cache.inputs[i].t().dot(&grad));
            gb.push(grad.sum_axis(Axis(0)));
            grad = grad.dot(&layer.w.t());
        }
        gw.reverse();
        gb.reverse();
        (Grads { w: gw, b: gb }, grad)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), String> {
        if flat.len() != self.num_params() {
            return Err(format!("expected {} parameters, got {}", self.num_params(), flat.len()));
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|p| *p = *it.next().unwrap());
        }
        Ok(())
    }

    /// `self ← τ·src + (1−τ)·self`.
    pub fn soft_update_from(&mut self, src: &Mlp, tau: f64) {
        for (dst, s) in self.layers.iter_mut().zip(&src.layers) {
            dst.w.zip_mut_with(&s.w, |d, v| *d = tau * v + (1.0 - tau) * *d);
            dst.b.zip_mut_with(&s.b, |d, v| *d = tau * v + (1.0 - tau) * *d);
        }
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; num_params], v: vec![0.0; num_params] }
    }

    /// Gradient descent step.
    pub fn step(&mut self, net: &mut Mlp, grads: &Grads) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let g_iter = grads.w.iter().zip(&grads.b).flat_map(|(w, b)| w.iter().chain(b.iter()));
        for (((p, g), m), v) in net.params_mut().zip(g_iter).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn net(seed: u64, out: Activation) -> Mlp {
        Mlp::new(&[3, 5, 4, 2], Activation::Tanh, out, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut net = net(1, Activation::Identity);
        // scale the head up so the check is not dominated by the tiny init
        net.layers[2].w.mapv_inplace(|v| v * 300.0);
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 - 1.5) * 0.3 + j as f64 * 0.2);
        let loss = |n: &Mlp| n.forward(x.view()).iter().map(|v| v * v).sum::<f64>() * 0.5;
        let (out, cache) = net.forward_cached(x.view());
        let (grads, dx) = net.backward(&cache, out.clone());
        let flat = net.to_flat();
        let analytic = grads.to_flat();
        let h = 1e-6;
        for k in 0..flat.len() {
            let mut p = flat.clone();
            p[k] += h;
            let mut up = net.clone();
            up.set_flat(&p).unwrap();
            p[k] -= 2.0 * h;
            let mut dn = net.clone();
            dn.set_flat(&p).unwrap();
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            assert!((fd - analytic[k]).abs() < 1e-6 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", analytic[k]);
        }
        // input gradient
        for (i, j) in [(0, 0), (2, 1), (3, 2)] {
            let mut xp = x.clone();
            xp[(i, j)] += h;
            let up = net.forward(xp.view()).iter().map(|v| v * v).sum::<f64>() * 0.5;
            xp[(i, j)] -= 2.0 * h;
            let dn = net.forward(xp.view()).iter().map(|v| v * v).sum::<f64>() * 0.5;
            assert!(((up - dn) / (2.0 * h) - dx[(i, j)]).abs() < 1e-6);
        }
    }

    #[test]
    fn relu_backward_matches_finite_differences() {
        let mut net = Mlp::new(&[2, 8, 1], Activation::Relu, Activation::Identity, &mut ChaCha8Rng::seed_from_u64(4));
        net.layers[1].w.mapv_inplace(|v| v * 100.0);
        let x = Array2::from_shape_fn((3, 2), |(i, j)| 0.37 * i as f64 - 0.51 * j as f64 + 0.1);
        let (out, cache) = net.forward_cached(x.view());
        let (grads, _) = net.backward(&cache, Array2::ones(out.raw_dim()));
        let flat = net.to_flat();
        let g = grads.to_flat();
        for k in 0..flat.len() {
            let mut p = flat.clone();
            p[k] += 1e-7;
            let mut up = net.clone();
            up.set_flat(&p).unwrap();
            let fd = (up.forward(x.view()).sum() - out.sum()) / 1e-7;
            assert!((fd - g[k]).abs() < 1e-4 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn tanh_head_is_bounded_and_deterministic() {
        let mut n = net(2, Activation::Tanh);
        n.layers[2].w.mapv_inplace(|v| v * 1e4);
        let x = Array2::from_shape_fn((10, 3), |(i, j)| (i * 7 + j) as f64 - 20.0);
        let y = n.forward(x.view());
        assert!(y.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(y, n.forward(x.view()));
    }

    #[test]
    fn soft_update_endpoints_and_convexity() {
        let src = net(3, Activation::Identity);
        let orig = net(4, Activation::Identity);
        let mut t = orig.clone();
        t.soft_update_from(&src, 0.0);
        assert_eq!(t, orig);
        t.soft_update_from(&src, 1.0);
        assert_eq!(t.to_flat(), src.to_flat());
        let mut t = orig.clone();
        t.soft_update_from(&src, 0.3);
        for ((a, s), o) in t.to_flat().iter().zip(src.to_flat()).zip(orig.to_flat()) {
            assert!((a - (0.3 * s + 0.7 * o)).abs() < 1e-15);
        }
    }

    #[test]
    fn flat_round_trip() {
        let n = net(5, Activation::Tanh);
        let mut m = net(6, Activation::Tanh);
        m.set_flat(&n.to_flat()).unwrap();
        assert_eq!(m, n);
        assert!(m.set_flat(&[1.0]).is_err());
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut n = Mlp::new(&[1, 1], Activation::Identity, Activation::Identity, &mut ChaCha8Rng::seed_from_u64(0));
        let mut opt = Adam::new(n.num_params(), 0.05);
        let x = Array2::from_shape_vec((4, 1), vec![-1.0, 0.0, 1.0, 2.0]).unwrap();
        let y = x.mapv(|v| 3.0 * v - 1.0);
        for _ in 0..2000 {
            let (out, cache) = n.forward_cached(x.view());
            let (g, _) = n.backward(&cache, (&out - &y) * (2.0 / 4.0));
            opt.step(&mut n, &g);
        }
        assert!((n.layers[0].w[(0, 0)] - 3.0).abs() < 1e-3);
        assert!((n.layers[0].b[0] + 1.0).abs() < 1e-3);
    }
}
