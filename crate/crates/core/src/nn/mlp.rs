//! Fixed-topology multilayer perceptron over a flat parameter vector.
//!
//! Parameters are stored layer by layer: the row-major `(out, in)` weight
//! matrix followed by the bias. Trunk layers come first, then one linear
//! layer per output head, all fed by the last hidden layer.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    Orthogonal,
    FanInUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    pub dim: usize,
    /// Scale applied to the head's initial weights.
    pub gain: f64,
}

impl HeadSpec {
    pub fn new(name: impl Into<String>, dim: usize, gain: f64) -> Self {
        Self {
            name: name.into(),
            dim,
            gain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub heads: Vec<HeadSpec>,
    pub activation: Activation,
    pub init: InitScheme,
}

impl NetSpec {
    pub fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        heads: Vec<HeadSpec>,
        activation: Activation,
        init: InitScheme,
    ) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_widths,
            heads,
            activation,
            init,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("input_dim", "must be positive"));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(Error::config(
                "hidden_widths",
                "need at least one hidden layer, all widths positive",
            ));
        }
        if self.heads.is_empty() || self.heads.iter().any(|h| h.dim == 0) {
            return Err(Error::config("heads", "need at least one head, all dims >= 1"));
        }
        Ok(())
    }

    pub fn head_index(&self, name: &str) -> Option<usize> {
        self.heads.iter().position(|h| h.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    inputs: usize,
    outputs: usize,
    weight_offset: usize,
    bias_offset: usize,
}

impl Layer {
    fn end(&self) -> usize {
        self.bias_offset + self.outputs
    }

    fn weights<'a>(&self, params: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape(
            (self.outputs, self.inputs),
            &params[self.weight_offset..self.bias_offset],
        )
        .expect("layer layout")
    }

    fn bias<'a>(&self, params: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&params[self.bias_offset..self.end()])
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array2<f64>,
    hidden: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }
}

/// A network topology with its resolved parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: NetSpec,
    trunk: Vec<Layer>,
    heads: Vec<Layer>,
    param_count: usize,
}

impl Mlp {
    pub fn new(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let mut offset = 0;
        let mut layer = |inputs: usize, outputs: usize| {
            let l = Layer {
                inputs,
                outputs,
                weight_offset: offset,
                bias_offset: offset + inputs * outputs,
            };
            offset = l.end();
            l
        };
        let mut trunk = Vec::with_capacity(spec.hidden_widths.len());
        let mut width = spec.input_dim;
        for &h in &spec.hidden_widths {
            trunk.push(layer(width, h));
            width = h;
        }
        let heads = spec.heads.iter().map(|h| layer(width, h.dim)).collect();
        Ok(Self {
            spec,
            trunk,
            heads,
            param_count: offset,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn head_dims(&self) -> Vec<usize> {
        self.spec.heads.iter().map(|h| h.dim).collect()
    }

    /// Parameter range belonging to head `index`.
    pub fn head_param_range(&self, index: usize) -> std::ops::Range<usize> {
        let l = &self.heads[index];
        l.weight_offset..l.end()
    }

    /// Seeded initial parameters; biases start at zero.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = vec![0.0; self.param_count];
        let hidden_gain = match self.spec.activation {
            Activation::Relu => std::f64::consts::SQRT_2,
            Activation::Tanh => 1.0,
        };
        let layers = self
            .trunk
            .iter()
            .map(|l| (l, hidden_gain))
            .chain(self.heads.iter().zip(&self.spec.heads).map(|(l, h)| (l, h.gain)));
        for (layer, gain) in layers {
            let w = &mut params[layer.weight_offset..layer.bias_offset];
            match self.spec.init {
                InitScheme::Orthogonal => orthogonal_fill(w, layer.outputs, layer.inputs, gain, rng),
                InitScheme::FanInUniform => {
                    let bound = gain * (3.0 / layer.inputs as f64).sqrt();
                    for x in w.iter_mut() {
                        *x = rng.random_range(-bound..=bound);
                    }
                }
            }
        }
        params
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count {
            return Err(Error::Dimension {
                expected: self.param_count,
                got: params.len(),
                context: "network parameters",
            });
        }
        Ok(())
    }

    /// Batched forward pass. Returns one `(batch, head_dim)` matrix per head.
    pub fn forward(
        &self,
        params: &[f64],
        obs: ArrayView2<f64>,
    ) -> Result<(Vec<Array2<f64>>, ForwardCache)> {
        self.check_params(params)?;
        if obs.ncols() != self.spec.input_dim {
            return Err(Error::Dimension {
                expected: self.spec.input_dim,
                got: obs.ncols(),
                context: "observation batch",
            });
        }
        let act = self.spec.activation;
        let mut hidden = Vec::with_capacity(self.trunk.len());
        let mut x = obs.to_owned();
        for layer in &self.trunk {
            let mut z = x.dot(&layer.weights(params).t());
            z += &layer.bias(params);
            z.mapv_inplace(|v| act.apply(v));
            hidden.push(z.clone());
            x = z;
        }
        let last = hidden.last().expect("at least one hidden layer");
        let outputs = self
            .heads
            .iter()
            .map(|layer| {
                let mut y = last.dot(&layer.weights(params).t());
                y += &layer.bias(params);
                y
            })
            .collect();
        Ok((
            outputs,
            ForwardCache {
                input: obs.to_owned(),
                hidden,
            },
        ))
    }

    /// Forward pass without keeping the cache.
    pub fn predict(&self, params: &[f64], obs: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        Ok(self.forward(params, obs)?.0)
    }

    /// Gradient of `Σ_h <outputs_h, head_grads_h>` with respect to every
    /// parameter, written into `grads`. Heads whose gradient is `None` are
    /// treated as receiving zero.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &ForwardCache,
        head_grads: &[Option<ArrayView2<f64>>],
        grads: &mut [f64],
    ) -> Result<()> {
        self.check_params(params)?;
        self.check_params(grads)?;
        if head_grads.len() != self.heads.len() {
            return Err(Error::Dimension {
                expected: self.heads.len(),
                got: head_grads.len(),
                context: "head gradients",
            });
        }
        grads.fill(0.0);
        let batch = cache.batch_size();
        let last = cache.hidden.last().expect("at least one hidden layer");
        let mut d_hidden = Array2::<f64>::zeros((batch, last.ncols()));
        for (layer, g) in self.heads.iter().zip(head_grads) {
            let Some(g) = g else { continue };
            if g.dim() != (batch, layer.outputs) {
                return Err(Error::Dimension {
                    expected: layer.outputs,
                    got: g.ncols(),
                    context: "head gradient shape",
                });
            }
            write_layer_grads(layer, *g, last.view(), grads);
            d_hidden += &g.dot(&layer.weights(params));
        }

        let act = self.spec.activation;
        for (i, layer) in self.trunk.iter().enumerate().rev() {
            let out = &cache.hidden[i];
            ndarray::Zip::from(&mut d_hidden)
                .and(out)
                .for_each(|d, &y| *d *= act.derivative_from_output(y));
            let input = if i == 0 {
                cache.input.view()
            } else {
                cache.hidden[i - 1].view()
            };
            write_layer_grads(layer, d_hidden.view(), input, grads);
            if i > 0 {
                d_hidden = d_hidden.dot(&layer.weights(params));
            }
        }
        Ok(())
    }
}

fn write_layer_grads(layer: &Layer, d_out: ArrayView2<f64>, input: ArrayView2<f64>, grads: &mut [f64]) {
    let dw = d_out.t().dot(&input);
    let db = d_out.sum_axis(Axis(0));
    let w_slot = &mut grads[layer.weight_offset..layer.bias_offset];
    for (slot, v) in w_slot.iter_mut().zip(dw.iter()) {
        *slot = *v;
    }
    for (slot, v) in grads[layer.bias_offset..layer.end()].iter_mut().zip(db.iter()) {
        *slot = *v;
    }
}

/// Fill a row-major `(rows, cols)` matrix with a scaled semi-orthogonal matrix
/// obtained by Gram-Schmidt on Gaussian draws.
fn orthogonal_fill<R: Rng + ?Sized>(out: &mut [f64], rows: usize, cols: usize, gain: f64, rng: &mut R) {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    // `short` orthonormal vectors of length `tall`
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..tall).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-10 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    for r in 0..rows {
        for c in 0..cols {
            let value = if rows >= cols { basis[c][r] } else { basis[r][c] };
            out[r * cols + c] = gain * value;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(input: usize, hidden: &[usize], heads: &[usize], act: Activation) -> NetSpec {
        NetSpec::new(
            input,
            hidden.to_vec(),
            heads
                .iter()
                .enumerate()
                .map(|(i, &d)| HeadSpec::new(format!("h{i}"), d, 1.0))
                .collect(),
            act,
            InitScheme::Orthogonal,
        )
        .unwrap()
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    /// Per-sample scalar loop, independent of the matrix formulation.
    fn naive_forward(net: &Mlp, params: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let dense = |layer: &Layer, input: &[f64]| -> Vec<f64> {
            (0..layer.outputs)
                .map(|o| {
                    let mut acc = params[layer.bias_offset + o];
                    for (i, xi) in input.iter().enumerate() {
                        acc += params[layer.weight_offset + o * layer.inputs + i] * xi;
                    }
                    acc
                })
                .collect()
        };
        let mut h = x.to_vec();
        for layer in &net.trunk {
            h = dense(layer, &h)
                .into_iter()
                .map(|v| net.spec.activation.apply(v))
                .collect();
        }
        net.heads.iter().map(|l| dense(l, &h)).collect()
    }

    #[test]
    fn layout_counts() {
        let net = Mlp::new(spec(3, &[4, 5], &[2, 1], Activation::Tanh)).unwrap();
        assert_eq!(net.param_count(), 3 * 4 + 4 + 4 * 5 + 5 + 5 * 2 + 2 + 5 + 1);
    }

    #[test]
    fn spec_validation() {
        assert!(NetSpec::new(2, vec![], vec![HeadSpec::new("v", 1, 1.0)], Activation::Relu, InitScheme::Orthogonal).is_err());
        assert!(NetSpec::new(2, vec![3], vec![HeadSpec::new("v", 0, 1.0)], Activation::Relu, InitScheme::Orthogonal).is_err());
        assert!(NetSpec::new(0, vec![3], vec![HeadSpec::new("v", 1, 1.0)], Activation::Relu, InitScheme::Orthogonal).is_err());
    }

    #[test]
    fn zero_params_give_zero_outputs() {
        let net = Mlp::new(spec(3, &[8, 8], &[2, 1], Activation::Relu)).unwrap();
        let params = vec![0.0; net.param_count()];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_batch(&mut rng, 5, 3);
        let (out, _) = net.forward(&params, x.view()).unwrap();
        assert!(out.iter().all(|o| o.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn identity_layers_pass_input_through() {
        let net = Mlp::new(spec(2, &[2], &[2], Activation::Relu)).unwrap();
        let mut params = vec![0.0; net.param_count()];
        // identity trunk weights and identity head weights
        params[0] = 1.0;
        params[3] = 1.0;
        let head = net.heads[0];
        params[head.weight_offset] = 1.0;
        params[head.weight_offset + 3] = 1.0;
        let x = ndarray::arr2(&[[0.5, 2.0], [3.0, 0.25]]);
        let (out, _) = net.forward(&params, x.view()).unwrap();
        assert_eq!(out[0], x);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let net = Mlp::new(spec(3, &[4], &[1], Activation::Relu)).unwrap();
        let params = vec![0.0; net.param_count()];
        let x = Array2::<f64>::zeros((2, 4));
        assert!(matches!(
            net.forward(&params, x.view()),
            Err(Error::Dimension { .. })
        ));
        assert!(net.forward(&params[1..], Array2::zeros((2, 3)).view()).is_err());
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for act in [Activation::Relu, Activation::Tanh] {
            let net = Mlp::new(spec(4, &[7, 5], &[3, 1], act)).unwrap();
            let params = net.init_params(&mut rng);
            let x = random_batch(&mut rng, 6, 4);
            let (out, _) = net.forward(&params, x.view()).unwrap();
            for r in 0..6 {
                let expected = naive_forward(&net, &params, x.row(r).as_slice().unwrap());
                for (h, e) in expected.iter().enumerate() {
                    for (c, v) in e.iter().enumerate() {
                        assert_abs_diff_eq!(out[h][[r, c]], v, epsilon = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_output_grads_give_zero_param_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(spec(3, &[4], &[2], Activation::Tanh)).unwrap();
        let params = net.init_params(&mut rng);
        let x = random_batch(&mut rng, 3, 3);
        let (_, cache) = net.forward(&params, x.view()).unwrap();
        let g = Array2::zeros((3, 2));
        let mut grads = vec![1.0; net.param_count()];
        net.backward(&params, &cache, &[Some(g.view())], &mut grads).unwrap();
        assert!(grads.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_quadratic_gradient() {
        // f(w) = w * (w * x) with x = 1, relu trunk, w = 3 on both layers -> df/dw_total = 2w = 6
        let net = Mlp::new(spec(1, &[1], &[1], Activation::Relu)).unwrap();
        let mut params = vec![0.0; net.param_count()];
        params[0] = 3.0;
        params[net.heads[0].weight_offset] = 3.0;
        let x = ndarray::arr2(&[[1.0]]);
        let (out, cache) = net.forward(&params, x.view()).unwrap();
        assert_eq!(out[0][[0, 0]], 9.0);
        let g = ndarray::arr2(&[[1.0]]);
        let mut grads = vec![0.0; net.param_count()];
        net.backward(&params, &cache, &[Some(g.view())], &mut grads).unwrap();
        let shared = grads[0] + grads[net.heads[0].weight_offset];
        assert_abs_diff_eq!(shared, 6.0, epsilon = 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let h = 1e-5;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = Mlp::new(spec(3, &[5, 4], &[2, 1], Activation::Tanh)).unwrap();
            let params = net.init_params(&mut rng);
            let x = random_batch(&mut rng, 4, 3);
            let g0 = random_batch(&mut rng, 4, 2);
            let g1 = random_batch(&mut rng, 4, 1);
            let objective = |p: &[f64]| -> f64 {
                let out = net.predict(p, x.view()).unwrap();
                (&out[0] * &g0).sum() + (&out[1] * &g1).sum()
            };
            let (_, cache) = net.forward(&params, x.view()).unwrap();
            let mut grads = vec![0.0; net.param_count()];
            net.backward(&params, &cache, &[Some(g0.view()), Some(g1.view())], &mut grads)
                .unwrap();
            let mut p = params.clone();
            for i in 0..p.len() {
                let orig = p[i];
                p[i] = orig + h;
                let up = objective(&p);
                p[i] = orig - h;
                let down = objective(&p);
                p[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let denom = fd.abs().max(grads[i].abs()).max(1e-6);
                assert!(
                    (fd - grads[i]).abs() / denom < 1e-5,
                    "seed {seed} param {i}: fd {fd} analytic {}",
                    grads[i]
                );
            }
        }
    }

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut w = vec![0.0; 3 * 6];
        orthogonal_fill(&mut w, 3, 6, 1.0, &mut rng);
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..6).map(|c| w[a * 6 + c] * w[b * 6 + c]).sum();
                assert_abs_diff_eq!(dot, if a == b { 1.0 } else { 0.0 }, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let net = Mlp::new(spec(4, &[16, 16], &[3], Activation::Relu)).unwrap();
        let a = net.init_params(&mut ChaCha8Rng::seed_from_u64(5));
        let b = net.init_params(&mut ChaCha8Rng::seed_from_u64(5));
        let c = net.init_params(&mut ChaCha8Rng::seed_from_u64(6));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
