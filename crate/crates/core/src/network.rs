//! Multi-layer perceptron Q-function with hand-written reverse mode.
//!
//! Hidden layers apply the activation; the output layer is affine and has one
//! unit per action.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of repeated squarings in [`spectral_norm_upper_bound`].
const TRACE_POWER_SQUARINGS: usize = 30;

/// `tanh` through a single exponential; within a few ulp of the exact value
/// away from zero and within 1e-15 absolute near it.
fn tanh(x: f64) -> f64 {
    let e = libm::exp(-2.0 * x.abs());
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

/// Dot product with four independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => tanh(x),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    /// Supremum of `|f'|`.
    pub fn gradient_bound(self) -> f64 {
        1.0
    }
}

/// Affine map `y = W x + b` with `W` stored row-major (`outputs x inputs`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn check(&self) -> Result<()> {
        if self.inputs == 0 || self.outputs == 0 {
            return Err(Error::domain("layers need positive widths"));
        }
        if self.weights.len() != self.inputs * self.outputs || self.biases.len() != self.outputs {
            return Err(Error::domain(format!(
                "layer {}x{} has {} weights and {} biases",
                self.outputs,
                self.inputs,
                self.weights.len(),
                self.biases.len()
            )));
        }
        if self.weights.iter().chain(&self.biases).any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite parameter"));
        }
        Ok(())
    }

    fn same_shape(&self, other: &Layer) -> bool {
        self.inputs == other.inputs && self.outputs == other.outputs
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, &b) in self.weights.chunks_exact(self.inputs).zip(&self.biases) {
            out.push(dot(row, x) + b);
        }
    }
}

/// Parameter-shaped gradient of a [`QNetwork`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradient {
    pub layers: Vec<Layer>,
}

impl Gradient {
    pub fn zeros_like(net: &QNetwork) -> Self {
        Self {
            layers: net.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(&mut l.biases).for_each(|v| *v *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &Gradient) -> Result<()> {
        if !shapes_match(&self.layers, &other.layers) {
            return Err(Error::usage("gradient shapes differ"));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.biases.iter_mut().zip(&b.biases).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    /// Flattened in the same order as [`QNetwork::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.biases).all(|&v| v == 0.0))
    }
}

fn shapes_match(a: &[Layer], b: &[Layer]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_shape(y))
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    layers: Vec<Layer>,
    activation: Activation,
}

impl QNetwork {
    /// Builds a network from explicit layers, checking that consecutive
    /// widths agree and parameters are finite.
    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::domain("network needs at least one layer"));
        }
        for l in &layers {
            l.check()?;
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::domain(format!(
                    "layer widths disagree: {} outputs feed {} inputs",
                    pair[0].outputs, pair[1].inputs
                )));
            }
        }
        Ok(Self { layers, activation })
    }

    /// All-zero network with the given widths (input first, action count
    /// last).
    pub fn zeros(widths: &[usize], activation: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::domain("need at least input and output widths"));
        }
        Self::from_layers(widths.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(), activation)
    }

    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn random<R: Rng + ?Sized>(widths: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(widths, activation)?;
        for l in &mut net.layers {
            let bound = 1.0 / libm::sqrt(l.inputs as f64);
            for v in l.weights.iter_mut().chain(&mut l.biases) {
                *v = rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn num_actions(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Weights then biases, layer by layer.
    pub fn parameters(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_parameters() {
            return Err(Error::usage(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                params.len()
            )));
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(&mut l.biases) {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    fn check_input(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.input_dim() {
            return Err(Error::usage(format!(
                "expected {} features, got {}",
                self.input_dim(),
                features.len()
            )));
        }
        Ok(())
    }

    /// One Q value per action.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        self.forward_into(features, &mut out, &mut Vec::new())?;
        Ok(out)
    }

    /// As [`forward`](Self::forward), writing into `out` and reusing both
    /// buffers' allocations.
    pub fn forward_into(&self, features: &[f64], out: &mut Vec<f64>, scratch: &mut Vec<f64>) -> Result<()> {
        self.check_input(features)?;
        out.clear();
        out.extend_from_slice(features);
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            l.affine(out, scratch);
            if i < last {
                scratch.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            core::mem::swap(out, scratch);
        }
        Ok(())
    }

    /// Gradient of `upstream * Q(features)[action]` with respect to every
    /// parameter.
    pub fn gradient(&self, features: &[f64], action: usize, upstream: f64) -> Result<Gradient> {
        let mut grad = Gradient::zeros_like(self);
        self.accumulate_gradient(features, action, upstream, &mut grad)?;
        Ok(grad)
    }

    /// Adds the gradient of `upstream * Q(features)[action]` into `grad`.
    pub fn accumulate_gradient(&self, features: &[f64], action: usize, upstream: f64, grad: &mut Gradient) -> Result<()> {
        self.check_input(features)?;
        if action >= self.num_actions() {
            return Err(Error::usage(format!("action {action} out of range")));
        }
        if !shapes_match(&self.layers, &grad.layers) {
            return Err(Error::usage("gradient shape does not match network"));
        }

        // activations[i] is the input of layer i.
        let last = self.layers.len() - 1;
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        activations.push(features.to_vec());
        for l in &self.layers[..last] {
            let mut y = Vec::with_capacity(l.outputs);
            l.affine(activations.last().expect("non-empty"), &mut y);
            y.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            activations.push(y);
        }

        // Back-propagate d(upstream * Q[action]) / d(pre-activation).
        let mut delta = vec![0.0; self.num_actions()];
        delta[action] = upstream;
        for i in (0..=last).rev() {
            let layer = &self.layers[i];
            let input = &activations[i];
            let g = &mut grad.layers[i];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.biases[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(input).for_each(|(w, x)| *w += d * x);
            }
            if i == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
            }
            for (p, &y) in prev.iter_mut().zip(input) {
                *p *= self.activation.derivative_from_output(y);
            }
            delta = prev;
        }
        Ok(())
    }

    /// Plain SGD step `theta <- theta - (learning_rate / batch_size) * grad`.
    pub fn apply_batch_update(&mut self, grad: &Gradient, learning_rate: f64, batch_size: usize) -> Result<()> {
        if !shapes_match(&self.layers, &grad.layers) {
            return Err(Error::usage("gradient shape does not match network"));
        }
        if batch_size == 0 {
            return Err(Error::usage("batch size must be positive"));
        }
        let step = learning_rate / batch_size as f64;
        for (l, g) in self.layers.iter_mut().zip(&grad.layers) {
            l.weights.iter_mut().zip(&g.weights).for_each(|(w, d)| *w -= step * d);
            l.biases.iter_mut().zip(&g.biases).for_each(|(b, d)| *b -= step * d);
        }
        Ok(())
    }

    /// Product of per-layer spectral-norm bounds times the activation's
    /// derivative bound for each hidden layer. Bounds the Lipschitz constant
    /// of every output with respect to the features in the Euclidean norm.
    pub fn lipschitz_upper_bound(&self) -> f64 {
        let hidden = (self.layers.len() - 1) as i32;
        let norms: f64 = self.layers.iter().map(spectral_norm_upper_bound).product();
        norms * libm::pow(self.activation.gradient_bound(), hidden as f64)
    }
}

/// Upper bound on the largest singular value of a layer's weight matrix.
///
/// With `A = W W^T` (or `W^T W`, whichever is smaller) positive
/// semi-definite, `lambda_max(A)^p <= tr(A^p)`. Repeated squaring with trace
/// normalisation gives `tr(A^p)` for `p = 2^30` in log space, so the bound
/// exceeds the true norm by at most a factor `dim^(1 / 2^31)`.
pub fn spectral_norm_upper_bound(layer: &Layer) -> f64 {
    let (rows, cols) = (layer.outputs, layer.inputs);
    let w = &layer.weights;
    let m = rows.min(cols);
    let mut a = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let v: f64 = if rows <= cols {
                (0..cols).map(|k| w[i * cols + k] * w[j * cols + k]).sum()
            } else {
                (0..rows).map(|k| w[k * cols + i] * w[k * cols + j]).sum()
            };
            a[i * m + j] = v;
            a[j * m + i] = v;
        }
    }

    let trace = |x: &[f64]| (0..m).map(|i| x[i * m + i]).sum::<f64>();
    let t0 = trace(&a);
    if !(t0 > 0.0) {
        return 0.0;
    }
    a.iter_mut().for_each(|v| *v /= t0);
    // ln tr(A^p) / p, accumulated as ln t0 + sum_j ln s_j / 2^(j+1).
    let mut log_bound = libm::log(t0);
    let mut weight = 0.5;
    let mut sq = vec![0.0; m * m];
    for _ in 0..TRACE_POWER_SQUARINGS {
        for i in 0..m {
            for j in 0..m {
                sq[i * m + j] = (0..m).map(|k| a[i * m + k] * a[k * m + j]).sum();
            }
        }
        let s = trace(&sq);
        if !(s > 0.0) {
            break;
        }
        log_bound += weight * libm::log(s);
        weight *= 0.5;
        core::mem::swap(&mut a, &mut sq);
        a.iter_mut().for_each(|v| *v /= s);
    }
    libm::sqrt(libm::exp(log_bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = QNetwork::zeros(&[2, 8, 4], Activation::Tanh).unwrap();
        assert_eq!(net.forward(&[0.3, -1.2]).unwrap(), vec![0.0; 4]);
        assert_eq!(net.lipschitz_upper_bound(), 0.0);
    }

    #[test]
    fn identity_linear_layer_pads_and_truncates() {
        let mut wide = Layer::zeros(2, 3);
        wide.weights = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let net = QNetwork::from_layers(vec![wide], Activation::Identity).unwrap();
        assert_eq!(net.forward(&[0.25, 0.75]).unwrap(), vec![0.25, 0.75, 0.0]);

        let mut narrow = Layer::zeros(3, 2);
        narrow.weights = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let net = QNetwork::from_layers(vec![narrow], Activation::Identity).unwrap();
        assert_eq!(net.forward(&[0.25, 0.75, 9.0]).unwrap(), vec![0.25, 0.75]);
    }

    #[test]
    fn forward_is_deterministic() {
        let a = QNetwork::random(&[2, 32, 32, 4], Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = QNetwork::random(&[2, 32, 32, 4], Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let x = [0.37, 0.81];
        let ya = a.forward(&x).unwrap();
        let yb = b.forward(&x).unwrap();
        assert!(ya.iter().zip(&yb).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn dimension_mismatch_is_usage_error() {
        let net = QNetwork::zeros(&[2, 4], Activation::Tanh).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Usage(_))));
        assert!(matches!(net.gradient(&[1.0, 2.0], 4, 1.0), Err(Error::Usage(_))));
        let other = QNetwork::zeros(&[2, 5], Activation::Tanh).unwrap();
        let mut net = net;
        assert!(net.apply_batch_update(&Gradient::zeros_like(&other), 0.1, 1).is_err());
    }

    #[test]
    fn inconsistent_layers_rejected() {
        assert!(QNetwork::from_layers(vec![Layer::zeros(2, 3), Layer::zeros(4, 1)], Activation::Tanh).is_err());
        let mut bad = Layer::zeros(2, 2);
        bad.weights[0] = f64::NAN;
        assert!(QNetwork::from_layers(vec![bad], Activation::Tanh).is_err());
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let net = QNetwork::random(&[2, 6, 3], Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(net.gradient(&[0.2, 0.4], 1, 0.0).unwrap().is_zero());
    }

    #[test]
    fn linear_gradient_is_features() {
        let net = QNetwork::random(&[3, 2], Activation::Identity, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let x = [0.5, -1.5, 2.0];
        let g = net.gradient(&x, 1, 1.0).unwrap();
        assert_eq!(&g.layers[0].weights[3..6], &x);
        assert_eq!(&g.layers[0].weights[0..3], &[0.0; 3]);
        assert_eq!(g.layers[0].biases, vec![0.0, 1.0]);
    }

    #[test]
    fn update_rules() {
        let mut net = QNetwork::random(&[1, 1], Activation::Identity, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let before = net.parameters();
        net.apply_batch_update(&Gradient::zeros_like(&net), 0.1, 1).unwrap();
        assert_eq!(net.parameters(), before);

        let mut g = Gradient::zeros_like(&net);
        g.layers[0].weights[0] = 2.0;
        net.apply_batch_update(&g, 0.1, 1).unwrap();
        assert!((net.parameters()[0] - (before[0] - 0.2)).abs() < 1e-15);
    }

    #[test]
    fn update_descends_convex_loss() {
        // loss(w) = 0.5 (w x - y)^2 for a one-parameter linear model.
        let mut layer = Layer::zeros(1, 1);
        layer.weights[0] = 3.0;
        let mut net = QNetwork::from_layers(vec![layer], Activation::Identity).unwrap();
        let (x, y) = (0.7, -1.0);
        let loss = |n: &QNetwork| 0.5 * (n.forward(&[x]).unwrap()[0] - y).powi(2);
        let before = loss(&net);
        let residual = net.forward(&[x]).unwrap()[0] - y;
        let g = net.gradient(&[x], 0, residual).unwrap();
        net.apply_batch_update(&g, 0.05, 1).unwrap();
        assert!(loss(&net) < before);
    }

    #[test]
    fn batch_scaling_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = QNetwork::random(&[2, 5, 3], Activation::Tanh, &mut rng).unwrap();
        let g = net.gradient(&[0.1, 0.9], 2, 1.7).unwrap();
        let mut doubled = g.clone();
        doubled.scale(2.0);
        let mut a = net.clone();
        let mut b = net.clone();
        a.apply_batch_update(&g, 0.03, 7).unwrap();
        b.apply_batch_update(&doubled, 0.03, 14).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn snapshot_is_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut live = QNetwork::random(&[2, 4, 2], Activation::Tanh, &mut rng).unwrap();
        let snapshot = live.clone();
        let g = live.gradient(&[0.5, 0.5], 0, 1.0).unwrap();
        live.apply_batch_update(&g, 1.0, 1).unwrap();
        assert_ne!(live, snapshot);
        assert_eq!(snapshot.forward(&[0.5, 0.5]).unwrap(), snapshot.clone().forward(&[0.5, 0.5]).unwrap());
    }

    #[test]
    fn unit_norm_linear_layer() {
        let mut l = Layer::zeros(2, 2);
        l.weights = vec![1.0, 0.0, 0.0, 1.0];
        let net = QNetwork::from_layers(vec![l], Activation::Identity).unwrap();
        assert!((net.lipschitz_upper_bound() - 1.0).abs() < 1e-9);

        let mut row = Layer::zeros(2, 1);
        row.weights = vec![0.6, 0.8];
        assert!((spectral_norm_upper_bound(&row) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_bound_against_known_singular_values() {
        // diag(3, 1) rotated: singular values 3 and 1.
        let (c, s) = (0.6, 0.8);
        let mut l = Layer::zeros(2, 2);
        l.weights = vec![3.0 * c, -s, 3.0 * s, c];
        let bound = spectral_norm_upper_bound(&l);
        assert!(bound >= 3.0 - 1e-12 && bound < 3.0 + 1e-8, "{bound}");
    }
}
