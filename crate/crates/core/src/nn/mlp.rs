use std::sync::atomic::{AtomicU64, Ordering};

use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative; ReLU uses 0 at exactly z = 0.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// out × in
    pub weights: Matrix,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, biases: Vec<f64>, activation: Activation) -> Result<Self> {
        if biases.len() != weights.rows() {
            return Err(Error::validation(format!(
                "bias length {} does not match {} weight rows",
                biases.len(),
                weights.rows()
            )));
        }
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::validation("layer dimensions must be positive"));
        }
        Ok(Self {
            weights,
            biases,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }
}

static NEXT_NETWORK_ID: AtomicU64 = AtomicU64::new(1);

/// Stack of dense layers. Every parameter update bumps `revision`, which
/// lets [`Mlp::backward`] reject caches from an older forward pass.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    id: u64,
    revision: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Per-layer inputs and pre-activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
    network_id: u64,
    revision: u64,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::rows)
    }

    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre_activations
    }

    /// Smallest |z| over hidden ReLU pre-activations; finite-difference
    /// checks are unreliable when this is below the step size.
    pub fn min_kink_distance(&self, mlp: &Mlp) -> f64 {
        self.pre_activations
            .iter()
            .zip(mlp.layers())
            .filter(|(_, l)| l.activation == Activation::Relu)
            .flat_map(|(z, _)| z.as_slice().iter())
            .fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

/// Loss gradients shaped like the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerGradients {
                    weights: Matrix::zeros(l.output_dim(), l.input_dim()),
                    biases: vec![0.0; l.output_dim()],
                })
                .collect(),
        }
    }

    /// Flat views in the order `W0, b0, W1, b1, ...`, matching
    /// [`Mlp::parameters_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|g| [g.weights.as_slice(), g.biases.as_slice()])
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Mlp {
    /// Glorot-uniform weights in ±sqrt(6 / (fan_in + fan_out)), zero biases.
    pub fn init(dims: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::validation(format!(
                "need at least input and output dims, got {dims:?}"
            )));
        }
        if activations.len() != dims.len() - 1 {
            return Err(Error::validation(format!(
                "{} activations given for {} layers",
                activations.len(),
                dims.len() - 1
            )));
        }
        if let Some(k) = dims.iter().position(|&d| d == 0) {
            return Err(Error::validation(format!("dims[{k}] must be positive")));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .enumerate()
            .map(|(k, (w, &act))| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new(-limit, limit);
                let mut rng = stream_rng(seed, stream::INIT_WEIGHTS, k as u64);
                let values = (0..fan_in * fan_out)
                    .map(|_| dist.sample(&mut rng))
                    .collect();
                DenseLayer::new(
                    Matrix::from_vec(fan_out, fan_in, values)?,
                    vec![0.0; fan_out],
                    act,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::validation("network needs at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[1].input_dim() != pair[0].output_dim() {
                return Err(Error::validation(format!(
                    "layer {} expects {} inputs but layer {k} produces {}",
                    k + 1,
                    pair[1].input_dim(),
                    pair[0].output_dim()
                )));
            }
        }
        Ok(Self {
            layers,
            id: NEXT_NETWORK_ID.fetch_add(1, Ordering::Relaxed),
            revision: 0,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(DenseLayer::output_dim));
        dims
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.biases.len())
            .sum()
    }

    /// Mutable flat views `W0, b0, W1, b1, ...`. Invalidates outstanding
    /// forward caches.
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.revision += 1;
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.biases.as_mut_slice()])
            .collect()
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::validation(format!(
                "input has {} columns, network expects {}",
                inputs.cols(),
                self.input_dim()
            )));
        }
        let batch = inputs.rows();
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre_activations: Vec::with_capacity(self.layers.len()),
            network_id: self.id,
            revision: self.revision,
        };
        let mut current = inputs.clone();
        for layer in &self.layers {
            let mut z = Matrix::zeros(batch, layer.output_dim());
            for r in 0..batch {
                let x = current.row(r);
                let out = z.row_mut(r);
                for (o, zo) in out.iter_mut().enumerate() {
                    let w = layer.weights.row(o);
                    *zo = layer.biases[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            let mut a = z.clone();
            a.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = layer.activation.apply(*v));
            cache.inputs.push(std::mem::replace(&mut current, a));
            cache.pre_activations.push(z);
        }
        Ok((current, cache))
    }

    /// Forward pass without keeping a cache.
    pub fn predict(&self, inputs: &Matrix) -> Result<Matrix> {
        self.forward(inputs).map(|(out, _)| out)
    }

    /// Reverse-mode gradients of a loss whose gradient with respect to the
    /// network output is `loss_grad`.
    pub fn backward(&self, cache: &ForwardCache, loss_grad: &Matrix) -> Result<Gradients> {
        if cache.network_id != self.id || cache.revision != self.revision {
            return Err(Error::validation(
                "forward cache is stale: it was produced by another network or before a parameter update",
            ));
        }
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::validation(
                "forward cache layer count does not match the network",
            ));
        }
        let batch = cache.batch_size();
        if loss_grad.shape() != (batch, self.output_dim()) {
            return Err(Error::validation(format!(
                "loss gradient is {:?}, expected {:?}",
                loss_grad.shape(),
                (batch, self.output_dim())
            )));
        }

        let mut grads = Gradients::zeros_like(self);
        let mut upstream = loss_grad.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre_activations[k];
            let x = &cache.inputs[k];
            let mut dz = upstream;
            for (d, &zv) in dz.as_mut_slice().iter_mut().zip(z.as_slice()) {
                *d *= layer.activation.derivative(zv);
            }
            let g = &mut grads.layers[k];
            for r in 0..batch {
                let xr = x.row(r);
                for (o, &d) in dz.row(r).iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    g.biases[o] += d;
                    for (w, &xi) in g.weights.row_mut(o).iter_mut().zip(xr) {
                        *w += d * xi;
                    }
                }
            }
            if k == 0 {
                break;
            }
            let mut dx = Matrix::zeros(batch, layer.input_dim());
            for r in 0..batch {
                let dzr = dz.row(r).to_vec();
                let out = dx.row_mut(r);
                for (o, &d) in dzr.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (acc, &w) in out.iter_mut().zip(layer.weights.row(o)) {
                        *acc += d * w;
                    }
                }
            }
            upstream = dx;
        }
        Ok(grads)
    }
}

/// Mean squared error over every entry, and its gradient 2(pred − target)/count.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if pred.shape() != target.shape() {
        return Err(Error::validation(format!(
            "prediction shape {:?} does not match target shape {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let count = pred.as_slice().len();
    if count == 0 {
        return Err(Error::validation("mse of an empty batch is undefined"));
    }
    let n = count as f64;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    let mut sum = 0.0;
    for ((g, &p), &t) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(pred.as_slice())
        .zip(target.as_slice())
    {
        let e = p - t;
        sum += e * e;
        *g = 2.0 * e / n;
    }
    Ok((sum / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng};

    fn full_net(t: usize) -> Mlp {
        use Activation::*;
        Mlp::init(&[3, 64, 128, t], &[Relu, Relu, Identity], 0).unwrap()
    }

    #[test]
    fn full_parameter_count() {
        // 3·64+64 + 64·128+128 + 128·100+100
        assert_eq!(full_net(100).parameter_count(), 256 + 8320 + 12900);
        assert_eq!(full_net(100).parameter_count(), 21476);
        assert_eq!(full_net(100).dims(), vec![3, 64, 128, 100]);
    }

    #[test]
    fn init_biases_zero_and_weights_bounded() {
        let net = full_net(100);
        assert!(net
            .layers()
            .iter()
            .all(|l| l.biases.iter().all(|&b| b == 0.0)));
        let small = Mlp::init(&[3, 64], &[Activation::Relu], 5).unwrap();
        let bound = (6.0f64 / 67.0).sqrt();
        assert!(small.layers()[0]
            .weights
            .as_slice()
            .iter()
            .all(|w| w.abs() <= bound));
        assert_eq!(Mlp::init(&[3, 64], &[Activation::Relu], 5).unwrap(), small);
        assert_ne!(Mlp::init(&[3, 64], &[Activation::Relu], 6).unwrap(), small);
    }

    #[test]
    fn init_rejects_bad_shapes() {
        assert!(Mlp::init(&[3], &[], 0).is_err());
        assert!(Mlp::init(&[3, 4], &[Activation::Relu, Activation::Relu], 0).is_err());
        assert!(Mlp::init(&[3, 0, 2], &[Activation::Relu, Activation::Relu], 0).is_err());
        let a = DenseLayer::new(Matrix::zeros(4, 3), vec![0.0; 4], Activation::Relu).unwrap();
        let b = DenseLayer::new(Matrix::zeros(2, 5), vec![0.0; 2], Activation::Relu).unwrap();
        assert!(Mlp::from_layers(vec![a, b]).unwrap_err().is_validation());
        assert!(DenseLayer::new(Matrix::zeros(2, 2), vec![0.0; 3], Activation::Relu).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let layers = vec![
            DenseLayer::new(Matrix::zeros(4, 3), vec![0.0; 4], Activation::Relu).unwrap(),
            DenseLayer::new(Matrix::zeros(2, 4), vec![0.0; 2], Activation::Identity).unwrap(),
        ];
        let net = Mlp::from_layers(layers).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.0]]).unwrap();
        assert!(net
            .predict(&x)
            .unwrap()
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_inputs() {
        let layer =
            DenseLayer::new(Matrix::identity(3), vec![0.0; 3], Activation::Identity).unwrap();
        let net = Mlp::from_layers(vec![layer]).unwrap();
        let x = Matrix::from_rows(&[[1.5, -2.0, 0.25], [0.0, 7.0, -1.0]]).unwrap();
        assert_eq!(net.predict(&x).unwrap(), x);
    }

    #[test]
    fn hand_evaluated_relu_unit() {
        let w = Matrix::from_rows(&[[1.0, -1.0]]).unwrap();
        let net = Mlp::from_layers(vec![
            DenseLayer::new(w, vec![-0.5], Activation::Relu).unwrap()
        ])
        .unwrap();
        let out = net
            .predict(&Matrix::from_rows(&[[2.0, 1.0]]).unwrap())
            .unwrap();
        assert_eq!(out.as_slice(), &[0.5]);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = full_net(10);
        assert!(net
            .forward(&Matrix::zeros(2, 4))
            .unwrap_err()
            .is_validation());
    }

    #[test]
    fn mse_examples() {
        let p = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let t = Matrix::zeros(1, 2);
        let (loss, grad) = mse_loss(&p, &t).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(grad.as_slice(), &[1.0, 1.0]);
        let (zero, g0) = mse_loss(&p, &p).unwrap();
        assert_eq!(zero, 0.0);
        assert!(g0.as_slice().iter().all(|&g| g == 0.0));
        assert!(mse_loss(&p, &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn zero_loss_grad_gives_zero_gradients() {
        let net = full_net(7);
        let x = Matrix::from_rows(&[[0.3, -1.0, 2.0], [1.0, 1.0, 0.1]]).unwrap();
        let (_, cache) = net.forward(&x).unwrap();
        let grads = net.backward(&cache, &Matrix::zeros(2, 7)).unwrap();
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn dead_relu_unit_has_zero_incoming_gradient() {
        use Activation::*;
        let mut net = Mlp::init(&[2, 3, 1], &[Relu, Identity], 1).unwrap();
        // Hidden unit 1 with bias −100 stays below zero for these inputs.
        net.parameters_mut()[1][1] = -100.0;
        let x = Matrix::from_rows(&[[0.5, -0.5], [1.0, 0.2], [-0.3, 0.9]]).unwrap();
        let (out, cache) = net.forward(&x).unwrap();
        let (_, g) = mse_loss(&out, &Matrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap()).unwrap();
        let grads = net.backward(&cache, &g).unwrap();
        assert!(grads.layers[0].weights.row(1).iter().all(|&v| v == 0.0));
        assert_eq!(grads.layers[0].biases[1], 0.0);
        assert!(grads.max_abs() > 0.0);
    }

    #[test]
    fn stale_and_foreign_caches_rejected() {
        let mut net = full_net(5);
        let x = Matrix::from_rows(&[[0.3, -1.0, 2.0]]).unwrap();
        let (_, cache) = net.forward(&x).unwrap();
        let other = full_net(5);
        assert!(other
            .backward(&cache, &Matrix::zeros(1, 5))
            .unwrap_err()
            .is_validation());
        assert!(net.backward(&cache, &Matrix::zeros(2, 5)).is_err());
        net.parameters_mut();
        assert!(net
            .backward(&cache, &Matrix::zeros(1, 5))
            .unwrap_err()
            .is_validation());
    }

    /// Central-difference gradient of the MSE loss, independent of `backward`.
    fn numeric_gradients(net: &Mlp, x: &Matrix, y: &Matrix, h: f64) -> Vec<Vec<f64>> {
        let mut probe = net.clone();
        let lens: Vec<usize> = probe.parameters_mut().iter().map(|s| s.len()).collect();
        let mut out = Vec::new();
        for (t, &len) in lens.iter().enumerate() {
            let mut g = vec![0.0; len];
            for (i, gi) in g.iter_mut().enumerate() {
                let orig = probe.parameters_mut()[t][i];
                probe.parameters_mut()[t][i] = orig + h;
                let plus = mse_loss(&probe.predict(x).unwrap(), y).unwrap().0;
                probe.parameters_mut()[t][i] = orig - h;
                let minus = mse_loss(&probe.predict(x).unwrap(), y).unwrap().0;
                probe.parameters_mut()[t][i] = orig;
                *gi = (plus - minus) / (2.0 * h);
            }
            out.push(g);
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn backward_matches_finite_differences(
            seed in any::<u64>(),
            hidden1 in 1usize..=8,
            hidden2 in 1usize..=8,
            out in 1usize..=5,
            batch in 1usize..=4,
        ) {
            use Activation::*;
            let net = Mlp::init(&[3, hidden1, hidden2, out], &[Relu, Relu, Identity], seed).unwrap();
            let mut rng = Rng::seed_from_u64(seed ^ 0xabc);
            let x = Matrix::from_vec(batch, 3, (0..batch * 3).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
            let y = Matrix::from_vec(batch, out, (0..batch * out).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
            let (pred, cache) = net.forward(&x).unwrap();
            prop_assume!(cache.min_kink_distance(&net) > 1e-4);
            let (_, g) = mse_loss(&pred, &y).unwrap();
            let analytic = net.backward(&cache, &g).unwrap();
            let numeric = numeric_gradients(&net, &x, &y, 1e-5);
            for (a, n) in analytic.slices().iter().zip(&numeric) {
                for (&av, &nv) in a.iter().zip(n) {
                    let rel = (av - nv).abs() / av.abs().max(nv.abs()).max(1e-6);
                    prop_assert!(rel <= 1e-4, "analytic {} numeric {}", av, nv);
                }
            }
        }

        #[test]
        fn mse_is_nonnegative_and_homogeneous(
            vals in proptest::collection::vec(-5.0f64..5.0, 6),
            c in -3.0f64..3.0,
        ) {
            let p = Matrix::from_vec(2, 3, vals.clone()).unwrap();
            let t = Matrix::zeros(2, 3);
            let (l, _) = mse_loss(&p, &t).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, vals.iter().all(|&v| v == 0.0));
            let scaled = Matrix::from_vec(2, 3, vals.iter().map(|v| c * v).collect()).unwrap();
            let (ls, _) = mse_loss(&scaled, &t).unwrap();
            prop_assert!((ls - c * c * l).abs() <= 1e-12 * (1.0 + ls.abs()));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let net = full_net(100);
        let x = Matrix::from_rows(&[[1.0, 0.0, 0.01], [-1.2, 0.4, 5.0]]).unwrap();
        let a = net.predict(&x).unwrap();
        let b = net.predict(&x).unwrap();
        let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
