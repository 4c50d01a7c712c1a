//! Dense feedforward networks with explicit reverse-mode gradients.
//!
//! Everything is batched: a batch is a `(rows, features)` matrix, one sample
//! per row. The activation is applied between layers but never after the
//! last one, so a single-layer network is a plain affine map.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            other => Err(Error::invalid(format!(
                "unknown activation '{other}' (expected relu or gelu)"
            ))),
        }
    }

    pub fn value(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => {
                let s = GELU_C * (x + GELU_A * x * x * x);
                0.5 * x * (1.0 + s.tanh())
            }
        }
    }

    /// Derivative at `x`; the ReLU kink at zero takes the left value 0.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let s = GELU_C * (x + GELU_A * x * x * x);
                let t = s.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            }
        }
    }
}

/// tanh-form GELU constants.
const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// One affine layer `y = W x + b`, weight stored `(outputs, inputs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::dimension(format!(
                "layer weight has {} rows but bias has {} entries",
                weight.nrows(),
                bias.len()
            )));
        }
        Ok(DenseLayer { weight, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

/// A feedforward network: affine layers with `activation` between them.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
}

impl MlpNetwork {
    pub fn new(layers: Vec<DenseLayer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer".to_string()));
        }
        for i in 1..layers.len() {
            if layers[i].inputs() != layers[i - 1].outputs() {
                return Err(Error::dimension(format!(
                    "layer {} expects {} inputs but layer {} produces {}",
                    i,
                    layers[i].inputs(),
                    i - 1,
                    layers[i - 1].outputs()
                )));
            }
        }
        Ok(MlpNetwork { layers, activation })
    }

    /// Xavier-uniform weights, zero biases, for the layer widths in `dims`.
    pub fn xavier<R: Rng>(dims: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid(
                "need at least input and output widths".to_string(),
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("layer widths must be positive".to_string()));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            layers.push(DenseLayer {
                weight: xavier_matrix(fan_out, fan_in, rng),
                bias: Array1::zeros(fan_out),
            });
        }
        MlpNetwork::new(layers, activation)
    }

    /// The identity map on `dim` features, as a single affine layer.
    pub fn identity(dim: usize) -> Self {
        MlpNetwork {
            layers: vec![DenseLayer {
                weight: Array2::eye(dim),
                bias: Array1::zeros(dim),
            }],
            activation: Activation::Relu,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    pub fn forward(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        let row = x
            .clone()
            .into_shape_with_order((1, x.len()))
            .expect("1 x n reshape");
        Ok(self.forward_batch(&row)?.row(0).to_owned())
    }

    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut a = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut pre = a.dot(&layer.weight.t()) + &layer.bias;
            if i != last {
                pre.mapv_inplace(|v| self.activation.value(v));
            }
            a = pre;
        }
        Ok(a)
    }

    /// Forward pass that keeps what the backward pass needs.
    pub fn forward_cache(&self, x: &Array2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(last);
        let mut a = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = a.dot(&layer.weight.t()) + &layer.bias;
            inputs.push(a);
            if i != last {
                let mut post = pre.clone();
                post.mapv_inplace(|v| self.activation.value(v));
                preacts.push(pre);
                a = post;
            } else {
                a = pre;
            }
        }
        Ok((a, MlpCache { inputs, preacts }))
    }

    /// Accumulates parameter gradients for `d_out = dL/d(output)` and returns
    /// `dL/d(input)`. The cache must come from `forward_cache` on this
    /// network with unchanged parameters.
    pub fn backward(
        &self,
        cache: &MlpCache,
        d_out: Array2<f64>,
        grads: &mut MlpGrads,
    ) -> Array2<f64> {
        assert_eq!(cache.inputs.len(), self.layers.len(), "stale cache");
        let last = self.layers.len() - 1;
        let mut d_post = d_out;
        for i in (0..self.layers.len()).rev() {
            let d_pre = if i == last {
                d_post
            } else {
                let mut d = d_post;
                Zip::from(&mut d)
                    .and(&cache.preacts[i])
                    .for_each(|g, &p| *g *= self.activation.derivative(p));
                d
            };
            grads.weights[i] = &grads.weights[i] + &d_pre.t().dot(&cache.inputs[i]);
            grads.biases[i] = &grads.biases[i] + &d_pre.sum_axis(Axis(0));
            d_post = d_pre.dot(&self.layers[i].weight);
        }
        d_post
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dimension(format!(
                "network expects {} inputs, batch has {} columns",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }
}

fn xavier_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let mut w = Array2::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let v: f64 = rng.random();
            w[[r, c]] = limit * (2.0 * v - 1.0);
        }
    }
    w
}

/// Xavier-uniform matrix with an explicit shape, for non-layer parameters.
pub fn xavier_init<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    xavier_matrix(rows, cols, rng)
}

/// Intermediate values from a cached forward pass.
#[derive(Debug)]
pub struct MlpCache {
    /// Input to each layer; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer (the last layer has none).
    preacts: Vec<Array2<f64>>,
}

/// Parameter gradients with the same shapes as the network's layers.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpGrads {
    pub fn zeros(net: &MlpNetwork) -> Self {
        MlpGrads {
            weights: net
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weight.raw_dim()))
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| Array1::zeros(l.bias.raw_dim()))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// relu(x) + relu(-x) = |x|.
    fn abs_net() -> MlpNetwork {
        MlpNetwork::new(
            vec![
                DenseLayer::new(array![[1.0], [-1.0]], Array1::zeros(2)).unwrap(),
                DenseLayer::new(array![[1.0, 1.0]], Array1::zeros(1)).unwrap(),
            ],
            Activation::Relu,
        )
        .unwrap()
    }

    #[test]
    fn identity_network_is_the_identity() {
        let net = MlpNetwork::identity(3);
        let x = array![1.5, -2.0, 0.25];
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn relu_two_layer_net_computes_abs() {
        let net = abs_net();
        assert_eq!(net.forward(&array![2.0]).unwrap(), array![2.0]);
        assert_eq!(net.forward(&array![-3.0]).unwrap(), array![3.0]);
        assert_eq!(net.forward(&array![0.0]).unwrap(), array![0.0]);
    }

    #[test]
    fn batch_forward_matches_per_sample_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = MlpNetwork::xavier(&[3, 8, 8, 2], Activation::Gelu, &mut rng).unwrap();
        let batch = array![[0.1, -0.4, 2.0], [1.0, 1.0, 1.0], [-3.0, 0.0, 0.5]];
        let out = net.forward_batch(&batch).unwrap();
        for i in 0..3 {
            let single = net.forward(&batch.row(i).to_owned()).unwrap();
            assert_abs_diff_eq!(
                out.row(i).to_owned().as_slice().unwrap(),
                single.as_slice().unwrap(),
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn xavier_weights_stay_in_limit_and_are_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = MlpNetwork::xavier(&[4, 6, 2], Activation::Relu, &mut rng).unwrap();
        for layer in &net.layers {
            let limit = (6.0 / (layer.inputs() + layer.outputs()) as f64).sqrt();
            assert!(layer.weight.iter().all(|w| w.abs() <= limit));
            assert!(layer.bias.iter().all(|&b| b == 0.0));
        }
        let mut rng2 = ChaCha8Rng::seed_from_u64(9);
        let net2 = MlpNetwork::xavier(&[4, 6, 2], Activation::Relu, &mut rng2).unwrap();
        assert_eq!(net, net2);
    }

    #[test]
    fn rejects_mismatched_layer_chains() {
        let bad = MlpNetwork::new(
            vec![
                DenseLayer::new(Array2::zeros((4, 2)), Array1::zeros(4)).unwrap(),
                DenseLayer::new(Array2::zeros((1, 3)), Array1::zeros(1)).unwrap(),
            ],
            Activation::Relu,
        );
        assert!(bad.is_err());
        assert!(DenseLayer::new(Array2::zeros((2, 2)), Array1::zeros(3)).is_err());
    }

    /// Central finite differences over every parameter of a small net,
    /// against the analytic gradient of L = sum(f(x)).
    #[test]
    fn backward_matches_finite_differences() {
        for activation in [Activation::Gelu, Activation::Relu] {
            let mut rng = ChaCha8Rng::seed_from_u64(33);
            let mut net = MlpNetwork::xavier(&[2, 5, 4, 3], activation, &mut rng).unwrap();
            let batch = array![[0.31, -0.77], [1.21, 0.45], [-0.92, 0.13]];

            let mut grads = MlpGrads::zeros(&net);
            let (out, cache) = net.forward_cache(&batch).unwrap();
            net.backward(&cache, Array2::ones(out.raw_dim()), &mut grads);

            let h = 1e-6;
            let loss = |net: &MlpNetwork| net.forward_batch(&batch).unwrap().sum();
            for li in 0..net.layers.len() {
                for idx in 0..net.layers[li].weight.len() {
                    let (r, c) = (idx / net.layers[li].weight.ncols(), idx % net.layers[li].weight.ncols());
                    let orig = net.layers[li].weight[[r, c]];
                    net.layers[li].weight[[r, c]] = orig + h;
                    let up = loss(&net);
                    net.layers[li].weight[[r, c]] = orig - h;
                    let down = loss(&net);
                    net.layers[li].weight[[r, c]] = orig;
                    let fd = (up - down) / (2.0 * h);
                    assert_abs_diff_eq!(grads.weights[li][[r, c]], fd, epsilon = 1e-6);
                }
                for bi in 0..net.layers[li].bias.len() {
                    let orig = net.layers[li].bias[bi];
                    net.layers[li].bias[bi] = orig + h;
                    let up = loss(&net);
                    net.layers[li].bias[bi] = orig - h;
                    let down = loss(&net);
                    net.layers[li].bias[bi] = orig;
                    let fd = (up - down) / (2.0 * h);
                    assert_abs_diff_eq!(grads.biases[li][bi], fd, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn backward_propagates_input_gradients() {
        let net = abs_net();
        let batch = array![[2.0], [-3.0]];
        let (out, cache) = net.forward_cache(&batch).unwrap();
        let mut grads = MlpGrads::zeros(&net);
        let d_in = net.backward(&cache, Array2::ones(out.raw_dim()), &mut grads);
        // d|x|/dx is the sign of x away from zero.
        assert_eq!(d_in, array![[1.0], [-1.0]]);
    }
}
