//! Fully connected feed-forward network: ReLU hidden layers, a linear
//! scalar output, trained by mini-batch gradient descent on mean squared
//! error.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{canonical, ModelSpec};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `(outputs, inputs)`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Gradient of the loss with respect to one [`Dense`] layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
    target_mean: f64,
    target_std: f64,
    /// Full-pass training loss after each epoch (in network units).
    loss_history: Vec<f64>,
}

impl Mlp {
    /// Fresh network with Glorot-uniform weights and zero biases.
    pub fn init(n_inputs: usize, hidden: &[usize], seed: u64) -> Mlp {
        let mut rng = seed::rng(seed::derive(seed, "mlp-init", 0));
        let mut widths = vec![n_inputs];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                // Glorot uniform keeps the per-step change of the output
                // bounded as the hidden width grows, which plain gradient
                // descent needs at the larger learning rates.
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    weights: Array2::from_shape_fn((fan_out, fan_in), |_| {
                        rng.gen_range(-limit..limit)
                    }),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Mlp {
            layers,
            target_mean: 0.0,
            target_std: 1.0,
            loss_history: Vec::new(),
        }
    }

    pub fn n_features(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    /// Raw network output, before the target scaling is undone.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights.t()) + &layer.bias;
            if l != last {
                z.mapv_inplace(relu);
            }
            a = z;
        }
        a.column(0).to_owned()
    }

    /// Mean squared error of the raw output against `y`.
    pub fn loss(&self, x: ArrayView2<f64>, y: ArrayView1<f64>) -> f64 {
        let out = self.forward(x);
        (&out - &y).mapv(|e| e * e).sum() / y.len() as f64
    }

    /// Mean squared error and its gradient with respect to every parameter,
    /// by backpropagation.
    pub fn loss_and_gradient(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView1<f64>,
    ) -> (f64, Vec<DenseGrad>) {
        let n = y.len() as f64;
        let last = self.layers.len() - 1;
        // activations[l] is the input of layer l
        let mut activations = vec![x.to_owned()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let z = activations[l].dot(&layer.weights.t()) + &layer.bias;
            let a = if l == last { z.clone() } else { z.mapv(relu) };
            pre.push(z);
            activations.push(a);
        }
        let residual = &activations[last + 1].column(0) - &y;
        let loss = residual.mapv(|e| e * e).sum() / n;

        let mut delta = (residual * (2.0 / n)).insert_axis(Axis(1));
        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..=last).rev() {
            let g = DenseGrad {
                weights: delta.t().dot(&activations[l]),
                bias: delta.sum_axis(Axis(0)),
            };
            if l > 0 {
                let mut back = delta.dot(&self.layers[l].weights);
                back.zip_mut_with(&pre[l - 1], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
            grads.push(g);
        }
        grads.reverse();
        (loss, grads)
    }

    /// All parameters flattened layer by layer (weights row-major, then bias).
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_params(&mut self, values: &[f64]) {
        let mut it = values.iter().copied();
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = it.next().expect("parameter vector too short");
            }
        }
        assert!(it.next().is_none(), "parameter vector too long");
    }

    /// Gradients flattened in the order of [`Mlp::params`].
    pub fn flatten(grads: &[DenseGrad]) -> Vec<f64> {
        grads
            .iter()
            .flat_map(|g| g.weights.iter().chain(g.bias.iter()).copied())
            .collect()
    }

    fn step(&mut self, grads: &[DenseGrad], lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            layer.weights.scaled_add(-lr, &g.weights);
            layer.bias.scaled_add(-lr, &g.bias);
        }
    }

    pub fn fit(x: ArrayView2<f64>, y: ArrayView1<f64>, spec: &ModelSpec) -> Result<Mlp> {
        spec.validate()?;
        let (x, y) = canonical(x, y);
        let n = x.nrows();
        let mut net = Mlp::init(x.ncols(), &spec.hidden_layers, spec.seed);
        if spec.standardize_target {
            let mean = y.sum() / n as f64;
            let std = (y.mapv(|v| (v - mean) * (v - mean)).sum() / n as f64).sqrt();
            net.target_mean = mean;
            net.target_std = if std > 0.0 { std } else { 1.0 };
        }
        let target = y.mapv(|v| (v - net.target_mean) / net.target_std);

        let mut rng = seed::rng(seed::derive(spec.seed, "mlp-batches", 0));
        let mut order: Vec<usize> = (0..n).collect();
        let batch = spec.batch_size.min(n);
        let mut best = (f64::INFINITY, net.layers.clone());
        let mut since_best = 0;
        for epoch in 0..spec.epochs {
            order.shuffle(&mut rng);
            for (b, chunk) in order.chunks(batch).enumerate() {
                let xb = x.select(Axis(0), chunk);
                let yb = target.select(Axis(0), chunk);
                let (loss, grads) = net.loss_and_gradient(xb.view(), yb.view());
                if !loss.is_finite() {
                    return Err(Error::Diverged(format!(
                        "mlp {:?}: non-finite batch loss at epoch {epoch}, batch {b} (learning rate {})",
                        spec.hidden_layers, spec.learning_rate
                    )));
                }
                net.step(&grads, spec.learning_rate);
            }
            let loss = net.loss(x.view(), target.view());
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "mlp {:?}: non-finite training loss after epoch {epoch} (learning rate {})",
                    spec.hidden_layers, spec.learning_rate
                )));
            }
            net.loss_history.push(loss);
            if loss < best.0 {
                best = (loss, net.layers.clone());
                since_best = 0;
            } else {
                since_best += 1;
                if spec.patience > 0 && since_best >= spec.patience {
                    break;
                }
            }
        }
        net.layers = best.1;
        Ok(net)
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Array1<f64> {
        self.forward(x)
            .mapv(|v| v * self.target_std + self.target_mean)
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}
