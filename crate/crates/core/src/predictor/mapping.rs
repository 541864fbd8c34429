//! The mapping network: identity feature → shape code.
//!
//! Three fully-connected hidden layers with ReLU and a linear output layer.
//! Backpropagation is hand-written; [`crate::predictor::grad_check`] validates
//! it against finite differences.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// out × in.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl DenseLayer {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: DMatrix::zeros(output, input),
            bias: DVector::zeros(output),
        }
    }

    pub fn uniform(input: usize, output: usize, bound: f64, rng: &mut impl Rng) -> Self {
        Self {
            weight: DMatrix::from_fn(output, input, |_, _| rng.random_range(-bound..bound)),
            bias: DVector::zeros(output),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Gradients with the same shapes as the layers they refer to.
#[derive(Debug, Clone)]
pub struct NetGradients {
    pub layers: Vec<DenseLayer>,
}

impl NetGradients {
    fn zeros_like(net: &MappingNetwork) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.weight.ncols(), l.weight.nrows()))
                .collect(),
        }
    }

    pub fn add(&mut self, other: &NetGradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight *= s;
            l.bias *= s;
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

/// Per-layer inputs and pre-activations of one forward pass, kept for the
/// backward pass.
pub struct ForwardTrace {
    inputs: Vec<DVector<f64>>,
    preacts: Vec<DVector<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &DVector<f64> {
        // The final layer is linear, so its pre-activation is the output.
        self.preacts.last().expect("trace is never empty")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingNetwork {
    layers: Vec<DenseLayer>,
}

impl MappingNetwork {
    /// He-style initialization for the ReLU stack, seeded by the caller.
    pub fn new(input_dim: usize, hidden_dim: usize, output_dim: usize, rng: &mut impl Rng) -> Self {
        let dims = [input_dim, hidden_dim, hidden_dim, hidden_dim, output_dim];
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = (6.0 / w[0] as f64).sqrt();
                DenseLayer::uniform(w[0], w[1], bound, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        let dims = [input_dim, hidden_dim, hidden_dim, hidden_dim, output_dim];
        Self {
            layers: dims.windows(2).map(|w| DenseLayer::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.len() != 4 {
            return Err(Error::invalid(format!(
                "mapping network has 4 layers, got {}",
                layers.len()
            )));
        }
        for pair in layers.windows(2) {
            if pair[1].weight.ncols() != pair[0].weight.nrows() {
                return Err(Error::invalid("adjacent mapping layers have mismatched widths"));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.nrows()
    }

    pub fn forward(&self, feature: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.forward_trace(feature)?.output().clone())
    }

    pub fn forward_trace(&self, feature: &DVector<f64>) -> Result<ForwardTrace> {
        if feature.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "identity feature",
                expected: self.input_dim(),
                actual: feature.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut x = feature.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let p = &layer.weight * &x + &layer.bias;
            inputs.push(x);
            x = if i < last { p.map(|v| v.max(0.0)) } else { p.clone() };
            preacts.push(p);
        }
        Ok(ForwardTrace { inputs, preacts })
    }

    /// Backward pass: given dL/dz at the output, returns parameter gradients.
    /// The ReLU subgradient at exactly zero is taken as zero.
    pub fn backward(&self, trace: &ForwardTrace, grad_output: &DVector<f64>) -> NetGradients {
        let mut grads = NetGradients::zeros_like(self);
        let last = self.layers.len() - 1;
        let mut g = grad_output.clone();
        for i in (0..self.layers.len()).rev() {
            if i < last {
                // Gate by this layer's ReLU.
                for (gi, &p) in g.iter_mut().zip(trace.preacts[i].iter()) {
                    if p <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            grads.layers[i].weight = &g * trace.inputs[i].transpose();
            grads.layers[i].bias = g.clone();
            if i > 0 {
                g = self.layers[i].weight.transpose() * g;
            }
        }
        grads
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut offset = 0;
        for layer in &mut self.layers {
            for r in 0..layer.weight.nrows() {
                for c in 0..layer.weight.ncols() {
                    layer.weight[(r, c)] = flat[offset];
                    offset += 1;
                }
            }
            for r in 0..layer.bias.len() {
                layer.bias[r] = flat[offset];
                offset += 1;
            }
        }
    }

    /// Which flat parameters are weights (decayed) vs biases (not decayed).
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            mask.extend(std::iter::repeat_n(true, layer.weight.len()));
            mask.extend(std::iter::repeat_n(false, layer.bias.len()));
        }
        mask
    }
}

fn flatten_layers(layers: &[DenseLayer]) -> Vec<f64> {
    let mut flat = Vec::new();
    for layer in layers {
        for r in 0..layer.weight.nrows() {
            for c in 0..layer.weight.ncols() {
                flat.push(layer.weight[(r, c)]);
            }
        }
        flat.extend(layer.bias.iter());
    }
    flat
}

/// Deterministic forward pass `z = M(f)`.
pub fn map_forward(net: &MappingNetwork, feature: &DVector<f64>) -> Result<DVector<f64>> {
    let z = net.forward(feature)?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mapping network output".into()));
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn zero_network_maps_to_zero() {
        let net = MappingNetwork::zeros(8, 16, 4);
        let f = DVector::from_element(8, 0.7);
        assert_eq!(map_forward(&net, &f).unwrap(), DVector::zeros(4));
    }

    #[test]
    fn identity_initialized_net_passes_non_negative_input_through() {
        // H = D = K, hidden weights = I, ReLU on non-negative input → z = f.
        let d = 6;
        let mut net = MappingNetwork::zeros(d, d, d);
        let flat_len = net.param_count();
        let mut flat = vec![0.0; flat_len];
        net.set_params_flat(&flat);
        // Set each weight matrix to identity.
        let mut offset = 0;
        for _ in 0..4 {
            for r in 0..d {
                for c in 0..d {
                    flat[offset] = if r == c { 1.0 } else { 0.0 };
                    offset += 1;
                }
            }
            offset += d; // biases stay zero
        }
        net.set_params_flat(&flat);
        let f = DVector::from_fn(d, |i, _| i as f64 * 0.25);
        assert_eq!(map_forward(&net, &f).unwrap(), f);
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        // Independent matrix-by-matrix recomputation on random weights.
        let mut rng = StdRng::seed_from_u64(40);
        let net = MappingNetwork::new(5, 7, 3, &mut rng);
        let f = DVector::from_fn(5, |i, _| (i as f64 - 2.0) * 0.3);
        let z = map_forward(&net, &f).unwrap();

        let relu = |v: DVector<f64>| v.map(|x| if x > 0.0 { x } else { 0.0 });
        let l = net.layers();
        let h1 = relu(&l[0].weight * &f + &l[0].bias);
        let h2 = relu(&l[1].weight * h1 + &l[1].bias);
        let h3 = relu(&l[2].weight * h2 + &l[2].bias);
        let oracle = &l[3].weight * h3 + &l[3].bias;
        assert!((z - oracle).amax() < 1e-9);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let net = MappingNetwork::zeros(8, 16, 4);
        assert!(map_forward(&net, &DVector::zeros(7)).is_err());
    }

    #[test]
    fn params_round_trip_through_flat_vector() {
        let mut rng = StdRng::seed_from_u64(41);
        let net = MappingNetwork::new(5, 9, 4, &mut rng);
        let flat = net.params_flat();
        let mut other = MappingNetwork::zeros(5, 9, 4);
        other.set_params_flat(&flat);
        assert_eq!(net, other);
        assert_eq!(flat.len(), net.param_count());
        assert_eq!(net.decay_mask().len(), flat.len());
    }
}
