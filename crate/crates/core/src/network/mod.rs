//! Feedforward multilayer perceptron.
//!
//! Parameters live in one flat [`ParamVector`] organized as one block per
//! non-input unit: the unit's bias followed by its incoming weights in
//! ascending input order. For a dense layer the layer's slice of the vector
//! is therefore a row-major `units x (1 + fan_in)` matrix whose column 0
//! holds the biases. Sparse layers store only the unmasked weights in their
//! blocks and keep a dense, zero-filled copy for the matrix products.
//!
//! The last layer is linear; the output head (softmax, Gaussian, Bernoulli)
//! is applied by [`crate::outputs::OutputModel`].

mod checkpoint;
mod pass;
mod sparse;

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, CowArray, Ix2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::metric::BlockLayout;
use crate::param::ParamVector;

pub use checkpoint::Checkpoint;
pub use pass::{Deltas, ForwardTrace};
pub use sparse::{make_sparse_layout, Connectivity};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    /// Returns the activation value and its derivative at `z`.
    #[inline]
    pub fn eval(self, z: f64) -> (f64, f64) {
        match self {
            Activation::Sigmoid => {
                let a = 1.0 / (1.0 + (-z).exp());
                (a, a * (1.0 - a))
            }
            Activation::Tanh => {
                let a = z.tanh();
                (a, 1.0 - a * a)
            }
            // derivative at 0 is taken as 0
            Activation::Relu => {
                if z > 0.0 {
                    (z, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Whether dropout is active during a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
struct Layer {
    fan_in: usize,
    units: usize,
    /// Offset of the layer's first block in the parameter vector.
    offset: usize,
    first_block: usize,
    /// Incoming connections per unit, `None` when fully connected.
    inputs: Option<Vec<Vec<usize>>>,
    /// Zero-filled dense weights of a sparse layer, kept in sync with the
    /// parameter vector.
    dense: Option<Array2<f64>>,
}

impl Layer {
    fn param_len(&self) -> usize {
        match &self.inputs {
            None => self.units * (1 + self.fan_in),
            Some(lists) => lists.iter().map(|l| 1 + l.len()).sum(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    layers: Vec<Layer>,
    params: ParamVector,
    layout: BlockLayout,
    /// Dropout rate applied to the activities of layers `0..L-1`
    /// (input and hidden layers).
    dropout: Vec<f64>,
    version: u64,
}

impl Network {
    /// Fully connected network with the same activation on every hidden layer.
    pub fn dense(sizes: &[usize], activation: Activation) -> Result<Self> {
        let hidden = sizes.len().saturating_sub(2);
        Self::new(
            sizes,
            vec![activation; hidden],
            Connectivity::dense(sizes.len().saturating_sub(1)),
        )
    }

    pub fn new(
        sizes: &[usize],
        activations: Vec<Activation>,
        connectivity: Connectivity,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config(
                "a network needs at least an input and an output layer".into(),
            ));
        }
        if sizes.contains(&0) {
            return Err(Error::Config(format!("empty layer in {sizes:?}")));
        }
        let num_layers = sizes.len() - 1;
        if activations.len() != num_layers - 1 {
            return Err(Error::Config(format!(
                "{} hidden layers but {} activations",
                num_layers - 1,
                activations.len()
            )));
        }
        if connectivity.num_layers() != num_layers {
            return Err(Error::Config(format!(
                "connectivity describes {} layers, network has {}",
                connectivity.num_layers(),
                num_layers
            )));
        }

        let mut layers = Vec::with_capacity(num_layers);
        let mut lengths = Vec::new();
        let mut offset = 0;
        for l in 0..num_layers {
            let (fan_in, units) = (sizes[l], sizes[l + 1]);
            let inputs = connectivity.layer(l).map(|lists| lists.to_vec());
            if let Some(lists) = &inputs {
                if lists.len() != units {
                    return Err(Error::Config(format!(
                        "layer {l}: {} connection lists for {units} units",
                        lists.len()
                    )));
                }
                for list in lists {
                    if list.iter().any(|&i| i >= fan_in) || list.windows(2).any(|w| w[0] >= w[1])
                    {
                        return Err(Error::Config(format!(
                            "layer {l}: connection list must be sorted, unique and < {fan_in}"
                        )));
                    }
                }
            }
            let layer = Layer {
                fan_in,
                units,
                offset,
                first_block: lengths.len(),
                dense: inputs.as_ref().map(|_| Array2::zeros((units, fan_in))),
                inputs,
            };
            match &layer.inputs {
                None => lengths.extend(std::iter::repeat_n(1 + fan_in, units)),
                Some(lists) => lengths.extend(lists.iter().map(|l| 1 + l.len())),
            }
            offset += layer.param_len();
            layers.push(layer);
        }
        let layout = BlockLayout::from_lengths(lengths)?;
        debug_assert_eq!(layout.dim(), offset);

        Ok(Self {
            sizes: sizes.to_vec(),
            activations,
            layers,
            params: ParamVector::zeros(offset),
            layout,
            dropout: vec![0.0; num_layers],
            version: 0,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Number of weight layers.
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn connectivity(&self) -> Connectivity {
        Connectivity::from_layers(self.layers.iter().map(|l| l.inputs.clone()).collect())
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    /// Bumped on every parameter write; traces remember the value they saw.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn dropout(&self) -> &[f64] {
        &self.dropout
    }

    /// Sets the dropout rate of the input layer and of every hidden layer.
    pub fn set_dropout(&mut self, input: f64, hidden: f64) -> Result<()> {
        for p in [input, hidden] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
            }
        }
        self.dropout = (0..self.layers.len())
            .map(|l| if l == 0 { input } else { hidden })
            .collect();
        Ok(())
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        crate::error::check_len("parameter vector", self.params.len(), params.len())?;
        self.params = params;
        self.touch();
        Ok(())
    }

    /// Mutates the parameters in place.
    pub fn update_params<F: FnOnce(&mut [f64])>(&mut self, f: F) {
        f(&mut self.params);
        self.touch();
    }

    fn touch(&mut self) {
        self.version += 1;
        for layer in &mut self.layers {
            if let (Some(lists), Some(dense)) = (&layer.inputs, &mut layer.dense) {
                let mut p = layer.offset;
                for (j, list) in lists.iter().enumerate() {
                    p += 1;
                    for &i in list {
                        dense[[j, i]] = self.params[p];
                        p += 1;
                    }
                }
            }
        }
    }

    /// Global index of the bias of `unit` in weight layer `layer`.
    pub fn bias_index(&self, layer: usize, unit: usize) -> usize {
        let l = &self.layers[layer];
        self.layout.blocks()[l.first_block + unit].start
    }

    /// Global index of the weight from `input` to `unit`, `None` if masked.
    pub fn weight_index(&self, layer: usize, unit: usize, input: usize) -> Option<usize> {
        let l = &self.layers[layer];
        let start = self.bias_index(layer, unit);
        match &l.inputs {
            None => (input < l.fan_in).then_some(start + 1 + input),
            Some(lists) => lists[unit]
                .binary_search(&input)
                .ok()
                .map(|k| start + 1 + k),
        }
    }

    /// Scaled-uniform initialization: weights in `(-a, a)` with
    /// `a = sqrt(6 / (fan_in + fan_out))` over unmasked connections, biases 0.
    pub fn init_params<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for layer in &self.layers {
            let conns = layer.param_len() - layer.units;
            let fan_in = conns as f64 / layer.units as f64;
            let fan_out = conns as f64 / layer.fan_in as f64;
            let a = (6.0 / (fan_in + fan_out)).sqrt();
            let mut p = layer.offset;
            for j in 0..layer.units {
                let n = match &layer.inputs {
                    None => layer.fan_in,
                    Some(lists) => lists[j].len(),
                };
                self.params[p] = 0.0;
                for w in &mut self.params[p + 1..p + 1 + n] {
                    *w = rng.random_range(-a..a);
                }
                p += 1 + n;
            }
        }
        self.touch();
    }

    /// Biases and weights of a layer as `(units,)` and `(units, fan_in)` arrays.
    fn layer_weights(&self, l: usize) -> (ndarray::Array1<f64>, CowArray<'_, f64, Ix2>) {
        let layer = &self.layers[l];
        match &layer.dense {
            None => {
                let m = self.layer_view(l);
                (m.column(0).to_owned(), CowArray::from(m.slice_move(s![.., 1..])))
            }
            Some(dense) => {
                let bias = (0..layer.units)
                    .map(|j| self.params[self.bias_index(l, j)])
                    .collect();
                (bias, CowArray::from(dense.view()))
            }
        }
    }

    /// Dense layer's parameter slice viewed as `units x (1 + fan_in)`.
    fn layer_view(&self, l: usize) -> ArrayView2<'_, f64> {
        let layer = &self.layers[l];
        let len = layer.param_len();
        ArrayView2::from_shape(
            (layer.units, 1 + layer.fan_in),
            &self.params[layer.offset..layer.offset + len],
        )
        .expect("dense layer shape")
    }

    fn layer_view_mut<'a>(&self, l: usize, buf: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        let layer = &self.layers[l];
        let len = layer.param_len();
        ArrayViewMut2::from_shape(
            (layer.units, 1 + layer.fan_in),
            &mut buf[layer.offset..layer.offset + len],
        )
        .expect("dense layer shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_has_one_block_per_unit() {
        let net = Network::dense(&[3, 4, 2], Activation::Tanh).unwrap();
        assert_eq!(net.layout().num_blocks(), 6);
        assert_eq!(net.num_params(), 4 * 4 + 2 * 5);
        assert!(net.layout().blocks()[..4].iter().all(|b| b.len == 4));
        assert!(net.layout().blocks()[4..].iter().all(|b| b.len == 5));
        assert_eq!(net.bias_index(1, 1), 16 + 5);
        assert_eq!(net.weight_index(1, 1, 3), Some(16 + 5 + 4));
        assert_eq!(net.weight_index(0, 0, 3), None);
    }

    #[test]
    fn rejects_bad_architectures() {
        assert!(Network::dense(&[3], Activation::Tanh).is_err());
        assert!(Network::dense(&[3, 0, 2], Activation::Tanh).is_err());
        assert!(Network::new(&[3, 4, 2], vec![], Connectivity::dense(2)).is_err());
        let mut net = Network::dense(&[3, 4, 2], Activation::Tanh).unwrap();
        assert!(net.set_dropout(0.0, 1.0).is_err());
        assert!(net.set_params(ParamVector::zeros(3)).is_err());
    }

    #[test]
    fn init_zeroes_biases_and_bounds_weights() {
        let mut net = Network::dense(&[50, 30, 10], Activation::Sigmoid).unwrap();
        net.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        for l in 0..2 {
            let (fan_in, fan_out) = (net.sizes()[l] as f64, net.sizes()[l + 1] as f64);
            let a = (6.0 / (fan_in + fan_out)).sqrt();
            for j in 0..net.sizes()[l + 1] {
                assert_eq!(net.params()[net.bias_index(l, j)], 0.0);
                for i in 0..net.sizes()[l] {
                    let w = net.params()[net.weight_index(l, j, i).unwrap()];
                    assert!(w.abs() < a);
                }
            }
        }
    }

    #[test]
    fn init_weight_variance_matches_uniform_law() {
        let mut net = Network::dense(&[100, 100, 2], Activation::Sigmoid).unwrap();
        net.init_params(&mut ChaCha8Rng::seed_from_u64(7));
        let a: f64 = (6.0f64 / 200.0).sqrt();
        let ws: Vec<f64> = (0..100)
            .flat_map(|j| (0..100).map(move |i| (j, i)))
            .map(|(j, i)| net.params()[net.weight_index(0, j, i).unwrap()])
            .collect();
        assert_eq!(ws.len(), 10_000);
        let var = ws.iter().map(|w| w * w).sum::<f64>() / ws.len() as f64;
        let expected = a * a / 3.0;
        assert!((var / expected - 1.0).abs() < 0.1, "{var} vs {expected}");
    }

    #[test]
    fn activation_values() {
        assert_eq!(Activation::Sigmoid.eval(0.0), (0.5, 0.25));
        assert_eq!(Activation::Tanh.eval(0.0), (0.0, 1.0));
        assert_eq!(Activation::Relu.eval(0.0), (0.0, 0.0));
        assert_eq!(Activation::Relu.eval(2.0), (2.0, 1.0));
        assert_eq!("tanh".parse::<Activation>().unwrap(), Activation::Tanh);
        assert!("softplus".parse::<Activation>().is_err());
    }
}
