use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};

/// Per weight layer, the sorted incoming connections of every unit, or
/// `None` for a fully connected layer.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Connectivity {
    layers: Vec<Option<Vec<Vec<usize>>>>,
}

impl Connectivity {
    pub fn dense(num_layers: usize) -> Self {
        Self {
            layers: vec![None; num_layers],
        }
    }

    pub fn from_layers(layers: Vec<Option<Vec<Vec<usize>>>>) -> Self {
        Self { layers }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, l: usize) -> Option<&[Vec<usize>]> {
        self.layers[l].as_deref()
    }

    pub fn is_dense(&self) -> bool {
        self.layers.iter().all(Option::is_none)
    }

    /// Row-major `units x fan_in` mask of layer `l`.
    pub fn mask(&self, l: usize, fan_in: usize, units: usize) -> Vec<bool> {
        match &self.layers[l] {
            None => vec![true; units * fan_in],
            Some(lists) => {
                let mut m = vec![false; units * fan_in];
                for (j, list) in lists.iter().enumerate() {
                    for &i in list {
                        m[j * fan_in + i] = true;
                    }
                }
                m
            }
        }
    }
}

/// Random sparse connectivity: every hidden unit draws `fan_in` distinct
/// inputs uniformly from the previous layer. The output layer stays fully
/// connected, as does any layer whose previous layer has exactly `fan_in`
/// units.
pub fn make_sparse_layout<R: Rng + ?Sized>(
    sizes: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Result<Connectivity> {
    if sizes.len() < 2 {
        return Err(Error::Config("need at least two layers".into()));
    }
    if fan_in == 0 {
        return Err(Error::Config("sparse fan-in must be at least 1".into()));
    }
    let num_layers = sizes.len() - 1;
    let mut layers = Vec::with_capacity(num_layers);
    for l in 0..num_layers {
        let prev = sizes[l];
        if l + 1 == num_layers {
            layers.push(None);
            continue;
        }
        if fan_in > prev {
            return Err(Error::Config(format!(
                "fan-in {fan_in} exceeds the {prev} units of layer {l}"
            )));
        }
        if fan_in == prev {
            layers.push(None);
            continue;
        }
        let lists = (0..sizes[l + 1])
            .map(|_| {
                let mut picked = sample(rng, prev, fan_in).into_vec();
                picked.sort_unstable();
                picked
            })
            .collect();
        layers.push(Some(lists));
    }
    Ok(Connectivity { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Network};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DEEP: [usize; 10] = [784, 2560, 1280, 640, 320, 160, 80, 40, 20, 10];

    #[test]
    fn full_fan_in_is_dense() {
        let c = make_sparse_layout(&[5, 5, 5, 2], 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(c.is_dense());
    }

    #[test]
    fn deep_sparse_architecture_parameter_count() {
        let c = make_sparse_layout(&DEEP, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let net = Network::new(&DEEP, vec![Activation::Sigmoid; 8], c).unwrap();
        assert_eq!(net.num_params(), 56310);
        assert!(net.layout().blocks()[..5100].iter().all(|b| b.len == 11));
        assert!(net.layout().blocks()[5100..].iter().all(|b| b.len == 21));
    }

    #[test]
    fn every_hidden_unit_gets_exactly_fan_in_distinct_inputs() {
        let sizes = [30, 20, 12, 4];
        let c = make_sparse_layout(&sizes, 6, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for l in 0..2 {
            for list in c.layer(l).unwrap() {
                assert_eq!(list.len(), 6);
                assert!(list.windows(2).all(|w| w[0] < w[1]));
                assert!(list.iter().all(|&i| i < sizes[l]));
            }
        }
        assert!(c.layer(2).is_none());
        let m = c.mask(0, 30, 20);
        assert_eq!(m.iter().filter(|&&b| b).count(), 120);
    }

    #[test]
    fn seeded_layout_is_reproducible() {
        let a = make_sparse_layout(&[40, 20, 5], 4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = make_sparse_layout(&[40, 20, 5], 4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oversized_fan_in_is_rejected() {
        let r = make_sparse_layout(&[4, 8, 2], 5, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
