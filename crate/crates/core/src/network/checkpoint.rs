//! Plain-text model checkpoints.
//!
//! ```text
//! qdnet-checkpoint 1
//! sizes 784,100,10
//! activations sigmoid
//! dropout 0,0.5
//! sparse <layer> <unit> <input>,<input>,...   (one line per unit of a sparse layer)
//! log_sigma <v>,<v>,...                       (optional, learned Gaussian head)
//! params <count>
//! <value>                                     (count lines, shortest round-trip form)
//! ```

use std::io::{BufRead, Write};

use super::{Activation, Connectivity, Network};
use crate::error::{Error, Result};
use crate::param::ParamVector;

const MAGIC: &str = "qdnet-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub network: Network,
    /// Log standard deviations of a learned-variance Gaussian head.
    pub log_sigma: Option<Vec<f64>>,
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad {what} entry `{x}`")))
        })
        .collect()
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let net = &self.network;
        writeln!(out, "{MAGIC} {VERSION}")?;
        writeln!(out, "sizes {}", join(net.sizes()))?;
        let acts: Vec<&str> = net.activations().iter().map(|a| a.name()).collect();
        writeln!(out, "activations {}", acts.join(","))?;
        writeln!(out, "dropout {}", join(net.dropout()))?;
        let conn = net.connectivity();
        for l in 0..conn.num_layers() {
            if let Some(lists) = conn.layer(l) {
                for (j, list) in lists.iter().enumerate() {
                    writeln!(out, "sparse {l} {j} {}", join(list))?;
                }
            }
        }
        if let Some(ls) = &self.log_sigma {
            writeln!(out, "log_sigma {}", join(ls))?;
        }
        writeln!(out, "params {}", net.num_params())?;
        for p in net.params().iter() {
            writeln!(out, "{p}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::Format("unexpected end of checkpoint".into()))
        };
        let header = next()?;
        if header != format!("{MAGIC} {VERSION}") {
            return Err(Error::Format(format!("not a checkpoint: `{header}`")));
        }
        let mut sizes = None;
        let mut acts = None;
        let mut dropout = None;
        let mut sparse: Vec<(usize, usize, Vec<usize>)> = Vec::new();
        let mut log_sigma = None;
        let count;
        loop {
            let line = next()?;
            let (key, rest) = line.split_once(' ').unwrap_or((line.as_str(), ""));
            match key {
                "sizes" => sizes = Some(parse_list::<usize>(rest, "size")?),
                "activations" => {
                    acts = Some(
                        rest.split(',')
                            .filter(|s| !s.is_empty())
                            .map(str::parse::<Activation>)
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                "dropout" => dropout = Some(parse_list::<f64>(rest, "dropout")?),
                "sparse" => {
                    let mut parts = rest.splitn(3, ' ');
                    let l = parts.next().and_then(|s| s.parse().ok());
                    let j = parts.next().and_then(|s| s.parse().ok());
                    match (l, j) {
                        (Some(l), Some(j)) => {
                            sparse.push((l, j, parse_list(parts.next().unwrap_or(""), "input")?))
                        }
                        _ => return Err(Error::Format(format!("bad sparse line `{line}`"))),
                    }
                }
                "log_sigma" => log_sigma = Some(parse_list::<f64>(rest, "log_sigma")?),
                "params" => {
                    count = rest
                        .parse::<usize>()
                        .map_err(|_| Error::Format(format!("bad params line `{line}`")))?;
                    break;
                }
                _ => return Err(Error::Format(format!("unknown checkpoint key `{key}`"))),
            }
        }
        let sizes = sizes.ok_or_else(|| Error::Format("missing sizes".into()))?;
        let acts = acts.ok_or_else(|| Error::Format("missing activations".into()))?;

        let num_layers = sizes.len().saturating_sub(1);
        let mut layers: Vec<Option<Vec<Vec<usize>>>> = vec![None; num_layers];
        for (l, j, list) in sparse {
            if l >= num_layers {
                return Err(Error::Format(format!("sparse layer {l} out of range")));
            }
            let lists = layers[l].get_or_insert_with(|| vec![Vec::new(); sizes[l + 1]]);
            if j >= lists.len() {
                return Err(Error::Format(format!("sparse unit {j} out of range")));
            }
            lists[j] = list;
        }
        let mut network = Network::new(&sizes, acts, Connectivity::from_layers(layers))?;
        if let Some(d) = dropout {
            if d.len() != network.dropout.len() || d.iter().any(|p| !(0.0..1.0).contains(p)) {
                return Err(Error::Format("bad dropout line".into()));
            }
            network.dropout = d;
        }
        if count != network.num_params() {
            return Err(Error::Format(format!(
                "checkpoint holds {count} parameters, architecture needs {}",
                network.num_params()
            )));
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let line = next()?;
            params.push(
                line.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad parameter `{line}`")))?,
            );
        }
        network.set_params(ParamVector::from(params))?;
        Ok(Self { network, log_sigma })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::make_sparse_layout;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sizes = [12, 8, 6, 3];
        let conn = make_sparse_layout(&sizes, 4, &mut rng).unwrap();
        let mut net = Network::new(&sizes, vec![Activation::Tanh, Activation::Relu], conn).unwrap();
        net.init_params(&mut rng);
        net.set_dropout(0.2, 0.5).unwrap();
        let ck = Checkpoint {
            network: net,
            log_sigma: Some(vec![-1.5, 0.25, 1.0 / 3.0]),
        };
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        let back = Checkpoint::read(buf.as_slice()).unwrap();
        assert_eq!(back.network.params(), ck.network.params());
        assert_eq!(back.network.connectivity(), ck.network.connectivity());
        assert_eq!(back.network.dropout(), ck.network.dropout());
        assert_eq!(back.network.activations(), ck.network.activations());
        assert_eq!(back.log_sigma, ck.log_sigma);
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(Checkpoint::read("hello\n".as_bytes()).is_err());
        let truncated = "qdnet-checkpoint 1\nsizes 2,1\nactivations \nparams 3\n0\n";
        assert!(Checkpoint::read(truncated.as_bytes()).is_err());
    }
}
