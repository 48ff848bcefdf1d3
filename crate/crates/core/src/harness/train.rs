//! The training loop and its CSV log.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use crate::data::{minibatches, Dataset};
use crate::error::{Error, Result};
use crate::network::{make_sparse_layout, Checkpoint, Connectivity, Network};
use crate::optim::Optimizer;
use crate::outputs::OutputModel;

pub const LOG_HEADER: &str = "epoch,train_nll,train_err,valid_nll,valid_err,wall_s,diverged";

/// A step is treated as diverged once the minibatch loss exceeds this
/// multiple of `max(|initial train NLL|, 1)`.
pub const DIVERGENCE_FACTOR: f64 = 100.0;

const EVAL_CHUNK: usize = 1000;

/// Mean loss and mean error (error rate for classification, summed squared
/// error per sample otherwise).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub nll: f64,
    pub err: f64,
}

impl Evaluation {
    pub const NAN: Evaluation = Evaluation {
        nll: f64::NAN,
        err: f64::NAN,
    };
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train: Evaluation,
    /// NaN when there is no validation set.
    pub valid: Evaluation,
    /// Seconds spent in optimizer steps during the epoch.
    pub wall_s: f64,
    pub diverged: bool,
}

impl EpochRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{}",
            self.epoch,
            self.train.nll,
            self.train.err,
            self.valid.nll,
            self.valid.err,
            self.wall_s,
            u8::from(self.diverged)
        )
    }
}

/// Evaluation before the first step, then one row per epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub initial_train: Evaluation,
    pub initial_valid: Evaluation,
    pub rows: Vec<EpochRow>,
}

impl TrainLog {
    pub fn diverged(&self) -> bool {
        self.rows.iter().any(|r| r.diverged)
    }

    pub fn last(&self) -> Option<&EpochRow> {
        self.rows.last()
    }

    /// Train NLL after `epoch` epochs (0 is the initial evaluation).
    pub fn train_nll(&self, epoch: usize) -> Option<f64> {
        if epoch == 0 {
            return Some(self.initial_train.nll);
        }
        self.rows.get(epoch - 1).map(|r| r.train.nll)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: TrainLog,
    pub network: Network,
    pub model: OutputModel,
}

/// Builds and initializes the network described by `cfg`.
pub fn build_network(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<Network> {
    let num_layers = cfg.arch.len() - 1;
    let connectivity = match cfg.sparsity {
        Some(fan_in) => make_sparse_layout(&cfg.arch, fan_in, rng)?,
        None => Connectivity::dense(num_layers),
    };
    let mut net = Network::new(
        &cfg.arch,
        vec![cfg.activation; num_layers - 1],
        connectivity,
    )?;
    net.init_params(rng);
    net.set_dropout(cfg.input_dropout, cfg.dropout)?;
    Ok(net)
}

/// Dropout-free evaluation over a whole dataset.
pub fn evaluate(net: &Network, model: &OutputModel, ds: &Dataset) -> Result<Evaluation> {
    if ds.is_empty() {
        return Ok(Evaluation::NAN);
    }
    let (mut nll, mut err) = (0.0, 0.0);
    let all: Vec<usize> = (0..ds.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let batch = ds.batch(chunk);
        let out = net.predict(batch.inputs.view())?;
        for (n, t) in batch.targets.iter().enumerate() {
            let y = out.row(n);
            let y = y.as_slice().expect("row-major outputs");
            nll += model.loss(y, *t)?;
            err += model.error(y, *t)?;
        }
    }
    let n = ds.len() as f64;
    Ok(Evaluation {
        nll: nll / n,
        err: err / n,
    })
}

fn open_log(path: Option<&Path>) -> Result<Option<BufWriter<File>>> {
    path.map(|p| -> Result<_> {
        let mut w = BufWriter::new(File::create(p)?);
        writeln!(w, "{LOG_HEADER}")?;
        w.flush()?;
        Ok(w)
    })
    .transpose()
}

/// Trains according to `cfg`, streaming the log to `cfg.log` and saving the
/// final model to `cfg.checkpoint` when set.
pub fn train(cfg: &RunConfig, train_set: &Dataset, valid_set: Option<&Dataset>) -> Result<TrainOutcome> {
    cfg.validate_run()?;
    cfg.check_shapes(train_set)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = build_network(cfg, &mut rng)?;
    let mut model = OutputModel::new(cfg.output, net.output_dim());
    let mut opt = Optimizer::new(cfg.optimizer, net.layout())?;
    if cfg.warmup > 0 {
        let idx: Vec<usize> = (0..cfg.warmup.min(train_set.len())).collect();
        opt.warmup(&net, &model, &train_set.batch(&idx), &mut rng)?;
    }

    let eval_valid = |net: &Network, model: &OutputModel| -> Result<Evaluation> {
        valid_set.map_or(Ok(Evaluation::NAN), |v| evaluate(net, model, v))
    };
    let mut log = TrainLog {
        initial_train: evaluate(&net, &model, train_set)?,
        initial_valid: eval_valid(&net, &model)?,
        rows: Vec::with_capacity(cfg.epochs),
    };
    let limit = DIVERGENCE_FACTOR * log.initial_train.nll.abs().max(1.0);
    let mut sink = open_log(cfg.log.as_deref())?;
    let mut diverged = !log.initial_train.nll.is_finite();

    for epoch in 1..=cfg.epochs {
        let row = if diverged {
            EpochRow {
                epoch,
                train: Evaluation::NAN,
                valid: Evaluation::NAN,
                wall_s: f64::NAN,
                diverged: true,
            }
        } else {
            let start = Instant::now();
            let mut blew_up = false;
            for idx in minibatches(train_set.len(), cfg.batch_size, &mut rng)? {
                let batch = train_set.batch(&idx);
                match opt.step(&mut net, &mut model, &batch, &mut rng) {
                    Ok(r) if r.mean_loss <= limit && net.params().is_finite() => {}
                    Ok(_) | Err(Error::Diverged { .. }) => {
                        blew_up = true;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            let wall_s = start.elapsed().as_secs_f64();
            let (train_eval, valid_eval) = if blew_up {
                (Evaluation::NAN, Evaluation::NAN)
            } else {
                (evaluate(&net, &model, train_set)?, eval_valid(&net, &model)?)
            };
            diverged = blew_up || train_eval.nll.is_nan() || train_eval.nll > limit;
            EpochRow {
                epoch,
                train: train_eval,
                valid: valid_eval,
                wall_s,
                diverged,
            }
        };
        if let Some(w) = &mut sink {
            writeln!(w, "{}", row.csv_line())?;
            w.flush()?;
        }
        log.rows.push(row);
    }

    if let Some(path) = &cfg.checkpoint {
        let ckpt = Checkpoint {
            network: net.clone(),
            log_sigma: model
                .has_learned_variance()
                .then(|| model.log_sigma().expect("gaussian head").to_vec()),
        };
        ckpt.write(BufWriter::new(File::create(path)?))?;
    }
    Ok(TrainOutcome {
        log,
        network: net,
        model,
    })
}

/// Seconds per epoch of optimizer steps only, without evaluation.
pub fn time_epochs(cfg: &RunConfig, train_set: &Dataset) -> Result<Vec<f64>> {
    cfg.validate_run()?;
    cfg.check_shapes(train_set)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = build_network(cfg, &mut rng)?;
    let mut model = OutputModel::new(cfg.output, net.output_dim());
    let mut opt = Optimizer::new(cfg.optimizer, net.layout())?;
    let mut times = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let batches = minibatches(train_set.len(), cfg.batch_size, &mut rng)?;
        let start = Instant::now();
        for idx in batches {
            let batch = train_set.batch(&idx);
            opt.step(&mut net, &mut model, &batch, &mut rng)?;
        }
        times.push(start.elapsed().as_secs_f64());
    }
    Ok(times)
}

impl RunConfig {
    /// Checks that do not need the data files.
    pub(crate) fn validate_run(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch-size must be at least 1".into()));
        }
        Ok(())
    }
}
