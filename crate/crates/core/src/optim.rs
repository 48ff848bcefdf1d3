//! SGD, AdaGrad and the Riemannian family {diagonal, quasi-diagonal} x
//! {outer product, Monte Carlo natural, exact natural}.
//!
//! Every step follows the same order: forward and backward pass on the
//! minibatch with the real targets, metric update
//! `M <- (1 - gamma) M + gamma M_minibatch` (with `gamma = 1` on the first
//! minibatch), preconditioned direction `QD(M)^-1 grad`, parameter write.
//! `M_minibatch` averages the per-sample rank-one terms over the minibatch.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::fpenv::FlushSubnormals;
use crate::metric::{BlockLayout, MetricMode, QdMetric, DEFAULT_EPSILON, DEFAULT_GAMMA};
use crate::network::{Deltas, ForwardTrace, Mode, Network};
use crate::outputs::{OutputModel, TargetRef};
use crate::param::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Sgd,
    AdaGrad,
    Dop,
    Qdop,
    DmcNat,
    QdmcNat,
    DNat,
    QdNat,
}

/// Which rank-one terms feed the metric.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricSource {
    /// Gradients of the actual targets.
    OuterProduct,
    /// Gradients of pseudo-targets sampled from the model.
    MonteCarlo,
    /// Exact expectation over pseudo-targets, one backprop per output.
    Exact,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::Sgd,
        Algorithm::AdaGrad,
        Algorithm::Dop,
        Algorithm::Qdop,
        Algorithm::DmcNat,
        Algorithm::QdmcNat,
        Algorithm::DNat,
        Algorithm::QdNat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sgd => "sgd",
            Algorithm::AdaGrad => "adagrad",
            Algorithm::Dop => "dop",
            Algorithm::Qdop => "qdop",
            Algorithm::DmcNat => "dmcnat",
            Algorithm::QdmcNat => "qdmcnat",
            Algorithm::DNat => "dnat",
            Algorithm::QdNat => "qdnat",
        }
    }

    /// Shape of the Riemannian metric, `None` for SGD and AdaGrad.
    pub fn metric_mode(self) -> Option<MetricMode> {
        match self {
            Algorithm::Sgd | Algorithm::AdaGrad => None,
            Algorithm::Dop | Algorithm::DmcNat | Algorithm::DNat => Some(MetricMode::Diagonal),
            Algorithm::Qdop | Algorithm::QdmcNat | Algorithm::QdNat => {
                Some(MetricMode::QuasiDiagonal)
            }
        }
    }

    pub fn metric_source(self) -> Option<MetricSource> {
        match self {
            Algorithm::Sgd => None,
            Algorithm::AdaGrad | Algorithm::Dop | Algorithm::Qdop => {
                Some(MetricSource::OuterProduct)
            }
            Algorithm::DmcNat | Algorithm::QdmcNat => Some(MetricSource::MonteCarlo),
            Algorithm::DNat | Algorithm::QdNat => Some(MetricSource::Exact),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub algo: Algorithm,
    /// Fixed step-size.
    pub eta: f64,
    /// Metric (and AdaGrad accumulator) update rate.
    pub gamma: f64,
    /// Inversion threshold.
    pub epsilon: f64,
    /// Pseudo-targets per sample for the Monte Carlo variants.
    pub n_mc: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            algo: Algorithm::Qdop,
            eta: 0.01,
            gamma: DEFAULT_GAMMA,
            epsilon: DEFAULT_EPSILON,
            n_mc: 1,
        }
    }
}

impl OptimizerConfig {
    pub fn new(algo: Algorithm, eta: f64) -> Self {
        Self {
            algo,
            eta,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("step-size must be > 0, got {}", self.eta)));
        }
        crate::metric::MetricConfig {
            gamma: self.gamma,
            epsilon: self.epsilon,
        }
        .validate()?;
        if self.n_mc == 0 {
            return Err(Error::Config("n_mc must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    /// Riemannian metric, present for the six Riemannian variants.
    pub metric: Option<QdMetric>,
    /// AdaGrad's moving average of squared gradients, stored as a diagonal
    /// metric so it follows exactly the same accumulation as DOP.
    pub adagrad: Option<QdMetric>,
    frozen: bool,
    steps: usize,
}

impl OptimizerState {
    pub fn new(algo: Algorithm, layout: &BlockLayout) -> Self {
        Self {
            metric: algo
                .metric_mode()
                .map(|mode| QdMetric::zeros(layout.clone(), mode)),
            adagrad: (algo == Algorithm::AdaGrad)
                .then(|| QdMetric::zeros(layout.clone(), MetricMode::Diagonal)),
            frozen: false,
            steps: 0,
        }
    }

    pub fn initialized(&self) -> bool {
        self.metric
            .as_ref()
            .or(self.adagrad.as_ref())
            .is_none_or(QdMetric::is_initialized)
    }

    /// Replaces the metric and stops updating it.
    pub fn freeze_metric(&mut self, metric: QdMetric) {
        self.metric = Some(metric);
        self.frozen = true;
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// Summary of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Mean loss of the minibatch before the update.
    pub mean_loss: f64,
    pub grad_norm: f64,
    pub direction_norm: f64,
    pub batch_size: usize,
}

/// A minibatch: inputs one per row, and the matching targets.
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    pub inputs: Array2<f64>,
    pub targets: Vec<TargetRef<'a>>,
}

impl<'a> Batch<'a> {
    pub fn new(inputs: Array2<f64>, targets: Vec<TargetRef<'a>>) -> Result<Self> {
        crate::error::check_len("batch targets", inputs.nrows(), targets.len())?;
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// `params <- params - eta * grad_mean`
pub fn step_sgd(params: &mut [f64], grad_mean: &[f64], eta: f64) {
    for (p, g) in params.iter_mut().zip(grad_mean) {
        *p -= eta * g;
    }
}

/// Single-sample AdaGrad step: the accumulator takes the decayed moving
/// average of `grad^2` (`gamma = 1` on first use), then
/// `params <- params - eta * grad / sqrt(acc + epsilon)`.
pub fn step_adagrad(
    params: &mut [f64],
    grad_mean: &[f64],
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
) -> Result<()> {
    let acc = state
        .adagrad
        .as_mut()
        .ok_or_else(|| Error::Config("optimizer state has no AdaGrad accumulator".into()))?;
    let gamma = if acc.is_initialized() { cfg.gamma } else { 1.0 };
    acc.decay(gamma);
    acc.rank_one_update(grad_mean, gamma)?;
    acc.set_initialized(true);
    let dir = adagrad_direction(acc, grad_mean, cfg.epsilon);
    step_sgd(params, &dir, cfg.eta);
    state.steps += 1;
    Ok(())
}

fn adagrad_direction(acc: &QdMetric, grad: &[f64], epsilon: f64) -> Vec<f64> {
    grad.iter()
        .zip(acc.diag())
        .map(|(g, m)| g / (m + epsilon).sqrt())
        .collect()
}

struct BatchGradient {
    trace: ForwardTrace,
    deltas: Deltas,
    grad_mean: ParamVector,
    log_sigma_grad: Option<Vec<f64>>,
    mean_loss: f64,
}

fn batch_gradient<R: Rng + ?Sized>(
    net: &Network,
    model: &OutputModel,
    batch: &Batch<'_>,
    rng: &mut R,
) -> Result<BatchGradient> {
    if batch.is_empty() {
        return Err(Error::Config("empty minibatch".into()));
    }
    let b = batch.len();
    let trace = net.forward_batch(batch.inputs.view(), Mode::Train, rng)?;
    let mut seeds = Array2::zeros((b, net.output_dim()));
    let mut loss = 0.0;
    let mut ls_grad = model
        .has_learned_variance()
        .then(|| vec![0.0; model.dim()]);
    for (n, t) in batch.targets.iter().enumerate() {
        let y = trace.output_row(n);
        loss += model.loss(y, *t)?;
        let row = seeds.row_mut(n).into_slice().expect("row-major seeds");
        model.loss_output_grad_into(y, *t, row)?;
        if let Some(acc) = &mut ls_grad {
            for (a, g) in acc.iter_mut().zip(model.log_sigma_grad(y, *t)?) {
                *a += g / b as f64;
            }
        }
    }
    let deltas = net.backward(&trace, seeds.view())?;
    let mut grad_mean = ParamVector::zeros(net.num_params());
    net.accumulate_gradient(&trace, &deltas, 1.0 / b as f64, &mut grad_mean);
    Ok(BatchGradient {
        trace,
        deltas,
        grad_mean,
        log_sigma_grad: ls_grad,
        mean_loss: loss / b as f64,
    })
}

/// Adds `scale * sum_n sum_terms alpha QD(v v^T)` to `metric`, with the
/// rank-one terms chosen by `source`.
#[allow(clippy::too_many_arguments)]
fn accumulate_terms<R: Rng + ?Sized>(
    net: &Network,
    model: &OutputModel,
    trace: &ForwardTrace,
    deltas: &Deltas,
    source: MetricSource,
    n_mc: usize,
    scale: f64,
    metric: &mut QdMetric,
    rng: &mut R,
) -> Result<()> {
    let b = trace.batch_size();
    let k = net.output_dim();
    match source {
        MetricSource::OuterProduct => net.accumulate_metric(trace, deltas, None, scale, metric),
        MetricSource::MonteCarlo => {
            let mut seeds = Array2::zeros((b, k));
            for _ in 0..n_mc {
                for n in 0..b {
                    let y = trace.output_row(n);
                    let t = model.sample_pseudo_target(y, rng);
                    let row = seeds.row_mut(n).into_slice().expect("row-major seeds");
                    model.loss_output_grad_into(y, t.as_ref(), row)?;
                }
                let d = net.backward(trace, seeds.view())?;
                net.accumulate_metric(trace, &d, None, scale / n_mc as f64, metric)?;
            }
            Ok(())
        }
        MetricSource::Exact => {
            let terms: Vec<_> = (0..b)
                .map(|n| model.enumerate_fisher_terms(trace.output_row(n)))
                .collect();
            let num_terms = terms.first().map_or(0, Vec::len);
            let mut seeds = Array2::zeros((b, k));
            let mut weights = Array1::zeros(b);
            for j in 0..num_terms {
                for n in 0..b {
                    let term = &terms[n][j];
                    seeds
                        .row_mut(n)
                        .iter_mut()
                        .zip(&term.seed)
                        .for_each(|(s, v)| *s = *v);
                    weights[n] = term.weight;
                }
                let d = net.backward(trace, seeds.view())?;
                net.accumulate_metric(trace, &d, Some(weights.view()), scale, metric)?;
            }
            Ok(())
        }
    }
}

fn check_direction(dir: &[f64], cfg: &OptimizerConfig, state: &OptimizerState) -> Result<()> {
    if dir.iter().all(|d| d.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged {
            eta: cfg.eta,
            step: state.steps,
        })
    }
}

fn write_step(
    net: &mut Network,
    model: &mut OutputModel,
    dir: &[f64],
    bg: &BatchGradient,
    cfg: &OptimizerConfig,
) {
    net.update_params(|p| step_sgd(p, dir, cfg.eta));
    if let Some(g) = &bg.log_sigma_grad {
        // learned variances bypass the metric
        model.step_log_sigma(g, cfg.eta);
    }
}

fn report(bg: &BatchGradient, dir: &[f64], batch: &Batch<'_>) -> StepReport {
    StepReport {
        mean_loss: bg.mean_loss,
        grad_norm: bg.grad_mean.norm(),
        direction_norm: dir.iter().map(|d| d * d).sum::<f64>().sqrt(),
        batch_size: batch.len(),
    }
}

/// One step of a Riemannian variant on a minibatch.
pub fn step_riemann<R: Rng + ?Sized>(
    net: &mut Network,
    model: &mut OutputModel,
    batch: &Batch<'_>,
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
    rng: &mut R,
) -> Result<StepReport> {
    let source = cfg
        .algo
        .metric_source()
        .filter(|_| cfg.algo.metric_mode().is_some())
        .ok_or_else(|| Error::Config(format!("{} is not a Riemannian algorithm", cfg.algo)))?;
    let bg = batch_gradient(net, model, batch, rng)?;
    if !bg.mean_loss.is_finite() {
        return Err(Error::Diverged {
            eta: cfg.eta,
            step: state.steps,
        });
    }
    let frozen = state.frozen;
    let metric = state
        .metric
        .as_mut()
        .ok_or_else(|| Error::Config("optimizer state has no metric".into()))?;
    if !frozen {
        let gamma = if metric.is_initialized() { cfg.gamma } else { 1.0 };
        metric.decay(gamma);
        let scale = gamma / batch.len() as f64;
        accumulate_terms(
            net, model, &bg.trace, &bg.deltas, source, cfg.n_mc, scale, metric, rng,
        )?;
        metric.set_initialized(true);
    }
    let dir = metric.solve(&bg.grad_mean, cfg.epsilon)?;
    check_direction(&dir, cfg, state)?;
    write_step(net, model, &dir, &bg, cfg);
    state.steps += 1;
    Ok(report(&bg, &dir, batch))
}

/// Initializes the metric on `samples` (total weight 1) before any step.
pub fn metric_warmup<R: Rng + ?Sized>(
    state: &mut OptimizerState,
    samples: &Batch<'_>,
    net: &Network,
    model: &OutputModel,
    cfg: &OptimizerConfig,
    rng: &mut R,
) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Config("metric warmup needs at least one sample".into()));
    }
    let source = cfg.algo.metric_source();
    let bg = batch_gradient(net, model, samples, rng)?;
    let scale = 1.0 / samples.len() as f64;
    for m in [state.metric.as_mut(), state.adagrad.as_mut()].into_iter().flatten() {
        m.reset();
        accumulate_terms(
            net,
            model,
            &bg.trace,
            &bg.deltas,
            source.expect("metric implies a source"),
            cfg.n_mc,
            scale,
            m,
            rng,
        )?;
        m.set_initialized(true);
    }
    Ok(())
}

/// An optimizer bound to one network layout.
#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, layout: &BlockLayout) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            state: OptimizerState::new(cfg.algo, layout),
            cfg,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut OptimizerState {
        &mut self.state
    }

    pub fn warmup<R: Rng + ?Sized>(
        &mut self,
        net: &Network,
        model: &OutputModel,
        samples: &Batch<'_>,
        rng: &mut R,
    ) -> Result<()> {
        if self.cfg.algo == Algorithm::Sgd {
            return Ok(());
        }
        let _fp = FlushSubnormals::new();
        metric_warmup(&mut self.state, samples, net, model, &self.cfg, rng)
    }

    pub fn step<R: Rng + ?Sized>(
        &mut self,
        net: &mut Network,
        model: &mut OutputModel,
        batch: &Batch<'_>,
        rng: &mut R,
    ) -> Result<StepReport> {
        let cfg = self.cfg;
        let _fp = FlushSubnormals::new();
        match cfg.algo {
            Algorithm::Sgd | Algorithm::AdaGrad => {
                let bg = batch_gradient(net, model, batch, rng)?;
                if !bg.mean_loss.is_finite() {
                    return Err(Error::Diverged {
                        eta: cfg.eta,
                        step: self.state.steps,
                    });
                }
                let dir = if cfg.algo == Algorithm::AdaGrad {
                    let acc = self.state.adagrad.as_mut().expect("adagrad accumulator");
                    let gamma = if acc.is_initialized() { cfg.gamma } else { 1.0 };
                    acc.decay(gamma);
                    net.accumulate_metric(
                        &bg.trace,
                        &bg.deltas,
                        None,
                        gamma / batch.len() as f64,
                        acc,
                    )?;
                    acc.set_initialized(true);
                    adagrad_direction(acc, &bg.grad_mean, cfg.epsilon)
                } else {
                    bg.grad_mean.to_vec()
                };
                check_direction(&dir, &cfg, &self.state)?;
                write_step(net, model, &dir, &bg, &cfg);
                self.state.steps += 1;
                Ok(report(&bg, &dir, batch))
            }
            _ => step_riemann(net, model, batch, &mut self.state, &cfg, rng),
        }
    }
}

/// Dense inputs for `n` identical-width rows, used by small fixtures.
pub fn batch_from_rows<'a>(rows: &[Vec<f64>], targets: Vec<TargetRef<'a>>) -> Result<Batch<'a>> {
    let width = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let inputs = Array2::from_shape_vec((rows.len(), width), flat)
        .map_err(|e| Error::Config(format!("ragged batch: {e}")))?;
    Batch::new(inputs, targets)
}

/// View helper: mean loss of `model` over the rows of `outputs`.
pub fn mean_loss(model: &OutputModel, outputs: ArrayView2<'_, f64>, targets: &[TargetRef<'_>]) -> Result<f64> {
    let mut total = 0.0;
    for (n, t) in targets.iter().enumerate() {
        let row = outputs.row(n);
        total += model.loss(row.as_slice().expect("row-major outputs"), *t)?;
    }
    Ok(total / targets.len().max(1) as f64)
}
