//! Output heads: log-loss, backprop seeds, pseudo-targets and exact Fisher
//! terms.
//!
//! The network's last layer is linear and produces `y`. Each head maps `y`
//! to a distribution over targets:
//!
//! - categorical: softmax probabilities, `y` are logits;
//! - Gaussian: mean `y`, per-unit standard deviation `sigma_k` (fixed or
//!   learned through `log sigma_k`, floored at 1/256);
//! - Bernoulli: means `sigmoid(y)`, clamped to `[1e-7, 1 - 1e-7]`.
//!
//! All gradients and seeds are taken with respect to `y`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_len, Error, Result};

/// Lower bound on learned Gaussian standard deviations (8-bit quantization).
pub const SIGMA_FLOOR: f64 = 1.0 / 256.0;
/// Bernoulli means are kept inside `[delta, 1 - delta]`.
pub const BERNOULLI_CLAMP: f64 = 1e-7;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    Values(Vec<f64>),
}

impl Target {
    pub fn as_ref(&self) -> TargetRef<'_> {
        match self {
            Target::Class(c) => TargetRef::Class(*c),
            Target::Values(v) => TargetRef::Values(v),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TargetRef<'a> {
    Class(usize),
    Values(&'a [f64]),
}

/// One weighted rank-one contribution `weight * (J seed)(J seed)^T` to the
/// per-sample Fisher matrix, `J` being the Jacobian of `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherTerm {
    pub seed: Vec<f64>,
    pub weight: f64,
}

/// Head kind as named on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputKind {
    Categorical,
    Gaussian,
    GaussianLearned,
    Bernoulli,
}

impl OutputKind {
    pub fn name(self) -> &'static str {
        match self {
            OutputKind::Categorical => "categorical",
            OutputKind::Gaussian => "gaussian",
            OutputKind::GaussianLearned => "gaussian-learned",
            OutputKind::Bernoulli => "bernoulli",
        }
    }
}

impl fmt::Display for OutputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OutputKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "categorical" => Ok(OutputKind::Categorical),
            "gaussian" => Ok(OutputKind::Gaussian),
            "gaussian-learned" => Ok(OutputKind::GaussianLearned),
            "bernoulli" => Ok(OutputKind::Bernoulli),
            other => Err(Error::Config(format!("unknown output model `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OutputModel {
    Categorical { classes: usize },
    Gaussian { log_sigma: Vec<f64>, learned: bool },
    Bernoulli { units: usize },
}

impl OutputModel {
    /// Head of the given kind over `dim` outputs; Gaussian heads start at
    /// unit variance.
    pub fn new(kind: OutputKind, dim: usize) -> Self {
        match kind {
            OutputKind::Categorical => OutputModel::Categorical { classes: dim },
            OutputKind::Gaussian => OutputModel::Gaussian {
                log_sigma: vec![0.0; dim],
                learned: false,
            },
            OutputKind::GaussianLearned => OutputModel::Gaussian {
                log_sigma: vec![0.0; dim],
                learned: true,
            },
            OutputKind::Bernoulli => OutputModel::Bernoulli { units: dim },
        }
    }

    /// Gaussian head with fixed standard deviations.
    pub fn gaussian_fixed(sigma: &[f64]) -> Result<Self> {
        if let Some(s) = sigma.iter().find(|&&s| !(s >= SIGMA_FLOOR && s.is_finite())) {
            return Err(Error::Config(format!(
                "standard deviation {s} below the floor {SIGMA_FLOOR}"
            )));
        }
        Ok(OutputModel::Gaussian {
            log_sigma: sigma.iter().map(|s| s.ln()).collect(),
            learned: false,
        })
    }

    pub fn kind(&self) -> OutputKind {
        match self {
            OutputModel::Categorical { .. } => OutputKind::Categorical,
            OutputModel::Gaussian { learned: false, .. } => OutputKind::Gaussian,
            OutputModel::Gaussian { learned: true, .. } => OutputKind::GaussianLearned,
            OutputModel::Bernoulli { .. } => OutputKind::Bernoulli,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            OutputModel::Categorical { classes } => *classes,
            OutputModel::Gaussian { log_sigma, .. } => log_sigma.len(),
            OutputModel::Bernoulli { units } => *units,
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, OutputModel::Categorical { .. })
    }

    pub fn has_learned_variance(&self) -> bool {
        matches!(self, OutputModel::Gaussian { learned: true, .. })
    }

    /// Standard deviation of Gaussian output `k` (1 for other heads).
    pub fn sigma(&self, k: usize) -> f64 {
        match self {
            OutputModel::Gaussian { log_sigma, .. } => log_sigma[k].exp(),
            _ => 1.0,
        }
    }

    pub fn log_sigma(&self) -> Option<&[f64]> {
        match self {
            OutputModel::Gaussian { log_sigma, .. } => Some(log_sigma),
            _ => None,
        }
    }

    pub fn set_log_sigma(&mut self, values: &[f64]) -> Result<()> {
        match self {
            OutputModel::Gaussian { log_sigma, .. } => {
                check_len("log sigma", log_sigma.len(), values.len())?;
                for (s, v) in log_sigma.iter_mut().zip(values) {
                    *s = v.max(SIGMA_FLOOR.ln());
                }
                Ok(())
            }
            _ => Err(Error::Config("only Gaussian heads carry variances".into())),
        }
    }

    /// Predicted mean: class probabilities, Gaussian means or Bernoulli means.
    pub fn mean(&self, y: &[f64]) -> Vec<f64> {
        match self {
            OutputModel::Categorical { .. } => softmax(y),
            OutputModel::Gaussian { .. } => y.to_vec(),
            OutputModel::Bernoulli { .. } => y.iter().map(|&z| bernoulli_mean(z)).collect(),
        }
    }

    fn check(&self, y: &[f64], t: TargetRef<'_>) -> Result<()> {
        check_len("output width", self.dim(), y.len())?;
        match (self, t) {
            (OutputModel::Categorical { classes }, TargetRef::Class(c)) => {
                if c >= *classes {
                    return Err(Error::InvalidTarget(format!(
                        "class {c} out of range for {classes} classes"
                    )));
                }
            }
            (OutputModel::Categorical { .. }, TargetRef::Values(_)) => {
                return Err(Error::InvalidTarget(
                    "categorical head needs a class index".into(),
                ))
            }
            (_, TargetRef::Class(_)) => {
                return Err(Error::InvalidTarget(
                    "regression head needs a target vector".into(),
                ))
            }
            (OutputModel::Bernoulli { .. }, TargetRef::Values(v)) => {
                check_len("target width", self.dim(), v.len())?;
                if v.iter().any(|t| !(0.0..=1.0).contains(t)) {
                    return Err(Error::InvalidTarget(
                        "Bernoulli targets must lie in [0, 1]".into(),
                    ));
                }
            }
            (OutputModel::Gaussian { .. }, TargetRef::Values(v)) => {
                check_len("target width", self.dim(), v.len())?;
            }
        }
        Ok(())
    }

    /// Negative log-likelihood `-ln p(t | y)`.
    pub fn loss(&self, y: &[f64], t: TargetRef<'_>) -> Result<f64> {
        self.check(y, t)?;
        Ok(match (self, t) {
            (OutputModel::Categorical { .. }, TargetRef::Class(c)) => log_sum_exp(y) - y[c],
            (OutputModel::Gaussian { log_sigma, .. }, TargetRef::Values(t)) => y
                .iter()
                .zip(t)
                .zip(log_sigma)
                .map(|((y, t), ls)| {
                    let r = (y - t) * (-ls).exp();
                    0.5 * r * r + ls + 0.5 * LN_2PI
                })
                .sum(),
            (OutputModel::Bernoulli { .. }, TargetRef::Values(t)) => y
                .iter()
                .zip(t)
                .map(|(&z, &t)| {
                    let m = bernoulli_mean(z);
                    -(t * m.ln() + (1.0 - t) * (1.0 - m).ln())
                })
                .sum(),
            _ => unreachable!("checked above"),
        })
    }

    /// Derivative of the loss with respect to `y`.
    pub fn loss_output_grad(&self, y: &[f64], t: TargetRef<'_>) -> Result<Vec<f64>> {
        let mut g = vec![0.0; y.len()];
        self.loss_output_grad_into(y, t, &mut g)?;
        Ok(g)
    }

    pub fn loss_output_grad_into(&self, y: &[f64], t: TargetRef<'_>, out: &mut [f64]) -> Result<()> {
        self.check(y, t)?;
        check_len("gradient buffer", y.len(), out.len())?;
        match (self, t) {
            (OutputModel::Categorical { .. }, TargetRef::Class(c)) => {
                softmax_into(y, out);
                out[c] -= 1.0;
            }
            (OutputModel::Gaussian { log_sigma, .. }, TargetRef::Values(t)) => {
                for k in 0..y.len() {
                    out[k] = (y[k] - t[k]) * (-2.0 * log_sigma[k]).exp();
                }
            }
            (OutputModel::Bernoulli { .. }, TargetRef::Values(t)) => {
                // derivative of the unclamped log-loss in the logit
                for k in 0..y.len() {
                    out[k] = sigmoid(y[k]) - t[k];
                }
            }
            _ => unreachable!("checked above"),
        }
        Ok(())
    }

    /// Draws a pseudo-target from `p(. | y)`.
    pub fn sample_pseudo_target<R: Rng + ?Sized>(&self, y: &[f64], rng: &mut R) -> Target {
        match self {
            OutputModel::Categorical { .. } => {
                let p = softmax(y);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (k, pk) in p.iter().enumerate() {
                    acc += pk;
                    if u < acc {
                        return Target::Class(k);
                    }
                }
                // rounding left u above the cumulative sum; take the last
                // class with positive mass
                Target::Class(p.iter().rposition(|&pk| pk > 0.0).unwrap_or(p.len() - 1))
            }
            OutputModel::Gaussian { log_sigma, .. } => Target::Values(
                y.iter()
                    .zip(log_sigma)
                    .map(|(y, ls)| {
                        let xi: f64 = StandardNormal.sample(rng);
                        y + ls.exp() * xi
                    })
                    .collect(),
            ),
            OutputModel::Bernoulli { .. } => Target::Values(
                y.iter()
                    .map(|&z| {
                        let u: f64 = rng.random();
                        if u < bernoulli_mean(z) {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            ),
        }
    }

    /// Exact decomposition of the per-sample Fisher matrix into `dim()`
    /// weighted rank-one seeds.
    pub fn enumerate_fisher_terms(&self, y: &[f64]) -> Vec<FisherTerm> {
        let k = y.len();
        match self {
            OutputModel::Categorical { .. } => {
                let p = softmax(y);
                (0..k)
                    .map(|c| {
                        let mut seed = p.clone();
                        seed[c] -= 1.0;
                        FisherTerm { seed, weight: p[c] }
                    })
                    .collect()
            }
            OutputModel::Gaussian { log_sigma, .. } => (0..k)
                .map(|j| FisherTerm {
                    seed: unit_vector(k, j, 1.0),
                    weight: (-2.0 * log_sigma[j]).exp(),
                })
                .collect(),
            OutputModel::Bernoulli { .. } => (0..k)
                .map(|j| {
                    // seed is d(mean)/dy, weight the inverse Bernoulli variance
                    let m = bernoulli_mean(y[j]);
                    let var = m * (1.0 - m);
                    FisherTerm {
                        seed: unit_vector(k, j, var),
                        weight: 1.0 / var,
                    }
                })
                .collect(),
        }
    }

    /// Gradient of the loss with respect to `log sigma` (zero unless the head
    /// learns its variances).
    pub fn log_sigma_grad(&self, y: &[f64], t: TargetRef<'_>) -> Result<Vec<f64>> {
        self.check(y, t)?;
        match (self, t) {
            (
                OutputModel::Gaussian {
                    log_sigma,
                    learned: true,
                },
                TargetRef::Values(t),
            ) => Ok(y
                .iter()
                .zip(t)
                .zip(log_sigma)
                .map(|((y, t), ls)| {
                    let r = (y - t) * (-ls).exp();
                    1.0 - r * r
                })
                .collect()),
            _ => Ok(vec![0.0; self.log_sigma().map_or(0, <[f64]>::len)]),
        }
    }

    /// Plain gradient step on `log sigma` followed by projection onto
    /// `sigma >= 1/256`. No-op for heads without learned variances.
    pub fn step_log_sigma(&mut self, grad: &[f64], eta: f64) {
        if let OutputModel::Gaussian {
            log_sigma,
            learned: true,
        } = self
        {
            let floor = SIGMA_FLOOR.ln();
            for (s, g) in log_sigma.iter_mut().zip(grad) {
                *s = (*s - eta * g).max(floor);
            }
        }
    }

    /// Misclassification (0 or 1) for the categorical head, squared
    /// reconstruction error summed over outputs otherwise.
    pub fn error(&self, y: &[f64], t: TargetRef<'_>) -> Result<f64> {
        self.check(y, t)?;
        Ok(match t {
            TargetRef::Class(c) => {
                let best = argmax(y);
                if best == c {
                    0.0
                } else {
                    1.0
                }
            }
            TargetRef::Values(t) => self
                .mean(y)
                .iter()
                .zip(t)
                .map(|(m, t)| (m - t) * (m - t))
                .sum(),
        })
    }
}

fn unit_vector(n: usize, k: usize, value: f64) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = value;
    v
}

fn argmax(y: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in y.iter().enumerate() {
        if v > y[best] {
            best = k;
        }
    }
    best
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn bernoulli_mean(z: f64) -> f64 {
    sigmoid(z).clamp(BERNOULLI_CLAMP, 1.0 - BERNOULLI_CLAMP)
}

fn log_sum_exp(y: &[f64]) -> f64 {
    let m = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + y.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(y: &[f64]) -> Vec<f64> {
    let mut p = vec![0.0; y.len()];
    softmax_into(y, &mut p);
    p
}

fn softmax_into(y: &[f64], out: &mut [f64]) {
    let m = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, v) in out.iter_mut().zip(y) {
        *o = (v - m).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}
