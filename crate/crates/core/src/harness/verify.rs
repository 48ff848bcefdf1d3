//! Built-in verification suites with fixed fixtures and seeds.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metric::{BlockLayout, MetricMode, QdMetric};
use crate::network::{Activation, Mode, Network};
use crate::optim::{Algorithm, Batch, Optimizer, OptimizerConfig};
use crate::outputs::{OutputKind, OutputModel, Target};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Gradcheck,
    QdsolveOracle,
    FisherConsistency,
    Invariance,
    OpQuadratic,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Gradcheck,
        Suite::QdsolveOracle,
        Suite::FisherConsistency,
        Suite::Invariance,
        Suite::OpQuadratic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradcheck => "gradcheck",
            Suite::QdsolveOracle => "qdsolve-oracle",
            Suite::FisherConsistency => "fisher-consistency",
            Suite::Invariance => "invariance",
            Suite::OpQuadratic => "op-quadratic",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bound {
    AtMost(f64),
    AtLeast(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: Bound,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self { name: name.into(), value, bound: Bound::AtMost(tol) }
    }

    pub fn at_least(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self { name: name.into(), value, bound: Bound::AtLeast(tol) }
    }

    pub fn passed(&self) -> bool {
        match self.bound {
            Bound::AtMost(t) => self.value <= t,
            Bound::AtLeast(t) => self.value >= t,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (op, t) = match self.bound {
            Bound::AtMost(t) => ("<=", t),
            Bound::AtLeast(t) => (">=", t),
        };
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {:.3e} {op} {:.1e}", self.name, self.value, t)
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[{}]", self.suite.name())?;
        for c in &self.checks {
            writeln!(f, "  {c}")?;
        }
        Ok(())
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteReport> {
    let checks = match suite {
        Suite::Gradcheck => gradcheck(seed)?,
        Suite::QdsolveOracle => qdsolve_oracle(seed)?,
        Suite::FisherConsistency => fisher_consistency(seed)?,
        Suite::Invariance => invariance(seed)?,
        Suite::OpQuadratic => op_quadratic()?,
    };
    Ok(SuiteReport { suite, checks })
}

fn random_inputs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || rng.random_range(0.0..1.0))
}

fn random_targets(model: &OutputModel, n: usize, rng: &mut ChaCha8Rng) -> Vec<Target> {
    let k = model.dim();
    (0..n)
        .map(|_| match model.kind() {
            OutputKind::Categorical => Target::Class(rng.random_range(0..k)),
            OutputKind::Bernoulli => {
                Target::Values((0..k).map(|_| f64::from(rng.random_range(0..2u8))).collect())
            }
            _ => Target::Values((0..k).map(|_| rng.random_range(-1.0..1.0)).collect()),
        })
        .collect()
}

fn total_loss(net: &Network, model: &OutputModel, x: &Array2<f64>, t: &[Target]) -> Result<f64> {
    let y = net.predict(x.view())?;
    let mut s = 0.0;
    for (n, t) in t.iter().enumerate() {
        s += model.loss(y.row(n).as_slice().expect("row-major"), t.as_ref())?;
    }
    Ok(s)
}

/// Backprop against central differences on every parameter of small nets.
fn gradcheck(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let h = 1e-5;
    for act in [Activation::Sigmoid, Activation::Tanh, Activation::Relu] {
        for kind in [OutputKind::Categorical, OutputKind::Gaussian, OutputKind::Bernoulli] {
            let mut net = Network::dense(&[5, 4, 3, 3], act)?;
            net.init_params(&mut rng);
            net.update_params(|p| p.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3)));
            let model = OutputModel::new(kind, 3);
            let x = random_inputs(&mut rng, 4, 5);
            let t = random_targets(&model, 4, &mut rng);

            let trace = net.forward_batch(x.view(), Mode::Eval, &mut rng)?;
            let mut seeds = Array2::zeros((4, 3));
            for (n, t) in t.iter().enumerate() {
                let g = model.loss_output_grad(trace.output_row(n), t.as_ref())?;
                seeds.row_mut(n).assign(&ndarray::ArrayView1::from(&g));
            }
            let grad = net.backprop_batch(&trace, seeds.view())?;

            let mut worst: f64 = 0.0;
            for i in 0..net.num_params() {
                let mut plus = net.clone();
                plus.update_params(|p| p[i] += h);
                let mut minus = net.clone();
                minus.update_params(|p| p[i] -= h);
                let fd = (total_loss(&plus, &model, &x, &t)? - total_loss(&minus, &model, &x, &t)?)
                    / (2.0 * h);
                let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-4);
                worst = worst.max(rel);
            }
            checks.push(Check::at_most(
                format!("{act}/{} max relative error over {} params", kind.name(), net.num_params()),
                worst,
                1e-5,
            ));
        }
    }
    Ok(checks)
}

/// `QD(M)^-1 v` against a 2x2 Cramer solve of every (bias, weight) pair.
fn qdsolve_oracle(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let lens: Vec<usize> = (0..3).map(|_| rng.random_range(2..=6)).collect();
        let layout = BlockLayout::from_lengths(lens)?;
        let mut m = QdMetric::zeros(layout.clone(), MetricMode::QuasiDiagonal);
        for _ in 0..rng.random_range(3..6) {
            let v: Vec<f64> = (0..layout.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            m.rank_one_update(&v, rng.random_range(0.1..1.0))?;
        }
        let v: Vec<f64> = (0..layout.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = m.solve(&v, 0.0)?;
        for b in layout.blocks() {
            let (d, r) = (&m.diag()[b.range()], &m.row()[b.range()]);
            let (vb, wb) = (&v[b.range()], &w[b.range()]);
            let mut w0_rhs = vb[0];
            for i in 1..b.len {
                // [[d0, ri], [ri, di]] (x0, xi) = (v0, vi)
                let det = d[0] * d[i] - r[i] * r[i];
                let xi = (d[0] * vb[i] - r[i] * vb[0]) / det;
                worst = worst.max((wb[i] - xi).abs() / xi.abs().max(1e-12));
                w0_rhs -= r[i] * xi;
            }
            let x0 = w0_rhs / d[0];
            worst = worst.max((wb[0] - x0).abs() / x0.abs().max(1e-12));
        }
    }
    Ok(vec![Check::at_most("1000 random QD systems, max relative error", worst, 1e-8)])
}

/// Exact Fisher terms against Monte Carlo pseudo-target outer products on a
/// 4-2-3 net, entrywise in units of standard error.
fn fisher_consistency(seed: u64) -> Result<Vec<Check>> {
    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let models = [
        OutputModel::new(OutputKind::Categorical, 3),
        OutputModel::gaussian_fixed(&[0.5, 1.0, 2.0])?,
    ];
    for model in models {
        let mut net = Network::dense(&[4, 2, 3], Activation::Tanh)?;
        net.init_params(&mut rng);
        net.update_params(|p| p.iter_mut().for_each(|v| *v += rng.random_range(-1.0..1.0)));
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
        let trace = net.forward(&x, Mode::Eval, &mut rng)?;
        let y = trace.output_row(0).to_vec();
        let layout = net.layout().clone();

        let mut exact = QdMetric::zeros(layout.clone(), MetricMode::QuasiDiagonal);
        for term in model.enumerate_fisher_terms(&y) {
            let g = net.backprop(&trace, &term.seed)?;
            exact.rank_one_update(&g, term.weight)?;
        }

        let dim = net.num_params();
        let (mut sum_d, mut sq_d) = (vec![0.0; dim], vec![0.0; dim]);
        let (mut sum_r, mut sq_r) = (vec![0.0; dim], vec![0.0; dim]);
        for _ in 0..draws {
            let t = model.sample_pseudo_target(&y, &mut rng);
            let g = net.backprop(&trace, &model.loss_output_grad(&y, t.as_ref())?)?;
            for b in layout.blocks() {
                let g0 = g[b.start];
                for i in b.range() {
                    let d = g[i] * g[i];
                    sum_d[i] += d;
                    sq_d[i] += d * d;
                    if i > b.start {
                        let r = g0 * g[i];
                        sum_r[i] += r;
                        sq_r[i] += r * r;
                    }
                }
            }
        }
        let n = draws as f64;
        let mut worst: f64 = 0.0;
        let mut z = |sum: f64, sq: f64, target: f64| {
            let mean = sum / n;
            let se = ((sq / n - mean * mean).max(0.0) / n).sqrt();
            let dev = (mean - target).abs();
            let score = if se > 0.0 { dev / se } else if dev <= 1e-12 { 0.0 } else { f64::INFINITY };
            worst = worst.max(score);
        };
        for b in layout.blocks() {
            for i in b.range() {
                z(sum_d[i], sq_d[i], exact.diag()[i]);
                if i > b.start {
                    z(sum_r[i], sq_r[i], exact.row()[i]);
                }
            }
        }
        checks.push(Check::at_most(
            format!("{} head, max |exact - MC| in standard errors ({draws} draws)", model.kind()),
            worst,
            3.0,
        ));
    }
    Ok(checks)
}

/// The tanh network computing the same function as a sigmoid network:
/// `sigmoid(z) = (1 + tanh(z / 2)) / 2`.
pub fn sigmoid_to_tanh(net: &Network) -> Result<Network> {
    let sizes = net.sizes().to_vec();
    let nl = net.num_layers();
    let mut out = Network::new(&sizes, vec![Activation::Tanh; nl - 1], net.connectivity())?;
    let src = net.params().clone();
    out.update_params(|p| {
        for l in 0..nl {
            for j in 0..sizes[l + 1] {
                let bi = net.bias_index(l, j);
                let inputs: Vec<usize> = (0..sizes[l]).filter_map(|i| net.weight_index(l, j, i)).collect();
                let wsum: f64 = inputs.iter().map(|&k| src[k]).sum();
                // inputs to layer 0 are raw, later inputs are h = (1 + h') / 2
                let (bias, wscale) = if l == 0 { (src[bi], 1.0) } else { (src[bi] + wsum / 2.0, 0.5) };
                // hidden pre-activations are halved, the output layer is linear
                let zscale = if l + 1 == nl { 1.0 } else { 0.5 };
                p[bi] = bias * zscale;
                for &k in &inputs {
                    p[k] = src[k] * wscale * zscale;
                }
            }
        }
    });
    Ok(out)
}

/// Network on `1 - x` computing the same function as `net` on `x`.
pub fn invert_first_layer(net: &Network) -> Result<Network> {
    let mut out = net.clone();
    let sizes = net.sizes();
    let src = net.params().clone();
    out.update_params(|p| {
        for j in 0..sizes[1] {
            let bi = net.bias_index(0, j);
            for i in 0..sizes[0] {
                if let Some(k) = net.weight_index(0, j, i) {
                    p[bi] += src[k];
                    p[k] = -src[k];
                }
            }
        }
    });
    Ok(out)
}

fn max_output_gap(a: &Network, xa: &Array2<f64>, b: &Network, xb: &Array2<f64>) -> Result<f64> {
    let (ya, yb) = (a.predict(xa.view())?, b.predict(xb.view())?);
    Ok(ya.iter().zip(yb.iter()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max))
}

/// One step from each of two equivalent parametrizations, then the largest
/// output gap over the probe inputs.
#[allow(clippy::too_many_arguments)]
fn paired_step(
    algo: Algorithm,
    eta: f64,
    (net_a, xa): (&Network, [&Array2<f64>; 3]),
    (net_b, xb): (&Network, [&Array2<f64>; 3]),
    labels: &[usize],
) -> Result<f64> {
    let cfg = OptimizerConfig { epsilon: 0.0, ..OptimizerConfig::new(algo, eta) };
    let model = OutputModel::new(OutputKind::Categorical, *net_a.sizes().last().expect("layers"));
    let mut finals = Vec::new();
    for (net, x) in [(net_a, xa), (net_b, xb)] {
        let mut net = net.clone();
        let mut model = model.clone();
        let mut opt = Optimizer::new(cfg, net.layout())?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let targets = |n: usize| labels.iter().take(n).map(|&c| crate::outputs::TargetRef::Class(c)).collect();
        let warm = Batch::new(x[0].clone(), targets(x[0].nrows()))?;
        opt.warmup(&net, &model, &warm, &mut rng)?;
        let step = Batch::new(x[1].clone(), targets(x[1].nrows()))?;
        opt.step(&mut net, &mut model, &step, &mut rng)?;
        finals.push(net);
    }
    max_output_gap(&finals[0], xa[2], &finals[1], xb[2])
}

fn invariance(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::dense(&[6, 5, 3], Activation::Sigmoid)?;
    net.init_params(&mut rng);
    let warm = random_inputs(&mut rng, 16, 6);
    let batch = random_inputs(&mut rng, 8, 6);
    let probes = random_inputs(&mut rng, 100, 6);
    let labels: Vec<usize> = (0..16).map(|_| rng.random_range(0..3)).collect();
    let flip = |x: &Array2<f64>| x.mapv(|v| 1.0 - v);
    let (warm_f, batch_f, probes_f) = (flip(&warm), flip(&batch), flip(&probes));

    let tanh = sigmoid_to_tanh(&net)?;
    let inv = invert_first_layer(&net)?;
    let same = [&warm, &batch, &probes];
    let flipped = [&warm_f, &batch_f, &probes_f];
    let eta = 1.0;
    let mut checks = vec![
        Check::at_most(
            "reparametrizations agree before the step",
            max_output_gap(&net, &probes, &tanh, &probes)?.max(max_output_gap(&net, &probes, &inv, &probes_f)?),
            1e-12,
        ),
        Check::at_most(
            "qdop sigmoid vs tanh, max output gap",
            paired_step(Algorithm::Qdop, eta, (&net, same), (&tanh, same), &labels)?,
            1e-6,
        ),
        Check::at_most(
            "qdop x vs 1-x, max output gap",
            paired_step(Algorithm::Qdop, eta, (&net, same), (&inv, flipped), &labels)?,
            1e-6,
        ),
    ];
    checks.push(Check::at_least(
        "sgd sigmoid vs tanh, max output gap",
        paired_step(Algorithm::Sgd, eta, (&net, same), (&tanh, same), &labels)?,
        1e-3,
    ));
    checks.push(Check::at_least(
        "sgd x vs 1-x, max output gap",
        paired_step(Algorithm::Sgd, eta, (&net, same), (&inv, flipped), &labels)?,
        1e-3,
    ));
    Ok(checks)
}

/// Iterates of OP and exact natural gradient on `theta^2 / 2` (one Gaussian
/// output `y = theta`, unit variance, every target at 0).
pub fn quadratic_iterates(algo: Algorithm, theta0: f64, eta: f64, steps: usize) -> Result<Vec<f64>> {
    let mut net = Network::dense(&[1, 1], Activation::Sigmoid)?;
    net.update_params(|p| p[0] = theta0);
    let mut model = OutputModel::new(OutputKind::Gaussian, 1);
    let cfg = OptimizerConfig {
        algo,
        eta,
        gamma: 1.0,
        // keeps the zero-curvature weight entry invertible without touching
        // the bias curvature
        epsilon: f64::MIN_POSITIVE,
        n_mc: 1,
    };
    let mut opt = Optimizer::new(cfg, net.layout())?;
    let zero = [0.0];
    let batch = Batch::new(Array2::zeros((1, 1)), vec![crate::outputs::TargetRef::Values(&zero)])?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = vec![theta0];
    for _ in 0..steps {
        opt.step(&mut net, &mut model, &batch, &mut rng)?;
        out.push(net.params()[0]);
    }
    Ok(out)
}

fn op_quadratic() -> Result<Vec<Check>> {
    let (theta0, eta) = (1e-3, 0.1);
    let op = quadratic_iterates(Algorithm::Qdop, theta0, eta, 1)?;
    let nat = quadratic_iterates(Algorithm::QdNat, theta0, eta, 50)?;
    let worst = nat
        .windows(2)
        .map(|w| (w[1] - (1.0 - eta) * w[0]).abs() / w[0].abs())
        .fold(0.0, f64::max);
    Ok(vec![
        Check::at_least("op first step |theta1| / |theta0|", op[1].abs() / theta0, 10.0),
        Check::at_least("op first step overshoots zero (-theta1 / theta0)", -op[1] / theta0, 10.0),
        Check::at_most(
            "natural gradient, max relative gap to (1 - eta) theta over 50 steps",
            worst,
            4.0 * f64::EPSILON,
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass() {
        for suite in [Suite::QdsolveOracle, Suite::Invariance, Suite::OpQuadratic, Suite::Gradcheck] {
            let r = run_suite(suite, 7).unwrap();
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn suite_names_parse() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
    }
}
