use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, RngCore};

use super::{Mode, Network};
use crate::error::{check_len, Error, Result};
use crate::metric::{MetricMode, QdMetric};
use crate::param::ParamVector;

/// Cached activities of one forward pass over a batch of inputs.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    version: u64,
    /// `acts[l]` feeds weight layer `l`; dropout already applied.
    acts: Vec<Array2<f64>>,
    acts_sq: Vec<Array2<f64>>,
    /// Activation derivative times dropout mask for every hidden layer.
    dact: Vec<Array2<f64>>,
    /// Dropout masks (`0` or `1/(1-p)`) per input/hidden layer, `None` if off.
    masks: Vec<Option<Array2<f64>>>,
    output: Array2<f64>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }

    /// Linear outputs of the last layer, one row per sample.
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.output.view()
    }

    pub fn output_row(&self, n: usize) -> &[f64] {
        self.output
            .row(n)
            .to_slice()
            .expect("trace output is row-major")
    }

    /// Activities entering weight layer `l` (after dropout).
    pub fn activity(&self, l: usize) -> ArrayView2<'_, f64> {
        self.acts[l].view()
    }

    pub fn dropout_mask(&self, l: usize) -> Option<ArrayView2<'_, f64>> {
        self.masks[l].as_ref().map(|m| m.view())
    }

    pub fn version(&self) -> u64 {
        self.version
    }
}

/// Backpropagated derivatives with respect to every layer's pre-activations.
#[derive(Clone, Debug)]
pub struct Deltas(Vec<Array2<f64>>);

impl Network {
    /// Forward pass of a single input.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardTrace> {
        let x = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        self.forward_batch(x, mode, rng)
    }

    /// Forward pass of a batch of inputs, one per row.
    pub fn forward_batch<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<'_, f64>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardTrace> {
        let mut rng = RngRef(rng);
        self.forward_impl(x, (mode == Mode::Train).then_some(&mut rng as &mut dyn RngCore))
    }

    /// Dropout-free forward pass returning only the outputs.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward_impl(x, None)?.output)
    }

    fn forward_impl(
        &self,
        x: ArrayView2<'_, f64>,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<ForwardTrace> {
        check_len("input width", self.input_dim(), x.ncols())?;
        let nl = self.layers.len();
        let mut acts = Vec::with_capacity(nl);
        let mut dact = Vec::with_capacity(nl - 1);
        let mut masks = Vec::with_capacity(nl);

        let mut h = x.to_owned();
        let mask = match rng.as_deref_mut() {
            Some(r) => dropout_mask(h.dim(), self.dropout[0], r),
            None => None,
        };
        if let Some(m) = &mask {
            h *= m;
        }
        masks.push(mask);
        acts.push(h);

        let mut output = None;
        for l in 0..nl {
            let (bias, w) = self.layer_weights(l);
            let mut z = acts[l].dot(&w.t());
            z += &bias;
            if l + 1 == nl {
                output = Some(z);
                break;
            }
            let act = self.activations[l];
            let mut d = Array2::zeros(z.dim());
            ndarray::Zip::from(&mut z).and(&mut d).for_each(|z, d| {
                let (a, da) = act.eval(*z);
                *z = a;
                *d = da;
            });
            let mask = match rng.as_deref_mut() {
                Some(r) => dropout_mask(z.dim(), self.dropout[l + 1], r),
                None => None,
            };
            if let Some(m) = &mask {
                z *= m;
                d *= m;
            }
            masks.push(mask);
            acts.push(z);
            dact.push(d);
        }
        let acts_sq = acts.iter().map(|a| a.mapv(|v| v * v)).collect();
        Ok(ForwardTrace {
            version: self.version,
            acts,
            acts_sq,
            dact,
            masks,
            output: output.expect("at least one layer"),
        })
    }

    /// Backpropagates output seeds (one row per sample) through the network.
    pub fn backward(&self, trace: &ForwardTrace, seeds: ArrayView2<'_, f64>) -> Result<Deltas> {
        self.check_trace(trace)?;
        check_len("seed rows", trace.batch_size(), seeds.nrows())?;
        check_len("seed width", self.output_dim(), seeds.ncols())?;
        let nl = self.layers.len();
        let mut deltas = vec![Array2::zeros((0, 0)); nl];
        deltas[nl - 1] = seeds.to_owned();
        for l in (1..nl).rev() {
            let (_, w) = self.layer_weights(l);
            let mut d = deltas[l].dot(&w);
            d *= &trace.dact[l - 1];
            deltas[l - 1] = d;
        }
        Ok(Deltas(deltas))
    }

    /// Gradient of `<seed, output>` for a single-sample trace.
    pub fn backprop(&self, trace: &ForwardTrace, output_grad: &[f64]) -> Result<ParamVector> {
        check_len("trace batch size", 1, trace.batch_size())?;
        let seeds = ArrayView2::from_shape((1, output_grad.len()), output_grad)
            .expect("row vector");
        self.backprop_batch(trace, seeds)
    }

    /// Sum over the batch of per-sample gradients of `<seed_n, output_n>`.
    pub fn backprop_batch(
        &self,
        trace: &ForwardTrace,
        seeds: ArrayView2<'_, f64>,
    ) -> Result<ParamVector> {
        let deltas = self.backward(trace, seeds)?;
        let mut g = ParamVector::zeros(self.num_params());
        self.accumulate_gradient(trace, &deltas, 1.0, &mut g);
        Ok(g)
    }

    /// `out += scale * sum_n grad_n`
    pub fn accumulate_gradient(
        &self,
        trace: &ForwardTrace,
        deltas: &Deltas,
        scale: f64,
        out: &mut [f64],
    ) {
        assert_eq!(out.len(), self.num_params());
        for (l, layer) in self.layers.iter().enumerate() {
            let d = &deltas.0[l];
            let a = &trace.acts[l];
            let bias_sum = d.sum_axis(Axis(0));
            match &layer.inputs {
                None => {
                    let mut view = self.layer_view_mut(l, out);
                    view.column_mut(0).scaled_add(scale, &bias_sum);
                    let mut w = view.slice_mut(s![.., 1..]);
                    general_mat_mul(scale, &d.t(), a, 1.0, &mut w);
                }
                Some(lists) => {
                    let full = d.t().dot(a);
                    self.gather_sparse(l, lists, &full, bias_sum.view(), scale, out);
                }
            }
        }
    }

    /// Per-sample gradient of sample `n` (for oracles and small nets).
    pub fn sample_gradient(&self, trace: &ForwardTrace, deltas: &Deltas, n: usize) -> ParamVector {
        let mut g = ParamVector::zeros(self.num_params());
        for (l, layer) in self.layers.iter().enumerate() {
            let d = deltas.0[l].row(n);
            let a = trace.acts[l].row(n);
            for j in 0..layer.units {
                let start = self.bias_index(l, j);
                g[start] = d[j];
                match &layer.inputs {
                    None => {
                        for i in 0..layer.fan_in {
                            g[start + 1 + i] = d[j] * a[i];
                        }
                    }
                    Some(lists) => {
                        for (k, &i) in lists[j].iter().enumerate() {
                            g[start + 1 + k] = d[j] * a[i];
                        }
                    }
                }
            }
        }
        g
    }

    /// `M += scale * sum_n weight_n * QD(g_n g_n^T)` where `g_n` is the
    /// per-sample gradient carried by `deltas`.
    pub fn accumulate_metric(
        &self,
        trace: &ForwardTrace,
        deltas: &Deltas,
        weights: Option<ArrayView1<'_, f64>>,
        scale: f64,
        metric: &mut QdMetric,
    ) -> Result<()> {
        if metric.layout() != &self.layout {
            return Err(Error::DimensionMismatch {
                what: "metric layout",
                expected: self.num_params(),
                got: metric.dim(),
            });
        }
        if let Some(w) = &weights {
            check_len("sample weights", trace.batch_size(), w.len())?;
        }
        let quasi = metric.mode() == MetricMode::QuasiDiagonal;
        let (diag, row) = metric.parts_mut();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut d2 = deltas.0[l].mapv(|v| v * v);
            if let Some(w) = &weights {
                d2 *= &w.view().insert_axis(Axis(1));
            }
            let bias_sum = d2.sum_axis(Axis(0));
            let a = &trace.acts[l];
            let a2 = &trace.acts_sq[l];
            match &layer.inputs {
                None => {
                    let mut dv = self.layer_view_mut(l, diag);
                    dv.column_mut(0).scaled_add(scale, &bias_sum);
                    general_mat_mul(scale, &d2.t(), a2, 1.0, &mut dv.slice_mut(s![.., 1..]));
                    if quasi {
                        let mut rv = self.layer_view_mut(l, row);
                        general_mat_mul(scale, &d2.t(), a, 1.0, &mut rv.slice_mut(s![.., 1..]));
                    }
                }
                Some(lists) => {
                    let full = d2.t().dot(a2);
                    self.gather_sparse(l, lists, &full, bias_sum.view(), scale, diag);
                    if quasi {
                        let full = d2.t().dot(a);
                        let zero = ndarray::Array1::zeros(layer.units);
                        self.gather_sparse(l, lists, &full, zero.view(), scale, row);
                    }
                }
            }
        }
        Ok(())
    }

    fn gather_sparse(
        &self,
        l: usize,
        lists: &[Vec<usize>],
        full: &Array2<f64>,
        bias: ArrayView1<'_, f64>,
        scale: f64,
        out: &mut [f64],
    ) {
        for (j, list) in lists.iter().enumerate() {
            let start = self.bias_index(l, j);
            out[start] += scale * bias[j];
            for (k, &i) in list.iter().enumerate() {
                out[start + 1 + k] += scale * full[[j, i]];
            }
        }
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        if trace.version != self.version {
            return Err(Error::StaleTrace {
                trace: trace.version,
                params: self.version,
            });
        }
        Ok(())
    }
}

fn dropout_mask(
    dim: (usize, usize),
    rate: f64,
    rng: &mut dyn RngCore,
) -> Option<Array2<f64>> {
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some(Array2::from_shape_simple_fn(dim, || {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    }))
}

/// Adapter turning a `&mut R` (possibly unsized) into a sized `RngCore`.
struct RngRef<'a, R: ?Sized>(&'a mut R);

impl<R: Rng + ?Sized> RngCore for RngRef<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
