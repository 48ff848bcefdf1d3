//! Quasi-diagonal metrics.
//!
//! Parameters are split into blocks, one per neuron, with the bias as entry 0
//! of every block. A quasi-diagonal metric keeps, per block, the diagonal and
//! the first row (bias/weight couplings); every other entry is treated as
//! zero. Storage is two reals per parameter. The first row entry of a block
//! would duplicate the diagonal's entry 0, so it is kept in storage for
//! uniform indexing but never read or written.

use std::io::Write;
use std::ops::Range;

use crate::error::{check_len, Error, Result};

/// Regularization threshold used when nothing else is configured.
pub const DEFAULT_EPSILON: f64 = 1e-8;
/// Metric update rate used when nothing else is configured.
pub const DEFAULT_GAMMA: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Block {
    /// Global index of entry 0 (the bias).
    pub start: usize,
    pub len: usize,
}

impl Block {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

/// Partition of a flat parameter vector into contiguous per-neuron blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    blocks: Vec<Block>,
    dim: usize,
}

impl BlockLayout {
    /// Builds a layout of consecutive blocks with the given lengths.
    pub fn from_lengths<I: IntoIterator<Item = usize>>(lengths: I) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut start = 0;
        for len in lengths {
            if len == 0 {
                return Err(Error::Config(format!(
                    "block {} has length 0",
                    blocks.len()
                )));
            }
            blocks.push(Block { start, len });
            start += len;
        }
        Ok(Self { blocks, dim: start })
    }

    /// One block covering every parameter.
    pub fn single(len: usize) -> Result<Self> {
        Self::from_lengths([len])
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Total number of parameters covered.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_bias(&self, index: usize) -> bool {
        self.blocks
            .binary_search_by(|b| b.start.cmp(&index))
            .is_ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricMode {
    /// Diagonal only; the first rows stay identically zero.
    Diagonal,
    QuasiDiagonal,
}

/// Moving-average rate and inversion threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricConfig {
    pub gamma: f64,
    pub epsilon: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QdMetric {
    layout: BlockLayout,
    diag: Vec<f64>,
    row: Vec<f64>,
    mode: MetricMode,
    initialized: bool,
}

impl QdMetric {
    pub fn zeros(layout: BlockLayout, mode: MetricMode) -> Self {
        let dim = layout.dim();
        Self {
            layout,
            diag: vec![0.0; dim],
            row: vec![0.0; dim],
            mode,
            initialized: false,
        }
    }

    pub fn identity(layout: BlockLayout, mode: MetricMode) -> Self {
        let mut m = Self::zeros(layout, mode);
        m.diag.iter_mut().for_each(|d| *d = 1.0);
        m.initialized = true;
        m
    }

    /// Builds a metric from explicit diagonal and first-row storage.
    pub fn from_parts(
        layout: BlockLayout,
        mode: MetricMode,
        diag: Vec<f64>,
        row: Vec<f64>,
    ) -> Result<Self> {
        check_len("metric diagonal", layout.dim(), diag.len())?;
        check_len("metric row", layout.dim(), row.len())?;
        let mut m = Self {
            layout,
            diag,
            row,
            mode,
            initialized: true,
        };
        m.clear_unused_rows();
        Ok(m)
    }

    /// Quasi-diagonal reduction of a dense symmetric matrix given row-major.
    pub fn from_dense(dense: &[f64], layout: BlockLayout, mode: MetricMode) -> Result<Self> {
        let dim = layout.dim();
        check_len("dense matrix", dim * dim, dense.len())?;
        let mut m = Self::zeros(layout, mode);
        for i in 0..dim {
            m.diag[i] = dense[i * dim + i];
        }
        if mode == MetricMode::QuasiDiagonal {
            for block in m.layout.blocks.clone() {
                let b = block.start;
                for i in b + 1..b + block.len {
                    m.row[i] = dense[b * dim + i];
                }
            }
        }
        m.initialized = true;
        Ok(m)
    }

    fn clear_unused_rows(&mut self) {
        match self.mode {
            MetricMode::Diagonal => self.row.iter_mut().for_each(|r| *r = 0.0),
            MetricMode::QuasiDiagonal => {
                for b in &self.layout.blocks {
                    self.row[b.start] = 0.0;
                }
            }
        }
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn mode(&self) -> MetricMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// First-row entries; index `i` pairs parameter `i` with its block's bias.
    pub fn row(&self) -> &[f64] {
        &self.row
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.diag, &mut self.row)
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn set_initialized(&mut self, initialized: bool) {
        self.initialized = initialized;
    }

    /// Number of reals held in storage.
    pub fn storage_len(&self) -> usize {
        self.diag.len() + self.row.len()
    }

    pub fn reset(&mut self) {
        self.diag.iter_mut().for_each(|d| *d = 0.0);
        self.row.iter_mut().for_each(|r| *r = 0.0);
        self.initialized = false;
    }

    /// `M <- M + alpha * QD(v v^T)`
    pub fn rank_one_update(&mut self, v: &[f64], alpha: f64) -> Result<()> {
        check_len("rank-one vector", self.dim(), v.len())?;
        for block in &self.layout.blocks {
            let r = block.range();
            let w = &v[r.clone()];
            for (d, wi) in self.diag[r.clone()].iter_mut().zip(w) {
                *d += alpha * wi * wi;
            }
            if self.mode == MetricMode::QuasiDiagonal {
                let aw0 = alpha * w[0];
                for (ri, wi) in self.row[r][1..].iter_mut().zip(&w[1..]) {
                    *ri += aw0 * wi;
                }
            }
        }
        Ok(())
    }

    /// `M <- (1 - gamma) M`
    pub fn decay(&mut self, gamma: f64) {
        debug_assert!((0.0..=1.0).contains(&gamma));
        let keep = 1.0 - gamma;
        self.diag.iter_mut().for_each(|d| *d *= keep);
        if self.mode == MetricMode::QuasiDiagonal {
            self.row.iter_mut().for_each(|r| *r *= keep);
        }
    }

    /// Applies the quasi-diagonal inverse `QD(M)^-1 v`.
    pub fn solve(&self, v: &[f64], epsilon: f64) -> Result<Vec<f64>> {
        let mut out = v.to_vec();
        self.solve_in_place(&mut out, epsilon)?;
        Ok(out)
    }

    pub fn solve_in_place(&self, v: &mut [f64], epsilon: f64) -> Result<()> {
        check_len("solve vector", self.dim(), v.len())?;
        for (k, block) in self.layout.blocks.iter().enumerate() {
            let r = block.range();
            let w = &mut v[r.clone()];
            let diag = &self.diag[r.clone()];
            match self.mode {
                MetricMode::Diagonal => {
                    for (wi, d) in w.iter_mut().zip(diag) {
                        let denom = d + epsilon;
                        if denom == 0.0 {
                            return Err(Error::ZeroPivot { block: k });
                        }
                        *wi /= denom;
                    }
                }
                MetricMode::QuasiDiagonal => {
                    let row = &self.row[r];
                    let d0 = diag[0] + epsilon;
                    if d0 == 0.0 {
                        return Err(Error::ZeroPivot { block: k });
                    }
                    let w0 = w[0];
                    let mut coupled = 0.0;
                    for i in 1..w.len() {
                        let di = diag[i] + epsilon;
                        let det = (di * d0 - row[i] * row[i]).max(epsilon);
                        if det == 0.0 {
                            return Err(Error::ZeroPivot { block: k });
                        }
                        w[i] = (d0 * w[i] - row[i] * w0) / det;
                        coupled += row[i] * w[i];
                    }
                    w[0] = (w0 - coupled) / d0;
                }
            }
        }
        Ok(())
    }

    /// Debug dump: one line per block, the block's diagonal then its row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for block in &self.layout.blocks {
            let r = block.range();
            let fields: Vec<String> = self.diag[r.clone()]
                .iter()
                .chain(&self.row[r])
                .map(|x| x.to_string())
                .collect();
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }
}
