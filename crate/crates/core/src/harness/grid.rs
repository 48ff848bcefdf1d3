//! Step-size grid search and per-epoch timing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use super::train::{time_epochs, train, TrainLog};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::optim::Algorithm;

#[derive(Clone, Debug)]
pub struct GridRun {
    pub eta: f64,
    pub log: TrainLog,
}

impl GridRun {
    /// Score used to pick the best step-size: final validation NLL, or final
    /// train NLL without a validation set. `None` if the run diverged.
    pub fn score(&self) -> Option<f64> {
        if self.log.diverged() {
            return None;
        }
        let last = self.log.last()?;
        let s = if last.valid.nll.is_nan() { last.train.nll } else { last.valid.nll };
        s.is_finite().then_some(s)
    }
}

#[derive(Clone, Debug)]
pub struct GridSummary {
    pub algo: Algorithm,
    /// Sorted by increasing step-size.
    pub runs: Vec<GridRun>,
    /// Index of the best run, `None` if every run diverged.
    pub best: Option<usize>,
}

impl GridSummary {
    pub fn best_run(&self) -> Option<&GridRun> {
        self.best.map(|i| &self.runs[i])
    }

    /// The best step-size is the smallest or largest one tried.
    pub fn best_at_boundary(&self) -> bool {
        self.runs.len() > 1 && self.best.is_some_and(|i| i == 0 || i + 1 == self.runs.len())
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>10} {:>12} {:>12} {:>9}", "lr", "train_nll", "valid_nll", "diverged");
        for (i, r) in self.runs.iter().enumerate() {
            let (t, v) = r.log.last().map_or((f64::NAN, f64::NAN), |l| (l.train.nll, l.valid.nll));
            let mark = if Some(i) == self.best { " *" } else { "" };
            let _ = writeln!(
                s,
                "{:>10.0e} {:>12.6} {:>12.6} {:>9}{mark}",
                r.eta,
                t,
                v,
                u8::from(r.log.diverged())
            );
        }
        match self.best_run() {
            None => {
                let _ = writeln!(s, "{}: no valid step-size (every run diverged)", self.algo);
            }
            Some(r) => {
                let _ = writeln!(s, "{}: best lr = {:e}", self.algo, r.eta);
                if self.best_at_boundary() {
                    let _ = writeln!(
                        s,
                        "warning: best lr is at the edge of the grid; extend the grid"
                    );
                }
            }
        }
        s
    }
}

/// Sorted, without exact duplicates.
pub fn dedup_etas(etas: &[f64]) -> Vec<f64> {
    let mut v = etas.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// `run.csv` -> `run_lr0.01.csv`
pub fn grid_log_path(base: &Path, eta: f64) -> PathBuf {
    let stem = base.file_stem().map_or_else(|| "log".into(), |s| s.to_string_lossy().into_owned());
    let ext = base.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    base.with_file_name(format!("{stem}_lr{eta:e}{ext}"))
}

/// One training run per distinct step-size in `etas`.
pub fn grid(cfg: &RunConfig, etas: &[f64], train_set: &Dataset, valid_set: Option<&Dataset>) -> Result<GridSummary> {
    let etas = dedup_etas(etas);
    if etas.is_empty() {
        return Err(Error::Config("the step-size grid is empty".into()));
    }
    let mut runs = Vec::with_capacity(etas.len());
    for &eta in &etas {
        let mut run_cfg = cfg.with_optimizer(cfg.optimizer.algo, eta);
        run_cfg.log = cfg.log.as_deref().map(|p| grid_log_path(p, eta));
        run_cfg.checkpoint = cfg.checkpoint.as_deref().map(|p| grid_log_path(p, eta));
        let out = train(&run_cfg, train_set, valid_set)?;
        runs.push(GridRun { eta, log: out.log });
    }
    let best = runs
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.score().map(|s| (i, s)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    Ok(GridSummary {
        algo: cfg.optimizer.algo,
        runs,
        best,
    })
}

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub algo: Algorithm,
    pub epoch_times: Vec<f64>,
    pub median: f64,
    /// `median / median(SGD)`.
    pub ratio: f64,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Median per-epoch step time of each algorithm (SGD is always included as
/// the reference), at the configured step-size.
pub fn bench(cfg: &RunConfig, algos: &[Algorithm], train_set: &Dataset) -> Result<Vec<BenchRow>> {
    if cfg.epochs < 3 {
        return Err(Error::Config("bench needs at least 3 epochs".into()));
    }
    let mut list = vec![Algorithm::Sgd];
    list.extend(algos.iter().copied().filter(|&a| a != Algorithm::Sgd));
    let mut rows = Vec::with_capacity(list.len());
    for algo in list {
        let times = time_epochs(&cfg.with_optimizer(algo, cfg.optimizer.eta), train_set)?;
        let m = median(&times);
        rows.push(BenchRow {
            algo,
            epoch_times: times,
            median: m,
            ratio: f64::NAN,
        });
    }
    let base = rows[0].median;
    for r in &mut rows {
        r.ratio = r.median / base;
    }
    Ok(rows)
}

pub fn bench_report(rows: &[BenchRow]) -> String {
    let mut s = format!("{:>8} {:>12} {:>8}\n", "algo", "s/epoch", "vs sgd");
    for r in rows {
        let _ = writeln!(s, "{:>8} {:>12.4} {:>8.2}", r.algo.name(), r.median, r.ratio);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dedup_sorts_and_drops_repeats() {
        assert_eq!(dedup_etas(&[0.1, 1e-3, 0.1, 1.0, 1e-3]), [1e-3, 0.1, 1.0]);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn grid_paths() {
        assert_eq!(grid_log_path(Path::new("out/run.csv"), 0.01), Path::new("out/run_lr1e-2.csv"));
        assert_eq!(grid_log_path(Path::new("run"), 1.0), Path::new("run_lr1e0"));
    }
}
