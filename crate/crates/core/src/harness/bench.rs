use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;

use crate::baselines::{run_baseline, BaselineConfig, BaselineMethod};
use crate::classifier::{evaluate, train, MlpConfig};
use crate::embedding::{LabeledEmbeddingSet, SoftLabeledSet};
use crate::error::{Error, Result};
use crate::harness::scenario::make_scenario_with;
use crate::reprint::{augment_dataset, ReprintConfig};
use crate::rng;

/// Environment variable capping the benchmark worker count.
pub const WORKERS_ENV: &str = "REPRINT_WORKERS";

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    /// Train on the imbalanced scenario as is.
    None,
    Reprint(ReprintConfig),
    Baseline(BaselineConfig),
}

/// A method under a report label, so several configurations of one method can
/// share a run.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub name: String,
    pub method: Method,
}

impl MethodSpec {
    pub fn new(name: impl Into<String>, method: Method) -> Self {
        Self {
            name: name.into(),
            method,
        }
    }

    /// Default configuration for `none`, `reprint` or any baseline name.
    pub fn by_name(name: &str) -> Result<Self> {
        let method = match name {
            "none" => Method::None,
            "reprint" => Method::Reprint(ReprintConfig::default()),
            other => Method::Baseline(BaselineConfig::new(other.parse::<BaselineMethod>()?)),
        };
        Ok(Self::new(name, method))
    }

    /// Augmented examples for `train`, seeded from `seed`.
    pub fn augment(&self, train: &LabeledEmbeddingSet, seed: u64) -> Result<SoftLabeledSet> {
        match &self.method {
            Method::None => Ok(SoftLabeledSet::empty(train.dim(), train.vocab().clone())),
            Method::Reprint(cfg) => {
                let cfg = ReprintConfig {
                    seed: rng::mix(cfg.seed, &[seed]),
                    ..cfg.clone()
                };
                augment_dataset(train, &cfg)
            }
            Method::Baseline(cfg) => {
                let cfg = BaselineConfig {
                    seed: rng::mix(cfg.seed, &[seed]),
                    ..cfg.clone()
                };
                Ok(run_baseline(train, &cfg)?.set)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub dataset_name: String,
    pub n_large: usize,
    /// Fixes the minority classes for every seed instead of redrawing them.
    pub minority: Option<Vec<usize>>,
    /// Worker threads; falls back to [`WORKERS_ENV`], then to the core count.
    pub workers: Option<usize>,
}

impl BenchOptions {
    pub fn new(dataset_name: impl Into<String>, n_large: usize) -> Self {
        Self {
            dataset_name: dataset_name.into(),
            n_large,
            minority: None,
            workers: None,
        }
    }

    fn resolve_workers(&self) -> Result<usize> {
        if let Some(w) = self.workers {
            return Ok(w.max(1));
        }
        match std::env::var(WORKERS_ENV) {
            Ok(v) => v
                .trim()
                .parse::<usize>()
                .map(|w| w.max(1))
                .map_err(|_| Error::Config(format!("{WORKERS_ENV}={v} is not a count"))),
            Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub method: usize,
    pub n_small: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    pub method: String,
    pub n_small: usize,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub dataset: String,
    pub method: String,
    pub n_small: usize,
    pub mean: f64,
    /// Sample standard deviation; absent with fewer than two seeds.
    pub std: Option<f64>,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<AggregateRow>,
}

fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() >= 2).then(|| {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    });
    (mean, std)
}

impl ExperimentReport {
    /// Aggregates rows per `(method, n_small)` in first-appearance order.
    pub fn from_rows(rows: Vec<ReportRow>) -> Self {
        let mut groups: Vec<((String, String, usize), Vec<f64>)> = Vec::new();
        for r in &rows {
            let key = (r.dataset.clone(), r.method.clone(), r.n_small);
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(r.accuracy),
                None => groups.push((key, vec![r.accuracy])),
            }
        }
        let aggregates = groups
            .into_iter()
            .map(|((dataset, method, n_small), values)| {
                let (mean, std) = mean_std(&values);
                AggregateRow {
                    dataset,
                    method,
                    n_small,
                    mean,
                    std,
                    seeds: values.len(),
                }
            })
            .collect();
        Self { rows, aggregates }
    }

    pub fn aggregate(&self, method: &str, n_small: usize) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && a.n_small == n_small)
    }

    /// `dataset,method,n_small,seed,accuracy`
    pub fn write_rows_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "dataset,method,n_small,seed,accuracy")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.dataset, r.method, r.n_small, r.seed, r.accuracy
            )?;
        }
        Ok(())
    }

    /// `dataset,method,n_small,mean,std`; `std` is empty for single-seed cells.
    pub fn write_summary_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "dataset,method,n_small,mean,std")?;
        for a in &self.aggregates {
            let std = a.std.map(|s| s.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{},{std}", a.dataset, a.method, a.n_small, a.mean)?;
        }
        Ok(())
    }

    /// Methods as rows, `n_small` values as columns, `mean ± std` in percent.
    pub fn render_table(&self) -> String {
        let mut n_smalls: Vec<usize> = self.aggregates.iter().map(|a| a.n_small).collect();
        n_smalls.sort_unstable();
        n_smalls.dedup();
        let mut methods: Vec<&str> = Vec::new();
        for a in &self.aggregates {
            if !methods.contains(&a.method.as_str()) {
                methods.push(&a.method);
            }
        }
        let width = methods.iter().map(|m| m.len()).max().unwrap_or(6).max(6);
        let mut s = String::new();
        let _ = write!(s, "{:<width$}", "method");
        for n in &n_smalls {
            let _ = write!(s, " | {:>15}", format!("n_small={n}"));
        }
        s.push('\n');
        for m in methods {
            let _ = write!(s, "{m:<width$}");
            for &n in &n_smalls {
                let cell = match self.aggregate(m, n) {
                    Some(a) => match a.std {
                        Some(sd) => format!("{:.2} ± {:.2}", 100.0 * a.mean, 100.0 * sd),
                        None => format!("{:.2}", 100.0 * a.mean),
                    },
                    None => "-".into(),
                };
                let _ = write!(s, " | {cell:>15}");
            }
            s.push('\n');
        }
        s
    }
}

fn run_cell(
    pool: &LabeledEmbeddingSet,
    test: &LabeledEmbeddingSet,
    spec: &MethodSpec,
    n_small: usize,
    seed: u64,
    mlp: &MlpConfig,
    options: &BenchOptions,
) -> Result<f64> {
    let (train_set, _) =
        make_scenario_with(pool, n_small, options.n_large, seed, options.minority.as_deref())?;
    let augmented = spec.augment(&train_set, rng::mix(seed, &[rng::tag("augment"), n_small as u64]))?;
    let mut union = train_set.to_soft();
    union.extend(&augmented)?;
    let mlp = MlpConfig {
        seed: rng::mix(mlp.seed, &[seed, n_small as u64]),
        ..mlp.clone()
    };
    let model = train(&union, &mlp)?;
    evaluate(&model, test)
}

/// Runs every `(method, n_small, seed)` cell and aggregates accuracies.
///
/// Each cell builds its scenario from `seed`, so all methods of a cell see the
/// same training split and the same classifier initialization. Rows are
/// ordered by method, then `n_small`, then seed, independent of worker count.
/// The first failing cell in that order aborts the run.
pub fn run_benchmark(
    pool: &LabeledEmbeddingSet,
    test: &LabeledEmbeddingSet,
    methods: &[MethodSpec],
    n_small_values: &[usize],
    seeds: &[u64],
    mlp: &MlpConfig,
    options: &BenchOptions,
) -> Result<ExperimentReport> {
    mlp.validate()?;
    let mut cells = Vec::new();
    for (m, _) in methods.iter().enumerate() {
        for &n_small in n_small_values {
            for &seed in seeds {
                cells.push(CellKey {
                    method: m,
                    n_small,
                    seed,
                });
            }
        }
    }
    let workers = options.resolve_workers()?;
    let thread_pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<(CellKey, Result<f64>)> = thread_pool.install(|| {
        cells
            .par_iter()
            .map(|key| {
                let spec = &methods[key.method];
                let acc = run_cell(pool, test, spec, key.n_small, key.seed, mlp, options);
                log::info!(
                    "cell method={} n_small={} seed={} -> {:?}",
                    spec.name,
                    key.n_small,
                    key.seed,
                    acc.as_ref().ok()
                );
                (*key, acc)
            })
            .collect()
    });

    let mut rows = Vec::with_capacity(results.len());
    for (key, acc) in results {
        let spec = &methods[key.method];
        let accuracy = acc.map_err(|e| Error::Cell {
            method: spec.name.clone(),
            n_small: key.n_small,
            seed: key.seed,
            source: Box::new(e),
        })?;
        rows.push(ReportRow {
            dataset: options.dataset_name.clone(),
            method: spec.name.clone(),
            n_small: key.n_small,
            seed: key.seed,
            accuracy,
        });
    }
    Ok(ExperimentReport::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregation_uses_sample_std() {
        let row = |m: &str, s, a| ReportRow {
            dataset: "d".into(),
            method: m.into(),
            n_small: 8,
            seed: s,
            accuracy: a,
        };
        let report = ExperimentReport::from_rows(vec![
            row("x", 0, 0.5),
            row("x", 1, 0.7),
            row("x", 2, 0.9),
            row("y", 0, 0.25),
        ]);
        let x = report.aggregate("x", 8).unwrap();
        assert!((x.mean - 0.7).abs() < 1e-12);
        assert!((x.std.unwrap() - 0.2).abs() < 1e-12);
        let y = report.aggregate("y", 8).unwrap();
        assert_eq!(y.std, None);
        let mut buf = Vec::new();
        report.write_summary_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(2).unwrap().ends_with(",0.25,"));
        assert!(report.render_table().contains("70.00 ± 20.00"));
    }

    #[test]
    fn method_names_parse() {
        for name in ["none", "reprint", "upsample", "noise", "smote", "mixup", "we", "ld", "ge3"] {
            assert_eq!(MethodSpec::by_name(name).unwrap().name, name);
        }
        assert!(MethodSpec::by_name("eda").is_err());
    }
}
