use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::{ExperimentConfig, Tables};
use crate::datasets::{split, Dataset};
use crate::error::{Error, Result};
use crate::fq::FqTable;
use crate::gp::{accuracy, encode_targets, per_class_accuracy, posterior_mean, predict_classes, PredictionReport};
use crate::kernel::{kernel_matrix, KernelParams};
use crate::rng::{derive_seed, PRNG_NAME};

/// Fit on `train` and score on `eval`.
fn evaluate(
    train: &Dataset,
    eval: &Dataset,
    params: &KernelParams,
    table: &FqTable,
    noise0: f64,
    deterministic: bool,
) -> Result<PredictionReport> {
    let t0 = Instant::now();
    let k_train = kernel_matrix(&train.inputs, &train.inputs, params, table)?.values;
    let k_cross = kernel_matrix(&eval.inputs, &train.inputs, params, table)?.values;
    let targets = encode_targets::<f64>(&train.labels, train.n_classes)?;
    let post = posterior_mean(&k_train, &k_cross, &targets, noise0)?;
    let pred = predict_classes(&post.mean);
    Ok(PredictionReport {
        n_train: train.len(),
        n_test: eval.len(),
        params: *params,
        noise_used: post.noise_used,
        escalations: post.escalations,
        accuracy: accuracy(&pred, &eval.labels)?,
        per_class_accuracy: per_class_accuracy(&pred, &eval.labels, train.n_classes)?,
        wall_time_seconds: if deterministic { 0.0 } else { t0.elapsed().as_secs_f64() },
    })
}

/// Numerical failures that make a grid cell unusable without stopping the
/// search.
fn is_cell_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::Conditioning { .. } | Error::CorrelationBound { .. } | Error::DegenerateInput { .. } | Error::Domain { .. }
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepeatOutcome {
    pub repeat: usize,
    pub seed: u64,
    pub report: Option<PredictionReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub cell: usize,
    pub params: KernelParams,
    /// Mean accuracy over repeats; `None` when any repeat failed.
    pub mean_accuracy: Option<f64>,
    pub accuracies: Vec<Option<f64>>,
    pub escalations: Vec<Option<u32>>,
    pub noise_used: Vec<Option<f64>>,
    pub repeats: Vec<RepeatOutcome>,
}

impl CellResult {
    pub fn max_escalations(&self) -> Option<u32> {
        self.escalations.iter().flatten().copied().max()
    }

    pub fn failed_repeats(&self) -> usize {
        self.accuracies.iter().filter(|a| a.is_none()).count()
    }
}

/// All repeats of one cell. Repeat `r` splits with seed
/// `derive_seed([base, cell, r])`; scoring is on `test` when given and on
/// the validation split otherwise.
pub fn infer_cell(
    cfg: &ExperimentConfig,
    pool: &Dataset,
    test: Option<&Dataset>,
    cell: usize,
    params: &KernelParams,
    table: &FqTable,
) -> Result<CellResult> {
    let d = &cfg.data;
    let mut repeats = Vec::with_capacity(d.repeats);
    for r in 0..d.repeats {
        let seed = derive_seed(&[cfg.seed, cell as u64, r as u64]);
        let (train, val) = split(pool, d.n_train, d.n_val, seed)?;
        let eval = test.unwrap_or(&val);
        if eval.is_empty() {
            return Err(Error::usage("nothing to score: give a test set or n_val > 0"));
        }
        let (report, error) = match evaluate(&train, eval, params, table, cfg.noise0, cfg.deterministic) {
            Ok(rep) => (Some(rep), None),
            Err(e) if is_cell_failure(&e) => (None, Some(e.to_string())),
            Err(e) => return Err(e),
        };
        repeats.push(RepeatOutcome { repeat: r, seed, report, error });
    }
    let accuracies: Vec<Option<f64>> = repeats.iter().map(|r| r.report.as_ref().map(|p| p.accuracy)).collect();
    let mean_accuracy = accuracies
        .iter()
        .copied()
        .collect::<Option<Vec<f64>>>()
        .map(|a| a.iter().sum::<f64>() / a.len() as f64);
    Ok(CellResult {
        cell,
        params: *params,
        mean_accuracy,
        escalations: repeats.iter().map(|r| r.report.as_ref().map(|p| p.escalations)).collect(),
        noise_used: repeats.iter().map(|r| r.report.as_ref().map(|p| p.noise_used)).collect(),
        accuracies,
        repeats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferReport {
    pub config: ExperimentConfig,
    pub prng: &'static str,
    /// `"test"` or `"validation"`.
    pub eval_set: &'static str,
    pub seeds: Vec<u64>,
    pub runs: Vec<PredictionReport>,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

/// Repeated inference at the single cell of `cfg.grid`; numerical failures
/// are fatal here.
pub fn infer(cfg: &ExperimentConfig, tables: &Tables) -> Result<InferReport> {
    cfg.validate()?;
    let cells = cfg.grid.cells()?;
    let [params] = cells.as_slice() else {
        return Err(Error::usage(format!("infer takes exactly one grid cell, got {}", cells.len())));
    };
    let table = tables.get(params.q)?;
    let (pool, test) = cfg.data.load()?;
    let d = &cfg.data;
    let mut runs = Vec::with_capacity(d.repeats);
    let mut seeds = Vec::with_capacity(d.repeats);
    for r in 0..d.repeats {
        let seed = derive_seed(&[cfg.seed, 0, r as u64]);
        let (train, val) = split(&pool, d.n_train, d.n_val, seed)?;
        let eval = test.as_ref().unwrap_or(&val);
        if eval.is_empty() {
            return Err(Error::usage("nothing to score: give a test set or n_val > 0"));
        }
        runs.push(evaluate(&train, eval, params, &table, cfg.noise0, cfg.deterministic)?);
        seeds.push(seed);
    }
    let accuracies: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
    let n = accuracies.len() as f64;
    let mean = accuracies.iter().sum::<f64>() / n;
    let var = if accuracies.len() > 1 {
        accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(InferReport {
        config: cfg.clone(),
        prng: PRNG_NAME,
        eval_set: if test.is_some() { "test" } else { "validation" },
        seeds,
        runs,
        accuracies,
        mean_accuracy: mean,
        std_accuracy: var.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridReport {
    pub config: ExperimentConfig,
    pub prng: &'static str,
    pub n_cells_total: usize,
    pub n_cells_evaluated: usize,
    pub cells: Vec<CellResult>,
    /// Cell indices by decreasing mean validation accuracy, failed cells
    /// last, ties broken by index.
    pub ranking: Vec<usize>,
    pub best: Option<CellResult>,
}

/// Validation accuracy of every cell (or the first `budget` cells), averaged
/// over repeats. Test data in the configuration is ignored.
pub fn gridsearch(cfg: &ExperimentConfig, tables: &Tables) -> Result<GridReport> {
    cfg.validate()?;
    if cfg.data.n_val == 0 {
        return Err(Error::usage("the grid search scores on the validation split; set n_val > 0"));
    }
    let all = cfg.grid.cells()?;
    let n = cfg.budget.map_or(all.len(), |b| b.min(all.len()));
    let cells = &all[..n];
    let mut qs: Vec<usize> = cells.iter().map(|c| c.q).collect();
    qs.sort_unstable();
    qs.dedup();
    for &q in &qs {
        tables.get(q)?;
    }
    let mut data_cfg = cfg.data.clone();
    data_cfg.test_images.clear();
    data_cfg.test_labels = None;
    let (pool, _) = data_cfg.load()?;
    let results = cells
        .par_iter()
        .enumerate()
        .map(|(i, p)| infer_cell(cfg, &pool, None, i, p, &*tables.get(p.q)?))
        .collect::<Result<Vec<_>>>()?;
    let mut ranking: Vec<usize> = (0..results.len()).collect();
    ranking.sort_by(|&a, &b| {
        let key = |i: usize| results[i].mean_accuracy.unwrap_or(f64::NEG_INFINITY);
        key(b).total_cmp(&key(a)).then(a.cmp(&b))
    });
    let best = ranking.first().map(|&i| &results[i]).filter(|c| c.mean_accuracy.is_some()).cloned();
    Ok(GridReport {
        config: cfg.clone(),
        prng: PRNG_NAME,
        n_cells_total: all.len(),
        n_cells_evaluated: n,
        cells: results,
        ranking,
        best,
    })
}

/// One line per evaluated cell in ranking order.
pub fn ranked_csv<W: Write>(report: &GridReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "rank,cell,q,depth,sigma_b2,sigma_w2,mean_accuracy,max_escalations,failed_repeats")?;
    for (rank, &i) in report.ranking.iter().enumerate() {
        let c = &report.cells[i];
        let p = &c.params;
        let acc = c.mean_accuracy.map_or(String::new(), |a| a.to_string());
        let esc = c.max_escalations().map_or(String::new(), |e| e.to_string());
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            rank + 1,
            c.cell,
            p.q,
            p.depth,
            p.sigma_b2,
            p.sigma_w2,
            acc,
            esc,
            c.failed_repeats()
        )?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::super::{DataSpec, DatasetKind, GridSpec, TableSpec};
    use super::*;
    use crate::datasets::save_dataset_csv;
    use crate::fq::{build_table, QuadratureGrid, Scheme};
    use crate::linalg::Matrix;
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> Dataset {
        let mut rng = crate::rng::seeded(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = Matrix::from_fn(n, 4, |i, j| {
            let c = if (labels[i] == 0) == (j % 2 == 0) { 1.0 } else { -1.0 };
            c + 0.1 * rng.gen_range(-1.0..1.0)
        });
        Dataset::new(x, labels, 2, "blobs").unwrap()
    }

    fn setup(dir: &std::path::Path) -> (ExperimentConfig, Tables) {
        let train = dir.join("train.csv");
        let test = dir.join("test.csv");
        save_dataset_csv(&blobs(60, 1), &train).unwrap();
        save_dataset_csv(&blobs(20, 2), &test).unwrap();
        let cfg = ExperimentConfig {
            data: DataSpec {
                kind: DatasetKind::Csv,
                train_images: vec![train],
                train_labels: None,
                test_images: vec![test],
                test_labels: None,
                n_train: 30,
                n_val: 20,
                n_test: None,
                repeats: 3,
            },
            grid: GridSpec::single(&KernelParams::new(2, 3, 0.1, 1.5).unwrap()),
            table: TableSpec::default(),
            noise0: 1e-10,
            seed: 4,
            budget: None,
            deterministic: true,
        };
        let t = build_table(2, 201, &QuadratureGrid::new(8.0, 201).unwrap(), Scheme::Product).unwrap();
        (cfg, Tables::with_table(t))
    }

    #[test]
    fn two_blobs_are_separated() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, tables) = setup(dir.path());
        let rep = infer(&cfg, &tables).unwrap();
        assert_eq!(rep.eval_set, "test");
        assert_eq!(rep.runs.len(), 3);
        assert_eq!(rep.mean_accuracy, 1.0);
        assert!(rep.runs.iter().all(|r| r.n_train == 30 && r.n_test == 20 && r.wall_time_seconds == 0.0));
        let again = infer(&cfg, &tables).unwrap();
        assert_eq!(serde_json::to_string(&rep).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn single_cell_grid_matches_infer() {
        let dir = tempfile::tempdir().unwrap();
        let (mut cfg, tables) = setup(dir.path());
        cfg.data.test_images.clear();
        let inf = infer(&cfg, &tables).unwrap();
        assert_eq!(inf.eval_set, "validation");
        let grid = gridsearch(&cfg, &tables).unwrap();
        assert_eq!(grid.n_cells_evaluated, 1);
        let cell = &grid.cells[0];
        assert_eq!(cell.accuracies, inf.accuracies.iter().map(|&a| Some(a)).collect::<Vec<_>>());
        let reports: Vec<_> = cell.repeats.iter().map(|r| r.report.clone().unwrap()).collect();
        assert_eq!(reports, inf.runs);
        assert_eq!(grid.best.as_ref(), Some(cell));
    }

    #[test]
    fn failed_cells_are_data() {
        let dir = tempfile::tempdir().unwrap();
        let (mut cfg, tables) = setup(dir.path());
        let mut rng = crate::rng::seeded(9);
        let x = Matrix::from_fn(60, 4, |_, _| rng.gen_range(-1.0..1.0));
        let spread = Dataset::new(x, (0..60).map(|i| i % 2).collect(), 2, "spread").unwrap();
        save_dataset_csv(&spread, &cfg.data.train_images[0]).unwrap();
        cfg.grid.sigma_b2 = vec![0.1];
        cfg.grid.sigma_w2 = vec![0.1, 4.83];
        cfg.grid.depths = vec![21];
        cfg.noise0 = 0.0;
        let grid = gridsearch(&cfg, &tables).unwrap();
        let small = &grid.cells[0];
        // at depth 21 with sigma_w2 = 0.1 every entry collapses to the bias
        // fixed point, so the training kernel is numerically rank one
        assert!(small.mean_accuracy.is_none(), "{small:?}");
        assert!(small.repeats.iter().all(|r| r.error.as_deref().is_some_and(|e| e.contains("conditioning"))));
        assert!(grid.cells[1].mean_accuracy.is_some(), "{:?}", grid.cells[1]);
        assert_eq!(grid.ranking, vec![1, 0]);
        assert_eq!(grid.best.as_ref().map(|c| c.cell), Some(1));
        let mut buf = Vec::new();
        ranked_csv(&grid, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("2,0,2,21,0.1,0.1,,,3"), "{}", lines[2]);
    }

    #[test]
    fn escalation_is_reported_with_default_noise() {
        let dir = tempfile::tempdir().unwrap();
        let (mut cfg, tables) = setup(dir.path());
        cfg.grid.sigma_w2 = vec![0.1];
        cfg.grid.depths = vec![21];
        let grid = gridsearch(&cfg, &tables).unwrap();
        let c = &grid.cells[0];
        assert!(c.mean_accuracy.is_none() || c.max_escalations() > Some(0), "{c:?}");
        for (e, n) in c.escalations.iter().zip(&c.noise_used) {
            if let (Some(e), Some(n)) = (e, n) {
                assert_eq!(*n, crate::gp::escalated_noise(1e-10, *e));
            }
        }
    }

    #[test]
    fn budget_and_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (mut cfg, tables) = setup(dir.path());
        cfg.grid = GridSpec { qs: vec![2], depths: vec![1, 2], sigma_b2: vec![0.1, 0.2], sigma_w2: vec![1.0, 2.0] };
        cfg.budget = Some(3);
        cfg.data.repeats = 1;
        let g = gridsearch(&cfg, &tables).unwrap();
        assert_eq!((g.n_cells_total, g.n_cells_evaluated, g.cells.len()), (8, 3, 3));
        assert_eq!(g.cells[2].params, KernelParams::new(2, 1, 0.2, 1.0).unwrap());
        assert!(matches!(infer(&cfg, &tables), Err(Error::Usage(_))));
        cfg.data.n_val = 0;
        assert!(matches!(gridsearch(&cfg, &tables), Err(Error::Usage(_))));
        cfg.data.n_train = 100;
        assert!(matches!(gridsearch(&cfg, &tables), Err(Error::Usage(_))));
    }
}
