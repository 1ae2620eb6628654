//! Experiment configuration and the drivers behind the command line: table
//! provisioning, repeated inference, the hyperparameter grid search and the
//! validation suites.

mod invariants;
mod run;
mod validate;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::datasets::{load_cifar10, load_dataset_csv, load_mnist, Dataset};
use crate::error::{Error, Result};
use crate::fq::{build_table, FqTable, QuadratureGrid, Scheme};
use crate::kernel::KernelParams;

pub use invariants::{invariants_suite, InvariantsSuiteConfig};
pub use run::{
    gridsearch, infer, infer_cell, ranked_csv, CellResult, GridReport, InferReport, RepeatOutcome,
};
pub use validate::{
    closed_form_rows, fq_suite, prop1_suite, theorem1_suite, Check, FqSuiteConfig, Prop1SuiteConfig,
    SuiteReport, Theorem1Report, Theorem1SuiteConfig,
};

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FORMAT: i32 = 3;
pub const EXIT_CONDITIONING: i32 = 4;
pub const EXIT_VALIDATION: i32 = 5;

/// Process exit code for an error class.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_) => EXIT_USAGE,
        Error::Format { .. } => EXIT_FORMAT,
        Error::Conditioning { .. } => EXIT_CONDITIONING,
        _ => EXIT_OTHER,
    }
}

/// `{2, 3, 4}`.
pub fn default_qs() -> Vec<usize> {
    vec![2, 3, 4]
}

pub fn default_depths() -> Vec<usize> {
    vec![1, 5, 9, 13, 17, 21]
}

/// `2i/29` for `i` in `0..30` with `i mod 4 = 1`.
pub fn default_sigma_b2() -> Vec<f64> {
    (0..30).filter(|i| i % 4 == 1).map(|i| 2.0 * i as f64 / 29.0).collect()
}

/// `0.1 + 49i/290` for `i` in `0..30` with `i mod 4 = 0`, `i = 0` included.
pub fn default_sigma_w2() -> Vec<f64> {
    (0..30).filter(|i| i % 4 == 0).map(|i| 0.1 + 49.0 * i as f64 / 290.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_qs")]
    pub qs: Vec<usize>,
    #[serde(default = "default_depths")]
    pub depths: Vec<usize>,
    #[serde(default = "default_sigma_b2")]
    pub sigma_b2: Vec<f64>,
    #[serde(default = "default_sigma_w2")]
    pub sigma_w2: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { qs: default_qs(), depths: default_depths(), sigma_b2: default_sigma_b2(), sigma_w2: default_sigma_w2() }
    }
}

impl GridSpec {
    pub fn single(p: &KernelParams) -> Self {
        Self { qs: vec![p.q], depths: vec![p.depth], sigma_b2: vec![p.sigma_b2], sigma_w2: vec![p.sigma_w2] }
    }

    pub fn len(&self) -> usize {
        self.qs.len() * self.depths.len() * self.sigma_b2.len() * self.sigma_w2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cells with `q` outermost and `sigma_w2` innermost.
    pub fn cells(&self) -> Result<Vec<KernelParams>> {
        let mut out = Vec::with_capacity(self.len());
        for &q in &self.qs {
            for &depth in &self.depths {
                for &b in &self.sigma_b2 {
                    for &w in &self.sigma_w2 {
                        out.push(KernelParams::new(q, depth, b, w)?);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Csv,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(Self::Mnist),
            "cifar10" => Ok(Self::Cifar10),
            "csv" => Ok(Self::Csv),
            other => Err(Error::usage(format!("unknown dataset {other:?}"))),
        }
    }
}

fn default_repeats() -> usize {
    5
}

/// Where the data lives and how much of it each repeat uses.
///
/// For CIFAR-10 the image lists are batch files and the label paths stay
/// empty; for CSV each image path is a labelled CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub kind: DatasetKind,
    #[serde(default)]
    pub train_images: Vec<PathBuf>,
    #[serde(default)]
    pub train_labels: Option<PathBuf>,
    #[serde(default)]
    pub test_images: Vec<PathBuf>,
    #[serde(default)]
    pub test_labels: Option<PathBuf>,
    pub n_train: usize,
    #[serde(default)]
    pub n_val: usize,
    /// Evaluate on the first `n_test` test rows only.
    #[serde(default)]
    pub n_test: Option<usize>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

impl DataSpec {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::usage("repeats must be at least 1"));
        }
        if self.n_train == 0 {
            return Err(Error::usage("n_train must be at least 1"));
        }
        if self.train_images.is_empty() {
            return Err(Error::usage("no training data given"));
        }
        match self.kind {
            DatasetKind::Mnist => {
                if self.train_images.len() != 1 || self.train_labels.is_none() {
                    return Err(Error::usage("mnist needs one training image file and its label file"));
                }
                if !self.test_images.is_empty() && (self.test_images.len() != 1 || self.test_labels.is_none()) {
                    return Err(Error::usage("mnist needs one test image file and its label file"));
                }
            }
            DatasetKind::Cifar10 => {
                if self.train_labels.is_some() || self.test_labels.is_some() {
                    return Err(Error::usage("cifar10 batches carry their labels; drop the label paths"));
                }
            }
            DatasetKind::Csv => {
                if self.train_images.len() != 1 || self.test_images.len() > 1 {
                    return Err(Error::usage("csv takes one training file and at most one test file"));
                }
            }
        }
        Ok(())
    }

    /// The pool that is shuffled and split, and the held-out test set if any.
    pub fn load(&self) -> Result<(Dataset, Option<Dataset>)> {
        self.validate()?;
        let (pool, test) = match self.kind {
            DatasetKind::Mnist => {
                let pool = load_mnist(&self.train_images[0], self.train_labels.as_ref().expect("validated"))?;
                let test = match self.test_images.first() {
                    Some(p) => Some(load_mnist(p, self.test_labels.as_ref().expect("validated"))?),
                    None => None,
                };
                (pool, test)
            }
            DatasetKind::Cifar10 => {
                let pool = load_cifar10(&self.train_images)?;
                let test = if self.test_images.is_empty() { None } else { Some(load_cifar10(&self.test_images)?) };
                (pool, test)
            }
            DatasetKind::Csv => {
                let mut pool = load_dataset_csv(&self.train_images[0], None)?;
                let mut test = match self.test_images.first() {
                    Some(p) => Some(load_dataset_csv(p, None)?),
                    None => None,
                };
                let k = pool.n_classes.max(test.as_ref().map_or(0, |t| t.n_classes));
                pool.n_classes = k;
                if let Some(t) = test.as_mut() {
                    t.n_classes = k;
                }
                (pool, test)
            }
        };
        let test = match (test, self.n_test) {
            (Some(t), Some(m)) if m < t.len() => {
                let idx: Vec<usize> = (0..m).collect();
                let tag = format!("{}|first {m}", t.provenance);
                Some(t.select(&idx, tag))
            }
            (t, _) => t,
        };
        if let Some(t) = &test {
            if t.dim() != pool.dim() {
                return Err(Error::usage(format!("test inputs have {} features, training {}", t.dim(), pool.dim())));
            }
        }
        if self.n_train + self.n_val > pool.len() {
            return Err(Error::usage(format!(
                "n_train + n_val = {} exceeds the {} available rows",
                self.n_train + self.n_val,
                pool.len()
            )));
        }
        Ok((pool, test))
    }
}

/// Quadrature settings for tables that have to be built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildSpec {
    pub n_rho: usize,
    pub r_max: f64,
    pub n_grid: usize,
    pub scheme: Scheme,
}

impl Default for BuildSpec {
    fn default() -> Self {
        let g = QuadratureGrid::high_accuracy();
        Self { n_rho: 1001, r_max: g.r_max(), n_grid: g.n_grid(), scheme: Scheme::Product }
    }
}

impl BuildSpec {
    pub fn grid(&self) -> Result<QuadratureGrid> {
        QuadratureGrid::new(self.r_max, self.n_grid)
    }

    fn file_name(&self, q: usize) -> String {
        format!("fq_q{q}_rho{}_r{}_g{}_{}.tbl", self.n_rho, self.r_max, self.n_grid, self.scheme)
    }
}

/// Table files by `q`; any `q` without a file is built from `build`, and
/// cached under `cache_dir` when one is given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSpec {
    #[serde(default)]
    pub paths: BTreeMap<usize, PathBuf>,
    #[serde(default)]
    pub build: BuildSpec,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

/// Tables loaded or built on first use and shared afterwards.
#[derive(Debug)]
pub struct Tables {
    spec: TableSpec,
    loaded: Mutex<BTreeMap<usize, Arc<FqTable>>>,
}

impl Tables {
    pub fn new(spec: TableSpec) -> Self {
        Self { spec, loaded: Mutex::new(BTreeMap::new()) }
    }

    pub fn with_table(table: FqTable) -> Self {
        let t = Self::new(TableSpec::default());
        t.loaded.lock().expect("poisoned").insert(table.q(), Arc::new(table));
        t
    }

    /// Serve `table` for its rank from now on.
    pub fn insert(&self, table: FqTable) -> Arc<FqTable> {
        let t = Arc::new(table);
        self.loaded.lock().expect("poisoned").insert(t.q(), t.clone());
        t
    }

    pub fn get(&self, q: usize) -> Result<Arc<FqTable>> {
        let mut loaded = self.loaded.lock().expect("poisoned");
        if let Some(t) = loaded.get(&q) {
            return Ok(t.clone());
        }
        let table = Arc::new(self.provide(q)?);
        loaded.insert(q, table.clone());
        Ok(table)
    }

    fn provide(&self, q: usize) -> Result<FqTable> {
        if let Some(p) = self.spec.paths.get(&q) {
            let t = FqTable::load(p)?;
            if t.q() != q {
                return Err(Error::usage(format!("table {} holds q = {}, expected {q}", p.display(), t.q())));
            }
            return Ok(t);
        }
        let b = self.spec.build;
        let cached = self.spec.cache_dir.as_ref().map(|d| d.join(b.file_name(q)));
        if let Some(p) = cached.as_ref().filter(|p| p.exists()) {
            let t = FqTable::load(p)?;
            let m = t.meta();
            if t.q() == q && t.n_rho() == b.n_rho && m.r_max == b.r_max && m.n_grid == b.n_grid && m.scheme == b.scheme {
                return Ok(t);
            }
        }
        let t = build_table(q, b.n_rho, &b.grid()?, b.scheme)?;
        if let Some(p) = cached {
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            t.save(&p)?;
        }
        Ok(t)
    }
}

fn default_noise0() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub table: TableSpec,
    #[serde(default = "default_noise0")]
    pub noise0: f64,
    #[serde(default)]
    pub seed: u64,
    /// Evaluate only the first `budget` grid cells.
    #[serde(default)]
    pub budget: Option<usize>,
    /// Record wall times as zero so reports are byte-reproducible.
    #[serde(default)]
    pub deterministic: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str, source_name: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(source_name, e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        let g = &self.grid;
        if g.qs.is_empty() || g.depths.is_empty() || g.sigma_b2.is_empty() || g.sigma_w2.is_empty() {
            return Err(Error::usage("every grid set must be nonempty"));
        }
        if !(self.noise0.is_finite() && self.noise0 >= 0.0) {
            return Err(Error::usage(format!("noise0 must be finite and nonnegative, got {}", self.noise0)));
        }
        if self.budget == Some(0) {
            return Err(Error::usage("budget must be at least 1"));
        }
        g.cells().map(|_| ())
    }
}
