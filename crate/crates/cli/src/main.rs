use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mnngp::datasets::{load_matrix_csv, save_matrix_csv};
use mnngp::fq::{build_table, FqTable, QuadratureGrid, Scheme};
use mnngp::harness::{
    closed_form_rows, exit_code, fq_suite, gridsearch, infer, invariants_suite, prop1_suite, ranked_csv, theorem1_suite, BuildSpec,
    DataSpec, DatasetKind, ExperimentConfig, FqSuiteConfig, GridSpec, InvariantsSuiteConfig, Prop1SuiteConfig, TableSpec, Tables,
    Theorem1SuiteConfig, EXIT_VALIDATION,
};
use mnngp::kernel::kernel_matrix;
use mnngp::{Error, KernelParams};

#[derive(Parser)]
#[command(name = "mnngp", version, about = "Maxout NNGP kernels, inference and validation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or check F_q lookup tables.
    #[command(subcommand)]
    Table(TableCmd),
    /// Evaluate the kernel matrix between two input sets.
    Kernel(KernelArgs),
    /// Repeated GP classification at one hyperparameter setting.
    Infer(InferArgs),
    /// Validation accuracy over a hyperparameter grid.
    Gridsearch(GridArgs),
    /// Run a validation suite; exits nonzero on failure.
    Validate(ValidateArgs),
}

#[derive(Subcommand)]
enum TableCmd {
    Build {
        #[arg(long)]
        q: usize,
        #[arg(long, default_value_t = 1001)]
        n_rho: usize,
        #[arg(long, default_value_t = 8.0)]
        r_max: f64,
        #[arg(long, default_value_t = 2001)]
        n_grid: usize,
        #[arg(long, value_enum, default_value_t = SchemeArg::Product)]
        scheme: SchemeArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a q = 2 table with the closed form.
    Check {
        #[arg(long)]
        table: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        threshold: f64,
        #[arg(long)]
        out_csv: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Product,
    Ratio,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Product => Scheme::Product,
            SchemeArg::Ratio => Scheme::Ratio,
        }
    }
}

#[derive(Args)]
struct ParamArgs {
    #[arg(long)]
    q: usize,
    #[arg(long)]
    depth: usize,
    #[arg(long)]
    sigma_b2: f64,
    #[arg(long)]
    sigma_w2: f64,
}

impl ParamArgs {
    fn params(&self) -> Result<KernelParams, Error> {
        KernelParams::new(self.q, self.depth, self.sigma_b2, self.sigma_w2)
    }
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long)]
    table: PathBuf,
    #[command(flatten)]
    params: ParamArgs,
    /// Headerless CSV, one input per row.
    #[arg(long)]
    x: PathBuf,
    /// Second input set; defaults to `--x`.
    #[arg(long)]
    y: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    Mnist,
    Cifar10,
    Csv,
}

impl From<DatasetArg> for DatasetKind {
    fn from(d: DatasetArg) -> Self {
        match d {
            DatasetArg::Mnist => DatasetKind::Mnist,
            DatasetArg::Cifar10 => DatasetKind::Cifar10,
            DatasetArg::Csv => DatasetKind::Csv,
        }
    }
}

#[derive(Args)]
struct InferArgs {
    #[arg(long, value_enum)]
    dataset: DatasetArg,
    /// IDX images, CIFAR-10 batch files (repeatable) or a labelled CSV.
    #[arg(long, num_args = 1.., required = true)]
    train_images: Vec<PathBuf>,
    #[arg(long)]
    train_labels: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    test_images: Vec<PathBuf>,
    #[arg(long)]
    test_labels: Option<PathBuf>,
    #[arg(long)]
    n_train: usize,
    #[arg(long, default_value_t = 0)]
    n_val: usize,
    /// Score on the first N test rows only.
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    table: PathBuf,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, default_value_t = 1e-10)]
    noise0: f64,
    /// Record wall times as zero so the report is byte-reproducible.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    /// JSON experiment configuration; the flags below override it.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Ranked cells; defaults to `--out` with a `.csv` extension.
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    noise0: Option<f64>,
    #[arg(long)]
    table_cache_dir: Option<PathBuf>,
    #[arg(long)]
    deterministic: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    /// Structural properties of every numerical module; the default gate.
    Invariants,
    Fq,
    Prop1,
    Theorem1,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(value_enum, default_value_t = Suite::Invariants)]
    suite: Suite,
    /// Prebuilt table files (repeatable); missing ranks are built.
    #[arg(long)]
    table: Vec<PathBuf>,
    #[arg(long)]
    table_cache_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1001)]
    n_rho: usize,
    #[arg(long, default_value_t = 8.0)]
    r_max: f64,
    #[arg(long, default_value_t = 2001)]
    n_grid: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gate of the suite's primary check.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    deterministic: bool,
    /// JSON report; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,

    /// fq: Monte Carlo samples per correlation.
    #[arg(long)]
    mc_samples: Option<usize>,
    /// invariants: real MNIST files for the pixel scaling check.
    #[arg(long, requires = "mnist_labels")]
    mnist_images: Option<PathBuf>,
    #[arg(long, requires = "mnist_images")]
    mnist_labels: Option<PathBuf>,
    /// invariants: real CIFAR-10 batch files (repeatable).
    #[arg(long)]
    cifar_batch: Vec<PathBuf>,

    /// fq: ranks compared with Monte Carlo.
    #[arg(long, num_args = 1..)]
    mc_q: Vec<usize>,

    /// prop1: gate on the residual relative to the kernel scale.
    #[arg(long)]
    relative_threshold: Option<f64>,
    /// prop1: number of random input sets.
    #[arg(long)]
    n_sets: Option<usize>,

    /// theorem1: hidden widths whose gap is gated (repeatable).
    #[arg(long, num_args = 1..)]
    width: Vec<usize>,
    /// theorem1: width the largest width's gap is compared with.
    #[arg(long)]
    reference_width: Option<usize>,
    #[arg(long)]
    n_networks: Option<usize>,
    #[arg(long)]
    n_seeds: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    sigma_b2: Option<f64>,
    #[arg(long)]
    sigma_w2: Option<f64>,
    #[arg(long)]
    n_inputs: Option<usize>,
}

/// Exit status and message of a failed command.
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: exit_code(&e), message: e.to_string() }
    }
}

type CmdResult = Result<(), Failure>;

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io { path: p.into(), source: e }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn table_cmd(cmd: TableCmd) -> CmdResult {
    match cmd {
        TableCmd::Build { q, n_rho, r_max, n_grid, scheme, out } => {
            let grid = QuadratureGrid::new(r_max, n_grid)?;
            build_table(q, n_rho, &grid, scheme.into())?.save(&out)?;
            Ok(())
        }
        TableCmd::Check { table, threshold, out_csv } => {
            let rows = closed_form_rows(&FqTable::load(&table)?)?;
            let mut w = create(&out_csv)?;
            let io = |e| Error::Io { path: out_csv.clone(), source: e };
            writeln!(w, "rho,table,closed_form,abs_diff").map_err(io)?;
            for r in &rows {
                writeln!(w, "{},{},{},{}", r[0], r[1], r[2], r[3]).map_err(io)?;
            }
            w.flush().map_err(io)?;
            let max = rows.iter().map(|r| r[3]).fold(0.0, f64::max);
            println!("max |table - closed form| = {max:e} (threshold {threshold:e})");
            if max > threshold {
                return Err(Failure { code: EXIT_VALIDATION, message: format!("deviation {max:e} exceeds {threshold:e}") });
            }
            Ok(())
        }
    }
}

fn kernel_cmd(a: KernelArgs) -> CmdResult {
    let params = a.params.params()?;
    let table = FqTable::load(&a.table)?;
    let x = load_matrix_csv(&a.x)?;
    let y = match &a.y {
        Some(p) => load_matrix_csv(p)?,
        None => x.clone(),
    };
    let k = kernel_matrix(&x, &y, &params, &table)?;
    save_matrix_csv(&k.values, &a.out)?;
    Ok(())
}

fn infer_cmd(a: InferArgs) -> CmdResult {
    let params = a.params.params()?;
    let mut table = TableSpec::default();
    table.paths.insert(params.q, a.table);
    let cfg = ExperimentConfig {
        data: DataSpec {
            kind: a.dataset.into(),
            train_images: a.train_images,
            train_labels: a.train_labels,
            test_images: a.test_images,
            test_labels: a.test_labels,
            n_train: a.n_train,
            n_val: a.n_val,
            n_test: a.n_test,
            repeats: a.repeats,
        },
        grid: GridSpec::single(&params),
        table,
        noise0: a.noise0,
        seed: a.seed,
        budget: None,
        deterministic: a.deterministic,
    };
    let report = infer(&cfg, &Tables::new(cfg.table.clone()))?;
    write_json(&report, Some(&a.out))?;
    println!("mean accuracy {:.4} over {} repeats", report.mean_accuracy, report.runs.len());
    Ok(())
}

fn grid_cmd(a: GridArgs) -> CmdResult {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if a.budget.is_some() {
        cfg.budget = a.budget;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.repeats {
        cfg.data.repeats = r;
    }
    if let Some(n) = a.n_train {
        cfg.data.n_train = n;
    }
    if let Some(n) = a.n_val {
        cfg.data.n_val = n;
    }
    if let Some(n) = a.noise0 {
        cfg.noise0 = n;
    }
    if a.table_cache_dir.is_some() {
        cfg.table.cache_dir = a.table_cache_dir;
    }
    cfg.deterministic |= a.deterministic;
    let report = gridsearch(&cfg, &Tables::new(cfg.table.clone()))?;
    write_json(&report, Some(&a.out))?;
    let csv_path = a.out_csv.unwrap_or_else(|| a.out.with_extension("csv"));
    let mut w = create(&csv_path)?;
    ranked_csv(&report, &mut w).map_err(|e| Error::Io { path: csv_path.clone(), source: e })?;
    match &report.best {
        Some(b) => println!(
            "best cell {} (q={} depth={} sigma_b2={} sigma_w2={}): {:.4}",
            b.cell,
            b.params.q,
            b.params.depth,
            b.params.sigma_b2,
            b.params.sigma_w2,
            b.mean_accuracy.unwrap_or(f64::NAN)
        ),
        None => println!("no cell produced a prediction"),
    }
    Ok(())
}

fn validate_cmd(a: ValidateArgs) -> CmdResult {
    let mut tables = TableSpec {
        build: BuildSpec { n_rho: a.n_rho, r_max: a.r_max, n_grid: a.n_grid, ..BuildSpec::default() },
        cache_dir: a.table_cache_dir.clone(),
        ..TableSpec::default()
    };
    for p in &a.table {
        tables.paths.insert(FqTable::load(p)?.q(), p.clone());
    }
    let provider = Tables::new(tables.clone());
    let out = a.out.as_deref();
    let (passed, checks) = match a.suite {
        Suite::Invariants => {
            let d = InvariantsSuiteConfig::default();
            let cfg = InvariantsSuiteConfig {
                tables,
                mc_samples: a.mc_samples.unwrap_or(d.mc_samples),
                mnist_images: a.mnist_images,
                mnist_labels: a.mnist_labels,
                cifar_batches: a.cifar_batch,
                seed: a.seed,
                deterministic: a.deterministic,
                ..d
            };
            let r = invariants_suite(&cfg, &provider)?;
            write_json(&r, out)?;
            (r.passed, r.checks)
        }
        Suite::Fq => {
            let d = FqSuiteConfig::default();
            let cfg = FqSuiteConfig {
                tables,
                threshold: a.threshold.unwrap_or(d.threshold),
                mc_qs: if a.mc_q.is_empty() { d.mc_qs } else { a.mc_q },
                mc_samples: a.mc_samples.unwrap_or(d.mc_samples),
                seed: a.seed,
                deterministic: a.deterministic,
                ..d
            };
            let r = fq_suite(&cfg, &provider)?;
            write_json(&r, out)?;
            (r.passed, r.checks)
        }
        Suite::Prop1 => {
            let d = Prop1SuiteConfig::default();
            let cfg = Prop1SuiteConfig {
                tables,
                threshold: a.threshold.unwrap_or(d.threshold),
                relative_threshold: a.relative_threshold.unwrap_or(d.relative_threshold),
                n_sets: a.n_sets.unwrap_or(d.n_sets),
                seed: a.seed,
                deterministic: a.deterministic,
                ..d
            };
            let r = prop1_suite(&cfg, &provider)?;
            write_json(&r, out)?;
            (r.passed, r.checks)
        }
        Suite::Theorem1 => {
            let d = Theorem1SuiteConfig::default();
            let cfg = Theorem1SuiteConfig {
                tables,
                widths: if a.width.is_empty() { d.widths } else { a.width },
                reference_width: a.reference_width,
                depth: a.depth.unwrap_or(d.depth),
                q: a.q.unwrap_or(d.q),
                n_inputs: a.n_inputs.unwrap_or(d.n_inputs),
                sigma_b2: a.sigma_b2.unwrap_or(d.sigma_b2),
                sigma_w2: a.sigma_w2.unwrap_or(d.sigma_w2),
                n_networks: a.n_networks.unwrap_or(d.n_networks),
                n_seeds: a.n_seeds.unwrap_or(d.n_seeds),
                gap_threshold: a.threshold.unwrap_or(d.gap_threshold),
                seed: a.seed,
                deterministic: a.deterministic,
                ..d
            };
            let r = theorem1_suite(&cfg, &provider)?;
            write_json(&r, out)?;
            (r.passed, r.checks)
        }
    };
    for c in &checks {
        let status = match (c.gated, c.passed) {
            (false, _) => "info",
            (true, true) => "pass",
            (true, false) => "FAIL",
        };
        eprintln!("{status} {}: {:e} (threshold {:e})", c.name, c.value, c.threshold);
    }
    if passed {
        Ok(())
    } else {
        Err(Failure { code: EXIT_VALIDATION, message: "validation failed".into() })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Table(c) => table_cmd(c),
        Command::Kernel(a) => kernel_cmd(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Gridsearch(a) => grid_cmd(a),
        Command::Validate(a) => validate_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
