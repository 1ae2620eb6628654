use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::validate::{elapsed, uniform_inputs, verdict, Check, SuiteReport};
use super::{TableSpec, Tables};
use crate::datasets::{
    cifar10_from_bytes, load_cifar10, load_dataset_csv, load_mnist, mnist_from_bytes, split, write_dataset_csv,
    Dataset, CIFAR_RECORD, MNIST_DIM,
};
use crate::error::{Error, Result};
use crate::fq::{build_table, closed_form_f2, mc_oracle_fq, FqTable, QuadratureGrid, Scheme};
use crate::gp::{accuracy, encode_targets, posterior_mean, predict_classes, solve_with_jitter};
use crate::kernel::{kernel_diagonal, kernel_matrix, prop1_residual, KernelParams};
use crate::linalg::Matrix;
use crate::rng::{derive_seed, seeded, PRNG_NAME};
use crate::special::{binormal_cdf, std_normal_cdf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantsSuiteConfig {
    pub tables: TableSpec,
    pub mc_samples: usize,
    pub mc_sigmas: f64,
    /// Quadrature nodes of the table pair built for the `n_rho` doubling check.
    pub interp_n_grid: usize,
    pub interp_n_rho: usize,
    pub n_psd_sets: usize,
    /// Real data for the scaling check; synthetic bytes are always checked.
    pub mnist_images: Option<PathBuf>,
    pub mnist_labels: Option<PathBuf>,
    pub cifar_batches: Vec<PathBuf>,
    pub seed: u64,
    pub deterministic: bool,
}

impl Default for InvariantsSuiteConfig {
    fn default() -> Self {
        Self {
            tables: TableSpec::default(),
            mc_samples: 10_000_000,
            mc_sigmas: 3.0,
            interp_n_grid: 601,
            interp_n_rho: 1001,
            n_psd_sets: 20,
            mnist_images: None,
            mnist_labels: None,
            cifar_batches: Vec::new(),
            seed: 0,
            deterministic: false,
        }
    }
}

fn max_of(it: impl IntoIterator<Item = f64>) -> f64 {
    it.into_iter().fold(0.0, f64::max)
}

fn count(it: impl IntoIterator<Item = bool>) -> f64 {
    it.into_iter().filter(|&b| b).count() as f64
}

fn special_checks(rng: &mut impl Rng, checks: &mut Vec<Check>) -> Result<()> {
    let mut xs: Vec<f64> = (0..10_000).map(|_| rng.gen_range(-40.0..40.0)).collect();
    xs.sort_by(f64::total_cmp);
    let cdf: Vec<f64> = xs.iter().map(|&x| std_normal_cdf(x)).collect();
    checks.push(Check::at_most("Phi monotonicity violations", count(cdf.windows(2).map(|w| w[0] > w[1])), 0.0));

    let reflection = max_of((0..=1600).map(|k| {
        let x = -8.0 + 0.01 * k as f64;
        (std_normal_cdf(x) + std_normal_cdf(-x) - 1.0).abs()
    }));
    checks.push(Check::at_most("max |Phi(x) + Phi(-x) - 1|", reflection, 1e-15));

    let mut marginal: f64 = 0.0;
    let mut independence: f64 = 0.0;
    for _ in 0..500 {
        let (x, y, rho) = (rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0), rng.gen_range(-1.0..=1.0));
        marginal = marginal.max((binormal_cdf(x, 38.0, rho)? - std_normal_cdf(x)).abs());
        independence = independence.max((binormal_cdf(x, y, 0.0)? - std_normal_cdf(x) * std_normal_cdf(y)).abs());
    }
    checks.push(Check::at_most("max |Phi2(x, 38, rho) - Phi(x)|", marginal, 1e-10));
    checks.push(Check::at_most("max |Phi2(x, y, 0) - Phi(x) Phi(y)|", independence, 1e-12));

    let mut diagonal: f64 = 0.0;
    for rho in [-0.99, -0.5, 0.0, 0.5, 0.99] {
        let exact = 0.25 + f64::asin(rho) / (2.0 * std::f64::consts::PI);
        diagonal = diagonal.max((binormal_cdf(0.0, 0.0, rho)? - exact).abs());
    }
    checks.push(Check::at_most("max |Phi2(0, 0, rho) - 1/4 - asin(rho) / 2pi|", diagonal, 1e-10));

    let along: Vec<f64> =
        (0..=2000).map(|i| binormal_cdf(0.0, 0.0, -1.0 + i as f64 / 1000.0)).collect::<Result<_>>()?;
    checks.push(Check::at_most("Phi2(0, 0, rho) monotonicity violations", count(along.windows(2).map(|w| w[0] > w[1])), 0.0));
    Ok(())
}

fn round_trip_mismatches(t: &FqTable) -> Result<f64> {
    let mut buf = Vec::new();
    t.write_to(&mut buf).map_err(|e| Error::io("<memory>", e))?;
    let back = FqTable::read_from(buf.as_slice(), "<memory>")?;
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    Ok(count([
        back.q() != t.q(),
        bits(back.rhos()) != bits(t.rhos()),
        bits(back.values()) != bits(t.values()),
    ]))
}

fn fq_checks(cfg: &InvariantsSuiteConfig, tables: &Tables, rng: &mut impl Rng, checks: &mut Vec<Check>) -> Result<()> {
    let t2 = tables.get(2)?;
    let dev = max_of(t2.rhos().iter().zip(t2.values()).map(|(&r, &v)| (v - closed_form_f2(r)).abs()));
    checks.push(Check::at_most("q=2 max |table - closed form|", dev, 1e-3));

    for q in [3, 4] {
        let t = tables.get(q)?;
        let mut worst: f64 = 0.0;
        for (i, rho) in [-1.0, -0.9, -0.5, 0.0, 0.5, 0.9, 1.0].into_iter().enumerate() {
            let est = mc_oracle_fq(q, rho, cfg.mc_samples, derive_seed(&[cfg.seed, 1, q as u64, i as u64]))?;
            worst = worst.max((t.interpolate(rho)? - est.estimate).abs() / est.std_error);
        }
        checks.push(Check::at_most(format!("q={q} max |table - mc| / se"), worst, cfg.mc_sigmas));
    }

    for q in [2, 3, 4] {
        let t = tables.get(q)?;
        let top = *t.values().last().expect("nonempty");
        checks.push(Check::at_most(
            format!("q={q} max |F(rho)| - F(1)"),
            t.values().iter().map(|v| v.abs() - top).fold(f64::MIN, f64::max),
            1e-6,
        ));
        let drop = max_of(t.values().windows(2).map(|w| w[0] - w[1]));
        checks.push(Check::at_most(format!("q={q} largest decrease along rho"), drop, if q == 2 { 0.0 } else { 1e-4 }));
    }

    let t1 = tables.get(1)?;
    let ident = max_of(t1.rhos().iter().zip(t1.values()).map(|(&r, &v)| (v - r).abs()));
    checks.push(Check::at_most("q=1 max |F(rho) - rho|", ident, 1e-12));

    let grid = QuadratureGrid::new(cfg.tables.build.r_max, cfg.interp_n_grid)?;
    let probes: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    for q in [2, 3] {
        let coarse = build_table(q, cfg.interp_n_rho, &grid, Scheme::Product)?;
        let fine = build_table(q, 2 * cfg.interp_n_rho - 1, &grid, Scheme::Product)?;
        let mut worst: f64 = 0.0;
        for &r in &probes {
            worst = worst.max((coarse.interpolate(r)? - fine.interpolate(r)?).abs());
        }
        checks.push(Check::at_most(format!("q={q} interpolation change when n_rho doubles"), worst, 1e-4));
    }

    let mut bad = 0.0;
    for q in 1..=4 {
        bad += round_trip_mismatches(&*tables.get(q)?)?;
    }
    checks.push(Check::at_most("table round-trip mismatches", bad, 0.0));
    Ok(())
}

fn random_params(rng: &mut impl Rng, q: usize) -> Result<KernelParams> {
    let depth = rng.gen_range(1..=12);
    KernelParams::new(q, depth, rng.gen_range(0.0..1.0), rng.gen_range(0.5..3.0))
}

fn min_eigenvalue(k: &Matrix<f64>) -> f64 {
    let n = k.nrows();
    let m = DMatrix::from_row_slice(n, n, k.as_slice());
    m.symmetric_eigenvalues().min()
}

fn kernel_checks(cfg: &InvariantsSuiteConfig, tables: &Tables, rng: &mut impl Rng, checks: &mut Vec<Check>) -> Result<()> {
    let (mut asym, mut bound_errors, mut below_bias, mut diag_dep, mut perm): (f64, f64, f64, f64, f64) =
        (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut psd: f64 = f64::MIN;
    for s in 0..cfg.n_psd_sets {
        let q = 2 + s % 3;
        let table = tables.get(q)?;
        let p = random_params(rng, q)?;
        let n = rng.gen_range(2..=50);
        let x = uniform_inputs(rng, n, 10);
        let k = match kernel_matrix(&x, &x, &p, &table) {
            Ok(k) => k.values,
            Err(Error::CorrelationBound { .. }) => {
                bound_errors += 1.0;
                continue;
            }
            Err(e) => return Err(e),
        };
        asym = asym.max(k.asymmetry());
        let diag = k.diagonal();
        below_bias = below_bias.max(max_of(diag.iter().map(|&d| p.sigma_b2 - d)));
        for (i, &d) in diag.iter().enumerate() {
            let alone = kernel_diagonal(&x.select_rows(&[i]), &p, &table)?[0];
            diag_dep = diag_dep.max((alone - d).abs());
        }
        let scale = max_of(diag.iter().copied());
        psd = psd.max(-min_eigenvalue(&k) / scale);

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let kp = kernel_matrix(&x.select_rows(&order), &x.select_rows(&order), &p, &table)?.values;
        let expect = Matrix::from_fn(n, n, |i, j| k[(order[i], order[j])]);
        perm = perm.max(kp.max_abs_diff(&expect));
    }
    checks.push(Check::at_most("max |K - K^T|", asym, 0.0));
    checks.push(Check::at_most("correlation bound violations", bound_errors, 0.0));
    checks.push(Check::at_most("max sigma_b2 - K(x, x)", below_bias, 0.0));
    checks.push(Check::at_most("max |K(x, x) in a set - K(x, x) alone|", diag_dep, 0.0));
    checks.push(Check::at_most("max -min eigenvalue / max diagonal", psd, 1e-8));
    checks.push(Check::at_most("max |K(PX, PX) - P K P^T|", perm, 0.0));

    let t2 = tables.get(2)?;
    let sets: Vec<Matrix<f64>> = (0..10).map(|_| uniform_inputs(rng, 20, 10)).collect();
    let pairs: Vec<(f64, f64)> = (0..5).map(|_| (rng.gen_range(0.0..=1.0), rng.gen_range(0.5..=1.0))).collect();
    let mut prop1: f64 = 0.0;
    for depth in [1, 5, 9, 13, 17, 21] {
        for &(b, w) in &pairs {
            let p = KernelParams::new(2, depth, b, w)?;
            for x in &sets {
                prop1 = prop1.max(prop1_residual(x, &p, &t2)?);
            }
        }
    }
    checks.push(Check::at_most("max q=2 vs ReLU residual", prop1, 1e-3));

    let t1 = tables.get(1)?;
    let mut linear: f64 = 0.0;
    for _ in 0..5 {
        let p = KernelParams::new(1, rng.gen_range(1..=8), rng.gen_range(0.0..0.5), rng.gen_range(0.3..1.2))?;
        let x = uniform_inputs(rng, 12, 6);
        let k = kernel_matrix(&x, &x, &p, &t1)?.values;
        let d = x.ncols() as f64;
        for i in 0..x.nrows() {
            for j in 0..x.nrows() {
                let mut v: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| a * b).sum::<f64>() / d;
                // depth hidden maps plus the readout
                for _ in 0..=p.depth {
                    v = p.sigma_b2 + p.sigma_w2 * v;
                }
                linear = linear.max((k[(i, j)] - v).abs());
            }
        }
    }
    checks.push(Check::at_most("q=1 max |K - affine closed form|", linear, 1e-12));
    Ok(())
}

fn blobs(rng: &mut impl Rng, n_per_class: usize) -> (Matrix<f64>, Vec<usize>) {
    let n = 2 * n_per_class;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x = Matrix::from_fn(n, 5, |i, _| {
        let centre = if labels[i] == 0 { -2.0 } else { 2.0 };
        centre + rng.gen_range(-0.5..0.5)
    });
    (x, labels)
}

fn gp_checks(tables: &Tables, rng: &mut impl Rng, checks: &mut Vec<Check>) -> Result<()> {
    let mut resid: f64 = 0.0;
    for _ in 0..10 {
        let n = rng.gen_range(2..=64);
        let a = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut k = a.matmul(&a.transpose())?;
        for i in 0..n {
            k[(i, i)] += 0.1;
        }
        let t = Matrix::from_fn(n, 3, |_, _| rng.gen_range(-1.0..1.0));
        let jc = solve_with_jitter(&k, 1e-10)?;
        let s = jc.factor.solve(&t);
        let mut ks = k.matmul(&s)?;
        for i in 0..n {
            for c in 0..3 {
                ks[(i, c)] += jc.noise_used * s[(i, c)];
            }
        }
        resid = resid.max(ks.max_abs_diff(&t) / t.max_abs());
    }
    checks.push(Check::at_most("max solver residual / |t|", resid, 1e-8));

    let table = tables.get(2)?;
    let p = KernelParams::new(2, 3, 0.2, 1.5)?;
    let (x, labels) = blobs(rng, 15);
    let xt = uniform_inputs(rng, 10, 5);
    let targets = encode_targets::<f64>(&labels, 2)?;
    let mu = posterior_mean(&kernel_matrix(&x, &x, &p, &table)?.values, &kernel_matrix(&xt, &x, &p, &table)?.values, &targets, 1e-10)?.mean;
    let mut tr: Vec<usize> = (0..x.nrows()).collect();
    tr.shuffle(rng);
    let mut te: Vec<usize> = (0..xt.nrows()).collect();
    te.shuffle(rng);
    let (xp, xtp) = (x.select_rows(&tr), xt.select_rows(&te));
    let mu_p = posterior_mean(
        &kernel_matrix(&xp, &xp, &p, &table)?.values,
        &kernel_matrix(&xtp, &xp, &p, &table)?.values,
        &targets.select_rows(&tr),
        1e-10,
    )?
    .mean;
    checks.push(Check::at_most(
        "max |mu(permuted) - permuted mu| / |mu|",
        mu_p.max_abs_diff(&mu.select_rows(&te)) / mu.max_abs(),
        1e-9,
    ));

    let one = |v: f64| Matrix::from_vec(1, 1, vec![v]).expect("1x1");
    let mags: Vec<f64> = (-10..=8)
        .map(|e| posterior_mean(&one(1.3), &one(0.7), &one(1.0), 10f64.powi(e)).map(|r| r.mean[(0, 0)].abs()))
        .collect::<Result<_>>()?;
    let violations = count(mags.windows(2).map(|w| w[1] >= w[0])) + count([*mags.last().expect("nonempty") > 1e-7]);
    checks.push(Check::at_most("scalar posterior noise monotonicity violations", violations, 0.0));

    let dup = Matrix::from_fn(6, 6, |_, _| 1.0);
    let (a, b) = (solve_with_jitter(&dup, 1e-10)?, solve_with_jitter(&dup, 1e-10)?);
    let det = count([a.escalations != b.escalations, a.noise_used.to_bits() != b.noise_used.to_bits(), a.escalations == 0]);
    checks.push(Check::at_most("escalation determinism violations", det, 0.0));

    let (train, ytr) = blobs(rng, 25);
    let (test, yte) = blobs(rng, 25);
    let mu = posterior_mean(
        &kernel_matrix(&train, &train, &p, &table)?.values,
        &kernel_matrix(&test, &train, &p, &table)?.values,
        &encode_targets::<f64>(&ytr, 2)?,
        1e-10,
    )?
    .mean;
    checks.push(Check::at_most("1 - accuracy on separable blobs", 1.0 - accuracy(&predict_classes(&mu), &yte)?, 0.0));
    Ok(())
}

fn range_violations(d: &Dataset) -> f64 {
    count(d.inputs.as_slice().iter().map(|&v| !(0.0..=1.0).contains(&v)))
}

fn dataset_checks(cfg: &InvariantsSuiteConfig, rng: &mut impl Rng, checks: &mut Vec<Check>) -> Result<()> {
    let n = 40;
    let x = Matrix::from_fn(n, 7, |_, _| rng.gen_range(-1e3..1e3) * 10f64.powi(rng.gen_range(-20..20)));
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..5)).collect();
    let data = Dataset::new(x, labels, 5, "synthetic")?;
    let path = std::env::temp_dir().join(format!("mnngp-invariants-{}-{}.csv", std::process::id(), cfg.seed));
    let mut buf = Vec::new();
    write_dataset_csv(&data, &mut buf).map_err(|e| Error::io(&path, e))?;
    std::fs::write(&path, &buf).map_err(|e| Error::io(&path, e))?;
    let back = load_dataset_csv(&path, Some(5));
    let _ = std::fs::remove_file(&path);
    let back = back?;
    let ulps = max_of(data.inputs.as_slice().iter().zip(back.inputs.as_slice()).map(|(&a, &b)| {
        (a - b).abs() / (a.abs() * f64::EPSILON).max(f64::MIN_POSITIVE)
    }));
    checks.push(Check::at_most("csv round-trip max error in ulps", ulps, 1.0));
    checks.push(Check::at_most("csv round-trip label mismatches", count(data.labels.iter().zip(&back.labels).map(|(a, b)| a != b)), 0.0));

    let indexed = Dataset::new(Matrix::from_fn(200, 1, |i, _| i as f64), vec![0; 200], 1, "index")?;
    let mut overlap = 0.0;
    for s in 0..20 {
        let n_t = rng.gen_range(0..=200);
        let n_v = rng.gen_range(0..=200 - n_t);
        let (t, v) = split(&indexed, n_t, n_v, derive_seed(&[cfg.seed, 2, s]))?;
        let tr: std::collections::HashSet<u64> = t.inputs.as_slice().iter().map(|x| x.to_bits()).collect();
        overlap += count(v.inputs.as_slice().iter().map(|x| tr.contains(&x.to_bits())));
        overlap += count([tr.len() != n_t]);
    }
    checks.push(Check::at_most("train/validation overlaps", overlap, 0.0));

    let mut img = 2051u32.to_be_bytes().to_vec();
    for d in [3u32, 28, 28] {
        img.extend_from_slice(&d.to_be_bytes());
    }
    img.extend((0..3 * MNIST_DIM).map(|i| if i < 2 { (i * 255) as u8 } else { rng.gen() }));
    let mut lbl = 2049u32.to_be_bytes().to_vec();
    lbl.extend_from_slice(&3u32.to_be_bytes());
    lbl.extend_from_slice(&[0, 4, 9]);
    let mut cifar: Vec<u8> = (0..2 * CIFAR_RECORD).map(|_| rng.gen()).collect();
    cifar[0] = 1;
    cifar[CIFAR_RECORD] = 9;
    let synthetic = range_violations(&mnist_from_bytes(&img, &lbl, "synthetic-images", "synthetic-labels")?)
        + range_violations(&cifar10_from_bytes(&cifar, "synthetic-batch")?);
    checks.push(Check::at_most("pixels outside [0, 1], synthetic files", synthetic, 0.0));

    if let (Some(i), Some(l)) = (&cfg.mnist_images, &cfg.mnist_labels) {
        checks.push(Check::at_most("pixels outside [0, 1], MNIST", range_violations(&load_mnist(i, l)?), 0.0));
    }
    if !cfg.cifar_batches.is_empty() {
        checks.push(Check::at_most("pixels outside [0, 1], CIFAR-10", range_violations(&load_cifar10(&cfg.cifar_batches)?), 0.0));
    }
    Ok(())
}

/// Every structural property of the numerical core, each as a gated check.
pub fn invariants_suite(cfg: &InvariantsSuiteConfig, tables: &Tables) -> Result<SuiteReport<InvariantsSuiteConfig>> {
    let t0 = Instant::now();
    let mut checks = Vec::new();
    let mut rng = seeded(cfg.seed);
    special_checks(&mut rng, &mut checks)?;
    fq_checks(cfg, tables, &mut rng, &mut checks)?;
    kernel_checks(cfg, tables, &mut rng, &mut checks)?;
    gp_checks(tables, &mut rng, &mut checks)?;
    dataset_checks(cfg, &mut rng, &mut checks)?;
    Ok(SuiteReport {
        suite: "invariants",
        config: cfg.clone(),
        prng: PRNG_NAME,
        passed: verdict(&checks),
        checks,
        wall_time_seconds: elapsed(t0, cfg.deterministic),
    })
}
