//! Finite-width maxout networks at random initialization, sampled as a
//! brute-force check of the infinite-width kernel.
//!
//! A linear map with iid `N(0, s^2)` weights only ever acts on the `n` input
//! rows it is shown. If `Q` holds an orthonormal basis of their span, then
//! `X W^T = (X Q^T)(Q W^T)` and `Q W^T` again has iid `N(0, s^2)` entries. Each
//! unit is therefore drawn from `rank(X) <= n` normals instead of `fan_in`,
//! which gives the exact joint law of the network outputs on `X` at a cost
//! independent of the width feeding the unit.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fq::FqTable;
use crate::kernel::{kernel_matrix, KernelParams};
use crate::linalg::{dot, Matrix};
use crate::rng::{substream, ChaCha8Rng};

/// Networks per block of the empirical-kernel sum; blocks are summed in
/// index order, so the estimate does not depend on scheduling.
const BLOCK: usize = 64;

/// Basis vectors whose residual norm falls below this fraction of the input
/// row's norm are treated as linearly dependent.
const RANK_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkArch {
    pub d_in: usize,
    /// Hidden widths `N_1 .. N_L`.
    pub widths: Vec<usize>,
    pub q: usize,
    pub d_out: usize,
    pub sigma_b2: f64,
    pub sigma_w2: f64,
}

impl NetworkArch {
    pub fn new(d_in: usize, widths: Vec<usize>, q: usize, d_out: usize, sigma_b2: f64, sigma_w2: f64) -> Result<Self> {
        let a = Self { d_in, widths, q, d_out, sigma_b2, sigma_w2 };
        a.validate()?;
        Ok(a)
    }

    /// `depth` hidden layers of equal `width`.
    pub fn uniform(d_in: usize, width: usize, depth: usize, q: usize, sigma_b2: f64, sigma_w2: f64) -> Result<Self> {
        Self::new(d_in, vec![width; depth], q, 1, sigma_b2, sigma_w2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_out == 0 || self.q == 0 || self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::usage(format!("all network dimensions must be >= 1: {self:?}")));
        }
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.sigma_b2) || !ok(self.sigma_w2) {
            return Err(Error::usage("weight and bias variances must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }
}

/// Orthonormal basis of the row span of `x` and the coordinates of each row.
fn row_span(x: &Matrix<f64>) -> (Vec<Vec<f64>>, Matrix<f64>) {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for row in x.rows_iter() {
        let norm = dot(row, row).sqrt();
        let mut r = row.to_vec();
        for b in &basis {
            let c = dot(&r, b);
            for (v, &e) in r.iter_mut().zip(b) {
                *v -= c * e;
            }
        }
        let rn = dot(&r, &r).sqrt();
        if rn > RANK_RTOL * norm && rn > 0.0 {
            for v in &mut r {
                *v /= rn;
            }
            basis.push(r);
        }
    }
    let coords = Matrix::from_fn(x.nrows(), basis.len(), |i, k| dot(x.row(i), &basis[k]));
    (basis, coords)
}

/// `n x units` pre-activations of a fresh linear map with weight variance
/// `sigma_w2 / fan_in` and bias variance `sigma_b2`.
fn linear(rng: &mut ChaCha8Rng, x: &Matrix<f64>, units: usize, sigma_w2: f64, sigma_b2: f64) -> Matrix<f64> {
    let (_, coords) = row_span(x);
    let (n, r) = coords.shape();
    let w_sd = (sigma_w2 / x.ncols() as f64).sqrt();
    let b_sd = sigma_b2.sqrt();
    let mut out = Matrix::zeros(n, units);
    let mut xi = vec![0.0; r];
    for u in 0..units {
        for v in xi.iter_mut() {
            *v = w_sd * rng.sample::<f64, _>(StandardNormal);
        }
        let b = b_sd * rng.sample::<f64, _>(StandardNormal);
        for i in 0..n {
            out[(i, u)] = dot(coords.row(i), &xi) + b;
        }
    }
    out
}

fn last_hidden(arch: &NetworkArch, x: &Matrix<f64>, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    let q = arch.q;
    let mut h = x.clone();
    for &width in &arch.widths {
        let pre = linear(rng, &h, width * q, arch.sigma_w2, arch.sigma_b2);
        h = Matrix::from_fn(x.nrows(), width, |i, k| {
            pre.row(i)[k * q..(k + 1) * q].iter().copied().fold(f64::NEG_INFINITY, f64::max)
        });
    }
    h
}

fn forward(arch: &NetworkArch, x: &Matrix<f64>, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    let h = last_hidden(arch, x, rng);
    linear(rng, &h, arch.d_out, arch.sigma_w2, arch.sigma_b2)
}

fn check_inputs(arch: &NetworkArch, x: &Matrix<f64>) -> Result<()> {
    arch.validate()?;
    if x.ncols() != arch.d_in {
        return Err(Error::usage(format!("inputs have {} columns, network expects {}", x.ncols(), arch.d_in)));
    }
    if !x.all_finite() {
        return Err(Error::usage("inputs contain non-finite values"));
    }
    Ok(())
}

/// Draw one network from `seed` and evaluate it on every row of `x`.
pub fn sample_and_forward(arch: &NetworkArch, x: &Matrix<f64>, seed: u64) -> Result<Matrix<f64>> {
    check_inputs(arch, x)?;
    Ok(forward(arch, x, &mut substream(seed, 0)))
}

/// Two estimates of the output kernel from the same `S` sampled networks.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelEstimates {
    /// `(1 / S) sum_s z_s z_s^T`.
    pub second_moment: Matrix<f64>,
    /// `(1 / S) sum_s E[z_s z_s^T | last hidden layer]`, which averages out
    /// the readout weights analytically.
    pub conditional: Matrix<f64>,
}

fn add_lower(acc: &mut Matrix<f64>, a: &Matrix<f64>, scale: f64, shift: f64) {
    for i in 0..a.nrows() {
        for j in 0..=i {
            acc[(i, j)] += shift + scale * dot(a.row(i), a.row(j));
        }
    }
}

fn finish_lower(mut k: Matrix<f64>, n_networks: usize) -> Matrix<f64> {
    let inv = 1.0 / n_networks as f64;
    for i in 0..k.nrows() {
        for j in 0..=i {
            let v = k[(i, j)] * inv;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Network `s` uses substream `s` of `seed`; blocks of networks are summed in
/// index order.
pub fn kernel_estimates(arch: &NetworkArch, x: &Matrix<f64>, n_networks: usize, seed: u64) -> Result<KernelEstimates> {
    check_inputs(arch, x)?;
    if n_networks < 100 {
        return Err(Error::usage(format!("need at least 100 networks, got {n_networks}")));
    }
    if arch.d_out != 1 {
        return Err(Error::usage("the empirical kernel uses a single output channel (d_out = 1)"));
    }
    let n = x.nrows();
    let width = *arch.widths.last().expect("validated");
    let readout = arch.sigma_w2 / width as f64;
    let blocks: Vec<(Matrix<f64>, Matrix<f64>)> = (0..n_networks.div_ceil(BLOCK))
        .into_par_iter()
        .map(|blk| {
            let mut second = Matrix::zeros(n, n);
            let mut cond = Matrix::zeros(n, n);
            for s in blk * BLOCK..((blk + 1) * BLOCK).min(n_networks) {
                let mut rng = substream(seed, s as u64);
                let h = last_hidden(arch, x, &mut rng);
                let z = linear(&mut rng, &h, 1, arch.sigma_w2, arch.sigma_b2);
                add_lower(&mut second, &z, 1.0, 0.0);
                add_lower(&mut cond, &h, readout, arch.sigma_b2);
            }
            (second, cond)
        })
        .collect();
    let mut second = Matrix::zeros(n, n);
    let mut cond = Matrix::zeros(n, n);
    for (a, b) in &blocks {
        for (v, &e) in second.as_mut_slice().iter_mut().zip(a.as_slice()) {
            *v += e;
        }
        for (v, &e) in cond.as_mut_slice().iter_mut().zip(b.as_slice()) {
            *v += e;
        }
    }
    Ok(KernelEstimates {
        second_moment: finish_lower(second, n_networks),
        conditional: finish_lower(cond, n_networks),
    })
}

/// `(1 / S) sum_s z_s z_s^T` over `S = n_networks` networks.
pub fn empirical_kernel(arch: &NetworkArch, x: &Matrix<f64>, n_networks: usize, seed: u64) -> Result<Matrix<f64>> {
    Ok(kernel_estimates(arch, x, n_networks, seed)?.second_moment)
}

fn relative_gap(emp: &Matrix<f64>, theory: &Matrix<f64>) -> f64 {
    let mut diff = emp.clone();
    for (d, &t) in diff.as_mut_slice().iter_mut().zip(theory.as_slice()) {
        *d -= t;
    }
    diff.frobenius_norm() / theory.frobenius_norm()
}

/// Relative Frobenius gaps of both estimators against the limiting kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gaps {
    pub second_moment: f64,
    pub conditional: f64,
}

fn check_agreement(arch: &NetworkArch, params: &KernelParams) -> Result<()> {
    if arch.q != params.q
        || arch.depth() != params.depth
        || arch.sigma_b2 != params.sigma_b2
        || arch.sigma_w2 != params.sigma_w2
    {
        return Err(Error::usage(format!("network {arch:?} and kernel {params:?} disagree")));
    }
    Ok(())
}

pub fn theorem1_gaps(
    arch: &NetworkArch,
    params: &KernelParams,
    table: &FqTable,
    x: &Matrix<f64>,
    n_networks: usize,
    seed: u64,
) -> Result<Gaps> {
    check_agreement(arch, params)?;
    let theory = kernel_matrix(x, x, params, table)?.values;
    let est = kernel_estimates(arch, x, n_networks, seed)?;
    Ok(Gaps {
        second_moment: relative_gap(&est.second_moment, &theory),
        conditional: relative_gap(&est.conditional, &theory),
    })
}

/// `||K_emp - K||_F / ||K||_F` between the sampled and the limiting kernel.
pub fn theorem1_gap(
    arch: &NetworkArch,
    params: &KernelParams,
    table: &FqTable,
    x: &Matrix<f64>,
    n_networks: usize,
    seed: u64,
) -> Result<f64> {
    check_agreement(arch, params)?;
    let theory = kernel_matrix(x, x, params, table)?.values;
    Ok(relative_gap(&empirical_kernel(arch, x, n_networks, seed)?, &theory))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fq::{build_table, QuadratureGrid, Scheme};
    use rand::SeedableRng;
    use std::f64::consts::PI;

    fn inputs(n: usize, d: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn zero_variances_give_zero_output() {
        let arch = NetworkArch::uniform(3, 16, 2, 3, 0.0, 0.0).unwrap();
        let z = sample_and_forward(&arch, &inputs(4, 3, 1), 9).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rank_one_network_is_linear_without_bias() {
        let arch = NetworkArch::new(4, vec![32], 1, 2, 0.0, 1.3).unwrap();
        let x = inputs(5, 4, 2);
        let z1 = sample_and_forward(&arch, &x, 11).unwrap();
        let z2 = sample_and_forward(&arch, &x.map(|v| 2.0 * v), 11).unwrap();
        assert_eq!(z2, z1.map(|v| 2.0 * v));
    }

    #[test]
    fn identical_rows_give_identical_outputs() {
        let mut x = inputs(4, 6, 3);
        let r0 = x.row(0).to_vec();
        x.row_mut(3).copy_from_slice(&r0);
        let arch = NetworkArch::new(6, vec![20, 20], 3, 3, 0.4, 1.7).unwrap();
        let z = sample_and_forward(&arch, &x, 5).unwrap();
        assert_eq!(z.row(0), z.row(3));
        assert_eq!(z, sample_and_forward(&arch, &x, 5).unwrap());
        assert_ne!(z, sample_and_forward(&arch, &x, 6).unwrap());
    }

    #[test]
    fn span_trick_matches_explicit_weights_in_distribution() {
        // explicit weight matrices, same law; compare second moments
        let arch = NetworkArch::uniform(3, 8, 1, 2, 0.3, 1.5).unwrap();
        let x = inputs(3, 3, 4);
        let s = 40_000;
        let fast = empirical_kernel(&arch, &x, s, 1).unwrap();
        let mut slow = Matrix::zeros(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..s {
            let mut g = |sd: f64| sd * rng.sample::<f64, _>(StandardNormal);
            let w0: Vec<f64> = (0..16 * 3).map(|_| g((1.5f64 / 3.0).sqrt())).collect();
            let b0: Vec<f64> = (0..16).map(|_| g(0.3f64.sqrt())).collect();
            let w1: Vec<f64> = (0..8).map(|_| g((1.5f64 / 8.0).sqrt())).collect();
            let b1 = g(0.3f64.sqrt());
            let z: Vec<f64> = (0..3)
                .map(|i| {
                    let pre: Vec<f64> = (0..16).map(|u| dot(&w0[u * 3..u * 3 + 3], x.row(i)) + b0[u]).collect();
                    let h: Vec<f64> = (0..8).map(|k| pre[2 * k].max(pre[2 * k + 1])).collect();
                    dot(&w1, &h) + b1
                })
                .collect();
            for i in 0..3 {
                for j in 0..3 {
                    slow[(i, j)] += z[i] * z[j] / s as f64;
                }
            }
        }
        let scale = fast.max_abs();
        assert!(fast.max_abs_diff(&slow) < 0.05 * scale, "{fast:?} vs {slow:?}");
    }

    #[test]
    fn bias_only_network_is_a_shared_constant() {
        let arch = NetworkArch::uniform(2, 4, 1, 2, 0.8, 0.0).unwrap();
        let s = 100_000;
        let k = empirical_kernel(&arch, &inputs(3, 2, 8), s, 3).unwrap();
        let tol = 5.0 * 0.8 / (s as f64).sqrt() * 3.0;
        assert!(k.as_slice().iter().all(|&v| (v - 0.8).abs() <= tol));
        assert!(empirical_kernel(&arch, &inputs(3, 2, 8), 99, 3).is_err());
    }

    #[test]
    fn wide_layer_matches_one_over_pi() {
        let s2 = 2f64.sqrt();
        let x = Matrix::from_vec(2, 2, vec![s2, 0.0, 0.0, s2]).unwrap();
        // output weight variance 1 over width 4096 reads the layer-1 kernel
        let arch = NetworkArch::uniform(2, 4096, 1, 2, 0.0, 1.0).unwrap();
        let k = empirical_kernel(&arch, &x, 2_000, 4).unwrap();
        assert!((k[(0, 1)] - 1.0 / PI).abs() < 0.06, "{k:?}");
        assert_eq!(k.asymmetry(), 0.0);
        let eig = nalgebra::DMatrix::from_row_slice(2, 2, k.as_slice()).symmetric_eigenvalues();
        assert!(eig.min() >= -1e-12);
    }

    #[test]
    fn gap_is_small_for_wide_networks_and_checks_consistency() {
        let table = build_table(2, 1001, &QuadratureGrid::new(8.0, 401).unwrap(), Scheme::Product).unwrap();
        let x = inputs(4, 5, 6);
        let params = KernelParams::new(2, 2, 0.2, 1.4).unwrap();
        let arch = NetworkArch::uniform(5, 256, 2, 2, 0.2, 1.4).unwrap();
        let gap = theorem1_gap(&arch, &params, &table, &x, 4_000, 1).unwrap();
        assert!(gap < 0.08, "{gap}");
        let wrong = NetworkArch::uniform(5, 256, 3, 2, 0.2, 1.4).unwrap();
        assert!(theorem1_gap(&wrong, &params, &table, &x, 4_000, 1).is_err());
        let bias_only = NetworkArch::uniform(5, 16, 2, 2, 0.5, 0.0).unwrap();
        let p0 = KernelParams::new(2, 2, 0.5, 0.0).unwrap();
        let n = 10_000;
        let gap = theorem1_gap(&bias_only, &p0, &table, &x, n, 2).unwrap();
        assert!(gap <= 3.0 / (n as f64).sqrt(), "{gap}");
    }

    #[test]
    fn estimators_share_networks() {
        let arch = NetworkArch::uniform(3, 24, 2, 2, 0.3, 1.1).unwrap();
        let x = inputs(4, 3, 13);
        let est = kernel_estimates(&arch, &x, 3_000, 8).unwrap();
        assert_eq!(est.second_moment, empirical_kernel(&arch, &x, 3_000, 8).unwrap());
        // same expectation, much smaller spread
        let d = est.second_moment.max_abs_diff(&est.conditional);
        assert!(d < 0.1 * est.conditional.max_abs(), "{d}");
        assert_eq!(est.conditional.asymmetry(), 0.0);
    }

    #[test]
    fn conditional_gap_shrinks_with_width() {
        let table = build_table(3, 1001, &QuadratureGrid::new(8.0, 401).unwrap(), Scheme::Product).unwrap();
        let x = inputs(4, 5, 14);
        let params = KernelParams::new(3, 2, 0.1, 1.0).unwrap();
        let gap = |w: usize| {
            let arch = NetworkArch::uniform(5, w, 2, 3, 0.1, 1.0).unwrap();
            (0..3).map(|s| theorem1_gaps(&arch, &params, &table, &x, 1_000, s).unwrap().conditional).sum::<f64>()
        };
        let (g8, g128) = (gap(8), gap(128));
        assert!(g128 < 0.5 * g8, "{g8} {g128}");
    }

    #[test]
    fn disjoint_seed_ranges_agree() {
        let arch = NetworkArch::uniform(3, 32, 2, 3, 0.1, 1.2).unwrap();
        let x = inputs(3, 3, 12);
        let s = 20_000;
        let a = empirical_kernel(&arch, &x, s, 100).unwrap();
        let b = empirical_kernel(&arch, &x, s, 200).unwrap();
        // crude standard error of a second moment: sqrt(2) * K_ii K_jj / sqrt(S)
        for i in 0..3 {
            for j in 0..3 {
                let se = (2.0 * a[(i, i)] * a[(j, j)] / s as f64).sqrt();
                assert!((a[(i, j)] - b[(i, j)]).abs() <= 3.0 * se * 2f64.sqrt());
            }
        }
    }
}
