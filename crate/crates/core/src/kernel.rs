//! The compositional maxout kernel.
//!
//! With `G(k) = sigma_b2 + sigma_w2 * k` (the affine layer acting on second
//! moments) and `H(a, c, b) = sqrt(a) sqrt(b) F_q(c / sqrt(a b))` (the maxout
//! nonlinearity acting on pre-activation covariances), the second moment of
//! layer `l` is `M^l = H(G(M^{l-1}))` with `M^0 = <x, x'> / d`, and the network
//! output covariance is `K^L = G(M^L)`. [`next_layer`] is one `G . H . G` step,
//! so `K^L` equals `next_layer` applied to `M^{L-1}`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fq::FqTable;
use crate::linalg::{dot, Matrix};
use crate::scalar::Scalar;

/// Correlations may overshoot [-1, 1] by this much (or a few machine epsilons
/// of the working scalar, whichever is larger) before the recursion aborts.
pub const CORRELATION_BAND: f64 = 1e-9;

/// Hyperparameters of the kernel recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub q: usize,
    pub depth: usize,
    pub sigma_b2: f64,
    pub sigma_w2: f64,
}

impl KernelParams {
    pub fn new(q: usize, depth: usize, sigma_b2: f64, sigma_w2: f64) -> Result<Self> {
        let p = Self { q, depth, sigma_b2, sigma_w2 };
        p.validate()?;
        Ok(p)
    }

    /// `sigma_w2 = 0` is allowed: it collapses the kernel to the constant
    /// `sigma_b2`, a useful degenerate check.
    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(Error::usage("maxout rank q must be at least 1"));
        }
        if self.depth == 0 {
            return Err(Error::usage("depth must be at least 1"));
        }
        let (b, w) = (self.sigma_b2, self.sigma_w2);
        if !(b.is_finite() && w.is_finite() && b >= 0.0 && w >= 0.0 && b + w > 0.0) {
            return Err(Error::usage(format!(
                "need sigma_b2 >= 0, sigma_w2 >= 0 with a positive sum, got ({b}, {w})"
            )));
        }
        Ok(())
    }

    fn check_table(&self, table: &FqTable) -> Result<()> {
        self.validate()?;
        if table.q() != self.q {
            return Err(Error::usage(format!(
                "table was built for q={} but the kernel asks for q={}",
                table.q(),
                self.q
            )));
        }
        Ok(())
    }

    #[inline]
    fn affine<T: Scalar>(&self, k: T) -> T {
        T::of(self.sigma_b2) + T::of(self.sigma_w2) * k
    }
}

/// Kernel values between two point sets, plus the per-layer second moments
/// `M^0 .. M^{L-1}` of each set's points.
#[derive(Debug, Clone)]
pub struct KernelMatrix<T> {
    pub values: Matrix<T>,
    /// Whether both point sets were the same, in which case `values` is
    /// exactly symmetric.
    pub symmetric: bool,
    pub x_moments: Vec<Vec<T>>,
    pub y_moments: Vec<Vec<T>>,
}

fn band<T: Scalar>() -> T {
    T::of(CORRELATION_BAND).max(T::epsilon() * T::of(16.0))
}

/// `<x, x'> / d`.
pub fn k0<T: Scalar>(x: &[T], x_prime: &[T]) -> Result<T> {
    if x.len() != x_prime.len() || x.is_empty() {
        return Err(Error::usage(format!(
            "inputs of dimension {} and {} (need equal, nonzero)",
            x.len(),
            x_prime.len()
        )));
    }
    Ok(dot(x, x_prime) / T::of(x.len() as f64))
}

/// Clamp a correlation into [-1, 1], rejecting values beyond the band.
fn checked_correlation<T: Scalar>(c: T, scale: T) -> std::result::Result<T, T> {
    let rho = c / scale;
    if rho.is_nan() || rho.abs() > T::one() + band::<T>() {
        Err(rho)
    } else {
        Ok(rho.max(-T::one()).min(T::one()))
    }
}

#[inline]
fn table_at<T: Scalar>(table: &FqTable, rho: T) -> T {
    T::of(table.lookup(rho.as_f64()))
}

/// `sigma_b2 + sigma_w2 * sqrt(a) sqrt(b) F_q(c / sqrt(a b))` with `a`, `b`, `c`
/// the affine images of `k_xx`, `k_yy`, `k_xy`.
pub fn next_layer<T: Scalar>(k_xx: T, k_xy: T, k_yy: T, params: &KernelParams, table: &FqTable) -> Result<T> {
    params.check_table(table)?;
    let (a, b, c) = (params.affine(k_xx), params.affine(k_yy), params.affine(k_xy));
    if !(a > T::zero()) {
        return Err(Error::DegenerateInput { set: "x", row: 0, layer: 1 });
    }
    if !(b > T::zero()) {
        return Err(Error::DegenerateInput { set: "y", row: 0, layer: 1 });
    }
    let scale = a.sqrt() * b.sqrt();
    let rho = checked_correlation(c, scale).map_err(|rho| Error::Domain {
        op: "next_layer",
        detail: format!("correlation {rho} outside [-1, 1]"),
    })?;
    Ok(params.affine(scale * table_at(table, rho)))
}

/// Second moments `M^0 .. M^{depth-1}` of each row.
fn moment_trajectories<T: Scalar>(
    x: &Matrix<T>,
    set: &'static str,
    params: &KernelParams,
    f_one: T,
) -> Result<Vec<Vec<T>>> {
    let n = x.nrows();
    let mut layers = Vec::with_capacity(params.depth);
    let base: Vec<T> = x.rows_iter().map(|r| k0(r, r)).collect::<Result<_>>()?;
    layers.push(base);
    for l in 1..params.depth {
        let prev = &layers[l - 1];
        let mut next = Vec::with_capacity(n);
        for (row, &m) in prev.iter().enumerate() {
            let a = params.affine(m);
            if !(a > T::zero()) {
                return Err(Error::DegenerateInput { set, row, layer: l });
            }
            next.push(a * f_one);
        }
        layers.push(next);
    }
    // the last affine image feeds the output layer of every entry
    let last = &layers[params.depth - 1];
    if let Some(row) = last.iter().position(|&m| !(params.affine(m) > T::zero())) {
        return Err(Error::DegenerateInput { set, row, layer: params.depth });
    }
    Ok(layers)
}

struct EntryCtx<'a, T> {
    params: &'a KernelParams,
    table: &'a FqTable,
    xm: &'a [Vec<T>],
    ym: &'a [Vec<T>],
}

impl<T: Scalar> EntryCtx<'_, T> {
    /// Output covariance for one pair given its input inner product.
    #[inline]
    fn entry(&self, i: usize, j: usize, m0: T) -> Result<T> {
        let p = self.params;
        let mut m = m0;
        for l in 0..p.depth {
            let a = p.affine(self.xm[l][i]);
            let b = p.affine(self.ym[l][j]);
            let scale = a.sqrt() * b.sqrt();
            let rho = checked_correlation(p.affine(m), scale).map_err(|rho| {
                Error::CorrelationBound { value: rho.as_f64(), layer: l + 1, row: i, col: j }
            })?;
            m = scale * table_at(self.table, rho);
        }
        Ok(p.affine(m))
    }
}

/// `K^L` between the rows of `x` and `y`.
///
/// When `x` and `y` hold the same data only the lower triangle is computed and
/// then mirrored, so the result is exactly symmetric. Rows are processed in
/// parallel; every entry is computed independently, so the output does not
/// depend on the thread count.
pub fn kernel_matrix<T: Scalar>(
    x: &Matrix<T>,
    y: &Matrix<T>,
    params: &KernelParams,
    table: &FqTable,
) -> Result<KernelMatrix<T>> {
    params.check_table(table)?;
    if x.ncols() != y.ncols() || x.ncols() == 0 {
        return Err(Error::usage(format!(
            "input dimensions differ or are zero: {} vs {}",
            x.ncols(),
            y.ncols()
        )));
    }
    let symmetric = std::ptr::eq(x, y) || x == y;
    let f_one = table_at(table, T::one());
    let x_moments = moment_trajectories(x, "X", params, f_one)?;
    let y_moments = if symmetric { x_moments.clone() } else { moment_trajectories(y, "Y", params, f_one)? };

    let (n, m) = (x.nrows(), y.nrows());
    let d = T::of(x.ncols() as f64);
    let ctx = EntryCtx { params, table, xm: &x_moments, ym: &y_moments };
    let mut values = Matrix::zeros(n, m);
    if m > 0 {
        let outcomes: Vec<Result<()>> = values
            .as_mut_slice()
            .par_chunks_mut(m)
            .enumerate()
            .map(|(i, out)| {
                let xi = x.row(i);
                let cols = if symmetric { i + 1 } else { m };
                for j in 0..cols {
                    out[j] = ctx.entry(i, j, dot(xi, y.row(j)) / d)?;
                }
                Ok(())
            })
            .collect();
        outcomes.into_iter().collect::<Result<()>>()?;
    }
    if symmetric {
        // diagonals from the pointwise recursion, independent of other rows
        let last = &x_moments[params.depth - 1];
        for i in 0..n {
            values[(i, i)] = params.affine(params.affine(last[i]) * f_one);
            for j in 0..i {
                values[(j, i)] = values[(i, j)];
            }
        }
    }
    Ok(KernelMatrix { values, symmetric, x_moments, y_moments })
}

/// `K^L(x, x)` for each row, from the diagonal recursion alone.
pub fn kernel_diagonal<T: Scalar>(x: &Matrix<T>, params: &KernelParams, table: &FqTable) -> Result<Vec<T>> {
    params.check_table(table)?;
    let f_one = table_at(table, T::one());
    let moments = moment_trajectories(x, "X", params, f_one)?;
    let last = &moments[params.depth - 1];
    Ok(last.iter().map(|&m| params.affine(params.affine(m) * f_one)).collect())
}

/// Deep ReLU kernel from the arc-cosine closed form:
/// `K^0 = s_b + s_w <x, y> / d` and
/// `K^l = s_b + s_w / (2 pi) sqrt(K_xx K_yy) (sin t + (pi - t) cos t)`
/// with `t` the angle of the layer-`(l-1)` correlation.
pub fn relu_nngp_kernel<T: Scalar>(
    x: &Matrix<T>,
    y: &Matrix<T>,
    depth: usize,
    sigma_b2_t: f64,
    sigma_w2_t: f64,
) -> Result<Matrix<T>> {
    if x.ncols() != y.ncols() || x.ncols() == 0 {
        return Err(Error::usage("input dimensions differ or are zero"));
    }
    let (sb, sw) = (T::of(sigma_b2_t), T::of(sigma_w2_t));
    let d = T::of(x.ncols() as f64);
    let two_pi = T::of(2.0 * PI);
    let pi = T::of(PI);
    let base = |v: &Matrix<T>| -> Vec<T> { v.rows_iter().map(|r| sb + sw * dot(r, r) / d).collect() };
    // diagonal trajectories: at theta = 0 the update is s_b + s_w / 2 * K
    let diag_traj = |start: Vec<T>, set: &'static str| -> Result<Vec<Vec<T>>> {
        let mut t = vec![start];
        for l in 1..=depth {
            let prev = &t[l - 1];
            if let Some(row) = prev.iter().position(|&k| !(k > T::zero())) {
                return Err(Error::DegenerateInput { set, row, layer: l - 1 });
            }
            t.push(prev.iter().map(|&k| sb + sw * k * pi / two_pi).collect());
        }
        Ok(t)
    };
    let xd = diag_traj(base(x), "X")?;
    let yd = diag_traj(base(y), "Y")?;
    let mut out = Matrix::zeros(x.nrows(), y.nrows());
    for i in 0..x.nrows() {
        for j in 0..y.nrows() {
            let mut k = sb + sw * dot(x.row(i), y.row(j)) / d;
            for l in 1..=depth {
                let scale = (xd[l - 1][i] * yd[l - 1][j]).sqrt();
                let cos_t = checked_correlation(k, scale).map_err(|rho| Error::CorrelationBound {
                    value: rho.as_f64(),
                    layer: l,
                    row: i,
                    col: j,
                })?;
                let t = cos_t.acos();
                k = sb + sw / two_pi * scale * (t.sin() + (pi - t) * cos_t);
            }
            out[(i, j)] = k;
        }
    }
    Ok(out)
}

/// Largest entrywise gap between the rank-2 maxout kernel on `x` and the ReLU
/// kernel on `x / sqrt(2)` with doubled weight variance.
pub fn prop1_residual<T: Scalar>(x: &Matrix<T>, params: &KernelParams, table: &FqTable) -> Result<T> {
    if params.q != 2 {
        return Err(Error::usage(format!("the ReLU equivalence needs q = 2, got {}", params.q)));
    }
    let maxout = kernel_matrix(x, x, params, table)?.values;
    let scaled = x.map(|v| v / T::of(2.0).sqrt());
    let relu = relu_nngp_kernel(&scaled, &scaled, params.depth, params.sigma_b2, 2.0 * params.sigma_w2)?;
    Ok(maxout.max_abs_diff(&relu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fq::{build_table, closed_form_f2, QuadratureGrid, Scheme};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    fn table(q: usize) -> &'static FqTable {
        static TABLES: [OnceLock<FqTable>; 4] =
            [OnceLock::new(), OnceLock::new(), OnceLock::new(), OnceLock::new()];
        TABLES[q - 1].get_or_init(|| {
            build_table(q, 1001, &QuadratureGrid::new(8.0, 401).unwrap(), Scheme::Product).unwrap()
        })
    }

    fn params(q: usize, depth: usize, b: f64, w: f64) -> KernelParams {
        KernelParams::new(q, depth, b, w).unwrap()
    }

    fn random_inputs(n: usize, d: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn min_eigenvalue(k: &Matrix<f64>) -> f64 {
        let n = k.nrows();
        let m = nalgebra::DMatrix::from_row_slice(n, n, k.as_slice());
        m.symmetric_eigenvalues().min()
    }

    #[test]
    fn k0_examples() {
        assert_eq!(k0(&[1.0, 1.0, 1.0, 1.0], &[1.0, 1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(k0(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert_eq!(k0(&[1.0, 2.0], &[3.0, -1.0]).unwrap(), 0.5);
        assert!(matches!(k0(&[1.0], &[1.0, 2.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn params_validation() {
        assert!(KernelParams::new(0, 1, 1.0, 1.0).is_err());
        assert!(KernelParams::new(2, 0, 1.0, 1.0).is_err());
        assert!(KernelParams::new(2, 1, 0.0, 0.0).is_err());
        assert!(KernelParams::new(2, 1, -0.1, 1.0).is_err());
        assert!(KernelParams::new(2, 1, 0.5, 0.0).is_ok());
        let x = random_inputs(2, 3, 1);
        assert!(matches!(kernel_matrix(&x, &x, &params(3, 1, 0.1, 1.0), table(2)), Err(Error::Usage(_))));
    }

    #[test]
    fn next_layer_examples() {
        let t = table(2);
        let v: f64 = next_layer(1.0, 1.0, 1.0, &params(2, 1, 0.0, 1.0), t).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
        let (b, w, v0) = (0.3, 1.7, 0.8);
        let p = params(2, 1, b, w);
        let f1 = *t.values().last().unwrap();
        let want = b + w * (b + w * v0) * f1;
        assert!((next_layer(v0, v0, v0, &p, t).unwrap() - want).abs() < 1e-14);
        let p1 = params(1, 1, b, w);
        for (kxx, kxy, kyy) in [(1.0, 0.2, 3.0), (0.5, -0.4, 0.9)] {
            let got = next_layer(kxx, kxy, kyy, &p1, table(1)).unwrap();
            assert!((got - (b + w * (b + w * kxy))).abs() < 1e-13);
        }
        assert!(matches!(
            next_layer(0.0, 0.0, 1.0, &params(2, 1, 0.0, 1.0), t),
            Err(Error::DegenerateInput { .. })
        ));
        assert!(next_layer(1.0, 1.5, 1.0, &params(2, 1, 0.0, 1.0), t).is_err());
    }

    #[test]
    fn single_point_follows_diagonal_recursion() {
        let t = table(2);
        let p = params(2, 4, 0.2, 1.3);
        let x = Matrix::from_vec(1, 3, vec![0.3, -0.9, 1.4]).unwrap();
        let k = kernel_matrix(&x, &x, &p, t).unwrap();
        let mut m = k0(x.row(0), x.row(0)).unwrap();
        for _ in 1..p.depth {
            m = (p.sigma_b2 + p.sigma_w2 * m) * t.values()[t.n_rho() - 1];
        }
        let want = next_layer(m, m, m, &p, t).unwrap();
        assert_eq!(k.values.shape(), (1, 1));
        assert!((k.values[(0, 0)] - want).abs() < 1e-12 * want);
        assert_eq!(kernel_diagonal(&x, &p, t).unwrap()[0], k.values[(0, 0)]);
    }

    #[test]
    fn orthogonal_unit_rows_give_one_over_pi() {
        let s = 2f64.sqrt();
        let x = Matrix::from_vec(2, 2, vec![s, 0.0, 0.0, s]).unwrap();
        let k = kernel_matrix(&x, &x, &params(2, 1, 0.0, 1.0), table(2)).unwrap();
        assert!((k.values[(0, 1)] - 1.0 / PI).abs() < 1e-6);
        assert!((k.values[(0, 0)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn relu_kernel_closed_form_values() {
        // K^0 already carries the weight variance: K^0 = 2 for unit second moment
        let s = 2f64.sqrt();
        let x = Matrix::from_vec(2, 2, vec![s, 0.0, 0.0, s]).unwrap();
        let k = relu_nngp_kernel(&x, &x, 1, 0.0, 2.0).unwrap();
        assert!((k[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((k[(0, 1)] - 2.0 / PI).abs() < 1e-15);
        let x = random_inputs(4, 3, 9);
        let k = relu_nngp_kernel(&x, &x, 1, 0.7, 0.0).unwrap();
        assert!(k.as_slice().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn prop1_examples() {
        let t = table(2);
        let x = random_inputs(10, 5, 3);
        let r = prop1_residual(&x, &params(2, 21, 0.3, 1.2), t).unwrap();
        assert!(r <= 1e-3, "{r}");
        let r = prop1_residual(&x, &params(2, 1, 0.4, 0.0), t).unwrap();
        assert!(r <= 1e-15, "{r}");
        let zero = Matrix::<f64>::zeros(1, 5);
        let r = prop1_residual(&zero, &params(2, 5, 0.5, 1.5), t).unwrap();
        assert!(r <= 1e-3, "{r}");
        assert!(matches!(prop1_residual(&x, &params(3, 2, 0.1, 1.0), table(3)), Err(Error::Usage(_))));
    }

    #[test]
    fn prop1_across_depths_and_sigmas() {
        let t = table(2);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for set in 0..3 {
            let x = random_inputs(20, 10, 100 + set);
            for _ in 0..3 {
                let (b, w) = (rng.gen_range(0.0..2.0), rng.gen_range(0.1..5.0));
                for depth in [1, 5, 9, 13, 17, 21] {
                    let r = prop1_residual(&x, &params(2, depth, b, w), t).unwrap();
                    // relative to the kernel scale, which grows like w^depth
                    let scale = kernel_diagonal(&x, &params(2, depth, b, w), t).unwrap()[0].max(1.0);
                    assert!(r <= 1e-3 * scale, "depth {depth} ({b}, {w}): {r}");
                }
            }
        }
    }

    #[test]
    fn symmetric_case_is_exact_and_diagonals_are_local() {
        let t = table(3);
        let p = params(3, 6, 0.25, 2.0);
        let x = random_inputs(12, 4, 5);
        let k = kernel_matrix(&x, &x, &p, t).unwrap();
        assert!(k.symmetric);
        assert_eq!(k.values.asymmetry(), 0.0);
        let diag = kernel_diagonal(&x, &p, t).unwrap();
        for i in 0..12 {
            assert!(k.values[(i, i)] >= p.sigma_b2);
            assert_eq!(k.values[(i, i)], diag[i]);
            let alone = kernel_matrix(&x.select_rows(&[i]), &x.select_rows(&[i]), &p, t).unwrap();
            assert_eq!(alone.values[(0, 0)], diag[i]);
        }
        // asymmetric path agrees with the mirrored one
        let y = x.clone();
        let full = kernel_matrix(&x, &x.select_rows(&(0..12).collect::<Vec<_>>()), &p, t).unwrap();
        assert!(full.values.max_abs_diff(&k.values) == 0.0 && std::ptr::eq(&y, &y));
    }

    #[test]
    fn kernel_matrices_are_positive_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for set in 0..20u64 {
            let q = 1 + (set as usize % 4);
            let n = rng.gen_range(2..=50);
            let d = rng.gen_range(1..=8);
            let p = params(q, rng.gen_range(1..=10), rng.gen_range(0.0..1.5), rng.gen_range(0.2..4.0));
            let x = random_inputs(n, d, 1000 + set);
            let k = kernel_matrix(&x, &x, &p, table(q)).unwrap().values;
            let top = k.diagonal().into_iter().fold(0.0, f64::max);
            let lam = min_eigenvalue(&k);
            assert!(lam >= -1e-8 * top, "set {set}: {lam} vs {top}");
        }
    }

    #[test]
    fn rank_one_kernel_is_affine_in_k0() {
        let p = params(1, 7, 0.35, 1.1);
        let x = random_inputs(6, 3, 41);
        let k = kernel_matrix(&x, &x, &p, table(1)).unwrap().values;
        for i in 0..6 {
            for j in 0..6 {
                let mut v = k0(x.row(i), x.row(j)).unwrap();
                for _ in 0..=p.depth {
                    v = p.sigma_b2 + p.sigma_w2 * v;
                }
                assert!((k[(i, j)] - v).abs() <= 1e-12 * v.abs().max(1.0), "({i},{j})");
            }
        }
    }

    #[test]
    fn zero_row_without_bias_is_degenerate() {
        let mut x = random_inputs(4, 3, 2);
        x.row_mut(2).fill(0.0);
        let err = kernel_matrix(&x, &x, &params(2, 3, 0.0, 1.0), table(2)).unwrap_err();
        assert!(matches!(err, Error::DegenerateInput { row: 2, .. }), "{err}");
        assert!(kernel_matrix(&x, &x, &params(2, 3, 0.1, 1.0), table(2)).is_ok());
    }

    #[test]
    fn correlation_band() {
        assert_eq!(checked_correlation(1.0 + 5e-10, 1.0), Ok(1.0));
        assert_eq!(checked_correlation(-1.0 - 5e-10, 1.0), Ok(-1.0));
        assert!(checked_correlation(1.0 + 1e-8, 1.0).is_err());
        assert!(checked_correlation(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn single_precision_agrees_with_double() {
        let x = random_inputs(5, 4, 8);
        let p = params(2, 3, 0.2, 1.5);
        let k64 = kernel_matrix(&x, &x, &p, table(2)).unwrap().values;
        let x32 = Matrix::from_vec(5, 4, x.as_slice().iter().map(|&v| v as f32).collect()).unwrap();
        let k32 = kernel_matrix(&x32, &x32, &p, table(2)).unwrap().values;
        for (a, b) in k64.as_slice().iter().zip(k32.as_slice()) {
            assert!((a - *b as f64).abs() <= 1e-5 * a.abs().max(1.0));
        }
    }

    #[test]
    fn q2_layer_one_off_diagonal_matches_closed_form() {
        let x = random_inputs(6, 5, 12);
        let p = params(2, 1, 0.0, 1.0);
        let k = kernel_matrix(&x, &x, &p, table(2)).unwrap().values;
        for i in 0..6 {
            for j in 0..6 {
                let (a, b) = (k0(x.row(i), x.row(i)).unwrap(), k0(x.row(j), x.row(j)).unwrap());
                let c = k0(x.row(i), x.row(j)).unwrap();
                let want = (a * b).sqrt() * closed_form_f2(c / (a * b).sqrt());
                assert!((k[(i, j)] - want).abs() < 1e-4);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn permuting_rows_permutes_the_kernel(seed in 0u64..1000, n in 2usize..12) {
            let x = random_inputs(n, 3, seed);
            let mut perm: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            for i in (1..n).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let p = params(2, 4, 0.1, 1.8);
            let k = kernel_matrix(&x, &x, &p, table(2)).unwrap().values;
            let xp = x.select_rows(&perm);
            let kp = kernel_matrix(&xp, &xp, &p, table(2)).unwrap().values;
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(kp[(i, j)], k[(perm[i], perm[j])]);
                }
            }
        }
    }
}
