//! Product-grid quadrature for the pieces of `F_q(rho)`.
//!
//! For `rho` in (-1, 1) the expectation splits by which coordinate attains
//! each maximum: `q` equal-argmax terms and `q(q-1)` distinct-argmax terms,
//! each a two-dimensional integral over the square `[-r_max, r_max]^2`.
//! `rho = +-1` collapse to one- and two-dimensional order-statistic integrals.
//!
//! The bivariate CDF is needed at every grid node. Rather than calling the
//! Genz routine `n_grid^2` times, each column is advanced along `x` with the
//! Euler–Maclaurin corrected trapezoid applied to
//! `d/dx Phi2(x, y) = phi(x) Phi((y - rho x) / s)`, which reuses the very
//! `Phi` values the distinct-argmax integrand already needs. Columns are
//! seeded with the exact Genz value. On grids too coarse for the recurrence
//! (see [`RECURRENCE_MAX_STEP`]) every node falls back to the direct routine.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{binormal_cdf_unchecked, std_normal_cdf, std_normal_pdf};

/// Nodes beyond this radius carry less than 1e-19 standard-normal density and
/// are skipped.
pub const SUPPORT_RADIUS: f64 = 9.5;

/// Largest effective step `spacing * (1 + |rho| / sqrt(1 - rho^2))` for which
/// the column recurrence is used.
pub const RECURRENCE_MAX_STEP: f64 = 0.25;

/// Standardized arguments beyond this are treated as saturated (`Phi` is 0
/// or 1 and `phi` is 0 to within 1e-18).
const SATURATION: f64 = 9.0;

/// How grid sums are turned into integral estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Plain product rule: `sum f(x_i, y_j) * spacing^2`.
    Product,
    /// Self-normalized ratio `sum x y w / sum w` of the weights `w`.
    Ratio,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Product => "product",
            Scheme::Ratio => "ratio",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "product" => Ok(Scheme::Product),
            "ratio" => Ok(Scheme::Ratio),
            other => Err(Error::usage(format!("unknown quadrature scheme {other:?}"))),
        }
    }
}

/// Uniform tensor grid on `[-r_max, r_max]^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    r_max: f64,
    n_grid: usize,
}

impl QuadratureGrid {
    pub fn new(r_max: f64, n_grid: usize) -> Result<Self> {
        if !(r_max.is_finite() && r_max > 0.0) {
            return Err(Error::usage(format!("r_max must be positive, got {r_max}")));
        }
        if n_grid < 3 {
            return Err(Error::usage(format!("n_grid must be at least 3, got {n_grid}")));
        }
        Ok(Self { r_max, n_grid })
    }

    /// `r_max = 100`, `n_grid = 501`: the settings the published tables used.
    pub fn paper() -> Self {
        Self { r_max: 100.0, n_grid: 501 }
    }

    /// `r_max = 8`, `n_grid = 2001`: spacing 0.008, good to ~1e-6 on `F_2`.
    pub fn high_accuracy() -> Self {
        Self { r_max: 8.0, n_grid: 2001 }
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn n_grid(&self) -> usize {
        self.n_grid
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.r_max / (self.n_grid - 1) as f64
    }

    /// Grid nodes, exactly antisymmetric about zero.
    pub fn nodes(&self) -> Vec<f64> {
        let m = (self.n_grid - 1) as f64;
        (0..self.n_grid)
            .map(|i| self.r_max * (2.0 * i as f64 - m) / m)
            .collect()
    }

    /// Index range of nodes inside [`SUPPORT_RADIUS`].
    fn support(&self, nodes: &[f64]) -> std::ops::Range<usize> {
        let lo = nodes.iter().position(|&x| x >= -SUPPORT_RADIUS).unwrap_or(0);
        let hi = nodes.len() - lo;
        lo..hi
    }
}

/// What multiplies the joint density inside each term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Moment {
    /// `x * y`: the term's contribution to `F_q`.
    Product,
    /// `1`: the probability of the argmax event itself.
    Probability,
}

/// The equal-argmax and distinct-argmax terms at one correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteriorTerms {
    /// `E[max * max' * 1{I = I' = 1}]`
    pub same: f64,
    /// `E[max * max' * 1{I = 1, I' = 2}]`
    pub diff: f64,
}

fn check_interior(op: &'static str, q: usize, rho: f64) -> Result<()> {
    if q < 2 {
        return Err(Error::usage(format!("{op} needs q >= 2, got {q}")));
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::Domain { op, detail: format!("rho = {rho} must lie in (-1, 1)") });
    }
    Ok(())
}

pub fn term_same_argmax(q: usize, rho: f64, grid: &QuadratureGrid, scheme: Scheme) -> Result<f64> {
    check_interior("term_same_argmax", q, rho)?;
    Ok(interior_terms(q, rho, grid, scheme, Moment::Product).same)
}

pub fn term_diff_argmax(q: usize, rho: f64, grid: &QuadratureGrid, scheme: Scheme) -> Result<f64> {
    check_interior("term_diff_argmax", q, rho)?;
    Ok(interior_terms(q, rho, grid, scheme, Moment::Product).diff)
}

/// `(P(I = I' = 1), P(I = 1, I' = 2))` under the product rule.
pub fn argmax_probabilities(q: usize, rho: f64, grid: &QuadratureGrid) -> Result<(f64, f64)> {
    check_interior("argmax_probabilities", q, rho)?;
    let t = interior_terms(q, rho, grid, Scheme::Product, Moment::Probability);
    Ok((t.same, t.diff))
}

/// `F_q(rho)` for `rho` in (-1, 1); correlations within `10 * EPSILON` of an
/// endpoint are routed to the endpoint routines.
pub fn fq_interior(q: usize, rho: f64, grid: &QuadratureGrid, scheme: Scheme) -> Result<f64> {
    if q == 0 {
        return Err(Error::usage("maxout rank q must be at least 1"));
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::Domain {
            op: "fq_interior",
            detail: format!("rho = {rho} must lie in (-1, 1)"),
        });
    }
    if q == 1 {
        return Ok(rho);
    }
    if rho > 1.0 - 10.0 * f64::EPSILON {
        return fq_at_plus_one(q, grid, scheme);
    }
    if rho < -1.0 + 10.0 * f64::EPSILON {
        return fq_at_minus_one(q, grid, scheme);
    }
    let t = interior_terms(q, rho, grid, scheme, Moment::Product);
    let qf = q as f64;
    Ok(qf * t.same + qf * (qf - 1.0) * t.diff)
}

/// `E[max(h_1..h_q)^2] = q * int x^2 phi(x) Phi(x)^(q-1) dx`.
pub fn fq_at_plus_one(q: usize, grid: &QuadratureGrid, scheme: Scheme) -> Result<f64> {
    match q {
        0 => return Err(Error::usage("maxout rank q must be at least 1")),
        1 => return Ok(1.0),
        _ => {}
    }
    let nodes = grid.nodes();
    let (mut num, mut den) = (0.0, 0.0);
    for &x in &nodes[grid.support(&nodes)] {
        let w = std_normal_pdf(x) * std_normal_cdf(x).powi(q as i32 - 1);
        num += x * x * w;
        den += w;
    }
    let qf = q as f64;
    Ok(match scheme {
        Scheme::Product => qf * num * grid.spacing(),
        Scheme::Ratio => qf * num / den,
    })
}

/// `-E[max * min] = -q(q-1) * int_{x>y} x y phi(x) phi(y) (Phi(x)-Phi(y))^(q-2)`.
///
/// The diagonal `x = y` carries weight 1/2, the product-rule treatment of the
/// indicator edge; for `q = 2` this makes the sum vanish exactly.
pub fn fq_at_minus_one(q: usize, grid: &QuadratureGrid, scheme: Scheme) -> Result<f64> {
    match q {
        0 => return Err(Error::usage("maxout rank q must be at least 1")),
        1 => return Ok(-1.0),
        _ => {}
    }
    let nodes = grid.nodes();
    let support = grid.support(&nodes);
    let xs = &nodes[support];
    let pdf: Vec<f64> = xs.iter().map(|&x| std_normal_pdf(x)).collect();
    let cdf: Vec<f64> = xs.iter().map(|&x| std_normal_cdf(x)).collect();
    let power = q as i32 - 2;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..xs.len() {
        let mut row_num = 0.0;
        let mut row_den = 0.0;
        for j in 0..=i {
            let edge = if j == i { 0.5 } else { 1.0 };
            let w = edge * pdf[j] * (cdf[i] - cdf[j]).powi(power);
            row_num += xs[j] * w;
            row_den += w;
        }
        num += xs[i] * pdf[i] * row_num;
        den += pdf[i] * row_den;
    }
    let h = grid.spacing();
    let qf = q as f64;
    Ok(match scheme {
        Scheme::Product => -qf * (qf - 1.0) * num * h * h,
        Scheme::Ratio => -qf * (qf - 1.0) * num / den,
    })
}

/// `(Phi(z), phi(z))` from a piecewise Taylor table on `[-SATURATION, SATURATION]`.
///
/// Each cell of width 1/16 stores the degree-7 expansion of `Phi` about its
/// midpoint; `phi` is the derivative of the same polynomial. Absolute error is
/// below 1e-13 for both (checked against the exact routines in the tests).
struct NormalTaylorTable {
    coeffs: Vec<[f64; TAYLOR_TERMS]>,
}

const TAYLOR_TERMS: usize = 8;
const CELLS_PER_UNIT: f64 = 16.0;

impl NormalTaylorTable {
    fn build() -> Self {
        let n_cells = (2.0 * SATURATION * CELLS_PER_UNIT) as usize;
        let coeffs = (0..n_cells)
            .map(|k| {
                let c = -SATURATION + (k as f64 + 0.5) / CELLS_PER_UNIT;
                let pdf = std_normal_pdf(c);
                // phi^(n)(c) = (-1)^n He_n(c) phi(c), He = probabilists' Hermite
                let mut he = [0.0; TAYLOR_TERMS];
                he[0] = 1.0;
                he[1] = c;
                for n in 1..TAYLOR_TERMS - 1 {
                    he[n + 1] = c * he[n] - n as f64 * he[n - 1];
                }
                let mut a = [0.0; TAYLOR_TERMS];
                a[0] = std_normal_cdf(c);
                let mut factorial = 1.0;
                for n in 1..TAYLOR_TERMS {
                    factorial *= n as f64;
                    let sign = if (n - 1) % 2 == 0 { 1.0 } else { -1.0 };
                    a[n] = sign * he[n - 1] * pdf / factorial;
                }
                a
            })
            .collect();
        Self { coeffs }
    }

    fn get() -> &'static Self {
        static TABLE: OnceLock<NormalTaylorTable> = OnceLock::new();
        TABLE.get_or_init(Self::build)
    }

    #[inline]
    fn eval(&self, z: f64) -> (f64, f64) {
        if z >= SATURATION {
            return (1.0, 0.0);
        }
        if z <= -SATURATION {
            return (0.0, 0.0);
        }
        let pos = (z + SATURATION) * CELLS_PER_UNIT;
        let k = (pos as usize).min(self.coeffs.len() - 1);
        let d = (pos - k as f64 - 0.5) / CELLS_PER_UNIT;
        let a = &self.coeffs[k];
        let mut cdf = a[TAYLOR_TERMS - 1];
        let mut pdf = (TAYLOR_TERMS - 1) as f64 * a[TAYLOR_TERMS - 1];
        for n in (1..TAYLOR_TERMS - 1).rev() {
            cdf = cdf * d + a[n];
            pdf = pdf * d + n as f64 * a[n];
        }
        (cdf * d + a[0], pdf)
    }
}

#[inline]
fn powi_small(x: f64, n: i32) -> f64 {
    match n {
        0 => 1.0,
        1 => x,
        2 => x * x,
        _ => x.powi(n),
    }
}

/// Evaluate both interior terms in a single sweep over the grid.
///
/// Both integrands are symmetric under `x <-> y`, so the distinct-argmax sum
/// runs over the lower triangle and doubles the off-diagonal part.
pub fn interior_terms(
    q: usize,
    rho: f64,
    grid: &QuadratureGrid,
    scheme: Scheme,
    moment: Moment,
) -> InteriorTerms {
    debug_assert!(q >= 2 && rho.abs() < 1.0);
    let nodes = grid.nodes();
    let support = grid.support(&nodes);
    let xs = &nodes[support];
    let m = xs.len();
    let h = grid.spacing();

    let s = ((1.0 - rho) * (1.0 + rho)).sqrt();
    let slope = rho / s;
    let use_recurrence = h * (1.0 + slope.abs()) <= RECURRENCE_MAX_STEP;

    let pdf: Vec<f64> = xs.iter().map(|&x| std_normal_pdf(x)).collect();
    let normal = NormalTaylorTable::get();
    let inv_s = 1.0 / s;
    let same_power = q as i32 - 1;
    let diff_power = q as i32 - 2;

    // the moment weight carried by y (and x) in every term
    let mom: Vec<f64> = match moment {
        Moment::Product => xs.to_vec(),
        Moment::Probability => vec![1.0; m],
    };

    // u[i * m + j] = Phi((y_j - rho x_i) / s)
    let mut u = vec![0.0; m * m];
    let mut cdf = vec![0.0; m];
    let mut prev_f = vec![0.0; m];
    let mut prev_fp = vec![0.0; m];
    if use_recurrence {
        for j in 0..m {
            cdf[j] = binormal_cdf_unchecked(xs[0], xs[j], rho);
        }
    }
    let mut dens = vec![0.0; m];
    let mut diff_w = vec![0.0; m];

    let (mut same_num, mut same_den) = (0.0, 0.0);
    let (mut diff_num, mut diff_den) = (0.0, 0.0);
    let (h_half, h2_12) = (0.5 * h, h * h / 12.0);

    for i in 0..m {
        let x = xs[i];
        let px = pdf[i];
        let shift = rho * x * inv_s;
        // columns whose standardized argument is unsaturated
        let lo = xs.partition_point(|&y| y * inv_s - shift <= -SATURATION);
        let hi = xs.partition_point(|&y| y * inv_s - shift < SATURATION).max(lo);

        let row = &mut u[i * m..(i + 1) * m];
        row[..lo].fill(0.0);
        dens[..lo].fill(0.0);
        for ((r, d), &y) in row[lo..hi].iter_mut().zip(&mut dens[lo..hi]).zip(&xs[lo..hi]) {
            let (uz, dz) = normal.eval(y * inv_s - shift);
            *r = uz;
            *d = dz;
        }
        row[hi..].fill(1.0);
        dens[hi..].fill(0.0);

        if use_recurrence {
            let first = i == 0;
            let iter = row
                .iter()
                .zip(&dens)
                .zip(cdf.iter_mut())
                .zip(prev_f.iter_mut().zip(prev_fp.iter_mut()));
            for (((&uz, &dz), c), (pf, pfp)) in iter {
                let f = px * uz;
                let fp = -x * f - slope * px * dz;
                if !first {
                    *c += h_half * (*pf + f) + h2_12 * (*pfp - fp);
                }
                *pf = f;
                *pfp = fp;
            }
        } else {
            for (c, &y) in cdf.iter_mut().zip(xs) {
                *c = binormal_cdf_unchecked(x, y, rho);
            }
        }

        // phi2(x, y) = phi(x) phi((y - rho x) / s) / s
        let (mut row_same_num, mut row_same_den) = (0.0, 0.0);
        for ((&dz, &c), &my) in dens[lo..hi].iter().zip(&cdf[lo..hi]).zip(&mom[lo..hi]) {
            let w = dz * powi_small(c, same_power);
            row_same_num += my * w;
            row_same_den += w;
        }
        same_num += mom[i] * px * inv_s * row_same_num;
        same_den += px * inv_s * row_same_den;

        // Phi((x_i - rho y_j) / s) is u at (j, i)
        for j in 0..i {
            diff_w[j] = u[j * m + i];
        }
        let row = &u[i * m..(i + 1) * m];
        let (mut row_diff_num, mut row_diff_den) = (0.0, 0.0);
        let iter = pdf[..i].iter().zip(&row[..i]).zip(&diff_w[..i]).zip(&cdf[..i]).zip(&mom[..i]);
        for ((((&py, &uy), &ux), &c), &my) in iter {
            let w = py * uy * ux * powi_small(c, diff_power);
            row_diff_num += my * w;
            row_diff_den += w;
        }
        // diagonal counted once, off-diagonal pairs twice
        let diag = pdf[i] * row[i] * row[i] * powi_small(cdf[i], diff_power);
        diff_num += mom[i] * px * (2.0 * row_diff_num + mom[i] * diag);
        diff_den += px * (2.0 * row_diff_den + diag);
    }

    match scheme {
        Scheme::Product => InteriorTerms { same: same_num * h * h, diff: diff_num * h * h },
        Scheme::Ratio => InteriorTerms { same: same_num / same_den, diff: diff_num / diff_den },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fq::oracle::{closed_form_f2, mc_oracle_fq};
    use std::f64::consts::PI;

    fn fine() -> QuadratureGrid {
        QuadratureGrid::high_accuracy()
    }

    fn coarse() -> QuadratureGrid {
        QuadratureGrid::new(8.0, 401).unwrap()
    }

    #[test]
    fn grid_nodes_are_symmetric() {
        let g = QuadratureGrid::new(3.0, 7).unwrap();
        let nodes = g.nodes();
        assert_eq!(nodes, vec![-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0]);
        assert_eq!(g.spacing(), 1.0);
        let g = fine();
        let nodes = g.nodes();
        for i in 0..nodes.len() {
            assert_eq!(nodes[i], -nodes[nodes.len() - 1 - i]);
        }
        assert!(nodes.windows(2).all(|w| w[0] < w[1]));
        assert!(QuadratureGrid::new(1.0, 2).is_err());
        assert!(QuadratureGrid::new(0.0, 11).is_err());
        assert!(QuadratureGrid::new(f64::NAN, 11).is_err());
    }

    #[test]
    fn taylor_table_matches_exact_normal() {
        let t = NormalTaylorTable::get();
        let mut worst: f64 = 0.0;
        for k in 0..=180_000 {
            let z = -9.0 + k as f64 * 1e-4 + 3.3e-6;
            let (c, p) = t.eval(z);
            worst = worst.max((c - std_normal_cdf(z)).abs()).max((p - std_normal_pdf(z)).abs());
        }
        assert!(worst < 1e-13, "worst {worst:e}");
        assert_eq!(t.eval(9.5), (1.0, 0.0));
        assert_eq!(t.eval(-12.0), (0.0, 0.0));
    }

    #[test]
    fn scheme_round_trips_through_text() {
        for s in [Scheme::Product, Scheme::Ratio] {
            assert_eq!(s.to_string().parse::<Scheme>().unwrap(), s);
        }
        assert!("simpson".parse::<Scheme>().is_err());
    }

    #[test]
    fn rank_two_matches_closed_form() {
        let g = fine();
        for rho in [-0.95, -0.5, 0.0, 0.123, 0.5, 0.9, 0.999] {
            let v = fq_interior(2, rho, &g, Scheme::Product).unwrap();
            assert!((v - closed_form_f2(rho)).abs() < 1e-6, "rho {rho}: {v}");
        }
        let v = fq_interior(2, 0.5, &g, Scheme::Product).unwrap();
        assert!((v - 0.6090).abs() < 1e-3);
        let v = fq_interior(2, 0.0, &g, Scheme::Product).unwrap();
        assert!((v - 1.0 / PI).abs() < 1e-3);
    }

    #[test]
    fn terms_combine_to_one_over_pi_at_zero() {
        let g = coarse();
        let same = term_same_argmax(2, 0.0, &g, Scheme::Product).unwrap();
        let diff = term_diff_argmax(2, 0.0, &g, Scheme::Product).unwrap();
        assert!((2.0 * same + 2.0 * diff - 1.0 / PI).abs() < 1e-6);
    }

    #[test]
    fn argmax_probabilities_are_a_distribution() {
        let g = coarse();
        for q in [2, 3, 4] {
            for rho in [-0.8, -0.2, 0.0, 0.4, 0.95] {
                let (same, diff) = argmax_probabilities(q, rho, &g).unwrap();
                let qf = q as f64;
                assert!(same > 0.0 && same < 1.0 && diff > 0.0 && diff < 0.5);
                assert!((qf * same + qf * (qf - 1.0) * diff - 1.0).abs() < 1e-6, "q {q} rho {rho}");
            }
            // independent maxima: P(I = I' = 1) = 1/q^2
            let (same, diff) = argmax_probabilities(q, 0.0, &g).unwrap();
            let qf = q as f64;
            assert!((same - 1.0 / (qf * qf)).abs() < 1e-8);
            assert!((diff - 1.0 / (qf * qf)).abs() < 1e-8);
        }
        let (same, diff) = argmax_probabilities(2, 0.0, &g).unwrap();
        assert!((diff - (1.0 - 2.0 * same) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one_is_identity() {
        let g = coarse();
        assert_eq!(fq_interior(1, 0.37, &g, Scheme::Product).unwrap(), 0.37);
        assert_eq!(fq_at_plus_one(1, &g, Scheme::Product).unwrap(), 1.0);
        assert_eq!(fq_at_minus_one(1, &g, Scheme::Product).unwrap(), -1.0);
    }

    #[test]
    fn endpoints_match_order_statistics() {
        let g = fine();
        // mpmath quadrature of the one- and two-dimensional order-statistic integrals
        let plus = [(2, 1.0), (3, 1.275_664_447_710_896), (4, 1.551_328_895_421_792)];
        for (q, want) in plus {
            let v = fq_at_plus_one(q, &g, Scheme::Product).unwrap();
            assert!((v - want).abs() < 1e-10, "q {q}: {v}");
        }
        let minus = [(2, 0.0), (3, 0.551_328_895_421_792), (4, 0.954_929_658_551_372)];
        for (q, want) in minus {
            let v = fq_at_minus_one(q, &g, Scheme::Product).unwrap();
            // the (Phi(x) - Phi(y))^(q-2) factor has a kink on the diagonal for q = 3
            assert!((v - want).abs() < 5e-6, "q {q}: {v}");
        }
        assert!(fq_at_minus_one(2, &g, Scheme::Product).unwrap().abs() < 1e-15);
    }

    #[test]
    fn rank_three_matches_monte_carlo() {
        let est = mc_oracle_fq(3, 0.5, 2_000_000, 21).unwrap();
        let v = fq_interior(3, 0.5, &coarse(), Scheme::Product).unwrap();
        assert!(est.covers(v, 3.0), "{v} vs {est:?}");
    }

    #[test]
    fn near_endpoint_correlations_use_endpoint_routines() {
        let g = coarse();
        let rho = 1.0 - 2.0 * f64::EPSILON;
        assert_eq!(
            fq_interior(3, rho, &g, Scheme::Product).unwrap(),
            fq_at_plus_one(3, &g, Scheme::Product).unwrap()
        );
        assert_eq!(
            fq_interior(3, -rho, &g, Scheme::Product).unwrap(),
            fq_at_minus_one(3, &g, Scheme::Product).unwrap()
        );
        assert!(fq_interior(2, 1.0, &g, Scheme::Product).is_err());
        assert!(term_same_argmax(1, 0.0, &g, Scheme::Product).is_err());
        assert!(term_diff_argmax(2, -1.0, &g, Scheme::Product).is_err());
    }

    #[test]
    fn recurrence_agrees_with_direct_bivariate_cdf() {
        // spacing 0.4 forces the direct path; compare against a fine grid run
        let coarse = QuadratureGrid::new(8.0, 41).unwrap();
        let direct = interior_terms(3, 0.3, &coarse, Scheme::Product, Moment::Probability);
        assert!((3.0 * direct.same + 6.0 * direct.diff - 1.0).abs() < 1e-3);
        let fine = interior_terms(3, 0.3, &fine(), Scheme::Product, Moment::Probability);
        assert!((3.0 * fine.same + 6.0 * fine.diff - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ratio_scheme_differs_from_product_off_q2() {
        let g = coarse();
        let p = fq_interior(3, 0.5, &g, Scheme::Product).unwrap();
        let r = fq_interior(3, 0.5, &g, Scheme::Ratio).unwrap();
        assert!(p.is_finite() && r.is_finite());
        assert!((p - r).abs() > 1e-3);
    }
}
