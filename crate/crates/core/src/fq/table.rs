//! Lookup table for `F_q` on a uniform correlation grid, with its text file
//! format and linear interpolation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::quadrature::{fq_at_minus_one, fq_at_plus_one, fq_interior, QuadratureGrid, Scheme};
use crate::error::{Error, Result};

/// First line of every table file.
pub const TABLE_MAGIC: &str = "# mnngp-fq-table v1";
pub const TABLE_VERSION: u32 = 1;

/// Lookups may overshoot [-1, 1] by this much before being rejected.
pub const INTERP_CLAMP: f64 = 1e-9;

/// How a table was produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub r_max: f64,
    pub n_grid: usize,
    pub scheme: Scheme,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FqTable {
    q: usize,
    rhos: Vec<f64>,
    values: Vec<f64>,
    meta: TableMeta,
    // 1 / node spacing, for the initial bracket guess
    inv_step: f64,
}

/// `n_rho` equally spaced correlations on [-1, 1]: endpoints exact, exactly
/// antisymmetric, each node the correctly rounded `(2i - m) / m`.
pub fn rho_grid(n_rho: usize) -> Vec<f64> {
    let m = (n_rho - 1) as f64;
    (0..n_rho).map(|i| (2.0 * i as f64 - m) / m).collect()
}

impl FqTable {
    /// Assemble a table, checking the structural invariants the loader and
    /// interpolation rely on.
    pub fn new(q: usize, rhos: Vec<f64>, values: Vec<f64>, meta: TableMeta) -> Result<Self> {
        let bad = |detail: String| Err(Error::format("fq table", detail));
        if q == 0 {
            return bad("q must be at least 1".into());
        }
        if rhos.len() < 3 || rhos.len() != values.len() {
            return bad(format!("{} rhos for {} values (need >= 3)", rhos.len(), values.len()));
        }
        if rhos[0] != -1.0 || *rhos.last().unwrap() != 1.0 {
            return bad("rho grid must start at -1 and end at 1".into());
        }
        if let Some(k) = rhos.windows(2).position(|w| !(w[0] < w[1])) {
            return bad(format!("rho grid not strictly increasing at row {}", k + 1));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return bad(format!("non-finite value at row {k}"));
        }
        let inv_step = (rhos.len() - 1) as f64 / 2.0;
        Ok(Self { q, rhos, values, meta, inv_step })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n_rho(&self) -> usize {
        self.rhos.len()
    }

    pub fn rhos(&self) -> &[f64] {
        &self.rhos
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn meta(&self) -> &TableMeta {
        &self.meta
    }

    /// Linear interpolation of `F_q` at `rho`.
    ///
    /// Exact at grid nodes. `rho` may overshoot [-1, 1] by [`INTERP_CLAMP`];
    /// beyond that it signals an upstream normalization bug.
    pub fn interpolate(&self, rho: f64) -> Result<f64> {
        if rho.is_nan() || rho.abs() > 1.0 + INTERP_CLAMP {
            return Err(Error::Domain {
                op: "interpolate",
                detail: format!("rho = {rho} outside [-1, 1] beyond the clamp band"),
            });
        }
        Ok(self.lookup(rho.clamp(-1.0, 1.0)))
    }

    /// Interpolation for `rho` already in [-1, 1].
    pub(crate) fn lookup(&self, rho: f64) -> f64 {
        let last = self.rhos.len() - 2;
        let mut i = (((rho + 1.0) * self.inv_step) as usize).min(last);
        while i > 0 && self.rhos[i] > rho {
            i -= 1;
        }
        while i < last && self.rhos[i + 1] < rho {
            i += 1;
        }
        let (r0, r1) = (self.rhos[i], self.rhos[i + 1]);
        if rho == r0 {
            return self.values[i];
        }
        if rho == r1 {
            return self.values[i + 1];
        }
        ((r1 - rho) * self.values[i] + (rho - r0) * self.values[i + 1]) / (r1 - r0)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{TABLE_MAGIC}")?;
        writeln!(
            out,
            "# q={} n_rho={} r_max={} n_grid={} scheme={}",
            self.q,
            self.rhos.len(),
            self.meta.r_max,
            self.meta.n_grid,
            self.meta.scheme
        )?;
        for (r, v) in self.rhos.iter().zip(&self.values) {
            writeln!(out, "{r:.16e}\t{v:.16e}")?;
        }
        out.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    /// Parse a table; `source_name` labels errors.
    pub fn read_from<R: BufRead>(reader: R, source_name: &str) -> Result<Self> {
        let err = |line: usize, detail: String| {
            Error::format(source_name, format!("line {line}: {detail}"))
        };
        let mut lines = reader.lines().enumerate();
        let mut next_line = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((k, Ok(l))) => Ok((k + 1, l)),
                Some((k, Err(e))) => Err(err(k + 1, e.to_string())),
                None => Err(Error::format(source_name, format!("missing {what}"))),
            }
        };

        let (_, magic) = next_line("magic line")?;
        if magic.trim_end() != TABLE_MAGIC {
            return Err(err(1, format!("expected {TABLE_MAGIC:?}, found {magic:?}")));
        }
        let (_, header) = next_line("parameter line")?;
        let fields = header
            .strip_prefix("# ")
            .ok_or_else(|| err(2, "parameter line must start with '# '".into()))?;
        let mut parts = fields.split_whitespace();
        let mut field = |key: &str| -> Result<String> {
            let tok = parts.next().ok_or_else(|| err(2, format!("missing {key}=")))?;
            tok.strip_prefix(key)
                .and_then(|t| t.strip_prefix('='))
                .map(str::to_owned)
                .ok_or_else(|| err(2, format!("expected {key}=..., found {tok:?}")))
        };
        let parse_err = |key: &str, e: &dyn std::fmt::Display| err(2, format!("bad {key}: {e}"));
        let q: usize = field("q")?.parse().map_err(|e| parse_err("q", &e))?;
        let n_rho: usize = field("n_rho")?.parse().map_err(|e| parse_err("n_rho", &e))?;
        let r_max: f64 = field("r_max")?.parse().map_err(|e| parse_err("r_max", &e))?;
        let n_grid: usize = field("n_grid")?.parse().map_err(|e| parse_err("n_grid", &e))?;
        let scheme: Scheme = field("scheme")?.parse().map_err(|e| parse_err("scheme", &e))?;
        if parts.next().is_some() {
            return Err(err(2, "trailing fields on parameter line".into()));
        }

        let mut rhos = Vec::with_capacity(n_rho);
        let mut values = Vec::with_capacity(n_rho);
        for (k, line) in lines {
            let line_no = k + 1;
            let line = line.map_err(|e| err(line_no, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let (r, v) = line
                .split_once('\t')
                .ok_or_else(|| err(line_no, "expected <rho>\\t<value>".into()))?;
            let r: f64 = r.trim().parse().map_err(|e| err(line_no, format!("rho: {e}")))?;
            let v: f64 = v.trim().parse().map_err(|e| err(line_no, format!("value: {e}")))?;
            if !r.is_finite() || !v.is_finite() {
                return Err(err(line_no, "non-finite entry".into()));
            }
            if let Some(&prev) = rhos.last() {
                if !(r > prev) {
                    return Err(err(line_no, format!("rho {r} does not increase past {prev}")));
                }
            }
            rhos.push(r);
            values.push(v);
        }
        if rhos.len() != n_rho {
            return Err(Error::format(
                source_name,
                format!("header declares n_rho={n_rho} but {} rows follow", rhos.len()),
            ));
        }
        let meta = TableMeta { r_max, n_grid, scheme, version: TABLE_VERSION };
        Self::new(q, rhos, values, meta).map_err(|e| match e {
            Error::Format { detail, .. } => Error::format(source_name, detail),
            other => other,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file), &path.display().to_string())
    }
}

/// Tabulate `F_q` on `n_rho` uniform correlations.
///
/// Interior nodes run in parallel; each is a pure function of its inputs, so
/// the table is identical however the work is scheduled.
pub fn build_table(q: usize, n_rho: usize, grid: &QuadratureGrid, scheme: Scheme) -> Result<FqTable> {
    if q == 0 {
        return Err(Error::usage("maxout rank q must be at least 1"));
    }
    if n_rho < 3 {
        return Err(Error::usage(format!("n_rho must be at least 3, got {n_rho}")));
    }
    let rhos = rho_grid(n_rho);
    let meta = TableMeta { r_max: grid.r_max(), n_grid: grid.n_grid(), scheme, version: TABLE_VERSION };
    if q == 1 {
        let values = rhos.clone();
        return FqTable::new(q, rhos, values, meta);
    }
    let interior: Vec<f64> = rhos[1..n_rho - 1]
        .par_iter()
        .map(|&rho| fq_interior(q, rho, grid, scheme))
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(n_rho);
    values.push(fq_at_minus_one(q, grid, scheme)?);
    values.extend(interior);
    values.push(fq_at_plus_one(q, grid, scheme)?);
    FqTable::new(q, rhos, values, meta)
}
