//! MNIST (IDX) and CIFAR-10 (binary batch) ingestion, the shuffle/split
//! protocol, and the plain CSV forms used for datasets and matrices.
//!
//! Pixels are scaled by 1/255 into `[0, 1]` with no centering.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::seeded;

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;
pub const MNIST_DIM: usize = 28 * 28;
pub const CIFAR_DIM: usize = 3 * 32 * 32;
pub const CIFAR_RECORD: usize = 1 + CIFAR_DIM;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub provenance: String,
}

impl Dataset {
    pub fn new(inputs: Matrix<f64>, labels: Vec<usize>, n_classes: usize, provenance: impl Into<String>) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::usage(format!("{} input rows but {} labels", inputs.nrows(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::usage(format!("label {bad} outside [0, {n_classes})")));
        }
        Ok(Self { inputs, labels, n_classes, provenance: provenance.into() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize], provenance: impl Into<String>) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            provenance: provenance.into(),
        }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, name: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(name, format!("truncated header at byte offset {offset}")))
}

/// Header dimensions and the payload of an unsigned-byte IDX file.
fn parse_idx<'a>(bytes: &'a [u8], name: &str, magic: u32, rank: usize) -> Result<(Vec<usize>, &'a [u8])> {
    let found = be_u32(bytes, 0, name)?;
    if found != magic {
        return Err(Error::format(name, format!("magic {found} at byte offset 0, expected {magic}")));
    }
    let dims = (0..rank)
        .map(|k| be_u32(bytes, 4 + 4 * k, name).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * rank;
    let len: usize = dims.iter().product();
    let payload = &bytes[start..];
    if payload.len() != len {
        let at = start + payload.len().min(len);
        return Err(Error::format(
            name,
            format!("payload of {} bytes at byte offset {start}, header implies {len} (mismatch at byte offset {at})", payload.len()),
        ));
    }
    Ok((dims, payload))
}

fn scaled(pixels: &[u8], n: usize, d: usize) -> Matrix<f64> {
    Matrix::from_vec(n, d, pixels.iter().map(|&p| p as f64 / 255.0).collect()).expect("shape checked")
}

/// MNIST from in-memory IDX images and labels.
pub fn mnist_from_bytes(images: &[u8], labels: &[u8], images_name: &str, labels_name: &str) -> Result<Dataset> {
    let (idims, pixels) = parse_idx(images, images_name, IDX_IMAGES_MAGIC, 3)?;
    let (ldims, lbytes) = parse_idx(labels, labels_name, IDX_LABELS_MAGIC, 1)?;
    if idims[1] * idims[2] != MNIST_DIM {
        return Err(Error::format(images_name, format!("image shape {}x{} at byte offset 8, expected 28x28", idims[1], idims[2])));
    }
    if idims[0] != ldims[0] {
        return Err(Error::format(
            labels_name,
            format!("{} labels (count at byte offset 4) for {} images", ldims[0], idims[0]),
        ));
    }
    if let Some(pos) = lbytes.iter().position(|&l| l > 9) {
        return Err(Error::format(labels_name, format!("label {} at byte offset {}", lbytes[pos], 8 + pos)));
    }
    Dataset::new(
        scaled(pixels, idims[0], MNIST_DIM),
        lbytes.iter().map(|&l| l as usize).collect(),
        10,
        format!("mnist:{images_name}+{labels_name}"),
    )
}

pub fn load_mnist(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    mnist_from_bytes(&read_bytes(ip)?, &read_bytes(lp)?, &ip.display().to_string(), &lp.display().to_string())
}

fn append_cifar_batch(bytes: &[u8], name: &str, pixels: &mut Vec<u8>, labels: &mut Vec<usize>) -> Result<()> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::format(
            name,
            format!("size {} is not a multiple of {CIFAR_RECORD}; partial record at byte offset {}", bytes.len(), bytes.len() / CIFAR_RECORD * CIFAR_RECORD),
        ));
    }
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::format(name, format!("label {} at byte offset {}", rec[0], r * CIFAR_RECORD)));
        }
        labels.push(rec[0] as usize);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok(())
}

/// One in-memory CIFAR-10 binary batch.
pub fn cifar10_from_bytes(bytes: &[u8], name: &str) -> Result<Dataset> {
    let (mut pixels, mut labels) = (Vec::new(), Vec::new());
    append_cifar_batch(bytes, name, &mut pixels, &mut labels)?;
    Dataset::new(scaled(&pixels, labels.len(), CIFAR_DIM), labels, 10, format!("cifar10:{name}"))
}

/// Concatenation of CIFAR-10 binary batches in the given order.
pub fn load_cifar10<P: AsRef<Path>>(batch_paths: &[P]) -> Result<Dataset> {
    if batch_paths.is_empty() {
        return Err(Error::usage("no CIFAR-10 batch files given"));
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let mut names = Vec::new();
    for p in batch_paths {
        let p = p.as_ref();
        let name = p.display().to_string();
        append_cifar_batch(&read_bytes(p)?, &name, &mut pixels, &mut labels)?;
        names.push(name);
    }
    Dataset::new(scaled(&pixels, labels.len(), CIFAR_DIM), labels, 10, format!("cifar10:{}", names.join("+")))
}

/// Shuffled row order: Fisher-Yates over `0..n` driven by [`seeded`].
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(seed));
    idx
}

/// Train is the first `n_t` shuffled rows and validation the next `n_v`.
pub fn split(data: &Dataset, n_t: usize, n_v: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n_t + n_v > data.len() {
        return Err(Error::usage(format!("split of {n_t} + {n_v} rows from {} available", data.len())));
    }
    let idx = shuffled_indices(data.len(), seed);
    let tag = |part: &str| format!("{}|{part}(seed={seed})", data.provenance);
    Ok((data.select(&idx[..n_t], tag("train")), data.select(&idx[n_t..n_t + n_v], tag("val"))))
}

/// 17 significant digits, enough to reproduce any `f64`.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_real(field: &str, name: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::format(name, format!("line {line}: cannot parse {field:?} as a number")))
}

fn csv_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub fn write_matrix_csv<W: Write>(m: &Matrix<f64>, mut out: W) -> std::io::Result<()> {
    let mut line = String::new();
    for row in m.rows_iter() {
        line.clear();
        for (j, &v) in row.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&fmt_real(v));
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    out.flush()
}

pub fn save_matrix_csv(m: &Matrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_matrix_csv(m, std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

/// Headerless, row-major, comma-separated.
pub fn load_matrix_csv(path: impl AsRef<Path>) -> Result<Matrix<f64>> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let mut data = Vec::new();
    let mut ncols = None;
    let lines = csv_lines(path)?;
    for (no, line) in &lines {
        let row = line.split(',').map(|f| parse_real(f, &name, *no)).collect::<Result<Vec<_>>>()?;
        match ncols {
            None => ncols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::format(&name, format!("line {no}: {} columns, expected {c}", row.len())));
            }
            _ => {}
        }
        data.extend(row);
    }
    let ncols = ncols.ok_or_else(|| Error::format(&name, "no rows"))?;
    Matrix::from_vec(lines.len(), ncols, data)
}

pub fn write_dataset_csv<W: Write>(data: &Dataset, mut out: W) -> std::io::Result<()> {
    let mut line = String::new();
    for (row, &label) in data.inputs.rows_iter().zip(&data.labels) {
        line.clear();
        let _ = write!(line, "{label}");
        for &v in row {
            line.push(',');
            line.push_str(&fmt_real(v));
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    out.flush()
}

pub fn save_dataset_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset_csv(data, std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

/// Label column first, then the features. `n_classes` defaults to one past
/// the largest label present.
pub fn load_dataset_csv(path: impl AsRef<Path>, n_classes: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let lines = csv_lines(path)?;
    let mut labels = Vec::with_capacity(lines.len());
    let mut data = Vec::new();
    let mut dim = None;
    for (no, line) in &lines {
        let mut fields = line.split(',');
        let lf = fields.next().unwrap_or("").trim();
        let label = lf
            .parse::<usize>()
            .map_err(|_| Error::format(&name, format!("line {no}: label {lf:?} is not a nonnegative integer")))?;
        let before = data.len();
        for f in fields {
            data.push(parse_real(f, &name, *no)?);
        }
        let d = data.len() - before;
        match dim {
            None if d == 0 => return Err(Error::format(&name, format!("line {no}: no feature columns"))),
            None => dim = Some(d),
            Some(c) if c != d => return Err(Error::format(&name, format!("line {no}: {d} features, expected {c}"))),
            _ => {}
        }
        labels.push(label);
    }
    let dim = dim.ok_or_else(|| Error::format(&name, "no rows"))?;
    let n_classes = n_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    if let Some(pos) = labels.iter().position(|&l| l >= n_classes) {
        return Err(Error::format(&name, format!("line {}: label {} outside [0, {n_classes})", lines[pos].0, labels[pos])));
    }
    Dataset::new(Matrix::from_vec(labels.len(), dim, data)?, labels, n_classes, format!("csv:{name}"))
}
