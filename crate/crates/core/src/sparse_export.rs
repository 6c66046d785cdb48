//! CSR storage, symmetric int8 quantization, the `PINSCSR1` binary format,
//! a sparse matvec kernel and dense-vs-sparse benchmarks.
//!
//! Layout of a serialized matrix (little-endian):
//!
//! ```text
//! "PINSCSR1" | dtype u8 (0 f32, 1 i8) | rows u32 | cols u32 | nnz u64
//! [scale f32, i8 only] | row_ptr u32 * (rows+1) | col_idx u32 * nnz | values
//! ```

use std::hint::black_box;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{PinsError, Result};
use crate::models::ParamRegistry;

pub const CSR_MAGIC: &[u8; 8] = b"PINSCSR1";
pub const DTYPE_F32: u8 = 0;
pub const DTYPE_I8: u8 = 1;
pub const BENCH_WARMUP: usize = 3;
pub const BENCH_MIN_TRIALS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Csr<T> {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<u32>,
    pub col_idx: Vec<u32>,
    pub values: Vec<T>,
}

pub type CsrMatrix = Csr<f32>;

impl<T> Csr<T> {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn density(&self) -> f64 {
        let n = self.rows * self.cols;
        if n == 0 {
            0.0
        } else {
            self.nnz() as f64 / n as f64
        }
    }

    fn row(&self, r: usize) -> std::ops::Range<usize> {
        self.row_ptr[r] as usize..self.row_ptr[r + 1] as usize
    }
}

/// CSR with int8 values and one positive scale: `w ~= q * scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedCsr {
    pub csr: Csr<i8>,
    pub scale: f32,
}

/// Either storage type, as found in a serialized file.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredCsr {
    F32(CsrMatrix),
    I8(QuantizedCsr),
}

impl StoredCsr {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            StoredCsr::F32(c) => (c.rows, c.cols),
            StoredCsr::I8(q) => (q.csr.rows, q.csr.cols),
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            StoredCsr::F32(c) => c.nnz(),
            StoredCsr::I8(q) => q.csr.nnz(),
        }
    }

    pub fn dtype(&self) -> u8 {
        match self {
            StoredCsr::F32(_) => DTYPE_F32,
            StoredCsr::I8(_) => DTYPE_I8,
        }
    }

    pub fn scale(&self) -> Option<f32> {
        match self {
            StoredCsr::F32(_) => None,
            StoredCsr::I8(q) => Some(q.scale),
        }
    }

    pub fn matvec(&self, x: &[f32]) -> Result<Vec<f32>> {
        match self {
            StoredCsr::F32(c) => csr_matvec(c, x),
            StoredCsr::I8(q) => quantized_matvec(q, x),
        }
    }

    /// Dense `(rows, cols)` values; int8 entries are dequantized.
    pub fn to_dense(&self) -> Tensor {
        match self {
            StoredCsr::F32(c) => from_csr(c),
            StoredCsr::I8(q) => from_csr(&dequantize(q)),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            StoredCsr::F32(c) => serialize(c),
            StoredCsr::I8(q) => serialize_quantized(q),
        }
    }
}

/// Drops exact zeros (both signs) of a rank-2 tensor.
pub fn to_csr(dense: &Tensor) -> Result<CsrMatrix> {
    let (rows, cols) = dense
        .dims2()
        .filter(|_| dense.rank() == 2)
        .ok_or_else(|| PinsError::rejected("to_csr", format!("expected rank 2, got shape {:?}", dense.shape())))?;
    let mut row_ptr = Vec::with_capacity(rows + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0u32);
    for r in 0..rows {
        for (c, &v) in dense.data()[r * cols..(r + 1) * cols].iter().enumerate() {
            if v != 0.0 {
                col_idx.push(c as u32);
                values.push(v);
            }
        }
        row_ptr.push(values.len() as u32);
    }
    Ok(Csr {
        rows,
        cols,
        row_ptr,
        col_idx,
        values,
    })
}

pub fn from_csr(csr: &CsrMatrix) -> Tensor {
    let mut data = vec![0.0f32; csr.rows * csr.cols];
    for r in 0..csr.rows {
        for k in csr.row(r) {
            data[r * csr.cols + csr.col_idx[k] as usize] = csr.values[k];
        }
    }
    Tensor::new(vec![csr.rows, csr.cols], data).expect("dims match data")
}

/// Symmetric per-matrix int8 quantization, `scale = max|w| / 127`,
/// round half away from zero. Entries that quantize to 0 are dropped.
pub fn quantize_int8(csr: &CsrMatrix) -> Result<QuantizedCsr> {
    let max = csr.values.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if !(max > 0.0) || !max.is_finite() {
        return Err(PinsError::rejected(
            "quantize_int8",
            "degenerate scale: no finite non-zero values",
        ));
    }
    let scale = max / 127.0;
    let mut row_ptr = Vec::with_capacity(csr.rows + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0u32);
    for r in 0..csr.rows {
        for k in csr.row(r) {
            let q = (csr.values[k] as f64 / scale as f64).round().clamp(-127.0, 127.0) as i8;
            if q != 0 {
                col_idx.push(csr.col_idx[k]);
                values.push(q);
            }
        }
        row_ptr.push(values.len() as u32);
    }
    Ok(QuantizedCsr {
        csr: Csr {
            rows: csr.rows,
            cols: csr.cols,
            row_ptr,
            col_idx,
            values,
        },
        scale,
    })
}

pub fn dequantize(q: &QuantizedCsr) -> CsrMatrix {
    Csr {
        rows: q.csr.rows,
        cols: q.csr.cols,
        row_ptr: q.csr.row_ptr.clone(),
        col_idx: q.csr.col_idx.clone(),
        values: q.csr.values.iter().map(|&v| v as f32 * q.scale).collect(),
    }
}

fn check_len(op: &'static str, cols: usize, x: &[f32]) -> Result<()> {
    if x.len() != cols {
        return Err(PinsError::rejected(
            op,
            format!("vector has length {}, matrix has {cols} columns", x.len()),
        ));
    }
    Ok(())
}

pub fn csr_matvec(csr: &CsrMatrix, x: &[f32]) -> Result<Vec<f32>> {
    check_len("csr_matvec", csr.cols, x)?;
    let mut y = vec![0.0f32; csr.rows];
    for (r, out) in y.iter_mut().enumerate() {
        let range = csr.row(r);
        let mut acc = 0.0f32;
        for (&c, &v) in csr.col_idx[range.clone()].iter().zip(&csr.values[range]) {
            acc += v * x[c as usize];
        }
        *out = acc;
    }
    Ok(y)
}

/// `scale * (Q x)`.
pub fn quantized_matvec(q: &QuantizedCsr, x: &[f32]) -> Result<Vec<f32>> {
    check_len("quantized_matvec", q.csr.cols, x)?;
    let mut y = vec![0.0f32; q.csr.rows];
    for (r, out) in y.iter_mut().enumerate() {
        let range = q.csr.row(r);
        let mut acc = 0.0f32;
        for (&c, &v) in q.csr.col_idx[range.clone()].iter().zip(&q.csr.values[range]) {
            acc += v as f32 * x[c as usize];
        }
        *out = acc * q.scale;
    }
    Ok(y)
}

/// Row-by-row dense matvec over a rank-2 tensor.
pub fn dense_matvec(a: &Tensor, x: &[f32]) -> Result<Vec<f32>> {
    let (rows, cols) = a
        .dims2()
        .filter(|_| a.rank() == 2)
        .ok_or_else(|| PinsError::rejected("dense_matvec", "expected rank 2"))?;
    check_len("dense_matvec", cols, x)?;
    Ok((0..rows)
        .map(|r| {
            let mut acc = 0.0f32;
            for (&v, &xi) in a.data()[r * cols..(r + 1) * cols].iter().zip(x) {
                acc += v * xi;
            }
            acc
        })
        .collect())
}

/// `||a - b|| / ||b||` (0 when both are zero).
pub fn relative_error(a: &[f32], b: &[f32]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    let den: f64 = b.iter().map(|&y| (y as f64).powi(2)).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Serialized size for the given layout.
pub fn serialized_size(dtype: u8, rows: usize, nnz: usize) -> usize {
    let (scale, value) = if dtype == DTYPE_I8 { (4, 1) } else { (0, 4) };
    CSR_MAGIC.len() + 1 + 4 + 4 + 8 + scale + (rows + 1) * 4 + nnz * (4 + value)
}

fn write_header<T>(out: &mut Vec<u8>, dtype: u8, csr: &Csr<T>) {
    out.extend_from_slice(CSR_MAGIC);
    out.push(dtype);
    out.extend_from_slice(&(csr.rows as u32).to_le_bytes());
    out.extend_from_slice(&(csr.cols as u32).to_le_bytes());
    out.extend_from_slice(&(csr.nnz() as u64).to_le_bytes());
}

fn write_indices<T>(out: &mut Vec<u8>, csr: &Csr<T>) {
    for v in &csr.row_ptr {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &csr.col_idx {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn serialize(csr: &CsrMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(serialized_size(DTYPE_F32, csr.rows, csr.nnz()));
    write_header(&mut out, DTYPE_F32, csr);
    write_indices(&mut out, csr);
    for v in &csr.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn serialize_quantized(q: &QuantizedCsr) -> Vec<u8> {
    let mut out = Vec::with_capacity(serialized_size(DTYPE_I8, q.csr.rows, q.csr.nnz()));
    write_header(&mut out, DTYPE_I8, &q.csr);
    out.extend_from_slice(&q.scale.to_le_bytes());
    write_indices(&mut out, &q.csr);
    out.extend(q.csr.values.iter().map(|&v| v as u8));
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(PinsError::Format {
                offset: self.pos,
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn bad(&self, offset: usize, reason: impl Into<String>) -> PinsError {
        PinsError::Format {
            offset,
            reason: reason.into(),
        }
    }
}

/// Parses and validates a `PINSCSR1` buffer.
pub fn deserialize(buf: &[u8]) -> Result<StoredCsr> {
    let mut rd = Reader { buf, pos: 0 };
    if rd.take(8, "magic")? != CSR_MAGIC {
        return Err(rd.bad(0, "bad magic"));
    }
    let dtype = rd.take(1, "dtype")?[0];
    if dtype != DTYPE_F32 && dtype != DTYPE_I8 {
        return Err(rd.bad(8, format!("unknown dtype {dtype}")));
    }
    let rows = rd.u32("rows")? as usize;
    let cols = rd.u32("cols")? as usize;
    let nnz_at = rd.pos;
    let nnz = u64::from_le_bytes(rd.take(8, "nnz")?.try_into().expect("8 bytes"));
    if nnz > (rows as u64) * (cols as u64) || nnz > u32::MAX as u64 {
        return Err(rd.bad(nnz_at, format!("nnz {nnz} exceeds {rows}x{cols}")));
    }
    let nnz = nnz as usize;
    let scale = if dtype == DTYPE_I8 {
        let at = rd.pos;
        let s = f32::from_le_bytes(rd.take(4, "scale")?.try_into().expect("4 bytes"));
        if !(s > 0.0 && s.is_finite()) {
            return Err(rd.bad(at, format!("scale {s} is not positive")));
        }
        Some(s)
    } else {
        None
    };
    let expected = serialized_size(dtype, rows, nnz);
    if buf.len() < expected {
        return Err(rd.bad(buf.len(), format!("truncated: expected {expected} bytes")));
    }
    if buf.len() > expected {
        return Err(rd.bad(expected, "trailing bytes"));
    }

    let ptr_at = rd.pos;
    let mut row_ptr = Vec::with_capacity(rows + 1);
    for _ in 0..=rows {
        row_ptr.push(rd.u32("row_ptr")?);
    }
    if row_ptr[0] != 0 || row_ptr[rows] as usize != nnz {
        return Err(rd.bad(ptr_at, "row_ptr must start at 0 and end at nnz"));
    }
    if let Some(i) = row_ptr.windows(2).position(|w| w[0] > w[1]) {
        return Err(rd.bad(ptr_at + 4 * (i + 1), "row_ptr decreases"));
    }
    let idx_at = rd.pos;
    let mut col_idx = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        col_idx.push(rd.u32("col_idx")?);
    }
    for r in 0..rows {
        let (a, b) = (row_ptr[r] as usize, row_ptr[r + 1] as usize);
        for k in a..b {
            if col_idx[k] as usize >= cols || (k > a && col_idx[k] <= col_idx[k - 1]) {
                return Err(rd.bad(idx_at + 4 * k, format!("invalid column index in row {r}")));
            }
        }
    }
    let val_at = rd.pos;
    let stored = match scale {
        None => {
            let mut values = Vec::with_capacity(nnz);
            for _ in 0..nnz {
                values.push(f32::from_le_bytes(rd.take(4, "values")?.try_into().expect("4 bytes")));
            }
            if let Some(k) = values.iter().position(|&v| v == 0.0) {
                return Err(rd.bad(val_at + 4 * k, "explicit zero stored"));
            }
            StoredCsr::F32(Csr {
                rows,
                cols,
                row_ptr,
                col_idx,
                values,
            })
        }
        Some(scale) => {
            let values: Vec<i8> = rd.take(nnz, "values")?.iter().map(|&b| b as i8).collect();
            if let Some(k) = values.iter().position(|&v| v == 0 || v == i8::MIN) {
                return Err(rd.bad(val_at + k, "quantized value outside [-127, 127] \\ {0}"));
            }
            StoredCsr::I8(QuantizedCsr {
                csr: Csr {
                    rows,
                    cols,
                    row_ptr,
                    col_idx,
                    values,
                },
                scale,
            })
        }
    };
    Ok(stored)
}

pub fn write_csr(stored: &StoredCsr, path: &Path) -> Result<usize> {
    let bytes = stored.to_bytes();
    std::fs::write(path, &bytes).map_err(|e| PinsError::io(path, e))?;
    Ok(bytes.len())
}

pub fn read_csr(path: &Path) -> Result<StoredCsr> {
    let bytes = std::fs::read(path).map_err(|e| PinsError::io(path, e))?;
    deserialize(&bytes)
}

/// Zeroes all but the `round((1 - sparsity) * n)` largest-magnitude entries;
/// ties keep the lower index.
pub fn sparsify_by_magnitude(dense: &Tensor, sparsity: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(PinsError::rejected("sparsify_by_magnitude", format!("sparsity {sparsity} not in [0, 1]")));
    }
    let n = dense.numel();
    let keep = crate::datasets::round_half_up((1.0 - sparsity) * n as f64).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let d = dense.data();
    order.sort_by(|&a, &b| d[b].abs().total_cmp(&d[a].abs()).then(a.cmp(&b)));
    let mut out = vec![0.0f32; n];
    for &i in &order[..keep] {
        out[i] = d[i];
    }
    Tensor::new(dense.shape().to_vec(), out)
}

/// Seeded `(rows, cols)` matrix with `N(0, 1)`-like values and the given
/// fraction of entries set to zero at random positions.
pub fn random_sparse_matrix(rows: usize, cols: usize, sparsity: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rows * cols;
    let mut data: Vec<f32> = (0..n)
        .map(|_| {
            let v: f32 = rng.random_range(-1.0..1.0);
            if v == 0.0 {
                0.5
            } else {
                v
            }
        })
        .collect();
    let zeros = crate::datasets::round_half_up(sparsity * n as f64).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..zeros {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
        data[idx[i]] = 0.0;
    }
    Tensor::new(vec![rows, cols], data).expect("dims match data")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub dense_ms: f64,
    pub sparse_ms: f64,
    pub speedup: f64,
    /// Value bytes of the dense f32 matrices.
    pub dense_bytes: usize,
    /// Serialized CSR bytes.
    pub sparse_bytes: usize,
    pub ratio: f64,
    pub trials: usize,
    /// Relative error of the sparse result against the dense one.
    pub max_rel_error: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn time_ms(trials: usize, mut f: impl FnMut()) -> f64 {
    for _ in 0..BENCH_WARMUP {
        f();
    }
    median(
        (0..trials)
            .map(|_| {
                let start = Instant::now();
                f();
                start.elapsed().as_secs_f64() * 1e3
            })
            .collect(),
    )
}

/// Dense vs CSR matvec timings (median of `trials` after 3 warmup calls,
/// one thread) for a set of stored matrices and their dense equivalents.
pub fn bench_stored(matrices: &[StoredCsr], trials: usize, seed: u64) -> Result<BenchReport> {
    if trials < BENCH_MIN_TRIALS {
        return Err(PinsError::rejected("bench", format!("trials must be >= {BENCH_MIN_TRIALS}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dense: Vec<Tensor> = matrices.iter().map(StoredCsr::to_dense).collect();
    let xs: Vec<Vec<f32>> = matrices
        .iter()
        .map(|m| (0..m.dims().1).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .collect();
    let mut max_rel_error = 0.0f64;
    for ((m, d), x) in matrices.iter().zip(&dense).zip(&xs) {
        let ys = m.matvec(x)?;
        let yd = dense_matvec(d, x)?;
        max_rel_error = max_rel_error.max(relative_error(&ys, &yd));
    }
    let dense_ms = time_ms(trials, || {
        for (d, x) in dense.iter().zip(&xs) {
            black_box(dense_matvec(black_box(d), black_box(x)).expect("checked"));
        }
    });
    let sparse_ms = time_ms(trials, || {
        for (m, x) in matrices.iter().zip(&xs) {
            black_box(m.matvec(black_box(x)).expect("checked"));
        }
    });
    let dense_bytes: usize = matrices.iter().map(|m| m.dims().0 * m.dims().1 * 4).sum();
    let sparse_bytes: usize = matrices
        .iter()
        .map(|m| serialized_size(m.dtype(), m.dims().0, m.nnz()))
        .sum();
    Ok(BenchReport {
        dense_ms,
        sparse_ms,
        speedup: dense_ms / sparse_ms,
        dense_bytes,
        sparse_bytes,
        ratio: dense_bytes as f64 / sparse_bytes as f64,
        trials,
        max_rel_error,
    })
}

/// Magnitude-sparsifies `dense` to `sparsity`, then benchmarks its f32 CSR
/// against the dense matvec of the same sparsified matrix.
pub fn bench(dense: &Tensor, sparsity: f64, trials: usize) -> Result<BenchReport> {
    let pruned = sparsify_by_magnitude(dense, sparsity)?;
    bench_stored(&[StoredCsr::F32(to_csr(&pruned)?)], trials, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub dims: [usize; 2],
    /// `"f32"` or `"i8"`.
    pub dtype: String,
    pub sparsity: f64,
    pub scale: Option<f32>,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub matrices: Vec<ManifestEntry>,
    pub dense_bytes: usize,
    pub sparse_bytes: usize,
}

pub const MANIFEST_NAME: &str = "manifest.json";

fn dtype_name(dtype: u8) -> &'static str {
    if dtype == DTYPE_I8 {
        "i8"
    } else {
        "f32"
    }
}

/// Writes every prunable rank-2 parameter as `{name}.csr` plus a manifest.
/// With `quantize`, matrices are stored as int8; an all-zero matrix stays
/// an empty f32 CSR since it has no scale.
pub fn export_bundle(reg: &ParamRegistry, dir: &Path, quantize: bool) -> Result<BundleManifest> {
    std::fs::create_dir_all(dir).map_err(|e| PinsError::io(dir, e))?;
    let mut matrices = Vec::new();
    let mut dense_bytes = 0;
    let mut sparse_bytes = 0;
    for (name, e) in reg.prunable() {
        let Some((rows, cols)) = e.tensor.dims2() else {
            continue;
        };
        let csr = to_csr(&e.tensor)?;
        let stored = if quantize && csr.nnz() > 0 {
            StoredCsr::I8(quantize_int8(&csr)?)
        } else {
            StoredCsr::F32(csr)
        };
        let bytes = write_csr(&stored, &dir.join(format!("{name}.csr")))?;
        dense_bytes += rows * cols * 4;
        sparse_bytes += bytes;
        matrices.push(ManifestEntry {
            name: name.clone(),
            dims: [rows, cols],
            dtype: dtype_name(stored.dtype()).into(),
            sparsity: 1.0 - stored.nnz() as f64 / (rows * cols) as f64,
            scale: stored.scale(),
            bytes,
        });
    }
    let manifest = BundleManifest {
        matrices,
        dense_bytes,
        sparse_bytes,
    };
    let path = dir.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| PinsError::Serde(e.to_string()))?;
    std::fs::write(&path, json).map_err(|e| PinsError::io(&path, e))?;
    Ok(manifest)
}

/// Reads a bundle and checks every file against its manifest entry.
pub fn load_bundle(dir: &Path) -> Result<(BundleManifest, Vec<StoredCsr>)> {
    let path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path).map_err(|e| PinsError::io(&path, e))?;
    let manifest: BundleManifest =
        serde_json::from_str(&text).map_err(|e| PinsError::Serde(format!("{}: {e}", path.display())))?;
    let mut out = Vec::with_capacity(manifest.matrices.len());
    for entry in &manifest.matrices {
        let file: PathBuf = dir.join(format!("{}.csr", entry.name));
        let stored = read_csr(&file)?;
        let (rows, cols) = stored.dims();
        if [rows, cols] != entry.dims || dtype_name(stored.dtype()) != entry.dtype {
            return Err(PinsError::Format {
                offset: 0,
                reason: format!("{} does not match its manifest entry", file.display()),
            });
        }
        out.push(stored);
    }
    Ok((manifest, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_example() {
        let m = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let c = to_csr(&m).unwrap();
        assert_eq!(c.row_ptr, vec![0, 1, 2]);
        assert_eq!(c.col_idx, vec![0, 1]);
        assert_eq!(c.values, vec![1.0, 2.0]);
        assert_eq!(from_csr(&c), m);
    }

    #[test]
    fn all_zero() {
        let c = to_csr(&Tensor::zeros(&[3, 4])).unwrap();
        assert_eq!(c.nnz(), 0);
        assert_eq!(c.row_ptr, vec![0; 4]);
        assert!(quantize_int8(&c).is_err());
        assert_eq!(csr_matvec(&c, &[1.0; 4]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn rank_check() {
        assert!(to_csr(&Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn quantization_examples() {
        let m = Tensor::from_rows(&[vec![0.0, 1.27, -1.27]]).unwrap();
        let q = quantize_int8(&to_csr(&m).unwrap()).unwrap();
        assert!((q.scale - 0.01).abs() < 1e-9);
        assert_eq!(q.csr.values, vec![127, -127]);
        let d = dequantize(&q);
        assert_eq!(d.values, vec![1.27, -1.27]);

        let one = quantize_int8(&to_csr(&Tensor::from_rows(&[vec![-0.3]]).unwrap()).unwrap()).unwrap();
        assert_eq!(one.csr.values, vec![-127]);
        assert!((one.scale - 0.3 / 127.0).abs() < 1e-9);
    }

    #[test]
    fn identity_matvec() {
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 4] = 1.0;
        }
        let c = to_csr(&eye).unwrap();
        assert_eq!(csr_matvec(&c, &[1.0, -2.0, 3.0]).unwrap(), vec![1.0, -2.0, 3.0]);
        assert!(csr_matvec(&c, &[1.0]).is_err());
    }

    #[test]
    fn layout_sizes() {
        let c = to_csr(&random_sparse_matrix(8, 5, 0.5, 1)).unwrap();
        let bytes = serialize(&c);
        assert_eq!(bytes.len(), 25 + 9 * 4 + c.nnz() * 8);
        let q = quantize_int8(&c).unwrap();
        assert_eq!(serialize_quantized(&q).len(), 29 + 9 * 4 + q.csr.nnz() * 5);
    }

    #[test]
    fn format_errors() {
        let c = to_csr(&random_sparse_matrix(4, 4, 0.5, 2)).unwrap();
        let bytes = serialize(&c);
        for cut in [0, 5, 20, bytes.len() - 1] {
            assert!(matches!(deserialize(&bytes[..cut]), Err(PinsError::Format { .. })));
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(deserialize(&bad), Err(PinsError::Format { offset: 0, .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(deserialize(&long).is_err());
        assert_eq!(deserialize(&bytes).unwrap(), StoredCsr::F32(c));
    }

    #[test]
    fn sparsity_zero_costs_more_than_dense() {
        let r = bench(&random_sparse_matrix(32, 32, 0.0, 3), 0.0, 10).unwrap();
        assert!(r.sparse_bytes > r.dense_bytes);
        assert_eq!(r.dense_bytes, 32 * 32 * 4);
        assert!(bench(&Tensor::zeros(&[2, 2]), 0.0, 3).is_err());
    }

    #[test]
    fn magnitude_sparsify_counts() {
        let m = random_sparse_matrix(10, 10, 0.0, 4);
        let s = sparsify_by_magnitude(&m, 0.8).unwrap();
        assert_eq!(s.data().iter().filter(|&&v| v != 0.0).count(), 20);
    }
}
