//! Dense third-order tensors and the multilinear primitives built on them.
//!
//! Storage is a flat `Vec<f64>` where entry `(i, j, k)` of an `I x J x K`
//! tensor lives at `i*J*K + j*K + k`.
//!
//! Unfoldings put the chosen mode on the rows. Columns enumerate the two
//! remaining modes row-major in ascending mode order, so the lower-numbered
//! remaining mode varies slowest:
//!
//! | mode | shape         | column of `(i, j, k)` |
//! |------|---------------|-----------------------|
//! | 1    | `I x (J*K)`   | `j*K + k`             |
//! | 2    | `J x (I*K)`   | `i*K + k`             |
//! | 3    | `K x (I*J)`   | `i*J + j`             |
//!
//! Modes are numbered 1, 2, 3 throughout the public API.

use std::io::{BufRead, Write};

use crate::error::{invalid, Error, Result};

/// Row-major dense matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return invalid(format!("matrix extents must be positive, got {rows}x{cols}"));
        }
        if values.len() != rows * cols {
            return invalid(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite matrix entry at flat index {pos}"));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix extents must be positive");
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    /// Panics if `f` produces a non-finite value.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Self::new(rows, cols, values).expect("from_fn produced an invalid matrix")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return invalid(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = vec![0.0; self.rows * other.cols];
        for r in 0..self.rows {
            let out_row = &mut out[r * other.cols..(r + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                for (o, b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Matrix::new(self.rows, other.cols, out)
    }

    /// `selfᵀ · self`, the Gram matrix of the columns.
    pub fn gram(&self) -> Matrix {
        let n = self.cols;
        let mut g = vec![0.0; n * n];
        for r in 0..self.rows {
            let row = self.row(r);
            for a in 0..n {
                for b in a..n {
                    g[a * n + b] += row[a] * row[b];
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                g[a * n + b] = g[b * n + a];
            }
        }
        Matrix {
            rows: n,
            cols: n,
            values: g,
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), rows * cols);
        Self { rows, cols, values }
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Writes `rows cols` followed by one line per row.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.rows, self.cols)?;
        for r in 0..self.rows {
            write_values(&mut w, self.row(r))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut tokens = TokenReader::new(r);
        Self::read_tokens(&mut tokens)
    }

    pub(crate) fn read_tokens<R: BufRead>(tokens: &mut TokenReader<R>) -> Result<Self> {
        let rows = tokens.next_usize("matrix rows")?;
        let cols = tokens.next_usize("matrix cols")?;
        let mut values = Vec::with_capacity(rows.saturating_mul(cols));
        for _ in 0..rows * cols {
            values.push(tokens.next_f64("matrix value")?);
        }
        Matrix::new(rows, cols, values)
    }
}

/// Dense `I x J x K` tensor with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    values: Vec<f64>,
}

impl Tensor3 {
    pub fn new(dims: [usize; 3], values: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return invalid(format!("tensor extents must be positive, got {dims:?}"));
        }
        let n = dims[0] * dims[1] * dims[2];
        if values.len() != n {
            return invalid(format!("tensor {dims:?} needs {n} values, got {}", values.len()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite tensor entry at flat index {pos}"));
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "tensor extents must be positive");
        Self {
            dims,
            values: vec![0.0; dims[0] * dims[1] * dims[2]],
        }
    }

    /// Panics if `f` produces a non-finite value.
    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    values.push(f(i, j, k));
                }
            }
        }
        Self::new(dims, values).expect("from_fn produced an invalid tensor")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn extent(&self, mode: usize) -> Result<usize> {
        check_mode(mode)?;
        Ok(self.dims[mode - 1])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.squared_norm().sqrt()
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn unfold(&self, mode: usize) -> Result<Matrix> {
        check_mode(mode)?;
        let [ni, nj, nk] = self.dims;
        let (rows, cols) = unfolded_shape(self.dims, mode);
        let mut out = vec![0.0; rows * cols];
        for i in 0..ni {
            for j in 0..nj {
                for k in 0..nk {
                    let (r, c) = unfold_position(self.dims, mode, i, j, k);
                    out[r * cols + c] = self.get(i, j, k);
                }
            }
        }
        Ok(Matrix::from_raw(rows, cols, out))
    }

    /// Inverse of [`Tensor3::unfold`] for a tensor of shape `dims`.
    pub fn refold(m: &Matrix, mode: usize, dims: [usize; 3]) -> Result<Tensor3> {
        check_mode(mode)?;
        let (rows, cols) = unfolded_shape(dims, mode);
        if m.rows() != rows || m.cols() != cols {
            return invalid(format!(
                "mode-{mode} unfolding of {dims:?} is {rows}x{cols}, got {}x{}",
                m.rows(),
                m.cols()
            ));
        }
        let mut out = Tensor3::zeros(dims);
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    let (r, c) = unfold_position(dims, mode, i, j, k);
                    let idx = out.index(i, j, k);
                    out.values[idx] = m.get(r, c);
                }
            }
        }
        Ok(out)
    }

    /// n-mode product `self x_mode m`: the extent of `mode` becomes `m.rows()`.
    pub fn mode_multiply(&self, m: &Matrix, mode: usize) -> Result<Tensor3> {
        check_mode(mode)?;
        let n = self.dims[mode - 1];
        if m.cols() != n {
            return invalid(format!(
                "mode-{mode} product needs a matrix with {n} columns, got {}x{}",
                m.rows(),
                m.cols()
            ));
        }
        let [ni, nj, nk] = self.dims;
        let mut dims = self.dims;
        dims[mode - 1] = m.rows();
        let mut out = vec![0.0; dims[0] * dims[1] * dims[2]];
        match mode {
            1 => {
                let slab = nj * nk;
                for r in 0..m.rows() {
                    let dst = &mut out[r * slab..(r + 1) * slab];
                    for i in 0..ni {
                        let a = m.get(r, i);
                        if a == 0.0 {
                            continue;
                        }
                        let src = &self.values[i * slab..(i + 1) * slab];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += a * s;
                        }
                    }
                }
            }
            2 => {
                let nr = m.rows();
                for i in 0..ni {
                    for r in 0..nr {
                        let dst_off = (i * nr + r) * nk;
                        for j in 0..nj {
                            let a = m.get(r, j);
                            if a == 0.0 {
                                continue;
                            }
                            let src_off = (i * nj + j) * nk;
                            for k in 0..nk {
                                out[dst_off + k] += a * self.values[src_off + k];
                            }
                        }
                    }
                }
            }
            _ => {
                let nr = m.rows();
                for fiber in 0..ni * nj {
                    let src = &self.values[fiber * nk..(fiber + 1) * nk];
                    let dst = &mut out[fiber * nr..(fiber + 1) * nr];
                    for (r, d) in dst.iter_mut().enumerate() {
                        *d = m.row(r).iter().zip(src).map(|(a, b)| a * b).sum();
                    }
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return invalid(format!("mode-{mode} product overflowed to a non-finite value"));
        }
        Ok(Tensor3 { dims, values: out })
    }

    pub fn sub(&self, other: &Tensor3) -> Result<Tensor3> {
        if self.dims != other.dims {
            return invalid(format!("shape mismatch: {:?} vs {:?}", self.dims, other.dims));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Tensor3 {
            dims: self.dims,
            values,
        })
    }

    /// Writes `I J K` on the first line, then one line of `K` values for
    /// every `(i, j)` in linearization order.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let [ni, nj, nk] = self.dims;
        writeln!(w, "{ni} {nj} {nk}")?;
        for fiber in 0..ni * nj {
            write_values(&mut w, &self.values[fiber * nk..(fiber + 1) * nk])?;
        }
        Ok(())
    }

    /// Reads the text format; any whitespace layout of the values is accepted.
    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut tokens = TokenReader::new(r);
        Self::read_tokens(&mut tokens)
    }

    pub(crate) fn read_tokens<R: BufRead>(tokens: &mut TokenReader<R>) -> Result<Self> {
        let ni = tokens.next_usize("tensor extent I")?;
        let nj = tokens.next_usize("tensor extent J")?;
        let nk = tokens.next_usize("tensor extent K")?;
        let n = ni.saturating_mul(nj).saturating_mul(nk);
        let mut values = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            values.push(tokens.next_f64("tensor value")?);
        }
        Tensor3::new([ni, nj, nk], values)
    }
}

/// `X̂ = G x1 A x2 B x3 C`.
pub fn reconstruct(core: &Tensor3, a: &Matrix, b: &Matrix, c: &Matrix) -> Result<Tensor3> {
    let [p, q, r] = core.dims();
    if a.cols() != p || b.cols() != q || c.cols() != r {
        return invalid(format!(
            "core {:?} does not match factor widths ({}, {}, {})",
            core.dims(),
            a.cols(),
            b.cols(),
            c.cols()
        ));
    }
    core.mode_multiply(a, 1)?.mode_multiply(b, 2)?.mode_multiply(c, 3)
}

fn check_mode(mode: usize) -> Result<()> {
    if (1..=3).contains(&mode) {
        Ok(())
    } else {
        invalid(format!("mode must be 1, 2 or 3, got {mode}"))
    }
}

fn unfolded_shape(dims: [usize; 3], mode: usize) -> (usize, usize) {
    let [ni, nj, nk] = dims;
    match mode {
        1 => (ni, nj * nk),
        2 => (nj, ni * nk),
        _ => (nk, ni * nj),
    }
}

#[inline]
fn unfold_position(dims: [usize; 3], mode: usize, i: usize, j: usize, k: usize) -> (usize, usize) {
    let [_, nj, nk] = dims;
    match mode {
        1 => (i, j * nk + k),
        2 => (j, i * nk + k),
        _ => (k, i * nj + j),
    }
}

pub(crate) fn write_values<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    let mut first = true;
    for v in values {
        if !first {
            w.write_all(b" ")?;
        }
        first = false;
        write!(w, "{}", format_f64(*v))?;
    }
    w.write_all(b"\n")?;
    Ok(())
}

/// 17 significant digits, enough to round-trip any finite double.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Whitespace-separated token stream over a reader, tracking line numbers.
pub(crate) struct TokenReader<R> {
    reader: R,
    line: u64,
    pending: std::collections::VecDeque<String>,
}

impl<R: BufRead> TokenReader<R> {
    pub(crate) fn new(reader: R) -> Self {
        Self {
            reader,
            line: 0,
            pending: Default::default(),
        }
    }

    pub(crate) fn next_token(&mut self, what: &str) -> Result<String> {
        loop {
            if let Some(t) = self.pending.pop_front() {
                return Ok(t);
            }
            let mut buf = String::new();
            if self.reader.read_line(&mut buf)? == 0 {
                return Err(Error::Parse {
                    line: self.line,
                    message: format!("unexpected end of input while reading {what}"),
                });
            }
            self.line += 1;
            self.pending.extend(buf.split_whitespace().map(str::to_owned));
        }
    }

    pub(crate) fn next_usize(&mut self, what: &str) -> Result<usize> {
        let t = self.next_token(what)?;
        t.parse().map_err(|_| Error::Parse {
            line: self.line,
            message: format!("expected {what} as a non-negative integer, got {t:?}"),
        })
    }

    pub(crate) fn next_f64(&mut self, what: &str) -> Result<f64> {
        let t = self.next_token(what)?;
        t.parse().map_err(|_| Error::Parse {
            line: self.line,
            message: format!("expected {what} as a number, got {t:?}"),
        })
    }

    pub(crate) fn expect(&mut self, keyword: &str) -> Result<()> {
        let t = self.next_token(keyword)?;
        if t == keyword {
            Ok(())
        } else {
            Err(Error::Parse {
                line: self.line,
                message: format!("expected {keyword:?}, got {t:?}"),
            })
        }
    }
}
