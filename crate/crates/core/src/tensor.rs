//! Dense three-way tensors and the matrix algebra the CP solver is built on.
//!
//! [`Tensor3`] stores entries with the first index fastest, so element
//! `(i, j, k)` lives at `i + I * (j + J * k)`. [`Matrix`] is row-major.
//! Matricization follows the usual product convention: the mode-1 unfolding
//! of an `I x J x K` tensor is `I x (J*K)` with column `j + J * k`, mode 2 is
//! `J x (I*K)` with column `i + I * k`, and mode 3 is `K x (I*J)` with column
//! `i + I * j`.

use std::fmt::Write as _;
use std::io::BufRead;

use crate::error::{Error, Result};

/// One of the three tensor modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::One, Mode::Two, Mode::Three];

    /// Zero-based axis index.
    pub fn index(self) -> usize {
        match self {
            Mode::One => 0,
            Mode::Two => 1,
            Mode::Three => 2,
        }
    }
}

impl TryFrom<usize> for Mode {
    type Error = Error;

    /// Modes are numbered from 1.
    fn try_from(n: usize) -> Result<Self> {
        match n {
            1 => Ok(Mode::One),
            2 => Ok(Mode::Two),
            3 => Ok(Mode::Three),
            _ => Err(Error::InvalidInput(format!("mode must be 1, 2 or 3, got {n}"))),
        }
    }
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. All rows must have the same length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(rows.len(), cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Row-major backing storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · self`.
    pub fn gram(&self) -> Matrix {
        let n = self.cols;
        let mut out = Matrix::zeros(n, n);
        for row in self.data.chunks(n) {
            for p in 0..n {
                let a = row[p];
                for (q, b) in row.iter().enumerate() {
                    out.data[p * n + q] += a * b;
                }
            }
        }
        out
    }

    /// Element-wise product.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "hadamard of {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Kronecker product `a ⊗ b`, of size `(a.rows*b.rows) x (a.cols*b.cols)`.
pub fn kronecker(a: &Matrix, b: &Matrix) -> Matrix {
    let rows = a.rows * b.rows;
    let cols = a.cols * b.cols;
    let mut out = Matrix::zeros(rows, cols);
    for ar in 0..a.rows {
        for ac in 0..a.cols {
            let s = a.get(ar, ac);
            for br in 0..b.rows {
                let dst = (ar * b.rows + br) * cols + ac * b.cols;
                for (o, &v) in out.data[dst..dst + b.cols].iter_mut().zip(b.row(br)) {
                    *o = s * v;
                }
            }
        }
    }
    out
}

/// Column-wise Kronecker product `a ⊙ b`.
pub fn khatri_rao(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::DimensionMismatch(format!(
            "khatri-rao needs equal column counts, got {} and {}",
            a.cols, b.cols
        )));
    }
    let cols = a.cols;
    let mut out = Matrix::zeros(a.rows * b.rows, cols);
    for ar in 0..a.rows {
        for br in 0..b.rows {
            let dst = (ar * b.rows + br) * cols;
            for c in 0..cols {
                out.data[dst + c] = a.get(ar, c) * b.get(br, c);
            }
        }
    }
    Ok(out)
}

/// Dense non-negative three-way tensor (sender x receiver x time).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    /// `data` is in first-index-fastest order. Entries must be finite and
    /// non-negative.
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "tensor dimensions must be positive, got {dims:?}"
            )));
        }
        let len = dims[0] * dims[1] * dims[2];
        if data.len() != len {
            return Err(Error::DimensionMismatch(format!(
                "{}x{}x{} tensor needs {len} entries, got {}",
                dims[0],
                dims[1],
                dims[2],
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "tensor entry {pos} is {}; entries must be finite and non-negative",
                data[pos]
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, vec![0.0; dims.iter().product()])
    }

    /// Builds a tensor by evaluating `f(i, j, k)` at every position.
    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::new(dims, data)
    }

    pub(crate) fn from_raw(dims: [usize; 3], data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    /// The contiguous `I x J` slab at time index `k`, first index fastest.
    pub fn frontal_slice(&self, k: usize) -> &[f64] {
        let n = self.dims[0] * self.dims[1];
        &self.data[k * n..(k + 1) * n]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn nonzero_count(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }

    /// Row index and column index of element `(i, j, k)` in the unfolding.
    fn unfold_index(&self, mode: Mode, i: usize, j: usize, k: usize) -> (usize, usize) {
        let [ni, nj, _] = self.dims;
        match mode {
            Mode::One => (i, j + nj * k),
            Mode::Two => (j, i + ni * k),
            Mode::Three => (k, i + ni * j),
        }
    }

    /// Mode-n unfolding.
    pub fn matricize(&self, mode: Mode) -> Matrix {
        let [ni, nj, nk] = self.dims;
        let rows = self.dims[mode.index()];
        let cols = self.data.len() / rows;
        let mut out = Matrix::zeros(rows, cols);
        for k in 0..nk {
            for j in 0..nj {
                for i in 0..ni {
                    let (r, c) = self.unfold_index(mode, i, j, k);
                    out.data[r * cols + c] = self.data[i + ni * (j + nj * k)];
                }
            }
        }
        out
    }

    /// Inverse of [`Tensor3::matricize`] for a tensor of shape `dims`.
    pub fn refold(m: &Matrix, mode: Mode, dims: [usize; 3]) -> Result<Tensor3> {
        let rows = dims[mode.index()];
        let total: usize = dims.iter().product();
        if rows == 0 || m.rows != rows || m.rows * m.cols != total {
            return Err(Error::DimensionMismatch(format!(
                "cannot refold {}x{} matrix along mode {} into {:?}",
                m.rows,
                m.cols,
                mode.index() + 1,
                dims
            )));
        }
        let shell = Tensor3 {
            dims,
            data: Vec::new(),
        };
        let [ni, nj, nk] = dims;
        let mut data = vec![0.0; total];
        for k in 0..nk {
            for j in 0..nj {
                for i in 0..ni {
                    let (r, c) = shell.unfold_index(mode, i, j, k);
                    data[i + ni * (j + nj * k)] = m.data[r * m.cols + c];
                }
            }
        }
        Tensor3::new(dims, data)
    }

    /// `self ×_n m`: contracts mode `n` against the columns of `m`.
    ///
    /// `m` must be non-negative so that the result is again a valid tensor.
    pub fn n_mode_product(&self, m: &Matrix, mode: Mode) -> Result<Tensor3> {
        let n = mode.index();
        if m.cols != self.dims[n] {
            return Err(Error::DimensionMismatch(format!(
                "mode-{} product needs a matrix with {} columns, got {}",
                n + 1,
                self.dims[n],
                m.cols
            )));
        }
        if m.data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(
                "n-mode product matrix must be finite and non-negative".into(),
            ));
        }
        let mut dims = self.dims;
        dims[n] = m.rows;
        let [ni, nj, nk] = self.dims;
        let mut out = vec![0.0; dims.iter().product()];
        for k in 0..nk {
            for j in 0..nj {
                for i in 0..ni {
                    let x = self.data[i + ni * (j + nj * k)];
                    if x == 0.0 {
                        continue;
                    }
                    for row in 0..m.rows {
                        let (oi, oj, ok) = match mode {
                            Mode::One => (row, j, k),
                            Mode::Two => (i, row, k),
                            Mode::Three => (i, j, row),
                        };
                        let src = match mode {
                            Mode::One => i,
                            Mode::Two => j,
                            Mode::Three => k,
                        };
                        out[oi + dims[0] * (oj + dims[1] * ok)] += x * m.get(row, src);
                    }
                }
            }
        }
        Ok(Tensor3::from_raw(dims, out))
    }

    /// Sparse text dump: a `# dims=I,J,K` comment, an `i,j,k,value` header and
    /// one zero-based line per nonzero entry, in storage order.
    pub fn to_sparse_csv(&self) -> String {
        let [ni, nj, nk] = self.dims;
        let mut out = format!("# dims={ni},{nj},{nk}\ni,j,k,value\n");
        for k in 0..nk {
            for j in 0..nj {
                for i in 0..ni {
                    let v = self.data[i + ni * (j + nj * k)];
                    if v != 0.0 {
                        let _ = writeln!(out, "{i},{j},{k},{v}");
                    }
                }
            }
        }
        out
    }

    /// Parses the format written by [`Tensor3::to_sparse_csv`]. Other `#`
    /// comment lines are ignored; repeated coordinates are summed.
    pub fn from_sparse_csv(reader: impl BufRead) -> Result<Tensor3> {
        let mut dims: Option<[usize; 3]> = None;
        let mut data = Vec::new();
        let mut saw_header = false;
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(d) = rest.trim().strip_prefix("dims=") {
                    let parsed = parse_usize_list(d, lineno)?;
                    let d: [usize; 3] = parsed.try_into().map_err(|_| Error::Parse {
                        line: lineno,
                        message: "dims needs three values".into(),
                    })?;
                    if d.contains(&0) {
                        return Err(Error::Parse {
                            line: lineno,
                            message: "dims must be positive".into(),
                        });
                    }
                    data = vec![0.0; d.iter().product()];
                    dims = Some(d);
                }
                continue;
            }
            if !saw_header {
                saw_header = true;
                if line.starts_with('i') {
                    continue;
                }
            }
            let d = dims.ok_or_else(|| Error::Parse {
                line: lineno,
                message: "missing '# dims=I,J,K' line before data".into(),
            })?;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected 4 fields, got {}", fields.len()),
                });
            }
            let idx = parse_usize_list(&fields[..3].join(","), lineno)?;
            let value: f64 = fields[3].parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad value {:?}", fields[3]),
            })?;
            if idx[0] >= d[0] || idx[1] >= d[1] || idx[2] >= d[2] {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("index {idx:?} out of bounds for {d:?}"),
                });
            }
            data[idx[0] + d[0] * (idx[1] + d[1] * idx[2])] += value;
        }
        let dims = dims.ok_or_else(|| Error::Parse {
            line: 0,
            message: "missing '# dims=I,J,K' line".into(),
        })?;
        Tensor3::new(dims, data)
    }
}

fn parse_usize_list(s: &str, line: usize) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim().parse::<usize>().map_err(|_| Error::Parse {
                line,
                message: format!("bad index {p:?}"),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counting_tensor() -> Tensor3 {
        Tensor3::new([2, 2, 2], (1..=8).map(f64::from).collect()).unwrap()
    }

    #[test]
    fn norms() {
        assert_eq!(Tensor3::zeros([2, 2, 2]).unwrap().frobenius_norm(), 0.0);
        let ones = Tensor3::new([2, 2, 2], vec![1.0; 8]).unwrap();
        assert!((ones.frobenius_norm() - 8f64.sqrt()).abs() < 1e-15);
        assert_eq!(Tensor3::new([1, 1, 1], vec![3.0]).unwrap().frobenius_norm(), 3.0);
    }

    #[test]
    fn rejects_bad_tensors() {
        assert!(Tensor3::new([0, 1, 1], vec![]).is_err());
        assert!(Tensor3::new([1, 1, 2], vec![1.0]).is_err());
        assert!(Tensor3::new([1, 1, 1], vec![-1.0]).is_err());
        assert!(Tensor3::new([1, 1, 1], vec![f64::NAN]).is_err());
    }

    #[test]
    fn mode_one_unfolding_of_counting_tensor() {
        let m = counting_tensor().matricize(Mode::One);
        assert_eq!(m.to_rows(), vec![vec![1.0, 3.0, 5.0, 7.0], vec![2.0, 4.0, 6.0, 8.0]]);
    }

    #[test]
    fn other_unfoldings_of_counting_tensor() {
        let t = counting_tensor();
        // x(i,j,k) = 1 + i + 2j + 4k, zero based.
        assert_eq!(
            t.matricize(Mode::Two).to_rows(),
            vec![vec![1.0, 2.0, 5.0, 6.0], vec![3.0, 4.0, 7.0, 8.0]]
        );
        assert_eq!(
            t.matricize(Mode::Three).to_rows(),
            vec![vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0, 7.0, 8.0]]
        );
    }

    #[test]
    fn time_axis_unfolding_of_degenerate_tensor() {
        let t = Tensor3::new([1, 1, 4], vec![4.0, 3.0, 2.0, 1.0]).unwrap();
        let m = t.matricize(Mode::Three);
        assert_eq!((m.rows(), m.cols()), (4, 1));
        assert_eq!(m.column(0), vec![4.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn invalid_mode_is_rejected() {
        assert!(Mode::try_from(0).is_err());
        assert!(Mode::try_from(4).is_err());
        assert_eq!(Mode::try_from(2).unwrap(), Mode::Two);
    }

    #[test]
    fn refold_round_trip() {
        let t = counting_tensor();
        for mode in Mode::ALL {
            assert_eq!(Tensor3::refold(&t.matricize(mode), mode, t.dims()).unwrap(), t);
        }
    }

    #[test]
    fn mode_product_examples() {
        let t = counting_tensor();
        assert_eq!(t.n_mode_product(&Matrix::identity(2), Mode::One).unwrap(), t);

        let ones = Tensor3::new([2, 2, 2], vec![1.0; 8]).unwrap();
        let sum = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let out = ones.n_mode_product(&sum, Mode::One).unwrap();
        assert_eq!(out.dims(), [1, 2, 2]);
        assert_eq!(out.as_slice(), &[2.0; 4]);

        let wrong = Matrix::zeros(2, 3);
        assert!(matches!(
            t.n_mode_product(&wrong, Mode::Two),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn kronecker_examples() {
        let b = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(kronecker(&Matrix::identity(1), &b), b);

        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(
            kronecker(&a, &b).to_rows(),
            vec![
                vec![0.0, 1.0, 0.0, 2.0],
                vec![1.0, 0.0, 2.0, 0.0],
                vec![0.0, 3.0, 0.0, 4.0],
                vec![3.0, 0.0, 4.0, 0.0],
            ]
        );

        let a = Matrix::from_rows(&[[1.0], [0.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        assert_eq!(kronecker(&a, &b).column(0), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn khatri_rao_examples() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(
            khatri_rao(&a, &b).unwrap().to_rows(),
            vec![vec![0.0, 2.0], vec![1.0, 0.0], vec![0.0, 4.0], vec![3.0, 0.0]]
        );

        let a1 = Matrix::from_rows(&[[2.0], [5.0]]).unwrap();
        let b1 = Matrix::from_rows(&[[1.0], [3.0], [7.0]]).unwrap();
        assert_eq!(khatri_rao(&a1, &b1).unwrap(), kronecker(&a1, &b1));

        let a0 = Matrix::from_rows(&[[1.0, 0.0], [3.0, 0.0]]).unwrap();
        let kr = khatri_rao(&a0, &b).unwrap();
        assert!(kr.column(1).iter().all(|v| *v == 0.0));

        assert!(khatri_rao(&a, &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn sparse_csv_round_trip() {
        let mut data = vec![0.0; 24];
        data[3] = 1.5;
        data[17] = 0.1;
        data[23] = 1e-300;
        let t = Tensor3::new([2, 3, 4], data).unwrap();
        let text = t.to_sparse_csv();
        assert!(text.starts_with("# dims=2,3,4\ni,j,k,value\n"));
        assert_eq!(text.lines().count(), 5);
        assert_eq!(Tensor3::from_sparse_csv(text.as_bytes()).unwrap(), t);
    }

    #[test]
    fn sparse_csv_errors() {
        assert!(Tensor3::from_sparse_csv("i,j,k,value\n0,0,0,1\n".as_bytes()).is_err());
        let err = Tensor3::from_sparse_csv("# dims=1,1,1\ni,j,k,value\n0,0,1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }
}
