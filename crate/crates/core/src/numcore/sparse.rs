use super::{NumError, Tensor};

/// Canonical CSR matrix: strictly increasing column indices within each row.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Validates and wraps raw CSR arrays. Malformed input is rejected, never
    /// repaired.
    pub fn new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, NumError> {
        let bad = |reason: String| Err(NumError::Structural(reason));
        if row_offsets.len() != rows + 1 {
            return bad(format!("row_offsets has length {}, expected {}", row_offsets.len(), rows + 1));
        }
        if row_offsets[0] != 0 || row_offsets[rows] != col_indices.len() {
            return bad("row_offsets must start at 0 and end at nnz".into());
        }
        if col_indices.len() != values.len() {
            return bad(format!("{} column indices but {} values", col_indices.len(), values.len()));
        }
        for r in 0..rows {
            let (lo, hi) = (row_offsets[r], row_offsets[r + 1]);
            if lo > hi {
                return bad(format!("row_offsets decrease at row {r}"));
            }
            let cols_r = &col_indices[lo..hi];
            for (k, &c) in cols_r.iter().enumerate() {
                if c >= cols {
                    return bad(format!("column {c} out of range in row {r} (cols = {cols})"));
                }
                if k > 0 && cols_r[k - 1] >= c {
                    return bad(format!("columns not strictly increasing in row {r}"));
                }
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return bad("non-finite value".into());
        }
        Ok(Self { rows, cols, row_offsets, col_indices, values })
    }

    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self, NumError> {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_offsets = vec![0usize; rows + 1];
        let mut col_indices: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(NumError::Structural(format!("entry ({r}, {c}) outside {rows}x{cols}")));
            }
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for r in 0..rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Self::new(rows, cols, row_offsets, col_indices, values)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(t: &Tensor) -> Self {
        let mut trip = Vec::new();
        for r in 0..t.rows() {
            for (c, &v) in t.row(r).iter().enumerate() {
                if v != 0.0 {
                    trip.push((r, c, v));
                }
            }
        }
        Self::from_triplets(t.rows(), t.cols(), trip).expect("dense entries are in range")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Position of entry (r, c) in the value array, if stored.
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let lo = self.row_offsets[r];
        let hi = self.row_offsets[r + 1];
        self.col_indices[lo..hi].binary_search(&c).ok().map(|k| lo + k)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.position(r, c).map_or(0.0, |k| self.values[k])
    }

    /// Same sparsity pattern with replacement values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, NumError> {
        if values.len() != self.nnz() {
            return Err(NumError::Dimension { op: "with_values", left: (self.nnz(), 1), right: (values.len(), 1) });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NumError::Structural("non-finite value".into()));
        }
        Ok(Self { values, ..self.clone() })
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(self.rows, self.cols);
        let cols = self.cols;
        let data = out.data_mut();
        for r in 0..self.rows {
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                data[r * cols + self.col_indices[k]] = self.values[k];
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let trip = self
            .iter()
            .map(|(r, c, v)| (c, r, v))
            .collect();
        Self::from_triplets(self.cols, self.rows, trip).expect("transpose of valid CSR is valid")
    }

    /// Iterates stored entries as (row, col, value) in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (self.row_offsets[r]..self.row_offsets[r + 1]).map(move |k| (r, self.col_indices[k], self.values[k]))
        })
    }

    /// Principal submatrix on `nodes` (kept in the given order).
    pub fn submatrix(&self, nodes: &[usize]) -> Self {
        let mut local = std::collections::HashMap::with_capacity(nodes.len());
        for (i, &n) in nodes.iter().enumerate() {
            local.insert(n, i);
        }
        let mut trip = Vec::new();
        for (i, &n) in nodes.iter().enumerate() {
            for k in self.row_offsets[n]..self.row_offsets[n + 1] {
                if let Some(&j) = local.get(&self.col_indices[k]) {
                    trip.push((i, j, self.values[k]));
                }
            }
        }
        Self::from_triplets(nodes.len(), nodes.len(), trip).expect("submatrix indices are in range")
    }

    /// `self · dense` using the stored values.
    pub fn spmm(&self, dense: &Tensor) -> Result<Tensor, NumError> {
        if self.cols != dense.rows() {
            return Err(NumError::Dimension { op: "spmm", left: self.shape(), right: dense.shape() });
        }
        Ok(spmm_with_values(self, &self.values, dense))
    }
}

/// CSR product using an external value array over `pattern`'s structure.
pub(crate) fn spmm_with_values(pattern: &SparseMatrix, values: &[f64], dense: &Tensor) -> Tensor {
    let m = dense.cols();
    let mut out = vec![0.0; pattern.rows * m];
    let d = dense.data();
    for r in 0..pattern.rows {
        let orow = &mut out[r * m..(r + 1) * m];
        for k in pattern.row_offsets[r]..pattern.row_offsets[r + 1] {
            let v = values[k];
            let c = pattern.col_indices[k];
            for (o, x) in orow.iter_mut().zip(&d[c * m..(c + 1) * m]) {
                *o += v * x;
            }
        }
    }
    Tensor::from_parts(pattern.rows, m, out)
}

/// `patternᵀ · dense` with external values.
pub(crate) fn spmm_t_with_values(pattern: &SparseMatrix, values: &[f64], dense: &Tensor) -> Tensor {
    let m = dense.cols();
    let mut out = vec![0.0; pattern.cols * m];
    let d = dense.data();
    for r in 0..pattern.rows {
        let drow = &d[r * m..(r + 1) * m];
        for k in pattern.row_offsets[r]..pattern.row_offsets[r + 1] {
            let v = values[k];
            let c = pattern.col_indices[k];
            for (o, x) in out[c * m..(c + 1) * m].iter_mut().zip(drow) {
                *o += v * x;
            }
        }
    }
    Tensor::from_parts(pattern.cols, m, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_spmm_is_identity() {
        let m = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(SparseMatrix::identity(3).spmm(&m).unwrap(), m);
    }

    #[test]
    fn path_graph_picks_neighbors() {
        // 0 - 1 - 2
        let a = SparseMatrix::from_triplets(3, 3, vec![(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)]).unwrap();
        let e0 = Tensor::column(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(a.spmm(&e0).unwrap().data(), &[0.0, 1.0, 0.0]);
        let e1 = Tensor::column(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(a.spmm(&e1).unwrap().data(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_malformed_csr() {
        assert!(SparseMatrix::new(2, 2, vec![0, 1], vec![0], vec![1.0]).is_err());
        assert!(SparseMatrix::new(1, 2, vec![0, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::new(1, 2, vec![0, 1], vec![2], vec![1.0]).is_err());
        assert!(SparseMatrix::new(2, 2, vec![0, 2, 1], vec![0, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::new(1, 1, vec![0, 1], vec![0], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn shape_mismatch() {
        let a = SparseMatrix::identity(3);
        assert!(a.spmm(&Tensor::zeros(2, 2)).is_err());
    }

    #[test]
    fn submatrix_keeps_order() {
        let d = Tensor::from_rows(&[vec![1.0, 2.0, 0.0], vec![0.0, 3.0, 4.0], vec![5.0, 0.0, 6.0]]).unwrap();
        let s = SparseMatrix::from_dense(&d);
        let sub = s.submatrix(&[2, 0]).to_dense();
        assert_eq!(sub.data(), &[6.0, 5.0, 0.0, 1.0]);
    }
}
