use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Compressed-sparse-row matrix with `f64` weights.
///
/// Orientation convention: row `i` lists the messages flowing *into* node `i`,
/// so `spmm(adj, x)[i] = Σ_j adj[i, j] · x[j]` aggregates over in-neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from raw CSR arrays, validating every structural invariant.
    pub fn from_csr(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != rows + 1 {
            return Err(Error::Contract(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                rows + 1
            )));
        }
        if row_offsets.windows(2).any(|w| w[0] > w[1]) || row_offsets[0] != 0 {
            return Err(Error::Contract("row_offsets must be non-decreasing from 0".into()));
        }
        if *row_offsets.last().unwrap() != col_indices.len() || col_indices.len() != weights.len()
        {
            return Err(Error::Contract(
                "row_offsets, col_indices and weights disagree on nnz".into(),
            ));
        }
        if let Some(&c) = col_indices.iter().find(|&&c| c >= cols) {
            return Err(Error::Contract(format!("column index {c} out of range {cols}")));
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_offsets,
            col_indices,
            weights,
        })
    }

    /// Builds from `(row, col, weight)` triplets. Duplicate coordinates are summed;
    /// entries within a row are sorted by column.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= rows || c >= cols {
                return Err(Error::Contract(format!(
                    "triplet ({r}, {c}) outside {rows}x{cols}"
                )));
            }
        }
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_offsets = vec![0usize; rows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut weights: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, w) in sorted {
            if last == Some((r, c)) {
                *weights.last_mut().unwrap() += w;
                continue;
            }
            last = Some((r, c));
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            weights.push(w);
        }
        for i in 0..rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        SparseMatrix::from_csr(rows, cols, row_offsets, col_indices, weights)
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            weights: vec![1.0; n],
        }
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        SparseMatrix {
            rows,
            cols,
            row_offsets: vec![0; rows + 1],
            col_indices: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(col, weight)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.row_offsets[i], self.row_offsets[i + 1]);
        self.col_indices[s..e]
            .iter()
            .copied()
            .zip(self.weights[s..e].iter().copied())
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    /// All entries as `(row, col, weight)`.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.rows)
            .flat_map(|i| self.row(i).map(move |(j, w)| (i, j, w)))
            .collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, w)| w)
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.rows, self.cols]);
        let c = self.cols;
        for (i, j, w) in self.triplets() {
            t.data_mut()[i * c + j] += w;
        }
        t
    }

    pub fn transpose(&self) -> SparseMatrix {
        let t: Vec<(usize, usize, f64)> = self.triplets().into_iter().map(|(i, j, w)| (j, i, w)).collect();
        SparseMatrix::from_triplets(self.cols, self.rows, &t).expect("transpose of valid matrix")
    }

    /// Plain (untaped) sparse-dense product written into `out` (`rows × d`).
    pub(crate) fn spmm_into(&self, x: &[f64], d: usize, out: &mut [f64]) {
        for i in 0..self.rows {
            let orow = &mut out[i * d..(i + 1) * d];
            for (j, w) in self.row(i) {
                let xrow = &x[j * d..(j + 1) * d];
                for (o, &v) in orow.iter_mut().zip(xrow) {
                    *o += w * v;
                }
            }
        }
    }

    /// `out[j] += Σ_i w(i,j) · g[i]`, i.e. `Aᵀ · g`.
    pub(crate) fn spmm_t_into(&self, g: &[f64], d: usize, out: &mut [f64]) {
        for i in 0..self.rows {
            let grow = &g[i * d..(i + 1) * d];
            for (j, w) in self.row(i) {
                let orow = &mut out[j * d..(j + 1) * d];
                for (o, &v) in orow.iter_mut().zip(grow) {
                    *o += w * v;
                }
            }
        }
    }

    /// Untaped `self · x`.
    pub fn spmm(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.rows() != self.cols {
            return Err(Error::dim("spmm", &[self.rows, self.cols], x.shape()));
        }
        let d = x.cols();
        let mut out = vec![0.0; self.rows * d];
        self.spmm_into(x.data(), d, &mut out);
        Tensor::matrix(self.rows, d, out)
    }

    /// Row sums of the weights.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).map(|(_, w)| w).sum()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_offsets() {
        assert!(SparseMatrix::from_csr(2, 2, vec![0, 1], vec![0], vec![1.0]).is_err());
        assert!(SparseMatrix::from_csr(2, 2, vec![0, 2, 1], vec![0, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::from_csr(2, 2, vec![0, 1, 2], vec![0, 2], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::from_csr(2, 2, vec![0, 1, 2], vec![0, 1], vec![1.0, 1.0]).is_ok());
    }

    #[test]
    fn triplets_merge_duplicates() {
        let m = SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, 1.0)]).unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 1), 3.0);
    }

    #[test]
    fn transpose_matches_dense() {
        let m = SparseMatrix::from_triplets(2, 3, &[(0, 2, 1.5), (1, 0, -1.0)]).unwrap();
        assert_eq!(m.transpose().to_dense(), m.to_dense().transpose());
    }
}
