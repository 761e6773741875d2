//! Sparse-matrix kernels: CSR storage, bipartite adjacency assembly,
//! symmetric normalization, and the sparse-dense multiply everything else
//! is built on.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::data::InteractionMatrix;
use crate::error::{Error, Result};

/// Compressed sparse row matrix, double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triplets. Duplicate coordinates are
    /// summed; exact zeros are dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        for &(r, c, _) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::Dimension {
                    context: "CsrMatrix::from_triplets".into(),
                    expected: format!("indices < {rows}x{cols}"),
                    found: format!("({r},{c})"),
                });
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_unstable_by_key(|&(r, c, _)| (r, c));

        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        row_ptr.push(0);
        let mut cur_row = 0usize;
        let mut iter = sorted.into_iter().peekable();
        while let Some((r, c, mut v)) = iter.next() {
            while let Some(&(r2, c2, v2)) = iter.peek() {
                if r2 == r && c2 == c {
                    v += v2;
                    iter.next();
                } else {
                    break;
                }
            }
            while cur_row < r {
                row_ptr.push(col_idx.len());
                cur_row += 1;
            }
            if v != 0.0 {
                col_idx.push(c);
                values.push(v);
            }
        }
        while cur_row < rows {
            row_ptr.push(col_idx.len());
            cur_row += 1;
        }
        Ok(Self { rows, cols, row_ptr, col_idx, values })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Column indices and values of one row.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    /// Row sums of values (weighted degrees).
    pub fn degrees(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.row(r).1.iter().sum())
            .collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.cols];
        for &c in &self.col_idx {
            counts[c] += 1;
        }
        let mut row_ptr = Vec::with_capacity(self.cols + 1);
        row_ptr.push(0);
        for c in 0..self.cols {
            row_ptr.push(row_ptr[c] + counts[c]);
        }
        let mut next = row_ptr.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0f64; self.nnz()];
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let dst = next[c];
                col_idx[dst] = r;
                values[dst] = v;
                next[c] += 1;
            }
        }
        CsrMatrix {
            rows: self.cols,
            cols: self.rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[(r, c)] = v;
            }
        }
        out
    }

    /// Sparse-dense product `self * x`, parallel over output rows.
    pub fn spmm(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if self.cols != x.nrows() {
            return Err(Error::Dimension {
                context: "spmm".into(),
                expected: format!("{} rows in dense operand", self.cols),
                found: format!("{}", x.nrows()),
            });
        }
        let k = x.ncols();
        let mut out = Array2::zeros((self.rows, k));
        let x = x
            .as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let row_ptr = &self.row_ptr;
        let col_idx = &self.col_idx;
        let values = &self.values;
        out.axis_iter_mut(ndarray::Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(r, mut out_row)| {
                let o = out_row.as_slice_mut().expect("contiguous row");
                for idx in row_ptr[r]..row_ptr[r + 1] {
                    let c = col_idx[idx];
                    let v = values[idx];
                    let src = &xs[c * k..(c + 1) * k];
                    for (oj, sj) in o.iter_mut().zip(src) {
                        *oj += v * sj;
                    }
                }
            });
        Ok(out)
    }

    /// `self * v` for a single dense vector.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return Err(Error::Dimension {
                context: "matvec".into(),
                expected: format!("{}", self.cols),
                found: format!("{}", v.len()),
            });
        }
        Ok((0..self.rows)
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).map(|(&c, &x)| x * v[c]).sum()
            })
            .collect())
    }

    /// SHA-256 over dimensions and raw entry bytes; used for cache staleness
    /// detection.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.rows as u64).to_le_bytes());
        h.update((self.cols as u64).to_le_bytes());
        for (&c, &v) in self.col_idx.iter().zip(&self.values) {
            h.update((c as u64).to_le_bytes());
            h.update(v.to_le_bytes());
        }
        let mut out = [0u8; 32];
        out.copy_from_slice(&h.finalize());
        out
    }
}

/// Bipartite adjacency `A = [[0, R], [R^T, 0]]` over `n = |U| + |I|` nodes.
/// Users occupy indices `0..|U|`, items `|U|..n`.
pub fn build_adjacency(r: &InteractionMatrix) -> Result<CsrMatrix> {
    if r.nnz() == 0 {
        return Err(Error::EmptyDataset("cannot build adjacency".into()));
    }
    let nu = r.num_users();
    let n = r.num_nodes();
    let mut triplets = Vec::with_capacity(2 * r.nnz());
    for (u, i) in r.iter_pairs() {
        triplets.push((u, nu + i, 1.0));
        triplets.push((nu + i, u, 1.0));
    }
    CsrMatrix::from_triplets(n, n, &triplets)
}

/// Symmetric normalization `P = D^(-1/2) A D^(-1/2)`. Zero-degree rows and
/// columns stay zero.
pub fn normalize_adjacency(a: &CsrMatrix) -> Result<CsrMatrix> {
    if a.rows() != a.cols() {
        return Err(Error::Dimension {
            context: "normalize_adjacency".into(),
            expected: "square matrix".into(),
            found: format!("{}x{}", a.rows(), a.cols()),
        });
    }
    let deg = a.degrees();
    let inv_sqrt: Vec<f64> = deg
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut row_ptr = a.row_ptr.clone();
    let mut col_idx = a.col_idx.clone();
    let mut values = a.values.clone();
    for r in 0..a.rows() {
        for idx in row_ptr[r]..row_ptr[r + 1] {
            values[idx] *= inv_sqrt[r] * inv_sqrt[col_idx[idx]];
        }
    }
    // Entries scaled by a zero degree vanish; from_triplets semantics would
    // drop them, so rebuild only if any appeared.
    if values.iter().any(|&v| v == 0.0) {
        let mut triplets = Vec::with_capacity(values.len());
        for r in 0..a.rows() {
            for idx in row_ptr[r]..row_ptr[r + 1] {
                if values[idx] != 0.0 {
                    triplets.push((r, col_idx[idx], values[idx]));
                }
            }
        }
        return CsrMatrix::from_triplets(a.rows(), a.cols(), &triplets);
    }
    let _ = &mut row_ptr;
    let _ = &mut col_idx;
    Ok(CsrMatrix {
        rows: a.rows(),
        cols: a.cols(),
        row_ptr,
        col_idx,
        values,
    })
}

/// `B = D_u^(-1/2) R D_i^(-1/2)`: the degree-normalized interaction block.
pub fn normalized_interaction(r: &InteractionMatrix) -> Result<CsrMatrix> {
    let udeg: Vec<f64> = (0..r.num_users()).map(|u| r.degree(u) as f64).collect();
    let ideg: Vec<f64> = r.item_degrees().iter().map(|&d| d as f64).collect();
    let mut triplets = Vec::with_capacity(r.nnz());
    for (u, i) in r.iter_pairs() {
        let du = udeg[u];
        let di = ideg[i];
        if du > 0.0 && di > 0.0 {
            triplets.push((u, i, 1.0 / (du * di).sqrt()));
        }
    }
    CsrMatrix::from_triplets(r.num_users(), r.num_items(), &triplets)
}
