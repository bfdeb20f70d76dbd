use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

/// Work size (rows x columns) above which `propagate` splits rows across threads.
const PARALLEL_THRESHOLD: usize = 1 << 16;

/// Renormalized adjacency `Ã` with self-loops, stored as CSR with sorted
/// column indices.
///
/// Entry `(i, j)` is `1/sqrt((d_i + 1)(d_j + 1))` for every edge and for
/// `i == j`; `d` counts neighbors without the self-loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedAdjacency {
    node_count: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn from_graph(g: &Graph) -> Self {
        let n = g.node_count();
        let scale: Vec<f64> = (0..n)
            .map(|i| 1.0 / ((g.degree(i) + 1) as f64).sqrt())
            .collect();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(g.col_idx().len() + n);
        let mut values = Vec::with_capacity(g.col_idx().len() + n);
        row_ptr.push(0);
        for i in 0..n {
            let nbrs = g.neighbors(i);
            // insert the self-loop at its sorted position
            let split = nbrs.partition_point(|&j| j < i);
            for &j in nbrs[..split].iter().chain(std::iter::once(&i)).chain(&nbrs[split..]) {
                col_idx.push(j);
                values.push(scale[i] * scale[j]);
            }
            row_ptr.push(col_idx.len());
        }
        debug_assert_eq!(g.row_ptr().len(), row_ptr.len());
        NormalizedAdjacency {
            node_count: n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Stored entries, self-loops included.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    /// `Ã_ij`, zero when `i` and `j` are not adjacent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut dense = Array2::zeros((self.node_count, self.node_count));
        for i in 0..self.node_count {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                dense[[i, j]] = v;
            }
        }
        dense
    }

    /// Sparse matrix-vector product `Ã v`.
    pub fn spmv(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.node_count {
            return Err(Error::dim(format!(
                "spmv: vector has length {}, adjacency has {} nodes",
                v.len(),
                self.node_count
            )));
        }
        Ok((0..self.node_count)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, &a)| a * v[j]).sum()
            })
            .collect())
    }

    /// `Ã^k v` by repeated sparse products.
    pub fn power_apply(&self, v: &[f64], k: usize) -> Result<Vec<f64>> {
        if k == 0 {
            if v.len() != self.node_count {
                return Err(Error::dim("power_apply: vector length does not match node count"));
            }
            return Ok(v.to_vec());
        }
        let mut out = self.spmv(v)?;
        for _ in 1..k {
            out = self.spmv(&out)?;
        }
        Ok(out)
    }

    /// `Ã H` applied column-wise, i.e. row `i` of the result is
    /// `sum_j d_ij h_j`.
    pub fn propagate(&self, h: &Array2<f64>) -> Result<Array2<f64>> {
        self.propagate_view(h.view())
    }

    pub fn propagate_view(&self, h: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if h.nrows() != self.node_count {
            return Err(Error::dim(format!(
                "propagate: matrix has {} rows, adjacency has {} nodes",
                h.nrows(),
                self.node_count
            )));
        }
        let width = h.ncols();
        let h = h.as_standard_layout();
        let src = h.as_slice().expect("standard layout");
        let mut out = vec![0.0; self.node_count * width];
        let row_kernel = |(i, dst): (usize, &mut [f64])| {
            let (cols, vals) = self.row(i);
            for (&j, &a) in cols.iter().zip(vals) {
                let src_row = &src[j * width..(j + 1) * width];
                for (d, s) in dst.iter_mut().zip(src_row) {
                    *d += a * s;
                }
            }
        };
        if width > 0 {
            if self.node_count * width >= PARALLEL_THRESHOLD {
                out.par_chunks_mut(width).enumerate().for_each(row_kernel);
            } else {
                out.chunks_mut(width).enumerate().for_each(row_kernel);
            }
        }
        Ok(Array2::from_shape_vec((self.node_count, width), out).expect("shape"))
    }
}

/// Renormalizes `g`; see [`NormalizedAdjacency`].
pub fn normalize_adjacency(g: &Graph) -> NormalizedAdjacency {
    NormalizedAdjacency::from_graph(g)
}
