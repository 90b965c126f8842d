use std::cell::Cell;

use super::tensor::Tensor;
use crate::error::{Error, Result};

thread_local! {
    static SPMM_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of sparse products executed on the current thread. Used to check
/// that a code path never touches graph structure.
pub fn spmm_calls_on_this_thread() -> u64 {
    SPMM_CALLS.with(Cell::get)
}

/// Square CSR matrix with real entries.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(n: usize, offsets: Vec<usize>, cols: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if offsets.len() != n + 1
            || offsets.last().copied() != Some(cols.len())
            || cols.len() != values.len()
            || offsets.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::Validation("malformed CSR arrays".into()));
        }
        if let Some(&c) = cols.iter().find(|&&c| c >= n) {
            return Err(Error::Index { index: c, len: n });
        }
        Ok(Self {
            n,
            offsets,
            cols,
            values,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[i]..self.offsets[i + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// Entry (i, j), zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                out.row_mut(i)[j] += v;
            }
        }
        out
    }

    /// `self · h`.
    pub fn spmm(&self, h: &Tensor) -> Result<Tensor> {
        if h.rows() != self.n {
            return Err(Error::Dimension(format!(
                "spmm: adjacency has {} rows, dense operand {}",
                self.n,
                h.rows()
            )));
        }
        SPMM_CALLS.with(|c| c.set(c.get() + 1));
        let f = h.cols();
        let mut out = Tensor::zeros(self.n, f);
        for i in 0..self.n {
            let dst = &mut out.data_mut()[i * f..(i + 1) * f];
            for (j, v) in self.row(i) {
                for (o, &x) in dst.iter_mut().zip(h.row(j)) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · g`, the backward of [`CsrMatrix::spmm`].
    pub fn spmm_transpose(&self, g: &Tensor) -> Result<Tensor> {
        if g.rows() != self.n {
            return Err(Error::Dimension("spmm_transpose row mismatch".into()));
        }
        SPMM_CALLS.with(|c| c.set(c.get() + 1));
        let f = g.cols();
        let mut out = Tensor::zeros(self.n, f);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                let src = g.row(i);
                let dst = &mut out.data_mut()[j * f..(j + 1) * f];
                for (o, &x) in dst.iter_mut().zip(src) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }
}
