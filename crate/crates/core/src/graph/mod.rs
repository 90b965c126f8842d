//! Graph storage, symmetric normalization, datasets, splits and a synthetic
//! generator.

mod dataset;
mod sbm;
mod split;

use std::sync::Arc;

pub use dataset::{load_dataset, load_dataset_dir, save_dataset_dir, Dataset, DatasetPaths, DatasetStats};
pub use sbm::{generate_sbm, SbmConfig};
pub use split::{make_inductive_split, make_label_rate_split, make_transductive_split, Split};

use crate::error::{Error, Result};
use crate::numerics::{CsrMatrix, Tensor};

/// Undirected, unweighted graph in CSR form without self-loops.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
}

impl Graph {
    /// Build from an edge list. Edges are symmetrized, deduplicated, and
    /// self-loops are dropped.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (u, v) in edges {
            for x in [u, v] {
                if x >= n {
                    return Err(Error::Validation(format!(
                        "edge endpoint {x} out of range for {n} nodes"
                    )));
                }
            }
            if u != v {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        offsets.push(0);
        for row in &mut adj {
            row.sort_unstable();
            row.dedup();
            cols.extend_from_slice(row);
            offsets.push(cols.len());
        }
        Ok(Self { n, offsets, cols })
    }

    /// Build from raw CSR arrays, checking every structural invariant.
    pub fn from_csr(n: usize, offsets: Vec<usize>, cols: Vec<usize>) -> Result<Self> {
        let g = Self { n, offsets, cols };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("graph: {m}")));
        if self.offsets.len() != self.n + 1 || self.offsets[0] != 0 {
            return bad("offsets length");
        }
        if self.offsets.windows(2).any(|w| w[0] > w[1]) {
            return bad("offsets not monotone");
        }
        if *self.offsets.last().unwrap() != self.cols.len() {
            return bad("last offset != number of columns");
        }
        for i in 0..self.n {
            let row = self.neighbors(i);
            if row.iter().any(|&j| j >= self.n) {
                return bad("column index out of range");
            }
            if row.contains(&i) {
                return bad("self-loop stored");
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return bad("row not strictly increasing (duplicate or unsorted)");
            }
            if row.iter().any(|&j| self.neighbors(j).binary_search(&i).is_err()) {
                return bad("adjacency not symmetric");
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.cols.len() / 2
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.cols[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| self.neighbors(i).iter().map(move |&j| (i, j)))
    }

    /// Same node set, keeping only edges with both endpoints in `keep`.
    /// Dropped nodes become isolated.
    pub fn restrict_to(&self, keep: &[usize]) -> Result<Graph> {
        let mut mask = vec![false; self.n];
        for &i in keep {
            if i >= self.n {
                return Err(Error::Index {
                    index: i,
                    len: self.n,
                });
            }
            mask[i] = true;
        }
        Graph::from_edges(
            self.n,
            self.edges().filter(|&(i, j)| i < j && mask[i] && mask[j]),
        )
    }
}

/// `D̃^{-1/2}(A+I)D̃^{-1/2}` stored as CSR, shared behind an `Arc` so tapes
/// can hold it cheaply.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    matrix: Arc<CsrMatrix>,
}

pub fn normalize_adjacency(g: &Graph) -> NormalizedAdjacency {
    let scale: Vec<f64> = (0..g.n)
        .map(|i| 1.0 / ((g.degree(i) + 1) as f64).sqrt())
        .collect();
    let mut offsets = Vec::with_capacity(g.n + 1);
    let mut cols = Vec::with_capacity(g.cols.len() + g.n);
    let mut values = Vec::with_capacity(g.cols.len() + g.n);
    offsets.push(0);
    for i in 0..g.n {
        let nb = g.neighbors(i);
        let pos = nb.partition_point(|&j| j < i);
        let row = nb[..pos].iter().chain(std::iter::once(&i)).chain(&nb[pos..]);
        for &j in row {
            cols.push(j);
            values.push(scale[i] * scale[j]);
        }
        offsets.push(cols.len());
    }
    let matrix = CsrMatrix::new(g.n, offsets, cols, values).expect("normalized CSR is well formed");
    NormalizedAdjacency {
        matrix: Arc::new(matrix),
    }
}

impl NormalizedAdjacency {
    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    pub fn matrix(&self) -> &Arc<CsrMatrix> {
        &self.matrix
    }

    pub fn to_dense(&self) -> Tensor {
        self.matrix.to_dense()
    }

    pub fn spmm(&self, h: &Tensor) -> Result<Tensor> {
        self.matrix.spmm(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_node_edge() {
        let g = Graph::from_edges(2, [(0, 1)]).unwrap();
        assert_eq!(g.offsets(), &[0, 1, 2]);
        assert_eq!(g.cols(), &[1, 0]);
        g.validate().unwrap();
    }

    #[test]
    fn dedup_and_self_loops() {
        let g = Graph::from_edges(3, [(0, 1), (1, 0), (0, 1), (2, 2)]).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.degree(2), 0);
        assert!(Graph::from_edges(2, [(0, 2)]).is_err());
    }

    #[test]
    fn from_csr_rejects_asymmetry() {
        assert!(Graph::from_csr(2, vec![0, 1, 1], vec![1]).is_err());
        assert!(Graph::from_csr(2, vec![0, 1, 2], vec![1, 0]).is_ok());
        assert!(Graph::from_csr(1, vec![0, 1], vec![0]).is_err());
    }

    #[test]
    fn normalization_examples() {
        let single = normalize_adjacency(&Graph::from_edges(1, []).unwrap());
        assert_eq!(single.to_dense(), Tensor::from_rows(&[[1.0]]));

        let path = normalize_adjacency(&Graph::from_edges(2, [(0, 1)]).unwrap());
        for i in 0..2 {
            for j in 0..2 {
                assert!((path.get(i, j) - 0.5).abs() < 1e-12);
            }
        }

        let tri = normalize_adjacency(&Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap());
        for i in 0..3 {
            for j in 0..3 {
                assert!((tri.get(i, j) - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spmm_examples() {
        let iso = normalize_adjacency(&Graph::from_edges(3, []).unwrap());
        let h = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        assert_eq!(iso.spmm(&h).unwrap(), h);

        let path = normalize_adjacency(&Graph::from_edges(2, [(0, 1)]).unwrap());
        let out = path.spmm(&Tensor::from_rows(&[[2.0], [4.0]])).unwrap();
        assert!(out.max_abs_diff(&Tensor::from_rows(&[[3.0], [3.0]])) < 1e-12);

        assert!(matches!(path.spmm(&h), Err(Error::Dimension(_))));
    }

    #[test]
    fn restrict_isolates_dropped_nodes() {
        let g = Graph::from_edges(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        let r = g.restrict_to(&[0, 1, 3]).unwrap();
        assert_eq!(r.n(), 4);
        assert_eq!(r.num_edges(), 1);
        assert_eq!(r.degree(2), 0);
    }
}
