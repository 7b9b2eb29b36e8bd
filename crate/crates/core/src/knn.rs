//! Neighbor graphs selected from dense score matrices.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Per-point ordered neighbor lists, `k` entries per point.
///
/// Rows hold no self-loops and no repeated indices. Rows produced by
/// [`knn_from_scores`] are ordered by descending score with ties broken by
/// ascending index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborGraph {
    n: usize,
    k: usize,
    neighbors: Vec<u32>,
}

impl NeighborGraph {
    /// Builds a graph from a flat `n·k` index list, validating the row
    /// invariants.
    pub fn new(n: usize, k: usize, neighbors: Vec<u32>) -> Result<Self> {
        if neighbors.len() != n * k {
            return Err(Error::dim("neighbor graph", format!("expected {} indices", n * k)));
        }
        for (i, row) in neighbors.chunks(k.max(1)).enumerate().take(if k == 0 { 0 } else { n }) {
            for (s, &j) in row.iter().enumerate() {
                let j = j as usize;
                if j >= n {
                    return Err(Error::InvalidArgument(format!("neighbor {j} of {i} out of range")));
                }
                if j == i {
                    return Err(Error::InvalidArgument(format!("self-loop at point {i}")));
                }
                if row[..s].contains(&(j as u32)) {
                    return Err(Error::InvalidArgument(format!("repeated neighbor {j} of {i}")));
                }
            }
        }
        Ok(Self { n, k, neighbors })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn as_flat(&self) -> &[u32] {
        &self.neighbors
    }

    /// Relabels the graph under a point permutation: point `i` of the input
    /// becomes point `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut neighbors = vec![0u32; self.neighbors.len()];
        for i in 0..self.n {
            let dst = perm[i];
            for (s, &j) in self.neighbors(i).iter().enumerate() {
                neighbors[dst * self.k + s] = perm[j as usize] as u32;
            }
        }
        Self { n: self.n, k: self.k, neighbors }
    }
}

fn by_score_then_index<T: Real>(row: &[T]) -> impl Fn(&u32, &u32) -> Ordering + '_ {
    move |&a, &b| {
        let (sa, sb) = (row[a as usize], row[b as usize]);
        sb.partial_cmp(&sa).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    }
}

/// For each row `i`, selects the `k` largest-score columns `j != i`.
pub fn knn_from_scores<T: Real>(scores: &Tensor<T>, k: usize) -> Result<NeighborGraph> {
    if scores.rank() != 2 || scores.rows() != scores.cols() {
        return Err(Error::dim("knn_from_scores", format!("square matrix required, got {:?}", scores.shape())));
    }
    let n = scores.rows();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!("k = {k} must lie in [1, {}]", n.saturating_sub(1))));
    }
    let mut neighbors = Vec::with_capacity(n * k);
    let mut candidates: Vec<u32> = Vec::with_capacity(n);
    for i in 0..n {
        let row = scores.row(i);
        candidates.clear();
        candidates.extend((0..n as u32).filter(|&j| j as usize != i));
        let cmp = by_score_then_index(row);
        if k < candidates.len() {
            candidates.select_nth_unstable_by(k - 1, &cmp);
        }
        let top = &mut candidates[..k];
        top.sort_unstable_by(&cmp);
        neighbors.extend_from_slice(top);
    }
    Ok(NeighborGraph { n, k, neighbors })
}
