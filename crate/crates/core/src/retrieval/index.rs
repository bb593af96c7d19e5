use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::rank::rank_order;
use super::similarity::{cosine_from_parts, cosine_similarity, dot, norm};
use crate::error::{bail, Result};
use crate::exec::{map_slice, Parallelism};
use crate::store::EmbeddingMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub row: usize,
    pub score: f64,
}

// Max-heap on "worse than": the heap top is the weakest kept candidate.
#[derive(PartialEq)]
struct Candidate(Neighbor);

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order((self.0.score, self.0.row), (other.0.score, other.0.row))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Exact cosine top-k index over the rows of one matrix.
///
/// Row norms are computed once at build time and top-k selection uses a
/// bounded heap. Results are ordered by score descending, ties by row index
/// ascending, which is exactly what a full linear scan and sort produces.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    norms: Vec<f64>,
}

/// Builds an exact index. An empty matrix is a config error.
pub fn build_index(matrix: &EmbeddingMatrix) -> Result<NeighborIndex> {
    NeighborIndex::from_rows(matrix.dim(), matrix.ids().to_vec(), matrix.data().to_vec())
}

impl NeighborIndex {
    pub fn from_rows(dim: usize, ids: Vec<String>, data: Vec<f32>) -> Result<Self> {
        if ids.is_empty() {
            bail!(Config, "cannot build a neighbor index over an empty matrix");
        }
        if dim == 0 || data.len() != ids.len() * dim {
            bail!(Shape, "index rows do not match dim {}", dim);
        }
        if data.iter().any(|v| !v.is_finite()) {
            bail!(Data, "non-finite value in indexed rows");
        }
        let norms = data.chunks_exact(dim).map(norm).collect();
        Ok(NeighborIndex { dim, ids, data, norms })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    fn check_query(&self, query: &[f32]) -> Result<()> {
        if query.len() != self.dim {
            bail!(Shape, "query has dim {}, index has {}", query.len(), self.dim);
        }
        if query.iter().any(|v| !v.is_finite()) {
            bail!(Data, "non-finite query vector");
        }
        Ok(())
    }

    /// Top-`k` rows by cosine similarity to `query`.
    pub fn query(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        self.query_filtered(query, k, |_| true)
    }

    /// Top-`k` rows, skipping `excluded`.
    pub fn query_excluding(&self, query: &[f32], k: usize, excluded: usize) -> Result<Vec<Neighbor>> {
        self.query_filtered(query, k, |row| row != excluded)
    }

    fn query_filtered(&self, query: &[f32], k: usize, keep: impl Fn(usize) -> bool) -> Result<Vec<Neighbor>> {
        self.check_query(query)?;
        if k == 0 {
            return Ok(Vec::new());
        }
        let qn = norm(query);
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        for (row, r) in self.data.chunks_exact(self.dim).enumerate() {
            if !keep(row) {
                continue;
            }
            let cand = Candidate(Neighbor { row, score: cosine_from_parts(dot(query, r), qn, self.norms[row]) });
            if heap.len() < k {
                heap.push(cand);
            } else if let Some(top) = heap.peek() {
                if cand < *top {
                    heap.pop();
                    heap.push(cand);
                }
            }
        }
        Ok(heap.into_sorted_vec().into_iter().map(|c| c.0).collect())
    }

    /// Reference mode: score every row with [`cosine_similarity`] and sort.
    pub fn query_linear_scan(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        self.check_query(query)?;
        let mut all = Vec::with_capacity(self.len());
        for row in 0..self.len() {
            all.push(Neighbor { row, score: cosine_similarity(query, self.row(row))? });
        }
        all.sort_by(|a, b| rank_order((a.score, a.row), (b.score, b.row)));
        all.truncate(k);
        Ok(all)
    }

    /// Answers many queries, in order.
    pub fn query_batch(&self, queries: &[Vec<f32>], k: usize, mode: Parallelism) -> Result<Vec<Vec<Neighbor>>> {
        map_slice(mode, queries, |q| self.query(q, k)).into_iter().collect()
    }
}
