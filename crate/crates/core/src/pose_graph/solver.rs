//! Envelope (skyline) Cholesky on a reverse Cuthill–McKee block ordering.
//!
//! Pose graphs are chains with a handful of loop edges, so after reordering
//! the profile stays narrow and the factorisation is close to linear in the
//! number of nodes.

use std::collections::VecDeque;

/// Reverse Cuthill–McKee permutation of an undirected graph given as
/// adjacency lists. `order[k]` is the original vertex placed at position `k`.
pub fn reverse_cuthill_mckee(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adjacency[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            next.dedup();
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Symmetric positive-definite matrix stored by rows of its lower envelope.
#[derive(Clone, Debug)]
pub struct SkylineMatrix {
    first: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

impl SkylineMatrix {
    /// Allocates an all-zero matrix whose row `i` spans columns
    /// `first[i]..=i`.
    pub fn with_profile(first: Vec<usize>) -> Self {
        let rows = first.iter().enumerate().map(|(i, &f)| vec![0.0; i + 1 - f]).collect();
        Self { first, rows }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    /// Adds `v` at `(i, j)` of the lower triangle; `j <= i` and inside the
    /// profile.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        debug_assert!(j >= self.first[i], "entry outside the envelope");
        self.rows[i][j - self.first[i]] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if j < self.first[i] {
            0.0
        } else {
            self.rows[i][j - self.first[i]]
        }
    }

    /// In-place `L Lᵀ` factorisation; `None` if not positive definite.
    pub fn cholesky(mut self) -> Option<SkylineCholesky> {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            for j in fi..=i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let mut s = self.rows[i][j - fi];
                if j < i {
                    let (head, tail) = self.rows.split_at(i);
                    let ri = &tail[0];
                    let rj = &head[j];
                    for k in k0..j {
                        s -= ri[k - fi] * rj[k - fj];
                    }
                    let d = self.rows[j][j - fj];
                    self.rows[i][j - fi] = s / d;
                } else {
                    let ri = &self.rows[i];
                    for k in k0..i {
                        s -= ri[k - fi] * ri[k - fi];
                    }
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    self.rows[i][i - fi] = s.sqrt();
                }
            }
        }
        Some(SkylineCholesky { l: self })
    }
}

#[derive(Clone, Debug)]
pub struct SkylineCholesky {
    l: SkylineMatrix,
}

impl SkylineCholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.dim();
        let mut y = b.to_vec();
        for i in 0..n {
            let fi = self.l.first[i];
            let row = &self.l.rows[i];
            let mut s = y[i];
            for k in fi..i {
                s -= row[k - fi] * y[k];
            }
            y[i] = s / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.l.first[i];
            let row = &self.l.rows[i];
            y[i] /= row[i - fi];
            let yi = y[i];
            for k in fi..i {
                y[k] -= row[k - fi] * yi;
            }
        }
        y
    }
}
