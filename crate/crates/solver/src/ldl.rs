//! Sparse LDLᵀ for symmetric quasi-definite systems.
//!
//! Ordering is minimum degree on the explicit elimination graph, with the
//! restriction that a dual (negative) pivot is only eligible once all of its
//! primal neighbours are gone. The numeric phase is an up-looking
//! factorization driven by the elimination tree.

use std::collections::BTreeSet;

const NONE: usize = usize::MAX;

/// Minimum-degree ordering. Returns `perm` with `perm[new] = old`. Ties go
/// to the lowest vertex id, so the result is deterministic.
pub fn min_degree(adj: &[Vec<usize>], signs: &[f64]) -> Vec<usize> {
    let n = adj.len();
    let mut graph: Vec<Vec<usize>> = adj.to_vec();
    let mut blocked: Vec<usize> = (0..n)
        .map(|v| {
            if signs[v] < 0.0 {
                adj[v].iter().filter(|&&u| signs[u] > 0.0).count()
            } else {
                0
            }
        })
        .collect();
    let mut ready: BTreeSet<(usize, usize)> = (0..n).filter(|&v| blocked[v] == 0).map(|v| (graph[v].len(), v)).collect();
    let mut gone = vec![false; n];
    let mut perm = Vec::with_capacity(n);
    let mut merged: Vec<usize> = Vec::new();

    while let Some((_, v)) = ready.pop_first() {
        gone[v] = true;
        perm.push(v);
        let nbrs = std::mem::take(&mut graph[v]);
        if signs[v] > 0.0 {
            for &u in &adj[v] {
                if signs[u] < 0.0 && !gone[u] {
                    blocked[u] -= 1;
                    if blocked[u] == 0 {
                        ready.insert((graph[u].len(), u));
                    }
                }
            }
        }
        for &u in &nbrs {
            let was = graph[u].len();
            // adj(u) ← adj(u) ∪ nbrs minus {u, v}
            merged.clear();
            let (a, b) = (&graph[u], &nbrs);
            let (mut i, mut j) = (0, 0);
            while i < a.len() || j < b.len() {
                let next = if j == b.len() || (i < a.len() && a[i] <= b[j]) {
                    let x = a[i];
                    if j < b.len() && b[j] == x {
                        j += 1;
                    }
                    i += 1;
                    x
                } else {
                    let x = b[j];
                    j += 1;
                    x
                };
                if next != u && next != v {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut graph[u], &mut merged);
            if blocked[u] == 0 && graph[u].len() != was {
                ready.remove(&(was, u));
                ready.insert((graph[u].len(), u));
            }
        }
    }
    debug_assert_eq!(perm.len(), n);
    perm
}

/// Symbolic structure plus numeric storage of `P K Pᵀ = L D Lᵀ`.
#[derive(Debug, Clone)]
pub struct SparseLdl {
    n: usize,
    perm: Vec<usize>,
    inv: Vec<usize>,
    /// upper triangle of the permuted matrix, by column
    a_ptr: Vec<usize>,
    a_row: Vec<usize>,
    a_val: Vec<f64>,
    diag_a: Vec<f64>,
    etree: Vec<usize>,
    /// strictly lower part of L, by column
    l_ptr: Vec<usize>,
    l_row: Vec<usize>,
    l_val: Vec<f64>,
    d: Vec<f64>,
    /// expected pivot sign per permuted row: +1 primal, -1 dual
    sign: Vec<f64>,
    pub dynamic_regs: usize,
}

impl SparseLdl {
    /// Analyses a symmetric pattern. `pattern` lists off-diagonal pairs in
    /// original numbering (either orientation), and `signs[i]` is the
    /// expected sign of pivot `i`.
    pub fn new(n: usize, pattern: &[(usize, usize)], signs: &[f64]) -> Self {
        let mut adj = vec![Vec::new(); n];
        for &(r, c) in pattern {
            if r != c {
                adj[r].push(c);
                adj[c].push(r);
            }
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
            a.dedup();
        }
        let perm = min_degree(&adj, signs);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }

        // column j of the permuted upper triangle holds rows i < j
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (old, a) in adj.iter().enumerate() {
            let j = inv[old];
            for &o in a {
                let i = inv[o];
                if i < j {
                    cols[j].push(i);
                }
            }
        }
        let mut a_ptr = vec![0; n + 1];
        let mut a_row = Vec::new();
        for (j, c) in cols.iter_mut().enumerate() {
            c.sort_unstable();
            a_row.extend_from_slice(c);
            a_ptr[j + 1] = a_row.len();
        }

        // elimination tree and column counts
        let mut etree = vec![NONE; n];
        let mut l_nz = vec![0usize; n];
        let mut mark = vec![NONE; n];
        for j in 0..n {
            mark[j] = j;
            for &r in &a_row[a_ptr[j]..a_ptr[j + 1]] {
                let mut i = r;
                while mark[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    l_nz[i] += 1;
                    mark[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut l_ptr = vec![0; n + 1];
        for i in 0..n {
            l_ptr[i + 1] = l_ptr[i] + l_nz[i];
        }
        let nnz = l_ptr[n];
        let sign = (0..n).map(|i| signs[perm[i]]).collect();
        Self {
            n,
            perm,
            inv,
            a_val: vec![0.0; a_row.len()],
            a_ptr,
            a_row,
            diag_a: vec![0.0; n],
            etree,
            l_ptr,
            l_row: vec![0; nnz],
            l_val: vec![0.0; nnz],
            d: vec![0.0; n],
            sign,
            dynamic_regs: 0,
        }
    }

    /// Number of stored off-diagonal entries of `L`.
    pub fn fill(&self) -> usize {
        self.l_ptr[self.n]
    }

    /// Loads numeric values. Entries are given in original numbering and
    /// summed; only one triangle of each off-diagonal pair should be passed
    /// (either one). Entries outside the symbolic pattern panic.
    pub fn load(&mut self, entries: impl IntoIterator<Item = (usize, usize, f64)>) {
        self.a_val.iter_mut().for_each(|v| *v = 0.0);
        self.diag_a.iter_mut().for_each(|v| *v = 0.0);
        for (r, c, v) in entries {
            let (i, j) = (self.inv[r], self.inv[c]);
            if i == j {
                self.diag_a[i] += v;
                continue;
            }
            let (lo, hi) = if i < j { (i, j) } else { (j, i) };
            let col = &self.a_row[self.a_ptr[hi]..self.a_ptr[hi + 1]];
            let k = col
                .binary_search(&lo)
                .unwrap_or_else(|_| panic!("entry ({r}, {c}) outside the pattern"));
            self.a_val[self.a_ptr[hi] + k] += v;
        }
    }

    /// Numeric LDLᵀ. Pivots with the wrong sign or tiny magnitude are
    /// replaced by `sign * delta` (dynamic regularization).
    pub fn factor(&mut self, eps: f64, delta: f64) {
        let n = self.n;
        self.dynamic_regs = 0;
        let mut next = self.l_ptr[..n].to_vec();
        let mut y = vec![0.0; n];
        let mut mark = vec![NONE; n];
        let mut stack: Vec<usize> = Vec::with_capacity(n);
        let mut path: Vec<usize> = Vec::with_capacity(n);

        for k in 0..n {
            // pattern of row k of L: union of etree paths from the column's rows
            stack.clear();
            mark[k] = k;
            for p in self.a_ptr[k]..self.a_ptr[k + 1] {
                let mut i = self.a_row[p];
                y[i] = self.a_val[p];
                path.clear();
                while mark[i] != k {
                    mark[i] = k;
                    path.push(i);
                    i = self.etree[i];
                }
                stack.extend(path.iter().rev());
            }
            let mut dk = self.diag_a[k];
            // stack holds reversed topological chunks; walk it backwards
            for &i in stack.iter().rev() {
                let yi = y[i];
                y[i] = 0.0;
                for p in self.l_ptr[i]..next[i] {
                    y[self.l_row[p]] -= self.l_val[p] * yi;
                }
                let lki = yi / self.d[i];
                dk -= lki * yi;
                let p = next[i];
                self.l_row[p] = k;
                self.l_val[p] = lki;
                next[i] += 1;
            }
            if dk * self.sign[k] <= eps {
                dk = self.sign[k] * delta;
                self.dynamic_regs += 1;
            }
            self.d[k] = dk;
        }
    }

    /// Solves `K x = rhs` with `rhs` in original numbering.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = (0..n).map(|i| rhs[self.perm[i]]).collect();
        for i in 0..n {
            let yi = y[i];
            if yi != 0.0 {
                for p in self.l_ptr[i]..self.l_ptr[i + 1] {
                    y[self.l_row[p]] -= self.l_val[p] * yi;
                }
            }
        }
        for i in 0..n {
            y[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for p in self.l_ptr[i]..self.l_ptr[i + 1] {
                s -= self.l_val[p] * y[self.l_row[p]];
            }
            y[i] = s;
        }
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[self.perm[i]] = y[i];
        }
        x
    }
}
