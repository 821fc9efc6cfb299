//! Block-sparse Cholesky factorization for symmetric positive-definite
//! normal equations.
//!
//! Ordering is a greedy minimum-degree elimination on the block graph with
//! ties broken by block index, so the factorization is fully deterministic.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotPositiveDefinite {
    /// Block (in original numbering) where the pivot failed.
    pub block: usize,
}

/// Elimination order and fill pattern for a block structure.
#[derive(Debug, Clone)]
pub struct Symbolic {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    /// `order[k]` is the original block eliminated at step `k`.
    order: Vec<usize>,
    /// `position[b]` is the elimination step of original block `b`.
    position: Vec<usize>,
    /// For each step `k`, the steps `j > k` with a structural nonzero `U[k, j]`.
    rows: Vec<Vec<usize>>,
}

impl Symbolic {
    /// `edges` are unordered pairs of distinct original block indices.
    pub fn analyze(sizes: &[usize], edges: &[(usize, usize)]) -> Self {
        let n = sizes.len();
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for &(a, b) in edges {
            if a != b {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        let degree = |adj: &Vec<BTreeSet<usize>>, v: usize| adj[v].iter().map(|u| sizes[*u]).sum::<usize>();
        let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|v| (degree(&adj, v), v)).collect();
        let mut current: Vec<usize> = (0..n).map(|v| degree(&adj, v)).collect();
        let mut order = Vec::with_capacity(n);
        let mut neighbours: Vec<Vec<usize>> = vec![Vec::new(); n];
        while let Some(&(d, v)) = queue.iter().next() {
            queue.remove(&(d, v));
            order.push(v);
            let nb: Vec<usize> = adj[v].iter().copied().collect();
            for &u in &nb {
                adj[u].remove(&v);
            }
            for (i, &a) in nb.iter().enumerate() {
                for &b in &nb[i + 1..] {
                    adj[a].insert(b);
                    adj[b].insert(a);
                }
            }
            for &u in &nb {
                let nd = degree(&adj, u);
                if nd != current[u] {
                    queue.remove(&(current[u], u));
                    current[u] = nd;
                    queue.insert((nd, u));
                }
            }
            neighbours[v] = nb;
            adj[v].clear();
        }
        let mut position = vec![0; n];
        for (k, &b) in order.iter().enumerate() {
            position[b] = k;
        }
        let rows = order
            .iter()
            .map(|&b| {
                let mut r: Vec<usize> = neighbours[b].iter().map(|u| position[*u]).collect();
                r.sort_unstable();
                r
            })
            .collect();
        let mut offsets = Vec::with_capacity(n);
        let mut acc = 0;
        for s in sizes {
            offsets.push(acc);
            acc += s;
        }
        Self { sizes: sizes.to_vec(), offsets, order, position, rows }
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn dim(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Number of stored off-diagonal blocks in the factor.
    pub fn fill(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }

    fn slot(&self, k: usize, j: usize) -> Option<usize> {
        self.rows[k].binary_search(&j).ok()
    }
}

/// Symmetric block matrix laid out on a [`Symbolic`] pattern (upper part in
/// elimination order).
#[derive(Debug, Clone)]
pub struct BlockMatrix<'a> {
    sym: &'a Symbolic,
    diag: Vec<DMatrix<f64>>,
    upper: Vec<Vec<DMatrix<f64>>>,
}

impl<'a> BlockMatrix<'a> {
    pub fn zeros(sym: &'a Symbolic) -> Self {
        let diag = sym.order.iter().map(|&b| DMatrix::zeros(sym.sizes[b], sym.sizes[b])).collect();
        let upper = sym
            .order
            .iter()
            .enumerate()
            .map(|(k, &b)| {
                sym.rows[k].iter().map(|&j| DMatrix::zeros(sym.sizes[b], sym.sizes[sym.order[j]])).collect()
            })
            .collect();
        Self { sym, diag, upper }
    }

    /// Adds `m` to block `(a, b)` in original numbering (and its transpose).
    pub fn add_block(&mut self, a: usize, b: usize, m: &DMatrix<f64>) {
        let (pa, pb) = (self.sym.position[a], self.sym.position[b]);
        if pa == pb {
            self.diag[pa] += m;
        } else if pa < pb {
            let s = self.sym.slot(pa, pb).expect("block present in symbolic pattern");
            self.upper[pa][s] += m;
        } else {
            let s = self.sym.slot(pb, pa).expect("block present in symbolic pattern");
            self.upper[pb][s] += m.transpose();
        }
    }

    /// Scalar diagonal in original layout.
    pub fn diagonal(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.sym.dim());
        for (k, &b) in self.sym.order.iter().enumerate() {
            let o = self.sym.offsets[b];
            for i in 0..self.sym.sizes[b] {
                out[o + i] = self.diag[k][(i, i)];
            }
        }
        out
    }

    /// Adds `d` (original layout) to the diagonal.
    pub fn add_diagonal(&mut self, d: &DVector<f64>) {
        for (k, &b) in self.sym.order.iter().enumerate() {
            let o = self.sym.offsets[b];
            for i in 0..self.sym.sizes[b] {
                self.diag[k][(i, i)] += d[o + i];
            }
        }
    }

    /// Dense copy in original layout, for tests and diagnostics.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.sym.dim();
        let mut out = DMatrix::zeros(n, n);
        for (k, &b) in self.sym.order.iter().enumerate() {
            let ob = self.sym.offsets[b];
            let sb = self.sym.sizes[b];
            out.view_mut((ob, ob), (sb, sb)).copy_from(&self.diag[k]);
            for (s, &j) in self.sym.rows[k].iter().enumerate() {
                let c = self.sym.order[j];
                let oc = self.sym.offsets[c];
                let sc = self.sym.sizes[c];
                out.view_mut((ob, oc), (sb, sc)).copy_from(&self.upper[k][s]);
                out.view_mut((oc, ob), (sc, sb)).copy_from(&self.upper[k][s].transpose());
            }
        }
        out
    }

    /// Factorizes in place into `UᵀU`. A pivot below `rel_tol` times the
    /// original diagonal entry is reported as not positive definite.
    pub fn factorize(mut self, rel_tol: f64) -> Result<Factorization<'a>, NotPositiveDefinite> {
        let sym = self.sym;
        let n = sym.num_blocks();
        let reference: Vec<Vec<f64>> =
            self.diag.iter().map(|d| (0..d.nrows()).map(|i| d[(i, i)].abs()).collect()).collect();
        for k in 0..n {
            let b = sym.order[k];
            dense_cholesky_upper(&mut self.diag[k], &reference[k], rel_tol).map_err(|_| NotPositiveDefinite { block: b })?;
            let (left, right) = self.diag.split_at_mut(k + 1);
            let ukk = &left[k];
            for blk in self.upper[k].iter_mut() {
                // U_kj = U_kk⁻ᵀ A_kj
                ukk.tr_solve_upper_triangular_mut(blk);
            }
            let rows = &sym.rows[k];
            let (before, after) = self.upper.split_at_mut(k + 1);
            let uk = &before[k];
            for (si, &i) in rows.iter().enumerate() {
                let ui = &uk[si];
                right[i - k - 1].gemm_tr(-1.0, ui, ui, 1.0);
                let target = &mut after[i - k - 1];
                for (sj, &j) in rows.iter().enumerate().skip(si + 1) {
                    let slot = sym.slot(i, j).expect("fill closed under elimination");
                    target[slot].gemm_tr(-1.0, ui, &uk[sj], 1.0);
                }
            }
        }
        Ok(Factorization { sym, diag: self.diag, upper: self.upper })
    }
}

/// In-place upper Cholesky `A = UᵀU` of a small dense block.
fn dense_cholesky_upper(a: &mut DMatrix<f64>, reference: &[f64], rel_tol: f64) -> Result<(), ()> {
    let n = a.nrows();
    for j in 0..n {
        let mut s = a[(j, j)];
        for k in 0..j {
            s -= a[(k, j)] * a[(k, j)];
        }
        if !(s > rel_tol * reference[j]) || !(s > 0.0) {
            return Err(());
        }
        let d = s.sqrt();
        a[(j, j)] = d;
        for c in j + 1..n {
            let mut t = a[(j, c)];
            for k in 0..j {
                t -= a[(k, j)] * a[(k, c)];
            }
            a[(j, c)] = t / d;
        }
        for r in j + 1..n {
            a[(r, j)] = 0.0;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Factorization<'a> {
    sym: &'a Symbolic,
    diag: Vec<DMatrix<f64>>,
    upper: Vec<Vec<DMatrix<f64>>>,
}

impl Factorization<'_> {
    /// Solves `A x = b` with `b` and `x` in original layout.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let sym = self.sym;
        let n = sym.num_blocks();
        let mut y: Vec<DVector<f64>> = sym
            .order
            .iter()
            .map(|&blk| b.rows(sym.offsets[blk], sym.sizes[blk]).into_owned())
            .collect();
        for k in 0..n {
            self.diag[k].tr_solve_upper_triangular_mut(&mut y[k]);
            let (before, after) = y.split_at_mut(k + 1);
            for (s, &j) in sym.rows[k].iter().enumerate() {
                after[j - k - 1].gemv_tr(-1.0, &self.upper[k][s], &before[k], 1.0);
            }
        }
        for k in (0..n).rev() {
            let (before, after) = y.split_at_mut(k + 1);
            for (s, &j) in sym.rows[k].iter().enumerate() {
                before[k].gemv(-1.0, &self.upper[k][s], &after[j - k - 1], 1.0);
            }
            self.diag[k].solve_upper_triangular_mut(&mut before[k]);
        }
        let mut out = DVector::zeros(sym.dim());
        for (k, &blk) in sym.order.iter().enumerate() {
            out.rows_mut(sym.offsets[blk], sym.sizes[blk]).copy_from(&y[k]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_spd(sizes: &[usize], edges: &[(usize, usize)], seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let offsets: Vec<usize> = sizes.iter().scan(0, |a, s| { let o = *a; *a += s; Some(o) }).collect();
        let n: usize = sizes.iter().sum();
        let mut j = DMatrix::zeros(0, n);
        for &(a, b) in edges.iter().chain((0..sizes.len()).map(|i| (i, i)).collect::<Vec<_>>().iter()) {
            let mut row = DMatrix::zeros(3, n);
            for r in 0..3 {
                for c in 0..sizes[a] {
                    row[(r, offsets[a] + c)] = rng.random_range(-1.0..1.0);
                }
                for c in 0..sizes[b] {
                    row[(r, offsets[b] + c)] += rng.random_range(-1.0..1.0);
                }
            }
            let rows = j.nrows();
            j = j.insert_rows(rows, 3, 0.0);
            j.view_mut((rows, 0), (3, n)).copy_from(&row);
        }
        j.transpose() * &j + DMatrix::identity(n, n) * 1e-3
    }

    #[test]
    fn matches_dense_solve() {
        let sizes = [6, 3, 6, 3, 1, 6];
        let edges = [(0, 1), (1, 2), (2, 3), (0, 3), (3, 4), (4, 5), (0, 5)];
        let a = random_spd(&sizes, &edges, 7);
        let sym = Symbolic::analyze(&sizes, &edges);
        let offsets: Vec<usize> = sizes.iter().scan(0, |acc, s| { let o = *acc; *acc += s; Some(o) }).collect();
        let mut m = BlockMatrix::zeros(&sym);
        for i in 0..sizes.len() {
            m.add_block(i, i, &a.view((offsets[i], offsets[i]), (sizes[i], sizes[i])).into_owned());
        }
        for &(x, y) in &edges {
            m.add_block(x, y, &a.view((offsets[x], offsets[y]), (sizes[x], sizes[y])).into_owned());
        }
        assert!((m.to_dense() - &a).amax() < 1e-12);
        let b = DVector::from_fn(a.nrows(), |i, _| (i as f64).sin());
        let x = m.factorize(1e-12).unwrap().solve(&b);
        let expect = a.clone().cholesky().unwrap().solve(&b);
        assert!((x - expect).amax() < 1e-9);
    }

    #[test]
    fn detects_rank_deficiency() {
        let sizes = [2];
        let sym = Symbolic::analyze(&sizes, &[]);
        let mut m = BlockMatrix::zeros(&sym);
        m.add_block(0, 0, &DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]));
        assert!(m.factorize(1e-10).is_err());
    }
}
