//! Supernodal left-looking sparse Cholesky (`A = L Lᵀ`).
//!
//! The symbolic phase groups columns with nested structure into supernodes
//! stored as dense column-major panels; the numeric phase applies
//! descendant updates panel by panel and factors each panel densely.

const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
pub(crate) struct SupernodalCholesky {
    /// First column of each supernode, plus a trailing `n`.
    sn_first: Vec<usize>,
    /// Row lists of each supernode (own columns first, then rows below).
    sn_rows_ptr: Vec<usize>,
    sn_rows: Vec<usize>,
    /// Offset of each panel in `vals`.
    sn_val_ptr: Vec<usize>,
    col_to_sn: Vec<usize>,
    vals: Vec<f64>,
    /// Reciprocal of each diagonal entry of L.
    inv_diag: Vec<f64>,
    // numeric workspace
    map: Vec<usize>,
    head: Vec<usize>,
    next: Vec<usize>,
    pos: Vec<usize>,
    tmp: Vec<f64>,
    /// Largest number of rows below any supernode's diagonal block.
    max_below: usize,
}

impl SupernodalCholesky {
    /// Symbolic analysis. `lower[j]` lists the rows `i > j` with a structural
    /// nonzero in column `j` of the (already permuted) matrix.
    pub fn analyze(lower: &[Vec<usize>]) -> Self {
        let n = lower.len();

        // Elimination tree.
        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        let mut upper: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (j, rows) in lower.iter().enumerate() {
            for &i in rows {
                debug_assert!(i > j);
                upper[i].push(j);
            }
        }
        for (k, row) in upper.iter().enumerate() {
            for &j in row {
                let mut i = j;
                while ancestor[i] != NONE && ancestor[i] != k {
                    let up = ancestor[i];
                    ancestor[i] = k;
                    i = up;
                }
                if ancestor[i] == NONE {
                    ancestor[i] = k;
                    parent[i] = k;
                }
            }
        }

        // Column structures of L (strictly below the diagonal).
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for j in 0..n {
            if parent[j] != NONE {
                children[parent[j]].push(j);
            }
        }
        let mut structs: Vec<Vec<usize>> = Vec::with_capacity(n);
        let mut mark = vec![NONE; n];
        for j in 0..n {
            let mut s = Vec::new();
            for &i in &lower[j] {
                if mark[i] != j {
                    mark[i] = j;
                    s.push(i);
                }
            }
            for &c in &children[j] {
                for &i in &structs[c] {
                    if i != j && mark[i] != j {
                        mark[i] = j;
                        s.push(i);
                    }
                }
            }
            s.sort_unstable();
            structs.push(s);
        }

        // Fundamental supernodes.
        let mut sn_first = Vec::new();
        for j in 0..n {
            let merge = j > 0
                && parent[j - 1] == j
                && children[j].len() == 1
                && structs[j - 1].len() == structs[j].len() + 1;
            if !merge {
                sn_first.push(j);
            }
        }
        sn_first.push(n);
        let n_sn = sn_first.len() - 1;

        let mut col_to_sn = vec![0; n];
        let mut sn_rows_ptr = vec![0];
        let mut sn_rows = Vec::new();
        let mut sn_val_ptr = vec![0];
        for s in 0..n_sn {
            let (first, last) = (sn_first[s], sn_first[s + 1]);
            col_to_sn[first..last].fill(s);
            sn_rows.extend(first..last);
            sn_rows.extend_from_slice(&structs[last - 1]);
            sn_rows_ptr.push(sn_rows.len());
            let m = sn_rows.len() - sn_rows_ptr[s];
            sn_val_ptr.push(sn_val_ptr[s] + m * (last - first));
        }
        let total = sn_val_ptr[n_sn];
        let max_below = (0..n_sn)
            .map(|s| sn_rows_ptr[s + 1] - sn_rows_ptr[s] - (sn_first[s + 1] - sn_first[s]))
            .max()
            .unwrap_or(0);

        SupernodalCholesky {
            sn_first,
            sn_rows_ptr,
            sn_rows,
            sn_val_ptr,
            col_to_sn,
            vals: vec![0.0; total],
            inv_diag: vec![0.0; n],
            map: vec![0; n],
            head: vec![NONE; n_sn],
            next: vec![NONE; n_sn],
            pos: vec![0; n_sn],
            tmp: Vec::new(),
            max_below,
        }
    }

    /// Stored entries of L, including explicit zeros inside panels.
    pub fn stored(&self) -> usize {
        self.vals.len()
    }

    pub fn n_supernodes(&self) -> usize {
        self.sn_first.len() - 1
    }

    fn rows(&self, s: usize) -> &[usize] {
        &self.sn_rows[self.sn_rows_ptr[s]..self.sn_rows_ptr[s + 1]]
    }

    /// Index in the value array of entry `(i, j)`, `i >= j`.
    ///
    /// Panics if the entry is outside the symbolic structure.
    pub fn slot(&self, i: usize, j: usize) -> usize {
        assert!(i >= j);
        let s = self.col_to_sn[j];
        let rows = self.rows(s);
        let m = rows.len();
        let local = rows.binary_search(&i).expect("entry inside the structure");
        self.sn_val_ptr[s] + (j - self.sn_first[s]) * m + local
    }

    /// Raw values; load the lower triangle of A here before [`Self::factor`].
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.vals
    }

    /// Factor in place. On failure returns the column whose pivot was not
    /// positive.
    pub fn factor(&mut self) -> Result<(), usize> {
        let n_sn = self.n_supernodes();
        self.head.iter_mut().for_each(|h| *h = NONE);
        for s in 0..n_sn {
            let first = self.sn_first[s];
            let last = self.sn_first[s + 1];
            let w = last - first;
            let (r0, r1) = (self.sn_rows_ptr[s], self.sn_rows_ptr[s + 1]);
            let m = r1 - r0;
            for k in 0..m {
                self.map[self.sn_rows[r0 + k]] = k;
            }
            let off = self.sn_val_ptr[s];

            // Updates from every descendant panel that touches these columns.
            let mut d = self.head[s];
            self.head[s] = NONE;
            while d != NONE {
                let next_d = self.next[d];
                let (d0, d1) = (self.sn_rows_ptr[d], self.sn_rows_ptr[d + 1]);
                let md = d1 - d0;
                let wd = self.sn_first[d + 1] - self.sn_first[d];
                let p0 = self.pos[d];
                let mut p1 = p0;
                while p1 < md && self.sn_rows[d0 + p1] < last {
                    p1 += 1;
                }
                let nx = md - p0;
                let ny = p1 - p0;
                let dval = self.sn_val_ptr[d];

                // C = X Yᵀ with X = L_d[p0.., :], Y = L_d[p0..p1, :].
                self.tmp.clear();
                self.tmp.resize(nx * ny, 0.0);
                for k in 0..wd {
                    let col = &self.vals[dval + k * md + p0..dval + (k + 1) * md];
                    for jj in 0..ny {
                        let y = col[jj];
                        if y == 0.0 {
                            continue;
                        }
                        let c = &mut self.tmp[jj * nx + jj..(jj + 1) * nx];
                        for (ci, &xi) in c.iter_mut().zip(&col[jj..]) {
                            *ci -= xi * y;
                        }
                    }
                }
                for jj in 0..ny {
                    let col = self.sn_rows[d0 + p0 + jj] - first;
                    let base = off + col * m;
                    for ii in jj..nx {
                        let row = self.map[self.sn_rows[d0 + p0 + ii]];
                        self.vals[base + row] += self.tmp[jj * nx + ii];
                    }
                }

                self.pos[d] = p1;
                if p1 < md {
                    let t = self.col_to_sn[self.sn_rows[d0 + p1]];
                    self.next[d] = self.head[t];
                    self.head[t] = d;
                }
                d = next_d;
            }

            // Dense factorization of the m × w panel.
            let panel = &mut self.vals[off..off + m * w];
            for c in 0..w {
                let (done, rest) = panel.split_at_mut(c * m);
                let col = &mut rest[..m];
                for k in 0..c {
                    let prev = &done[k * m..(k + 1) * m];
                    let l_ck = prev[c];
                    if l_ck != 0.0 {
                        for (x, &p) in col[c..].iter_mut().zip(&prev[c..]) {
                            *x -= p * l_ck;
                        }
                    }
                }
                let diag = col[c];
                if !(diag > 0.0) {
                    return Err(first + c);
                }
                let root = diag.sqrt();
                col[c] = root;
                let inv = 1.0 / root;
                self.inv_diag[first + c] = inv;
                for x in &mut col[c + 1..] {
                    *x *= inv;
                }
            }

            self.pos[s] = w;
            if w < m {
                let t = self.col_to_sn[self.sn_rows[r0 + w]];
                self.next[s] = self.head[t];
                self.head[t] = s;
            }
        }
        Ok(())
    }

    /// Overwrite `x` with `A⁻¹ x` using the current factor.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n_sn = self.n_supernodes();
        let mut below_x = Vec::with_capacity(self.max_below);
        let mut block = Vec::new();
        for s in 0..n_sn {
            let first = self.sn_first[s];
            let w = self.sn_first[s + 1] - first;
            let rows = self.rows(s);
            let m = rows.len();
            let panel = &self.vals[self.sn_val_ptr[s]..self.sn_val_ptr[s] + m * w];
            if w == 1 {
                let xj = x[first] * self.inv_diag[first];
                x[first] = xj;
                for (&r, &l) in rows[1..].iter().zip(&panel[1..]) {
                    x[r] -= l * xj;
                }
                continue;
            }
            for c in 0..w {
                let col = &panel[c * m..c * m + w];
                let xj = x[first + c] * self.inv_diag[first + c];
                x[first + c] = xj;
                for (xi, &l) in x[first + c + 1..first + w].iter_mut().zip(&col[c + 1..]) {
                    *xi -= l * xj;
                }
            }
            if m == w {
                continue;
            }
            block.clear();
            block.extend_from_slice(&x[first..first + w]);
            below_x.clear();
            below_x.resize(m - w, 0.0);
            below_times(panel, m, w, &block, &mut below_x);
            for (&r, &t) in rows[w..].iter().zip(&below_x) {
                x[r] -= t;
            }
        }
        for s in (0..n_sn).rev() {
            let first = self.sn_first[s];
            let w = self.sn_first[s + 1] - first;
            let rows = self.rows(s);
            let m = rows.len();
            let panel = &self.vals[self.sn_val_ptr[s]..self.sn_val_ptr[s] + m * w];
            if w == 1 {
                x[first] =
                    (x[first] - gather_dot(&panel[1..], &rows[1..], x)) * self.inv_diag[first];
                continue;
            }
            if m > w {
                below_x.clear();
                below_x.extend(rows[w..].iter().map(|&r| x[r]));
                block.clear();
                block.resize(w, 0.0);
                below_transpose_times(panel, m, w, &below_x, &mut block);
                for (xi, &b) in x[first..first + w].iter_mut().zip(&block) {
                    *xi -= b;
                }
            }
            for c in (0..w).rev() {
                let col = &panel[c * m..c * m + w];
                let acc = x[first + c] - dot(&col[c + 1..], &x[first + c + 1..first + w]);
                x[first + c] = acc * self.inv_diag[first + c];
            }
        }
    }
}

/// `out += L_b y`, where `L_b` is the part of an `m × w` column-major panel
/// below its diagonal block.
fn below_times(panel: &[f64], m: usize, w: usize, y: &[f64], out: &mut [f64]) {
    let below = |c: usize| &panel[c * m + w..(c + 1) * m];
    let mut c = 0;
    while c + 4 <= w {
        let (l0, l1, l2, l3) = (below(c), below(c + 1), below(c + 2), below(c + 3));
        let (y0, y1, y2, y3) = (y[c], y[c + 1], y[c + 2], y[c + 3]);
        for i in 0..out.len() {
            out[i] += l0[i] * y0 + l1[i] * y1 + l2[i] * y2 + l3[i] * y3;
        }
        c += 4;
    }
    for (c, &yc) in y.iter().enumerate().take(w).skip(c) {
        for (o, &l) in out.iter_mut().zip(below(c)) {
            *o += l * yc;
        }
    }
}

/// `out = L_bᵀ v` for the same panel layout as [`below_times`].
fn below_transpose_times(panel: &[f64], m: usize, w: usize, v: &[f64], out: &mut [f64]) {
    let below = |c: usize| &panel[c * m + w..(c + 1) * m];
    let mut c = 0;
    while c + 4 <= w {
        let (l0, l1, l2, l3) = (below(c), below(c + 1), below(c + 2), below(c + 3));
        let mut acc = [0.0; 4];
        for (i, &vi) in v.iter().enumerate() {
            acc[0] += l0[i] * vi;
            acc[1] += l1[i] * vi;
            acc[2] += l2[i] * vi;
            acc[3] += l3[i] * vi;
        }
        out[c..c + 4].copy_from_slice(&acc);
        c += 4;
    }
    for (c, o) in out.iter_mut().enumerate().take(w).skip(c) {
        *o = dot(below(c), v);
    }
}

/// `Σ vals[k] · x[idx[k]]` with four partial sums.
pub(crate) fn gather_dot(vals: &[f64], idx: &[usize], x: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (v4, i4) = (vals.chunks_exact(4), idx.chunks_exact(4));
    let tail: f64 = v4
        .remainder()
        .iter()
        .zip(i4.remainder())
        .map(|(&v, &i)| v * x[i])
        .sum();
    for (v, i) in v4.zip(i4) {
        for k in 0..4 {
            acc[k] += v[k] * x[i[k]];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Dot product with four partial sums.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (a4, b4) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = a4
        .remainder()
        .iter()
        .zip(b4.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in a4.zip(b4) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Greedy minimum-degree elimination order on an explicit elimination graph.
///
/// Ties go to the lowest index so the order is deterministic.
pub(crate) fn minimum_degree_order(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let words = n.div_ceil(64).max(1);
    let mut sets = vec![0u64; n * words];
    for (u, nbrs) in adj.iter().enumerate() {
        for &w in nbrs {
            if w != u {
                sets[u * words + w / 64] |= 1 << (w % 64);
            }
        }
    }
    let mut degree: Vec<u32> = (0..n)
        .map(|u| {
            sets[u * words..(u + 1) * words]
                .iter()
                .map(|w| w.count_ones())
                .sum()
        })
        .collect();
    let mut eliminated = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut nbrs = Vec::new();
    let mut row = vec![0u64; words];

    for _ in 0..n {
        let v = (0..n)
            .filter(|&u| !eliminated[u])
            .min_by_key(|&u| (degree[u], u))
            .expect("nodes remain");
        eliminated[v] = true;
        order.push(v);

        row.copy_from_slice(&sets[v * words..(v + 1) * words]);
        nbrs.clear();
        for (wi, &word) in row.iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                nbrs.push(wi * 64 + b);
                bits &= bits - 1;
            }
        }
        // Neighbours of v become a clique; v leaves the graph.
        for &u in &nbrs {
            let base = u * words;
            for (k, &r) in row.iter().enumerate() {
                sets[base + k] |= r;
            }
            sets[base + u / 64] &= !(1 << (u % 64));
            sets[base + v / 64] &= !(1 << (v % 64));
            degree[u] = sets[base..base + words]
                .iter()
                .map(|w| w.count_ones())
                .sum();
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random sparse SPD matrix (weighted Laplacian plus a positive diagonal).
    fn random_spd(n: usize, density: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..i {
                if rng.random::<f64>() < density {
                    let g = rng.random_range(0.1..2.0);
                    a[i][j] -= g;
                    a[j][i] -= g;
                    a[i][i] += g;
                    a[j][j] += g;
                }
            }
            a[i][i] += rng.random_range(0.01..0.5);
        }
        a
    }

    fn factor_dense_pattern(a: &[Vec<f64>]) -> SupernodalCholesky {
        let n = a.len();
        let lower: Vec<Vec<usize>> = (0..n)
            .map(|j| (j + 1..n).filter(|&i| a[i][j] != 0.0).collect())
            .collect();
        let mut chol = SupernodalCholesky::analyze(&lower);
        let slots: Vec<(usize, usize, usize)> = (0..n)
            .flat_map(|j| (j..n).map(move |i| (i, j)))
            .filter(|&(i, j)| a[i][j] != 0.0)
            .map(|(i, j)| (i, j, chol.slot(i, j)))
            .collect();
        let vals = chol.values_mut();
        vals.iter_mut().for_each(|v| *v = 0.0);
        for (i, j, s) in slots {
            vals[s] = a[i][j];
        }
        chol.factor().unwrap();
        chol
    }

    #[test]
    fn solves_match_matrix_product() {
        for (n, density, seed) in [(1, 0.0, 1), (7, 0.5, 2), (40, 0.1, 3), (120, 0.04, 4)] {
            let a = random_spd(n, density, seed);
            let chol = factor_dense_pattern(&a);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let x_true: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut b: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| a[i][j] * x_true[j]).sum())
                .collect();
            chol.solve_in_place(&mut b);
            for (x, t) in b.iter().zip(&x_true) {
                assert!((x - t).abs() < 1e-10, "n={n}: {x} vs {t}");
            }
        }
    }

    #[test]
    fn detects_indefinite_pivot() {
        let lower = vec![vec![1], vec![]];
        let mut chol = SupernodalCholesky::analyze(&lower);
        let (s00, s10, s11) = (chol.slot(0, 0), chol.slot(1, 0), chol.slot(1, 1));
        let v = chol.values_mut();
        v[s00] = 1.0;
        v[s10] = 2.0;
        v[s11] = 1.0;
        assert_eq!(chol.factor(), Err(1));
    }

    #[test]
    fn chain_forms_one_supernode_tail() {
        // tridiagonal: every column nests into the next
        let n = 6;
        let lower: Vec<Vec<usize>> = (0..n)
            .map(|j| if j + 1 < n { vec![j + 1] } else { vec![] })
            .collect();
        let chol = SupernodalCholesky::analyze(&lower);
        assert!(chol.stored() >= n);
        assert!(chol.n_supernodes() < n);
    }

    #[test]
    fn minimum_degree_is_a_permutation() {
        let adj = vec![vec![1, 2, 3], vec![0], vec![0], vec![0, 4], vec![3]];
        let mut order = minimum_degree_order(&adj);
        assert!(order[0] != 0);
        order.sort_unstable();
        assert_eq!(order, vec![0, 1, 2, 3, 4]);
        assert!(minimum_degree_order(&[]).is_empty());
    }
}
