//! Sparse LU factorization of a simplex basis with product-form updates.
//!
//! The basis `B` is factorized by right-looking Gaussian elimination with
//! Markowitz pivot selection and threshold partial pivoting. Singletons are
//! taken first, which covers most of a typical basis (logical columns and
//! tree-structured flow rows) without fill.
//!
//! After factorization, column replacements are absorbed as eta vectors
//! until the caller refactorizes.

/// Entries below this magnitude are treated as structural zeros.
const DROP_TOL: f64 = 1e-14;
/// Relative threshold for accepting a pivot against its column maximum.
const THRESHOLD: f64 = 0.01;
/// Absolute magnitude below which a pivot is considered singular.
const SINGULAR_TOL: f64 = 1e-11;
/// Number of acceptable columns examined before settling on a Markowitz pivot.
const SEARCH_COLUMNS: usize = 4;

/// Positions of the basis that could not be pivoted, and the rows left over.
#[derive(Debug, Clone)]
pub(crate) struct Singular {
    pub positions: Vec<usize>,
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
struct Eta {
    pos: usize,
    pivot: f64,
    idx: Vec<usize>,
    val: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct LuFactor {
    m: usize,
    // L: one column eta per elimination step, in order.
    l_row: Vec<usize>,
    l_start: Vec<usize>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    // U: one row per elimination step, in order.
    u_row: Vec<usize>,
    u_pos: Vec<usize>,
    u_diag: Vec<f64>,
    u_start: Vec<usize>,
    u_idx: Vec<usize>,
    u_val: Vec<f64>,
    etas: Vec<Eta>,
}

impl LuFactor {
    /// Factorizes the `m x m` matrix whose column `k` is `columns[k]`
    /// (row indices, values).
    pub(crate) fn factorize(m: usize, columns: &[(Vec<usize>, Vec<f64>)]) -> Result<Self, Singular> {
        assert_eq!(columns.len(), m);
        let mut active = Active::new(m, columns);
        let mut f = LuFactor {
            m,
            l_start: vec![0],
            u_start: vec![0],
            ..Default::default()
        };
        for _ in 0..m {
            let Some((r, c)) = active.choose_pivot() else {
                break;
            };
            active.eliminate(r, c, &mut f);
        }
        if f.u_row.len() < m {
            let positions = (0..m).filter(|&c| !active.col_done[c]).collect();
            let rows = (0..m).filter(|&r| !active.row_done[r]).collect();
            return Err(Singular { positions, rows });
        }
        Ok(f)
    }

    pub(crate) fn num_etas(&self) -> usize {
        self.etas.len()
    }

    pub(crate) fn eta_nnz(&self) -> usize {
        self.etas.iter().map(|e| e.idx.len()).sum()
    }

    pub(crate) fn lu_nnz(&self) -> usize {
        self.l_idx.len() + self.u_idx.len() + self.m
    }

    /// Solves `B x = b`. `b` is indexed by row and is destroyed; the result
    /// is written to `x`, indexed by basis position.
    pub(crate) fn ftran(&self, b: &mut [f64], x: &mut [f64]) {
        for k in 0..self.l_row.len() {
            let piv = b[self.l_row[k]];
            if piv != 0.0 {
                for t in self.l_start[k]..self.l_start[k + 1] {
                    b[self.l_idx[t]] -= self.l_val[t] * piv;
                }
            }
        }
        for k in (0..self.u_row.len()).rev() {
            let mut v = b[self.u_row[k]];
            for t in self.u_start[k]..self.u_start[k + 1] {
                v -= self.u_val[t] * x[self.u_idx[t]];
            }
            x[self.u_pos[k]] = v / self.u_diag[k];
        }
        for eta in &self.etas {
            let xr = x[eta.pos];
            if xr != 0.0 {
                let xr = xr / eta.pivot;
                x[eta.pos] = xr;
                for (&i, &v) in eta.idx.iter().zip(&eta.val) {
                    x[i] -= v * xr;
                }
            }
        }
    }

    /// Solves `B^T y = c`. `c` is indexed by basis position and is destroyed;
    /// the result is written to `y`, indexed by row.
    pub(crate) fn btran(&self, c: &mut [f64], y: &mut [f64]) {
        for eta in self.etas.iter().rev() {
            let mut v = c[eta.pos];
            for (&i, &w) in eta.idx.iter().zip(&eta.val) {
                v -= w * c[i];
            }
            c[eta.pos] = v / eta.pivot;
        }
        for k in 0..self.u_row.len() {
            let z = c[self.u_pos[k]] / self.u_diag[k];
            y[self.u_row[k]] = z;
            if z != 0.0 {
                for t in self.u_start[k]..self.u_start[k + 1] {
                    c[self.u_idx[t]] -= self.u_val[t] * z;
                }
            }
        }
        for k in (0..self.l_row.len()).rev() {
            let mut v = y[self.l_row[k]];
            for t in self.l_start[k]..self.l_start[k + 1] {
                v -= self.l_val[t] * y[self.l_idx[t]];
            }
            y[self.l_row[k]] = v;
        }
    }

    /// Records the replacement of the column at `pos` by a column whose
    /// FTRAN image is `d` (indexed by basis position).
    pub(crate) fn update(&mut self, pos: usize, d: &[f64]) {
        let mut eta = Eta {
            pos,
            pivot: d[pos],
            ..Default::default()
        };
        for (i, &v) in d.iter().enumerate() {
            if i != pos && v.abs() > DROP_TOL {
                eta.idx.push(i);
                eta.val.push(v);
            }
        }
        self.etas.push(eta);
    }
}

/// Active submatrix during elimination.
struct Active {
    rows: Vec<Vec<(usize, f64)>>,
    cols: Vec<Vec<usize>>,
    row_done: Vec<bool>,
    col_done: Vec<bool>,
    col_singletons: Vec<usize>,
    row_singletons: Vec<usize>,
    buckets: Vec<Vec<usize>>,
    bucket_of: Vec<usize>,
    mark: Vec<usize>,
    stamp: Vec<usize>,
    stamp_gen: usize,
}

impl Active {
    fn new(m: usize, columns: &[(Vec<usize>, Vec<f64>)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (c, (idx, val)) in columns.iter().enumerate() {
            for (&r, &v) in idx.iter().zip(val) {
                if v.abs() > DROP_TOL {
                    rows[r].push((c, v));
                    cols[c].push(r);
                }
            }
        }
        let mut a = Active {
            rows,
            cols,
            row_done: vec![false; m],
            col_done: vec![false; m],
            col_singletons: Vec::new(),
            row_singletons: Vec::new(),
            buckets: vec![Vec::new(); m + 2],
            bucket_of: vec![usize::MAX; m],
            mark: vec![usize::MAX; m],
            stamp: vec![0; m],
            stamp_gen: 0,
        };
        for c in 0..m {
            a.col_count_changed(c);
        }
        for r in 0..m {
            if a.rows[r].len() == 1 {
                a.row_singletons.push(r);
            }
        }
        a
    }

    fn col_count_changed(&mut self, c: usize) {
        let n = self.cols[c].len();
        if n == 1 {
            self.col_singletons.push(c);
        }
        if self.bucket_of[c] != n {
            self.bucket_of[c] = n;
            self.buckets[n].push(c);
        }
    }

    fn value(&self, r: usize, c: usize) -> f64 {
        self.rows[r].iter().find(|e| e.0 == c).map(|e| e.1).unwrap_or(0.0)
    }

    fn col_max(&self, c: usize) -> f64 {
        self.cols[c].iter().map(|&r| self.value(r, c).abs()).fold(0.0, f64::max)
    }

    fn choose_pivot(&mut self) -> Option<(usize, usize)> {
        while let Some(c) = self.col_singletons.pop() {
            if self.col_done[c] || self.cols[c].len() != 1 {
                continue;
            }
            let r = self.cols[c][0];
            if self.value(r, c).abs() > SINGULAR_TOL {
                return Some((r, c));
            }
        }
        while let Some(r) = self.row_singletons.pop() {
            if self.row_done[r] || self.rows[r].len() != 1 {
                continue;
            }
            let (c, v) = self.rows[r][0];
            if v.abs() > SINGULAR_TOL && v.abs() >= THRESHOLD * self.col_max(c) {
                return Some((r, c));
            }
        }
        self.markowitz()
    }

    fn markowitz(&mut self) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize)> = None;
        let mut best_cost = usize::MAX;
        let mut best_mag = 0.0;
        let mut examined = 0;
        self.stamp_gen += 1;
        let gen = self.stamp_gen;
        for count in 1..self.buckets.len() {
            if self.buckets[count].is_empty() {
                continue;
            }
            let bucket = std::mem::take(&mut self.buckets[count]);
            let mut kept = Vec::with_capacity(bucket.len());
            for &c in &bucket {
                if self.col_done[c] || self.bucket_of[c] != count || self.stamp[c] == gen {
                    continue;
                }
                self.stamp[c] = gen;
                kept.push(c);
                if self.cols[c].len() != count || examined >= SEARCH_COLUMNS {
                    continue;
                }
                let cmax = self.col_max(c);
                if cmax <= SINGULAR_TOL {
                    continue;
                }
                let mut found = false;
                for &r in &self.cols[c] {
                    let v = self.value(r, c).abs();
                    if v < THRESHOLD * cmax || v <= SINGULAR_TOL {
                        continue;
                    }
                    found = true;
                    let cost = (self.rows[r].len() - 1) * (count - 1);
                    if cost < best_cost || (cost == best_cost && v > best_mag) {
                        best_cost = cost;
                        best_mag = v;
                        best = Some((r, c));
                    }
                }
                if found {
                    examined += 1;
                }
            }
            self.buckets[count] = kept;
            if examined >= SEARCH_COLUMNS {
                break;
            }
        }
        best
    }

    fn eliminate(&mut self, r: usize, c: usize, f: &mut LuFactor) {
        let prow = std::mem::take(&mut self.rows[r]);
        let diag = prow.iter().find(|e| e.0 == c).map(|e| e.1).unwrap();
        self.row_done[r] = true;
        self.col_done[c] = true;

        // U row.
        for &(cc, v) in &prow {
            if cc != c {
                f.u_idx.push(cc);
                f.u_val.push(v);
            }
        }
        f.u_row.push(r);
        f.u_pos.push(c);
        f.u_diag.push(diag);
        f.u_start.push(f.u_idx.len());

        // Detach the pivot row from the column patterns.
        for &(cc, _) in &prow {
            if cc != c {
                if let Some(p) = self.cols[cc].iter().position(|&x| x == r) {
                    self.cols[cc].swap_remove(p);
                }
            }
        }

        // Eliminate the pivot column from the remaining rows.
        let col_rows: Vec<usize> = std::mem::take(&mut self.cols[c])
            .into_iter()
            .filter(|&x| x != r)
            .collect();
        for &rr in &col_rows {
            let row = &mut self.rows[rr];
            let p = row.iter().position(|e| e.0 == c).unwrap();
            let a = row.swap_remove(p).1;
            let mult = a / diag;
            f.l_idx.push(rr);
            f.l_val.push(mult);
            if prow.len() > 1 {
                for (k, e) in row.iter().enumerate() {
                    self.mark[e.0] = k;
                }
                for &(cc, v) in &prow {
                    if cc == c {
                        continue;
                    }
                    let k = self.mark[cc];
                    if k < row.len() && row[k].0 == cc {
                        row[k].1 -= mult * v;
                    } else {
                        row.push((cc, -mult * v));
                        self.cols[cc].push(rr);
                    }
                }
                for e in row.iter() {
                    self.mark[e.0] = usize::MAX;
                }
            }
            if self.rows[rr].len() == 1 {
                self.row_singletons.push(rr);
            }
        }
        f.l_row.push(r);
        f.l_start.push(f.l_idx.len());

        for &(cc, _) in &prow {
            if cc != c {
                self.col_count_changed(cc);
            }
        }
    }
}
