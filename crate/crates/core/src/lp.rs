//! Small dense two-phase simplex: first improving column, largest-pivot
//! ratio test, and Bland's rule as an anti-cycling fallback.
//!
//! Sized for desk-scale feasibility checks (tens of rows, up to a few
//! thousand columns). Always maximizes.

const PIVOT_EPS: f64 = 1e-9;
const FEAS_EPS: f64 = 1e-9;
const MAX_PIVOTS: usize = 200_000;
const BLAND_AFTER: usize = 5_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex pivot limit reached")]
    PivotLimit,
}

#[derive(Debug, Clone)]
struct Row {
    coeffs: Vec<(usize, f64)>,
    rel: Relation,
    rhs: f64,
}

#[derive(Debug, Clone)]
pub struct Lp {
    n: usize,
    free: Vec<bool>,
    objective: Vec<f64>,
    rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
}

impl Lp {
    /// `n` variables, all nonnegative unless marked free.
    pub fn new(n: usize) -> Self {
        Lp { n, free: vec![false; n], objective: vec![0.0; n], rows: Vec::new() }
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn set_free(&mut self, var: usize) {
        self.free[var] = true;
    }

    pub fn set_objective(&mut self, var: usize, coeff: f64) {
        self.objective[var] = coeff;
    }

    pub fn add(&mut self, coeffs: Vec<(usize, f64)>, rel: Relation, rhs: f64) {
        debug_assert!(coeffs.iter().all(|&(j, _)| j < self.n));
        self.rows.push(Row { coeffs, rel, rhs });
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        // Column layout: structural (free vars split in two), then slacks/surplus, then artificials.
        let mut col_of = Vec::with_capacity(self.n);
        let mut ncols = 0;
        for j in 0..self.n {
            col_of.push(ncols);
            ncols += if self.free[j] { 2 } else { 1 };
        }
        let structural = ncols;
        let m = self.rows.len();
        let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::with_capacity(m);
        for r in &self.rows {
            let mut dense = vec![0.0; structural];
            for &(j, a) in &r.coeffs {
                dense[col_of[j]] += a;
                if self.free[j] {
                    dense[col_of[j] + 1] -= a;
                }
            }
            let (mut rel, mut rhs) = (r.rel, r.rhs);
            if rhs < 0.0 {
                dense.iter_mut().for_each(|v| *v = -*v);
                rhs = -rhs;
                rel = match rel {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
            }
            rows.push((dense, rel, rhs));
        }
        let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
        let total = structural + n_slack + n_art;
        let art_start = structural + n_slack;

        let mut t = Tableau { a: vec![vec![0.0; total + 1]; m], basis: vec![0; m], width: total };
        let (mut s, mut a) = (structural, art_start);
        for (i, (dense, rel, rhs)) in rows.into_iter().enumerate() {
            t.a[i][..structural].copy_from_slice(&dense);
            t.a[i][total] = rhs;
            match rel {
                Relation::Le => {
                    t.a[i][s] = 1.0;
                    t.basis[i] = s;
                    s += 1;
                }
                Relation::Ge => {
                    t.a[i][s] = -1.0;
                    s += 1;
                    t.a[i][a] = 1.0;
                    t.basis[i] = a;
                    a += 1;
                }
                Relation::Eq => {
                    t.a[i][a] = 1.0;
                    t.basis[i] = a;
                    a += 1;
                }
            }
        }

        if n_art > 0 {
            let mut c1 = vec![0.0; total];
            for c in c1.iter_mut().skip(art_start) {
                *c = -1.0;
            }
            let v = t.optimize(&c1, total)?;
            if v < -FEAS_EPS {
                return Err(LpError::Infeasible);
            }
            t.expel_artificials(art_start);
        }

        let mut c2 = vec![0.0; total];
        for j in 0..self.n {
            c2[col_of[j]] = self.objective[j];
            if self.free[j] {
                c2[col_of[j] + 1] = -self.objective[j];
            }
        }
        let value = t.optimize(&c2, art_start)?;
        let mut xs = vec![0.0; total];
        for (i, &b) in t.basis.iter().enumerate() {
            xs[b] = t.a[i][t.width];
        }
        let x =
            (0..self.n).map(|j| if self.free[j] { xs[col_of[j]] - xs[col_of[j] + 1] } else { xs[col_of[j]] }).collect();
        Ok(LpSolution { x, value })
    }
}

struct Tableau {
    a: Vec<Vec<f64>>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    /// Maximize `c·x` over the current basis; columns at or beyond `allowed` never enter.
    fn optimize(&mut self, c: &[f64], allowed: usize) -> Result<f64, LpError> {
        let w = self.width;
        for pivots in 0..MAX_PIVOTS {
            // reduced cost d_j = c_j - c_B B^-1 A_j; Bland: first improving column.
            let mut enter = None;
            for j in 0..allowed {
                if self.basis.contains(&j) {
                    continue;
                }
                let mut d = c[j];
                for (i, &b) in self.basis.iter().enumerate() {
                    d -= c[b] * self.a[i][j];
                }
                if d > FEAS_EPS {
                    enter = Some(j);
                    break;
                }
            }
            let Some(j) = enter else {
                let v = self.basis.iter().enumerate().map(|(i, &b)| c[b] * self.a[i][w]).sum();
                return Ok(v);
            };
            // ratio test; ties go to the largest pivot element for accuracy,
            // falling back to Bland's lowest basis index after many pivots
            let bland = pivots > BLAND_AFTER;
            let mut best = f64::INFINITY;
            for row in &self.a {
                if row[j] > PIVOT_EPS {
                    best = best.min(row[w].max(0.0) / row[j]);
                }
            }
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.a.len() {
                let aij = self.a[i][j];
                if aij <= PIVOT_EPS || self.a[i][w].max(0.0) / aij > best + 1e-12 {
                    continue;
                }
                leave = match leave {
                    Some((k, ak)) if (bland && self.basis[k] < self.basis[i]) || (!bland && ak >= aij) => Some((k, ak)),
                    _ => Some((i, aij)),
                };
            }
            let Some((i, _)) = leave else {
                return Err(LpError::Unbounded);
            };
            self.pivot(i, j);
        }
        Err(LpError::PivotLimit)
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.a[r][c];
        for v in self.a[r].iter_mut() {
            *v /= p;
        }
        let prow = self.a[r].clone();
        for (i, row) in self.a.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (x, y) in row.iter_mut().zip(&prow) {
                    *x -= f * y;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// After phase one, pivot zero-valued artificials out of the basis or drop
    /// their (redundant) rows.
    fn expel_artificials(&mut self, art_start: usize) {
        let mut i = 0;
        while i < self.a.len() {
            if self.basis[i] >= art_start {
                let col = (0..art_start).find(|&j| !self.basis.contains(&j) && self.a[i][j].abs() > 1e-9);
                match col {
                    Some(j) => {
                        self.pivot(i, j);
                        i += 1;
                    }
                    None => {
                        self.a.remove(i);
                        self.basis.remove(i);
                    }
                }
            } else {
                i += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_max() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let mut lp = Lp::new(2);
        lp.set_objective(0, 3.0);
        lp.set_objective(1, 5.0);
        lp.add(vec![(0, 1.0)], Relation::Le, 4.0);
        lp.add(vec![(1, 2.0)], Relation::Le, 12.0);
        lp.add(vec![(0, 3.0), (1, 2.0)], Relation::Le, 18.0);
        let s = lp.solve().unwrap();
        assert!((s.value - 36.0).abs() < 1e-9);
        assert!((s.x[0] - 2.0).abs() < 1e-9 && (s.x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_ge_rows() {
        // max -x - y s.t. x + y = 1, x >= 0.3 -> value -1
        let mut lp = Lp::new(2);
        lp.set_objective(0, -1.0);
        lp.set_objective(1, -1.0);
        lp.add(vec![(0, 1.0), (1, 1.0)], Relation::Eq, 1.0);
        lp.add(vec![(0, 1.0)], Relation::Ge, 0.3);
        let s = lp.solve().unwrap();
        assert!((s.value + 1.0).abs() < 1e-9);
        assert!(s.x[0] >= 0.3 - 1e-9);
    }

    #[test]
    fn free_variable_goes_negative() {
        // max s s.t. s <= -0.25 with s free
        let mut lp = Lp::new(1);
        lp.set_free(0);
        lp.set_objective(0, 1.0);
        lp.add(vec![(0, 1.0)], Relation::Le, -0.25);
        let s = lp.solve().unwrap();
        assert!((s.x[0] + 0.25).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = Lp::new(1);
        lp.add(vec![(0, 1.0)], Relation::Ge, 2.0);
        lp.add(vec![(0, 1.0)], Relation::Le, 1.0);
        assert_eq!(lp.solve(), Err(LpError::Infeasible));

        let mut lp = Lp::new(2);
        lp.set_objective(0, 1.0);
        lp.add(vec![(0, 1.0), (1, -1.0)], Relation::Le, 1.0);
        assert_eq!(lp.solve(), Err(LpError::Unbounded));
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = Lp::new(2);
        lp.set_objective(0, 1.0);
        lp.add(vec![(0, 1.0), (1, 1.0)], Relation::Eq, 1.0);
        lp.add(vec![(0, 2.0), (1, 2.0)], Relation::Eq, 2.0);
        let s = lp.solve().unwrap();
        assert!((s.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_problem_terminates() {
        // Classic Beale cycling example; Bland's rule must terminate.
        let mut lp = Lp::new(4);
        for (j, c) in [0.75, -20.0, 0.5, -6.0].into_iter().enumerate() {
            lp.set_objective(j, c);
        }
        lp.add(vec![(0, 0.25), (1, -8.0), (2, -1.0), (3, 9.0)], Relation::Le, 0.0);
        lp.add(vec![(0, 0.5), (1, -12.0), (2, -0.5), (3, 3.0)], Relation::Le, 0.0);
        lp.add(vec![(2, 1.0)], Relation::Le, 1.0);
        let s = lp.solve().unwrap();
        assert!((s.value - 1.25).abs() < 1e-9);
    }
}
