use std::collections::BTreeMap;

use crate::network::NetworkSpec;

use super::{AnalysisError, Component, FractionalRouting, PolicyDistribution};

const ZERO: f64 = 1e-15;
const INPUT_TOL: f64 = 1e-9;

/// Birkhoff–von Neumann decomposition of a substochastic n×m matrix into a
/// distribution over partial matchings given as (row, col) pairs.
pub fn decompose_bvn(p: &[Vec<f64>]) -> Result<PolicyDistribution, AnalysisError> {
    let n = p.len();
    let m = p.first().map_or(0, Vec::len);
    if p.iter().any(|r| r.len() != m) {
        return Err(AnalysisError::NotSubstochastic("ragged matrix".into()));
    }
    for (i, row) in p.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() || v < -INPUT_TOL {
                return Err(AnalysisError::NotSubstochastic(format!("entry ({i},{j}) = {v}")));
            }
        }
        let s: f64 = row.iter().sum();
        if s > 1.0 + INPUT_TOL {
            return Err(AnalysisError::NotSubstochastic(format!("row {i} sums to {s}")));
        }
    }
    for j in 0..m {
        let s: f64 = p.iter().map(|r| r[j]).sum();
        if s > 1.0 + INPUT_TOL {
            return Err(AnalysisError::NotSubstochastic(format!("column {j} sums to {s}")));
        }
    }

    let size = n + m;
    let mut b = vec![vec![0.0; size]; size];
    for i in 0..n {
        for j in 0..m {
            let v = p[i][j].max(0.0);
            b[i][j] = v;
            b[n + j][m + i] = v;
        }
        b[i][m + i] = (1.0 - p[i].iter().map(|v| v.max(0.0)).sum::<f64>()).max(0.0);
    }
    for j in 0..m {
        b[n + j][j] = (1.0 - p.iter().map(|r| r[j].max(0.0)).sum::<f64>()).max(0.0);
    }

    let mut found: BTreeMap<Vec<(usize, usize)>, f64> = BTreeMap::new();
    loop {
        let remaining: f64 = b.iter().map(|r| r.iter().sum::<f64>()).fold(0.0, f64::max);
        if remaining <= 1e-13 || size == 0 {
            break;
        }
        let Some(perm) = perfect_matching(&b) else {
            return Err(AnalysisError::NotSubstochastic("support lost a perfect matching".into()));
        };
        let theta = perm.iter().enumerate().map(|(r, &c)| b[r][c]).fold(f64::INFINITY, f64::min);
        for (r, &c) in perm.iter().enumerate() {
            b[r][c] -= theta;
            if b[r][c] <= ZERO {
                b[r][c] = 0.0;
            }
        }
        let edges: Vec<(usize, usize)> = (0..n).filter(|&i| perm[i] < m).map(|i| (i, perm[i])).collect();
        *found.entry(edges).or_insert(0.0) += theta;
    }
    if size == 0 {
        found.insert(Vec::new(), 1.0);
    }

    let nnz = p.iter().flatten().filter(|&&v| v > 0.0).count();
    let mut components: Vec<Component> = found.into_iter().map(|(edges, prob)| Component { edges, prob }).collect();
    reduce_support(&mut components, nnz + n);
    Ok(PolicyDistribution { components })
}

/// Decompose edge variables into a distribution over vertex-disjoint edge sets
/// by running the matrix decomposition on the split graph.
pub fn decompose_paths(net: &NetworkSpec, z: &FractionalRouting) -> Result<PolicyDistribution, AnalysisError> {
    z.check_substochastic(net, INPUT_TOL)?;
    let sg = net.split();
    let mut mat = vec![vec![0.0; sg.right.len()]; sg.left.len()];
    for e in &sg.edges {
        mat[e.left][e.right] = z.get(e.tail, e.head).max(0.0);
    }
    let dist = decompose_bvn(&mat)?;
    Ok(PolicyDistribution {
        components: dist
            .components
            .into_iter()
            .map(|c| Component { edges: sg.decode(&c.edges), prob: c.prob })
            .collect(),
    })
}

/// Kuhn's augmenting paths on the positive support; rows and columns are tried
/// in increasing index order. Returns row → column.
fn perfect_matching(b: &[Vec<f64>]) -> Option<Vec<usize>> {
    let n = b.len();
    let mut col_owner = vec![usize::MAX; n];
    for r in 0..n {
        let mut seen = vec![false; n];
        if !augment(r, b, &mut seen, &mut col_owner) {
            return None;
        }
    }
    let mut row_to_col = vec![0; n];
    for (c, &r) in col_owner.iter().enumerate() {
        row_to_col[r] = c;
    }
    Some(row_to_col)
}

fn augment(r: usize, b: &[Vec<f64>], seen: &mut [bool], owner: &mut [usize]) -> bool {
    for c in 0..b.len() {
        if b[r][c] > 0.0 && !seen[c] {
            seen[c] = true;
            if owner[c] == usize::MAX || augment(owner[c], b, seen, owner) {
                owner[c] = r;
                return true;
            }
        }
    }
    false
}

/// Carathéodory reduction: shift weight along affine dependencies until at most
/// `limit` components remain. Marginals and total probability are preserved.
fn reduce_support(components: &mut Vec<Component>, limit: usize) {
    let limit = limit.max(1);
    while components.len() > limit {
        let mut keys: Vec<(usize, usize)> = components.iter().flat_map(|c| c.edges.iter().copied()).collect();
        keys.sort_unstable();
        keys.dedup();
        let dim = keys.len() + 1;
        let take = (dim + 1).min(components.len());
        // columns are the first `take` components as (indicator, 1)
        let mut a = vec![vec![0.0; take]; dim];
        for (k, c) in components.iter().take(take).enumerate() {
            for e in &c.edges {
                let row = keys.binary_search(e).expect("edge listed");
                a[row][k] = 1.0;
            }
            a[dim - 1][k] = 1.0;
        }
        let Some(coef) = null_vector(a, take) else { return };
        let theta = coef
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 1e-12)
            .map(|(k, &c)| components[k].prob / c)
            .fold(f64::INFINITY, f64::min);
        for (k, &c) in coef.iter().enumerate() {
            components[k].prob -= theta * c;
        }
        let before = components.len();
        components.retain(|c| c.prob > 1e-15);
        if components.len() == before {
            // numerical stall; stop rather than distort marginals
            return;
        }
    }
}

/// A nonzero vector in the null space of a (rows × cols) matrix, if any.
fn null_vector(mut a: Vec<Vec<f64>>, cols: usize) -> Option<Vec<f64>> {
    let rows = a.len();
    let mut pivot_cols = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let Some(best) = (r..rows).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())) else { break };
        if a[best][c].abs() < 1e-12 {
            continue;
        }
        a.swap(r, best);
        let p = a[r][c];
        for v in a[r].iter_mut() {
            *v /= p;
        }
        for i in 0..rows {
            if i != r && a[i][c] != 0.0 {
                let f = a[i][c];
                for k in 0..cols {
                    a[i][k] -= f * a[r][k];
                }
            }
        }
        pivot_cols.push(c);
        r += 1;
    }
    let free = (0..cols).find(|c| !pivot_cols.contains(c))?;
    let mut x = vec![0.0; cols];
    x[free] = 1.0;
    for (row, &pc) in pivot_cols.iter().enumerate() {
        x[pc] = -a[row][free];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn check_marginals(p: &[Vec<f64>], d: &PolicyDistribution) {
        assert!((d.total_prob() - 1.0).abs() < 1e-9);
        for (i, row) in p.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!((d.marginal(i, j) - v).abs() < 1e-9);
            }
        }
        assert!(d.all_disjoint());
    }

    #[test]
    fn permutation_is_its_own_decomposition() {
        let p = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]];
        let d = decompose_bvn(&p).unwrap();
        assert_eq!(d.components.len(), 1);
        assert_eq!(d.components[0].edges, vec![(0, 1), (1, 2), (2, 0)]);
        assert!((d.components[0].prob - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_two_by_two_splits_evenly() {
        let p = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let d = decompose_bvn(&p).unwrap();
        assert_eq!(d.components.len(), 2);
        let mut got: Vec<_> = d.components.iter().map(|c| (c.edges.clone(), c.prob)).collect();
        got.sort_by(|a, b| a.0.cmp(&b.0));
        assert_eq!(got[0].0, vec![(0, 0), (1, 1)]);
        assert_eq!(got[1].0, vec![(0, 1), (1, 0)]);
        assert!((got[0].1 - 0.5).abs() < 1e-12 && (got[1].1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_row_is_never_matched() {
        let p = vec![vec![0.3, 0.2], vec![0.0, 0.0], vec![0.1, 0.6]];
        let d = decompose_bvn(&p).unwrap();
        check_marginals(&p, &d);
        assert!(d.components.iter().all(|c| c.edges.iter().all(|e| e.0 != 1)));
    }

    #[test]
    fn rejects_overfull_rows() {
        assert!(matches!(decompose_bvn(&[vec![0.7, 0.5]]), Err(AnalysisError::NotSubstochastic(_))));
        assert!(matches!(decompose_bvn(&[vec![0.7], vec![0.5]]), Err(AnalysisError::NotSubstochastic(_))));
    }

    #[test]
    fn myopic_trap_routing_splits_into_three_ensembles() {
        let net = fixtures::myopic_trap();
        let id = |s: &str| net.lookup(s).unwrap();
        let mut z = FractionalRouting::new();
        z.set(id("1"), id("5"), 0.4);
        z.set(id("2"), id("5"), 0.4);
        z.set(id("5"), id("8"), 1.0);
        let d = decompose_paths(&net, &z).unwrap();
        assert!(d.reconstruction_error(&z) < 1e-12);
        let mut got: Vec<_> = d.components.iter().map(|c| (c.edges.clone(), c.prob)).collect();
        got.sort_by(|a, b| a.0.cmp(&b.0));
        let want = vec![
            (vec![(id("1"), id("5")), (id("5"), id("8"))], 0.4),
            (vec![(id("2"), id("5")), (id("5"), id("8"))], 0.4),
            (vec![(id("5"), id("8"))], 0.2),
        ];
        assert_eq!(got.len(), 3);
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(g.0, w.0);
            assert!((g.1 - w.1).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_routing_is_one_empty_ensemble() {
        let net = fixtures::myopic_trap();
        let d = decompose_paths(&net, &FractionalRouting::new()).unwrap();
        assert_eq!(d.components, vec![Component { edges: vec![], prob: 1.0 }]);
    }

    #[test]
    fn null_vector_finds_dependency() {
        let a = vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]];
        let x = null_vector(a, 3).unwrap();
        assert!((x[0] + x[2]).abs() < 1e-12 && (x[1] + x[2]).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn random_substochastic_matrices_reconstruct(
            n in 1usize..6, m in 1usize..6,
            raw in proptest::collection::vec(0.0f64..1.0, 36),
            sparsity in proptest::collection::vec(proptest::bool::ANY, 36),
        ) {
            let mut p: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..m).map(|j| if sparsity[i * 6 + j] { raw[i * 6 + j] } else { 0.0 }).collect())
                .collect();
            // scale into the substochastic region
            let max_line = (0..n).map(|i| p[i].iter().sum::<f64>())
                .chain((0..m).map(|j| p.iter().map(|r| r[j]).sum::<f64>()))
                .fold(0.0, f64::max);
            if max_line > 1.0 {
                for v in p.iter_mut().flatten() { *v /= max_line; }
            }
            let d = decompose_bvn(&p).unwrap();
            let nnz = p.iter().flatten().filter(|&&v| v > 0.0).count();
            proptest::prop_assert!(d.components.len() <= nnz + n);
            check_marginals(&p, &d);
        }
    }
}
