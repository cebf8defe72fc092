//! Maximum-weight bipartite matching via the O(n^3) Hungarian method.

/// A matching as (row, col) pairs plus its total weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    pub value: f64,
}

/// Max-weight matching over a rectangular weight matrix. `None` entries are
/// absent edges; nonpositive weights are treated as absent.
pub fn max_weight_matching(weights: &[Vec<Option<f64>>]) -> Matching {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    let n = rows.max(cols);
    if n == 0 {
        return Matching { pairs: Vec::new(), value: 0.0 };
    }
    let gain = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            match weights[i][j] {
                Some(w) if w > 0.0 => w,
                _ => 0.0,
            }
        } else {
            0.0
        }
    };

    // Min-cost assignment on cost = -gain, 1-based potentials.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = -gain(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs = Vec::new();
    let mut value = 0.0;
    for j in 1..=n {
        let (r, c) = (p[j] - 1, j - 1);
        if r < rows && c < cols {
            if let Some(w) = weights[r][c] {
                if w > 0.0 {
                    pairs.push((r, c));
                    value += w;
                }
            }
        }
    }
    pairs.sort_unstable();
    Matching { pairs, value }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(weights: &[Vec<Option<f64>>]) -> f64 {
        fn go(i: usize, used: &mut Vec<bool>, w: &[Vec<Option<f64>>]) -> f64 {
            if i == w.len() {
                return 0.0;
            }
            let mut best = go(i + 1, used, w);
            for j in 0..used.len() {
                if let Some(x) = w[i][j] {
                    if !used[j] && x > 0.0 {
                        used[j] = true;
                        best = best.max(x + go(i + 1, used, w));
                        used[j] = false;
                    }
                }
            }
            best
        }
        let cols = weights.first().map_or(0, Vec::len);
        go(0, &mut vec![false; cols], weights)
    }

    #[test]
    fn picks_heavier_assignment() {
        let w = vec![vec![Some(1.0), Some(5.0)], vec![Some(4.0), Some(1.0)]];
        let m = max_weight_matching(&w);
        assert_eq!(m.pairs, vec![(0, 1), (1, 0)]);
        assert!((m.value - 9.0).abs() < 1e-12);
    }

    #[test]
    fn rectangular_and_missing_edges() {
        let w = vec![vec![None, Some(2.0), Some(-1.0)], vec![None, Some(3.0), None]];
        let m = max_weight_matching(&w);
        assert_eq!(m.pairs, vec![(1, 1)]);
        assert!((m.value - 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(max_weight_matching(&[]).pairs, vec![]);
        let m = max_weight_matching(&[vec![Some(0.0)]]);
        assert!(m.pairs.is_empty());
    }

    proptest::proptest! {
        #[test]
        fn agrees_with_enumeration(
            rows in 1usize..5, cols in 1usize..5,
            raw in proptest::collection::vec(proptest::option::of(-1.0f64..3.0), 25)
        ) {
            let w: Vec<Vec<Option<f64>>> =
                (0..rows).map(|i| (0..cols).map(|j| raw[i * 5 + j]).collect()).collect();
            let m = max_weight_matching(&w);
            proptest::prop_assert!((m.value - brute(&w)).abs() < 1e-9);
            let mut rs: Vec<_> = m.pairs.iter().map(|p| p.0).collect();
            let mut cs: Vec<_> = m.pairs.iter().map(|p| p.1).collect();
            rs.dedup();
            cs.sort_unstable();
            cs.dedup();
            proptest::prop_assert_eq!(rs.len(), m.pairs.len());
            proptest::prop_assert_eq!(cs.len(), m.pairs.len());
        }
    }
}
