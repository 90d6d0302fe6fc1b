//! Tree decoding from arc scores.
//!
//! Score matrices are `(n + 1) × n`: row `h` is the candidate head
//! (0 = root), column `d` is dependent `d + 1`. Returned heads are 1-based
//! with 0 for the root, one per dependent.

use crate::numerics::Matrix;

/// Maximum spanning arborescence rooted at 0 with exactly one root child.
///
/// Each candidate root child is tried in turn with Chu-Liu/Edmonds on the
/// remaining arcs; the best tree wins, earlier candidates on ties.
pub fn mst_decode(scores: &Matrix) -> Vec<usize> {
    let n = scores.cols();
    assert_eq!(scores.rows(), n + 1, "arc scores must be (n+1) × n");
    if n == 0 {
        return Vec::new();
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for child in 1..=n {
        let mut dense = vec![vec![f64::NEG_INFINITY; n + 1]; n + 1];
        for (h, row) in dense.iter_mut().enumerate() {
            for d in 1..=n {
                if h == d || (h == 0 && d != child) {
                    continue;
                }
                row[d] = scores[(h, d - 1)];
            }
        }
        let heads = chu_liu_edmonds(&dense);
        let total: f64 = (1..=n).map(|d| dense[heads[d]][d]).sum();
        if best.as_ref().is_none_or(|(s, _)| total > *s) {
            best = Some((total, heads));
        }
    }
    best.expect("at least one candidate").1[1..].to_vec()
}

/// Per-dependent argmax head (self excluded), lowest head on ties. The
/// result need not be a tree.
pub fn greedy_decode(scores: &Matrix) -> Vec<usize> {
    let n = scores.cols();
    (0..n)
        .map(|d| {
            let mut best = usize::MAX;
            let mut best_score = f64::NEG_INFINITY;
            for h in 0..=n {
                if h == d + 1 {
                    continue;
                }
                if best == usize::MAX || scores[(h, d)] > best_score {
                    best = h;
                    best_score = scores[(h, d)];
                }
            }
            best
        })
        .collect()
}

/// Sum of the chosen arcs' scores.
pub fn tree_score(scores: &Matrix, heads: &[usize]) -> f64 {
    heads.iter().enumerate().map(|(d, &h)| scores[(h, d)]).sum()
}

/// Chu-Liu/Edmonds on a dense `score[h][d]` matrix over nodes `0..m`, node 0
/// being the root. `NEG_INFINITY` marks a forbidden arc. Returns `heads`
/// with `heads[0]` unused.
fn chu_liu_edmonds(score: &[Vec<f64>]) -> Vec<usize> {
    let m = score.len();
    let mut heads = vec![0usize; m];
    for d in 1..m {
        let mut best = usize::MAX;
        for h in 0..m {
            if h != d
                && score[h][d] > f64::NEG_INFINITY
                && (best == usize::MAX || score[h][d] > score[best][d])
            {
                best = h;
            }
        }
        heads[d] = best;
    }
    let cycle = match find_cycle(&heads) {
        Some(c) => c,
        None => return heads,
    };
    let mut in_cycle = vec![false; m];
    for &v in &cycle {
        in_cycle[v] = true;
    }
    // Contracted graph: surviving nodes keep their order, the cycle becomes
    // the last node.
    let kept: Vec<usize> = (0..m).filter(|&v| !in_cycle[v]).collect();
    let c = kept.len();
    let mut new_index = vec![usize::MAX; m];
    for (i, &v) in kept.iter().enumerate() {
        new_index[v] = i;
    }
    let mut contracted = vec![vec![f64::NEG_INFINITY; c + 1]; c + 1];
    let mut enter = vec![usize::MAX; c + 1];
    let mut leave = vec![usize::MAX; c + 1];
    for (i, &u) in kept.iter().enumerate() {
        for (j, &v) in kept.iter().enumerate() {
            if i != j {
                contracted[i][j] = score[u][v];
            }
        }
        for &v in &cycle {
            let s = score[u][v];
            if s == f64::NEG_INFINITY {
                continue;
            }
            let gain = s - score[heads[v]][v];
            if enter[i] == usize::MAX || gain > contracted[i][c] {
                contracted[i][c] = gain;
                enter[i] = v;
            }
        }
        for &v in &cycle {
            let s = score[v][u];
            if s == f64::NEG_INFINITY {
                continue;
            }
            if leave[i] == usize::MAX || s > contracted[c][i] {
                contracted[c][i] = s;
                leave[i] = v;
            }
        }
    }
    let sub = chu_liu_edmonds(&contracted);
    let mut out = heads.clone();
    for (i, &v) in kept.iter().enumerate().skip(1) {
        out[v] = if sub[i] == c { leave[i] } else { kept[sub[i]] };
    }
    let entering_from = kept[sub[c]];
    out[enter[new_index[entering_from]]] = entering_from;
    out
}

fn find_cycle(heads: &[usize]) -> Option<Vec<usize>> {
    let m = heads.len();
    let mut color = vec![0u8; m];
    color[0] = 2;
    for start in 1..m {
        if color[start] != 0 {
            continue;
        }
        let mut path = Vec::new();
        let mut v = start;
        while color[v] == 0 {
            color[v] = 1;
            path.push(v);
            v = heads[v];
        }
        if color[v] == 1 {
            let pos = path.iter().position(|&p| p == v).expect("on path");
            return Some(path[pos..].to_vec());
        }
        for p in path {
            color[p] = 2;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::check_tree;
    use crate::numerics::rng;

    fn brute_force(scores: &Matrix) -> f64 {
        let n = scores.cols();
        let mut best = f64::NEG_INFINITY;
        let mut heads = vec![0usize; n];
        let total = (n + 1).pow(n as u32);
        for code in 0..total {
            let mut c = code;
            for h in heads.iter_mut() {
                *h = c % (n + 1);
                c /= n + 1;
            }
            if heads.iter().filter(|&&h| h == 0).count() != 1 || check_tree(&heads).is_err() {
                continue;
            }
            best = best.max(tree_score(scores, &heads));
        }
        best
    }

    #[test]
    fn single_token() {
        assert_eq!(
            mst_decode(&Matrix::from_rows(&[vec![0.3], vec![9.0]]).unwrap()),
            vec![0]
        );
    }

    #[test]
    fn two_tokens() {
        // root→1 = 5, root→2 = 1, 1→2 = 4, 2→1 = 0.
        let s = Matrix::from_rows(&[vec![5.0, 1.0], vec![0.0, 4.0], vec![0.0, 0.0]]).unwrap();
        let heads = mst_decode(&s);
        assert_eq!(heads, vec![0, 1]);
        assert_eq!(tree_score(&s, &heads), 9.0);
    }

    #[test]
    fn single_root_enforced() {
        // Unconstrained best would attach both tokens to the root.
        let s = Matrix::from_rows(&[vec![10.0, 10.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let heads = mst_decode(&s);
        assert_eq!(heads.iter().filter(|&&h| h == 0).count(), 1);
        assert_eq!(heads, vec![0, 1]);
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut r = rng::seeded(42);
        for _ in 0..100 {
            let s = Matrix::randn(6, 5, 1.0, &mut r);
            let heads = mst_decode(&s);
            assert!(check_tree(&heads).is_ok());
            assert!((tree_score(&s, &heads) - brute_force(&s)).abs() <= 1e-12);
        }
    }

    #[test]
    fn greedy_picks_column_maxima() {
        let s = Matrix::from_rows(&[vec![1.0, 0.0], vec![9.0, 2.0], vec![3.0, 0.5]]).unwrap();
        assert_eq!(greedy_decode(&s), vec![2, 1]);
    }
}
