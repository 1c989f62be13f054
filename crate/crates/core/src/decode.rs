//! Tree decoding from arc score matrices.
//!
//! An arc matrix has one row per dependent (tokens 1..n) and one column
//! per candidate head (0 = root, then tokens 1..n). Masked entries are
//! `f64::NEG_INFINITY`.

use crate::tensor::{Scalar, Tensor};

pub const BRUTE_FORCE_MAX: usize = 7;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DecodeError {
    #[error("cannot decode an empty sentence")]
    Empty,
    #[error("row {row} has {found} columns, expected {expected}")]
    Shape { row: usize, found: usize, expected: usize },
    #[error("exhaustive search is limited to {max} tokens, got {n}")]
    TooLarge { n: usize, max: usize },
}

/// Predicted heads and labels for one sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseTree {
    pub heads: Vec<usize>,
    pub labels: Vec<usize>,
    pub is_tree: bool,
}

impl ParseTree {
    pub fn new(heads: Vec<usize>, labels: Vec<usize>) -> Self {
        let is_tree = is_tree(&heads);
        ParseTree { heads, labels, is_tree }
    }
}

fn check(arc: &[Vec<f64>]) -> Result<usize, DecodeError> {
    let n = arc.len();
    if n == 0 {
        return Err(DecodeError::Empty);
    }
    for (row, r) in arc.iter().enumerate() {
        if r.len() != n + 1 {
            return Err(DecodeError::Shape { row, found: r.len(), expected: n + 1 });
        }
    }
    Ok(n)
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = j;
        }
    }
    best
}

/// Each dependent takes its highest-scoring head. The result may contain cycles.
pub fn greedy_heads(arc: &[Vec<f64>]) -> Vec<usize> {
    arc.iter().map(|row| argmax(row)).collect()
}

/// True when every token reaches the root by following heads.
pub fn is_tree(heads: &[usize]) -> bool {
    let n = heads.len();
    if heads.iter().enumerate().any(|(i, &h)| h > n || h == i + 1) {
        return false;
    }
    // 0 = unvisited, 1 = on current path, 2 = reaches root
    let mut state = vec![0u8; n + 1];
    state[0] = 2;
    for start in 1..=n {
        let mut path = Vec::new();
        let mut v = start;
        while state[v] == 0 {
            state[v] = 1;
            path.push(v);
            v = heads[v - 1];
        }
        if state[v] == 1 {
            return false;
        }
        for p in path {
            state[p] = 2;
        }
    }
    true
}

pub fn tree_score(arc: &[Vec<f64>], heads: &[usize]) -> f64 {
    heads.iter().enumerate().map(|(i, &h)| arc[i][h]).sum()
}

/// Maximum spanning arborescence rooted at 0 (Chu-Liu/Edmonds). With
/// `single_root`, exactly one token attaches to the root.
pub fn mst_decode(arc: &[Vec<f64>], single_root: bool) -> Result<Vec<usize>, DecodeError> {
    let n = check(arc)?;
    let greedy = greedy_heads(arc);
    let roots = |h: &[usize]| h.iter().filter(|&&x| x == 0).count();
    if is_tree(&greedy) && (!single_root || roots(&greedy) == 1) {
        return Ok(greedy);
    }
    let free = chu_liu_edmonds(&to_graph(arc, None));
    if !single_root || roots(&free) == 1 {
        return Ok(free);
    }
    // The unconstrained optimum has several root children; try each token
    // as the only one and keep the best (first on ties).
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 1..=n {
        if arc[r - 1][0] == f64::NEG_INFINITY {
            continue;
        }
        let heads = chu_liu_edmonds(&to_graph(arc, Some(r)));
        let score = tree_score(arc, &heads);
        if best.as_ref().map_or(true, |(s, _)| score > *s) {
            best = Some((score, heads));
        }
    }
    Ok(best.map(|(_, h)| h).unwrap_or(free))
}

/// `w[d][h]` over nodes 0..=n with the root never a dependent. When
/// `root_child` is set, every other token loses its root arc.
fn to_graph(arc: &[Vec<f64>], root_child: Option<usize>) -> Vec<Vec<f64>> {
    let n = arc.len();
    let mut w = vec![vec![f64::NEG_INFINITY; n + 1]; n + 1];
    for d in 1..=n {
        for h in 0..=n {
            if h != d {
                w[d][h] = arc[d - 1][h];
            }
        }
        if let Some(r) = root_child {
            if d != r {
                w[d][0] = f64::NEG_INFINITY;
            }
        }
    }
    w
}

/// Returns the head of nodes 1..m for the arborescence over `w` rooted at 0.
fn chu_liu_edmonds(w: &[Vec<f64>]) -> Vec<usize> {
    let m = w.len();
    let best: Vec<usize> = (0..m)
        .map(|d| if d == 0 { 0 } else { argmax(&w[d]) })
        .collect();
    let Some(cycle) = find_cycle(&best) else {
        return best[1..].to_vec();
    };
    let mut in_cycle = vec![false; m];
    for &v in &cycle {
        in_cycle[v] = true;
    }
    // contracted graph: surviving nodes keep their order, the cycle becomes the last node
    let mut index = vec![usize::MAX; m];
    let mut outside = Vec::new();
    for v in 0..m {
        if !in_cycle[v] {
            index[v] = outside.len();
            outside.push(v);
        }
    }
    let c = outside.len();
    let mut cw = vec![vec![f64::NEG_INFINITY; c + 1]; c + 1];
    // for arcs entering the cycle from u: which cycle node receives it
    let mut enter = vec![usize::MAX; c + 1];
    // for arcs leaving the cycle into v: which cycle node is the head
    let mut leave = vec![usize::MAX; c + 1];
    for (iv, &v) in outside.iter().enumerate() {
        for (iu, &u) in outside.iter().enumerate() {
            cw[iv][iu] = w[v][u];
        }
        let mut best_leave = f64::NEG_INFINITY;
        for &u in &cycle {
            if leave[iv] == usize::MAX || w[v][u] > best_leave {
                best_leave = w[v][u];
                leave[iv] = u;
            }
        }
        cw[iv][c] = best_leave;
    }
    for (iu, &u) in outside.iter().enumerate() {
        let mut best_enter = f64::NEG_INFINITY;
        for &v in &cycle {
            let gain = w[v][u] - w[v][best[v]];
            if enter[iu] == usize::MAX || gain > best_enter {
                best_enter = gain;
                enter[iu] = v;
            }
        }
        cw[c][iu] = best_enter;
    }
    for row in cw.iter_mut().take(1) {
        row.fill(f64::NEG_INFINITY);
    }
    let sub = chu_liu_edmonds(&cw);
    let mut heads = vec![0usize; m];
    for &v in &cycle {
        heads[v] = best[v];
    }
    for (iv, &v) in outside.iter().enumerate().skip(1) {
        let h = sub[iv - 1];
        heads[v] = if h == c { leave[iv] } else { outside[h] };
    }
    let h = sub[c - 1];
    heads[enter[h]] = outside[h];
    heads[1..].to_vec()
}

/// Some cycle in the head function `best` (node 0 is the root), or `None`.
fn find_cycle(best: &[usize]) -> Option<Vec<usize>> {
    let m = best.len();
    let mut state = vec![0u8; m];
    state[0] = 2;
    for start in 1..m {
        let mut path = Vec::new();
        let mut v = start;
        while state[v] == 0 {
            state[v] = 1;
            path.push(v);
            v = best[v];
        }
        if state[v] == 1 {
            let pos = path.iter().position(|&p| p == v).unwrap();
            return Some(path[pos..].to_vec());
        }
        for p in path {
            state[p] = 2;
        }
    }
    None
}

/// Exhaustive search over all head assignments; the lexicographically
/// smallest optimal tree wins ties.
pub fn brute_force_best_tree(arc: &[Vec<f64>], single_root: bool) -> Result<Vec<usize>, DecodeError> {
    let n = check(arc)?;
    if n > BRUTE_FORCE_MAX {
        return Err(DecodeError::TooLarge { n, max: BRUTE_FORCE_MAX });
    }
    let mut heads = vec![0usize; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let roots = heads.iter().filter(|&&h| h == 0).count();
        if is_tree(&heads) && (!single_root || roots == 1) {
            let s = tree_score(arc, &heads);
            if s > f64::NEG_INFINITY && best.as_ref().map_or(true, |(b, _)| s > *b) {
                best = Some((s, heads.clone()));
            }
        }
        // odometer over heads, last position fastest
        let mut k = n;
        loop {
            if k == 0 {
                return Ok(best.map(|(_, h)| h).unwrap_or_else(|| vec![0; n]));
            }
            k -= 1;
            if heads[k] < n {
                heads[k] += 1;
                break;
            }
            heads[k] = 0;
        }
    }
}

/// Row-wise argmax of label scores, lowest id on ties.
pub fn assign_labels<T: Scalar>(scores: &Tensor<T>) -> Vec<usize> {
    (0..scores.rows())
        .map(|i| {
            let row: Vec<f64> = scores.row(i).iter().map(|x| x.as_f64()).collect();
            argmax(&row)
        })
        .collect()
}
