//! Maximum spanning arborescence decoding.
//!
//! [`cle_mst`] implements Chu-Liu-Edmonds: greedy best-incoming selection,
//! cycle contraction with re-weighted incoming edges, recursion on the
//! contracted graph and expansion. [`brute_force_mst`] enumerates all head
//! assignments and serves as the test oracle.

use thiserror::Error;

use crate::treebank::validate_heads;

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("dependent {0} has no finite incoming edge")]
    Infeasible(usize),
    #[error("weight matrix must be {expected_rows}x{expected_cols}")]
    Shape {
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("no spanning arborescence exists")]
    NoArborescence,
    #[error("brute force refuses n = {0} > {MAX_BRUTE_FORCE}")]
    TooLarge(usize),
}

pub const MAX_BRUTE_FORCE: usize = 8;

/// Edge weights `w[i][j-1]` for head `i` (0 = ROOT) and dependent `j`.
/// `-inf` marks a forbidden edge.
#[derive(Clone, Debug, PartialEq)]
pub struct ArcWeights {
    n: usize,
    w: Vec<f64>,
}

impl ArcWeights {
    /// Self-loops are forced to `-inf`.
    pub fn new(n: usize, mut w: Vec<f64>) -> Result<Self, DecodeError> {
        if w.len() != (n + 1) * n {
            return Err(DecodeError::Shape {
                expected_rows: n + 1,
                expected_cols: n,
            });
        }
        for j in 1..=n {
            w[j * n + j - 1] = f64::NEG_INFINITY;
        }
        Ok(ArcWeights { n, w })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DecodeError> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.len() != n + 1 || rows.iter().any(|r| r.len() != n) {
            return Err(DecodeError::Shape {
                expected_rows: n + 1,
                expected_cols: n,
            });
        }
        ArcWeights::new(n, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Weight of head `i` for dependent `j` (1-based).
    pub fn get(&self, head: usize, dep: usize) -> f64 {
        self.w[head * self.n + dep - 1]
    }

    pub fn set(&mut self, head: usize, dep: usize, value: f64) {
        self.w[head * self.n + dep - 1] = value;
    }

    /// Sum of the chosen edges, accumulated in dependent order.
    pub fn total(&self, heads: &[usize]) -> f64 {
        heads
            .iter()
            .enumerate()
            .map(|(j, &h)| self.get(h, j + 1))
            .sum()
    }

    fn check_feasible(&self) -> Result<(), DecodeError> {
        for j in 1..=self.n {
            if !(0..=self.n).any(|i| self.get(i, j).is_finite()) {
                return Err(DecodeError::Infeasible(j));
            }
        }
        Ok(())
    }
}

/// Maximum spanning arborescence rooted at 0. Returns `heads[j-1]`.
pub fn cle_mst(weights: &ArcWeights) -> Result<Vec<usize>, DecodeError> {
    weights.check_feasible()?;
    let n = weights.n;
    let size = n + 1;
    let mut scores = vec![vec![f64::NEG_INFINITY; size]; size];
    for (h, row) in scores.iter_mut().enumerate() {
        for d in 1..size {
            if h != d {
                row[d] = weights.get(h, d);
            }
        }
    }
    let parents = chu_liu_edmonds(&scores).ok_or(DecodeError::NoArborescence)?;
    let heads: Vec<usize> = parents[1..].to_vec();
    if !weights.total(&heads).is_finite() {
        return Err(DecodeError::NoArborescence);
    }
    debug_assert!(validate_heads(&heads).is_ok());
    Ok(heads)
}

/// Best tree among those where ROOT has exactly one child. Each candidate
/// child is tried in turn; ties go to the lowest candidate.
pub fn cle_mst_single_root(weights: &ArcWeights) -> Result<Vec<usize>, DecodeError> {
    weights.check_feasible()?;
    let n = weights.n;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for root_child in 1..=n {
        if !weights.get(0, root_child).is_finite() {
            continue;
        }
        let mut w = weights.clone();
        for j in 1..=n {
            if j != root_child {
                w.set(0, j, f64::NEG_INFINITY);
            }
        }
        for i in 1..=n {
            w.set(i, root_child, f64::NEG_INFINITY);
        }
        let Ok(heads) = cle_mst(&w) else {
            continue;
        };
        let total = weights.total(&heads);
        if total.is_finite() && best.as_ref().map_or(true, |(b, _)| total > *b) {
            best = Some((total, heads));
        }
    }
    best.map(|(_, h)| h).ok_or(DecodeError::Infeasible(0))
}

/// Parent of every vertex of a dense square graph rooted at vertex 0;
/// `scores[h][d]` is the weight of `h -> d`.
fn chu_liu_edmonds(scores: &[Vec<f64>]) -> Option<Vec<usize>> {
    let size = scores.len();
    let mut parents = vec![0usize; size];
    for d in 1..size {
        parents[d] = best_incoming(scores, d);
    }

    let Some(cycle) = find_cycle(&parents) else {
        return Some(parents);
    };
    let in_cycle = {
        let mut v = vec![false; size];
        for &c in &cycle {
            v[c] = true;
        }
        v
    };

    // Contracted graph: surviving vertices keep their relative order and
    // the cycle becomes the last vertex.
    let outside: Vec<usize> = (0..size).filter(|&v| !in_cycle[v]).collect();
    let m = outside.len() + 1;
    let cycle_node = m - 1;
    let mut contracted = vec![vec![f64::NEG_INFINITY; m]; m];
    // for an edge u -> cycle: which cycle vertex it enters
    let mut enters = vec![0usize; m];
    // for an edge cycle -> w: which cycle vertex it leaves from
    let mut leaves = vec![0usize; m];

    for (a, &u) in outside.iter().enumerate() {
        for (b, &v) in outside.iter().enumerate() {
            contracted[a][b] = scores[u][v];
        }
        let mut best_in = f64::NEG_INFINITY;
        let mut best_out = f64::NEG_INFINITY;
        for &c in &cycle {
            let incoming = scores[u][c] - scores[parents[c]][c];
            if incoming > best_in {
                best_in = incoming;
                enters[a] = c;
            }
            if scores[c][u] > best_out {
                best_out = scores[c][u];
                leaves[a] = c;
            }
        }
        contracted[a][cycle_node] = best_in;
        contracted[cycle_node][a] = best_out;
    }
    for row in contracted.iter_mut() {
        row[0] = f64::NEG_INFINITY;
    }
    if contracted.iter().all(|row| row[cycle_node] == f64::NEG_INFINITY) {
        return None;
    }

    let sub = chu_liu_edmonds(&contracted)?;

    let mut result = parents.clone();
    for (b, &v) in outside.iter().enumerate().skip(1) {
        let p = sub[b];
        result[v] = if p == cycle_node { leaves[b] } else { outside[p] };
    }
    let entry_from = sub[cycle_node];
    let entered = enters[entry_from];
    result[entered] = outside[entry_from];
    Some(result)
}

/// Highest-scoring head; ties go to the lowest index.
fn best_incoming(scores: &[Vec<f64>], d: usize) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (h, row) in scores.iter().enumerate() {
        if h != d && row[d] > best_score {
            best_score = row[d];
            best = h;
        }
    }
    best
}

fn find_cycle(parents: &[usize]) -> Option<Vec<usize>> {
    let size = parents.len();
    // 0 = unvisited, 1 = on current path, 2 = done
    let mut state = vec![0u8; size];
    state[0] = 2;
    for start in 1..size {
        let mut path = Vec::new();
        let mut v = start;
        while state[v] == 0 {
            state[v] = 1;
            path.push(v);
            v = parents[v];
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

/// Exhaustive search over all head assignments. Among optimal trees the
/// lexicographically smallest head vector is returned.
pub fn brute_force_mst(weights: &ArcWeights) -> Result<Vec<usize>, DecodeError> {
    let n = weights.n;
    if n > MAX_BRUTE_FORCE {
        return Err(DecodeError::TooLarge(n));
    }
    weights.check_feasible()?;
    let mut heads = vec![0usize; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let total = weights.total(&heads);
        if total.is_finite()
            && best.as_ref().map_or(true, |(b, _)| total > *b)
            && validate_heads(&heads).is_ok()
        {
            best = Some((total, heads.clone()));
        }
        // odometer increment, last position fastest
        let mut pos = n;
        loop {
            if pos == 0 {
                return best.map(|(_, h)| h).ok_or(DecodeError::Infeasible(0));
            }
            pos -= 1;
            heads[pos] += 1;
            if heads[pos] <= n {
                break;
            }
            heads[pos] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const NINF: f64 = f64::NEG_INFINITY;

    #[test]
    fn single_token() {
        let w = ArcWeights::from_rows(&[vec![0.3], vec![NINF]]).unwrap();
        assert_eq!(cle_mst(&w).unwrap(), vec![0]);
        assert_eq!(brute_force_mst(&w).unwrap(), vec![0]);
    }

    #[test]
    fn hand_enumerated_two_tokens() {
        // w(0->1)=5, w(0->2)=1, w(1->2)=3, w(2->1)=0
        let w = ArcWeights::from_rows(&[vec![5.0, 1.0], vec![NINF, 3.0], vec![0.0, NINF]]).unwrap();
        assert_eq!(brute_force_mst(&w).unwrap(), vec![0, 1]);
        assert_eq!(w.total(&[0, 1]), 8.0);
        assert_eq!(cle_mst(&w).unwrap(), vec![0, 1]);
    }

    #[test]
    fn contraction_path() {
        // 1 and 2 prefer each other; ROOT must break the cycle
        let w = ArcWeights::from_rows(&[
            vec![1.0, 2.0, 0.5],
            vec![NINF, 10.0, 1.0],
            vec![10.0, NINF, 1.0],
            vec![0.0, 0.0, NINF],
        ])
        .unwrap();
        let cle = cle_mst(&w).unwrap();
        let brute = brute_force_mst(&w).unwrap();
        assert_eq!(w.total(&cle), w.total(&brute));
        assert_eq!(cle, vec![2, 0, 1]);
    }

    #[test]
    fn infeasible_dependent() {
        let w = ArcWeights::from_rows(&[vec![1.0, NINF], vec![NINF, NINF], vec![2.0, NINF]]).unwrap();
        assert_eq!(cle_mst(&w).unwrap_err(), DecodeError::Infeasible(2));
    }

    #[test]
    fn disconnected_pair_has_no_tree() {
        let w = ArcWeights::from_rows(&[vec![NINF, NINF], vec![NINF, 1.0], vec![1.0, NINF]]).unwrap();
        assert_eq!(cle_mst(&w).unwrap_err(), DecodeError::NoArborescence);
    }

    #[test]
    fn brute_force_refuses_large_input() {
        let w = ArcWeights::new(9, vec![0.0; 90]).unwrap();
        assert_eq!(brute_force_mst(&w).unwrap_err(), DecodeError::TooLarge(9));
    }

    #[test]
    fn single_root_constraint() {
        // unconstrained best attaches both tokens to ROOT
        let w = ArcWeights::from_rows(&[vec![5.0, 5.0], vec![NINF, 1.0], vec![0.0, NINF]]).unwrap();
        assert_eq!(cle_mst(&w).unwrap(), vec![0, 0]);
        assert_eq!(cle_mst_single_root(&w).unwrap(), vec![0, 1]);
    }

    #[test]
    fn random_integer_weights_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..300 {
            let n = rng.gen_range(1..=6);
            let w: Vec<f64> = (0..(n + 1) * n).map(|_| rng.gen_range(-3..=3) as f64).collect();
            let w = ArcWeights::new(n, w).unwrap();
            let cle = cle_mst(&w).unwrap();
            assert!(validate_heads(&cle).is_ok());
            assert_eq!(w.total(&cle), w.total(&brute_force_mst(&w).unwrap()));
        }
    }
}
