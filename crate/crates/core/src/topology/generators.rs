use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dag::{AdjMatrix, Dag};
use crate::error::{contract, Result};

/// Fully connected layered DAG of exact depth `d`.
///
/// Agents are shuffled with `seed` and split into `d + 1` ordered layers whose
/// sizes differ by at most one (the layers receiving the extra agents are also
/// chosen by `seed`). Every agent sends to every agent in every later layer.
pub fn gen_layered_fc(n: usize, d: usize, seed: u64) -> Result<Dag> {
    if d < 1 || d + 1 > n {
        return Err(contract(format!("depth {d} requires 1 <= d <= n - 1 (n = {n})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agents: Vec<usize> = (0..n).collect();
    agents.shuffle(&mut rng);
    let n_layers = d + 1;
    let mut sizes = vec![n / n_layers; n_layers];
    let mut layer_ids: Vec<usize> = (0..n_layers).collect();
    layer_ids.shuffle(&mut rng);
    for &l in layer_ids.iter().take(n % n_layers) {
        sizes[l] += 1;
    }
    let mut layer_of = vec![0usize; n];
    let mut cursor = 0;
    for (l, &size) in sizes.iter().enumerate() {
        for &a in &agents[cursor..cursor + size] {
            layer_of[a] = l;
        }
        cursor += size;
    }
    let mut adj = AdjMatrix::empty(n);
    for i in 0..n {
        for j in 0..n {
            if layer_of[i] < layer_of[j] {
                adj.set(i, j, true);
            }
        }
    }
    Dag::new(adj)
}

/// Renames agent `v` to `perm[v]`; edge `i -> j` becomes `perm[i] -> perm[j]`.
pub fn relabel(dag: &Dag, perm: &[usize]) -> Result<Dag> {
    let n = dag.n();
    let mut seen = vec![false; n];
    if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
        return Err(contract(format!("{perm:?} is not a permutation of 0..{n}")));
    }
    let edges: Vec<(usize, usize)> = dag.edges().into_iter().map(|(i, j)| (perm[i], perm[j])).collect();
    Dag::from_edges(n, &edges)
}

/// Keeps the communication structure but reassigns which agent sits at each
/// position, using a seeded random permutation.
///
/// Permutations that map the graph onto itself are redrawn (up to a bounded
/// number of attempts), so the returned graph differs from the input whenever
/// some relabeling can make it differ.
pub fn shuffle_order(dag: &Dag, seed: u64) -> Result<Dag> {
    let n = dag.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut fallback = None;
    for _ in 0..64 {
        perm.shuffle(&mut rng);
        let candidate = relabel(dag, &perm)?;
        if candidate != *dag {
            return Ok(candidate);
        }
        fallback.get_or_insert(candidate);
    }
    Ok(fallback.unwrap_or_else(|| dag.clone()))
}
