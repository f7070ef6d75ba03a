use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

/// Square boolean adjacency matrix; `get(i, j)` means agent `i` sends to `j`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AdjMatrix {
    n: usize,
    bits: Vec<bool>,
}

impl AdjMatrix {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            bits: vec![false; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let n = rows.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != n) {
            return Err(contract(format!(
                "adjacency must be square: row {bad} has {} columns, expected {n}",
                rows[bad].len()
            )));
        }
        Ok(Self {
            n,
            bits: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = Self::empty(n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(contract(format!("edge ({i}, {j}) out of range for {n} agents")));
            }
            adj.set(i, j, true);
        }
        Ok(adj)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.n + j] = v;
    }

    pub fn is_zero(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n;
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.get(i, j))
            .collect()
    }

    /// Boolean matrix product.
    pub fn bool_mul(&self, other: &AdjMatrix) -> AdjMatrix {
        let n = self.n;
        let mut out = AdjMatrix::empty(n);
        for i in 0..n {
            for k in 0..n {
                if self.get(i, k) {
                    for j in 0..n {
                        if other.get(k, j) {
                            out.set(i, j, true);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Outcome of [`validate_acyclic`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Acyclicity {
    /// A topological order of all vertices.
    Order(Vec<usize>),
    /// Vertices of one directed cycle, in traversal order.
    Cycle(Vec<usize>),
}

/// Finds a topological order or reports one cycle.
///
/// Uses Kahn's algorithm with a lowest-index-first ready set, so the order is
/// deterministic. When vertices remain, a cycle is extracted by walking
/// predecessors inside the remainder until one repeats.
pub fn validate_acyclic(adj: &AdjMatrix) -> Result<Acyclicity> {
    let n = adj.n();
    if let Some(i) = (0..n).find(|&i| adj.get(i, i)) {
        return Err(contract(format!("self-loop on agent {i}")));
    }
    let mut indeg: Vec<usize> = (0..n).map(|j| (0..n).filter(|&i| adj.get(i, j)).count()).collect();
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while let Some(v) = (0..n).find(|&v| !done[v] && indeg[v] == 0) {
        done[v] = true;
        order.push(v);
        for j in 0..n {
            if adj.get(v, j) {
                indeg[j] -= 1;
            }
        }
    }
    if order.len() == n {
        return Ok(Acyclicity::Order(order));
    }
    // Every remaining vertex has a remaining predecessor; walking backwards
    // must revisit a vertex.
    let start = (0..n).find(|&v| !done[v]).expect("remainder is non-empty");
    let mut seen_at = vec![usize::MAX; n];
    let mut walk = Vec::new();
    let mut v = start;
    while seen_at[v] == usize::MAX {
        seen_at[v] = walk.len();
        walk.push(v);
        v = (0..n)
            .find(|&u| !done[u] && adj.get(u, v))
            .expect("remaining vertex has a remaining predecessor");
    }
    let mut cycle = walk[seen_at[v]..].to_vec();
    cycle.reverse();
    Ok(Acyclicity::Cycle(cycle))
}

/// DAG depth as `k - 1`, where `k` is the smallest power with `A^k = O`.
pub fn depth(adj: &AdjMatrix) -> Result<usize> {
    Ok(nilpotent_index(adj)? - 1)
}

/// Smallest `k >= 1` with `A^k = O`, found by repeated boolean products.
pub fn nilpotent_index(adj: &AdjMatrix) -> Result<usize> {
    let n = adj.n();
    let mut power = adj.clone();
    let mut k = 1;
    while !power.is_zero() {
        if k >= n.max(1) {
            return Err(contract("adjacency powers never vanish: graph has a cycle"));
        }
        power = power.bool_mul(adj);
        k += 1;
    }
    Ok(k)
}

/// Validated DAG over `n` agents with derived order, depth and rounds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dag {
    adj: AdjMatrix,
    topo_order: Vec<usize>,
    depth: usize,
    round_of: Vec<usize>,
    in_neighbors: Vec<Vec<usize>>,
}

impl Dag {
    pub fn new(adj: AdjMatrix) -> Result<Self> {
        let topo_order = match validate_acyclic(&adj)? {
            Acyclicity::Order(order) => order,
            Acyclicity::Cycle(cycle) => {
                return Err(contract(format!("communication graph has cycle {cycle:?}")))
            }
        };
        let n = adj.n();
        let in_neighbors: Vec<Vec<usize>> =
            (0..n).map(|j| (0..n).filter(|&i| adj.get(i, j)).collect()).collect();
        let mut round_of = vec![0usize; n];
        for &v in &topo_order {
            round_of[v] = in_neighbors[v].iter().map(|&u| round_of[u] + 1).max().unwrap_or(0);
        }
        let depth = depth(&adj)?;
        debug_assert_eq!(depth, round_of.iter().copied().max().unwrap_or(0));
        Ok(Self {
            adj,
            topo_order,
            depth,
            round_of,
            in_neighbors,
        })
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Self::new(AdjMatrix::from_edges(n, edges)?)
    }

    pub fn empty(n: usize) -> Self {
        Self::new(AdjMatrix::empty(n)).expect("empty graph is acyclic")
    }

    pub fn n(&self) -> usize {
        self.adj.n()
    }

    pub fn adj(&self) -> &AdjMatrix {
        &self.adj
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj.get(i, j)
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adj.edges()
    }

    pub fn edge_count(&self) -> usize {
        self.in_neighbors.iter().map(Vec::len).sum()
    }

    pub fn topo_order(&self) -> &[usize] {
        &self.topo_order
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn round_of(&self) -> &[usize] {
        &self.round_of
    }

    pub fn in_neighbors(&self, j: usize) -> &[usize] {
        &self.in_neighbors[j]
    }

    pub fn out_degree(&self, i: usize) -> usize {
        (0..self.n()).filter(|&j| self.adj.get(i, j)).count()
    }

    /// Agents ordered by round, ties by topological position. Every agent
    /// appears after all of its in-neighbours.
    pub fn schedule(&self) -> Vec<usize> {
        let mut order = self.topo_order.clone();
        order.sort_by_key(|&v| self.round_of[v]);
        order
    }

    pub fn to_json(&self) -> DagJson {
        DagJson {
            n: self.n(),
            edges: self.edges().into_iter().map(|(i, j)| [i, j]).collect(),
        }
    }

    pub fn from_json(json: &DagJson) -> Result<Self> {
        let edges: Vec<(usize, usize)> = json.edges.iter().map(|e| (e[0], e[1])).collect();
        Self::from_edges(json.n, &edges)
    }
}

/// `rounds(dag)`: round index of every agent.
pub fn rounds(dag: &Dag) -> Vec<usize> {
    dag.round_of.clone()
}

/// Serialized form `{"n": .., "edges": [[i, j], ..]}`; derived fields are
/// recomputed and validated on load.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagJson {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
}

impl Serialize for Dag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Dag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let json = DagJson::deserialize(d)?;
        Dag::from_json(&json).map_err(|e: Error| serde::de::Error::custom(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_graph_has_depth_zero() {
        let adj = AdjMatrix::empty(5);
        assert_eq!(nilpotent_index(&adj).unwrap(), 1);
        assert_eq!(depth(&adj).unwrap(), 0);
        let dag = Dag::new(adj).unwrap();
        assert_eq!(dag.round_of(), &[0; 5]);
        assert_eq!(dag.topo_order().len(), 5);
    }

    #[test]
    fn chain_order_and_powers() {
        let adj = AdjMatrix::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(validate_acyclic(&adj).unwrap(), Acyclicity::Order(vec![0, 1, 2]));
        let sq = adj.bool_mul(&adj);
        assert!(!sq.is_zero());
        assert!(sq.bool_mul(&adj).is_zero());
        assert_eq!(nilpotent_index(&adj).unwrap(), 3);
        assert_eq!(depth(&adj).unwrap(), 2);
    }

    #[test]
    fn triangle_cycle_reported() {
        let adj = AdjMatrix::from_edges(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        match validate_acyclic(&adj).unwrap() {
            Acyclicity::Cycle(mut c) => {
                c.sort();
                assert_eq!(c, vec![0, 1, 2]);
            }
            other => panic!("expected cycle, got {other:?}"),
        }
        assert!(depth(&adj).is_err());
        assert!(Dag::new(adj).is_err());
    }

    #[test]
    fn cycle_report_excludes_tail_vertices() {
        // 3 feeds the 0-1 cycle but is not on it.
        let adj = AdjMatrix::from_edges(4, &[(3, 0), (0, 1), (1, 0), (1, 2)]).unwrap();
        match validate_acyclic(&adj).unwrap() {
            Acyclicity::Cycle(mut c) => {
                c.sort();
                assert_eq!(c, vec![0, 1]);
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn non_square_and_self_loop_rejected() {
        assert!(AdjMatrix::from_rows(&[vec![false, true], vec![false]]).is_err());
        let adj = AdjMatrix::from_rows(&[vec![true, false], vec![false, false]]).unwrap();
        assert!(validate_acyclic(&adj).is_err());
    }

    #[test]
    fn round_layouts() {
        let chain = Dag::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        assert_eq!(rounds(&chain), vec![0, 1, 2, 3]);
        let star = Dag::from_edges(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        assert_eq!(rounds(&star), vec![0, 1, 1, 1]);
        assert_eq!(star.depth(), 1);
        let diamond = Dag::from_edges(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]).unwrap();
        assert_eq!(rounds(&diamond), vec![0, 1, 1, 2]);
        assert_eq!(diamond.depth(), 2);
    }

    #[test]
    fn schedule_respects_edges() {
        let dag = Dag::from_edges(5, &[(4, 0), (0, 2), (3, 2), (2, 1)]).unwrap();
        let sched = dag.schedule();
        let pos = |v: usize| sched.iter().position(|&x| x == v).unwrap();
        for (i, j) in dag.edges() {
            assert!(pos(i) < pos(j));
        }
    }

    #[test]
    fn json_round_trip_recomputes_derived_fields() {
        let dag = Dag::from_edges(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]).unwrap();
        let text = serde_json::to_string(&dag).unwrap();
        assert_eq!(text, r#"{"n":4,"edges":[[0,1],[0,2],[1,3],[2,3]]}"#);
        let back: Dag = serde_json::from_str(&text).unwrap();
        assert_eq!(back, dag);
        let cyclic = r#"{"n":2,"edges":[[0,1],[1,0]]}"#;
        assert!(serde_json::from_str::<Dag>(cyclic).is_err());
    }
}
