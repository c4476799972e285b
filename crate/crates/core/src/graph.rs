//! Undirected communication topology between estimators.
//!
//! Node indices are 1-based throughout the public API (`1..=N`). Neighbor
//! lists are always returned in ascending order; every block layout in the
//! LMI assembly depends on that ordering.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct CommGraph {
    node_count: usize,
    /// Sorted adjacency, 1-based.
    adjacency: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    nodes: usize,
    edges: Vec<[usize; 2]>,
}

impl TryFrom<GraphRepr> for CommGraph {
    type Error = Error;
    fn try_from(r: GraphRepr) -> Result<Self> {
        CommGraph::new(r.nodes, r.edges.iter().map(|e| (e[0], e[1])))
    }
}

impl From<CommGraph> for GraphRepr {
    fn from(g: CommGraph) -> Self {
        GraphRepr {
            nodes: g.node_count,
            edges: g.edges().into_iter().map(|(a, b)| [a, b]).collect(),
        }
    }
}

impl CommGraph {
    /// Builds a graph from an edge list. Each unordered pair may appear in
    /// either or both orientations; duplicates collapse.
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::Argument("graph needs at least one node".into()));
        }
        let mut adjacency = vec![BTreeSet::new(); node_count];
        for (a, b) in edges {
            if a == 0 || b == 0 || a > node_count || b > node_count {
                return Err(Error::Argument(format!(
                    "edge ({a}, {b}) out of range 1..={node_count}"
                )));
            }
            if a == b {
                return Err(Error::Argument(format!("self-loop at node {a}")));
            }
            adjacency[a - 1].insert(b);
            adjacency[b - 1].insert(a);
        }
        Ok(CommGraph {
            node_count,
            adjacency: adjacency.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    /// Ring `1 - 2 - ... - N - 1`. For `N = 2` this is a single edge.
    pub fn ring(node_count: usize) -> Result<Self> {
        let edges: Vec<(usize, usize)> = match node_count {
            0 | 1 => Vec::new(),
            2 => vec![(1, 2)],
            n => (1..=n).map(|k| (k, k % n + 1)).collect(),
        };
        CommGraph::new(node_count, edges)
    }

    pub fn complete(node_count: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for a in 1..=node_count {
            for b in (a + 1)..=node_count {
                edges.push((a, b));
            }
        }
        CommGraph::new(node_count, edges)
    }

    /// Node 1 connected to every other node.
    pub fn star(node_count: usize) -> Result<Self> {
        CommGraph::new(node_count, (2..=node_count).map(|k| (1, k)))
    }

    pub fn empty(node_count: usize) -> Result<Self> {
        CommGraph::new(node_count, std::iter::empty())
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    fn check(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.node_count {
            Err(Error::Argument(format!(
                "node index {k} out of range 1..={}",
                self.node_count
            )))
        } else {
            Ok(())
        }
    }

    /// Neighborhood of `k`, ascending.
    pub fn neighbors(&self, k: usize) -> Result<&[usize]> {
        self.check(k)?;
        Ok(&self.adjacency[k - 1])
    }

    pub fn degree(&self, k: usize) -> Result<usize> {
        self.check(k)?;
        Ok(self.adjacency[k - 1].len())
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a >= 1 && a <= self.node_count && self.adjacency[a - 1].binary_search(&b).is_ok()
    }

    /// Unordered edges as `(a, b)` with `a < b`, lexicographic.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, nbrs) in self.adjacency.iter().enumerate() {
            let a = i + 1;
            out.extend(nbrs.iter().filter(|&&b| b > a).map(|&b| (a, b)));
        }
        out
    }

    /// Directed pairs `(k, j)` with `j ∈ N_k`, ordered by `k` then `j`.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, nbrs) in self.adjacency.iter().enumerate() {
            out.extend(nbrs.iter().map(|&j| (i + 1, j)));
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(|n| n.len()).sum::<usize>() / 2
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> {
        1..=self.node_count
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ring_neighbors_and_degree() {
        let g = CommGraph::ring(6).unwrap();
        assert_eq!(g.neighbors(1).unwrap(), &[2, 6]);
        for k in 1..=6 {
            assert_eq!(g.degree(k).unwrap(), 2);
        }
    }

    #[test]
    fn single_node_has_no_neighbors() {
        let g = CommGraph::empty(1).unwrap();
        assert!(g.neighbors(1).unwrap().is_empty());
        assert_eq!(g.degree(1).unwrap(), 0);
    }

    #[test]
    fn complete_and_star() {
        let g = CommGraph::complete(3).unwrap();
        assert_eq!(g.neighbors(2).unwrap(), &[1, 3]);
        let s = CommGraph::star(4).unwrap();
        assert_eq!(s.degree(1).unwrap(), 3);
        assert_eq!(s.degree(4).unwrap(), 1);
    }

    #[test]
    fn out_of_range_index_is_an_argument_error() {
        let g = CommGraph::ring(3).unwrap();
        assert!(matches!(g.neighbors(0), Err(Error::Argument(_))));
        assert!(matches!(g.degree(4), Err(Error::Argument(_))));
    }

    #[test]
    fn rejects_self_loops_and_bad_edges() {
        assert!(CommGraph::new(3, [(2, 2)]).is_err());
        assert!(CommGraph::new(3, [(1, 4)]).is_err());
        assert!(CommGraph::new(0, []).is_err());
    }

    #[test]
    fn disconnected_graph_is_accepted() {
        let g = CommGraph::new(4, [(1, 2), (3, 4)]).unwrap();
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn serde_round_trip() {
        let g = CommGraph::ring(5).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        let back: CommGraph = serde_json::from_str(&s).unwrap();
        assert_eq!(g, back);
    }

    fn arb_graph() -> impl Strategy<Value = CommGraph> {
        (1usize..9).prop_flat_map(|n| {
            proptest::collection::vec((1..=n, 1..=n), 0..20).prop_map(move |pairs| {
                CommGraph::new(n, pairs.into_iter().filter(|(a, b)| a != b)).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn neighbor_relation_is_symmetric(g in arb_graph()) {
            for k in g.nodes() {
                for &j in g.neighbors(k).unwrap() {
                    prop_assert!(g.neighbors(j).unwrap().contains(&k));
                }
            }
        }

        #[test]
        fn handshake_lemma(g in arb_graph()) {
            let total: usize = g.nodes().map(|k| g.degree(k).unwrap()).sum();
            prop_assert_eq!(total, 2 * g.edge_count());
        }

        #[test]
        fn enumeration_is_sorted_and_stable(g in arb_graph()) {
            for k in g.nodes() {
                let a = g.neighbors(k).unwrap().to_vec();
                let b = g.neighbors(k).unwrap().to_vec();
                prop_assert_eq!(&a, &b);
                prop_assert!(a.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
