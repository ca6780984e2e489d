//! Heterogeneous transaction graph: typed nodes, type-pair edge types, and the
//! adjacency normalizations consumed by the layers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::SparseMatrix;

/// The eight node roles. `Account` is the default for unlabeled addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeType {
    Account,
    Exchange,
    TokenContract,
    WalletApp,
    IcoWallets,
    ColdWallet,
    Gaming,
    Gambling,
}

impl NodeType {
    pub const ALL: [NodeType; 8] = [
        NodeType::Account,
        NodeType::Exchange,
        NodeType::TokenContract,
        NodeType::WalletApp,
        NodeType::IcoWallets,
        NodeType::ColdWallet,
        NodeType::Gaming,
        NodeType::Gambling,
    ];
    pub const COUNT: usize = 8;

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(i: usize) -> Option<NodeType> {
        NodeType::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeType::Account => "account",
            NodeType::Exchange => "exchange",
            NodeType::TokenContract => "token-contract",
            NodeType::WalletApp => "wallet-app",
            NodeType::IcoWallets => "ico-wallets",
            NodeType::ColdWallet => "cold-wallet",
            NodeType::Gaming => "gaming",
            NodeType::Gambling => "gambling",
        }
    }

    /// Parses a type label. Case-insensitive; accepts the label-cloud spellings
    /// `gaming-tokens` and `gambling-accounts`.
    pub fn parse(s: &str) -> Result<NodeType> {
        let norm = s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        let t = match norm.as_str() {
            "account" | "" => NodeType::Account,
            "exchange" => NodeType::Exchange,
            "token-contract" => NodeType::TokenContract,
            "wallet-app" => NodeType::WalletApp,
            "ico-wallets" | "ico-wallet" => NodeType::IcoWallets,
            "cold-wallet" => NodeType::ColdWallet,
            "gaming" | "gaming-tokens" => NodeType::Gaming,
            "gambling" | "gambling-accounts" => NodeType::Gambling,
            _ => return Err(Error::Schema(format!("unknown node type {s:?}"))),
        };
        Ok(t)
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered pair of endpoint types, e.g. `account - wallet-app`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeType {
    pub src: NodeType,
    pub dst: NodeType,
}

impl EdgeType {
    pub fn new(src: NodeType, dst: NodeType) -> Self {
        EdgeType { src, dst }
    }

    pub fn name(&self) -> String {
        format!("{} - {}", self.src.name(), self.dst.name())
    }

    pub fn parse(s: &str) -> Result<EdgeType> {
        let (a, b) = s
            .split_once(" - ")
            .ok_or_else(|| Error::Schema(format!("malformed edge type {s:?}")))?;
        Ok(EdgeType::new(NodeType::parse(a)?, NodeType::parse(b)?))
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} - {}", self.src, self.dst)
    }
}

/// One directed transfer, or, after collapsing, the aggregate of all transfers
/// between an ordered node pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    /// ETH; summed over transactions on collapsed edges.
    pub amount: f64,
    /// Unix seconds; the earliest timestamp on collapsed edges.
    pub timestamp: i64,
    /// Number of underlying transactions.
    pub count: u64,
}

impl Edge {
    pub fn transfer(src: usize, dst: usize, amount: f64, timestamp: i64) -> Self {
        Edge {
            src,
            dst,
            amount,
            timestamp,
            count: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormMode {
    /// `D̃^{-1/2}(A+I)D̃^{-1/2}` over the symmetrized selection.
    Sym,
    /// `D^{-1}A` over in-neighbors, no self-loops.
    Row,
}

/// Typed directed multigraph. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    addresses: Vec<String>,
    node_types: Vec<NodeType>,
    labels: Vec<Option<bool>>,
    edges: Vec<Edge>,
    by_type: BTreeMap<EdgeType, Vec<usize>>,
    collapsed: bool,
}

/// Partitions `edges` by endpoint type pair. Only nonempty pairs are materialized.
pub fn derive_edge_types(node_types: Vec<NodeType>, edges: Vec<Edge>) -> Result<HeteroGraph> {
    let n = node_types.len();
    let addresses = (0..n).map(|i| format!("n{i}")).collect();
    HeteroGraph::build(addresses, node_types, vec![None; n], edges, false)
}

/// Like [`derive_edge_types`] but from type names, rejecting unknown names.
pub fn derive_edge_types_named<S: AsRef<str>>(names: &[S], edges: Vec<Edge>) -> Result<HeteroGraph> {
    let types = names
        .iter()
        .map(|s| NodeType::parse(s.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    derive_edge_types(types, edges)
}

impl HeteroGraph {
    pub fn build(
        addresses: Vec<String>,
        node_types: Vec<NodeType>,
        labels: Vec<Option<bool>>,
        edges: Vec<Edge>,
        collapsed: bool,
    ) -> Result<Self> {
        let n = node_types.len();
        if addresses.len() != n || labels.len() != n {
            return Err(Error::Contract(format!(
                "{} addresses, {} types, {} labels",
                addresses.len(),
                n,
                labels.len()
            )));
        }
        for (i, l) in labels.iter().enumerate() {
            if *l == Some(true) && node_types[i] != NodeType::Account {
                return Err(Error::Schema(format!(
                    "node {} of type {} carries a fraud label; only accounts may",
                    addresses[i], node_types[i]
                )));
            }
        }
        let mut by_type: BTreeMap<EdgeType, Vec<usize>> = BTreeMap::new();
        for (id, e) in edges.iter().enumerate() {
            if e.src >= n || e.dst >= n {
                return Err(Error::Contract(format!(
                    "edge {id} endpoint ({}, {}) outside {n} nodes",
                    e.src, e.dst
                )));
            }
            by_type
                .entry(EdgeType::new(node_types[e.src], node_types[e.dst]))
                .or_default()
                .push(id);
        }
        Ok(HeteroGraph {
            addresses,
            node_types,
            labels,
            edges,
            by_type,
            collapsed,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_types.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Number of underlying transactions (equals `edge_count` before collapsing).
    pub fn transaction_count(&self) -> u64 {
        self.edges.iter().map(|e| e.count).sum()
    }

    pub fn is_collapsed(&self) -> bool {
        self.collapsed
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_types(&self) -> &[NodeType] {
        &self.node_types
    }

    pub fn node_type(&self, i: usize) -> NodeType {
        self.node_types[i]
    }

    pub fn addresses(&self) -> &[String] {
        &self.addresses
    }

    pub fn labels(&self) -> &[Option<bool>] {
        &self.labels
    }

    pub fn is_fraud(&self, i: usize) -> bool {
        self.labels[i] == Some(true)
    }

    /// Returns a copy with new labels (validated).
    pub fn with_labels(&self, labels: Vec<Option<bool>>) -> Result<HeteroGraph> {
        HeteroGraph::build(
            self.addresses.clone(),
            self.node_types.clone(),
            labels,
            self.edges.clone(),
            self.collapsed,
        )
    }

    pub fn edge_types(&self) -> impl Iterator<Item = EdgeType> + '_ {
        self.by_type.keys().copied()
    }

    pub fn edge_type_count(&self) -> usize {
        self.by_type.len()
    }

    /// Edge ids of one edge type.
    pub fn edges_of_type(&self, et: EdgeType) -> Option<&[usize]> {
        self.by_type.get(&et).map(|v| v.as_slice())
    }

    /// Edge count per edge type.
    pub fn edge_type_histogram(&self) -> BTreeMap<EdgeType, usize> {
        self.by_type.iter().map(|(k, v)| (*k, v.len())).collect()
    }

    /// Node count per type, indexed by ordinal.
    pub fn type_histogram(&self) -> [usize; NodeType::COUNT] {
        let mut h = [0; NodeType::COUNT];
        for t in &self.node_types {
            h[t.ordinal()] += 1;
        }
        h
    }

    pub fn nodes_of_type(&self, t: NodeType) -> Vec<usize> {
        (0..self.node_count()).filter(|&i| self.node_types[i] == t).collect()
    }

    /// Merges parallel edges: one edge per ordered `(src, dst)`, carrying the
    /// transaction count, total amount and earliest timestamp. Output is sorted
    /// by `(src, dst)`.
    pub fn collapse_multi_edges(&self) -> HeteroGraph {
        let mut groups: BTreeMap<(usize, usize), Edge> = BTreeMap::new();
        for e in &self.edges {
            groups
                .entry((e.src, e.dst))
                .and_modify(|g| {
                    g.amount += e.amount;
                    g.count += e.count;
                    g.timestamp = g.timestamp.min(e.timestamp);
                })
                .or_insert_with(|| e.clone());
        }
        HeteroGraph::build(
            self.addresses.clone(),
            self.node_types.clone(),
            self.labels.clone(),
            groups.into_values().collect(),
            true,
        )
        .expect("collapsing preserves validity")
    }

    /// Same nodes, only the listed edges (in the given order).
    pub fn edge_subset(&self, ids: &[usize]) -> HeteroGraph {
        let edges = ids.iter().map(|&i| self.edges[i].clone()).collect();
        HeteroGraph::build(
            self.addresses.clone(),
            self.node_types.clone(),
            self.labels.clone(),
            edges,
            self.collapsed,
        )
        .expect("subset preserves validity")
    }

    /// Induced subgraph on `nodes` (kept in ascending original order). Returns the
    /// subgraph and the original id of each new node.
    pub fn induced_subgraph(&self, nodes: &BTreeSet<usize>) -> (HeteroGraph, Vec<usize>) {
        let keep: Vec<usize> = nodes.iter().copied().collect();
        let mut remap = vec![usize::MAX; self.node_count()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let edges = self
            .edges
            .iter()
            .filter(|e| remap[e.src] != usize::MAX && remap[e.dst] != usize::MAX)
            .map(|e| Edge {
                src: remap[e.src],
                dst: remap[e.dst],
                ..e.clone()
            })
            .collect();
        let g = HeteroGraph::build(
            keep.iter().map(|&i| self.addresses[i].clone()).collect(),
            keep.iter().map(|&i| self.node_types[i]).collect(),
            keep.iter().map(|&i| self.labels[i]).collect(),
            edges,
            self.collapsed,
        )
        .expect("induced subgraph preserves validity");
        (g, keep)
    }

    /// Distinct directed `(src, dst)` pairs, optionally restricted to one edge type.
    fn pairs(&self, selector: Option<EdgeType>) -> Result<BTreeSet<(usize, usize)>> {
        match selector {
            None => Ok(self.edges.iter().map(|e| (e.src, e.dst)).collect()),
            Some(et) => {
                let ids = self
                    .by_type
                    .get(&et)
                    .ok_or_else(|| Error::Lookup(format!("edge type {et} not present")))?;
                Ok(ids.iter().map(|&i| (self.edges[i].src, self.edges[i].dst)).collect())
            }
        }
    }

    /// Distinct undirected neighbor lists (both directions, no self-loops).
    pub fn symmetric_neighbors(&self) -> Vec<Vec<usize>> {
        let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.node_count()];
        for e in &self.edges {
            if e.src != e.dst {
                sets[e.src].insert(e.dst);
                sets[e.dst].insert(e.src);
            }
        }
        sets.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    /// Normalized adjacency over one edge type (`Some`) or the homogeneous view
    /// (`None`). Rows are message targets.
    pub fn normalized_adjacency(&self, selector: Option<EdgeType>, mode: NormMode) -> Result<SparseMatrix> {
        let n = self.node_count();
        let pairs = self.pairs(selector)?;
        match mode {
            NormMode::Sym => {
                let mut sym: BTreeSet<(usize, usize)> = BTreeSet::new();
                for &(s, d) in &pairs {
                    sym.insert((d, s));
                    sym.insert((s, d));
                }
                for i in 0..n {
                    sym.insert((i, i));
                }
                let mut deg = vec![0.0f64; n];
                for &(r, _) in &sym {
                    deg[r] += 1.0;
                }
                let trip: Vec<(usize, usize, f64)> = sym
                    .iter()
                    .map(|&(r, c)| (r, c, 1.0 / (deg[r] * deg[c]).sqrt()))
                    .collect();
                SparseMatrix::from_triplets(n, n, &trip)
            }
            NormMode::Row => {
                let mut indeg = vec![0.0f64; n];
                for &(_, d) in &pairs {
                    indeg[d] += 1.0;
                }
                let trip: Vec<(usize, usize, f64)> =
                    pairs.iter().map(|&(s, d)| (d, s, 1.0 / indeg[d])).collect();
                SparseMatrix::from_triplets(n, n, &trip)
            }
        }
    }

    /// Union of all edge types as one unweighted directed adjacency
    /// (row = target, column = source). Parallel edges merge into one entry.
    pub fn homogeneous_view(&self) -> SparseMatrix {
        let n = self.node_count();
        let trip: Vec<(usize, usize, f64)> = self
            .pairs(None)
            .expect("unrestricted selection")
            .into_iter()
            .map(|(s, d)| (d, s, 1.0))
            .collect();
        SparseMatrix::from_triplets(n, n, &trip).expect("valid endpoints")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tally(types: &[NodeType], edges: &[(usize, usize)]) -> BTreeMap<EdgeType, usize> {
        let mut m = BTreeMap::new();
        for &(s, d) in edges {
            *m.entry(EdgeType::new(types[s], types[d])).or_insert(0) += 1;
        }
        m
    }

    fn graph(types: Vec<NodeType>, edges: &[(usize, usize)]) -> HeteroGraph {
        derive_edge_types(
            types,
            edges.iter().map(|&(s, d)| Edge::transfer(s, d, 1.0, 1)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn names_and_parsing() {
        let et = EdgeType::new(NodeType::Account, NodeType::WalletApp);
        assert_eq!(et.name(), "account - wallet-app");
        assert_eq!(EdgeType::parse("account - wallet-app").unwrap(), et);
        assert_eq!(NodeType::parse("gaming-tokens").unwrap(), NodeType::Gaming);
        assert_eq!(NodeType::parse("Gambling-Accounts").unwrap(), NodeType::Gambling);
        assert!(matches!(NodeType::parse("miner"), Err(Error::Schema(_))));
        assert!(derive_edge_types_named(&["account", "bogus"], vec![]).is_err());
        for (i, t) in NodeType::ALL.iter().enumerate() {
            assert_eq!(t.ordinal(), i);
            assert_eq!(NodeType::parse(t.name()).unwrap(), *t);
        }
    }

    #[test]
    fn single_edge_single_type() {
        let g = graph(vec![NodeType::Account; 2], &[(0, 1)]);
        assert_eq!(g.edge_type_count(), 1);
    }

    #[test]
    fn fraud_only_on_accounts() {
        let g = graph(vec![NodeType::Account, NodeType::Exchange], &[(0, 1)]);
        assert!(g.with_labels(vec![Some(true), Some(false)]).is_ok());
        assert!(matches!(
            g.with_labels(vec![None, Some(true)]),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn collapse_sums_parallel_edges() {
        let edges = [1.0, 2.0, 3.0]
            .iter()
            .enumerate()
            .map(|(i, &a)| Edge::transfer(0, 1, a, 10 - i as i64))
            .collect();
        let g = derive_edge_types(vec![NodeType::Account; 2], edges).unwrap();
        let c = g.collapse_multi_edges();
        assert_eq!(c.edge_count(), 1);
        assert_eq!(c.edges()[0].count, 3);
        assert_eq!(c.edges()[0].amount, 6.0);
        assert_eq!(c.edges()[0].timestamp, 8);

        let simple = graph(vec![NodeType::Account; 3], &[(0, 1), (1, 2), (2, 0)]);
        assert_eq!(simple.collapse_multi_edges().edges(), simple.edges());
    }

    #[test]
    fn sym_adjacency_cases() {
        let g = graph(vec![NodeType::Account], &[(0, 0)]);
        let a = g.normalized_adjacency(None, NormMode::Sym).unwrap();
        assert_eq!(a.to_dense().data(), &[1.0]);

        // Degrees 2 and 2 after self-loops: off-diagonal 1/sqrt(2*2).
        let g = graph(vec![NodeType::Account; 2], &[(0, 1)]);
        let a = g.normalized_adjacency(None, NormMode::Sym).unwrap();
        assert_eq!(a.to_dense().data(), &[0.5, 0.5, 0.5, 0.5]);

        // Isolated node keeps a self-loop-only row.
        let g = graph(vec![NodeType::Account; 3], &[(0, 1)]);
        let a = g.normalized_adjacency(None, NormMode::Sym).unwrap();
        assert_eq!(a.row(2).collect::<Vec<_>>(), vec![(2, 1.0)]);
    }

    #[test]
    fn unknown_edge_type_is_lookup_error() {
        let g = graph(vec![NodeType::Account; 2], &[(0, 1)]);
        let et = EdgeType::new(NodeType::Exchange, NodeType::Account);
        assert!(matches!(
            g.normalized_adjacency(Some(et), NormMode::Row),
            Err(Error::Lookup(_))
        ));
    }

    #[test]
    fn empty_graph_view() {
        let g = graph(vec![], &[]);
        let v = g.homogeneous_view();
        assert_eq!((v.rows(), v.cols(), v.nnz()), (0, 0, 0));
    }

    fn arb_typed_multigraph(max_n: usize) -> impl Strategy<Value = (Vec<NodeType>, Vec<(usize, usize)>)> {
        (1..=max_n).prop_flat_map(|n| {
            (
                proptest::collection::vec((0..8usize).prop_map(|i| NodeType::ALL[i]), n),
                proptest::collection::vec((0..n, 0..n), 0..4 * n),
            )
        })
    }

    proptest! {
        #[test]
        fn per_type_counts_match_tally((types, edges) in arb_typed_multigraph(20)) {
            let g = graph(types.clone(), &edges);
            prop_assert_eq!(g.edge_type_histogram(), tally(&types, &edges));
            let total: usize = g.edge_type_histogram().values().sum();
            prop_assert_eq!(total, edges.len());
            // Union of per-type edge lists is the input multiset.
            let mut union: Vec<(usize, usize)> = g
                .edge_types()
                .flat_map(|et| g.edges_of_type(et).unwrap().iter().map(|&i| (g.edges()[i].src, g.edges()[i].dst)))
                .collect();
            let mut input = edges.clone();
            union.sort();
            input.sort();
            prop_assert_eq!(union, input);
        }

        #[test]
        fn collapse_matches_group_by((types, edges) in arb_typed_multigraph(12), amounts in proptest::collection::vec(0.0f64..10.0, 48)) {
            let raw: Vec<Edge> = edges.iter().enumerate().map(|(i, &(s, d))| Edge::transfer(s, d, amounts[i % 48], i as i64)).collect();
            let g = derive_edge_types(types, raw.clone()).unwrap();
            let c = g.collapse_multi_edges();
            let mut oracle: BTreeMap<(usize, usize), (u64, f64)> = BTreeMap::new();
            for e in &raw {
                let slot = oracle.entry((e.src, e.dst)).or_insert((0, 0.0));
                slot.0 += 1;
                slot.1 += e.amount;
            }
            prop_assert_eq!(c.edge_count(), oracle.len());
            for e in c.edges() {
                let (cnt, amt) = oracle[&(e.src, e.dst)];
                prop_assert_eq!(e.count, cnt);
                prop_assert!((e.amount - amt).abs() < 1e-9);
            }
            // Homogeneous view nonzeros equal the collapsed edge count.
            prop_assert_eq!(g.homogeneous_view().nnz(), c.edge_count());
        }

        #[test]
        fn sym_is_symmetric_and_row_sums_to_one((types, edges) in arb_typed_multigraph(15)) {
            let g = graph(types, &edges);
            let d = g.normalized_adjacency(None, NormMode::Sym).unwrap().to_dense();
            prop_assert!(d.max_abs_diff(&d.transpose()) < 1e-12);
            for et in g.edge_types().collect::<Vec<_>>() {
                let r = g.normalized_adjacency(Some(et), NormMode::Row).unwrap();
                for (i, s) in r.row_sums().into_iter().enumerate() {
                    if r.row_nnz(i) > 0 {
                        prop_assert!((s - 1.0).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
