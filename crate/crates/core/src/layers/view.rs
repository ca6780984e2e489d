use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::hgraph::{EdgeType, HeteroGraph, NodeType, NormMode};
use crate::metapath::{account_nodes, metapath_adjacency, MetaPath};
use rand::seq::index::sample;

use crate::numcore::{rng_from_seed, SparseMatrix};

/// Directed edge list in a fixed index space; `src[e] → dst[e]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeList {
    pub src: Arc<Vec<usize>>,
    pub dst: Arc<Vec<usize>>,
}

impl EdgeList {
    pub fn new(src: Vec<usize>, dst: Vec<usize>) -> Self {
        assert_eq!(src.len(), dst.len());
        EdgeList {
            src: Arc::new(src),
            dst: Arc::new(dst),
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Edges of a sparse adjacency (row = target, column = source).
    pub fn from_adjacency(adj: &SparseMatrix) -> Self {
        let (mut src, mut dst) = (Vec::new(), Vec::new());
        for (i, j, _) in adj.triplets() {
            src.push(j);
            dst.push(i);
        }
        EdgeList::new(src, dst)
    }
}

/// One relation's row-normalized adjacency compacted to the nodes it touches.
#[derive(Debug, Clone)]
pub struct RelationBlock {
    /// Distinct source nodes (ascending).
    pub sources: Arc<Vec<usize>>,
    /// Distinct target nodes (ascending).
    pub targets: Arc<Vec<usize>>,
    /// `|targets| × |sources|`, each row summing to 1.
    pub adj: Arc<SparseMatrix>,
    /// Distinct directed pairs of this relation, in full node ids.
    pub edges: EdgeList,
    /// Per edge, the position of its source in `sources`.
    pub local_src: Arc<Vec<usize>>,
}

/// Everything a forward pass needs from one (sub)graph, precomputed once.
///
/// Homogeneous layers see the symmetrized union of all edge types;
/// heterogeneous layers keep direction and relation type.
#[derive(Debug, Clone)]
pub struct GraphView {
    pub node_count: usize,
    pub node_types: Vec<NodeType>,
    /// `D̃^{-1/2}(A+I)D̃^{-1/2}` over the symmetrized homogeneous view.
    pub sym_adj: Arc<SparseMatrix>,
    /// Symmetrized neighbor lists (no self-loops).
    pub neighbors: Vec<Vec<usize>>,
    /// Row-normalized mean over `neighbors`.
    pub neighbor_mean: Arc<SparseMatrix>,
    /// Symmetrized edges plus one self-loop per node.
    pub attention_edges: EdgeList,
    pub relations: BTreeMap<EdgeType, RelationBlock>,
    /// Node ids of each type, indexed by type ordinal.
    pub nodes_by_type: Vec<Arc<Vec<usize>>>,
    /// Account node ids; the index space of meta-path adjacencies.
    pub accounts: Arc<Vec<usize>>,
    /// Per meta-path, reachability edges over account positions (self-loops
    /// included), with at most `METAPATH_NEIGHBOR_CAP` other sources per target.
    pub metapath_edges: Vec<EdgeList>,
}

/// Meta-path neighbors kept per target. Hubs make reachability nearly dense;
/// a uniform seeded sample of this size bounds memory and time.
pub const METAPATH_NEIGHBOR_CAP: usize = 32;

impl GraphView {
    /// Builds the view for `g` (collapsed internally). `metapaths` are only
    /// materialized for HAN models.
    pub fn build(g: &HeteroGraph, metapaths: &[MetaPath]) -> GraphView {
        let g = if g.is_collapsed() { g.clone() } else { g.collapse_multi_edges() };
        let n = g.node_count();
        let sym_adj = Arc::new(
            g.normalized_adjacency(None, NormMode::Sym)
                .expect("homogeneous selection always exists"),
        );
        let neighbors = g.symmetric_neighbors();
        let mut trip = Vec::new();
        for (i, nb) in neighbors.iter().enumerate() {
            for &j in nb {
                trip.push((i, j, 1.0 / nb.len() as f64));
            }
        }
        let neighbor_mean = Arc::new(SparseMatrix::from_triplets(n, n, &trip).expect("in range"));

        let mut att: BTreeSet<(usize, usize)> = BTreeSet::new();
        for (i, nb) in neighbors.iter().enumerate() {
            att.insert((i, i));
            for &j in nb {
                att.insert((i, j));
            }
        }
        let attention_edges = EdgeList::new(
            att.iter().map(|&(_, j)| j).collect(),
            att.iter().map(|&(i, _)| i).collect(),
        );

        let mut relations = BTreeMap::new();
        for et in g.edge_types().collect::<Vec<_>>() {
            let pairs: BTreeSet<(usize, usize)> = g
                .edges_of_type(et)
                .unwrap()
                .iter()
                .map(|&i| (g.edges()[i].src, g.edges()[i].dst))
                .collect();
            relations.insert(et, relation_block(&pairs));
        }

        let nodes_by_type = NodeType::ALL
            .iter()
            .map(|&t| Arc::new(g.nodes_of_type(t)))
            .collect();
        let accounts = Arc::new(account_nodes(&g));
        let metapath_edges = metapaths
            .iter()
            .enumerate()
            .map(|(p, mp)| capped_edges(&metapath_adjacency(&g, mp), METAPATH_NEIGHBOR_CAP, p as u64))
            .collect();
        GraphView {
            node_count: n,
            node_types: g.node_types().to_vec(),
            sym_adj,
            neighbors,
            neighbor_mean,
            attention_edges,
            relations,
            nodes_by_type,
            accounts,
            metapath_edges,
        }
    }
}

/// Self-loops plus at most `cap` other sources per target row, sampled
/// uniformly with a fixed seed.
pub fn capped_edges(adj: &SparseMatrix, cap: usize, seed: u64) -> EdgeList {
    let mut rng = rng_from_seed(seed);
    let (mut src, mut dst) = (Vec::new(), Vec::new());
    for i in 0..adj.rows() {
        let mut others: Vec<usize> = adj.row(i).map(|(j, _)| j).filter(|&j| j != i).collect();
        if others.len() > cap {
            let mut keep: Vec<usize> = sample(&mut rng, others.len(), cap).into_iter().map(|k| others[k]).collect();
            keep.sort_unstable();
            others = keep;
        }
        let has_self = adj.row(i).any(|(j, _)| j == i);
        if has_self {
            src.push(i);
            dst.push(i);
        }
        for j in others {
            src.push(j);
            dst.push(i);
        }
    }
    EdgeList::new(src, dst)
}

fn relation_block(pairs: &BTreeSet<(usize, usize)>) -> RelationBlock {
    let sources: Vec<usize> = pairs.iter().map(|p| p.0).collect::<BTreeSet<_>>().into_iter().collect();
    let targets: Vec<usize> = pairs.iter().map(|p| p.1).collect::<BTreeSet<_>>().into_iter().collect();
    let spos: BTreeMap<usize, usize> = sources.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    let tpos: BTreeMap<usize, usize> = targets.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    let mut indeg = vec![0.0; targets.len()];
    for &(_, d) in pairs {
        indeg[tpos[&d]] += 1.0;
    }
    let trip: Vec<(usize, usize, f64)> = pairs
        .iter()
        .map(|&(s, d)| (tpos[&d], spos[&s], 1.0 / indeg[tpos[&d]]))
        .collect();
    let adj = SparseMatrix::from_triplets(targets.len(), sources.len(), &trip).expect("in range");
    RelationBlock {
        sources: Arc::new(sources),
        targets: Arc::new(targets),
        adj: Arc::new(adj),
        edges: EdgeList::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect()),
        local_src: Arc::new(pairs.iter().map(|p| spos[&p.0]).collect()),
    }
}
