//! Account-endpoint meta-paths: enumeration with exact instance counts, and
//! reachability adjacencies over account nodes for HAN.
//!
//! An instance of a meta-path is a directed walk over the distinct `(src, dst)`
//! pairs of the graph whose node types follow the meta-path's type sequence.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hgraph::{HeteroGraph, NodeType};
use crate::numcore::SparseMatrix;

/// Type sequence of 2–4 nodes (1–3 edges) starting and ending at `account`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MetaPath {
    types: Vec<NodeType>,
}

impl MetaPath {
    pub const MAX_EDGES: usize = 3;

    pub fn new(types: Vec<NodeType>) -> Result<MetaPath> {
        if types.len() < 2 || types.len() > Self::MAX_EDGES + 1 {
            return Err(Error::Contract(format!(
                "meta-path needs 2 to {} node types, got {}",
                Self::MAX_EDGES + 1,
                types.len()
            )));
        }
        if types[0] != NodeType::Account || *types.last().unwrap() != NodeType::Account {
            return Err(Error::Contract("meta-path endpoints must be account".into()));
        }
        Ok(MetaPath { types })
    }

    pub fn types(&self) -> &[NodeType] {
        &self.types
    }

    pub fn edge_len(&self) -> usize {
        self.types.len() - 1
    }

    pub fn parse(s: &str) -> Result<MetaPath> {
        MetaPath::new(s.split('>').map(NodeType::parse).collect::<Result<_>>()?)
    }
}

impl fmt::Display for MetaPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.types.iter().map(|t| t.name()).collect();
        f.write_str(&names.join(">"))
    }
}

fn distinct_pairs(g: &HeteroGraph) -> BTreeSet<(usize, usize)> {
    g.edges().iter().map(|e| (e.src, e.dst)).collect()
}

fn out_lists(g: &HeteroGraph, pairs: &BTreeSet<(usize, usize)>) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); g.node_count()];
    for &(s, d) in pairs {
        out[s].push(d);
    }
    out
}

/// Walk counts for every type sequence of 1..=max_edges edges, any endpoints.
fn count_all_sequences(g: &HeteroGraph, max_edges: usize) -> BTreeMap<Vec<NodeType>, u64> {
    let pairs = distinct_pairs(g);
    let out = out_lists(g, &pairs);
    let mut frontier: HashMap<Vec<NodeType>, HashMap<usize, u64>> = HashMap::new();
    for v in 0..g.node_count() {
        *frontier
            .entry(vec![g.node_type(v)])
            .or_default()
            .entry(v)
            .or_insert(0) += 1;
    }
    let mut totals = BTreeMap::new();
    for _ in 0..max_edges {
        let mut next: HashMap<Vec<NodeType>, HashMap<usize, u64>> = HashMap::new();
        for (seq, ends) in &frontier {
            for (&u, &c) in ends {
                for &v in &out[u] {
                    let mut s = seq.clone();
                    s.push(g.node_type(v));
                    *next.entry(s).or_default().entry(v).or_insert(0) += c;
                }
            }
        }
        for (seq, ends) in &next {
            totals.insert(seq.clone(), ends.values().sum::<u64>());
        }
        frontier = next;
    }
    totals
}

/// All account-endpoint meta-paths with ≥1 instance, ranked by instance count
/// (descending, ties by type sequence).
pub fn enumerate_metapaths(g: &HeteroGraph, max_edges: usize) -> Result<Vec<(MetaPath, u64)>> {
    if max_edges < 1 {
        return Err(Error::Contract("max_edges must be at least 1".into()));
    }
    if max_edges > MetaPath::MAX_EDGES {
        return Err(Error::Contract(format!(
            "max_edges {max_edges} exceeds {}",
            MetaPath::MAX_EDGES
        )));
    }
    let mut out: Vec<(MetaPath, u64)> = count_all_sequences(g, max_edges)
        .into_iter()
        .filter(|(seq, _)| seq[0] == NodeType::Account && *seq.last().unwrap() == NodeType::Account)
        .map(|(seq, c)| (MetaPath { types: seq }, c))
        .collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

/// The `k` highest-count meta-paths.
pub fn top_metapaths(g: &HeteroGraph, max_edges: usize, k: usize) -> Result<Vec<MetaPath>> {
    Ok(enumerate_metapaths(g, max_edges)?
        .into_iter()
        .take(k)
        .map(|(p, _)| p)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaPathRow {
    pub type_sequence: String,
    pub instance_count: u64,
    /// Share of all account-endpoint instances.
    pub share: f64,
}

/// Meta-path statistics under both readings of "meta-paths connected to account":
/// walk instances, and edges lying on at least one account-endpoint walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaPathReport {
    pub max_edges: usize,
    pub rows: Vec<MetaPathRow>,
    pub account_instances: u64,
    pub all_instances: u64,
    pub instance_share: f64,
    pub incident_edges: usize,
    pub total_edges: usize,
    pub edge_share: f64,
}

/// Multi-source BFS distance (in edges) from any account, along `adj`.
fn account_distance(g: &HeteroGraph, adj: &[Vec<usize>]) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.node_count()];
    let mut q = VecDeque::new();
    for v in 0..g.node_count() {
        if g.node_type(v) == NodeType::Account {
            dist[v] = 0;
            q.push_back(v);
        }
    }
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                q.push_back(v);
            }
        }
    }
    dist
}

pub fn metapath_report(g: &HeteroGraph, max_edges: usize) -> Result<MetaPathReport> {
    let paths = enumerate_metapaths(g, max_edges)?;
    let all_instances: u64 = count_all_sequences(g, max_edges).values().sum();
    let account_instances: u64 = paths.iter().map(|(_, c)| c).sum();
    let rows = paths
        .iter()
        .map(|(p, c)| MetaPathRow {
            type_sequence: p.to_string(),
            instance_count: *c,
            share: ratio(*c as f64, account_instances as f64),
        })
        .collect();

    let pairs = distinct_pairs(g);
    let fwd = out_lists(g, &pairs);
    let mut rev = vec![Vec::new(); g.node_count()];
    for &(s, d) in &pairs {
        rev[d].push(s);
    }
    // Edges from the nearest account to each node, and from each node to the
    // nearest account.
    let after_account = account_distance(g, &fwd);
    let before_account = account_distance(g, &rev);
    let incident_edges = pairs
        .iter()
        .filter(|&&(s, d)| {
            let (a, b) = (after_account[s], before_account[d]);
            a != usize::MAX && b != usize::MAX && a + 1 + b <= max_edges
        })
        .count();
    Ok(MetaPathReport {
        max_edges,
        rows,
        account_instances,
        all_instances,
        instance_share: ratio(account_instances as f64, all_instances as f64),
        incident_edges,
        total_edges: pairs.len(),
        edge_share: ratio(incident_edges as f64, pairs.len() as f64),
    })
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

impl MetaPathReport {
    /// CSV columns: `type_sequence,instance_count,share`, followed by summary
    /// rows prefixed with `#`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        let err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["type_sequence", "instance_count", "share"]).map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.type_sequence.clone(),
                r.instance_count.to_string(),
                format!("{:.6}", r.share),
            ])
            .map_err(err)?;
        }
        w.write_record([
            "#account_instances/all_instances".to_string(),
            format!("{}/{}", self.account_instances, self.all_instances),
            format!("{:.6}", self.instance_share),
        ])
        .map_err(err)?;
        w.write_record([
            "#incident_edges/total_edges".to_string(),
            format!("{}/{}", self.incident_edges, self.total_edges),
            format!("{:.6}", self.edge_share),
        ])
        .map_err(err)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Vec<MetaPathRow>> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
            if rec[0].starts_with('#') {
                continue;
            }
            rows.push(MetaPathRow {
                type_sequence: rec[0].to_string(),
                instance_count: rec[1].parse().map_err(|_| Error::Format("bad count".into()))?,
                share: rec[2].parse().map_err(|_| Error::Format("bad share".into()))?,
            });
        }
        Ok(rows)
    }
}

/// Account nodes in ascending id order; the index space of meta-path adjacencies.
pub fn account_nodes(g: &HeteroGraph) -> Vec<usize> {
    g.nodes_of_type(NodeType::Account)
}

/// `|A|×|A|` binary matrix over account nodes: entry `(i, j)` is set iff some
/// instance of `mp` runs from account `j` to account `i`. Self-loops are added
/// to every row.
pub fn metapath_adjacency(g: &HeteroGraph, mp: &MetaPath) -> SparseMatrix {
    let accounts = account_nodes(g);
    let mut pos = vec![usize::MAX; g.node_count()];
    for (k, &a) in accounts.iter().enumerate() {
        pos[a] = k;
    }
    let pairs = distinct_pairs(g);
    let out = out_lists(g, &pairs);
    let mut trip: BTreeSet<(usize, usize)> = (0..accounts.len()).map(|k| (k, k)).collect();
    for (j, &start) in accounts.iter().enumerate() {
        let mut frontier: BTreeSet<usize> = BTreeSet::from([start]);
        for &t in &mp.types[1..] {
            frontier = frontier
                .iter()
                .flat_map(|&u| out[u].iter().copied())
                .filter(|&v| g.node_type(v) == t)
                .collect();
            if frontier.is_empty() {
                break;
            }
        }
        for v in frontier {
            trip.insert((pos[v], j));
        }
    }
    let trip: Vec<(usize, usize, f64)> = trip.into_iter().map(|(i, j)| (i, j, 1.0)).collect();
    SparseMatrix::from_triplets(accounts.len(), accounts.len(), &trip).expect("indices in range")
}
