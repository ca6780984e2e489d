//! On-disk graph bundle written by `ingest` and read by every other command.
//!
//! A bundle directory holds `nodes.csv` (`index,address,type,is_fraud`, with
//! `is_fraud` empty for unlabelled nodes), `transactions.csv`
//! (`src,dst,amount,timestamp,count`) and `summary.json`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hgraph::{Edge, HeteroGraph, NodeType};
use crate::ingest::{extract_balanced_subgraph, BuildStats};

pub const NODES_FILE: &str = "nodes.csv";
pub const EDGES_FILE: &str = "transactions.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Serialize, Deserialize)]
struct NodeRow {
    index: usize,
    address: String,
    #[serde(rename = "type")]
    node_type: String,
    is_fraud: Option<u8>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeRow {
    src: usize,
    dst: usize,
    amount: f64,
    timestamp: i64,
    count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeCount {
    pub count: usize,
    /// Percentage of all nodes (or edges), rounded to two decimals.
    pub percent: f64,
}

/// Node and edge counts per type, plus the balanced-subgraph sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub nodes: usize,
    pub transactions: u64,
    pub distinct_edges: usize,
    pub fraud_labels: usize,
    pub node_types: BTreeMap<String, TypeCount>,
    pub edge_types: BTreeMap<String, TypeCount>,
    pub build: Option<BuildStats>,
    pub subgraph: Option<SubgraphSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphSummary {
    pub seed: u64,
    pub nodes: usize,
    pub transactions: u64,
    pub fraud: usize,
    pub normal: usize,
}

fn pct(c: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        (10_000.0 * c as f64 / total as f64).round() / 100.0
    }
}

impl GraphSummary {
    pub fn of(g: &HeteroGraph, build: Option<BuildStats>, subgraph_seed: Option<u64>) -> Result<GraphSummary> {
        let n = g.node_count();
        let hist = g.type_histogram();
        let node_types = NodeType::ALL
            .iter()
            .map(|t| {
                let c = hist[t.ordinal()];
                (t.name().to_string(), TypeCount { count: c, percent: pct(c, n) })
            })
            .collect();
        let e = g.transaction_count();
        let edge_types = g
            .edge_type_histogram()
            .into_iter()
            .map(|(et, c)| (et.name(), TypeCount { count: c, percent: pct(c, g.edge_count()) }))
            .collect();
        let fraud: Vec<usize> = (0..n).filter(|&i| g.is_fraud(i)).collect();
        let subgraph = match subgraph_seed {
            Some(seed) if !fraud.is_empty() => {
                let s = extract_balanced_subgraph(g, &fraud, seed)?;
                let labels = s.graph.labels();
                Some(SubgraphSummary {
                    seed,
                    nodes: s.graph.node_count(),
                    transactions: s.graph.transaction_count(),
                    fraud: labels.iter().filter(|l| **l == Some(true)).count(),
                    normal: labels.iter().filter(|l| **l == Some(false)).count(),
                })
            }
            _ => None,
        };
        Ok(GraphSummary {
            nodes: n,
            transactions: e,
            distinct_edges: g.collapse_multi_edges().edge_count(),
            fraud_labels: fraud.len(),
            node_types,
            edge_types,
            build,
            subgraph,
        })
    }

    /// Plain-text node-type and edge-type tables.
    pub fn render(&self) -> String {
        let mut s = format!(
            "nodes {}  transactions {}  distinct edges {}  fraud labels {}\n\nnode type          count    share\n",
            self.nodes, self.transactions, self.distinct_edges, self.fraud_labels
        );
        for (name, c) in &self.node_types {
            s += &format!("{name:<16} {:>8} {:>7.2}%\n", c.count, c.percent);
        }
        s += "\nedge type                          count    share\n";
        for (name, c) in &self.edge_types {
            s += &format!("{name:<32} {:>8} {:>7.2}%\n", c.count, c.percent);
        }
        if let Some(sub) = &self.subgraph {
            s += &format!(
                "\nbalanced subgraph (seed {}): {} nodes, {} transactions, {} fraud, {} normal\n",
                sub.seed, sub.nodes, sub.transactions, sub.fraud, sub.normal
            );
        }
        s
    }
}

pub struct BundlePaths {
    pub nodes: PathBuf,
    pub edges: PathBuf,
    pub summary: PathBuf,
}

impl BundlePaths {
    pub fn in_dir(dir: &Path) -> BundlePaths {
        BundlePaths {
            nodes: dir.join(NODES_FILE),
            edges: dir.join(EDGES_FILE),
            summary: dir.join(SUMMARY_FILE),
        }
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        path: path.into(),
        line,
        msg: e.to_string(),
    }
}

pub fn write_bundle(dir: &Path, g: &HeteroGraph, summary: &GraphSummary) -> Result<BundlePaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = BundlePaths::in_dir(dir);
    let file = |path: &Path| File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e));
    let mut w = csv::Writer::from_writer(file(&p.nodes)?);
    for i in 0..g.node_count() {
        w.serialize(NodeRow {
            index: i,
            address: g.addresses()[i].clone(),
            node_type: g.node_type(i).name().to_string(),
            is_fraud: g.labels()[i].map(u8::from),
        })
        .map_err(|e| csv_err(&p.nodes, e))?;
    }
    w.flush().map_err(|e| Error::io(&p.nodes, e))?;
    let mut w = csv::Writer::from_writer(file(&p.edges)?);
    for e in g.edges() {
        w.serialize(EdgeRow {
            src: e.src,
            dst: e.dst,
            amount: e.amount,
            timestamp: e.timestamp,
            count: e.count,
        })
        .map_err(|er| csv_err(&p.edges, er))?;
    }
    w.flush().map_err(|e| Error::io(&p.edges, e))?;
    let mut f = file(&p.summary)?;
    serde_json::to_writer_pretty(&mut f, summary)?;
    f.write_all(b"\n").map_err(|e| Error::io(&p.summary, e))?;
    Ok(p)
}

pub fn read_bundle(dir: &Path) -> Result<HeteroGraph> {
    let p = BundlePaths::in_dir(dir);
    let open = |path: &Path| File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e));
    let mut addresses = Vec::new();
    let mut types = Vec::new();
    let mut labels = Vec::new();
    for (k, row) in csv::Reader::from_reader(open(&p.nodes)?).deserialize::<NodeRow>().enumerate() {
        let row = row.map_err(|e| csv_err(&p.nodes, e))?;
        if row.index != k {
            return Err(Error::Parse {
                path: p.nodes.clone(),
                line: k as u64 + 2,
                msg: format!("expected index {k}, found {}", row.index),
            });
        }
        addresses.push(row.address);
        types.push(NodeType::parse(&row.node_type)?);
        labels.push(match row.is_fraud {
            None => None,
            Some(0) => Some(false),
            Some(1) => Some(true),
            Some(v) => {
                return Err(Error::Parse {
                    path: p.nodes.clone(),
                    line: k as u64 + 2,
                    msg: format!("is_fraud must be 0, 1 or empty, got {v}"),
                })
            }
        });
    }
    let mut edges = Vec::new();
    for row in csv::Reader::from_reader(open(&p.edges)?).deserialize::<EdgeRow>() {
        let r = row.map_err(|e| csv_err(&p.edges, e))?;
        edges.push(Edge {
            src: r.src,
            dst: r.dst,
            amount: r.amount,
            timestamp: r.timestamp,
            count: r.count,
        });
    }
    let collapsed = edges.iter().any(|e| e.count != 1);
    HeteroGraph::build(addresses, types, labels, edges, collapsed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    #[test]
    fn round_trip() {
        let data = generate(&SynthConfig::default().with_total_nodes(200).unwrap()).unwrap();
        let (g, stats) = data.to_graph().unwrap();
        let s = GraphSummary::of(&g, Some(stats), Some(0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), &g, &s).unwrap();
        let back = read_bundle(dir.path()).unwrap();
        assert_eq!(back.edges(), g.edges());
        assert_eq!(back.node_types(), g.node_types());
        assert_eq!(back.labels(), g.labels());
        assert_eq!(back.addresses(), g.addresses());
        let sub = s.subgraph.unwrap();
        assert_eq!(sub.fraud, sub.normal);
        assert_eq!(s.nodes, 200);
        assert_eq!(s.node_types["account"].count, 185);
    }
}
