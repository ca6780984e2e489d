//! Transaction and label file parsing, balanced subgraph extraction, and the
//! timestamp-ordered train/test split.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hgraph::{Edge, HeteroGraph, NodeType};
use crate::numcore::rng_from_seed;

/// One directed transfer as read from a transactions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionRecord {
    #[serde(alias = "from", alias = "source")]
    pub source_address: String,
    #[serde(alias = "to", alias = "target")]
    pub target_address: String,
    pub amount: f64,
    pub timestamp: i64,
}

impl TransactionRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.source_address.is_empty() || self.target_address.is_empty() {
            return Err("empty address".into());
        }
        if !self.amount.is_finite() || self.amount < 0.0 {
            return Err(format!("amount {} must be a finite non-negative number", self.amount));
        }
        if self.timestamp <= 0 {
            return Err(format!("timestamp {} must be positive", self.timestamp));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LabelKind {
    FraudFlag(bool),
    NodeType(NodeType),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub address: String,
    pub kind: LabelKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ParseMode {
    /// Abort on the first malformed row.
    #[default]
    Strict,
    /// Skip malformed rows and count them.
    Lenient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    /// `(line, reason)` of every skipped row (lenient mode only).
    pub rejected: Vec<(u64, String)>,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn is_json_lines(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("ndjson") | Some("json")
    )
}

fn parse_timestamp(s: &str) -> std::result::Result<i64, String> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Ok(v);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v.fract() == 0.0 => Ok(v as i64),
        _ => Err(format!("invalid timestamp {s:?}")),
    }
}

fn column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers
        .iter()
        .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
}

/// Generic delimited-file reader: resolves columns by header name, then maps
/// each row through `row`. Line numbers are 1-based file lines.
fn read_csv<T>(
    path: &Path,
    mode: ParseMode,
    columns: &[&[&str]],
    mut row: impl FnMut(&[&str]) -> std::result::Result<T, String>,
) -> Result<Parsed<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(open(path)?));
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            path: path.into(),
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let idx: Vec<usize> = columns
        .iter()
        .map(|names| {
            column(&headers, names).ok_or_else(|| Error::Parse {
                path: path.into(),
                line: 1,
                msg: format!("missing column {:?} in header {:?}", names[0], headers),
            })
        })
        .collect::<Result<_>>()?;

    let mut out = Parsed {
        records: Vec::new(),
        rejected: Vec::new(),
    };
    for rec in rdr.records() {
        let (line, result) = match rec {
            Ok(r) => {
                let line = r.position().map_or(0, |p| p.line());
                let fields: Option<Vec<&str>> = idx.iter().map(|&i| r.get(i)).collect();
                let res = match fields {
                    Some(f) => row(&f),
                    None => Err(format!("expected at least {} fields", idx.len())),
                };
                (line, res)
            }
            Err(e) => (e.position().map_or(0, |p| p.line()), Err(e.to_string())),
        };
        match result {
            Ok(v) => out.records.push(v),
            Err(msg) => match mode {
                ParseMode::Strict => {
                    return Err(Error::Parse {
                        path: path.into(),
                        line,
                        msg,
                    })
                }
                ParseMode::Lenient => out.rejected.push((line, msg)),
            },
        }
    }
    Ok(out)
}

/// Reads a transactions file: CSV with header `from,to,amount,timestamp`, or
/// JSON lines (`.jsonl`/`.ndjson`/`.json`) with the same keys.
pub fn parse_transactions(path: &Path, mode: ParseMode) -> Result<Parsed<TransactionRecord>> {
    if is_json_lines(path) {
        return parse_transactions_jsonl(path, mode);
    }
    read_csv(
        path,
        mode,
        &[&["from", "source"], &["to", "target"], &["amount", "value"], &["timestamp", "time"]],
        |f| {
            let amount = f[2]
                .parse::<f64>()
                .map_err(|_| format!("invalid amount {:?}", f[2]))?;
            let rec = TransactionRecord {
                source_address: f[0].to_string(),
                target_address: f[1].to_string(),
                amount,
                timestamp: parse_timestamp(f[3])?,
            };
            rec.validate()?;
            Ok(rec)
        },
    )
}

fn parse_transactions_jsonl(path: &Path, mode: ParseMode) -> Result<Parsed<TransactionRecord>> {
    let reader = BufReader::new(open(path)?);
    let mut out = Parsed {
        records: Vec::new(),
        rejected: Vec::new(),
    };
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let res = serde_json::from_str::<TransactionRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|r| r.validate().map(|_| r));
        match (res, mode) {
            (Ok(r), _) => out.records.push(r),
            (Err(msg), ParseMode::Strict) => {
                return Err(Error::Parse {
                    path: path.into(),
                    line: line_no,
                    msg,
                })
            }
            (Err(msg), ParseMode::Lenient) => out.rejected.push((line_no, msg)),
        }
    }
    Ok(out)
}

/// Reads `address,is_fraud` with `is_fraud ∈ {0,1}`.
pub fn parse_fraud_labels(path: &Path, mode: ParseMode) -> Result<Parsed<LabelRecord>> {
    read_csv(path, mode, &[&["address", "node"], &["is_fraud", "label", "isfraud"]], |f| {
        let flag = match f[1] {
            "1" | "true" | "True" => true,
            "0" | "false" | "False" => false,
            other => return Err(format!("is_fraud must be 0 or 1, got {other:?}")),
        };
        if f[0].is_empty() {
            return Err("empty address".into());
        }
        Ok(LabelRecord {
            address: f[0].to_string(),
            kind: LabelKind::FraudFlag(flag),
        })
    })
}

/// Reads `address,type` with types from the eight-role vocabulary.
pub fn parse_node_types(path: &Path, mode: ParseMode) -> Result<Parsed<LabelRecord>> {
    read_csv(path, mode, &[&["address", "node"], &["type", "node_type"]], |f| {
        let t = NodeType::parse(f[1]).map_err(|e| e.to_string())?;
        Ok(LabelRecord {
            address: f[0].to_string(),
            kind: LabelKind::NodeType(t),
        })
    })
}

/// Counters describing how labels attached while building a graph.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    pub fraud_labels_applied: usize,
    pub fraud_labels_unmatched: usize,
    pub type_labels_applied: usize,
    pub type_labels_unmatched: usize,
    /// Fraud-labelled addresses whose type label was not `account`; the type is
    /// reset to `account`.
    pub type_conflicts: usize,
}

/// Interns addresses in first-appearance order and attaches labels. Addresses
/// without a type label default to `account`.
pub fn build_graph(
    transactions: &[TransactionRecord],
    labels: &[LabelRecord],
) -> Result<(HeteroGraph, BuildStats)> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut addresses: Vec<String> = Vec::new();
    let mut edges = Vec::with_capacity(transactions.len());
    for t in transactions {
        let mut ids = [0usize; 2];
        for (slot, a) in ids.iter_mut().zip([&t.source_address, &t.target_address]) {
            *slot = *index.entry(a.as_str()).or_insert_with(|| {
                addresses.push(a.clone());
                addresses.len() - 1
            });
        }
        edges.push(Edge::transfer(ids[0], ids[1], t.amount, t.timestamp));
    }
    let lookup = index;

    let n = addresses.len();
    let mut types = vec![NodeType::Account; n];
    let mut fraud = vec![None; n];
    let mut stats = BuildStats::default();
    for l in labels {
        let Some(&i) = lookup.get(l.address.as_str()) else {
            match l.kind {
                LabelKind::FraudFlag(_) => stats.fraud_labels_unmatched += 1,
                LabelKind::NodeType(_) => stats.type_labels_unmatched += 1,
            }
            continue;
        };
        match l.kind {
            LabelKind::FraudFlag(true) => {
                fraud[i] = Some(true);
                stats.fraud_labels_applied += 1;
            }
            LabelKind::FraudFlag(false) => {}
            LabelKind::NodeType(t) => {
                types[i] = t;
                stats.type_labels_applied += 1;
            }
        }
    }
    for i in 0..n {
        if fraud[i] == Some(true) && types[i] != NodeType::Account {
            types[i] = NodeType::Account;
            stats.type_conflicts += 1;
        }
    }
    let g = HeteroGraph::build(addresses, types, fraud, edges, false)?;
    Ok((g, stats))
}

/// Balanced labelled subgraph: all fraud nodes, an equal number of uniformly
/// sampled non-fraud accounts, and every 1-hop in/out neighbor of those seeds.
#[derive(Debug, Clone)]
pub struct Subgraph {
    /// Induced subgraph. Fraud seeds carry `Some(true)`, sampled normals
    /// `Some(false)`, neighbors `None`.
    pub graph: HeteroGraph,
    /// Original node id of each subgraph node.
    pub original_ids: Vec<usize>,
}

pub fn extract_balanced_subgraph(g: &HeteroGraph, fraud_nodes: &[usize], seed: u64) -> Result<Subgraph> {
    if fraud_nodes.is_empty() {
        return Err(Error::Contract("no fraud nodes to balance against".into()));
    }
    let fraud: BTreeSet<usize> = fraud_nodes.iter().copied().collect();
    if let Some(&bad) = fraud.iter().find(|&&i| i >= g.node_count()) {
        return Err(Error::Contract(format!("fraud node {bad} outside graph")));
    }
    let candidates: Vec<usize> = (0..g.node_count())
        .filter(|i| !fraud.contains(i) && g.node_type(*i) == NodeType::Account)
        .collect();
    if candidates.len() < fraud.len() {
        return Err(Error::Contract(format!(
            "{} normal accounts cannot balance {} fraud nodes",
            candidates.len(),
            fraud.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut normals: Vec<usize> = sample(&mut rng, candidates.len(), fraud.len())
        .into_iter()
        .map(|k| candidates[k])
        .collect();
    normals.sort_unstable();

    let mut labels = vec![None; g.node_count()];
    let mut seeds: BTreeSet<usize> = BTreeSet::new();
    for &f in &fraud {
        labels[f] = Some(true);
        seeds.insert(f);
    }
    for &n in &normals {
        labels[n] = Some(false);
        seeds.insert(n);
    }
    let mut keep = seeds.clone();
    for e in g.edges() {
        if seeds.contains(&e.src) {
            keep.insert(e.dst);
        }
        if seeds.contains(&e.dst) {
            keep.insert(e.src);
        }
    }
    let relabeled = g.with_labels(labels)?;
    let (graph, original_ids) = relabeled.induced_subgraph(&keep);
    Ok(Subgraph { graph, original_ids })
}

/// Timestamp-ordered partition of edges plus the labelled node sets evaluated
/// on each side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train_edges: Vec<usize>,
    pub test_edges: Vec<usize>,
    /// Labelled nodes incident to at least one training edge.
    pub train_eval_nodes: Vec<usize>,
    /// Labelled nodes incident to at least one test edge.
    pub test_eval_nodes: Vec<usize>,
    /// Fraud nodes already known from training (subset of `train_eval_nodes`).
    pub train_known_fraud: Vec<usize>,
}

/// Stable sort of edges by timestamp; the first `⌈f·E⌉` go to training.
pub fn temporal_split(g: &HeteroGraph, train_fraction: f64) -> Result<SplitAssignment> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Contract(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let e = g.edge_count();
    if e == 0 {
        return Err(Error::Contract("cannot split a graph without edges".into()));
    }
    let mut order: Vec<usize> = (0..e).collect();
    order.sort_by_key(|&i| g.edges()[i].timestamp);
    // The epsilon keeps exact products such as 0.8·10 from rounding up.
    let n_train = ((train_fraction * e as f64 - 1e-9).ceil() as usize).clamp(1, e);
    let test_edges = order.split_off(n_train);
    let train_edges = order;

    let incident = |ids: &[usize]| -> BTreeSet<usize> {
        ids.iter()
            .flat_map(|&i| [g.edges()[i].src, g.edges()[i].dst])
            .filter(|&v| g.labels()[v].is_some())
            .collect()
    };
    let train_eval: BTreeSet<usize> = incident(&train_edges);
    let test_eval: BTreeSet<usize> = incident(&test_edges);
    let train_known_fraud = train_eval.iter().copied().filter(|&v| g.is_fraud(v)).collect();
    Ok(SplitAssignment {
        train_edges,
        test_edges,
        train_eval_nodes: train_eval.into_iter().collect(),
        test_eval_nodes: test_eval.into_iter().collect(),
        train_known_fraud,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn three_rows_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "tx.csv",
            "from,to,amount,timestamp\na,b,1.5,100\nb,c,0,101\nc,a,2.25,102\n",
        );
        let parsed = parse_transactions(&p, ParseMode::Strict).unwrap();
        assert_eq!(parsed.records.len(), 3);
        assert_eq!(parsed.records[0].source_address, "a");
        assert_eq!(parsed.records[2].amount, 2.25);
    }

    #[test]
    fn negative_amount_rejected_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "tx.csv", "from,to,amount,timestamp\na,b,1,100\na,b,-1,101\n");
        match parse_transactions(&p, ParseMode::Strict) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let lenient = parse_transactions(&p, ParseMode::Lenient).unwrap();
        assert_eq!(lenient.records.len(), 1);
        assert_eq!(lenient.rejected.len(), 1);
        assert_eq!(lenient.rejected[0].0, 3);
    }

    #[test]
    fn json_lines_alternative() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "tx.jsonl",
            "{\"from\":\"a\",\"to\":\"b\",\"amount\":1.0,\"timestamp\":5}\n\n{\"source_address\":\"b\",\"target_address\":\"a\",\"amount\":2.0,\"timestamp\":6}\n",
        );
        let parsed = parse_transactions(&p, ParseMode::Strict).unwrap();
        assert_eq!(parsed.records.len(), 2);
    }

    #[test]
    fn labels_and_default_type() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(&dir, "fraud.csv", "address,is_fraud\na,1\nb,0\nzz,1\n");
        let t = write(&dir, "types.csv", "address,type\nc,exchange\n");
        let bad = write(&dir, "bad.csv", "address,type\nc,miner\n");
        let tx = vec![
            TransactionRecord {
                source_address: "a".into(),
                target_address: "b".into(),
                amount: 1.0,
                timestamp: 1,
            },
            TransactionRecord {
                source_address: "b".into(),
                target_address: "c".into(),
                amount: 1.0,
                timestamp: 2,
            },
        ];
        let mut labels = parse_fraud_labels(&f, ParseMode::Strict).unwrap().records;
        labels.extend(parse_node_types(&t, ParseMode::Strict).unwrap().records);
        let (g, stats) = build_graph(&tx, &labels).unwrap();
        assert_eq!(g.node_types(), &[NodeType::Account, NodeType::Account, NodeType::Exchange]);
        assert_eq!(g.labels(), &[Some(true), None, None]);
        assert_eq!(stats.fraud_labels_unmatched, 1);
        assert!(parse_node_types(&bad, ParseMode::Strict).is_err());
    }

    fn chain(n: usize, ts: impl Fn(usize) -> i64) -> HeteroGraph {
        let edges = (0..n).map(|i| Edge::transfer(i, (i + 1) % (n + 1), 1.0, ts(i))).collect();
        HeteroGraph::build(
            (0..=n).map(|i| format!("n{i}")).collect(),
            vec![NodeType::Account; n + 1],
            vec![None; n + 1],
            edges,
            false,
        )
        .unwrap()
    }

    #[test]
    fn split_ten_edges_eight_two() {
        let g = chain(10, |i| 100 - i as i64);
        let s = temporal_split(&g, 0.8).unwrap();
        assert_eq!((s.train_edges.len(), s.test_edges.len()), (8, 2));
        // Latest timestamps are the first edges in input order.
        assert_eq!(s.test_edges, vec![1, 0]);

        let g = chain(10, |_| 7);
        let s = temporal_split(&g, 0.8).unwrap();
        assert_eq!(s.train_edges, (0..8).collect::<Vec<_>>());
        assert_eq!(s.test_edges, vec![8, 9]);
    }

    #[test]
    fn split_contract_errors() {
        let g = chain(0, |_| 1);
        assert!(temporal_split(&g, 0.8).is_err());
        let g = chain(3, |i| i as i64 + 1);
        assert!(temporal_split(&g, 1.0).is_err());
        assert!(temporal_split(&g, 0.0).is_err());
    }

    #[test]
    fn saturated_extraction_is_whole_graph() {
        // Two fraud, two normals, everything is a seed.
        let mut g = chain(3, |i| i as i64 + 1);
        g = g.with_labels(vec![Some(true), Some(true), None, None]).unwrap();
        let sub = extract_balanced_subgraph(&g, &[0, 1], 9).unwrap();
        assert_eq!(sub.graph.node_count(), 4);
        assert_eq!(sub.graph.edge_count(), 3);
        assert_eq!(sub.graph.labels(), &[Some(true), Some(true), Some(false), Some(false)]);
    }

    #[test]
    fn extraction_needs_enough_normals() {
        let g = chain(1, |_| 1);
        assert!(matches!(
            extract_balanced_subgraph(&g, &[0, 1], 1),
            Err(Error::Contract(_))
        ));
        assert!(extract_balanced_subgraph(&g, &[], 1).is_err());
    }
}
