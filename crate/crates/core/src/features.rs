//! Node features: transaction tallies, degrees, PageRank, one-hot node types,
//! and train-fitted standardization.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hgraph::{HeteroGraph, NodeType};
use crate::numcore::Tensor;

pub const BASE_COLUMNS: [&str; 7] = [
    "send_num",
    "recv_num",
    "send_amount",
    "recv_amount",
    "in_degree",
    "out_degree",
    "pagerank",
];
pub const BASE_DIM: usize = 7;
pub const ONEHOT_DIM: usize = NodeType::COUNT;

const MAGIC: &[u8; 8] = b"HGNNFEAT";
const VERSION: u32 = 1;

/// Which input columns a model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureVariant {
    /// The seven base columns.
    #[default]
    Base,
    /// Base columns followed by the eight one-hot type columns.
    #[serde(alias = "base+onehot", alias = "onehot")]
    BaseOnehot,
}

impl FeatureVariant {
    pub fn dim(self) -> usize {
        match self {
            FeatureVariant::Base => BASE_DIM,
            FeatureVariant::BaseOnehot => BASE_DIM + ONEHOT_DIM,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureVariant::Base => "base",
            FeatureVariant::BaseOnehot => "base+onehot",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(FeatureVariant::Base),
            "base+onehot" | "onehot" | "base-onehot" => Ok(FeatureVariant::BaseOnehot),
            _ => Err(Error::Config(format!("unknown feature variant {s:?}"))),
        }
    }
}

/// Transform applied to the two amount columns before standardization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AmountTransform {
    #[default]
    Raw,
    Log1p,
}

/// Per-node feature rows with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    columns: Vec<String>,
    values: Tensor,
}

impl FeatureMatrix {
    pub fn new(columns: Vec<String>, values: Tensor) -> Result<Self> {
        if values.shape().len() != 2 || values.cols() != columns.len() {
            return Err(Error::dim("FeatureMatrix", values.shape(), &[columns.len()]));
        }
        Ok(FeatureMatrix { columns, values })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor {
        self.values
    }

    pub fn node_count(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// Column-wise concatenation.
    pub fn concat(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.node_count() != other.node_count() {
            return Err(Error::dim("FeatureMatrix::concat", self.values.shape(), other.values.shape()));
        }
        let (n, a, b) = (self.node_count(), self.dim(), other.dim());
        let mut data = Vec::with_capacity(n * (a + b));
        for i in 0..n {
            data.extend_from_slice(self.values.row(i));
            data.extend_from_slice(other.values.row(i));
        }
        let mut cols = self.columns.clone();
        cols.extend(other.columns.iter().cloned());
        FeatureMatrix::new(cols, Tensor::matrix(n, a + b, data)?)
    }

    /// Last `k` columns.
    pub fn tail(&self, k: usize) -> FeatureMatrix {
        let (n, d) = (self.node_count(), self.dim());
        let data = (0..n).flat_map(|i| self.values.row(i)[d - k..].to_vec()).collect();
        FeatureMatrix {
            columns: self.columns[d - k..].to_vec(),
            values: Tensor::matrix(n, k, data).expect("consistent"),
        }
    }

    /// Binary layout: magic `HGNNFEAT`, u32 version, u64 node count, u64 dim,
    /// then per column a u32 byte length and UTF-8 name, then row-major f64,
    /// all little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.node_count() as u64).to_le_bytes())?;
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        for c in &self.columns {
            w.write_all(&(c.len() as u32).to_le_bytes())?;
            w.write_all(c.as_bytes())?;
        }
        for v in self.values.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<FeatureMatrix> {
        let fmt = |m: &str| Error::Format(format!("feature file: {m}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| fmt("truncated header"))?;
        if &magic != MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(fmt(&format!("unsupported version {version}")));
        }
        let n = read_u64(&mut r)? as usize;
        let d = read_u64(&mut r)? as usize;
        let mut columns = Vec::with_capacity(d);
        for _ in 0..d {
            let len = read_u32(&mut r)? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf).map_err(|_| fmt("truncated column name"))?;
            columns.push(String::from_utf8(buf).map_err(|_| fmt("column name not UTF-8"))?);
        }
        let mut data = Vec::with_capacity(n * d);
        let mut b = [0u8; 8];
        for _ in 0..n * d {
            r.read_exact(&mut b).map_err(|_| fmt("truncated body"))?;
            data.push(f64::from_le_bytes(b));
        }
        FeatureMatrix::new(columns, Tensor::matrix(n, d, data)?)
    }

    /// CSV with a `node` index column followed by the named feature columns.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        let mut header = vec!["node".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
        for i in 0..self.node_count() {
            let mut rec = vec![i.to_string()];
            rec.extend(self.values.row(i).iter().map(|v| format!("{v:?}")));
            w.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<FeatureMatrix> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        let headers = r.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
        let columns: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut data = Vec::new();
        let mut n = 0;
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
            for f in rec.iter().skip(1) {
                data.push(f.parse::<f64>().map_err(|_| Error::Format(format!("bad value {f:?}")))?);
            }
            n += 1;
        }
        FeatureMatrix::new(columns.clone(), Tensor::matrix(n, columns.len(), data)?)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated u32".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated u64".into()))?;
    Ok(u64::from_le_bytes(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PageRankConfig {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PageRankConfig {
    fn default() -> Self {
        PageRankConfig {
            damping: 0.85,
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PageRank {
    pub scores: Vec<f64>,
    pub iterations: usize,
    /// L1 change of the final iteration.
    pub residual: f64,
    pub converged: bool,
}

/// Power iteration on the collapsed, unweighted directed graph. Mass on
/// dangling nodes is spread uniformly over all nodes.
pub fn pagerank(g: &HeteroGraph, cfg: PageRankConfig) -> PageRank {
    let n = g.node_count();
    if n == 0 {
        return PageRank {
            scores: Vec::new(),
            iterations: 0,
            residual: 0.0,
            converged: true,
        };
    }
    let pairs: BTreeSet<(usize, usize)> = g.edges().iter().map(|e| (e.src, e.dst)).collect();
    let mut out_deg = vec![0usize; n];
    let mut in_lists: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(s, d) in &pairs {
        out_deg[s] += 1;
        in_lists[d].push(s);
    }
    let nf = n as f64;
    let mut p = vec![1.0 / nf; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let dangling: f64 = (0..n).filter(|&i| out_deg[i] == 0).map(|i| p[i]).sum();
        let base = (1.0 - cfg.damping) / nf + cfg.damping * dangling / nf;
        for (v, slot) in next.iter_mut().enumerate() {
            let inflow: f64 = in_lists[v].iter().map(|&u| p[u] / out_deg[u] as f64).sum();
            *slot = base + cfg.damping * inflow;
        }
        residual = p.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut p, &mut next);
        if residual < cfg.tol {
            break;
        }
    }
    let converged = residual < cfg.tol;
    if !converged {
        warn!("pagerank stopped after {iterations} iterations with residual {residual:e}");
    }
    PageRank {
        scores: p,
        iterations,
        residual,
        converged,
    }
}

/// The seven base columns. Counts and amounts read the per-edge transaction
/// aggregates, so raw and collapsed graphs give identical results; degrees
/// count distinct neighbors.
pub fn base_features(g: &HeteroGraph, amounts: AmountTransform) -> FeatureMatrix {
    let n = g.node_count();
    let mut send_num = vec![0.0; n];
    let mut recv_num = vec![0.0; n];
    let mut send_amt = vec![0.0; n];
    let mut recv_amt = vec![0.0; n];
    for e in g.edges() {
        send_num[e.src] += e.count as f64;
        recv_num[e.dst] += e.count as f64;
        send_amt[e.src] += e.amount;
        recv_amt[e.dst] += e.amount;
    }
    let pairs: BTreeSet<(usize, usize)> = g.edges().iter().map(|e| (e.src, e.dst)).collect();
    let mut in_deg = vec![0.0; n];
    let mut out_deg = vec![0.0; n];
    for &(s, d) in &pairs {
        out_deg[s] += 1.0;
        in_deg[d] += 1.0;
    }
    let pr = pagerank(g, PageRankConfig::default()).scores;
    let amount = |v: f64| match amounts {
        AmountTransform::Raw => v,
        AmountTransform::Log1p => v.ln_1p(),
    };
    let mut data = Vec::with_capacity(n * BASE_DIM);
    for i in 0..n {
        data.extend_from_slice(&[
            send_num[i],
            recv_num[i],
            amount(send_amt[i]),
            amount(recv_amt[i]),
            in_deg[i],
            out_deg[i],
            pr[i],
        ]);
    }
    FeatureMatrix {
        columns: BASE_COLUMNS.iter().map(|s| s.to_string()).collect(),
        values: Tensor::matrix(n, BASE_DIM, data).expect("consistent"),
    }
}

/// Eight indicator columns, one per node type ordinal.
pub fn one_hot_types(g: &HeteroGraph) -> FeatureMatrix {
    let n = g.node_count();
    let mut data = vec![0.0; n * ONEHOT_DIM];
    for (i, t) in g.node_types().iter().enumerate() {
        data[i * ONEHOT_DIM + t.ordinal()] = 1.0;
    }
    FeatureMatrix {
        columns: NodeType::ALL.iter().map(|t| format!("type_{}", t.name())).collect(),
        values: Tensor::matrix(n, ONEHOT_DIM, data).expect("consistent"),
    }
}

/// Base features, plus the one-hot block for [`FeatureVariant::BaseOnehot`].
pub fn build_features(g: &HeteroGraph, variant: FeatureVariant, amounts: AmountTransform) -> FeatureMatrix {
    let base = base_features(g, amounts);
    match variant {
        FeatureVariant::Base => base,
        FeatureVariant::BaseOnehot => base.concat(&one_hot_types(g)).expect("same node count"),
    }
}

/// Column means and floored standard deviations for the base columns, fitted
/// on a node subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-12;

impl Standardizer {
    /// Fits on `rows` of the first `min(dim, 7)` columns (population moments).
    pub fn fit(f: &FeatureMatrix, rows: &[usize]) -> Result<Standardizer> {
        if rows.is_empty() {
            return Err(Error::Contract("standardization needs a nonempty node subset".into()));
        }
        let k = f.dim().min(BASE_DIM);
        let m = rows.len() as f64;
        let mut mean = vec![0.0; k];
        for &r in rows {
            for (c, mu) in mean.iter_mut().enumerate() {
                *mu += f.values.get(r, c);
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        let mut var = vec![0.0; k];
        for &r in rows {
            for c in 0..k {
                let d = f.values.get(r, c) - mean[c];
                var[c] += d * d;
            }
        }
        let std = var.into_iter().map(|v| (v / m).sqrt().max(STD_FLOOR)).collect();
        Ok(Standardizer { mean, std })
    }

    /// Transforms the base columns; one-hot columns pass through untouched.
    pub fn apply(&self, f: &FeatureMatrix) -> FeatureMatrix {
        let mut out = f.clone();
        let d = f.dim();
        let data = out.values.data_mut();
        for i in 0..f.node_count() {
            for c in 0..self.mean.len() {
                let v = &mut data[i * d + c];
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        out
    }
}

/// Fits on `stats_from` and transforms `f`.
pub fn standardize(f: &FeatureMatrix, stats_from: &[usize]) -> Result<FeatureMatrix> {
    Ok(Standardizer::fit(f, stats_from)?.apply(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hgraph::{derive_edge_types, Edge};

    fn g(n: usize, edges: &[(usize, usize, f64)]) -> HeteroGraph {
        derive_edge_types(
            vec![NodeType::Account; n],
            edges.iter().map(|&(s, d, a)| Edge::transfer(s, d, a, 1)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn hand_tally() {
        let graph = g(2, &[(0, 1, 1.5), (0, 1, 2.5)]);
        let f = base_features(&graph, AmountTransform::Raw);
        let u = f.values().row(0);
        assert_eq!(&u[..6], &[2.0, 0.0, 4.0, 0.0, 0.0, 1.0]);
        let v = f.values().row(1);
        assert_eq!(&v[..6], &[0.0, 2.0, 0.0, 4.0, 1.0, 0.0]);
        // Collapsing does not change the tallies.
        assert_eq!(base_features(&graph.collapse_multi_edges(), AmountTransform::Raw), f);
    }

    #[test]
    fn isolated_node_is_teleport_only() {
        let graph = g(1, &[]);
        let f = base_features(&graph, AmountTransform::Raw);
        assert_eq!(f.values().row(0), &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        // Isolated node next to an edge: it gets only teleport plus dangling mass.
        let graph = g(3, &[(0, 1, 1.0)]);
        let pr = pagerank(&graph, PageRankConfig::default());
        assert!(pr.converged);
        assert!(pr.scores[2] < pr.scores[1]);
    }

    #[test]
    fn pagerank_cycle_and_star() {
        let cycle = g(3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]);
        let pr = pagerank(&cycle, PageRankConfig::default());
        for s in pr.scores {
            assert!((s - 1.0 / 3.0).abs() < 1e-12);
        }
        let star = g(6, &[(1, 0, 1.0), (2, 0, 1.0), (3, 0, 1.0), (4, 0, 1.0), (5, 0, 1.0)]);
        let pr = pagerank(&star, PageRankConfig::default()).scores;
        assert!((1..6).all(|i| pr[0] > pr[i]));
        assert!((pr.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pagerank_warns_without_failing() {
        let cycle = g(3, &[(0, 1, 1.0), (1, 2, 1.0)]);
        let pr = pagerank(
            &cycle,
            PageRankConfig {
                max_iter: 1,
                ..Default::default()
            },
        );
        assert!(!pr.converged);
        assert_eq!(pr.iterations, 1);
    }

    #[test]
    fn standardize_cases() {
        let f = FeatureMatrix::new(
            BASE_COLUMNS.iter().map(|s| s.to_string()).collect(),
            Tensor::from_rows(&[vec![0.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0], vec![2.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0]]),
        )
        .unwrap();
        let s = standardize(&f, &[0, 1]).unwrap();
        assert_eq!(s.values().get(0, 0), -1.0);
        assert_eq!(s.values().get(1, 0), 1.0);
        assert_eq!(s.values().get(0, 1), 0.0);
        assert!(standardize(&f, &[]).is_err());
    }

    #[test]
    fn onehot_untouched_by_standardize() {
        let graph = derive_edge_types(
            vec![NodeType::Account, NodeType::Exchange, NodeType::Gambling],
            vec![Edge::transfer(0, 1, 3.0, 1), Edge::transfer(2, 1, 1.0, 2)],
        )
        .unwrap();
        let f = build_features(&graph, FeatureVariant::BaseOnehot, AmountTransform::Raw);
        assert_eq!(f.dim(), 15);
        let s = standardize(&f, &[0, 1, 2]).unwrap();
        assert_eq!(s.tail(8), one_hot_types(&graph));
    }

    #[test]
    fn binary_and_csv_roundtrip() {
        let graph = g(4, &[(0, 1, 0.1), (1, 2, 1e-7), (3, 0, 12345.678)]);
        let f = build_features(&graph, FeatureVariant::BaseOnehot, AmountTransform::Log1p);
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        assert_eq!(FeatureMatrix::read_binary(buf.as_slice()).unwrap(), f);
        assert!(FeatureMatrix::read_binary(&buf[..buf.len() - 1]).is_err());

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        f.write_csv(&p).unwrap();
        assert_eq!(FeatureMatrix::read_csv(&p).unwrap(), f);
    }
}
