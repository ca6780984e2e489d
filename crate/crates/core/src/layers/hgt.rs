use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hgraph::{EdgeType, NodeType};
use crate::numcore::{ParamId, ParamStore, Rng, Tape, Tensor, Var};

use super::{typed_linear, LayerConfig, Linear, RelationBlock};

/// Per relation and head: attention and message matrices plus a prior scale.
#[derive(Debug, Clone)]
pub struct RelationHead {
    pub w_att: ParamId,
    pub w_msg: ParamId,
    pub mu: ParamId,
}

/// Heterogeneous graph transformer layer.
///
/// Keys, queries and values come from node-type-specific projections; each
/// relation transforms keys and values per head. Scores `(k·W_att)·q · μ / √d`
/// are normalized over all in-edges of a target across relations. The target
/// update is `A_τ(elu(agg)) + residual`.
#[derive(Debug, Clone)]
pub struct HgtLayer {
    pub cfg: LayerConfig,
    pub k: Vec<Option<Linear>>,
    pub q: Vec<Option<Linear>>,
    pub v: Vec<Option<Linear>>,
    pub a: Vec<Option<Linear>>,
    /// Present only when `in_dim ≠ out_dim`.
    pub residual: Option<Vec<Option<Linear>>>,
    pub relations: BTreeMap<EdgeType, Vec<RelationHead>>,
}

pub struct HgtOutput {
    pub out: Var,
    /// Per head, attention over the concatenated relation edges.
    pub attention: Vec<Var>,
}

impl HgtLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: LayerConfig,
        node_types: &[NodeType],
        relations: &[EdgeType],
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate(true)?;
        let dh = cfg.out_dim / cfg.heads;
        let typed = |tag: &str, din: usize, bias: bool, store: &mut ParamStore, rng: &mut Rng| {
            let mut v: Vec<Option<Linear>> = vec![None; NodeType::COUNT];
            for &t in node_types {
                let nm = format!("{name}.{tag}.{}", t.name());
                v[t.ordinal()] = Some(Linear::new(store, &nm, din, cfg.out_dim, bias, rng));
            }
            v
        };
        let k = typed("k", cfg.in_dim, true, store, rng);
        let q = typed("q", cfg.in_dim, true, store, rng);
        let v = typed("v", cfg.in_dim, true, store, rng);
        let a = typed("a", cfg.out_dim, true, store, rng);
        let residual = (cfg.in_dim != cfg.out_dim).then(|| typed("res", cfg.in_dim, false, store, rng));
        let mut rels = BTreeMap::new();
        for &r in relations {
            let tag = r.name().replace(' ', "");
            let heads = (0..cfg.heads)
                .map(|h| RelationHead {
                    w_att: store.add(format!("{name}.rel.{tag}.{h}.att"), Tensor::glorot(dh, dh, rng)),
                    w_msg: store.add(format!("{name}.rel.{tag}.{h}.msg"), Tensor::glorot(dh, dh, rng)),
                    mu: store.add(format!("{name}.rel.{tag}.{h}.mu"), Tensor::scalar(1.0)),
                })
                .collect();
            rels.insert(r, heads);
        }
        Ok(HgtLayer {
            cfg,
            k,
            q,
            v,
            a,
            residual,
            relations: rels,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        relations: &BTreeMap<EdgeType, RelationBlock>,
        nodes_by_type: &[Arc<Vec<usize>>],
        x: Var,
    ) -> Result<HgtOutput> {
        let n = tape.value(x).rows();
        let dh = self.cfg.out_dim / self.cfg.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let kx = typed_linear(tape, store, x, nodes_by_type, &self.k, n)?;
        let qx = typed_linear(tape, store, x, nodes_by_type, &self.q, n)?;
        let vx = typed_linear(tape, store, x, nodes_by_type, &self.v, n)?;

        let mut blocks = Vec::new();
        for (et, blk) in relations {
            let heads = self
                .relations
                .get(et)
                .ok_or_else(|| Error::Init(format!("relation {et} was not registered")))?;
            if !blk.edges.is_empty() {
                blocks.push((heads, blk));
            }
        }
        let dst: Arc<Vec<usize>> = Arc::new(
            blocks.iter().flat_map(|(_, b)| b.edges.dst.iter().copied()).collect(),
        );
        // Row ranges of each relation inside the concatenated edge list.
        let mut ranges = Vec::with_capacity(blocks.len());
        let mut at = 0;
        for (_, b) in &blocks {
            ranges.push(Arc::new((at..at + b.edges.len()).collect::<Vec<usize>>()));
            at += b.edges.len();
        }

        let mut head_out = Vec::with_capacity(self.cfg.heads);
        let mut attention = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            if blocks.is_empty() {
                head_out.push(tape.constant(Tensor::zeros(&[n, dh])));
                continue;
            }
            let kh = tape.slice_cols(kx, h * dh, dh)?;
            let qh = tape.slice_cols(qx, h * dh, dh)?;
            let vh = tape.slice_cols(vx, h * dh, dh)?;
            let mut scores = Vec::with_capacity(blocks.len());
            for (heads, blk) in &blocks {
                let rh = &heads[h];
                let w_att = tape.param(store, rh.w_att);
                let mu = tape.param(store, rh.mu);
                let ks = tape.gather_rows(kh, &blk.sources)?;
                let kw = tape.matmul(ks, w_att)?;
                let ke = tape.gather_rows(kw, &blk.local_src)?;
                let qe = tape.gather_rows(qh, &blk.edges.dst)?;
                let s = tape.row_dot(ke, qe)?;
                let s = tape.scale_by(s, mu)?;
                scores.push(tape.scale(s, scale));
            }
            let s = tape.concat_rows(&scores)?;
            let alpha = tape.segment_softmax(s, &dst)?;
            let mut parts = Vec::with_capacity(blocks.len());
            for ((heads, blk), range) in blocks.iter().zip(&ranges) {
                let w_msg = tape.param(store, heads[h].w_msg);
                let vs = tape.gather_rows(vh, &blk.sources)?;
                let vw = tape.matmul(vs, w_msg)?;
                let a = tape.gather_rows(alpha, range)?;
                parts.push(tape.edge_aggregate(a, vw, &blk.local_src, &blk.edges.dst, n)?);
            }
            head_out.push(tape.add_all(&parts)?);
            attention.push(alpha);
        }
        let agg = tape.concat_cols(&head_out)?;
        let agg = tape.elu(agg)?;
        let upd = typed_linear(tape, store, agg, nodes_by_type, &self.a, n)?;
        let res = match &self.residual {
            Some(maps) => typed_linear(tape, store, x, nodes_by_type, maps, n)?,
            None => x,
        };
        let out = tape.add(upd, res)?;
        let out = self.cfg.activation.apply(tape, out)?;
        Ok(HgtOutput { out, attention })
    }
}
