use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{ParamId, ParamStore, Rng, Tape, Tensor, Var};

use super::{EdgeList, LayerConfig, ATTENTION_SLOPE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMerge {
    /// Heads side by side: output width `heads · out_dim`.
    Concat,
    /// Heads averaged: output width `out_dim`.
    Mean,
}

/// Multi-head graph attention. Each head has its own projection and
/// attention vectors; `out_dim` is the width of one head.
#[derive(Debug, Clone)]
pub struct GatLayer {
    pub cfg: LayerConfig,
    pub merge: HeadMerge,
    /// `in_dim × heads·out_dim`, head `h` in columns `h·out_dim ..`.
    pub w: ParamId,
    pub att_src: Vec<ParamId>,
    pub att_dst: Vec<ParamId>,
    pub bias: ParamId,
}

pub struct GatOutput {
    pub out: Var,
    /// Per head, `E×1` attention coefficients in edge-list order.
    pub attention: Vec<Var>,
}

impl GatLayer {
    pub fn new(store: &mut ParamStore, name: &str, cfg: LayerConfig, merge: HeadMerge, rng: &mut Rng) -> Result<Self> {
        cfg.validate(false)?;
        let (h, d) = (cfg.heads, cfg.out_dim);
        let w = store.add(format!("{name}.w"), Tensor::glorot(cfg.in_dim, h * d, rng));
        let mut att_src = Vec::with_capacity(h);
        let mut att_dst = Vec::with_capacity(h);
        for k in 0..h {
            att_src.push(store.add(format!("{name}.att_src.{k}"), Tensor::glorot(1, d, rng)));
            att_dst.push(store.add(format!("{name}.att_dst.{k}"), Tensor::glorot(1, d, rng)));
        }
        let bias = store.add(format!("{name}.b"), Tensor::zeros(&[1, merge_width(merge, h, d)]));
        Ok(GatLayer {
            cfg,
            merge,
            w,
            att_src,
            att_dst,
            bias,
        })
    }

    pub fn output_dim(&self) -> usize {
        merge_width(self.merge, self.cfg.heads, self.cfg.out_dim)
    }

    /// Attends over `edges` on `n` nodes. Every node must carry a self-loop,
    /// otherwise isolated nodes would have an empty softmax.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, edges: &EdgeList, n: usize, x: Var) -> Result<GatOutput> {
        check_self_loops(edges, n)?;
        let d = self.cfg.out_dim;
        let w = tape.param(store, self.w);
        let z = tape.matmul(x, w)?;
        let mut heads = Vec::with_capacity(self.cfg.heads);
        let mut attention = Vec::with_capacity(self.cfg.heads);
        for k in 0..self.cfg.heads {
            let zk = tape.slice_cols(z, k * d, d)?;
            let a_s = tape.param(store, self.att_src[k]);
            let a_d = tape.param(store, self.att_dst[k]);
            let s_src = tape.row_dot(zk, a_s)?;
            let s_dst = tape.row_dot(zk, a_d)?;
            let e_src = tape.gather_rows(s_src, &edges.src)?;
            let e_dst = tape.gather_rows(s_dst, &edges.dst)?;
            let e = tape.add(e_src, e_dst)?;
            let e = tape.leaky_relu(e, ATTENTION_SLOPE)?;
            let alpha = tape.segment_softmax(e, &edges.dst)?;
            heads.push(tape.edge_aggregate(alpha, zk, &edges.src, &edges.dst, n)?);
            attention.push(alpha);
        }
        let merged = match self.merge {
            HeadMerge::Concat => tape.concat_cols(&heads)?,
            HeadMerge::Mean => {
                let s = tape.add_all(&heads)?;
                tape.scale(s, 1.0 / self.cfg.heads as f64)
            }
        };
        let b = tape.param(store, self.bias);
        let out = tape.add_row_broadcast(merged, b)?;
        let out = self.cfg.activation.apply(tape, out)?;
        Ok(GatOutput { out, attention })
    }
}

fn merge_width(merge: HeadMerge, heads: usize, d: usize) -> usize {
    match merge {
        HeadMerge::Concat => heads * d,
        HeadMerge::Mean => d,
    }
}

fn check_self_loops(edges: &EdgeList, n: usize) -> Result<()> {
    let mut has = vec![false; n];
    for (&s, &d) in edges.src.iter().zip(edges.dst.iter()) {
        if s >= n || d >= n {
            return Err(Error::Contract(format!("edge {s} -> {d} outside {n} nodes")));
        }
        if s == d {
            has[s] = true;
        }
    }
    match has.iter().position(|h| !h) {
        Some(i) => Err(Error::Contract(format!(
            "attention edges lack a self-loop on node {i}"
        ))),
        None => Ok(()),
    }
}
