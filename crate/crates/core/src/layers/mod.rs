//! The six GNN layer families and two-layer model assembly.
//!
//! All layers follow the in-neighbor convention of [`crate::numcore::SparseMatrix`]:
//! a message on edge `j → i` lands in row `i`.

mod checkpoint;
mod gat;
mod gcn;
mod han;
mod hgt;
mod model;
mod rgcn;
mod sage;
mod view;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{ParamId, ParamStore, Rng, Tape, Tensor, Var};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use gat::{GatLayer, GatOutput, HeadMerge};
pub use gcn::GcnLayer;
pub use han::{HanLayer, HanOutput};
pub use hgt::{HgtLayer, HgtOutput};
pub use model::{Model, ModelConfig, ModelSpec};
pub use rgcn::RgcnLayer;
pub use sage::SageLayer;
pub use view::{capped_edges, EdgeList, GraphView, RelationBlock, METAPATH_NEIGHBOR_CAP};

/// Negative slope of the attention-score LeakyReLU.
pub const ATTENTION_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gcn,
    Gat,
    Sage,
    Rgcn,
    Han,
    Hgt,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Gcn,
        ModelKind::Gat,
        ModelKind::Sage,
        ModelKind::Rgcn,
        ModelKind::Han,
        ModelKind::Hgt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gcn => "gcn",
            ModelKind::Gat => "gat",
            ModelKind::Sage => "sage",
            ModelKind::Rgcn => "rgcn",
            ModelKind::Han => "han",
            ModelKind::Hgt => "hgt",
        }
    }

    pub fn parse(s: &str) -> Result<ModelKind> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(ModelKind::Gcn),
            "gat" => Ok(ModelKind::Gat),
            "sage" | "graphsage" => Ok(ModelKind::Sage),
            "rgcn" => Ok(ModelKind::Rgcn),
            "han" => Ok(ModelKind::Han),
            "hgt" => Ok(ModelKind::Hgt),
            _ => Err(Error::Config(format!("unknown model kind {s:?}"))),
        }
    }

    pub fn is_attention(self) -> bool {
        matches!(self, ModelKind::Gat | ModelKind::Han | ModelKind::Hgt)
    }

    pub fn is_heterogeneous(self) -> bool {
        matches!(self, ModelKind::Rgcn | ModelKind::Han | ModelKind::Hgt)
    }

    /// ELU for attention models, ReLU otherwise.
    pub fn default_activation(self) -> Activation {
        if self.is_attention() {
            Activation::Elu
        } else {
            Activation::Relu
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Elu,
    None,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Elu => tape.elu(x),
            Activation::None => Ok(x),
        }
    }
}

/// Shape and regularization of one message-passing layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub in_dim: usize,
    pub out_dim: usize,
    pub heads: usize,
    pub dropout_p: f64,
    pub activation: Activation,
}

impl LayerConfig {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        LayerConfig {
            in_dim,
            out_dim,
            heads: 1,
            dropout_p: 0.0,
            activation: Activation::None,
        }
    }

    pub fn with_heads(mut self, heads: usize) -> Self {
        self.heads = heads;
        self
    }

    pub fn with_activation(mut self, a: Activation) -> Self {
        self.activation = a;
        self
    }

    /// `heads ≥ 1`; with `split_heads`, `out_dim` must divide evenly by heads.
    pub fn validate(&self, split_heads: bool) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config("layer dimensions must be positive".into()));
        }
        if self.heads == 0 {
            return Err(Error::Config("heads must be at least 1".into()));
        }
        if split_heads && self.out_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "out_dim {} is not divisible by {} heads",
                self.out_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout_p)));
        }
        Ok(())
    }
}

/// Per-forward state: training flag and the run's RNG.
pub struct Ctx<'a> {
    pub training: bool,
    pub rng: &'a mut Rng,
}

/// Dense affine map `x·W (+ b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut Rng) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::glorot(in_dim, out_dim, rng));
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[1, out_dim])));
        Linear { w, b }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row_broadcast(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Applies a per-node-type linear map: rows of type `t` go through `maps[t]`.
/// A type that has nodes but no map is an initialization error.
pub(crate) fn typed_linear(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    nodes_by_type: &[std::sync::Arc<Vec<usize>>],
    maps: &[Option<Linear>],
    rows: usize,
) -> Result<Var> {
    let mut parts = Vec::new();
    for (t, map) in maps.iter().enumerate() {
        let Some(idx) = nodes_by_type.get(t) else { continue };
        if idx.is_empty() {
            continue;
        }
        let Some(map) = map else {
            return Err(Error::Init(format!(
                "node type {} has no registered projection",
                crate::hgraph::NodeType::from_ordinal(t).map(|n| n.name()).unwrap_or("?")
            )));
        };
        let xt = tape.gather_rows(x, idx)?;
        let yt = map.forward(tape, store, xt)?;
        parts.push(tape.scatter_add_rows(yt, idx, rows)?);
    }
    if parts.is_empty() {
        return Err(Error::Init("no node type has a registered projection".into()));
    }
    tape.add_all(&parts)
}

#[cfg(test)]
pub(crate) mod testutil {
    use std::sync::Arc;

    use super::GraphView;
    use crate::error::Result;
    use crate::hgraph::{derive_edge_types, Edge, HeteroGraph, NodeType};
    use crate::numcore::gradcheck::{check_all, GradCheckReport};
    use crate::numcore::{rng_from_seed, ParamStore, Tape, Tensor, Var};

    /// Seven nodes over three types, with a multi-edge and an isolated node.
    pub fn small_graph() -> HeteroGraph {
        use NodeType::*;
        derive_edge_types(
            vec![Account, Account, Exchange, Account, TokenContract, Account, Account],
            vec![
                Edge::transfer(0, 2, 1.0, 1),
                Edge::transfer(1, 2, 2.0, 2),
                Edge::transfer(2, 3, 3.0, 3),
                Edge::transfer(3, 4, 1.0, 4),
                Edge::transfer(4, 0, 1.0, 5),
                Edge::transfer(0, 1, 1.0, 6),
                Edge::transfer(0, 1, 4.0, 7),
                Edge::transfer(5, 2, 1.0, 8),
            ],
        )
        .unwrap()
    }

    pub fn small_view(g: &HeteroGraph) -> GraphView {
        GraphView::build(g, &[])
    }

    pub fn features(n: usize, d: usize, seed: u64) -> Tensor {
        Tensor::uniform(&[n, d], -1.0, 1.0, &mut rng_from_seed(seed))
    }

    /// Loss `Σ out ⊙ R` for a fixed random `R`, so every output entry matters.
    pub fn probe_loss(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
        let shape = tape.value(out).shape().to_vec();
        let r = Tensor::uniform(&shape, -1.0, 1.0, &mut rng_from_seed(seed));
        let r = tape.constant(r);
        let p = tape.mul(out, r)?;
        Ok(tape.sum(p))
    }

    /// Finite-difference check of every parameter for `forward`.
    pub fn gradcheck<F>(store: &mut ParamStore, forward: F) -> GradCheckReport
    where
        F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
    {
        let forward = Arc::new(forward);
        let f2 = Arc::clone(&forward);
        check_all(
            store,
            1e-5,
            1e-4,
            1e-8,
            |s| {
                let mut tape = Tape::new();
                let out = forward(&mut tape, s)?;
                let loss = probe_loss(&mut tape, out, 99)?;
                tape.backward(loss)?.accumulate(s);
                Ok(())
            },
            |s| {
                let mut tape = Tape::new();
                let out = f2(&mut tape, s)?;
                let loss = probe_loss(&mut tape, out, 99)?;
                Ok(tape.value(loss).item())
            },
        )
        .unwrap()
    }
}
