use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hgraph::{EdgeType, NodeType};
use crate::metapath::MetaPath;
use crate::numcore::{rng_from_seed, ParamStore, Tape, Tensor, Var};

use super::{
    Ctx, GatLayer, GcnLayer, GraphView, HanLayer, HeadMerge, HgtLayer, LayerConfig, Linear, ModelKind,
    RgcnLayer, SageLayer,
};

/// Number of output classes (normal, fraud).
pub const CLASSES: usize = 2;

fn default_layers() -> usize {
    2
}
fn default_hidden() -> usize {
    128
}
fn default_heads() -> usize {
    2
}
fn default_dropout() -> f64 {
    0.5
}
fn default_sample() -> Option<usize> {
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// GNN layers before the linear head; 0 leaves a logistic regression.
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    /// GraphSAGE training fan-out; `None` aggregates all neighbors.
    #[serde(default = "default_sample")]
    pub sample_size: Option<usize>,
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            layers: default_layers(),
            hidden: default_hidden(),
            heads: default_heads(),
            dropout: default_dropout(),
            sample_size: default_sample(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 {
            return Err(Error::Config("hidden size and heads must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        let split = matches!(self.kind, ModelKind::Han | ModelKind::Hgt);
        if split && self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "{} hidden size {} is not divisible by {} heads",
                self.kind, self.hidden, self.heads
            )));
        }
        if self.sample_size == Some(0) {
            return Err(Error::Config("sample size must be positive".into()));
        }
        Ok(())
    }
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub config: ModelConfig,
    pub in_dim: usize,
    /// Node types with their own projections (HGT).
    pub node_types: Vec<NodeType>,
    /// Registered relations (RGCN, HGT).
    pub relations: Vec<EdgeType>,
    /// Meta-paths, one node-level attention each (HAN).
    pub metapaths: Vec<MetaPath>,
}

impl ModelSpec {
    /// Registers whatever node types and relations `view` contains.
    pub fn from_view(config: ModelConfig, in_dim: usize, view: &GraphView, metapaths: Vec<MetaPath>) -> Self {
        let node_types = NodeType::ALL
            .iter()
            .copied()
            .filter(|t| !view.nodes_by_type[t.ordinal()].is_empty())
            .collect();
        ModelSpec {
            config,
            in_dim,
            node_types,
            relations: view.relations.keys().copied().collect(),
            metapaths,
        }
    }
}

#[derive(Debug, Clone)]
enum Layer {
    Gcn(GcnLayer),
    Gat(GatLayer),
    Sage(SageLayer),
    Rgcn(RgcnLayer),
    Han(HanLayer),
    Hgt(HgtLayer),
}

/// A stack of GNN layers followed by a linear classifier to two logits.
/// Dropout is applied between layers and before the head, never to raw features.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    store: ParamStore,
    layers: Vec<Layer>,
    head: Linear,
}

impl Model {
    /// Glorot-initialized from `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Model> {
        let c = &spec.config;
        c.validate()?;
        if spec.in_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        if c.kind == ModelKind::Han && spec.metapaths.is_empty() {
            return Err(Error::Config("HAN needs at least one meta-path".into()));
        }
        let mut rng = rng_from_seed(seed);
        let mut store = ParamStore::new();
        let act = c.kind.default_activation();
        let mut layers = Vec::with_capacity(c.layers);
        let mut din = spec.in_dim;
        for l in 0..c.layers {
            let name = format!("l{l}");
            let cfg = LayerConfig::new(din, c.hidden).with_heads(c.heads).with_activation(act);
            let (layer, dout) = match c.kind {
                ModelKind::Gcn => (Layer::Gcn(GcnLayer::new(&mut store, &name, cfg, &mut rng)?), c.hidden),
                ModelKind::Sage => (
                    Layer::Sage(SageLayer::new(&mut store, &name, cfg, c.sample_size, &mut rng)?),
                    c.hidden,
                ),
                ModelKind::Rgcn => (
                    Layer::Rgcn(RgcnLayer::new(&mut store, &name, cfg, &spec.relations, &mut rng)?),
                    c.hidden,
                ),
                ModelKind::Gat => {
                    // Heads are concatenated on hidden layers and averaged on the last.
                    let merge = if l + 1 == c.layers { HeadMerge::Mean } else { HeadMerge::Concat };
                    let g = GatLayer::new(&mut store, &name, cfg, merge, &mut rng)?;
                    let d = g.output_dim();
                    (Layer::Gat(g), d)
                }
                ModelKind::Han => {
                    // Heads split the hidden width; concatenated they give `hidden` again.
                    let cfg = LayerConfig::new(din, c.hidden / c.heads).with_heads(c.heads).with_activation(act);
                    let h = HanLayer::new(&mut store, &name, cfg, spec.metapaths.len(), &mut rng)?;
                    let d = h.output_dim();
                    (Layer::Han(h), d)
                }
                ModelKind::Hgt => (
                    Layer::Hgt(HgtLayer::new(
                        &mut store,
                        &name,
                        cfg,
                        &spec.node_types,
                        &spec.relations,
                        &mut rng,
                    )?),
                    c.hidden,
                ),
            };
            layers.push(layer);
            din = dout;
        }
        let head = Linear::new(&mut store, "head", din, CLASSES, true, &mut rng);
        Ok(Model {
            spec,
            store,
            layers,
            head,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.numel()
    }

    /// `N×2` logits for every node of `view`. HAN runs on accounts only;
    /// other rows get zero logits.
    pub fn forward(&self, tape: &mut Tape, view: &GraphView, x: Var, ctx: &mut Ctx<'_>) -> Result<Var> {
        self.forward_with(&self.store, tape, view, x, ctx)
    }

    /// [`Model::forward`] reading parameters from `s`, which must share this
    /// model's layout.
    pub fn forward_with(
        &self,
        s: &ParamStore,
        tape: &mut Tape,
        view: &GraphView,
        x: Var,
        ctx: &mut Ctx<'_>,
    ) -> Result<Var> {
        let n = view.node_count;
        let shape = tape.value(x).shape().to_vec();
        if shape != [n, self.spec.in_dim] {
            return Err(Error::dim("model input", &shape, &[n, self.spec.in_dim]));
        }
        let han = self.spec.config.kind == ModelKind::Han;
        let mut h = if han { tape.gather_rows(x, &view.accounts)? } else { x };
        let rows = if han { view.accounts.len() } else { n };
        for (l, layer) in self.layers.iter().enumerate() {
            if l > 0 {
                h = tape.dropout(h, self.spec.config.dropout, ctx.training, ctx.rng)?;
            }
            h = match layer {
                Layer::Gcn(g) => g.forward(tape, s, &view.sym_adj, h)?,
                Layer::Gat(g) => g.forward(tape, s, &view.attention_edges, n, h)?.out,
                Layer::Sage(g) => g.forward(tape, s, &view.neighbors, &view.neighbor_mean, h, ctx)?,
                Layer::Rgcn(g) => g.forward(tape, s, &view.relations, n, h)?,
                Layer::Han(g) => g.forward(tape, s, &view.metapath_edges, rows, h)?.out,
                Layer::Hgt(g) => g.forward(tape, s, &view.relations, &view.nodes_by_type, h)?.out,
            };
        }
        if !self.layers.is_empty() {
            h = tape.dropout(h, self.spec.config.dropout, ctx.training, ctx.rng)?;
        }
        let logits = self.head.forward(tape, s, h)?;
        if han {
            tape.scatter_add_rows(logits, &view.accounts, n)
        } else {
            Ok(logits)
        }
    }

    /// Fraud probability (softmax of the logits) per node, in evaluation mode.
    pub fn predict(&self, view: &GraphView, features: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let mut rng = rng_from_seed(0);
        let mut ctx = Ctx { training: false, rng: &mut rng };
        let logits = self.forward(&mut tape, view, x, &mut ctx)?;
        let p = tape.softmax_rows(logits)?;
        let t = tape.value(p);
        Ok((0..t.rows()).map(|i| t.get(i, 1)).collect())
    }
}
