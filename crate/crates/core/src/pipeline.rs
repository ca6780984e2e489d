//! Features → temporal split → training → evaluation on a labelled graph.
//!
//! The model trains on the graph formed by the earlier edges and is evaluated
//! on the cumulative graph (all edges), scoring the labelled nodes that touch
//! a later edge. Base features are standardized with statistics from the
//! training-incident nodes of the training graph.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{build_features, AmountTransform, FeatureVariant, Standardizer};
use crate::hgraph::HeteroGraph;
use crate::ingest::{temporal_split, SplitAssignment};
use crate::layers::{GraphView, Model, ModelKind, ModelSpec};
use crate::metapath::{top_metapaths, MetaPath};
use crate::metrics::{apply_known_fraud_overrides, evaluate, EvalReport, ReportInputs};
use crate::numcore::Tensor;
use crate::train::{train_model, EpochRecord, TrainConfig, TrainData};

fn d_fraction() -> f64 {
    0.8
}
fn d_k() -> usize {
    8
}
fn d_true() -> bool {
    true
}
fn d_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentOptions {
    #[serde(default)]
    pub feature_variant: FeatureVariant,
    #[serde(default)]
    pub amounts: AmountTransform,
    #[serde(default = "d_fraction")]
    pub train_fraction: f64,
    /// Number of top-ranked meta-paths HAN attends over.
    #[serde(default = "d_k")]
    pub metapath_k: usize,
    /// Force train-known frauds among the test nodes to score 1.0.
    #[serde(default = "d_true")]
    pub known_fraud_override: bool,
    #[serde(default = "d_threshold")]
    pub threshold: f64,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            feature_variant: FeatureVariant::default(),
            amounts: AmountTransform::default(),
            train_fraction: d_fraction(),
            metapath_k: d_k(),
            known_fraud_override: true,
            threshold: d_threshold(),
        }
    }
}

/// A labelled graph prepared once and shared by every trial.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub options: ExperimentOptions,
    pub split: SplitAssignment,
    pub metapaths: Vec<MetaPath>,
    pub train_view: GraphView,
    pub eval_view: GraphView,
    pub train_features: Tensor,
    pub eval_features: Tensor,
    pub train_nodes: Arc<Vec<usize>>,
    pub train_labels: Arc<Vec<usize>>,
    pub test_nodes: Vec<usize>,
    pub test_labels: Vec<u8>,
}

impl Experiment {
    pub fn prepare(g: &HeteroGraph, options: ExperimentOptions) -> Result<Experiment> {
        if options.metapath_k == 0 {
            return Err(Error::Config("metapath_k must be at least 1".into()));
        }
        let g = if g.is_collapsed() { g.clone() } else { g.collapse_multi_edges() };
        let split = temporal_split(&g, options.train_fraction)?;
        if split.train_eval_nodes.is_empty() {
            return Err(Error::Contract("no labelled node touches a training edge".into()));
        }
        if split.test_eval_nodes.is_empty() {
            return Err(Error::Contract("no labelled node touches a test edge".into()));
        }
        let train_graph = g.edge_subset(&split.train_edges);

        let train_raw = build_features(&train_graph, options.feature_variant, options.amounts);
        let eval_raw = build_features(&g, options.feature_variant, options.amounts);
        let stats = Standardizer::fit(&train_raw, &split.train_eval_nodes)?;
        let train_features = stats.apply(&train_raw).into_tensor();
        let eval_features = stats.apply(&eval_raw).into_tensor();

        let metapaths = top_metapaths(&train_graph, 3, options.metapath_k)?;
        let train_view = GraphView::build(&train_graph, &metapaths);
        let eval_view = GraphView::build(&g, &metapaths);

        let label = |v: usize| usize::from(g.is_fraud(v));
        Ok(Experiment {
            train_nodes: Arc::new(split.train_eval_nodes.clone()),
            train_labels: Arc::new(split.train_eval_nodes.iter().map(|&v| label(v)).collect()),
            test_nodes: split.test_eval_nodes.clone(),
            test_labels: split.test_eval_nodes.iter().map(|&v| label(v) as u8).collect(),
            options,
            split,
            metapaths,
            train_view,
            eval_view,
            train_features,
            eval_features,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.options.feature_variant.dim()
    }

    pub fn model_spec(&self, kind: ModelKind, cfg: &TrainConfig) -> ModelSpec {
        let metapaths = if kind == ModelKind::Han { self.metapaths.clone() } else { Vec::new() };
        ModelSpec::from_view(cfg.model_config(kind), self.in_dim(), &self.eval_view, metapaths)
    }

    /// Scores the test nodes with `model` and computes the report.
    pub fn evaluate(&self, model: &Model) -> Result<(EvalReport, Vec<usize>)> {
        let probs = model.predict(&self.eval_view, &self.eval_features)?;
        let mut inputs = ReportInputs {
            nodes: self.test_nodes.clone(),
            scores: self.test_nodes.iter().map(|&v| probs[v]).collect(),
            labels: self.test_labels.clone(),
        };
        let overridden = if self.options.known_fraud_override {
            apply_known_fraud_overrides(&mut inputs, &self.split.train_known_fraud)
        } else {
            Vec::new()
        };
        Ok((evaluate(&inputs.scores, &inputs.labels, self.options.threshold)?, overridden))
    }
}

pub struct TrialOutcome {
    pub model: Model,
    pub trace: Vec<EpochRecord>,
    pub report: EvalReport,
    /// Test nodes whose score was forced to 1.0.
    pub overridden: Vec<usize>,
}

/// Fresh model seeded from `cfg.seed`, trained, then evaluated.
pub fn run_trial(exp: &Experiment, kind: ModelKind, cfg: &TrainConfig) -> Result<TrialOutcome> {
    cfg.validate()?;
    let mut model = Model::new(exp.model_spec(kind, cfg), cfg.seed)?;
    let data = TrainData {
        view: &exp.train_view,
        features: &exp.train_features,
        nodes: Arc::clone(&exp.train_nodes),
        labels: Arc::clone(&exp.train_labels),
    };
    let trace = train_model(&mut model, &data, cfg)?;
    let (report, overridden) = exp.evaluate(&model)?;
    Ok(TrialOutcome {
        model,
        trace,
        report,
        overridden,
    })
}
