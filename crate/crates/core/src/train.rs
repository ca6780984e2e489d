//! Full-batch training with Adam and hyperparameter sweeps.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Ctx, GraphView, Model, ModelConfig, ModelKind};
use crate::metrics::{confusion_metrics, EvalReport};
use crate::numcore::{rng_from_seed, ParamStore, Tape, Tensor};
use crate::pipeline::{run_trial, Experiment};

fn d_lr() -> f64 {
    0.005
}
fn d_wd() -> f64 {
    0.0005
}
fn d_dropout() -> f64 {
    0.5
}
fn d_epochs() -> usize {
    200
}
fn d_heads() -> usize {
    2
}
fn d_hidden() -> usize {
    128
}
fn d_layers() -> usize {
    2
}

/// Optimization and model-width settings. Defaults are the bold entries of the
/// hyperparameter candidate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    #[serde(default = "d_dropout")]
    pub dropout: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_heads")]
    pub heads: usize,
    #[serde(default = "d_hidden")]
    pub hidden_units: usize,
    #[serde(default = "d_layers")]
    pub num_layers: usize,
    /// GraphSAGE training fan-out; absent means the full neighborhood.
    #[serde(default)]
    pub sample_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: d_lr(),
            weight_decay: d_wd(),
            dropout: d_dropout(),
            epochs: d_epochs(),
            seed: 0,
            heads: d_heads(),
            hidden_units: d_hidden(),
            num_layers: d_layers(),
            sample_size: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and ≥ 0", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay {} must be finite and ≥ 0", self.weight_decay)));
        }
        self.model_config(ModelKind::Gcn).validate()
    }

    pub fn model_config(&self, kind: ModelKind) -> ModelConfig {
        ModelConfig {
            kind,
            layers: self.num_layers,
            hidden: self.hidden_units,
            heads: self.heads,
            dropout: self.dropout,
            sample_size: self.sample_size,
        }
    }
}

/// Adam with classic L2 regularization: `weight_decay·θ` is added to the
/// gradient before the moment updates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, weight_decay: f64) -> Adam {
        let zeros = || store.ids().map(|id| Tensor::zeros(store.value(id).shape())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// The gradient each parameter is stepped along: `∇ + λθ`.
    pub fn effective_gradient(&self, store: &ParamStore) -> Vec<Tensor> {
        store
            .ids()
            .map(|id| {
                let (g, p) = (store.grad(id), store.value(id));
                let data = g.data().iter().zip(p.data()).map(|(g, p)| g + self.weight_decay * p).collect();
                Tensor::new(g.shape().to_vec(), data).expect("same shape")
            })
            .collect()
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        let grads = self.effective_gradient(store);
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            let p = store.value_mut(id).data_mut();
            for (i, &g) in grads[k].data().iter().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Inputs to one training run: the view the model trains on, its (already
/// standardized) features, and the supervised rows.
pub struct TrainData<'a> {
    pub view: &'a GraphView,
    pub features: &'a Tensor,
    pub nodes: Arc<Vec<usize>>,
    /// 1 for fraud, 0 for normal, aligned with `nodes`.
    pub labels: Arc<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_precision: f64,
    pub train_recall: f64,
    pub train_f1: f64,
}

/// Runs `cfg.epochs` full-batch steps. Train metrics in the trace come from
/// the same training-mode forward pass as the loss.
pub fn train_model(model: &mut Model, data: &TrainData<'_>, cfg: &TrainConfig) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if data.nodes.is_empty() {
        return Err(Error::Contract("no training nodes".into()));
    }
    let mut opt = Adam::new(model.params(), cfg.learning_rate, cfg.weight_decay);
    let mut rng = rng_from_seed(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let label_u8: Vec<u8> = data.labels.iter().map(|&l| l as u8).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let x = tape.constant(data.features.clone());
        let mut ctx = Ctx { training: true, rng: &mut rng };
        let logits = model.forward(&mut tape, data.view, x, &mut ctx)?;
        let loss = tape.cross_entropy(logits, &data.nodes, &data.labels)?;
        let lv = tape.value(loss).item();
        if !lv.is_finite() {
            return Err(non_finite(model.params(), epoch, lv));
        }
        let grads = tape.backward(loss)?;
        let store = model.params_mut();
        store.zero_grad();
        grads.accumulate(store);
        if let Some(id) = store.ids().find(|&id| !store.grad(id).is_finite()) {
            return Err(Error::Numeric(format!(
                "epoch {epoch}: non-finite gradient in parameter {}",
                store.name(id)
            )));
        }
        opt.step(store);

        let lt = tape.value(logits);
        let scores: Vec<f64> = data.nodes.iter().map(|&r| fraud_probability(lt.row(r))).collect();
        let m = confusion_metrics(&scores, &label_u8, 0.5)?;
        log::debug!("epoch {epoch} loss {lv:.6} f1 {:.4}", m.f1);
        trace.push(EpochRecord {
            epoch,
            loss: lv,
            train_precision: m.precision,
            train_recall: m.recall,
            train_f1: m.f1,
        });
    }
    Ok(trace)
}

fn non_finite(store: &ParamStore, epoch: usize, loss: f64) -> Error {
    let culprit = store
        .ids()
        .find(|&id| !store.value(id).is_finite())
        .map(|id| store.name(id).to_string())
        .unwrap_or_else(|| "none (inputs or logits)".into());
    Error::Numeric(format!("epoch {epoch}: loss is {loss}; offending parameter: {culprit}"))
}

/// Softmax probability of class 1 from a 2-logit row.
pub fn fraud_probability(logits: &[f64]) -> f64 {
    1.0 / (1.0 + (logits[0] - logits[1]).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Heads,
    Lr,
    Hidden,
    Dropout,
    WeightDecay,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 5] = [
        SweepAxis::Heads,
        SweepAxis::Lr,
        SweepAxis::Hidden,
        SweepAxis::Dropout,
        SweepAxis::WeightDecay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Heads => "heads",
            SweepAxis::Lr => "lr",
            SweepAxis::Hidden => "hidden",
            SweepAxis::Dropout => "dropout",
            SweepAxis::WeightDecay => "weight_decay",
        }
    }

    pub fn parse(s: &str) -> Result<SweepAxis> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "heads" => Ok(SweepAxis::Heads),
            "lr" | "learning_rate" => Ok(SweepAxis::Lr),
            "hidden" | "hidden_units" => Ok(SweepAxis::Hidden),
            "dropout" => Ok(SweepAxis::Dropout),
            "weight_decay" | "wd" => Ok(SweepAxis::WeightDecay),
            _ => Err(Error::Config(format!("unknown sweep axis {s:?}"))),
        }
    }

    /// Candidate values from the published hyperparameter table.
    pub fn candidates(self) -> Vec<f64> {
        match self {
            SweepAxis::Heads => vec![2.0, 3.0, 4.0],
            SweepAxis::Lr => vec![0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1],
            SweepAxis::Hidden => vec![16.0, 32.0, 64.0, 128.0, 256.0],
            SweepAxis::Dropout => vec![0.0, 0.25, 0.5, 0.75],
            SweepAxis::WeightDecay => vec![0.0, 0.0001, 0.0005, 0.001, 0.005],
        }
    }

    pub fn apply(self, cfg: &mut TrainConfig, v: f64) -> Result<()> {
        let int = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("{} needs a positive integer, got {v}", self.name())))
            }
        };
        match self {
            SweepAxis::Heads => cfg.heads = int(v)?,
            SweepAxis::Lr => cfg.learning_rate = v,
            SweepAxis::Hidden => cfg.hidden_units = int(v)?,
            SweepAxis::Dropout => cfg.dropout = v,
            SweepAxis::WeightDecay => cfg.weight_decay = v,
        }
        Ok(())
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Axes and their candidate values. In one-axis mode every candidate is a
/// trial with all other settings at the base; otherwise the full product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub axes: Vec<(SweepAxis, Vec<f64>)>,
    pub one_axis_at_a_time: bool,
    /// Restrict candidates to the published table.
    pub reproduction: bool,
}

impl SweepGrid {
    /// Single axis over its published candidates.
    pub fn table(axis: SweepAxis) -> SweepGrid {
        SweepGrid {
            axes: vec![(axis, axis.candidates())],
            one_axis_at_a_time: true,
            reproduction: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::Contract("sweep grid has no axes".into()));
        }
        for (axis, vals) in &self.axes {
            if vals.is_empty() {
                return Err(Error::Contract(format!("sweep axis {axis} has no candidates")));
            }
            if self.reproduction {
                let allowed = axis.candidates();
                if let Some(v) = vals.iter().find(|v| !allowed.contains(v)) {
                    return Err(Error::Config(format!("{v} is not a published candidate for {axis}")));
                }
            }
        }
        Ok(())
    }

    /// Trial settings, in deterministic order.
    pub fn trials(&self) -> Result<Vec<Vec<(SweepAxis, f64)>>> {
        self.validate()?;
        if self.one_axis_at_a_time {
            return Ok(self
                .axes
                .iter()
                .flat_map(|(a, vs)| vs.iter().map(move |&v| vec![(*a, v)]))
                .collect());
        }
        let mut out: Vec<Vec<(SweepAxis, f64)>> = vec![vec![]];
        for (a, vs) in &self.axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    vs.iter().map(move |&v| {
                        let mut p = prefix.clone();
                        p.push((*a, v));
                        p
                    })
                })
                .collect();
        }
        Ok(out)
    }
}

/// One sweep trial; `report` and `error` are mutually exclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub settings: Vec<(SweepAxis, f64)>,
    pub seed: u64,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn label(&self) -> String {
        self.settings
            .iter()
            .map(|(a, v)| format!("{a}={v}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Trains and evaluates a fresh model per trial, with seed `base.seed ^ index`.
/// Failed trials are recorded in their row; the sweep carries on.
pub fn run_sweep(
    grid: &SweepGrid,
    kind: ModelKind,
    base: &TrainConfig,
    exp: &Experiment,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    let trials = grid.trials()?;
    if grid.axes.iter().any(|(a, _)| *a == SweepAxis::Heads) && kind != ModelKind::Gat {
        return Err(Error::Config("the heads axis is only swept for GAT".into()));
    }
    let run = |(index, settings): (usize, Vec<(SweepAxis, f64)>)| -> SweepRow {
        let seed = base.seed ^ index as u64;
        let outcome = (|| {
            let mut cfg = base.clone();
            cfg.seed = seed;
            for &(a, v) in &settings {
                a.apply(&mut cfg, v)?;
            }
            run_trial(exp, kind, &cfg).map(|t| t.report)
        })();
        let (report, error) = match outcome {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        SweepRow {
            index,
            settings,
            seed,
            report,
            error,
        }
    };
    let items: Vec<_> = trials.into_iter().enumerate().collect();
    if jobs <= 1 {
        return Ok(items.into_iter().map(run).collect());
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(|| items.into_par_iter().map(run).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::ParamStore;

    #[test]
    fn defaults_match_table() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.learning_rate, c.weight_decay, c.dropout, c.epochs, c.heads, c.hidden_units),
            (0.005, 0.0005, 0.5, 200, 2, 128)
        );
        let parsed: TrainConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(parsed, c);
    }

    #[test]
    fn effective_gradient_adds_decay() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::from_rows(&[vec![2.0, -4.0]]));
        s.grad_mut(id).data_mut().copy_from_slice(&[0.5, 0.25]);
        let opt = Adam::new(&s, 0.1, 0.5);
        assert_eq!(opt.effective_gradient(&s)[0].data(), &[1.5, -1.75]);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // With bias correction the first step is lr·sign(g) up to ε.
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::from_rows(&[vec![1.0, 1.0]]));
        s.grad_mut(id).data_mut().copy_from_slice(&[3.0, -0.01]);
        let mut opt = Adam::new(&s, 0.1, 0.0);
        opt.step(&mut s);
        let v = s.value(id).data();
        assert!((v[0] - 0.9).abs() < 1e-7 && (v[1] - 1.1).abs() < 1e-5);
    }

    #[test]
    fn grid_cardinality_and_errors() {
        assert_eq!(SweepGrid::table(SweepAxis::Hidden).trials().unwrap().len(), 5);
        assert_eq!(SweepGrid::table(SweepAxis::Lr).trials().unwrap().len(), 7);
        let g = SweepGrid {
            axes: vec![(SweepAxis::Hidden, vec![16.0, 256.0])],
            one_axis_at_a_time: true,
            reproduction: true,
        };
        assert_eq!(g.trials().unwrap().len(), 2);
        let empty = SweepGrid {
            axes: vec![(SweepAxis::Dropout, vec![])],
            one_axis_at_a_time: true,
            reproduction: false,
        };
        assert!(matches!(empty.trials(), Err(Error::Contract(_))));
        let off = SweepGrid {
            axes: vec![(SweepAxis::Hidden, vec![17.0])],
            one_axis_at_a_time: true,
            reproduction: true,
        };
        assert!(off.trials().is_err());
        let prod = SweepGrid {
            axes: vec![(SweepAxis::Hidden, vec![16.0, 32.0]), (SweepAxis::Dropout, vec![0.0, 0.5, 0.75])],
            one_axis_at_a_time: false,
            reproduction: true,
        };
        assert_eq!(prod.trials().unwrap().len(), 6);
    }

    #[test]
    fn probability_matches_softmax() {
        let p = fraud_probability(&[0.3, 1.1]);
        let e = (1.1f64).exp() / ((0.3f64).exp() + (1.1f64).exp());
        assert!((p - e).abs() < 1e-15);
    }
}
