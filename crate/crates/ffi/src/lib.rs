//! C ABI over `hetgnn`.
//!
//! Graphs and reports are opaque heap handles released with their `_free`
//! function. Every fallible call returns an [`HgStatus`]; on failure the
//! message is available from [`hg_last_error`] on the same thread until the
//! next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hetgnn::error::{Error, ErrorClass};
use hetgnn::hgraph::HeteroGraph;
use hetgnn::ingest::extract_balanced_subgraph;
use hetgnn::layers::ModelKind;
use hetgnn::metrics::{pr_auc, EvalReport};
use hetgnn::pipeline::{run_trial, Experiment, ExperimentOptions};
use hetgnn::synth::{generate, SynthConfig};
use hetgnn::train::TrainConfig;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HgStatus {
    Ok = 0,
    /// Null pointer, invalid UTF-8 or an unknown name.
    InvalidArgument = 1,
    Config = 2,
    Data = 3,
    Numeric = 4,
    /// A panic was caught at the boundary.
    Internal = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HgMetric {
    Precision = 0,
    Recall = 1,
    F1 = 2,
    PrAuc = 3,
}

/// Opaque transaction graph.
pub struct HgGraph {
    graph: HeteroGraph,
}

/// Opaque evaluation report of one training run.
pub struct HgReport {
    report: EvalReport,
    json: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HgStatus {
    match e.class() {
        ErrorClass::Config => HgStatus::Config,
        ErrorClass::Data => HgStatus::Data,
        ErrorClass::Numeric => HgStatus::Numeric,
    }
}

enum Fail {
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HgStatus::Ok,
        Ok(Err(Fail::Arg(m))) => {
            set_error(m);
            HgStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            HgStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Arg(format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Arg(format!("{what} is not valid UTF-8")))
}

fn out_arg<T>(out: *mut *mut T) -> Result<(), Fail> {
    if out.is_null() {
        Err(Fail::Arg("output pointer is null".into()))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Generates a synthetic graph. `nodes == 0` keeps the default size.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn hg_graph_synth(nodes: usize, seed: u64, hard: bool, out: *mut *mut HgGraph) -> HgStatus {
    guard(|| {
        out_arg(out)?;
        let mut cfg = if hard { SynthConfig::hard() } else { SynthConfig::default() };
        if nodes > 0 {
            cfg = cfg.with_total_nodes(nodes)?;
        }
        cfg.seed = seed;
        let (graph, _) = generate(&cfg)?.to_graph()?;
        *out = Box::into_raw(Box::new(HgGraph { graph }));
        Ok(())
    })
}

/// Loads a bundle directory written by `hetgnn ingest`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hg_graph_load(dir: *const c_char, out: *mut *mut HgGraph) -> HgStatus {
    guard(|| {
        out_arg(out)?;
        let dir = str_arg(dir, "dir")?;
        let graph = hetgnn::bundle::read_bundle(Path::new(dir))?;
        *out = Box::into_raw(Box::new(HgGraph { graph }));
        Ok(())
    })
}

/// Balanced labelled subgraph around the graph's fraud accounts.
///
/// # Safety
/// `g` must be a live graph handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hg_graph_balanced_subgraph(g: *const HgGraph, seed: u64, out: *mut *mut HgGraph) -> HgStatus {
    guard(|| {
        out_arg(out)?;
        let g = g.as_ref().ok_or_else(|| Fail::Arg("graph is null".into()))?;
        let fraud: Vec<usize> = (0..g.graph.node_count()).filter(|&i| g.graph.is_fraud(i)).collect();
        let sub = extract_balanced_subgraph(&g.graph, &fraud, seed)?;
        *out = Box::into_raw(Box::new(HgGraph { graph: sub.graph }));
        Ok(())
    })
}

/// Node count, or 0 for a null handle.
///
/// # Safety
/// `g` must be null or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn hg_graph_node_count(g: *const HgGraph) -> usize {
    g.as_ref().map_or(0, |g| g.graph.node_count())
}

/// Distinct directed edge count, or 0 for a null handle.
///
/// # Safety
/// `g` must be null or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn hg_graph_edge_count(g: *const HgGraph) -> usize {
    g.as_ref().map_or(0, |g| g.graph.edge_count())
}

/// Number of nodes labelled fraudulent, or 0 for a null handle.
///
/// # Safety
/// `g` must be null or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn hg_graph_fraud_count(g: *const HgGraph) -> usize {
    g.as_ref()
        .map_or(0, |g| (0..g.graph.node_count()).filter(|&i| g.graph.is_fraud(i)).count())
}

/// # Safety
/// `g` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hg_graph_free(g: *mut HgGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Trains `model` (gcn, gat, sage, rgcn, han, hgt) on a labelled graph with a
/// temporal split and evaluates it on the held-out accounts.
/// `config_json` is a training configuration object or null for defaults.
///
/// # Safety
/// `g` must be a live graph handle, `model` a NUL-terminated string,
/// `config_json` null or NUL-terminated, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hg_train(
    g: *const HgGraph,
    model: *const c_char,
    config_json: *const c_char,
    out: *mut *mut HgReport,
) -> HgStatus {
    guard(|| {
        out_arg(out)?;
        let g = g.as_ref().ok_or_else(|| Fail::Arg("graph is null".into()))?;
        let kind = ModelKind::parse(str_arg(model, "model")?).map_err(|e| Fail::Arg(e.to_string()))?;
        let cfg: TrainConfig = if config_json.is_null() {
            TrainConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?)
                .map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        let exp = Experiment::prepare(&g.graph, ExperimentOptions::default())?;
        let report = run_trial(&exp, kind, &cfg)?.report;
        let json = CString::new(serde_json::to_string(&report).map_err(Error::from)?)
            .map_err(|e| Fail::Arg(e.to_string()))?;
        *out = Box::into_raw(Box::new(HgReport { report, json }));
        Ok(())
    })
}

/// Reads one metric. Returns NaN for a null handle.
///
/// # Safety
/// `r` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn hg_report_metric(r: *const HgReport, metric: HgMetric) -> f64 {
    let Some(r) = r.as_ref() else { return f64::NAN };
    match metric {
        HgMetric::Precision => r.report.precision,
        HgMetric::Recall => r.report.recall,
        HgMetric::F1 => r.report.f1,
        HgMetric::PrAuc => r.report.pr_auc,
    }
}

/// Full report as JSON, owned by the handle. Null for a null handle.
///
/// # Safety
/// `r` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn hg_report_json(r: *const HgReport) -> *const c_char {
    r.as_ref().map_or(ptr::null(), |r| r.json.as_ptr())
}

/// # Safety
/// `r` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hg_report_free(r: *mut HgReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Area under the precision-recall curve of `len` scores against 0/1 labels.
///
/// # Safety
/// `scores` and `labels` must point to `len` readable elements, `out` to a
/// writable double.
#[no_mangle]
pub unsafe extern "C" fn hg_average_precision(
    scores: *const f64,
    labels: *const u8,
    len: usize,
    out: *mut f64,
) -> HgStatus {
    guard(|| {
        if scores.is_null() || labels.is_null() || out.is_null() {
            return Err(Fail::Arg("null pointer argument".into()));
        }
        let s = std::slice::from_raw_parts(scores, len);
        let l = std::slice::from_raw_parts(labels, len);
        *out = pr_auc(s, l)?;
        Ok(())
    })
}
