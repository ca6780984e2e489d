//! Command-line surface: `ingest`, `synth`, `train`, `sweep`, `compare`,
//! `metapaths`.
//!
//! Settings resolve as flag > `--config` JSON file > built-in default. Every
//! command writes its outputs plus one `manifest.json` into the output
//! directory (`--out`, else `$HETGNN_OUT_ROOT/<command>`, else `runs/<command>`).

use std::fs::{self, File};
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bundle::{read_bundle, write_bundle, BundlePaths, GraphSummary};
use crate::error::{Error, Result};
use crate::features::{AmountTransform, FeatureVariant};
use crate::hgraph::HeteroGraph;
use crate::ingest::{
    build_graph, extract_balanced_subgraph, parse_fraud_labels, parse_node_types, parse_transactions, ParseMode,
};
use crate::layers::{write_checkpoint, ModelKind};
use crate::metapath::{metapath_report, MetaPath};
use crate::pipeline::{run_trial, Experiment, ExperimentOptions};
use crate::report::{render_markdown, write_markdown, write_table, MetricsRow};
use crate::synth::{generate, SynthConfig};
use crate::train::{run_sweep, SweepAxis, SweepGrid, SweepRow, TrainConfig};

pub const OUT_ROOT_ENV: &str = "HETGNN_OUT_ROOT";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "hetgnn", version, about = "Heterogeneous GNNs for phishing-account detection")]
pub struct Cli {
    /// Seed for subgraph sampling, initialization and dropout.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Parallel sweep workers.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse raw transaction and label files into a graph bundle.
    Ingest(IngestArgs),
    /// Generate a synthetic transaction network with planted fraud.
    Synth(SynthArgs),
    /// Train and evaluate one model.
    Train(TrainArgs),
    /// Vary one hyperparameter over its candidate values.
    Sweep(SweepArgs),
    /// Train several models (and feature variants) side by side.
    Compare(CompareArgs),
    /// Meta-path instance counts with account endpoints.
    Metapaths(MetapathArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub transactions: PathBuf,
    #[arg(long)]
    pub fraud_labels: Option<PathBuf>,
    /// Without it every node is an account.
    #[arg(long)]
    pub node_types: Option<PathBuf>,
    /// Skip malformed rows instead of failing.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Total node count (type proportions kept).
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub hard: bool,
    #[arg(long)]
    pub fraud_fraction: Option<f64>,
}

#[derive(Debug, Args, Default, Clone)]
pub struct Overrides {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// GraphSAGE training fan-out.
    #[arg(long)]
    pub sample_size: Option<usize>,
    /// `base` or `base+onehot`.
    #[arg(long)]
    pub features: Option<String>,
    /// Apply log1p to the amount columns.
    #[arg(long)]
    pub log_amounts: bool,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub metapath_k: Option<usize>,
    /// Score train-known frauds among test nodes by the model alone.
    #[arg(long)]
    pub no_known_fraud_override: bool,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Use the bundle's labels as-is instead of a balanced subgraph.
    #[arg(long)]
    pub no_subgraph: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, default_value = "rgcn")]
    pub model: String,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, default_value = "sage")]
    pub model: String,
    /// heads, lr, hidden, dropout or weight_decay.
    #[arg(long)]
    pub axis: String,
    /// Candidate values; defaults to the published candidates.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "gcn,gat,sage,rgcn,han,hgt")]
    pub models: Vec<String>,
    /// Feature variants to cross with the models.
    #[arg(long = "variants", value_delimiter = ',', default_value = "base")]
    pub variants: Vec<String>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct MetapathArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub max_edges: usize,
    /// Count on the whole bundle instead of the balanced subgraph.
    #[arg(long)]
    pub no_subgraph: bool,
}

/// Schema of the `--config` file. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub train: Option<TrainConfig>,
    pub experiment: Option<ExperimentOptions>,
    pub synth: Option<SynthConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let mut s = String::new();
        File::open(path)
            .and_then(|mut f| f.read_to_string(&mut s))
            .map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Resolved settings for a training-style command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub seed: u64,
    pub train: TrainConfig,
    pub experiment: ExperimentOptions,
    pub balanced_subgraph: bool,
}

pub fn resolve(seed_flag: Option<u64>, file: &FileConfig, o: &Overrides) -> Result<RunSettings> {
    let mut train = file.train.clone().unwrap_or_default();
    let mut exp = file.experiment.clone().unwrap_or_default();
    let seed = seed_flag.or(file.seed).unwrap_or(train.seed);
    train.seed = seed;
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(o.lr, train.learning_rate);
    set!(o.weight_decay, train.weight_decay);
    set!(o.dropout, train.dropout);
    set!(o.epochs, train.epochs);
    set!(o.hidden, train.hidden_units);
    set!(o.heads, train.heads);
    set!(o.layers, train.num_layers);
    if o.sample_size.is_some() {
        train.sample_size = o.sample_size;
    }
    if let Some(f) = &o.features {
        exp.feature_variant = FeatureVariant::parse(f)?;
    }
    if o.log_amounts {
        exp.amounts = AmountTransform::Log1p;
    }
    set!(o.train_fraction, exp.train_fraction);
    set!(o.metapath_k, exp.metapath_k);
    set!(o.threshold, exp.threshold);
    if o.no_known_fraud_override {
        exp.known_fraud_override = false;
    }
    train.validate()?;
    if !(exp.train_fraction > 0.0 && exp.train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {} outside (0, 1)", exp.train_fraction)));
    }
    Ok(RunSettings {
        seed,
        train,
        experiment: exp,
        balanced_subgraph: !o.no_subgraph,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to replay a command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub duration_secs: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn hashes(paths: &[&Path]) -> Result<Vec<InputHash>> {
    paths
        .iter()
        .map(|p| {
            Ok(InputHash {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn out_dir(cli: &Cli, name: &str) -> Result<PathBuf> {
    let dir = match &cli.out {
        Some(d) => d.clone(),
        None => std::env::var_os(OUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(name),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

struct Ctx {
    argv: Vec<String>,
    started: Instant,
    file: FileConfig,
}

impl Ctx {
    fn manifest(
        &self,
        dir: &Path,
        command: &str,
        config: serde_json::Value,
        inputs: Vec<InputHash>,
        seed: Option<u64>,
    ) -> Result<()> {
        write_json(
            &dir.join(MANIFEST_FILE),
            &RunManifest {
                command: command.into(),
                argv: self.argv.clone(),
                config,
                inputs,
                seed,
                tool_version: env!("CARGO_PKG_VERSION").into(),
                duration_secs: self.started.elapsed().as_secs_f64(),
            },
        )
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with_args(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli, argv: Vec<String>) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if cli.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    let ctx = Ctx {
        argv,
        started: Instant::now(),
        file,
    };
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(cli, &ctx, a),
        Command::Synth(a) => cmd_synth(cli, &ctx, a),
        Command::Train(a) => cmd_train(cli, &ctx, a),
        Command::Sweep(a) => cmd_sweep(cli, &ctx, a),
        Command::Compare(a) => cmd_compare(cli, &ctx, a),
        Command::Metapaths(a) => cmd_metapaths(cli, &ctx, a),
    }
}

fn cmd_ingest(cli: &Cli, ctx: &Ctx, a: &IngestArgs) -> Result<()> {
    let mode = if a.lenient { ParseMode::Lenient } else { ParseMode::Strict };
    let tx = parse_transactions(&a.transactions, mode)?;
    let mut labels = Vec::new();
    let mut rejected = tx.rejected.len();
    let mut inputs: Vec<&Path> = vec![&a.transactions];
    for (path, parse) in [
        (&a.fraud_labels, parse_fraud_labels as fn(&Path, ParseMode) -> _),
        (&a.node_types, parse_node_types),
    ] {
        if let Some(p) = path {
            let parsed = parse(p, mode)?;
            rejected += parsed.rejected.len();
            labels.extend(parsed.records);
            inputs.push(p);
        }
    }
    for (line, msg) in &tx.rejected {
        log::warn!("{}:{line}: skipped: {msg}", a.transactions.display());
    }
    let (g, stats) = build_graph(&tx.records, &labels)?;
    let seed = cli.seed.or(ctx.file.seed).unwrap_or(0);
    let summary = GraphSummary::of(&g, Some(stats), Some(seed))?;
    let dir = out_dir(cli, "ingest")?;
    write_bundle(&dir, &g, &summary)?;
    let text = summary.render();
    fs::write(dir.join("summary.txt"), &text).map_err(|e| Error::io(dir.join("summary.txt"), e))?;
    print!("{text}");
    if rejected > 0 {
        println!("rejected rows: {rejected}");
    }
    let config = serde_json::json!({ "lenient": a.lenient, "rejected_rows": rejected });
    ctx.manifest(&dir, "ingest", config, hashes(&inputs)?, Some(seed))
}

fn cmd_synth(cli: &Cli, ctx: &Ctx, a: &SynthArgs) -> Result<()> {
    let mut cfg = match (&ctx.file.synth, a.hard) {
        (Some(c), _) => c.clone(),
        (None, true) => SynthConfig::hard(),
        (None, false) => SynthConfig::default(),
    };
    if a.hard && !cfg.hard {
        let hard = SynthConfig::hard();
        cfg = SynthConfig {
            type_counts: cfg.type_counts,
            seed: cfg.seed,
            ..hard
        };
    }
    if let Some(n) = a.nodes {
        cfg = cfg.with_total_nodes(n)?;
    }
    if let Some(f) = a.fraud_fraction {
        cfg.fraud_fraction = f;
    }
    if let Some(s) = cli.seed.or(ctx.file.seed) {
        cfg.seed = s;
    }
    let data = generate(&cfg)?;
    let dir = out_dir(cli, "synth")?;
    let paths = data.write(&dir)?;
    println!(
        "{} nodes, {} transactions, {} fraud accounts -> {}",
        data.addresses.len(),
        data.transactions.len(),
        data.fraud.iter().filter(|f| **f).count(),
        dir.display()
    );
    let _ = paths;
    ctx.manifest(&dir, "synth", serde_json::to_value(&cfg)?, Vec::new(), Some(cfg.seed))
}

fn bundle_inputs(dir: &Path) -> Result<Vec<InputHash>> {
    let p = BundlePaths::in_dir(dir);
    hashes(&[&p.nodes, &p.edges])
}

/// The labelled graph a training command works on.
fn labelled_graph(bundle: &Path, s: &RunSettings) -> Result<HeteroGraph> {
    let g = read_bundle(bundle)?;
    if !s.balanced_subgraph {
        return Ok(g);
    }
    let fraud: Vec<usize> = (0..g.node_count()).filter(|&i| g.is_fraud(i)).collect();
    if fraud.is_empty() {
        return Err(Error::Schema("bundle has no fraud labels".into()));
    }
    Ok(extract_balanced_subgraph(&g, &fraud, s.seed)?.graph)
}

#[derive(Debug, Serialize)]
struct TrainReport<'a> {
    model: ModelKind,
    features: &'a str,
    input_dim: usize,
    parameters: usize,
    nodes: usize,
    train_nodes: usize,
    test_nodes: usize,
    overridden: usize,
    metapaths: Vec<String>,
    report: &'a crate::metrics::EvalReport,
}

fn cmd_train(cli: &Cli, ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let kind = ModelKind::parse(&a.model)?;
    let s = resolve(cli.seed, &ctx.file, &a.overrides)?;
    s.train.model_config(kind).validate()?;
    let g = labelled_graph(&a.bundle, &s)?;
    let exp = Experiment::prepare(&g, s.experiment.clone())?;
    let out = run_trial(&exp, kind, &s.train)?;
    let dir = out_dir(cli, "train")?;
    write_checkpoint(&dir.join("model.ckpt"), &out.model)?;
    let features = s.experiment.feature_variant.name();
    let rep = TrainReport {
        model: kind,
        features,
        input_dim: exp.in_dim(),
        parameters: out.model.param_count(),
        nodes: exp.eval_view.node_count,
        train_nodes: exp.train_nodes.len(),
        test_nodes: exp.test_nodes.len(),
        overridden: out.overridden.len(),
        metapaths: out.model.spec().metapaths.iter().map(MetaPath::to_string).collect(),
        report: &out.report,
    };
    write_json(&dir.join("report.json"), &rep)?;
    let trace_path = dir.join("trace.csv");
    let mut w = csv::Writer::from_path(&trace_path).map_err(|e| Error::Format(e.to_string()))?;
    for r in &out.trace {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&trace_path, e))?;
    let row = [MetricsRow::new(kind.name(), features, "", Ok(&out.report))];
    write_table(&dir.join("results.csv"), &row)?;
    write_markdown(&dir.join("results.md"), &row)?;
    println!("{}", render_markdown(&row));
    let mut config = serde_json::to_value(&s)?;
    config["model"] = serde_json::json!(kind);
    config["input_dim"] = serde_json::json!(exp.in_dim());
    ctx.manifest(&dir, "train", config, bundle_inputs(&a.bundle)?, Some(s.seed))
}

fn sweep_rows(kind: ModelKind, features: &str, rows: &[SweepRow]) -> Vec<MetricsRow> {
    rows.iter()
        .map(|r| {
            let outcome = match (&r.report, &r.error) {
                (Some(rep), _) => Ok(rep),
                (None, e) => Err(e.clone().unwrap_or_default()),
            };
            MetricsRow::new(kind.name(), features, &r.label(), outcome)
        })
        .collect()
}

fn cmd_sweep(cli: &Cli, ctx: &Ctx, a: &SweepArgs) -> Result<()> {
    let kind = ModelKind::parse(&a.model)?;
    let axis = SweepAxis::parse(&a.axis)?;
    if axis == SweepAxis::Heads && kind != ModelKind::Gat {
        return Err(Error::Config("the heads axis is only swept for GAT".into()));
    }
    let grid = match &a.values {
        Some(v) => SweepGrid {
            axes: vec![(axis, v.clone())],
            one_axis_at_a_time: true,
            reproduction: false,
        },
        None => SweepGrid::table(axis),
    };
    grid.validate()?;
    let s = resolve(cli.seed, &ctx.file, &a.overrides)?;
    let g = labelled_graph(&a.bundle, &s)?;
    let exp = Experiment::prepare(&g, s.experiment.clone())?;
    let rows = run_sweep(&grid, kind, &s.train, &exp, cli.jobs)?;
    let dir = out_dir(cli, "sweep")?;
    let table = sweep_rows(kind, s.experiment.feature_variant.name(), &rows);
    write_table(&dir.join("sweep.csv"), &table)?;
    write_markdown(&dir.join("sweep.md"), &table)?;
    write_json(&dir.join("sweep.json"), &rows)?;
    println!("{}", render_markdown(&table));
    let mut config = serde_json::to_value(&s)?;
    config["model"] = serde_json::json!(kind);
    config["grid"] = serde_json::to_value(&grid)?;
    ctx.manifest(&dir, "sweep", config, bundle_inputs(&a.bundle)?, Some(s.seed))
}

fn cmd_compare(cli: &Cli, ctx: &Ctx, a: &CompareArgs) -> Result<()> {
    if a.models.is_empty() {
        return Err(Error::Config("at least one model is required".into()));
    }
    let kinds = a.models.iter().map(|m| ModelKind::parse(m)).collect::<Result<Vec<_>>>()?;
    let variants = a.variants.iter().map(|v| FeatureVariant::parse(v)).collect::<Result<Vec<_>>>()?;
    let s = resolve(cli.seed, &ctx.file, &a.overrides)?;
    let g = labelled_graph(&a.bundle, &s)?;
    let mut table = Vec::new();
    for &variant in &variants {
        let opts = ExperimentOptions {
            feature_variant: variant,
            ..s.experiment.clone()
        };
        let exp = Experiment::prepare(&g, opts)?;
        for &kind in &kinds {
            let res = run_trial(&exp, kind, &s.train);
            if let Err(e) = &res {
                log::warn!("{kind} on {} failed: {e}", variant.name());
            }
            let outcome = res.as_ref().map(|t| &t.report).map_err(|e| e.to_string());
            table.push(MetricsRow::new(kind.name(), variant.name(), "", outcome));
        }
    }
    let dir = out_dir(cli, "compare")?;
    write_table(&dir.join("compare.csv"), &table)?;
    write_markdown(&dir.join("compare.md"), &table)?;
    println!("{}", render_markdown(&table));
    let mut config = serde_json::to_value(&s)?;
    config["models"] = serde_json::to_value(&kinds)?;
    config["variants"] = serde_json::to_value(&variants)?;
    ctx.manifest(&dir, "compare", config, bundle_inputs(&a.bundle)?, Some(s.seed))
}

fn cmd_metapaths(cli: &Cli, ctx: &Ctx, a: &MetapathArgs) -> Result<()> {
    let seed = cli.seed.or(ctx.file.seed).unwrap_or(0);
    let settings = RunSettings {
        seed,
        train: TrainConfig::default(),
        experiment: ExperimentOptions::default(),
        balanced_subgraph: !a.no_subgraph,
    };
    let g = labelled_graph(&a.bundle, &settings)?;
    let report = metapath_report(&g, a.max_edges)?;
    let dir = out_dir(cli, "metapaths")?;
    report.write_csv(&dir.join("metapaths.csv"))?;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "{} meta-paths; account-endpoint instances {} of {} ({:.1}%); incident edges {} of {} ({:.1}%)",
        report.rows.len(),
        report.account_instances,
        report.all_instances,
        100.0 * report.instance_share,
        report.incident_edges,
        report.total_edges,
        100.0 * report.edge_share
    );
    for r in report.rows.iter().take(10) {
        let _ = writeln!(out, "{:<48} {:>10} {:>8.4}", r.type_sequence, r.instance_count, r.share);
    }
    let config = serde_json::json!({ "max_edges": a.max_edges, "balanced_subgraph": !a.no_subgraph });
    ctx.manifest(&dir, "metapaths", config, bundle_inputs(&a.bundle)?, Some(seed))
}
