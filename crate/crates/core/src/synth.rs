//! Deterministic synthetic transaction networks with planted phishing motifs.
//!
//! Fraud accounts collect deposits from a few victims, then fan out in short
//! bursts of small transfers to many counterparties and cash out through
//! exchanges. Exchanges are high-degree hubs; normal accounts draw their
//! out-degree from a heavy-tailed distribution.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hgraph::{HeteroGraph, NodeType};
use crate::ingest::{build_graph, BuildStats, LabelKind, LabelRecord, TransactionRecord};
use crate::numcore::{rng_from_seed, Rng};

pub const TRANSACTIONS_FILE: &str = "transactions.csv";
pub const FRAUD_LABELS_FILE: &str = "fraud_labels.csv";
pub const NODE_TYPES_FILE: &str = "node_types.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub type_counts: BTreeMap<NodeType, usize>,
    /// Share of accounts that are fraudulent, in (0, 1).
    pub fraud_fraction: f64,
    pub fanout_min: usize,
    pub fanout_max: usize,
    pub bursts_per_fraud: usize,
    /// Seconds spanned by one fan-out burst.
    pub burst_window: i64,
    /// Withdrawals sent by each exchange.
    pub exchange_hub_degree: usize,
    /// Upper bound on a normal account's out-degree; `None` leaves the tail.
    pub normal_degree_cap: Option<usize>,
    pub start_time: i64,
    pub time_span: i64,
    /// Label noise, overlapping degrees, and benign bursty senders.
    pub hard: bool,
    /// Fraction of fraud labels flipped in each direction (hard mode only).
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        use NodeType::*;
        let type_counts = [
            (Account, 1900),
            (TokenContract, 86),
            (Exchange, 6),
            (Gaming, 2),
            (IcoWallets, 2),
            (WalletApp, 2),
            (ColdWallet, 1),
            (Gambling, 1),
        ]
        .into_iter()
        .collect();
        SynthConfig {
            type_counts,
            fraud_fraction: 0.05,
            fanout_min: 25,
            fanout_max: 40,
            bursts_per_fraud: 2,
            burst_window: 3600,
            exchange_hub_degree: 20,
            normal_degree_cap: Some(12),
            start_time: 1_500_000_000,
            time_span: 180 * 86_400,
            hard: false,
            label_noise: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Hard-mode defaults: weaker fan-out, heavier normal degrees, benign
    /// bursts and noisy labels.
    pub fn hard() -> Self {
        SynthConfig {
            fanout_min: 8,
            fanout_max: 25,
            bursts_per_fraud: 1,
            normal_degree_cap: Some(60),
            hard: true,
            ..SynthConfig::default()
        }
    }

    /// Rescales the default type proportions to `total` nodes (largest remainder).
    pub fn with_total_nodes(mut self, total: usize) -> Result<Self> {
        let base: usize = self.type_counts.values().sum();
        if total < NodeType::COUNT || base == 0 {
            return Err(Error::Config(format!("need at least {} nodes", NodeType::COUNT)));
        }
        let mut parts: Vec<(NodeType, usize, f64)> = self
            .type_counts
            .iter()
            .map(|(&t, &c)| {
                let exact = c as f64 * total as f64 / base as f64;
                (t, exact.floor() as usize, exact - exact.floor())
            })
            .collect();
        let mut left = total - parts.iter().map(|p| p.1).sum::<usize>();
        let mut order: Vec<usize> = (0..parts.len()).collect();
        order.sort_by(|&a, &b| parts[b].2.total_cmp(&parts[a].2).then(a.cmp(&b)));
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            parts[i].1 += 1;
            left -= 1;
        }
        // Types rounded away to zero borrow one node from the largest type.
        while let Some(z) = parts.iter().position(|p| p.1 == 0) {
            let big = (0..parts.len()).max_by_key(|&i| (parts[i].1, std::cmp::Reverse(i))).expect("non-empty");
            parts[big].1 -= 1;
            parts[z].1 = 1;
        }
        self.type_counts = parts.into_iter().map(|(t, c, _)| (t, c)).collect();
        Ok(self)
    }

    pub fn total_nodes(&self) -> usize {
        self.type_counts.values().sum()
    }

    pub fn accounts(&self) -> usize {
        self.type_counts.get(&NodeType::Account).copied().unwrap_or(0)
    }

    pub fn fraud_count(&self) -> usize {
        (self.accounts() as f64 * self.fraud_fraction).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fraud_fraction > 0.0 && self.fraud_fraction < 1.0) {
            return Err(Error::Contract(format!(
                "fraud fraction {} must lie strictly between 0 and 1",
                self.fraud_fraction
            )));
        }
        if self.accounts() < 2 {
            return Err(Error::Config("at least two accounts are required".into()));
        }
        let fraud = self.fraud_count();
        if fraud == 0 || fraud >= self.accounts() {
            return Err(Error::Config(format!(
                "{} accounts at fraction {} give {fraud} frauds",
                self.accounts(),
                self.fraud_fraction
            )));
        }
        if self.fanout_min == 0 || self.fanout_min > self.fanout_max {
            return Err(Error::Config("fan-out range must satisfy 1 ≤ min ≤ max".into()));
        }
        if self.fanout_max >= self.accounts() {
            return Err(Error::Config("fan-out exceeds the number of accounts".into()));
        }
        if self.time_span <= self.burst_window || self.burst_window <= 0 || self.start_time <= 0 {
            return Err(Error::Config("time span must exceed a positive burst window".into()));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::Config("label noise must lie in [0, 0.5)".into()));
        }
        if self.normal_degree_cap == Some(0) {
            return Err(Error::Config("normal degree cap must be positive".into()));
        }
        Ok(())
    }
}

/// A generated network in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub addresses: Vec<String>,
    pub types: Vec<NodeType>,
    /// Ground truth.
    pub fraud: Vec<bool>,
    /// Labels as written to the label file (noisy in hard mode).
    pub labels: Vec<bool>,
    pub transactions: Vec<TransactionRecord>,
}

pub struct SynthPaths {
    pub transactions: PathBuf,
    pub fraud_labels: PathBuf,
    pub node_types: PathBuf,
}

struct Gen<'a> {
    cfg: &'a SynthConfig,
    rng: Rng,
    tx: Vec<(usize, usize, f64, i64)>,
}

impl Gen<'_> {
    fn time(&mut self) -> i64 {
        self.cfg.start_time + self.rng.gen_range(0..self.cfg.time_span)
    }

    fn pick(&mut self, pool: &[usize]) -> usize {
        pool[self.rng.gen_range(0..pool.len())]
    }

    fn lognormal(&mut self, mu: f64, sigma: f64) -> f64 {
        // Box-Muller on two uniforms.
        let u1: f64 = self.rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = self.rng.gen();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        (mu + sigma * z).exp()
    }

    /// Pareto(α = 1.5, x_min = 1) out-degree, optionally capped.
    fn heavy_tail(&mut self, cap: Option<usize>) -> usize {
        let u: f64 = self.rng.gen_range(f64::EPSILON..1.0);
        let d = u.powf(-1.0 / 1.5).floor() as usize;
        cap.map_or(d, |c| d.min(c)).max(1)
    }

    fn push(&mut self, s: usize, d: usize, amount: f64, t: i64) {
        if s != d {
            self.tx.push((s, d, amount, t));
        }
    }

    /// `k` transfers from `src` to distinct targets inside one window.
    fn burst(&mut self, src: usize, pool: &[usize], k: usize, small: (f64, f64)) {
        let span = self.cfg.time_span - self.cfg.burst_window;
        let t0 = self.cfg.start_time + self.rng.gen_range(0..span);
        let k = k.min(pool.len());
        let picks: Vec<usize> = sample(&mut self.rng, pool.len(), k).into_iter().map(|i| pool[i]).collect();
        for d in picks {
            let t = t0 + self.rng.gen_range(0..self.cfg.burst_window);
            let a = self.rng.gen_range(small.0..small.1);
            self.push(src, d, a, t);
        }
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let n = cfg.total_nodes();

    // Types in a shuffled order so node ids carry no type information.
    let mut types: Vec<NodeType> = cfg
        .type_counts
        .iter()
        .flat_map(|(&t, &c)| std::iter::repeat(t).take(c))
        .collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        types.swap(i, j);
    }
    let mut addresses = Vec::with_capacity(n);
    let mut seen = std::collections::HashSet::new();
    while addresses.len() < n {
        let a = format!("0x{:016x}{:016x}{:08x}", rng.gen::<u64>(), rng.gen::<u64>(), rng.gen::<u32>());
        if seen.insert(a.clone()) {
            addresses.push(a);
        }
    }
    let of = |t: NodeType| -> Vec<usize> { (0..n).filter(|&i| types[i] == t).collect() };
    let accounts = of(NodeType::Account);
    let exchanges = of(NodeType::Exchange);
    let contracts = of(NodeType::TokenContract);
    let others: Vec<usize> = (0..n)
        .filter(|&i| !matches!(types[i], NodeType::Account | NodeType::Exchange | NodeType::TokenContract))
        .collect();
    let cashout: Vec<usize> = (0..n)
        .filter(|&i| matches!(types[i], NodeType::Exchange | NodeType::Gambling | NodeType::IcoWallets))
        .collect();

    let mut fraud = vec![false; n];
    let fraud_ids: Vec<usize> = {
        let mut v: Vec<usize> = sample(&mut rng, accounts.len(), cfg.fraud_count())
            .into_iter()
            .map(|i| accounts[i])
            .collect();
        v.sort_unstable();
        v
    };
    for &f in &fraud_ids {
        fraud[f] = true;
    }
    let normals: Vec<usize> = accounts.iter().copied().filter(|&a| !fraud[a]).collect();

    let mut g = Gen { cfg, rng, tx: Vec::new() };

    // Background activity of normal accounts.
    for &a in &normals {
        let d = g.heavy_tail(cfg.normal_degree_cap);
        for _ in 0..d {
            let r: f64 = g.rng.gen();
            let target = if r < 0.25 && !exchanges.is_empty() {
                g.pick(&exchanges)
            } else if r < 0.4 && !contracts.is_empty() {
                g.pick(&contracts)
            } else if r < 0.42 && !others.is_empty() {
                g.pick(&others)
            } else {
                g.pick(&accounts)
            };
            let amount = g.lognormal(0.0, 1.5);
            let t = g.time();
            g.push(a, target, amount, t);
        }
    }
    // Exchange hubs pay out withdrawals.
    for &e in &exchanges {
        for _ in 0..cfg.exchange_hub_degree {
            let d = g.pick(&normals);
            let amount = g.lognormal(0.5, 1.5);
            let t = g.time();
            g.push(e, d, amount, t);
        }
    }
    // Contracts and service wallets emit occasional transfers.
    for &c in contracts.iter().chain(&others) {
        for _ in 0..g.rng.gen_range(1..=3) {
            let d = g.pick(&accounts);
            let amount = g.lognormal(-1.0, 1.0);
            let t = g.time();
            g.push(c, d, amount, t);
        }
    }
    // Phishing: victim deposits, fan-out bursts, cash-out.
    for &f in &fraud_ids {
        for _ in 0..g.rng.gen_range(3..=8) {
            let v = g.pick(&normals);
            let amount = g.lognormal(1.0, 1.0);
            let t = g.time();
            g.push(v, f, amount, t);
        }
        for _ in 0..cfg.bursts_per_fraud {
            let k = g.rng.gen_range(cfg.fanout_min..=cfg.fanout_max);
            g.burst(f, &accounts, k, (0.001, 0.05));
        }
        if !cashout.is_empty() {
            for _ in 0..g.rng.gen_range(2..=4) {
                let d = g.pick(&cashout);
                let amount = g.lognormal(1.5, 0.5);
                let t = g.time();
                g.push(f, d, amount, t);
            }
        }
    }
    if cfg.hard {
        // Benign airdrop-style senders overlap the fraud degree profile.
        let k = (normals.len() / 20).max(1);
        let picks: Vec<usize> = sample(&mut g.rng, normals.len(), k).into_iter().map(|i| normals[i]).collect();
        for a in picks {
            let k = g.rng.gen_range(cfg.fanout_min..=cfg.fanout_max);
            g.burst(a, &accounts, k, (0.001, 0.05));
        }
    }
    // Every node takes part in at least one transaction.
    let mut touched = vec![false; n];
    for &(s, d, _, _) in &g.tx {
        touched[s] = true;
        touched[d] = true;
    }
    for i in 0..n {
        if !touched[i] {
            let mut a = g.pick(&normals);
            while a == i {
                a = g.pick(&normals);
            }
            let amount = g.lognormal(0.0, 1.0);
            let t = g.time();
            g.push(a, i, amount, t);
        }
    }

    let mut labels = fraud.clone();
    if cfg.hard && cfg.label_noise > 0.0 {
        let flips = ((fraud_ids.len() as f64) * cfg.label_noise).round() as usize;
        for i in sample(&mut g.rng, fraud_ids.len(), flips.min(fraud_ids.len())) {
            labels[fraud_ids[i]] = false;
        }
        for i in sample(&mut g.rng, normals.len(), flips.min(normals.len())) {
            labels[normals[i]] = true;
        }
    }

    let mut tx = g.tx;
    tx.sort_by(|a, b| a.3.cmp(&b.3).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let transactions = tx
        .into_iter()
        .map(|(s, d, a, t)| TransactionRecord {
            source_address: addresses[s].clone(),
            target_address: addresses[d].clone(),
            // Rounded to what the file stores, so files and memory agree.
            amount: format!("{a:.6}").parse().unwrap(),
            timestamp: t,
        })
        .collect();
    Ok(SynthData {
        addresses,
        types,
        fraud,
        labels,
        transactions,
    })
}

impl SynthData {
    pub fn transactions_csv(&self) -> String {
        let mut s = String::from("from,to,amount,timestamp\n");
        for t in &self.transactions {
            let _ = writeln!(s, "{},{},{:.6},{}", t.source_address, t.target_address, t.amount, t.timestamp);
        }
        s
    }

    pub fn fraud_labels_csv(&self) -> String {
        let mut s = String::from("address,is_fraud\n");
        for (a, &l) in self.addresses.iter().zip(&self.labels) {
            let _ = writeln!(s, "{a},{}", u8::from(l));
        }
        s
    }

    pub fn node_types_csv(&self) -> String {
        let mut s = String::from("address,type\n");
        for (a, t) in self.addresses.iter().zip(&self.types) {
            let _ = writeln!(s, "{a},{}", t.name());
        }
        s
    }

    /// Writes the three input files into `dir` (created if missing).
    pub fn write(&self, dir: &Path) -> Result<SynthPaths> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = SynthPaths {
            transactions: dir.join(TRANSACTIONS_FILE),
            fraud_labels: dir.join(FRAUD_LABELS_FILE),
            node_types: dir.join(NODE_TYPES_FILE),
        };
        for (p, body) in [
            (&paths.transactions, self.transactions_csv()),
            (&paths.fraud_labels, self.fraud_labels_csv()),
            (&paths.node_types, self.node_types_csv()),
        ] {
            fs::write(p, body).map_err(|e| Error::io(p, e))?;
        }
        Ok(paths)
    }

    pub fn label_records(&self) -> Vec<LabelRecord> {
        let mut out = Vec::with_capacity(2 * self.addresses.len());
        for (i, a) in self.addresses.iter().enumerate() {
            out.push(LabelRecord {
                address: a.clone(),
                kind: LabelKind::NodeType(self.types[i]),
            });
            out.push(LabelRecord {
                address: a.clone(),
                kind: LabelKind::FraudFlag(self.labels[i]),
            });
        }
        out
    }

    /// The graph ingest would build from the written files.
    pub fn to_graph(&self) -> Result<(HeteroGraph, BuildStats)> {
        build_graph(&self.transactions, &self.label_records())
    }
}
