use std::collections::BTreeMap;

use hetgnn::hgraph::{EdgeType, HeteroGraph};
use hetgnn::layers::{GraphView, LayerConfig, RgcnLayer};
use hetgnn::metapath::{account_nodes, enumerate_metapaths, metapath_adjacency, MetaPath};
use hetgnn::numcore::{rng_from_seed, ParamStore, SparseMatrix, Tape};
use rand::Rng;

pub fn spmm_max_error(seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let (r, c, d) = (rng.gen_range(1..20), rng.gen_range(1..20), rng.gen_range(1..6));
    let nnz = rng.gen_range(0..r * c);
    let trip: Vec<(usize, usize, f64)> = (0..nnz)
        .map(|_| (rng.gen_range(0..r), rng.gen_range(0..c), rng.gen_range(-2.0..2.0)))
        .collect();
    let a = SparseMatrix::from_triplets(r, c, &trip).unwrap();
    let x = super::features(c, d, seed ^ 1);
    let y = a.spmm(&x).unwrap();
    let dense = super::dense(r, c, trip.into_iter());
    let mut worst: f64 = 0.0;
    for i in 0..r {
        for k in 0..d {
            let want: f64 = (0..c).map(|j| dense[i][j] * x.get(j, k)).sum();
            worst = worst.max((y.get(i, k) - want).abs());
        }
    }
    worst
}

/// RGCN with every relation weight tied to the self weight, against
/// `(I + Σ_r D_r⁻¹ A_r) X W` built straight from the edge list.
pub fn rgcn_tied_max_error(g: &HeteroGraph, seed: u64) -> f64 {
    let n = g.node_count();
    let view = GraphView::build(g, &[]);
    let rels: Vec<EdgeType> = view.relations.keys().copied().collect();
    let mut store = ParamStore::new();
    let mut rng = rng_from_seed(seed);
    let layer = RgcnLayer::new(&mut store, "r", LayerConfig::new(3, 2), &rels, &mut rng).unwrap();
    let w = store.value(layer.w_self).clone();
    for id in layer.w_rel.values() {
        *store.value_mut(*id) = w.clone();
    }
    let x = super::features(n, 3, seed);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = layer.forward(&mut tape, &store, &view.relations, n, xv).unwrap();
    let got = tape.value(out).clone();

    let mut prop = vec![vec![0.0; n]; n];
    for (i, row) in prop.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut by_rel: BTreeMap<EdgeType, std::collections::BTreeSet<(usize, usize)>> = BTreeMap::new();
    for e in g.edges() {
        by_rel
            .entry(EdgeType::new(g.node_type(e.src), g.node_type(e.dst)))
            .or_default()
            .insert((e.src, e.dst));
    }
    for pairs in by_rel.values() {
        let mut indeg = vec![0.0; n];
        for &(_, d) in pairs {
            indeg[d] += 1.0;
        }
        for &(s, d) in pairs {
            prop[d][s] += 1.0 / indeg[d];
        }
    }
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for k in 0..2 {
            let want: f64 = (0..n)
                .map(|j| prop[i][j] * (0..3).map(|c| x.get(j, c) * w.get(c, k)).sum::<f64>())
                .sum();
            worst = worst.max((got.get(i, k) - want).abs());
        }
    }
    worst
}

/// Boolean matrix product over typed hops: `R = P₁·P₂···`, with
/// `P_k[u][v]` set iff `u→v` and the types match hop `k`.
pub fn metapath_oracle(g: &HeteroGraph, mp: &MetaPath) -> Vec<Vec<bool>> {
    let n = g.node_count();
    let types = mp.types();
    let mut reach = vec![vec![false; n]; n];
    for (u, row) in reach.iter_mut().enumerate() {
        row[u] = g.node_type(u) == types[0];
    }
    for k in 1..types.len() {
        let mut hop = vec![vec![false; n]; n];
        for e in g.edges() {
            if g.node_type(e.src) == types[k - 1] && g.node_type(e.dst) == types[k] {
                hop[e.src][e.dst] = true;
            }
        }
        let mut next = vec![vec![false; n]; n];
        for i in 0..n {
            for m in 0..n {
                if reach[i][m] {
                    for j in 0..n {
                        next[i][j] |= hop[m][j];
                    }
                }
            }
        }
        reach = next;
    }
    let acc = account_nodes(g);
    (0..acc.len())
        .map(|i| (0..acc.len()).map(|j| i == j || reach[acc[j]][acc[i]]).collect())
        .collect()
}

/// Number of meta-paths (over all fixtures) whose adjacency differs from the
/// oracle, and the number compared.
pub fn metapath_mismatches(fixtures: u64) -> (usize, usize) {
    let (mut bad, mut total) = (0, 0);
    for seed in 0..fixtures {
        let mut rng = rng_from_seed(seed);
        let n = rng.gen_range(2..=20);
        let g = super::random_graph(n, rng.gen_range(0..3 * n), seed);
        for (mp, _) in enumerate_metapaths(&g, 3).unwrap() {
            let adj = metapath_adjacency(&g, &mp);
            let want = metapath_oracle(&g, &mp);
            total += 1;
            let same = want
                .iter()
                .enumerate()
                .all(|(i, row)| row.iter().enumerate().all(|(j, &b)| (adj.get(i, j) != 0.0) == b));
            if !same {
                bad += 1;
            }
        }
    }
    (bad, total)
}

/// Precision at every distinct threshold, summed over recall increments.
pub fn ap_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for t in thresholds {
        let (mut tp, mut pp) = (0usize, 0usize);
        for (s, l) in scores.iter().zip(labels) {
            if *s >= t {
                pp += 1;
                tp += *l as usize;
            }
        }
        let r = tp as f64 / pos as f64;
        ap += (r - prev) * (tp as f64 / pp as f64);
        prev = r;
    }
    ap
}

pub fn ap_fixture(seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = rng_from_seed(seed);
    let n = rng.gen_range(1..60);
    // Coarse scores so ties are common.
    let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..12) as f64 / 11.0).collect();
    let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.3) as u8).collect();
    labels[rng.gen_range(0..n)] = 1;
    (scores, labels)
}
