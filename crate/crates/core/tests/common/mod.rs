#![allow(dead_code)]

use hetgnn::hgraph::{derive_edge_types, Edge, HeteroGraph, NodeType};
use hetgnn::numcore::{rng_from_seed, Tensor};
use rand::Rng;

/// Random typed graph: about half the nodes are accounts, the rest drawn from
/// the other types. Edges are random pairs with distinct endpoints.
pub fn random_graph(n: usize, m: usize, seed: u64) -> HeteroGraph {
    let mut rng = rng_from_seed(seed);
    let types: Vec<NodeType> = (0..n)
        .map(|i| {
            if i < 2 || rng.gen_bool(0.5) {
                NodeType::Account
            } else {
                NodeType::ALL[rng.gen_range(1..NodeType::COUNT)]
            }
        })
        .collect();
    let mut edges = Vec::with_capacity(m);
    while edges.len() < m && n > 1 {
        let s = rng.gen_range(0..n);
        let d = rng.gen_range(0..n);
        if s != d {
            edges.push(Edge::transfer(s, d, rng.gen_range(0.1..10.0), edges.len() as i64));
        }
    }
    derive_edge_types(types, edges).unwrap()
}

pub fn features(n: usize, d: usize, seed: u64) -> Tensor {
    Tensor::uniform(&[n, d], -1.0, 1.0, &mut rng_from_seed(seed))
}

/// Dense row-major copy of a sparse matrix.
pub fn dense(rows: usize, cols: usize, entries: impl Iterator<Item = (usize, usize, f64)>) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; cols]; rows];
    for (i, j, v) in entries {
        d[i][j] += v;
    }
    d
}

pub mod attention;
pub mod fd;
pub mod oracle;
