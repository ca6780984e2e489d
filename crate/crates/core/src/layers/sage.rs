use std::sync::Arc;

use rand::seq::index::sample;

use crate::error::Result;
use crate::numcore::{ParamStore, Rng, SparseMatrix, Tape, Var};

use super::{Ctx, LayerConfig, Linear};

/// GraphSAGE with mean aggregation: `act(X·W_self + mean_N(X)·W_neigh + b)`.
///
/// During training each node aggregates a uniform sample of at most
/// `sample_size` neighbors; evaluation uses the full neighborhood.
#[derive(Debug, Clone)]
pub struct SageLayer {
    pub cfg: LayerConfig,
    pub sample_size: Option<usize>,
    pub self_lin: Linear,
    pub neigh_lin: Linear,
}

impl SageLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: LayerConfig,
        sample_size: Option<usize>,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate(false)?;
        let self_lin = Linear::new(store, &format!("{name}.self"), cfg.in_dim, cfg.out_dim, true, rng);
        let neigh_lin = Linear::new(store, &format!("{name}.neigh"), cfg.in_dim, cfg.out_dim, false, rng);
        Ok(SageLayer {
            cfg,
            sample_size,
            self_lin,
            neigh_lin,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        neighbors: &[Vec<usize>],
        full_mean: &Arc<SparseMatrix>,
        x: Var,
        ctx: &mut Ctx<'_>,
    ) -> Result<Var> {
        let mean = match self.sample_size {
            Some(k) if ctx.training => Arc::new(sampled_mean(neighbors, k, ctx.rng)),
            _ => Arc::clone(full_mean),
        };
        let hs = self.self_lin.forward(tape, store, x)?;
        let agg = tape.spmm(&mean, x)?;
        let hn = self.neigh_lin.forward(tape, store, agg)?;
        let h = tape.add(hs, hn)?;
        self.cfg.activation.apply(tape, h)
    }
}

/// Row-normalized adjacency over at most `k` sampled neighbors per node.
pub fn sampled_mean(neighbors: &[Vec<usize>], k: usize, rng: &mut Rng) -> SparseMatrix {
    let n = neighbors.len();
    let mut trip = Vec::new();
    for (i, nb) in neighbors.iter().enumerate() {
        if nb.len() <= k {
            trip.extend(nb.iter().map(|&j| (i, j, 1.0 / nb.len() as f64)));
        } else {
            trip.extend(sample(rng, nb.len(), k).into_iter().map(|p| (i, nb[p], 1.0 / k as f64)));
        }
    }
    SparseMatrix::from_triplets(n, n, &trip).expect("neighbors are in range")
}
