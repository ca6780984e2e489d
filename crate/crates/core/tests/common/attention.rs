use std::collections::BTreeMap;

use hetgnn::layers::{
    GatLayer, GraphView, HanLayer, HeadMerge, HgtLayer, LayerConfig, ModelConfig, ModelKind, ModelSpec,
};
use hetgnn::metapath::top_metapaths;
use hetgnn::numcore::{rng_from_seed, ParamStore, Tape, Tensor};
use rand::Rng;

pub const TOL: f64 = 1e-6;

#[derive(Debug, Default, Clone, Copy)]
pub struct GroupTally {
    pub checked: usize,
    pub failed: usize,
}

impl GroupTally {
    fn add(&mut self, alpha: &Tensor, dst: &[usize]) {
        let mut sums: BTreeMap<usize, f64> = BTreeMap::new();
        for (e, &d) in dst.iter().enumerate() {
            *sums.entry(d).or_default() += alpha.get(e, 0);
        }
        for s in sums.values() {
            self.checked += 1;
            if (s - 1.0).abs() > TOL {
                self.failed += 1;
            }
        }
    }
}

fn scaled_features(n: usize, d: usize, seed: u64) -> Tensor {
    // Wide inputs push scores far apart so some softmaxes saturate.
    let mut rng = rng_from_seed(seed);
    let scale = [0.1, 1.0, 10.0][rng.gen_range(0..3)];
    let x = super::features(n, d, seed);
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * scale).collect()).unwrap()
}

/// Runs GAT, HAN and HGT on random graphs until each kind has produced at
/// least `per_kind` attention groups.
pub fn attention_groups(per_kind: usize) -> [(ModelKind, GroupTally); 3] {
    let mut out = [
        (ModelKind::Gat, GroupTally::default()),
        (ModelKind::Han, GroupTally::default()),
        (ModelKind::Hgt, GroupTally::default()),
    ];
    let mut seed = 0u64;
    while out.iter().any(|(_, t)| t.checked < per_kind) {
        seed += 1;
        let mut rng = rng_from_seed(seed);
        let n = rng.gen_range(3..40);
        let g = super::random_graph(n, rng.gen_range(1..4 * n), seed);
        let heads = rng.gen_range(1..4);
        let x = scaled_features(n, 3, seed);
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let xv = tape.constant(x);

        if out[0].1.checked < per_kind {
            let view = GraphView::build(&g, &[]);
            let cfg = LayerConfig::new(3, 4).with_heads(heads);
            let gat = GatLayer::new(&mut store, "g", cfg, HeadMerge::Concat, &mut rng).unwrap();
            let o = gat.forward(&mut tape, &store, &view.attention_edges, n, xv).unwrap();
            for a in o.attention {
                out[0].1.add(tape.value(a), &view.attention_edges.dst);
            }
        }

        if out[1].1.checked < per_kind {
            let mps = top_metapaths(&g, 3, 8).unwrap();
            if !mps.is_empty() {
                let view = GraphView::build(&g, &mps);
                let acc = tape.gather_rows(xv, &view.accounts).unwrap();
                let cfg = LayerConfig::new(3, 4).with_heads(heads);
                let han = HanLayer::new(&mut store, "h", cfg, mps.len(), &mut rng).unwrap();
                let rows = view.accounts.len();
                for (gat, edges) in han.paths.iter().zip(&view.metapath_edges) {
                    let o = gat.forward(&mut tape, &store, edges, rows, acc).unwrap();
                    for a in o.attention {
                        out[1].1.add(tape.value(a), &edges.dst);
                    }
                }
                let ho = han.forward(&mut tape, &store, &view.metapath_edges, rows, acc).unwrap();
                let beta: Vec<usize> = vec![0; mps.len()];
                let b = tape.value(ho.beta).transpose();
                out[1].1.add(&b, &beta);
            }
        }

        if out[2].1.checked < per_kind {
            let view = GraphView::build(&g, &[]);
            let spec = ModelSpec::from_view(ModelConfig::new(ModelKind::Hgt), 3, &view, vec![]);
            let cfg = LayerConfig::new(3, 2 * heads).with_heads(heads);
            let hgt = HgtLayer::new(&mut store, "t", cfg, &spec.node_types, &spec.relations, &mut rng).unwrap();
            let o = hgt.forward(&mut tape, &store, &view.relations, &view.nodes_by_type, xv).unwrap();
            let dst: Vec<usize> = view
                .relations
                .values()
                .filter(|b| !b.edges.is_empty())
                .flat_map(|b| b.edges.dst.iter().copied())
                .collect();
            for a in o.attention {
                out[2].1.add(tape.value(a), &dst);
            }
        }
    }
    out
}
