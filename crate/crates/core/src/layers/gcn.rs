use std::sync::Arc;

use crate::error::Result;
use crate::numcore::{ParamStore, Rng, SparseMatrix, Tape, Var};

use super::{LayerConfig, Linear};

/// `act(Â·X·W + b)` with a fixed normalized adjacency `Â`.
#[derive(Debug, Clone)]
pub struct GcnLayer {
    pub cfg: LayerConfig,
    pub lin: Linear,
}

impl GcnLayer {
    pub fn new(store: &mut ParamStore, name: &str, cfg: LayerConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate(false)?;
        let lin = Linear::new(store, name, cfg.in_dim, cfg.out_dim, true, rng);
        Ok(GcnLayer { cfg, lin })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, adj: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.lin.w);
        let xw = tape.matmul(x, w)?;
        let mut h = tape.spmm(adj, xw)?;
        if let Some(b) = self.lin.b {
            let b = tape.param(store, b);
            h = tape.add_row_broadcast(h, b)?;
        }
        self.cfg.activation.apply(tape, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::testutil::*;
    use crate::layers::Activation;
    use crate::numcore::{rng_from_seed, Tensor};

    #[test]
    fn matches_dense_formula() {
        let g = small_graph();
        let view = small_view(&g);
        let mut store = ParamStore::new();
        let cfg = LayerConfig::new(3, 4);
        let layer = GcnLayer::new(&mut store, "gcn", cfg, &mut rng_from_seed(1)).unwrap();
        let x = features(7, 3, 2);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = layer.forward(&mut tape, &store, &view.sym_adj, xv).unwrap();
        let expect = view
            .sym_adj
            .to_dense()
            .matmul(&x)
            .unwrap()
            .matmul(store.value(layer.lin.w))
            .unwrap();
        assert!(tape.value(out).max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = small_graph();
        let view = small_view(&g);
        let mut store = ParamStore::new();
        let cfg = LayerConfig::new(3, 4).with_activation(Activation::Elu);
        let layer = GcnLayer::new(&mut store, "gcn", cfg, &mut rng_from_seed(3)).unwrap();
        store.value_mut(layer.lin.b.unwrap()).data_mut().copy_from_slice(&[0.1, -0.2, 0.3, 0.05]);
        let x = features(7, 3, 4);
        let report = gradcheck(&mut store, |tape, s| {
            let xv = tape.constant(x.clone());
            layer.forward(tape, s, &view.sym_adj, xv)
        });
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn isolated_node_keeps_self_term() {
        let adj = Arc::new(SparseMatrix::identity(2));
        let mut store = ParamStore::new();
        let layer = GcnLayer::new(&mut store, "g", LayerConfig::new(2, 2), &mut rng_from_seed(0)).unwrap();
        let x = Tensor::identity(2);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let out = layer.forward(&mut tape, &store, &adj, xv).unwrap();
        assert_eq!(tape.value(out), store.value(layer.lin.w));
    }
}
