use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::hgraph::EdgeType;
use crate::numcore::{ParamId, ParamStore, Rng, Tape, Tensor, Var};

use super::{LayerConfig, RelationBlock};

/// Relational GCN: `act(X·W₀ + Σ_r D_r⁻¹A_r·X·W_r)`, one weight per relation.
/// No bias, so the layer holds `(R + 1)·in·out` parameters.
#[derive(Debug, Clone)]
pub struct RgcnLayer {
    pub cfg: LayerConfig,
    pub w_self: ParamId,
    pub w_rel: BTreeMap<EdgeType, ParamId>,
}

impl RgcnLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: LayerConfig,
        relations: &[EdgeType],
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate(false)?;
        let w_self = store.add(format!("{name}.self"), Tensor::glorot(cfg.in_dim, cfg.out_dim, rng));
        let mut w_rel = BTreeMap::new();
        for &r in relations {
            let id = store.add(
                format!("{name}.rel.{}", r.name().replace(' ', "")),
                Tensor::glorot(cfg.in_dim, cfg.out_dim, rng),
            );
            w_rel.insert(r, id);
        }
        Ok(RgcnLayer { cfg, w_self, w_rel })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        relations: &BTreeMap<EdgeType, RelationBlock>,
        n: usize,
        x: Var,
    ) -> Result<Var> {
        let ws = tape.param(store, self.w_self);
        let mut terms = vec![tape.matmul(x, ws)?];
        for (et, blk) in relations {
            let id = self
                .w_rel
                .get(et)
                .ok_or_else(|| Error::Init(format!("relation {et} was not registered")))?;
            let w = tape.param(store, *id);
            let xs = tape.gather_rows(x, &blk.sources)?;
            let xw = tape.matmul(xs, w)?;
            let agg = tape.spmm(&blk.adj, xw)?;
            terms.push(tape.scatter_add_rows(agg, &blk.targets, n)?);
        }
        let h = tape.add_all(&terms)?;
        self.cfg.activation.apply(tape, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hgraph::NormMode;
    use crate::layers::testutil::*;
    use crate::layers::Activation;
    use crate::numcore::rng_from_seed;

    #[test]
    fn tied_weights_match_dense_oracle() {
        let g = small_graph();
        let view = small_view(&g);
        let rels: Vec<EdgeType> = view.relations.keys().copied().collect();
        let mut store = ParamStore::new();
        let l = RgcnLayer::new(&mut store, "r", LayerConfig::new(3, 2), &rels, &mut rng_from_seed(2)).unwrap();
        assert_eq!(store.numel(), (rels.len() + 1) * 3 * 2);
        let w = store.value(l.w_self).clone();
        for id in l.w_rel.values() {
            *store.value_mut(*id) = w.clone();
        }
        let x = features(7, 3, 6);
        // (I + Σ_r D_r⁻¹A_r) X W, from full-size row-normalized matrices.
        let mut m = Tensor::identity(7);
        for &r in &rels {
            m.add_assign(&g.normalized_adjacency(Some(r), NormMode::Row).unwrap().to_dense());
        }
        let expect = m.matmul(&x).unwrap().matmul(&w).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let out = l.forward(&mut tape, &store, &view.relations, 7, xv).unwrap();
        assert!(tape.value(out).max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn unregistered_relation_is_an_init_error() {
        let g = small_graph();
        let view = small_view(&g);
        let mut store = ParamStore::new();
        let l = RgcnLayer::new(&mut store, "r", LayerConfig::new(3, 2), &[], &mut rng_from_seed(2)).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(features(7, 3, 6));
        assert!(matches!(
            l.forward(&mut tape, &store, &view.relations, 7, xv),
            Err(Error::Init(_))
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = small_graph();
        let view = small_view(&g);
        let rels: Vec<EdgeType> = view.relations.keys().copied().collect();
        let mut store = ParamStore::new();
        let cfg = LayerConfig::new(3, 2).with_activation(Activation::Elu);
        let l = RgcnLayer::new(&mut store, "r", cfg, &rels, &mut rng_from_seed(2)).unwrap();
        let x = features(7, 3, 6);
        let report = gradcheck(&mut store, |tape, s| {
            let xv = tape.constant(x.clone());
            l.forward(tape, s, &view.relations, 7, xv)
        });
        assert!(report.passed(), "{report:?}");
    }
}
