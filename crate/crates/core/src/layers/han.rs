use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Rng, Tape, Tensor, Var};

use super::{Activation, EdgeList, GatLayer, HeadMerge, LayerConfig, Linear};

/// Heterogeneous graph attention over meta-path neighborhoods.
///
/// Node-level: one GAT per meta-path on the account index space.
/// Semantic-level: `w_p = q · mean_i tanh(z_p,i · W + b)`, `β = softmax(w)`,
/// output `Σ_p β_p · z_p`.
#[derive(Debug, Clone)]
pub struct HanLayer {
    pub cfg: LayerConfig,
    pub paths: Vec<GatLayer>,
    pub semantic: Linear,
    pub query: crate::numcore::ParamId,
}

pub struct HanOutput {
    pub out: Var,
    /// `1×P` meta-path weights.
    pub beta: Var,
}

impl HanLayer {
    pub fn new(store: &mut ParamStore, name: &str, cfg: LayerConfig, n_paths: usize, rng: &mut Rng) -> Result<Self> {
        cfg.validate(false)?;
        if n_paths == 0 {
            return Err(Error::Config("HAN needs at least one meta-path".into()));
        }
        let gat_cfg = cfg.with_activation(Activation::Elu);
        let paths = (0..n_paths)
            .map(|p| GatLayer::new(store, &format!("{name}.path{p}"), gat_cfg, HeadMerge::Concat, rng))
            .collect::<Result<Vec<_>>>()?;
        let width = cfg.heads * cfg.out_dim;
        let semantic = Linear::new(store, &format!("{name}.sem"), width, cfg.out_dim, true, rng);
        let query = store.add(format!("{name}.sem.q"), Tensor::glorot(1, cfg.out_dim, rng));
        Ok(HanLayer {
            cfg,
            paths,
            semantic,
            query,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.cfg.heads * self.cfg.out_dim
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, paths: &[EdgeList], n: usize, x: Var) -> Result<HanOutput> {
        if paths.len() != self.paths.len() {
            return Err(Error::Init(format!(
                "layer built for {} meta-paths, view has {}",
                self.paths.len(),
                paths.len()
            )));
        }
        let q = tape.param(store, self.query);
        let mut z = Vec::with_capacity(paths.len());
        let mut w = Vec::with_capacity(paths.len());
        for (gat, edges) in self.paths.iter().zip(paths) {
            let zp = gat.forward(tape, store, edges, n, x)?.out;
            let s = self.semantic.forward(tape, store, zp)?;
            let s = tape.tanh(s)?;
            let s = tape.mean_rows(s)?;
            w.push(tape.row_dot(s, q)?);
            z.push(zp);
        }
        let w = tape.concat_cols(&w)?;
        let beta = tape.softmax_rows(w)?;
        let mut terms = Vec::with_capacity(z.len());
        for (p, zp) in z.into_iter().enumerate() {
            let bp = tape.slice_cols(beta, p, 1)?;
            terms.push(tape.scale_by(zp, bp)?);
        }
        let out = tape.add_all(&terms)?;
        let out = self.cfg.activation.apply(tape, out)?;
        Ok(HanOutput { out, beta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::testutil::*;
    use crate::numcore::rng_from_seed;

    fn paths() -> Vec<EdgeList> {
        // Two meta-path neighborhoods over four accounts, self-loops included.
        vec![
            EdgeList::new(vec![0, 1, 2, 3, 1, 0], vec![0, 1, 2, 3, 0, 1]),
            EdgeList::new(vec![0, 1, 2, 3, 3], vec![0, 1, 2, 3, 2]),
        ]
    }

    #[test]
    fn semantic_weights_form_a_distribution() {
        let mut store = ParamStore::new();
        let l = HanLayer::new(&mut store, "han", LayerConfig::new(3, 2).with_heads(2), 2, &mut rng_from_seed(1)).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(features(4, 3, 2));
        let out = l.forward(&mut tape, &store, &paths(), 4, xv).unwrap();
        let beta = tape.value(out.beta).data().to_vec();
        assert_eq!(beta.len(), 2);
        assert!((beta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(tape.value(out.out).shape(), &[4, 4]);
    }

    #[test]
    fn path_count_mismatch_is_rejected() {
        let mut store = ParamStore::new();
        let l = HanLayer::new(&mut store, "han", LayerConfig::new(3, 2), 3, &mut rng_from_seed(1)).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(features(4, 3, 2));
        assert!(l.forward(&mut tape, &store, &paths(), 4, xv).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let cfg = LayerConfig::new(3, 2).with_heads(2).with_activation(Activation::Elu);
        let l = HanLayer::new(&mut store, "han", cfg, 2, &mut rng_from_seed(9)).unwrap();
        let x = features(4, 3, 2);
        let p = paths();
        let report = gradcheck(&mut store, |tape, s| {
            let xv = tape.constant(x.clone());
            Ok(l.forward(tape, s, &p, 4, xv)?.out)
        });
        assert!(report.passed(), "{report:?}");
    }
}
