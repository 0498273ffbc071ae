//! Single message-passing layer.

use std::sync::Arc;

use rand::Rng;

use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::nn::glorot_uniform;
use crate::tensor::{SparseMatrix, Tensor};
use crate::Result;

use super::LayerKind;

/// One graph convolution, pre-activation. Parameters live in the shared
/// [`ParamStore`]; the layer only keeps their ids.
#[derive(Clone, Debug)]
pub struct GraphLayer {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Neighbour weight `B` (GCNConv) or `B_neigh` (GraphConv).
    pub neigh: ParamId,
    /// Root weight, GraphConv only.
    pub root: Option<ParamId>,
    pub bias: ParamId,
}

impl GraphLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        kind: LayerKind,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let neigh = store.add(
            format!("{name}.weight"),
            glorot_uniform(in_dim, out_dim, rng),
        );
        let root = match kind {
            LayerKind::GcnConv => None,
            LayerKind::GraphConv => {
                Some(store.add(format!("{name}.root"), glorot_uniform(in_dim, out_dim, rng)))
            }
        };
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, out_dim));
        GraphLayer {
            kind,
            in_dim,
            out_dim,
            neigh,
            root,
            bias,
        }
    }

    /// `P (H B) + b`, plus `H B_root` for GraphConv.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        prop: &Arc<SparseMatrix>,
        h: Var,
    ) -> Result<Var> {
        let b = tape.param(store, self.neigh);
        let hb = tape.matmul(h, b)?;
        let mut out = tape.spmm(prop, hb)?;
        if let Some(root) = self.root {
            let r = tape.param(store, root);
            let hr = tape.matmul(h, r)?;
            out = tape.add(out, hr)?;
        }
        let bias = tape.param(store, self.bias);
        tape.add_bias(out, bias)
    }
}
