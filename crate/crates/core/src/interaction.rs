//! Interaction networks: per-edge messages from sender, receiver and
//! learnable edge features, sum aggregation at receivers, and a residual
//! node update.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hier::EdgeIndex;
use crate::nn::{Graph, Mlp, MlpSpec, ParamId, ParamStore, Tensor, Var};

/// Half-width of the uniform init for learnable edge features.
pub const EDGE_FEAT_INIT: f64 = 0.01;

/// Edge topology plus the learnable per-edge features `[n_edges, d_e]`.
#[derive(Debug, Clone)]
pub struct EdgeSet {
    pub index: EdgeIndex,
    /// `None` when `d_e == 0`.
    pub feat: Option<ParamId>,
    pub d_e: usize,
}

impl EdgeSet {
    pub fn build(
        store: &mut ParamStore,
        name: &str,
        index: EdgeIndex,
        d_e: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let feat = if d_e == 0 {
            None
        } else {
            let data = (0..index.len() * d_e)
                .map(|_| rng.random_range(-EDGE_FEAT_INIT..EDGE_FEAT_INIT))
                .collect();
            Some(store.add(name, Tensor::new(vec![index.len(), d_e], data)?)?)
        };
        Ok(Self { index, feat, d_e })
    }

    /// Topology-only edge set (no learnable features).
    pub fn plain(index: EdgeIndex) -> Self {
        Self {
            index,
            feat: None,
            d_e: 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.index.len() * self.d_e
    }
}

#[derive(Debug, Clone)]
pub struct InteractionNet {
    pub sender_dim: usize,
    /// Receiver and output width (`d_h`).
    pub hidden_dim: usize,
    pub d_e: usize,
    pub edge_mlp: Mlp,
    pub node_mlp: Mlp,
}

impl InteractionNet {
    /// Two-hidden-layer relu MLPs of width `hidden` on both sides. The node
    /// MLP's final layer starts at zero when `zero_init_node` is set, making
    /// the update an identity on the receivers at init.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        store: &mut ParamStore,
        prefix: &str,
        sender_dim: usize,
        hidden_dim: usize,
        d_e: usize,
        hidden: usize,
        zero_init_node: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let edge_spec =
            MlpSpec::two_hidden(sender_dim + hidden_dim + d_e, hidden, hidden_dim, false)?;
        let node_spec = MlpSpec::two_hidden(2 * hidden_dim, hidden, hidden_dim, zero_init_node)?;
        let edge_mlp = Mlp::build(store, &format!("{prefix}/edge_mlp"), edge_spec, rng)?;
        let node_mlp = Mlp::build(store, &format!("{prefix}/node_mlp"), node_spec, rng)?;
        Self::from_parts(sender_dim, hidden_dim, d_e, edge_mlp, node_mlp)
    }

    /// Assemble from prebuilt MLPs, validating widths.
    pub fn from_parts(
        sender_dim: usize,
        hidden_dim: usize,
        d_e: usize,
        edge_mlp: Mlp,
        node_mlp: Mlp,
    ) -> Result<Self> {
        if edge_mlp.spec.input_width() != sender_dim + hidden_dim + d_e {
            return Err(Error::dim(format!(
                "edge mlp input {} != {sender_dim} + {hidden_dim} + {d_e}",
                edge_mlp.spec.input_width()
            )));
        }
        if node_mlp.spec.input_width() != hidden_dim + edge_mlp.spec.output_width() {
            return Err(Error::dim(format!(
                "node mlp input {} != receiver {hidden_dim} + message {}",
                node_mlp.spec.input_width(),
                edge_mlp.spec.output_width()
            )));
        }
        if node_mlp.spec.output_width() != hidden_dim {
            return Err(Error::dim("node mlp must output the receiver width"));
        }
        Ok(Self {
            sender_dim,
            hidden_dim,
            d_e,
            edge_mlp,
            node_mlp,
        })
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.edge_mlp.params().chain(self.node_mlp.params())
    }

    pub fn mlp_param_count(&self) -> usize {
        self.edge_mlp.spec.param_count() + self.node_mlp.spec.param_count()
    }

    /// `out[v] = X_j[v] + node_mlp(X_j[v] ++ sum_{e -> v} edge_mlp(X_i[s] ++ X_j[v] ++ w_e))`
    pub fn forward(&self, g: &mut Graph<'_>, x_i: Var, x_j: Var, edges: &EdgeSet) -> Result<Var> {
        let (si, sj) = (g.shape(x_i).to_vec(), g.shape(x_j).to_vec());
        if si.len() != 2 || si[1] != self.sender_dim || si[0] != edges.index.n_senders {
            return Err(Error::dim(format!(
                "sender features {si:?}, expected [{}, {}]",
                edges.index.n_senders, self.sender_dim
            )));
        }
        if sj.len() != 2 || sj[1] != self.hidden_dim || sj[0] != edges.index.n_receivers {
            return Err(Error::dim(format!(
                "receiver features {sj:?}, expected [{}, {}]",
                edges.index.n_receivers, self.hidden_dim
            )));
        }
        if edges.d_e != self.d_e {
            return Err(Error::dim(format!(
                "edge features of width {} for a net expecting {}",
                edges.d_e, self.d_e
            )));
        }
        let n_recv = edges.index.n_receivers;
        let s = g.gather_rows(x_i, edges.index.senders.clone())?;
        let r = g.gather_rows(x_j, edges.index.receivers.clone())?;
        let edge_in = match edges.feat {
            Some(id) => {
                let w = g.param(id);
                if g.shape(w) != [edges.index.len(), self.d_e] {
                    return Err(Error::Edge(format!(
                        "edge features {:?} do not match {} edges",
                        g.shape(w),
                        edges.index.len()
                    )));
                }
                g.concat_cols(&[s, r, w])?
            }
            None => g.concat_cols(&[s, r])?,
        };
        let msg = self.edge_mlp.forward(g, edge_in)?;
        let agg = g.scatter_add_rows(msg, edges.index.receivers.clone(), n_recv)?;
        let node_in = g.concat_cols(&[x_j, agg])?;
        let upd = self.node_mlp.forward(g, node_in)?;
        g.add(x_j, upd)
    }
}

/// Evaluate one interaction net on plain tensors.
pub fn in_forward(
    net: &InteractionNet,
    store: &ParamStore,
    x_i: &Tensor,
    x_j: &Tensor,
    edges: &EdgeSet,
) -> Result<Tensor> {
    let mut g = Graph::new(store);
    let a = g.input(x_i.clone());
    let b = g.input(x_j.clone());
    let out = net.forward(&mut g, a, b, edges)?;
    Ok(g.value(out).clone())
}

/// `S` interaction nets over one scale-preserving edge set, each with its
/// own edge features.
#[derive(Debug, Clone)]
pub struct ResidualStack {
    pub layers: Vec<InteractionNet>,
    pub edges: Vec<EdgeSet>,
}

impl ResidualStack {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        store: &mut ParamStore,
        prefix: &str,
        index: &EdgeIndex,
        depth: usize,
        hidden_dim: usize,
        d_e: usize,
        hidden: usize,
        zero_init_node: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::config("residual stack needs at least one layer"));
        }
        let mut layers = Vec::with_capacity(depth);
        let mut edges = Vec::with_capacity(depth);
        for l in 0..depth {
            let p = format!("{prefix}/layer{l}");
            layers.push(InteractionNet::build(
                store,
                &p,
                hidden_dim,
                hidden_dim,
                d_e,
                hidden,
                zero_init_node,
                rng,
            )?);
            edges.push(EdgeSet::build(
                store,
                &format!("{p}/edge_feat"),
                index.clone(),
                d_e,
                rng,
            )?);
        }
        Ok(Self { layers, edges })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Layer 0 reads `u` as senders and `x` as receivers; later layers feed
    /// the previous output into both roles.
    pub fn forward(&self, g: &mut Graph<'_>, u: Var, x: Var) -> Result<Var> {
        let mut h = self.layers[0].forward(g, u, x, &self.edges[0])?;
        for (net, e) in self.layers.iter().zip(&self.edges).skip(1) {
            h = net.forward(g, h, h, e)?;
        }
        Ok(h)
    }
}

pub fn residual_stack_forward(
    stack: &ResidualStack,
    store: &ParamStore,
    u: &Tensor,
    x: &Tensor,
) -> Result<Tensor> {
    let mut g = Graph::new(store);
    let a = g.input(u.clone());
    let b = g.input(x.clone());
    let out = stack.forward(&mut g, a, b)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::nn::Activation;

    fn linear(store: &mut ParamStore, name: &str, w: Vec<f64>, n_in: usize) -> Mlp {
        let spec = MlpSpec::new(vec![n_in, 1], Activation::Linear, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Mlp::build(store, name, spec, &mut rng).unwrap();
        store.get_mut(m.layers[0].0).value = Tensor::new(vec![n_in, 1], w).unwrap();
        m
    }

    /// edge_mlp(s, r) = s, node_mlp(r, m) = m
    fn hand_net(store: &mut ParamStore, prefix: &str) -> InteractionNet {
        let e = linear(store, &format!("{prefix}/e"), vec![1.0, 0.0], 2);
        let n = linear(store, &format!("{prefix}/n"), vec![0.0, 1.0], 2);
        InteractionNet::from_parts(1, 1, 0, e, n).unwrap()
    }

    #[test]
    fn single_edge_hand_evaluation() {
        let mut store = ParamStore::new();
        let net = hand_net(&mut store, "a");
        let edges = EdgeSet::plain(EdgeIndex::new(vec![0], vec![0], 1, 1).unwrap());
        let out = in_forward(
            &net,
            &store,
            &Tensor::new(vec![1, 1], vec![2.0]).unwrap(),
            &Tensor::new(vec![1, 1], vec![5.0]).unwrap(),
            &edges,
        )
        .unwrap();
        assert_eq!(out.data(), &[7.0]);
    }

    #[test]
    fn empty_edges_with_zero_node_head_is_identity() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = InteractionNet::build(&mut store, "n", 3, 3, 2, 8, true, &mut rng).unwrap();
        let edges = EdgeSet::build(&mut store, "e", EdgeIndex::empty(2, 4), 2, &mut rng).unwrap();
        let xj = Tensor::new(vec![4, 3], (0..12).map(|v| v as f64 * 0.3 - 1.0).collect()).unwrap();
        let out = in_forward(&net, &store, &Tensor::zeros(&[2, 3]), &xj, &edges).unwrap();
        assert_eq!(out, xj);
    }

    #[test]
    fn out_of_range_and_width_errors() {
        assert!(matches!(
            EdgeIndex::new(vec![3], vec![0], 2, 2),
            Err(Error::Edge(_))
        ));
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = InteractionNet::build(&mut store, "n", 2, 2, 0, 4, false, &mut rng).unwrap();
        let edges = EdgeSet::plain(EdgeIndex::new(vec![0], vec![0], 1, 1).unwrap());
        let bad = in_forward(
            &net,
            &store,
            &Tensor::zeros(&[1, 3]),
            &Tensor::zeros(&[1, 2]),
            &edges,
        );
        assert!(matches!(bad, Err(Error::Dimension(_))));
    }

    #[test]
    fn stack_of_one_equals_single_net() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let idx = EdgeIndex::new(vec![0, 1, 2, 1], vec![1, 0, 1, 2], 3, 3).unwrap();
        let stack =
            ResidualStack::build(&mut store, "s", &idx, 1, 2, 2, 5, false, &mut rng).unwrap();
        let u = Tensor::new(vec![3, 2], vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]).unwrap();
        let x = Tensor::new(vec![3, 2], vec![1.0, -1.0, 0.5, 0.25, -0.5, 2.0]).unwrap();
        let a = residual_stack_forward(&stack, &store, &u, &x).unwrap();
        let b = in_forward(&stack.layers[0], &store, &u, &x, &stack.edges[0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_layer_stack_hand_composition() {
        // Each layer: out[v] = x[v] + sum_{e -> v} sender[e].
        let mut store = ParamStore::new();
        let l0 = hand_net(&mut store, "l0");
        let l1 = hand_net(&mut store, "l1");
        let idx = EdgeIndex::new(vec![0, 1], vec![1, 0], 2, 2).unwrap();
        let stack = ResidualStack {
            layers: vec![l0, l1],
            edges: vec![EdgeSet::plain(idx.clone()), EdgeSet::plain(idx)],
        };
        let u = Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap();
        let x = Tensor::new(vec![2, 1], vec![10.0, 20.0]).unwrap();
        // layer 0: h = [10 + u1, 20 + u0] = [12, 21]
        // layer 1: out = [12 + 21, 21 + 12] = [33, 33]
        let out = residual_stack_forward(&stack, &store, &u, &x).unwrap();
        assert_eq!(out.data(), &[33.0, 33.0]);
    }
}
