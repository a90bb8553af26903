//! The hierarchical forecaster: grid encoding, an upward pass without
//! intra-level processing, a downward pass that rebuilds each level's
//! memory buffer from the projected coarse buffer and the upward features,
//! and per-level physics heads whose outputs are replicated to the base grid
//! and summed.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, Role};
use crate::error::{Error, Result};
use crate::hier::{build_grid, build_hierarchy, ForcingPyramid, HierGraph};
use crate::interaction::{EdgeSet, InteractionNet, ResidualStack};
use crate::nn::{Graph, Mlp, MlpSpec, ParamStore, Tensor, Var};

pub const TAG_ENCODE: &str = "encode";
pub const TAG_UP: &str = "up";
pub const TAG_DOWN: &str = "down";
pub const TAG_MEMORY: &str = "memory";
pub const TAG_PHYSICS: &str = "physics";
pub const TAG_LATENT: &str = "latent_mean";

/// Per-level memory buffers `H[k]` and coarse-to-fine priors `U[k]`.
/// `U` has no entry for the coarsest level.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBuffers {
    pub h: Vec<Tensor>,
    pub u: Vec<Tensor>,
}

/// Which latent input the physics heads receive.
#[derive(Debug, Clone, Copy)]
pub enum LatentInput<'a> {
    /// `Z = mu(X)`; also the only choice for models without a latent branch.
    Mean,
    /// `Z = mu(X) + sigma * eps` with `eps` of shape `[n_cells, d_z]`.
    Noise(&'a Tensor),
}

#[derive(Debug, Clone)]
pub struct LatentBranch {
    pub mean_net: Mlp,
    pub d_z: usize,
    pub sigma: f64,
}

/// Which parts of the downward traversal are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Memory stacks on every non-top level and a physics head per level.
    Flow,
    /// Downward nets only, no memory stacks, a single base-level head.
    Lightweight,
}

/// Recorded handles of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub encoded: Var,
    pub x_levels: Vec<Var>,
    pub h: Vec<Var>,
    pub u: Vec<Var>,
    pub latent: Option<Var>,
    /// Per-level head outputs `[n_nodes_k, C]`.
    pub heads: Vec<Option<Var>>,
    /// Summed prediction `[n_cells, C]`.
    pub prediction: Var,
}

#[derive(Debug, Clone)]
pub struct FlowModel {
    pub config: ModelConfig,
    pub variant: Variant,
    pub hier: HierGraph,
    pub store: ParamStore,
    pub enc: InteractionNet,
    pub enc_edges: EdgeSet,
    /// `up[k]` maps level `k` to level `k + 1`.
    pub up: Vec<(InteractionNet, EdgeSet)>,
    /// `down[k]` maps level `k + 1` to level `k`.
    pub down: Vec<(InteractionNet, EdgeSet)>,
    /// `mem[k]` for `k < K - 1`; empty for the lightweight variant.
    pub mem: Vec<ResidualStack>,
    /// `phys[k]`; the lightweight variant only has `phys[0]`.
    pub phys: Vec<Mlp>,
    pub latent: Option<LatentBranch>,
    coords: Tensor,
}

impl FlowModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        Self::with_variant(config, Variant::Flow)
    }

    pub fn with_variant(config: ModelConfig, variant: Variant) -> Result<Self> {
        config.validate()?;
        let grid = build_grid(config.n_lat, config.n_lon)?;
        let hier = build_hierarchy(&grid, config.k_levels, config.factor)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (d_h, d_e, hid) = (config.d_h, config.d_e, config.hidden());
        let k_levels = config.k_levels;

        let g2m = Role::Grid2Mesh.key();
        let enc = InteractionNet::build(
            &mut store,
            g2m,
            config.grid_feature_width(),
            d_h,
            d_e,
            hid,
            false,
            &mut rng,
        )?;
        let enc_edges = EdgeSet::build(
            &mut store,
            &format!("{g2m}/edge_feat"),
            hier.grid2mesh.clone(),
            d_e,
            &mut rng,
        )?;

        let mut up = Vec::with_capacity(k_levels - 1);
        let mut down = Vec::with_capacity(k_levels - 1);
        for k in 0..k_levels - 1 {
            let p = format!("{}/{k}", Role::Up.key());
            let net = InteractionNet::build(&mut store, &p, d_h, d_h, d_e, hid, false, &mut rng)?;
            let e = EdgeSet::build(
                &mut store,
                &format!("{p}/edge_feat"),
                hier.up_edges[k].clone(),
                d_e,
                &mut rng,
            )?;
            up.push((net, e));
        }
        for k in 0..k_levels - 1 {
            let p = format!("{}/{k}", Role::Down.key());
            let net = InteractionNet::build(&mut store, &p, d_h, d_h, d_e, hid, false, &mut rng)?;
            let e = EdgeSet::build(
                &mut store,
                &format!("{p}/edge_feat"),
                hier.down_edges[k].clone(),
                d_e,
                &mut rng,
            )?;
            down.push((net, e));
        }

        let mut mem = Vec::new();
        if variant == Variant::Flow {
            for k in 0..k_levels - 1 {
                mem.push(ResidualStack::build(
                    &mut store,
                    &format!("{}/{k}", Role::Memory.key()),
                    &hier.levels[k].intra_edges,
                    config.stack_depth,
                    d_h,
                    d_e,
                    hid,
                    true,
                    &mut rng,
                )?);
            }
        }

        let head_in = d_h + 1 + config.d_z();
        let n_heads = match variant {
            Variant::Flow => k_levels,
            Variant::Lightweight => 1,
        };
        let mut phys = Vec::with_capacity(n_heads);
        for k in 0..n_heads {
            let prefix = if k == 0 {
                Role::Mesh2Grid.key().to_string()
            } else {
                format!("{}/{k}", Role::Physics.key())
            };
            let spec = MlpSpec::two_hidden(head_in, hid, config.channels, true)?;
            phys.push(Mlp::build(&mut store, &prefix, spec, &mut rng)?);
        }

        let latent = match config.latent {
            Some(l) => {
                let spec = MlpSpec::two_hidden(config.grid_feature_width(), hid, l.d_z, false)?;
                Some(LatentBranch {
                    mean_net: Mlp::build(&mut store, Role::LatentMean.key(), spec, &mut rng)?,
                    d_z: l.d_z,
                    sigma: l.sigma,
                })
            }
            None => None,
        };

        let mut coords = Vec::with_capacity(grid.cells() * 4);
        for r in 0..grid.n_lat {
            for c in 0..grid.n_lon {
                let (lat, lon) = (grid.lat_deg(r).to_radians(), grid.lon_deg(c).to_radians());
                coords.extend_from_slice(&[lat.sin(), lat.cos(), lon.sin(), lon.cos()]);
            }
        }
        let coords = Tensor::new(vec![grid.cells(), 4], coords)?;

        let mut model = Self {
            config,
            variant,
            hier,
            store,
            enc,
            enc_edges,
            up,
            down,
            mem,
            phys,
            latent,
            coords,
        };
        model.apply_freeze();
        Ok(model)
    }

    /// Set every parameter's frozen flag from `config.freeze`.
    pub fn apply_freeze(&mut self) {
        for role in Role::ALL {
            let frozen = self.config.freeze.contains(&role);
            self.store.set_frozen_prefix(&role.prefix(), frozen);
        }
    }

    pub fn n_cells(&self) -> usize {
        self.hier.grid.cells()
    }

    /// Zero the final layer of every MLP. Makes the whole model output zero
    /// increments, so `step` is the identity.
    pub fn zero_final_layers(&mut self) {
        let mut ids = Vec::new();
        let mut push = |m: &Mlp| {
            let (w, b) = m.last_layer();
            ids.push(w);
            ids.push(b);
        };
        push(&self.enc.node_mlp);
        for (n, _) in self.up.iter().chain(&self.down) {
            push(&n.node_mlp);
        }
        for s in &self.mem {
            for l in &s.layers {
                push(&l.node_mlp);
            }
        }
        for p in &self.phys {
            push(p);
        }
        if let Some(l) = &self.latent {
            push(&l.mean_net);
        }
        for id in ids {
            self.store.get_mut(id).value.data_mut().fill(0.0);
        }
    }

    /// Overwrite every parameter with `uniform(-scale, scale)` draws.
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in self.store.iter_mut() {
            for v in p.value.data_mut() {
                *v = rng.random_range(-scale..scale);
            }
        }
    }

    fn check_state(&self, x: &Tensor, f: &Tensor) -> Result<()> {
        let c = &self.config;
        if x.shape() != [c.n_lat, c.n_lon, c.channels] {
            return Err(Error::dim(format!(
                "state shape {:?}, expected [{}, {}, {}]",
                x.shape(),
                c.n_lat,
                c.n_lon,
                c.channels
            )));
        }
        if f.shape() != [c.n_lat, c.n_lon] {
            return Err(Error::dim(format!(
                "forcing shape {:?}, expected [{}, {}]",
                f.shape(),
                c.n_lat,
                c.n_lon
            )));
        }
        Ok(())
    }

    /// Per-cell encoder input `[n_cells, C + 1 (+ 4)]`.
    pub fn grid_features(&self, x: &Tensor, f: &Tensor) -> Result<Tensor> {
        self.check_state(x, f)?;
        let n = self.n_cells();
        let xs = x.clone().reshape(vec![n, self.config.channels])?;
        let fs = if self.config.forcing_in_encoder {
            f.clone().reshape(vec![n, 1])?
        } else {
            Tensor::zeros(&[n, 1])
        };
        if self.config.coord_features {
            Tensor::concat_cols(&[&xs, &fs, &self.coords])
        } else {
            Tensor::concat_cols(&[&xs, &fs])
        }
    }

    pub fn encode_var(&self, g: &mut Graph<'_>, feats: Var) -> Result<Var> {
        g.set_tag(TAG_ENCODE);
        let zeros = g.input(Tensor::zeros(&[self.n_cells(), self.config.d_h]));
        self.enc.forward(g, feats, zeros, &self.enc_edges)
    }

    pub fn upward_var(&self, g: &mut Graph<'_>, m1: Var) -> Result<Vec<Var>> {
        g.set_tag(TAG_UP);
        let mut xs = vec![m1];
        for (k, (net, e)) in self.up.iter().enumerate() {
            let zeros = g.input(Tensor::zeros(&[self.hier.n_nodes(k + 1), self.config.d_h]));
            let next = net.forward(g, xs[k], zeros, e)?;
            xs.push(next);
        }
        Ok(xs)
    }

    /// Returns `(H, U)`; `H[K-1] = X[K-1]`.
    pub fn downward_var(&self, g: &mut Graph<'_>, xs: &[Var]) -> Result<(Vec<Var>, Vec<Var>)> {
        let k_levels = self.hier.depth();
        if xs.len() != k_levels {
            return Err(Error::dim(format!(
                "{} level features for a {k_levels}-level hierarchy",
                xs.len()
            )));
        }
        let mut h: Vec<Option<Var>> = vec![None; k_levels];
        let mut u: Vec<Option<Var>> = vec![None; k_levels - 1];
        h[k_levels - 1] = Some(xs[k_levels - 1]);
        for k in (0..k_levels - 1).rev() {
            g.set_tag(TAG_DOWN);
            let (net, e) = &self.down[k];
            let zeros = g.input(Tensor::zeros(&[self.hier.n_nodes(k), self.config.d_h]));
            let uk = net.forward(g, h[k + 1].unwrap(), zeros, e)?;
            u[k] = Some(uk);
            h[k] = Some(match self.mem.get(k) {
                Some(stack) => {
                    g.set_tag(TAG_MEMORY);
                    stack.forward(g, uk, xs[k])?
                }
                None => uk,
            });
        }
        Ok((
            h.into_iter().map(Option::unwrap).collect(),
            u.into_iter().map(Option::unwrap).collect(),
        ))
    }

    /// Latent mean `mu` from grid features, `[n_cells, d_z]`.
    pub fn latent_mean_var(&self, g: &mut Graph<'_>, feats: Var) -> Result<Option<Var>> {
        match &self.latent {
            Some(l) => {
                g.set_tag(TAG_LATENT);
                Ok(Some(l.mean_net.forward(g, feats)?))
            }
            None => Ok(None),
        }
    }

    /// Sum of per-level heads replicated onto the base grid, `[n_cells, C]`.
    pub fn predict_var(
        &self,
        g: &mut Graph<'_>,
        h: &[Var],
        pyramid: &ForcingPyramid,
        z: Option<Var>,
    ) -> Result<(Var, Vec<Option<Var>>)> {
        if pyramid.fields.len() != self.hier.depth() {
            return Err(Error::dim("forcing pyramid depth does not match hierarchy"));
        }
        g.set_tag(TAG_PHYSICS);
        let mut heads = vec![None; self.hier.depth()];
        let mut total: Option<Var> = None;
        for (k, head) in self.phys.iter().enumerate() {
            let n_k = self.hier.n_nodes(k);
            let f_k = if self.config.forcing_in_physics {
                pyramid.fields[k].clone().reshape(vec![n_k, 1])?
            } else {
                Tensor::zeros(&[n_k, 1])
            };
            let fv = g.input(f_k);
            let mut parts = vec![h[k], fv];
            if let Some(z) = z {
                let zk = if k == 0 {
                    z
                } else {
                    let anc = self.hier.ancestors(k)?.clone();
                    g.segment_max_rows(z, &anc, n_k)?
                };
                parts.push(zk);
            }
            let inp = g.concat_cols(&parts)?;
            let y = head.forward(g, inp)?;
            heads[k] = Some(y);
            let on_base = if k == 0 {
                y
            } else {
                let anc: Arc<[usize]> = self.hier.ancestors(k)?.clone();
                g.gather_rows(y, anc)?
            };
            total = Some(match total {
                Some(t) => g.add(t, on_base)?,
                None => on_base,
            });
        }
        Ok((total.expect("at least one head"), heads))
    }

    /// Record the full one-step forward pass of the increment prediction.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        x: &Tensor,
        f: &Tensor,
        latent: LatentInput<'_>,
    ) -> Result<Trace> {
        let feats = self.grid_features(x, f)?;
        let pyramid = ForcingPyramid::for_hierarchy(f, &self.hier)?;
        let fv = g.input(feats);
        let encoded = self.encode_var(g, fv)?;
        let x_levels = self.upward_var(g, encoded)?;
        let (h, u) = self.downward_var(g, &x_levels)?;
        let mu = self.latent_mean_var(g, fv)?;
        let z = match (mu, latent) {
            (None, LatentInput::Mean) => None,
            (None, LatentInput::Noise(_)) => {
                return Err(Error::config(
                    "latent noise given to a model without a latent branch",
                ))
            }
            (Some(mu), LatentInput::Mean) => Some(mu),
            (Some(mu), LatentInput::Noise(eps)) => {
                let l = self.latent.as_ref().unwrap();
                if eps.shape() != [self.n_cells(), l.d_z] {
                    return Err(Error::dim(format!(
                        "latent noise {:?}, expected [{}, {}]",
                        eps.shape(),
                        self.n_cells(),
                        l.d_z
                    )));
                }
                let e = g.input(eps.clone());
                let scaled = g.scale(e, l.sigma)?;
                Some(g.add(mu, scaled)?)
            }
        };
        let (prediction, heads) = self.predict_var(g, &h, &pyramid, z)?;
        Ok(Trace {
            encoded,
            x_levels,
            h,
            u,
            latent: z,
            heads,
            prediction,
        })
    }

    fn grid_shaped(&self, t: &Tensor) -> Result<Tensor> {
        let c = &self.config;
        t.clone().reshape(vec![c.n_lat, c.n_lon, c.channels])
    }

    /// Mesh embedding `[n_cells, d_h]`.
    pub fn encode(&self, x: &Tensor, f: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new(&self.store);
        let fv = g.input(self.grid_features(x, f)?);
        let m = self.encode_var(&mut g, fv)?;
        Ok(g.value(m).clone())
    }

    pub fn upward_pass(&self, m1: &Tensor) -> Result<Vec<Tensor>> {
        if m1.shape() != [self.n_cells(), self.config.d_h] {
            return Err(Error::dim(format!("embedding shape {:?}", m1.shape())));
        }
        let mut g = Graph::new(&self.store);
        let v = g.input(m1.clone());
        let xs = self.upward_var(&mut g, v)?;
        Ok(xs.iter().map(|&x| g.value(x).clone()).collect())
    }

    pub fn downward_pass(&self, xs: &[Tensor]) -> Result<MemoryBuffers> {
        let mut g = Graph::new(&self.store);
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
        let (h, u) = self.downward_var(&mut g, &vars)?;
        Ok(MemoryBuffers {
            h: h.iter().map(|&v| g.value(v).clone()).collect(),
            u: u.iter().map(|&v| g.value(v).clone()).collect(),
        })
    }

    /// Summed multiscale increment `[n_lat, n_lon, C]`. `z` is the base-level
    /// latent sample for ensemble models.
    pub fn predict(
        &self,
        buffers: &MemoryBuffers,
        pyramid: &ForcingPyramid,
        z: Option<&Tensor>,
    ) -> Result<Tensor> {
        if buffers.h.len() != self.hier.depth() {
            return Err(Error::dim("memory buffers do not match hierarchy depth"));
        }
        let mut g = Graph::new(&self.store);
        let h: Vec<Var> = buffers.h.iter().map(|t| g.input(t.clone())).collect();
        let zv = z.map(|t| g.input(t.clone()));
        let (y, _) = self.predict_var(&mut g, &h, pyramid, zv)?;
        self.grid_shaped(g.value(y))
    }

    /// Per-level head outputs replicated onto the base grid, each
    /// `[n_lat, n_lon, C]`; their sum is [`FlowModel::predict`].
    pub fn level_heads(
        &self,
        buffers: &MemoryBuffers,
        pyramid: &ForcingPyramid,
        z: Option<&Tensor>,
    ) -> Result<Vec<Tensor>> {
        let mut g = Graph::new(&self.store);
        let h: Vec<Var> = buffers.h.iter().map(|t| g.input(t.clone())).collect();
        let zv = z.map(|t| g.input(t.clone()));
        let (_, heads) = self.predict_var(&mut g, &h, pyramid, zv)?;
        let mut out = Vec::new();
        for (k, head) in heads.iter().enumerate() {
            if let Some(v) = head {
                let up = crate::hier::upsample_to_base(g.value(*v), &self.hier, k)?;
                out.push(self.grid_shaped(&up)?);
            }
        }
        Ok(out)
    }

    /// Increment prediction `[n_lat, n_lon, C]` for one step.
    pub fn predict_increment(
        &self,
        x: &Tensor,
        f: &Tensor,
        latent: LatentInput<'_>,
    ) -> Result<Tensor> {
        let mut g = Graph::new(&self.store);
        let tr = self.forward(&mut g, x, f, latent)?;
        self.grid_shaped(g.value(tr.prediction))
    }

    /// `X^{t+1} = X^t + Y_hat(X^t, F^t)`.
    pub fn step(&self, x: &Tensor, f: &Tensor) -> Result<Tensor> {
        self.step_with(x, f, LatentInput::Mean)
    }

    pub fn step_with(&self, x: &Tensor, f: &Tensor, latent: LatentInput<'_>) -> Result<Tensor> {
        let y = self.predict_increment(x, f, latent)?;
        x.add(&y)
    }

    /// Latent mean `mu(X, F)` as `[n_cells, d_z]`.
    pub fn latent_mean(&self, x: &Tensor, f: &Tensor) -> Result<Option<Tensor>> {
        let mut g = Graph::new(&self.store);
        let fv = g.input(self.grid_features(x, f)?);
        Ok(self
            .latent_mean_var(&mut g, fv)?
            .map(|v| g.value(v).clone()))
    }
}
