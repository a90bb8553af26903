//! Periodic latitude-longitude grid, the regular multi-level mesh hierarchy
//! built on it, and the max-pooled forcing pyramid.
//!
//! Levels are indexed from 0 (finest, one node per grid cell) to `K - 1`
//! (coarsest). Level `k + 1` merges `factor x factor` blocks of level `k`.
//! Longitude wraps around; latitude does not.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatLonGrid {
    pub n_lat: usize,
    pub n_lon: usize,
    pub spacing_deg: f64,
}

impl LatLonGrid {
    pub fn new(n_lat: usize, n_lon: usize) -> Result<Self> {
        if n_lat < 2 || n_lon < 2 {
            return Err(Error::config(format!(
                "grid {n_lat}x{n_lon} needs at least 2 rows and columns"
            )));
        }
        // 180 / n_lat == 360 / n_lon
        if 2 * n_lat != n_lon {
            return Err(Error::config(format!(
                "latitude spacing 180/{n_lat} differs from longitude spacing 360/{n_lon}"
            )));
        }
        Ok(Self {
            n_lat,
            n_lon,
            spacing_deg: 360.0 / n_lon as f64,
        })
    }

    pub fn cells(&self) -> usize {
        self.n_lat * self.n_lon
    }

    /// Latitude of the centre of row `r` (row 0 is the southernmost).
    pub fn lat_deg(&self, r: usize) -> f64 {
        -90.0 + (r as f64 + 0.5) * self.spacing_deg
    }

    /// Longitude of the centre of column `c` in `[0, 360)`.
    pub fn lon_deg(&self, c: usize) -> f64 {
        (c as f64 + 0.5) * self.spacing_deg
    }
}

pub fn build_grid(n_lat: usize, n_lon: usize) -> Result<LatLonGrid> {
    LatLonGrid::new(n_lat, n_lon)
}

/// Directed edges between two node sets, stored as parallel index arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeIndex {
    pub senders: Arc<[usize]>,
    pub receivers: Arc<[usize]>,
    pub n_senders: usize,
    pub n_receivers: usize,
}

impl EdgeIndex {
    pub fn new(
        senders: Vec<usize>,
        receivers: Vec<usize>,
        n_senders: usize,
        n_receivers: usize,
    ) -> Result<Self> {
        if senders.len() != receivers.len() {
            return Err(Error::Edge(format!(
                "{} senders but {} receivers",
                senders.len(),
                receivers.len()
            )));
        }
        if let Some(&s) = senders.iter().find(|&&s| s >= n_senders) {
            return Err(Error::Edge(format!("sender {s} out of range {n_senders}")));
        }
        if let Some(&r) = receivers.iter().find(|&&r| r >= n_receivers) {
            return Err(Error::Edge(format!(
                "receiver {r} out of range {n_receivers}"
            )));
        }
        Ok(Self {
            senders: senders.into(),
            receivers: receivers.into(),
            n_senders,
            n_receivers,
        })
    }

    pub fn empty(n_senders: usize, n_receivers: usize) -> Self {
        Self::new(Vec::new(), Vec::new(), n_senders, n_receivers).expect("empty edge set")
    }

    pub fn len(&self) -> usize {
        self.senders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.senders.is_empty()
    }

    pub fn in_degree(&self) -> Vec<usize> {
        let mut d = vec![0; self.n_receivers];
        for &r in self.receivers.iter() {
            d[r] += 1;
        }
        d
    }

    pub fn out_degree(&self) -> Vec<usize> {
        let mut d = vec![0; self.n_senders];
        for &s in self.senders.iter() {
            d[s] += 1;
        }
        d
    }

    pub fn contains(&self, s: usize, r: usize) -> bool {
        self.senders
            .iter()
            .zip(self.receivers.iter())
            .any(|(&a, &b)| a == s && b == r)
    }
}

#[derive(Debug, Clone)]
pub struct MeshLevel {
    pub level: usize,
    pub n_lat: usize,
    pub n_lon: usize,
    /// `(lat, lon)` degrees of each node centre, row-major.
    pub node_coords: Vec<(f64, f64)>,
    /// Symmetric 4-neighbourhood with longitude wrap.
    pub intra_edges: EdgeIndex,
}

impl MeshLevel {
    pub fn n_nodes(&self) -> usize {
        self.n_lat * self.n_lon
    }

    pub fn node(&self, r: usize, c: usize) -> usize {
        r * self.n_lon + c
    }
}

#[derive(Debug, Clone)]
pub struct HierGraph {
    pub grid: LatLonGrid,
    pub factor: usize,
    pub levels: Vec<MeshLevel>,
    /// `up_edges[k]`: level `k` -> level `k + 1`.
    pub up_edges: Vec<EdgeIndex>,
    /// `down_edges[k]`: level `k + 1` -> level `k`.
    pub down_edges: Vec<EdgeIndex>,
    pub grid2mesh: EdgeIndex,
    pub mesh2grid: EdgeIndex,
    /// `parents[k][v]`: the level-`k + 1` node containing level-`k` node `v`.
    parents: Vec<Arc<[usize]>>,
    /// `ancestors[k][cell]`: the level-`k` node containing base cell `cell`.
    ancestors: Vec<Arc<[usize]>>,
}

impl HierGraph {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn n_nodes(&self, level: usize) -> usize {
        self.levels[level].n_nodes()
    }

    pub fn parents(&self, level: usize) -> &Arc<[usize]> {
        &self.parents[level]
    }

    pub fn ancestors(&self, level: usize) -> Result<&Arc<[usize]>> {
        self.ancestors.get(level).ok_or_else(|| {
            Error::Index(format!(
                "level {level} out of range for a {}-level hierarchy",
                self.depth()
            ))
        })
    }
}

fn intra_level_edges(n_lat: usize, n_lon: usize) -> EdgeIndex {
    let idx = |r: usize, c: usize| r * n_lon + c;
    let mut pairs = Vec::new();
    for r in 0..n_lat {
        for c in 0..n_lon {
            let me = idx(r, c);
            let mut nbrs = Vec::with_capacity(4);
            if n_lon > 1 {
                nbrs.push(idx(r, (c + n_lon - 1) % n_lon));
                nbrs.push(idx(r, (c + 1) % n_lon));
            }
            if r > 0 {
                nbrs.push(idx(r - 1, c));
            }
            if r + 1 < n_lat {
                nbrs.push(idx(r + 1, c));
            }
            nbrs.sort_unstable();
            nbrs.dedup();
            for n in nbrs {
                if n != me {
                    pairs.push((n, me));
                }
            }
        }
    }
    let n = n_lat * n_lon;
    let (s, r): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    EdgeIndex::new(s, r, n, n).expect("in-range by construction")
}

/// Build `k_levels` regular levels coarsened by `factor` per level.
pub fn build_hierarchy(grid: &LatLonGrid, k_levels: usize, factor: usize) -> Result<HierGraph> {
    if k_levels < 2 {
        return Err(Error::config(format!(
            "a hierarchy needs at least 2 levels, got {k_levels}"
        )));
    }
    if factor < 2 {
        return Err(Error::config(format!(
            "coarsening factor {factor} must be >= 2"
        )));
    }
    let span = factor
        .checked_pow(k_levels as u32 - 1)
        .ok_or_else(|| Error::config("factor^(K-1) overflows"))?;
    if !grid.n_lat.is_multiple_of(span) || !grid.n_lon.is_multiple_of(span) {
        return Err(Error::config(format!(
            "grid {}x{} is not divisible by factor^(K-1) = {span}",
            grid.n_lat, grid.n_lon
        )));
    }

    let mut levels = Vec::with_capacity(k_levels);
    for k in 0..k_levels {
        let s = factor.pow(k as u32);
        let (n_lat, n_lon) = (grid.n_lat / s, grid.n_lon / s);
        let spacing = grid.spacing_deg * s as f64;
        let mut node_coords = Vec::with_capacity(n_lat * n_lon);
        for r in 0..n_lat {
            for c in 0..n_lon {
                node_coords.push((
                    -90.0 + (r as f64 + 0.5) * spacing,
                    (c as f64 + 0.5) * spacing,
                ));
            }
        }
        levels.push(MeshLevel {
            level: k,
            n_lat,
            n_lon,
            node_coords,
            intra_edges: intra_level_edges(n_lat, n_lon),
        });
    }

    let mut parents: Vec<Arc<[usize]>> = Vec::with_capacity(k_levels - 1);
    let mut up_edges = Vec::with_capacity(k_levels - 1);
    let mut down_edges = Vec::with_capacity(k_levels - 1);
    for k in 0..k_levels - 1 {
        let (fine, coarse) = (&levels[k], &levels[k + 1]);
        let parent: Vec<usize> = (0..fine.n_nodes())
            .map(|v| {
                let (r, c) = (v / fine.n_lon, v % fine.n_lon);
                coarse.node(r / factor, c / factor)
            })
            .collect();
        let fine_ids: Vec<usize> = (0..fine.n_nodes()).collect();
        up_edges.push(EdgeIndex::new(
            fine_ids.clone(),
            parent.clone(),
            fine.n_nodes(),
            coarse.n_nodes(),
        )?);
        down_edges.push(EdgeIndex::new(
            parent.clone(),
            fine_ids,
            coarse.n_nodes(),
            fine.n_nodes(),
        )?);
        parents.push(parent.into());
    }

    let base: Vec<usize> = (0..grid.cells()).collect();
    let mut ancestors: Vec<Arc<[usize]>> = vec![base.clone().into()];
    for k in 0..k_levels - 1 {
        let prev = &ancestors[k];
        let next: Vec<usize> = prev.iter().map(|&v| parents[k][v]).collect();
        ancestors.push(next.into());
    }

    let n = grid.cells();
    Ok(HierGraph {
        grid: *grid,
        factor,
        levels,
        up_edges,
        down_edges,
        grid2mesh: EdgeIndex::new(base.clone(), base.clone(), n, n)?,
        mesh2grid: EdgeIndex::new(base.clone(), base, n, n)?,
        parents,
        ancestors,
    })
}

/// Forcing field at every level of the hierarchy; `fields[0]` is the input.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingPyramid {
    pub fields: Vec<Tensor>,
}

fn pool_once(field: &Tensor, factor: usize) -> Tensor {
    let (n_lat, n_lon) = (field.shape()[0], field.shape()[1]);
    let (ol, oc) = (n_lat / factor, n_lon / factor);
    let mut out = vec![f64::NEG_INFINITY; ol * oc];
    for r in 0..n_lat {
        for c in 0..n_lon {
            let o = (r / factor) * oc + c / factor;
            out[o] = out[o].max(field.data()[r * n_lon + c]);
        }
    }
    Tensor::new(vec![ol, oc], out).expect("pooled shape")
}

/// Repeated `factor x factor` max pooling of a `[n_lat, n_lon]` field.
pub fn maxpool_forcing(field: &Tensor, k_levels: usize, factor: usize) -> Result<ForcingPyramid> {
    if field.shape().len() != 2 {
        return Err(Error::dim(format!(
            "forcing must be [n_lat, n_lon], got {:?}",
            field.shape()
        )));
    }
    if k_levels < 1 || factor < 1 {
        return Err(Error::config("pyramid needs K >= 1 and factor >= 1"));
    }
    let span = factor.pow(k_levels.saturating_sub(1) as u32);
    let (n_lat, n_lon) = (field.shape()[0], field.shape()[1]);
    if n_lat % span != 0 || n_lon % span != 0 {
        return Err(Error::dim(format!(
            "forcing {n_lat}x{n_lon} not divisible by factor^(K-1) = {span}"
        )));
    }
    let mut fields = vec![field.clone()];
    for _ in 1..k_levels {
        let next = pool_once(fields.last().unwrap(), factor);
        fields.push(next);
    }
    Ok(ForcingPyramid { fields })
}

impl ForcingPyramid {
    /// Pool `field` to match `hier`, checking it is on the base grid.
    pub fn for_hierarchy(field: &Tensor, hier: &HierGraph) -> Result<Self> {
        if field.shape() != [hier.grid.n_lat, hier.grid.n_lon] {
            return Err(Error::dim(format!(
                "forcing shape {:?} does not match grid {}x{}",
                field.shape(),
                hier.grid.n_lat,
                hier.grid.n_lon
            )));
        }
        maxpool_forcing(field, hier.depth(), hier.factor)
    }
}

/// Replicate a level-`level` field onto the base grid (nearest parent).
///
/// Accepts `[n_lat_k, n_lon_k]`, `[n_lat_k, n_lon_k, ch]` or `[n_nodes_k, ch]`
/// and returns the matching base-grid layout.
pub fn upsample_to_base(field: &Tensor, hier: &HierGraph, level: usize) -> Result<Tensor> {
    let anc = hier.ancestors(level)?;
    let lv = &hier.levels[level];
    let shape = field.shape();
    let (ch, out_shape) = match shape {
        [a, b] if *a == lv.n_lat && *b == lv.n_lon => (1, vec![hier.grid.n_lat, hier.grid.n_lon]),
        [a, b, c] if *a == lv.n_lat && *b == lv.n_lon => {
            (*c, vec![hier.grid.n_lat, hier.grid.n_lon, *c])
        }
        [a, c] if *a == lv.n_nodes() => (*c, vec![hier.grid.cells(), *c]),
        _ => {
            return Err(Error::dim(format!(
                "field {shape:?} does not match level {level} ({}x{})",
                lv.n_lat, lv.n_lon
            )))
        }
    };
    let mut data = Vec::with_capacity(anc.len() * ch);
    for &a in anc.iter() {
        data.extend_from_slice(&field.data()[a * ch..(a + 1) * ch]);
    }
    Tensor::new(out_shape, data)
}
