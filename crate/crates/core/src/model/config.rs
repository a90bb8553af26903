use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Network roles that can be frozen as a group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Grid2Mesh,
    Up,
    Down,
    Memory,
    /// Physics heads on levels above the base mesh.
    Physics,
    /// The base-level physics head, which maps straight back to grid cells.
    Mesh2Grid,
    LatentMean,
}

impl Role {
    pub const ALL: [Role; 7] = [
        Role::Grid2Mesh,
        Role::Up,
        Role::Down,
        Role::Memory,
        Role::Physics,
        Role::Mesh2Grid,
        Role::LatentMean,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Role::Grid2Mesh => "grid2mesh",
            Role::Up => "up",
            Role::Down => "down",
            Role::Memory => "memory",
            Role::Physics => "physics",
            Role::Mesh2Grid => "mesh2grid",
            Role::LatentMean => "latent_mean",
        }
    }

    /// Parameter-name prefix owned by this role.
    pub fn prefix(self) -> String {
        format!("{}/", self.key())
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.key() == s)
            .ok_or_else(|| Error::config(format!("unknown network role {s:?}")))
    }
}

/// Latent branch settings for the ensemble variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentConfig {
    pub d_z: usize,
    pub sigma: f64,
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self { d_z: 4, sigma: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_lat: usize,
    pub n_lon: usize,
    pub k_levels: usize,
    pub stack_depth: usize,
    pub d_h: usize,
    pub d_e: usize,
    /// Hidden width of every MLP; `None` means `d_h`.
    pub mlp_hidden: Option<usize>,
    pub factor: usize,
    pub channels: usize,
    pub step_hours: f64,
    pub seed: u64,
    pub freeze: BTreeSet<Role>,
    pub coord_features: bool,
    pub forcing_in_encoder: bool,
    pub forcing_in_physics: bool,
    pub latent: Option<LatentConfig>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_lat: 16,
            n_lon: 32,
            k_levels: 3,
            stack_depth: 3,
            d_h: 16,
            d_e: 4,
            mlp_hidden: None,
            factor: 2,
            channels: 2,
            step_hours: 6.0,
            seed: 0,
            freeze: BTreeSet::new(),
            coord_features: true,
            forcing_in_encoder: true,
            forcing_in_physics: true,
            latent: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_levels < 2 {
            return Err(Error::config(format!("K = {} must be >= 2", self.k_levels)));
        }
        if self.stack_depth < 1 {
            return Err(Error::config("S must be >= 1"));
        }
        if self.d_h < 1 || self.channels < 1 {
            return Err(Error::config("d_h and channels must be >= 1"));
        }
        if self.mlp_hidden == Some(0) {
            return Err(Error::config("mlp hidden width must be >= 1"));
        }
        if !(self.step_hours > 0.0) {
            return Err(Error::config("step_hours must be > 0"));
        }
        if let Some(l) = self.latent {
            if l.d_z < 1 || !(l.sigma >= 0.0) {
                return Err(Error::config("latent branch needs d_z >= 1 and sigma >= 0"));
            }
        }
        Ok(())
    }

    pub fn hidden(&self) -> usize {
        self.mlp_hidden.unwrap_or(self.d_h)
    }

    /// Width of the per-cell encoder input: state, forcing, static coordinates.
    pub fn grid_feature_width(&self) -> usize {
        self.channels + 1 + if self.coord_features { 4 } else { 0 }
    }

    pub fn d_z(&self) -> usize {
        self.latent.map_or(0, |l| l.d_z)
    }

    /// Toy instance used by gradient checks: 4x8 grid, K=2, S=1, d_h=2, C=1.
    pub fn toy() -> Self {
        Self {
            n_lat: 4,
            n_lon: 8,
            k_levels: 2,
            stack_depth: 1,
            d_h: 2,
            d_e: 2,
            mlp_hidden: Some(3),
            channels: 1,
            ..Self::default()
        }
    }
}
