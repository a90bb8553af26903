//! Plain-text run configuration: `key = value` lines, `#` starts a comment.
//!
//! One file drives data generation, model construction and training.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::model::{LatentConfig, ModelConfig, Role};
use crate::nn::DEFAULT_LR;

/// Split text into trimmed `(key, value)` pairs, keeping file order.
/// Duplicate keys are rejected.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::config(format!("line {}: empty key", n + 1)));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(Error::config(format!("line {}: duplicate key {k}", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("bad value {value:?} for {key}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: DatasetManifest,
    pub lr: f64,
    /// Ensemble size used by rollouts when the latent branch is enabled.
    pub members: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            data: DatasetManifest::default(),
            lr: DEFAULT_LR,
            members: 8,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut ensemble = false;
        let mut latent = LatentConfig::default();
        for (k, v) in parse_key_values(text)? {
            let (k, v) = (k.as_str(), v.as_str());
            match k {
                "n_lat" => c.model.n_lat = parse_value(k, v)?,
                "n_lon" => c.model.n_lon = parse_value(k, v)?,
                "K" => c.model.k_levels = parse_value(k, v)?,
                "S" => c.model.stack_depth = parse_value(k, v)?,
                "d_h" => c.model.d_h = parse_value(k, v)?,
                "d_e" => c.model.d_e = parse_value(k, v)?,
                "hidden" => c.model.mlp_hidden = Some(parse_value(k, v)?),
                "factor" => c.model.factor = parse_value(k, v)?,
                "channels" => c.model.channels = parse_value(k, v)?,
                "step_hours" => c.model.step_hours = parse_value(k, v)?,
                "lr" => c.lr = parse_value(k, v)?,
                "seed" => c.model.seed = parse_value(k, v)?,
                "data_seed" => c.data.seed = parse_value(k, v)?,
                "coord_features" => c.model.coord_features = parse_value(k, v)?,
                "forcing_in_encoder" => c.model.forcing_in_encoder = parse_value(k, v)?,
                "forcing_in_physics" => c.model.forcing_in_physics = parse_value(k, v)?,
                "kappa" => c.data.kappa = parse_value(k, v)?,
                "u0" => c.data.u0 = parse_value(k, v)?,
                "amplitude" => c.data.amplitude = parse_value(k, v)?,
                "n_train" => c.data.n_train = parse_value(k, v)?,
                "n_val" => c.data.n_val = parse_value(k, v)?,
                "n_test" => c.data.n_test = parse_value(k, v)?,
                "ensemble" => ensemble = parse_value(k, v)?,
                "members" => c.members = parse_value(k, v)?,
                "sigma" => latent.sigma = parse_value(k, v)?,
                "d_z" => latent.d_z = parse_value(k, v)?,
                _ => match k.strip_prefix("freeze.") {
                    Some(role) => {
                        let role: Role = role.parse()?;
                        if parse_value::<bool>(k, v)? {
                            c.model.freeze.insert(role);
                        } else {
                            c.model.freeze.remove(&role);
                        }
                    }
                    None => return Err(Error::config(format!("unknown config key {k}"))),
                },
            }
        }
        if ensemble {
            c.model.latent = Some(latent);
        }
        c.data.n_lat = c.model.n_lat;
        c.data.n_lon = c.model.n_lon;
        c.data.channels = c.model.channels;
        c.data.step_hours = c.model.step_hours;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr > 0.0) {
            return Err(Error::config(format!("lr = {} must be > 0", self.lr)));
        }
        if self.members < 1 {
            return Err(Error::config("members must be >= 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_blank_lines_and_freeze_keys() {
        let c = RunConfig::parse(
            "# desk run\nK = 4\nS=2 # inline\n\nfreeze.up = true\nfreeze.down = false\nlr = 0.01\n",
        )
        .unwrap();
        assert_eq!(c.model.k_levels, 4);
        assert_eq!(c.model.stack_depth, 2);
        assert_eq!(c.lr, 0.01);
        assert_eq!(
            c.model.freeze.iter().copied().collect::<Vec<_>>(),
            vec![Role::Up]
        );
    }

    #[test]
    fn grid_keys_propagate_to_dataset() {
        let c = RunConfig::parse("n_lat = 4\nn_lon = 8\nchannels = 1\n").unwrap();
        assert_eq!((c.data.n_lat, c.data.n_lon, c.data.channels), (4, 8, 1));
    }

    #[test]
    fn ensemble_flag_enables_latent() {
        let c = RunConfig::parse("ensemble = true\nsigma = 0.25\n").unwrap();
        assert_eq!(
            c.model.latent,
            Some(LatentConfig {
                d_z: 4,
                sigma: 0.25
            })
        );
        assert_eq!(RunConfig::parse("sigma = 0.25").unwrap().model.latent, None);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::parse("K = 1").is_err());
        assert!(RunConfig::parse("K = x").is_err());
        assert!(RunConfig::parse("bogus = 1").is_err());
        assert!(RunConfig::parse("freeze.nothing = true").is_err());
        assert!(RunConfig::parse("K = 3\nK = 4").is_err());
        assert!(RunConfig::parse("just words").is_err());
        assert!(RunConfig::parse("lr = 0").is_err());
    }
}
