//! Advection-diffusion on the periodic-longitude grid driven by a diurnal
//! heating field. Stands in for reanalysis data: the forcing is known
//! analytically at every step and physically drives the target field.
//!
//! Units: distances in grid cells, time in hours. The explicit update is
//!
//! ```text
//! y += dt * (kappa * lap(y) - u0 * d_lon(y) + F(t))
//! ```
//!
//! with a 5-point Laplacian (zero flux across the poles), first-order upwind
//! advection along longitude, and the forcing taken at the start of the step.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gridfile::{
    read_grid_file, split_states, stack_states, write_grid_file, GridFileHeader,
};
use crate::error::{Error, Result};
use crate::hier::LatLonGrid;
use crate::metrics::{znormalize, NormStats};
use crate::nn::Tensor;

/// `A * max(0, cos(lat) * cos(2 pi (t / 24 - lon / 360)))`.
pub fn solar_forcing_at(lat_deg: f64, lon_deg: f64, t_hours: f64, amplitude: f64) -> f64 {
    let phase = 2.0 * std::f64::consts::PI * (t_hours / 24.0 - lon_deg / 360.0);
    amplitude * (lat_deg.to_radians().cos() * phase.cos()).max(0.0)
}

/// Forcing field `[n_lat, n_lon]` at cell centres.
pub fn solar_forcing(t_hours: f64, grid: &LatLonGrid, amplitude: f64) -> Tensor {
    let mut data = Vec::with_capacity(grid.cells());
    for r in 0..grid.n_lat {
        for c in 0..grid.n_lon {
            data.push(solar_forcing_at(
                grid.lat_deg(r),
                grid.lon_deg(c),
                t_hours,
                amplitude,
            ));
        }
    }
    Tensor::new(vec![grid.n_lat, grid.n_lon], data).expect("grid shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.hfg", self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub n_lat: usize,
    pub n_lon: usize,
    pub channels: usize,
    pub step_hours: f64,
    /// State counts per split, consecutive in time: train, then val, then test.
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub kappa: f64,
    pub u0: f64,
    pub amplitude: f64,
    pub seed: u64,
    /// Filled in from the training split by [`generate_synthetic`].
    pub norm: Option<NormStats>,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        Self {
            n_lat: 16,
            n_lon: 32,
            channels: 2,
            step_hours: 6.0,
            n_train: 2001,
            n_val: 100,
            n_test: 300,
            kappa: 0.02,
            u0: 0.03,
            amplitude: 0.01,
            seed: 0,
            norm: None,
        }
    }
}

impl DatasetManifest {
    pub fn n_steps(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }

    /// First global time index of `split`.
    pub fn split_start(&self, split: Split) -> usize {
        match split {
            Split::Train => 0,
            Split::Val => self.n_train,
            Split::Test => self.n_train + self.n_val,
        }
    }

    pub fn split_len(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Val => self.n_val,
            Split::Test => self.n_test,
        }
    }

    /// Explicit-scheme stability number, diffusion summed over both axes plus
    /// the advective Courant number. Must stay below 0.5.
    pub fn cfl_number(&self) -> f64 {
        let dt = self.step_hours;
        2.0 * self.kappa * dt + self.u0.abs() * dt
    }

    pub fn grid(&self) -> Result<LatLonGrid> {
        LatLonGrid::new(self.n_lat, self.n_lon)
    }

    pub fn forcing(&self, t_index: usize) -> Result<Tensor> {
        Ok(solar_forcing(
            t_index as f64 * self.step_hours,
            &self.grid()?,
            self.amplitude,
        ))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_lat = {}", self.n_lat);
        let _ = writeln!(s, "n_lon = {}", self.n_lon);
        let _ = writeln!(s, "channels = {}", self.channels);
        let _ = writeln!(s, "step_hours = {}", self.step_hours);
        let _ = writeln!(s, "n_train = {}", self.n_train);
        let _ = writeln!(s, "n_val = {}", self.n_val);
        let _ = writeln!(s, "n_test = {}", self.n_test);
        let _ = writeln!(s, "kappa = {}", self.kappa);
        let _ = writeln!(s, "u0 = {}", self.u0);
        let _ = writeln!(s, "amplitude = {}", self.amplitude);
        let _ = writeln!(s, "seed = {}", self.seed);
        if let Some(n) = &self.norm {
            for (c, (m, sd)) in n.mean.iter().zip(&n.std).enumerate() {
                // {:?} keeps the shortest round-tripping representation
                let _ = writeln!(s, "mean.{c} = {m:?}");
                let _ = writeln!(s, "std.{c} = {sd:?}");
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv = crate::config::parse_key_values(text)?;
        let mut m = DatasetManifest::default();
        let mut means = Vec::new();
        let mut stds = Vec::new();
        for (k, v) in &kv {
            match k.as_str() {
                "n_lat" => m.n_lat = crate::config::parse_value(k, v)?,
                "n_lon" => m.n_lon = crate::config::parse_value(k, v)?,
                "channels" => m.channels = crate::config::parse_value(k, v)?,
                "step_hours" => m.step_hours = crate::config::parse_value(k, v)?,
                "n_train" => m.n_train = crate::config::parse_value(k, v)?,
                "n_val" => m.n_val = crate::config::parse_value(k, v)?,
                "n_test" => m.n_test = crate::config::parse_value(k, v)?,
                "kappa" => m.kappa = crate::config::parse_value(k, v)?,
                "u0" => m.u0 = crate::config::parse_value(k, v)?,
                "amplitude" => m.amplitude = crate::config::parse_value(k, v)?,
                "seed" => m.seed = crate::config::parse_value(k, v)?,
                other if other.starts_with("mean.") => {
                    means.push(crate::config::parse_value::<f64>(k, v)?)
                }
                other if other.starts_with("std.") => {
                    stds.push(crate::config::parse_value::<f64>(k, v)?)
                }
                other => return Err(Error::config(format!("unknown manifest key {other}"))),
            }
        }
        if !means.is_empty() {
            m.norm = Some(NormStats {
                mean: means,
                std: stds,
            });
        }
        Ok(m)
    }
}

/// Raw (unnormalised) states for every time index plus the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub manifest: DatasetManifest,
    pub states: Vec<Tensor>,
}

fn initial_field(grid: &LatLonGrid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let modes: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.5..1.5),
                rng.random_range(1..4) as f64,
                rng.random_range(1..4) as f64,
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let mut y = Vec::with_capacity(grid.cells());
    for r in 0..grid.n_lat {
        let lat = grid.lat_deg(r).to_radians();
        for c in 0..grid.n_lon {
            let lon = grid.lon_deg(c).to_radians();
            let v: f64 = modes
                .iter()
                .map(|&(a, m, n, ph)| a * (m * lon + ph).sin() * (n * lat).cos())
                .sum();
            y.push(v + 0.1 * rng.random_range(-1.0..1.0));
        }
    }
    y
}

/// One explicit step of the advection-diffusion-forcing equation.
pub fn pde_step(
    y: &[f64],
    forcing: &[f64],
    n_lat: usize,
    n_lon: usize,
    kappa: f64,
    u0: f64,
    dt: f64,
) -> Vec<f64> {
    let at = |r: usize, c: usize| y[r * n_lon + c];
    let mut out = Vec::with_capacity(y.len());
    for r in 0..n_lat {
        for c in 0..n_lon {
            let me = at(r, c);
            let west = at(r, (c + n_lon - 1) % n_lon);
            let east = at(r, (c + 1) % n_lon);
            let south = if r > 0 { at(r - 1, c) } else { me };
            let north = if r + 1 < n_lat { at(r + 1, c) } else { me };
            let lap = west + east + south + north - 4.0 * me;
            let adv = if u0 >= 0.0 { me - west } else { east - me };
            out.push(me + dt * (kappa * lap - u0 * adv + forcing[r * n_lon + c]));
        }
    }
    out
}

/// Assemble the `channels` output state from the current and previous field.
/// Channel order: field, meridional gradient, lagged field, zonal gradient
/// magnitude. The signed zonal gradient sums to zero around every latitude
/// ring, so its spatial mean carries no signal; the magnitude does.
fn to_channels(y: &[f64], prev: &[f64], n_lat: usize, n_lon: usize, channels: usize) -> Tensor {
    let at = |r: usize, c: usize| y[r * n_lon + c];
    let mut data = Vec::with_capacity(y.len() * channels);
    for r in 0..n_lat {
        for c in 0..n_lon {
            let i = r * n_lon + c;
            let feats = [
                y[i],
                0.5 * (at((r + 1).min(n_lat - 1), c) - at(r.saturating_sub(1), c)),
                prev[i],
                0.5 * (at(r, (c + 1) % n_lon) - at(r, (c + n_lon - 1) % n_lon)).abs(),
            ];
            data.extend_from_slice(&feats[..channels]);
        }
    }
    Tensor::new(vec![n_lat, n_lon, channels], data).expect("state shape")
}

pub fn generate_synthetic(manifest: &DatasetManifest) -> Result<SyntheticDataset> {
    let grid = manifest.grid()?;
    if !(1..=4).contains(&manifest.channels) {
        return Err(Error::config(format!(
            "channels = {} must be between 1 and 4",
            manifest.channels
        )));
    }
    if !(manifest.step_hours > 0.0) || manifest.kappa < 0.0 || manifest.amplitude < 0.0 {
        return Err(Error::config(
            "step_hours > 0, kappa >= 0 and amplitude >= 0 required",
        ));
    }
    let cfl = manifest.cfl_number();
    if cfl >= 0.5 {
        return Err(Error::config(format!(
            "CFL number {cfl:.4} violates the explicit-scheme bound 0.5"
        )));
    }
    if manifest.n_train < 2 {
        return Err(Error::config("training split needs at least 2 states"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(manifest.seed);
    let (n_lat, n_lon) = (grid.n_lat, grid.n_lon);
    let mut y = initial_field(&grid, &mut rng);
    let mut prev = y.clone();
    let mut states = Vec::with_capacity(manifest.n_steps());
    for t in 0..manifest.n_steps() {
        states.push(to_channels(&y, &prev, n_lat, n_lon, manifest.channels));
        let f = manifest.forcing(t)?;
        let next = pde_step(
            &y,
            f.data(),
            n_lat,
            n_lon,
            manifest.kappa,
            manifest.u0,
            manifest.step_hours,
        );
        prev = std::mem::replace(&mut y, next);
    }
    let (_, stats) = znormalize(&states[..manifest.n_train])?;
    let mut manifest = manifest.clone();
    manifest.norm = Some(stats);
    Ok(SyntheticDataset { manifest, states })
}

impl SyntheticDataset {
    pub fn split(&self, split: Split) -> &[Tensor] {
        let s = self.manifest.split_start(split);
        &self.states[s..s + self.manifest.split_len(split)]
    }

    pub fn norm(&self) -> &NormStats {
        self.manifest.norm.as_ref().expect("set by the generator")
    }

    /// Normalised states and forcing of one split.
    pub fn sequence(&self, split: Split) -> Result<crate::model::Sequence> {
        let norm = self.norm();
        let start = self.manifest.split_start(split);
        let states = self
            .split(split)
            .iter()
            .map(|s| norm.apply(s))
            .collect::<Result<Vec<_>>>()?;
        let forcings = (0..states.len())
            .map(|i| self.manifest.forcing(start + i))
            .collect::<Result<Vec<_>>>()?;
        crate::model::Sequence::new(states, forcings, start)
    }

    /// Write `train.hfg`, `val.hfg`, `test.hfg` and `manifest.txt` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let m = &self.manifest;
        for split in Split::ALL {
            let states = self.split(split);
            let header = GridFileHeader::new(
                m.n_lat,
                m.n_lon,
                m.channels,
                states.len(),
                m.step_hours,
                m.split_start(split),
            );
            let data = stack_states(states, m.n_lat, m.n_lon, m.channels)?;
            write_grid_file(dir.join(split.file_name()), &header, &data)?;
        }
        let path = dir.join("manifest.txt");
        fs::write(&path, m.to_text()).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest = DatasetManifest::from_text(&text)?;
        let mut states = Vec::with_capacity(manifest.n_steps());
        for split in Split::ALL {
            let (h, data) = read_grid_file(dir.join(split.file_name()))?;
            if h.start_index as usize != manifest.split_start(split)
                || h.n_steps as usize != manifest.split_len(split)
            {
                return Err(Error::Format {
                    field: "start_index",
                    detail: format!("{} split does not match the manifest", split.name()),
                });
            }
            states.extend(split_states(&h, &data));
        }
        if manifest.norm.is_none() {
            return Err(Error::Format {
                field: "manifest",
                detail: "missing normalisation statistics".into(),
            });
        }
        Ok(Self { manifest, states })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetManifest {
        DatasetManifest {
            n_lat: 4,
            n_lon: 8,
            channels: 1,
            n_train: 10,
            n_val: 3,
            n_test: 3,
            ..DatasetManifest::default()
        }
    }

    fn spatial_variance(t: &Tensor) -> f64 {
        let n = t.len() as f64;
        let m = t.sum() / n;
        t.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
    }

    #[test]
    fn forcing_peaks_at_subsolar_noon_and_vanishes_at_midnight() {
        assert!((solar_forcing_at(0.0, 90.0, 6.0, 2.5) - 2.5).abs() < 1e-12);
        assert_eq!(solar_forcing_at(30.0, 270.0, 6.0, 2.5), 0.0);
        let g = LatLonGrid::new(4, 8).unwrap();
        assert!(solar_forcing(5.0, &g, 1.0).max_abs_diff(&solar_forcing(29.0, &g, 1.0)) < 1e-12);
        assert!(solar_forcing(5.0, &g, 1.0).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn no_dynamics_is_constant_in_time() {
        let m = DatasetManifest {
            kappa: 0.0,
            u0: 0.0,
            amplitude: 0.0,
            ..small()
        };
        let d = generate_synthetic(&m).unwrap();
        for s in &d.states {
            assert_eq!(s, &d.states[0]);
        }
    }

    #[test]
    fn diffusion_strictly_reduces_variance() {
        let m = DatasetManifest {
            u0: 0.0,
            amplitude: 0.0,
            ..small()
        };
        let d = generate_synthetic(&m).unwrap();
        let v: Vec<f64> = d.states.iter().map(spatial_variance).collect();
        assert!(v.windows(2).all(|w| w[1] < w[0]), "{v:?}");
    }

    #[test]
    fn forcing_raises_mean_by_mean_forcing() {
        let m = DatasetManifest {
            kappa: 0.0,
            u0: 0.0,
            amplitude: 0.5,
            ..small()
        };
        let d = generate_synthetic(&m).unwrap();
        let n = (m.n_lat * m.n_lon) as f64;
        for t in 0..d.states.len() - 1 {
            let gain = (d.states[t + 1].sum() - d.states[t].sum()) / n;
            let expect = m.forcing(t).unwrap().sum() / n * m.step_hours;
            assert!((gain - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn cfl_violation_reports_number() {
        let m = DatasetManifest {
            kappa: 0.05,
            u0: 0.0,
            ..small()
        };
        let err = generate_synthetic(&m).unwrap_err();
        assert!(err.to_string().contains("0.6000"), "{err}");
    }

    #[test]
    fn manifest_text_round_trip() {
        let d = generate_synthetic(&small()).unwrap();
        let back = DatasetManifest::from_text(&d.manifest.to_text()).unwrap();
        assert_eq!(back, d.manifest);
    }
}
