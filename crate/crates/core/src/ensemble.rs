//! Ensemble forecasting through the latent branch: `Z = mu(X) + sigma * eps`
//! fed to the physics heads, one fresh draw per member and step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{standard_normal, FlowModel, LatentInput};
use crate::nn::Tensor;
use crate::series::ForecastSeries;

/// Seeded noise source for one model's latent branch.
#[derive(Debug, Clone)]
pub struct LatentSampler {
    pub sigma: f64,
    pub d_z: usize,
    pub seed: u64,
}

impl LatentSampler {
    pub fn for_model(model: &FlowModel, seed: u64) -> Result<Self> {
        let l = model.latent.as_ref().ok_or_else(|| {
            Error::config("model has no latent branch; enable the ensemble variant")
        })?;
        Ok(Self {
            sigma: l.sigma,
            d_z: l.d_z,
            seed,
        })
    }

    /// Independent stream for `member`; streams never overlap.
    pub fn member_rng(&self, member: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(member as u64);
        rng
    }
}

/// `n` latent samples `mu(X, F) + sigma * eps_i`, each `[n_cells, d_z]`.
pub fn sample_latent(
    model: &FlowModel,
    sampler: &LatentSampler,
    x: &Tensor,
    f: &Tensor,
    n: usize,
) -> Result<Vec<Tensor>> {
    if n == 0 {
        return Err(Error::config("need at least one latent sample"));
    }
    let mu = model
        .latent_mean(x, f)?
        .ok_or_else(|| Error::config("model has no latent branch"))?;
    (0..n)
        .map(|i| {
            let eps = standard_normal(mu.shape(), &mut sampler.member_rng(i));
            mu.zip_map(&eps, |m, e| m + sampler.sigma * e)
        })
        .collect()
}

/// Mean over members, exact when members agree: `m_0 + sum_i (m_i - m_0) / n`.
pub fn member_mean(members: &[Tensor]) -> Result<Tensor> {
    let first = members
        .first()
        .ok_or_else(|| Error::contract("mean of an empty ensemble"))?;
    let n = members.len() as f64;
    let mut dev = Tensor::zeros(first.shape());
    for m in &members[1..] {
        if m.shape() != first.shape() {
            return Err(Error::dim("ensemble members differ in shape"));
        }
        for ((d, a), b) in dev.data_mut().iter_mut().zip(m.data()).zip(first.data()) {
            *d += a - b;
        }
    }
    first.zip_map(&dev, |a, d| a + d / n)
}

/// One step for every member from a shared state. Member `i` draws its noise
/// from `rngs[i]`.
pub fn ensemble_step(
    model: &FlowModel,
    rngs: &mut [ChaCha8Rng],
    x: &Tensor,
    f: &Tensor,
) -> Result<(Vec<Tensor>, Tensor)> {
    let states = vec![x.clone(); rngs.len()];
    let members = step_members(model, rngs, &states, f)?;
    let mean = member_mean(&members)?;
    Ok((members, mean))
}

fn step_members(
    model: &FlowModel,
    rngs: &mut [ChaCha8Rng],
    states: &[Tensor],
    f: &Tensor,
) -> Result<Vec<Tensor>> {
    if rngs.is_empty() {
        return Err(Error::config("need at least one ensemble member"));
    }
    let d_z = model
        .latent
        .as_ref()
        .ok_or_else(|| Error::config("model has no latent branch"))?
        .d_z;
    states
        .iter()
        .zip(rngs.iter_mut())
        .map(|(x, rng)| {
            let eps = standard_normal(&[model.n_cells(), d_z], rng);
            model.step_with(x, f, LatentInput::Noise(&eps))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleForecast {
    pub members: Vec<ForecastSeries>,
    /// Diagnostic per-step member mean; never fed back into the model.
    pub mean: ForecastSeries,
    pub n_members: usize,
}

impl EnsembleForecast {
    /// Per-cell population standard deviation across members at `lead`.
    pub fn spread(&self, lead: usize) -> Option<Tensor> {
        let mean = self.mean.at_lead(lead)?;
        let mut acc = Tensor::zeros(mean.shape());
        for m in &self.members {
            let s = m.at_lead(lead)?;
            for ((a, v), mu) in acc.data_mut().iter_mut().zip(s.data()).zip(mean.data()) {
                *a += (v - mu) * (v - mu);
            }
        }
        Some(acc.map(|v| (v / self.n_members as f64).sqrt()))
    }
}

/// Each member evolves on its own trajectory with fresh noise every step.
pub fn ensemble_rollout(
    model: &FlowModel,
    sampler: &LatentSampler,
    x0: &Tensor,
    forcing: &dyn Fn(usize) -> Result<Tensor>,
    start_index: usize,
    n_steps: usize,
    n_members: usize,
) -> Result<EnsembleForecast> {
    if n_members == 0 {
        return Err(Error::config("need at least one ensemble member"));
    }
    if model.latent.is_none() {
        return Err(Error::config("model has no latent branch"));
    }
    let mut rngs: Vec<ChaCha8Rng> = (0..n_members).map(|i| sampler.member_rng(i)).collect();
    let mut current = vec![x0.clone(); n_members];
    let mut tracks: Vec<Vec<Tensor>> = vec![Vec::with_capacity(n_steps); n_members];
    let mut means = Vec::with_capacity(n_steps);
    for step in 0..n_steps {
        let f = forcing(start_index + step)?;
        current = step_members(model, &mut rngs, &current, &f)?;
        if current.iter().any(|s| !s.is_finite()) {
            return Err(Error::Rollout { step });
        }
        means.push(member_mean(&current)?);
        for (t, s) in tracks.iter_mut().zip(&current) {
            t.push(s.clone());
        }
    }
    let h = model.config.step_hours;
    Ok(EnsembleForecast {
        members: tracks
            .into_iter()
            .map(|t| ForecastSeries::new(t, start_index, h))
            .collect::<Result<_>>()?,
        mean: ForecastSeries::new(means, start_index, h)?,
        n_members,
    })
}
