use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::flow::{FlowModel, LatentInput};
use crate::error::{Error, Result};
use crate::nn::{optimizer_step, Gradients, Graph, Tensor, Var};
use crate::series::ForecastSeries;

/// Consecutive states with the forcing valid at each state's time.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub states: Vec<Tensor>,
    pub forcings: Vec<Tensor>,
    /// Global time index of `states[0]`.
    pub start_index: usize,
}

impl Sequence {
    pub fn new(states: Vec<Tensor>, forcings: Vec<Tensor>, start_index: usize) -> Result<Self> {
        if states.len() != forcings.len() {
            return Err(Error::dim(format!(
                "{} states but {} forcing fields",
                states.len(),
                forcings.len()
            )));
        }
        Ok(Self {
            states,
            forcings,
            start_index,
        })
    }

    /// Number of `(X^t, F^t, X^{t+1})` training pairs.
    pub fn pairs(&self) -> usize {
        self.states.len().saturating_sub(1)
    }
}

/// Mean squared error over every cell and channel.
pub fn loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::dim(format!(
            "loss shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::contract("loss of empty tensors"));
    }
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(s / pred.len() as f64)
}

fn record_loss(g: &mut Graph<'_>, pred: Var, target: &Tensor) -> Result<Var> {
    let t = g.input(target.clone().reshape(g.shape(pred).to_vec())?);
    let d = g.sub(pred, t)?;
    let sq = g.square(d)?;
    g.mean(sq)
}

/// One-step loss against `x_next` and the gradients of every parameter.
pub fn loss_and_grads(
    model: &FlowModel,
    x: &Tensor,
    f: &Tensor,
    x_next: &Tensor,
    latent: LatentInput<'_>,
) -> Result<(f64, Gradients)> {
    let target = x_next.sub(x)?;
    let mut g = Graph::new(&model.store);
    let tr = model.forward(&mut g, x, f, latent)?;
    let l = record_loss(&mut g, tr.prediction, &target)?;
    let value = g.value(l).data()[0];
    let grads = g.backward(l)?;
    Ok((value, grads))
}

/// One-step loss without gradients.
pub fn step_loss(model: &FlowModel, x: &Tensor, f: &Tensor, x_next: &Tensor) -> Result<f64> {
    let y = model.predict_increment(x, f, LatentInput::Mean)?;
    loss(&y, &x_next.sub(x)?)
}

pub fn standard_normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// A single pass over `data` in temporal order with one SGD step per pair.
/// Ensemble models draw one latent sample per pair from a stream seeded by
/// `noise_seed`. Returns the per-pair loss before each update.
pub fn train_epoch(
    model: &mut FlowModel,
    data: &Sequence,
    lr: f64,
    noise_seed: u64,
) -> Result<Vec<f64>> {
    if data.pairs() == 0 {
        return Err(Error::config(
            "training set has no (state, next state) pairs",
        ));
    }
    if !(lr > 0.0) {
        return Err(Error::config(format!("learning rate {lr} must be > 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut curve = Vec::with_capacity(data.pairs());
    for t in 0..data.pairs() {
        let noise = model
            .latent
            .as_ref()
            .map(|l| standard_normal(&[model.n_cells(), l.d_z], &mut rng));
        let latent = match &noise {
            Some(eps) => LatentInput::Noise(eps),
            None => LatentInput::Mean,
        };
        let (l, grads) = loss_and_grads(
            model,
            &data.states[t],
            &data.forcings[t],
            &data.states[t + 1],
            latent,
        )?;
        if !l.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at training pair {t}"
            )));
        }
        model.store.accumulate(&grads);
        optimizer_step(&mut model.store, lr)?;
        curve.push(l);
    }
    Ok(curve)
}

/// Autoregressive rollout from `x0` at time index `start_index`.
/// `forcing(t)` returns the forcing valid at global time index `t`.
pub fn rollout(
    model: &FlowModel,
    x0: &Tensor,
    forcing: &dyn Fn(usize) -> Result<Tensor>,
    start_index: usize,
    n_steps: usize,
) -> Result<ForecastSeries> {
    let mut states = Vec::with_capacity(n_steps);
    let mut x = x0.clone();
    for i in 0..n_steps {
        let f = forcing(start_index + i)?;
        x = model.step(&x, &f)?;
        if !x.is_finite() {
            return Err(Error::Rollout { step: i });
        }
        states.push(x.clone());
    }
    ForecastSeries::new(states, start_index, model.config.step_hours)
}
