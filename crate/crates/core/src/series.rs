use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Autoregressive trajectory. `states[i]` is the forecast for time index
/// `start_index + i + 1`; each state is `[n_lat, n_lon, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSeries {
    pub states: Vec<Tensor>,
    pub start_index: usize,
    pub step_hours: f64,
}

impl ForecastSeries {
    pub fn new(states: Vec<Tensor>, start_index: usize, step_hours: f64) -> Result<Self> {
        if let Some(first) = states.first() {
            if states.iter().any(|s| s.shape() != first.shape()) {
                return Err(Error::dim("forecast states differ in shape"));
            }
        }
        Ok(Self {
            states,
            start_index,
            step_hours,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Valid time of `states[i]` in hours since time index 0.
    pub fn timestamp_hours(&self, i: usize) -> f64 {
        (self.start_index + i + 1) as f64 * self.step_hours
    }

    /// State at lead `lead` (1-based step count).
    pub fn at_lead(&self, lead: usize) -> Option<&Tensor> {
        lead.checked_sub(1).and_then(|i| self.states.get(i))
    }
}
