use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

/// Layer widths from input to output. The activation is applied after every
/// layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub zero_init_last: bool,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation, zero_init_last: bool) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::config(format!(
                "mlp widths {widths:?} need at least two positive entries"
            )));
        }
        Ok(Self {
            widths,
            activation,
            zero_init_last,
        })
    }

    /// `input -> hidden -> hidden -> output` with relu.
    pub fn two_hidden(
        input: usize,
        hidden: usize,
        output: usize,
        zero_init_last: bool,
    ) -> Result<Self> {
        Self::new(
            vec![input, hidden, hidden, output],
            Activation::Relu,
            zero_init_last,
        )
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub spec: MlpSpec,
    /// `(weight [in, out], bias [out])` per layer.
    pub layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    pub fn build(
        store: &mut ParamStore,
        prefix: &str,
        spec: MlpSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let n = spec.widths.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for (i, w) in spec.widths.windows(2).enumerate() {
            let weight = if i + 1 == n && spec.zero_init_last {
                store.add(format!("{prefix}/w{i}"), Tensor::zeros(&[w[0], w[1]]))?
            } else {
                store.add_glorot(format!("{prefix}/w{i}"), w[0], w[1], rng)?
            };
            let bias = store.add(format!("{prefix}/b{i}"), Tensor::zeros(&[w[1]]))?;
            layers.push((weight, bias));
        }
        Ok(Self { spec, layers })
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    pub fn last_layer(&self) -> (ParamId, ParamId) {
        *self.layers.last().expect("at least one layer")
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let in_w = self.spec.input_width();
        if g.shape(x).last().copied() != Some(in_w) {
            return Err(Error::dim(format!(
                "layer 0 expects {in_w} input columns, got shape {:?}",
                g.shape(x)
            )));
        }
        let n = self.layers.len();
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let (wi, wo) = (self.spec.widths[i], self.spec.widths[i + 1]);
            let ws = g.store().get(w).value.shape();
            if ws != [wi, wo] || g.store().get(b).value.len() != wo {
                return Err(Error::dim(format!(
                    "layer {i} parameters have shape {ws:?}, spec wants [{wi}, {wo}]"
                )));
            }
            let wv = g.param(w);
            let bv = g.param(b);
            let z = g.matmul(h, wv)?;
            h = g.add_row(z, bv)?;
            if i + 1 < n {
                h = match self.spec.activation {
                    Activation::Relu => g.relu(h)?,
                    Activation::Tanh => g.tanh(h)?,
                    Activation::Linear => h,
                };
            }
        }
        Ok(h)
    }
}

/// Evaluate an MLP on a plain tensor without keeping the tape.
pub fn mlp_forward(x: &Tensor, mlp: &Mlp, store: &ParamStore) -> Result<Tensor> {
    let mut g = Graph::new(store);
    let xv = g.input(x.clone());
    let y = mlp.forward(&mut g, xv)?;
    Ok(g.value(y).clone())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn identity_layer_passes_input() {
        let mut store = ParamStore::new();
        let spec = MlpSpec::new(vec![2, 2], Activation::Linear, false).unwrap();
        let mlp = Mlp::build(&mut store, "m", spec, &mut rng()).unwrap();
        store.get_mut(mlp.layers[0].0).value =
            Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(mlp_forward(&x, &mlp, &store).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_input_zero_bias_relu_is_zero() {
        let mut store = ParamStore::new();
        let spec = MlpSpec::two_hidden(2, 5, 3, false).unwrap();
        let mlp = Mlp::build(&mut store, "m", spec, &mut rng()).unwrap();
        let y = mlp_forward(&Tensor::zeros(&[1, 2]), &mlp, &store).unwrap();
        assert_eq!(y.shape(), &[1, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_affine_layer() {
        let mut store = ParamStore::new();
        let spec = MlpSpec::new(vec![1, 1], Activation::Linear, false).unwrap();
        let mlp = Mlp::build(&mut store, "m", spec, &mut rng()).unwrap();
        store.get_mut(mlp.layers[0].0).value = Tensor::new(vec![1, 1], vec![2.0]).unwrap();
        store.get_mut(mlp.layers[0].1).value = Tensor::new(vec![1], vec![1.0]).unwrap();
        let y = mlp_forward(&Tensor::new(vec![1, 1], vec![1.0]).unwrap(), &mlp, &store).unwrap();
        assert_eq!(y.data(), &[3.0]);
    }

    #[test]
    fn wrong_input_width_names_layer() {
        let mut store = ParamStore::new();
        let spec = MlpSpec::two_hidden(3, 4, 1, false).unwrap();
        let mlp = Mlp::build(&mut store, "m", spec, &mut rng()).unwrap();
        let err = mlp_forward(&Tensor::zeros(&[2, 2]), &mlp, &store).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }

    #[test]
    fn mismatched_parameter_shape_names_layer() {
        let mut store = ParamStore::new();
        let spec = MlpSpec::two_hidden(2, 4, 1, false).unwrap();
        let mlp = Mlp::build(&mut store, "m", spec, &mut rng()).unwrap();
        store.get_mut(mlp.layers[1].0).value = Tensor::zeros(&[4, 3]);
        let err = mlp_forward(&Tensor::zeros(&[1, 2]), &mlp, &store).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
    }

    #[test]
    fn forward_is_deterministic() {
        let mut store = ParamStore::new();
        let spec = MlpSpec::two_hidden(3, 6, 2, false).unwrap();
        let mlp = Mlp::build(&mut store, "m", spec, &mut rng()).unwrap();
        let x = Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.3, 1.0, 2.0, -3.0]).unwrap();
        let a = mlp_forward(&x, &mlp, &store).unwrap();
        let b = mlp_forward(&x, &mlp, &store).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spec_rejects_short_or_zero_widths() {
        assert!(MlpSpec::new(vec![3], Activation::Relu, false).is_err());
        assert!(MlpSpec::new(vec![3, 0, 1], Activation::Relu, false).is_err());
    }
}
