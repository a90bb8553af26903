use super::ParamStore;
use crate::error::{Error, Result};

pub const DEFAULT_LR: f64 = 1e-3;

/// Plain gradient descent: `p -= lr * grad` for every unfrozen parameter,
/// then all gradient slots are cleared.
pub fn optimizer_step(store: &mut ParamStore, lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::config(format!("learning rate {lr} must be > 0")));
    }
    for p in store.iter_mut() {
        if !p.frozen {
            for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                *v -= lr * g;
            }
        }
        p.grad.data_mut().fill(0.0);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn store_with(value: f64, grad: f64, frozen: bool) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::scalar(value)).unwrap();
        let p = s.get_mut(id);
        p.grad = Tensor::scalar(grad);
        p.frozen = frozen;
        s
    }

    #[test]
    fn sgd_update() {
        let mut s = store_with(1.0, 0.5, false);
        optimizer_step(&mut s, 0.1).unwrap();
        let p = s.iter().next().unwrap().1;
        assert!((p.value.data()[0] - 0.95).abs() < 1e-15);
        assert_eq!(p.grad.data(), &[0.0]);
    }

    #[test]
    fn frozen_is_untouched() {
        let mut s = store_with(1.0, 0.5, true);
        optimizer_step(&mut s, 0.1).unwrap();
        assert_eq!(s.iter().next().unwrap().1.value.data(), &[1.0]);
    }

    #[test]
    fn zero_grad_is_fixed_point() {
        let mut s = store_with(-2.5, 0.0, false);
        optimizer_step(&mut s, 0.3).unwrap();
        assert_eq!(s.iter().next().unwrap().1.value.data(), &[-2.5]);
    }

    #[test]
    fn nonpositive_lr_rejected() {
        let mut s = store_with(1.0, 1.0, false);
        assert!(matches!(optimizer_step(&mut s, 0.0), Err(Error::Config(_))));
        assert!(matches!(
            optimizer_step(&mut s, -1.0),
            Err(Error::Config(_))
        ));
    }
}
