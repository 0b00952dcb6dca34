//! RMSprop parameter updates.
//!
//! acc <- rho * acc + (1 - rho) * g^2
//! p   <- p - lr * g / (sqrt(acc) + eps)

use crate::error::{Error, Result};
use crate::nn::{Gradients, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsProp {
    pub lr: f32,
    pub rho: f32,
    pub eps: f32,
}

impl Default for RmsProp {
    fn default() -> Self {
        RmsProp {
            lr: 1e-3,
            rho: 0.9,
            eps: 1e-7,
        }
    }
}

impl RmsProp {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Contract(format!("rmsprop lr must be > 0, got {}", self.lr)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Contract(format!(
                "rmsprop rho must be in (0, 1), got {}",
                self.rho
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Contract(format!("rmsprop eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// One deterministic RMSprop step over every parametric layer.
///
/// Non-finite gradients abort with a diagnostic naming the layer.
pub fn rmsprop_step(store: &mut ParamStore, grads: &Gradients, opt: &RmsProp) -> Result<()> {
    opt.validate()?;
    if grads.layers.len() != store.layers().len() {
        return Err(Error::Shape(format!(
            "gradient slots {} do not match parameter slots {}",
            grads.layers.len(),
            store.layers().len()
        )));
    }
    for (i, g) in grads.layers.iter().enumerate() {
        let Some(g) = g else { continue };
        if !g.weights.all_finite() || !g.bias.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient at layer {i}; training aborted"
            )));
        }
        let p = store.layers()[i]
            .as_ref()
            .ok_or_else(|| Error::Shape(format!("gradient for non-parametric layer {i}")))?;
        if p.weights.shape() != g.weights.shape() || p.bias.shape() != g.bias.shape() {
            return Err(Error::Shape(format!(
                "gradient shape mismatch at layer {i}: params {:?}/{:?}, grads {:?}/{:?}",
                p.weights.shape(),
                p.bias.shape(),
                g.weights.shape(),
                g.bias.shape()
            )));
        }
        // split borrow: update accumulators first, then parameters
        {
            let acc = store.acc_mut()[i].as_mut().expect("accumulator mirrors params");
            update_acc(&mut acc.weights, &g.weights, opt.rho);
            update_acc(&mut acc.bias, &g.bias, opt.rho);
        }
        let (acc_w, acc_b) = {
            let acc = store.accumulators()[i].as_ref().unwrap();
            (acc.weights.clone(), acc.bias.clone())
        };
        let p = store.layers_mut()[i].as_mut().unwrap();
        apply_update(&mut p.weights, &g.weights, &acc_w, opt);
        apply_update(&mut p.bias, &g.bias, &acc_b, opt);
    }
    Ok(())
}

fn update_acc(acc: &mut Tensor, grad: &Tensor, rho: f32) {
    for (a, g) in acc.data_mut().iter_mut().zip(grad.data()) {
        *a = rho * *a + (1.0 - rho) * g * g;
    }
}

fn apply_update(param: &mut Tensor, grad: &Tensor, acc: &Tensor, opt: &RmsProp) {
    for ((p, g), a) in param.data_mut().iter_mut().zip(grad.data()).zip(acc.data()) {
        *p -= opt.lr * g / (a.sqrt() + opt.eps);
    }
}
