//! SGD with classical momentum and weight decay.
//!
//! Update rule, per parameter matrix:
//! `v <- momentum*v - lr*(g + weight_decay*theta); theta <- theta + v`.

use std::collections::BTreeMap;

use crate::matrix::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SgdState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, Matrix>,
}

impl Default for SgdState {
    fn default() -> Self {
        SgdState::new(0.001, 0.9, 0.0)
    }
}

impl SgdState {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        SgdState {
            learning_rate,
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    /// Applies one momentum update to a named parameter. Velocity is
    /// allocated lazily with the parameter's shape.
    pub fn update(&mut self, name: &str, param: &mut Matrix, grad: &Matrix) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::shape(format!(
                "sgd_update on {name}: param {}x{} vs grad {}x{}",
                param.rows(),
                param.cols(),
                grad.rows(),
                grad.cols()
            )));
        }
        let v = self
            .velocity
            .entry(name.to_string())
            .or_insert_with(|| Matrix::zeros(param.rows(), param.cols()));
        let pd = param.data_mut();
        let vd = v.data_mut();
        let gd = grad.data();
        for k in 0..pd.len() {
            vd[k] = self.momentum * vd[k] - self.learning_rate * (gd[k] + self.weight_decay * pd[k]);
            pd[k] += vd[k];
        }
        Ok(())
    }

    pub fn velocity(&self, name: &str) -> Option<&Matrix> {
        self.velocity.get(name)
    }
}
