//! Adaptive-moment gradient descent over a [`ParamStore`].

use super::{ParamStore, TensorError};

/// Adam with bias correction. Learning rate defaults to 1e-4, decay rates
/// to 0.9/0.999 and epsilon to 1e-8.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(1e-4)
    }
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update. Every parameter must carry a gradient; gradients
    /// are cleared afterwards so the next step requires a fresh backward.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<(), TensorError> {
        if self.first_moment.is_empty() {
            for (_, tensor) in params.iter() {
                self.first_moment.push(vec![0.0; tensor.len()]);
                self.second_moment.push(vec![0.0; tensor.len()]);
            }
        }
        for (name, tensor) in params.iter() {
            if tensor.grad().is_none() {
                return Err(TensorError::MissingGradient(name.to_string()));
            }
        }
        self.step_count += 1;
        let bias1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bias2 = 1.0 - self.beta2.powi(self.step_count as i32);

        for (index, (_, tensor)) in params.iter_mut().enumerate() {
            let grad = tensor.grad().expect("checked above").to_vec();
            let m = &mut self.first_moment[index];
            let v = &mut self.second_moment[index];
            let data = tensor.data_mut();
            for i in 0..data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                data[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            tensor.clear_grad();
        }
        Ok(())
    }
}
