use crate::tensor::Tensor;

/// A learnable tensor with its gradient accumulator and Adam moment state.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    adam_m: Tensor,
    adam_v: Tensor,
    step_count: u64,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Parameter {
            value,
            grad: Tensor::zeros(&shape),
            adam_m: Tensor::zeros(&shape),
            adam_v: Tensor::zeros(&shape),
            step_count: 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }

    /// Add a gradient contribution; shapes must match.
    pub fn accumulate_grad(&mut self, g: &Tensor) {
        assert_eq!(
            g.shape(),
            self.value.shape(),
            "gradient shape mismatch on parameter"
        );
        for (acc, gi) in self.grad.data_mut().iter_mut().zip(g.data()) {
            *acc += gi;
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn adam_v(&self) -> &Tensor {
        &self.adam_v
    }

    /// One Adam update with bias correction. Consumes the accumulated
    /// gradient (it is zeroed afterwards) and increments the step count.
    pub fn adam_step(&mut self, lr: f64, beta1: f64, beta2: f64, eps: f64) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let m = self.adam_m.data_mut();
        let v = self.adam_v.data_mut();
        let g = self.grad.data();
        for i in 0..g.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            self.value.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        self.zero_grad();
    }
}
