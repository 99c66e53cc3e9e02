use super::layers::ParamRef;
use super::tensor::Scalar;

/// Adam with bias correction. Weight decay is added to the gradient
/// (`g + wd·θ`) before the moment updates.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// One update of every parameter from its accumulated gradient.
    ///
    /// Panics if the parameter list changes shape between calls.
    pub fn update(&mut self, params: &mut [ParamRef<'_, T>]) {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
            self.second = self.first.clone();
        }
        assert_eq!(self.first.len(), params.len(), "parameter list changed between steps");
        self.step += 1;
        let t = self.step as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of_f64(self.beta1), T::of_f64(self.beta2));
        let (one_b1, one_b2) = (T::of_f64(1.0 - self.beta1), T::of_f64(1.0 - self.beta2));
        let wd = T::of_f64(self.weight_decay);
        let lr = T::of_f64(self.lr);
        let eps = T::of_f64(self.epsilon);
        let inv_c1 = T::of_f64(1.0 / correction1);
        let inv_c2 = T::of_f64(1.0 / correction2);

        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            assert_eq!(m.len(), p.value.len(), "parameter {} changed size", p.name);
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for i in 0..values.len() {
                let g = grads[i] + wd * values[i];
                m[i] = b1 * m[i] + one_b1 * g;
                v[i] = b2 * v[i] + one_b2 * g * g;
                let m_hat = m[i] * inv_c1;
                let v_hat = v[i] * inv_c2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
