use super::params::{real, ParamStore, Real};

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<F: Real> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    first: ParamStore<F>,
    second: ParamStore<F>,
}

impl<F: Real> Adam<F> {
    pub fn new(params: &ParamStore<F>, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &ParamStore<F>) {
        self.step += 1;
        let b1 = real::<F>(self.beta1);
        let b2 = real::<F>(self.beta2);
        let one = F::one();
        let correction1 = one - b1.powi(self.step);
        let correction2 = one - b2.powi(self.step);
        let lr = real::<F>(self.learning_rate);
        let eps = real::<F>(self.epsilon);

        let tensors = params
            .tensors_mut()
            .zip(self.first.tensors_mut())
            .zip(self.second.tensors_mut());
        for (((p, m), v), (_, g)) in tensors.zip(grads.iter()) {
            for k in 0..p.data.len() {
                let gk = g.data[k];
                m.data[k] = b1 * m.data[k] + (one - b1) * gk;
                v.data[k] = b2 * v.data[k] + (one - b2) * gk * gk;
                let m_hat = m.data[k] / correction1;
                let v_hat = v.data[k] / correction2;
                p.data[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Rescales gradients so that their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<F: Real>(grads: &mut ParamStore<F>, max_norm: f64) -> f64 {
    let mut total = 0.0f64;
    for (_, t) in grads.iter() {
        for v in &t.data {
            let x = v.to_f64().unwrap_or(f64::NAN);
            total += x * x;
        }
    }
    let norm = total.sqrt();
    if norm > max_norm && norm.is_finite() {
        let scale = real::<F>(max_norm / norm);
        for t in grads.tensors_mut() {
            for v in &mut t.data {
                *v *= scale;
            }
        }
    }
    norm
}
