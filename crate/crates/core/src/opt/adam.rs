//! AdamW over a flat parameter vector. With `weight_decay = 0` this is plain
//! Adam, which is how the tracker uses it.

/// Adaptive-moment optimizer with decoupled weight decay: the decay shrinks
/// parameters multiplicatively and never flows through the moment estimates,
/// so a zero-gradient step scales decayed parameters by exactly
/// `1 − lr·weight_decay`.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64, dim: usize) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }

    /// Plain Adam (no decay), as used by the tracker.
    pub fn adam(learning_rate: f64, dim: usize) -> Self {
        Self::new(learning_rate, 0.0, dim)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. `decay_mask[i]` selects which parameters receive weight
    /// decay (weights yes, biases no); `None` decays everything.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], decay_mask: Option<&[bool]>) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient count changed");
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            if self.weight_decay > 0.0 && decay_mask.map_or(true, |m| m[i]) {
                params[i] *= 1.0 - self.learning_rate * self.weight_decay;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_step_shrinks_weights_exactly() {
        let (lr, wd) = (1e-3, 2e-4);
        let mut opt = AdamW::new(lr, wd, 3);
        let mut params = vec![1.0, -2.0, 0.5];
        opt.step(&mut params, &[0.0, 0.0, 0.0], None);
        let factor = 1.0 - lr * wd;
        assert_eq!(params, vec![1.0 * factor, -2.0 * factor, 0.5 * factor]);
    }

    #[test]
    fn decay_mask_spares_biases() {
        let mut opt = AdamW::new(1e-2, 0.1, 2);
        let mut params = vec![1.0, 1.0];
        opt.step(&mut params, &[0.0, 0.0], Some(&[true, false]));
        assert!(params[0] < 1.0);
        assert_eq!(params[1], 1.0);
    }

    #[test]
    fn descends_a_quadratic() {
        let mut opt = AdamW::adam(0.1, 2);
        let mut params = vec![3.0, -4.0];
        for _ in 0..500 {
            let grads: Vec<f64> = params.iter().map(|p| 2.0 * p).collect();
            opt.step(&mut params, &grads, None);
        }
        assert!(params.iter().all(|p| p.abs() < 1e-3), "{params:?}");
    }

    #[test]
    fn deterministic_given_same_inputs() {
        let run = || {
            let mut opt = AdamW::new(1e-2, 1e-3, 4);
            let mut params = vec![0.5, -0.25, 1.5, 2.0];
            for t in 0..100 {
                let grads: Vec<f64> = params.iter().map(|p| (p * 1.3 + t as f64 * 0.01).sin()).collect();
                opt.step(&mut params, &grads, None);
            }
            params
        };
        assert_eq!(run(), run());
    }
}
