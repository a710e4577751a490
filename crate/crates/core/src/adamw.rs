//! Adam with decoupled weight decay, operating on flat parameter slices.

/// First/second-moment accumulators for one parameter tensor.
#[derive(Debug, Clone)]
pub struct MomentState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl MomentState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay; applied directly to the parameters, not the moments.
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
    }

    /// One bias-corrected update of `param` given `grad`.
    pub fn step(&self, state: &mut MomentState, param: &mut [f64], grad: &[f64]) {
        assert_eq!(param.len(), state.m.len(), "optimizer state shape mismatch");
        assert_eq!(grad.len(), state.m.len(), "gradient shape mismatch");
        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..param.len() {
            let g = grad[i];
            state.m[i] = self.beta1 * state.m[i] + (1.0 - self.beta1) * g;
            state.v[i] = self.beta2 * state.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = state.m[i] / bc1;
            let v_hat = state.v[i] / bc2;
            param[i] -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * param[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_roughly_lr_in_sign_direction() {
        let opt = AdamW::new(1e-2, 0.0);
        let mut st = MomentState::new(2);
        let mut p = vec![1.0, -1.0];
        opt.step(&mut st, &mut p, &[0.5, -0.25]);
        // bias correction makes m_hat = g, v_hat = g^2 on step 1
        assert!((p[0] - (1.0 - 1e-2)).abs() < 1e-6);
        assert!((p[1] - (-1.0 + 1e-2)).abs() < 1e-6);
    }

    #[test]
    fn converges_on_a_quadratic() {
        let opt = AdamW::new(0.05, 0.0);
        let mut st = MomentState::new(3);
        let target = [2.0, -1.0, 0.5];
        let mut p = vec![0.0; 3];
        for _ in 0..2000 {
            let grad: Vec<f64> = p.iter().zip(&target).map(|(x, t)| x - t).collect();
            opt.step(&mut st, &mut p, &grad);
        }
        for (x, t) in p.iter().zip(&target) {
            assert!((x - t).abs() < 1e-3, "{x} vs {t}");
        }
    }

    #[test]
    fn decay_is_decoupled_from_the_moments() {
        let opt = AdamW::new(0.1, 0.5);
        let mut st = MomentState::new(1);
        let mut p = vec![2.0];
        // zero gradient: only the decay term acts, shrinking by lr*wd*p
        opt.step(&mut st, &mut p, &[0.0]);
        assert!((p[0] - 2.0 * (1.0 - 0.1 * 0.5)).abs() < 1e-12);
    }
}
