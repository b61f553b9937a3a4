use super::{Module, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Adaptive-moment optimiser with bias-corrected first and second moments.
///
/// Moment buffers follow the module's parameter visit order, which is fixed
/// for a given architecture.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    config: AdamConfig,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step<M: Module<T> + ?Sized>(&mut self, module: &mut M) {
        self.step += 1;
        let c = self.config;
        let b1 = T::lit(c.beta1);
        let b2 = T::lit(c.beta2);
        let one = T::one();
        let eps = T::lit(c.epsilon);
        let bc1 = T::lit(1.0 - c.beta1.powi(self.step));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.step));
        let lr = T::lit(c.learning_rate);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        module.visit_params("", &mut |_, _, value, grad| {
            if ms.len() <= idx {
                ms.push(vec![T::zero(); value.len()]);
                vs.push(vec![T::zero(); value.len()]);
            }
            let (m, v) = (&mut ms[idx], &mut vs[idx]);
            for j in 0..value.len() {
                let g = grad[j];
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                value[j] -= lr * m_hat / (v_hat.sqrt() + eps);
                grad[j] = T::zero();
            }
            idx += 1;
        });
    }
}
