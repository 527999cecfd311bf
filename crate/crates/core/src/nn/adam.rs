//! Adaptive-moment (Adam) optimizer over visited parameter slices.

/// First/second-moment state is allocated lazily on the first step, in
/// visit order, which must stay stable across steps.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over every (value, grad) pair produced by `visit`.
    /// Parameters whose grad slice is empty (non-trainable state such as
    /// batch-norm moving statistics) are skipped but still hold a slot.
    pub fn step(&mut self, visit: impl FnOnce(&mut dyn FnMut(&str, &mut [f64], &mut [f64]))) {
        self.t += 1;
        let t = self.t;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let bias1 = 1.0 - b1.powi(t as i32);
        let bias2 = 1.0 - b2.powi(t as i32);
        let m_store = &mut self.m;
        let v_store = &mut self.v;
        let mut slot = 0usize;
        visit(&mut |_name, values, grads| {
            if slot == m_store.len() {
                m_store.push(vec![0.0; grads.len()]);
                v_store.push(vec![0.0; grads.len()]);
            }
            let m = &mut m_store[slot];
            let v = &mut v_store[slot];
            assert_eq!(m.len(), grads.len(), "visit order changed between steps");
            for i in 0..grads.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * grads[i];
                v[i] = b2 * v[i] + (1.0 - b2) * grads[i] * grads[i];
                let mhat = m[i] / bias1;
                let vhat = v[i] / bias2;
                values[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            slot += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_descends_quadratic() {
        // minimize f(x) = (x - 3)^2 elementwise
        let mut x = vec![0.0f64; 4];
        let mut adam = Adam::new(0.1);
        for _ in 0..500 {
            let mut g: Vec<f64> = x.iter().map(|&v| 2.0 * (v - 3.0)).collect();
            adam.step(|f| f("x", &mut x, &mut g));
        }
        for v in &x {
            assert!((v - 3.0).abs() < 1e-3, "got {v}");
        }
    }

    #[test]
    fn skips_empty_grads() {
        let mut x = vec![1.0f64; 2];
        let mut stats = vec![5.0f64; 3];
        let mut adam = Adam::new(0.1);
        let mut g = vec![1.0f64; 2];
        let mut none: [f64; 0] = [];
        adam.step(|f| {
            f("x", &mut x, &mut g);
            f("stats", &mut stats, &mut none);
        });
        assert!(x[0] < 1.0);
        assert_eq!(stats, vec![5.0; 3]);
    }
}
