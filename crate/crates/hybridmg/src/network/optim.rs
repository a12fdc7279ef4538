//! AdamW optimizer with decoupled weight decay, and the warmup/decay
//! learning-rate schedule used for transformer training.

/// Adam moment state over a flat parameter vector. Weight decay is applied
/// decoupled from the adaptive update (AdamW); plain Adam is the special
/// case `weight_decay = 0`.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(n_params: usize, weight_decay: f64) -> AdamW {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, weights: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(weights.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..weights.len() {
            // Decoupled decay, independent of the gradient magnitudes.
            weights[i] -= lr * self.weight_decay * weights[i];
            let m = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            let v = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            self.m[i] = m;
            self.v[i] = v;
            let mhat = m / bc1;
            let vhat = v / bc2;
            weights[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Piecewise-linear schedule: warmup from `r_min` to `r_max` over `c_up`
/// epochs, then linear decay governed by `c_down`.
pub fn lr_schedule(c: usize, r_min: f64, r_max: f64, c_up: usize, c_down: usize) -> f64 {
    let c = c as f64;
    let c_up = c_up as f64;
    let c_down = c_down as f64;
    if c <= c_up {
        r_min + c / c_up * (r_max - r_min)
    } else {
        r_min + (1.0 - (c - c_up) / c_down) * (r_max - r_min)
    }
}

/// The transformer defaults: r(0) = 2e-5, peak 1.8e-4 at epoch 14.
pub fn lr_schedule_default(c: usize) -> f64 {
    lr_schedule(c, 2e-5, 1.8e-4, 14, 120)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        assert!((lr_schedule_default(0) - 2e-5).abs() < 1e-18);
        assert!((lr_schedule_default(14) - 1.8e-4).abs() < 1e-18);
        assert!((lr_schedule_default(77) - 9.6e-5).abs() < 1e-12);
    }

    #[test]
    fn zero_grads_and_decay() {
        let mut w = vec![1.0, -2.0];
        let g = vec![0.0, 0.0];
        let mut opt = AdamW::new(2, 0.0);
        opt.step(&mut w, &g, 0.1);
        assert_eq!(w, vec![1.0, -2.0]);
        // Pure decay: wd = 0.1, lr = 1 scales weights by 0.9.
        let mut opt = AdamW::new(2, 0.1);
        let mut w = vec![1.0, -2.0];
        opt.step(&mut w, &g, 1.0);
        assert!((w[0] - 0.9).abs() < 1e-15);
        assert!((w[1] + 1.8).abs() < 1e-15);
    }

    #[test]
    fn quadratic_descent_is_eventually_monotone() {
        // Minimize 1/2 w^2; after the moment warm-up |w| decreases.
        let mut w = vec![3.0];
        let mut opt = AdamW::new(1, 0.0);
        let mut prev = w[0].abs();
        let mut monotone_from = None;
        for it in 0..100 {
            let g = vec![w[0]];
            opt.step(&mut w, &g, 0.1);
            let cur = w[0].abs();
            if cur < prev {
                monotone_from.get_or_insert(it);
            } else {
                monotone_from = None;
            }
            prev = cur;
        }
        assert!(w[0].abs() < 0.5);
        assert!(monotone_from.is_some());
    }
}
