use super::{NnError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment buffers for Adam with bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &[&Tensor], config: AdamConfig) -> Self {
        let m: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { v: m.clone(), m, t: 0, config }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One Adam update in place. Gradients are checked for finiteness before
    /// anything is touched, so a rejected step leaves params and state intact.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor], lr: f64) -> Result<(), NnError> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(NnError::Config(format!("learning rate must be positive, got {lr}")));
        }
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::Shape(format!(
                "adam: {} buffers, {} params, {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != self.m[i].shape() {
                return Err(NnError::Shape(format!(
                    "adam tensor {i}: buffer {:?}, param {:?}, grad {:?}",
                    self.m[i].shape(),
                    p.shape(),
                    g.shape()
                )));
            }
            if !g.is_finite() {
                return Err(NnError::NonFiniteGradient { tensor: i, max_abs: g.max_abs() });
            }
        }

        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.t as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                *w -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(grads: &[f64], start: f64) -> f64 {
        let mut p = Tensor::vector(vec![start]).unwrap();
        let mut st = AdamState::new(&[&p], AdamConfig::default());
        for &g in grads {
            let g = Tensor::vector(vec![g]).unwrap();
            st.step(&mut [&mut p], &[&g], 1e-3).unwrap();
        }
        p.data()[0]
    }

    // Expected values from a scripted numpy Adam with the same constants.
    #[test]
    fn first_step_is_bias_corrected() {
        let p = run(&[1.0], 0.0);
        assert!((p - -0.000_999_999_990_000_000_3).abs() < 1e-18, "{p}");
    }

    #[test]
    fn constant_gradient_ten_steps() {
        let p = run(&[1.0; 10], 0.0);
        assert!((p - -0.009_999_999_899_999_985).abs() < 1e-15, "{p}");
    }

    #[test]
    fn varying_gradient_ten_steps() {
        let gs = [0.5, -1.0, 2.0, 0.25, -0.75, 1.5, -2.0, 0.1, 0.3, -0.4];
        let p = run(&gs, 1.0);
        assert!((p - 0.997_976_417_482_069_3).abs() < 1e-13, "{p}");
    }

    #[test]
    fn zero_gradient_is_identity_and_counts_steps() {
        let mut p = Tensor::vector(vec![0.3, -1.2]).unwrap();
        let before = p.clone();
        let g = Tensor::zeros(&[2]);
        let mut st = AdamState::new(&[&p], AdamConfig::default());
        for _ in 0..25 {
            st.step(&mut [&mut p], &[&g], 1e-3).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.steps(), 25);
    }

    #[test]
    fn non_finite_gradient_is_rejected_with_payload() {
        let mut p = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let mut st = AdamState::new(&[&p], AdamConfig::default());
        let mut g = Tensor::zeros(&[2]);
        g.data_mut()[1] = f64::INFINITY;
        let err = st.step(&mut [&mut p], &[&g], 1e-3).unwrap_err();
        match err {
            NnError::NonFiniteGradient { tensor, max_abs } => {
                assert_eq!(tensor, 0);
                assert!(max_abs.is_infinite());
            }
            other => panic!("unexpected {other}"),
        }
        assert_eq!(st.steps(), 0);
        assert_eq!(p.data(), &[1.0, 2.0]);
    }
}
