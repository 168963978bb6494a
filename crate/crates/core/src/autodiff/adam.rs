use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Adam optimizer state with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Number of completed steps.
    pub t: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self::with_hyperparams(params, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON)
    }

    pub fn with_hyperparams(params: &[Tensor], beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            beta1,
            beta2,
            epsilon,
            t: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn first_moment(&self) -> &[Tensor] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Tensor] {
        &self.second_moment
    }

    /// One Adam update of `params` in place.
    ///
    /// On a non-finite gradient nothing is modified and the failing step
    /// number (1-based) is reported.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be > 0, got {lr}"
            )));
        }
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} params, {} grads, {} moment slots",
                    params.len(),
                    grads.len(),
                    self.first_moment.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first_moment[i].shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("param {i} {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
        }
        let step = self.t + 1;
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::NonFiniteGradient { step });
        }
        self.t = step;
        let bc1 = 1.0 - self.beta1.powi(step as i32);
        let bc2 = 1.0 - self.beta2.powi(step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(
            self.first_moment
                .iter_mut()
                .zip(self.second_moment.iter_mut()),
        ) {
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for j in 0..pd.len() {
                md[j] = self.beta1 * md[j] + (1.0 - self.beta1) * gd[j];
                vd[j] = self.beta2 * vd[j] + (1.0 - self.beta2) * gd[j] * gd[j];
                let m_hat = md[j] / bc1;
                let v_hat = vd[j] / bc2;
                pd[j] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::row(vec![1.0, -2.0])];
        let mut s = AdamState::new(&p);
        s.step(&mut p, &[Tensor::zeros(&[1, 2])], 0.01).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Tensor::scalar(0.0)];
        let mut s = AdamState::new(&p);
        s.step(&mut p, &[Tensor::scalar(1.0)], 0.005).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction
        let expected = -0.005 * 1.0 / (1.0 + 1e-8);
        assert!((p[0].data()[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn second_identical_step_not_larger() {
        let mut p = vec![Tensor::scalar(0.0)];
        let mut s = AdamState::new(&p);
        s.step(&mut p, &[Tensor::scalar(1.0)], 0.005).unwrap();
        let first = -p[0].data()[0];
        let before = p[0].data()[0];
        s.step(&mut p, &[Tensor::scalar(1.0)], 0.005).unwrap();
        let second = before - p[0].data()[0];
        assert!(second <= first + 1e-18);
        assert!(second > 0.0);
    }

    #[test]
    fn non_finite_gradient_reports_step() {
        let mut p = vec![Tensor::scalar(0.0)];
        let mut s = AdamState::new(&p);
        s.step(&mut p, &[Tensor::scalar(1.0)], 0.1).unwrap();
        let err = s
            .step(&mut p, &[Tensor::scalar(f64::NAN)], 0.1)
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { step: 2 }));
        assert_eq!(s.t, 1);
    }

    #[test]
    fn rejects_bad_lr_and_shapes() {
        let mut p = vec![Tensor::scalar(0.0)];
        let mut s = AdamState::new(&p);
        assert!(s.step(&mut p, &[Tensor::scalar(1.0)], 0.0).is_err());
        assert!(s.step(&mut p, &[Tensor::row(vec![1.0, 1.0])], 0.1).is_err());
    }
}
