//! Adam optimizer over flat parameter lists. Deterministic: the update is
//! pure arithmetic over the gradient sequence.

use crate::tensor::Tensor2;

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: Vec<Tensor2>,
    second_moment: Vec<Tensor2>,
}

impl Adam {
    pub fn new(params: &[&Tensor2], learning_rate: f64) -> Self {
        let zeros: Vec<Tensor2> = params
            .iter()
            .map(|p| Tensor2::zeros(p.rows(), p.cols()))
            .collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// One update over all parameters; `grads` aligns with `params`.
    pub fn update(&mut self, params: Vec<&mut Tensor2>, grads: &[&Tensor2]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.first_moment.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((param, grad), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(&mut self.second_moment))
        {
            let pdata = param.data_mut();
            for i in 0..pdata.len() {
                let g = grad.data()[i];
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * g;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                pdata[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_a_quadratic() {
        // f(x) = sum (x - 3)^2; Adam should settle near 3.
        let mut x = Tensor2::from_vec(1, 4, vec![0.0, 10.0, -5.0, 1.0]).unwrap();
        let mut opt = Adam::new(&[&x], 0.1);
        for _ in 0..500 {
            let grad = Tensor2::from_vec(
                1,
                4,
                x.data().iter().map(|v| 2.0 * (v - 3.0)).collect(),
            )
            .unwrap();
            opt.update(vec![&mut x], &[&grad]);
        }
        for v in x.data() {
            assert!((v - 3.0).abs() < 0.05, "got {v}");
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut x = Tensor2::from_vec(1, 2, vec![1.0, -2.0]).unwrap();
            let mut opt = Adam::new(&[&x], 0.05);
            for i in 0..50 {
                let g = Tensor2::from_vec(1, 2, vec![(i as f64).sin(), 0.5]).unwrap();
                opt.update(vec![&mut x], &[&g]);
            }
            x
        };
        assert_eq!(run(), run());
    }
}
