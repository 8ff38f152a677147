use crate::elem::Elem;
use crate::tensor::Tensor;

/// Adam with bias correction. Parameters whose gradient is `None` in a step
/// are left untouched, moments included.
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Elem> Adam<T> {
    pub fn new(lr: T, beta1: T, beta2: T, eps: T, params: &[Tensor<T>]) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Moment tensors in parameter order, for checkpointing.
    pub fn state(&self) -> (u64, &[Tensor<T>], &[Tensor<T>]) {
        (self.step, &self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Tensor<T>>, v: Vec<Tensor<T>>) {
        assert_eq!(m.len(), self.m.len(), "moment count mismatch");
        assert_eq!(v.len(), self.v.len(), "moment count mismatch");
        self.step = step;
        self.m = m;
        self.v = v;
    }

    pub fn apply(&mut self, params: &mut [Tensor<T>], grads: &[Option<Tensor<T>>]) {
        assert_eq!(params.len(), self.m.len(), "parameter count mismatch");
        assert_eq!(params.len(), grads.len(), "gradient count mismatch");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let Some(grad) = grad else { continue };
            assert_eq!(param.shape(), grad.shape(), "gradient shape mismatch");
            let (pd, gd) = (param.data_mut(), grad.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                md[i] = self.beta1 * md[i] + (T::one() - self.beta1) * gd[i];
                vd[i] = self.beta2 * vd[i] + (T::one() - self.beta2) * gd[i] * gd[i];
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] = pd[i] - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_descends_quadratic() {
        // minimize (x - 3)^2
        let mut params = vec![Tensor::scalar(0.0f64)];
        let mut opt = Adam::new(0.1, 0.9, 0.999, 1e-8, &params);
        for _ in 0..500 {
            let x = params[0].item();
            let grad = Tensor::scalar(2.0 * (x - 3.0));
            opt.apply(&mut params, &[Some(grad)]);
        }
        assert!((params[0].item() - 3.0).abs() < 1e-3);
    }

    #[test]
    fn none_gradient_leaves_parameter_untouched() {
        let mut params = vec![Tensor::scalar(1.5f64), Tensor::scalar(2.5)];
        let mut opt = Adam::new(0.1, 0.0, 0.9, 1e-8, &params);
        opt.apply(&mut params, &[Some(Tensor::scalar(1.0)), None]);
        assert_ne!(params[0].item(), 1.5);
        assert_eq!(params[1].item(), 2.5);
    }
}
