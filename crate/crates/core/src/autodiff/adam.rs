//! Adam with bias correction.

use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

/// Per-parameter first/second moments plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState<E: Element> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub first: Vec<Tensor<E>>,
    pub second: Vec<Tensor<E>>,
}

impl<E: Element> AdamState<E> {
    /// Moments initialized to zero, one pair per parameter.
    pub fn new(params: &[Tensor<E>], lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

/// One biased-moment update with bias correction. `grads[i]` may be
/// `None` (parameter unused this step); its moments still decay.
pub fn adam_step<E: Element>(
    params: &mut [Tensor<E>],
    grads: &[Option<&Tensor<E>>],
    state: &mut AdamState<E>,
) -> Result<()> {
    if params.len() != state.first.len() || params.len() != grads.len() {
        return Err(Error::ShapeMismatch("optimizer parameter count".into()));
    }
    for (i, p) in params.iter().enumerate() {
        if let Some(g) = grads[i] {
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "gradient {} vs parameter {}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for ((param, grad), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        for k in 0..param.shape().count() {
            let g = grad.map_or(0.0, |g| g.data()[k].to_f64());
            let mk = state.beta1 * m.data()[k].to_f64() + (1.0 - state.beta1) * g;
            let vk = state.beta2 * v.data()[k].to_f64() + (1.0 - state.beta2) * g * g;
            m.data_mut()[k] = E::from_f64(mk);
            v.data_mut()[k] = E::from_f64(vk);
            let update = state.lr * (mk / c1) / ((vk / c2).sqrt() + state.epsilon);
            let pk = param.data()[k].to_f64() - update;
            param.data_mut()[k] = E::from_f64(pk);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tensor::Shape;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = vec![Tensor::from_vec(Shape([1, 1, 1, 3]), vec![1.0f64, -2.0, 0.5])
            .unwrap()];
        let before = params[0].clone();
        let mut state = AdamState::new(&params, 1e-3);
        let zero = Tensor::zeros(Shape([1, 1, 1, 3]));
        adam_step(&mut params, &[Some(&zero)], &mut state).unwrap();
        assert_eq!(params[0], before);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // constant gradient g: after bias correction the first update
        // is lr·g/(|g| + ε') ≈ lr
        let mut params = vec![Tensor::from_vec(Shape([1, 1, 1, 1]), vec![0.0f64]).unwrap()];
        let mut state = AdamState::new(&params, 1e-4);
        let g = Tensor::from_vec(Shape([1, 1, 1, 1]), vec![0.73f64]).unwrap();
        adam_step(&mut params, &[Some(&g)], &mut state).unwrap();
        let update = -params[0].data()[0];
        assert!((update - 1e-4).abs() < 1e-8, "{update}");
    }

    #[test]
    fn identical_runs_identical_trajectories() {
        let run = || {
            let mut params =
                vec![Tensor::from_vec(Shape([1, 1, 1, 2]), vec![0.3f32, -0.7]).unwrap()];
            let mut state = AdamState::new(&params, 1e-3);
            for i in 0..25 {
                let g = Tensor::from_vec(
                    Shape([1, 1, 1, 2]),
                    vec![(i as f32 * 0.1).sin(), (i as f32 * 0.2).cos()],
                )
                .unwrap();
                adam_step(&mut params, &[Some(&g)], &mut state).unwrap();
            }
            params[0].data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = vec![Tensor::<f64>::zeros(Shape([1, 1, 1, 2]))];
        let mut state = AdamState::new(&params, 1e-3);
        let g = Tensor::zeros(Shape([1, 1, 1, 3]));
        assert!(adam_step(&mut params, &[Some(&g)], &mut state).is_err());
    }
}
