//! Adam optimizer with bias correction.

use alloc::vec;
use alloc::vec::Vec;

use crate::elem::Element;
use crate::error::{numerical_err, usage_err, Result};
use crate::net::NamedParam;

/// Per-parameter first/second moment state for one subnetwork.
#[derive(Debug, Clone)]
pub struct AdamState<T = f32> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Element> AdamState<T> {
    pub fn new(params: &[NamedParam<T>]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![T::zero(); p.tensor.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.tensor.len()]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over a parameter list. Gradients must be finite and
/// shaped like their parameters.
pub fn adam_step<T: Element>(
    params: &mut [NamedParam<T>],
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(usage_err!(
            "adam: {} params, {} grads, state for {}",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.tensor.len() != g.len() {
            return Err(usage_err!(
                "adam: gradient for {} has {} elements, parameter has {}",
                p.name,
                g.len(),
                p.tensor.len()
            ));
        }
        let mut acc = T::zero();
        for &x in g {
            acc += x;
        }
        if !acc.is_finite() {
            return Err(numerical_err!("non-finite gradient for parameter {}", p.name));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64(state.beta1);
    let b2 = T::from_f64(state.beta2);
    let one_m_b1 = T::one() - b1;
    let one_m_b2 = T::one() - b2;
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    let eps = T::from_f64(state.eps);
    let lr = T::from_f64(lr);

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let data = p.tensor.data_mut();
        for i in 0..data.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + one_m_b1 * gi;
            v[i] = b2 * v[i] + one_m_b2 * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            data[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use alloc::string::ToString;

    fn one_param(vals: &[f32]) -> Vec<NamedParam<f32>> {
        vec![NamedParam {
            name: "p".to_string(),
            tensor: Tensor::new(vec![vals.len()], vals.to_vec()).unwrap(),
        }]
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = one_param(&[1.0, -2.0, 3.0]);
        let mut st = AdamState::new(&params);
        adam_step(&mut params, &[vec![0.0; 3]], &mut st, 0.1).unwrap();
        assert_eq!(params[0].tensor.data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut params = one_param(&[1.0, 1.0]);
        let mut st = AdamState::new(&params);
        adam_step(&mut params, &[vec![0.5, -2.0]], &mut st, 0.1).unwrap();
        // Bias corrections cancel on the first step; eps is negligible.
        assert!((params[0].tensor.data()[0] - 0.9).abs() < 1e-4);
        assert!((params[0].tensor.data()[1] - 1.1).abs() < 1e-4);
    }

    #[test]
    fn quadratic_converges_toward_zero() {
        let mut params = one_param(&[1.0]);
        let mut st = AdamState::new(&params);
        for _ in 0..500 {
            let x = params[0].tensor.data()[0];
            adam_step(&mut params, &[vec![2.0 * x]], &mut st, 0.1).unwrap();
        }
        assert!(params[0].tensor.data()[0].abs() < 1e-2);
    }

    #[test]
    fn non_finite_gradient_aborts_with_name() {
        let mut params = one_param(&[1.0]);
        let mut st = AdamState::new(&params);
        let err = adam_step(&mut params, &[vec![f32::NAN]], &mut st, 0.1).unwrap_err();
        match err {
            crate::Error::Numerical(msg) => assert!(msg.contains('p')),
            other => panic!("unexpected {other}"),
        }
        // Parameters untouched on abort.
        assert_eq!(params[0].tensor.data(), &[1.0]);
    }
}
