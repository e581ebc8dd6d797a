use super::params::ParamStore;
use super::tensor::Real;
use super::TensorError;

/// Adaptive-moment optimizer hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, t)| vec![T::zero(); t.numel()])
                .collect::<Vec<_>>()
        };
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected update of every parameter in place. A missing gradient
/// counts as zero.
pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &[Option<Vec<T>>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<(), TensorError> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(TensorError::ShapeMismatch(format!(
            "adam: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (id, g) in grads.iter().enumerate() {
        let n = params.get(id).numel();
        if g.as_ref().is_some_and(|g| g.len() != n) || state.m[id].len() != n || state.v[id].len() != n {
            return Err(TensorError::ShapeMismatch(format!(
                "adam: buffers of {:?} do not match its {n} elements",
                params.name(id)
            )));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let lr = T::from_f64(cfg.lr);
    let eps = T::from_f64(cfg.eps);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for (id, g) in grads.iter().enumerate() {
        let p = params.get_mut(id).data_mut();
        let (m, v) = (&mut state.m[id], &mut state.v[id]);
        for k in 0..p.len() {
            let gk = g.as_ref().map_or(T::zero(), |g| g[k]);
            m[k] = b1 * m[k] + (T::one() - b1) * gk;
            v[k] = b2 * v[k] + (T::one() - b2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn store(vals: Vec<f64>) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::new(vec![vals.len()], vals).unwrap()).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = store(vec![1.0, 1.0]);
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &[Some(vec![3.0, -0.5])], &mut st, &cfg).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+eps)
        let d = p.get(0).data();
        assert!((d[0] - (1.0 - 2e-4 * 3.0 / (3.0 + 1e-8))).abs() < 1e-15);
        assert!((d[1] - (1.0 + 2e-4 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = store(vec![0.25, -4.0]);
        let before = p.clone();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[Some(vec![0.0, 0.0])], &mut st, &AdamConfig::default()).unwrap();
        adam_step(&mut p, &[None], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = store(vec![0.1, 0.2, 0.3]);
            let mut st = AdamState::new(&p);
            for _ in 0..2 {
                adam_step(&mut p, &[Some(vec![0.5, -1.5, 2.5])], &mut st, &AdamConfig::default()).unwrap();
            }
            (p, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch() {
        let mut p = store(vec![0.1, 0.2]);
        let mut st = AdamState::new(&p);
        assert!(adam_step(&mut p, &[Some(vec![1.0])], &mut st, &AdamConfig::default()).is_err());
        assert!(adam_step(&mut p, &[], &mut st, &AdamConfig::default()).is_err());
    }
}
