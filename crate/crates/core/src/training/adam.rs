use crate::error::{Error, Result};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

/// Adam moment estimates for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Fresh state for tensors of the given lengths.
    pub fn new(lengths: impl IntoIterator<Item = usize>) -> Self {
        let lengths: Vec<usize> = lengths.into_iter().collect();
        AdamState {
            m: lengths.iter().map(|&n| vec![0.0; n]).collect(),
            v: lengths.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_EPS,
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }
}

/// One bias-corrected Adam update with classic (coupled) L2 regularisation:
/// the gradient becomes `g + weight_decay · θ` before the moment updates.
///
/// `name` maps a tensor index to a readable path for error messages. Nothing
/// is modified if any gradient is non-finite.
pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
    name: impl Fn(usize) -> String,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dimension {
            expected: state.m.len(),
            got: grads.len(),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::Dimension {
                expected: state.m[i].len(),
                got: g.len(),
            });
        }
        if let Some(k) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {}[{k}]", name(i))));
        }
    }

    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for k in 0..p.len() {
            let gk = g[k] + weight_decay * p[k];
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(p: &mut Vec<f64>, g: &[f64], s: &mut AdamState, lr: f64, wd: f64) -> Result<()> {
        let mut params = [p.as_mut_slice()];
        adam_step(&mut params, &[g], s, lr, wd, |i| format!("t{i}"))
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![0.5];
        let mut s = AdamState::new([1]);
        step(&mut p, &[1.0], &mut s, 1e-3, 0.0).unwrap();
        // m̂ = v̂ = 1, so Δ = -lr / (1 + eps)
        assert!((p[0] - (0.5 - 1e-3 / (1.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![0.1, -0.2, 0.3];
        let mut s = AdamState::new([3]);
        step(&mut p, &[0.0; 3], &mut s, 1e-3, 0.0).unwrap();
        assert_eq!(p, vec![0.1, -0.2, 0.3]);
    }

    #[test]
    fn equal_gradients_give_equal_updates() {
        let mut p = vec![1.0, 1.0];
        let mut s = AdamState::new([2]);
        for _ in 0..5 {
            step(&mut p, &[0.3, 0.3], &mut s, 1e-2, 0.0).unwrap();
        }
        assert_eq!(p[0].to_bits(), p[1].to_bits());
    }

    #[test]
    fn weight_decay_shrinks_norm_every_step() {
        let mut p = vec![0.8, -0.5, 0.3, -1.2];
        let mut s = AdamState::new([4]);
        let norm = |p: &[f64]| p.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut prev = norm(&p);
        for _ in 0..100 {
            step(&mut p, &[0.0; 4], &mut s, 1e-3, 1e-5).unwrap();
            let n = norm(&p);
            assert!(n < prev);
            prev = n;
        }
    }

    #[test]
    fn second_moment_stays_non_negative() {
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new([3]);
        for k in 0..20 {
            let g = [(k as f64).sin(), -(k as f64), 0.5];
            step(&mut p, &g, &mut s, 1e-3, 1e-5).unwrap();
            assert!(s.v[0].iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = vec![0.0; 2];
        let mut s = AdamState::new([2]);
        let err = step(&mut p, &[0.0, f64::NAN], &mut s, 1e-3, 0.0).unwrap_err();
        assert!(err.to_string().contains("t0[1]"));
        assert_eq!(s.t, 0);
        assert_eq!(p, vec![0.0; 2]);
    }
}
