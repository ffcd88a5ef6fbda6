use super::{ModelError, Result, TrainConfig};

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place. When `gradient_clip_norm` is set, the gradient is
/// rescaled to that global L2 norm first if it exceeds it.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    let dim = params.len();
    for got in [grad.len(), state.m.len(), state.v.len()] {
        if got != dim {
            return Err(ModelError::DimensionMismatch { expected: dim, got });
        }
    }
    let clip = match cfg.gradient_clip_norm {
        Some(max_norm) => {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > max_norm {
                max_norm / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    state.step += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let correction1 = 1.0 - b1.powi(state.step as i32);
    let correction2 = 1.0 - b2.powi(state.step as i32);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grad)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let g = g * clip;
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / correction1;
        let v_hat = *v / correction2;
        *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let cfg = TrainConfig::default();
        let mut p = vec![0.5, -1.0, 2.0];
        let mut st = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut st, &cfg).unwrap();
        assert_eq!(p, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = TrainConfig::default();
        let mut p = vec![1.0];
        let mut st = AdamState::new(1);
        adam_step(&mut p, &[3.0], &mut st, &cfg).unwrap();
        let delta = p[0] - 1.0;
        assert!((delta + 0.001).abs() < 1e-6, "{delta}");

        let unclipped = TrainConfig {
            gradient_clip_norm: None,
            ..cfg
        };
        let mut q = vec![1.0, 1.0];
        let mut st = AdamState::new(2);
        adam_step(&mut q, &[-0.02, 5.0], &mut st, &unclipped).unwrap();
        assert!((q[0] - 1.001).abs() < 1e-6);
        assert!((q[1] - 0.999).abs() < 1e-6);
    }

    #[test]
    fn clipping_bounds_the_effective_gradient() {
        let cfg = TrainConfig::default();
        let mut st = AdamState::new(2);
        let mut p = vec![0.0, 0.0];
        adam_step(&mut p, &[30.0, 40.0], &mut st, &cfg).unwrap();
        // clipped to norm 1: (0.6, 0.8) enters the moments
        assert!((st.m[0] - 0.1 * 0.6).abs() < 1e-15);
        assert!((st.m[1] - 0.1 * 0.8).abs() < 1e-15);
    }

    #[test]
    fn deterministic_and_checked() {
        let cfg = TrainConfig::default();
        let run = || {
            let mut p = vec![0.3, 0.1];
            let mut st = AdamState::new(2);
            for _ in 0..5 {
                adam_step(&mut p, &[0.2, -0.7], &mut st, &cfg).unwrap();
            }
            (p, st)
        };
        assert_eq!(run(), run());
        let mut st = AdamState::new(3);
        assert!(matches!(
            adam_step(&mut [0.0; 2], &[0.0; 2], &mut st, &cfg),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }
}
