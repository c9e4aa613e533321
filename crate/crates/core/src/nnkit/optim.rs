use serde::{Deserialize, Serialize};

use super::params::Params;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<P: Params>(params: &P) -> Self {
        let shapes: Vec<usize> = params.named().iter().map(|(_, t)| t.len()).collect();
        Self {
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<P: Params>(params: &mut P, grads: &P, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    let grads = grads.named();
    let mut params = params.named_mut();
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape("optimizer state does not match the parameter set"));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, ((_, p), (name, g))) in params.iter_mut().zip(&grads).enumerate() {
        if p.len() != g.len() || state.m[i].len() != p.len() {
            return Err(Error::shape(format!("gradient for `{name}` has the wrong size")));
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *w -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::layers::Linear;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer() -> Linear {
        Linear::new(3, 2, true, &mut ChaCha8Rng::seed_from_u64(1))
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = layer();
        let before = p.clone();
        let g = p.zeros_like();
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &g, &mut state, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = layer();
        let before = p.clone();
        let mut g = p.zeros_like();
        for (i, v) in g.w.data_mut().iter_mut().enumerate() {
            *v = if i % 2 == 0 { 0.3 } else { -2.5 };
        }
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &g, &mut state, &cfg).unwrap();
        for ((a, b), gv) in p.w.data().iter().zip(before.w.data()).zip(g.w.data()) {
            let delta = a - b;
            assert!((delta.abs() - cfg.lr).abs() < 1e-7 * cfg.lr);
            assert_eq!(delta.signum(), -gv.signum());
        }
    }

    #[test]
    fn identical_runs_match() {
        let run = || {
            let mut p = layer();
            let mut state = AdamState::new(&p);
            for step in 0..5 {
                let mut g = p.zeros_like();
                g.w.data_mut()
                    .iter_mut()
                    .enumerate()
                    .for_each(|(i, v)| *v = (i + step) as f64 * 0.1);
                adam_step(&mut p, &g, &mut state, &AdamConfig::default()).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
