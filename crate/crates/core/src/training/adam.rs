use crate::error::{Error, Result};
use crate::model::ModelParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates mirroring the parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
        }
    }
}

/// One bias-corrected Adam update on flat slices, `t` being the 1-based step.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) {
    let c1 = 1.0 - beta1.powf(t as f64);
    let c2 = 1.0 - beta2.powf(t as f64);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
}

/// Applies one Adam step to every tensor in checkpoint order. Gradients are
/// checked first; a non-finite entry aborts the step without touching the
/// parameters or the state.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, lr: f64) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) {
        return Err(Error::shape("gradient or optimizer state shape differs from the parameters"));
    }
    for (name, g) in grads.tensors() {
        if let Some(index) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient { param: name, index });
        }
    }
    state.t += 1;
    let (t, b1, b2, eps) = (state.t, state.beta1, state.beta2, state.epsilon);
    let g_all: Vec<&[f64]> = grads.tensors().into_iter().map(|(_, g)| g).collect();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(g_all).zip(ms).zip(vs) {
        adam_update(p, g, m, v, t, lr, b1, b2, eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Variant};
    use crate::numeric::Rng;

    fn params() -> ModelParams {
        ModelParams::init(ModelConfig::new(Variant::LstmAttention, 3).with_hidden(4), &mut Rng::new(1)).unwrap()
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = params();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.fill(0.5);
        g.b_out[1] = -2.0;
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, 0.001).unwrap();
        assert_eq!(st.t, 1);
        for ((_, a), (_, b)) in p.tensors().iter().zip(before.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!(((y - x) - 0.001).abs() < 1e-10 || ((y - x) + 0.001).abs() < 1e-10);
            }
        }
        assert!((p.b_out[1] - before.b_out[1] - 0.001).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = params();
        let before = p.clone();
        let g = p.zeros_like();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, 0.001).unwrap();
        adam_step(&mut p, &g, &mut st, 0.001).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 2);
    }

    #[test]
    fn two_steps_on_a_quadratic_match_hand_trace() {
        // f(x) = (x - 3)^2, x0 = 1, lr = 0.1.
        // step 1: g = -4, m = -0.4, v = 0.016, m^ = -4, v^ = 16, x = 1.1.
        // step 2: g = -3.8, m = -0.74, v = 0.999 * 0.016 + 0.001 * 14.44 = 0.030424,
        //         m^ = -0.74 / 0.19 = -3.8947368,
        //         v^ = 0.030424 / 0.001999 = 15.2196098,
        //         x = 1.1 + 0.1 * 3.8947368 / 3.9012318 = 1.1998335.
        let mut x = [1.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        let lr = 0.1;
        for t in 1..=2 {
            let g = [2.0 * (x[0] - 3.0)];
            adam_update(&mut x, &g, &mut m, &mut v, t, lr, BETA1, BETA2, EPSILON);
            if t == 1 {
                assert!((x[0] - (1.0 + 0.1 * 4.0 / (4.0 + 1e-8))).abs() < 1e-15);
            }
        }
        let m_hat = -0.74 / 0.19;
        let v_hat = 0.030424 / (1.0 - 0.999f64.powi(2));
        let want = (1.0 + 0.1 * 4.0 / (4.0 + 1e-8)) - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((m[0] + 0.74).abs() < 1e-9, "{}", m[0]);
        assert!((v[0] - 0.030424).abs() < 1e-9, "{}", v[0]);
        assert!((x[0] - want).abs() < 1e-9, "{} vs {want}", x[0]);
        assert!((x[0] - 1.1998335).abs() < 1e-6, "{}", x[0]);
    }

    #[test]
    fn non_finite_gradient_aborts_with_location() {
        let mut p = params();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.layers[1].w_recurrent.set(0, 2, f64::NAN);
        let mut st = AdamState::new(&p);
        match adam_step(&mut p, &g, &mut st, 0.001) {
            Err(Error::NonFiniteGradient { param, index }) => {
                assert_eq!(param, "layer1.w_recurrent");
                assert_eq!(index, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(p, before);
        assert_eq!(st.t, 0);
    }
}
