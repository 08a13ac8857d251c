use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{sigmoid, softmax_unchecked, Matrix, Rng};
use crate::risk::{argmax_label, RiskLevel};

use super::params::ModelParams;

/// T consecutive windows of one worker; `window_start` is the start of the
/// final window, whose label the sequence carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceInstance {
    pub worker_id: String,
    pub window_start: i64,
    /// T × D normalized features, one row per window.
    pub inputs: Matrix,
    pub label: Option<RiskLevel>,
}

pub enum Mode<'a> {
    Infer,
    /// Samples fresh dropout masks from the generator.
    Train(&'a mut Rng),
}

/// Activations of one LSTM layer over the whole sequence.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// Layer input per step (the previous layer's dropped output).
    pub inputs: Vec<Vec<f64>>,
    /// Post-activation gates per step, laid out `[i, f, g, o]`.
    pub gates: Vec<Vec<f64>>,
    pub cells: Vec<Vec<f64>>,
    pub cell_tanh: Vec<Vec<f64>>,
    pub hidden: Vec<Vec<f64>>,
    /// Inverted-dropout multipliers (0 or 1/(1-p)) per step; `None` in infer mode.
    pub mask: Option<Vec<Vec<f64>>>,
    /// Hidden outputs after dropout, as seen by the next stage.
    pub outputs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct AttentionTrace {
    /// tanh(W h_t + b) per step.
    pub projected: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    pub attention: Option<AttentionTrace>,
    /// Vector read by the classifier: last top-layer output or the context.
    pub readout: Vec<f64>,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl ForwardTrace {
    pub fn steps(&self) -> usize {
        self.layers.first().map_or(0, |l| l.hidden.len())
    }

    pub fn attention_weights(&self) -> Option<&[f64]> {
        self.attention.as_ref().map(|a| a.weights.as_slice())
    }

    pub fn dropout_masks(&self) -> Option<Vec<Vec<Vec<f64>>>> {
        self.layers.iter().map(|l| l.mask.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: RiskLevel,
    pub probabilities: [f64; RiskLevel::COUNT],
    pub attention: Option<Vec<f64>>,
}

enum Masks<'a, 'r> {
    None,
    Sample(&'a mut Rng, f64),
    Given(&'r [Vec<Vec<f64>>]),
}

pub fn forward(p: &ModelParams, x: &Matrix, mode: Mode<'_>) -> Result<ForwardTrace> {
    match mode {
        Mode::Infer => forward_impl(p, x, Masks::None),
        Mode::Train(rng) if p.config.dropout > 0.0 => forward_impl(p, x, Masks::Sample(rng, p.config.dropout)),
        Mode::Train(_) => forward_impl(p, x, Masks::None),
    }
}

/// Forward pass reusing explicit dropout multipliers, one `[layer][t][unit]`
/// block per layer. Used to replay a training pass exactly.
pub fn forward_with_masks(p: &ModelParams, x: &Matrix, masks: &[Vec<Vec<f64>>]) -> Result<ForwardTrace> {
    let h = p.config.hidden;
    let ok = masks.len() == p.layers.len()
        && masks.iter().all(|m| m.len() == x.rows() && m.iter().all(|v| v.len() == h));
    if !ok {
        return Err(Error::shape("dropout masks do not match the model and sequence length"));
    }
    forward_impl(p, x, Masks::Given(masks))
}

fn forward_impl(p: &ModelParams, x: &Matrix, mut masks: Masks<'_, '_>) -> Result<ForwardTrace> {
    let cfg = &p.config;
    let (steps, d) = x.shape();
    if steps == 0 {
        return Err(Error::shape("sequence has no time steps"));
    }
    if d != cfg.input_dim {
        return Err(Error::shape(format!(
            "sequence has {d} features per step, model expects {}",
            cfg.input_dim
        )));
    }
    let h = cfg.hidden;

    let mut layers: Vec<LayerTrace> = Vec::with_capacity(p.layers.len());
    for (li, lp) in p.layers.iter().enumerate() {
        let inputs: Vec<Vec<f64>> = match layers.last() {
            None => (0..steps).map(|t| x.row(t).to_vec()).collect(),
            Some(prev) => prev.outputs.clone(),
        };
        let mut tr = LayerTrace {
            inputs,
            gates: Vec::with_capacity(steps),
            cells: Vec::with_capacity(steps),
            cell_tanh: Vec::with_capacity(steps),
            hidden: Vec::with_capacity(steps),
            mask: None,
            outputs: Vec::with_capacity(steps),
        };
        let zero = vec![0.0; h];
        for t in 0..steps {
            let h_prev = if t == 0 { &zero } else { &tr.hidden[t - 1] };
            let c_prev = if t == 0 { &zero } else { &tr.cells[t - 1] };
            let mut a = lp.bias.clone();
            lp.w_input.matvec_acc(&tr.inputs[t], &mut a);
            lp.w_recurrent.matvec_acc(h_prev, &mut a);
            for (k, v) in a.iter_mut().enumerate() {
                *v = if (2 * h..3 * h).contains(&k) { v.tanh() } else { sigmoid(*v) };
            }
            let mut c = vec![0.0; h];
            let mut ct = vec![0.0; h];
            let mut hv = vec![0.0; h];
            for j in 0..h {
                c[j] = a[h + j] * c_prev[j] + a[j] * a[2 * h + j];
                ct[j] = c[j].tanh();
                hv[j] = a[3 * h + j] * ct[j];
            }
            tr.gates.push(a);
            tr.cells.push(c);
            tr.cell_tanh.push(ct);
            tr.hidden.push(hv);
        }
        let mask: Option<Vec<Vec<f64>>> = match &mut masks {
            Masks::None => None,
            Masks::Given(m) => Some(m[li].clone()),
            Masks::Sample(rng, rate) => {
                let keep = 1.0 / (1.0 - *rate);
                Some(
                    (0..steps)
                        .map(|_| (0..h).map(|_| if rng.bernoulli(*rate) { 0.0 } else { keep }).collect())
                        .collect(),
                )
            }
        };
        tr.outputs = match &mask {
            None => tr.hidden.clone(),
            Some(m) => tr
                .hidden
                .iter()
                .zip(m)
                .map(|(hv, mv)| hv.iter().zip(mv).map(|(a, b)| a * b).collect())
                .collect(),
        };
        tr.mask = mask;
        layers.push(tr);
    }

    let top = &layers.last().expect("at least one layer").outputs;
    let (attention, readout) = match &p.attention {
        None => (None, top[steps - 1].clone()),
        Some(ap) => {
            let mut projected = Vec::with_capacity(steps);
            let mut scores = Vec::with_capacity(steps);
            for ht in top {
                let mut u = ap.b_score.clone();
                ap.w_score.matvec_acc(ht, &mut u);
                u.iter_mut().for_each(|v| *v = v.tanh());
                scores.push(crate::numeric::dot(&ap.v_score, &u));
                projected.push(u);
            }
            let weights = softmax_unchecked(&scores);
            let mut context = vec![0.0; h];
            for (w, ht) in weights.iter().zip(top) {
                for (c, v) in context.iter_mut().zip(ht) {
                    *c += w * v;
                }
            }
            let readout = context.clone();
            (
                Some(AttentionTrace {
                    projected,
                    scores,
                    weights,
                    context,
                }),
                readout,
            )
        }
    };

    let mut logits = p.b_out.clone();
    p.w_out.matvec_acc(&readout, &mut logits);
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::State("non-finite logits in forward pass".into()));
    }
    let probabilities = softmax_unchecked(&logits);
    Ok(ForwardTrace {
        layers,
        attention,
        readout,
        logits,
        probabilities,
    })
}

/// Gradients of the cross-entropy loss for `target`, accumulated into `grads`.
pub fn backward_into(p: &ModelParams, trace: &ForwardTrace, target: RiskLevel, grads: &mut ModelParams) -> Result<()> {
    let h = p.config.hidden;
    let steps = trace.steps();
    let consistent = trace.layers.len() == p.layers.len()
        && trace.attention.is_some() == p.attention.is_some()
        && trace.readout.len() == h
        && trace.layers.iter().all(|l| l.hidden.len() == steps && l.hidden.iter().all(|v| v.len() == h));
    if !consistent || !grads.same_shape(p) || steps == 0 {
        return Err(Error::State("forward trace does not match the model parameters".into()));
    }

    let mut dlogits = trace.probabilities.clone();
    dlogits[target.index()] -= 1.0;
    grads.w_out.add_outer(&dlogits, &trace.readout);
    for (g, d) in grads.b_out.iter_mut().zip(&dlogits) {
        *g += d;
    }
    let mut dreadout = vec![0.0; h];
    p.w_out.matvec_t_acc(&dlogits, &mut dreadout);

    // Gradient w.r.t. the dropped outputs of the top layer.
    let mut d_out: Vec<Vec<f64>> = vec![vec![0.0; h]; steps];
    let top = &trace.layers.last().unwrap().outputs;
    match (&p.attention, &trace.attention, &mut grads.attention) {
        (None, None, None) => d_out[steps - 1] = dreadout,
        (Some(ap), Some(at), Some(ga)) => {
            let dweights: Vec<f64> = top.iter().map(|ht| crate::numeric::dot(&dreadout, ht)).collect();
            let mean: f64 = at.weights.iter().zip(&dweights).map(|(a, d)| a * d).sum();
            let a_dim = ap.v_score.len();
            for t in 0..steps {
                let w = at.weights[t];
                for (d, r) in d_out[t].iter_mut().zip(&dreadout) {
                    *d += w * r;
                }
                let de = w * (dweights[t] - mean);
                let u = &at.projected[t];
                let mut dz = vec![0.0; a_dim];
                for k in 0..a_dim {
                    ga.v_score[k] += de * u[k];
                    dz[k] = de * ap.v_score[k] * (1.0 - u[k] * u[k]);
                    ga.b_score[k] += dz[k];
                }
                ga.w_score.add_outer(&dz, &top[t]);
                ap.w_score.matvec_t_acc(&dz, &mut d_out[t]);
            }
        }
        _ => return Err(Error::State("attention parameters and trace disagree".into())),
    }

    for li in (0..p.layers.len()).rev() {
        let lp = &p.layers[li];
        let lt = &trace.layers[li];
        let gl = &mut grads.layers[li];
        if let Some(mask) = &lt.mask {
            for (d, m) in d_out.iter_mut().zip(mask) {
                d.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
            }
        }
        let in_dim = lp.w_input.cols();
        let mut d_in: Vec<Vec<f64>> = vec![vec![0.0; in_dim]; steps];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut da = vec![0.0; 4 * h];
        let zero = vec![0.0; h];
        for t in (0..steps).rev() {
            let g = &lt.gates[t];
            let c_prev = if t == 0 { &zero } else { &lt.cells[t - 1] };
            for j in 0..h {
                let (i_g, f_g, c_g, o_g) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let dh = d_out[t][j] + dh_next[j];
                let ct = lt.cell_tanh[t][j];
                let dc = dc_next[j] + dh * o_g * (1.0 - ct * ct);
                da[j] = dc * c_g * i_g * (1.0 - i_g);
                da[h + j] = dc * c_prev[j] * f_g * (1.0 - f_g);
                da[2 * h + j] = dc * i_g * (1.0 - c_g * c_g);
                da[3 * h + j] = dh * ct * o_g * (1.0 - o_g);
                dc_next[j] = dc * f_g;
            }
            gl.w_input.add_outer(&da, &lt.inputs[t]);
            if t > 0 {
                gl.w_recurrent.add_outer(&da, &lt.hidden[t - 1]);
            }
            for (b, d) in gl.bias.iter_mut().zip(&da) {
                *b += d;
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            lp.w_recurrent.matvec_t_acc(&da, &mut dh_next);
            if li > 0 {
                lp.w_input.matvec_t_acc(&da, &mut d_in[t]);
            }
        }
        d_out = d_in;
    }
    Ok(())
}

pub fn backward(p: &ModelParams, trace: &ForwardTrace, target: RiskLevel) -> Result<ModelParams> {
    let mut grads = p.zeros_like();
    backward_into(p, trace, target, &mut grads)?;
    Ok(grads)
}

pub fn predict(p: &ModelParams, x: &Matrix) -> Result<Prediction> {
    let tr = forward(p, x, Mode::Infer)?;
    let probs = [tr.probabilities[0], tr.probabilities[1], tr.probabilities[2]];
    Ok(Prediction {
        label: argmax_label(&probs),
        probabilities: probs,
        attention: tr.attention.map(|a| a.weights),
    })
}
