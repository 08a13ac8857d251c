//! Central finite-difference check of backpropagated gradients.
//!
//! The loss is re-evaluated by a separate double-double implementation of
//! the network so the differences are not swamped by f64 roundoff at a step
//! of 1e-6. Only addition and multiplication come from `twofloat`; its
//! division and transcendental functions are accurate to roughly 1e-17,
//! which is too coarse here, so those are computed locally to full
//! double-double precision.

use heatseq_core::model::{backward, forward, ModelConfig, ModelParams, Mode, Variant};
use heatseq_core::{Matrix, RiskLevel, Rng};
use twofloat::TwoFloat;

type Dd = TwoFloat;

fn dd(x: f64) -> Dd {
    TwoFloat::from(x)
}

/// Long division refined with exact double-double residuals.
fn div(a: Dd, b: Dd) -> Dd {
    let q1 = a.hi() / b.hi();
    let r = a - b * q1;
    let q2 = r.hi() / b.hi();
    let r = r - b * q2;
    let q3 = r.hi() / b.hi();
    dd(q1) + q2 + q3
}

/// Scaling and squaring: exp(x) = exp(x / 2^n)^(2^n) with a Taylor series
/// on the reduced argument.
fn exp(x: Dd) -> Dd {
    let mut n = 0;
    let mut r = x;
    while r.hi().abs() > 1e-3 {
        r = r * 0.5;
        n += 1;
    }
    let mut e = dd(1.0);
    for k in (1..=14).rev() {
        e = dd(1.0) + div(r * e, dd(k as f64));
    }
    for _ in 0..n {
        e = e * e;
    }
    e
}

fn ln(x: Dd) -> Dd {
    let mut y = dd(x.hi().ln());
    for _ in 0..3 {
        y = y + x * exp(-y) - 1.0;
    }
    y
}

fn tanh(x: Dd) -> Dd {
    let e = exp(-(x.abs()) * 2.0);
    let t = div(dd(1.0) - e, dd(1.0) + e);
    if x.hi() < 0.0 {
        -t
    } else {
        t
    }
}

fn sigmoid(x: Dd) -> Dd {
    div(dd(1.0), dd(1.0) + exp(-x))
}

/// Flat parameter tensors in checkpoint order, promoted to double-double.
struct Flat {
    t: Vec<Vec<Dd>>,
}

fn matvec(w: &[Dd], rows: usize, cols: usize, x: &[Dd], out: &mut [Dd]) {
    for r in 0..rows {
        let mut acc = dd(0.0);
        for c in 0..cols {
            acc += w[r * cols + c] * x[c];
        }
        out[r] += acc;
    }
}

fn reference_loss(cfg: &ModelConfig, f: &Flat, x: &Matrix, masks: &[Vec<Vec<f64>>], target: usize) -> Dd {
    let h = cfg.hidden;
    let steps = x.rows();
    let mut seq: Vec<Vec<Dd>> = (0..steps).map(|t| x.row(t).iter().map(|&v| dd(v)).collect()).collect();
    for l in 0..cfg.layers {
        let d = if l == 0 { cfg.input_dim } else { h };
        let (wi, wr, b) = (&f.t[3 * l], &f.t[3 * l + 1], &f.t[3 * l + 2]);
        let mut hp = vec![dd(0.0); h];
        let mut cp = vec![dd(0.0); h];
        let mut out = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut a = b.clone();
            matvec(wi, 4 * h, d, &seq[t], &mut a);
            matvec(wr, 4 * h, h, &hp, &mut a);
            let mut hn = vec![dd(0.0); h];
            let mut cn = vec![dd(0.0); h];
            for j in 0..h {
                let i = sigmoid(a[j]);
                let fg = sigmoid(a[h + j]);
                let g = tanh(a[2 * h + j]);
                let o = sigmoid(a[3 * h + j]);
                cn[j] = fg * cp[j] + i * g;
                hn[j] = o * tanh(cn[j]);
            }
            out.push(hn.iter().zip(&masks[l][t]).map(|(v, m)| *v * dd(*m)).collect::<Vec<Dd>>());
            hp = hn;
            cp = cn;
        }
        seq = out;
    }
    let base = 3 * cfg.layers;
    let readout: Vec<Dd> = if cfg.variant.has_attention() {
        let a_dim = cfg.attention_dim;
        let (w, b, v) = (&f.t[base], &f.t[base + 1], &f.t[base + 2]);
        let scores: Vec<Dd> = seq
            .iter()
            .map(|ht| {
                let mut u = b.clone();
                matvec(w, a_dim, h, ht, &mut u);
                u.iter().zip(v).fold(dd(0.0), |acc, (ui, vi)| acc + tanh(*ui) * *vi)
            })
            .collect();
        let exps: Vec<Dd> = scores.iter().map(|s| exp(*s)).collect();
        let z = exps.iter().fold(dd(0.0), |acc, e| acc + *e);
        let mut ctx = vec![dd(0.0); h];
        for (e, ht) in exps.iter().zip(&seq) {
            for (c, v) in ctx.iter_mut().zip(ht) {
                *c += div(*e, z) * *v;
            }
        }
        ctx
    } else {
        seq[steps - 1].clone()
    };
    let off = if cfg.variant.has_attention() { base + 3 } else { base };
    let mut logits = f.t[off + 1].clone();
    matvec(&f.t[off], 3, h, &readout, &mut logits);
    let z = logits.iter().fold(dd(0.0), |acc, l| acc + exp(*l));
    ln(z) - logits[target]
}

pub struct GradCheck {
    pub parameters: usize,
    pub worst_relative_error: f64,
    pub worst_tensor: String,
}

/// The small configuration used by the check: two layers, H = 8, D = 5,
/// T = 5, A = 8, with weights spread over ±0.8 so every tensor carries signal.
pub fn small_model(variant: Variant, seed: u64) -> (ModelParams, Matrix) {
    let mut cfg = ModelConfig::new(variant, 5).with_hidden(8);
    cfg.layers = 2;
    let mut rng = Rng::new(seed);
    let mut p = ModelParams::zeros(cfg).unwrap();
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.uniform_range(-0.8, 0.8);
        }
    }
    let x = Matrix::from_fn(5, 5, |_, _| rng.uniform_range(-1.0, 1.0));
    (p, x)
}

/// Compares every backprop gradient entry against a central difference with
/// step `1e-6 * max(1, |theta|)` and returns the largest relative error
/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn check_gradients(variant: Variant, seed: u64) -> GradCheck {
    let (p, x) = small_model(variant, seed);
    let target = RiskLevel::Moderate;
    let trace = forward(&p, &x, Mode::Train(&mut Rng::new(seed ^ 0x5eed))).unwrap();
    let masks = trace.dropout_masks().expect("train mode records masks");
    let grads = backward(&p, &trace, target).unwrap();

    let flat = Flat {
        t: p.tensors().iter().map(|(_, t)| t.iter().map(|&v| dd(v)).collect()).collect(),
    };
    let mut out = GradCheck {
        parameters: 0,
        worst_relative_error: 0.0,
        worst_tensor: String::new(),
    };
    for (ti, (name, g)) in grads.tensors().into_iter().enumerate() {
        for (k, &analytic) in g.iter().enumerate() {
            let theta = flat.t[ti][k];
            let step = 1e-6 * theta.hi().abs().max(1.0);
            let mut plus = Flat { t: flat.t.clone() };
            plus.t[ti][k] = theta + step;
            let mut minus = Flat { t: flat.t.clone() };
            minus.t[ti][k] = theta - step;
            let diff = reference_loss(&p.config, &plus, &x, &masks, target.index())
                - reference_loss(&p.config, &minus, &x, &masks, target.index());
            let numeric = div(diff, dd(2.0 * step)).hi();
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            out.parameters += 1;
            if rel > out.worst_relative_error {
                out.worst_relative_error = rel;
                out.worst_tensor = format!("{name}[{k}] analytic {analytic:e} numeric {numeric:e}");
            }
        }
    }
    out
}
