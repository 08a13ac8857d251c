use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Rng};
use crate::risk::RiskLevel;

pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_LAYERS: usize = 2;
pub const DEFAULT_DROPOUT: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Stacked LSTM; the classifier reads the last hidden state.
    Lstm,
    /// Stacked LSTM with additive attention pooling over the top layer.
    LstmAttention,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Lstm => "lstm",
            Variant::LstmAttention => "lstm-am",
        }
    }

    pub fn has_attention(self) -> bool {
        self == Variant::LstmAttention
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Variant::Lstm => 0,
            Variant::LstmAttention => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Variant> {
        match c {
            0 => Some(Variant::Lstm),
            1 => Some(Variant::LstmAttention),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lstm" => Ok(Variant::Lstm),
            "lstm-am" | "lstm_am" | "attention" => Ok(Variant::LstmAttention),
            other => Err(Error::arg(format!("unknown model variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub layers: usize,
    pub hidden: usize,
    pub input_dim: usize,
    /// Attention scorer width; ignored by the baseline.
    pub attention_dim: usize,
    pub dropout: f64,
}

impl ModelConfig {
    /// Two layers of 128 units, attention width equal to the hidden size,
    /// dropout 0.3.
    pub fn new(variant: Variant, input_dim: usize) -> Self {
        ModelConfig {
            variant,
            layers: DEFAULT_LAYERS,
            hidden: DEFAULT_HIDDEN,
            input_dim,
            attention_dim: DEFAULT_HIDDEN,
            dropout: DEFAULT_DROPOUT,
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self.attention_dim = hidden;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.input_dim == 0 {
            return Err(Error::arg(format!(
                "model dimensions must be positive (layers {}, hidden {}, input {})",
                self.layers, self.hidden, self.input_dim
            )));
        }
        if self.variant.has_attention() && self.attention_dim == 0 {
            return Err(Error::arg("attention width must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::arg(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Gate blocks are stacked `[input, forget, candidate, output]`, each `H` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    pub w_input: Matrix,
    pub w_recurrent: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub w_score: Matrix,
    pub b_score: Vec<f64>,
    pub v_score: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layers: Vec<LstmLayerParams>,
    pub attention: Option<AttentionParams>,
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

fn uniform_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let bound = 1.0 / (cols as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.uniform_range(-bound, bound))
}

impl ModelParams {
    /// All-zero parameters of the configured shapes.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let layers = (0..config.layers)
            .map(|l| {
                let d = if l == 0 { config.input_dim } else { h };
                LstmLayerParams {
                    w_input: Matrix::zeros(4 * h, d),
                    w_recurrent: Matrix::zeros(4 * h, h),
                    bias: vec![0.0; 4 * h],
                }
            })
            .collect();
        let attention = config.variant.has_attention().then(|| AttentionParams {
            w_score: Matrix::zeros(config.attention_dim, h),
            b_score: vec![0.0; config.attention_dim],
            v_score: vec![0.0; config.attention_dim],
        });
        Ok(ModelParams {
            config,
            layers,
            attention,
            w_out: Matrix::zeros(RiskLevel::COUNT, h),
            b_out: vec![0.0; RiskLevel::COUNT],
        })
    }

    /// Weights uniform in ±1/√fan_in, biases zero except the forget-gate
    /// block which starts at 1. Draw order: each layer's input then recurrent
    /// weights, the attention matrix and vector, the output matrix.
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        let mut p = ModelParams::zeros(config)?;
        let h = config.hidden;
        for layer in &mut p.layers {
            layer.w_input = uniform_matrix(rng, 4 * h, layer.w_input.cols());
            layer.w_recurrent = uniform_matrix(rng, 4 * h, h);
            layer.bias[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
        }
        if let Some(att) = &mut p.attention {
            att.w_score = uniform_matrix(rng, config.attention_dim, h);
            let bound = 1.0 / (config.attention_dim as f64).sqrt();
            att.v_score = (0..config.attention_dim)
                .map(|_| rng.uniform_range(-bound, bound))
                .collect();
        }
        p.w_out = uniform_matrix(rng, RiskLevel::COUNT, h);
        Ok(p)
    }

    pub fn zeros_like(&self) -> ModelParams {
        ModelParams::zeros(self.config).expect("validated config")
    }

    /// Parameter tensors in checkpoint / optimizer order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.w_input"), l.w_input.as_slice()));
            out.push((format!("layer{i}.w_recurrent"), l.w_recurrent.as_slice()));
            out.push((format!("layer{i}.bias"), &l.bias));
        }
        if let Some(a) = &self.attention {
            out.push(("attention.w_score".into(), a.w_score.as_slice()));
            out.push(("attention.b_score".into(), &a.b_score));
            out.push(("attention.v_score".into(), &a.v_score));
        }
        out.push(("w_out".into(), self.w_out.as_slice()));
        out.push(("b_out".into(), &self.b_out));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.w_input.as_mut_slice());
            out.push(l.w_recurrent.as_mut_slice());
            out.push(&mut l.bias);
        }
        if let Some(a) = &mut self.attention {
            out.push(a.w_score.as_mut_slice());
            out.push(&mut a.b_score);
            out.push(&mut a.v_score);
        }
        out.push(self.w_out.as_mut_slice());
        out.push(&mut self.b_out);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.1.len() == y.1.len())
    }

    /// `self += scale * other` over every tensor.
    pub fn add_scaled(&mut self, scale: f64, other: &ModelParams) {
        let src: Vec<Vec<f64>> = other.tensors().into_iter().map(|(_, t)| t.to_vec()).collect();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn fill(&mut self, v: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shapes() {
        let cfg = ModelConfig::new(Variant::LstmAttention, 8);
        let p = ModelParams::init(cfg, &mut Rng::new(1)).unwrap();
        assert_eq!(p.layers.len(), 2);
        assert_eq!(p.layers[0].w_input.shape(), (512, 8));
        assert_eq!(p.layers[0].w_recurrent.shape(), (512, 128));
        assert_eq!(p.layers[0].bias.len(), 512);
        assert_eq!(p.layers[1].w_input.shape(), (512, 128));
        assert_eq!(p.attention.as_ref().unwrap().w_score.shape(), (128, 128));
        assert_eq!(p.w_out.shape(), (3, 128));
        assert_eq!(p.config.dropout, 0.3);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = ModelConfig::new(Variant::Lstm, 5).with_hidden(16);
        let a = ModelParams::init(cfg, &mut Rng::new(4)).unwrap();
        let b = ModelParams::init(cfg, &mut Rng::new(4)).unwrap();
        assert_eq!(a, b);
        assert!(a.attention.is_none());
        let bound = 1.0 / 5f64.sqrt();
        assert!(a.layers[0].w_input.as_slice().iter().all(|w| w.abs() <= bound));
        for (i, b) in a.layers[0].bias.iter().enumerate() {
            let want = if (16..32).contains(&i) { 1.0 } else { 0.0 };
            assert_eq!(*b, want);
        }
        assert!(a.b_out.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn zero_dims_rejected() {
        let mut cfg = ModelConfig::new(Variant::Lstm, 0);
        assert!(ModelParams::init(cfg, &mut Rng::new(0)).is_err());
        cfg.input_dim = 3;
        cfg.hidden = 0;
        assert!(ModelParams::zeros(cfg).is_err());
        cfg.hidden = 4;
        cfg.dropout = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn variant_names() {
        assert_eq!("lstm".parse::<Variant>().unwrap(), Variant::Lstm);
        assert_eq!("lstm-am".parse::<Variant>().unwrap(), Variant::LstmAttention);
        assert!("gru".parse::<Variant>().is_err());
    }
}
