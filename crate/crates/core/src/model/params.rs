use rand::Rng;

use crate::numcore::{Matrix, Parameters};

use super::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub attn_norm: Matrix,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub mlp_norm: Matrix,
    pub w_up: Matrix,
    pub w_down: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagHead {
    pub weight: Matrix,
    pub bias: Matrix,
}

/// All trainable tensors. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embed: Matrix,
    pub layers: Vec<LayerParams>,
    pub final_norm: Matrix,
    pub lm_head: Option<Matrix>,
    pub tag_head: Option<TagHead>,
}

impl ModelParams {
    /// Gaussian init with `cfg.init_std`; output projections are scaled by
    /// `1/sqrt(2·layers)`. Norm gains start at 1. The LM head is present
    /// unless tied to the embedding; the tagging head is not.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let std = cfg.init_std;
        let out_std = std / (2.0 * cfg.layers as f64).sqrt();
        let embed = Matrix::random_normal(cfg.vocab_size, d, std, rng);
        let layers = (0..cfg.layers)
            .map(|_| LayerParams {
                attn_norm: Matrix::filled(1, d, 1.0),
                wq: Matrix::random_normal(d, d, std, rng),
                wk: Matrix::random_normal(d, d, std, rng),
                wv: Matrix::random_normal(d, d, std, rng),
                wo: Matrix::random_normal(d, d, out_std, rng),
                mlp_norm: Matrix::filled(1, d, 1.0),
                w_up: Matrix::random_normal(d, cfg.d_ff, std, rng),
                w_down: Matrix::random_normal(cfg.d_ff, d, out_std, rng),
            })
            .collect();
        Self {
            embed,
            layers,
            final_norm: Matrix::filled(1, d, 1.0),
            lm_head: (!cfg.tie_embeddings).then(|| Matrix::random_normal(d, cfg.vocab_size, std, rng)),
            tag_head: None,
        }
    }

    /// Same structure, all zeros.
    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            embed: z(&self.embed),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    attn_norm: z(&l.attn_norm),
                    wq: z(&l.wq),
                    wk: z(&l.wk),
                    wv: z(&l.wv),
                    wo: z(&l.wo),
                    mlp_norm: z(&l.mlp_norm),
                    w_up: z(&l.w_up),
                    w_down: z(&l.w_down),
                })
                .collect(),
            final_norm: z(&self.final_norm),
            lm_head: self.lm_head.as_ref().map(z),
            tag_head: self.tag_head.as_ref().map(|h| TagHead {
                weight: z(&h.weight),
                bias: z(&h.bias),
            }),
        }
    }

    /// Backbone tensors only (embedding, layers, final norm).
    pub fn backbone(&self) -> Vec<(String, &Matrix)> {
        self.tensors()
            .into_iter()
            .filter(|(n, _)| !n.starts_with("lm_head") && !n.starts_with("tag_head"))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn is_norm_gain(name: &str) -> bool {
        name.ends_with("norm")
    }
}

impl Parameters for ModelParams {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out: Vec<(String, &Matrix)> = vec![("embed".into(), &self.embed)];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.attn_norm"), &l.attn_norm));
            out.push((format!("layers.{i}.wq"), &l.wq));
            out.push((format!("layers.{i}.wk"), &l.wk));
            out.push((format!("layers.{i}.wv"), &l.wv));
            out.push((format!("layers.{i}.wo"), &l.wo));
            out.push((format!("layers.{i}.mlp_norm"), &l.mlp_norm));
            out.push((format!("layers.{i}.w_up"), &l.w_up));
            out.push((format!("layers.{i}.w_down"), &l.w_down));
        }
        out.push(("final_norm".into(), &self.final_norm));
        if let Some(h) = &self.lm_head {
            out.push(("lm_head".into(), h));
        }
        if let Some(h) = &self.tag_head {
            out.push(("tag_head.weight".into(), &h.weight));
            out.push(("tag_head.bias".into(), &h.bias));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out: Vec<(String, &mut Matrix)> = vec![("embed".into(), &mut self.embed)];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layers.{i}.attn_norm"), &mut l.attn_norm));
            out.push((format!("layers.{i}.wq"), &mut l.wq));
            out.push((format!("layers.{i}.wk"), &mut l.wk));
            out.push((format!("layers.{i}.wv"), &mut l.wv));
            out.push((format!("layers.{i}.wo"), &mut l.wo));
            out.push((format!("layers.{i}.mlp_norm"), &mut l.mlp_norm));
            out.push((format!("layers.{i}.w_up"), &mut l.w_up));
            out.push((format!("layers.{i}.w_down"), &mut l.w_down));
        }
        out.push(("final_norm".into(), &mut self.final_norm));
        if let Some(h) = &mut self.lm_head {
            out.push(("lm_head".into(), h));
        }
        if let Some(h) = &mut self.tag_head {
            out.push(("tag_head.weight".into(), &mut h.weight));
            out.push(("tag_head.bias".into(), &mut h.bias));
        }
        out
    }
}
