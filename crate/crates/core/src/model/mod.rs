//! Small transformer encoder with a switchable attention mode, an MNTP
//! language-model head and a replaceable linear tagging head.

pub mod checkpoint;
mod config;
mod params;
mod transformer;

pub use checkpoint::{Checkpoint, CheckpointMeta, Stage};
pub use config::{AttentionMode, ModelConfig};
pub use params::{LayerParams, ModelParams, TagHead};
pub use transformer::{backward, check_ids, forward_cached, ForwardCache};

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// Configuration plus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, rng);
        Ok(Self { config, params })
    }

    /// Hidden states in the given attention mode. The weights are the same
    /// in both modes; only the attention mask differs.
    pub fn forward(&self, ids: &[u32], mode: AttentionMode) -> Result<Matrix> {
        forward_cached(&self.params, &self.config, ids, mode).map(|(h, _)| h)
    }

    pub fn forward_cached(&self, ids: &[u32], mode: AttentionMode) -> Result<(Matrix, ForwardCache)> {
        forward_cached(&self.params, &self.config, ids, mode)
    }

    pub fn backward(&self, cache: &ForwardCache, dhidden: &Matrix, grads: &mut ModelParams) -> Result<()> {
        backward(&self.params, &self.config, cache, dhidden, grads)
    }

    /// Row `i` scores the token at position `i + 1`.
    pub fn mntp_logits(&self, hidden: &Matrix) -> Result<Matrix> {
        mntp_logits(&self.params, &self.config, hidden)
    }

    pub fn tag_logits(&self, hidden: &Matrix) -> Result<Matrix> {
        tag_logits(&self.params, hidden)
    }

    /// Drops the LM head and installs a fresh tagging head.
    pub fn replace_head<R: Rng + ?Sized>(&self, n_labels: usize, init_scale: f64, rng: &mut R) -> Self {
        let mut config = self.config.clone();
        config.n_labels = n_labels;
        Self {
            config,
            params: replace_head(&self.params, n_labels, init_scale, rng),
        }
    }

    /// Argmax label per position.
    pub fn predict_labels(&self, ids: &[u32]) -> Result<Vec<usize>> {
        let hidden = self.forward(ids, self.config.attention_mode)?;
        let logits = self.tag_logits(&hidden)?;
        Ok((0..logits.rows()).map(|r| logits.row_argmax(r)).collect())
    }
}

pub fn mntp_logits(params: &ModelParams, config: &ModelConfig, hidden: &Matrix) -> Result<Matrix> {
    if config.tie_embeddings {
        return hidden.matmul_nt(&params.embed);
    }
    let head = params.lm_head.as_ref().ok_or(Error::MissingHead("language-model"))?;
    hidden.matmul(head)
}

/// Accumulates the LM-head gradient (into the embedding when tied) and
/// returns `dhidden`.
pub fn mntp_logits_backward(
    params: &ModelParams,
    config: &ModelConfig,
    hidden: &Matrix,
    dlogits: &Matrix,
    grads: &mut ModelParams,
) -> Result<Matrix> {
    if config.tie_embeddings {
        grads.embed.add_assign(&dlogits.matmul_tn(hidden)?)?;
        return dlogits.matmul(&params.embed);
    }
    let head = params.lm_head.as_ref().ok_or(Error::MissingHead("language-model"))?;
    let ghead = grads.lm_head.as_mut().ok_or(Error::MissingHead("language-model"))?;
    ghead.add_assign(&hidden.matmul_tn(dlogits)?)?;
    dlogits.matmul_nt(head)
}

pub fn tag_logits(params: &ModelParams, hidden: &Matrix) -> Result<Matrix> {
    let head = params.tag_head.as_ref().ok_or(Error::MissingHead("tagging"))?;
    let mut logits = hidden.matmul(&head.weight)?;
    let bias = head.bias.data();
    for r in 0..logits.rows() {
        for (v, b) in logits.row_mut(r).iter_mut().zip(bias) {
            *v += b;
        }
    }
    Ok(logits)
}

pub fn tag_logits_backward(
    params: &ModelParams,
    hidden: &Matrix,
    dlogits: &Matrix,
    grads: &mut ModelParams,
) -> Result<Matrix> {
    let head = params.tag_head.as_ref().ok_or(Error::MissingHead("tagging"))?;
    let ghead = grads.tag_head.as_mut().ok_or(Error::MissingHead("tagging"))?;
    ghead.weight.add_assign(&hidden.matmul_tn(dlogits)?)?;
    let gb = ghead.bias.data_mut();
    for r in 0..dlogits.rows() {
        for (g, d) in gb.iter_mut().zip(dlogits.row(r)) {
            *g += d;
        }
    }
    dlogits.matmul_nt(&head.weight)
}

/// Backbone carried over unchanged; LM head removed; tagging head drawn
/// from N(0, init_scale²) with a zero bias.
pub fn replace_head<R: Rng + ?Sized>(
    params: &ModelParams,
    n_labels: usize,
    init_scale: f64,
    rng: &mut R,
) -> ModelParams {
    let d = params.final_norm.cols();
    ModelParams {
        embed: params.embed.clone(),
        layers: params.layers.clone(),
        final_norm: params.final_norm.clone(),
        lm_head: None,
        tag_head: Some(TagHead {
            weight: Matrix::random_normal(d, n_labels, init_scale, rng),
            bias: Matrix::zeros(1, n_labels),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{cross_entropy, finite_diff_check, Parameters, IGNORE};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            layers: 2,
            d_model: 32,
            heads: 4,
            d_ff: 64,
            vocab_size: 40,
            max_seq: 16,
            n_labels: 7,
            init_std: 0.3,
            ..Default::default()
        }
    }

    fn ids(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> Vec<u32> {
        (0..n).map(|_| rng.random_range(0..vocab as u32)).collect()
    }

    #[test]
    fn causal_prefix_is_independent_of_suffix() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Model::init(tiny_config(), &mut rng).unwrap();
        let a = ids(&mut rng, 10, 40);
        let mut b = a.clone();
        for id in &mut b[6..] {
            *id = (*id + 1) % 40;
        }
        let ha = m.forward(&a, AttentionMode::Causal).unwrap();
        let hb = m.forward(&b, AttentionMode::Causal).unwrap();
        for t in 0..6 {
            assert_eq!(ha.row(t), hb.row(t));
        }
        assert_ne!(ha.row(6), hb.row(6));
    }

    #[test]
    fn single_position_modes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Model::init(tiny_config(), &mut rng).unwrap();
        let h1 = m.forward(&[5], AttentionMode::Causal).unwrap();
        let h2 = m.forward(&[5], AttentionMode::Bidirectional).unwrap();
        assert_eq!(h1, h2);
    }

    #[test]
    fn bidirectional_sees_the_future() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Model::init(tiny_config(), &mut rng).unwrap();
        let a = ids(&mut rng, 8, 40);
        let mut b = a.clone();
        b[7] = (b[7] + 3) % 40;
        let ha = m.forward(&a, AttentionMode::Bidirectional).unwrap();
        let hb = m.forward(&b, AttentionMode::Bidirectional).unwrap();
        let diff: f64 = ha.row(0).iter().zip(hb.row(0)).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 0.0);
    }

    #[test]
    fn permutation_equivariant_without_rope() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = ModelConfig {
            rope: false,
            ..tiny_config()
        };
        let m = Model::init(cfg, &mut rng).unwrap();
        let a = ids(&mut rng, 6, 40);
        let perm = [3, 0, 5, 1, 4, 2];
        let b: Vec<u32> = perm.iter().map(|&i| a[i]).collect();
        let ha = m.forward(&a, AttentionMode::Bidirectional).unwrap();
        let hb = m.forward(&b, AttentionMode::Bidirectional).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            for (x, y) in hb.row(j).iter().zip(ha.row(i)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Model::init(tiny_config(), &mut rng).unwrap();
        assert!(matches!(
            m.forward(&[0; 17], AttentionMode::Causal),
            Err(Error::SequenceLength { .. })
        ));
        assert!(matches!(m.forward(&[40], AttentionMode::Causal), Err(Error::InvalidToken(40))));
    }

    #[test]
    fn head_shapes_and_zero_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = Model::init(tiny_config(), &mut rng).unwrap();
        let hidden = Matrix::zeros(3, 32);
        let logits = m.mntp_logits(&hidden).unwrap();
        assert_eq!(logits.shape(), (3, 40));
        assert!(logits.data().iter().all(|&v| v == 0.0));
        assert!(matches!(m.tag_logits(&hidden), Err(Error::MissingHead(_))));

        let tagged = m.replace_head(7, 0.1, &mut rng);
        assert_eq!(tagged.tag_logits(&hidden).unwrap().shape(), (3, 7));
        assert!(tagged.tag_logits(&hidden).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(matches!(tagged.mntp_logits(&hidden), Err(Error::MissingHead(_))));
    }

    #[test]
    fn replace_head_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = Model::init(tiny_config(), &mut rng).unwrap();
        let a = m.replace_head(7, 0.0, &mut ChaCha8Rng::seed_from_u64(1));
        let backbone = |p: &ModelParams| {
            p.backbone().into_iter().map(|(n, t)| (n, t.clone())).collect::<Vec<_>>()
        };
        assert_eq!(backbone(&a.params), backbone(&m.params));
        let h = a.forward(&[1, 2, 3], AttentionMode::Bidirectional).unwrap();
        let logits = a.tag_logits(&h).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));

        let b1 = m.replace_head(7, 0.5, &mut ChaCha8Rng::seed_from_u64(9));
        let b2 = m.replace_head(7, 0.5, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(b1.params.tag_head, b2.params.tag_head);
        assert!(b1.params.lm_head.is_none());
    }

    fn mntp_loss(model: &Model, masked: &[u32], targets: &[usize]) -> f64 {
        let h = model.forward(masked, AttentionMode::Bidirectional).unwrap();
        let logits = model.mntp_logits(&h).unwrap();
        cross_entropy(&logits, targets, IGNORE).unwrap().0
    }

    #[test]
    fn mntp_gradients_pass_finite_difference_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut model = Model::init(tiny_config(), &mut rng).unwrap();
        let seq = ids(&mut rng, 9, 40);
        let targets = vec![seq[1] as usize, IGNORE, seq[3] as usize, IGNORE, IGNORE, seq[6] as usize, IGNORE, 2, IGNORE];

        let (h, cache) = model.forward_cached(&seq, AttentionMode::Bidirectional).unwrap();
        let logits = model.mntp_logits(&h).unwrap();
        let (_, dlogits) = cross_entropy(&logits, &targets, IGNORE).unwrap();
        let mut grads = model.params.zeros_like();
        let dh = mntp_logits_backward(&model.params, &model.config, &h, &dlogits, &mut grads).unwrap();
        model.backward(&cache, &dh, &mut grads).unwrap();

        let cfg = model.config.clone();
        let report = finite_diff_check(
            |p: &ModelParams| {
                let m = Model { config: cfg.clone(), params: p.clone() };
                mntp_loss(&m, &seq, &targets)
            },
            &mut model.params,
            &grads,
            1e-4,
            64,
            &mut rng,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn tagging_gradients_pass_finite_difference_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base = Model::init(tiny_config(), &mut rng).unwrap();
        let mut model = base.replace_head(7, 0.3, &mut rng);
        for mode in [AttentionMode::Bidirectional, AttentionMode::Causal] {
            let seq = ids(&mut rng, 7, 40);
            let labels: Vec<usize> = (0..7).map(|_| rng.random_range(0..7)).collect();
            let (h, cache) = model.forward_cached(&seq, mode).unwrap();
            let logits = model.tag_logits(&h).unwrap();
            let (_, dlogits) = cross_entropy(&logits, &labels, IGNORE).unwrap();
            let mut grads = model.params.zeros_like();
            let dh = tag_logits_backward(&model.params, &h, &dlogits, &mut grads).unwrap();
            model.backward(&cache, &dh, &mut grads).unwrap();
            assert_eq!(grads.tensors().len(), model.params.tensors().len());

            let cfg = model.config.clone();
            let report = finite_diff_check(
                |p: &ModelParams| {
                    let m = Model { config: cfg.clone(), params: p.clone() };
                    let h = m.forward(&seq, mode).unwrap();
                    cross_entropy(&m.tag_logits(&h).unwrap(), &labels, IGNORE).unwrap().0
                },
                &mut model.params,
                &grads,
                1e-4,
                64,
                &mut rng,
            )
            .unwrap();
            assert!(report.max_rel_err < 1e-4, "{mode:?} {report:?}");
        }
    }
}
