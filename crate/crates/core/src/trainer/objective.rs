use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datapipe::TaggedSequence;
use crate::error::{Error, Result};
use crate::model::{mntp_logits, mntp_logits_backward, tag_logits, tag_logits_backward, AttentionMode, Model, ModelParams};
use crate::numcore::{cross_entropy, IGNORE};

/// Redraws of the mask pattern before a sequence is skipped.
pub const MASK_RETRIES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MntpBatch {
    pub ids: Vec<u32>,
    pub masked_ids: Vec<u32>,
    /// Positions `i` with `i` visible and `i + 1` masked.
    pub loss_positions: Vec<usize>,
    /// `ids[i + 1]` for each loss position.
    pub targets: Vec<u32>,
}

impl MntpBatch {
    /// Builds the batch for a fixed mask pattern.
    pub fn from_mask(ids: &[u32], masked: &[bool], mask_id: u32) -> Self {
        let masked_ids = ids
            .iter()
            .zip(masked)
            .map(|(&id, &m)| if m { mask_id } else { id })
            .collect();
        let loss_positions: Vec<usize> = (0..ids.len().saturating_sub(1))
            .filter(|&i| !masked[i] && masked[i + 1])
            .collect();
        let targets = loss_positions.iter().map(|&i| ids[i + 1]).collect();
        Self {
            ids: ids.to_vec(),
            masked_ids,
            loss_positions,
            targets,
        }
    }

}

fn check_ratio(mask_ratio: f64) -> Result<()> {
    if !(mask_ratio > 0.0 && mask_ratio < 1.0) {
        return Err(Error::Config {
            key: "mask_ratio".into(),
            reason: format!("{mask_ratio} is outside (0, 1)"),
        });
    }
    Ok(())
}

/// Independent Bernoulli mask per position. Returns `None` when
/// [`MASK_RETRIES`] draws all produce no loss position.
pub fn make_mntp_batch<R: Rng + ?Sized>(
    ids: &[u32],
    mask_ratio: f64,
    mask_id: u32,
    rng: &mut R,
) -> Result<Option<MntpBatch>> {
    check_ratio(mask_ratio)?;
    if ids.len() < 2 {
        return Err(Error::SequenceLength {
            len: ids.len(),
            min: 2,
            max: usize::MAX,
        });
    }
    for _ in 0..MASK_RETRIES {
        let masked: Vec<bool> = ids.iter().map(|_| rng.random::<f64>() < mask_ratio).collect();
        let batch = MntpBatch::from_mask(ids, &masked, mask_id);
        if !batch.loss_positions.is_empty() {
            return Ok(Some(batch));
        }
    }
    Ok(None)
}

fn require_bidirectional(model: &Model, what: &'static str) -> Result<()> {
    if model.config.attention_mode != AttentionMode::Bidirectional {
        return Err(Error::NotBidirectional(what));
    }
    Ok(())
}

/// Adds the MNTP gradient of one batch into `grads` and returns its mean loss.
pub fn mntp_accumulate(model: &Model, batch: &MntpBatch, grads: &mut ModelParams) -> Result<f64> {
    require_bidirectional(model, "masked next-token pretraining")?;
    if batch.loss_positions.is_empty() {
        return Ok(0.0);
    }
    let (hidden, cache) = model.forward_cached(&batch.masked_ids, AttentionMode::Bidirectional)?;
    let logits = mntp_logits(&model.params, &model.config, &hidden)?;
    let mut targets = vec![IGNORE; batch.ids.len()];
    for (&i, &t) in batch.loss_positions.iter().zip(&batch.targets) {
        targets[i] = t as usize;
    }
    let (loss, dlogits) = cross_entropy(&logits, &targets, IGNORE)?;
    let dhidden = mntp_logits_backward(&model.params, &model.config, &hidden, &dlogits, grads)?;
    model.backward(&cache, &dhidden, grads)?;
    Ok(loss)
}

/// Mean MNTP loss over the batch's loss positions and its full gradient.
pub fn mntp_step(model: &Model, batch: &MntpBatch) -> Result<(f64, ModelParams)> {
    let mut grads = model.params.zeros_like();
    let loss = mntp_accumulate(model, batch, &mut grads)?;
    Ok((loss, grads))
}

/// Adds the tagging gradient of one sequence into `grads` and returns the
/// mean loss over every position, `O` included.
pub fn finetune_accumulate(model: &Model, seq: &TaggedSequence, grads: &mut ModelParams) -> Result<f64> {
    require_bidirectional(model, "fine-tuning")?;
    seq.validate(model.config.n_labels)?;
    let (hidden, cache) = model.forward_cached(&seq.ids, AttentionMode::Bidirectional)?;
    let logits = tag_logits(&model.params, &hidden)?;
    let (loss, dlogits) = cross_entropy(&logits, &seq.labels, IGNORE)?;
    let dhidden = tag_logits_backward(&model.params, &hidden, &dlogits, grads)?;
    model.backward(&cache, &dhidden, grads)?;
    Ok(loss)
}

pub fn finetune_step(model: &Model, seq: &TaggedSequence) -> Result<(f64, ModelParams)> {
    let mut grads = model.params.zeros_like();
    let loss = finetune_accumulate(model, seq, &mut grads)?;
    Ok((loss, grads))
}
