//! Clipped surrogate objectives and their analytic gradients.
//!
//! Both objectives walk every response token, form the importance ratio
//! against the stored old-policy log-probabilities, and apply the
//! pessimistic min/clip structure. Branch trajectories condition on their
//! refined prompt for numerator and denominator alike, and their injected
//! prefix tokens are prompt tokens: no loss term exists for them.
//!
//! Subgradient convention at min/clip ties: take the unclipped branch.
//! Saturated clipping blocks the gradient; the interior passes it.

use crate::error::{Error, Result};
use crate::policy::{
    accumulate_from_logit_grad, forward_window, kl_from_logprobs, logprob_entropy_under, Gradients,
    PolicyParams,
};

use super::{LossAgg, LossBatch, TrainConfig};

#[derive(Debug, Clone)]
pub struct ObjectiveOutcome {
    pub value: f64,
    pub grad: Gradients,
    /// Per-token surrogate terms contributed; always equals the batch's
    /// response-token count (the token-mean denominator).
    pub token_terms: usize,
}

/// Importance ratios per trajectory per token under `params`, for audits.
pub fn token_ratios(batch: &LossBatch, params: &PolicyParams) -> Result<Vec<Vec<f64>>> {
    batch
        .items
        .iter()
        .map(|item| {
            let (lp, _) = logprob_entropy_under(params, &item.prompt, &item.tokens)?;
            Ok(lp
                .iter()
                .zip(&item.logprobs_old)
                .map(|(new, old)| (new - old).exp())
                .collect())
        })
        .collect()
}

fn core(
    batch: &LossBatch,
    params: &PolicyParams,
    eps_low: f64,
    eps_high: f64,
    agg: LossAgg,
    kl: Option<(f64, &PolicyParams)>,
) -> Result<ObjectiveOutcome> {
    let denom = batch.token_count() as f64;
    let n_items = batch.items.len() as f64;
    let vocab = params.dims.vocab;
    let mut value = 0.0;
    let mut grad = Gradients::zeros(params.dims);
    let mut token_terms = 0usize;
    let mut dlogits = vec![0.0; vocab];

    for (i, item) in batch.items.iter().enumerate() {
        if item.tokens.is_empty() {
            continue;
        }
        let scale = match agg {
            LossAgg::TokenMean => 1.0 / denom,
            LossAgg::SequenceMean => 1.0 / (n_items * item.tokens.len() as f64),
        };
        for t in 0..item.tokens.len() {
            let fwd = forward_window(params, &item.prompt, &item.tokens, t, t)?;
            let tok = item.tokens[t] as usize;
            let ratio = (fwd.logprobs[tok] - item.logprobs_old[t]).exp();
            if !ratio.is_finite() {
                return Err(Error::NonFiniteRatio {
                    trajectory: i,
                    position: t,
                });
            }
            let a = item.advantage;
            let term = super::clipped_term(ratio, a, eps_low, eps_high);
            // subgradient through min/clip: ties take the unclipped branch,
            // which also holds on the whole clip interior; a saturated clip
            // blocks the gradient
            let weight = if ratio * a <= term { ratio * a } else { 0.0 };
            value += scale * term;
            token_terms += 1;

            let ws = weight * scale;
            if ws != 0.0 {
                for (u, &lp) in fwd.logprobs.iter().enumerate() {
                    dlogits[u] = -ws * lp.exp();
                }
                dlogits[tok] += ws;
            } else {
                dlogits.iter_mut().for_each(|g| *g = 0.0);
            }

            if let Some((beta, params_ref)) = kl {
                if beta > 0.0 {
                    let fref = forward_window(params_ref, &item.prompt, &item.tokens, t, t)?;
                    let kl_t = kl_from_logprobs(&fwd.logprobs, &fref.logprobs);
                    value -= beta * scale * kl_t;
                    for ((g, &lp), &lq) in dlogits.iter_mut().zip(&fwd.logprobs).zip(&fref.logprobs)
                    {
                        *g -= beta * scale * lp.exp() * ((lp - lq) - kl_t);
                    }
                }
            }

            if dlogits.iter().any(|&g| g != 0.0) {
                accumulate_from_logit_grad(params, &fwd, &dlogits, &mut grad);
            }
        }
    }
    Ok(ObjectiveOutcome {
        value,
        grad,
        token_terms,
    })
}

/// Joint objective over a group set with asymmetric (clip-higher) bounds and
/// no KL term. Token-mean aggregation divides the summed per-token surrogate
/// by the total response-token count; sequence-mean averages per-trajectory
/// means.
pub fn cure_objective_and_gradient(
    batch: &LossBatch,
    params: &PolicyParams,
    cfg: &TrainConfig,
) -> Result<ObjectiveOutcome> {
    core(batch, params, cfg.eps_low, cfg.eps_high, cfg.loss_agg, None)
}

/// Baseline objective: sequence-mean aggregation, symmetric clip at
/// `eps_low`, minus `beta_kl` times the exact per-token categorical KL to
/// the frozen reference policy.
pub fn grpo_objective_and_gradient(
    batch: &LossBatch,
    params: &PolicyParams,
    params_ref: &PolicyParams,
    cfg: &TrainConfig,
) -> Result<ObjectiveOutcome> {
    core(
        batch,
        params,
        cfg.eps_low,
        cfg.eps_low,
        LossAgg::SequenceMean,
        Some((cfg.beta_kl, params_ref)),
    )
}
