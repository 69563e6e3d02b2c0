//! Tiny differentiable autoregressive policy.
//!
//! The model is a one-hidden-layer network over a fixed window of token
//! embeddings: the last `context` tokens of `prompt || generated` (PAD-padded
//! on the left) are embedded, concatenated, pushed through a tanh layer, and
//! projected to vocabulary logits.
//!
//! Two distributions matter and they are not the same thing:
//! * the *policy* distribution — softmax of the raw logits at temperature
//!   1.0 — defines per-token log-probabilities and entropies stored on every
//!   trajectory, no matter how sampling was configured;
//! * the *sampling* distribution — temperature-scaled, optionally top-p
//!   truncated — is only an exploration device for drawing tokens.

mod checkpoint;
mod grad;

pub use checkpoint::{Checkpoint, OptimizerState};
pub(crate) use grad::accumulate_from_logit_grad;
pub use grad::{weighted_logprob_gradient, Gradients, WeightedSequence};

use serde::{Deserialize, Serialize};

use crate::env::{TokenId, Vocab};
use crate::error::{Error, Result};
use crate::rng::{Rng, SeedPath};

/// Network shape. All parameter vectors are row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab: usize,
    pub embed: usize,
    pub context: usize,
    pub hidden: usize,
}

impl ModelDims {
    pub fn input_dim(&self) -> usize {
        self.context * self.embed
    }

    pub fn param_count(&self) -> usize {
        self.vocab * self.embed
            + self.input_dim() * self.hidden
            + self.hidden
            + self.hidden * self.vocab
            + self.vocab
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 || self.embed == 0 || self.context == 0 || self.hidden == 0 {
            return Err(Error::Config(format!(
                "model dims must be positive with vocab >= 2, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn max_entropy(&self) -> f64 {
        (self.vocab as f64).ln()
    }
}

/// Policy parameters. A `clone()` is a deep snapshot with old-policy
/// semantics: value-equal to its source until either copy is updated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub dims: ModelDims,
    /// vocab x embed token embeddings.
    pub embeddings: Vec<f64>,
    /// (context*embed) x hidden weights.
    pub w1: Vec<f64>,
    /// hidden biases.
    pub b1: Vec<f64>,
    /// hidden x vocab output weights.
    pub w2: Vec<f64>,
    /// vocab output biases.
    pub b2: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(dims: ModelDims) -> Self {
        PolicyParams {
            dims,
            embeddings: vec![0.0; dims.vocab * dims.embed],
            w1: vec![0.0; dims.input_dim() * dims.hidden],
            b1: vec![0.0; dims.hidden],
            w2: vec![0.0; dims.hidden * dims.vocab],
            b2: vec![0.0; dims.vocab],
        }
    }

    /// Seeded init: embeddings and weights i.i.d. uniform in [-0.05, 0.05],
    /// biases zero. Near-zero logits put the initial policy close to
    /// uniform, so initial entropy sits near ln(vocab).
    pub fn init(dims: ModelDims, seed: &SeedPath) -> Self {
        let mut rng = seed.rng();
        let mut uniform = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| (rng.next_f64() * 2.0 - 1.0) * 0.05)
                .collect()
        };
        PolicyParams {
            dims,
            embeddings: uniform(dims.vocab * dims.embed),
            w1: uniform(dims.input_dim() * dims.hidden),
            b1: vec![0.0; dims.hidden],
            w2: uniform(dims.hidden * dims.vocab),
            b2: vec![0.0; dims.vocab],
        }
    }

    pub fn validate_shapes(&self) -> Result<()> {
        self.dims.validate()?;
        let checks = [
            (
                "embeddings",
                self.embeddings.len(),
                self.dims.vocab * self.dims.embed,
            ),
            (
                "w1",
                self.w1.len(),
                self.dims.input_dim() * self.dims.hidden,
            ),
            ("b1", self.b1.len(), self.dims.hidden),
            ("w2", self.w2.len(), self.dims.hidden * self.dims.vocab),
            ("b2", self.b2.len(), self.dims.vocab),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: expected {want} entries for dims {:?}, found {got}",
                    self.dims
                )));
            }
        }
        if !self
            .blocks()
            .iter()
            .all(|(_, b)| b.iter().all(|x| x.is_finite()))
        {
            return Err(Error::Config(
                "policy parameters contain non-finite entries".into(),
            ));
        }
        Ok(())
    }

    pub fn blocks(&self) -> [(&'static str, &[f64]); 5] {
        [
            ("embeddings", self.embeddings.as_slice()),
            ("w1", self.w1.as_slice()),
            ("b1", self.b1.as_slice()),
            ("w2", self.w2.as_slice()),
            ("b2", self.b2.as_slice()),
        ]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut Vec<f64>); 5] {
        [
            ("embeddings", &mut self.embeddings),
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ]
    }
}

/// Sampling knobs. Trajectory log-probabilities and entropies are recorded
/// from the temperature-1.0 policy distribution regardless of these values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            temperature: 1.0,
            top_p: 1.0,
            max_new_tokens: 32,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::Config("max_new_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

/// Where a trajectory came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    /// Sampled directly from a dataset query.
    Initial,
    /// Sampled from a refined prompt `query || parent.tokens[..t_star-1]`.
    Branch {
        parent_index: usize,
        /// 1-based critical position in the parent trajectory.
        t_star: usize,
        prefix_len: usize,
    },
}

/// One sampled rollout with its per-token records under the policy that
/// generated it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// The prompt actually conditioned on (query, or refined prompt for
    /// branches).
    pub prompt: Vec<TokenId>,
    /// Generated tokens, EOS included when emitted.
    pub tokens: Vec<TokenId>,
    /// log pi_old(token | state) at temperature 1.0, untruncated.
    pub logprobs_old: Vec<f64>,
    /// Policy entropy (nats) at each position, temperature 1.0, untruncated.
    pub entropies: Vec<f64>,
    pub origin: Origin,
    /// Hit the token cap without emitting EOS.
    pub truncated: bool,
    pub reward: f64,
    pub verified: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Per-position forward cache, kept around for backprop.
pub(crate) struct Forward {
    pub window: Vec<TokenId>,
    /// Concatenated window embeddings, length context*embed.
    pub x: Vec<f64>,
    /// tanh activations, length hidden.
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    /// Temperature-1.0 log softmax of the logits.
    pub logprobs: Vec<f64>,
}

/// The last `context` tokens of `prompt || gen[..upto]`, PAD-padded on the left.
fn context_window(
    dims: ModelDims,
    prompt: &[TokenId],
    gen: &[TokenId],
    upto: usize,
) -> Vec<TokenId> {
    let c = dims.context;
    let total = prompt.len() + upto;
    (0..c)
        .map(|k| {
            let g = total as i64 - c as i64 + k as i64;
            if g < 0 {
                Vocab::PAD
            } else if (g as usize) < prompt.len() {
                prompt[g as usize]
            } else {
                gen[g as usize - prompt.len()]
            }
        })
        .collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - m).exp()).sum();
    let ls = sum.ln();
    logits.iter().map(|&z| z - m - ls).collect()
}

pub(crate) fn entropy_from_logprobs(logprobs: &[f64]) -> f64 {
    let h: f64 = logprobs.iter().map(|&lp| -lp.exp() * lp).sum();
    h.clamp(0.0, (logprobs.len() as f64).ln())
}

/// Forward pass for the state `(prompt, gen[..upto])`. `position` only
/// labels the error diagnostic.
pub(crate) fn forward_window(
    params: &PolicyParams,
    prompt: &[TokenId],
    gen: &[TokenId],
    upto: usize,
    position: usize,
) -> Result<Forward> {
    let dims = params.dims;
    let window = context_window(dims, prompt, gen, upto);
    let (c, d, h, v) = (dims.context, dims.embed, dims.hidden, dims.vocab);

    let mut x = Vec::with_capacity(c * d);
    for &tok in &window {
        let base = tok as usize * d;
        x.extend_from_slice(&params.embeddings[base..base + d]);
    }

    let mut pre = params.b1.clone();
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            let row = &params.w1[i * h..(i + 1) * h];
            for (j, &w) in row.iter().enumerate() {
                pre[j] += xi * w;
            }
        }
    }
    let hidden: Vec<f64> = pre.iter().map(|&p| p.tanh()).collect();

    let mut logits = params.b2.clone();
    for (j, &hj) in hidden.iter().enumerate() {
        if hj != 0.0 {
            let row = &params.w2[j * v..(j + 1) * v];
            for (u, &w) in row.iter().enumerate() {
                logits[u] += hj * w;
            }
        }
    }
    if !logits.iter().all(|z| z.is_finite()) {
        return Err(Error::NonFiniteLogits { position });
    }
    let logprobs = log_softmax(&logits);
    Ok(Forward {
        window,
        x,
        hidden,
        logits,
        logprobs,
    })
}

/// Next-token distribution over the vocabulary for a context, at the given
/// temperature. Entries are strictly positive and sum to 1 within 1e-12.
pub fn step_distribution(
    params: &PolicyParams,
    context: &[TokenId],
    temperature: f64,
) -> Result<Vec<f64>> {
    let fwd = forward_window(params, context, &[], 0, context.len())?;
    Ok(distribution_at(&fwd.logits, temperature))
}

fn distribution_at(logits: &[f64], temperature: f64) -> Vec<f64> {
    debug_assert!(temperature > 0.0);
    let scaled: Vec<f64> = logits.iter().map(|&z| z / temperature).collect();
    log_softmax(&scaled).iter().map(|&lp| lp.exp()).collect()
}

/// Shannon entropy in nats of a probability vector, with 0 ln 0 := 0.
pub fn token_entropy(dist: &[f64]) -> f64 {
    let h: f64 = dist
        .iter()
        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
        .sum();
    h.clamp(0.0, (dist.len() as f64).ln())
}

fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Nucleus sampling: the smallest prefix of tokens in (probability desc,
/// id asc) order whose mass reaches `top_p`, renormalized.
fn sample_top_p(probs: &[f64], top_p: f64, u: f64) -> usize {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    let mut kept = 0;
    let mut mass = 0.0;
    for (k, &i) in order.iter().enumerate() {
        mass += probs[i];
        kept = k + 1;
        if mass >= top_p - 1e-12 {
            break;
        }
    }
    let mut acc = 0.0;
    for &i in &order[..kept] {
        acc += probs[i] / mass;
        if u < acc {
            return i;
        }
    }
    order[kept - 1]
}

fn sample_one(
    params: &PolicyParams,
    prompt: &[TokenId],
    sampler: &SamplerConfig,
    eos: TokenId,
    rng: &mut Rng,
) -> Result<Trajectory> {
    let plain = sampler.temperature == 1.0 && sampler.top_p >= 1.0;
    let mut tokens: Vec<TokenId> = Vec::new();
    let mut logprobs_old = Vec::new();
    let mut entropies = Vec::new();
    let truncated;
    loop {
        let t = tokens.len();
        let fwd = forward_window(params, prompt, &tokens, t, t)?;
        let u = rng.next_f64();
        let tok = if plain {
            let probs: Vec<f64> = fwd.logprobs.iter().map(|&lp| lp.exp()).collect();
            sample_index(&probs, u)
        } else {
            let probs = distribution_at(&fwd.logits, sampler.temperature);
            if sampler.top_p >= 1.0 {
                sample_index(&probs, u)
            } else {
                sample_top_p(&probs, sampler.top_p, u)
            }
        } as TokenId;
        tokens.push(tok);
        logprobs_old.push(fwd.logprobs[tok as usize]);
        entropies.push(entropy_from_logprobs(&fwd.logprobs));
        if tok == eos {
            truncated = false;
            break;
        }
        if tokens.len() == sampler.max_new_tokens {
            truncated = true;
            break;
        }
    }
    Ok(Trajectory {
        prompt: prompt.to_vec(),
        tokens,
        logprobs_old,
        entropies,
        origin: Origin::Initial,
        truncated,
        reward: 0.0,
        verified: false,
    })
}

/// Sample `n` rollouts from a prompt. Rollout `j` is a pure function of
/// `(params, prompt, sampler, rng_path.child(j))`, so results are
/// independent of batch composition and worker count.
pub fn sample_rollouts(
    params: &PolicyParams,
    prompt: &[TokenId],
    n: usize,
    sampler: &SamplerConfig,
    rng_path: &SeedPath,
    eos: TokenId,
) -> Result<Vec<Trajectory>> {
    sampler.validate()?;
    (0..n)
        .map(|j| {
            sample_one(
                params,
                prompt,
                sampler,
                eos,
                &mut rng_path.child(j as u64).rng(),
            )
        })
        .collect()
}

/// Teacher-forced per-position log-probabilities and entropies of `tokens`
/// under `params`, at temperature 1.0 over the full vocabulary.
pub fn logprob_entropy_under(
    params: &PolicyParams,
    prompt: &[TokenId],
    tokens: &[TokenId],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut logprobs = Vec::with_capacity(tokens.len());
    let mut entropies = Vec::with_capacity(tokens.len());
    for t in 0..tokens.len() {
        let fwd = forward_window(params, prompt, tokens, t, t)?;
        logprobs.push(fwd.logprobs[tokens[t] as usize]);
        entropies.push(entropy_from_logprobs(&fwd.logprobs));
    }
    Ok((logprobs, entropies))
}

/// Teacher-forced per-position entropies of the temperature-adjusted
/// distribution. Used by evaluation sweeps; training-side entropies always
/// come from the temperature-1.0 distribution.
pub fn entropy_under(
    params: &PolicyParams,
    prompt: &[TokenId],
    tokens: &[TokenId],
    temperature: f64,
) -> Result<Vec<f64>> {
    let mut entropies = Vec::with_capacity(tokens.len());
    for t in 0..tokens.len() {
        let fwd = forward_window(params, prompt, tokens, t, t)?;
        entropies.push(token_entropy(&distribution_at(&fwd.logits, temperature)));
    }
    Ok(entropies)
}

/// Exact categorical KL(pi_p || pi_q) in nats at every position of a
/// teacher-forced sequence, by full summation over the vocabulary.
pub fn exact_kl(
    p_params: &PolicyParams,
    q_params: &PolicyParams,
    prompt: &[TokenId],
    tokens: &[TokenId],
) -> Result<Vec<f64>> {
    if p_params.dims != q_params.dims {
        return Err(Error::ShapeMismatch(format!(
            "KL requires matching dims, got {:?} vs {:?}",
            p_params.dims, q_params.dims
        )));
    }
    let mut out = Vec::with_capacity(tokens.len());
    for t in 0..tokens.len() {
        let fp = forward_window(p_params, prompt, tokens, t, t)?;
        let fq = forward_window(q_params, prompt, tokens, t, t)?;
        out.push(kl_from_logprobs(&fp.logprobs, &fq.logprobs));
    }
    Ok(out)
}

pub(crate) fn kl_from_logprobs(lp_p: &[f64], lp_q: &[f64]) -> f64 {
    let kl: f64 = lp_p
        .iter()
        .zip(lp_q)
        .map(|(&a, &b)| a.exp() * (a - b))
        .sum();
    kl.max(0.0)
}
