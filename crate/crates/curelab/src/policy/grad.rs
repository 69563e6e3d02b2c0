//! Analytic gradients by reverse accumulation through the two-layer network.

use serde::{Deserialize, Serialize};

use super::{forward_window, Forward, ModelDims, PolicyParams};
use crate::env::TokenId;
use crate::error::Result;

/// Gradient (or any parameter-shaped accumulator) matching [`PolicyParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub dims: ModelDims,
    pub embeddings: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    pub fn zeros(dims: ModelDims) -> Self {
        Gradients {
            dims,
            embeddings: vec![0.0; dims.vocab * dims.embed],
            w1: vec![0.0; dims.input_dim() * dims.hidden],
            b1: vec![0.0; dims.hidden],
            w2: vec![0.0; dims.hidden * dims.vocab],
            b2: vec![0.0; dims.vocab],
        }
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

    /// Elementwise addition; gradient reduction is commutative, so merge
    /// order does not matter.
    pub fn add_assign(&mut self, other: &Gradients) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, y) in a.1.iter_mut().zip(b.1) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, block) in self.blocks_mut() {
            for x in block.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|(_, b)| b.iter())
            .map(|&x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|(_, b)| b.iter().all(|x| x.is_finite()))
    }

    pub fn max_abs_diff(&self, other: &Gradients) -> f64 {
        self.blocks()
            .iter()
            .zip(other.blocks().iter())
            .flat_map(|(a, b)| a.1.iter().zip(b.1.iter()))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

/// Backpropagate a d(objective)/d(logits) vector at one position into the
/// parameter gradient.
pub(crate) fn accumulate_from_logit_grad(
    params: &PolicyParams,
    fwd: &Forward,
    dlogits: &[f64],
    out: &mut Gradients,
) {
    let dims = params.dims;
    let (d, h, v) = (dims.embed, dims.hidden, dims.vocab);

    // output layer
    let mut dh = vec![0.0; h];
    for (j, &hj) in fwd.hidden.iter().enumerate() {
        let w_row = &params.w2[j * v..(j + 1) * v];
        let g_row = &mut out.w2[j * v..(j + 1) * v];
        let mut acc = 0.0;
        for u in 0..v {
            g_row[u] += hj * dlogits[u];
            acc += w_row[u] * dlogits[u];
        }
        dh[j] = acc;
    }
    for (u, &g) in dlogits.iter().enumerate() {
        out.b2[u] += g;
    }

    // hidden layer through tanh
    let dpre: Vec<f64> = dh
        .iter()
        .zip(&fwd.hidden)
        .map(|(&g, &hj)| g * (1.0 - hj * hj))
        .collect();
    for (j, &g) in dpre.iter().enumerate() {
        out.b1[j] += g;
    }
    let mut dx = vec![0.0; fwd.x.len()];
    for (i, &xi) in fwd.x.iter().enumerate() {
        let w_row = &params.w1[i * h..(i + 1) * h];
        let g_row = &mut out.w1[i * h..(i + 1) * h];
        let mut acc = 0.0;
        for j in 0..h {
            g_row[j] += xi * dpre[j];
            acc += w_row[j] * dpre[j];
        }
        dx[i] = acc;
    }

    // embedding rows for the window tokens
    for (k, &tok) in fwd.window.iter().enumerate() {
        let base = tok as usize * d;
        for m in 0..d {
            out.embeddings[base + m] += dx[k * d + m];
        }
    }
}

/// One teacher-forced sequence with a weight per generated token.
#[derive(Debug, Clone, Copy)]
pub struct WeightedSequence<'a> {
    pub prompt: &'a [TokenId],
    pub tokens: &'a [TokenId],
    pub weights: &'a [f64],
}

/// Analytic gradient of `sum_t w_t * log pi(o_t | prompt, o_<t)` summed over
/// the batch. Additive over batch elements.
pub fn weighted_logprob_gradient(
    params: &PolicyParams,
    batch: &[WeightedSequence<'_>],
) -> Result<Gradients> {
    let mut out = Gradients::zeros(params.dims);
    let v = params.dims.vocab;
    let mut dlogits = vec![0.0; v];
    for seq in batch {
        debug_assert_eq!(seq.tokens.len(), seq.weights.len());
        for (t, (&tok, &w)) in seq.tokens.iter().zip(seq.weights).enumerate() {
            if w == 0.0 {
                continue;
            }
            let fwd = forward_window(params, seq.prompt, seq.tokens, t, t)?;
            for (u, &lp) in fwd.logprobs.iter().enumerate() {
                dlogits[u] = -w * lp.exp();
            }
            dlogits[tok as usize] += w;
            accumulate_from_logit_grad(params, &fwd, &dlogits, &mut out);
        }
    }
    Ok(out)
}
