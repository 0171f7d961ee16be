//! Independent oracles and fixture helpers shared by the integration
//! suites. The oracles reimplement the numerics from scratch (pure f64,
//! different loop structure, no cache) so agreement with the library is
//! evidence rather than tautology.

use memvr_core::{ModelConfig, Prng, Vector, Weights};

/// Retrieval over visual tokens computed output-component first: for each
/// output j, sum silu(<z_i, x>) * z_i[j] over tokens i, entirely in f64.
pub fn naive_retrace(x: &[f32], tokens: &[Vec<f32>]) -> Vec<f64> {
    let d = x.len();
    let mut weights = Vec::with_capacity(tokens.len());
    for z in tokens {
        assert_eq!(z.len(), d, "token dimension");
        let mut dot = 0.0f64;
        for (zv, xv) in z.iter().zip(x) {
            dot += *zv as f64 * *xv as f64;
        }
        weights.push(dot / (1.0 + (-dot).exp()));
    }
    (0..d)
        .map(|j| {
            tokens
                .iter()
                .zip(&weights)
                .map(|(z, w)| w * z[j] as f64)
                .sum()
        })
        .collect()
}

fn rmsnorm64(v: &[f64], gain: &[f32], eps: f64) -> Vec<f64> {
    let mean_sq = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
    let inv = 1.0 / (mean_sq + eps).sqrt();
    v.iter()
        .zip(gain)
        .map(|(x, g)| x * inv * *g as f64)
        .collect()
}

fn matvec64(rows: usize, cols: usize, m: &memvr_core::Matrix, v: &[f64]) -> Vec<f64> {
    assert_eq!(m.rows(), rows);
    assert_eq!(m.cols(), cols);
    (0..rows)
        .map(|r| {
            m.row(r)
                .iter()
                .zip(v)
                .map(|(w, x)| *w as f64 * x)
                .sum()
        })
        .collect()
}

fn rope64(x: &mut [f64], pos: usize, num_heads: usize, head_dim: usize) {
    for h in 0..num_heads {
        for p in 0..head_dim / 2 {
            let freq = 10_000.0f64.powf(-((2 * p) as f64) / head_dim as f64);
            let angle = pos as f64 * freq;
            let (sin, cos) = angle.sin_cos();
            let i = h * head_dim + 2 * p;
            let (a, b) = (x[i], x[i + 1]);
            x[i] = a * cos - b * sin;
            x[i + 1] = a * sin + b * cos;
        }
    }
}

/// Full-sequence forward pass with no cache: processes every position of
/// the sequence in one sweep per layer, attending causally, and returns
/// the vocabulary logits at every position. All arithmetic is f64.
pub fn full_sequence_logits(weights: &Weights, embeds: &[Vector]) -> Vec<Vec<f64>> {
    let cfg = &weights.config;
    let d = cfg.hidden_dim;
    let hd = cfg.hidden_dim / cfg.num_heads;
    let eps = 1e-5f32 as f64;
    let t_len = embeds.len();
    let mut hidden: Vec<Vec<f64>> = embeds
        .iter()
        .map(|e| e.data().iter().map(|&x| x as f64).collect())
        .collect();

    for lw in &weights.layers {
        let mut qs = Vec::with_capacity(t_len);
        let mut ks = Vec::with_capacity(t_len);
        let mut vs = Vec::with_capacity(t_len);
        for (t, h) in hidden.iter().enumerate() {
            let xn = rmsnorm64(h, lw.attn_gain.data(), eps);
            let mut q = matvec64(d, d, &lw.wq, &xn);
            let mut k = matvec64(d, d, &lw.wk, &xn);
            rope64(&mut q, t, cfg.num_heads, hd);
            rope64(&mut k, t, cfg.num_heads, hd);
            qs.push(q);
            ks.push(k);
            vs.push(matvec64(d, d, &lw.wv, &xn));
        }
        for t in 0..t_len {
            let mut attn_out = vec![0.0f64; d];
            for h in 0..cfg.num_heads {
                let base = h * hd;
                let scores: Vec<f64> = (0..=t)
                    .map(|j| {
                        let dot: f64 = (0..hd)
                            .map(|c| qs[t][base + c] * ks[j][base + c])
                            .sum();
                        dot / (hd as f64).sqrt()
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                for (j, e) in exps.iter().enumerate() {
                    let w = e / total;
                    for c in 0..hd {
                        attn_out[base + c] += w * vs[j][base + c];
                    }
                }
            }
            let proj = matvec64(d, d, &lw.wo, &attn_out);
            for (slot, p) in hidden[t].iter_mut().zip(&proj) {
                *slot += p;
            }
        }
        for h in hidden.iter_mut() {
            let xn = rmsnorm64(h, lw.ffn_gain.data(), eps);
            let act: Vec<f64> = matvec64(cfg.ffn_dim, d, &lw.w1, &xn)
                .into_iter()
                .map(|a| a / (1.0 + (-a).exp()))
                .collect();
            let out = matvec64(d, cfg.ffn_dim, &lw.w2, &act);
            for (slot, o) in h.iter_mut().zip(&out) {
                *slot += o;
            }
        }
    }

    hidden
        .iter()
        .map(|h| {
            let normed = rmsnorm64(h, weights.final_gain.data(), eps);
            matvec64(cfg.vocab_size, d, &weights.vocab_head, &normed)
        })
        .collect()
}

/// Small random model shape satisfying every config invariant.
pub fn random_small_config(prng: &mut Prng) -> ModelConfig {
    let num_layers = 2 + (prng.next_u64() % 5) as usize;
    let num_heads = [1usize, 2, 4][(prng.next_u64() % 3) as usize];
    let head_dim = [2usize, 4, 6, 8][(prng.next_u64() % 4) as usize];
    let hidden_dim = num_heads * head_dim;
    let ffn_dim = hidden_dim * (1 + (prng.next_u64() % 3) as usize);
    let vocab_size = 8 + (prng.next_u64() % 57) as usize;
    let max_visual = ffn_dim.saturating_sub(1).min(4).max(1);
    let num_visual_tokens = 1 + (prng.next_u64() % max_visual as u64) as usize;
    ModelConfig {
        num_layers,
        hidden_dim,
        ffn_dim,
        vocab_size,
        num_heads,
        num_visual_tokens,
        max_seq_len: 64,
    }
}

/// Random prompt of 1..=4 nonzero ids below the vocabulary size.
pub fn random_prompt(prng: &mut Prng, vocab: usize) -> Vec<u32> {
    let len = 1 + (prng.next_u64() % 4) as usize;
    (0..len)
        .map(|_| 1 + (prng.next_u64() % (vocab as u64 - 1)) as u32)
        .collect()
}
