//! Decoder-only transformer forward pass: pre-norm blocks, causal
//! multi-head attention with rotary positions over a KV cache, and the
//! feed-forward sublayer in both its matrix and key-value forms.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{dot_f64, matvec, matvec_into, rmsnorm, rmsnorm_into, silu, softmax_in_place, Vector};
use crate::weights::{LayerWeights, VisualContext, Weights};

/// Epsilon of every rmsnorm in the model.
pub const RMSNORM_EPS: f32 = 1e-5;

/// Base of the rotary position frequencies.
pub const ROPE_BASE: f64 = 10000.0;

/// Output of one forward step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Vocabulary logits for the next token.
    pub final_logits: Vector,
    /// Post-block hidden state of the current position after each layer.
    pub per_layer_hidden: Vec<Vector>,
}

/// Observer and interceptor for a forward step. Layer indices are 1-based.
pub trait LayerHook {
    /// Called before the FFN of `layer` with the normalized FFN input;
    /// returning `Some` replaces that layer's FFN output.
    fn intercept_ffn(
        &mut self,
        layer: usize,
        ffn_input: &Vector,
        layer_weights: &LayerWeights,
    ) -> Result<Option<Vector>> {
        let _ = (layer, ffn_input, layer_weights);
        Ok(None)
    }

    /// Called with the post-block hidden state of `layer`.
    fn after_layer(&mut self, layer: usize, hidden: &Vector) -> Result<()> {
        let _ = (layer, hidden);
        Ok(())
    }
}

/// Per-layer key/value storage for incremental decoding.
#[derive(Debug, Clone)]
pub struct KvCache {
    num_layers: usize,
    dim: usize,
    num_heads: usize,
    max_seq_len: usize,
    len: usize,
    k: Vec<f32>,
    v: Vec<f32>,
    /// Rotary frequency per in-head pair, shared by all heads.
    rope_freqs: Vec<f64>,
    forward_passes: u64,
}

impl KvCache {
    pub fn new(config: &ModelConfig) -> Self {
        let slots = config.num_layers * config.max_seq_len * config.hidden_dim;
        let half = config.head_dim() / 2;
        let rope_freqs = (0..half)
            .map(|p| ROPE_BASE.powf(-((2 * p) as f64 / config.head_dim() as f64)))
            .collect();
        KvCache {
            num_layers: config.num_layers,
            dim: config.hidden_dim,
            num_heads: config.num_heads,
            max_seq_len: config.max_seq_len,
            len: 0,
            k: vec![0.0; slots],
            v: vec![0.0; slots],
            rope_freqs,
            forward_passes: 0,
        }
    }

    /// Number of positions currently stored (identical in every layer).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn max_seq_len(&self) -> usize {
        self.max_seq_len
    }

    /// Completed forward passes through this cache.
    pub fn forward_passes(&self) -> u64 {
        self.forward_passes
    }

    fn offset(&self, layer: usize, pos: usize) -> usize {
        (layer * self.max_seq_len + pos) * self.dim
    }

    fn rows_mut(&mut self, layer: usize, pos: usize) -> (&mut [f32], &mut [f32]) {
        let off = self.offset(layer, pos);
        (
            &mut self.k[off..off + self.dim],
            &mut self.v[off..off + self.dim],
        )
    }

    fn k_row(&self, layer: usize, pos: usize) -> &[f32] {
        let off = self.offset(layer, pos);
        &self.k[off..off + self.dim]
    }

    fn v_row(&self, layer: usize, pos: usize) -> &[f32] {
        let off = self.offset(layer, pos);
        &self.v[off..off + self.dim]
    }

    fn matches(&self, config: &ModelConfig) -> bool {
        self.num_layers == config.num_layers
            && self.dim == config.hidden_dim
            && self.num_heads == config.num_heads
            && self.max_seq_len == config.max_seq_len
    }

    fn commit(&mut self) {
        self.len += 1;
        self.forward_passes += 1;
    }
}

/// Rotate query/key pairs in place for position `pos`.
fn apply_rope(x: &mut [f32], pos: usize, num_heads: usize, head_dim: usize, freqs: &[f64]) {
    for h in 0..num_heads {
        let base = h * head_dim;
        for (pair, &freq) in freqs.iter().enumerate() {
            let angle = pos as f64 * freq;
            let (sin, cos) = angle.sin_cos();
            let i = base + 2 * pair;
            let a = x[i] as f64;
            let b = x[i + 1] as f64;
            x[i] = (a * cos - b * sin) as f32;
            x[i + 1] = (a * sin + b * cos) as f32;
        }
    }
}

/// Matrix-form feed-forward: activations from W1 rows, outputs from W2 rows.
pub fn ffn_forward(x: &Vector, lw: &LayerWeights) -> Result<Vector> {
    if x.dim() != lw.w1.cols() {
        return Err(Error::DimMismatch {
            op: "ffn_forward",
            expected: lw.w1.cols(),
            got: x.dim(),
        });
    }
    let ff = lw.w1.rows();
    let d = lw.w2.rows();
    let mut act = vec![0.0f32; ff];
    for (i, slot) in act.iter_mut().enumerate() {
        *slot = silu(dot_f64(lw.w1.row(i), x.data()) as f32);
    }
    let mut out = vec![0.0f32; d];
    for (j, slot) in out.iter_mut().enumerate() {
        *slot = dot_f64(lw.w2.row(j), &act) as f32;
    }
    Ok(Vector::new(out))
}

/// Key-value-form feed-forward: sum over entries of activation times value,
/// where key i is row i of W1 and value i is column i of W2. Agrees with
/// [`ffn_forward`] to float rounding; kept as an independent formulation for
/// cross-checking.
pub fn ffn_forward_key_value(x: &Vector, lw: &LayerWeights) -> Result<Vector> {
    if x.dim() != lw.w1.cols() {
        return Err(Error::DimMismatch {
            op: "ffn_forward_key_value",
            expected: lw.w1.cols(),
            got: x.dim(),
        });
    }
    let ff = lw.w1.rows();
    let d = lw.w2.rows();
    let mut acc = vec![0.0f64; d];
    for i in 0..ff {
        let a = silu(dot_f64(lw.w1.row(i), x.data()) as f32) as f64;
        for (j, slot) in acc.iter_mut().enumerate() {
            *slot += a * lw.w2.get(j, i) as f64;
        }
    }
    Ok(Vector::new(acc.iter().map(|&v| v as f32).collect()))
}

/// Vocabulary logits for an intermediate hidden state: the final norm, then
/// the vocabulary head. The last layer's hidden state yields exactly the
/// logits reported by [`forward_step`].
pub fn early_exit_logits(weights: &Weights, hidden: &Vector) -> Result<Vector> {
    let normed = rmsnorm(hidden, &weights.final_gain, RMSNORM_EPS)?;
    matvec(&weights.vocab_head, &normed)
}

/// Embed a prompt: visual tokens first, then text-token embedding rows.
pub fn embed_prompt(
    weights: &Weights,
    token_ids: &[u32],
    visual: &VisualContext,
) -> Result<Vec<Vector>> {
    visual.check_matches(&weights.config)?;
    let vocab = weights.config.vocab_size;
    let mut out = Vec::with_capacity(visual.num_tokens() + token_ids.len());
    for i in 0..visual.num_tokens() {
        out.push(Vector::new(visual.token(i).to_vec()));
    }
    for &id in token_ids {
        if id as usize >= vocab {
            return Err(Error::TokenOutOfRange { id, vocab });
        }
        out.push(Vector::new(weights.token_embedding.row(id as usize).to_vec()));
    }
    Ok(out)
}

/// Process one position: run every layer over the cache, append this
/// position's keys/values, and return final logits plus all post-block
/// hidden states. The cache is unchanged if any error occurs.
pub fn forward_step(
    weights: &Weights,
    cache: &mut KvCache,
    input: &Vector,
    mut hook: Option<&mut dyn LayerHook>,
) -> Result<StepOutput> {
    let cfg = &weights.config;
    let d = cfg.hidden_dim;
    if input.dim() != d {
        return Err(Error::DimMismatch {
            op: "forward_step input",
            expected: d,
            got: input.dim(),
        });
    }
    if !cache.matches(cfg) {
        return Err(Error::DimMismatch {
            op: "forward_step cache shape",
            expected: d,
            got: cache.dim,
        });
    }
    let pos = cache.len;
    if pos >= cache.max_seq_len {
        return Err(Error::CacheOverflow {
            max_seq_len: cache.max_seq_len,
        });
    }

    let heads = cfg.num_heads;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();

    let mut x: Vec<f32> = input.data().to_vec();
    let mut xn = vec![0.0f32; d];
    let mut q = vec![0.0f32; d];
    let mut attn = vec![0.0f32; d];
    let mut proj = vec![0.0f32; d];
    let mut scores = vec![0.0f32; pos + 1];
    let mut head_acc = vec![0.0f64; hd];
    let mut per_layer_hidden: Vec<Vector> = Vec::with_capacity(cfg.num_layers);
    let freqs = cache.rope_freqs.clone();

    for l in 0..cfg.num_layers {
        let lw = &weights.layers[l];

        // Attention sublayer.
        rmsnorm_into(&mut xn, &x, lw.attn_gain.data(), RMSNORM_EPS);
        matvec_into(&mut q, &lw.wq, &xn);
        {
            let (k_row, v_row) = cache.rows_mut(l, pos);
            matvec_into(k_row, &lw.wk, &xn);
            matvec_into(v_row, &lw.wv, &xn);
            apply_rope(&mut q, pos, heads, hd, &freqs);
            apply_rope(k_row, pos, heads, hd, &freqs);
        }
        for h in 0..heads {
            let span = h * hd..(h + 1) * hd;
            let qh = &q[span.clone()];
            for (t, slot) in scores.iter_mut().enumerate() {
                *slot = (dot_f64(qh, &cache.k_row(l, t)[span.clone()]) * scale) as f32;
            }
            softmax_in_place(&mut scores);
            head_acc.fill(0.0);
            for (t, &w) in scores.iter().enumerate() {
                let v_head = &cache.v_row(l, t)[span.clone()];
                for (slot, &v) in head_acc.iter_mut().zip(v_head) {
                    *slot += w as f64 * v as f64;
                }
            }
            for (slot, &acc) in attn[span].iter_mut().zip(head_acc.iter()) {
                *slot = acc as f32;
            }
        }
        matvec_into(&mut proj, &lw.wo, &attn);
        for (xi, &pi) in x.iter_mut().zip(proj.iter()) {
            *xi += pi;
        }

        // Feed-forward sublayer, through the hook when one is armed.
        rmsnorm_into(&mut xn, &x, lw.ffn_gain.data(), RMSNORM_EPS);
        let ffn_input = Vector::new(xn.clone());
        let intercepted = match hook.as_deref_mut() {
            Some(h) => h.intercept_ffn(l + 1, &ffn_input, lw)?,
            None => None,
        };
        let ffn_out = match intercepted {
            Some(v) => {
                if v.dim() != d {
                    return Err(Error::DimMismatch {
                        op: "intercepted FFN output",
                        expected: d,
                        got: v.dim(),
                    });
                }
                v
            }
            None => ffn_forward(&ffn_input, lw)?,
        };
        for (xi, &fi) in x.iter_mut().zip(ffn_out.data().iter()) {
            *xi += fi;
        }

        per_layer_hidden.push(Vector::new(x.clone()));
        if let Some(h) = hook.as_deref_mut() {
            h.after_layer(l + 1, &per_layer_hidden[l])?;
        }
    }

    let final_logits = early_exit_logits(weights, &per_layer_hidden[cfg.num_layers - 1])?;
    cache.commit();
    Ok(StepOutput {
        final_logits,
        per_layer_hidden,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;
    use crate::weights::{synthesize_visual_context, synthesize_weights};

    fn small_config() -> ModelConfig {
        ModelConfig {
            num_layers: 3,
            hidden_dim: 8,
            ffn_dim: 16,
            vocab_size: 12,
            num_heads: 2,
            num_visual_tokens: 2,
            max_seq_len: 16,
        }
    }

    fn step_on_fresh_cache(weights: &Weights, input: &Vector) -> StepOutput {
        let mut cache = KvCache::new(&weights.config);
        forward_step(weights, &mut cache, input, None).unwrap()
    }

    #[test]
    fn forward_step_is_deterministic() {
        let w = synthesize_weights(&small_config(), 21).unwrap();
        let input = Vector::new(w.token_embedding.row(3).to_vec());
        let a = step_on_fresh_cache(&w, &input);
        let b = step_on_fresh_cache(&w, &input);
        assert_eq!(a, b);
    }

    struct PassThroughHook;
    impl LayerHook for PassThroughHook {
        fn intercept_ffn(
            &mut self,
            _layer: usize,
            ffn_input: &Vector,
            lw: &LayerWeights,
        ) -> Result<Option<Vector>> {
            Ok(Some(ffn_forward(ffn_input, lw)?))
        }
    }

    #[test]
    fn pass_through_interceptor_changes_nothing() {
        let w = synthesize_weights(&small_config(), 22).unwrap();
        let input = Vector::new(w.token_embedding.row(1).to_vec());
        let plain = step_on_fresh_cache(&w, &input);
        let mut cache = KvCache::new(&w.config);
        let mut hook = PassThroughHook;
        let hooked = forward_step(&w, &mut cache, &input, Some(&mut hook)).unwrap();
        assert_eq!(plain, hooked);
    }

    struct NoOpHook;
    impl LayerHook for NoOpHook {}

    #[test]
    fn default_hook_methods_change_nothing() {
        let w = synthesize_weights(&small_config(), 23).unwrap();
        let input = Vector::new(w.token_embedding.row(2).to_vec());
        let plain = step_on_fresh_cache(&w, &input);
        let mut cache = KvCache::new(&w.config);
        let mut hook = NoOpHook;
        let hooked = forward_step(&w, &mut cache, &input, Some(&mut hook)).unwrap();
        assert_eq!(plain, hooked);
    }

    #[test]
    fn per_layer_hidden_has_one_entry_per_layer() {
        let cfg = small_config();
        let w = synthesize_weights(&cfg, 24).unwrap();
        let input = Vector::new(w.token_embedding.row(0).to_vec());
        let out = step_on_fresh_cache(&w, &input);
        assert_eq!(out.per_layer_hidden.len(), cfg.num_layers);
        assert!(out.per_layer_hidden.iter().all(|h| h.dim() == cfg.hidden_dim));
    }

    #[test]
    fn cache_overflow_is_detected() {
        let mut cfg = small_config();
        cfg.max_seq_len = 2;
        let w = synthesize_weights(&cfg, 25).unwrap();
        let input = Vector::new(w.token_embedding.row(0).to_vec());
        let mut cache = KvCache::new(&cfg);
        forward_step(&w, &mut cache, &input, None).unwrap();
        forward_step(&w, &mut cache, &input, None).unwrap();
        assert!(matches!(
            forward_step(&w, &mut cache, &input, None),
            Err(Error::CacheOverflow { max_seq_len: 2 })
        ));
        assert_eq!(cache.len(), 2);
        assert_eq!(cache.forward_passes(), 2);
    }

    struct FailingHook;
    impl LayerHook for FailingHook {
        fn after_layer(&mut self, layer: usize, _hidden: &Vector) -> Result<()> {
            if layer == 2 {
                return Err(Error::EmptyInput("synthetic failure"));
            }
            Ok(())
        }
    }

    #[test]
    fn hook_failure_leaves_cache_uncommitted() {
        let w = synthesize_weights(&small_config(), 26).unwrap();
        let input = Vector::new(w.token_embedding.row(0).to_vec());
        let mut cache = KvCache::new(&w.config);
        let mut hook = FailingHook;
        assert!(forward_step(&w, &mut cache, &input, Some(&mut hook)).is_err());
        assert_eq!(cache.len(), 0);
        assert_eq!(cache.forward_passes(), 0);
        // The slot is reused cleanly by the next successful pass.
        let out = forward_step(&w, &mut cache, &input, None).unwrap();
        assert_eq!(out, step_on_fresh_cache(&w, &input));
    }

    #[test]
    fn early_exit_on_last_hidden_equals_final_logits() {
        let w = synthesize_weights(&small_config(), 27).unwrap();
        let input = Vector::new(w.token_embedding.row(5).to_vec());
        let out = step_on_fresh_cache(&w, &input);
        let again = early_exit_logits(&w, out.per_layer_hidden.last().unwrap()).unwrap();
        assert_eq!(again, out.final_logits);
    }

    #[test]
    fn early_exit_of_zero_hidden_is_finite() {
        let cfg = small_config();
        let w = synthesize_weights(&cfg, 28).unwrap();
        let logits = early_exit_logits(&w, &Vector::zeros(cfg.hidden_dim)).unwrap();
        assert_eq!(logits.dim(), cfg.vocab_size);
        assert!(logits.data().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn early_exit_is_deterministic() {
        let w = synthesize_weights(&small_config(), 29).unwrap();
        let hidden = Vector::new(w.token_embedding.row(7).to_vec());
        assert_eq!(
            early_exit_logits(&w, &hidden).unwrap(),
            early_exit_logits(&w, &hidden).unwrap()
        );
    }

    #[test]
    fn embed_prompt_with_no_text_yields_visual_only() {
        let cfg = small_config();
        let w = synthesize_weights(&cfg, 30).unwrap();
        let v = synthesize_visual_context(&cfg, 7).unwrap();
        let embeds = embed_prompt(&w, &[], &v).unwrap();
        assert_eq!(embeds.len(), cfg.num_visual_tokens);
    }

    #[test]
    fn embed_prompt_orders_visual_before_text() {
        let cfg = small_config();
        let w = synthesize_weights(&cfg, 31).unwrap();
        let v = synthesize_visual_context(&cfg, 7).unwrap();
        let embeds = embed_prompt(&w, &[4, 9], &v).unwrap();
        assert_eq!(embeds.len(), cfg.num_visual_tokens + 2);
        assert_eq!(embeds[0].data(), v.token(0));
        assert_eq!(
            embeds[cfg.num_visual_tokens].data(),
            w.token_embedding.row(4)
        );
        assert_eq!(
            embeds[cfg.num_visual_tokens + 1].data(),
            w.token_embedding.row(9)
        );
    }

    #[test]
    fn embed_prompt_rejects_out_of_range_id() {
        let cfg = small_config();
        let w = synthesize_weights(&cfg, 32).unwrap();
        let v = synthesize_visual_context(&cfg, 7).unwrap();
        assert!(matches!(
            embed_prompt(&w, &[99], &v),
            Err(Error::TokenOutOfRange { id: 99, vocab: 12 })
        ));
    }

    #[test]
    fn ffn_of_zero_input_is_zero() {
        let w = synthesize_weights(&small_config(), 33).unwrap();
        let out = ffn_forward(&Vector::zeros(8), &w.layers[0]).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_entry_memory_matches_closed_form() {
        // ffn_dim = 1: one key row, one value column.
        let key = vec![0.5f32, -1.0, 2.0, 0.25];
        let value = vec![1.0f32, 2.0, -3.0, 0.5];
        let lw = LayerWeights {
            wq: Matrix::zeros(4, 4),
            wk: Matrix::zeros(4, 4),
            wv: Matrix::zeros(4, 4),
            wo: Matrix::zeros(4, 4),
            w1: Matrix::new(1, 4, key.clone()).unwrap(),
            w2: Matrix::new(4, 1, value.clone()).unwrap(),
            attn_gain: Vector::zeros(4),
            ffn_gain: Vector::zeros(4),
        };
        let x = Vector::new(vec![1.0, 0.5, -0.25, 2.0]);
        let inner: f32 = key.iter().zip(x.data()).map(|(k, v)| k * v).sum();
        let a = silu(inner);
        let out = ffn_forward(&x, &lw).unwrap();
        for (got, want) in out.data().iter().zip(value.iter().map(|&v| a * v)) {
            assert!((got - want).abs() < 1e-6);
        }
        let kv = ffn_forward_key_value(&x, &lw).unwrap();
        for (a, b) in out.data().iter().zip(kv.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn ffn_forms_agree_on_random_instance() {
        let w = synthesize_weights(&small_config(), 34).unwrap();
        let x = Vector::new(w.token_embedding.row(6).to_vec());
        let m = ffn_forward(&x, &w.layers[1]).unwrap();
        let kv = ffn_forward_key_value(&x, &w.layers[1]).unwrap();
        for (a, b) in m.data().iter().zip(kv.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn ffn_rejects_dim_mismatch() {
        let w = synthesize_weights(&small_config(), 35).unwrap();
        assert!(ffn_forward(&Vector::zeros(5), &w.layers[0]).is_err());
        assert!(ffn_forward_key_value(&Vector::zeros(5), &w.layers[0]).is_err());
    }
}
