//! Decoding strategies: greedy, temperature sampling, visual retracing
//! (static, entropy-triggered, and entropy-scaled injection), and a
//! two-pass contrastive baseline.
//!
//! Layer indices are 1-based throughout this module. Early-exit
//! uncertainty is probed after layers 1 through L-1; when the trigger
//! fires at layer l, the blended feed-forward replaces layer l+1's FFN.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::{argmax, dot_f64, silu_f64, softmax, Matrix, Vector};
use crate::trace::UncertaintyTrace;
use crate::transformer::{
    early_exit_logits, embed_prompt, ffn_forward, forward_step, KvCache, LayerHook,
};
use crate::weights::{LayerWeights, VisualContext, Weights};

/// Token id that ends generation.
pub const EOS_TOKEN_ID: u32 = 0;

/// Default trigger threshold on normalized entropy.
pub const DEFAULT_GAMMA: f32 = 0.75;
/// Default injection ratio of the retraced visual signal.
pub const DEFAULT_ALPHA: f32 = 0.2;
/// Default sampling temperature.
pub const DEFAULT_TEMPERATURE: f32 = 1.0;
/// Default contrast strength of the contrastive baseline.
pub const DEFAULT_CD_BETA: f32 = 1.0;
/// Default noise scale used to distort the visual context.
pub const DEFAULT_CD_NOISE_SIGMA: f32 = 1.0;
/// Default cap on emitted tokens.
pub const DEFAULT_MAX_NEW_TOKENS: usize = 32;

/// Decoding strategy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Greedy,
    Sample,
    MemvrStatic,
    MemvrDynamic,
    MemvrDynamicAlpha,
    Contrastive,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Greedy,
        Strategy::Sample,
        Strategy::MemvrStatic,
        Strategy::MemvrDynamic,
        Strategy::MemvrDynamicAlpha,
        Strategy::Contrastive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::Sample => "sample",
            Strategy::MemvrStatic => "memvr-static",
            Strategy::MemvrDynamic => "memvr-dynamic",
            Strategy::MemvrDynamicAlpha => "memvr-dynamic-alpha",
            Strategy::Contrastive => "contrastive",
        }
    }

    pub fn is_memvr(self) -> bool {
        matches!(
            self,
            Strategy::MemvrStatic | Strategy::MemvrDynamic | Strategy::MemvrDynamicAlpha
        )
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .iter()
            .copied()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Strategy::ALL.iter().map(|st| st.name()).collect();
                Error::InvalidPolicy(format!(
                    "unknown strategy '{s}'; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// Full configuration of one decoding run.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodePolicy {
    pub strategy: Strategy,
    /// Trigger threshold on normalized entropy, in [0, 1].
    pub gamma: f32,
    /// Fixed injection ratio, in [0, 1].
    pub alpha: f32,
    /// Injection layer of the static strategy, in [1, L-1].
    pub static_layer: usize,
    /// Inclusive 1-based range of layers whose uncertainty may trigger
    /// injection; must lie within [1, L-1].
    pub candidate_layers: (usize, usize),
    /// Softmax temperature of the sampling strategy; must be positive.
    pub temperature: f32,
    /// Seed for sampling draws and for the contrastive noise.
    pub sample_seed: u64,
    /// Contrast strength of the contrastive baseline; nonnegative.
    pub cd_beta: f32,
    /// Noise scale distorting the visual context; nonnegative.
    pub cd_noise_sigma: f32,
    pub max_new_tokens: usize,
}

impl DecodePolicy {
    /// Policy with default knobs for the given model shape.
    pub fn new(strategy: Strategy, config: &ModelConfig) -> Self {
        let top = config.num_layers.saturating_sub(1).max(1);
        DecodePolicy {
            strategy,
            gamma: DEFAULT_GAMMA,
            alpha: DEFAULT_ALPHA,
            static_layer: (config.num_layers / 2).clamp(1, top),
            candidate_layers: (1, top),
            temperature: DEFAULT_TEMPERATURE,
            sample_seed: 0,
            cd_beta: DEFAULT_CD_BETA,
            cd_noise_sigma: DEFAULT_CD_NOISE_SIGMA,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
        }
    }

    /// Check the knobs the chosen strategy consumes. Knobs other
    /// strategies would read are left alone, so one template policy can
    /// serve several strategies.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        config.validate()?;
        let fail = |msg: String| Err(Error::InvalidPolicy(msg));
        let top = config.num_layers - 1;
        let check_gamma = || {
            if !self.gamma.is_finite() || !(0.0..=1.0).contains(&self.gamma) {
                return fail(format!("gamma must lie in [0, 1], got {}", self.gamma));
            }
            Ok(())
        };
        let check_alpha = || {
            if !self.alpha.is_finite() || !(0.0..=1.0).contains(&self.alpha) {
                return fail(format!("alpha must lie in [0, 1], got {}", self.alpha));
            }
            Ok(())
        };
        let check_candidates = || {
            let (lo, hi) = self.candidate_layers;
            if lo < 1 || lo > hi || hi > top {
                return fail(format!(
                    "candidate_layers {lo}..={hi} must be a nonempty range within [1, {top}]"
                ));
            }
            Ok(())
        };
        match self.strategy {
            Strategy::Greedy => Ok(()),
            Strategy::Sample => {
                if !self.temperature.is_finite() || self.temperature <= 0.0 {
                    return fail(format!(
                        "temperature must be positive, got {}",
                        self.temperature
                    ));
                }
                Ok(())
            }
            Strategy::MemvrStatic => {
                check_alpha()?;
                if self.static_layer < 1 || self.static_layer > top {
                    return fail(format!(
                        "static_layer {} must lie in [1, {top}]",
                        self.static_layer
                    ));
                }
                Ok(())
            }
            Strategy::MemvrDynamic => {
                check_gamma()?;
                check_alpha()?;
                check_candidates()
            }
            Strategy::MemvrDynamicAlpha => {
                check_gamma()?;
                check_candidates()
            }
            Strategy::Contrastive => {
                if !self.cd_beta.is_finite() || self.cd_beta < 0.0 {
                    return fail(format!("cd_beta must be nonnegative, got {}", self.cd_beta));
                }
                if !self.cd_noise_sigma.is_finite() || self.cd_noise_sigma < 0.0 {
                    return fail(format!(
                        "cd_noise_sigma must be nonnegative, got {}",
                        self.cd_noise_sigma
                    ));
                }
                Ok(())
            }
        }
    }
}

/// Outcome of one decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDecision {
    pub token_id: u32,
    /// Whether visual retracing was injected this step.
    pub triggered: bool,
    /// For entropy-triggered strategies, the candidate layer whose
    /// uncertainty fired (injection happens one layer later); for the
    /// static strategy, the injection layer itself.
    pub trigger_layer: Option<usize>,
    /// Injection ratio actually applied; 0 when not triggered.
    pub applied_alpha: f32,
    /// Normalized entropy after layers 1..=L-1; entries are present when
    /// that layer was probed this step.
    pub per_layer_uncertainty: Vec<Option<f32>>,
}

/// How eagerly to compute early-exit uncertainty probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeMode {
    /// Probe only what the strategy's trigger logic consumes. Benchmarks
    /// use this mode; emitted tokens are unaffected.
    Minimal,
    /// Probe every early-exit layer so traces are complete.
    Exhaustive,
}

/// Shannon entropy of a probability vector divided by log of its size,
/// so the result lies in [0, 1]. Zero probabilities contribute zero.
pub fn normalized_entropy(probs: &Vector) -> Result<f64> {
    let n = probs.dim();
    if n < 2 {
        return Err(Error::DegenerateVocab { vocab: n });
    }
    let mut h = 0.0f64;
    for &p in probs.data() {
        let p = p as f64;
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    Ok((h / (n as f64).ln()).clamp(0.0, 1.0))
}

/// Retrieval over visual tokens: sum of SiLU(<x, z_i>) * z_i.
pub fn visual_retrace(x: &Vector, visual: &VisualContext) -> Result<Vector> {
    if x.dim() != visual.dim() {
        return Err(Error::DimMismatch {
            op: "visual_retrace",
            expected: visual.dim(),
            got: x.dim(),
        });
    }
    let mut acc = vec![0.0f64; x.dim()];
    for i in 0..visual.num_tokens() {
        let z = visual.token(i);
        let a = silu_f64(dot_f64(z, x.data()));
        for (slot, &zj) in acc.iter_mut().zip(z) {
            *slot += a * zj as f64;
        }
    }
    Ok(Vector::new(acc.iter().map(|&v| v as f32).collect()))
}

/// Convex blend of retraced visual signal and the plain FFN output:
/// alpha * retrace(x) + (1 - alpha) * FFN(x). The endpoints reproduce the
/// sub-operations exactly.
pub fn ffn_with_vr(
    x: &Vector,
    visual: &VisualContext,
    alpha: f32,
    lw: &LayerWeights,
) -> Result<Vector> {
    if !alpha.is_finite() || !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidPolicy(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    if alpha == 0.0 {
        return ffn_forward(x, lw);
    }
    if alpha == 1.0 {
        return visual_retrace(x, visual);
    }
    let delta = visual_retrace(x, visual)?;
    let plain = ffn_forward(x, lw)?;
    let a = alpha as f64;
    let out = delta
        .data()
        .iter()
        .zip(plain.data())
        .map(|(&dv, &pv)| (a * dv as f64 + (1.0 - a) * pv as f64) as f32)
        .collect();
    Ok(Vector::new(out))
}

/// Entropy-scaled injection ratio: 2 * (u - gamma), clamped to [0, 1].
pub fn dynamic_alpha(u: f32, gamma: f32) -> f32 {
    (2.0 * (u - gamma)).clamp(0.0, 1.0)
}

/// How the hook decides injection.
enum HookMode {
    /// Probes only; never injects.
    Observe,
    /// Unconditional injection at a fixed layer.
    Static { layer: usize, alpha: f32 },
    /// Entropy-triggered injection at the layer after the first candidate
    /// whose uncertainty exceeds gamma.
    Dynamic {
        gamma: f32,
        lo: usize,
        hi: usize,
        scaled_alpha: bool,
        fixed_alpha: f32,
    },
}

/// Drives entropy probes and visual-retracing injection inside one
/// forward pass. Fresh state is built for every decoding step, which is
/// what re-arms the trigger.
struct PolicyHook<'a> {
    weights: &'a Weights,
    visual: &'a VisualContext,
    mode: HookMode,
    probe_mode: ProbeMode,
    armed: bool,
    pending_injection: Option<usize>,
    triggered: bool,
    trigger_layer: Option<usize>,
    applied_alpha: f32,
    probes: Vec<Option<f32>>,
}

impl<'a> PolicyHook<'a> {
    fn new(
        weights: &'a Weights,
        visual: &'a VisualContext,
        mode: HookMode,
        probe_mode: ProbeMode,
    ) -> Self {
        let armed = matches!(mode, HookMode::Dynamic { .. });
        let probe_slots = weights.config.num_layers - 1;
        PolicyHook {
            weights,
            visual,
            mode,
            probe_mode,
            armed,
            pending_injection: None,
            triggered: false,
            trigger_layer: None,
            applied_alpha: 0.0,
            probes: vec![None; probe_slots],
        }
    }

    fn observe(weights: &'a Weights, visual: &'a VisualContext, probe_mode: ProbeMode) -> Self {
        PolicyHook::new(weights, visual, HookMode::Observe, probe_mode)
    }

    fn for_policy(
        weights: &'a Weights,
        visual: &'a VisualContext,
        policy: &DecodePolicy,
        probe_mode: ProbeMode,
    ) -> Result<Self> {
        let mode = match policy.strategy {
            Strategy::MemvrStatic => HookMode::Static {
                layer: policy.static_layer,
                alpha: policy.alpha,
            },
            Strategy::MemvrDynamic | Strategy::MemvrDynamicAlpha => HookMode::Dynamic {
                gamma: policy.gamma,
                lo: policy.candidate_layers.0,
                hi: policy.candidate_layers.1,
                scaled_alpha: policy.strategy == Strategy::MemvrDynamicAlpha,
                fixed_alpha: policy.alpha,
            },
            other => {
                return Err(Error::InvalidPolicy(format!(
                    "strategy {other} does not inject visual retracing"
                )))
            }
        };
        Ok(PolicyHook::new(weights, visual, mode, probe_mode))
    }

    fn wants_probe(&self, layer: usize) -> bool {
        if layer > self.probes.len() {
            return false;
        }
        match self.probe_mode {
            ProbeMode::Exhaustive => true,
            ProbeMode::Minimal => match self.mode {
                HookMode::Dynamic { lo, hi, .. } => {
                    self.armed && layer >= lo && layer <= hi
                }
                _ => false,
            },
        }
    }

    fn into_decision(self, token_id: u32) -> StepDecision {
        StepDecision {
            token_id,
            triggered: self.triggered,
            trigger_layer: self.trigger_layer,
            applied_alpha: if self.triggered { self.applied_alpha } else { 0.0 },
            per_layer_uncertainty: self.probes,
        }
    }
}

impl LayerHook for PolicyHook<'_> {
    fn intercept_ffn(
        &mut self,
        layer: usize,
        ffn_input: &Vector,
        lw: &LayerWeights,
    ) -> Result<Option<Vector>> {
        let alpha = match self.mode {
            HookMode::Static { layer: inject, alpha } if inject == layer => {
                self.triggered = true;
                self.trigger_layer = Some(inject);
                self.applied_alpha = alpha;
                Some(alpha)
            }
            HookMode::Dynamic { .. } if self.pending_injection == Some(layer) => {
                self.pending_injection = None;
                Some(self.applied_alpha)
            }
            _ => None,
        };
        match alpha {
            Some(a) => Ok(Some(ffn_with_vr(ffn_input, self.visual, a, lw)?)),
            None => Ok(None),
        }
    }

    fn after_layer(&mut self, layer: usize, hidden: &Vector) -> Result<()> {
        if !self.wants_probe(layer) {
            return Ok(());
        }
        let logits = early_exit_logits(self.weights, hidden)?;
        let u = normalized_entropy(&softmax(&logits)?)? as f32;
        self.probes[layer - 1] = Some(u);
        if let HookMode::Dynamic {
            gamma,
            lo,
            hi,
            scaled_alpha,
            fixed_alpha,
        } = self.mode
        {
            if self.armed && layer >= lo && layer <= hi && u > gamma {
                self.armed = false;
                self.triggered = true;
                self.trigger_layer = Some(layer);
                self.applied_alpha = if scaled_alpha {
                    dynamic_alpha(u, gamma)
                } else {
                    fixed_alpha
                };
                self.pending_injection = Some(layer + 1);
            }
        }
        Ok(())
    }
}

/// One decoding step of a visual-retracing strategy; chooses the next
/// token greedily from the final logits.
pub fn decode_step_memvr(
    weights: &Weights,
    cache: &mut KvCache,
    policy: &DecodePolicy,
    visual: &VisualContext,
    next_embedding: &Vector,
    probe_mode: ProbeMode,
) -> Result<StepDecision> {
    if !policy.strategy.is_memvr() {
        return Err(Error::InvalidPolicy(format!(
            "decode_step_memvr requires a memvr strategy, got {}",
            policy.strategy
        )));
    }
    let mut hook = PolicyHook::for_policy(weights, visual, policy, probe_mode)?;
    let out = forward_step(weights, cache, next_embedding, Some(&mut hook))?;
    let token = argmax(&out.final_logits)? as u32;
    Ok(hook.into_decision(token))
}

/// One decoding step of the contrastive baseline: one clean and one
/// distorted forward pass, a plausibility mask from the clean
/// distribution, then an argmax over contrasted logits.
pub fn decode_step_contrastive(
    weights: &Weights,
    clean_cache: &mut KvCache,
    distorted_cache: &mut KvCache,
    policy: &DecodePolicy,
    visual: &VisualContext,
    next_embedding: &Vector,
    probe_mode: ProbeMode,
) -> Result<StepDecision> {
    if policy.strategy != Strategy::Contrastive {
        return Err(Error::InvalidPolicy(format!(
            "decode_step_contrastive requires the contrastive strategy, got {}",
            policy.strategy
        )));
    }
    let mut hook = PolicyHook::observe(weights, visual, probe_mode);
    let clean = forward_step(weights, clean_cache, next_embedding, Some(&mut hook))?;
    let distorted = forward_step(weights, distorted_cache, next_embedding, None)?;
    let token = contrast_argmax(&clean.final_logits, &distorted.final_logits, policy.cd_beta)?;
    Ok(hook.into_decision(token))
}

/// Keep tokens whose clean probability is at least a tenth of the maximum,
/// then pick the highest contrasted logit among them (lowest id on ties).
/// The contrast is computed as clean + beta * (clean - distorted), which
/// equals (1 + beta) * clean - beta * distorted and degenerates exactly to
/// the clean logits when beta is 0 or the two passes agree.
fn contrast_argmax(clean: &Vector, distorted: &Vector, beta: f32) -> Result<u32> {
    if clean.dim() != distorted.dim() {
        return Err(Error::DimMismatch {
            op: "contrast_argmax",
            expected: clean.dim(),
            got: distorted.dim(),
        });
    }
    let probs = softmax(clean)?;
    let p_max = probs.data().iter().fold(f32::NEG_INFINITY, |m, &p| m.max(p));
    let floor = 0.1 * p_max;
    let b = beta as f64;
    let mut best: Option<(usize, f64)> = None;
    for i in 0..clean.dim() {
        if probs.data()[i] < floor {
            continue;
        }
        let c = clean.data()[i] as f64;
        let d = distorted.data()[i] as f64;
        let score = c + b * (c - d);
        if best.map_or(true, |(_, s)| score > s) {
            best = Some((i, score));
        }
    }
    // The argmax of the clean distribution always survives the mask.
    Ok(best.expect("plausibility mask kept no token").0 as u32)
}

/// Inverse-CDF draw from a probability vector.
fn sample_index(probs: &[f32], prng: &mut Prng) -> usize {
    let draw = prng.next_uniform();
    let mut cum = 0.0f64;
    for (i, &p) in probs.iter().enumerate() {
        cum += p as f64;
        if draw < cum {
            return i;
        }
    }
    probs.len() - 1
}

/// Clone of a visual context with gaussian noise added to every entry.
fn distort_visual(visual: &VisualContext, sigma: f32, seed: u64) -> Result<VisualContext> {
    if sigma == 0.0 {
        return Ok(visual.clone());
    }
    let mut prng = Prng::new(seed);
    let data = visual
        .tokens()
        .data()
        .iter()
        .map(|&x| x + (prng.next_gaussian() * sigma as f64) as f32)
        .collect();
    VisualContext::new(Matrix::new(visual.num_tokens(), visual.dim(), data)?)
}

/// Owns the mutable state of one autoregressive generation: caches, the
/// sampling stream, and the embedding waiting to be fed next. Built
/// pre-filled; each [`step`](StepRunner::step) call emits one token.
pub struct StepRunner<'a> {
    weights: &'a Weights,
    policy: &'a DecodePolicy,
    visual: &'a VisualContext,
    probe_mode: ProbeMode,
    cache: KvCache,
    distorted_cache: Option<KvCache>,
    sampler: Prng,
    pending: Vector,
}

impl<'a> StepRunner<'a> {
    /// Validate the policy, pre-fill caches with the visual-then-text
    /// prompt, and stand ready to decode. The last prompt embedding is fed
    /// on the first `step` call, so the full policy machinery (probes,
    /// triggers, contrast) already applies to the first emitted token.
    pub fn new(
        weights: &'a Weights,
        policy: &'a DecodePolicy,
        visual: &'a VisualContext,
        prompt_ids: &[u32],
        probe_mode: ProbeMode,
    ) -> Result<Self> {
        policy.validate(&weights.config)?;
        visual.check_matches(&weights.config)?;
        if prompt_ids.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        let embeds = embed_prompt(weights, prompt_ids, visual)?;

        let mut cache = KvCache::new(&weights.config);
        for e in &embeds[..embeds.len() - 1] {
            forward_step(weights, &mut cache, e, None)?;
        }

        let distorted_cache = if policy.strategy == Strategy::Contrastive {
            let noisy = distort_visual(visual, policy.cd_noise_sigma, policy.sample_seed)?;
            let noisy_embeds = embed_prompt(weights, prompt_ids, &noisy)?;
            let mut dist = KvCache::new(&weights.config);
            for e in &noisy_embeds[..noisy_embeds.len() - 1] {
                forward_step(weights, &mut dist, e, None)?;
            }
            Some(dist)
        } else {
            None
        };

        let pending = embeds.last().expect("nonempty prompt").clone();
        Ok(StepRunner {
            weights,
            policy,
            visual,
            probe_mode,
            cache,
            distorted_cache,
            sampler: Prng::new(policy.sample_seed),
            pending,
        })
    }

    /// Decode one token.
    pub fn step(&mut self) -> Result<StepDecision> {
        let pending = self.pending.clone();
        let decision = match self.policy.strategy {
            Strategy::Greedy | Strategy::Sample => self.plain_step(&pending)?,
            Strategy::MemvrStatic | Strategy::MemvrDynamic | Strategy::MemvrDynamicAlpha => {
                decode_step_memvr(
                    self.weights,
                    &mut self.cache,
                    self.policy,
                    self.visual,
                    &pending,
                    self.probe_mode,
                )?
            }
            Strategy::Contrastive => decode_step_contrastive(
                self.weights,
                &mut self.cache,
                self.distorted_cache.as_mut().expect("contrastive cache"),
                self.policy,
                self.visual,
                &pending,
                self.probe_mode,
            )?,
        };
        self.pending = Vector::new(
            self.weights
                .token_embedding
                .row(decision.token_id as usize)
                .to_vec(),
        );
        Ok(decision)
    }

    fn plain_step(&mut self, pending: &Vector) -> Result<StepDecision> {
        let mut hook = PolicyHook::observe(self.weights, self.visual, self.probe_mode);
        let out = forward_step(self.weights, &mut self.cache, pending, Some(&mut hook))?;
        let token = match self.policy.strategy {
            Strategy::Greedy => argmax(&out.final_logits)? as u32,
            Strategy::Sample => {
                let scaled = Vector::new(
                    out.final_logits
                        .data()
                        .iter()
                        .map(|&x| x / self.policy.temperature)
                        .collect(),
                );
                let probs = softmax(&scaled)?;
                sample_index(probs.data(), &mut self.sampler) as u32
            }
            other => {
                return Err(Error::InvalidPolicy(format!(
                    "plain step does not handle {other}"
                )))
            }
        };
        Ok(hook.into_decision(token))
    }

    /// Completed forward passes across all caches, prefill included.
    pub fn forward_passes(&self) -> u64 {
        self.cache.forward_passes()
            + self
                .distorted_cache
                .as_ref()
                .map_or(0, |c| c.forward_passes())
    }
}

/// Tokens plus the per-step trace of one generation.
#[derive(Debug, Clone)]
pub struct Generation {
    pub tokens: Vec<u32>,
    pub trace: UncertaintyTrace,
}

/// Autoregressive generation: pre-fill the visual-then-text prompt, then
/// emit up to `max_new_tokens` tokens, stopping after the end-of-sequence
/// id. Probes run exhaustively so the returned trace is complete.
pub fn generate(
    weights: &Weights,
    policy: &DecodePolicy,
    visual: &VisualContext,
    prompt_ids: &[u32],
) -> Result<Generation> {
    if prompt_ids.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let cfg = &weights.config;
    let needed = cfg.num_visual_tokens + prompt_ids.len() + policy.max_new_tokens;
    if needed > cfg.max_seq_len {
        return Err(Error::SequenceTooLong {
            needed,
            max_seq_len: cfg.max_seq_len,
        });
    }
    let mut runner = StepRunner::new(weights, policy, visual, prompt_ids, ProbeMode::Exhaustive)?;
    let mut trace = UncertaintyTrace::new(cfg.num_layers - 1);
    let mut tokens = Vec::new();
    for _ in 0..policy.max_new_tokens {
        let decision = runner.step()?;
        tokens.push(decision.token_id);
        let done = decision.token_id == EOS_TOKEN_ID;
        trace.record_step(&decision)?;
        if done {
            break;
        }
    }
    Ok(Generation { tokens, trace })
}
