//! Desk-scale, deterministic, decoder-only transformer inference engine
//! with visual-token re-injection decoding strategies, per-layer
//! uncertainty instrumentation, and a latency benchmark harness.
//!
//! The model is a pre-norm transformer with rotary position embeddings
//! and a KV cache, sized to run comfortably on a laptop CPU. Weights are
//! synthesized from a seeded generator rather than trained, which keeps
//! every run reproducible bit for bit; the interesting behavior lives in
//! the decoding layer on top:
//!
//! * greedy and temperature sampling baselines,
//! * visual retracing, which re-injects a prompt's visual tokens through
//!   a feed-forward block either at a fixed layer or when per-layer
//!   early-exit uncertainty crosses a threshold,
//! * a contrastive baseline that decodes against a noise-distorted copy
//!   of the visual context at twice the forward-pass cost.
//!
//! All floating-point state is stored in f32 and accumulated in f64.

pub mod bench;
pub mod config;
pub mod decode;
pub mod error;
pub mod rng;
pub mod tensor;
pub mod trace;
pub mod transformer;
pub mod weights;

pub use bench::{benchmark, render_table, BenchReport, StrategyReport};
pub use config::ModelConfig;
pub use decode::{
    decode_step_contrastive, decode_step_memvr, dynamic_alpha, ffn_with_vr, generate,
    normalized_entropy, visual_retrace, DecodePolicy, Generation, ProbeMode, StepDecision,
    StepRunner, Strategy, DEFAULT_ALPHA, DEFAULT_GAMMA, EOS_TOKEN_ID,
};
pub use error::{Error, Result};
pub use rng::Prng;
pub use tensor::{argmax, matvec, rmsnorm, silu, softmax, Matrix, Vector};
pub use trace::{TraceRow, TraceStats, UncertaintyTrace};
pub use transformer::{
    early_exit_logits, embed_prompt, ffn_forward, ffn_forward_key_value, forward_step, KvCache,
    LayerHook, StepOutput, RMSNORM_EPS,
};
pub use weights::{
    fnv1a64, load_visual_context, load_weights, save_visual_context, save_weights,
    synthesize_visual_context, synthesize_weights, LayerWeights, VisualContext, Weights,
};
