//! Parameter containers, deterministic synthesis, and the binary file
//! formats for weights and visual contexts.
//!
//! # Weight file layout
//!
//! * magic `MEMVRTOY` (8 bytes)
//! * format version, `u32` little-endian, currently 1
//! * seven `u32` little-endian config fields: num_layers, hidden_dim,
//!   ffn_dim, vocab_size, num_heads, num_visual_tokens, max_seq_len
//! * raw little-endian `f32` payload in canonical parameter order:
//!   token embedding (vocab_size x hidden_dim, row-major), then per layer
//!   Q, K, V, O (each hidden_dim x hidden_dim, output-major rows),
//!   W1 (ffn_dim rows of hidden_dim; row i is key i),
//!   W2 (hidden_dim rows of ffn_dim; column i is value i),
//!   attention-norm gain, FFN-norm gain (hidden_dim each),
//!   then the final norm gain, then the vocabulary head
//!   (vocab_size x hidden_dim, row-major).
//!
//! Synthesis draws every parameter from a seeded SplitMix64 stream in
//! exactly this order, so a weight file is a pure function of
//! (config, seed) and round-trips byte-for-byte.
//!
//! # Visual context file layout
//!
//! * magic `MEMVRIMG` (8 bytes)
//! * `u32` hidden_dim, `u32` num_visual_tokens (little-endian)
//! * little-endian `f32` payload, one visual token after another
//!   (each token is hidden_dim consecutive values).

use std::fs;
use std::path::Path;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::{Matrix, Vector};

pub const WEIGHT_MAGIC: &[u8; 8] = b"MEMVRTOY";
pub const WEIGHT_FORMAT_VERSION: u32 = 1;
pub const VISUAL_MAGIC: &[u8; 8] = b"MEMVRIMG";

/// Standard deviation used for every synthesized parameter.
pub const WEIGHT_INIT_STD: f64 = 0.02;

const WEIGHT_HEADER_LEN: usize = 8 + 4 + 7 * 4;
const VISUAL_HEADER_LEN: usize = 8 + 4 + 4;

/// Parameters of one transformer layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    /// Attention projections, each hidden_dim x hidden_dim with rows
    /// indexed by output dimension.
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    /// First FFN matrix, stored key-major: ffn_dim rows of hidden_dim
    /// values; row i is key k_i.
    pub w1: Matrix,
    /// Second FFN matrix, stored output-major: hidden_dim rows of ffn_dim
    /// values; column i is value v_i.
    pub w2: Matrix,
    /// Gain of the attention-sublayer norm.
    pub attn_gain: Vector,
    /// Gain of the FFN-sublayer norm.
    pub ffn_gain: Vector,
}

/// Full parameter set of the toy transformer.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub config: ModelConfig,
    /// Token embedding table; row t embeds token id t.
    pub token_embedding: Matrix,
    pub layers: Vec<LayerWeights>,
    /// Gain of the final norm applied before the vocabulary head.
    pub final_gain: Vector,
    /// Vocabulary head; logit t is the dot of row t with the normalized
    /// hidden state.
    pub vocab_head: Matrix,
}

/// Dimension-aligned visual tokens; one token per row.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualContext {
    tokens: Matrix,
}

impl VisualContext {
    pub fn new(tokens: Matrix) -> Result<Self> {
        if tokens.rows() == 0 || tokens.cols() == 0 {
            return Err(Error::EmptyInput("VisualContext::new"));
        }
        if !tokens.data().iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("visual context tokens"));
        }
        Ok(VisualContext { tokens })
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.rows()
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }

    pub fn token(&self, i: usize) -> &[f32] {
        self.tokens.row(i)
    }

    pub fn tokens(&self) -> &Matrix {
        &self.tokens
    }

    pub fn check_matches(&self, config: &ModelConfig) -> Result<()> {
        if self.dim() != config.hidden_dim {
            return Err(Error::DimMismatch {
                op: "visual token dimension",
                expected: config.hidden_dim,
                got: self.dim(),
            });
        }
        if self.num_tokens() != config.num_visual_tokens {
            return Err(Error::DimMismatch {
                op: "visual token count",
                expected: config.num_visual_tokens,
                got: self.num_tokens(),
            });
        }
        Ok(())
    }
}

fn draw_block(prng: &mut Prng, len: usize) -> Vec<f32> {
    (0..len)
        .map(|_| (prng.next_gaussian() * WEIGHT_INIT_STD) as f32)
        .collect()
}

/// Deterministically synthesize a full parameter set from a seed.
pub fn synthesize_weights(config: &ModelConfig, seed: u64) -> Result<Weights> {
    config.validate()?;
    let d = config.hidden_dim;
    let ff = config.ffn_dim;
    let n = config.vocab_size;
    let mut prng = Prng::new(seed);

    let token_embedding = Matrix::new(n, d, draw_block(&mut prng, n * d))?;
    let mut layers = Vec::with_capacity(config.num_layers);
    for _ in 0..config.num_layers {
        layers.push(LayerWeights {
            wq: Matrix::new(d, d, draw_block(&mut prng, d * d))?,
            wk: Matrix::new(d, d, draw_block(&mut prng, d * d))?,
            wv: Matrix::new(d, d, draw_block(&mut prng, d * d))?,
            wo: Matrix::new(d, d, draw_block(&mut prng, d * d))?,
            w1: Matrix::new(ff, d, draw_block(&mut prng, ff * d))?,
            w2: Matrix::new(d, ff, draw_block(&mut prng, d * ff))?,
            attn_gain: Vector::new(draw_block(&mut prng, d)),
            ffn_gain: Vector::new(draw_block(&mut prng, d)),
        });
    }
    let final_gain = Vector::new(draw_block(&mut prng, d));
    let vocab_head = Matrix::new(n, d, draw_block(&mut prng, n * d))?;

    Ok(Weights {
        config: *config,
        token_embedding,
        layers,
        final_gain,
        vocab_head,
    })
}

/// Deterministically synthesize visual tokens: gaussian entries, each token
/// rescaled to unit L2 norm.
pub fn synthesize_visual_context(config: &ModelConfig, seed: u64) -> Result<VisualContext> {
    config.validate()?;
    let d = config.hidden_dim;
    let nv = config.num_visual_tokens;
    let mut prng = Prng::new(seed);
    let mut data = vec![0.0f32; nv * d];
    for t in 0..nv {
        let row = &mut data[t * d..(t + 1) * d];
        for x in row.iter_mut() {
            *x = prng.next_gaussian() as f32;
        }
        let norm = row.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
        for x in row.iter_mut() {
            *x = (*x as f64 / norm) as f32;
        }
    }
    VisualContext::new(Matrix::new(nv, d, data)?)
}

/// Canonical parameter blocks in file order.
fn param_blocks(weights: &Weights) -> Vec<&[f32]> {
    let mut blocks = Vec::with_capacity(2 + weights.layers.len() * 8 + 1);
    blocks.push(weights.token_embedding.data());
    for lw in &weights.layers {
        blocks.push(lw.wq.data());
        blocks.push(lw.wk.data());
        blocks.push(lw.wv.data());
        blocks.push(lw.wo.data());
        blocks.push(lw.w1.data());
        blocks.push(lw.w2.data());
        blocks.push(lw.attn_gain.data());
        blocks.push(lw.ffn_gain.data());
    }
    blocks.push(weights.final_gain.data());
    blocks.push(weights.vocab_head.data());
    blocks
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Serialize weights to the documented binary format.
pub fn save_weights(weights: &Weights, path: &Path) -> Result<()> {
    let c = &weights.config;
    let mut buf = Vec::with_capacity(WEIGHT_HEADER_LEN + c.param_count() * 4);
    buf.extend_from_slice(WEIGHT_MAGIC);
    buf.extend_from_slice(&WEIGHT_FORMAT_VERSION.to_le_bytes());
    for field in [
        c.num_layers,
        c.hidden_dim,
        c.ffn_dim,
        c.vocab_size,
        c.num_heads,
        c.num_visual_tokens,
        c.max_seq_len,
    ] {
        buf.extend_from_slice(&(field as u32).to_le_bytes());
    }
    for block in param_blocks(weights) {
        for &x in block {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, &buf).map_err(|e| io_err(path, e))
}

fn parse_f32_payload(path: &Path, bytes: &[u8], expected_floats: usize, what: &'static str) -> Result<Vec<f32>> {
    let expected_bytes = expected_floats as u64 * 4;
    let got_bytes = bytes.len() as u64;
    if got_bytes < expected_bytes {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected_bytes,
            got_bytes,
        });
    }
    if got_bytes > expected_bytes {
        return Err(Error::TrailingBytes {
            path: path.to_path_buf(),
            extra_bytes: got_bytes - expected_bytes,
        });
    }
    let mut out = Vec::with_capacity(expected_floats);
    for chunk in bytes.chunks_exact(4) {
        out.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }
    if !out.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], off: usize) -> u32 {
    u32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]])
}

/// Load weights from the documented binary format.
pub fn load_weights(path: &Path) -> Result<Weights> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() < 8 || &bytes[..8] != WEIGHT_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: bytes.iter().copied().take(8).collect(),
        });
    }
    if bytes.len() < WEIGHT_HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected_bytes: WEIGHT_HEADER_LEN as u64,
            got_bytes: bytes.len() as u64,
        });
    }
    let version = read_u32(&bytes, 8);
    if version != WEIGHT_FORMAT_VERSION {
        return Err(Error::BadVersion {
            path: path.to_path_buf(),
            found: version,
        });
    }
    let config = ModelConfig {
        num_layers: read_u32(&bytes, 12) as usize,
        hidden_dim: read_u32(&bytes, 16) as usize,
        ffn_dim: read_u32(&bytes, 20) as usize,
        vocab_size: read_u32(&bytes, 24) as usize,
        num_heads: read_u32(&bytes, 28) as usize,
        num_visual_tokens: read_u32(&bytes, 32) as usize,
        max_seq_len: read_u32(&bytes, 36) as usize,
    };
    config.validate()?;
    let payload = parse_f32_payload(
        path,
        &bytes[WEIGHT_HEADER_LEN..],
        config.param_count(),
        "weight file payload",
    )?;

    let d = config.hidden_dim;
    let ff = config.ffn_dim;
    let n = config.vocab_size;
    let mut off = 0usize;
    let mut take = |len: usize| {
        let slice = payload[off..off + len].to_vec();
        off += len;
        slice
    };

    let token_embedding = Matrix::new(n, d, take(n * d))?;
    let mut layers = Vec::with_capacity(config.num_layers);
    for _ in 0..config.num_layers {
        layers.push(LayerWeights {
            wq: Matrix::new(d, d, take(d * d))?,
            wk: Matrix::new(d, d, take(d * d))?,
            wv: Matrix::new(d, d, take(d * d))?,
            wo: Matrix::new(d, d, take(d * d))?,
            w1: Matrix::new(ff, d, take(ff * d))?,
            w2: Matrix::new(d, ff, take(d * ff))?,
            attn_gain: Vector::new(take(d)),
            ffn_gain: Vector::new(take(d)),
        });
    }
    let final_gain = Vector::new(take(d));
    let vocab_head = Matrix::new(n, d, take(n * d))?;

    Ok(Weights {
        config,
        token_embedding,
        layers,
        final_gain,
        vocab_head,
    })
}

/// Serialize a visual context to the documented binary format.
pub fn save_visual_context(visual: &VisualContext, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(VISUAL_HEADER_LEN + visual.tokens.data().len() * 4);
    buf.extend_from_slice(VISUAL_MAGIC);
    buf.extend_from_slice(&(visual.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(visual.num_tokens() as u32).to_le_bytes());
    for &x in visual.tokens.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, &buf).map_err(|e| io_err(path, e))
}

/// Load a visual context from the documented binary format.
pub fn load_visual_context(path: &Path) -> Result<VisualContext> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() < 8 || &bytes[..8] != VISUAL_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: bytes.iter().copied().take(8).collect(),
        });
    }
    if bytes.len() < VISUAL_HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected_bytes: VISUAL_HEADER_LEN as u64,
            got_bytes: bytes.len() as u64,
        });
    }
    let d = read_u32(&bytes, 8) as usize;
    let nv = read_u32(&bytes, 12) as usize;
    if d == 0 || nv == 0 {
        return Err(Error::InvalidConfig(format!(
            "visual context file declares {nv} tokens of dimension {d}"
        )));
    }
    let payload = parse_f32_payload(
        path,
        &bytes[VISUAL_HEADER_LEN..],
        nv * d,
        "visual context file payload",
    )?;
    VisualContext::new(Matrix::new(nv, d, payload)?)
}

/// FNV-1a 64-bit hash, used as the weight-file checksum.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}
