//! Token encoders: `(tokens) -> L x d` matrix of contextual embeddings.
//!
//! Two implementations sit behind [`TokenEncoder`]:
//!
//! * [`ToyEncoder`]: a self-contained trainable encoder for tests and small
//!   corpora. Each token gets a deterministic hash-derived vector plus a
//!   sinusoidal position signal, then one residual self-attention mixing
//!   layer (the only trainable part) makes the rows context sensitive.
//! * [`EmbeddingTableEncoder`]: a frozen lookup table loaded from a JSON
//!   export of an external model, for plugging in real pretrained vectors.
//!
//! Documents longer than the encoder window are handled by
//! [`TokenEncoder::encode_document`]: overlapping windows advance by a
//! fixed stride and each token keeps the embedding from the window whose
//! center is nearest (earlier window on ties).

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scale of the additive sinusoidal position signal relative to the
/// unit-scale token vectors. Nonzero so that repeated tokens in one
/// document get distinct rows; small so token identity dominates.
const POSITION_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Embedding width `d`.
    pub hidden_size: usize,
    /// Maximum tokens per encoder call.
    pub window: usize,
    /// Window step for long documents; must not exceed `window`.
    pub stride: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden_size: 32,
            window: 512,
            stride: 256,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 {
            return Err(Error::Config("encoder hidden_size must be positive".into()));
        }
        if self.window == 0 || self.stride == 0 {
            return Err(Error::Config("encoder window and stride must be positive".into()));
        }
        if self.stride > self.window {
            return Err(Error::Config(format!(
                "encoder stride {} exceeds window {}; tokens would be skipped",
                self.stride, self.window
            )));
        }
        Ok(())
    }
}

pub trait TokenEncoder {
    fn config(&self) -> &EncoderConfig;

    /// Encodes at most one window of tokens. Longer input is a
    /// [`Error::WindowOverflow`]; use [`TokenEncoder::encode_document`].
    fn encode(&self, tokens: &[String]) -> Result<Array2<f64>>;

    /// Encodes a document of any length via overlapping windows.
    fn encode_document(&self, tokens: &[String]) -> Result<Array2<f64>> {
        let cfg = self.config();
        if tokens.len() <= cfg.window {
            return self.encode(tokens);
        }
        let windows = plan_windows(tokens.len(), cfg.window, cfg.stride);
        let owners = assign_rows(&windows, tokens.len());
        let mut out = Array2::zeros((tokens.len(), cfg.hidden_size));
        for (w, &(start, end)) in windows.iter().enumerate() {
            let encoded = self.encode(&tokens[start..end])?;
            for (t, &owner) in owners.iter().enumerate().take(end).skip(start) {
                if owner == w {
                    out.row_mut(t).assign(&encoded.row(t - start));
                }
            }
        }
        Ok(out)
    }
}

/// Window layout for a document of `len` tokens: starts at multiples of
/// `stride`, each `window` wide, the last clipped to end at `len`.
pub(crate) fn plan_windows(len: usize, window: usize, stride: usize) -> Vec<(usize, usize)> {
    if len <= window {
        return vec![(0, len)];
    }
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + window).min(len);
        out.push((start, end));
        if end == len {
            return out;
        }
        start += stride;
    }
}

/// For each token position, the index of the covering window whose center
/// is closest (ties go to the earlier window).
pub(crate) fn assign_rows(windows: &[(usize, usize)], len: usize) -> Vec<usize> {
    let centers: Vec<f64> = windows
        .iter()
        .map(|&(s, e)| (s + e - 1) as f64 / 2.0)
        .collect();
    (0..len)
        .map(|t| {
            let mut best: Option<(usize, f64)> = None;
            for (w, &(s, e)) in windows.iter().enumerate() {
                if t < s || t >= e {
                    continue;
                }
                let dist = (t as f64 - centers[w]).abs();
                let better = match best {
                    None => true,
                    Some((_, d)) => dist < d,
                };
                if better {
                    best = Some((w, dist));
                }
            }
            best.expect("every position is covered by some window").0
        })
        .collect()
}

/// Per-window intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Array2<f64>,
    ctx: Array2<f64>,
}

/// Forward bookkeeping for a whole document: the window layout, the row
/// ownership used to assemble the output, and one cache per window.
#[derive(Debug)]
pub struct EncodeTrace {
    windows: Vec<(usize, usize)>,
    owners: Vec<usize>,
    caches: Vec<AttentionCache>,
}

/// Gradients of the toy encoder's trainable weights.
#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
}

/// Deterministic trainable encoder: hash embeddings + positions + one
/// residual self-attention layer.
///
/// `Y = X + softmax(X Wq (X Wk)^T / sqrt(d)) (X Wv) Wo`
///
/// The hash embeddings are a pure function of `(seed, token string)`, so no
/// vocabulary is stored and encoding is reproducible across processes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyEncoder {
    config: EncoderConfig,
    seed: u64,
    pub(crate) wq: Array2<f64>,
    pub(crate) wk: Array2<f64>,
    pub(crate) wv: Array2<f64>,
    pub(crate) wo: Array2<f64>,
}

impl ToyEncoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_size;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x746f795f656e63);
        let std = 0.5 / (d as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let mut next = || Array2::from_shape_fn((d, d), |_| normal.sample(&mut rng));
        Ok(ToyEncoder {
            config,
            seed,
            wq: next(),
            wk: next(),
            wv: next(),
            wo: next(),
        })
    }

    /// Hash-derived unit-scale vector for one token string.
    fn token_vector(&self, token: &str) -> Array1<f64> {
        let d = self.config.hidden_size;
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(token.as_bytes()) ^ self.seed.rotate_left(17));
        let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("finite std");
        Array1::from_shape_fn(d, |_| normal.sample(&mut rng))
    }

    /// Token vectors plus sinusoidal positions for one window.
    fn embed(&self, tokens: &[String]) -> Array2<f64> {
        let d = self.config.hidden_size;
        let mut x = Array2::zeros((tokens.len(), d));
        for (t, token) in tokens.iter().enumerate() {
            let mut row = self.token_vector(token);
            for i in 0..d {
                let rate = 10000f64.powf(-((i / 2 * 2) as f64) / d as f64);
                let angle = t as f64 * rate;
                row[i] += POSITION_SCALE * if i % 2 == 0 { angle.sin() } else { angle.cos() };
            }
            x.row_mut(t).assign(&row);
        }
        x
    }

    fn forward_window(&self, x: Array2<f64>) -> (Array2<f64>, AttentionCache) {
        let d = self.config.hidden_size as f64;
        let q = x.dot(&self.wq);
        let k = x.dot(&self.wk);
        let v = x.dot(&self.wv);
        let mut attn = q.dot(&k.t()) / d.sqrt();
        for mut row in attn.axis_iter_mut(Axis(0)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|s| (s - max).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|e| e / sum);
        }
        let ctx = attn.dot(&v);
        let y = &x + &ctx.dot(&self.wo);
        (
            y,
            AttentionCache {
                x,
                q,
                k,
                v,
                attn,
                ctx,
            },
        )
    }

    /// Forward pass over a document of any length, keeping what the
    /// backward pass needs. Inference paths can use the plain trait methods.
    pub fn forward_trace(&self, tokens: &[String]) -> (Array2<f64>, EncodeTrace) {
        let cfg = &self.config;
        let windows = plan_windows(tokens.len(), cfg.window, cfg.stride);
        let owners = assign_rows(&windows, tokens.len());
        let mut out = Array2::zeros((tokens.len(), cfg.hidden_size));
        let mut caches = Vec::with_capacity(windows.len());
        for (w, &(start, end)) in windows.iter().enumerate() {
            let (y, cache) = self.forward_window(self.embed(&tokens[start..end]));
            for (t, &owner) in owners.iter().enumerate().take(end).skip(start) {
                if owner == w {
                    out.row_mut(t).assign(&y.row(t - start));
                }
            }
            caches.push(cache);
        }
        (
            out,
            EncodeTrace {
                windows,
                owners,
                caches,
            },
        )
    }

    /// Accumulates weight gradients for `d_out` (same shape as the forward
    /// output). Rows not owned by a window contribute nothing to it; the
    /// hash/position inputs are frozen, so no gradient flows below X.
    pub fn backward_trace(&self, trace: &EncodeTrace, d_out: &Array2<f64>, grads: &mut AttentionGrads) {
        let d = self.config.hidden_size;
        for (w, &(start, end)) in trace.windows.iter().enumerate() {
            let len = end - start;
            if len == 0 {
                continue;
            }
            let mut dy = Array2::zeros((len, d));
            let mut any = false;
            for t in start..end {
                if trace.owners[t] == w {
                    let row = d_out.row(t);
                    if row.iter().any(|&g| g != 0.0) {
                        any = true;
                    }
                    dy.row_mut(t - start).assign(&row);
                }
            }
            if !any {
                continue;
            }
            self.backward_window(&trace.caches[w], &dy, grads);
        }
    }

    fn backward_window(&self, cache: &AttentionCache, dy: &Array2<f64>, grads: &mut AttentionGrads) {
        let scale = 1.0 / (self.config.hidden_size as f64).sqrt();
        // Y = X + C Wo with C = A V.
        grads.wo = &grads.wo + &cache.ctx.t().dot(dy);
        let dc = dy.dot(&self.wo.t());
        let mut da = dc.dot(&cache.v.t());
        let dv = cache.attn.t().dot(&dc);
        // Row-wise softmax backward: dS = A .* (dA - rowsum(dA .* A)).
        for (mut da_row, a_row) in da.axis_iter_mut(Axis(0)).zip(cache.attn.axis_iter(Axis(0))) {
            let dot: f64 = da_row.iter().zip(a_row.iter()).map(|(x, y)| x * y).sum();
            for (g, &a) in da_row.iter_mut().zip(a_row.iter()) {
                *g = a * (*g - dot);
            }
        }
        let ds = da; // now holds dS
        let dq = ds.dot(&cache.k) * scale;
        let dk = ds.t().dot(&cache.q) * scale;
        grads.wq = &grads.wq + &cache.x.t().dot(&dq);
        grads.wk = &grads.wk + &cache.x.t().dot(&dk);
        grads.wv = &grads.wv + &cache.x.t().dot(&dv);
    }

    pub fn zero_grads(&self) -> AttentionGrads {
        let d = self.config.hidden_size;
        AttentionGrads {
            wq: Array2::zeros((d, d)),
            wk: Array2::zeros((d, d)),
            wv: Array2::zeros((d, d)),
            wo: Array2::zeros((d, d)),
        }
    }

    pub fn weights(&self) -> [&Array2<f64>; 4] {
        [&self.wq, &self.wk, &self.wv, &self.wo]
    }

    pub fn weights_mut(&mut self) -> [&mut Array2<f64>; 4] {
        [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo]
    }
}

impl TokenEncoder for ToyEncoder {
    fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn encode(&self, tokens: &[String]) -> Result<Array2<f64>> {
        if tokens.len() > self.config.window {
            return Err(Error::WindowOverflow {
                len: tokens.len(),
                window: self.config.window,
            });
        }
        let (y, _) = self.forward_window(self.embed(tokens));
        Ok(y)
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Frozen per-token vectors exported from an external model. Tokens missing
/// from the table fall back to a designated vector (zeros by default).
/// Nothing here trains; prototypes and downstream heads still do.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingTableEncoder {
    config: EncoderConfig,
    vectors: BTreeMap<String, Vec<f64>>,
    fallback: Vec<f64>,
}

/// On-disk layout for [`EmbeddingTableEncoder::from_json_file`].
#[derive(Debug, Deserialize)]
struct EmbeddingTableFile {
    hidden_size: usize,
    #[serde(default)]
    window: Option<usize>,
    #[serde(default)]
    stride: Option<usize>,
    vectors: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    fallback: Option<Vec<f64>>,
}

impl EmbeddingTableEncoder {
    pub fn new(
        config: EncoderConfig,
        vectors: BTreeMap<String, Vec<f64>>,
        fallback: Option<Vec<f64>>,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_size;
        for (token, v) in &vectors {
            if v.len() != d {
                return Err(Error::Validation(format!(
                    "embedding for token {token:?} has {} dims, expected {d}",
                    v.len()
                )));
            }
        }
        let fallback = fallback.unwrap_or_else(|| vec![0.0; d]);
        if fallback.len() != d {
            return Err(Error::Validation(format!(
                "fallback embedding has {} dims, expected {d}",
                fallback.len()
            )));
        }
        Ok(EmbeddingTableEncoder {
            config,
            vectors,
            fallback,
        })
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let data = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
        let file: EmbeddingTableFile = serde_json::from_str(&data).map_err(|e| Error::Format {
            path: display,
            line: 0,
            message: e.to_string(),
        })?;
        let defaults = EncoderConfig::default();
        Self::new(
            EncoderConfig {
                hidden_size: file.hidden_size,
                window: file.window.unwrap_or(defaults.window),
                stride: file.stride.unwrap_or(defaults.stride),
            },
            file.vectors,
            file.fallback,
        )
    }
}

impl TokenEncoder for EmbeddingTableEncoder {
    fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn encode(&self, tokens: &[String]) -> Result<Array2<f64>> {
        if tokens.len() > self.config.window {
            return Err(Error::WindowOverflow {
                len: tokens.len(),
                window: self.config.window,
            });
        }
        let d = self.config.hidden_size;
        let mut out = Array2::zeros((tokens.len(), d));
        for (t, token) in tokens.iter().enumerate() {
            let v = self.vectors.get(token).unwrap_or(&self.fallback);
            for (i, &x) in v.iter().enumerate() {
                out[[t, i]] = x;
            }
        }
        Ok(out)
    }
}

/// Serializable dispatch over the available encoders.
// A process holds a handful of these at most, so the size gap between the
// variants does not justify boxing.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderImpl {
    Toy(ToyEncoder),
    Table(EmbeddingTableEncoder),
}

impl EncoderImpl {
    #[must_use]
    pub fn as_toy(&self) -> Option<&ToyEncoder> {
        match self {
            EncoderImpl::Toy(t) => Some(t),
            EncoderImpl::Table(_) => None,
        }
    }

    #[must_use]
    pub fn as_toy_mut(&mut self) -> Option<&mut ToyEncoder> {
        match self {
            EncoderImpl::Toy(t) => Some(t),
            EncoderImpl::Table(_) => None,
        }
    }
}

impl TokenEncoder for EncoderImpl {
    fn config(&self) -> &EncoderConfig {
        match self {
            EncoderImpl::Toy(e) => e.config(),
            EncoderImpl::Table(e) => e.config(),
        }
    }

    fn encode(&self, tokens: &[String]) -> Result<Array2<f64>> {
        match self {
            EncoderImpl::Toy(e) => e.encode(tokens),
            EncoderImpl::Table(e) => e.encode(tokens),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    fn small_encoder() -> ToyEncoder {
        ToyEncoder::new(
            EncoderConfig {
                hidden_size: 16,
                window: 8,
                stride: 4,
            },
            7,
        )
        .unwrap()
    }

    #[test]
    fn config_rejects_stride_beyond_window() {
        let cfg = EncoderConfig {
            hidden_size: 8,
            window: 4,
            stride: 5,
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn repeated_token_gets_distinct_rows() {
        let enc = small_encoder();
        let y = enc.encode(&toks(&["a", "b", "a"])).unwrap();
        let diff: f64 = (&y.row(0) - &y.row(2)).mapv(f64::abs).sum();
        assert!(diff > 1e-6, "rows for repeated token must differ, got {diff}");
    }

    #[test]
    fn encoding_is_deterministic() {
        let enc = small_encoder();
        let tokens = toks(&["x", "=", "y", "mass"]);
        let a = enc.encode(&tokens).unwrap();
        let b = enc.encode(&tokens).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encode_rejects_overlong_input() {
        let enc = small_encoder();
        let tokens: Vec<String> = (0..9).map(|i| i.to_string()).collect();
        assert!(matches!(
            enc.encode(&tokens),
            Err(Error::WindowOverflow { len: 9, window: 8 })
        ));
    }

    #[test]
    fn empty_input_encodes_to_empty_matrix() {
        let enc = small_encoder();
        let y = enc.encode(&[]).unwrap();
        assert_eq!(y.shape(), &[0, 16]);
    }

    #[test]
    fn window_plan_covers_every_token() {
        for (len, window, stride) in [(1000, 512, 256), (600, 512, 256), (9, 8, 4), (17, 8, 3)] {
            let windows = plan_windows(len, window, stride);
            let mut covered = vec![false; len];
            for (i, &(s, e)) in windows.iter().enumerate() {
                assert!(s < e && e <= len);
                assert!(e - s <= window);
                if i + 1 < windows.len() {
                    assert_eq!(e - s, window, "only the last window may be short");
                    assert_eq!(s, i * stride);
                }
                for c in covered.iter_mut().take(e).skip(s) {
                    *c = true;
                }
            }
            assert!(covered.iter().all(|&c| c), "{len}/{window}/{stride}");
        }
    }

    #[test]
    fn short_document_uses_single_window() {
        assert_eq!(plan_windows(5, 8, 4), vec![(0, 5)]);
        assert_eq!(plan_windows(0, 8, 4), vec![(0, 0)]);
        assert_eq!(plan_windows(8, 8, 4), vec![(0, 8)]);
    }

    #[test]
    fn row_assignment_prefers_nearest_center_with_earlier_tie() {
        // Windows [0,8) center 3.5 and [4,12) center 7.5. Position 5 is
        // 1.5 from the first center and 2.5 from the second; position 6 is
        // the reverse, so ownership flips between them.
        let owners = assign_rows(&[(0, 8), (4, 12)], 12);
        assert_eq!(owners[..6], [0, 0, 0, 0, 0, 0]);
        assert_eq!(owners[6..], [1, 1, 1, 1, 1, 1]);
        // Windows [0,5) center 2.0 and [2,7) center 4.0: position 3 is
        // distance 1.0 from both, and the tie goes to the earlier window.
        let owners_tie = assign_rows(&[(0, 5), (2, 7)], 7);
        assert_eq!(owners_tie[3], 0, "tie must go to the earlier window");
        assert_eq!(owners_tie[2], 0);
        assert_eq!(owners_tie[4], 1);
    }

    #[test]
    fn windowed_encoding_matches_plain_encoding_when_short() {
        let enc = small_encoder();
        let tokens = toks(&["a", "b", "c"]);
        assert_eq!(
            enc.encode(&tokens).unwrap(),
            enc.encode_document(&tokens).unwrap()
        );
    }

    #[test]
    fn windowed_rows_come_from_their_owning_window() {
        let enc = small_encoder();
        let tokens: Vec<String> = (0..13).map(|i| format!("t{i}")).collect();
        let full = enc.encode_document(&tokens).unwrap();
        let windows = plan_windows(tokens.len(), 8, 4);
        let owners = assign_rows(&windows, tokens.len());
        for (t, &w) in owners.iter().enumerate() {
            let (s, e) = windows[w];
            let local = enc.encode(&tokens[s..e]).unwrap();
            let expect = local.row(t - s);
            let got = full.row(t);
            assert_eq!(got, expect, "row {t} window {w}");
        }
    }

    #[test]
    fn forward_trace_matches_encode_document() {
        let enc = small_encoder();
        let tokens: Vec<String> = (0..13).map(|i| format!("t{i}")).collect();
        let (traced, _) = enc.forward_trace(&tokens);
        assert_eq!(traced, enc.encode_document(&tokens).unwrap());
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let mut enc = ToyEncoder::new(
            EncoderConfig {
                hidden_size: 6,
                window: 8,
                stride: 4,
            },
            3,
        )
        .unwrap();
        let tokens = toks(&["a", "b", "c", "a", "d"]);
        // Random-ish fixed projection defines scalar loss sum(Y .* R).
        let r = Array2::from_shape_fn((5, 6), |(i, j)| ((i * 7 + j * 3 + 1) as f64 * 0.37).sin());

        let (y, trace) = enc.forward_trace(&tokens);
        let mut grads = enc.zero_grads();
        enc.backward_trace(&trace, &r, &mut grads);
        let _ = y;

        let h = 1e-5;
        let analytic = [&grads.wq, &grads.wk, &grads.wv, &grads.wo]
            .map(std::clone::Clone::clone);
        for (w, name) in ["wq", "wk", "wv", "wo"].iter().enumerate() {
            for i in 0..6 {
                for j in 0..6 {
                    enc.weights_mut()[w][[i, j]] += h;
                    let (y_plus, _) = enc.forward_trace(&tokens);
                    enc.weights_mut()[w][[i, j]] -= 2.0 * h;
                    let (y_minus, _) = enc.forward_trace(&tokens);
                    enc.weights_mut()[w][[i, j]] += h;
                    let fd = ((&y_plus - &y_minus) * &r).sum() / (2.0 * h);
                    let got = analytic[w][[i, j]];
                    let tol = 1e-4 * fd.abs().max(1.0);
                    assert!(
                        (fd - got).abs() <= tol,
                        "{name}[{i},{j}]: fd {fd} vs analytic {got}"
                    );
                }
            }
        }
    }

    #[test]
    fn table_encoder_looks_up_and_falls_back() {
        let mut vectors = BTreeMap::new();
        vectors.insert("x".to_string(), vec![1.0, 2.0]);
        let enc = EmbeddingTableEncoder::new(
            EncoderConfig {
                hidden_size: 2,
                window: 16,
                stride: 8,
            },
            vectors,
            Some(vec![-1.0, -1.0]),
        )
        .unwrap();
        let y = enc.encode(&toks(&["x", "unknown"])).unwrap();
        assert_eq!(y.row(0).to_vec(), vec![1.0, 2.0]);
        assert_eq!(y.row(1).to_vec(), vec![-1.0, -1.0]);
    }

    #[test]
    fn table_encoder_rejects_ragged_vectors() {
        let mut vectors = BTreeMap::new();
        vectors.insert("x".to_string(), vec![1.0, 2.0, 3.0]);
        let err = EmbeddingTableEncoder::new(
            EncoderConfig {
                hidden_size: 2,
                window: 16,
                stride: 8,
            },
            vectors,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn encoder_impl_serde_round_trip_is_bitwise_stable() {
        let enc = EncoderImpl::Toy(small_encoder());
        let tokens = toks(&["alpha", "=", "beta"]);
        let before = enc.encode(&tokens).unwrap();
        let json = serde_json::to_string(&enc).unwrap();
        let reloaded: EncoderImpl = serde_json::from_str(&json).unwrap();
        let after = reloaded.encode(&tokens).unwrap();
        assert_eq!(before, after);
    }
}
