//! Learned scale quantization (LSQ) with a learnable soft bitwidth, its
//! straight-through gradients, the bitwidth penalty, residual vector
//! quantization of colors, and the scene-level quantizer used during
//! quantization-aware fine-tuning.

use std::f64::consts::LN_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};
use crate::splat::{Gaussian2D, GaussianScene, SceneGradients, EPS_SCALE};

/// Maximum supported hard bitwidth.
pub const MAX_BITS: u32 = 30;
/// Codebook entries are stored as `i16 / CODEBOOK_SCALE`, covering `[-4, 4)`.
pub const CODEBOOK_SCALE: f64 = 8192.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LsqParams {
    pub v_min: f64,
    pub v_max: f64,
    /// Soft bitwidth; the hard bitwidth is its round-half-even.
    pub bits: f64,
}

impl LsqParams {
    pub fn new(v_min: f64, v_max: f64, bits: f64) -> Self {
        Self { v_min, v_max, bits }
    }

    pub fn hard_bits(&self) -> u32 {
        hard_bits(self.bits)
    }

    pub fn levels(&self) -> f64 {
        levels(self.hard_bits())
    }

    pub fn step(&self) -> f64 {
        (self.v_max - self.v_min) / self.levels()
    }

    fn check(&self) -> Result<u32> {
        let b = self.bits.round_ties_even();
        if !(1.0..=MAX_BITS as f64).contains(&b) {
            return contract(format!("bitwidth {} outside [1, {MAX_BITS}]", self.bits));
        }
        if !(self.v_max > self.v_min) {
            return contract(format!("empty range [{}, {}]", self.v_min, self.v_max));
        }
        Ok(b as u32)
    }
}

pub fn hard_bits(bits: f64) -> u32 {
    bits.round_ties_even() as u32
}

/// `Q = 2^B - 1`.
pub fn levels(bits: u32) -> f64 {
    ((1u64 << bits) - 1) as f64
}

/// Code for `v` under range `[v_min, v_max]` at `bits` hard bits.
#[inline]
pub fn quantize_code(v: f64, v_min: f64, v_max: f64, bits: u32) -> u32 {
    let q = levels(bits);
    let s = (v_max - v_min) / q;
    ((v - v_min) / s).round_ties_even().clamp(0.0, q) as u32
}

#[inline]
pub fn dequantize_code(code: u32, v_min: f64, v_max: f64, bits: u32) -> f64 {
    let s = (v_max - v_min) / levels(bits);
    s * code as f64 + v_min
}

/// Returns the integer code and the dequantized value.
pub fn lsq_forward(v: f64, p: &LsqParams) -> Result<(u32, f64)> {
    let b = p.check()?;
    let code = quantize_code(v, p.v_min, p.v_max, b);
    Ok((code, dequantize_code(code, p.v_min, p.v_max, b)))
}

/// Straight-through gradients of the dequantized value.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LsqGrad {
    pub d_v_max: f64,
    pub d_v_min: f64,
    pub d_bits: f64,
    pub d_v: f64,
}

/// Gradients of `v_hat` with respect to `v_max`, `v_min`, the soft bitwidth
/// and `v`, treating rounding (of both the code and the bitwidth) as identity.
pub fn lsq_backward(v: f64, p: &LsqParams) -> Result<LsqGrad> {
    let b = p.check()?;
    Ok(lsq_grad(v, p.v_min, p.v_max, b))
}

#[inline]
pub(crate) fn lsq_grad(v: f64, v_min: f64, v_max: f64, bits: u32) -> LsqGrad {
    let q = levels(bits);
    let s = (v_max - v_min) / q;
    let code = ((v - v_min) / s).round_ties_even().clamp(0.0, q);
    let bit_scale = (1u64 << bits) as f64 * LN_2 / q;
    if v >= v_min && v <= v_max {
        let frac = (v - v_min) / (s * q);
        LsqGrad {
            d_v_max: code / q - frac,
            d_v_min: -code / q + frac,
            d_bits: bit_scale * (v - v_min - s * code),
            d_v: 1.0,
        }
    } else {
        LsqGrad {
            d_v_max: code / q,
            d_v_min: 1.0 - code / q,
            d_bits: bit_scale * (-s * code),
            d_v: 0.0,
        }
    }
}

/// Mean hard bitwidth; each soft bitwidth receives gradient `1/N`.
pub fn bitwidth_loss(bits: &[f64]) -> Result<(f64, f64)> {
    if bits.is_empty() {
        return contract("bitwidth loss of an empty set");
    }
    let n = bits.len() as f64;
    let sum: f64 = bits.iter().map(|&b| b.round_ties_even()).sum();
    Ok((sum / n, 1.0 / n))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RvqCodebook {
    /// `stages[s][k]` is entry `k` of stage `s`.
    pub stages: Vec<Vec<[f64; 3]>>,
}

impl RvqCodebook {
    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn entries(&self) -> usize {
        self.stages.first().map_or(0, Vec::len)
    }

    /// Rounds every entry to the 16-bit fixed-point grid.
    pub fn to_fixed(&self) -> Vec<Vec<[i16; 3]>> {
        self.stages
            .iter()
            .map(|st| st.iter().map(|e| e.map(to_fixed)).collect())
            .collect()
    }

    pub fn from_fixed(fixed: &[Vec<[i16; 3]>]) -> Self {
        Self {
            stages: fixed
                .iter()
                .map(|st| st.iter().map(|e| e.map(from_fixed)).collect())
                .collect(),
        }
    }
}

pub fn to_fixed(v: f64) -> i16 {
    (v * CODEBOOK_SCALE)
        .round_ties_even()
        .clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn from_fixed(v: i16) -> f64 {
    v as f64 / CODEBOOK_SCALE
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RvqConfig {
    pub stages: usize,
    pub entries: usize,
    pub iterations: usize,
}

impl Default for RvqConfig {
    fn default() -> Self {
        Self {
            stages: 2,
            entries: 256,
            iterations: 10,
        }
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Index of the nearest entry; ties go to the lowest index.
pub fn nearest(entries: &[[f64; 3]], v: &[f64; 3]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, e) in entries.iter().enumerate() {
        let d = dist2(e, v);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

fn kmeans(points: &[[f64; 3]], k: usize, iterations: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    // k-means++ seeding
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            rng.gen_range(0..points.len())
        };
        let c = points[pick];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centers.push(c);
    }
    let mut assign = vec![0usize; points.len()];
    for _ in 0..iterations {
        for (a, p) in assign.iter_mut().zip(points) {
            *a = nearest(&centers, p);
        }
        let mut sums = vec![[0.0f64; 4]; k];
        for (a, p) in assign.iter().zip(points) {
            let s = &mut sums[*a];
            s[0] += p[0];
            s[1] += p[1];
            s[2] += p[2];
            s[3] += 1.0;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s[3] > 0.0 {
                *c = [s[0] / s[3], s[1] / s[3], s[2] / s[3]];
            }
        }
    }
    centers
}

/// Stage-wise k-means: each stage clusters the residual left by the previous ones.
pub fn rvq_fit(colors: &[[f64; 3]], cfg: &RvqConfig, seed: u64) -> Result<RvqCodebook> {
    if colors.is_empty() || cfg.entries == 0 {
        return contract("rvq needs at least one color and one entry");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut residual = colors.to_vec();
    let mut stages = Vec::with_capacity(cfg.stages);
    for _ in 0..cfg.stages {
        let book = kmeans(&residual, cfg.entries, cfg.iterations, &mut rng);
        for r in residual.iter_mut() {
            let e = book[nearest(&book, r)];
            for c in 0..3 {
                r[c] -= e[c];
            }
        }
        stages.push(book);
    }
    Ok(RvqCodebook { stages })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RvqEncoding {
    /// `indices[stage][i]`.
    pub indices: Vec<Vec<u32>>,
    pub quantized: Vec<[f64; 3]>,
    /// Mean squared discrepancy over all color components.
    pub loss: f64,
}

/// Greedy per-stage nearest-entry encoding of the running residual.
pub fn rvq_encode(colors: &[[f64; 3]], book: &RvqCodebook) -> RvqEncoding {
    let mut indices = vec![Vec::with_capacity(colors.len()); book.stage_count()];
    let mut quantized = vec![[0.0; 3]; colors.len()];
    for (i, c) in colors.iter().enumerate() {
        let mut residual = *c;
        for (s, stage) in book.stages.iter().enumerate() {
            let k = nearest(stage, &residual);
            indices[s].push(k as u32);
            for ch in 0..3 {
                residual[ch] -= stage[k][ch];
                quantized[i][ch] += stage[k][ch];
            }
        }
    }
    let loss = if colors.is_empty() {
        0.0
    } else {
        colors.iter().zip(&quantized).map(|(c, q)| dist2(c, q)).sum::<f64>() / (3 * colors.len()) as f64
    };
    RvqEncoding {
        indices,
        quantized,
        loss,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantConfig {
    pub bit_min: u32,
    pub bit_max: u32,
    pub init_bits: f64,
    pub pos_bits: u32,
    pub rvq: RvqConfig,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            bit_min: 6,
            bit_max: 16,
            init_bits: 8.0,
            pos_bits: 12,
            rvq: RvqConfig::default(),
        }
    }
}

impl QuantConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bit_min < 1 || self.bit_min > self.bit_max || self.bit_max > 16 {
            return contract(format!(
                "bit range [{}, {}] must satisfy 1 <= min <= max <= 16",
                self.bit_min, self.bit_max
            ));
        }
        if self.pos_bits < 1 || self.pos_bits > 24 {
            return contract(format!("position bitwidth {} outside [1, 24]", self.pos_bits));
        }
        if self.rvq.stages == 0 || self.rvq.entries == 0 || self.rvq.entries > 1 << 16 {
            return contract("rvq needs >= 1 stage and 1..=65536 entries");
        }
        Ok(())
    }
}

/// Learnable quantizer state for fine-tuning.
///
/// Covariance entries share one learnable range per component `(l1, l2, l3)`;
/// each Gaussian owns one soft bitwidth used by all three of its entries.
/// Positions use a fixed `[-1, 1]` range.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizerState {
    pub config: QuantConfig,
    pub pos: LsqParams,
    /// `[v_min, v_max]` per covariance component.
    pub cov_ranges: [[f64; 2]; 3],
    pub bits: Vec<f64>,
    pub codebook: RvqCodebook,
}

impl QuantizerState {
    pub fn init(scene: &GaussianScene, config: QuantConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut cov_ranges = [[f64::INFINITY, f64::NEG_INFINITY]; 3];
        for g in &scene.gaussians {
            for k in 0..3 {
                cov_ranges[k][0] = cov_ranges[k][0].min(g.chol[k]);
                cov_ranges[k][1] = cov_ranges[k][1].max(g.chol[k]);
            }
        }
        for r in cov_ranges.iter_mut() {
            if !r[0].is_finite() {
                *r = [0.0, 1.0];
            }
            if r[1] - r[0] < 1e-6 {
                r[1] = r[0] + 1e-6;
            }
        }
        let colors: Vec<[f64; 3]> = scene.gaussians.iter().map(|g| g.color).collect();
        let codebook = if colors.is_empty() {
            RvqCodebook {
                stages: vec![vec![[0.0; 3]; config.rvq.entries]; config.rvq.stages],
            }
        } else {
            rvq_fit(&colors, &config.rvq, seed)?
        };
        Ok(Self {
            config,
            pos: LsqParams::new(-1.0, 1.0, config.pos_bits as f64),
            cov_ranges,
            bits: vec![config.init_bits; scene.len()],
            codebook,
        })
    }

    pub fn hard_bits(&self, i: usize) -> u32 {
        hard_bits(self.bits[i]).clamp(self.config.bit_min, self.config.bit_max)
    }

    /// Keeps soft bitwidths inside the configured range and ranges non-empty.
    pub fn project(&mut self) {
        let (lo, hi) = (self.config.bit_min as f64, self.config.bit_max as f64);
        for b in self.bits.iter_mut() {
            *b = b.clamp(lo, hi);
        }
        for r in self.cov_ranges.iter_mut() {
            if r[1] - r[0] < 1e-6 {
                let mid = 0.5 * (r[0] + r[1]);
                *r = [mid - 5e-7, mid + 5e-7];
            }
        }
    }

    pub fn mean_hard_bits(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        (0..self.bits.len()).map(|i| self.hard_bits(i) as f64).sum::<f64>() / self.bits.len() as f64
    }

    /// Freezes the state into integer codes. Ranges are rounded to `f32` and
    /// codebooks to 16-bit fixed point first so the stored parameters
    /// reproduce the returned codes exactly.
    pub fn finalize(&self, scene: &GaussianScene) -> QuantizedScene {
        let pos_range = [self.pos.v_min as f32, self.pos.v_max as f32];
        let cov_ranges = self.cov_ranges.map(|r| [r[0] as f32, r[1] as f32]);
        let fixed = if scene.is_empty() {
            Vec::new()
        } else {
            self.codebook.to_fixed()
        };
        let book = RvqCodebook::from_fixed(&fixed);
        let pb = self.config.pos_bits;
        let (plo, phi) = (pos_range[0] as f64, pos_range[1] as f64);
        let mut q = QuantizedScene {
            width: scene.width,
            height: scene.height,
            pos_bits: pb,
            pos_range,
            cov_ranges,
            pos_codes: Vec::with_capacity(scene.len()),
            cov_bits: Vec::with_capacity(scene.len()),
            cov_codes: Vec::with_capacity(scene.len()),
            codebook: fixed,
            color_indices: Vec::new(),
        };
        for (i, g) in scene.gaussians.iter().enumerate() {
            q.pos_codes.push(g.mu.map(|m| quantize_code(m, plo, phi, pb)));
            let b = self.hard_bits(i);
            q.cov_bits.push(b as u8);
            let codes =
                std::array::from_fn(|k| quantize_code(g.chol[k], cov_ranges[k][0] as f64, cov_ranges[k][1] as f64, b));
            q.cov_codes.push(codes);
        }
        let colors: Vec<[f64; 3]> = scene.gaussians.iter().map(|g| g.color).collect();
        q.color_indices = if scene.is_empty() {
            Vec::new()
        } else {
            rvq_encode(&colors, &book).indices
        };
        q.canonical()
    }
}

/// Dequantized scene plus everything the backward pass needs.
#[derive(Clone, Debug)]
pub struct QuantizedForward {
    pub scene: GaussianScene,
    pub bitwidth_loss: f64,
    pub residual_loss: f64,
    pub encoding: RvqEncoding,
}

/// Gradients for the quantizer's own parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizerGradients {
    pub d_cov_ranges: [[f64; 2]; 3],
    pub d_bits: Vec<f64>,
    pub d_codebook: Vec<Vec<[f64; 3]>>,
}

fn dequantized_chol(v: f64, k: usize, r: &[f64; 2], b: u32) -> f64 {
    let x = dequantize_code(quantize_code(v, r[0], r[1], b), r[0], r[1], b);
    if k == 1 {
        x
    } else {
        x.max(EPS_SCALE)
    }
}

/// Runs every parameter of `scene` through its quantizer.
pub fn quantize_scene(scene: &GaussianScene, state: &QuantizerState) -> Result<QuantizedForward> {
    if state.bits.len() != scene.len() {
        return contract("quantizer state does not match the scene");
    }
    let colors: Vec<[f64; 3]> = scene.gaussians.iter().map(|g| g.color).collect();
    let encoding = rvq_encode(&colors, &state.codebook);
    let pb = state.config.pos_bits;
    let gaussians = scene
        .gaussians
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let b = state.hard_bits(i);
            Gaussian2D {
                mu: g.mu.map(|m| {
                    dequantize_code(
                        quantize_code(m, state.pos.v_min, state.pos.v_max, pb),
                        state.pos.v_min,
                        state.pos.v_max,
                        pb,
                    )
                }),
                chol: std::array::from_fn(|k| dequantized_chol(g.chol[k], k, &state.cov_ranges[k], b)),
                color: encoding.quantized[i],
            }
        })
        .collect();
    let bitwidth_loss = if scene.is_empty() {
        0.0
    } else {
        (0..scene.len()).map(|i| state.hard_bits(i) as f64).sum::<f64>() / scene.len() as f64
    };
    Ok(QuantizedForward {
        scene: GaussianScene {
            width: scene.width,
            height: scene.height,
            gaussians,
        },
        bitwidth_loss,
        residual_loss: encoding.loss,
        encoding,
    })
}

impl QuantizedForward {
    /// Maps gradients on the dequantized scene back to the continuous scene and
    /// the quantizer parameters, adding the bitwidth and residual penalties.
    pub fn backward(
        &self,
        scene: &GaussianScene,
        state: &QuantizerState,
        d_quantized: &SceneGradients,
        lambda_b: f64,
        lambda_r: f64,
    ) -> (SceneGradients, QuantizerGradients) {
        let n = scene.len();
        let mut d_scene = SceneGradients::zeros(n);
        let mut d_cov_ranges = [[0.0; 2]; 3];
        let mut d_bits = vec![0.0; n];
        let mut d_codebook = vec![vec![[0.0; 3]; state.codebook.entries()]; state.codebook.stage_count()];
        let pb = state.config.pos_bits;
        let bit_grad = if n > 0 { lambda_b / n as f64 } else { 0.0 };
        let residual_scale = if n > 0 { 2.0 * lambda_r / (3 * n) as f64 } else { 0.0 };
        for (i, g) in scene.gaussians.iter().enumerate() {
            for a in 0..2 {
                let gr = lsq_grad(g.mu[a], state.pos.v_min, state.pos.v_max, pb);
                d_scene.d_mu[i][a] = d_quantized.d_mu[i][a] * gr.d_v;
            }
            let b = state.hard_bits(i);
            let mut db = bit_grad;
            for k in 0..3 {
                let r = state.cov_ranges[k];
                let up = d_quantized.d_chol[i][k];
                let gr = lsq_grad(g.chol[k], r[0], r[1], b);
                d_scene.d_chol[i][k] = up * gr.d_v;
                d_cov_ranges[k][0] += up * gr.d_v_min;
                d_cov_ranges[k][1] += up * gr.d_v_max;
                db += up * gr.d_bits;
            }
            d_bits[i] = db;
            let q = self.encoding.quantized[i];
            for ch in 0..3 {
                let commit = residual_scale * (g.color[ch] - q[ch]);
                d_scene.d_color[i][ch] = d_quantized.d_color[i][ch] + commit;
                for (s, idx) in self.encoding.indices.iter().enumerate() {
                    d_codebook[s][idx[i] as usize][ch] += d_quantized.d_color[i][ch] - commit;
                }
            }
        }
        (
            d_scene,
            QuantizerGradients {
                d_cov_ranges,
                d_bits,
                d_codebook,
            },
        )
    }
}

/// Integer-coded scene ready for serialization, stored in canonical order:
/// stably sorted by covariance bitwidth.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedScene {
    pub width: usize,
    pub height: usize,
    pub pos_bits: u32,
    pub pos_range: [f32; 2],
    pub cov_ranges: [[f32; 2]; 3],
    pub pos_codes: Vec<[u32; 2]>,
    pub cov_bits: Vec<u8>,
    pub cov_codes: Vec<[u32; 3]>,
    /// `codebook[stage][entry]` in 16-bit fixed point.
    pub codebook: Vec<Vec<[i16; 3]>>,
    /// `color_indices[stage][gaussian]`.
    pub color_indices: Vec<Vec<u32>>,
}

impl QuantizedScene {
    pub fn len(&self) -> usize {
        self.pos_codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos_codes.is_empty()
    }

    pub fn rvq_entries(&self) -> usize {
        self.codebook.first().map_or(0, Vec::len)
    }

    /// Stable partition by covariance bitwidth.
    pub fn canonical(&self) -> QuantizedScene {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&i| self.cov_bits[i]);
        QuantizedScene {
            pos_codes: order.iter().map(|&i| self.pos_codes[i]).collect(),
            cov_bits: order.iter().map(|&i| self.cov_bits[i]).collect(),
            cov_codes: order.iter().map(|&i| self.cov_codes[i]).collect(),
            color_indices: self
                .color_indices
                .iter()
                .map(|st| order.iter().map(|&i| st[i]).collect())
                .collect(),
            ..self.clone()
        }
    }

    /// `(bitwidth, count)` for each distinct bitwidth, ascending.
    pub fn groups(&self) -> Vec<(u8, usize)> {
        let mut groups: Vec<(u8, usize)> = Vec::new();
        let mut sorted = self.cov_bits.clone();
        sorted.sort_unstable();
        for b in sorted {
            match groups.last_mut() {
                Some((gb, c)) if *gb == b => *c += 1,
                _ => groups.push((b, 1)),
            }
        }
        groups
    }

    pub fn mean_bits(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.cov_bits.iter().map(|&b| b as f64).sum::<f64>() / self.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.cov_bits.len() != n || self.cov_codes.len() != n {
            return contract("per-Gaussian arrays differ in length");
        }
        if self.color_indices.len() != self.codebook.len() || self.color_indices.iter().any(|s| s.len() != n) {
            return contract("color index table does not match the codebook");
        }
        let k = self.rvq_entries();
        if self.codebook.iter().any(|s| s.len() != k) {
            return contract("codebook stages differ in size");
        }
        if !(1..=24).contains(&self.pos_bits) {
            return contract("position bitwidth outside [1, 24]");
        }
        let pos_max = (1u64 << self.pos_bits) - 1;
        for i in 0..n {
            let b = self.cov_bits[i] as u32;
            if !(1..=16).contains(&b) {
                return contract(format!("covariance bitwidth {b} outside [1, 16]"));
            }
            if self.cov_codes[i].iter().any(|&c| c as u64 > (1u64 << b) - 1)
                || self.pos_codes[i].iter().any(|&c| c as u64 > pos_max)
                || self.color_indices.iter().any(|s| s[i] as usize >= k)
            {
                return contract(format!("code of Gaussian {i} exceeds its field"));
            }
        }
        Ok(())
    }

    pub fn dequantize(&self) -> GaussianScene {
        let (plo, phi) = (self.pos_range[0] as f64, self.pos_range[1] as f64);
        let book = RvqCodebook::from_fixed(&self.codebook);
        let gaussians = (0..self.len())
            .map(|i| {
                let b = self.cov_bits[i] as u32;
                let mut color = [0.0; 3];
                for (s, idx) in self.color_indices.iter().enumerate() {
                    let e = book.stages[s][idx[i] as usize];
                    for ch in 0..3 {
                        color[ch] += e[ch];
                    }
                }
                Gaussian2D {
                    mu: self.pos_codes[i].map(|c| dequantize_code(c, plo, phi, self.pos_bits)),
                    chol: std::array::from_fn(|k| {
                        let r = self.cov_ranges[k].map(|v| v as f64);
                        let x = dequantize_code(self.cov_codes[i][k], r[0], r[1], b);
                        if k == 1 {
                            x
                        } else {
                            x.max(EPS_SCALE)
                        }
                    }),
                    color,
                }
            })
            .collect();
        GaussianScene {
            width: self.width,
            height: self.height,
            gaussians,
        }
    }
}
