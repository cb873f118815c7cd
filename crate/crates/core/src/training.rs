//! Adam, the overfitting loop and quantization-aware fine-tuning.

use std::path::Path;

use crate::allocation::{initialize, AllocationConfig, InitStrategy};
use crate::error::{contract, Result};
use crate::imagery::{write_csv, ImageBuffer};
use crate::metrics::psnr;
use crate::objectives::{LossReport, Objective};
use crate::quantization::{quantize_scene, QuantConfig, QuantizedScene, QuantizerState};
use crate::segmentation::SlicConfig;
use crate::splat::{render, render_backward, GaussianScene, SceneGradients};

/// Adam with bias correction over one flat parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// One update. Entries with a non-finite gradient keep their value and
    /// moments; their count is returned.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<usize> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return contract(format!(
                "adam group of {} got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let mut skipped = 0;
        for i in 0..params.len() {
            let g = grads[i];
            if !g.is_finite() {
                skipped += 1;
                continue;
            }
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(skipped)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    pub position: f64,
    pub covariance: f64,
    pub color: f64,
    /// Quantizer ranges, soft bitwidths and codebooks.
    pub quantizer: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 3e-3,
            covariance: 5e-2,
            color: 1e-2,
            quantizer: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TuneConfig {
    pub iterations: usize,
    pub lambda_b: f64,
    pub lambda_r: f64,
    pub quant: QuantConfig,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            lambda_b: 0.0012,
            lambda_r: 1.0,
            quant: QuantConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub n_gaussians: usize,
    pub iterations: usize,
    pub lr: LearningRates,
    pub lambda_g: f64,
    pub seed: u64,
    pub init: InitStrategy,
    pub allocation: AllocationConfig,
    /// `None` picks a region count from the image size.
    pub slic: Option<SlicConfig>,
    /// History is recorded every `log_interval` iterations and at the end.
    pub log_interval: usize,
    pub tune: TuneConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_gaussians: 3000,
            iterations: 20_000,
            lr: LearningRates::default(),
            lambda_g: 0.06,
            seed: 0,
            init: InitStrategy::StructureGuided,
            allocation: AllocationConfig::default(),
            slic: None,
            log_interval: 10,
            tune: TuneConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_gaussians == 0 || self.log_interval == 0 {
            return contract("gaussian count and log interval must be >= 1");
        }
        let lambdas = [self.lambda_g, self.tune.lambda_b, self.tune.lambda_r];
        if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return contract("loss weights must be finite and >= 0");
        }
        let lr = self.lr;
        if [lr.position, lr.covariance, lr.color, lr.quantizer]
            .iter()
            .any(|v| !(*v >= 0.0))
        {
            return contract("learning rates must be >= 0");
        }
        self.allocation.validate()?;
        self.tune.quant.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub total: f64,
    pub mse: f64,
    pub geometry: f64,
    pub bitwidth: f64,
    pub residual: f64,
    pub psnr: f64,
}

impl HistoryRow {
    fn new(iteration: usize, report: &LossReport, recon: &ImageBuffer, target: &ImageBuffer) -> Result<Self> {
        Ok(Self {
            iteration,
            total: report.total,
            mse: report.mse,
            geometry: report.geometry,
            bitwidth: report.bitwidth,
            residual: report.residual,
            psnr: psnr(&recon.clamped(), target)?,
        })
    }
}

pub const HISTORY_HEADER: [&str; 7] = ["iteration", "total", "mse", "geometry", "bitwidth", "residual", "psnr"];

pub fn write_history(path: impl AsRef<Path>, history: &[HistoryRow]) -> Result<()> {
    let rows: Vec<Vec<f64>> = history
        .iter()
        .map(|r| {
            vec![
                r.iteration as f64,
                r.total,
                r.mse,
                r.geometry,
                r.bitwidth,
                r.residual,
                r.psnr,
            ]
        })
        .collect();
    write_csv(path, &HISTORY_HEADER, &rows)
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub scene: GaussianScene,
    pub history: Vec<HistoryRow>,
    /// Parameter updates skipped because of non-finite gradients.
    pub skipped_updates: usize,
}

/// Adam over the position, Cholesky and color groups of a scene, followed by
/// projection onto the valid parameter set.
pub struct SceneOptim {
    mu: Adam,
    chol: Adam,
    color: Adam,
    buf: Vec<f64>,
    grad: Vec<f64>,
}

impl SceneOptim {
    pub fn new(n: usize, lr: &LearningRates) -> Self {
        Self {
            mu: Adam::new(2 * n, lr.position),
            chol: Adam::new(3 * n, lr.covariance),
            color: Adam::new(3 * n, lr.color),
            buf: Vec::new(),
            grad: Vec::new(),
        }
    }

    /// Returns the number of skipped non-finite updates.
    pub fn step(&mut self, scene: &mut GaussianScene, g: &SceneGradients) -> Result<usize> {
        let gs = &mut scene.gaussians;
        let mut skipped = 0;
        macro_rules! group {
            ($opt:expr, $field:ident, $dfield:ident) => {{
                self.buf.clear();
                self.grad.clear();
                self.buf.extend(gs.iter().flat_map(|x| x.$field));
                self.grad.extend(g.$dfield.iter().flatten());
                skipped += $opt.step(&mut self.buf, &self.grad)?;
                let width = self.buf.len() / gs.len().max(1);
                for (x, chunk) in gs.iter_mut().zip(self.buf.chunks_exact(width)) {
                    x.$field.copy_from_slice(chunk);
                }
            }};
        }
        group!(self.mu, mu, d_mu);
        group!(self.chol, chol, d_chol);
        group!(self.color, color, d_color);
        for x in gs.iter_mut() {
            x.project();
        }
        Ok(skipped)
    }
}

fn should_log(it: usize, total: usize, interval: usize) -> bool {
    it.is_multiple_of(interval) || it == total
}

/// Optimizes `scene` against `target` for `cfg.iterations` steps.
pub fn optimize(scene: GaussianScene, target: &ImageBuffer, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let target = target.to_rgb();
    if (target.width, target.height) != (scene.width, scene.height) {
        return contract("scene raster does not match the target image");
    }
    let objective = Objective::new(target.clone())?;
    let mut scene = scene;
    let mut optim = SceneOptim::new(scene.len(), &cfg.lr);
    let mut history = Vec::new();
    let mut skipped = 0;
    for it in 0..=cfg.iterations {
        let recon = render(&scene);
        let report = objective.train(&recon, cfg.lambda_g)?;
        if should_log(it, cfg.iterations, cfg.log_interval) {
            history.push(HistoryRow::new(it, &report, &recon, &target)?);
        }
        if it == cfg.iterations {
            break;
        }
        let grads = render_backward(&scene, &report.d_image)?;
        skipped += optim.step(&mut scene, &grads)?;
    }
    Ok(FitResult {
        scene,
        history,
        skipped_updates: skipped,
    })
}

/// Initializes a scene for `image` and optimizes it.
pub fn fit(image: &ImageBuffer, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let image = image.to_rgb();
    let slic = cfg
        .slic
        .unwrap_or_else(|| SlicConfig::for_image(image.width, image.height));
    let init = initialize(&image, cfg.n_gaussians, cfg.init, &cfg.allocation, &slic, cfg.seed)?;
    optimize(init.scene, &image, cfg)
}

#[derive(Clone, Debug)]
pub struct FinetuneResult {
    pub quantized: QuantizedScene,
    /// Continuous parameters after tuning.
    pub scene: GaussianScene,
    pub state: QuantizerState,
    pub history: Vec<HistoryRow>,
    pub skipped_updates: usize,
}

/// Quantization-aware fine-tuning through the straight-through quantizers.
pub fn finetune(scene: &GaussianScene, image: &ImageBuffer, cfg: &FitConfig) -> Result<FinetuneResult> {
    cfg.validate()?;
    let target = image.to_rgb();
    if (target.width, target.height) != (scene.width, scene.height) {
        return contract("scene raster does not match the target image");
    }
    let tc = &cfg.tune;
    let objective = Objective::new(target.clone())?;
    let mut scene = scene.clone();
    let mut state = QuantizerState::init(&scene, tc.quant, cfg.seed)?;
    let n = scene.len();
    let mut optim = SceneOptim::new(n, &cfg.lr);
    let mut ranges_opt = Adam::new(6, cfg.lr.quantizer);
    let mut bits_opt = Adam::new(n, cfg.lr.quantizer);
    let book_len = state.codebook.stage_count() * state.codebook.entries() * 3;
    let mut book_opt = Adam::new(book_len, cfg.lr.quantizer);
    let mut history = Vec::new();
    let mut skipped = 0;
    for it in 0..=tc.iterations {
        let fwd = quantize_scene(&scene, &state)?;
        let recon = render(&fwd.scene);
        let report = objective.tune(
            &recon,
            cfg.lambda_g,
            tc.lambda_b,
            fwd.bitwidth_loss,
            tc.lambda_r,
            fwd.residual_loss,
        )?;
        if should_log(it, tc.iterations, cfg.log_interval) {
            history.push(HistoryRow::new(it, &report, &recon, &target)?);
        }
        if it == tc.iterations || n == 0 {
            break;
        }
        let d_quantized = render_backward(&fwd.scene, &report.d_image)?;
        let (d_scene, d_quant) = fwd.backward(&scene, &state, &d_quantized, tc.lambda_b, tc.lambda_r);
        skipped += optim.step(&mut scene, &d_scene)?;

        let mut ranges: Vec<f64> = state.cov_ranges.iter().flatten().copied().collect();
        let d_ranges: Vec<f64> = d_quant.d_cov_ranges.iter().flatten().copied().collect();
        skipped += ranges_opt.step(&mut ranges, &d_ranges)?;
        for (r, v) in state.cov_ranges.iter_mut().zip(ranges.chunks_exact(2)) {
            *r = [v[0], v[1]];
        }
        skipped += bits_opt.step(&mut state.bits, &d_quant.d_bits)?;
        let mut book: Vec<f64> = state.codebook.stages.iter().flatten().flatten().copied().collect();
        let d_book: Vec<f64> = d_quant.d_codebook.iter().flatten().flatten().copied().collect();
        skipped += book_opt.step(&mut book, &d_book)?;
        for (e, v) in state.codebook.stages.iter_mut().flatten().zip(book.chunks_exact(3)) {
            e.copy_from_slice(v);
        }
        state.project();
    }
    let quantized = state.finalize(&scene);
    Ok(FinetuneResult {
        quantized,
        scene,
        state,
        history,
        skipped_updates: skipped,
    })
}
