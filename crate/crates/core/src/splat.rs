//! 2D Gaussian data model and the tile-based accumulated-blending rasterizer.
//!
//! Each pixel value is the plain sum `C_k = sum_i c_i * exp(-sigma_i)` with
//! `sigma_i = 0.5 * d^T Sigma_i^{-1} d`, `Sigma_i = L_i L_i^T`. No depth sort and
//! no alpha compositing. A Gaussian only touches pixels whose centers fall in the
//! axis-aligned box of its 3-sigma ellipse; forward and backward agree on that
//! support, so gradients are exact for the truncated render.

use rayon::prelude::*;

use crate::error::{contract, Result};
use crate::imagery::ImageBuffer;

/// Lower bound on the diagonal Cholesky entries, in pixels.
pub const EPS_SCALE: f64 = 1e-3;
/// Cutoff radius in standard deviations.
pub const CUTOFF_SIGMAS: f64 = 3.0;
pub const DEFAULT_TILE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian2D {
    /// Center in normalized coordinates, `[-1, 1]^2`.
    pub mu: [f64; 2],
    /// `(l1, l2, l3)` of `L = [[l1, 0], [l2, l3]]`, pixel units.
    pub chol: [f64; 3],
    pub color: [f64; 3],
}

impl Gaussian2D {
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        covariance(self)
    }

    /// Center in pixel coordinates for a `width x height` raster.
    pub fn center_px(&self, width: usize, height: usize) -> [f64; 2] {
        [
            (self.mu[0] + 1.0) * 0.5 * width as f64,
            (self.mu[1] + 1.0) * 0.5 * height as f64,
        ]
    }

    /// Half-extents in pixels of the box enclosing the 3-sigma ellipse.
    pub fn half_extent(&self) -> [f64; 2] {
        let [l1, l2, l3] = self.chol;
        [CUTOFF_SIGMAS * l1.abs(), CUTOFF_SIGMAS * (l2 * l2 + l3 * l3).sqrt()]
    }

    /// Projects onto the valid parameter set: `l1, l3 >= EPS_SCALE`, `mu` in `[-1, 1]^2`.
    pub fn project(&mut self) {
        self.chol[0] = self.chol[0].max(EPS_SCALE);
        self.chol[2] = self.chol[2].max(EPS_SCALE);
        self.mu[0] = self.mu[0].clamp(-1.0, 1.0);
        self.mu[1] = self.mu[1].clamp(-1.0, 1.0);
    }
}

/// `Sigma = L L^T`.
pub fn covariance(g: &Gaussian2D) -> [[f64; 2]; 2] {
    let [l1, l2, l3] = g.chol;
    [[l1 * l1, l1 * l2], [l1 * l2, l2 * l2 + l3 * l3]]
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianScene {
    pub width: usize,
    pub height: usize,
    pub gaussians: Vec<Gaussian2D>,
}

impl GaussianScene {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            gaussians: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SceneGradients {
    pub d_mu: Vec<[f64; 2]>,
    pub d_chol: Vec<[f64; 3]>,
    pub d_color: Vec<[f64; 3]>,
}

impl SceneGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_mu: vec![[0.0; 2]; n],
            d_chol: vec![[0.0; 3]; n],
            d_color: vec![[0.0; 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_mu.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RenderOptions {
    pub tile_size: usize,
    /// Restrict each Gaussian to its 3-sigma box. Disabling is only useful for
    /// measuring the truncation error.
    pub truncate: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            tile_size: DEFAULT_TILE,
            truncate: true,
        }
    }
}

/// Per-Gaussian quantities shared by the forward and backward kernels.
#[derive(Clone, Copy)]
struct Prepared {
    cx: f64,
    cy: f64,
    l2: f64,
    inv_l1: f64,
    inv_l3: f64,
    /// Curvature of `sigma` along a pixel row and `exp(-curv)`.
    curv: f64,
    step_decay: f64,
    color: [f64; 3],
    // inclusive pixel ranges
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

fn prepare(scene: &GaussianScene, opts: &RenderOptions) -> Vec<Option<Prepared>> {
    let (w, h) = (scene.width, scene.height);
    scene
        .gaussians
        .iter()
        .map(|g| {
            if w == 0 || h == 0 {
                return None;
            }
            let [cx, cy] = g.center_px(w, h);
            let [l1, l2, l3] = g.chol;
            let (x0, x1, y0, y1) = if opts.truncate {
                let [rx, ry] = g.half_extent();
                // pixel i is covered when |i + 0.5 - c| <= r
                let lo_x = (cx - rx - 0.5).ceil().max(0.0);
                let hi_x = (cx + rx - 0.5).floor().min((w - 1) as f64);
                let lo_y = (cy - ry - 0.5).ceil().max(0.0);
                let hi_y = (cy + ry - 0.5).floor().min((h - 1) as f64);
                if !(lo_x <= hi_x && lo_y <= hi_y) {
                    return None;
                }
                (lo_x as usize, hi_x as usize, lo_y as usize, hi_y as usize)
            } else {
                (0, w - 1, 0, h - 1)
            };
            let (inv_l1, inv_l3) = (1.0 / l1, 1.0 / l3);
            let shear = l2 * inv_l1 * inv_l3;
            let curv = inv_l1 * inv_l1 + shear * shear;
            Some(Prepared {
                cx,
                cy,
                l2,
                inv_l1,
                inv_l3,
                curv,
                step_decay: (-curv).exp(),
                color: g.color,
                x0,
                x1,
                y0,
                y1,
            })
        })
        .collect()
}

impl Prepared {
    /// Fills `out` with `exp(-sigma)` for pixels `x0..=x1` of the row whose
    /// center is `d2` pixels below the Gaussian center. The full support row is
    /// always evaluated so the values do not depend on tiling.
    ///
    /// Along a row `sigma` is quadratic in `x`, so consecutive weights differ by
    /// a factor whose own ratio is the constant `exp(-curv)`. The walk starts at
    /// the pixel nearest the row maximum and moves outward, where every factor is
    /// at most one, so it costs three `exp` calls per row and cannot overflow.
    fn row_weights(&self, d2: f64, out: &mut Vec<f64>) {
        let (x_lo, x_hi) = (self.x0, self.x1);
        out.clear();
        out.resize(x_hi - x_lo + 1, 0.0);
        let u0 = x_lo as f64 + 0.5 - self.cx;
        let shear = self.l2 * self.inv_l1 * self.inv_l3;
        let beta = d2 * self.inv_l3;
        // sigma(u) = 0.5 * curv * u^2 - beta * shear * u + 0.5 * beta^2
        let peak = beta * shear / self.curv;
        let k = ((peak - u0).round().max(0.0) as usize).min(x_hi - x_lo);
        let u = u0 + k as f64;
        let y1 = u * self.inv_l1;
        let y2 = (d2 - self.l2 * y1) * self.inv_l3;
        let w = (-0.5 * (y1 * y1 + y2 * y2)).exp();
        out[k] = w;
        if w == 0.0 {
            return;
        }
        let slope = self.curv * u - beta * shear;
        // right: sigma(u + 1) - sigma(u) = slope + curv / 2
        let (mut wr, mut r) = (w, (-(slope + 0.5 * self.curv)).exp());
        for v in &mut out[k + 1..] {
            wr *= r;
            r *= self.step_decay;
            *v = wr;
        }
        // left: sigma(u - 1) - sigma(u) = -slope + curv / 2
        let (mut wl, mut r) = (w, (-(0.5 * self.curv - slope)).exp());
        for v in out[..k].iter_mut().rev() {
            wl *= r;
            r *= self.step_decay;
            *v = wl;
        }
    }
}

struct TileGrid {
    size: usize,
    cols: usize,
    rows: usize,
    /// Gaussian indices per tile, ascending.
    lists: Vec<Vec<u32>>,
}

impl TileGrid {
    fn build(width: usize, height: usize, size: usize, prepared: &[Option<Prepared>]) -> Self {
        let cols = width.div_ceil(size);
        let rows = height.div_ceil(size);
        let mut lists = vec![Vec::new(); cols * rows];
        for (i, p) in prepared.iter().enumerate() {
            let Some(p) = p else { continue };
            for ty in p.y0 / size..=p.y1 / size {
                for tx in p.x0 / size..=p.x1 / size {
                    lists[ty * cols + tx].push(i as u32);
                }
            }
        }
        Self {
            size,
            cols,
            rows,
            lists,
        }
    }

    fn bounds(&self, tile: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let tx = tile % self.cols;
        let ty = tile / self.cols;
        let x0 = tx * self.size;
        let y0 = ty * self.size;
        (
            x0,
            (x0 + self.size).min(width) - 1,
            y0,
            (y0 + self.size).min(height) - 1,
        )
    }
}

/// Renders with default options. The result is not clamped.
pub fn render(scene: &GaussianScene) -> ImageBuffer {
    render_with(scene, &RenderOptions::default())
}

pub fn render_with(scene: &GaussianScene, opts: &RenderOptions) -> ImageBuffer {
    let (w, h) = (scene.width, scene.height);
    let mut out = ImageBuffer::new(w, h, 3);
    if w == 0 || h == 0 {
        return out;
    }
    let prepared = prepare(scene, opts);
    let grid = TileGrid::build(w, h, opts.tile_size.max(1), &prepared);
    let tiles: Vec<Vec<f64>> = (0..grid.rows * grid.cols)
        .into_par_iter()
        .map(|t| {
            let (tx0, tx1, ty0, ty1) = grid.bounds(t, w, h);
            let tw = tx1 - tx0 + 1;
            let mut buf = vec![0.0; tw * (ty1 - ty0 + 1) * 3];
            let mut weights = Vec::new();
            for &gi in &grid.lists[t] {
                let p = prepared[gi as usize].as_ref().unwrap();
                let (x_lo, x_hi) = (p.x0.max(tx0), p.x1.min(tx1));
                for py in p.y0.max(ty0)..=p.y1.min(ty1) {
                    let d2 = py as f64 + 0.5 - p.cy;
                    let row = (py - ty0) * tw;
                    p.row_weights(d2, &mut weights);
                    let dst = &mut buf[(row + x_lo - tx0) * 3..(row + x_hi - tx0 + 1) * 3];
                    for (px, &wgt) in dst.chunks_exact_mut(3).zip(&weights[x_lo - p.x0..]) {
                        px[0] += p.color[0] * wgt;
                        px[1] += p.color[1] * wgt;
                        px[2] += p.color[2] * wgt;
                    }
                }
            }
            buf
        })
        .collect();
    for (t, buf) in tiles.iter().enumerate() {
        let (tx0, tx1, ty0, ty1) = grid.bounds(t, w, h);
        let tw = tx1 - tx0 + 1;
        for py in ty0..=ty1 {
            let src = (py - ty0) * tw * 3;
            let dst = (py * w + tx0) * 3;
            out.data[dst..dst + tw * 3].copy_from_slice(&buf[src..src + tw * 3]);
        }
    }
    out
}

/// Gradients of `sum_k <d_output_k, C_k>` with respect to every Gaussian parameter.
pub fn render_backward(scene: &GaussianScene, d_output: &ImageBuffer) -> Result<SceneGradients> {
    render_backward_with(scene, d_output, &RenderOptions::default())
}

pub fn render_backward_with(
    scene: &GaussianScene,
    d_output: &ImageBuffer,
    opts: &RenderOptions,
) -> Result<SceneGradients> {
    let (w, h) = (scene.width, scene.height);
    if d_output.width != w || d_output.height != h || d_output.channels != 3 {
        return contract("upstream gradient does not match the scene raster");
    }
    let n = scene.len();
    let mut grads = SceneGradients::zeros(n);
    if w == 0 || h == 0 || n == 0 {
        return Ok(grads);
    }
    let prepared = prepare(scene, opts);
    let grid = TileGrid::build(w, h, opts.tile_size.max(1), &prepared);
    let dout = &d_output.data;

    // [d_cx, d_cy, d_l1, d_l2, d_l3, d_r, d_g, d_b] per tile-list entry
    let partials: Vec<Vec<[f64; 8]>> = (0..grid.rows * grid.cols)
        .into_par_iter()
        .map(|t| {
            let (tx0, tx1, ty0, ty1) = grid.bounds(t, w, h);
            let mut weights = Vec::new();
            grid.lists[t]
                .iter()
                .map(|&gi| {
                    let p = prepared[gi as usize].as_ref().unwrap();
                    // color sums, then sums of t*y1, t*y2, t*y1^2, t*y1*y2, t*y2^2
                    // where t = dL/dsigma
                    let mut col = [0.0; 3];
                    let mut m = [0.0; 5];
                    let (x_lo, x_hi) = (p.x0.max(tx0), p.x1.min(tx1));
                    for py in p.y0.max(ty0)..=p.y1.min(ty1) {
                        let d2 = py as f64 + 0.5 - p.cy;
                        p.row_weights(d2, &mut weights);
                        let src = &dout[(py * w + x_lo) * 3..(py * w + x_hi + 1) * 3];
                        for ((k, u), &wgt) in src.chunks_exact(3).enumerate().zip(&weights[x_lo - p.x0..]) {
                            let y1 = ((x_lo + k) as f64 + 0.5 - p.cx) * p.inv_l1;
                            let y2 = (d2 - p.l2 * y1) * p.inv_l3;
                            col[0] += u[0] * wgt;
                            col[1] += u[1] * wgt;
                            col[2] += u[2] * wgt;
                            let t = -(u[0] * p.color[0] + u[1] * p.color[1] + u[2] * p.color[2]) * wgt;
                            let (t1, t2) = (t * y1, t * y2);
                            m[0] += t1;
                            m[1] += t2;
                            m[2] += t1 * y1;
                            m[3] += t1 * y2;
                            m[4] += t2 * y2;
                        }
                    }
                    // sigma = (y1^2 + y2^2) / 2 with y1 = d1 / l1, y2 = (d2 - l2 y1) / l3, d = x - c
                    let r = p.l2 * p.inv_l3;
                    [
                        -(m[0] - m[1] * r) * p.inv_l1,
                        -m[1] * p.inv_l3,
                        (m[3] * r - m[2]) * p.inv_l1,
                        -m[3] * p.inv_l3,
                        -m[4] * p.inv_l3,
                        col[0],
                        col[1],
                        col[2],
                    ]
                })
                .collect()
        })
        .collect();

    let (sx, sy) = (0.5 * w as f64, 0.5 * h as f64);
    for (t, part) in partials.iter().enumerate() {
        for (&gi, acc) in grid.lists[t].iter().zip(part) {
            let i = gi as usize;
            grads.d_mu[i][0] += acc[0] * sx;
            grads.d_mu[i][1] += acc[1] * sy;
            for k in 0..3 {
                grads.d_chol[i][k] += acc[2 + k];
                grads.d_color[i][k] += acc[5 + k];
            }
        }
    }
    Ok(grads)
}
