//! Quality and rate metrics: PSNR, MS-SSIM and Bjøntegaard deltas.

use nalgebra::{DMatrix, DVector};

use crate::error::{contract, Error, Result};
use crate::imagery::ImageBuffer;

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Peak signal-to-noise ratio for unit peak; identical images give `+inf`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if !a.same_shape(b) {
        return contract("psnr of images with different shapes");
    }
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len().max(1) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

pub(crate) fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Number of scales usable for an image whose shorter side is `min_dim`.
pub fn ms_ssim_scales(min_dim: usize) -> usize {
    (1..=5).rev().find(|&m| min_dim >> (m - 1) >= WINDOW).unwrap_or(0)
}

struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn downsample(&self) -> Plane {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut v = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let i = 2 * y * self.w + 2 * x;
                v.push(0.25 * (self.v[i] + self.v[i + 1] + self.v[i + self.w] + self.v[i + self.w + 1]));
            }
        }
        Plane { w, h, v }
    }

    /// Separable valid filtering with the Gaussian window.
    fn filter(&self, win: &[f64; WINDOW]) -> Plane {
        let ow = self.w + 1 - WINDOW;
        let oh = self.h + 1 - WINDOW;
        let mut rows = vec![0.0; ow * self.h];
        for y in 0..self.h {
            for x in 0..ow {
                let src = &self.v[y * self.w + x..y * self.w + x + WINDOW];
                rows[y * ow + x] = src.iter().zip(win).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = (0..WINDOW).map(|k| rows[(y + k) * ow + x] * win[k]).sum();
            }
        }
        Plane { w: ow, h: oh, v: out }
    }

    fn mul(&self, o: &Plane) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            v: self.v.iter().zip(&o.v).map(|(a, b)| a * b).collect(),
        }
    }
}

/// Mean SSIM and mean contrast-structure term at one scale.
fn ssim_cs(a: &Plane, b: &Plane, win: &[f64; WINDOW]) -> (f64, f64) {
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let mu_a = a.filter(win);
    let mu_b = b.filter(win);
    let aa = a.mul(a).filter(win);
    let bb = b.mul(b).filter(win);
    let ab = a.mul(b).filter(win);
    let n = mu_a.v.len() as f64;
    let mut ssim = 0.0;
    let mut cs = 0.0;
    for i in 0..mu_a.v.len() {
        let (ma, mb) = (mu_a.v[i], mu_b.v[i]);
        let va = aa.v[i] - ma * ma;
        let vb = bb.v[i] - mb * mb;
        let cov = ab.v[i] - ma * mb;
        let c = (2.0 * cov + c2) / (va + vb + c2);
        cs += c;
        ssim += c * (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
    }
    (ssim / n, cs / n)
}

/// MS-SSIM averaged over channels, together with the number of scales used.
pub fn ms_ssim_with_scales(a: &ImageBuffer, b: &ImageBuffer) -> Result<(f64, usize)> {
    if !a.same_shape(b) {
        return contract("ms-ssim of images with different shapes");
    }
    let scales = ms_ssim_scales(a.width.min(a.height));
    if scales == 0 {
        return contract(format!("image {}x{} too small for ms-ssim", a.width, a.height));
    }
    let weights = &MS_SSIM_WEIGHTS[..scales];
    // the standard weights sum to 1.0001 and are used as published at full depth
    let wsum: f64 = if scales == MS_SSIM_WEIGHTS.len() {
        1.0
    } else {
        weights.iter().sum()
    };
    let win = gaussian_window();
    let mut total = 0.0;
    for c in 0..a.channels {
        let plane = |img: &ImageBuffer| Plane {
            w: img.width,
            h: img.height,
            v: img.data.iter().skip(c).step_by(img.channels).copied().collect(),
        };
        let (mut pa, mut pb) = (plane(a), plane(b));
        let mut value = 1.0;
        for (j, w) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_cs(&pa, &pb, &win);
            let term = if j + 1 == scales { ssim } else { cs };
            value *= term.max(0.0).powf(w / wsum);
            if j + 1 < scales {
                pa = pa.downsample();
                pb = pb.downsample();
            }
        }
        total += value;
    }
    Ok((total / a.channels as f64, scales))
}

pub fn ms_ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    ms_ssim_with_scales(a, b).map(|(v, _)| v)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdPoint {
    pub bpp: f64,
    /// PSNR in dB.
    pub quality: f64,
}

/// Least-squares cubic in a normalized variable `t = (x - c) / h`.
struct Cubic {
    coef: [f64; 4],
    c: f64,
    h: f64,
}

impl Cubic {
    fn fit(xs: &[f64], ys: &[f64]) -> Result<Cubic> {
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let c = 0.5 * (lo + hi);
        let h = (0.5 * (hi - lo)).max(f64::MIN_POSITIVE);
        let a = DMatrix::from_fn(xs.len(), 4, |i, j| ((xs[i] - c) / h).powi(j as i32));
        let y = DVector::from_column_slice(ys);
        let sol = a
            .svd(true, true)
            .solve(&y, 1e-14)
            .map_err(|e| Error::Numeric(format!("cubic fit: {e}")))?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("cubic fit produced non-finite coefficients".into()));
        }
        Ok(Cubic {
            coef: [sol[0], sol[1], sol[2], sol[3]],
            c,
            h,
        })
    }

    fn integral(&self, lo: f64, hi: f64) -> f64 {
        let anti = |x: f64| {
            let t = (x - self.c) / self.h;
            self.h
                * self
                    .coef
                    .iter()
                    .enumerate()
                    .map(|(j, a)| a * t.powi(j as i32 + 1) / (j + 1) as f64)
                    .sum::<f64>()
        };
        anti(hi) - anti(lo)
    }
}

fn check_curve(points: &[RdPoint]) -> Result<()> {
    if points.len() < 4 {
        return contract("bd metrics need at least 4 points per curve");
    }
    if points.iter().any(|p| !(p.bpp > 0.0) || !p.quality.is_finite()) {
        return contract("rd points need positive bpp and finite quality");
    }
    let mut q: Vec<f64> = points.iter().map(|p| p.quality).collect();
    q.sort_by(f64::total_cmp);
    if q.windows(2).any(|w| w[0] == w[1]) {
        return contract("rd curve has repeated quality values");
    }
    Ok(())
}

fn range(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    })
}

/// Mean difference `test - reference` of `y(x)` over the overlapping `x` interval.
fn bd_delta(rx: &[f64], ry: &[f64], tx: &[f64], ty: &[f64]) -> Result<f64> {
    let (rlo, rhi) = range(rx);
    let (tlo, thi) = range(tx);
    let lo = rlo.max(tlo);
    let hi = rhi.min(thi);
    if !(hi > lo) {
        return Err(Error::NoOverlap);
    }
    let pr = Cubic::fit(rx, ry)?;
    let pt = Cubic::fit(tx, ty)?;
    Ok((pt.integral(lo, hi) - pr.integral(lo, hi)) / (hi - lo))
}

/// Average bitrate difference in percent at equal quality.
pub fn bd_rate(reference: &[RdPoint], test: &[RdPoint]) -> Result<f64> {
    check_curve(reference)?;
    check_curve(test)?;
    let q = |c: &[RdPoint]| c.iter().map(|p| p.quality).collect::<Vec<_>>();
    let r = |c: &[RdPoint]| c.iter().map(|p| p.bpp.log10()).collect::<Vec<_>>();
    let d = bd_delta(&q(reference), &r(reference), &q(test), &r(test))?;
    Ok((10f64.powf(d) - 1.0) * 100.0)
}

/// Average quality difference in dB at equal rate.
pub fn bd_psnr(reference: &[RdPoint], test: &[RdPoint]) -> Result<f64> {
    check_curve(reference)?;
    check_curve(test)?;
    let q = |c: &[RdPoint]| c.iter().map(|p| p.quality).collect::<Vec<_>>();
    let r = |c: &[RdPoint]| c.iter().map(|p| p.bpp.log10()).collect::<Vec<_>>();
    bd_delta(&r(reference), &q(reference), &r(test), &q(test))
}
