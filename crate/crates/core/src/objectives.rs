//! Training objectives and their gradients with respect to the rendered image.
//!
//! Reductions run sequentially in pixel order, so results are bit-reproducible.

use crate::error::{contract, Result};
use crate::imagery::{sobel_planes, sobel_planes_adjoint, to_grayscale, ImageBuffer, LUMA_WEIGHTS};

#[derive(Clone, Debug)]
pub struct LossReport {
    pub total: f64,
    pub mse: f64,
    pub geometry: f64,
    pub bitwidth: f64,
    pub residual: f64,
    /// Gradient of `total` with respect to the rendered image.
    pub d_image: ImageBuffer,
}

fn check_shapes(recon: &ImageBuffer, target: &ImageBuffer) -> Result<()> {
    if !recon.same_shape(target) {
        return contract(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            recon.width, recon.height, recon.channels, target.width, target.height, target.channels
        ));
    }
    Ok(())
}

/// Mean squared error over all entries.
pub fn mse_loss(recon: &ImageBuffer, target: &ImageBuffer) -> Result<(f64, ImageBuffer)> {
    check_shapes(recon, target)?;
    let n = recon.data.len() as f64;
    let mut sum = 0.0;
    let mut grad = ImageBuffer::new(recon.width, recon.height, recon.channels);
    for ((g, &r), &t) in grad.data.iter_mut().zip(&recon.data).zip(&target.data) {
        let e = r - t;
        sum += e * e;
        *g = 2.0 * e / n;
    }
    Ok((sum / n, grad))
}

/// Target-side Sobel planes and weights, computed once per image.
#[derive(Clone, Debug)]
pub struct GeometryTarget {
    width: usize,
    height: usize,
    channels: usize,
    gx: Vec<f64>,
    gy: Vec<f64>,
    wx: Vec<f64>,
    wy: Vec<f64>,
}

impl GeometryTarget {
    pub fn new(target: &ImageBuffer) -> Result<Self> {
        if target.width < 3 || target.height < 3 {
            return contract("geometry loss needs at least 3x3 pixels");
        }
        let gray = to_grayscale(target);
        let (gx, gy) = sobel_planes(&gray.data, gray.width, gray.height);
        let wx = gx.iter().map(|v| v.abs()).collect();
        let wy = gy.iter().map(|v| v.abs()).collect();
        Ok(Self {
            width: target.width,
            height: target.height,
            channels: target.channels,
            gx,
            gy,
            wx,
            wy,
        })
    }

    /// `(1/HW) sum (|G_x| (G'_x - G_x)^2 + |G_y| (G'_y - G_y)^2)` on grayscale.
    /// The weights depend only on the target and are not differentiated.
    pub fn loss(&self, recon: &ImageBuffer) -> Result<(f64, ImageBuffer)> {
        if recon.width != self.width || recon.height != self.height || recon.channels != self.channels {
            return contract("reconstruction does not match the geometry target");
        }
        let n = (self.width * self.height) as f64;
        let gray = to_grayscale(recon);
        let (rx, ry) = sobel_planes(&gray.data, self.width, self.height);
        let mut sum = 0.0;
        let mut d_gx = vec![0.0; rx.len()];
        let mut d_gy = vec![0.0; ry.len()];
        for p in 0..rx.len() {
            let ex = rx[p] - self.gx[p];
            let ey = ry[p] - self.gy[p];
            sum += self.wx[p] * ex * ex + self.wy[p] * ey * ey;
            d_gx[p] = 2.0 * self.wx[p] * ex / n;
            d_gy[p] = 2.0 * self.wy[p] * ey / n;
        }
        let d_gray = sobel_planes_adjoint(&d_gx, &d_gy, self.width, self.height);
        let d_image = match self.channels {
            1 => ImageBuffer {
                width: self.width,
                height: self.height,
                channels: 1,
                data: d_gray,
            },
            _ => ImageBuffer {
                width: self.width,
                height: self.height,
                channels: 3,
                data: d_gray.iter().flat_map(|&g| LUMA_WEIGHTS.map(|w| w * g)).collect(),
            },
        };
        Ok((sum / n, d_image))
    }
}

pub fn geometry_loss(recon: &ImageBuffer, target: &ImageBuffer) -> Result<(f64, ImageBuffer)> {
    check_shapes(recon, target)?;
    GeometryTarget::new(target)?.loss(recon)
}

/// A target image with its precomputed geometry terms.
#[derive(Clone, Debug)]
pub struct Objective {
    pub target: ImageBuffer,
    geometry: GeometryTarget,
}

impl Objective {
    pub fn new(target: ImageBuffer) -> Result<Self> {
        let geometry = GeometryTarget::new(&target)?;
        Ok(Self { target, geometry })
    }

    /// `L_mse + lambda_g * L_g`.
    pub fn train(&self, recon: &ImageBuffer, lambda_g: f64) -> Result<LossReport> {
        let (mse, mut d_image) = mse_loss(recon, &self.target)?;
        let (geometry, d_g) = self.geometry.loss(recon)?;
        if lambda_g != 0.0 {
            for (d, e) in d_image.data.iter_mut().zip(&d_g.data) {
                *d += lambda_g * e;
            }
        }
        Ok(LossReport {
            total: mse + lambda_g * geometry,
            mse,
            geometry,
            bitwidth: 0.0,
            residual: 0.0,
            d_image,
        })
    }

    /// `L_train + lambda_b * L_b + lambda_r * L_r`. The bitwidth and residual
    /// terms only add to the scalar; their gradients live with the quantizers.
    pub fn tune(
        &self,
        recon: &ImageBuffer,
        lambda_g: f64,
        lambda_b: f64,
        bitwidth: f64,
        lambda_r: f64,
        residual: f64,
    ) -> Result<LossReport> {
        let mut report = self.train(recon, lambda_g)?;
        report.total += lambda_b * bitwidth + lambda_r * residual;
        report.bitwidth = bitwidth;
        report.residual = residual;
        Ok(report)
    }
}

pub fn train_loss(recon: &ImageBuffer, target: &ImageBuffer, lambda_g: f64) -> Result<LossReport> {
    check_shapes(recon, target)?;
    Objective::new(target.clone())?.train(recon, lambda_g)
}

pub fn tune_loss(
    recon: &ImageBuffer,
    target: &ImageBuffer,
    lambda_g: f64,
    lambda_b: f64,
    bitwidth: f64,
    lambda_r: f64,
    residual: f64,
) -> Result<LossReport> {
    check_shapes(recon, target)?;
    Objective::new(target.clone())?.tune(recon, lambda_g, lambda_b, bitwidth, lambda_r, residual)
}
