//! Image buffers, PNG I/O, grayscale conversion, Sobel gradients and CSV output.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{contract, Error, Result};

/// BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Interleaved, row-major image with unit-normalized intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return contract(format!("unsupported channel count {channels}"));
        }
        if data.len() != width * height * channels {
            return contract(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Copy with every intensity clamped to [0, 1].
    pub fn clamped(&self) -> ImageBuffer {
        ImageBuffer {
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    pub fn transposed(&self) -> ImageBuffer {
        let mut out = ImageBuffer::new(self.height, self.width, self.channels);
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out.set(y, x, c, self.get(x, y, c));
                }
            }
        }
        out
    }

    /// Bilinear sample at continuous pixel coordinates, where pixel `(i, j)` has
    /// its center at `(i + 0.5, j + 0.5)`. Coordinates are edge-clamped.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f64; 3] {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let ch = c.min(self.channels - 1);
            let top = self.get(x0, y0, ch) * (1.0 - tx) + self.get(x1, y0, ch) * tx;
            let bottom = self.get(x0, y1, ch) * (1.0 - tx) + self.get(x1, y1, ch) * tx;
            *o = top * (1.0 - ty) + bottom * ty;
        }
        out
    }

    /// Expands a grayscale buffer to three identical channels.
    pub fn to_rgb(&self) -> ImageBuffer {
        if self.channels == 3 {
            return self.clone();
        }
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 3,
            data: self.data.iter().flat_map(|&v| [v, v, v]).collect(),
        }
    }
}

/// Reads an 8-bit grayscale or RGB PNG, normalizing intensities by 255.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let file = File::open(path.as_ref())?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(png_error)?;
    if reader.info().bit_depth == png::BitDepth::Sixteen {
        return Err(Error::Format("16-bit PNG is not supported".into()));
    }
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(png_error)?;
    if frame.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!("unsupported bit depth {:?}", frame.bit_depth)));
    }
    let channels = match frame.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(Error::Format(format!("unsupported color type {other:?}"))),
    };
    let width = frame.width as usize;
    let height = frame.height as usize;
    let row_len = width * channels;
    let mut data = Vec::with_capacity(row_len * height);
    for row in buf.chunks(frame.line_size).take(height) {
        data.extend(row[..row_len].iter().map(|&b| b as f64 / 255.0));
    }
    ImageBuffer::from_data(width, height, channels, data)
}

fn png_error(e: png::DecodingError) -> Error {
    match e {
        png::DecodingError::IoError(io) => Error::Io(io),
        other => Error::Format(other.to_string()),
    }
}

/// Quantizes to 8 bits (clamping to [0, 1]) and writes a PNG.
pub fn save_image(path: impl AsRef<Path>, img: &ImageBuffer) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    encoder.set_color(match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return contract(format!("cannot save {c}-channel image")),
    });
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| Error::Format(e.to_string()))?;
    writer
        .write_image_data(&to_bytes(img))
        .map_err(|e| Error::Format(e.to_string()))?;
    writer.finish().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

pub fn to_bytes(img: &ImageBuffer) -> Vec<u8> {
    img.data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// BT.601 luma. Single-channel input is returned unchanged.
pub fn to_grayscale(img: &ImageBuffer) -> ImageBuffer {
    if img.channels == 1 {
        return img.clone();
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2])
        .collect();
    ImageBuffer {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
    }
}

/// Per-pixel Sobel responses of a single-channel image.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub magnitude: Vec<f64>,
}

/// Horizontal and vertical 3x3 Sobel with replicate padding.
pub fn sobel(gray: &ImageBuffer) -> Result<GradientField> {
    if gray.channels != 1 {
        return contract("sobel expects a single-channel image");
    }
    if gray.width < 3 || gray.height < 3 {
        return contract("sobel needs at least 3x3 pixels");
    }
    let (gx, gy) = sobel_planes(&gray.data, gray.width, gray.height);
    let magnitude = gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect();
    Ok(GradientField {
        width: gray.width,
        height: gray.height,
        gx,
        gy,
        magnitude,
    })
}

/// Sobel on a raw plane. Output rows are computed independently so the result
/// does not depend on how rows are scheduled.
pub fn sobel_planes(plane: &[f64], width: usize, height: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; width * height];
    let mut gy = vec![0.0; width * height];
    let at = |x: isize, y: isize| {
        let xc = x.clamp(0, width as isize - 1) as usize;
        let yc = y.clamp(0, height as isize - 1) as usize;
        plane[yc * width + xc]
    };
    gx.par_chunks_mut(width)
        .zip(gy.par_chunks_mut(width))
        .enumerate()
        .for_each(|(y, (rx, ry))| {
            let y = y as isize;
            for x in 0..width as isize {
                let (a, b, c) = (at(x - 1, y - 1), at(x, y - 1), at(x + 1, y - 1));
                let (d, f) = (at(x - 1, y), at(x + 1, y));
                let (g, h, i) = (at(x - 1, y + 1), at(x, y + 1), at(x + 1, y + 1));
                rx[x as usize] = (c - a) + 2.0 * (f - d) + (i - g);
                ry[x as usize] = (g - a) + 2.0 * (h - b) + (i - c);
            }
        });
    (gx, gy)
}

/// Adjoint of [`sobel_planes`]: maps upstream gradients on `(gx, gy)` back onto
/// the input plane, folding replicate-padded taps onto the border pixels.
pub fn sobel_planes_adjoint(d_gx: &[f64], d_gy: &[f64], width: usize, height: usize) -> Vec<f64> {
    const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            let (ux, uy) = (d_gx[p], d_gy[p]);
            if ux == 0.0 && uy == 0.0 {
                continue;
            }
            for (j, row) in KX.iter().enumerate() {
                let yy = (y as isize + j as isize - 1).clamp(0, height as isize - 1) as usize;
                for (i, &kx) in row.iter().enumerate() {
                    let xx = (x as isize + i as isize - 1).clamp(0, width as isize - 1) as usize;
                    // Ky[j][i] == Kx[i][j]
                    let w = kx * ux + KX[i][j] * uy;
                    out[yy * width + xx] += w;
                }
            }
        }
    }
    out
}

/// Writes a CSV file with a header row, `%.6f` values and LF line endings.
pub fn write_csv(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let file = File::create(path.as_ref())?;
    write_csv_to(BufWriter::new(file), header, rows)
}

pub fn write_csv_to<W: Write>(out: W, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let to_io = |e: csv::Error| Error::Io(e.into());
    writer.write_record(header).map_err(to_io)?;
    for row in rows {
        writer
            .write_record(row.iter().map(|v| format!("{v:.6}")))
            .map_err(to_io)?;
    }
    writer.flush()?;
    Ok(())
}
