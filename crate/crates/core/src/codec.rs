//! `.gs2c` container: fixed-width, byte-aligned sections over an already
//! quantized scene, plus the float scene file written between fit and encode.
//!
//! Layout (little-endian integers, codes packed MSB-first):
//! header, group table, RVQ codebooks, position codes, covariance codes
//! (group-major), color indices (stage-major).

use std::io::Cursor;
use std::path::Path;

use bitstream_io::{BigEndian, BitRead, BitReader, BitWrite, BitWriter};

use crate::error::{Error, Result};
use crate::quantization::QuantizedScene;
use crate::splat::{Gaussian2D, GaussianScene};

pub const MAGIC: &[u8; 4] = b"GS2C";
pub const VERSION_QUANTIZED: u8 = 1;
pub const VERSION_SCENE: u8 = 2;
/// Fixed header fields of a quantized stream.
pub const HEADER_BYTES: usize = 4 + 1 + 4 + 4 + 4 + 1 + 1 + 1 + 4;
/// Position and covariance ranges, present only when the scene is non-empty.
pub const RANGE_BYTES: usize = 8 * 4;

/// Bits needed to store values in `0..=max`.
fn width_for(max: u64) -> u32 {
    64 - max.leading_zeros()
}

/// Bits per color index for a codebook of `k` entries.
pub fn index_bits(k: usize) -> u32 {
    if k <= 1 {
        0
    } else {
        width_for(k as u64 - 1)
    }
}

/// Group table size: a 16-bit presence mask over bitwidths 1..=16 followed
/// by every group count except the last (implied by the total), each
/// `width_for(n)` bits wide.
pub fn group_table_bytes(n: usize, group_count: usize) -> usize {
    if group_count == 0 {
        return 2;
    }
    2 + ((group_count - 1) * width_for(n as u64) as usize).div_ceil(8)
}

fn packed_bytes(bits: usize) -> usize {
    bits.div_ceil(8)
}

/// Byte count of every section, in stream order.
pub fn section_sizes(q: &QuantizedScene) -> Vec<(&'static str, usize)> {
    let n = q.len();
    let groups = q.groups();
    let cov_bits: usize = groups.iter().map(|&(b, c)| 3 * b as usize * c).sum();
    vec![
        ("header", HEADER_BYTES + if n > 0 { RANGE_BYTES } else { 0 }),
        ("group table", group_table_bytes(n, groups.len())),
        ("codebooks", q.codebook.len() * q.rvq_entries() * 6),
        ("positions", packed_bytes(n * 2 * q.pos_bits as usize)),
        ("covariance", packed_bytes(cov_bits)),
        (
            "colors",
            q.codebook.len() * packed_bytes(n * index_bits(q.rvq_entries()) as usize),
        ),
    ]
}

fn write_bits(sink: &mut Vec<u8>, fields: impl Iterator<Item = (u32, u32)>) {
    let mut w = BitWriter::endian(Vec::new(), BigEndian);
    for (bits, v) in fields {
        if bits > 0 {
            w.write(bits, v).expect("code exceeds its field width");
        }
    }
    w.byte_align().expect("in-memory writer");
    sink.extend(w.into_writer());
}

/// Serializes `q` in canonical order. Fails only on an invalid scene.
pub fn encode(q: &QuantizedScene) -> Result<Vec<u8>> {
    q.validate()?;
    let q = q.canonical();
    let n = q.len();
    let groups = q.groups();
    let k = q.rvq_entries();
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.push(VERSION_QUANTIZED);
    for v in [q.width, q.height, n] {
        out.extend((u32::try_from(v).map_err(|_| Error::Contract(format!("{v} exceeds u32")))?).to_le_bytes());
    }
    out.push(groups.len() as u8);
    out.push(q.pos_bits as u8);
    out.push(q.codebook.len() as u8);
    out.extend((k as u32).to_le_bytes());
    if n > 0 {
        for v in q.pos_range.iter().chain(q.cov_ranges.iter().flatten()) {
            out.extend(v.to_le_bytes());
        }
    }

    let mask: u16 = groups.iter().fold(0, |m, &(b, _)| m | 1 << (b - 1));
    out.extend(mask.to_le_bytes());
    let cw = width_for(n as u64);
    write_bits(
        &mut out,
        groups
            .iter()
            .take(groups.len().saturating_sub(1))
            .map(|&(_, c)| (cw, c as u32)),
    );

    for stage in &q.codebook {
        for e in stage {
            for v in e {
                out.extend(v.to_le_bytes());
            }
        }
    }
    write_bits(&mut out, q.pos_codes.iter().flatten().map(|&c| (q.pos_bits, c)));
    write_bits(
        &mut out,
        q.cov_codes
            .iter()
            .zip(&q.cov_bits)
            .flat_map(|(codes, &b)| codes.iter().map(move |&c| (b as u32, c))),
    );
    let ib = index_bits(k);
    for stage in &q.color_indices {
        write_bits(&mut out, stage.iter().map(|&i| (ib, i)));
    }
    Ok(out)
}

/// Byte cursor that reports truncation with the section name and offset.
struct Cursor8<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor8<'a> {
    fn take(&mut self, len: usize, section: &'static str) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < len {
            return Err(Error::Corrupt {
                section,
                offset: self.data.len(),
                detail: format!("needs {len} bytes from offset {}, stream ends early", self.pos),
            });
        }
        let s = &self.data[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u8(&mut self, section: &'static str) -> Result<u8> {
        Ok(self.take(1, section)?[0])
    }

    fn u16(&mut self, section: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, section)?.try_into().unwrap()))
    }

    fn u32(&mut self, section: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    fn f32(&mut self, section: &'static str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    /// Reads `widths` fixed-width codes from a byte-aligned section.
    fn bits(&mut self, widths: impl Iterator<Item = u32> + Clone, section: &'static str) -> Result<Vec<u32>> {
        let total: usize = widths.clone().map(|w| w as usize).sum();
        let bytes = self.take(packed_bytes(total), section)?;
        let mut r = BitReader::endian(Cursor::new(bytes), BigEndian);
        widths
            .map(|w| {
                if w == 0 {
                    Ok(0)
                } else {
                    r.read::<u32>(w).map_err(|e| Error::Corrupt {
                        section,
                        offset: self.pos,
                        detail: e.to_string(),
                    })
                }
            })
            .collect()
    }
}

fn check_magic(data: &[u8]) -> Result<u8> {
    if data.len() < 5 || &data[..4] != MAGIC {
        return Err(Error::Format("not a GS2C stream (bad magic)".into()));
    }
    Ok(data[4])
}

fn corrupt(section: &'static str, offset: usize, detail: impl Into<String>) -> Error {
    Error::Corrupt {
        section,
        offset,
        detail: detail.into(),
    }
}

/// Parses a quantized stream back into its scene and the dequantized Gaussians.
pub fn decode(data: &[u8]) -> Result<(QuantizedScene, GaussianScene)> {
    let version = check_magic(data)?;
    if version != VERSION_QUANTIZED {
        return Err(Error::Format(format!(
            "expected a quantized stream, found version {version}"
        )));
    }
    let mut c = Cursor8 { data, pos: 5 };
    let h = "header";
    let width = c.u32(h)? as usize;
    let height = c.u32(h)? as usize;
    let n = c.u32(h)? as usize;
    let group_count = c.u8(h)? as usize;
    let pos_bits = c.u8(h)? as u32;
    let stages = c.u8(h)? as usize;
    let k = c.u32(h)? as usize;
    let mut pos_range = [0f32; 2];
    let mut cov_ranges = [[0f32; 2]; 3];
    if n > 0 {
        for v in pos_range.iter_mut().chain(cov_ranges.iter_mut().flatten()) {
            *v = c.f32(h)?;
        }
    }
    if !(1..=24).contains(&pos_bits) || k > 1 << 16 || group_count > 16 {
        return Err(corrupt(h, c.pos, "header field out of range"));
    }

    let g = "group table";
    let mask_at = c.pos;
    let mask = c.u16(g)?;
    let bitwidths: Vec<u8> = (1..=16u8).filter(|b| mask & 1 << (b - 1) != 0).collect();
    if bitwidths.len() != group_count || (n == 0) != (group_count == 0) {
        return Err(corrupt(g, mask_at, "group mask disagrees with the header"));
    }
    let cw = width_for(n as u64);
    let mut counts = c.bits(std::iter::repeat_n(cw, group_count.saturating_sub(1)), g)?;
    let listed: usize = counts.iter().map(|&v| v as usize).sum();
    if group_count > 0 {
        if listed > n {
            return Err(corrupt(g, c.pos, "group counts exceed the Gaussian count"));
        }
        counts.push((n - listed) as u32);
    }
    let cov_bits: Vec<u8> = bitwidths
        .iter()
        .zip(&counts)
        .flat_map(|(&b, &cnt)| std::iter::repeat_n(b, cnt as usize))
        .collect();

    let cb = c.take(stages * k * 6, "codebooks")?;
    let codebook: Vec<Vec<[i16; 3]>> = (0..stages)
        .map(|s| {
            (0..k)
                .map(|e| {
                    std::array::from_fn(|ch| {
                        let at = ((s * k + e) * 3 + ch) * 2;
                        i16::from_le_bytes([cb[at], cb[at + 1]])
                    })
                })
                .collect()
        })
        .collect();

    let pos = c.bits(std::iter::repeat_n(pos_bits, 2 * n), "positions")?;
    let cov = c.bits(cov_bits.iter().flat_map(|&b| [b as u32; 3]), "covariance")?;
    let ib = index_bits(k);
    let mut color_indices = Vec::with_capacity(stages);
    for _ in 0..stages {
        color_indices.push(c.bits(std::iter::repeat_n(ib, n), "colors")?);
    }
    if c.pos != data.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last section",
            data.len() - c.pos
        )));
    }

    let q = QuantizedScene {
        width,
        height,
        pos_bits,
        pos_range,
        cov_ranges,
        pos_codes: pos.chunks_exact(2).map(|p| [p[0], p[1]]).collect(),
        cov_bits,
        cov_codes: cov.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect(),
        codebook,
        color_indices,
    };
    q.validate()
        .map_err(|e| corrupt("payload", data.len(), e.to_string()))?;
    let scene = q.dequantize();
    Ok((q, scene))
}

pub fn bpp(stream: &[u8], width: usize, height: usize) -> f64 {
    (stream.len() * 8) as f64 / (width * height) as f64
}

/// Float scene file: header, then eight `f32` per Gaussian
/// (`mu_x mu_y l1 l2 l3 r g b`).
pub fn encode_scene(scene: &GaussianScene) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(17 + scene.len() * 32);
    out.extend(MAGIC);
    out.push(VERSION_SCENE);
    for v in [scene.width, scene.height, scene.len()] {
        out.extend((u32::try_from(v).map_err(|_| Error::Contract(format!("{v} exceeds u32")))?).to_le_bytes());
    }
    for g in &scene.gaussians {
        for v in g.mu.iter().chain(&g.chol).chain(&g.color) {
            out.extend((*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_scene(data: &[u8]) -> Result<GaussianScene> {
    let version = check_magic(data)?;
    if version != VERSION_SCENE {
        return Err(Error::Format(format!("expected a scene file, found version {version}")));
    }
    let mut c = Cursor8 { data, pos: 5 };
    let width = c.u32("header")? as usize;
    let height = c.u32("header")? as usize;
    let n = c.u32("header")? as usize;
    let mut gaussians = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        let mut v = [0f64; 8];
        for x in v.iter_mut() {
            *x = c.f32("gaussians")? as f64;
        }
        gaussians.push(Gaussian2D {
            mu: [v[0], v[1]],
            chol: [v[2], v[3], v[4]],
            color: [v[5], v[6], v[7]],
        });
    }
    if c.pos != data.len() {
        return Err(Error::Format("trailing bytes after the scene".into()));
    }
    Ok(GaussianScene {
        width,
        height,
        gaussians,
    })
}

pub fn save_scene(path: impl AsRef<Path>, scene: &GaussianScene) -> Result<()> {
    std::fs::write(path, encode_scene(scene)?)?;
    Ok(())
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<GaussianScene> {
    decode_scene(&std::fs::read(path)?)
}
