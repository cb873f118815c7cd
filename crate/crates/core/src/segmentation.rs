//! SLIC superpixels and per-region gradient statistics.

use std::collections::VecDeque;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};
use crate::imagery::{save_image, GradientField, ImageBuffer};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlicConfig {
    pub target_regions: usize,
    pub compactness: f64,
    pub iterations: usize,
}

impl SlicConfig {
    /// Roughly one region per 32x32 block, never fewer than 64.
    pub fn for_image(width: usize, height: usize) -> Self {
        let by_area = ((width * height) as f64 / 1024.0).round() as usize;
        Self {
            target_regions: by_area.max(64).min(width * height),
            compactness: 10.0,
            iterations: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    /// Member pixel indices (`y * width + x`) per region, ascending.
    pub region_pixels: Vec<Vec<u32>>,
    /// Grid spacing `S` the segmentation was built with.
    pub spacing: f64,
}

impl SegmentationMap {
    pub fn region_count(&self) -> usize {
        self.region_pixels.len()
    }

    pub fn label(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn from_labels(width: usize, height: usize, labels: Vec<u32>, spacing: f64) -> Self {
        let count = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
        let mut region_pixels = vec![Vec::new(); count];
        for (p, &l) in labels.iter().enumerate() {
            region_pixels[l as usize].push(p as u32);
        }
        Self {
            width,
            height,
            labels,
            region_pixels,
            spacing,
        }
    }
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// sRGB (unit range) to CIELAB under D65.
pub fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(srgb_to_linear);
    let x = (0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b) / 0.950_47;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = (0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b) / 1.088_83;
    let f = |t: f64| {
        if t > 216.0 / 24389.0 {
            t.cbrt()
        } else {
            (24389.0 / 27.0 * t + 16.0) / 116.0
        }
    };
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Per-pixel SLIC features: Lab for color input, `100 * I` for grayscale so the
/// compactness weight keeps the same meaning.
fn features(img: &ImageBuffer) -> Vec<[f64; 3]> {
    match img.channels {
        1 => img.data.iter().map(|&v| [100.0 * v, 0.0, 0.0]).collect(),
        _ => img
            .data
            .chunks_exact(3)
            .map(|p| rgb_to_lab([p[0], p[1], p[2]]))
            .collect(),
    }
}

#[derive(Clone, Copy, Debug)]
struct Center {
    color: [f64; 3],
    x: f64,
    y: f64,
}

/// SLIC superpixels. The algorithm has no random steps; `seed` is accepted so
/// callers can thread one seed through the whole pipeline.
pub fn slic_segment(img: &ImageBuffer, cfg: &SlicConfig, _seed: u64) -> Result<SegmentationMap> {
    let (w, h) = (img.width, img.height);
    let n = w * h;
    if cfg.target_regions == 0 || cfg.target_regions > n {
        return contract(format!("target_regions {} must be in 1..={}", cfg.target_regions, n));
    }
    let feat = features(img);
    let spacing = (n as f64 / cfg.target_regions as f64).sqrt();
    let nx = ((cfg.target_regions as f64 * w as f64 / h as f64).sqrt().ceil() as usize).clamp(1, w);
    let ny = ((cfg.target_regions as f64 / nx as f64).round() as usize).clamp(1, h);
    let (cell_w, cell_h) = (w as f64 / nx as f64, h as f64 / ny as f64);

    let at = |x: isize, y: isize| -> &[f64; 3] {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        &feat[yc * w + xc]
    };
    let edge = |x: isize, y: isize| -> f64 {
        let d = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>();
        d(at(x + 1, y), at(x - 1, y)) + d(at(x, y + 1), at(x, y - 1))
    };

    let mut centers = Vec::with_capacity(nx * ny);
    let mut labels = vec![0u32; n];
    for j in 0..ny {
        for i in 0..nx {
            let (mut cx, mut cy) = ((i as f64 + 0.5) * cell_w, (j as f64 + 0.5) * cell_h);
            let px = (cx.floor() as isize).min(w as isize - 1);
            let py = (cy.floor() as isize).min(h as isize - 1);
            let mut best = edge(px, py);
            let (mut bx, mut by) = (px, py);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (qx, qy) = (px + dx, py + dy);
                    if qx < 0 || qy < 0 || qx >= w as isize || qy >= h as isize {
                        continue;
                    }
                    // stay inside the center's own grid cell
                    let ci = (((qx as f64 + 0.5) / cell_w) as usize).min(nx - 1);
                    let cj = (((qy as f64 + 0.5) / cell_h) as usize).min(ny - 1);
                    if (ci, cj) != (i, j) {
                        continue;
                    }
                    let e = edge(qx, qy);
                    if e < best {
                        best = e;
                        bx = qx;
                        by = qy;
                    }
                }
            }
            if (bx, by) != (px, py) {
                cx = bx as f64 + 0.5;
                cy = by as f64 + 0.5;
            }
            centers.push(Center {
                color: *at(bx, by),
                x: cx,
                y: cy,
            });
        }
    }
    // initial labels: the grid cell each pixel falls in
    for y in 0..h {
        for x in 0..w {
            let i = (((x as f64 + 0.5) / cell_w) as usize).min(nx - 1);
            let j = (((y as f64 + 0.5) / cell_h) as usize).min(ny - 1);
            labels[y * w + x] = (j * nx + i) as u32;
        }
    }

    let window = spacing.max(cell_w).max(cell_h);
    let spatial_weight = (cfg.compactness / spacing).powi(2);
    let mut dist = vec![f64::INFINITY; n];
    for _ in 0..cfg.iterations {
        dist.fill(f64::INFINITY);
        for (k, c) in centers.iter().enumerate() {
            let x0 = (c.x - window - 0.5).ceil().max(0.0) as usize;
            let x1 = ((c.x + window - 0.5).floor() as isize).min(w as isize - 1);
            let y0 = (c.y - window - 0.5).ceil().max(0.0) as usize;
            let y1 = ((c.y + window - 0.5).floor() as isize).min(h as isize - 1);
            if x1 < 0 || y1 < 0 {
                continue;
            }
            for y in y0..=y1 as usize {
                let dy = y as f64 + 0.5 - c.y;
                for x in x0..=x1 as usize {
                    let p = y * w + x;
                    let f = &feat[p];
                    let dc = (0..3).map(|q| (f[q] - c.color[q]).powi(2)).sum::<f64>();
                    let dx = x as f64 + 0.5 - c.x;
                    let d = dc + (dx * dx + dy * dy) * spatial_weight;
                    if d < dist[p] {
                        dist[p] = d;
                        labels[p] = k as u32;
                    }
                }
            }
        }
        let mut sums = vec![[0.0f64; 6]; centers.len()];
        for (p, &l) in labels.iter().enumerate() {
            let s = &mut sums[l as usize];
            for q in 0..3 {
                s[q] += feat[p][q];
            }
            s[3] += (p % w) as f64 + 0.5;
            s[4] += (p / w) as f64 + 0.5;
            s[5] += 1.0;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s[5] > 0.0 {
                c.color = [s[0] / s[5], s[1] / s[5], s[2] / s[5]];
                c.x = s[3] / s[5];
                c.y = s[4] / s[5];
            }
        }
    }

    let labels = enforce_connectivity(&labels, w, h, spacing * spacing / 4.0);
    Ok(SegmentationMap::from_labels(w, h, labels, spacing))
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }
}

/// Splits every label into 4-connected components, then folds components
/// smaller than `min_size` into the neighbor sharing the longest boundary.
/// Returns consecutive labels ordered by first pixel in scan order.
fn enforce_connectivity(labels: &[u32], w: usize, h: usize, min_size: f64) -> Vec<u32> {
    let n = w * h;
    let mut comp = vec![usize::MAX; n];
    let mut members: Vec<Vec<u32>> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = members.len();
        let mut pix = Vec::new();
        comp[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            pix.push(p as u32);
            let (x, y) = (p % w, p / w);
            let mut visit = |q: usize| {
                if comp[q] == usize::MAX && labels[q] == labels[p] {
                    comp[q] = id;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        members.push(pix);
    }

    let mut dsu = Dsu {
        parent: (0..members.len()).collect(),
    };
    loop {
        let mut changed = false;
        for id in 0..members.len() {
            if dsu.find(id) != id || (members[id].len() as f64) >= min_size {
                continue;
            }
            // boundary edge counts per neighboring root
            let mut counts: Vec<(usize, usize)> = Vec::new();
            for &p in &members[id] {
                let p = p as usize;
                let (x, y) = (p % w, p / w);
                let mut nbrs = [usize::MAX; 4];
                if x > 0 {
                    nbrs[0] = p - 1;
                }
                if x + 1 < w {
                    nbrs[1] = p + 1;
                }
                if y > 0 {
                    nbrs[2] = p - w;
                }
                if y + 1 < h {
                    nbrs[3] = p + w;
                }
                for q in nbrs.into_iter().filter(|&q| q != usize::MAX) {
                    let r = dsu.find(comp[q]);
                    if r == id {
                        continue;
                    }
                    match counts.iter_mut().find(|(root, _)| *root == r) {
                        Some(entry) => entry.1 += 1,
                        None => counts.push((r, 1)),
                    }
                }
            }
            let Some(&(target, _)) = counts.iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))) else {
                continue;
            };
            dsu.parent[id] = target;
            let moved = std::mem::take(&mut members[id]);
            members[target].extend(moved);
            changed = true;
        }
        if !changed {
            break;
        }
    }

    let mut remap = vec![u32::MAX; members.len()];
    let mut next = 0u32;
    let mut out = vec![0u32; n];
    for p in 0..n {
        let r = dsu.find(comp[p]);
        if remap[r] == u32::MAX {
            remap[r] = next;
            next += 1;
        }
        out[p] = remap[r];
    }
    out
}

/// Population variance of the gradient magnitude inside each region, sorted by
/// descending variance with ties broken by ascending region id.
pub fn region_variances(seg: &SegmentationMap, grad: &GradientField) -> Result<Vec<(usize, f64)>> {
    if seg.width != grad.width || seg.height != grad.height {
        return contract("segmentation and gradient field differ in size");
    }
    let mut out: Vec<(usize, f64)> = seg
        .region_pixels
        .iter()
        .enumerate()
        .map(|(id, pix)| {
            let count = pix.len() as f64;
            let mean = pix.iter().map(|&p| grad.magnitude[p as usize]).sum::<f64>() / count;
            let var = pix
                .iter()
                .map(|&p| (grad.magnitude[p as usize] - mean).powi(2))
                .sum::<f64>()
                / count;
            (id, var)
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(out)
}

/// Debug dump of a label map with a seeded random palette.
pub fn save_label_png(path: impl AsRef<Path>, seg: &SegmentationMap, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let palette: Vec<[f64; 3]> = (0..seg.region_count())
        .map(|_| [rng.gen(), rng.gen(), rng.gen()])
        .collect();
    let img = ImageBuffer::from_fn(seg.width, seg.height, 3, |x, y, c| palette[seg.label(x, y) as usize][c]);
    save_image(path, &img)
}
