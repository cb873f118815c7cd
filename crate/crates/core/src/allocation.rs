//! Structure-guided initialization: ranks SLIC regions by gradient-magnitude
//! variance, splits them into three complexity tiers and distributes the
//! Gaussian budget across tiers with a budget-dependent ratio schedule.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};
use crate::imagery::{save_image, sobel, to_grayscale, ImageBuffer};
use crate::segmentation::{region_variances, slic_segment, SegmentationMap, SlicConfig};
use crate::splat::{Gaussian2D, GaussianScene};

/// How a tier's budget is spread over its regions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WithinTier {
    /// Equal count per region, earlier-ranked regions take the remainder.
    Equal,
    /// Proportional to region area (largest remainder).
    AreaProportional,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AllocationConfig {
    /// Base tier ratios, normalized to sum to one.
    pub phi: [f64; 3],
    pub gamma: f64,
    pub n0: usize,
    pub threshold_k: f64,
    pub threshold_alpha: f64,
    pub within_tier: WithinTier,
}

impl Default for AllocationConfig {
    fn default() -> Self {
        Self {
            phi: [6.0 / 9.0, 2.0 / 9.0, 1.0 / 9.0],
            gamma: 10.0,
            n0: 10_000,
            // N_t(768x512) ~= 70,000 with a 4x threshold growth per 4.667x pixels
            threshold_k: 0.6445,
            threshold_alpha: 0.9,
            within_tier: WithinTier::Equal,
        }
    }
}

impl AllocationConfig {
    pub fn validate(&self) -> Result<()> {
        let [a, b, c] = self.phi;
        if !(a >= b && b >= c && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return contract(format!(
                "tier ratios {:?} must be ordered, positive and sum to 1",
                self.phi
            ));
        }
        if !(self.threshold_alpha > 0.0 && self.threshold_alpha < 1.0) {
            return contract("threshold exponent must lie in (0, 1)");
        }
        if !(self.threshold_k > 0.0 && self.gamma > 0.0) {
            return contract("threshold coefficient and schedule exponent must be positive");
        }
        Ok(())
    }

    /// Normalizes arbitrary positive ratios such as `6:2:1`.
    pub fn with_ratios(mut self, ratios: [f64; 3]) -> Self {
        let sum: f64 = ratios.iter().sum();
        self.phi = ratios.map(|r| r / sum);
        self
    }
}

/// `N_t = round(k * (H W)^alpha)`.
pub fn threshold_count(width: usize, height: usize, cfg: &AllocationConfig) -> usize {
    (cfg.threshold_k * ((width * height) as f64).powf(cfg.threshold_alpha)).round() as usize
}

/// Tier ratios for a budget of `n`, moving from the base ratios at `n <= n0`
/// to uniform at `n >= n_t`.
pub fn dynamic_ratios(n: usize, n_t: usize, cfg: &AllocationConfig) -> Result<[f64; 3]> {
    if n_t <= cfg.n0 {
        return contract(format!("threshold {} must exceed onset {}", n_t, cfg.n0));
    }
    let t = ((n as f64 - cfg.n0 as f64) / (n_t as f64 - cfg.n0 as f64)).clamp(0.0, 1.0);
    Ok(blend(&cfg.phi, t.powf(cfg.gamma)))
}

fn blend(phi: &[f64; 3], s: f64) -> [f64; 3] {
    phi.map(|p| p + s * (1.0 / 3.0 - p))
}

/// Ratios used by the pipeline. When the image is so small that the threshold
/// does not exceed the onset, the schedule degenerates to a step at `N_t`.
pub fn schedule_ratios(n: usize, width: usize, height: usize, cfg: &AllocationConfig) -> [f64; 3] {
    let n_t = threshold_count(width, height, cfg);
    match dynamic_ratios(n, n_t, cfg) {
        Ok(r) => r,
        Err(_) => blend(&cfg.phi, if n >= n_t { 1.0 } else { 0.0 }),
    }
}

/// Tier sizes over `r` ranked regions: `ceil(r/3)`, `ceil((r - c1)/2)`, rest.
pub fn tier_sizes(r: usize) -> [usize; 3] {
    let c1 = r.div_ceil(3);
    let c2 = (r - c1).div_ceil(2);
    [c1, c2, r - c1 - c2]
}

/// Number of Gaussians per region (indexed by region id).
pub fn region_budgets(
    seg: &SegmentationMap,
    ranked: &[(usize, f64)],
    n: usize,
    ratios: [f64; 3],
    within: WithinTier,
) -> Result<Vec<usize>> {
    let r = seg.region_count();
    if r < 3 || ranked.len() != r {
        return contract(format!("need at least 3 ranked regions, got {}", ranked.len()));
    }
    let mut budgets = vec![0usize; r];
    let sizes = tier_sizes(r);
    let mut start = 0;
    let mut assigned = 0;
    for (tier, &size) in sizes.iter().enumerate() {
        let members = &ranked[start..start + size];
        start += size;
        let tier_budget = (n as f64 * ratios[tier] + 1e-9).floor() as usize;
        assigned += tier_budget;
        if members.is_empty() {
            continue;
        }
        match within {
            WithinTier::Equal => {
                let (q, extra) = (tier_budget / size, tier_budget % size);
                for (k, &(id, _)) in members.iter().enumerate() {
                    budgets[id] = q + usize::from(k < extra);
                }
            }
            WithinTier::AreaProportional => {
                let area: usize = members.iter().map(|&(id, _)| seg.region_pixels[id].len()).sum();
                let mut rema: Vec<(usize, f64)> = Vec::with_capacity(size);
                let mut given = 0;
                for (k, &(id, _)) in members.iter().enumerate() {
                    let share = tier_budget as f64 * seg.region_pixels[id].len() as f64 / area as f64;
                    budgets[id] = share.floor() as usize;
                    given += budgets[id];
                    rema.push((k, share - share.floor()));
                }
                rema.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                for &(k, _) in rema.iter().take(tier_budget - given) {
                    budgets[members[k].0] += 1;
                }
            }
        }
    }
    // flooring leftovers go to the most complex regions first
    for k in 0..n.saturating_sub(assigned) {
        budgets[ranked[k % r].0] += 1;
    }
    Ok(budgets)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Allocation {
    /// Pixel-space positions (pixel `(i, j)` spans `[i, i+1) x [j, j+1)`).
    pub positions: Vec<[f64; 2]>,
    /// Region id of each position.
    pub regions: Vec<usize>,
    /// Gaussians per region id.
    pub budgets: Vec<usize>,
    /// Tier (0 = highest variance) per region id.
    pub tiers: Vec<usize>,
}

/// Places `n` points: per-region budgets from the tier rule, then each point at
/// the center of a pixel drawn uniformly from its region (without replacement
/// while the region has pixels to spare). Each region draws from its own
/// substream of `seed`.
pub fn allocate_positions(
    seg: &SegmentationMap,
    ranked: &[(usize, f64)],
    n: usize,
    ratios: [f64; 3],
    within: WithinTier,
    seed: u64,
) -> Result<Allocation> {
    let budgets = region_budgets(seg, ranked, n, ratios, within)?;
    let [c1, c2, _] = tier_sizes(ranked.len());
    let mut tiers = vec![0; budgets.len()];
    for (k, &(id, _)) in ranked.iter().enumerate() {
        tiers[id] = if k < c1 {
            0
        } else if k < c1 + c2 {
            1
        } else {
            2
        };
    }
    let mut positions = Vec::with_capacity(n);
    let mut regions = Vec::with_capacity(n);
    for (id, &budget) in budgets.iter().enumerate() {
        if budget == 0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id as u64 + 1);
        let pix = &seg.region_pixels[id];
        let mut picks: Vec<u32> = index::sample(&mut rng, pix.len(), budget.min(pix.len()))
            .into_iter()
            .map(|k| pix[k])
            .collect();
        while picks.len() < budget {
            picks.push(pix[rng.gen_range(0..pix.len())]);
        }
        for p in picks {
            let p = p as usize;
            positions.push([(p % seg.width) as f64 + 0.5, (p / seg.width) as f64 + 0.5]);
            regions.push(id);
        }
    }
    Ok(Allocation {
        positions,
        regions,
        budgets,
        tiers,
    })
}

/// Starting point of one Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitSeed {
    /// Pixel-space position.
    pub pos: [f64; 2],
    /// Isotropic standard deviation in pixels.
    pub scale: f64,
    /// Typical distance to neighboring seeds; sets the expected overlap.
    pub spacing: f64,
}

/// Isotropic Gaussians at the seeds, colored by a bilinear sample divided by the
/// expected number of overlapping neighbors `2 pi scale^2 / spacing^2`.
pub fn init_scene(img: &ImageBuffer, seeds: &[InitSeed]) -> GaussianScene {
    let (w, h) = (img.width, img.height);
    let gaussians = seeds
        .iter()
        .map(|s| {
            let overlap = (2.0 * PI * s.scale * s.scale / (s.spacing * s.spacing)).max(1.0);
            let c = img.sample_bilinear(s.pos[0], s.pos[1]);
            Gaussian2D {
                mu: [2.0 * s.pos[0] / w as f64 - 1.0, 2.0 * s.pos[1] / h as f64 - 1.0],
                chol: [s.scale, 0.0, s.scale],
                color: c.map(|v| v / overlap),
            }
        })
        .collect();
    GaussianScene {
        width: w,
        height: h,
        gaussians,
    }
}

/// Seeds for an allocation: scale is half the local spacing, bounded to
/// `[0.5, S']` where `S'` is half the larger of the superpixel spacing and the
/// global spacing `sqrt(HW / n)`. The local spacing is
/// `sqrt(region area / region budget)`, or `sqrt(tier area / tier budget)`
/// when some region of the tier received no Gaussian.
pub fn seeds_from_allocation(seg: &SegmentationMap, alloc: &Allocation) -> Vec<InitSeed> {
    let global = ((seg.width * seg.height) as f64 / alloc.positions.len().max(1) as f64).sqrt();
    let max_scale = (seg.spacing.max(global) / 2.0).max(0.5);
    let mut tier_area = [0usize; 3];
    let mut tier_budget = [0usize; 3];
    let mut tier_sparse = [false; 3];
    for (id, &t) in alloc.tiers.iter().enumerate() {
        tier_area[t] += seg.region_pixels[id].len();
        tier_budget[t] += alloc.budgets[id];
        tier_sparse[t] |= alloc.budgets[id] == 0;
    }
    alloc
        .positions
        .iter()
        .zip(&alloc.regions)
        .map(|(&pos, &r)| {
            let t = alloc.tiers[r];
            let spacing = if tier_sparse[t] {
                (tier_area[t] as f64 / tier_budget[t] as f64).sqrt()
            } else {
                (seg.region_pixels[r].len() as f64 / alloc.budgets[r] as f64).sqrt()
            };
            InitSeed {
                pos,
                scale: (spacing / 2.0).clamp(0.5, max_scale),
                spacing,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitStrategy {
    /// Uniformly random positions over the image domain.
    Random,
    /// Structure-guided allocation.
    StructureGuided,
}

#[derive(Clone, Debug)]
pub struct Initialization {
    pub scene: GaussianScene,
    pub segmentation: Option<SegmentationMap>,
    pub ratios: Option<[f64; 3]>,
}

/// Uniform random placement with a global spacing `sqrt(HW / n)`.
pub fn random_seeds(width: usize, height: usize, n: usize, seed: u64) -> Vec<InitSeed> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spacing = ((width * height) as f64 / n.max(1) as f64).sqrt();
    (0..n)
        .map(|_| InitSeed {
            pos: [rng.gen::<f64>() * width as f64, rng.gen::<f64>() * height as f64],
            scale: (spacing / 2.0).max(0.5),
            spacing,
        })
        .collect()
}

pub fn initialize(
    img: &ImageBuffer,
    n: usize,
    strategy: InitStrategy,
    alloc_cfg: &AllocationConfig,
    slic_cfg: &SlicConfig,
    seed: u64,
) -> Result<Initialization> {
    match strategy {
        InitStrategy::Random => Ok(Initialization {
            scene: init_scene(img, &random_seeds(img.width, img.height, n, seed)),
            segmentation: None,
            ratios: None,
        }),
        InitStrategy::StructureGuided => {
            alloc_cfg.validate()?;
            let grad = sobel(&to_grayscale(img))?;
            let seg = slic_segment(img, slic_cfg, seed)?;
            let ranked = region_variances(&seg, &grad)?;
            let ratios = schedule_ratios(n, img.width, img.height, alloc_cfg);
            let alloc = allocate_positions(&seg, &ranked, n, ratios, alloc_cfg.within_tier, seed)?;
            let seeds = seeds_from_allocation(&seg, &alloc);
            Ok(Initialization {
                scene: init_scene(img, &seeds),
                segmentation: Some(seg),
                ratios: Some(ratios),
            })
        }
    }
}

/// Debug dump: image with each position marked by a red pixel.
pub fn save_positions_png(path: impl AsRef<Path>, img: &ImageBuffer, positions: &[[f64; 2]]) -> Result<()> {
    let mut out = img.to_rgb().clamped();
    for p in positions {
        let x = (p[0].floor() as usize).min(img.width - 1);
        let y = (p[1].floor() as usize).min(img.height - 1);
        out.set(x, y, 0, 1.0);
        out.set(x, y, 1, 0.0);
        out.set(x, y, 2, 0.0);
    }
    save_image(path, &out)
}
