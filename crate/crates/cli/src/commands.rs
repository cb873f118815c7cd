use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sgsplat::codec::{self, bpp};
use sgsplat::imagery::{load_image, save_image, ImageBuffer};
use sgsplat::metrics::{bd_psnr, bd_rate, ms_ssim, psnr, RdPoint};
use sgsplat::splat::{render, GaussianScene};
use sgsplat::training::{finetune, fit, write_history, FitConfig};
use sgsplat::{Error, Result};

use crate::args::{DecodeArgs, EncodeArgs, FitArgs, SweepArgs};
use crate::manifest::{sidecar, Manifest};

fn read_input(path: &Path, manifest: &mut Manifest) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path)?;
    manifest.input(path, &bytes);
    Ok(bytes)
}

/// Refuses to run when any output (or its sidecar) would overwrite an input.
fn guard_outputs(inputs: &[&Path], outputs: &[std::path::PathBuf]) -> Result<()> {
    let key = |p: &Path| std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    for out in outputs {
        if inputs.iter().any(|i| key(i) == key(out)) {
            return Err(Error::Contract(format!(
                "output {} would overwrite an input",
                out.display()
            )));
        }
    }
    Ok(())
}

fn load_png(path: &Path, manifest: &mut Manifest) -> Result<ImageBuffer> {
    read_input(path, manifest)?;
    Ok(load_image(path)?.to_rgb())
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let cfg = args.train.config(None);
    let history = args
        .history
        .clone()
        .unwrap_or_else(|| sidecar(&args.out, "history.csv"));
    let render_path = args.render.clone().unwrap_or_else(|| sidecar(&args.out, "png"));
    guard_outputs(
        &[&args.input],
        &[
            args.out.clone(),
            history.clone(),
            render_path.clone(),
            sidecar(&args.out, "manifest.json"),
        ],
    )?;
    let mut m = Manifest::new("fit", args, Some(cfg.seed));
    let image = load_png(&args.input, &mut m)?;
    let result = m.time("fit", || fit(&image, &cfg))?;
    let recon = render(&result.scene).clamped();
    codec::save_scene(&args.out, &result.scene)?;
    write_history(history, &result.history)?;
    save_image(render_path, &recon)?;
    let quality = psnr(&recon, &image)?;
    m.result("psnr", quality);
    m.result("gaussians", result.scene.len());
    m.result("skipped_updates", result.skipped_updates);
    m.write(&args.out)?;
    println!(
        "fit: {} Gaussians, PSNR {:.3} dB -> {}",
        result.scene.len(),
        quality,
        args.out.display()
    );
    Ok(())
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EncodeReport {
    pub bytes: usize,
    pub bpp: f64,
    pub psnr: f64,
    pub ms_ssim: Option<f64>,
    pub mean_bits: f64,
    pub groups: usize,
    pub gaussians: usize,
}

/// Fine-tunes `scene` against `image`, writes the stream, and measures it.
fn encode_scene(
    scene: &GaussianScene,
    image: &ImageBuffer,
    cfg: &FitConfig,
    out: &Path,
    m: &mut Manifest,
) -> Result<(EncodeReport, ImageBuffer)> {
    let tuned = m.time("finetune", || finetune(scene, image, cfg))?;
    let bytes = m.time("encode", || codec::encode(&tuned.quantized))?;
    std::fs::write(out, &bytes)?;
    write_history(sidecar(out, "history.csv"), &tuned.history)?;
    let recon = render(&tuned.quantized.dequantize()).clamped();
    let report = EncodeReport {
        bytes: bytes.len(),
        bpp: bpp(&bytes, image.width, image.height),
        psnr: psnr(&recon, image)?,
        ms_ssim: ms_ssim(&recon, image).ok(),
        mean_bits: tuned.quantized.mean_bits(),
        groups: tuned.quantized.groups().len(),
        gaussians: tuned.quantized.len(),
    };
    Ok((report, recon))
}

fn is_scene_file(bytes: &[u8]) -> bool {
    bytes.starts_with(codec::MAGIC)
}

pub fn cmd_encode(args: &EncodeArgs) -> Result<()> {
    let cfg = args.train.config(Some((&args.tune, args.lambda_b)));
    cfg.validate()?;
    let mut outputs = vec![
        args.out.clone(),
        sidecar(&args.out, "history.csv"),
        sidecar(&args.out, "manifest.json"),
    ];
    outputs.extend(args.render.clone());
    let mut inputs = vec![args.input.as_path()];
    inputs.extend(args.image.as_deref());
    guard_outputs(&inputs, &outputs)?;
    let mut m = Manifest::new("encode", args, Some(cfg.seed));
    let input = read_input(&args.input, &mut m)?;
    let (scene, image) = if is_scene_file(&input) {
        let Some(image_path) = &args.image else {
            return Err(Error::Contract("--image is required when encoding a scene file".into()));
        };
        (codec::decode_scene(&input)?, load_png(image_path, &mut m)?)
    } else {
        let image = load_image(&args.input)?.to_rgb();
        let fitted = m.time("fit", || fit(&image, &cfg))?;
        (fitted.scene, image)
    };
    let (report, recon) = encode_scene(&scene, &image, &cfg, &args.out, &mut m)?;
    if let Some(path) = &args.render {
        save_image(path, &recon)?;
    }
    m.result("encode", report);
    m.write(&args.out)?;
    println!(
        "encode: {} bytes, {:.4} bpp, PSNR {:.3} dB, mean bitwidth {:.2} -> {}",
        report.bytes,
        report.bpp,
        report.psnr,
        report.mean_bits,
        args.out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub reps: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
}

/// Decode-to-framebuffer timing over `reps` runs on an in-memory stream.
pub fn time_decode(bytes: &[u8], reps: usize) -> Result<Timing> {
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        let (_, scene) = codec::decode(bytes)?;
        std::hint::black_box(render(&scene).clamped());
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    samples.sort_by(f64::total_cmp);
    let p95 = samples[((samples.len() as f64 * 0.95).ceil() as usize).clamp(1, samples.len()) - 1];
    Ok(Timing {
        reps: samples.len(),
        mean_ms: samples.iter().sum::<f64>() / samples.len() as f64,
        p95_ms: p95,
    })
}

pub fn cmd_decode(args: &DecodeArgs) -> Result<()> {
    let mut m = Manifest::new("decode", args, None);
    let bytes = read_input(&args.input, &mut m)?;
    let (q, scene) = m.time("decode", || codec::decode(&bytes))?;
    let recon = m.time("render", || render(&scene).clamped());
    save_image(&args.out, &recon)?;
    m.result("gaussians", q.len());
    m.result("bpp", bpp(&bytes, q.width, q.height));
    if args.time {
        let t = time_decode(&bytes, args.reps)?;
        println!(
            "decode+render over {} runs: mean {:.3} ms ({:.1} FPS), p95 {:.3} ms",
            t.reps,
            t.mean_ms,
            1e3 / t.mean_ms,
            t.p95_ms
        );
        m.result("timing", t);
    }
    m.write(&args.out)?;
    println!("decode: {} Gaussians -> {}", q.len(), args.out.display());
    Ok(())
}

#[derive(Clone, Debug, Serialize, serde::Deserialize)]
pub struct RdRow {
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub gaussians: usize,
    pub lambda_b: f64,
    pub pos_bits: u32,
    pub bpp: f64,
    pub psnr: f64,
    pub ms_ssim: f64,
    pub mean_bits: f64,
}

pub const AGGREGATE: &str = "aggregate";

/// Linear interpolation of quality over log-rate, clamped to the curve ends.
fn interpolate(points: &[(f64, f64)], bpp: f64) -> f64 {
    let x = bpp.log10();
    let mut pts: Vec<(f64, f64)> = points.iter().map(|&(b, q)| (b.log10(), q)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if x <= pts[0].0 {
        return pts[0].1;
    }
    for w in pts.windows(2) {
        if x <= w[1].0 {
            let t = (x - w[0].0) / (w[1].0 - w[0].0);
            return w[0].1 + t * (w[1].1 - w[0].1);
        }
    }
    pts.last().unwrap().1
}

fn aggregate(rows: &[RdRow], images: &[String]) -> Vec<RdRow> {
    let per_image: Vec<Vec<&RdRow>> = images
        .iter()
        .map(|n| rows.iter().filter(|r| &r.image == n).collect())
        .collect();
    let points = per_image[0].len();
    (0..points)
        .map(|k| {
            let mean = |f: &dyn Fn(&RdRow) -> f64| per_image.iter().map(|r| f(r[k])).sum::<f64>() / images.len() as f64;
            let rate = mean(&|r| r.bpp);
            let quality = per_image
                .iter()
                .map(|rs| interpolate(&rs.iter().map(|r| (r.bpp, r.psnr)).collect::<Vec<_>>(), rate))
                .sum::<f64>()
                / images.len() as f64;
            RdRow {
                image: AGGREGATE.into(),
                width: 0,
                height: 0,
                gaussians: per_image[0][k].gaussians,
                lambda_b: per_image[0][k].lambda_b,
                pos_bits: per_image[0][k].pos_bits,
                bpp: rate,
                psnr: quality,
                ms_ssim: mean(&|r| r.ms_ssim),
                mean_bits: mean(&|r| r.mean_bits),
            }
        })
        .collect()
}

pub fn read_rd_csv(path: &Path) -> Result<Vec<RdRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}

fn write_rd_csv(path: &Path, rows: &[RdRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct BdSummary {
    pub image: String,
    pub bd_rate_percent: f64,
    pub bd_psnr_db: f64,
}

fn curve(rows: &[RdRow], image: &str) -> Vec<RdPoint> {
    rows.iter()
        .filter(|r| r.image == image)
        .map(|r| RdPoint {
            bpp: r.bpp,
            quality: r.psnr,
        })
        .collect()
}

/// BD metrics of `test` against `reference` for every image present in both.
pub fn bd_against(reference: &[RdRow], test: &[RdRow]) -> Vec<BdSummary> {
    let mut names: Vec<String> = test.iter().map(|r| r.image.clone()).collect();
    names.dedup();
    let mut out = Vec::new();
    for name in names {
        let (a, b) = (curve(reference, &name), curve(test, &name));
        if a.len() < 4 || b.len() < 4 {
            eprintln!("warning: BD for {name} skipped, fewer than 4 points");
            continue;
        }
        match (bd_rate(&a, &b), bd_psnr(&a, &b)) {
            (Ok(rate), Ok(q)) => out.push(BdSummary {
                image: name,
                bd_rate_percent: rate,
                bd_psnr_db: q,
            }),
            (Err(e), _) | (_, Err(e)) => eprintln!("warning: BD for {name} skipped: {e}"),
        }
    }
    out
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    if args.budgets.is_empty() && args.lambda_b.is_empty() {
        return Err(Error::Contract("sweep needs --budgets or --lambda-b".into()));
    }
    let mut m = Manifest::new("sweep", args, Some(args.train.seed));
    let points: Vec<(usize, f64)> = if args.budgets.is_empty() {
        args.lambda_b.iter().map(|&l| (args.train.gaussians, l)).collect()
    } else {
        args.budgets.iter().map(|&b| (b, 0.0012)).collect()
    };
    let dir = tempdir_for(&args.out);
    let mut rows = Vec::new();
    let mut names = Vec::new();
    for input in &args.inputs {
        let image = load_png(input, &mut m)?;
        let name = input
            .file_stem()
            .map_or_else(|| input.display().to_string(), |s| s.to_string_lossy().into_owned());
        names.push(name.clone());
        let mut fitted: Option<(usize, GaussianScene)> = None;
        for &(budget, lambda_b) in &points {
            let mut train = args.train.clone();
            train.gaussians = budget;
            let cfg = train.config(Some((&args.tune, lambda_b)));
            let scene = match &fitted {
                Some((b, s)) if *b == budget => s.clone(),
                _ => {
                    let s = m.time(&format!("fit {name} {budget}"), || fit(&image, &cfg))?.scene;
                    fitted = Some((budget, s.clone()));
                    s
                }
            };
            let out = dir.join(format!("{name}_{budget}_{lambda_b}.gs2c"));
            let (report, _) = encode_scene(&scene, &image, &cfg, &out, &mut m)?;
            println!(
                "{name} N={budget} lambda_b={lambda_b}: {:.4} bpp, {:.3} dB",
                report.bpp, report.psnr
            );
            rows.push(RdRow {
                image: name.clone(),
                width: image.width,
                height: image.height,
                gaussians: budget,
                lambda_b,
                pos_bits: args.tune.pos_bits,
                bpp: report.bpp,
                psnr: report.psnr,
                ms_ssim: report.ms_ssim.unwrap_or(f64::NAN),
                mean_bits: report.mean_bits,
            });
        }
    }
    if names.len() > 1 {
        let agg = aggregate(&rows, &names);
        rows.extend(agg);
    }
    write_rd_csv(&args.out, &rows)?;
    if let Some(reference) = &args.bd {
        let summary = bd_against(&read_rd_csv(reference)?, &rows);
        for s in &summary {
            println!(
                "BD vs reference, {}: {:.4}% rate, {:.4} dB",
                s.image, s.bd_rate_percent, s.bd_psnr_db
            );
        }
        m.result("bd", summary);
    }
    m.result("points", rows.len());
    m.write(&args.out)?;
    Ok(())
}

/// Streams from a sweep go next to its CSV.
fn tempdir_for(out: &Path) -> std::path::PathBuf {
    let dir = sidecar(out, "streams");
    let _ = std::fs::create_dir_all(&dir);
    dir
}
