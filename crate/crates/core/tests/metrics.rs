use sgsplat::imagery::ImageBuffer;
use sgsplat::metrics::*;
use sgsplat::Error;

fn img(w: usize, h: usize, f: impl Fn(usize, usize, usize) -> f64) -> ImageBuffer {
    ImageBuffer::from_fn(w, h, 3, f)
}

#[test]
fn psnr_examples() {
    let a = img(4, 4, |x, y, c| 0.05 * (x + y + c) as f64);
    assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    let b = img(4, 4, |x, y, c| 0.05 * (x + y + c) as f64 + 0.1);
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    let b = img(4, 4, |x, y, c| 0.05 * (x + y + c) as f64 + 0.01);
    assert!((psnr(&a, &b).unwrap() - 40.0).abs() < 1e-9);
    assert!(psnr(&a, &img(4, 3, |_, _, _| 0.0)).is_err());
}

#[test]
fn ms_ssim_examples() {
    let a = img(64, 48, |x, y, c| ((x * 7 + y * 13 + c * 5) % 17) as f64 / 16.0);
    let (v, scales) = ms_ssim_with_scales(&a, &a).unwrap();
    assert!((v - 1.0).abs() < 1e-12);
    assert_eq!(scales, 3);
    let inv = img(64, 48, |x, y, c| 1.0 - a.get(x, y, c));
    assert!(ms_ssim(&a, &inv).unwrap() < 0.5);
    assert!(ms_ssim(&img(10, 10, |_, _, _| 0.0), &img(10, 10, |_, _, _| 0.0)).is_err());
    assert_eq!(ms_ssim_scales(176), 5);
    assert_eq!(ms_ssim_scales(175), 4);
}

fn curve() -> Vec<RdPoint> {
    [(0.1, 28.0), (0.2, 31.0), (0.4, 34.5), (0.8, 37.0)]
        .iter()
        .map(|&(bpp, quality)| RdPoint { bpp, quality })
        .collect()
}

#[test]
fn bd_examples() {
    let a = curve();
    assert_eq!(bd_rate(&a, &a).unwrap(), 0.0);
    assert_eq!(bd_psnr(&a, &a).unwrap(), 0.0);
    let doubled: Vec<_> = a.iter().map(|p| RdPoint { bpp: 2.0 * p.bpp, ..*p }).collect();
    assert!((bd_rate(&a, &doubled).unwrap() - 100.0).abs() < 1e-9);
    let plus: Vec<_> = a
        .iter()
        .map(|p| RdPoint {
            quality: p.quality + 1.0,
            ..*p
        })
        .collect();
    assert!((bd_psnr(&a, &plus).unwrap() - 1.0).abs() < 1e-9);
    let far: Vec<_> = a
        .iter()
        .map(|p| RdPoint {
            quality: p.quality + 50.0,
            ..*p
        })
        .collect();
    assert!(matches!(bd_rate(&a, &far), Err(Error::NoOverlap)));
    assert!(bd_rate(&a[..3], &a).is_err());
}
