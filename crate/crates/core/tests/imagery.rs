use std::fs::File;
use std::io::BufWriter;

use sgsplat::imagery::*;
use sgsplat::Error;

fn gray(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> ImageBuffer {
    ImageBuffer::from_fn(width, height, 1, |x, y, _| f(x, y))
}

/// Direct 3x3 correlation with clamped indices.
fn brute_sobel(img: &ImageBuffer, x: usize, y: usize) -> (f64, f64) {
    let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let (mut gx, mut gy) = (0.0, 0.0);
    for j in 0..3 {
        for i in 0..3 {
            let xx = (x as isize + i as isize - 1).clamp(0, img.width as isize - 1) as usize;
            let yy = (y as isize + j as isize - 1).clamp(0, img.height as isize - 1) as usize;
            gx += kx[j][i] * img.get(xx, yy, 0);
            gy += kx[i][j] * img.get(xx, yy, 0);
        }
    }
    (gx, gy)
}

#[test]
fn grayscale_weights() {
    let white = ImageBuffer::from_data(1, 1, 3, vec![1.0, 1.0, 1.0]).unwrap();
    assert!((to_grayscale(&white).data[0] - 1.0).abs() < 1e-15);
    let red = ImageBuffer::from_data(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
    assert_eq!(to_grayscale(&red).data[0], 0.299);
    let g = gray(3, 2, |x, y| (x + y) as f64 / 4.0);
    assert_eq!(to_grayscale(&g), g);
}

#[test]
fn sobel_constant_is_zero() {
    for v in [0.0, 0.3, 1.0] {
        let f = sobel(&gray(6, 5, |_, _| v)).unwrap();
        assert!(f.gx.iter().chain(&f.gy).chain(&f.magnitude).all(|&g| g == 0.0));
    }
}

#[test]
fn sobel_vertical_step() {
    let img = gray(5, 5, |x, _| if x >= 3 { 1.0 } else { 0.0 });
    let f = sobel(&img).unwrap();
    // column 2 sits one column left of the edge
    let p = 2 * 5 + 2;
    assert_eq!(brute_sobel(&img, 2, 2), (4.0, 0.0));
    assert_eq!(f.gx[p], 4.0);
    assert_eq!(f.gy[p], 0.0);
    for y in 0..5 {
        for x in 0..5 {
            let (bx, by) = brute_sobel(&img, x, y);
            assert_eq!(f.gx[y * 5 + x], bx);
            assert_eq!(f.gy[y * 5 + x], by);
        }
    }
}

#[test]
fn sobel_horizontal_step_mirrors_vertical() {
    let v = sobel(&gray(5, 5, |x, _| if x >= 3 { 1.0 } else { 0.0 })).unwrap();
    let h = sobel(&gray(5, 5, |_, y| if y >= 3 { 1.0 } else { 0.0 })).unwrap();
    for y in 0..5 {
        for x in 0..5 {
            assert_eq!(h.gx[y * 5 + x], 0.0);
            assert_eq!(h.gy[y * 5 + x], v.gx[x * 5 + y]);
        }
    }
}

#[test]
fn sobel_rejects_color() {
    let img = ImageBuffer::new(4, 4, 3);
    assert!(matches!(sobel(&img), Err(Error::Contract(_))));
}

#[test]
fn sobel_adjoint_matches_dot_product() {
    // <S x, u> == <x, S^T u>
    let (w, h) = (7, 5);
    let x: Vec<f64> = (0..w * h).map(|i| ((i * 37 % 11) as f64).sin()).collect();
    let ux: Vec<f64> = (0..w * h).map(|i| ((i * 13 % 7) as f64).cos()).collect();
    let uy: Vec<f64> = (0..w * h).map(|i| ((i * 5 % 9) as f64 * 0.3).sin()).collect();
    let (gx, gy) = sobel_planes(&x, w, h);
    let lhs: f64 = gx.iter().zip(&ux).chain(gy.iter().zip(&uy)).map(|(a, b)| a * b).sum();
    let back = sobel_planes_adjoint(&ux, &uy, w, h);
    let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-10);
}

#[test]
fn png_round_trip_and_normalization() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.png");
    let img = ImageBuffer::from_data(2, 2, 1, [0u8, 128, 255, 64].iter().map(|&b| b as f64 / 255.0).collect()).unwrap();
    save_image(&path, &img).unwrap();
    let loaded = load_image(&path).unwrap();
    assert_eq!(loaded.data, vec![0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0]);
    assert_eq!(to_bytes(&loaded), vec![0, 128, 255, 64]);

    let rgb = ImageBuffer::from_fn(3, 2, 3, |x, y, c| ((x * 40 + y * 70 + c * 20) as f64) / 255.0);
    let p2 = dir.path().join("c.png");
    save_image(&p2, &rgb).unwrap();
    let back = load_image(&p2).unwrap();
    assert_eq!(to_bytes(&back), to_bytes(&rgb));
    save_image(&p2, &back).unwrap();
    assert_eq!(load_image(&p2).unwrap(), back);
}

#[test]
fn load_errors() {
    assert!(matches!(load_image("/nonexistent/x.png"), Err(Error::Io(_))));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("deep.png");
    {
        let file = File::create(&path).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), 2, 1);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[0, 1, 2, 3]).unwrap();
    }
    assert!(matches!(load_image(&path), Err(Error::Format(_))));
}

#[test]
fn csv_format() {
    let mut out = Vec::new();
    write_csv_to(&mut out, &["a", "b"], &[vec![1.0, 0.5], vec![-2.25, 1e-7]]).unwrap();
    assert_eq!(
        String::from_utf8(out).unwrap(),
        "a,b\n1.000000,0.500000\n-2.250000,0.000000\n"
    );
}
