use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgsplat::imagery::{ImageBuffer, LUMA_WEIGHTS};
use sgsplat::objectives::*;

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> ImageBuffer {
    ImageBuffer::from_fn(w, h, c, |_, _, _| rng.gen())
}

/// Pixel-loop geometry loss written directly from the definition.
fn brute_geometry(recon: &ImageBuffer, target: &ImageBuffer) -> f64 {
    let (w, h) = (recon.width, recon.height);
    let gray = |img: &ImageBuffer, x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        (0..3).map(|c| LUMA_WEIGHTS[c] * img.get(x, y, c)).sum::<f64>()
    };
    let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let grads = |img: &ImageBuffer, x: usize, y: usize| {
        let (mut gx, mut gy) = (0.0, 0.0);
        for j in 0..3 {
            for i in 0..3 {
                let v = gray(img, x as isize + i as isize - 1, y as isize + j as isize - 1);
                gx += kx[j][i] * v;
                gy += kx[i][j] * v;
            }
        }
        (gx, gy)
    };
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let (tx, ty) = grads(target, x, y);
            let (rx, ry) = grads(recon, x, y);
            total += tx.abs() * (rx - tx).powi(2) + ty.abs() * (ry - ty).powi(2);
        }
    }
    total / (w * h) as f64
}

#[test]
fn mse_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let t = random_image(&mut rng, 4, 4, 3);
    let (l, g) = mse_loss(&t, &t).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.data.iter().all(|&v| v == 0.0));
    let shifted = ImageBuffer {
        data: t.data.iter().map(|v| v + 0.1).collect(),
        ..t.clone()
    };
    assert!((mse_loss(&shifted, &t).unwrap().0 - 0.01).abs() < 1e-12);
    assert!(mse_loss(&t, &ImageBuffer::new(4, 3, 3)).is_err());
}

#[test]
fn mse_gradient_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r = random_image(&mut rng, 4, 4, 3);
    let t = random_image(&mut rng, 4, 4, 3);
    let (_, g) = mse_loss(&r, &t).unwrap();
    for i in 0..r.data.len() {
        let h = 1e-4;
        let mut p = r.clone();
        p.data[i] += h;
        let mut m = r.clone();
        m.data[i] -= h;
        let fd = (mse_loss(&p, &t).unwrap().0 - mse_loss(&m, &t).unwrap().0) / (2.0 * h);
        assert!((fd - g.data[i]).abs() / fd.abs().max(1e-8) < 1e-6);
    }
}

#[test]
fn geometry_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = random_image(&mut rng, 8, 8, 3);
    assert_eq!(geometry_loss(&t, &t).unwrap().0, 0.0);
    let flat = ImageBuffer::from_fn(8, 8, 3, |_, _, _| 0.3);
    let (l, g) = geometry_loss(&t, &flat).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.data.iter().all(|&v| v == 0.0));
    let r = random_image(&mut rng, 8, 8, 3);
    let (l, _) = geometry_loss(&r, &t).unwrap();
    assert!((l - brute_geometry(&r, &t)).abs() < 1e-10);
    // weights come from the second argument
    let (l2, _) = geometry_loss(&t, &r).unwrap();
    assert!(l >= 0.0 && l2 >= 0.0);
    assert!((l - l2).abs() > 1e-6);
}

#[test]
fn geometry_gradient_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for c in [1, 3] {
        let r = random_image(&mut rng, 8, 8, c);
        let t = random_image(&mut rng, 8, 8, c);
        let (_, g) = geometry_loss(&r, &t).unwrap();
        for i in 0..r.data.len() {
            let h = 1e-4;
            let mut p = r.clone();
            p.data[i] += h;
            let mut m = r.clone();
            m.data[i] -= h;
            let fd = (geometry_loss(&p, &t).unwrap().0 - geometry_loss(&m, &t).unwrap().0) / (2.0 * h);
            assert!((fd - g.data[i]).abs() / fd.abs().max(1e-8) < 1e-5);
        }
    }
}

#[test]
fn combined_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let r = random_image(&mut rng, 8, 8, 3);
    let t = random_image(&mut rng, 8, 8, 3);
    let zero = train_loss(&r, &t, 0.0).unwrap();
    assert_eq!(zero.total, zero.mse);
    let flat = ImageBuffer::from_fn(8, 8, 3, |_, _, _| 0.5);
    let f = train_loss(&r, &flat, 0.06).unwrap();
    assert_eq!(f.total, f.mse);
    let rep = train_loss(&r, &t, 0.06).unwrap();
    assert!((rep.total - (rep.mse + 0.06 * rep.geometry)).abs() < 1e-12);

    let tuned = tune_loss(&r, &t, 0.06, 0.0, 7.0, 0.0, 3.0).unwrap();
    assert_eq!(tuned.total, rep.total);
    assert_eq!(tuned.d_image, rep.d_image);
    let tuned = tune_loss(&r, &t, 0.06, 0.0012, 8.0, 0.0, 0.0).unwrap();
    assert!((tuned.total - rep.total - 0.0096).abs() < 1e-12);
    let tuned = tune_loss(&r, &t, 0.06, 0.0012, 8.0, 1.0, 0.25).unwrap();
    let expect = tuned.mse + 0.06 * tuned.geometry + 0.0012 * tuned.bitwidth + tuned.residual;
    assert!((tuned.total - expect).abs() < 1e-12);
}
