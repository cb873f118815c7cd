use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgsplat::quantization::*;
use sgsplat::splat::{Gaussian2D, GaussianScene};

#[test]
fn forward_examples() {
    let p = LsqParams::new(0.3, 2.0, 6.0);
    assert_eq!(lsq_forward(0.3, &p).unwrap(), (0, 0.3));
    let p = LsqParams::new(0.0, 1.0, 6.0);
    let (code, v) = lsq_forward(0.5, &p).unwrap();
    assert_eq!(code, 32);
    assert!((v - 32.0 / 63.0).abs() < 1e-15);
    assert!((v - 0.507937).abs() < 1e-6);
    assert_eq!(lsq_forward(1.2, &p).unwrap(), (63, 1.0));
    assert!(lsq_forward(0.5, &LsqParams::new(0.0, 1.0, 31.0)).is_err());
    assert!(lsq_forward(0.5, &LsqParams::new(0.0, 1.0, 0.4)).is_err());
    // soft bitwidths round half to even
    assert_eq!(LsqParams::new(0.0, 1.0, 6.5).hard_bits(), 6);
    assert_eq!(LsqParams::new(0.0, 1.0, 7.5).hard_bits(), 8);
}

#[test]
fn backward_examples() {
    let p = LsqParams::new(0.0, 1.0, 2.0);
    let g = lsq_backward(0.4, &p).unwrap();
    assert!((g.d_v_max + 1.0 / 15.0).abs() < 1e-12);
    assert!((g.d_v_min - 1.0 / 15.0).abs() < 1e-12);
    assert_eq!(g.d_v, 1.0);
    let g = lsq_backward(1.5, &p).unwrap();
    assert!((g.d_v_max - 1.0).abs() < 1e-15);
    assert!(g.d_v_min.abs() < 1e-15);
    assert_eq!(g.d_v, 0.0);
    // v on a reconstruction level: in-range bit gradient vanishes
    let g = lsq_backward(2.0 / 3.0, &p).unwrap();
    assert!(g.d_bits.abs() < 1e-12);
}

#[test]
fn bitwidth_loss_examples() {
    assert_eq!(bitwidth_loss(&[6.0; 5]).unwrap(), (6.0, 0.2));
    assert_eq!(bitwidth_loss(&[6.4, 9.6]).unwrap().0, 8.0);
    assert_eq!(bitwidth_loss(&[16.0, 16.0]).unwrap().0, 16.0);
    assert!(bitwidth_loss(&[]).is_err());
}

#[test]
fn rvq_examples() {
    let cfg = RvqConfig {
        stages: 2,
        entries: 4,
        iterations: 5,
    };
    let same = vec![[0.25, 0.5, 0.75]; 10];
    let book = rvq_fit(&same, &cfg, 1).unwrap();
    assert!(book.stages[0].contains(&[0.25, 0.5, 0.75]));
    let enc = rvq_encode(&same, &book);
    assert_eq!(enc.loss, 0.0);

    let two = vec![[0.1, 0.2, 0.3], [0.9, 0.8, 0.7], [0.1, 0.2, 0.3]];
    let cfg1 = RvqConfig {
        stages: 1,
        entries: 2,
        iterations: 10,
    };
    let book = rvq_fit(&two, &cfg1, 5).unwrap();
    let mut entries = book.stages[0].clone();
    entries.sort_by(|a, b| a[0].total_cmp(&b[0]));
    assert_eq!(entries, vec![[0.1, 0.2, 0.3], [0.9, 0.8, 0.7]]);
    assert_eq!(rvq_encode(&two, &book).loss, 0.0);

    // ties go to the lowest index
    let tie = RvqCodebook {
        stages: vec![vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]],
    };
    assert_eq!(rvq_encode(&[[0.0; 3]], &tie).indices, vec![vec![0]]);
}

#[test]
fn rvq_error_shrinks_with_stages() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let colors: Vec<[f64; 3]> = (0..300).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let mut prev = f64::INFINITY;
    for stages in 1..=4 {
        let cfg = RvqConfig {
            stages,
            entries: 8,
            iterations: 10,
        };
        let book = rvq_fit(&colors, &cfg, 3).unwrap();
        let loss = rvq_encode(&colors, &book).loss;
        assert!(loss <= prev + 1e-12, "{stages}: {loss} > {prev}");
        prev = loss;
    }
}

#[test]
fn greedy_vs_exhaustive() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut agree = 0;
    let trials = 400;
    for _ in 0..trials {
        let k = rng.gen_range(2..=4);
        let train: Vec<[f64; 3]> = (0..40).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let cfg = RvqConfig {
            stages: 2,
            entries: k,
            iterations: 10,
        };
        let book = rvq_fit(&train, &cfg, rng.gen()).unwrap();
        let c = train[rng.gen_range(0..train.len())];
        let greedy = rvq_encode(&[c], &book).loss;
        let mut best = f64::INFINITY;
        for a in 0..k {
            for b in 0..k {
                let q: [f64; 3] = std::array::from_fn(|ch| book.stages[0][a][ch] + book.stages[1][b][ch]);
                best = best.min(dist2(&q, &c) / 3.0);
            }
        }
        assert!(greedy >= best - 1e-15);
        if (greedy - best).abs() < 1e-15 {
            agree += 1;
        }
    }
    assert!(agree as f64 >= 0.95 * trials as f64, "{agree}");
}

fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> GaussianScene {
    GaussianScene {
        width: 32,
        height: 24,
        gaussians: (0..n)
            .map(|_| Gaussian2D {
                mu: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                chol: [
                    rng.gen_range(0.5..4.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.5..4.0),
                ],
                color: [rng.gen(), rng.gen(), rng.gen()],
            })
            .collect(),
    }
}

#[test]
fn finalize_idempotent_and_valid() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scene = random_scene(&mut rng, 40);
    let mut state = QuantizerState::init(&scene, QuantConfig::default(), 0).unwrap();
    for (i, b) in state.bits.iter_mut().enumerate() {
        *b = 6.0 + (i % 11) as f64;
    }
    let q = state.finalize(&scene);
    q.validate().unwrap();
    assert!(q.cov_bits.windows(2).all(|w| w[0] <= w[1]));
    let deq = q.dequantize();
    // re-quantizing the dequantized scene with the same state reproduces the codes
    let mut state2 = state.clone();
    let mut order: Vec<usize> = (0..40).collect();
    order.sort_by_key(|&i| state.hard_bits(i));
    state2.bits = order.iter().map(|&i| state.bits[i]).collect();
    state2.cov_ranges = q.cov_ranges.map(|r| [r[0] as f64, r[1] as f64]);
    state2.codebook = RvqCodebook::from_fixed(&q.codebook);
    let q2 = state2.finalize(&deq);
    assert_eq!(q2.pos_codes, q.pos_codes);
    assert_eq!(q2.cov_codes, q.cov_codes);
    assert_eq!(q2.color_indices, q.color_indices);
}

#[test]
fn more_bits_means_smaller_error_for_small_gaussian() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut scene = random_scene(&mut rng, 20);
    scene.gaussians[0].chol = [0.61, 0.137, 0.583];
    let mut state = QuantizerState::init(&scene, QuantConfig::default(), 0).unwrap();
    let err = |state: &QuantizerState| {
        let f = quantize_scene(&scene, state).unwrap();
        (0..3)
            .map(|k| (f.scene.gaussians[0].chol[k] - scene.gaussians[0].chol[k]).abs())
            .fold(0.0, f64::max)
    };
    state.bits[0] = 6.0;
    let e6 = err(&state);
    state.bits[0] = 16.0;
    let e16 = err(&state);
    assert!(e16 < e6, "{e16} vs {e6}");
}

#[test]
fn high_precision_limit() {
    use sgsplat::metrics::psnr;
    use sgsplat::splat::render;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut scene = random_scene(&mut rng, 30);
    // only a handful of distinct colors
    let palette = [[0.2, 0.4, 0.6], [0.9, 0.1, 0.3], [0.5, 0.5, 0.0]];
    for (i, g) in scene.gaussians.iter_mut().enumerate() {
        g.color = palette[i % 3];
        g.color[0] = (g.color[0] * CODEBOOK_SCALE).round() / CODEBOOK_SCALE;
    }
    let cfg = QuantConfig {
        pos_bits: 16,
        init_bits: 16.0,
        rvq: RvqConfig {
            stages: 1,
            entries: 4,
            iterations: 10,
        },
        ..Default::default()
    };
    let state = QuantizerState::init(&scene, cfg, 1).unwrap();
    let f = quantize_scene(&scene, &state).unwrap();
    let a = render(&scene).clamped();
    let b = render(&f.scene).clamped();
    assert!(psnr(&a, &b).unwrap() > 60.0);
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
