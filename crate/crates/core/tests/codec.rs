use sgsplat::codec::*;
use sgsplat::quantization::QuantizedScene;
use sgsplat::quantization::{from_fixed, levels};
use sgsplat::splat::{Gaussian2D, GaussianScene};
use sgsplat::Error;

fn one_gaussian() -> QuantizedScene {
    QuantizedScene {
        width: 16,
        height: 16,
        pos_bits: 12,
        pos_range: [-1.0, 1.0],
        cov_ranges: [[0.5, 4.0], [-1.0, 1.0], [0.5, 4.0]],
        pos_codes: vec![[2048, 1000]],
        cov_bits: vec![6],
        cov_codes: vec![[63, 10, 0]],
        codebook: vec![vec![[4096, 0, -8192], [0, 0, 0]]],
        color_indices: vec![vec![0]],
    }
}

#[test]
fn single_gaussian_layout() {
    let q = one_gaussian();
    let bytes = encode(&q).unwrap();
    let sizes = section_sizes(&q);
    assert_eq!(sizes[4], ("covariance", 3));
    assert_eq!(sizes[1], ("group table", 2));
    assert_eq!(bytes.len(), sizes.iter().map(|s| s.1).sum::<usize>());
    let at = HEADER_BYTES + RANGE_BYTES;
    assert_eq!(bytes[at..at + 2], [0b0010_0000, 0]);
    let (back, scene) = decode(&bytes).unwrap();
    assert_eq!(back, q);
    let g = &scene.gaussians[0];
    let s = 3.5f64 / levels(6);
    assert_eq!(g.chol[0], s * 63.0 + 0.5);
    assert_eq!(g.chol[1], 2.0 / levels(6) * 10.0 - 1.0);
    assert_eq!(g.chol[2], 0.5);
    assert_eq!(g.color, [from_fixed(4096), 0.0, -1.0]);
}

#[test]
fn empty_scene_is_header_only() {
    let q = QuantizedScene {
        pos_codes: vec![],
        cov_bits: vec![],
        cov_codes: vec![],
        codebook: vec![],
        color_indices: vec![],
        ..one_gaussian()
    };
    let bytes = encode(&q).unwrap();
    assert_eq!(bytes.len(), HEADER_BYTES + 2);
    let (back, scene) = decode(&bytes).unwrap();
    assert!(scene.is_empty() && back.is_empty());
    assert!(bpp(&bytes, 768, 512) < 0.001);
}

#[test]
fn bpp_example() {
    assert_eq!(bpp(&[0u8; 1000], 100, 80), 1.0);
}

#[test]
fn corruption_errors() {
    let bytes = encode(&one_gaussian()).unwrap();
    let mut bad = bytes.clone();
    bad[0] ^= 1;
    assert!(matches!(decode(&bad), Err(Error::Format(_))));
    for cut in [3, 10, HEADER_BYTES + 1, bytes.len() - 1] {
        match decode(&bytes[..cut]) {
            Err(Error::Corrupt { .. }) | Err(Error::Format(_)) => {}
            other => panic!("cut {cut}: {other:?}"),
        }
    }
    match decode(&bytes[..bytes.len() - 1]) {
        Err(Error::Corrupt { section, .. }) => assert_eq!(section, "colors"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn scene_file_round_trip() {
    let scene = GaussianScene {
        width: 7,
        height: 5,
        gaussians: vec![Gaussian2D {
            mu: [0.25, -0.5],
            chol: [1.5, 0.125, 2.0],
            color: [0.5, 0.25, 1.0],
        }],
    };
    let bytes = encode_scene(&scene).unwrap();
    assert_eq!(decode_scene(&bytes).unwrap(), scene);
    assert!(matches!(decode(&bytes), Err(Error::Format(_))));
}
