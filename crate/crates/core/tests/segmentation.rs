use sgsplat::imagery::{sobel, to_grayscale};
use sgsplat::imagery::{GradientField, ImageBuffer};
use sgsplat::segmentation::*;

fn cfg(target: usize) -> SlicConfig {
    SlicConfig {
        target_regions: target,
        compactness: 10.0,
        iterations: 10,
    }
}

fn check_partition(seg: &SegmentationMap) {
    let total: usize = seg.region_pixels.iter().map(Vec::len).sum();
    assert_eq!(total, seg.width * seg.height);
    assert!(seg.region_pixels.iter().all(|r| !r.is_empty()));
    for (id, pix) in seg.region_pixels.iter().enumerate() {
        // 4-connectivity by flood fill inside the region
        let set: std::collections::HashSet<u32> = pix.iter().copied().collect();
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![pix[0]];
        seen.insert(pix[0]);
        while let Some(p) = stack.pop() {
            let (x, y) = ((p as usize) % seg.width, (p as usize) / seg.width);
            let mut cand = vec![];
            if x > 0 {
                cand.push(p - 1);
            }
            if x + 1 < seg.width {
                cand.push(p + 1);
            }
            if y > 0 {
                cand.push(p - seg.width as u32);
            }
            if y + 1 < seg.height {
                cand.push(p + seg.width as u32);
            }
            for q in cand {
                if set.contains(&q) && seen.insert(q) {
                    stack.push(q);
                }
            }
        }
        assert_eq!(seen.len(), pix.len(), "region {id} not connected");
    }
}

#[test]
fn constant_image_grid() {
    let img = ImageBuffer::from_fn(8, 8, 3, |_, _, _| 0.4);
    let seg = slic_segment(&img, &cfg(4), 0).unwrap();
    assert_eq!(seg.region_count(), 4);
    for y in 0..8 {
        for x in 0..8 {
            let expect = (y / 4) * 2 + x / 4;
            assert_eq!(seg.label(x, y) as usize, expect);
        }
    }
    check_partition(&seg);
}

#[test]
fn one_region_per_pixel() {
    let img = ImageBuffer::from_fn(5, 4, 3, |x, y, c| ((x * 3 + y * 7 + c) % 5) as f64 / 4.0);
    let seg = slic_segment(&img, &cfg(20), 0).unwrap();
    assert_eq!(seg.region_count(), 20);
    let mut labels = seg.labels.clone();
    labels.sort_unstable();
    assert_eq!(labels, (0..20).collect::<Vec<u32>>());
}

#[test]
fn two_halves() {
    let (w, h) = (24, 16);
    let img = ImageBuffer::from_fn(w, h, 3, |x, _, c| if x < w / 2 { 0.1 + 0.1 * c as f64 } else { 0.9 });
    let seg = slic_segment(&img, &cfg(2), 0).unwrap();
    assert_eq!(seg.region_count(), 2);
    let left = seg.label(0, 0);
    let mut inter = 0;
    let mut union = 0;
    for y in 0..h {
        for x in 0..w {
            let ideal = x < w / 2;
            let got = seg.label(x, y) == left;
            inter += (ideal && got) as usize;
            union += (ideal || got) as usize;
        }
    }
    assert!(inter as f64 / union as f64 >= 0.95);
}

#[test]
fn deterministic_and_partitioning() {
    let img = ImageBuffer::from_fn(40, 30, 3, |x, y, c| {
        (((x as f64 * 0.3).sin() + (y as f64 * 0.2 + c as f64).cos()) * 0.25 + 0.5).clamp(0.0, 1.0)
    });
    let a = slic_segment(&img, &cfg(12), 3).unwrap();
    let b = slic_segment(&img, &cfg(12), 3).unwrap();
    assert_eq!(a, b);
    check_partition(&a);
    let gray = slic_segment(&to_grayscale(&img), &cfg(12), 3).unwrap();
    check_partition(&gray);
}

#[test]
fn too_many_regions_rejected() {
    let img = ImageBuffer::new(3, 3, 1);
    assert!(slic_segment(&img, &cfg(10), 0).is_err());
}

#[test]
fn variance_examples() {
    // two regions: A = {0, 1} magnitudes, B = {0.5, 0.5}
    let seg = SegmentationMap::from_labels(2, 2, vec![0, 0, 1, 1], 1.0);
    let grad = GradientField {
        width: 2,
        height: 2,
        gx: vec![0.0, 1.0, 0.5, 0.5],
        gy: vec![0.0; 4],
        magnitude: vec![0.0, 1.0, 0.5, 0.5],
    };
    let v = region_variances(&seg, &grad).unwrap();
    assert_eq!(v, vec![(0, 0.25), (1, 0.0)]);

    let flat = GradientField {
        magnitude: vec![0.3; 4],
        ..grad.clone()
    };
    let seg3 = SegmentationMap::from_labels(2, 2, vec![2, 0, 1, 1], 1.0);
    let v = region_variances(&seg3, &flat).unwrap();
    assert_eq!(v.iter().map(|e| e.0).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert!(v.iter().all(|e| e.1 == 0.0));
}

#[test]
fn single_region_variance_matches_plane() {
    let img = ImageBuffer::from_fn(9, 7, 1, |x, y, _| ((x * x + 3 * y) % 11) as f64 / 10.0);
    let grad = sobel(&img).unwrap();
    let seg = SegmentationMap::from_labels(9, 7, vec![0; 63], 1.0);
    let v = region_variances(&seg, &grad).unwrap();
    let m = &grad.magnitude;
    let mean = m.iter().sum::<f64>() / 63.0;
    let var = m.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 63.0;
    assert_eq!(v.len(), 1);
    assert!((v[0].1 - var).abs() < 1e-12);
}

#[test]
fn variance_order_is_permutation() {
    let img = ImageBuffer::from_fn(32, 32, 3, |x, y, c| (((x ^ y) + c) % 7) as f64 / 6.0);
    let seg = slic_segment(&img, &cfg(16), 0).unwrap();
    let grad = sobel(&to_grayscale(&img)).unwrap();
    let v = region_variances(&seg, &grad).unwrap();
    let mut ids: Vec<usize> = v.iter().map(|e| e.0).collect();
    ids.sort_unstable();
    assert_eq!(ids, (0..seg.region_count()).collect::<Vec<_>>());
    assert!(v.windows(2).all(|p| p[0].1 >= p[1].1));
}
