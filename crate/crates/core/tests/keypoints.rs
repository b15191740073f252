use std::collections::HashSet;
use std::f64::consts::{PI, TAU};

use avifind_core::imaging::GrayImage;
use avifind_core::keypoints::{
    build_dog_pyramid, detect_in_pyramid, detect_keypoints, is_strict_extremum, passes_edge_test,
    quadratic_fit, ScaleSpaceParams, ASSUMED_INPUT_BLUR,
};
use avifind_core::Keypoint;
use proptest::prelude::*;

fn impulse(size: usize, at: usize) -> GrayImage {
    GrayImage::from_fn(size, size, |x, y| if x == at && y == at { 1.0 } else { 0.0 })
}

fn dot(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> GrayImage {
    GrayImage::from_fn(w, h, |x, y| {
        if (x as f64 - cx).hypot(y as f64 - cy) <= r {
            1.0
        } else {
            0.0
        }
    })
}

/// A few overlapping blobs and a bar, deliberately asymmetric.
fn scene(w: usize, h: usize) -> GrayImage {
    GrayImage::from_fn(w, h, |x, y| {
        let (x, y) = (x as f64, y as f64);
        let mut v = 0.2;
        if (x - 18.0).hypot(y - 20.0) <= 5.0 {
            v += 0.6;
        }
        if (x - 44.0).hypot(y - 30.0) <= 3.0 {
            v += 0.5;
        }
        if (x - 30.0).hypot(y - 48.0) <= 8.0 {
            v -= 0.15;
        }
        if (8.0..14.0).contains(&x) && (40.0..56.0).contains(&y) {
            v += 0.4;
        }
        v
    })
}

#[test]
fn impulse_dog_matches_difference_of_gaussians() {
    let params = ScaleSpaceParams::default();
    let pyr = build_dog_pyramid(&impulse(64, 32), &params).unwrap();
    // Octave 1 sits on the input grid. The impulse carries none of the assumed input blur, and
    // bilinear upsampling adds a tent of variance 1/24 px².
    let oct = &pyr.octaves[1];
    assert_eq!((oct.step, oct.offset), (1.0, 0.0));
    let var = |i: usize| params.level_sigma(i as f64).powi(2) - ASSUMED_INPUT_BLUR.powi(2) + 1.0 / 24.0;
    let peak = |v: f64| 1.0 / (2.0 * PI * v);
    for i in 0..oct.dogs.len() {
        let expected = peak(var(i)) - peak(var(i + 1));
        let got = oct.dogs[i].at(32, 32);
        assert!(
            (got / expected - 1.0).abs() < 0.08,
            "layer {i}: {got} vs closed form {expected}"
        );
    }
    for oct in &pyr.octaves[..2] {
        let c = ((32.0 - oct.offset) / oct.step) as usize;
        let centre: Vec<f64> = oct.dogs.iter().map(|d| d.at(c, c)).collect();
        assert!(centre.iter().all(|&v| v > 0.0), "{centre:?}");
        assert!(centre.windows(2).all(|w| w[1] < w[0]), "{centre:?}");
    }
}

#[test]
fn one_octave_when_asked() {
    let params = ScaleSpaceParams {
        octaves: 1,
        ..Default::default()
    };
    let pyr = build_dog_pyramid(&impulse(128, 64), &params).unwrap();
    assert_eq!(pyr.octaves.len(), 1);
    assert!(!pyr.truncated());
}

/// Independent 26-neighborhood scan.
fn oracle_extrema(dogs: &[GrayImage], layers: std::ops::RangeInclusive<usize>) -> Vec<(usize, usize, usize)> {
    let (w, h) = (dogs[0].width, dogs[0].height);
    let mut out = Vec::new();
    for l in layers {
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let v = dogs[l].at(x, y);
                let mut neighbours = Vec::with_capacity(26);
                for dl in [l - 1, l, l + 1] {
                    for yy in [y - 1, y, y + 1] {
                        for xx in [x - 1, x, x + 1] {
                            if (dl, yy, xx) != (l, y, x) {
                                neighbours.push(dogs[dl].at(xx, yy));
                            }
                        }
                    }
                }
                if neighbours.iter().all(|&n| v > n) || neighbours.iter().all(|&n| v < n) {
                    out.push((l, x, y));
                }
            }
        }
    }
    out
}

#[test]
fn dot_yields_keypoint_at_centre() {
    let params = ScaleSpaceParams::default();
    let img = dot(64, 64, 32.0, 32.0, 2.0);
    let pyr = build_dog_pyramid(&img, &params).unwrap();

    let near_centre = |x: f64, y: f64| (x - 32.0).hypot(y - 32.0) <= 1.5;
    let mut oracle_hits = 0;
    for oct in &pyr.octaves {
        for (l, x, y) in oracle_extrema(&oct.dogs, 1..=params.scales_per_octave) {
            assert!(is_strict_extremum(&oct.dogs, l, x, y));
            let (ix, iy) = oct.to_image_coords(x as f64, y as f64);
            if near_centre(ix, iy) && oct.dogs[l].at(x, y).abs() >= params.contrast_thresh {
                oracle_hits += 1;
            }
        }
    }
    assert!(oracle_hits >= 1);

    let kps = detect_in_pyramid(&pyr, 64, 64);
    assert!(
        kps.iter().any(|k| near_centre(k.x, k.y)),
        "no keypoint near the dot: {kps:?}"
    );
}

fn mirror(img: &GrayImage) -> GrayImage {
    GrayImage::from_fn(img.width, img.height, |x, y| img.at(img.width - 1 - x, y))
}

#[test]
fn mirrored_image_mirrors_keypoints() {
    let params = ScaleSpaceParams::default();
    for img in [dot(64, 64, 20.0, 27.0, 2.0), scene(64, 64)] {
        let a = detect_keypoints(&img, &params).unwrap();
        let b = detect_keypoints(&mirror(&img), &params).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a.len(), b.len());
        for k in &a {
            let mx = 63.0 - k.x;
            assert!(
                b.iter().any(|m| (m.x - mx).abs() <= 1.5 && (m.y - k.y).abs() <= 1.5),
                "no mirror partner for {k:?}"
            );
        }
    }
}

fn recheck(img: &GrayImage, params: &ScaleSpaceParams, kps: &[Keypoint]) {
    let pyr = build_dog_pyramid(img, params).unwrap();
    for k in kps {
        assert!((0.0..img.width as f64).contains(&k.x) && (0.0..img.height as f64).contains(&k.y));
        assert!(k.scale > 0.0);
        assert!((0.0..TAU).contains(&k.orientation));
        let oct = &pyr.octaves[k.octave];
        assert!((1..=params.scales_per_octave).contains(&k.layer));
        assert!(is_strict_extremum(&oct.dogs, k.layer, k.ix, k.iy), "{k:?}");
        assert!(passes_edge_test(&oct.dogs[k.layer], k.ix, k.iy, params.edge_thresh), "{k:?}");
        let (off, value) = quadratic_fit(&oct.dogs, k.layer, k.ix, k.iy).unwrap();
        assert!(off.iter().all(|o| o.abs() <= 0.5));
        assert!(value.abs() >= params.contrast_thresh);
        assert!(k.response > params.contrast_thresh);
        assert_eq!(k.response, value.abs());
        let (x, y) = oct.to_image_coords(k.ix as f64 + off[0], k.iy as f64 + off[1]);
        assert!((x.clamp(0.0, (img.width - 1) as f64) - k.x).abs() < 1e-12);
        assert!((y.clamp(0.0, (img.height - 1) as f64) - k.y).abs() < 1e-12);
    }
}

#[test]
fn every_keypoint_rechecks_against_pyramid() {
    let params = ScaleSpaceParams::default();
    for img in [scene(64, 64), scene(80, 50), dot(48, 48, 24.0, 24.0, 3.0)] {
        let kps = detect_keypoints(&img, &params).unwrap();
        assert!(!kps.is_empty());
        recheck(&img, &params, &kps);
    }
}

fn keys(kps: &[Keypoint]) -> HashSet<(usize, usize, usize, usize)> {
    kps.iter().map(|k| (k.octave, k.layer, k.ix, k.iy)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn raising_contrast_never_adds(seed_blobs in prop::collection::vec((4.0..44.0f64, 4.0..44.0f64, 1.5..6.0f64, -0.5..0.5f64), 1..6),
                                   lo in 0.005..0.05f64, extra in 0.0..0.05f64) {
        let img = GrayImage::from_fn(48, 48, |x, y| {
            0.3 + seed_blobs
                .iter()
                .filter(|(cx, cy, r, _)| (x as f64 - cx).hypot(y as f64 - cy) <= *r)
                .map(|b| b.3)
                .sum::<f64>()
        });
        let low = ScaleSpaceParams { contrast_thresh: lo, ..Default::default() };
        let high = ScaleSpaceParams { contrast_thresh: lo + extra, ..Default::default() };
        let a = detect_keypoints(&img, &low).unwrap();
        let b = detect_keypoints(&img, &high).unwrap();
        prop_assert!(keys(&b).is_subset(&keys(&a)));
        prop_assert_eq!(&a, &detect_keypoints(&img, &low).unwrap());
        recheck(&img, &low, &a);
    }
}
