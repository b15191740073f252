//! End-to-end acceptance checks. Each criterion prints one `PASS`/`FAIL` line to stderr
//! (uncaptured, so it shows in a normal `cargo test` run); the test fails if any criterion does.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use avifind_core::corpus::scan_corpus;
use avifind_core::descriptors::{color_moments, describe_image, shape_context, ShapeContextParams};
use avifind_core::eval::{run_grid, GridConfig, Variant};
use avifind_core::imaging::{ContourSet, RasterImage};
use avifind_core::index::{build_index, query, BowHistogram, BowIndex};
use avifind_core::synth::{synthetic_corpus, SynthSpec};
use avifind_core::vocabulary::{train_kmeans, KMeansConfig};
use avifind_core::{Keypoint, PipelineParams, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::oracle_counts;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn report(name: &str, o: &Outcome) {
    let status = if o.pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[acceptance] {status} {name}: {}", o.detail);
}

fn random_contour(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<Point> {
    let n = rng.gen_range(2..=max_len);
    (0..n)
        .map(|_| Point::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)))
        .collect()
}

fn shape_context_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let start = Instant::now();
    let mut agree = 0;
    for case in 0..200 {
        let pts = random_contour(&mut rng, 30);
        let params = ShapeContextParams {
            rotation_invariant: case % 2 == 1,
            ..Default::default()
        };
        let contour = ContourSet::new(pts.clone(), "c").unwrap();
        let dir = rng.gen_range(0.0..2.0 * PI);
        let all = pts.iter().all(|&p| {
            shape_context(p, dir, &contour, &params).unwrap().counts == oracle_counts(p, dir, &pts, &params)
        });
        agree += all as usize;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        agree == 200 && secs < 5.0,
        format!("{agree}/200 point sets agree bin-for-bin, {secs:.2} s"),
    )
}

fn exact_scale_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let params = ShapeContextParams::default();
    let mut mismatches = 0;
    let mut checks = 0;
    for _ in 0..100 {
        let pts = random_contour(&mut rng, 30);
        let c = ContourSet::new(pts.clone(), "c").unwrap();
        for s in [0.1, 3.0, 17.0] {
            let scaled = ContourSet::new(pts.iter().map(|p| p.scaled(s)).collect(), "s").unwrap();
            for i in 0..pts.len() {
                checks += 1;
                let a = shape_context(c.points[i], 0.0, &c, &params).unwrap();
                let b = shape_context(scaled.points[i], 0.0, &scaled, &params).unwrap();
                mismatches += (a.counts != b.counts) as usize;
            }
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches over {checks} histograms"))
}

fn exact_rotation_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    let params = ShapeContextParams {
        rotation_invariant: true,
        ..Default::default()
    };
    let mut mismatches = 0;
    let mut checks = 0;
    for _ in 0..100 {
        let pts = random_contour(&mut rng, 30);
        let c = ContourSet::new(pts.clone(), "c").unwrap();
        let dir = rng.gen_range(0.0..2.0 * PI);
        for phi in [0.3, PI / 2.0, 2.9] {
            let rotated = ContourSet::new(pts.iter().map(|p| p.rotated(phi)).collect(), "r").unwrap();
            for i in 0..pts.len() {
                checks += 1;
                let a = shape_context(c.points[i], dir, &c, &params).unwrap();
                let b = shape_context(rotated.points[i], dir + phi, &rotated, &params).unwrap();
                mismatches += (a.counts != b.counts) as usize;
            }
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches over {checks} histograms"))
}

fn conservation() -> Outcome {
    // The library also debug-asserts this on every call, so the rest of the suite is covered.
    let mut rng = ChaCha8Rng::seed_from_u64(1004);
    let params = ShapeContextParams::default();
    let mut bad = 0;
    let mut calls = 0;
    for _ in 0..300 {
        let pts = random_contour(&mut rng, 60);
        let c = ContourSet::new(pts.clone(), "c").unwrap();
        let refs = pts
            .iter()
            .copied()
            .chain((0..5).map(|_| Point::new(rng.gen_range(-50.0..150.0), rng.gen_range(-50.0..150.0))));
        for r in refs {
            let sc = shape_context(r, 0.0, &c, &params).unwrap();
            calls += 1;
            bad += (sc.binned() + sc.outside + sc.at_ref != pts.len()) as usize;
        }
    }
    outcome(bad == 0, format!("{bad} violations over {calls} calls"))
}

fn color_identities() -> Outcome {
    let constant = RasterImage::filled(9, 9, [17, 200, 93]).unwrap();
    let cm = color_moments(&constant, &Keypoint::at(4.0, 4.0));
    let constant_ok = cm.var == [0.0; 3];

    // 13 white and 12 black pixels in the 5x5 window around the centre.
    let mut img = RasterImage::filled(5, 5, [0, 0, 0]).unwrap();
    for i in 0..13 {
        img.put(i % 5, i / 5, [255, 255, 255]);
    }
    let cm = color_moments(&img, &Keypoint::at(2.0, 2.0));
    let expected = (13.0 / 25.0) * (12.0 / 25.0);
    let err = cm.var.iter().map(|v| (v - expected).abs()).fold(0.0, f64::max);
    outcome(
        constant_ok && err <= 1e-12,
        format!("constant variance exactly 0: {constant_ok}; Bernoulli variance error {err:.1e}"),
    )
}

fn kmeans_contracts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1005);
    let mut monotone = 0;
    for case in 0..50u64 {
        let n = rng.gen_range(20..150);
        let d = rng.gen_range(1..10);
        let k = rng.gen_range(1..12);
        let data: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let v = train_kmeans(&data, &KMeansConfig { k, seed: case, ..Default::default() }).unwrap();
        let hist = &v.train_meta.as_ref().unwrap().distortion_history;
        monotone += hist.windows(2).all(|w| w[1] <= w[0]) as usize;
    }

    let distinct = vec![vec![1.0, 0.0], vec![0.0, 3.0], vec![1.0, 0.0], vec![5.0, 5.0]];
    let exact = train_kmeans(&distinct, &KMeansConfig { k: 3, ..Default::default() }).unwrap();
    let zero = exact.train_meta.as_ref().unwrap().final_distortion() == 0.0;

    let data: Vec<Vec<f64>> = (0..200).map(|_| (0..6).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
    let one = train_kmeans(&data, &KMeansConfig { k: 1, ..Default::default() }).unwrap();
    let mean_err = (0..6)
        .map(|j| (one.centroid(0)[j] - data.iter().map(|x| x[j]).sum::<f64>() / 200.0).abs())
        .fold(0.0, f64::max);

    let cfg = KMeansConfig { k: 12, seed: 77, ..Default::default() };
    let identical = train_kmeans(&data, &cfg).unwrap() == train_kmeans(&data, &cfg).unwrap();

    outcome(
        monotone == 50 && zero && mean_err <= 1e-9 && identical,
        format!(
            "{monotone}/50 distortion histories non-increasing; k=distinct distortion 0: {zero}; \
             k=1 mean error {mean_err:.1e}; equal seeds bit-identical: {identical}"
        ),
    )
}

fn retrieval_identities() -> Outcome {
    let corpus = synthetic_corpus(&SynthSpec {
        colors: 2,
        per_class: 5,
        ..Default::default()
    });
    let params = PipelineParams {
        n: 100,
        ..Default::default()
    };
    let descriptors: Vec<Vec<f64>> = corpus
        .iter()
        .flat_map(|img| describe_image(&img.image, &img.image_id, &params).unwrap().descriptors)
        .map(|d| d.vector)
        .collect();
    let vocab = train_kmeans(&descriptors, &KMeansConfig { k: 128, seed: 1, ..Default::default() }).unwrap();
    let (idx, _) = build_index(&corpus, &vocab, &params).unwrap();

    let entries = idx.entries();
    let distinct = (0..entries.len()).all(|i| (0..i).all(|j| entries[i].bow.weights != entries[j].bow.weights));
    let self_hits = entries
        .iter()
        .filter(|e| {
            let top = &query(&e.bow, &idx, 1).unwrap().ranked[0];
            top.image_id == e.image_id && top.distance == 0.0
        })
        .count();

    let mut rng = ChaCha8Rng::seed_from_u64(1006);
    let random_query = |rng: &mut ChaCha8Rng| {
        let raw: Vec<f64> = (0..idx.k()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s: f64 = raw.iter().sum();
        BowHistogram {
            weights: raw.iter().map(|w| w / s).collect(),
            raw_count: 1,
        }
    };
    let mut oracle_agree = 0;
    for _ in 0..100 {
        let q = random_query(&mut rng);
        let mut want: Vec<(f64, &str)> = entries
            .iter()
            .map(|e| {
                let d: f64 = (0..q.k()).map(|i| (q.weights[i] - e.bow.weights[i]).abs()).sum();
                (d, e.image_id.as_str())
            })
            .collect();
        want.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(b.1)));
        let got = query(&q, &idx, entries.len()).unwrap().ranked;
        oracle_agree += got.iter().map(|h| (h.distance, h.image_id.as_str())).eq(want) as usize;
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("index.txt");
    idx.save(&path).unwrap();
    let back = BowIndex::load(&path).unwrap();
    let queries: Vec<BowHistogram> = entries
        .iter()
        .map(|e| e.bow.clone())
        .chain((0..20).map(|_| random_query(&mut rng)))
        .collect();
    let preserved = queries.iter().all(|q| {
        let ids = |i: &BowIndex| -> Vec<String> {
            query(q, i, entries.len()).unwrap().ranked.into_iter().map(|h| h.image_id).collect()
        };
        ids(&idx) == ids(&back)
    });

    outcome(
        distinct && self_hits == 30 && oracle_agree == 100 && preserved,
        format!(
            "histograms pairwise distinct: {distinct}; self-retrieval {self_hits}/30; \
             oracle agreement {oracle_agree}/100; save/load preserves rankings: {preserved}"
        ),
    )
}

fn synthetic_grid() -> (GridConfig, Vec<avifind_core::index::LabeledImage>) {
    let cfg = GridConfig {
        k_values: vec![64],
        n_values: vec![50, 300],
        variants: vec![Variant::Fused, Variant::ShapeOnly],
        base: PipelineParams {
            color_weight: 0.5,
            ..Default::default()
        },
        seed: 0,
        m: 10,
        ..Default::default()
    };
    (cfg, synthetic_corpus(&SynthSpec::default()))
}

fn table_one_analogues() -> Vec<(&'static str, Outcome)> {
    let (cfg, corpus) = synthetic_grid();
    let start = Instant::now();
    let first = run_grid(&corpus, &cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let second = run_grid(&corpus, &cfg).unwrap();

    let p = |n: usize, v: Variant| first.cell(64, n, v).and_then(|c| c.mean_precision);
    let mut out = Vec::new();

    let directional = match (p(300, Variant::Fused), p(300, Variant::ShapeOnly)) {
        (Some(f), Some(s)) => outcome(
            f - s >= 0.15 && secs < 600.0,
            format!(
                "{} images, k=64 n=300: fused P@10 {f:.4}, shape-only {s:.4}, gap {:.4} (need >= 0.15), grid {secs:.1} s",
                corpus.len(),
                f - s
            ),
        ),
        other => outcome(false, format!("cell failed: {other:?}")),
    };
    out.push(("fused beats shape-only on the synthetic corpus", directional));

    let monotone = match (p(50, Variant::Fused), p(300, Variant::Fused)) {
        (Some(lo), Some(hi)) => outcome(
            hi >= lo - 0.02,
            format!("fused P@10 at n=50 {lo:.4}, at n=300 {hi:.4} (need >= {:.4})", lo - 0.02),
        ),
        other => outcome(false, format!("cell failed: {other:?}")),
    };
    out.push(("denser sampling does not degrade", monotone));

    let (a, b) = (first.to_csv(), second.to_csv());
    let (ca, cb) = (first.curves_csv(), second.curves_csv());
    out.push((
        "end-to-end determinism",
        outcome(
            a == b && ca == cb,
            format!("two eval runs: report CSV identical {}, curves CSV identical {}", a == b, ca == cb),
        ),
    ));
    out
}

/// Runs only when `AVIFIND_CUB_ROOT` points at a CUB-200 checkout.
fn cub_harness() -> Option<Outcome> {
    let root = std::env::var_os("AVIFIND_CUB_ROOT")?;
    let manifest = match scan_corpus(Path::new(&root), Some(30), 0) {
        Ok(m) => m,
        Err(e) => return Some(outcome(false, format!("cannot scan corpus: {e}"))),
    };
    let corpus = match manifest.load_images() {
        Ok(c) => c,
        Err(e) => return Some(outcome(false, format!("cannot load corpus: {e}"))),
    };
    let cfg = GridConfig::default();
    let report = match run_grid(&corpus, &cfg) {
        Ok(r) => r,
        Err(e) => return Some(outcome(false, format!("grid failed: {e}"))),
    };
    let mut complete = 0;
    let mut ordered = 0;
    for &k in &cfg.k_values {
        for &n in &cfg.n_values {
            let f = report.cell(k, n, Variant::Fused).and_then(|c| c.mean_precision);
            let s = report.cell(k, n, Variant::ShapeOnly).and_then(|c| c.mean_precision);
            complete += f.is_some() as usize + s.is_some() as usize;
            if let (Some(f), Some(s)) = (f, s) {
                ordered += (f >= s) as usize;
            }
        }
    }
    // 36 cells form 18 fused/shape pairs; 30 of 36 cells is read as 15 of 18 pairs.
    Some(outcome(
        complete == 36 && ordered >= 15,
        format!("{} images: {complete}/36 cells completed, fused >= shape in {ordered}/18 pairs", corpus.len()),
    ))
}

#[test]
fn acceptance_criteria() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("shape-context oracle equivalence", shape_context_oracle()),
        ("exact scale invariance", exact_scale_invariance()),
        ("exact rotation invariance", exact_rotation_invariance()),
        ("histogram conservation", conservation()),
        ("color-moment identities", color_identities()),
        ("k-means contracts", kmeans_contracts()),
        ("retrieval identities", retrieval_identities()),
    ];
    for r in &results {
        report(r.0, &r.1);
    }
    for r in table_one_analogues() {
        report(r.0, &r.1);
        results.push(r);
    }
    match cub_harness() {
        Some(o) => {
            report("full CUB-200 grid", &o);
            results.push(("full CUB-200 grid", o));
        }
        None => {
            let _ = writeln!(
                std::io::stderr(),
                "[acceptance] SKIP full CUB-200 grid: set AVIFIND_CUB_ROOT to a CUB-200 checkout to run it"
            );
        }
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
