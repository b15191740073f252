use std::f64::consts::TAU;

use avifind_core::descriptors::ShapeContextParams;
use avifind_core::Point;

/// Independent histogram: explicit double loop, log-radius comparisons, modular angles.
pub fn oracle_counts(reference: Point, ref_dir: f64, points: &[Point], params: &ShapeContextParams) -> Vec<u32> {
    let n = points.len() as f64;
    let mut total = 0.0;
    for a in points {
        for b in points {
            total += ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
        }
    }
    let alpha = total / (n * n);
    let (lo, hi) = (params.r_min.ln(), params.r_max.ln());
    let big_r = params.radial_bins as f64;
    let mut counts = vec![0u32; params.bins()];
    for q in points {
        if q.x == reference.x && q.y == reference.y {
            continue;
        }
        let r = ((q.x - reference.x).powi(2) + (q.y - reference.y).powi(2)).sqrt() / alpha;
        if r >= params.r_max {
            continue;
        }
        let mut radial = 0;
        for j in 1..params.radial_bins {
            if r.ln() >= lo + (hi - lo) * j as f64 / big_r {
                radial = j;
            }
        }
        let mut theta = (q.y - reference.y).atan2(q.x - reference.x);
        if params.rotation_invariant {
            theta -= ref_dir;
        }
        while theta < 0.0 {
            theta += TAU;
        }
        while theta >= TAU {
            theta -= TAU;
        }
        let angular = ((theta / (TAU / params.angular_bins as f64)).floor() as usize)
            .min(params.angular_bins - 1);
        counts[radial * params.angular_bins + angular] += 1;
    }
    counts
}

