//! Procedurally rendered handwritten-style digits on a 28×28 canvas.
//!
//! Each digit is a set of polylines in a unit box. Every sample applies a
//! random affine warp (rotation, anisotropic scale, shear, shift), jitters
//! the control points, and draws anti-aliased strokes of random width into
//! the central 20×20 region, the same framing MNIST uses. Ten visually
//! distinct classes with intra-class variation are all the experiments need
//! when the real corpus is not on disk.

use std::f64::consts::PI;

use rand::Rng;

use super::IMAGE_SIDE;

type Stroke = Vec<(f64, f64)>;

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64, n: usize) -> Stroke {
    (0..=n)
        .map(|i| {
            let a = (from_deg + (to_deg - from_deg) * i as f64 / n as f64) * PI / 180.0;
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

fn chain(mut a: Stroke, b: &[(f64, f64)]) -> Stroke {
    a.extend_from_slice(b);
    a
}

/// Unit-box strokes for a digit; y grows downward.
pub fn glyph(digit: u8) -> Vec<Stroke> {
    match digit {
        0 => vec![arc(0.5, 0.5, 0.28, 0.42, 0.0, 360.0, 24)],
        1 => vec![vec![(0.36, 0.24), (0.53, 0.08), (0.53, 0.92)]],
        2 => vec![chain(arc(0.5, 0.3, 0.27, 0.22, 190.0, 400.0, 12), &[(0.2, 0.92), (0.84, 0.92)])],
        3 => vec![arc(0.48, 0.29, 0.26, 0.2, 200.0, 450.0, 12), arc(0.48, 0.7, 0.3, 0.22, 270.0, 520.0, 12)],
        4 => vec![vec![(0.62, 0.92), (0.62, 0.08), (0.16, 0.66), (0.86, 0.66)]],
        5 => vec![vec![(0.78, 0.1), (0.32, 0.1), (0.29, 0.46)], arc(0.5, 0.66, 0.28, 0.26, 220.0, 500.0, 14)],
        6 => vec![chain(vec![(0.72, 0.1), (0.46, 0.3)], &arc(0.5, 0.68, 0.23, 0.22, 200.0, 560.0, 18))],
        7 => vec![vec![(0.16, 0.1), (0.84, 0.1), (0.42, 0.92)]],
        8 => vec![arc(0.5, 0.28, 0.2, 0.19, 0.0, 360.0, 16), arc(0.5, 0.7, 0.25, 0.22, 0.0, 360.0, 18)],
        9 => vec![arc(0.5, 0.3, 0.24, 0.21, 0.0, 360.0, 16), vec![(0.74, 0.3), (0.66, 0.92)]],
        _ => panic!("digit {digit} out of range"),
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Renders one random instance of `digit` as 784 row-major values in [0,1].
pub fn render_digit<R: Rng + ?Sized>(digit: u8, rng: &mut R) -> Vec<f64> {
    let theta: f64 = rng.random_range(-0.25..0.25);
    let sx: f64 = rng.random_range(0.8..1.08);
    let sy: f64 = rng.random_range(0.88..1.08);
    let shear: f64 = rng.random_range(-0.25..0.25);
    let tx: f64 = rng.random_range(-0.07..0.07);
    let ty: f64 = rng.random_range(-0.06..0.06);
    let half_width: f64 = rng.random_range(0.9..1.9);
    let peak: f64 = rng.random_range(0.85..1.0);
    let (sin, cos) = theta.sin_cos();
    const BOX: f64 = 20.0;
    let offset = (IMAGE_SIDE as f64 - BOX) / 2.0;

    let segments: Vec<((f64, f64), (f64, f64))> = glyph(digit)
        .into_iter()
        .flat_map(|stroke| {
            let pts: Vec<(f64, f64)> = stroke
                .into_iter()
                .map(|(u, v)| {
                    let u = u + rng.random_range(-0.025..0.025) - 0.5;
                    let v = v + rng.random_range(-0.025..0.025) - 0.5;
                    let (u, v) = (sx * (u + shear * v), sy * v);
                    let (u, v) = (cos * u - sin * v + 0.5 + tx, sin * u + cos * v + 0.5 + ty);
                    (offset + BOX * u, offset + BOX * v)
                })
                .collect();
            pts.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>()
        })
        .collect();

    let mut img = Vec::with_capacity(IMAGE_SIDE * IMAGE_SIDE);
    for r in 0..IMAGE_SIDE {
        for c in 0..IMAGE_SIDE {
            let p = (c as f64 + 0.5, r as f64 + 0.5);
            let d = segments.iter().map(|&(a, b)| segment_distance(p, a, b)).fold(f64::INFINITY, f64::min);
            img.push((peak * (half_width + 0.5 - d)).clamp(0.0, peak));
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn renders_are_in_range_and_nonblank() {
        let mut rng = seeded(5);
        for d in 0..10 {
            let img = render_digit(d, &mut rng);
            assert_eq!(img.len(), 784);
            assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
            let ink: f64 = img.iter().sum();
            assert!(ink > 20.0 && ink < 300.0, "digit {d} ink {ink}");
            // border rows stay mostly empty
            assert!(img[..28].iter().sum::<f64>() < 1.0);
        }
    }

    #[test]
    fn classes_differ_more_than_instances() {
        let mut rng = seeded(9);
        let mean = |d: u8, rng: &mut crate::rng::SeedRng| {
            let mut acc = vec![0.0; 784];
            for _ in 0..20 {
                for (a, v) in acc.iter_mut().zip(render_digit(d, rng)) {
                    *a += v / 20.0;
                }
            }
            acc
        };
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let one_a = mean(1, &mut rng);
        let one_b = mean(1, &mut rng);
        let zero = mean(0, &mut rng);
        assert!(dist(&one_a, &zero) > 3.0 * dist(&one_a, &one_b));
    }
}
