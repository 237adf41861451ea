//! Independent numerical oracles for the closed-form quantities.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use oboxkit_core::gaussian::{gbb_to_lgbb, obb_to_gbb, Gbb};
use oboxkit_core::geometry::{corners, rotated_iou, ObbLe};
use oboxkit_core::losses::{hellinger_loss, kld_loss};

fn log_density(g: &Gbb, x: [f64; 2]) -> f64 {
    let [a, b, c] = g.g;
    let det = a * c - b * b;
    let (dx, dy) = (x[0] - g.mu[0], x[1] - g.mu[1]);
    let maha = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
    -0.5 * maha - 0.5 * det.ln() - (2.0 * PI).ln()
}

fn sample(g: &Gbb, r: &mut impl Rng) -> [f64; 2] {
    // Cholesky of [[a, b], [b, c]]
    let [a, b, c] = g.g;
    let l11 = a.sqrt();
    let l21 = b / l11;
    let l22 = (c - l21 * l21).sqrt();
    let z0: f64 = r.sample(StandardNormal);
    let z1: f64 = r.sample(StandardNormal);
    [g.mu[0] + l11 * z0, g.mu[1] + l21 * z0 + l22 * z1]
}

fn pairs() -> Vec<(Gbb, Gbb)> {
    let b = |cx, cy, w, h, t| obb_to_gbb(&ObbLe::new(cx, cy, w, h, t).unwrap());
    vec![
        (b(0.0, 0.0, 6.0, 2.0, 0.3), b(1.0, -0.5, 5.0, 3.0, -0.2)),
        (b(2.0, 1.0, 10.0, 4.0, 1.2), b(0.0, 0.0, 8.0, 6.0, 0.9)),
        (b(0.0, 0.0, 3.0, 2.5, -1.0), b(0.5, 0.5, 4.0, 1.0, 0.4)),
    ]
}

#[test]
fn kld_matches_monte_carlo() {
    let mut r = ChaCha8Rng::seed_from_u64(21);
    for (p, q) in pairs() {
        let n = 1_000_000;
        let est: f64 = (0..n)
            .map(|_| {
                let x = sample(&p, &mut r);
                log_density(&p, x) - log_density(&q, x)
            })
            .sum::<f64>()
            / n as f64;
        let exact = kld_loss(&p, &q).unwrap();
        assert!((est - exact).abs() / exact < 0.02, "mc {est} closed {exact}");
    }
}

#[test]
fn hellinger_matches_monte_carlo() {
    // BC = E_p[sqrt(q/p)]
    let mut r = ChaCha8Rng::seed_from_u64(22);
    for (p, q) in pairs() {
        let n = 1_000_000;
        let bc: f64 = (0..n)
            .map(|_| {
                let x = sample(&p, &mut r);
                (0.5 * (log_density(&q, x) - log_density(&p, x))).exp()
            })
            .sum::<f64>()
            / n as f64;
        let est = (1.0 - bc).max(0.0).sqrt();
        let exact = hellinger_loss(&p, &q).unwrap();
        assert!((est - exact).abs() / exact < 0.02, "mc {est} closed {exact}");
        assert!((hellinger_loss(&q, &p).unwrap() - exact).abs() < 1e-12);
    }
}

#[test]
fn hellinger_saturates_for_distant_boxes() {
    let p = obb_to_gbb(&ObbLe::new(0.0, 0.0, 4.0, 2.0, 0.0).unwrap());
    let q = obb_to_gbb(&ObbLe::new(500.0, 0.0, 4.0, 2.0, 0.0).unwrap());
    assert!(hellinger_loss(&p, &q).unwrap() > 1.0 - 1e-12);
    assert!(hellinger_loss(&p, &q).unwrap() <= 1.0);
}

fn inside(b: &ObbLe, x: f64, y: f64) -> bool {
    let (s, c) = b.theta().sin_cos();
    let (dx, dy) = (x - b.cx(), y - b.cy());
    // long axis along (cos θ, −sin θ)
    let a = dx * c - dy * s;
    let bb = dx * s + dy * c;
    a.abs() <= b.w() / 2.0 && bb.abs() <= b.h() / 2.0
}

#[test]
fn rotated_iou_matches_monte_carlo() {
    let mut r = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..6 {
        let a = ObbLe::new(0.0, 0.0, r.random_range(4.0..10.0), r.random_range(1.0..4.0), r.random_range(-FRAC_PI_2..FRAC_PI_2))
            .unwrap();
        let b = ObbLe::new(
            r.random_range(-2.0..2.0),
            r.random_range(-2.0..2.0),
            r.random_range(4.0..10.0),
            r.random_range(1.0..4.0),
            r.random_range(-FRAC_PI_2..FRAC_PI_2),
        )
        .unwrap();
        let (mut inter, mut union) = (0u64, 0u64);
        for _ in 0..400_000 {
            let (x, y) = (r.random_range(-8.0..8.0), r.random_range(-8.0..8.0));
            let (ia, ib) = (inside(&a, x, y), inside(&b, x, y));
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
        let est = inter as f64 / union as f64;
        assert!((est - rotated_iou(&a, &b)).abs() < 0.01, "mc {est} vs {}", rotated_iou(&a, &b));
    }
}

#[test]
fn corners_lie_on_box_boundary() {
    let b = ObbLe::new(3.0, -1.0, 8.0, 2.0, 0.7).unwrap();
    for [x, y] in corners(&b) {
        assert!(inside(&b, x + (b.cx() - x) * 1e-9, y + (b.cy() - y) * 1e-9));
        assert!(!inside(&b, x + (x - b.cx()) * 1e-6, y + (y - b.cy()) * 1e-6));
    }
}

#[test]
fn lgbb_is_the_stated_linear_map() {
    let mut r = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..1000 {
        let g = [r.random_range(0.1..50.0), r.random_range(-10.0..10.0), r.random_range(0.1..50.0)];
        let l = gbb_to_lgbb(&Gbb::new([0.0, 0.0], g)).l;
        let expect = [0.5 * g[0] + 0.5 * g[2], g[0], 0.5 * g[0] + g[1] + 0.5 * g[2]];
        for i in 0..3 {
            assert!((l[i] - expect[i]).abs() <= 1e-12 * expect[i].abs().max(1.0));
        }
    }
}

#[test]
fn gbb_eigen_decomposition_matches_box() {
    // Σ = R diag(w²/4, h²/4) Rᵀ with the long axis along (cos θ, −sin θ)
    let b = ObbLe::new(0.0, 0.0, 6.0, 2.0, 0.5).unwrap();
    let g = obb_to_gbb(&b).g;
    let (s, c) = b.theta().sin_cos();
    let v = [c, -s];
    let sv = [g[0] * v[0] + g[1] * v[1], g[1] * v[0] + g[2] * v[1]];
    assert!((sv[0] - 9.0 * v[0]).abs() < 1e-12 && (sv[1] - 9.0 * v[1]).abs() < 1e-12);
}
