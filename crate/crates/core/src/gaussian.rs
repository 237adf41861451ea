//! Gaussian box (GBB) and linear Gaussian box (LGBB) forms of an oriented box.
//!
//! A box maps to `N(μ, Σ)` with `μ` the center and `Σ = [[g1, g2], [g2, g3]]`
//! built from `λ1 = w²/4`, `λ2 = h²/4` and `θ`. The linear form applies the
//! fixed matrix
//!
//! ```text
//!       | 1/2  0  1/2 |
//! L_T = |  1   0   0  |      (l1, l2, l3) = L_T (g1, g2, g3)
//!       | 1/2  1  1/2 |
//! ```
//!
//! whose entries are all positive and bounded by `[λ2, λ1]` for any box,
//! with `l1 = (λ1 + λ2)/2` independent of orientation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ObbLe;

/// Relative tolerance of the positive-definiteness test `det > ε·(g1+g3)²`.
pub const PD_REL_EPS: f64 = 1e-12;
/// Relative eigenvalue gap below which orientation is undefined and θ = 0.
pub const ISOTROPY_REL_EPS: f64 = 1e-12;
/// Boxes with `w/h` below `1 + threshold` count as close to square.
pub const DEFAULT_SQUARE_THRESHOLD: f64 = 0.05;
/// Long-side stretch applied to near-square boxes.
pub const SQUARE_EXTENSION: f64 = 1.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gbb {
    pub mu: [f64; 2],
    pub g: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lgbb {
    pub mu: [f64; 2],
    pub l: [f64; 3],
}

impl Gbb {
    pub fn new(mu: [f64; 2], g: [f64; 3]) -> Self {
        Self { mu, g }
    }

    pub fn det(&self) -> f64 {
        let [g1, g2, g3] = self.g;
        g1 * g3 - g2 * g2
    }

    /// Checks `g1 > 0`, `g3 > 0` and `det Σ > ε·(g1+g3)²`, naming the first
    /// violated condition.
    pub fn check_positive_definite(&self) -> Result<()> {
        let [g1, g2, g3] = self.g;
        if !(g1.is_finite() && g2.is_finite() && g3.is_finite()) {
            return Err(Error::not_pd("covariance entries must be finite"));
        }
        if g1 <= 0.0 {
            return Err(Error::not_pd(format!("g1 > 0 violated (g1 = {g1})")));
        }
        if g3 <= 0.0 {
            return Err(Error::not_pd(format!("g3 > 0 violated (g3 = {g3})")));
        }
        let det = self.det();
        if det <= PD_REL_EPS * (g1 + g3).powi(2) {
            return Err(Error::not_pd(format!("det Σ = g1·g3 − g2² > 0 violated (det = {det})")));
        }
        Ok(())
    }

    pub fn is_positive_definite(&self) -> bool {
        self.check_positive_definite().is_ok()
    }

    /// Eigenvalues `(λ_max, λ_min)` of Σ.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let [g1, g2, g3] = self.g;
        let mean = 0.5 * (g1 + g3);
        let r = (0.5 * (g1 - g3)).hypot(g2);
        let lmax = mean + r;
        // det/λmax avoids cancellation for elongated boxes
        let lmin = if lmax > 0.0 { self.det() / lmax } else { mean - r };
        (lmax, lmin)
    }

    pub(crate) fn inverse(&self) -> [f64; 3] {
        let [g1, g2, g3] = self.g;
        let d = self.det();
        [g3 / d, -g2 / d, g1 / d]
    }
}

impl Lgbb {
    pub fn new(mu: [f64; 2], l: [f64; 3]) -> Self {
        Self { mu, l }
    }
}

/// Half-side-squared eigenvalues `(λ1, λ2) = (w²/4, h²/4)`.
pub fn lambdas(b: &ObbLe) -> (f64, f64) {
    (b.w() * b.w() / 4.0, b.h() * b.h() / 4.0)
}

pub fn obb_to_gbb(b: &ObbLe) -> Gbb {
    let (l1, l2) = lambdas(b);
    let (s, c) = b.theta().sin_cos();
    Gbb {
        mu: [b.cx(), b.cy()],
        g: [
            l1 * c * c + l2 * s * s,
            (l2 - l1) * s * c,
            l1 * s * s + l2 * c * c,
        ],
    }
}

/// Recovers the box from Σ's eigen-decomposition. Isotropic Σ yields θ = 0.
pub fn gbb_to_obb(g: &Gbb) -> Result<ObbLe> {
    g.check_positive_definite()?;
    let [g1, g2, g3] = g.g;
    let (lmax, lmin) = g.eigenvalues();
    // g1 − g3 = (λ1−λ2)·cos 2θ and −2·g2 = (λ1−λ2)·sin 2θ
    let theta = if lmax - lmin <= ISOTROPY_REL_EPS * lmax {
        0.0
    } else {
        0.5 * (-2.0 * g2).atan2(g1 - g3)
    };
    ObbLe::new(g.mu[0], g.mu[1], 2.0 * lmax.sqrt(), 2.0 * lmin.sqrt(), theta)
}

pub fn gbb_to_lgbb(g: &Gbb) -> Lgbb {
    let [g1, g2, g3] = g.g;
    Lgbb {
        mu: g.mu,
        l: [0.5 * g1 + 0.5 * g3, g1, 0.5 * g1 + g2 + 0.5 * g3],
    }
}

/// Inverse of [`gbb_to_lgbb`]: `g1 = l2`, `g2 = l3 − l1`, `g3 = 2·l1 − l2`.
pub fn lgbb_to_gbb(l: &Lgbb) -> Result<Gbb> {
    let g = lgbb_to_gbb_unchecked(l);
    g.check_positive_definite()?;
    Ok(g)
}

pub(crate) fn lgbb_to_gbb_unchecked(l: &Lgbb) -> Gbb {
    let [l1, l2, l3] = l.l;
    Gbb { mu: l.mu, g: [l2, l3 - l1, 2.0 * l1 - l2] }
}

pub fn obb_to_lgbb(b: &ObbLe) -> Lgbb {
    gbb_to_lgbb(&obb_to_gbb(b))
}

pub fn lgbb_to_obb(l: &Lgbb) -> Result<ObbLe> {
    gbb_to_obb(&lgbb_to_gbb(l)?)
}

/// `min{l2(2·l1 − l2) − (l3 − l1)², 0}`, i.e. `min{det Σ, 0}`.
pub fn pd_constraint(l: &Lgbb) -> f64 {
    let [l1, l2, l3] = l.l;
    (l2 * (2.0 * l1 - l2) - (l3 - l1).powi(2)).min(0.0)
}

/// Stretches the long side of a near-square box (`w/h < 1 + threshold`)
/// by 2% so its Gaussian is anisotropic and θ is recoverable.
pub fn square_extend(b: &ObbLe, ratio_threshold: f64) -> ObbLe {
    if b.w() / b.h() < 1.0 + ratio_threshold {
        b.with_long_side_scaled(SQUARE_EXTENSION)
    } else {
        *b
    }
}

/// One violated value-range condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeViolation {
    pub quantity: &'static str,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeReport {
    pub lambda1: f64,
    pub lambda2: f64,
    pub gbb: Gbb,
    pub lgbb: Lgbb,
    pub violations: Vec<RangeViolation>,
}

impl RangeReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the closed value ranges
/// `λ2 ≤ g1, g3 ≤ λ1`, `|g2| ≤ (λ1−λ2)/2`, `l1 = (λ1+λ2)/2`, `λ2 ≤ l2, l3 ≤ λ1`,
/// with a relative slack of a few ulps of `λ1`.
pub fn check_ranges(b: &ObbLe) -> RangeReport {
    let (lam1, lam2) = lambdas(b);
    let gbb = obb_to_gbb(b);
    let lgbb = gbb_to_lgbb(&gbb);
    let tol = 8.0 * f64::EPSILON * lam1;
    let half_gap = 0.5 * (lam1 - lam2);
    let l1_exact = 0.5 * (lam1 + lam2);
    let checks = [
        ("g1", gbb.g[0], lam2, lam1),
        ("g2", gbb.g[1], -half_gap, half_gap),
        ("g3", gbb.g[2], lam2, lam1),
        ("l1", lgbb.l[0], l1_exact, l1_exact),
        ("l2", lgbb.l[1], lam2, lam1),
        ("l3", lgbb.l[2], lam2, lam1),
    ];
    let violations = checks
        .into_iter()
        .filter(|&(_, v, lo, hi)| !(v >= lo - tol && v <= hi + tol))
        .map(|(quantity, value, lower, upper)| RangeViolation { quantity, value, lower, upper })
        .collect();
    RangeReport { lambda1: lam1, lambda2: lam2, gbb, lgbb, violations }
}
