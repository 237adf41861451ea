//! Regression losses for oriented boxes.
//!
//! The LGBB loss is a Smooth L1 over anchor-normalized deltas plus a penalty
//! that activates only when the predicted LGBB decodes to a non positive
//! definite covariance. KLD and Hellinger distances between Gaussian boxes are
//! provided for comparison, together with analytic gradients and the
//! gradient-versus-object-size profile that contrasts them.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{obb_to_gbb, obb_to_lgbb, Gbb, Lgbb};
use crate::geometry::ObbLe;
use crate::rng::SeedStream;

pub const DEFAULT_GAMMA1: f64 = 0.8;
pub const DEFAULT_GAMMA2: f64 = 0.2;

/// Anchor with its LGBB cached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorBox {
    obb: ObbLe,
    lgbb: Lgbb,
}

impl AnchorBox {
    pub fn new(obb: ObbLe) -> Self {
        Self { obb, lgbb: obb_to_lgbb(&obb) }
    }

    pub fn obb(&self) -> &ObbLe {
        &self.obb
    }

    pub fn lgbb(&self) -> &Lgbb {
        &self.lgbb
    }

    /// Horizontal extent `|w cos θ| + |h sin θ|`.
    pub fn x_extent(&self) -> f64 {
        let (s, c) = self.obb.theta().sin_cos();
        (self.obb.w() * c).abs() + (self.obb.h() * s).abs()
    }

    /// Vertical extent `|w sin θ| + |h cos θ|`.
    pub fn y_extent(&self) -> f64 {
        let (s, c) = self.obb.theta().sin_cos();
        (self.obb.w() * s).abs() + (self.obb.h() * c).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaVector {
    pub dcx: f64,
    pub dcy: f64,
    pub dl1: f64,
    pub dl2: f64,
    pub dl3: f64,
}

impl DeltaVector {
    pub fn to_array(&self) -> [f64; 5] {
        [self.dcx, self.dcy, self.dl1, self.dl2, self.dl3]
    }
}

const L_NAMES: [&str; 3] = ["l1", "l2", "l3"];

fn check_positive_l(l: &Lgbb) -> Result<()> {
    for (name, &value) in L_NAMES.iter().zip(&l.l) {
        if !(value > 0.0) {
            return Err(Error::NonPositiveEntry { name, value });
        }
    }
    Ok(())
}

/// Prediction-minus-target deltas. The anchor offsets of the center terms
/// and the anchor ratios of the log terms cancel, leaving
/// `(p − t) / extent` and `log(l_p / l_t)`.
pub fn encode_deltas(pred: &Lgbb, target: &Lgbb, anchor: &AnchorBox) -> Result<DeltaVector> {
    check_positive_l(pred)?;
    check_positive_l(target)?;
    Ok(DeltaVector {
        dcx: (pred.mu[0] - target.mu[0]) / anchor.x_extent(),
        dcy: (pred.mu[1] - target.mu[1]) / anchor.y_extent(),
        dl1: (pred.l[0] / target.l[0]).ln(),
        dl2: (pred.l[1] / target.l[1]).ln(),
        dl3: (pred.l[2] / target.l[2]).ln(),
    })
}

pub fn smooth_l1(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

/// Derivative of [`smooth_l1`]; continuous, bounded by 1 in magnitude.
pub fn smooth_l1_grad(d: f64) -> f64 {
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

/// Uniformly weighted Smooth L1 summed over the five delta components.
pub fn smooth_l1_sum(d: &DeltaVector) -> f64 {
    d.to_array().iter().map(|&x| smooth_l1(x)).sum()
}

/// Trade-off between the Smooth L1 term and the positive-definite penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { gamma1: DEFAULT_GAMMA1, gamma2: DEFAULT_GAMMA2 }
    }
}

fn pd_argument(l: &Lgbb) -> f64 {
    let [l1, l2, l3] = l.l;
    l2 * (2.0 * l1 - l2) - (l3 - l1).powi(2)
}

/// `γ1 · SmoothL1(Δ) − γ2 · min{l2(2l1−l2) − (l3−l1)², 0}` evaluated on the
/// prediction.
pub fn lgbb_loss(pred: &Lgbb, target: &Lgbb, anchor: &AnchorBox, weights: LossWeights) -> Result<f64> {
    if weights.gamma1 < 0.0 || weights.gamma2 < 0.0 {
        return Err(Error::config("gamma", "loss weights must be non-negative"));
    }
    let d = encode_deltas(pred, target, anchor)?;
    Ok(weights.gamma1 * smooth_l1_sum(&d) - weights.gamma2 * pd_argument(pred).min(0.0))
}

fn check_pair(p: &Gbb, q: &Gbb) -> Result<()> {
    p.check_positive_definite()?;
    q.check_positive_definite()
}

/// `KL(N_p ‖ N_q)` in closed form.
pub fn kld_loss(p: &Gbb, q: &Gbb) -> Result<f64> {
    check_pair(p, q)?;
    Ok(kld_unchecked(p, q))
}

fn kld_unchecked(p: &Gbb, q: &Gbb) -> f64 {
    if p == q {
        return 0.0;
    }
    let [a, b, c] = q.inverse();
    let [p1, p2, p3] = p.g;
    let trace = a * p1 + 2.0 * b * p2 + c * p3;
    let dx = q.mu[0] - p.mu[0];
    let dy = q.mu[1] - p.mu[1];
    let maha = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
    (0.5 * (trace + maha - 2.0 + (q.det() / p.det()).ln())).max(0.0)
}

/// Bhattacharyya distance `D_B` between two Gaussians.
fn bhattacharyya(p: &Gbb, q: &Gbb) -> f64 {
    if p == q {
        return 0.0;
    }
    let mean = Gbb::new([0.0, 0.0], [
        0.5 * (p.g[0] + q.g[0]),
        0.5 * (p.g[1] + q.g[1]),
        0.5 * (p.g[2] + q.g[2]),
    ]);
    let [a, b, c] = mean.inverse();
    let dx = p.mu[0] - q.mu[0];
    let dy = p.mu[1] - q.mu[1];
    let maha = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
    (0.125 * maha + 0.5 * (mean.det() / (p.det() * q.det()).sqrt()).ln()).max(0.0)
}

/// Hellinger distance `sqrt(1 − BC)` with `BC = exp(−D_B)`; lies in `[0, 1]`.
pub fn hellinger_loss(p: &Gbb, q: &Gbb) -> Result<f64> {
    check_pair(p, q)?;
    Ok(hellinger_unchecked(p, q))
}

fn hellinger_unchecked(p: &Gbb, q: &Gbb) -> f64 {
    // 1 − e^{−D} without cancellation
    (-(-bhattacharyya(p, q)).exp_m1()).clamp(0.0, 1.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Kld,
    Hellinger,
    LgbbSmoothL1,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Kld, LossKind::Hellinger, LossKind::LgbbSmoothL1];

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Kld => "kld",
            LossKind::Hellinger => "hellinger",
            LossKind::LgbbSmoothL1 => "lgbb_smooth_l1",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kld" => Ok(LossKind::Kld),
            "hellinger" => Ok(LossKind::Hellinger),
            "lgbb" | "lgbb_smooth_l1" => Ok(LossKind::LgbbSmoothL1),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

/// A loss evaluated at a prediction, with the target (and anchor) held fixed.
/// The free parameters are the prediction's `(g1, g2, g3)` for the Gaussian
/// distances and its `(l1, l2, l3)` for the LGBB loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossPoint {
    Kld { pred: Gbb, target: Gbb },
    Hellinger { pred: Gbb, target: Gbb },
    Lgbb { pred: Lgbb, target: Lgbb, anchor: AnchorBox, weights: LossWeights },
}

/// Gradient with respect to the three covariance-like parameters.
/// `at_kink` marks a non-differentiable point where a one-sided value
/// (or, at a cone minimum, the zero subgradient) is returned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gradient {
    pub values: [f64; 3],
    pub at_kink: bool,
}

impl Gradient {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `∂/∂Σ` of a scalar loss (symmetric 2×2 as `[m11, m12, m22]`) to
/// `∂/∂(g1, g2, g3)`; g2 occupies both off-diagonal slots.
fn sym_to_params(m: [f64; 3]) -> [f64; 3] {
    [m[0], 2.0 * m[1], m[2]]
}

impl LossPoint {
    pub fn kind(&self) -> LossKind {
        match self {
            LossPoint::Kld { .. } => LossKind::Kld,
            LossPoint::Hellinger { .. } => LossKind::Hellinger,
            LossPoint::Lgbb { .. } => LossKind::LgbbSmoothL1,
        }
    }

    pub fn params(&self) -> [f64; 3] {
        match self {
            LossPoint::Kld { pred, .. } | LossPoint::Hellinger { pred, .. } => pred.g,
            LossPoint::Lgbb { pred, .. } => pred.l,
        }
    }

    pub fn with_params(&self, params: [f64; 3]) -> LossPoint {
        let mut out = *self;
        match &mut out {
            LossPoint::Kld { pred, .. } | LossPoint::Hellinger { pred, .. } => pred.g = params,
            LossPoint::Lgbb { pred, .. } => pred.l = params,
        }
        out
    }

    pub fn value(&self) -> Result<f64> {
        match self {
            LossPoint::Kld { pred, target } => kld_loss(pred, target),
            LossPoint::Hellinger { pred, target } => hellinger_loss(pred, target),
            LossPoint::Lgbb { pred, target, anchor, weights } => lgbb_loss(pred, target, anchor, *weights),
        }
    }

    /// Analytic gradient of [`LossPoint::value`] with respect to [`LossPoint::params`].
    pub fn grad(&self) -> Result<Gradient> {
        match self {
            LossPoint::Kld { pred, target } => {
                check_pair(pred, target)?;
                // ∂KL/∂Σp = ½ (Σq⁻¹ − Σp⁻¹)
                let qi = target.inverse();
                let pi = pred.inverse();
                let m = [0.5 * (qi[0] - pi[0]), 0.5 * (qi[1] - pi[1]), 0.5 * (qi[2] - pi[2])];
                Ok(Gradient { values: sym_to_params(m), at_kink: false })
            }
            LossPoint::Hellinger { pred, target } => {
                check_pair(pred, target)?;
                let h = hellinger_unchecked(pred, target);
                if h == 0.0 {
                    return Ok(Gradient { values: [0.0; 3], at_kink: true });
                }
                let mean = Gbb::new([0.0, 0.0], [
                    0.5 * (pred.g[0] + target.g[0]),
                    0.5 * (pred.g[1] + target.g[1]),
                    0.5 * (pred.g[2] + target.g[2]),
                ]);
                let [a, b, c] = mean.inverse();
                let pi = pred.inverse();
                let dx = pred.mu[0] - target.mu[0];
                let dy = pred.mu[1] - target.mu[1];
                // v = Σ⁻¹ δ
                let v = [a * dx + b * dy, b * dx + c * dy];
                // ∂D/∂Σp = −(1/16) v vᵀ + ¼ Σ⁻¹ − ¼ Σp⁻¹
                let dd = [
                    -v[0] * v[0] / 16.0 + 0.25 * a - 0.25 * pi[0],
                    -v[0] * v[1] / 16.0 + 0.25 * b - 0.25 * pi[1],
                    -v[1] * v[1] / 16.0 + 0.25 * c - 0.25 * pi[2],
                ];
                // H = sqrt(1 − e^{−D}) ⇒ ∂H/∂D = e^{−D} / (2H)
                let bc = 1.0 - h * h;
                let f = bc / (2.0 * h);
                let g = sym_to_params(dd);
                Ok(Gradient { values: [f * g[0], f * g[1], f * g[2]], at_kink: false })
            }
            LossPoint::Lgbb { pred, target, anchor, weights } => {
                let d = encode_deltas(pred, target, anchor)?;
                let [l1, l2, l3] = pred.l;
                let mut g = [
                    weights.gamma1 * smooth_l1_grad(d.dl1) / l1,
                    weights.gamma1 * smooth_l1_grad(d.dl2) / l2,
                    weights.gamma1 * smooth_l1_grad(d.dl3) / l3,
                ];
                let f = pd_argument(pred);
                // right-hand derivative at f = 0 is that of the inactive branch
                if f < 0.0 {
                    let df = [2.0 * l2 + 2.0 * (l3 - l1), 2.0 * l1 - 2.0 * l2, -2.0 * (l3 - l1)];
                    for (gi, dfi) in g.iter_mut().zip(df) {
                        *gi -= weights.gamma2 * dfi;
                    }
                }
                Ok(Gradient { values: g, at_kink: f == 0.0 })
            }
        }
    }
}

/// `∂L/∂Δ` of the LGBB loss in delta space: `γ1 · SmoothL1'(Δ_i)`.
pub fn delta_grad(pred: &Lgbb, target: &Lgbb, anchor: &AnchorBox, weights: LossWeights) -> Result<[f64; 5]> {
    let d = encode_deltas(pred, target, anchor)?;
    Ok(d.to_array().map(|x| weights.gamma1 * smooth_l1_grad(x)))
}

/// One row of the gradient-magnitude-versus-size profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub size: f64,
    pub loss_kind: LossKind,
    pub mean_abs_grad: f64,
    pub p95_abs_grad: f64,
}

/// Relative perturbation applied to a target box to produce a prediction.
/// Every quantity is scale-free so the same draw serves all sizes.
#[derive(Debug, Clone, Copy)]
struct Perturbation {
    size_jitter: f64,
    aspect: f64,
    theta: f64,
    dcx: f64,
    dcy: f64,
    dw: f64,
    dh: f64,
    dtheta: f64,
}

impl Perturbation {
    fn sample(rng: &mut impl Rng) -> Self {
        Self {
            size_jitter: rng.random_range(0.9..1.1),
            aspect: rng.random_range(1.5..3.0),
            theta: rng.random_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2),
            dcx: rng.random_range(-0.1..0.1),
            dcy: rng.random_range(-0.1..0.1),
            dw: rng.random_range(-0.1..0.1),
            dh: rng.random_range(-0.1..0.1),
            dtheta: rng.random_range(-0.1..0.1),
        }
    }

    fn boxes(&self, size: f64) -> (ObbLe, ObbLe) {
        let w = size * self.size_jitter;
        let h = w / self.aspect;
        let target = ObbLe::new(0.0, 0.0, w, h, self.theta).expect("valid target");
        let pred = ObbLe::new(
            self.dcx * w,
            self.dcy * w,
            w * (1.0 + self.dw),
            h * (1.0 + self.dh),
            self.theta + self.dtheta,
        )
        .expect("valid prediction");
        (pred, target)
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[rank.min(sorted.len() - 1)]
}

/// Mean and 95th percentile of gradient magnitudes for boxes of each size.
///
/// Gaussian-distance losses report `|∂L/∂g_i|`; the LGBB loss reports
/// `|∂L/∂Δ_i|`. Perturbations are paired across sizes.
pub fn gradient_size_profile(
    kinds: &[LossKind],
    sizes: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<ProfileRow>> {
    if let Some(bad) = sizes.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::config("sizes", format!("sizes must be positive, got {bad}")));
    }
    if samples == 0 {
        return Err(Error::config("samples", "at least one sample is required"));
    }
    let stream = SeedStream::new(seed);
    let perturbations: Vec<Perturbation> = (0..samples)
        .map(|i| Perturbation::sample(&mut stream.fork(i as u64)))
        .collect();
    let weights = LossWeights::default();

    let rows: Result<Vec<Vec<ProfileRow>>> = sizes
        .par_iter()
        .map(|&size| {
            kinds
                .iter()
                .map(|&kind| {
                    let mut mags = Vec::with_capacity(samples * 5);
                    for p in &perturbations {
                        let (pred, target) = p.boxes(size);
                        match kind {
                            LossKind::Kld | LossKind::Hellinger => {
                                let (gp, gt) = (obb_to_gbb(&pred), obb_to_gbb(&target));
                                let point = if kind == LossKind::Kld {
                                    LossPoint::Kld { pred: gp, target: gt }
                                } else {
                                    LossPoint::Hellinger { pred: gp, target: gt }
                                };
                                mags.extend(point.grad()?.values.iter().map(|v| v.abs()));
                            }
                            LossKind::LgbbSmoothL1 => {
                                let anchor = AnchorBox::new(target);
                                let dg = delta_grad(&obb_to_lgbb(&pred), &obb_to_lgbb(&target), &anchor, weights)?;
                                mags.extend(dg.iter().map(|v| v.abs()));
                            }
                        }
                    }
                    let mean = mags.iter().sum::<f64>() / mags.len() as f64;
                    mags.sort_by(f64::total_cmp);
                    Ok(ProfileRow { size, loss_kind: kind, mean_abs_grad: mean, p95_abs_grad: percentile(&mags, 0.95) })
                })
                .collect()
        })
        .collect();
    Ok(rows?.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{gbb_to_lgbb, pd_constraint};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bx(cx: f64, cy: f64, w: f64, h: f64, t: f64) -> ObbLe {
        ObbLe::new(cx, cy, w, h, t).unwrap()
    }

    #[test]
    fn delta_examples() {
        let anchor = AnchorBox::new(bx(0.0, 0.0, 4.0, 2.0, 0.0));
        assert_eq!((anchor.x_extent(), anchor.y_extent()), (4.0, 2.0));
        let t = obb_to_lgbb(&bx(1.0, 2.0, 5.0, 3.0, 0.2));
        let d = encode_deltas(&t, &t, &anchor).unwrap();
        assert_eq!(d.to_array(), [0.0; 5]);
        let e = std::f64::consts::E;
        let p = Lgbb::new([5.0, 4.0], [t.l[0] * e, t.l[1] * e, t.l[2] * e]);
        let d = encode_deltas(&p, &t, &anchor).unwrap();
        assert_eq!(d.dcx, 1.0);
        assert_eq!(d.dcy, 1.0);
        for x in [d.dl1, d.dl2, d.dl3] {
            assert!((x - 1.0).abs() < 1e-15);
        }
        let bad = Lgbb::new([0.0, 0.0], [1.0, -2.0, 1.0]);
        assert!(matches!(
            encode_deltas(&bad, &t, &anchor),
            Err(Error::NonPositiveEntry { name: "l2", .. })
        ));
    }

    #[test]
    fn log_deltas_are_scale_invariant() {
        let (p, t) = (bx(1.0, 1.0, 6.0, 2.5, 0.3), bx(0.0, 0.5, 5.0, 2.0, 0.1));
        let (p2, t2) = (bx(2.0, 2.0, 12.0, 5.0, 0.3), bx(0.0, 1.0, 10.0, 4.0, 0.1));
        let d = encode_deltas(&obb_to_lgbb(&p), &obb_to_lgbb(&t), &AnchorBox::new(t)).unwrap();
        let d2 = encode_deltas(&obb_to_lgbb(&p2), &obb_to_lgbb(&t2), &AnchorBox::new(t2)).unwrap();
        for (a, b) in d.to_array().iter().zip(d2.to_array()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(0.0), 0.0);
        assert_eq!(smooth_l1(0.5), 0.125);
        assert_eq!(smooth_l1(3.0), 2.5);
        assert_eq!(smooth_l1(-3.0), 2.5);
        assert_eq!(smooth_l1_grad(1.0), 1.0);
        assert_eq!(smooth_l1_grad(-0.25), -0.25);
    }

    #[test]
    fn lgbb_loss_examples() {
        let t = obb_to_lgbb(&bx(0.0, 0.0, 6.0, 2.0, 0.4));
        let anchor = AnchorBox::new(bx(0.0, 0.0, 6.0, 2.0, 0.4));
        assert_eq!(lgbb_loss(&t, &t, &anchor, LossWeights::default()).unwrap(), 0.0);

        let bad = Lgbb::new([0.0, 0.0], [1.0, 3.0, 1.0]);
        assert!(pd_constraint(&bad) < 0.0);
        let with = lgbb_loss(&bad, &t, &anchor, LossWeights::default()).unwrap();
        let without = lgbb_loss(&bad, &t, &anchor, LossWeights { gamma2: 0.0, ..Default::default() }).unwrap();
        assert!(with > without);

        let p = obb_to_lgbb(&bx(0.5, -0.2, 7.0, 2.5, 0.3));
        let pure = lgbb_loss(&p, &t, &anchor, LossWeights { gamma1: 1.0, gamma2: 0.0 }).unwrap();
        let d = encode_deltas(&p, &t, &anchor).unwrap();
        assert_eq!(pure, smooth_l1_sum(&d));
        assert!(lgbb_loss(&p, &t, &anchor, LossWeights { gamma1: -1.0, gamma2: 0.0 }).is_err());
    }

    #[test]
    fn gaussian_distance_examples() {
        let p = obb_to_gbb(&bx(0.0, 0.0, 6.0, 2.0, 0.4));
        let q = obb_to_gbb(&bx(1.0, -0.5, 5.0, 3.0, -0.2));
        assert_eq!(kld_loss(&p, &p).unwrap(), 0.0);
        assert_eq!(hellinger_loss(&p, &p).unwrap(), 0.0);
        assert!((kld_loss(&p, &q).unwrap() - kld_loss(&q, &p).unwrap()).abs() > 1e-3);
        assert!((hellinger_loss(&p, &q).unwrap() - hellinger_loss(&q, &p).unwrap()).abs() < 1e-12);
        let far = obb_to_gbb(&bx(1000.0, 0.0, 6.0, 2.0, 0.4));
        assert!(hellinger_loss(&p, &far).unwrap() > 0.999999);
        let non_pd = Gbb::new([0.0, 0.0], [1.0, 2.0, 1.0]);
        assert!(kld_loss(&p, &non_pd).is_err());
        assert!(hellinger_loss(&non_pd, &p).is_err());
    }

    #[test]
    fn gradient_vanishes_at_minimum() {
        let b = bx(3.0, 1.0, 8.0, 3.0, 0.7);
        let (g, l) = (obb_to_gbb(&b), obb_to_lgbb(&b));
        let points = [
            LossPoint::Kld { pred: g, target: g },
            LossPoint::Hellinger { pred: g, target: g },
            LossPoint::Lgbb { pred: l, target: l, anchor: AnchorBox::new(b), weights: LossWeights::default() },
        ];
        for p in points {
            assert!(p.grad().unwrap().norm() < 1e-8, "{:?}", p.kind());
        }
        // the Hellinger minimum is a cone: zero subgradient, flagged
        assert!(points[1].grad().unwrap().at_kink);
    }

    #[test]
    fn pd_switch_is_flagged() {
        // f = l2(2l1 − l2) − (l3 − l1)² = 1·(2·1 − 1) − 1 = 0
        let pred = Lgbb::new([0.0, 0.0], [1.0, 1.0, 2.0]);
        let t = obb_to_lgbb(&bx(0.0, 0.0, 4.0, 2.0, 0.1));
        let p = LossPoint::Lgbb { pred, target: t, anchor: AnchorBox::new(bx(0.0, 0.0, 4.0, 2.0, 0.1)), weights: LossWeights::default() };
        let g = p.grad().unwrap();
        assert!(g.at_kink);
        // right-hand derivative excludes the penalty branch
        let d = encode_deltas(&pred, &t, &AnchorBox::new(bx(0.0, 0.0, 4.0, 2.0, 0.1))).unwrap();
        assert_eq!(g.values[2], 0.8 * smooth_l1_grad(d.dl3) / 2.0);
    }

    #[test]
    fn delta_gradient_bounded_by_gamma1() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..2000 {
            let t = bx(0.0, 0.0, rng.random_range(1.0..50.0), rng.random_range(1.0..50.0), rng.random_range(-2.0..2.0));
            let p = bx(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(1.0..50.0), rng.random_range(1.0..50.0), rng.random_range(-2.0..2.0));
            let g = delta_grad(&obb_to_lgbb(&p), &obb_to_lgbb(&t), &AnchorBox::new(t), LossWeights::default()).unwrap();
            assert!(g.iter().all(|v| v.abs() <= DEFAULT_GAMMA1));
        }
    }

    #[test]
    fn zero_loss_implies_coincidence() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let t = bx(0.0, 0.0, 6.0, 3.0, 0.2);
        let gt = obb_to_gbb(&t);
        for _ in 0..5000 {
            let p = bx(rng.random_range(-1.0..1.0) * 1e-3, rng.random_range(-1.0..1.0) * 1e-3, 6.0 + rng.random_range(-1e-3..1e-3), 3.0 + rng.random_range(-1e-3..1e-3), 0.2 + rng.random_range(-1e-3..1e-3));
            let gp = obb_to_gbb(&p);
            let dist = (gp.mu[0] - gt.mu[0]).hypot(gp.mu[1] - gt.mu[1])
                + gp.g.iter().zip(gt.g).map(|(a, b)| (a - b).abs()).sum::<f64>();
            for v in [kld_loss(&gp, &gt).unwrap(), hellinger_loss(&gp, &gt).unwrap()] {
                if v == 0.0 {
                    assert!(dist < 1e-6);
                }
                assert!(v >= 0.0);
            }
        }
    }

    #[test]
    fn profile_shapes_and_determinism() {
        let rows = gradient_size_profile(&LossKind::ALL, &[1.0, 10.0, 100.0], 64, 3).unwrap();
        assert_eq!(rows.len(), 9);
        assert_eq!(rows[0].size, 1.0);
        assert_eq!(rows[0].loss_kind, LossKind::Kld);
        assert_eq!(rows[8].loss_kind, LossKind::LgbbSmoothL1);
        assert_eq!(rows, gradient_size_profile(&LossKind::ALL, &[1.0, 10.0, 100.0], 64, 3).unwrap());
        assert!(gradient_size_profile(&LossKind::ALL, &[0.0], 4, 3).is_err());
        let g = rows.iter().find(|r| r.size == 1.0 && r.loss_kind == LossKind::Kld).unwrap();
        let g100 = rows.iter().find(|r| r.size == 100.0 && r.loss_kind == LossKind::Kld).unwrap();
        assert!(g.mean_abs_grad / g100.mean_abs_grad >= 10.0);
    }

    #[test]
    fn lgbb_of_gbb_is_linear() {
        let a = Gbb::new([1.0, 2.0], [3.0, -0.5, 2.0]);
        let b = Gbb::new([1.0, 2.0], [1.5, 0.25, 4.0]);
        let (al, be) = (0.375, -1.25);
        let mix = Gbb::new([1.0, 2.0], [0, 1, 2].map(|i| al * a.g[i] + be * b.g[i]));
        let lhs = gbb_to_lgbb(&mix).l;
        let (la, lb) = (gbb_to_lgbb(&a).l, gbb_to_lgbb(&b).l);
        for i in 0..3 {
            assert_eq!(lhs[i], al * la[i] + be * lb[i]);
        }
    }
}
