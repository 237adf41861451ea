//! Gradient-descent regression of one predicted box toward a target.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::gaussian::{obb_to_gbb, obb_to_lgbb};
use crate::geometry::{encode, normalize, rotated_iou, ObbLe, RawBox, ReprKind, Unit};
use crate::losses::{hellinger_loss, kld_loss, lgbb_loss, smooth_l1, AnchorBox, LossWeights};
use crate::rng::SeedStream;

/// Largest admissible angle for clamped `xywhθ` predictions.
const THETA_MAX: f64 = FRAC_PI_2 - 1e-9;
/// Sides never shrink below this fraction of the target diagonal.
const MIN_SIDE_FRACTION: f64 = 1e-3;
const FD_REL_STEP: f64 = 1e-4;
const MAX_HALVINGS: usize = 20;

/// Box representation being regressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrialRepr {
    Classical(ReprKind),
    Gbb,
    Lgbb,
}

impl TrialRepr {
    pub const ALL: [TrialRepr; 7] = [
        TrialRepr::Classical(ReprKind::Xywht),
        TrialRepr::Classical(ReprKind::TwoVertexH),
        TrialRepr::Classical(ReprKind::FourVertex),
        TrialRepr::Classical(ReprKind::Polar),
        TrialRepr::Classical(ReprKind::Bbav),
        TrialRepr::Gbb,
        TrialRepr::Lgbb,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TrialRepr::Classical(k) => k.name(),
            TrialRepr::Gbb => "gbb",
            TrialRepr::Lgbb => "lgbb",
        }
    }

    /// Loss paired with this representation unless overridden.
    pub fn default_loss(&self) -> TrialLoss {
        match self {
            TrialRepr::Classical(_) => TrialLoss::SmoothL1,
            TrialRepr::Gbb => TrialLoss::Kld,
            TrialRepr::Lgbb => TrialLoss::Lgbb,
        }
    }
}

impl fmt::Display for TrialRepr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrialRepr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gbb" => Ok(TrialRepr::Gbb),
            "lgbb" => Ok(TrialRepr::Lgbb),
            other => other.parse::<ReprKind>().map(TrialRepr::Classical),
        }
    }
}

impl Serialize for TrialRepr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialLoss {
    SmoothL1,
    Kld,
    Hellinger,
    Lgbb,
}

impl TrialLoss {
    pub fn name(&self) -> &'static str {
        match self {
            TrialLoss::SmoothL1 => "smooth_l1",
            TrialLoss::Kld => "kld",
            TrialLoss::Hellinger => "hellinger",
            TrialLoss::Lgbb => "lgbb",
        }
    }
}

impl FromStr for TrialLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth_l1" => Ok(TrialLoss::SmoothL1),
            "kld" => Ok(TrialLoss::Kld),
            "hellinger" => Ok(TrialLoss::Hellinger),
            "lgbb" => Ok(TrialLoss::Lgbb),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

fn check_pairing(repr: TrialRepr, loss: TrialLoss) -> Result<()> {
    let ok = matches!(
        (repr, loss),
        (TrialRepr::Classical(_), TrialLoss::SmoothL1)
            | (TrialRepr::Gbb, TrialLoss::Kld | TrialLoss::Hellinger)
            | (TrialRepr::Lgbb, TrialLoss::Lgbb)
    );
    if ok {
        Ok(())
    } else {
        Err(Error::config("loss_kind", format!("{} cannot drive {}", loss.name(), repr.name())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub repr_kind: TrialRepr,
    pub loss_kind: TrialLoss,
    pub seed: u64,
    pub init: RawBox,
    pub target: ObbLe,
    pub anchor: ObbLe,
    pub steps: usize,
    pub loss_curve: Vec<f64>,
    pub final_iou: f64,
    pub converged: bool,
}

struct Objective<'a> {
    repr: TrialRepr,
    loss: TrialLoss,
    target: &'a ObbLe,
    anchor: AnchorBox,
    weights: LossWeights,
    min_side: f64,
}

impl Objective<'_> {
    /// Projects raw parameters onto the representation's legal range.
    fn project(&self, p: [f64; 5]) -> [f64; 5] {
        let theta = match self.repr {
            TrialRepr::Classical(ReprKind::Xywht) => p[4].clamp(-FRAC_PI_2, THETA_MAX),
            _ => p[4],
        };
        [p[0], p[1], p[2].max(self.min_side), p[3].max(self.min_side), theta]
    }

    fn as_box(&self, p: &[f64; 5]) -> Result<ObbLe> {
        ObbLe::new(p[0], p[1], p[2].abs(), p[3].abs(), p[4])
    }

    fn value(&self, p: &[f64; 5]) -> Result<f64> {
        let p = self.project(*p);
        let pred = self.as_box(&p)?;
        match (self.repr, self.loss) {
            (TrialRepr::Classical(kind), _) => {
                let t = encode(self.target, kind);
                let pv: Vec<f64> = if kind == ReprKind::Xywht {
                    p.to_vec()
                } else {
                    encode(&pred, kind).values().to_vec()
                };
                let diag = self.target.diagonal();
                let sum: f64 = pv
                    .iter()
                    .zip(t.values())
                    .zip(kind.units())
                    .map(|((a, b), unit)| match unit {
                        Unit::Length => smooth_l1((a - b) / diag),
                        Unit::Angle => smooth_l1(a - b),
                    })
                    .sum();
                Ok(self.weights.gamma1 * sum)
            }
            (TrialRepr::Gbb, TrialLoss::Hellinger) => hellinger_loss(&obb_to_gbb(&pred), &obb_to_gbb(self.target)),
            (TrialRepr::Gbb, _) => kld_loss(&obb_to_gbb(&pred), &obb_to_gbb(self.target)),
            (TrialRepr::Lgbb, _) => lgbb_loss(&obb_to_lgbb(&pred), &obb_to_lgbb(self.target), &self.anchor, self.weights),
        }
    }

    fn gradient(&self, p: &[f64; 5]) -> Result<[f64; 5]> {
        let mut g = [0.0; 5];
        for i in 0..5 {
            let step = FD_REL_STEP * p[i].abs().max(1.0);
            let (mut hi, mut lo) = (*p, *p);
            hi[i] += step;
            lo[i] -= step;
            g[i] = (self.value(&hi)? - self.value(&lo)?) / (2.0 * step);
        }
        Ok(g)
    }
}

/// Loss of `pred` against `target` under the representation's default loss,
/// with the target as anchor.
pub(super) fn loss_at(repr: TrialRepr, pred: &ObbLe, target: &ObbLe, cfg: &ExperimentConfig) -> Result<f64> {
    let obj = Objective {
        repr,
        loss: repr.default_loss(),
        target,
        anchor: AnchorBox::new(*target),
        weights: cfg.weights,
        min_side: MIN_SIDE_FRACTION * target.diagonal(),
    };
    let r = pred.raw();
    obj.value(&[r.cx, r.cy, r.w, r.h, r.theta])
}

/// Runs preconditioned descent from `init` until the rotated IoU with
/// `target` reaches the threshold or the step budget is spent.
///
/// Parameters are the raw `(cx, cy, w, h, θ)`; each update is
/// `lr · s_i² · ∂L/∂p_i` with `s = (d, d, d, d, 1)` for the current diagonal
/// `d`, and `lr` is halved until the loss does not increase. `xywhθ`
/// predictions keep θ clamped to `[-π/2, π/2)`.
pub fn run_trial(
    repr: TrialRepr,
    loss: TrialLoss,
    init: RawBox,
    target: &ObbLe,
    anchor: &ObbLe,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<TrialRecord> {
    check_pairing(repr, loss)?;
    let obj = Objective {
        repr,
        loss,
        target,
        anchor: AnchorBox::new(*anchor),
        weights: cfg.weights,
        min_side: MIN_SIDE_FRACTION * target.diagonal(),
    };
    let mut p = obj.project([init.cx, init.cy, init.w, init.h, init.theta]);
    obj.as_box(&p)?;
    let mut curve = Vec::new();
    let mut converged = false;
    let iou_of = |p: &[f64; 5]| obj.as_box(p).map(|b| rotated_iou(&b, target)).unwrap_or(0.0);

    for _ in 0..cfg.max_steps {
        if iou_of(&p) >= cfg.iou_threshold {
            converged = true;
            break;
        }
        let value = obj.value(&p);
        let grad = obj.gradient(&p);
        let (value, grad) = match (value, grad) {
            (Ok(v), Ok(g)) if v.is_finite() && g.iter().all(|x| x.is_finite()) => (v, g),
            _ => break,
        };
        curve.push(value);
        let diag = p[2].hypot(p[3]);
        let scale = [diag, diag, diag, diag, 1.0];
        // halve the step while it would raise the loss
        let mut lr = cfg.lr;
        let mut next = p;
        for _ in 0..=MAX_HALVINGS {
            for i in 0..5 {
                next[i] = p[i] - lr * scale[i] * scale[i] * grad[i];
            }
            next = obj.project(next);
            if obj.value(&next).is_ok_and(|v| v <= value) {
                break;
            }
            lr *= 0.5;
        }
        p = next;
        if !matches!(repr, TrialRepr::Classical(ReprKind::Xywht)) {
            // continuous representations: return to long-edge form
            if let Ok(b) = obj.as_box(&p) {
                let r = b.raw();
                p = [r.cx, r.cy, r.w, r.h, r.theta];
            }
        }
    }
    let final_iou = iou_of(&p);
    converged |= final_iou >= cfg.iou_threshold;
    Ok(TrialRecord {
        repr_kind: repr,
        loss_kind: loss,
        seed,
        init,
        target: *target,
        anchor: *anchor,
        steps: curve.len(),
        loss_curve: curve,
        final_iou,
        converged,
    })
}

/// Which starting geometry a batch of trials uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    /// Target anywhere; prediction a moderate perturbation of it.
    Random,
    /// Target near −π/2, prediction the mirror angle near +π/2.
    Boundary,
}

impl FromStr for Geometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Geometry::Random),
            "boundary" => Ok(Geometry::Boundary),
            other => Err(Error::config("geometry", format!("expected random or boundary, got {other}"))),
        }
    }
}

/// Random starts are redrawn until their IoU with the target is below this.
pub const RANDOM_START_MAX_IOU: f64 = 0.95;

/// Offset of the initial angle from the boundary in boundary trials.
pub const BOUNDARY_OFFSET: f64 = 0.02;

/// Draws `(init, target)` for trial geometry from `rng`.
pub fn sample_pair(geometry: Geometry, rng: &mut impl Rng) -> (RawBox, ObbLe) {
    let cx = rng.random_range(-50.0..50.0);
    let cy = rng.random_range(-50.0..50.0);
    let w: f64 = rng.random_range(10.0..60.0);
    match geometry {
        Geometry::Random => loop {
            // redraw until the start is not already converged
            let h = w / rng.random_range(1.2..4.0);
            let theta = rng.random_range(-FRAC_PI_2..FRAC_PI_2);
            let target = ObbLe::new(cx, cy, w, h, theta).expect("valid target");
            let d = target.diagonal();
            let init = RawBox::new(
                cx + rng.random_range(-0.15..0.15) * d,
                cy + rng.random_range(-0.15..0.15) * d,
                w * rng.random_range(0.75..1.35),
                h * rng.random_range(0.75..1.35),
                theta + rng.random_range(-0.4..0.4),
            );
            let start = normalize(init).expect("valid init");
            if rotated_iou(&start, &target) < RANDOM_START_MAX_IOU {
                return (init, target);
            }
        },
        Geometry::Boundary => {
            let h = w / rng.random_range(3.0..6.0);
            let theta = FRAC_PI_2 - BOUNDARY_OFFSET;
            let target = ObbLe::new(cx, cy, w, h, -theta).expect("valid target");
            (RawBox::new(cx, cy, w, h, theta), target)
        }
    }
}

/// `cfg.trials` independent trials; trial `i` draws its geometry from
/// sub-stream `i`, so different representations see identical pairs.
pub fn run_trials(repr: TrialRepr, loss: TrialLoss, geometry: Geometry, cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    let stream = SeedStream::new(cfg.seed).child(0x7472);
    (0..cfg.trials)
        .into_par_iter()
        .map(|i| {
            let (init, target) = sample_pair(geometry, &mut stream.fork(i as u64));
            run_trial(repr, loss, init, &target, &target, cfg, i as u64)
        })
        .collect()
}
