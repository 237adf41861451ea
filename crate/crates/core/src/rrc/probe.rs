use std::f64::consts::TAU;
use std::io::Write;

use serde::Serialize;

use super::ops::{canvas_side, inverse_map, rfem, rotate_groups, RotationPlan};
use super::RrcConfig;
use crate::error::{Error, Result};
use crate::tensor::{ConvWeights, FeatureMap};

/// Largest kernel of the cross-group stage.
pub const PROBE_KERNEL: usize = 5;
/// Response magnitude counted as part of the receptive field.
pub const RESPONSE_THRESHOLD: f32 = 1e-6;
/// Extra radial slack for bilinear spread, in pixels.
pub const INTERPOLATION_MARGIN: f64 = 1.5;
const SECTORS: usize = 16;

/// Receptive-field mask of one impulse, unioned over rotation angles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RingReport {
    pub radius: usize,
    /// Actual distance of the impulse from the rotation center.
    pub rho: f64,
    pub k: usize,
    pub contained: bool,
    /// Largest distance by which a responding pixel leaves the allowed annulus.
    pub max_violation_px: f64,
    /// Largest `| |p − center| − rho |` over responding pixels.
    pub max_radial_deviation: f64,
    /// Number of the 16 equal angular sectors touched by the mask.
    pub sectors: usize,
    pub pixels: usize,
    #[serde(skip)]
    pub height: usize,
    #[serde(skip)]
    pub width: usize,
    #[serde(skip)]
    pub mask: Vec<bool>,
}

impl RingReport {
    pub fn overlaps(&self, other: &RingReport) -> bool {
        self.mask.iter().zip(&other.mask).any(|(a, b)| *a && *b)
    }
}

/// Weights that isolate the cross-group aggregation: stage 1 passes each
/// channel through unchanged, stage 2 uses kernel magnitudes (so responses
/// cannot cancel), biases are zero and norms are disabled.
fn probe_config(cfg: &RrcConfig) -> Result<RrcConfig> {
    let (k, m) = (cfg.reduced_channels(), cfg.groups());
    let n = k / m;
    let mut probe = cfg.clone();
    probe.norm = None;
    let eye = FeatureMap::from_fn([k, n, 1, 1], |o, i, _, _| if o % n == i { 1.0 } else { 0.0 })?;
    probe.weights.gc1 = ConvWeights::new(eye, vec![0.0; k], m)?;
    probe.weights.gc3 = ConvWeights::zeros(k, k, 3, 3, m)?;
    probe.weights.gc5 = ConvWeights::zeros(k, k, 5, 5, m)?;
    let w = &mut probe.weights;
    for layer in [&mut w.c1, &mut w.c3x1, &mut w.c1x3, &mut w.c5x1, &mut w.c1x5] {
        *layer = layer.map_kernel(f32::abs).without_bias();
    }
    Ok(probe)
}

/// Places an impulse in group 0 at distance `radius` to the right of the
/// center and records which outputs respond when group 0 stays put and every
/// other group is turned by each of `angles`.
pub fn ring_probe(cfg: &RrcConfig, source_hw: (usize, usize), radius: usize, angles: &[f64]) -> Result<RingReport> {
    let (h, w) = source_hw;
    let (k, m) = (cfg.reduced_channels(), cfg.groups());
    if m < 2 {
        return Err(Error::config("M", "ring probe needs at least two rotation groups"));
    }
    if 2 * radius >= h.min(w) {
        return Err(Error::config("radius", format!("must be below min(H, W)/2, got {radius}")));
    }
    if angles.is_empty() {
        return Err(Error::config("angles", "at least one angle is required"));
    }
    let probe = probe_config(cfg)?;
    let (iy, ix) = (h / 2, w / 2 + radius);
    let x = FeatureMap::from_fn([1, k, h, w], |_, c, y, xx| if (c, y, xx) == (0, iy, ix) { 1.0 } else { 0.0 })?;
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let rho = (iy as f64 - cy).hypot(ix as f64 - cx);

    let mut mask = vec![false; h * w];
    for &a in angles {
        let mut group_angles = vec![a; m];
        group_angles[0] = 0.0;
        let plan = RotationPlan::new(group_angles)?;
        let out = inverse_map(&rfem(&rotate_groups(&x, &plan)?, &probe)?, &plan, (h, w))?;
        for c in 0..k {
            for (hit, v) in mask.iter_mut().zip(out.plane(0, c)) {
                *hit |= v.abs() > RESPONSE_THRESHOLD;
            }
        }
    }

    let margin = PROBE_KERNEL as f64 / 2.0 + INTERPOLATION_MARGIN;
    let mut deviation = 0.0f64;
    let mut sectors = [false; SECTORS];
    let mut pixels = 0;
    for (idx, _) in mask.iter().enumerate().filter(|(_, hit)| **hit) {
        let (dy, dx) = ((idx / w) as f64 - cy, (idx % w) as f64 - cx);
        deviation = deviation.max((dx.hypot(dy) - rho).abs());
        let phi = dy.atan2(dx).rem_euclid(TAU);
        sectors[((phi / TAU * SECTORS as f64) as usize).min(SECTORS - 1)] = true;
        pixels += 1;
    }
    let violation = (deviation - margin).max(0.0);
    Ok(RingReport {
        radius,
        rho,
        k: PROBE_KERNEL,
        contained: pixels > 0 && violation == 0.0,
        max_violation_px: violation,
        max_radial_deviation: deviation,
        sectors: sectors.iter().filter(|s| **s).count(),
        pixels,
        height: h,
        width: w,
        mask,
    })
}

/// Binary PGM (P5), responding pixels white.
pub fn write_pgm(report: &RingReport, out: &mut impl Write) -> Result<()> {
    write!(out, "P5\n{} {}\n255\n", report.width, report.height)?;
    let bytes: Vec<u8> = report.mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    out.write_all(&bytes)?;
    Ok(())
}

/// Multiply-accumulate counts of one forward pass over an `h × w` input.
/// A bilinear sample counts as four.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FlopsBreakdown {
    pub reduce: u64,
    pub agm: u64,
    pub rotate: u64,
    pub pe_grids: u64,
    pub pe_conv: u64,
    pub stage1: u64,
    pub stage2: u64,
    pub inverse: u64,
    pub restore: u64,
    pub total: u64,
}

pub fn flops(cfg: &RrcConfig, h: usize, w: usize) -> FlopsBreakdown {
    let (c, k, m) = (cfg.in_channels() as u64, cfg.reduced_channels() as u64, cfg.groups() as u64);
    let hw = (h * w) as u64;
    let s = canvas_side(h, w) as u64;
    let s2 = s * s;
    let wt = &cfg.weights;
    let per_px = |layers: &[&ConvWeights]| layers.iter().map(|l| l.macs_per_pixel()).sum::<u64>();
    let mut f = FlopsBreakdown {
        reduce: wt.reduce.macs_per_pixel() * hw,
        agm: wt.agm.macs_per_pixel() * hw,
        rotate: 4 * k * s2,
        pe_grids: 2 * m * 4 * s2,
        pe_conv: 2 * m * wt.pe.macs_per_pixel() * s2,
        stage1: per_px(&[&wt.gc1, &wt.gc3, &wt.gc5]) * s2,
        stage2: per_px(&[&wt.c1, &wt.c3x1, &wt.c1x3, &wt.c5x1, &wt.c1x5]) * s2,
        inverse: 4 * k * hw,
        restore: wt.restore.macs_per_pixel() * hw,
        total: 0,
    };
    debug_assert_eq!(f.reduce, c * k * hw);
    f.total = f.reduce + f.agm + f.rotate + f.pe_grids + f.pe_conv + f.stage1 + f.stage2 + f.inverse + f.restore;
    f
}
