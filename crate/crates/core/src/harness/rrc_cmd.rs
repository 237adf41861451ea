use std::f64::consts::TAU;
use std::str::FromStr;

use rand::Rng;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::rrc::{
    flops, inverse_map, ring_probe, rotate_groups, rrc_forward, write_pgm, RotationPlan, RrcConfig, RrcWeights,
};
use crate::tensor::FeatureMap;

/// Interior round-trip bound for smooth inputs.
pub const SMOOTH_ROUNDTRIP_BOUND: f64 = 1e-3;
/// Interior round-trip bound for white-noise inputs.
pub const NOISE_ROUNDTRIP_BOUND: f64 = 5e-2;
/// Shortest wavelength, in pixels, of [`smooth_field`].
pub const SMOOTH_MIN_WAVELENGTH: f64 = 128.0;
/// Pixels excluded at each border when measuring round trips.
const INTERIOR_MARGIN: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RrcProbe {
    Identity,
    Roundtrip,
    Ring,
    Flops,
}

impl FromStr for RrcProbe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(RrcProbe::Identity),
            "roundtrip" => Ok(RrcProbe::Roundtrip),
            "ring" => Ok(RrcProbe::Ring),
            "flops" => Ok(RrcProbe::Flops),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

/// Result of one probe: a JSON report, failed checks, and for the ring
/// probe the PGM mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutcome {
    pub report: Value,
    pub failures: Vec<String>,
    pub pgm: Option<Vec<u8>>,
}

impl ProbeOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Sum of two low-frequency waves per channel, amplitude at most 1 and
/// wavelength four times the longer side but never under
/// [`SMOOTH_MIN_WAVELENGTH`] pixels.
pub fn smooth_field(dims: [usize; 4], seed: u64) -> Result<FeatureMap> {
    let mut rng = SeedStream::new(seed).fork(0x736d);
    let [_, c, h, w] = dims;
    let params: Vec<[f64; 4]> = (0..c)
        .map(|_| {
            [rng.random_range(0.0..TAU), rng.random_range(0.0..TAU), rng.random_range(0.25..0.5), rng.random_range(0.25..0.5)]
        })
        .collect();
    let k = TAU / (4.0 * h.max(w) as f64).max(SMOOTH_MIN_WAVELENGTH);
    FeatureMap::from_fn(dims, |_, ch, y, x| {
        let p = params[ch];
        (p[2] * (k * x as f64 + p[0]).cos() + p[3] * (k * y as f64 + p[1]).sin()) as f32
    })
}

/// Independent uniform values in `[-1, 1]`.
pub fn noise_field(dims: [usize; 4], seed: u64) -> Result<FeatureMap> {
    let mut rng = SeedStream::new(seed).fork(0x6e73);
    FeatureMap::from_fn(dims, |_, _, _, _| rng.random_range(-1.0..=1.0))
}

/// Largest interior error of rotating onto the canvas and mapping back.
pub fn roundtrip_error(x: &FeatureMap, plan: &RotationPlan) -> Result<f64> {
    let [nb, nc, h, w] = x.dims();
    let back = inverse_map(&rotate_groups(x, plan)?, plan, (h, w))?;
    let m = INTERIOR_MARGIN;
    let mut worst = 0.0f64;
    for n in 0..nb {
        for c in 0..nc {
            for y in m..h.saturating_sub(m) {
                for xx in m..w.saturating_sub(m) {
                    worst = worst.max((back.get(n, c, y, xx) - x.get(n, c, y, xx)).abs() as f64);
                }
            }
        }
    }
    Ok(worst)
}

fn field(v: &Value, name: &str, default: usize) -> Result<usize> {
    match v.get(name) {
        None => Ok(default),
        Some(x) => x
            .as_u64()
            .filter(|&n| n > 0)
            .map(|n| n as usize)
            .ok_or_else(|| Error::config(name, format!("expected a positive integer, got {x}"))),
    }
}

fn load_config(v: &Value, seed: u64) -> Result<RrcConfig> {
    let mut with_seed = v.clone();
    if with_seed.get("seed").is_none() {
        if let Some(obj) = with_seed.as_object_mut() {
            obj.insert("seed".into(), json!(seed));
        }
    }
    let mut cfg = RrcConfig::from_json(&with_seed)?;
    if let Some(path) = v.get("weights") {
        let path = path.as_str().ok_or_else(|| Error::config("weights", "expected a file path"))?;
        let bytes = std::fs::read(path)?;
        cfg.weights = RrcWeights::read_from(
            &mut bytes.as_slice(),
            cfg.in_channels(),
            cfg.reduced_channels(),
            cfg.groups(),
        )?;
    }
    Ok(cfg)
}

/// Runs one structural probe configured by `{"C","K","M","seed"}` plus the
/// optional keys `H`, `W` (default 16, or 64 for the ring probe), `radius`
/// (ring, default 16), `angles` (ring, number of evenly spaced turns,
/// default 8) and `weights` (path to a weights blob).
pub fn run_rrc_probe(probe: RrcProbe, v: &Value, seed: u64) -> Result<ProbeOutcome> {
    let cfg = load_config(v, seed)?;
    let default_side = if probe == RrcProbe::Ring { 64 } else { 16 };
    let h = field(v, "H", default_side)?;
    let w = field(v, "W", default_side)?;
    let (c, k, m) = (cfg.in_channels(), cfg.reduced_channels(), cfg.groups());
    let mut failures = Vec::new();
    let stream = SeedStream::new(seed);

    let outcome = match probe {
        RrcProbe::Identity => {
            let zero = RrcConfig::zeroed(c, k, m)?;
            let x = noise_field([1, c, h, w], seed)?;
            let err = rrc_forward(&x, &zero)?.max_abs_diff(&x);
            let zero_turn = roundtrip_error(&x, &RotationPlan::uniform(1, 0.0)?)?;
            if err != 0.0 {
                failures.push(format!("zero-weight block changed the input by {err}"));
            }
            if zero_turn != 0.0 {
                failures.push(format!("zero-angle round trip error {zero_turn}"));
            }
            ProbeOutcome {
                report: json!({"probe": "identity", "max_abs_error": err, "zero_angle_roundtrip_error": zero_turn}),
                failures,
                pgm: None,
            }
        }
        RrcProbe::Roundtrip => {
            let mut rng = stream.fork(0x7274);
            let angles: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..TAU)).collect();
            let plan = RotationPlan::new(angles.clone())?;
            let smooth = roundtrip_error(&smooth_field([1, k, h, w], seed)?, &plan)?;
            let noise = roundtrip_error(&noise_field([1, k, h, w], seed)?, &plan)?;
            if !(smooth < SMOOTH_ROUNDTRIP_BOUND) {
                failures.push(format!("smooth round trip error {smooth} ≥ {SMOOTH_ROUNDTRIP_BOUND}"));
            }
            if !(noise < NOISE_ROUNDTRIP_BOUND) {
                failures.push(format!("white-noise round trip error {noise} ≥ {NOISE_ROUNDTRIP_BOUND}"));
            }
            ProbeOutcome {
                report: json!({
                    "probe": "roundtrip",
                    "angles": angles,
                    "smooth_max_error": smooth,
                    "smooth_bound": SMOOTH_ROUNDTRIP_BOUND,
                    "noise_max_error": noise,
                    "noise_bound": NOISE_ROUNDTRIP_BOUND,
                }),
                failures,
                pgm: None,
            }
        }
        RrcProbe::Ring => {
            let radius = field(v, "radius", 16)?;
            let count = field(v, "angles", 8)?;
            let angles: Vec<f64> = (0..count).map(|i| TAU * i as f64 / count as f64).collect();
            let report = ring_probe(&cfg, (h, w), radius, &angles)?;
            if !report.contained {
                failures.push(format!("mask leaves the annulus by {} px", report.max_violation_px));
            }
            let mut pgm = Vec::new();
            write_pgm(&report, &mut pgm)?;
            ProbeOutcome { report: serde_json::to_value(&report)?, failures, pgm: Some(pgm) }
        }
        RrcProbe::Flops => {
            let f = flops(&cfg, h, w);
            ProbeOutcome {
                report: json!({"probe": "flops", "C": c, "K": k, "M": m, "H": h, "W": w, "macs": f}),
                failures,
                pgm: None,
            }
        }
    };
    Ok(outcome)
}
