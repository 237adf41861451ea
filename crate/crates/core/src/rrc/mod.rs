//! Ring-shaped rotated convolution (forward pass only).
//!
//! Channels are reduced, split into rotation groups, rotated by per-group
//! angles predicted from the input onto a canvas large enough to hold any
//! rotation, enriched with rotated position grids, passed through grouped then
//! cross-group multi-scale convolutions, mapped back, restored and added to
//! the input.

mod ops;
mod probe;

pub use ops::{
    agm, canvas_side, channel_reduce, inverse_map, pem_fuse, position_grids, rfem, rfem_stages,
    rotate_groups, rrc_forward, CanvasGeometry, RotationPlan,
};
pub use probe::{flops, ring_probe, write_pgm, FlopsBreakdown, RingReport, PROBE_KERNEL};

use std::io::{Read, Write};

use rand::Rng;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::tensor::{ConvWeights, FeatureMap};

/// Half-width of the uniform weight initializer.
pub const INIT_RANGE: f32 = 0.1;

/// Affine parameters applied after standardization in every norm layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormParams {
    pub scale: f64,
    pub shift: f64,
}

impl Default for NormParams {
    fn default() -> Self {
        Self { scale: 1.0, shift: 0.0 }
    }
}

/// Every convolution of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct RrcWeights {
    /// 1×1, C → K.
    pub reduce: ConvWeights,
    /// 3×3, K → K.
    pub agm: ConvWeights,
    /// 1×1, 1 → N, shared by both position grids and all groups.
    pub pe: ConvWeights,
    /// Grouped (M) 1×1, 3×3, 5×5, K → K.
    pub gc1: ConvWeights,
    pub gc3: ConvWeights,
    pub gc5: ConvWeights,
    /// Ungrouped 1×1 and factorized k×1 → 1×k branches, K → K.
    pub c1: ConvWeights,
    pub c3x1: ConvWeights,
    pub c1x3: ConvWeights,
    pub c5x1: ConvWeights,
    pub c1x5: ConvWeights,
    /// 1×1, K → C.
    pub restore: ConvWeights,
}

/// `(out, in, kh, kw, groups)` for each layer in blob order.
fn layer_shapes(c: usize, k: usize, m: usize) -> [(usize, usize, usize, usize, usize); 12] {
    let n = k / m;
    [
        (k, c, 1, 1, 1),
        (k, k, 3, 3, 1),
        (n, 1, 1, 1, 1),
        (k, k, 1, 1, m),
        (k, k, 3, 3, m),
        (k, k, 5, 5, m),
        (k, k, 1, 1, 1),
        (k, k, 3, 1, 1),
        (k, k, 1, 3, 1),
        (k, k, 5, 1, 1),
        (k, k, 1, 5, 1),
        (c, k, 1, 1, 1),
    ]
}

impl RrcWeights {
    fn from_layers(mut v: Vec<ConvWeights>) -> Self {
        let mut next = || v.remove(0);
        Self {
            reduce: next(),
            agm: next(),
            pe: next(),
            gc1: next(),
            gc3: next(),
            gc5: next(),
            c1: next(),
            c3x1: next(),
            c1x3: next(),
            c5x1: next(),
            c1x5: next(),
            restore: next(),
        }
    }

    pub fn layers(&self) -> [&ConvWeights; 12] {
        [
            &self.reduce,
            &self.agm,
            &self.pe,
            &self.gc1,
            &self.gc3,
            &self.gc5,
            &self.c1,
            &self.c3x1,
            &self.c1x3,
            &self.c5x1,
            &self.c1x5,
            &self.restore,
        ]
    }

    pub fn zeros(c: usize, k: usize, m: usize) -> Result<Self> {
        let layers = layer_shapes(c, k, m)
            .iter()
            .map(|&(o, i, kh, kw, g)| ConvWeights::zeros(o, i, kh, kw, g))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_layers(layers))
    }

    /// Kernels and biases uniform in `[-INIT_RANGE, INIT_RANGE]`, one
    /// sub-stream per layer.
    pub fn seeded(c: usize, k: usize, m: usize, seed: u64) -> Result<Self> {
        let stream = SeedStream::new(seed);
        let layers = layer_shapes(c, k, m)
            .iter()
            .enumerate()
            .map(|(idx, &(o, i, kh, kw, g))| {
                let mut rng = stream.fork(idx as u64);
                let kernel = FeatureMap::from_fn([o, i / g, kh, kw], |_, _, _, _| {
                    rng.random_range(-INIT_RANGE..=INIT_RANGE)
                })?;
                let bias = (0..o).map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE)).collect();
                ConvWeights::new(kernel, bias, g)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_layers(layers))
    }

    /// Serializes as kernel, bias, kernel, bias, ... in the tensor binary
    /// format; a bias is stored with dims `[out, 1, 1, 1]`.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        for layer in self.layers() {
            layer.kernel().write_to(w)?;
            let b = layer.bias();
            FeatureMap::new([b.len(), 1, 1, 1], b.to_vec())?.write_to(w)?;
        }
        Ok(())
    }

    /// Reads a blob written by [`RrcWeights::write_to`], checking every
    /// tensor against the shapes implied by `(c, k, m)`.
    pub fn read_from(r: &mut impl Read, c: usize, k: usize, m: usize) -> Result<Self> {
        let mut layers = Vec::with_capacity(12);
        for (o, i, kh, kw, g) in layer_shapes(c, k, m) {
            let kernel = FeatureMap::read_from(r)?;
            let expected = [o, i / g, kh, kw];
            if kernel.dims() != expected {
                return Err(Error::Decode(format!(
                    "kernel dims {:?} do not match expected {:?}",
                    kernel.dims(),
                    expected
                )));
            }
            let bias = FeatureMap::read_from(r)?;
            if bias.dims() != [o, 1, 1, 1] {
                return Err(Error::Decode(format!("bias dims {:?} do not match [{o}, 1, 1, 1]", bias.dims())));
            }
            layers.push(ConvWeights::new(kernel, bias.into_data(), g)?);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Decode("trailing bytes after weights".into()));
        }
        Ok(Self::from_layers(layers))
    }
}

/// Block configuration: channel counts, weights and normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RrcConfig {
    c: usize,
    k: usize,
    m: usize,
    pub weights: RrcWeights,
    /// `None` disables every norm layer (linear probing).
    pub norm: Option<NormParams>,
}

fn positive_int(v: &Value, field: &str) -> Result<usize> {
    let raw = v
        .get(field)
        .ok_or_else(|| Error::config(field, "missing"))?;
    let n = raw
        .as_u64()
        .ok_or_else(|| Error::config(field, format!("expected a positive integer, got {raw}")))?;
    if n == 0 {
        return Err(Error::config(field, "must be positive"));
    }
    usize::try_from(n).map_err(|_| Error::config(field, "too large"))
}

impl RrcConfig {
    pub fn new(c: usize, k: usize, m: usize, weights: RrcWeights) -> Result<Self> {
        Self::check_dims(c, k, m)?;
        let expected = RrcWeights::zeros(c, k, m)?;
        for (have, want) in weights.layers().iter().zip(expected.layers()) {
            if have.kernel().dims() != want.kernel().dims() || have.groups() != want.groups() {
                return Err(Error::Shape {
                    axis: "weights",
                    expected: want.kernel().data().len(),
                    found: have.kernel().data().len(),
                });
            }
        }
        Ok(Self { c, k, m, weights, norm: Some(NormParams::default()) })
    }

    fn check_dims(c: usize, k: usize, m: usize) -> Result<()> {
        if c == 0 {
            return Err(Error::config("C", "must be positive"));
        }
        if k == 0 {
            return Err(Error::config("K", "must be positive"));
        }
        if m == 0 {
            return Err(Error::config("M", "must be positive"));
        }
        if k % m != 0 {
            return Err(Error::config("M", format!("must divide K = {k}, got {m}")));
        }
        Ok(())
    }

    pub fn seeded(c: usize, k: usize, m: usize, seed: u64) -> Result<Self> {
        Self::check_dims(c, k, m)?;
        Self::new(c, k, m, RrcWeights::seeded(c, k, m, seed)?)
    }

    pub fn zeroed(c: usize, k: usize, m: usize) -> Result<Self> {
        Self::check_dims(c, k, m)?;
        Self::new(c, k, m, RrcWeights::zeros(c, k, m)?)
    }

    /// Parses `{"C": int, "K": int, "M": int, "seed": int}`; `seed`
    /// defaults to 0 and other keys are ignored.
    pub fn from_json(v: &Value) -> Result<Self> {
        if !v.is_object() {
            return Err(Error::config("config", "expected a JSON object"));
        }
        let c = positive_int(v, "C")?;
        let k = positive_int(v, "K")?;
        let m = positive_int(v, "M")?;
        let seed = match v.get("seed") {
            None => 0,
            Some(s) => s
                .as_u64()
                .ok_or_else(|| Error::config("seed", format!("expected a non-negative integer, got {s}")))?,
        };
        Self::seeded(c, k, m, seed)
    }

    pub fn in_channels(&self) -> usize {
        self.c
    }

    pub fn reduced_channels(&self) -> usize {
        self.k
    }

    pub fn groups(&self) -> usize {
        self.m
    }

    /// Channels per rotation group.
    pub fn group_channels(&self) -> usize {
        self.k / self.m
    }
}
