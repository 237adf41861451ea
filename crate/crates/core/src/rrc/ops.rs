use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::Serialize;

use super::RrcConfig;
use crate::error::{Error, Result};
use crate::tensor::{conv2d, gap, norm_act, sample_plane, sigmoid, FeatureMap, Padding};

/// Per-group rotation angles and their matrices.
///
/// A matrix acts on image offsets `(dx, dy)` (y pointing down) and turns
/// content counterclockwise as seen on screen.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RotationPlan {
    angles: Vec<f64>,
    matrices: Vec<[[f64; 2]; 2]>,
}

impl RotationPlan {
    pub fn new(angles: Vec<f64>) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::Tensor("rotation plan needs at least one group".into()));
        }
        if let Some(a) = angles.iter().find(|a| !a.is_finite()) {
            return Err(Error::Tensor(format!("non-finite rotation angle {a}")));
        }
        let matrices = angles
            .iter()
            .map(|&a| {
                let (s, c) = a.sin_cos();
                [[c, s], [-s, c]]
            })
            .collect();
        Ok(Self { angles, matrices })
    }

    /// Every group at the same angle.
    pub fn uniform(groups: usize, angle: f64) -> Result<Self> {
        Self::new(vec![angle; groups])
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn matrices(&self) -> &[[[f64; 2]; 2]] {
        &self.matrices
    }

    pub fn groups(&self) -> usize {
        self.angles.len()
    }

    fn forward(&self, g: usize, dx: f64, dy: f64) -> (f64, f64) {
        let m = &self.matrices[g];
        (m[0][0] * dx + m[0][1] * dy, m[1][0] * dx + m[1][1] * dy)
    }

    fn backward(&self, g: usize, dx: f64, dy: f64) -> (f64, f64) {
        let m = &self.matrices[g];
        (m[0][0] * dx + m[1][0] * dy, m[0][1] * dx + m[1][1] * dy)
    }
}

/// Side of the square canvas that holds every rotation of an `h × w` map.
pub fn canvas_side(h: usize, w: usize) -> usize {
    let d = ((h * h + w * w) as f64).sqrt().ceil() as usize;
    // guard against sqrt rounding just below an exact square
    if d * d < h * h + w * w {
        d + 1
    } else {
        d
    }
}

/// Placement of an `h × w` source on its canvas.
///
/// The source sits at an integer offset so that a zero rotation is an exact
/// copy; rotations turn about the source's own center.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CanvasGeometry {
    pub h: usize,
    pub w: usize,
    pub side: usize,
    pub offset_y: usize,
    pub offset_x: usize,
}

impl CanvasGeometry {
    pub fn new(h: usize, w: usize) -> Self {
        let side = canvas_side(h, w);
        Self { h, w, side, offset_y: (side - h) / 2, offset_x: (side - w) / 2 }
    }

    /// Rotation center `(row, col)` in source coordinates.
    pub fn source_center(&self) -> (f64, f64) {
        ((self.h as f64 - 1.0) / 2.0, (self.w as f64 - 1.0) / 2.0)
    }

    /// Rotation center `(row, col)` in canvas coordinates.
    pub fn canvas_center(&self) -> (f64, f64) {
        let (cy, cx) = self.source_center();
        (self.offset_y as f64 + cy, self.offset_x as f64 + cx)
    }
}

fn check_groups(channels: usize, plan: &RotationPlan) -> Result<usize> {
    if channels % plan.groups() != 0 {
        return Err(Error::Shape { axis: "channel", expected: plan.groups(), found: channels });
    }
    Ok(channels / plan.groups())
}

/// Pulls one rotated canvas plane from a source plane.
fn warp_to_canvas(src: &[f32], geo: &CanvasGeometry, plan: &RotationPlan, g: usize, dst: &mut [f32]) {
    let (sy, sx) = geo.source_center();
    let (cy, cx) = geo.canvas_center();
    for y in 0..geo.side {
        for x in 0..geo.side {
            let (dx, dy) = plan.backward(g, x as f64 - cx, y as f64 - cy);
            dst[y * geo.side + x] = sample_plane(src, geo.h, geo.w, sy + dy, sx + dx) as f32;
        }
    }
}

/// Rotates each group of channels by its plan angle onto the canvas.
/// Canvas pixels whose pre-image falls off the source are 0.
pub fn rotate_groups(fh: &FeatureMap, plan: &RotationPlan) -> Result<FeatureMap> {
    let [nb, nc, h, w] = fh.dims();
    let per_group = check_groups(nc, plan)?;
    let geo = CanvasGeometry::new(h, w);
    let mut out = FeatureMap::zeros([nb, nc, geo.side, geo.side]);
    out.planes_mut().enumerate().for_each(|(idx, dst)| {
        let (n, c) = (idx / nc, idx % nc);
        warp_to_canvas(fh.plane(n, c), &geo, plan, c / per_group, dst);
    });
    Ok(out)
}

/// Maps canvas features back to the `h × w` source grid: each source pixel
/// samples the canvas at its forward-rotated position.
pub fn inverse_map(fe: &FeatureMap, plan: &RotationPlan, source_hw: (usize, usize)) -> Result<FeatureMap> {
    let [nb, nc, ch, cw] = fe.dims();
    let per_group = check_groups(nc, plan)?;
    let (h, w) = source_hw;
    let geo = CanvasGeometry::new(h, w);
    if ch != geo.side {
        return Err(Error::Shape { axis: "height", expected: geo.side, found: ch });
    }
    if cw != geo.side {
        return Err(Error::Shape { axis: "width", expected: geo.side, found: cw });
    }
    let (sy, sx) = geo.source_center();
    let (cy, cx) = geo.canvas_center();
    let mut out = FeatureMap::zeros([nb, nc, h, w]);
    out.planes_mut().enumerate().for_each(|(idx, dst)| {
        let (n, c) = (idx / nc, idx % nc);
        let g = c / per_group;
        let src = fe.plane(n, c);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = plan.forward(g, x as f64 - sx, y as f64 - sy);
                dst[y * w + x] = sample_plane(src, geo.side, geo.side, cy + dy, cx + dx) as f32;
            }
        }
    });
    Ok(out)
}

/// 1×1 reduction from C to K channels.
pub fn channel_reduce(x: &FeatureMap, cfg: &RrcConfig) -> Result<FeatureMap> {
    conv2d(x, &cfg.weights.reduce, Padding::Same)
}

/// Angle generation: 3×3 conv, global average pool, sigmoid, then the mean
/// over each group's channels scaled to `(0, 2π)`. Expects a single batch
/// item.
pub fn agm(fh: &FeatureMap, cfg: &RrcConfig) -> Result<RotationPlan> {
    if fh.batch() != 1 {
        return Err(Error::Shape { axis: "batch", expected: 1, found: fh.batch() });
    }
    let pooled = gap(&conv2d(fh, &cfg.weights.agm, Padding::Same)?)?;
    let n = cfg.group_channels();
    let angles = pooled
        .chunks(n)
        .map(|chunk| TAU * chunk.iter().map(|&v| sigmoid(v)).sum::<f64>() / n as f64)
        .collect();
    RotationPlan::new(angles)
}

/// Normalized source coordinate grids, one canvas plane per group, rotated
/// with the plan. Columns map to `[-1, 1]` in X, rows in Y.
pub fn position_grids(plan: &RotationPlan, source_hw: (usize, usize)) -> Result<(FeatureMap, FeatureMap)> {
    let (h, w) = source_hw;
    let norm = |i: usize, n: usize| if n > 1 { 2.0 * i as f32 / (n - 1) as f32 - 1.0 } else { 0.0 };
    let m = plan.groups();
    let xs = FeatureMap::from_fn([1, m, h, w], |_, _, _, x| norm(x, w))?;
    let ys = FeatureMap::from_fn([1, m, h, w], |_, _, y, _| norm(y, h))?;
    Ok((rotate_groups(&xs, plan)?, rotate_groups(&ys, plan)?))
}

/// Applies the shared 1 → N position conv to each group's grid plane.
fn encode_grid(grid: &FeatureMap, cfg: &RrcConfig) -> Result<FeatureMap> {
    let parts = (0..grid.channels())
        .map(|g| conv2d(&grid.slice_channels(g, 1)?, &cfg.weights.pe, Padding::Same))
        .collect::<Result<Vec<_>>>()?;
    FeatureMap::concat_channels(&parts)
}

fn maybe_norm(x: &FeatureMap, cfg: &RrcConfig) -> FeatureMap {
    match cfg.norm {
        Some(p) => norm_act(x, p.scale, p.shift),
        None => x.clone(),
    }
}

fn repeat_batch(x: &FeatureMap, nb: usize) -> Result<FeatureMap> {
    let [_, c, h, w] = x.dims();
    let mut data = Vec::with_capacity(nb * x.data().len());
    for _ in 0..nb {
        data.extend_from_slice(x.data());
    }
    FeatureMap::new([nb, c, h, w], data)
}

/// `F_P = norm(PE(X) + PE(Y)) + F_R`.
pub fn pem_fuse(fr: &FeatureMap, plan: &RotationPlan, source_hw: (usize, usize), cfg: &RrcConfig) -> Result<FeatureMap> {
    if fr.channels() != cfg.reduced_channels() {
        return Err(Error::Shape { axis: "channel", expected: cfg.reduced_channels(), found: fr.channels() });
    }
    if plan.groups() != cfg.groups() {
        return Err(Error::Shape { axis: "groups", expected: cfg.groups(), found: plan.groups() });
    }
    let (gx, gy) = position_grids(plan, source_hw)?;
    if gx.height() != fr.height() || gx.width() != fr.width() {
        return Err(Error::Shape { axis: "height", expected: gx.height(), found: fr.height() });
    }
    let pe = encode_grid(&gx, cfg)?.add(&encode_grid(&gy, cfg)?)?;
    repeat_batch(&maybe_norm(&pe, cfg), fr.batch())?.add(fr)
}

/// Both RFEM stage outputs `(F_G, F_E)`.
pub fn rfem_stages(fp: &FeatureMap, cfg: &RrcConfig) -> Result<(FeatureMap, FeatureMap)> {
    let w = &cfg.weights;
    let s1 = conv2d(fp, &w.gc1, Padding::Same)?
        .add(&conv2d(fp, &w.gc3, Padding::Same)?)?
        .add(&conv2d(fp, &w.gc5, Padding::Same)?)?;
    let fg = maybe_norm(&s1, cfg);
    let s2 = conv2d(&fg, &w.c1, Padding::Same)?
        .add(&conv2d(&conv2d(&fg, &w.c3x1, Padding::Same)?, &w.c1x3, Padding::Same)?)?
        .add(&conv2d(&conv2d(&fg, &w.c5x1, Padding::Same)?, &w.c1x5, Padding::Same)?)?;
    Ok((fg, maybe_norm(&s2, cfg)))
}

/// Grouped multi-scale extraction followed by cross-group aggregation.
pub fn rfem(fp: &FeatureMap, cfg: &RrcConfig) -> Result<FeatureMap> {
    Ok(rfem_stages(fp, cfg)?.1)
}

fn forward_item(x: &FeatureMap, cfg: &RrcConfig) -> Result<FeatureMap> {
    let hw = (x.height(), x.width());
    let fh = channel_reduce(x, cfg)?;
    let plan = agm(&fh, cfg)?;
    let fr = rotate_groups(&fh, &plan)?;
    let fp = pem_fuse(&fr, &plan, hw, cfg)?;
    let fe = rfem(&fp, cfg)?;
    let back = inverse_map(&fe, &plan, hw)?;
    conv2d(&back, &cfg.weights.restore, Padding::Same)?.add(x)
}

/// Full block with skip connection. Batch items are processed independently,
/// each with its own angles and normalization statistics.
pub fn rrc_forward(x: &FeatureMap, cfg: &RrcConfig) -> Result<FeatureMap> {
    let [nb, nc, h, w] = x.dims();
    if nc != cfg.in_channels() {
        return Err(Error::Shape { axis: "channel", expected: cfg.in_channels(), found: nc });
    }
    if h == 0 || w == 0 {
        return Err(Error::Tensor("empty spatial extent".into()));
    }
    let item_len = nc * h * w;
    let outs = (0..nb)
        .into_par_iter()
        .map(|n| {
            let item = FeatureMap::new([1, nc, h, w], x.data()[n * item_len..(n + 1) * item_len].to_vec())?;
            forward_item(&item, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(x.data().len());
    for o in outs {
        data.extend(o.into_data());
    }
    FeatureMap::new([nb, nc, h, w], data)
}
