//! Dense NCHW feature maps and the handful of kernels the rotated convolution
//! block needs: grouped stride-1 convolution, global average pooling,
//! per-channel normalization with a leaky activation, and zero-padded
//! bilinear sampling.
//!
//! Storage is `f32`; every reduction accumulates in `f64` in a fixed order so
//! results are bit-identical across thread counts.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variance floor used by [`norm_act`].
pub const NORM_EPS: f64 = 1e-5;
/// Negative-side slope of the activation applied by [`norm_act`].
pub const LEAKY_SLOPE: f64 = 0.01;

/// Rank-4 tensor in (batch, channel, height, width) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeatureMapRepr", into = "FeatureMapRepr")]
pub struct FeatureMap {
    dims: [usize; 4],
    data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct FeatureMapRepr {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl TryFrom<FeatureMapRepr> for FeatureMap {
    type Error = Error;

    fn try_from(r: FeatureMapRepr) -> Result<Self> {
        let dims: [usize; 4] = r
            .dims
            .as_slice()
            .try_into()
            .map_err(|_| Error::Tensor(format!("expected 4 dims, found {}", r.dims.len())))?;
        FeatureMap::new(dims, r.data)
    }
}

impl From<FeatureMap> for FeatureMapRepr {
    fn from(f: FeatureMap) -> Self {
        FeatureMapRepr {
            dims: f.dims.to_vec(),
            data: f.data,
        }
    }
}

impl FeatureMap {
    /// Wraps `data`, checking its length against `dims` and rejecting NaN/Inf.
    pub fn new(dims: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let expected = dims.iter().product::<usize>();
        if data.len() != expected {
            return Err(Error::Shape {
                axis: "data",
                expected,
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Tensor(format!("non-finite value at flat index {i}")));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    /// Builds a map by evaluating `f(n, c, y, x)` at every element.
    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Result<Self> {
        let [nb, nc, nh, nw] = dims;
        let mut data = Vec::with_capacity(dims.iter().product());
        for n in 0..nb {
            for c in 0..nc {
                for y in 0..nh {
                    for x in 0..nw {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    fn plane_len(&self) -> usize {
        self.dims[2] * self.dims[3]
    }

    /// The H×W plane of `(batch, channel)`.
    pub fn plane(&self, batch: usize, channel: usize) -> &[f32] {
        let len = self.plane_len();
        let start = (batch * self.dims[1] + channel) * len;
        &self.data[start..start + len]
    }

    pub(crate) fn plane_mut(&mut self, batch: usize, channel: usize) -> &mut [f32] {
        let len = self.plane_len();
        let start = (batch * self.dims[1] + channel) * len;
        &mut self.data[start..start + len]
    }

    pub(crate) fn planes_mut(&mut self) -> impl IndexedParallelIterator<Item = &mut [f32]> {
        let len = self.plane_len().max(1);
        self.data.par_chunks_mut(len)
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[((n * self.dims[1] + c) * self.dims[2] + y) * self.dims[3] + x]
    }

    #[cfg(test)]
    pub(crate) fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f32) {
        let idx = ((n * self.dims[1] + c) * self.dims[2] + y) * self.dims[3] + x;
        self.data[idx] = v;
    }

    /// Largest absolute elementwise difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &FeatureMap) -> f64 {
        assert_eq!(self.dims, other.dims, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .fold(0.0, f64::max)
    }

    /// Elementwise sum; shapes must match.
    pub fn add(&self, other: &FeatureMap) -> Result<FeatureMap> {
        check_same_dims(self, other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        FeatureMap::new(self.dims, data)
    }

    /// Copies channels `[start, start + count)` into a new map.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<FeatureMap> {
        if start + count > self.channels() {
            return Err(Error::Shape {
                axis: "channel",
                expected: self.channels(),
                found: start + count,
            });
        }
        let [nb, _, nh, nw] = self.dims;
        let mut out = FeatureMap::zeros([nb, count, nh, nw]);
        for n in 0..nb {
            for c in 0..count {
                out.plane_mut(n, c).copy_from_slice(self.plane(n, start + c));
            }
        }
        Ok(out)
    }

    /// Stacks maps along the channel axis.
    pub fn concat_channels(parts: &[FeatureMap]) -> Result<FeatureMap> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Tensor("concat of zero maps".into()))?;
        let [nb, _, nh, nw] = first.dims;
        for p in parts {
            if p.batch() != nb {
                return Err(Error::Shape { axis: "batch", expected: nb, found: p.batch() });
            }
            if p.height() != nh {
                return Err(Error::Shape { axis: "height", expected: nh, found: p.height() });
            }
            if p.width() != nw {
                return Err(Error::Shape { axis: "width", expected: nw, found: p.width() });
            }
        }
        let total: usize = parts.iter().map(|p| p.channels()).sum();
        let mut out = FeatureMap::zeros([nb, total, nh, nw]);
        for n in 0..nb {
            let mut c0 = 0;
            for p in parts {
                for c in 0..p.channels() {
                    out.plane_mut(n, c0 + c).copy_from_slice(p.plane(n, c));
                }
                c0 += p.channels();
            }
        }
        Ok(out)
    }

    /// Little-endian blob: four `u32` dims followed by the `f32` payload.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        for d in self.dims {
            let d = u32::try_from(d).map_err(|_| Error::Tensor(format!("dim {d} exceeds u32")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<FeatureMap> {
        let mut dims = [0usize; 4];
        let mut word = [0u8; 4];
        for d in &mut dims {
            r.read_exact(&mut word)
                .map_err(|e| Error::Decode(format!("tensor header: {e}")))?;
            *d = u32::from_le_bytes(word) as usize;
        }
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut word)
                .map_err(|e| Error::Decode(format!("tensor payload: {e}")))?;
            data.push(f32::from_le_bytes(word));
        }
        FeatureMap::new(dims, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + 4 * self.data.len());
        self.write_to(&mut buf).expect("dims fit in u32");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<FeatureMap> {
        let mut cursor = bytes;
        let map = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Decode(format!("{} trailing bytes after tensor", cursor.len())));
        }
        Ok(map)
    }
}

fn check_same_dims(a: &FeatureMap, b: &FeatureMap) -> Result<()> {
    const AXES: [&str; 4] = ["batch", "channel", "height", "width"];
    for (i, axis) in AXES.iter().enumerate() {
        if a.dims[i] != b.dims[i] {
            return Err(Error::Shape {
                axis,
                expected: a.dims[i],
                found: b.dims[i],
            });
        }
    }
    Ok(())
}

/// Convolution kernel `(out_ch, in_ch / groups, kh, kw)` with per-output bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvWeights {
    kernel: FeatureMap,
    bias: Vec<f32>,
    groups: usize,
}

impl ConvWeights {
    pub fn new(kernel: FeatureMap, bias: Vec<f32>, groups: usize) -> Result<Self> {
        if groups == 0 {
            return Err(Error::Tensor("groups must be positive".into()));
        }
        let out_ch = kernel.dims[0];
        if bias.len() != out_ch {
            return Err(Error::Shape { axis: "bias", expected: out_ch, found: bias.len() });
        }
        if out_ch % groups != 0 {
            return Err(Error::Tensor(format!(
                "out_ch {out_ch} is not divisible by groups {groups}"
            )));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::Tensor("non-finite bias".into()));
        }
        Ok(Self { kernel, bias, groups })
    }

    /// All-zero kernel and bias.
    pub fn zeros(out_ch: usize, in_ch: usize, kh: usize, kw: usize, groups: usize) -> Result<Self> {
        if groups == 0 || in_ch % groups != 0 {
            return Err(Error::Tensor(format!(
                "in_ch {in_ch} is not divisible by groups {groups}"
            )));
        }
        Self::new(
            FeatureMap::zeros([out_ch, in_ch / groups, kh, kw]),
            vec![0.0; out_ch],
            groups,
        )
    }

    pub fn kernel(&self) -> &FeatureMap {
        &self.kernel
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dims[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dims[1] * self.groups
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kernel.dims[2], self.kernel.dims[3])
    }

    /// Multiply-accumulates per output pixel.
    pub fn macs_per_pixel(&self) -> u64 {
        let [o, i, kh, kw] = self.kernel.dims;
        (o * i * kh * kw) as u64
    }

    pub fn map_kernel(&self, f: impl Fn(f32) -> f32) -> ConvWeights {
        let kernel = FeatureMap {
            dims: self.kernel.dims,
            data: self.kernel.data.iter().map(|&v| f(v)).collect(),
        };
        ConvWeights { kernel, bias: self.bias.clone(), groups: self.groups }
    }

    pub fn without_bias(&self) -> ConvWeights {
        ConvWeights {
            kernel: self.kernel.clone(),
            bias: vec![0.0; self.bias.len()],
            groups: self.groups,
        }
    }
}

/// Spatial padding mode for [`conv2d`]. Stride and dilation are always 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that preserves H×W.
    Same,
    /// No padding; output shrinks by `k - 1` per axis.
    Valid,
}

/// Grouped stride-1 2-D convolution (cross-correlation).
///
/// Channels are partitioned contiguously: group `g` maps input channels
/// `[g·Ci/G, (g+1)·Ci/G)` to output channels `[g·Co/G, (g+1)·Co/G)`.
pub fn conv2d(x: &FeatureMap, w: &ConvWeights, padding: Padding) -> Result<FeatureMap> {
    let [nb, nc, nh, nw] = x.dims;
    if nc != w.in_channels() {
        return Err(Error::Shape {
            axis: "channel",
            expected: w.in_channels(),
            found: nc,
        });
    }
    let (kh, kw) = w.kernel_size();
    let (pad_t, pad_l, oh, ow) = match padding {
        Padding::Same => ((kh.saturating_sub(1)) / 2, (kw.saturating_sub(1)) / 2, nh, nw),
        Padding::Valid => {
            if nh < kh {
                return Err(Error::Shape { axis: "height", expected: kh, found: nh });
            }
            if nw < kw {
                return Err(Error::Shape { axis: "width", expected: kw, found: nw });
            }
            (0, 0, nh - kh + 1, nw - kw + 1)
        }
    };

    let out_ch = w.out_channels();
    let in_per_group = w.kernel.dims[1];
    let out_per_group = out_ch / w.groups;
    let mut out = FeatureMap::zeros([nb, out_ch, oh, ow]);

    out.planes_mut().enumerate().for_each(|(idx, plane)| {
        let n = idx / out_ch;
        let oc = idx % out_ch;
        let g = oc / out_per_group;
        let mut acc = vec![w.bias[oc] as f64; oh * ow];
        for ic in 0..in_per_group {
            let src = x.plane(n, g * in_per_group + ic);
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = w.kernel.get(oc, ic, ky, kx) as f64;
                    if wv == 0.0 {
                        continue;
                    }
                    // input x = ox + kx - pad_l must lie in [0, nw)
                    let ox_lo = pad_l.saturating_sub(kx);
                    let ox_hi = (nw + pad_l).saturating_sub(kx).min(ow);
                    for oy in 0..oh {
                        let iy = oy + ky;
                        if iy < pad_t || iy - pad_t >= nh {
                            continue;
                        }
                        let row = &src[(iy - pad_t) * nw..(iy - pad_t + 1) * nw];
                        let dst = &mut acc[oy * ow..(oy + 1) * ow];
                        for ox in ox_lo..ox_hi {
                            dst[ox] += wv * row[ox + kx - pad_l] as f64;
                        }
                    }
                }
            }
        }
        for (o, a) in plane.iter_mut().zip(acc) {
            *o = a as f32;
        }
    });
    Ok(out)
}

/// Global average pooling: returns `batch × channel` means, row-major.
pub fn gap(x: &FeatureMap) -> Result<Vec<f64>> {
    let [nb, nc, nh, nw] = x.dims;
    if nh * nw == 0 {
        return Err(Error::Tensor("global average pool over empty spatial extent".into()));
    }
    let mut out = Vec::with_capacity(nb * nc);
    for n in 0..nb {
        for c in 0..nc {
            let s: f64 = x.plane(n, c).iter().map(|&v| v as f64).sum();
            out.push(s / (nh * nw) as f64);
        }
    }
    Ok(out)
}

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn leaky_relu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

/// Per-channel standardization over (batch, H, W) using the statistics of
/// this call, then `scale · z + shift`, then a leaky rectifier.
pub fn norm_act(x: &FeatureMap, scale: f64, shift: f64) -> FeatureMap {
    let [nb, nc, nh, nw] = x.dims;
    let count = (nb * nh * nw) as f64;
    let mut out = x.clone();
    if count == 0.0 {
        return out;
    }
    for c in 0..nc {
        let mut sum = 0.0;
        for n in 0..nb {
            sum += x.plane(n, c).iter().map(|&v| v as f64).sum::<f64>();
        }
        let mean = sum / count;
        let mut sq = 0.0;
        for n in 0..nb {
            sq += x
                .plane(n, c)
                .iter()
                .map(|&v| (v as f64 - mean).powi(2))
                .sum::<f64>();
        }
        let inv_std = 1.0 / (sq / count + NORM_EPS).sqrt();
        for n in 0..nb {
            for v in out.plane_mut(n, c) {
                let z = (*v as f64 - mean) * inv_std;
                *v = leaky_relu(scale * z + shift) as f32;
            }
        }
    }
    out
}

/// Zero-padded bilinear sample of one H×W plane at row `u`, column `v`.
///
/// Neighbours that fall off the plane contribute 0, so the result decays
/// continuously to 0 across the border and is exactly 0 once the coordinate
/// is a full pixel outside.
pub fn sample_plane(plane: &[f32], h: usize, w: usize, u: f64, v: f64) -> f64 {
    if !(u > -1.0 && v > -1.0 && u < h as f64 && v < w as f64) {
        return 0.0;
    }
    let y0 = u.floor();
    let x0 = v.floor();
    let fy = u - y0;
    let fx = v - x0;
    let y0 = y0 as isize;
    let x0 = x0 as isize;
    let at = |y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            plane[y as usize * w + x as usize] as f64
        }
    };
    let mut acc = 0.0;
    let w00 = (1.0 - fy) * (1.0 - fx);
    if w00 != 0.0 {
        acc += w00 * at(y0, x0);
    }
    let w01 = (1.0 - fy) * fx;
    if w01 != 0.0 {
        acc += w01 * at(y0, x0 + 1);
    }
    let w10 = fy * (1.0 - fx);
    if w10 != 0.0 {
        acc += w10 * at(y0 + 1, x0);
    }
    let w11 = fy * fx;
    if w11 != 0.0 {
        acc += w11 * at(y0 + 1, x0 + 1);
    }
    acc
}

/// Bilinear sample at (row `u`, column `v`) of one channel of one batch item.
pub fn bilinear_sample(x: &FeatureMap, u: f64, v: f64, channel: usize, batch: usize) -> f64 {
    sample_plane(x.plane(batch, channel), x.height(), x.width(), u, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(dims: [usize; 4], seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::from_fn(dims, |_, _, _, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn random_weights(o: usize, i: usize, k: usize, groups: usize, seed: u64) -> ConvWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kernel =
            FeatureMap::from_fn([o, i / groups, k, k], |_, _, _, _| rng.random_range(-1.0..1.0)).unwrap();
        let bias = (0..o).map(|_| rng.random_range(-1.0..1.0)).collect();
        ConvWeights::new(kernel, bias, groups).unwrap()
    }

    #[test]
    fn pointwise_kernel_scales_input() {
        let x = FeatureMap::new([1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let w = ConvWeights::new(FeatureMap::new([1, 1, 1, 1], vec![2.0]).unwrap(), vec![0.0], 1).unwrap();
        let y = conv2d(&x, &w, Padding::Same).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn impulse_response_is_kernel() {
        let mut x = FeatureMap::zeros([1, 1, 3, 3]);
        x.set(0, 0, 1, 1, 1.0);
        let w = ConvWeights::new(FeatureMap::new([1, 1, 3, 3], vec![1.0; 9]).unwrap(), vec![0.0], 1).unwrap();
        let y = conv2d(&x, &w, Padding::Same).unwrap();
        assert_eq!(y.dims(), [1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn valid_padding_shrinks() {
        let x = random_map([2, 3, 7, 6], 1);
        let w = random_weights(4, 3, 3, 1, 2);
        let y = conv2d(&x, &w, Padding::Valid).unwrap();
        assert_eq!(y.dims(), [2, 4, 5, 4]);
    }

    /// Direct six-loop reference, no grouping shortcuts.
    fn reference_conv(x: &FeatureMap, w: &ConvWeights) -> Vec<f64> {
        let [nb, _, nh, nw] = x.dims();
        let (kh, kw) = w.kernel_size();
        let o = w.out_channels();
        let ipg = w.kernel().dims()[1];
        let opg = o / w.groups();
        let mut out = vec![0.0; nb * o * nh * nw];
        for n in 0..nb {
            for oc in 0..o {
                let g = oc / opg;
                for y in 0..nh {
                    for xx in 0..nw {
                        let mut s = w.bias()[oc] as f64;
                        for ic in 0..ipg {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = y as isize + ky as isize - (kh as isize - 1) / 2;
                                    let ix = xx as isize + kx as isize - (kw as isize - 1) / 2;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < nh && (ix as usize) < nw {
                                        s += w.kernel().get(oc, ic, ky, kx) as f64
                                            * x.get(n, g * ipg + ic, iy as usize, ix as usize) as f64;
                                    }
                                }
                            }
                        }
                        out[((n * o + oc) * nh + y) * nw + xx] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn grouped_conv_matches_reference_and_channel_halves() {
        for (groups, seed) in [(1, 10), (2, 11), (4, 12)] {
            let x = random_map([1, 4, 8, 8], seed);
            let w = random_weights(4, 4, 3, groups, seed + 100);
            let y = conv2d(&x, &w, Padding::Same).unwrap();
            let r = reference_conv(&x, &w);
            for (a, b) in y.data().iter().zip(&r) {
                assert!((*a as f64 - b).abs() < 1e-5, "groups={groups}");
            }
            // each group equals an independent ungrouped convolution on its slice
            let per = 4 / groups;
            let mut parts = Vec::new();
            for g in 0..groups {
                let xs = x.slice_channels(g * per, per).unwrap();
                let k = FeatureMap::from_fn([per, per, 3, 3], |o, i, ky, kx| {
                    w.kernel().get(g * per + o, i, ky, kx)
                })
                .unwrap();
                let ws = ConvWeights::new(k, w.bias()[g * per..(g + 1) * per].to_vec(), 1).unwrap();
                parts.push(conv2d(&xs, &ws, Padding::Same).unwrap());
            }
            let cat = FeatureMap::concat_channels(&parts).unwrap();
            assert_eq!(cat.data(), y.data(), "groups={groups}");
        }
    }

    #[test]
    fn conv_is_linear_without_bias() {
        let a = random_map([1, 2, 6, 5], 3);
        let b = random_map([1, 2, 6, 5], 4);
        let w = random_weights(3, 2, 3, 1, 5).without_bias();
        let (alpha, beta) = (0.75f32, -1.25f32);
        let mix = FeatureMap::new(
            a.dims(),
            a.data().iter().zip(b.data()).map(|(p, q)| alpha * p + beta * q).collect(),
        )
        .unwrap();
        let lhs = conv2d(&mix, &w, Padding::Same).unwrap();
        let ya = conv2d(&a, &w, Padding::Same).unwrap();
        let yb = conv2d(&b, &w, Padding::Same).unwrap();
        for i in 0..lhs.data().len() {
            let rhs = alpha as f64 * ya.data()[i] as f64 + beta as f64 * yb.data()[i] as f64;
            // f32 storage bounds the agreement, accumulation itself is f64
            assert!((lhs.data()[i] as f64 - rhs).abs() < 1e-5);
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = random_map([1, 3, 4, 4], 1);
        let w = random_weights(2, 4, 3, 1, 2);
        match conv2d(&x, &w, Padding::Same) {
            Err(Error::Shape { axis, expected, found }) => {
                assert_eq!((axis, expected, found), ("channel", 4, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
        let big = random_weights(2, 3, 5, 1, 2);
        assert!(matches!(
            conv2d(&x, &big, Padding::Valid),
            Err(Error::Shape { axis: "height", .. })
        ));
    }

    #[test]
    fn weights_reject_bad_grouping() {
        assert!(ConvWeights::zeros(4, 3, 1, 1, 2).is_err());
        assert!(ConvWeights::new(FeatureMap::zeros([3, 1, 1, 1]), vec![0.0; 3], 2).is_err());
        assert!(ConvWeights::new(FeatureMap::zeros([4, 1, 1, 1]), vec![0.0; 3], 1).is_err());
    }

    #[test]
    fn gap_examples() {
        let c = FeatureMap::new([1, 2, 2, 2], vec![3.5; 8]).unwrap();
        assert_eq!(gap(&c).unwrap(), vec![3.5, 3.5]);
        let m = FeatureMap::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(gap(&m).unwrap(), vec![2.5]);
        let r = random_map([2, 3, 5, 7], 9);
        let g = gap(&r).unwrap();
        for n in 0..2 {
            for ch in 0..3 {
                let mut s = 0.0f64;
                for y in 0..5 {
                    for x in 0..7 {
                        s += r.get(n, ch, y, x) as f64;
                    }
                }
                assert!((g[n * 3 + ch] - s / 35.0).abs() < 1e-12);
            }
        }
        assert!(gap(&FeatureMap::zeros([1, 1, 0, 3])).is_err());
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(20.0) > 0.999999);
        for x in [-30.0, -3.2, -0.1, 0.7, 12.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-12);
            assert!(sigmoid(x) < sigmoid(x + 1e-3));
        }
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn norm_act_constant_channel_gives_activation_of_shift() {
        let x = FeatureMap::new([2, 1, 2, 2], vec![7.0; 8]).unwrap();
        let y = norm_act(&x, 1.3, -0.4);
        assert!(y.data().iter().all(|&v| (v as f64 - leaky_relu(-0.4)).abs() < 1e-7));
        assert!(y.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn norm_act_preserves_standardized_channel() {
        // mean 0, population variance 1
        let x = FeatureMap::new([1, 1, 2, 2], vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let y = norm_act(&x, 1.0, 0.0);
        let s = 1.0 / (1.0 + NORM_EPS).sqrt();
        let expect = [s, -LEAKY_SLOPE * s, s, -LEAKY_SLOPE * s];
        for (a, b) in y.data().iter().zip(expect) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
    }

    #[test]
    fn norm_moments_before_affine() {
        // with shift large enough that the activation stays on its identity branch,
        // the output minus shift exposes the standardized values
        let x = random_map([2, 3, 9, 9], 21);
        let y = norm_act(&x, 1.0, 100.0);
        for c in 0..3 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|n| y.plane(n, c).iter().map(|&v| v as f64 - 100.0).collect::<Vec<_>>())
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|z| (z - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-4, "mean {m}"); // f32 storage around an offset of 100
            assert!((v - 1.0).abs() < 1e-3, "var {v}");
        }
    }

    #[test]
    fn bilinear_examples() {
        let x = FeatureMap::new([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(bilinear_sample(&x, 1.0, 1.0, 0, 0), 3.0);
        assert_eq!(bilinear_sample(&x, 0.0, 1.0, 0, 0), 1.0);
        assert_eq!(bilinear_sample(&x, 0.0, 0.5, 0, 0), 0.5);
        assert_eq!(bilinear_sample(&x, -5.0, -5.0, 0, 0), 0.0);
        assert_eq!(bilinear_sample(&x, 2.0, 0.0, 0, 0), 0.0);
        assert_eq!(bilinear_sample(&x, f64::NAN, 0.0, 0, 0), 0.0);
        // half a pixel outside blends with the zero border
        assert_eq!(bilinear_sample(&x, -0.5, 1.0, 0, 0), 0.5);
    }

    #[test]
    fn bilinear_is_continuous() {
        let x = random_map([1, 1, 6, 6], 8);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let eps = 1e-4;
        for _ in 0..2000 {
            let u = rng.random_range(-1.5..6.5);
            let v = rng.random_range(-1.5..6.5);
            let a = bilinear_sample(&x, u, v, 0, 0);
            let b = bilinear_sample(&x, u + eps, v - eps, 0, 0);
            // local range over the 4×4 neighbourhood including zero padding
            let mut lo = 0.0f64;
            let mut hi = 0.0f64;
            for dy in -1..=2 {
                for dx in -1..=2 {
                    let yy = u.floor() as isize + dy;
                    let xx = v.floor() as isize + dx;
                    if (0..6).contains(&yy) && (0..6).contains(&xx) {
                        let val = x.get(0, 0, yy as usize, xx as usize) as f64;
                        lo = lo.min(val);
                        hi = hi.max(val);
                    }
                }
            }
            assert!((a - b).abs() <= eps * (hi - lo) * 2.0 + 1e-15);
        }
    }

    #[test]
    fn binary_and_json_roundtrip() {
        let x = random_map([1, 2, 3, 4], 5);
        let bytes = x.to_bytes();
        assert_eq!(bytes.len(), 16 + 4 * 24);
        assert_eq!(&bytes[..4], &1u32.to_le_bytes());
        assert_eq!(FeatureMap::from_bytes(&bytes).unwrap(), x);
        let json = serde_json::to_string(&x).unwrap();
        assert!(json.starts_with("{\"dims\":[1,2,3,4],\"data\":["));
        assert_eq!(serde_json::from_str::<FeatureMap>(&json).unwrap(), x);
        assert!(FeatureMap::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(serde_json::from_str::<FeatureMap>("{\"dims\":[1,1,1,2],\"data\":[1.0]}").is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(FeatureMap::new([1, 1, 1, 1], vec![f32::NAN]).is_err());
        assert!(FeatureMap::new([1, 1, 1, 2], vec![1.0]).is_err());
    }
}
