//! A small convolutional classifier with hand-derived gradients, and the
//! soft-label losses used to train it.
//!
//! Architecture: `conv3x3/2 → ReLU → conv3x3/2 → ReLU → global average pool →
//! linear`. Both convolutions use zero padding of one pixel. All parameters
//! live in one flat buffer so optimizer, EMA and checkpoint code treat them
//! uniformly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_mismatch, Error, Result};
use crate::plane::Image;
use crate::rng::{self, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub classes: usize,
}

#[inline]
fn conv_out(n: usize) -> usize {
    (n - 1) / 2 + 1
}

/// Name, shape and offset of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub shape: Vec<usize>,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if [self.in_channels, self.height, self.width, self.conv1, self.conv2].contains(&0) || self.classes < 2 {
            return Err(invalid(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }

    pub fn hidden1(&self) -> (usize, usize) {
        (conv_out(self.height), conv_out(self.width))
    }

    pub fn hidden2(&self) -> (usize, usize) {
        let (h, w) = self.hidden1();
        (conv_out(h), conv_out(w))
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let l = |name: &str, shape: Vec<usize>| LayerShape {
            name: name.into(),
            shape,
        };
        vec![
            l("conv1.weight", vec![self.conv1, self.in_channels, 3, 3]),
            l("conv1.bias", vec![self.conv1]),
            l("conv2.weight", vec![self.conv2, self.conv1, 3, 3]),
            l("conv2.bias", vec![self.conv2]),
            l("fc.weight", vec![self.classes, self.conv2]),
            l("fc.bias", vec![self.classes]),
        ]
    }

    fn offsets(&self) -> [usize; 7] {
        let mut o = [0; 7];
        for (k, layer) in self.layers().iter().enumerate() {
            o[k + 1] = o[k] + layer.shape.iter().product::<usize>();
        }
        o
    }

    pub fn num_params(&self) -> usize {
        self.offsets()[6]
    }
}

/// Parameters (or gradients: same layout) of a [`TinyNet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    arch: Architecture,
    values: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type Gradients = Params;

struct View<'a> {
    conv1_w: &'a [f64],
    conv1_b: &'a [f64],
    conv2_w: &'a [f64],
    conv2_b: &'a [f64],
    fc_w: &'a [f64],
    fc_b: &'a [f64],
}

struct ViewMut<'a> {
    conv1_w: &'a mut [f64],
    conv1_b: &'a mut [f64],
    conv2_w: &'a mut [f64],
    conv2_b: &'a mut [f64],
    fc_w: &'a mut [f64],
    fc_b: &'a mut [f64],
}

impl Params {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            values: vec![0.0; arch.num_params()],
        })
    }

    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if values.len() != arch.num_params() {
            return Err(shape_mismatch(
                format!("{} parameters", arch.num_params()),
                format!("{}", values.len()),
            ));
        }
        Ok(Self { arch, values })
    }

    /// He-uniform convolution weights, Glorot-uniform classifier, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let mut rng = rng::stream(seed, &[tag::INIT]);
        let mut fill = |w: &mut [f64], fan_in: usize, fan_out: usize| {
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in w {
                *v = rng.random_range(-s..=s);
            }
        };
        let a = arch;
        let v = p.view_mut();
        fill(v.conv1_w, a.in_channels * 9, a.in_channels * 9);
        fill(v.conv2_w, a.conv1 * 9, a.conv1 * 9);
        fill(v.fc_w, a.conv2, a.classes);
        Ok(p)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_congruent(&self, other: &Params) -> Result<()> {
        if self.arch != other.arch || self.values.len() != other.values.len() {
            return Err(shape_mismatch(format!("{:?}", self.arch), format!("{:?}", other.arch)));
        }
        Ok(())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) -> Result<()> {
        self.check_congruent(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    fn view(&self) -> View<'_> {
        let o = self.arch.offsets();
        let v = &self.values;
        View {
            conv1_w: &v[o[0]..o[1]],
            conv1_b: &v[o[1]..o[2]],
            conv2_w: &v[o[2]..o[3]],
            conv2_b: &v[o[3]..o[4]],
            fc_w: &v[o[4]..o[5]],
            fc_b: &v[o[5]..o[6]],
        }
    }

    fn view_mut(&mut self) -> ViewMut<'_> {
        let o = self.arch.offsets();
        let (conv1_w, rest) = self.values.split_at_mut(o[1]);
        let (conv1_b, rest) = rest.split_at_mut(o[2] - o[1]);
        let (conv2_w, rest) = rest.split_at_mut(o[3] - o[2]);
        let (conv2_b, rest) = rest.split_at_mut(o[4] - o[3]);
        let (fc_w, fc_b) = rest.split_at_mut(o[5] - o[4]);
        ViewMut {
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            fc_w,
            fc_b,
        }
    }

    /// Mutable access to the final linear layer `(weights, biases)`.
    pub fn fc_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let v = self.view_mut();
        (v.fc_w, v.fc_b)
    }

    pub fn conv_biases_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let v = self.view_mut();
        (v.conv1_b, v.conv2_b)
    }

    /// Named slices in layout order.
    pub fn named(&self) -> Vec<(String, &[f64])> {
        let o = self.arch.offsets();
        self.arch
            .layers()
            .into_iter()
            .enumerate()
            .map(|(k, l)| (l.name, &self.values[o[k]..o[k + 1]]))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Convolution kernels (3×3, stride 2, zero padding 1)
// ---------------------------------------------------------------------------

/// Output columns `ox` for which input column `2·ox + k - 1` is in range.
#[inline]
fn valid_range(k: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    let start = if k == 0 { 1 } else { 0 };
    let end = ((n_in as isize - k as isize) / 2 + 1).clamp(0, n_out as isize) as usize;
    (start, end.max(start))
}

/// Pixels in `[0, 1]` are mapped to `(x - INPUT_CENTER) * INPUT_GAIN` on entry.
pub const INPUT_CENTER: f64 = 0.5;
pub const INPUT_GAIN: f64 = 2.0;

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    input: &[f64],
    c_in: usize,
    h_in: usize,
    w_in: usize,
    weight: &[f64],
    bias: &[f64],
    c_out: usize,
    out: &mut [f64],
) {
    let (h_out, w_out) = (conv_out(h_in), conv_out(w_in));
    let plane = h_out * w_out;
    for oc in 0..c_out {
        let dst = &mut out[oc * plane..(oc + 1) * plane];
        dst.fill(bias[oc]);
        for ic in 0..c_in {
            let src = &input[ic * h_in * w_in..(ic + 1) * h_in * w_in];
            for ky in 0..3 {
                let (oy0, oy1) = valid_range(ky, h_in, h_out);
                for kx in 0..3 {
                    let (ox0, ox1) = valid_range(kx, w_in, w_out);
                    let wv = weight[((oc * c_in + ic) * 3 + ky) * 3 + kx];
                    for oy in oy0..oy1 {
                        let iy = 2 * oy + ky - 1;
                        let srow = &src[iy * w_in..(iy + 1) * w_in];
                        let drow = &mut dst[oy * w_out..(oy + 1) * w_out];
                        for ox in ox0..ox1 {
                            drow[ox] += wv * srow[2 * ox + kx - 1];
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates weight, bias and (optionally) input gradients of a convolution.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    c_in: usize,
    h_in: usize,
    w_in: usize,
    weight: &[f64],
    c_out: usize,
    d_out: &[f64],
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    mut d_input: Option<&mut [f64]>,
) {
    let (h_out, w_out) = (conv_out(h_in), conv_out(w_in));
    let plane = h_out * w_out;
    for oc in 0..c_out {
        let g = &d_out[oc * plane..(oc + 1) * plane];
        d_bias[oc] += g.iter().sum::<f64>();
        for ic in 0..c_in {
            let src = &input[ic * h_in * w_in..(ic + 1) * h_in * w_in];
            for ky in 0..3 {
                let (oy0, oy1) = valid_range(ky, h_in, h_out);
                for kx in 0..3 {
                    let (ox0, ox1) = valid_range(kx, w_in, w_out);
                    let widx = ((oc * c_in + ic) * 3 + ky) * 3 + kx;
                    let wv = weight[widx];
                    let mut acc = 0.0;
                    for oy in oy0..oy1 {
                        let iy = 2 * oy + ky - 1;
                        let grow = &g[oy * w_out..(oy + 1) * w_out];
                        let srow = &src[iy * w_in..(iy + 1) * w_in];
                        for ox in ox0..ox1 {
                            acc += grow[ox] * srow[2 * ox + kx - 1];
                        }
                        if let Some(di) = d_input.as_deref_mut() {
                            let drow = &mut di[ic * h_in * w_in + iy * w_in..ic * h_in * w_in + (iy + 1) * w_in];
                            for ox in ox0..ox1 {
                                drow[2 * ox + kx - 1] += wv * grow[ox];
                            }
                        }
                    }
                    d_weight[widx] += acc;
                }
            }
        }
    }
}

/// Intermediate activations of one forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    input: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    pooled: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Forward/backward passes over a [`Params`] buffer.
pub struct TinyNet;

impl TinyNet {
    fn check_input(arch: &Architecture, image: &Image) -> Result<()> {
        let expected = (arch.in_channels, arch.height, arch.width);
        if image.shape() != expected {
            let (c, h, w) = image.shape();
            return Err(shape_mismatch(
                format!("{}x{}x{}", expected.0, expected.1, expected.2),
                format!("{c}x{h}x{w}"),
            ));
        }
        Ok(())
    }

    pub fn forward_trace(params: &Params, image: &Image) -> Result<Trace> {
        let a = *params.arch();
        Self::check_input(&a, image)?;
        let v = params.view();
        let input: Vec<f64> = image
            .planes()
            .iter()
            .flat_map(|p| p.values().iter().map(|&x| (x - INPUT_CENTER) * INPUT_GAIN))
            .collect();
        let (h1, w1) = a.hidden1();
        let (h2, w2) = a.hidden2();
        let mut z1 = vec![0.0; a.conv1 * h1 * w1];
        conv_forward(&input, a.in_channels, a.height, a.width, v.conv1_w, v.conv1_b, a.conv1, &mut z1);
        let a1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
        let mut z2 = vec![0.0; a.conv2 * h2 * w2];
        conv_forward(&a1, a.conv1, h1, w1, v.conv2_w, v.conv2_b, a.conv2, &mut z2);
        let plane = h2 * w2;
        let pooled: Vec<f64> = z2
            .chunks_exact(plane)
            .map(|c| c.iter().map(|&z| z.max(0.0)).sum::<f64>() / plane as f64)
            .collect();
        let logits = (0..a.classes)
            .map(|k| {
                v.fc_b[k]
                    + v.fc_w[k * a.conv2..(k + 1) * a.conv2]
                        .iter()
                        .zip(&pooled)
                        .map(|(w, g)| w * g)
                        .sum::<f64>()
            })
            .collect();
        Ok(Trace {
            input,
            z1,
            a1,
            z2,
            pooled,
            logits,
        })
    }

    pub fn forward(params: &Params, image: &Image) -> Result<Vec<f64>> {
        Ok(Self::forward_trace(params, image)?.logits)
    }

    /// Gradient of a scalar loss given its gradient `d_logits` with respect to
    /// the logits of `trace`.
    pub fn backward_trace(params: &Params, trace: &Trace, d_logits: &[f64]) -> Result<Gradients> {
        let a = *params.arch();
        if d_logits.len() != a.classes {
            return Err(shape_mismatch(format!("{} logits", a.classes), d_logits.len()));
        }
        let v = params.view();
        let mut grads = Params::zeros(a)?;
        let g = grads.view_mut();
        let (h1, w1) = a.hidden1();
        let (h2, w2) = a.hidden2();
        let plane2 = h2 * w2;

        let mut d_pooled = vec![0.0; a.conv2];
        for k in 0..a.classes {
            let dk = d_logits[k];
            g.fc_b[k] += dk;
            for c in 0..a.conv2 {
                g.fc_w[k * a.conv2 + c] += dk * trace.pooled[c];
                d_pooled[c] += dk * v.fc_w[k * a.conv2 + c];
            }
        }
        let mut d_z2 = vec![0.0; a.conv2 * plane2];
        for c in 0..a.conv2 {
            let share = d_pooled[c] / plane2 as f64;
            for k in c * plane2..(c + 1) * plane2 {
                if trace.z2[k] > 0.0 {
                    d_z2[k] = share;
                }
            }
        }
        let mut d_a1 = vec![0.0; a.conv1 * h1 * w1];
        conv_backward(
            &trace.a1,
            a.conv1,
            h1,
            w1,
            v.conv2_w,
            a.conv2,
            &d_z2,
            g.conv2_w,
            g.conv2_b,
            Some(&mut d_a1),
        );
        for (d, &z) in d_a1.iter_mut().zip(&trace.z1) {
            if z <= 0.0 {
                *d = 0.0;
            }
        }
        conv_backward(
            &trace.input,
            a.in_channels,
            a.height,
            a.width,
            v.conv1_w,
            a.conv1,
            &d_a1,
            g.conv1_w,
            g.conv1_b,
            None,
        );
        Ok(grads)
    }

    pub fn backward(params: &Params, image: &Image, d_logits: &[f64]) -> Result<Gradients> {
        let trace = Self::forward_trace(params, image)?;
        Self::backward_trace(params, &trace, d_logits)
    }

    pub fn predict(params: &Params, image: &Image) -> Result<usize> {
        Ok(argmax(&Self::forward(params, image)?))
    }
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

fn check_simplex(target: &[f64]) -> Result<()> {
    let sum: f64 = target.iter().sum();
    if target.iter().any(|&t| t < -1e-6) || (sum - 1.0).abs() > 1e-6 {
        return Err(invalid(format!("target is not a probability vector (sum {sum})")));
    }
    Ok(())
}

/// `-Σ t_c · log softmax(logits)_c`.
pub fn soft_cross_entropy(logits: &[f64], target: &[f64]) -> Result<f64> {
    if logits.len() != target.len() {
        return Err(shape_mismatch(logits.len(), target.len()));
    }
    check_simplex(target)?;
    Ok(-log_softmax(logits).iter().zip(target).map(|(l, t)| t * l).sum::<f64>())
}

/// Gradient of [`soft_cross_entropy`] with respect to the logits.
pub fn soft_cross_entropy_grad(logits: &[f64], target: &[f64]) -> Vec<f64> {
    let total: f64 = target.iter().sum();
    softmax(logits).iter().zip(target).map(|(p, t)| total * p - t).collect()
}

/// `KL(softmax(p) ‖ softmax(q))`, temperature 1.
pub fn kl_divergence(p_logits: &[f64], q_logits: &[f64]) -> f64 {
    let lp = log_softmax(p_logits);
    let lq = log_softmax(q_logits);
    lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum::<f64>().max(0.0)
}

/// Gradient of [`kl_divergence`] with respect to `p_logits` (`q` held fixed):
/// `p_k · (log p_k − log q_k − KL)`.
pub fn kl_divergence_grad(p_logits: &[f64], q_logits: &[f64]) -> Vec<f64> {
    let lp = log_softmax(p_logits);
    let lq = log_softmax(q_logits);
    let kl: f64 = lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum();
    lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b - kl)).collect()
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub architecture: Architecture,
    pub layers: Vec<LayerShape>,
    pub num_params: usize,
    pub seed: u64,
}

const CHECKPOINT_FORMAT: &str = "sam-tinynet-f64le-v1";

/// Layout: `u64` LE header length, JSON header, then every parameter as `f64` LE.
pub fn save_checkpoint(params: &Params, seed: u64, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        architecture: *params.arch(),
        layers: params.arch().layers(),
        num_params: params.len(),
        seed,
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(8 + json.len() + 8 * params.len());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in params.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Params, CheckpointHeader)> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if buf.len() < 8 {
        return Err(bad("truncated header"));
    }
    let hlen = u64::from_le_bytes(buf[..8].try_into().unwrap()) as usize;
    let body_start = 8usize.checked_add(hlen).filter(|&e| e <= buf.len()).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&buf[8..body_start])?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(bad(&format!("unknown format '{}'", header.format)));
    }
    if header.layers != header.architecture.layers() || header.num_params != header.architecture.num_params() {
        return Err(bad("layer shapes do not match the architecture"));
    }
    let body = &buf[body_start..];
    if body.len() != 8 * header.num_params {
        return Err(bad(&format!("expected {} parameters, found {} bytes", header.num_params, body.len())));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((Params::from_values(header.architecture, values)?, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plane::ImagePlane;

    pub(crate) fn tiny_arch() -> Architecture {
        Architecture {
            in_channels: 2,
            height: 7,
            width: 6,
            conv1: 3,
            conv2: 4,
            classes: 3,
        }
    }

    fn random_image(arch: &Architecture, seed: u64) -> Image {
        let mut rng = rng::stream(seed, &[99]);
        Image::new(
            (0..arch.in_channels)
                .map(|_| ImagePlane::from_fn(arch.height, arch.width, |_, _| rng.random::<f64>()).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn layout_sizes() {
        let a = tiny_arch();
        assert_eq!(a.hidden1(), (4, 3));
        assert_eq!(a.hidden2(), (2, 2));
        assert_eq!(a.num_params(), 3 * 2 * 9 + 3 + 4 * 3 * 9 + 4 + 3 * 4 + 3);
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let a = tiny_arch();
        let p = Params::zeros(a).unwrap();
        assert!(TinyNet::forward(&p, &random_image(&a, 1)).unwrap().iter().all(|&l| l == 0.0));
    }

    #[test]
    fn doubling_last_layer_doubles_logits() {
        let a = tiny_arch();
        let mut p = Params::init(a, 3).unwrap();
        let img = random_image(&a, 2);
        let l1 = TinyNet::forward(&p, &img).unwrap();
        for w in p.fc_mut().0 {
            *w *= 2.0;
        }
        let l2 = TinyNet::forward(&p, &img).unwrap();
        for (x, y) in l1.iter().zip(&l2) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_rejects_wrong_shape() {
        let p = Params::init(tiny_arch(), 3).unwrap();
        let img = Image::new(vec![ImagePlane::zeros(7, 6).unwrap()]).unwrap();
        assert!(TinyNet::forward(&p, &img).is_err());
        assert!(TinyNet::backward(&p, &random_image(&tiny_arch(), 1), &[1.0]).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[0.3, -2.0, 5.0, 700.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_examples() {
        let ce = soft_cross_entropy(&[0.0; 7], &crate::data::one_hot(3, 7)).unwrap();
        assert!((ce - 7f64.ln()).abs() < 1e-12);
        assert!((7f64.ln() - 1.9459).abs() < 1e-4);

        let logits = [0.2, -1.0, 1.5];
        let p = softmax(&logits);
        let entropy: f64 = -p.iter().map(|q| q * q.ln()).sum::<f64>();
        assert!((soft_cross_entropy(&logits, &p).unwrap() - entropy).abs() < 1e-12);

        assert!(soft_cross_entropy(&logits, &[0.5, 0.5, 0.5]).is_err());
        assert!(soft_cross_entropy(&logits, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn cross_entropy_matches_naive_formula() {
        let mut rng = rng::stream(8, &[]);
        for _ in 0..100 {
            let logits: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mut t: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
            let s: f64 = t.iter().sum();
            t.iter_mut().for_each(|x| *x /= s);
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            let naive: f64 = -t.iter().zip(&logits).map(|(t, l)| t * (l.exp() / z).ln()).sum::<f64>();
            assert!((soft_cross_entropy(&logits, &t).unwrap() - naive).abs() < 1e-9);
        }
    }

    #[test]
    fn kl_examples() {
        assert!(kl_divergence(&[0.1, 2.0, -1.0], &[0.1, 2.0, -1.0]).abs() < 1e-12);
        // logits for (0.8, 0.2) and (0.5, 0.5)
        let p = [0.8f64.ln(), 0.2f64.ln()];
        let q = [0.0, 0.0];
        let expected = 0.8 * 1.6f64.ln() + 0.2 * 0.4f64.ln();
        assert!((kl_divergence(&p, &q) - expected).abs() < 1e-12);
        assert!((expected - 0.19274).abs() < 1e-5);
        let mut rng = rng::stream(4, &[]);
        for _ in 0..1000 {
            let a: Vec<f64> = (0..5).map(|_| rng.random_range(-4.0..4.0)).collect();
            let b: Vec<f64> = (0..5).map(|_| rng.random_range(-4.0..4.0)).collect();
            assert!(kl_divergence(&a, &b) >= 0.0);
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let logits = [0.3, -0.7, 1.1, 0.05];
        let q = [1.0, 0.2, -0.4, 0.0];
        let target = [0.1, 0.6, 0.0, 0.3];
        let h = 1e-6;
        let g_ce = soft_cross_entropy_grad(&logits, &target);
        let g_kl = kl_divergence_grad(&logits, &q);
        for k in 0..4 {
            let mut up = logits;
            let mut dn = logits;
            up[k] += h;
            dn[k] -= h;
            let fd_ce = (soft_cross_entropy(&up, &target).unwrap() - soft_cross_entropy(&dn, &target).unwrap()) / (2.0 * h);
            let fd_kl = (kl_divergence(&up, &q) - kl_divergence(&dn, &q)) / (2.0 * h);
            assert!((fd_ce - g_ce[k]).abs() < 1e-8);
            assert!((fd_kl - g_kl[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn shift_invariance() {
        let l = [0.4, -1.2, 2.2];
        let s: Vec<f64> = l.iter().map(|x| x + 37.5).collect();
        let t = [0.2, 0.3, 0.5];
        assert!((soft_cross_entropy(&l, &t).unwrap() - soft_cross_entropy(&s, &t).unwrap()).abs() < 1e-9);
        assert!((kl_divergence(&l, &[0.0, 1.0, 0.0]) - kl_divergence(&s, &[0.0, 1.0, 0.0])).abs() < 1e-9);
    }

    #[test]
    fn centered_image_has_zero_conv_weight_gradients() {
        let a = tiny_arch();
        let p = Params::init(a, 5).unwrap();
        let img = Image::new(vec![ImagePlane::filled(a.height, a.width, INPUT_CENTER).unwrap(); a.in_channels]).unwrap();
        let logits = TinyNet::forward(&p, &img).unwrap();
        let d = soft_cross_entropy_grad(&logits, &crate::data::one_hot(1, a.classes));
        let g = TinyNet::backward(&p, &img, &d).unwrap();
        let named = g.named();
        assert!(named[0].1.iter().all(|&v| v == 0.0), "conv1.weight");
        assert!(named[2].1.iter().all(|&v| v == 0.0), "conv2.weight");
        assert!(named[5].1.iter().any(|&v| v != 0.0), "fc.bias");
    }

    #[test]
    fn gradients_are_linear_in_upstream() {
        let a = tiny_arch();
        let p = Params::init(a, 6).unwrap();
        let img = random_image(&a, 4);
        let d1 = [0.3, -0.1, 0.5];
        let d2 = [-0.2, 0.7, 0.1];
        let sum: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| a + b).collect();
        let mut g = TinyNet::backward(&p, &img, &d1).unwrap();
        g.add_scaled(&TinyNet::backward(&p, &img, &d2).unwrap(), 1.0).unwrap();
        let gs = TinyNet::backward(&p, &img, &sum).unwrap();
        for (x, y) in g.values().iter().zip(gs.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let p = Params::init(tiny_arch(), 11).unwrap();
        save_checkpoint(&p, 11, &path).unwrap();
        let (q, header) = load_checkpoint(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(header.seed, 11);
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
