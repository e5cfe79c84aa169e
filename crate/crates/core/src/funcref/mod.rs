//! Functional reference: 8-bit dynamic fixed-point layer semantics, the
//! shared-MAC double multiplication and the LUT activations. Used to check
//! that an emitted instruction stream computes what the graph describes.

mod fixture;
mod interp;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codegen::LayerWeights;
use crate::error::{Error, Result};
use crate::graph::{Activation, LayerKind, LayerNode, NetworkGraph, NodeGroup};

pub use fixture::{read_tensor, write_tensor};
pub use interp::{run_image, run_reference};

/// HWC int8 tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<i8>,
}

impl Tensor {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Tensor { h, w, c, data: vec![0; h * w * c] }
    }

    pub fn from_vec(h: usize, w: usize, c: usize, data: Vec<i8>) -> Result<Self> {
        if data.len() != h * w * c {
            return Err(Error::Tensor(format!("{} values for shape {h}x{w}x{c}", data.len())));
        }
        Ok(Tensor { h, w, c, data })
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> i8 {
        self.data[(y * self.w + x) * self.c + c]
    }

    #[inline]
    fn idx(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.w + x) * self.c + c
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| v as u8).collect()
    }

    pub fn random(h: usize, w: usize, c: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor { h, w, c, data: (0..h * w * c).map(|_| rng.gen()).collect() }
    }
}

/// Arithmetic shift right with round-half-away-from-zero; negative shifts scale up.
#[inline]
pub fn shift_round(v: i64, shift: i8) -> i64 {
    if shift <= 0 {
        return v << (-shift as u32).min(32);
    }
    let s = shift as u32;
    let half = 1i64 << (s - 1);
    if v >= 0 {
        (v + half) >> s
    } else {
        -((-v + half) >> s)
    }
}

#[inline]
pub fn saturate(v: i64) -> i8 {
    v.clamp(-128, 127) as i8
}

const LANE: u32 = 18;

/// Packed multiply: one wide multiplier computes `I·(W0 + W1·2^18)`, and the
/// correction step undoes the borrow the signed low product takes from the
/// high lane. Exact for signed 9-bit operands.
#[inline]
pub(crate) fn double_mac_unchecked(i: i32, w0: i32, w1: i32) -> (i32, i32) {
    let packed = w0 as i64 + ((w1 as i64) << LANE);
    let p = i as i64 * packed;
    let low = p & ((1 << LANE) - 1);
    // correction: a negative low product borrowed one from the high lane
    let m0 = if low >= 1 << (LANE - 1) { low - (1 << LANE) } else { low };
    let m1 = (p - m0) >> LANE;
    (m0 as i32, m1 as i32)
}

/// `(I·W0, I·W1)` through the shared-multiplier path.
pub fn double_mac(i: i32, w0: i32, w1: i32) -> Result<(i32, i32)> {
    for v in [i, w0, w1] {
        if !(-256..=255).contains(&v) {
            return Err(Error::OperandRange { value: v });
        }
    }
    Ok(double_mac_unchecked(i, w0, w1))
}

/// Fractional bits of LUT inputs (Q4.3).
pub const LUT_IN_FRAC: u32 = 3;
/// Fractional bits of sigmoid outputs (Q0.7).
pub const SIGMOID_OUT_FRAC: u32 = 7;

/// 256-entry table indexed by the input byte reinterpreted as unsigned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lut(pub [i8; 256]);

impl Lut {
    pub fn build(kind: Activation) -> Lut {
        let mut t = [0i8; 256];
        for (i, e) in t.iter_mut().enumerate() {
            let x = i as u8 as i8 as f64 / (1 << LUT_IN_FRAC) as f64;
            let sig = 1.0 / (1.0 + (-x).exp());
            let y = match kind {
                Activation::Sigmoid => sig * (1 << SIGMOID_OUT_FRAC) as f64,
                Activation::Swish => x * sig * (1 << LUT_IN_FRAC) as f64,
                _ => x * (1 << LUT_IN_FRAC) as f64,
            };
            *e = saturate(y.round() as i64);
        }
        Lut(t)
    }

    #[inline]
    pub fn get(&self, x: i8) -> i8 {
        self.0[x as u8 as usize]
    }
}

pub fn lut_activation(kind: Activation, x: i8) -> i8 {
    Lut::build(kind).get(x)
}

/// Applies an activation to a whole tensor.
pub fn activate(t: &mut Tensor, kind: Activation) {
    match kind {
        Activation::None => {}
        Activation::Relu => t.data.iter_mut().for_each(|v| *v = (*v).max(0)),
        // slope 1/10, rounded half away from zero
        Activation::Leaky => t.data.iter_mut().for_each(|v| {
            if *v < 0 {
                *v = saturate(-((-(*v as i64) * 2 + 10) / 20));
            }
        }),
        Activation::Sigmoid | Activation::Swish => {
            let lut = Lut::build(kind);
            t.data.iter_mut().for_each(|v| *v = lut.get(*v));
        }
    }
}

/// Convolution parameters shared by the graph and instruction views.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub kernel: usize,
    pub stride: usize,
    pub out_c: usize,
    pub depthwise: bool,
    pub shift: i8,
}

/// Same-padded convolution. Normal convolutions pair output channels on the
/// shared multiplier; depthwise uses one multiplication per MAC.
pub fn conv2d(x: &Tensor, w: &LayerWeights, p: ConvParams) -> Result<Tensor> {
    let k = p.kernel;
    let in_c = x.c;
    let need = if p.depthwise { k * k * in_c } else { k * k * in_c * p.out_c };
    if w.weights.len() != need || w.bias.len() != p.out_c || (p.depthwise && p.out_c != in_c) {
        return Err(Error::Tensor(format!(
            "weights {}+{} do not match {k}x{k}x{in_c}->{} conv",
            w.weights.len(),
            w.bias.len(),
            p.out_c
        )));
    }
    let (oh, ow) = (x.h.div_ceil(p.stride), x.w.div_ceil(p.stride));
    let pad = (k / 2) as isize;
    let mut out = Tensor::zeros(oh, ow, p.out_c);
    let mut acc = vec![0i64; p.out_c];
    for oy in 0..oh {
        for ox in 0..ow {
            acc.iter_mut().zip(&w.bias).for_each(|(a, &b)| *a = b as i64);
            for ky in 0..k {
                let iy = (oy * p.stride) as isize + ky as isize - pad;
                if iy < 0 || iy >= x.h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * p.stride) as isize + kx as isize - pad;
                    if ix < 0 || ix >= x.w as isize {
                        continue;
                    }
                    let base = x.idx(iy as usize, ix as usize, 0);
                    if p.depthwise {
                        for c in 0..in_c {
                            acc[c] += x.data[base + c] as i64 * w.weights[(c * k + ky) * k + kx] as i64;
                        }
                        continue;
                    }
                    let wat = |o: usize, c: usize| w.weights[((o * k + ky) * k + kx) * in_c + c] as i32;
                    for c in 0..in_c {
                        let i = x.data[base + c] as i32;
                        let mut o = 0;
                        while o + 1 < p.out_c {
                            let (m0, m1) = double_mac_unchecked(i, wat(o, c), wat(o + 1, c));
                            acc[o] += m0 as i64;
                            acc[o + 1] += m1 as i64;
                            o += 2;
                        }
                        if o < p.out_c {
                            acc[o] += (i * wat(o, c)) as i64;
                        }
                    }
                }
            }
            let at = out.idx(oy, ox, 0);
            for (o, &a) in acc.iter().enumerate() {
                out.data[at + o] = saturate(shift_round(a, p.shift));
            }
        }
    }
    Ok(out)
}

pub fn fully_connected(x: &Tensor, w: &LayerWeights, out_c: usize, shift: i8) -> Result<Tensor> {
    let n = x.data.len();
    if w.weights.len() != n * out_c || w.bias.len() != out_c {
        return Err(Error::Tensor(format!("fc weights do not match {n}->{out_c}")));
    }
    let data = (0..out_c)
        .map(|o| {
            let acc: i64 = w.bias[o] as i64
                + x.data.iter().zip(&w.weights[o * n..(o + 1) * n]).map(|(&a, &b)| a as i64 * b as i64).sum::<i64>();
            saturate(shift_round(acc, shift))
        })
        .collect();
    Ok(Tensor { h: 1, w: 1, c: out_c, data })
}

/// Max pooling; windows start at `o·stride - (kernel - stride)/2` and are clipped.
pub fn maxpool(x: &Tensor, kernel: usize, stride: usize) -> Tensor {
    let (oh, ow) = (x.h.div_ceil(stride), x.w.div_ceil(stride));
    let pad = kernel.saturating_sub(stride) / 2;
    let mut out = Tensor::zeros(oh, ow, x.c);
    for oy in 0..oh {
        for ox in 0..ow {
            for c in 0..x.c {
                let mut m = i8::MIN;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let (iy, ix) = ((oy * stride + ky).wrapping_sub(pad), (ox * stride + kx).wrapping_sub(pad));
                        if iy < x.h && ix < x.w {
                            m = m.max(x.at(iy, ix, c));
                        }
                    }
                }
                let at = out.idx(oy, ox, c);
                out.data[at] = m;
            }
        }
    }
    out
}

pub fn avgpool_global(x: &Tensor) -> Tensor {
    let area = (x.h * x.w) as i64;
    let data = (0..x.c)
        .map(|c| {
            let s: i64 = (0..x.h * x.w).map(|p| x.data[p * x.c + c] as i64).sum();
            let q = (s.abs() * 2 + area) / (2 * area);
            saturate(if s < 0 { -q } else { q })
        })
        .collect();
    Tensor { h: 1, w: 1, c: x.c, data }
}

pub fn upsample(x: &Tensor, f: usize) -> Tensor {
    let mut out = Tensor::zeros(x.h * f, x.w * f, x.c);
    for y in 0..out.h {
        for xx in 0..out.w {
            let (src, dst) = (x.idx(y / f, xx / f, 0), out.idx(y, xx, 0));
            out.data[dst..dst + x.c].copy_from_slice(&x.data[src..src + x.c]);
        }
    }
    out
}

pub fn eltwise_add(a: &Tensor, b: &Tensor, shift: i8) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Tensor(format!("eltwise operands {:?} and {:?}", a.shape(), b.shape())));
    }
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| saturate(shift_round(x as i64 + y as i64, shift))).collect();
    Ok(Tensor { data, ..*a })
}

/// Channel-wise product with a 1×1×C vector.
pub fn scale(x: &Tensor, v: &Tensor, shift: i8) -> Result<Tensor> {
    if v.data.len() != x.c {
        return Err(Error::Tensor(format!("scale vector has {} channels, tensor {}", v.data.len(), x.c)));
    }
    let data =
        x.data.iter().enumerate().map(|(i, &a)| saturate(shift_round(a as i64 * v.data[i % x.c] as i64, shift))).collect();
    Ok(Tensor { data, ..*x })
}

pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
    let (h, w) = (parts[0].h, parts[0].w);
    if parts.iter().any(|p| p.h != h || p.w != w) {
        return Err(Error::Tensor("concat sources differ in spatial size".into()));
    }
    let c: usize = parts.iter().map(|p| p.c).sum();
    let mut data = Vec::with_capacity(h * w * c);
    for px in 0..h * w {
        for p in parts {
            data.extend_from_slice(&p.data[px * p.c..(px + 1) * p.c]);
        }
    }
    Ok(Tensor { h, w, c, data })
}

/// Runs one layer. `second` is the eltwise/scale operand; `extra` holds the
/// remaining concat sources.
pub fn layer_reference(l: &LayerNode, x: &Tensor, second: Option<&Tensor>, extra: &[&Tensor], w: &LayerWeights) -> Result<Tensor> {
    let need = |what: &str| Error::Tensor(format!("layer {}: missing {what} operand", l.id));
    let mut y = match l.kind {
        LayerKind::Conv | LayerKind::Dwconv => conv2d(
            x,
            w,
            ConvParams {
                kernel: l.kernel as usize,
                stride: l.stride as usize,
                out_c: l.out_c as usize,
                depthwise: l.kind == LayerKind::Dwconv,
                shift: l.quant_shift,
            },
        )?,
        LayerKind::Fc => fully_connected(x, w, l.out_c as usize, l.quant_shift)?,
        LayerKind::Maxpool => maxpool(x, l.kernel as usize, l.stride as usize),
        LayerKind::AvgpoolGlobal => avgpool_global(x),
        LayerKind::Upsample => upsample(x, l.stride as usize),
        LayerKind::Activation => x.clone(),
        LayerKind::EltwiseAdd => eltwise_add(x, second.ok_or_else(|| need("shortcut"))?, l.quant_shift)?,
        LayerKind::Scale => scale(x, second.ok_or_else(|| need("vector"))?, l.quant_shift)?,
        LayerKind::Concat => {
            let mut parts = vec![x];
            parts.extend_from_slice(extra);
            concat(&parts)?
        }
    };
    activate(&mut y, l.activation);
    Ok(y)
}

/// Executes a group layer by layer in graph order. `second` feeds whichever
/// layer of the group reads a shortcut or vector; `extra` the concat sources
/// after the first.
pub fn conv_reference(
    graph: &NetworkGraph,
    group: &NodeGroup,
    input: &Tensor,
    second: Option<&Tensor>,
    extra: &[&Tensor],
    weights: &[LayerWeights],
) -> Result<Tensor> {
    let head = group.head(graph);
    if (input.h, input.w, input.c) != (head.in_h as usize, head.in_w as usize, head.in_c as usize)
        && head.kind != LayerKind::Concat
    {
        return Err(Error::Tensor(format!(
            "group {}: input {:?} does not match {}x{}x{}",
            group.group_id,
            input.shape(),
            head.in_h,
            head.in_w,
            head.in_c
        )));
    }
    let mut x = input.clone();
    for &l in &group.layers {
        let node = &graph.layers[l];
        let sec = if node.shortcut_src.is_some() { second } else { None };
        x = layer_reference(node, &x, sec, extra, &weights[l])?;
    }
    Ok(x)
}

/// Seeded small-magnitude weights for every layer, indexed by layer id.
pub fn synthetic_weights(graph: &NetworkGraph, seed: u64) -> Vec<LayerWeights> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    graph
        .layers
        .iter()
        .map(|l| LayerWeights {
            weights: (0..l.weight_elems()).map(|_| rng.gen_range(-16..=16)).collect(),
            bias: (0..l.bias_words()).map(|_| rng.gen_range(-64..=64)).collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_mac_examples() {
        assert_eq!(double_mac(77, 0, 0).unwrap(), (0, 0));
        assert_eq!(double_mac(-3, 5, -7).unwrap(), (-15, 21));
        assert_eq!(double_mac(-128, -128, -128).unwrap(), (16384, 16384));
        assert_eq!(double_mac(-256, 255, -256).unwrap(), (-65280, 65536));
        assert!(double_mac(256, 0, 0).is_err());
    }

    #[test]
    fn rounding_is_half_away() {
        assert_eq!(shift_round(3, 1), 2);
        assert_eq!(shift_round(-3, 1), -2);
        assert_eq!(shift_round(5, 2), 1);
        assert_eq!(shift_round(-6, 2), -2);
        assert_eq!(shift_round(3, -2), 12);
        assert_eq!(saturate(300), 127);
    }

    #[test]
    fn lut_properties() {
        let sig = Lut::build(Activation::Sigmoid);
        assert_eq!(sig.0.len(), 256);
        assert_eq!(sig.get(0), 64);
        let sw = Lut::build(Activation::Swish);
        for x in 0..127i8 {
            assert!(sw.get(x) <= sw.get(x + 1));
        }
        for i in -128..=127i32 {
            let x = i as f64 / 8.0;
            let s = 1.0 / (1.0 + (-x).exp());
            assert!((sig.get(i as i8) as f64 - s * 128.0).abs() <= 1.0);
            assert!((sw.get(i as i8) as f64 - x * s * 8.0).abs() <= 1.0);
        }
    }

    #[test]
    fn identity_conv() {
        let x = Tensor::random(5, 6, 3, 1);
        let mut w = LayerWeights { weights: vec![0; 9], bias: vec![0; 3] };
        for c in 0..3 {
            w.weights[c * 3 + c] = 1;
        }
        let p = ConvParams { kernel: 1, stride: 1, out_c: 3, depthwise: false, shift: 0 };
        assert_eq!(conv2d(&x, &w, p).unwrap(), x);
    }

    #[test]
    fn upsample_and_pool_shapes() {
        let x = Tensor::random(3, 5, 2, 2);
        assert_eq!(maxpool(&x, 2, 2).shape(), (2, 3, 2));
        assert_eq!(upsample(&x, 2).shape(), (6, 10, 2));
        assert_eq!(maxpool(&upsample(&x, 2), 2, 2), x);
    }
}
