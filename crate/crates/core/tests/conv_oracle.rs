//! `conv2d` against a plain six-deep loop nest with scalar products.

use cutpoint_core::codegen::LayerWeights;
use cutpoint_core::funcref::{conv2d, ConvParams, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn requant(v: i64, shift: i8) -> i8 {
    let r = if shift <= 0 {
        v * (1i64 << -shift as u32)
    } else {
        // half away from zero
        let d = 1i64 << shift as u32;
        let q = v.abs() / d;
        let rem = v.abs() % d;
        let q = if 2 * rem >= d { q + 1 } else { q };
        v.signum() * q
    };
    r.clamp(-128, 127) as i8
}

fn naive(x: &Tensor, w: &LayerWeights, k: usize, stride: usize, out_c: usize, dw: bool, shift: i8) -> Vec<i8> {
    let (oh, ow) = ((x.h + stride - 1) / stride, (x.w + stride - 1) / stride);
    let pad = k as i64 / 2;
    let mut out = Vec::with_capacity(oh * ow * out_c);
    for oy in 0..oh {
        for ox in 0..ow {
            for o in 0..out_c {
                let mut acc = w.bias[o] as i64;
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * stride) as i64 + ky as i64 - pad;
                        let ix = (ox * stride) as i64 + kx as i64 - pad;
                        if iy < 0 || ix < 0 || iy >= x.h as i64 || ix >= x.w as i64 {
                            continue;
                        }
                        let px = |c: usize| x.data[(iy as usize * x.w + ix as usize) * x.c + c] as i64;
                        if dw {
                            acc += px(o) * w.weights[(o * k + ky) * k + kx] as i64;
                        } else {
                            for c in 0..x.c {
                                acc += px(c) * w.weights[((o * k + ky) * k + kx) * x.c + c] as i64;
                            }
                        }
                    }
                }
                out.push(requant(acc, shift));
            }
        }
    }
    out
}

#[test]
fn conv_matches_loop_nest() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..200 {
        let dw = case % 3 == 0;
        let (h, wd, c) = (rng.gen_range(1..=9), rng.gen_range(1..=9), rng.gen_range(1..=7));
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let stride = rng.gen_range(1..=2);
        let out_c = if dw { c } else { rng.gen_range(1..=9) };
        let shift = rng.gen_range(-2..=9);
        let x = Tensor::from_vec(h, wd, c, (0..h * wd * c).map(|_| rng.gen()).collect()).unwrap();
        let n = if dw { k * k * c } else { k * k * c * out_c };
        let w = LayerWeights {
            weights: (0..n).map(|_| rng.gen()).collect(),
            bias: (0..out_c).map(|_| rng.gen_range(-2000..=2000)).collect(),
        };
        let got = conv2d(&x, &w, ConvParams { kernel: k, stride, out_c, depthwise: dw, shift }).unwrap();
        let want = naive(&x, &w, k, stride, out_c, dw, shift);
        assert_eq!(got.data, want, "case {case}: {h}x{wd}x{c} k{k} s{stride} -> {out_c} dw={dw} shift={shift}");
    }
}
