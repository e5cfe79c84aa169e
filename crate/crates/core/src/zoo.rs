//! Network encodings built from their public layer definitions.
//!
//! The JSON files shipped under `models/` are produced by these builders
//! (`cutpoint export-models`), so the two never drift apart.

use crate::error::Result;
use crate::graph::{build_network, Activation, InputSpec, LayerKind, LayerSpec, NetworkFile, NetworkGraph};

/// Incremental network-file builder; every method returns the new layer id.
#[derive(Debug, Clone)]
pub struct NetBuilder {
    pub file: NetworkFile,
}

impl NetBuilder {
    pub fn new(name: &str, w: u32, h: u32, c: u32) -> Self {
        NetBuilder {
            file: NetworkFile { name: name.into(), input: InputSpec { w, h, c }, declared_gop: None, layers: Vec::new() },
        }
    }

    pub fn gop(mut self, gop: f64) -> Self {
        self.file.declared_gop = Some(gop);
        self
    }

    /// Id of the most recent layer.
    pub fn last(&self) -> usize {
        self.file.layers.len() - 1
    }

    fn push(&mut self, mut spec: LayerSpec, input: Option<usize>) -> usize {
        let id = self.file.layers.len();
        if input.is_some_and(|i| id == 0 || i + 1 != id) {
            spec.input = input;
        }
        self.file.layers.push(spec);
        id
    }

    pub fn conv_from(&mut self, input: Option<usize>, out_c: u32, k: u32, s: u32, act: Activation) -> usize {
        let mut l = LayerSpec::new(LayerKind::Conv);
        l.out_c = Some(out_c);
        l.kernel = Some(k);
        l.stride = Some(s);
        l.activation = act;
        l.batchnorm = true;
        self.push(l, input)
    }

    pub fn conv(&mut self, out_c: u32, k: u32, s: u32, act: Activation) -> usize {
        self.conv_from(None, out_c, k, s, act)
    }

    pub fn dwconv(&mut self, k: u32, s: u32, act: Activation) -> usize {
        let mut l = LayerSpec::new(LayerKind::Dwconv);
        l.kernel = Some(k);
        l.stride = Some(s);
        l.activation = act;
        l.batchnorm = true;
        self.push(l, None)
    }

    pub fn maxpool(&mut self, k: u32, s: u32) -> usize {
        let mut l = LayerSpec::new(LayerKind::Maxpool);
        l.kernel = Some(k);
        l.stride = Some(s);
        self.push(l, None)
    }

    pub fn gap_from(&mut self, input: Option<usize>) -> usize {
        self.push(LayerSpec::new(LayerKind::AvgpoolGlobal), input)
    }

    pub fn fc(&mut self, out_c: u32, act: Activation) -> usize {
        let mut l = LayerSpec::new(LayerKind::Fc);
        l.out_c = Some(out_c);
        l.activation = act;
        self.push(l, None)
    }

    pub fn eltwise(&mut self, shortcut: usize, act: Activation) -> usize {
        let mut l = LayerSpec::new(LayerKind::EltwiseAdd);
        l.shortcut = Some(shortcut);
        l.activation = act;
        self.push(l, None)
    }

    pub fn scale(&mut self, input: usize, vector: usize) -> usize {
        let mut l = LayerSpec::new(LayerKind::Scale);
        l.shortcut = Some(vector);
        self.push(l, Some(input))
    }

    pub fn concat(&mut self, srcs: &[usize]) -> usize {
        let mut l = LayerSpec::new(LayerKind::Concat);
        l.concat = srcs.to_vec();
        self.push(l, None)
    }

    pub fn upsample_from(&mut self, input: Option<usize>, factor: u32) -> usize {
        let mut l = LayerSpec::new(LayerKind::Upsample);
        l.stride = Some(factor);
        self.push(l, input)
    }

    pub fn build(&self) -> Result<NetworkGraph> {
        build_network(&self.file)
    }
}

const LEAKY: Activation = Activation::Leaky;
const RELU: Activation = Activation::Relu;
const SWISH: Activation = Activation::Swish;
const LINEAR: Activation = Activation::None;

/// YOLOv2 at 416×416 with 21 convolutions: the Darknet-19 trunk, a 1×1
/// passthrough branch concatenated with the trunk output, and the detector
/// convolutions. Pooling layers are explicit so CONV9 is layer 12.
pub fn yolov2() -> NetBuilder {
    let mut b = NetBuilder::new("yolov2", 416, 416, 3).gop(17.18);
    b.conv(32, 3, 1, LEAKY);
    b.maxpool(2, 2);
    b.conv(64, 3, 1, LEAKY);
    b.maxpool(2, 2);
    let mut pooled = 0;
    for (c, n) in [(128, 3), (256, 3), (512, 5), (1024, 5)] {
        for i in 0..n {
            if i % 2 == 0 {
                b.conv(c, 3, 1, LEAKY);
            } else {
                b.conv(c / 2, 1, 1, LEAKY);
            }
        }
        if c != 1024 {
            pooled = b.maxpool(2, 2);
        }
    }
    let trunk = b.last();
    let pass = b.conv_from(Some(pooled), 64, 1, 1, LEAKY);
    b.concat(&[trunk, pass]);
    b.conv(1024, 3, 1, LEAKY);
    b.conv(425, 1, 1, LINEAR);
    b
}

/// VGG16 convolutional part at 224×224 (13 convolutions, 5 pools).
pub fn vgg16_conv() -> NetBuilder {
    let mut b = NetBuilder::new("vgg16_conv", 224, 224, 3).gop(30.7);
    for (c, n) in [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)] {
        for _ in 0..n {
            b.conv(c, 3, 1, RELU);
        }
        b.maxpool(2, 2);
    }
    b
}

/// Residual trunk of ResNet (torchvision v1.5, stride on the 3×3); returns
/// the ids of the stage outputs.
fn resnet_trunk(b: &mut NetBuilder, blocks: [usize; 4]) -> Vec<usize> {
    b.conv(64, 7, 2, RELU);
    b.maxpool(3, 2);
    let mut outs = Vec::new();
    for (stage, &n) in blocks.iter().enumerate() {
        let width = 64 << stage;
        for i in 0..n {
            let entry = b.last();
            let stride = if i == 0 && stage > 0 { 2 } else { 1 };
            let shortcut = if i == 0 {
                let p = b.conv(width * 4, 1, stride, LINEAR);
                b.conv_from(Some(entry), width, 1, 1, RELU);
                p
            } else {
                b.conv(width, 1, 1, RELU);
                entry
            };
            b.conv(width, 3, stride, RELU);
            b.conv(width * 4, 1, 1, LINEAR);
            b.eltwise(shortcut, RELU);
        }
        outs.push(b.last());
    }
    outs
}

pub fn resnet(depth: u32, size: u32) -> NetBuilder {
    let (blocks, gop) = match depth {
        50 => ([3, 4, 6, 3], 11.76),
        101 => ([3, 4, 23, 3], 20.3),
        _ => ([3, 8, 36, 3], 31.16),
    };
    let mut b = NetBuilder::new(&format!("resnet{depth}"), size, size, 3);
    if size == 256 {
        b = b.gop(gop);
    }
    resnet_trunk(&mut b, blocks);
    b.gap_from(None);
    b.fc(1000, LINEAR);
    b
}

/// RetinaNet with a ResNet50-FPN backbone at 512×512. Heads are applied per
/// level right after the level is formed, coarsest (P7) first, so the scale
/// decreases through the trunk and increases through the pyramid.
pub fn retinanet() -> NetBuilder {
    let mut b = NetBuilder::new("retinanet", 512, 512, 3).gop(102.2);
    let c = resnet_trunk(&mut b, [3, 4, 6, 3]);
    let (c3, c4, c5) = (c[1], c[2], c[3]);
    let heads = |b: &mut NetBuilder, p: usize| {
        for out in [9 * 80, 9 * 4] {
            let mut x = p;
            for _ in 0..4 {
                x = b.conv_from(Some(x), 256, 3, 1, RELU);
            }
            b.conv_from(Some(x), out, 3, 1, LINEAR);
        }
    };
    let p6 = b.conv_from(Some(c5), 256, 3, 2, LINEAR);
    let p7 = b.conv_from(Some(p6), 256, 3, 2, RELU);
    heads(&mut b, p7);
    heads(&mut b, p6);
    let l5 = b.conv_from(Some(c5), 256, 1, 1, LINEAR);
    let p5 = b.conv_from(Some(l5), 256, 3, 1, LINEAR);
    heads(&mut b, p5);
    let u5 = b.upsample_from(Some(l5), 2);
    b.conv_from(Some(c4), 256, 1, 1, LINEAR);
    let l4 = b.eltwise(u5, LINEAR);
    let p4 = b.conv_from(Some(l4), 256, 3, 1, LINEAR);
    heads(&mut b, p4);
    let u4 = b.upsample_from(Some(l4), 2);
    b.conv_from(Some(c3), 256, 1, 1, LINEAR);
    let l3 = b.eltwise(u4, LINEAR);
    let p3 = b.conv_from(Some(l3), 256, 3, 1, LINEAR);
    heads(&mut b, p3);
    b
}

/// YOLOv3 at 416×416 (Darknet-53 trunk and three detection scales).
pub fn yolov3() -> NetBuilder {
    let mut b = NetBuilder::new("yolov3", 416, 416, 3).gop(65.86);
    b.conv(32, 3, 1, LEAKY);
    let mut taps = Vec::new();
    for (c, n) in [(64, 1), (128, 2), (256, 8), (512, 8), (1024, 4)] {
        b.conv(c, 3, 2, LEAKY);
        for _ in 0..n {
            let entry = b.last();
            b.conv(c / 2, 1, 1, LEAKY);
            b.conv(c, 3, 1, LEAKY);
            b.eltwise(entry, LINEAR);
        }
        taps.push(b.last());
    }
    let (r36, r61) = (taps[2], taps[3]);
    let mut route: Option<usize> = None;
    for (i, c) in [512u32, 256, 128].into_iter().enumerate() {
        if i > 0 {
            b.conv_from(route, c, 1, 1, LEAKY);
            let up = b.upsample_from(None, 2);
            b.concat(&[up, if i == 1 { r61 } else { r36 }]);
        }
        for _ in 0..2 {
            b.conv(c, 1, 1, LEAKY);
            b.conv(c * 2, 3, 1, LEAKY);
        }
        let tap = b.conv(c, 1, 1, LEAKY);
        b.conv(c * 2, 3, 1, LEAKY);
        b.conv(255, 1, 1, LINEAR);
        route = Some(tap);
    }
    b
}

/// MBConv stages of EfficientNet-B1: (expand, kernel, stride, out_c, repeats).
const EFFNET_B1: [(u32, u32, u32, u32, usize); 7] =
    [(1, 3, 1, 16, 2), (6, 3, 2, 24, 3), (6, 5, 2, 40, 3), (6, 3, 2, 80, 4), (6, 5, 1, 112, 4), (6, 5, 2, 192, 5), (6, 3, 1, 320, 2)];

fn mbconv(b: &mut NetBuilder, c_in: u32, expand: u32, k: u32, s: u32, c_out: u32) {
    let entry = b.last();
    let mid = c_in * expand;
    if expand != 1 {
        b.conv(mid, 1, 1, SWISH);
    }
    let dw = b.dwconv(k, s, SWISH);
    b.gap_from(None);
    b.fc((c_in / 4).max(1), SWISH);
    let fc2 = b.fc(mid, Activation::Sigmoid);
    b.scale(dw, fc2);
    b.conv(c_out, 1, 1, LINEAR);
    if s == 1 && c_in == c_out {
        b.eltwise(entry, LINEAR);
    }
}

pub fn efficientnet_b1(size: u32) -> NetBuilder {
    let mut b = NetBuilder::new("efficientnet_b1", size, size, 3);
    if size == 256 {
        b = b.gop(1.38);
    }
    b.conv(32, 3, 2, SWISH);
    let mut c_in = 32;
    for (e, k, s, c, n) in EFFNET_B1 {
        for i in 0..n {
            mbconv(&mut b, c_in, e, k, if i == 0 { s } else { 1 }, c);
            c_in = c;
        }
    }
    b.conv(1280, 1, 1, SWISH);
    b.gap_from(None);
    b.fc(1000, LINEAR);
    b
}

/// EfficientDet-style detector: a downsampling trunk followed by
/// `repeats` top-down/bottom-up feature-pyramid passes.
pub fn efficientdet_like(repeats: usize) -> NetBuilder {
    let mut b = NetBuilder::new(&format!("efficientdet_like_r{repeats}"), 128, 128, 3);
    b.conv(16, 3, 1, SWISH);
    for _ in 0..4 {
        b.conv(32, 3, 2, SWISH);
    }
    for _ in 0..repeats {
        for _ in 0..3 {
            b.upsample_from(None, 2);
            b.conv(32, 3, 1, SWISH);
        }
        for _ in 0..3 {
            b.conv(32, 3, 2, SWISH);
        }
    }
    b
}

/// Plain chain from `(out_c, kernel, stride)` triples; strides ≥ 1 keep the
/// scale monotone nonincreasing.
pub fn synthetic_chain(name: &str, input: (u32, u32, u32), layers: &[(u32, u32, u32)]) -> NetBuilder {
    let mut b = NetBuilder::new(name, input.0, input.1, input.2);
    for &(c, k, s) in layers {
        b.conv(c, k, s, RELU);
    }
    b
}

/// Every shipped model, by file stem.
pub fn shipped() -> Vec<(&'static str, NetBuilder)> {
    vec![
        ("yolov2", yolov2()),
        ("yolov3", yolov3()),
        ("vgg16_conv", vgg16_conv()),
        ("resnet50", resnet(50, 256)),
        ("resnet152", resnet(152, 256)),
        ("retinanet", retinanet()),
        ("efficientnet_b1", efficientnet_b1(256)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{detect_blocks, fuse_groups, infer_segments, BlockKind};

    fn plan_k(b: &NetBuilder) -> usize {
        let g = b.build().unwrap();
        let groups = fuse_groups(&g);
        let blocks = detect_blocks(&g, &groups).unwrap();
        infer_segments(&g, &groups, &blocks).k()
    }

    #[test]
    fn all_shipped_models_build() {
        for (name, b) in shipped() {
            b.build().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn yolov2_structure() {
        let g = yolov2().build().unwrap();
        assert_eq!(g.conv_count(), 21);
        assert_eq!(g.layers[12].kind, LayerKind::Conv);
        assert_eq!((g.layers[12].out_w, g.layers[12].out_c), (26, 512));
        assert_eq!(plan_k(&yolov2()), 1);
    }

    #[test]
    fn resnet50_counts() {
        let g = resnet(50, 256).build().unwrap();
        assert_eq!(g.conv_count(), 53);
        let groups = fuse_groups(&g);
        let blocks = detect_blocks(&g, &groups).unwrap();
        assert_eq!(blocks.iter().filter(|b| b.kind == BlockKind::Residual).count(), 16);
    }

    #[test]
    fn segment_counts() {
        assert_eq!(plan_k(&resnet(152, 256)), 1);
        assert_eq!(plan_k(&yolov3()), 2, "yolov3");
        assert_eq!(plan_k(&retinanet()), 2, "retinanet");
        assert_eq!(plan_k(&efficientnet_b1(256)), 1);
        assert_eq!(plan_k(&efficientdet_like(3)), 7);
    }

    #[test]
    fn efficientnet_blocks_are_se() {
        let g = efficientnet_b1(256).build().unwrap();
        let groups = fuse_groups(&g);
        let blocks = detect_blocks(&g, &groups).unwrap();
        let se = blocks.iter().filter(|b| b.kind == BlockKind::ResidualSe).count();
        // stride-1 repeats with matching widths carry a residual
        assert_eq!(se, 16);
    }
}
