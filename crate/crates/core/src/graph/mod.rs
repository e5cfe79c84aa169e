//! Network graph IR: layers, fused node groups, residual blocks and the
//! monotone-scale segment plan that bounds the number of cut-points.

mod blocks;
mod fuse;
mod parse;
mod segments;

use serde::{Deserialize, Serialize};

pub use blocks::{detect_blocks, Block, BlockKind};
pub(crate) use blocks::group_of_layer as blocks_group_map;
pub use fuse::{fuse_groups, fuse_groups_with, FuseOptions, NodeGroup, SeRole};
pub use parse::{build_graph as build_network, parse_network, parse_network_with_input, serialize_network, InputSpec, LayerSpec, NetworkFile};
pub use segments::{infer_segments, ScaleDirection, Segment, SegmentPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Dwconv,
    Fc,
    Maxpool,
    AvgpoolGlobal,
    EltwiseAdd,
    Concat,
    Upsample,
    Activation,
    Scale,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Dwconv => "dwconv",
            LayerKind::Fc => "fc",
            LayerKind::Maxpool => "maxpool",
            LayerKind::AvgpoolGlobal => "avgpool_global",
            LayerKind::EltwiseAdd => "eltwise_add",
            LayerKind::Concat => "concat",
            LayerKind::Upsample => "upsample",
            LayerKind::Activation => "activation",
            LayerKind::Scale => "scale",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "conv" => LayerKind::Conv,
            "dwconv" => LayerKind::Dwconv,
            "fc" => LayerKind::Fc,
            "maxpool" => LayerKind::Maxpool,
            "avgpool_global" => LayerKind::AvgpoolGlobal,
            "eltwise_add" => LayerKind::EltwiseAdd,
            "concat" => LayerKind::Concat,
            "upsample" => LayerKind::Upsample,
            "activation" => LayerKind::Activation,
            "scale" => LayerKind::Scale,
            _ => return None,
        })
    }

    /// Layers that carry weights and run on the MAC arrays.
    pub fn is_compute(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::Dwconv | LayerKind::Fc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    None,
    Relu,
    Leaky,
    Sigmoid,
    Swish,
}

/// Where a layer's primary input comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Network,
    Layer(usize),
}

/// One layer with fully propagated shapes. Tensors are HWC; sizes are element counts.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNode {
    pub id: usize,
    pub name: String,
    pub kind: LayerKind,
    pub in_w: u32,
    pub in_h: u32,
    pub in_c: u32,
    pub out_w: u32,
    pub out_h: u32,
    pub out_c: u32,
    pub kernel: u32,
    pub stride: u32,
    pub activation: Activation,
    pub batchnorm_folded: bool,
    pub input_src: Source,
    /// Eltwise: the residual operand. Scale: the per-channel multiplier vector.
    pub shortcut_src: Option<usize>,
    pub concat_srcs: Vec<usize>,
    pub quant_shift: i8,
    /// Sources whose tensors must live off-chip (long-lived concat/route inputs).
    pub long_path_srcs: Vec<usize>,
}

impl LayerNode {
    pub fn in_size(&self) -> u64 {
        self.in_w as u64 * self.in_h as u64 * self.in_c as u64
    }

    pub fn out_size(&self) -> u64 {
        self.out_w as u64 * self.out_h as u64 * self.out_c as u64
    }

    /// Weight elements (one per multiplier operand).
    pub fn weight_elems(&self) -> u64 {
        let k2 = self.kernel as u64 * self.kernel as u64;
        match self.kind {
            LayerKind::Conv => k2 * self.in_c as u64 * self.out_c as u64,
            LayerKind::Dwconv => k2 * self.in_c as u64,
            LayerKind::Fc => self.in_size() * self.out_c as u64,
            _ => 0,
        }
    }

    /// 32-bit bias/scale words.
    pub fn bias_words(&self) -> u64 {
        if self.kind.is_compute() {
            self.out_c as u64
        } else {
            0
        }
    }

    /// Parameter bytes with `act_bytes`-wide weights and 4-byte bias words.
    pub fn weight_bytes(&self, act_bytes: u64) -> u64 {
        self.weight_elems() * act_bytes + self.bias_words() * 4
    }

    /// Multiply-accumulate count.
    pub fn macs(&self) -> u64 {
        let k2 = self.kernel as u64 * self.kernel as u64;
        let out_area = self.out_w as u64 * self.out_h as u64;
        match self.kind {
            LayerKind::Conv => out_area * self.out_c as u64 * self.in_c as u64 * k2,
            LayerKind::Dwconv => out_area * self.out_c as u64 * k2,
            LayerKind::Fc => self.in_size() * self.out_c as u64,
            _ => 0,
        }
    }

    /// Every tensor this layer reads, primary input first.
    pub fn sources(&self) -> Vec<Source> {
        let mut v = Vec::new();
        if self.kind == LayerKind::Concat {
            v.extend(self.concat_srcs.iter().map(|&s| Source::Layer(s)));
        } else {
            v.push(self.input_src);
        }
        if let Some(s) = self.shortcut_src {
            v.push(Source::Layer(s));
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    pub name: String,
    pub input_w: u32,
    pub input_h: u32,
    pub input_c: u32,
    pub declared_gop: Option<f64>,
    pub layers: Vec<LayerNode>,
}

impl NetworkGraph {
    pub fn input_size(&self) -> u64 {
        self.input_w as u64 * self.input_h as u64 * self.input_c as u64
    }

    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(LayerNode::macs).sum()
    }

    pub fn total_weight_bytes(&self, act_bytes: u64) -> u64 {
        self.layers.iter().map(|l| l.weight_bytes(act_bytes)).sum()
    }

    pub fn conv_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l.kind, LayerKind::Conv | LayerKind::Dwconv)).count()
    }

    /// Consumers of each layer's output, indexed by layer id.
    pub fn consumers(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.layers.len()];
        for l in &self.layers {
            for s in l.sources() {
                if let Source::Layer(s) = s {
                    if !out[s].contains(&l.id) {
                        out[s].push(l.id);
                    }
                }
            }
        }
        out
    }
}
