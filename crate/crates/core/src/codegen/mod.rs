//! Lowering of a scheduled network to the 11-word per-group instruction stream.
//!
//! Word layout (all fields little-endian bit order, reserved bits zero):
//!
//! | word | bits | field |
//! |------|------|-------|
//! | w0 | 7:0 / 15:8 / 23:16 / 24 | opcode / kernel / stride / scheme (1 = frame) |
//! | w1 | 15:0 / 31:16 | in_w / in_h |
//! | w2 | 15:0 / 31:16 | out_w / out_h (after fused pool/upsample) |
//! | w3 | 15:0 / 31:16 | in_c / out_c |
//! | w4 | 1:0 / 3:2 / 5:4 | alloc_in / alloc_out / alloc_shortcut (0-2 buffer, 3 off-chip) |
//! | w4 | 6..17 | has_shortcut, dwconv, fused_pool, fused_eltwise, upsample, se_role (3 bits), stage_input, stage_shortcut, spill, concat |
//! | w5 | 31:0 | weight address |
//! | w6 | 31:0 | input address |
//! | w7 | 31:0 | output address |
//! | w8 | 31:0 | shortcut (or second concat source) address |
//! | w9 | 2:0 / 5:3 / 15:8 / 23:16 | activation / post-eltwise activation / quant shift / eltwise shift |
//! | w10 | 7:0 / 15:8 / 23:16 / 24 | pool kernel / pool stride / upsample factor / terminal; concat: 15:0 first-source channels |
//!
//! Address words hold a DRAM byte address when the operand is off-chip,
//! staged or spilled, and an on-chip byte offset otherwise. Staged operands
//! and spilled outputs occupy offset 0 of their buffer.

mod image;

use serde::Serialize;

use crate::alloc::{BufferAssignment, Loc};
use crate::error::{Error, Result};
use crate::graph::{Activation, LayerKind, NetworkGraph, NodeGroup, SeRole};
use crate::hw::HwConfig;
use crate::policy::Scheme;
use crate::schedule::{Schedule, TensorRef};

pub use image::{
    pack_image, parse_image, plan_layout, ImageHeader, ImageLayout, LayerWeights, ParsedImage, HEADER_BYTES, MAGIC, VERSION,
};

pub const WORDS: usize = 11;
pub const INSTRUCTION_BYTES: usize = WORDS * 4;

/// Where an operand lives, as encoded in the 2-bit allocation fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Buffer(u8),
    OffChip,
}

impl Slot {
    fn code(self) -> u32 {
        match self {
            Slot::Buffer(id) => id as u32,
            Slot::OffChip => 3,
        }
    }

    fn from_code(c: u32) -> Self {
        if c == 3 {
            Slot::OffChip
        } else {
            Slot::Buffer(c as u8)
        }
    }

    fn of(loc: Loc) -> Self {
        match loc {
            Loc::OffChip => Slot::OffChip,
            Loc::Buffer { id, .. } => Slot::Buffer(id),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Flags {
    pub fused_pool: bool,
    pub fused_eltwise: bool,
    pub upsample: bool,
    pub se_role: SeRole,
    pub stage_input: bool,
    pub stage_shortcut: bool,
    pub spill: bool,
}

/// One decoded instruction. Fused post-ops run in the fixed order
/// head → activation → eltwise → post activation → pool → upsample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Instruction {
    pub opcode: LayerKind,
    pub kernel: u8,
    pub stride: u8,
    pub scheme: Scheme,
    pub in_w: u16,
    pub in_h: u16,
    pub out_w: u16,
    pub out_h: u16,
    pub in_c: u16,
    pub out_c: u16,
    pub alloc_in: Slot,
    pub alloc_out: Slot,
    pub alloc_shortcut: Option<Slot>,
    pub flags: Flags,
    pub weight_addr: u32,
    pub input_addr: u32,
    pub output_addr: u32,
    pub shortcut_addr: u32,
    pub activation: Activation,
    pub post_activation: Activation,
    pub quant_shift: i8,
    pub eltwise_shift: i8,
    pub pool_kernel: u8,
    pub pool_stride: u8,
    pub upsample_factor: u8,
    /// Channels of the first concat source; zero for other opcodes.
    pub concat_split: u16,
    pub terminal: bool,
}

pub fn opcode(kind: LayerKind) -> u32 {
    match kind {
        LayerKind::Conv => 1,
        LayerKind::Dwconv => 2,
        LayerKind::Fc => 3,
        LayerKind::Maxpool => 4,
        LayerKind::AvgpoolGlobal => 5,
        LayerKind::EltwiseAdd => 6,
        LayerKind::Concat => 7,
        LayerKind::Upsample => 8,
        LayerKind::Activation => 9,
        LayerKind::Scale => 10,
    }
}

fn kind_of(op: u32) -> Option<LayerKind> {
    use LayerKind::*;
    [Conv, Dwconv, Fc, Maxpool, AvgpoolGlobal, EltwiseAdd, Concat, Upsample, Activation, Scale]
        .get((op as usize).wrapping_sub(1))
        .copied()
}

fn act_code(a: Activation) -> u32 {
    match a {
        Activation::None => 0,
        Activation::Relu => 1,
        Activation::Leaky => 2,
        Activation::Sigmoid => 3,
        Activation::Swish => 4,
    }
}

fn act_of(c: u32) -> Option<Activation> {
    Some(match c {
        0 => Activation::None,
        1 => Activation::Relu,
        2 => Activation::Leaky,
        3 => Activation::Sigmoid,
        4 => Activation::Swish,
        _ => return None,
    })
}

fn bit(v: bool, at: u32) -> u32 {
    (v as u32) << at
}

impl Instruction {
    pub fn encode(&self) -> [u32; WORDS] {
        let f = &self.flags;
        let mut w = [0u32; WORDS];
        w[0] = opcode(self.opcode)
            | (self.kernel as u32) << 8
            | (self.stride as u32) << 16
            | bit(self.scheme == Scheme::Frame, 24);
        w[1] = self.in_w as u32 | (self.in_h as u32) << 16;
        w[2] = self.out_w as u32 | (self.out_h as u32) << 16;
        w[3] = self.in_c as u32 | (self.out_c as u32) << 16;
        w[4] = self.alloc_in.code()
            | self.alloc_out.code() << 2
            | self.alloc_shortcut.map_or(0, Slot::code) << 4
            | bit(self.alloc_shortcut.is_some(), 6)
            | bit(self.opcode == LayerKind::Dwconv, 7)
            | bit(f.fused_pool, 8)
            | bit(f.fused_eltwise, 9)
            | bit(f.upsample, 10)
            | f.se_role.code() << 11
            | bit(f.stage_input, 14)
            | bit(f.stage_shortcut, 15)
            | bit(f.spill, 16)
            | bit(self.opcode == LayerKind::Concat, 17);
        w[5] = self.weight_addr;
        w[6] = self.input_addr;
        w[7] = self.output_addr;
        w[8] = self.shortcut_addr;
        w[9] = act_code(self.activation)
            | act_code(self.post_activation) << 3
            | (self.quant_shift as u8 as u32) << 8
            | (self.eltwise_shift as u8 as u32) << 16;
        w[10] = if self.opcode == LayerKind::Concat {
            self.concat_split as u32
        } else {
            self.pool_kernel as u32 | (self.pool_stride as u32) << 8 | (self.upsample_factor as u32) << 16
        } | bit(self.terminal, 24);
        w
    }

    pub fn decode(words: &[u32]) -> Result<Instruction> {
        let bad = |m: &str| Error::Decode(m.to_string());
        if words.len() != WORDS {
            return Err(Error::Decode(format!("expected {WORDS} words, got {}", words.len())));
        }
        let w = words;
        if w[0] >> 25 != 0 || w[4] >> 18 != 0 || w[9] >> 24 != 0 || w[9] & 0xC0 != 0 || w[10] >> 25 != 0 {
            return Err(bad("reserved bits set"));
        }
        let opcode = kind_of(w[0] & 0xFF).ok_or_else(|| Error::Decode(format!("bad opcode {}", w[0] & 0xFF)))?;
        let has_sc = w[4] >> 6 & 1 == 1;
        if !has_sc && (w[4] >> 4) & 3 != 0 {
            return Err(bad("shortcut slot without shortcut"));
        }
        if (w[4] >> 7 & 1 == 1) != (opcode == LayerKind::Dwconv) || (w[4] >> 17 & 1 == 1) != (opcode == LayerKind::Concat) {
            return Err(bad("kind flag disagrees with opcode"));
        }
        let se_role = SeRole::from_code(w[4] >> 11 & 7).ok_or_else(|| bad("bad se_role"))?;
        let concat = opcode == LayerKind::Concat;
        if concat && w[10] & 0xFF_0000 != 0 {
            return Err(bad("reserved bits set"));
        }
        Ok(Instruction {
            opcode,
            kernel: (w[0] >> 8) as u8,
            stride: (w[0] >> 16) as u8,
            scheme: if w[0] >> 24 & 1 == 1 { Scheme::Frame } else { Scheme::Row },
            in_w: w[1] as u16,
            in_h: (w[1] >> 16) as u16,
            out_w: w[2] as u16,
            out_h: (w[2] >> 16) as u16,
            in_c: w[3] as u16,
            out_c: (w[3] >> 16) as u16,
            alloc_in: Slot::from_code(w[4] & 3),
            alloc_out: Slot::from_code(w[4] >> 2 & 3),
            alloc_shortcut: has_sc.then(|| Slot::from_code(w[4] >> 4 & 3)),
            flags: Flags {
                fused_pool: w[4] >> 8 & 1 == 1,
                fused_eltwise: w[4] >> 9 & 1 == 1,
                upsample: w[4] >> 10 & 1 == 1,
                se_role,
                stage_input: w[4] >> 14 & 1 == 1,
                stage_shortcut: w[4] >> 15 & 1 == 1,
                spill: w[4] >> 16 & 1 == 1,
            },
            weight_addr: w[5],
            input_addr: w[6],
            output_addr: w[7],
            shortcut_addr: w[8],
            activation: act_of(w[9] & 7).ok_or_else(|| bad("bad activation"))?,
            post_activation: act_of(w[9] >> 3 & 7).ok_or_else(|| bad("bad activation"))?,
            quant_shift: (w[9] >> 8) as u8 as i8,
            eltwise_shift: (w[9] >> 16) as u8 as i8,
            pool_kernel: if concat { 0 } else { w[10] as u8 },
            pool_stride: if concat { 0 } else { (w[10] >> 8) as u8 },
            upsample_factor: if concat { 0 } else { (w[10] >> 16) as u8 },
            concat_split: if concat { w[10] as u16 } else { 0 },
            terminal: w[10] >> 24 & 1 == 1,
        })
    }

    pub fn to_bytes(&self) -> [u8; INSTRUCTION_BYTES] {
        let mut b = [0u8; INSTRUCTION_BYTES];
        for (i, w) in self.encode().iter().enumerate() {
            b[i * 4..i * 4 + 4].copy_from_slice(&w.to_le_bytes());
        }
        b
    }

    /// Spatial size produced by the head layer, before pooling/upsampling.
    pub fn head_out_dims(&self) -> (u32, u32) {
        match self.opcode {
            LayerKind::Fc | LayerKind::AvgpoolGlobal => (1, 1),
            LayerKind::Conv | LayerKind::Dwconv | LayerKind::Maxpool => {
                let s = self.stride.max(1) as u32;
                ((self.in_w as u32).div_ceil(s), (self.in_h as u32).div_ceil(s))
            }
            LayerKind::Upsample => (self.in_w as u32 * self.stride as u32, self.in_h as u32 * self.stride as u32),
            _ => (self.in_w as u32, self.in_h as u32),
        }
    }
}

/// Fused structure of a group in the canonical post-op order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct GroupShape {
    pub activation: Activation,
    pub post_activation: Activation,
    pub eltwise_shift: Option<i8>,
    pub pool: Option<(u32, u32)>,
    pub upsample: Option<u32>,
}

/// Checks that a group's layers follow the canonical order and collects its post-ops.
pub(crate) fn group_shape(graph: &NetworkGraph, grp: &NodeGroup) -> Result<GroupShape> {
    let head = grp.head(graph);
    let bad = |l: usize, what: &str| Error::Image(format!("group {}: layer {l} {what}", grp.group_id));
    let mut sh = GroupShape {
        activation: head.activation,
        post_activation: Activation::None,
        eltwise_shift: None,
        pool: None,
        upsample: None,
    };
    for &l in &grp.layers[1..] {
        let layer = &graph.layers[l];
        let after_elt = sh.eltwise_shift.is_some();
        if sh.pool.is_some() || sh.upsample.is_some() {
            if layer.kind != LayerKind::Upsample || sh.upsample.is_some() {
                return Err(bad(l, "follows a pool/upsample stage"));
            }
        }
        if layer.kind != LayerKind::Activation && layer.kind != LayerKind::EltwiseAdd && layer.activation != Activation::None {
            return Err(bad(l, "carries an activation the instruction cannot express"));
        }
        match layer.kind {
            LayerKind::Activation => {
                let slot = if after_elt { &mut sh.post_activation } else { &mut sh.activation };
                if *slot != Activation::None {
                    return Err(bad(l, "stacks a second activation"));
                }
                *slot = layer.activation;
            }
            LayerKind::EltwiseAdd if !after_elt => {
                sh.eltwise_shift = Some(layer.quant_shift);
                sh.post_activation = layer.activation;
            }
            LayerKind::Maxpool => sh.pool = Some((layer.kernel, layer.stride)),
            LayerKind::Upsample => sh.upsample = Some(layer.stride),
            _ => return Err(bad(l, "cannot be fused into an instruction")),
        }
    }
    Ok(sh)
}

fn field<T: TryFrom<u64>>(v: u64, g: usize, name: &str) -> Result<T> {
    T::try_from(v).map_err(|_| Error::Image(format!("group {g}: {name} = {v} does not fit its field")))
}

fn addr(v: u64) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::AddressOverflow { needed: v, capacity: 1 << 32 })
}

/// An emitted instruction stream together with the image layout its
/// addresses refer to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Program {
    pub instructions: Vec<Instruction>,
    pub layout: ImageLayout,
}

/// Emits one instruction per node group in execution order.
pub fn emit_instructions(s: &Schedule, a: &BufferAssignment, hw: &HwConfig) -> Result<Program> {
    let layout = plan_layout(s, a, hw)?;
    let graph = &s.graph;
    let mut out = Vec::with_capacity(s.groups.len());
    for (g, grp) in s.groups.iter().enumerate() {
        let ga = &a.groups[g];
        let io = &s.io[g];
        let head = grp.head(graph);
        let last = grp.last(graph);
        let sh = group_shape(graph, grp)?;

        let dram = |t: TensorRef| -> Result<u32> {
            let v = layout
                .dram_addr(t)
                .ok_or_else(|| Error::Image(format!("group {g}: {t:?} is read from DRAM but never written there")))?;
            addr(v)
        };
        let operand = |t: TensorRef, loc: Loc, staged: bool| -> Result<u32> {
            match loc {
                Loc::OffChip => dram(t),
                _ if staged => dram(t),
                Loc::Buffer { offset, .. } => addr(offset),
            }
        };

        let concat = head.kind == LayerKind::Concat;
        let (alloc_shortcut, shortcut_addr, concat_split) = if concat {
            match io.concat_srcs.len() {
                1 => (None, 0, head.in_c),
                2 => {
                    let t = io.concat_srcs[1].0;
                    let first = graph.layers[head.concat_srcs[0]].out_c;
                    (Some(Slot::of(ga.concat[0])), operand(t, ga.concat[0], false)?, first)
                }
                n => return Err(Error::Image(format!("group {g}: concat of {n} sources is not encodable"))),
            }
        } else {
            match (io.shortcut, ga.shortcut) {
                (Some(t), Some(loc)) => (Some(Slot::of(loc)), operand(t, loc, ga.stage_shortcut)?, 0),
                _ => (None, 0, 0),
            }
        };

        let output_addr = match ga.output {
            Loc::OffChip => dram(TensorRef::Group(g))?,
            Loc::Buffer { .. } if ga.spill => dram(TensorRef::Group(g))?,
            Loc::Buffer { offset, .. } => addr(offset)?,
        };
        let (pool_kernel, pool_stride) = sh.pool.unwrap_or((0, 0));
        out.push(Instruction {
            opcode: head.kind,
            kernel: field(head.kernel as u64, g, "kernel")?,
            stride: field(head.stride as u64, g, "stride")?,
            scheme: ga.scheme,
            in_w: field(head.in_w as u64, g, "in_w")?,
            in_h: field(head.in_h as u64, g, "in_h")?,
            out_w: field(last.out_w as u64, g, "out_w")?,
            out_h: field(last.out_h as u64, g, "out_h")?,
            in_c: field(head.in_c as u64, g, "in_c")?,
            out_c: field(last.out_c as u64, g, "out_c")?,
            alloc_in: Slot::of(ga.input),
            alloc_out: Slot::of(ga.output),
            alloc_shortcut,
            flags: Flags {
                fused_pool: sh.pool.is_some(),
                fused_eltwise: sh.eltwise_shift.is_some(),
                upsample: sh.upsample.is_some(),
                se_role: grp.se_role,
                stage_input: ga.stage_input,
                stage_shortcut: ga.stage_shortcut,
                spill: ga.spill,
            },
            weight_addr: match layout.group_weight_addr[g] {
                Some(w) => addr(w)?,
                None => 0,
            },
            input_addr: operand(io.input, ga.input, ga.stage_input)?,
            output_addr,
            shortcut_addr,
            activation: sh.activation,
            post_activation: sh.post_activation,
            quant_shift: head.quant_shift,
            eltwise_shift: sh.eltwise_shift.unwrap_or(0),
            pool_kernel: field(pool_kernel as u64, g, "pool kernel")?,
            pool_stride: field(pool_stride as u64, g, "pool stride")?,
            upsample_factor: field(sh.upsample.unwrap_or(0) as u64, g, "upsample factor")?,
            concat_split: field(concat_split as u64, g, "concat split")?,
            terminal: io.terminal,
        });
    }
    Ok(Program { instructions: out, layout })
}

/// Buffer ids referenced by each instruction, `(input, output, shortcut)`.
pub fn buffer_ids(ins: &Instruction) -> (Option<u8>, Option<u8>, Option<u8>) {
    let id = |s: Slot| match s {
        Slot::Buffer(b) => Some(b),
        Slot::OffChip => None,
    };
    (id(ins.alloc_in), id(ins.alloc_out), ins.alloc_shortcut.and_then(id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloc::assign_buffers;
    use crate::graph::parse_network;

    fn sched(layers: &str) -> Schedule {
        let g = parse_network(&format!(r#"{{"name":"t","input":{{"w":8,"h":8,"c":4}},"layers":[{layers}]}}"#)).unwrap();
        Schedule::new(g).unwrap()
    }

    fn emit(s: &Schedule, scheme: Scheme) -> Program {
        let hw = HwConfig::default();
        let a = assign_buffers(s, &vec![scheme; s.blocks.len()], &hw).unwrap();
        emit_instructions(s, &a, &hw).unwrap()
    }

    #[test]
    fn one_group_is_44_bytes() {
        let s = sched(r#"{"kind":"conv","out_c":8,"kernel":3}"#);
        let p = emit(&s, Scheme::Frame);
        assert_eq!(p.instructions.len(), 1);
        assert_eq!(p.instructions[0].to_bytes().len(), 44);
    }

    #[test]
    fn fused_shortcut_sets_flag_and_address() {
        let s = sched(
            r#"{"kind":"conv","out_c":4,"kernel":3},{"kind":"conv","out_c":4,"kernel":3},{"kind":"eltwise_add","shortcut":0,"activation":"relu"}"#,
        );
        for scheme in [Scheme::Row, Scheme::Frame] {
            let p = emit(&s, scheme);
            let i = &p.instructions[1];
            assert!(i.flags.fused_eltwise);
            assert_eq!(i.post_activation, Activation::Relu);
            if scheme == Scheme::Row {
                assert_ne!(i.shortcut_addr, 0);
            }
        }
    }

    #[test]
    fn round_trip_examples() {
        let nets = [
            r#"{"kind":"conv","out_c":8,"kernel":3}"#,
            r#"{"kind":"conv","out_c":4,"kernel":3,"activation":"leaky"},{"kind":"maxpool","stride":2},{"kind":"conv","out_c":4,"kernel":1,"input":0},{"kind":"upsample","stride":2}"#,
            r#"{"kind":"conv","out_c":4,"kernel":3},{"kind":"conv","out_c":4,"kernel":3},{"kind":"eltwise_add","shortcut":0}"#,
        ];
        for n in nets {
            let s = sched(n);
            for scheme in [Scheme::Row, Scheme::Frame] {
                for i in emit(&s, scheme).instructions {
                    assert_eq!(Instruction::decode(&i.encode()).unwrap(), i);
                }
            }
        }
    }

    #[test]
    fn decode_rejects_garbage() {
        let mut w = [0u32; WORDS];
        assert!(Instruction::decode(&w).is_err());
        w[0] = 1 | 1 << 30;
        assert!(Instruction::decode(&w).is_err());
        w[0] = 11;
        assert!(Instruction::decode(&w).is_err());
        assert!(Instruction::decode(&w[..10]).is_err());
    }
}
