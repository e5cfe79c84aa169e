//! Deployable image: a 64-byte header followed by the instruction, weight and
//! input sections, each 64-byte aligned. The image is loaded at DRAM address 0;
//! off-chip feature maps occupy a region starting at the first 64-byte
//! boundary after it.
//!
//! Header (little-endian):
//!
//! | offset | size | field |
//! |--------|------|-------|
//! | 0  | 4 | magic `CUTP` |
//! | 4  | 2 | format version |
//! | 6  | 2 | words per instruction (11) |
//! | 8  | 4 | instruction count |
//! | 12 | 4 | activation bytes |
//! | 16 | 8 | instruction section offset |
//! | 24 | 8 | weight section offset |
//! | 32 | 8 | weight section length |
//! | 40 | 8 | input section offset |
//! | 48 | 8 | input section length |
//! | 56 | 8 | feature region length |

use serde::Serialize;

use super::{Instruction, Program, INSTRUCTION_BYTES, WORDS};
use crate::alloc::{BufferAssignment, Loc};
use crate::alloc::round_up;
use crate::error::{Error, Result};
use crate::hw::HwConfig;
use crate::schedule::{Schedule, TensorRef};

pub const MAGIC: [u8; 4] = *b"CUTP";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: u64 = 64;
const ALIGN: u64 = 64;

/// Quantized parameters of one layer; both vectors are empty for layers without weights.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LayerWeights {
    pub weights: Vec<i8>,
    pub bias: Vec<i32>,
}

impl LayerWeights {
    /// Weights sign-extended to `act_bytes` each, then 32-bit bias words.
    pub fn to_bytes(&self, act_bytes: u64) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.weights.len() * act_bytes as usize + self.bias.len() * 4);
        for &w in &self.weights {
            if act_bytes == 1 {
                out.push(w as u8);
            } else {
                out.extend_from_slice(&(w as i16).to_le_bytes()[..act_bytes.min(2) as usize]);
                out.extend(std::iter::repeat_n(if w < 0 { 0xFF } else { 0 }, act_bytes.saturating_sub(2) as usize));
            }
        }
        for b in &self.bias {
            out.extend_from_slice(&b.to_le_bytes());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageLayout {
    pub instr_offset: u64,
    pub instr_count: usize,
    pub weight_offset: u64,
    pub weight_len: u64,
    /// DRAM address of each group's parameter blob.
    pub group_weight_addr: Vec<Option<u64>>,
    pub input_offset: u64,
    pub input_len: u64,
    pub image_len: u64,
    pub feature_base: u64,
    pub feature_len: u64,
    /// DRAM address of every tensor that is ever written off-chip, sorted.
    pub tensor_addr: Vec<(TensorRef, u64)>,
}

impl ImageLayout {
    pub fn dram_addr(&self, t: TensorRef) -> Option<u64> {
        self.tensor_addr.binary_search_by_key(&t, |e| e.0).ok().map(|i| self.tensor_addr[i].1)
    }
}

/// Places every section and off-chip tensor. Fails if the layout does not fit
/// the configured DRAM.
pub fn plan_layout(s: &Schedule, a: &BufferAssignment, hw: &HwConfig) -> Result<ImageLayout> {
    let ab = hw.act_bytes();
    let instr_offset = HEADER_BYTES;
    let instr_end = instr_offset + (s.groups.len() * INSTRUCTION_BYTES) as u64;

    let weight_offset = round_up(instr_end, ALIGN);
    let mut cursor = weight_offset;
    let mut group_weight_addr = Vec::with_capacity(s.groups.len());
    for grp in &s.groups {
        let bytes = grp.weight_bytes(&s.graph, ab);
        if bytes == 0 {
            group_weight_addr.push(None);
        } else {
            cursor = round_up(cursor, ALIGN);
            group_weight_addr.push(Some(cursor));
            cursor += bytes;
        }
    }
    let weight_len = cursor - weight_offset;

    let input_offset = round_up(cursor, ALIGN);
    let input_len = if s.input_consumers.is_empty() { 0 } else { s.graph.input_size() * ab };
    let image_len = if s.groups.is_empty() { HEADER_BYTES } else { input_offset + input_len };

    let feature_base = round_up(image_len, ALIGN);
    let mut tensor_addr = vec![(TensorRef::Input, input_offset)];
    let mut cursor = feature_base;
    for (g, ga) in a.groups.iter().enumerate() {
        if ga.output == Loc::OffChip || ga.spill {
            cursor = round_up(cursor, ALIGN);
            tensor_addr.push((TensorRef::Group(g), cursor));
            cursor += s.tensor_size(TensorRef::Group(g)) * ab;
        }
    }
    let capacity = hw.dram_capacity.min(1 << 32);
    if cursor > capacity {
        return Err(Error::AddressOverflow { needed: cursor, capacity });
    }
    Ok(ImageLayout {
        instr_offset,
        instr_count: s.groups.len(),
        weight_offset,
        weight_len,
        group_weight_addr,
        input_offset,
        input_len,
        image_len,
        feature_base,
        feature_len: cursor - feature_base,
        tensor_addr,
    })
}

/// Serializes header, instructions, weights (indexed by layer id) and the raw input tensor.
pub fn pack_image(s: &Schedule, program: &Program, weights: &[LayerWeights], input: &[u8], hw: &HwConfig) -> Result<Vec<u8>> {
    let l = &program.layout;
    let ab = hw.act_bytes();
    if weights.len() != s.graph.layers.len() {
        return Err(Error::Image(format!("{} weight entries for {} layers", weights.len(), s.graph.layers.len())));
    }
    if input.len() as u64 != l.input_len {
        return Err(Error::Image(format!("input section is {} bytes, expected {}", input.len(), l.input_len)));
    }
    let mut img = vec![0u8; l.image_len as usize];
    img[0..4].copy_from_slice(&MAGIC);
    img[4..6].copy_from_slice(&VERSION.to_le_bytes());
    img[6..8].copy_from_slice(&(WORDS as u16).to_le_bytes());
    img[8..12].copy_from_slice(&(program.instructions.len() as u32).to_le_bytes());
    img[12..16].copy_from_slice(&(ab as u32).to_le_bytes());
    for (at, v) in [
        (16, l.instr_offset),
        (24, l.weight_offset),
        (32, l.weight_len),
        (40, l.input_offset),
        (48, l.input_len),
        (56, l.feature_len),
    ] {
        img[at..at + 8].copy_from_slice(&v.to_le_bytes());
    }
    for (i, ins) in program.instructions.iter().enumerate() {
        let at = l.instr_offset as usize + i * INSTRUCTION_BYTES;
        img[at..at + INSTRUCTION_BYTES].copy_from_slice(&ins.to_bytes());
    }
    for (g, grp) in s.groups.iter().enumerate() {
        let Some(mut at) = l.group_weight_addr[g] else { continue };
        for &layer in &grp.layers {
            let node = &s.graph.layers[layer];
            let blob = weights[layer].to_bytes(ab);
            if blob.len() as u64 != node.weight_bytes(ab) {
                return Err(Error::Image(format!(
                    "layer {layer}: weight blob is {} bytes, expected {}",
                    blob.len(),
                    node.weight_bytes(ab)
                )));
            }
            img[at as usize..at as usize + blob.len()].copy_from_slice(&blob);
            at += blob.len() as u64;
        }
    }
    let at = l.input_offset as usize;
    img[at..at + input.len()].copy_from_slice(input);
    Ok(img)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ImageHeader {
    pub version: u16,
    pub words: u16,
    pub instr_count: u32,
    pub act_bytes: u32,
    pub instr_offset: u64,
    pub weight_offset: u64,
    pub weight_len: u64,
    pub input_offset: u64,
    pub input_len: u64,
    pub feature_len: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedImage {
    pub header: ImageHeader,
    pub instructions: Vec<Instruction>,
}

pub fn parse_image(img: &[u8]) -> Result<ParsedImage> {
    if img.len() < HEADER_BYTES as usize || img[0..4] != MAGIC {
        return Err(Error::Image("missing CUTP header".into()));
    }
    let u16_at = |at: usize| u16::from_le_bytes([img[at], img[at + 1]]);
    let u32_at = |at: usize| u32::from_le_bytes(img[at..at + 4].try_into().unwrap());
    let u64_at = |at: usize| u64::from_le_bytes(img[at..at + 8].try_into().unwrap());
    let header = ImageHeader {
        version: u16_at(4),
        words: u16_at(6),
        instr_count: u32_at(8),
        act_bytes: u32_at(12),
        instr_offset: u64_at(16),
        weight_offset: u64_at(24),
        weight_len: u64_at(32),
        input_offset: u64_at(40),
        input_len: u64_at(48),
        feature_len: u64_at(56),
    };
    if header.version != VERSION || header.words as usize != WORDS {
        return Err(Error::Image(format!("unsupported version {} / {} words", header.version, header.words)));
    }
    let end = header.instr_offset + header.instr_count as u64 * INSTRUCTION_BYTES as u64;
    if end > img.len() as u64
        || header.weight_offset + header.weight_len > img.len() as u64
        || header.input_offset + header.input_len > img.len() as u64
    {
        return Err(Error::Image("section extends past the end of the image".into()));
    }
    let instructions = (0..header.instr_count as usize)
        .map(|i| {
            let at = header.instr_offset as usize + i * INSTRUCTION_BYTES;
            let words: Vec<u32> = (0..WORDS).map(|w| u32_at(at + w * 4)).collect();
            Instruction::decode(&words)
        })
        .collect::<Result<_>>()?;
    Ok(ParsedImage { header, instructions })
}
