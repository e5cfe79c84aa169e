//! Closed-form buffer sizing, BRAM18K estimation and DRAM traffic.

use serde::Serialize;

use crate::alloc::{consumers_of, is_concat, output_homes, tensor_off_chip, BufferAssignment, Home, Loc, NUM_BUFFERS};
use crate::error::{Error, Result};
use crate::graph::{LayerKind, LayerNode};
use crate::hw::HwConfig;
use crate::policy::Scheme;
use crate::schedule::{Schedule, TensorRef};

pub const MB: f64 = (1u64 << 20) as f64;

/// Per-layer buffer and weight-traffic characteristics of one reuse scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SchemeCharacteristics {
    pub input_buf_bytes: u64,
    pub output_buf_bytes: u64,
    pub weight_reads: u64,
    pub weight_reuses: u64,
}

pub fn scheme_characteristics(layer: &LayerNode, scheme: Scheme, hw: &HwConfig) -> Result<SchemeCharacteristics> {
    if !matches!(layer.kind, LayerKind::Conv | LayerKind::Dwconv) {
        return Err(Error::UndefinedCharacteristics { layer: layer.id });
    }
    let h = layer.in_h as u64;
    let n = layer.in_c as u64;
    let k = layer.kernel as u64;
    let qa = hw.qa as u64;
    let qs = hw.qs as u64;
    let to = hw.to as u64;
    Ok(match scheme {
        Scheme::Frame => SchemeCharacteristics {
            input_buf_bytes: 2 * h * h * n * qa / 8,
            output_buf_bytes: to * h * h * qs / 8,
            weight_reads: 1,
            weight_reuses: h * h,
        },
        Scheme::Row => SchemeCharacteristics {
            input_buf_bytes: (k + 1) * n * h * qa / 8,
            output_buf_bytes: to * h * qs / 8,
            weight_reads: h,
            weight_reuses: h,
        },
    })
}

/// Tile count of one buffer `depth` words deep and `width` bits wide.
pub fn bram18k_count(depth: u64, width: u64) -> Result<u64> {
    if depth == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!("zero buffer dimension ({depth} x {width})")));
    }
    Ok(depth.div_ceil(1024) * width.div_ceil(18))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BufferRequirements {
    pub buff: [u64; NUM_BUFFERS],
    pub weight_buff: u64,
    pub row_buff: u64,
    pub out_buff: u64,
    pub write_buff: u64,
    pub sram_total: u64,
    /// buff0 + buff1 + buff2 alone (buff1 already covers the weights).
    pub frame_buffers: u64,
    pub bram18k_total: u64,
    /// Activation look-up tables, one per output lane.
    pub lut_bram: u64,
    /// Depth of the double weight-block buffer kept in LUT-RAM (not counted above).
    pub weight_block_depth: u64,
}

/// Width of a feature buffer in bits and its byte width per word.
fn feature_bram(bytes: u64, hw: &HwConfig) -> Result<u64> {
    if bytes == 0 {
        return Ok(0);
    }
    let word = hw.ti as u64 * hw.act_bytes();
    bram18k_count(bytes.div_ceil(word), hw.ti as u64 * hw.qa as u64)
}

fn psum_bram(bytes: u64, hw: &HwConfig) -> Result<u64> {
    if bytes == 0 {
        return Ok(0);
    }
    let word = hw.to as u64 * hw.qs as u64 / 8;
    bram18k_count(bytes.div_ceil(word), hw.to as u64 * hw.qs as u64)
}

/// Pre-pooling convolution output dimensions of a compute group.
fn conv_out_area(s: &Schedule, g: usize) -> (u64, u64) {
    let head = s.groups[g].head(&s.graph);
    (head.out_w as u64, head.out_h as u64)
}

pub fn required_buffer_sizes(s: &Schedule, block_schemes: &[Scheme], a: &BufferAssignment, hw: &HwConfig) -> Result<BufferRequirements> {
    let schemes = s.group_schemes(block_schemes);
    let homes = output_homes(s, &schemes);
    let ab = hw.act_bytes();
    let to = hw.to as u64;
    let g_ = &s.graph;

    // every tensor reference placed in a buffer widens it.
    let mut buff = [0u64; NUM_BUFFERS];
    for ga in &a.groups {
        let io = &s.io[ga.group];
        let refs = [(Some(io.input), Some(ga.input)), (Some(TensorRef::Group(ga.group)), Some(ga.output)), (io.shortcut, ga.shortcut)];
        for (t, loc) in refs {
            if let (Some(t), Some(Loc::Buffer { id, offset })) = (t, loc) {
                let b = &mut buff[id as usize];
                *b = (*b).max(offset + s.tensor_size(t) * ab);
            }
        }
    }

    let mut weight_buff = 0;
    let mut row_buff = 0;
    let mut out_frame = 0;
    let mut out_row = 0;
    let mut write_buff = 0;
    for (g, grp) in s.groups.iter().enumerate() {
        let last = grp.last(g_);
        if grp.is_compute(g_) {
            let head = grp.head(g_);
            row_buff = row_buff.max(6 * head.in_w as u64 * head.in_c as u64 * ab);
            let (ow, oh) = conv_out_area(s, g);
            match schemes[g] {
                Scheme::Row => {
                    weight_buff = weight_buff.max(grp.weight_bytes(g_, ab));
                    out_row = out_row.max(ow * to * 4);
                    write_buff = write_buff.max(last.out_w as u64 * to * ab);
                }
                Scheme::Frame => {
                    out_frame = out_frame.max(ow * oh * to * 4);
                }
            }
        }
        if schemes[g] == Scheme::Frame && !grp.se_role.is_vector() && homes[g].off_chip() {
            write_buff = write_buff.max(last.out_w as u64 * last.out_h as u64 * to * ab);
        }
    }
    buff[1] = buff[1].max(weight_buff);
    let out_buff = out_frame.max(out_row);
    let frame_buffers: u64 = buff.iter().sum();
    let sram_total = row_buff + out_buff + write_buff + frame_buffers;

    let mut bram = 0;
    for b in buff.iter().chain([&row_buff, &write_buff]) {
        bram += feature_bram(*b, hw)?;
    }
    bram += psum_bram(out_buff, hw)?;
    let lut_bram = hw.to as u64;
    bram += lut_bram;

    Ok(BufferRequirements {
        buff,
        weight_buff,
        row_buff,
        out_buff,
        write_buff,
        sram_total,
        frame_buffers,
        bram18k_total: bram,
        lut_bram,
        weight_block_depth: 18,
    })
}

/// Off-chip feature-map bytes of one group under the given schemes.
pub(crate) fn group_feature_bytes(s: &Schedule, schemes: &[Scheme], homes: &[Home], g: usize, ab: u64) -> (u64, u64) {
    let grp = &s.groups[g];
    if grp.se_role.is_vector() {
        return (0, 0);
    }
    let io = &s.io[g];
    let size = |t: TensorRef| s.tensor_size(t) * ab;
    let vector = |t: TensorRef| matches!(t, TensorRef::Group(p) if s.groups[p].se_role.is_vector());
    let concat = is_concat(s, g);
    let mut read = 0;
    let mut write = 0;
    match schemes[g] {
        Scheme::Row => {
            if !concat {
                read += size(io.input);
                if let Some(t) = io.shortcut.filter(|&t| !vector(t)) {
                    read += size(t);
                }
                write += size(TensorRef::Group(g));
            }
        }
        Scheme::Frame => {
            if concat {
                let mut srcs = vec![io.input];
                srcs.extend(io.concat_srcs.iter().skip(1).map(|c| c.0));
                read += srcs.iter().filter(|&&t| tensor_off_chip(homes, t)).map(|&t| size(t)).sum::<u64>();
            } else {
                // A DRAM-resident tensor is staged once, by its first frame-reuse reader.
                for t in std::iter::once(io.input).chain(io.shortcut) {
                    let staged = match t {
                        TensorRef::Input => true,
                        TensorRef::Group(p) => homes[p] == Home::OffChip,
                    };
                    let first = consumers_of(s, t)
                        .iter()
                        .copied()
                        .find(|&c| schemes[c] == Scheme::Frame && !is_concat(s, c));
                    if staged && first == Some(g) {
                        read += size(t);
                    }
                }
            }
            if homes[g].off_chip() {
                write += size(TensorRef::Group(g));
            }
        }
    }
    (read, write)
}

/// Off-chip feature-map bytes for the whole network: streamed row-reuse
/// traffic, concat/route spills, the network input and terminal outputs.
pub fn dram_feature_access(s: &Schedule, block_schemes: &[Scheme], hw: &HwConfig) -> u64 {
    let schemes = s.group_schemes(block_schemes);
    let homes = output_homes(s, &schemes);
    (0..s.groups.len())
        .map(|g| {
            let (r, w) = group_feature_bytes(s, &schemes, &homes, g, hw.act_bytes());
            r + w
        })
        .sum()
}

/// Feature traffic plus every weight byte read once.
pub fn total_dram(s: &Schedule, block_schemes: &[Scheme], hw: &HwConfig) -> u64 {
    dram_feature_access(s, block_schemes, hw) + s.graph.total_weight_bytes(hw.act_bytes())
}

/// Traffic when every node group reads each operand and writes its output
/// off-chip exactly once, plus every weight once. Tensors internal to a
/// fused group never leave the chip.
pub fn baseline_dram(s: &Schedule, hw: &HwConfig) -> u64 {
    let features: u64 = s
        .groups
        .iter()
        .enumerate()
        .map(|(g, grp)| {
            let io = &s.io[g];
            let reads = s.tensor_size(io.input)
                + io.shortcut.map_or(0, |t| s.tensor_size(t))
                + io.concat_srcs.iter().skip(1).map(|c| s.tensor_size(c.0)).sum::<u64>();
            reads + grp.out_size(&s.graph)
        })
        .sum();
    features * hw.act_bytes() + s.graph.total_weight_bytes(hw.act_bytes())
}

pub fn dsp_efficiency(avg_gops: f64, hw: &HwConfig) -> f64 {
    avg_gops * 1e9 / (4.0 * hw.freq_hz * hw.n_mac as f64)
}

/// Fractional off-chip saving relative to [`baseline_dram`].
pub fn off_chip_reduction(total: u64, baseline: u64) -> f64 {
    if baseline == 0 {
        0.0
    } else {
        1.0 - total as f64 / baseline as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloc::assign_buffers;
    use crate::graph::parse_network;

    fn sched(input: (u32, u32, u32), layers: &str) -> Schedule {
        let g = parse_network(&format!(
            r#"{{"name":"t","input":{{"w":{},"h":{},"c":{}}},"layers":[{layers}]}}"#,
            input.0, input.1, input.2
        ))
        .unwrap();
        Schedule::new(g).unwrap()
    }

    #[test]
    fn bram_examples() {
        assert_eq!(bram18k_count(1024, 18).unwrap(), 1);
        assert_eq!(bram18k_count(1025, 18).unwrap(), 2);
        assert_eq!(bram18k_count(2048, 36).unwrap(), 4);
        assert!(bram18k_count(0, 18).is_err());
        assert!(bram18k_count(5, 0).is_err());
    }

    #[test]
    fn table_one_row_example() {
        let s = sched((4, 4, 8), r#"{"kind":"conv","out_c":8,"kernel":3}"#);
        let hw = HwConfig { ti: 2, to: 2, ..HwConfig::default() };
        let c = scheme_characteristics(&s.graph.layers[0], Scheme::Row, &hw).unwrap();
        assert_eq!((c.input_buf_bytes, c.output_buf_bytes, c.weight_reads), (128, 32, 4));
        let f = scheme_characteristics(&s.graph.layers[0], Scheme::Frame, &hw).unwrap();
        assert_eq!((f.weight_reads, f.weight_reuses), (1, 16));
    }

    #[test]
    fn characteristics_reject_pooling() {
        let s = sched((4, 4, 8), r#"{"kind":"maxpool","kernel":2,"stride":2}"#);
        let e = scheme_characteristics(&s.graph.layers[0], Scheme::Row, &HwConfig::default()).unwrap_err();
        assert_eq!(e, Error::UndefinedCharacteristics { layer: 0 });
    }

    #[test]
    fn unit_frame_sizes() {
        let s = sched((1, 1, 1), r#"{"kind":"conv","out_c":32,"kernel":1}"#);
        let hw = HwConfig::default();
        let a = assign_buffers(&s, &[Scheme::Frame], &hw).unwrap();
        let r = required_buffer_sizes(&s, &[Scheme::Frame], &a, &hw).unwrap();
        assert_eq!(r.out_buff, 128);
        assert_eq!(r.write_buff, 32);
        assert_eq!(r.sram_total, r.row_buff + r.out_buff + r.write_buff + r.buff.iter().sum::<u64>());
    }

    #[test]
    fn single_row_conv_traffic() {
        // 10x10x1 -> 5x5x2: 100 B in, 50 B out
        let s = sched((10, 10, 1), r#"{"kind":"conv","out_c":2,"kernel":3,"stride":2}"#);
        let hw = HwConfig::default();
        assert_eq!(dram_feature_access(&s, &[Scheme::Row], &hw), 150);
        // frame reuse: input staged once, terminal output written once
        assert_eq!(dram_feature_access(&s, &[Scheme::Frame], &hw), 150);
        assert_eq!(total_dram(&s, &[Scheme::Row], &hw), 150 + 9 * 2 + 2 * 4);
    }

    #[test]
    fn empty_graph_costs_nothing() {
        let s = sched((4, 4, 4), "");
        let hw = HwConfig::default();
        assert_eq!(total_dram(&s, &[], &hw), 0);
        assert_eq!(baseline_dram(&s, &hw), 0);
    }

    #[test]
    fn dsp_efficiency_examples() {
        let hw = HwConfig::default();
        assert!((dsp_efficiency(1166.0, &hw) - 0.7117).abs() < 1e-3);
        assert_eq!(dsp_efficiency(0.0, &hw), 0.0);
        assert!((dsp_efficiency(hw.peak_gops(), &hw) - 1.0).abs() < 1e-12);
    }
}
