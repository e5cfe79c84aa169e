//! Cycle model: per-group compute vs. memory time with a fixed setup cost,
//! plus an ordered trace of off-chip transfers.

use std::fmt::Write as _;

use serde::Serialize;

use crate::alloc::{BufferAssignment, Loc};
use crate::error::{Error, Result};
use crate::graph::LayerKind;
use crate::hw::HwConfig;
use crate::policy::Scheme;
use crate::schedule::{Schedule, TensorRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Traffic {
    Feature,
    Weight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub layer: usize,
    pub group: usize,
    pub direction: Direction,
    pub traffic: Traffic,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupLatency {
    pub group: usize,
    pub scheme: Scheme,
    pub compute: u64,
    pub memory: u64,
    /// Setup plus the overlapped maximum of compute and memory.
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub groups: Vec<GroupLatency>,
    pub cycles: u64,
    pub seconds: f64,
    pub gops: f64,
    pub trace: Vec<TraceEvent>,
}

impl LatencyReport {
    pub fn feature_bytes(&self) -> u64 {
        self.trace.iter().filter(|e| e.traffic == Traffic::Feature).map(|e| e.bytes).sum()
    }

    /// Feature read/write event counts for one group.
    pub fn feature_events(&self, group: usize) -> (usize, usize) {
        let ev = self.trace.iter().filter(|e| e.group == group && e.traffic == Traffic::Feature);
        let reads = ev.clone().filter(|e| e.direction == Direction::Read).count();
        (reads, ev.count() - reads)
    }

    /// One `layer direction traffic bytes` line per event.
    pub fn trace_text(&self) -> String {
        let mut out = String::new();
        for e in &self.trace {
            let d = match e.direction {
                Direction::Read => "R",
                Direction::Write => "W",
            };
            let t = match e.traffic {
                Traffic::Feature => "fm",
                Traffic::Weight => "wt",
            };
            let _ = writeln!(out, "{} {} {} {}", e.layer, d, t, e.bytes);
        }
        out
    }
}

/// Compute cycles of a group excluding setup.
pub fn compute_cycles(s: &Schedule, g: usize, scheme: Scheme, hw: &HwConfig) -> Result<u64> {
    let grp = s.groups.get(g).ok_or(Error::UnsupportedKind { group: g })?;
    let graph = &s.graph;
    let head = grp.head(graph);
    let ti = hw.ti as u64;
    let to = hw.to as u64;
    let out_area = head.out_w as u64 * head.out_h as u64;
    let k2 = head.kernel as u64 * head.kernel as u64;
    Ok(match head.kind {
        // two multiplications per shared MAC on normal convolution; depthwise
        // channels map one per MAC pair, so To/2 channels per cycle
        LayerKind::Conv => ((head.out_c as u64).div_ceil(to) * (head.in_c as u64).div_ceil(ti) * out_area * k2).div_ceil(2),
        LayerKind::Dwconv => (head.out_c as u64).div_ceil((to / 2).max(1)) * out_area * k2,
        LayerKind::Fc => (head.out_c as u64).div_ceil(to) * head.in_size().div_ceil(ti).div_ceil(2),
        // row-mode concat is a redirect of its producers' writes
        LayerKind::Concat if scheme == Scheme::Row => 0,
        LayerKind::Maxpool
        | LayerKind::AvgpoolGlobal
        | LayerKind::EltwiseAdd
        | LayerKind::Concat
        | LayerKind::Upsample
        | LayerKind::Activation
        | LayerKind::Scale => {
            let last = grp.last(graph);
            let area = (head.in_w as u64 * head.in_h as u64).max(last.out_w as u64 * last.out_h as u64);
            (last.out_c as u64).div_ceil(to) * area
        }
    })
}

fn ref_bytes(s: &Schedule, t: TensorRef, ab: u64) -> u64 {
    s.tensor_size(t) * ab
}

/// Off-chip transfers of one group in issue order.
pub fn group_trace(s: &Schedule, a: &BufferAssignment, g: usize, hw: &HwConfig) -> Vec<TraceEvent> {
    let ab = hw.act_bytes();
    let grp = &s.groups[g];
    let ga = &a.groups[g];
    let io = &s.io[g];
    let head = grp.layers[0];
    let last = *grp.layers.last().unwrap();
    let mut ev = Vec::new();
    let read = |ev: &mut Vec<TraceEvent>, bytes| {
        ev.push(TraceEvent { layer: head, group: g, direction: Direction::Read, traffic: Traffic::Feature, bytes })
    };

    let weights = grp.weight_bytes(&s.graph, ab);
    if weights > 0 {
        let times = match ga.scheme {
            Scheme::Frame => 1,
            Scheme::Row => grp.head(&s.graph).out_h.max(1) as u64,
        };
        ev.push(TraceEvent {
            layer: head,
            group: g,
            direction: Direction::Read,
            traffic: Traffic::Weight,
            bytes: weights * times,
        });
    }
    if grp.se_role.is_vector() {
        return ev;
    }
    let concat = grp.head(&s.graph).kind == LayerKind::Concat;
    match ga.scheme {
        Scheme::Row => {
            if concat {
                return ev;
            }
            if ga.input == Loc::OffChip {
                read(&mut ev, ref_bytes(s, io.input, ab));
            }
            if let (Some(t), Some(Loc::OffChip)) = (io.shortcut, ga.shortcut) {
                read(&mut ev, ref_bytes(s, t, ab));
            }
        }
        Scheme::Frame => {
            if (concat && ga.input == Loc::OffChip) || ga.stage_input {
                read(&mut ev, ref_bytes(s, io.input, ab));
            }
            for (loc, &(t, _)) in ga.concat.iter().zip(io.concat_srcs.iter().skip(1)) {
                if *loc == Loc::OffChip {
                    read(&mut ev, ref_bytes(s, t, ab));
                }
            }
            if ga.stage_shortcut {
                read(&mut ev, ref_bytes(s, io.shortcut.unwrap(), ab));
            }
        }
    }
    if ga.output == Loc::OffChip || ga.spill {
        ev.push(TraceEvent {
            layer: last,
            group: g,
            direction: Direction::Write,
            traffic: Traffic::Feature,
            bytes: ref_bytes(s, TensorRef::Group(g), ab),
        });
    }
    ev
}

/// Cycles and trace of one group under its assigned scheme.
pub fn simulate_group(s: &Schedule, a: &BufferAssignment, g: usize, hw: &HwConfig) -> Result<(GroupLatency, Vec<TraceEvent>)> {
    let scheme = a.groups[g].scheme;
    let last = s.groups[g].last(&s.graph);
    if last.out_w == 0 || last.out_h == 0 {
        return Ok((GroupLatency { group: g, scheme, compute: 0, memory: 0, total: 0 }, Vec::new()));
    }
    let compute = compute_cycles(s, g, scheme, hw)?;
    let trace = group_trace(s, a, g, hw);
    let bytes: u64 = trace.iter().map(|e| e.bytes).sum();
    let memory = bytes.div_ceil(hw.bus_bytes_per_cycle as u64);
    let work = compute.max(memory);
    let total = if work == 0 { 0 } else { hw.group_setup_cycles + work };
    Ok((GroupLatency { group: g, scheme: a.groups[g].scheme, compute, memory, total }, trace))
}

pub fn simulate_network(s: &Schedule, a: &BufferAssignment, hw: &HwConfig) -> Result<LatencyReport> {
    let mut groups = Vec::with_capacity(s.groups.len());
    let mut trace = Vec::new();
    for g in 0..s.groups.len() {
        let (lat, ev) = simulate_group(s, a, g, hw)?;
        groups.push(lat);
        trace.extend(ev);
    }
    let cycles = groups.iter().map(|g| g.total).sum::<u64>();
    let seconds = cycles as f64 / hw.freq_hz;
    let ops = 2.0 * s.graph.total_macs() as f64;
    let gops = if seconds > 0.0 { ops / seconds / 1e9 } else { 0.0 };
    Ok(LatencyReport { groups, cycles, seconds, gops, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloc::assign_buffers;
    use crate::cost::dram_feature_access;
    use crate::graph::{parse_network, FuseOptions};

    fn sched(input: (u32, u32, u32), layers: &str) -> Schedule {
        let g = parse_network(&format!(
            r#"{{"name":"t","input":{{"w":{},"h":{},"c":{}}},"layers":[{layers}]}}"#,
            input.0, input.1, input.2
        ))
        .unwrap();
        Schedule::new(g).unwrap()
    }

    #[test]
    fn conv_and_dwconv_cycles() {
        let hw = HwConfig::default();
        let s = sched((8, 8, 64), r#"{"kind":"conv","out_c":64,"kernel":3}"#);
        assert_eq!(compute_cycles(&s, 0, Scheme::Frame, &hw).unwrap(), 1152);
        let s = sched((8, 8, 64), r#"{"kind":"dwconv","kernel":3}"#);
        assert_eq!(compute_cycles(&s, 0, Scheme::Frame, &hw).unwrap(), 2304);
    }

    #[test]
    fn one_layer_network_equals_group() {
        let hw = HwConfig::default();
        let s = sched((8, 8, 64), r#"{"kind":"conv","out_c":64,"kernel":3}"#);
        let a = assign_buffers(&s, &[Scheme::Row], &hw).unwrap();
        let (g, _) = simulate_group(&s, &a, 0, &hw).unwrap();
        let r = simulate_network(&s, &a, &hw).unwrap();
        assert_eq!(r.cycles, g.total);
        assert!(g.total - hw.group_setup_cycles >= g.compute.max(g.memory));
        assert!(g.total - hw.group_setup_cycles <= g.compute + g.memory);
    }

    #[test]
    fn zero_area_is_free() {
        let hw = HwConfig::default();
        let mut s = sched((2, 2, 4), r#"{"kind":"conv","out_c":4,"kernel":1}"#);
        let a = assign_buffers(&s, &[Scheme::Frame], &hw).unwrap();
        s.graph.layers[0].out_w = 0;
        let (g, trace) = simulate_group(&s, &a, 0, &hw).unwrap();
        assert_eq!((g.compute, g.memory, g.total), (0, 0, 0));
        assert!(trace.is_empty());
    }

    const RESIDUAL: &str = r#"{"kind":"conv","out_c":16,"kernel":3},{"kind":"conv","out_c":16,"kernel":3},
        {"kind":"conv","out_c":16,"kernel":3},{"kind":"eltwise_add","shortcut":0},{"kind":"conv","out_c":16,"kernel":3}"#;

    #[test]
    fn fused_shortcut_access_counts() {
        let hw = HwConfig::default();
        let s = sched((8, 8, 16), RESIDUAL);
        let schemes = vec![Scheme::Row; s.blocks.len()];
        let a = assign_buffers(&s, &schemes, &hw).unwrap();
        let r = simulate_network(&s, &a, &hw).unwrap();
        // group 2 is conv + eltwise
        assert_eq!(s.groups[2].layers, vec![2, 3]);
        assert_eq!(r.feature_events(2), (2, 1));

        let g = s.graph.clone();
        let u = Schedule::with_options(g, FuseOptions { fuse_shortcut: false }).unwrap();
        let schemes = vec![Scheme::Row; u.blocks.len()];
        let a = assign_buffers(&u, &schemes, &hw).unwrap();
        let r = simulate_network(&u, &a, &hw).unwrap();
        let (r2, w2) = r.feature_events(2);
        let (r3, w3) = r.feature_events(3);
        assert_eq!((r2 + r3, w2 + w3), (3, 2));
    }

    #[test]
    fn trace_matches_feature_access() {
        let hw = HwConfig::default();
        let s = sched((8, 8, 16), RESIDUAL);
        let n = s.blocks.len();
        for mask in 0..(1u32 << n) {
            let schemes: Vec<Scheme> =
                (0..n).map(|b| if mask >> b & 1 == 1 { Scheme::Frame } else { Scheme::Row }).collect();
            let a = assign_buffers(&s, &schemes, &hw).unwrap();
            let r = simulate_network(&s, &a, &hw).unwrap();
            assert_eq!(r.feature_bytes(), dram_feature_access(&s, &schemes, &hw), "mask {mask:b}");
        }
    }
}
